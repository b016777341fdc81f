//! Velocity-Verlet and Nosé-Hoover time stepping.

use serde::{Deserialize, Serialize};

use super::potential::{ForceEval, ForceProvider};
use super::state::{wrap, SystemState};
use super::vec3;
use crate::error::{Error, Result};

/// Single Nosé-Hoover friction variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thermostat {
    pub target_temperature: f64,
    /// Coupling mass `Q`.
    pub q: f64,
    /// Friction state `xi`.
    pub xi: f64,
}

impl Thermostat {
    pub fn new(target_temperature: f64, q: f64) -> Result<Self> {
        if !(target_temperature > 0.0 && target_temperature.is_finite()) {
            return Err(Error::Invalid(format!("target temperature must be positive, got {target_temperature}")));
        }
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::Invalid(format!("coupling mass must be positive and finite, got {q}")));
        }
        Ok(Self { target_temperature, q, xi: 0.0 })
    }

    /// `Q = 3 N T tau^2`.
    pub fn with_relaxation_time(n_atoms: usize, target_temperature: f64, tau: f64) -> Result<Self> {
        let q = 3.0 * n_atoms as f64 * target_temperature * tau * tau;
        Self::new(target_temperature, q)
    }

    fn half_update(&mut self, state: &SystemState, half_dt: f64) {
        let g = 3.0 * state.n_atoms() as f64;
        let k2 = 2.0 * state.kinetic_energy();
        self.xi += half_dt * (k2 - g * self.target_temperature) / self.q;
    }
}

/// Time integrator that caches the forces of the current configuration.
///
/// Each step costs exactly one call into the force provider once the cache is warm.
pub struct Integrator<F> {
    provider: F,
    cached: Option<ForceEval>,
    evaluations: usize,
}

impl<F: ForceProvider> Integrator<F> {
    pub fn new(provider: F) -> Self {
        Self { provider, cached: None, evaluations: 0 }
    }

    pub fn provider(&self) -> &F {
        &self.provider
    }

    pub fn provider_mut(&mut self) -> &mut F {
        &mut self.provider
    }

    pub fn into_provider(self) -> F {
        self.provider
    }

    /// Number of force evaluations so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    /// Drops cached forces; call after editing the state outside the integrator.
    pub fn invalidate(&mut self) {
        self.cached = None;
    }

    /// Forces of the current configuration, computing them if not cached.
    pub fn current(&mut self, state: &SystemState) -> Result<&ForceEval> {
        if self.cached.is_none() {
            let eval = self.provider.compute(state)?;
            self.evaluations += 1;
            self.cached = Some(eval);
        }
        Ok(self.cached.as_ref().expect("filled above"))
    }

    fn verlet_core(&mut self, state: &mut SystemState, dt: f64) -> Result<()> {
        let l = state.box_length;
        let f0 = match self.cached.take() {
            Some(eval) => eval,
            None => {
                self.evaluations += 1;
                self.provider.compute(state)?
            }
        };
        for i in 0..state.n_atoms() {
            let m = state.masses[i];
            let v = vec3::add(state.velocities[i], vec3::scale(f0.forces[i], 0.5 * dt / m));
            state.velocities[i] = v;
            state.positions[i] = wrap(vec3::add(state.positions[i], vec3::scale(v, dt)), l);
        }
        if !state.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite position or velocity at step {}",
                state.step_count + 1
            )));
        }
        let eval = self.provider.compute(state)?;
        self.evaluations += 1;
        for i in 0..state.n_atoms() {
            let m = state.masses[i];
            state.velocities[i] = vec3::add(state.velocities[i], vec3::scale(eval.forces[i], 0.5 * dt / m));
        }
        self.cached = Some(eval);
        state.step_count += 1;
        if !state.is_finite() {
            return Err(Error::Numerical(format!("non-finite velocity at step {}", state.step_count)));
        }
        Ok(())
    }

    /// One microcanonical velocity-Verlet step.
    pub fn step_nve(&mut self, state: &mut SystemState, dt: f64) -> Result<()> {
        self.verlet_core(state, dt)
    }

    /// One Nosé-Hoover step: friction half-updates and velocity scalings wrapped around a
    /// velocity-Verlet core.
    pub fn step_nvt(&mut self, state: &mut SystemState, dt: f64, thermostat: &mut Thermostat) -> Result<()> {
        let half = 0.5 * dt;
        thermostat.half_update(state, half);
        scale_velocities(state, (-thermostat.xi * half).exp());
        self.verlet_core(state, dt)?;
        scale_velocities(state, (-thermostat.xi * half).exp());
        thermostat.half_update(state, half);
        if !thermostat.xi.is_finite() {
            return Err(Error::Numerical(format!("thermostat diverged at step {}", state.step_count)));
        }
        Ok(())
    }
}

fn scale_velocities(state: &mut SystemState, s: f64) {
    if s != 1.0 {
        for v in &mut state.velocities {
            *v = vec3::scale(*v, s);
        }
    }
}
