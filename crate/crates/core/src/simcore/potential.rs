use std::sync::Arc;

use super::neighbor::{build_neighbor_table, NeighborTable, PairGeometry};
use super::state::SystemState;
use super::vec3::{self, Vec3};
use crate::error::{Error, Result};

/// Energy and forces for one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ForceEval {
    pub energy: f64,
    pub forces: Vec<Vec3>,
}

impl ForceEval {
    pub fn is_finite(&self) -> bool {
        self.energy.is_finite() && self.forces.iter().all(|f| vec3::is_finite(*f))
    }
}

/// A short-ranged interatomic potential evaluated from a list of pair geometries.
///
/// The first `n_owned` atoms are the ones whose energy and forces are wanted; the rest are
/// ghost copies that only supply environment. A periodic system evaluates with
/// `n_owned == n_atoms`.
pub trait Potential: Send + Sync {
    fn cutoff(&self) -> f64;

    /// How far outside a domain atoms must be visible for owned-atom forces to be exact.
    fn ghost_reach(&self) -> f64 {
        self.cutoff()
    }

    fn evaluate(&self, n_atoms: usize, n_owned: usize, pairs: &[PairGeometry]) -> Result<ForceEval>;

    /// Periodic evaluation from a current neighbor table.
    fn energy_forces(&self, state: &SystemState, table: &NeighborTable) -> Result<ForceEval> {
        let pairs = table.pair_geometry(state, self.cutoff());
        let n = state.n_atoms();
        self.evaluate(n, n, &pairs)
    }
}

impl<P: Potential + ?Sized> Potential for &P {
    fn cutoff(&self) -> f64 {
        (**self).cutoff()
    }
    fn ghost_reach(&self) -> f64 {
        (**self).ghost_reach()
    }
    fn evaluate(&self, n_atoms: usize, n_owned: usize, pairs: &[PairGeometry]) -> Result<ForceEval> {
        (**self).evaluate(n_atoms, n_owned, pairs)
    }
}

impl<P: Potential + ?Sized> Potential for Arc<P> {
    fn cutoff(&self) -> f64 {
        (**self).cutoff()
    }
    fn ghost_reach(&self) -> f64 {
        (**self).ghost_reach()
    }
    fn evaluate(&self, n_atoms: usize, n_owned: usize, pairs: &[PairGeometry]) -> Result<ForceEval> {
        (**self).evaluate(n_atoms, n_owned, pairs)
    }
}

impl<P: Potential + ?Sized> Potential for Box<P> {
    fn cutoff(&self) -> f64 {
        (**self).cutoff()
    }
    fn ghost_reach(&self) -> f64 {
        (**self).ghost_reach()
    }
    fn evaluate(&self, n_atoms: usize, n_owned: usize, pairs: &[PairGeometry]) -> Result<ForceEval> {
        (**self).evaluate(n_atoms, n_owned, pairs)
    }
}

/// Anything that can produce forces for the integrator.
pub trait ForceProvider {
    fn compute(&mut self, state: &SystemState) -> Result<ForceEval>;
}

impl<F: FnMut(&SystemState) -> Result<ForceEval>> ForceProvider for F {
    fn compute(&mut self, state: &SystemState) -> Result<ForceEval> {
        self(state)
    }
}

/// Serial force provider that owns a Verlet list and rebuilds it on the half-skin rule.
pub struct NeighborForces<P> {
    potential: P,
    skin: f64,
    table: Option<NeighborTable>,
    rebuilds: usize,
}

impl<P: Potential> NeighborForces<P> {
    pub fn new(potential: P, skin: f64) -> Self {
        Self { potential, skin, table: None, rebuilds: 0 }
    }

    pub fn potential(&self) -> &P {
        &self.potential
    }

    pub fn skin(&self) -> f64 {
        self.skin
    }

    pub fn rebuilds(&self) -> usize {
        self.rebuilds
    }

    pub fn table(&self) -> Option<&NeighborTable> {
        self.table.as_ref()
    }
}

impl<P: Potential> ForceProvider for NeighborForces<P> {
    fn compute(&mut self, state: &SystemState) -> Result<ForceEval> {
        let stale = match &self.table {
            Some(t) => t.needs_rebuild(state),
            None => true,
        };
        if stale {
            self.table = Some(build_neighbor_table(state, self.potential.cutoff(), self.skin)?);
            self.rebuilds += 1;
        }
        let table = self.table.as_ref().expect("table built above");
        let eval = self.potential.energy_forces(state, table)?;
        if !eval.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite energy or force at step {}",
                state.step_count
            )));
        }
        Ok(eval)
    }
}

/// Kinetic plus potential energy; builds a fresh table and leaves `state` untouched.
pub fn total_energy<P: Potential + ?Sized>(state: &SystemState, potential: &P) -> Result<f64> {
    let table = build_neighbor_table(state, potential.cutoff(), 0.0)?;
    let eval = potential.energy_forces(state, &table)?;
    Ok(state.kinetic_energy() + eval.energy)
}
