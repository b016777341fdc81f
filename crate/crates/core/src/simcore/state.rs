use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::vec3::{self, Vec3};
use crate::error::{Error, Result};

/// Maps a displacement onto its nearest periodic image.
///
/// Every component of the result lies in `[-L/2, L/2)`.
pub fn minimum_image(delta: Vec3, box_length: f64) -> Vec3 {
    let mut out = delta;
    for c in out.iter_mut() {
        *c -= box_length * (*c / box_length + 0.5).floor();
        // rounding can land exactly on +L/2
        if *c >= 0.5 * box_length {
            *c -= box_length;
        }
    }
    out
}

/// Wraps one coordinate into `[0, L)`.
#[inline]
pub fn wrap_coordinate(x: f64, box_length: f64) -> f64 {
    let w = x - box_length * (x / box_length).floor();
    if w >= box_length || w < 0.0 {
        0.0
    } else {
        w
    }
}

#[inline]
pub fn wrap(p: Vec3, box_length: f64) -> Vec3 {
    [
        wrap_coordinate(p[0], box_length),
        wrap_coordinate(p[1], box_length),
        wrap_coordinate(p[2], box_length),
    ]
}

/// Atoms in a periodic cubic box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub masses: Vec<f64>,
    pub box_length: f64,
    pub step_count: u64,
}

impl SystemState {
    /// Validates the inputs and wraps positions into the box.
    pub fn new(
        positions: Vec<Vec3>,
        velocities: Vec<Vec3>,
        masses: Vec<f64>,
        box_length: f64,
    ) -> Result<Self> {
        if !(box_length > 0.0 && box_length.is_finite()) {
            return Err(Error::Geometry(format!("box length must be positive, got {box_length}")));
        }
        let n = positions.len();
        if velocities.len() != n || masses.len() != n {
            return Err(Error::Invalid(format!(
                "length mismatch: {} positions, {} velocities, {} masses",
                n,
                velocities.len(),
                masses.len()
            )));
        }
        if masses.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(Error::Invalid("masses must be positive and finite".into()));
        }
        if positions.iter().chain(&velocities).any(|p| !vec3::is_finite(*p)) {
            return Err(Error::Numerical("non-finite coordinate in initial state".into()));
        }
        let positions = positions.into_iter().map(|p| wrap(p, box_length)).collect();
        Ok(Self { positions, velocities, masses, box_length, step_count: 0 })
    }

    /// Unit-mass atoms at rest.
    pub fn at_rest(positions: Vec<Vec3>, box_length: f64) -> Result<Self> {
        let n = positions.len();
        Self::new(positions, vec![[0.0; 3]; n], vec![1.0; n], box_length)
    }

    /// Lattice start at the given number density with Maxwell-Boltzmann velocities.
    pub fn lattice<R: Rng + ?Sized>(
        n_atoms: usize,
        density: f64,
        temperature: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if n_atoms == 0 {
            return Err(Error::Invalid("need at least one atom".into()));
        }
        if !(density > 0.0) {
            return Err(Error::Invalid(format!("density must be positive, got {density}")));
        }
        let box_length = (n_atoms as f64 / density).cbrt();
        let positions = fcc_sites(n_atoms, box_length);
        let mut state = Self::at_rest(positions, box_length)?;
        state.maxwell_boltzmann(temperature, rng);
        Ok(state)
    }

    pub fn n_atoms(&self) -> usize {
        self.positions.len()
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.velocities
            .iter()
            .zip(&self.masses)
            .map(|(v, m)| 0.5 * m * vec3::norm2(*v))
            .sum()
    }

    /// `T = sum(m v^2) / 3N` with `k_B = 1`.
    pub fn instantaneous_temperature(&self) -> f64 {
        if self.positions.is_empty() {
            return 0.0;
        }
        2.0 * self.kinetic_energy() / (3.0 * self.n_atoms() as f64)
    }

    pub fn total_momentum(&self) -> Vec3 {
        self.velocities
            .iter()
            .zip(&self.masses)
            .fold([0.0; 3], |acc, (v, m)| vec3::add(acc, vec3::scale(*v, *m)))
    }

    /// Gaussian velocities, zero total momentum, rescaled to exactly `temperature`.
    pub fn maxwell_boltzmann<R: Rng + ?Sized>(&mut self, temperature: f64, rng: &mut R) {
        for (v, m) in self.velocities.iter_mut().zip(&self.masses) {
            let s = (temperature / m).sqrt();
            for c in v.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *c = s * z;
            }
        }
        self.remove_drift();
        let t = self.instantaneous_temperature();
        if t > 0.0 && temperature > 0.0 {
            let f = (temperature / t).sqrt();
            for v in &mut self.velocities {
                *v = vec3::scale(*v, f);
            }
        }
    }

    /// Removes centre-of-mass velocity.
    pub fn remove_drift(&mut self) {
        let p = self.total_momentum();
        let mass: f64 = self.masses.iter().sum();
        let vcm = vec3::scale(p, 1.0 / mass);
        for v in &mut self.velocities {
            *v = vec3::sub(*v, vcm);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().chain(&self.velocities).all(|p| vec3::is_finite(*p))
    }
}

/// `n_atoms` sites spread over the smallest face-centred cubic lattice holding at least that many.
///
/// When `n_atoms = 4k^3` this is the perfect lattice. Otherwise sites are taken at evenly spaced
/// indices so the vacancies are spread through the box.
pub fn fcc_sites(n_atoms: usize, box_length: f64) -> Vec<Vec3> {
    let mut k = 1usize;
    while 4 * k * k * k < n_atoms {
        k += 1;
    }
    let a = box_length / k as f64;
    let basis = [[0.0, 0.0, 0.0], [0.5, 0.5, 0.0], [0.5, 0.0, 0.5], [0.0, 0.5, 0.5]];
    let mut sites = Vec::with_capacity(4 * k * k * k);
    for ix in 0..k {
        for iy in 0..k {
            for iz in 0..k {
                for b in &basis {
                    sites.push([
                        (ix as f64 + b[0] + 0.25) * a,
                        (iy as f64 + b[1] + 0.25) * a,
                        (iz as f64 + b[2] + 0.25) * a,
                    ]);
                }
            }
        }
    }
    let m = sites.len();
    (0..n_atoms).map(|i| sites[i * m / n_atoms]).collect()
}
