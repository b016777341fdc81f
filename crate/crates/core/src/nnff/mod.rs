//! Neural-network force field: per-atom radial descriptors feeding an MLP whose outputs sum to
//! the total energy. Forces are exact position-gradients and the training loss gradient includes
//! the force-matching term exactly.

mod checkpoint;
mod descriptor;
mod loss;
mod mlp;

pub use checkpoint::{Checkpoint, TrainingMetadata, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use descriptor::{describe, DescriptorConfig};
pub use loss::{loss, loss_gradient, LossCoefficients, LossValue, Objective, PreparedExample};
pub use mlp::{accumulate_gradient, forward, input_gradient, Activation, Layout, MlpArchitecture, ParamVector};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::TrainExample;
use crate::simcore::{build_neighbor_table, vec3, ForceEval, NeighborTable, PairGeometry, Potential, SystemState};

/// Per-component affine standardization of descriptors, frozen after fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(n: usize) -> Self {
        Self { mean: vec![0.0; n], std: vec![1.0; n] }
    }

    /// Mean and population standard deviation over every atom of every example.
    pub fn fit(examples: &[TrainExample], config: &DescriptorConfig) -> Result<Self> {
        let k = config.n_basis();
        let mut sum = vec![0.0; k];
        let mut sum2 = vec![0.0; k];
        let mut count = 0usize;
        for ex in examples {
            let state = ex.to_state()?;
            let table = build_neighbor_table(&state, config.r_max, 0.0)?;
            let g = config.describe_all(state.n_atoms(), &table.pair_geometry(&state, config.r_max));
            for row in g.chunks(k) {
                for b in 0..k {
                    sum[b] += row[b];
                    sum2[b] += row[b] * row[b];
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::Invalid("cannot fit normalization on an empty set".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sum2
            .iter()
            .zip(&mean)
            .map(|(s2, m)| {
                let var = (s2 / n - m * m).max(0.0);
                if var.sqrt() > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }
}

/// A complete force-field model: descriptor, network shape, normalization and weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ForceField {
    pub descriptor: DescriptorConfig,
    pub arch: MlpArchitecture,
    pub norm: Normalization,
    pub params: ParamVector,
    layout: Layout,
}

impl ForceField {
    pub fn new(descriptor: DescriptorConfig, arch: MlpArchitecture, norm: Normalization, params: ParamVector) -> Result<Self> {
        descriptor.validate()?;
        arch.validate()?;
        if arch.n_inputs() != descriptor.n_basis() {
            return Err(Error::Invalid(format!(
                "network expects {} inputs but descriptor has {} basis functions",
                arch.n_inputs(),
                descriptor.n_basis()
            )));
        }
        if norm.mean.len() != descriptor.n_basis() || norm.std.len() != descriptor.n_basis() {
            return Err(Error::Invalid("normalization size does not match descriptor".into()));
        }
        let layout = arch.layout();
        if params.len() != layout.len() {
            return Err(Error::Invalid(format!("expected {} weights, got {}", layout.len(), params.len())));
        }
        if !params.is_finite() {
            return Err(Error::Numerical("non-finite weights".into()));
        }
        Ok(Self { descriptor, arch, norm, params, layout })
    }

    /// Freshly initialized weights; the output bias starts at `output_bias`.
    pub fn initialized<R: Rng + ?Sized>(
        descriptor: DescriptorConfig,
        arch: MlpArchitecture,
        norm: Normalization,
        output_bias: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let layout = arch.layout();
        let mut params = layout.init(rng);
        params.0[layout.bias_index(layout.n_layers(), 0)] = output_bias;
        Self::new(descriptor, arch, norm, params)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Same model with different weights.
    pub fn with_params(&self, params: ParamVector) -> Result<Self> {
        Self::new(self.descriptor.clone(), self.arch.clone(), self.norm.clone(), params)
    }

    /// Normalized network input of one raw descriptor row.
    #[inline]
    pub(crate) fn normalize_into(&self, raw: &[f64], x: &mut [f64]) {
        for k in 0..raw.len() {
            x[k] = (raw[k] - self.norm.mean[k]) / self.norm.std[k];
        }
    }

    /// Per-atom network energies.
    pub fn atomic_energies(&self, state: &SystemState, table: &NeighborTable) -> Vec<f64> {
        let pairs = table.pair_geometry(state, self.descriptor.r_max);
        let k = self.descriptor.n_basis();
        let raw = self.descriptor.describe_all(state.n_atoms(), &pairs);
        let mut x = vec![0.0; k];
        let mut hidden = vec![0.0; self.layout.hidden_width()];
        raw.chunks(k)
            .map(|row| {
                self.normalize_into(row, &mut x);
                forward(&self.layout, &self.params.0, &x, &mut hidden)
            })
            .collect()
    }

    /// Energy and forces with arbitrary weights `w` (same layout).
    pub fn evaluate_with(&self, w: &[f64], n_atoms: usize, n_owned: usize, pairs: &[PairGeometry]) -> Result<ForceEval> {
        let k = self.descriptor.n_basis();
        let r_max = self.descriptor.r_max;
        let mut raw = vec![0.0; n_atoms * k];
        let mut dgs = Vec::with_capacity(pairs.len() * k);
        let mut used = Vec::with_capacity(pairs.len());
        let mut needed = vec![false; n_atoms];
        for a in 0..n_owned.min(n_atoms) {
            needed[a] = true;
        }
        let mut g = vec![0.0; k];
        let mut dg = vec![0.0; k];
        for p in pairs {
            if p.r > r_max {
                continue;
            }
            if !(p.r > 0.0) {
                return Err(Error::Numerical(format!("atoms {} and {} coincide", p.i, p.j)));
            }
            self.descriptor.basis(p.r, &mut g, &mut dg);
            for b in 0..k {
                raw[p.i * k + b] += g[b];
                raw[p.j * k + b] += g[b];
            }
            if p.i < n_owned || p.j < n_owned {
                needed[p.i] = true;
                needed[p.j] = true;
                for b in 0..k {
                    dgs.push(dg[b] / self.norm.std[b]);
                }
                used.push(p);
            }
        }

        let mut u = vec![0.0; n_atoms * k];
        let mut x = vec![0.0; k];
        let mut hidden = vec![0.0; self.layout.hidden_width()];
        let mut energy = 0.0;
        for a in 0..n_atoms {
            if !needed[a] {
                continue;
            }
            self.normalize_into(&raw[a * k..(a + 1) * k], &mut x);
            let out = forward(&self.layout, w, &x, &mut hidden);
            if a < n_owned {
                energy += out;
            }
            input_gradient(&self.layout, w, &hidden, &mut u[a * k..(a + 1) * k]);
        }

        let mut forces = vec![[0.0; 3]; n_atoms];
        for (q, p) in used.iter().enumerate() {
            let d = &dgs[q * k..(q + 1) * k];
            let mut phi = 0.0;
            for b in 0..k {
                phi += (u[p.i * k + b] + u[p.j * k + b]) * d[b];
            }
            let f = vec3::scale(p.delta, phi / p.r);
            forces[p.i] = vec3::add(forces[p.i], f);
            forces[p.j] = vec3::sub(forces[p.j], f);
        }
        let eval = ForceEval { energy, forces };
        if !eval.energy.is_finite() || eval.forces[..n_owned.min(n_atoms)].iter().any(|f| !vec3::is_finite(*f)) {
            return Err(Error::Numerical("non-finite energy or force from network".into()));
        }
        Ok(eval)
    }
}

impl Potential for ForceField {
    fn cutoff(&self) -> f64 {
        self.descriptor.r_max
    }

    /// Forces on an atom depend on its neighbors' descriptors, which see one more cutoff out.
    fn ghost_reach(&self) -> f64 {
        2.0 * self.descriptor.r_max
    }

    fn evaluate(&self, n_atoms: usize, n_owned: usize, pairs: &[PairGeometry]) -> Result<ForceEval> {
        self.evaluate_with(&self.params.0, n_atoms, n_owned, pairs)
    }
}

/// Energy and forces of `model` with weights `w` on a periodic state.
pub fn energy_forces(state: &SystemState, w: &ParamVector, model: &ForceField, table: &NeighborTable) -> Result<ForceEval> {
    let pairs = table.pair_geometry(state, model.descriptor.r_max);
    model.evaluate_with(&w.0, state.n_atoms(), state.n_atoms(), &pairs)
}
