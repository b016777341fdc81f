//! Per-atom energy + force mean-square loss and its exact weight gradient.

use serde::{Deserialize, Serialize};

use super::mlp::{accumulate_gradient, forward, input_gradient, Layout};
use super::ForceField;
use crate::error::{Error, Result};
use crate::oracle::TrainExample;
use crate::simcore::{build_neighbor_table, vec3, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossCoefficients {
    pub energy: f64,
    pub force: f64,
}

impl Default for LossCoefficients {
    fn default() -> Self {
        Self { energy: 1.0, force: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    /// Mean over examples of `((E_pred - E_ref) / N)^2`.
    pub energy_term: f64,
    /// Mean over examples, atoms and Cartesian components of `(f_pred - f_ref)^2`.
    pub force_term: f64,
    pub coefficients: LossCoefficients,
}

impl LossValue {
    fn from_terms(energy_term: f64, force_term: f64, c: LossCoefficients) -> Self {
        Self { total: c.energy * energy_term + c.force * force_term, energy_term, force_term, coefficients: c }
    }
}

/// A training example with its descriptors and pair geometry computed once.
///
/// Positions never change during training, so everything that depends only on them is cached.
#[derive(Clone, Debug)]
pub struct PreparedExample {
    pub n_atoms: usize,
    /// Normalized descriptors, `n_atoms x n_basis`.
    x: Vec<f64>,
    pairs: Vec<(usize, usize)>,
    /// Unit vectors `(r_j - r_i) / r`.
    unit: Vec<Vec3>,
    /// `g_k'(r) / std_k` per pair, `n_pairs x n_basis`.
    dgs: Vec<f64>,
    pub energy_ref: f64,
    pub forces_ref: Vec<Vec3>,
}

impl PreparedExample {
    pub fn new(ex: &TrainExample, model: &ForceField) -> Result<Self> {
        let d = &model.descriptor;
        let k = d.n_basis();
        let state = ex.to_state()?;
        let table = build_neighbor_table(&state, d.r_max, 0.0)?;
        let geo = table.pair_geometry(&state, d.r_max);
        let n = state.n_atoms();
        let raw = d.describe_all(n, &geo);
        let mut x = vec![0.0; n * k];
        for a in 0..n {
            model.normalize_into(&raw[a * k..(a + 1) * k], &mut x[a * k..(a + 1) * k]);
        }
        let mut pairs = Vec::with_capacity(geo.len());
        let mut unit = Vec::with_capacity(geo.len());
        let mut dgs = Vec::with_capacity(geo.len() * k);
        let mut g = vec![0.0; k];
        let mut dg = vec![0.0; k];
        for p in &geo {
            if !(p.r > 0.0) {
                return Err(Error::Numerical(format!("atoms {} and {} coincide", p.i, p.j)));
            }
            d.basis(p.r, &mut g, &mut dg);
            pairs.push((p.i, p.j));
            unit.push(vec3::scale(p.delta, 1.0 / p.r));
            for b in 0..k {
                dgs.push(dg[b] / model.norm.std[b]);
            }
        }
        Ok(Self { n_atoms: n, x, pairs, unit, dgs, energy_ref: ex.energy, forces_ref: ex.forces.clone() })
    }

    /// Predicted energy and forces under weights `w`, plus the stored hidden activations and
    /// input gradients needed by the backward pass.
    fn predict(&self, layout: &Layout, w: &[f64]) -> Prediction {
        let k = layout.sizes[0];
        let hw = layout.hidden_width();
        let n = self.n_atoms;
        let mut hidden = vec![0.0; n * hw];
        let mut u = vec![0.0; n * k];
        let mut energy = 0.0;
        for a in 0..n {
            let h = &mut hidden[a * hw..(a + 1) * hw];
            energy += forward(layout, w, &self.x[a * k..(a + 1) * k], h);
            input_gradient(layout, w, h, &mut u[a * k..(a + 1) * k]);
        }
        let mut forces = vec![[0.0; 3]; n];
        for (q, &(i, j)) in self.pairs.iter().enumerate() {
            let d = &self.dgs[q * k..(q + 1) * k];
            let mut phi = 0.0;
            for b in 0..k {
                phi += (u[i * k + b] + u[j * k + b]) * d[b];
            }
            let f = vec3::scale(self.unit[q], phi);
            forces[i] = vec3::add(forces[i], f);
            forces[j] = vec3::sub(forces[j], f);
        }
        Prediction { energy, forces, hidden }
    }

    /// Energy and force terms of this example; with `grad`, adds `weight` times their
    /// coefficient-weighted gradient.
    fn terms(&self, layout: &Layout, w: &[f64], c: LossCoefficients, grad: Option<(&mut [f64], f64)>) -> (f64, f64) {
        let pred = self.predict(layout, w);
        let n = self.n_atoms as f64;
        let e_err = (pred.energy - self.energy_ref) / n;
        let mut f_sq = 0.0;
        for (fp, fr) in pred.forces.iter().zip(&self.forces_ref) {
            f_sq += vec3::norm2(vec3::sub(*fp, *fr));
        }
        let energy_term = e_err * e_err;
        let force_term = f_sq / (3.0 * n);

        if let Some((grad, weight)) = grad {
            let k = layout.sizes[0];
            let hw = layout.hidden_width();
            // dL/dE_pred, identical for every atomic output
            let c_out = weight * c.energy * 2.0 * e_err / n;
            // dL/dF_pred per atom
            let fscale = weight * c.force * 2.0 / (3.0 * n);
            let dforce: Vec<Vec3> = pred
                .forces
                .iter()
                .zip(&self.forces_ref)
                .map(|(fp, fr)| vec3::scale(vec3::sub(*fp, *fr), fscale))
                .collect();
            // adjoint of each atom's input gradient
            let mut v = vec![0.0; self.n_atoms * k];
            let use_tangent = c.force != 0.0;
            if use_tangent {
                for (q, &(i, j)) in self.pairs.iter().enumerate() {
                    let psi = vec3::dot(vec3::sub(dforce[i], dforce[j]), self.unit[q]);
                    let d = &self.dgs[q * k..(q + 1) * k];
                    for b in 0..k {
                        v[i * k + b] += psi * d[b];
                        v[j * k + b] += psi * d[b];
                    }
                }
            }
            for a in 0..self.n_atoms {
                accumulate_gradient(
                    layout,
                    w,
                    &self.x[a * k..(a + 1) * k],
                    &pred.hidden[a * hw..(a + 1) * hw],
                    c_out,
                    use_tangent.then(|| &v[a * k..(a + 1) * k]),
                    grad,
                );
            }
        }
        (energy_term, force_term)
    }
}

struct Prediction {
    energy: f64,
    forces: Vec<Vec3>,
    hidden: Vec<f64>,
}

/// Training objective over a fixed set of prepared examples.
#[derive(Clone, Debug)]
pub struct Objective {
    layout: Layout,
    examples: Vec<PreparedExample>,
    pub coefficients: LossCoefficients,
}

impl Objective {
    pub fn new(model: &ForceField, examples: &[TrainExample], coefficients: LossCoefficients) -> Result<Self> {
        let examples = examples.iter().map(|ex| PreparedExample::new(ex, model)).collect::<Result<Vec<_>>>()?;
        Ok(Self { layout: model.layout().clone(), examples, coefficients })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn n_params(&self) -> usize {
        self.layout.len()
    }

    /// Loss over the examples at `indices`.
    pub fn loss_on(&self, w: &[f64], indices: &[usize]) -> Result<LossValue> {
        self.eval(w, indices, None)
    }

    /// Loss over every example.
    pub fn loss(&self, w: &[f64]) -> Result<LossValue> {
        let all: Vec<usize> = (0..self.examples.len()).collect();
        self.eval(w, &all, None)
    }

    /// Loss and exact gradient over the examples at `indices`.
    pub fn loss_gradient_on(&self, w: &[f64], indices: &[usize]) -> Result<(LossValue, Vec<f64>)> {
        let mut grad = vec![0.0; self.layout.len()];
        let value = self.eval(w, indices, Some(&mut grad))?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical("non-finite loss gradient".into()));
        }
        Ok((value, grad))
    }

    pub fn loss_gradient(&self, w: &[f64]) -> Result<(LossValue, Vec<f64>)> {
        let all: Vec<usize> = (0..self.examples.len()).collect();
        self.loss_gradient_on(w, &all)
    }

    fn eval(&self, w: &[f64], indices: &[usize], mut grad: Option<&mut Vec<f64>>) -> Result<LossValue> {
        if indices.is_empty() {
            return Err(Error::Invalid("loss over an empty batch".into()));
        }
        if w.len() != self.layout.len() {
            return Err(Error::Invalid(format!("expected {} weights, got {}", self.layout.len(), w.len())));
        }
        let weight = 1.0 / indices.len() as f64;
        let (mut et, mut ft) = (0.0, 0.0);
        for &i in indices {
            let ex = self.examples.get(i).ok_or_else(|| Error::Invalid(format!("example index {i} out of range")))?;
            let g = grad.as_mut().map(|g| (g.as_mut_slice(), weight));
            let (e, f) = ex.terms(&self.layout, w, self.coefficients, g);
            et += e;
            ft += f;
        }
        let value = LossValue::from_terms(et * weight, ft * weight, self.coefficients);
        if !value.total.is_finite() {
            return Err(Error::Numerical("non-finite loss".into()));
        }
        Ok(value)
    }
}

/// Loss of `model` with weights `w` over `batch`.
pub fn loss(batch: &[TrainExample], w: &[f64], model: &ForceField, coefficients: LossCoefficients) -> Result<LossValue> {
    Objective::new(model, batch, coefficients)?.loss(w)
}

/// Exact gradient of [`loss`] with respect to `w`, force-matching term included.
pub fn loss_gradient(batch: &[TrainExample], w: &[f64], model: &ForceField, coefficients: LossCoefficients) -> Result<Vec<f64>> {
    Ok(Objective::new(model, batch, coefficients)?.loss_gradient(w)?.1)
}
