//! Adam and its sharpness-aware wrapper.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnff::ParamVector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning rate.
    pub eta: f64,
}

impl AdamState {
    pub fn new(n_params: usize, eta: f64) -> Self {
        Self { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8, eta }
    }

    /// Bias-corrected Adam update of `w` in place.
    pub fn step(&mut self, w: &mut [f64], grad: &[f64]) -> Result<()> {
        if w.len() != grad.len() || w.len() != self.m.len() {
            return Err(Error::Invalid(format!(
                "dimension mismatch: {} weights, {} gradients, {} moments",
                w.len(),
                grad.len(),
                self.m.len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for k in 0..w.len() {
            let g = grad[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            w[k] -= self.eta * m_hat / (v_hat.sqrt() + self.eps);
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("non-finite weights after Adam step {}", self.t)));
        }
        Ok(())
    }
}

/// Pure form of [`AdamState::step`].
pub fn adam_step(w: &ParamVector, grad: &[f64], state: &AdamState) -> Result<(ParamVector, AdamState)> {
    let mut w = w.clone();
    let mut state = state.clone();
    state.step(&mut w.0, grad)?;
    Ok((w, state))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamConfig {
    /// Neighborhood radius.
    pub rho: f64,
}

impl SamConfig {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::Invalid(format!("rho must be finite and non-negative, got {rho}")));
        }
        Ok(Self { rho })
    }
}

/// One sharpness-aware step in place.
///
/// Takes the gradient at `w`, moves to `w + rho g / |g|`, takes the gradient there and hands it
/// to Adam as the update for `w`. Returns the loss value reported by the first evaluation.
/// With `rho = 0` or a zero gradient this is exactly one Adam step.
pub fn sam_update<T, F>(w: &mut [f64], loss_grad: &mut F, adam: &mut AdamState, sam: SamConfig) -> Result<T>
where
    F: FnMut(&[f64]) -> Result<(T, Vec<f64>)>,
{
    let (value, g1) = loss_grad(w)?;
    let norm = g1.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(Error::Numerical("non-finite gradient norm".into()));
    }
    if sam.rho == 0.0 || norm == 0.0 {
        adam.step(w, &g1)?;
        return Ok(value);
    }
    let scale = sam.rho / norm;
    let perturbed: Vec<f64> = w.iter().zip(&g1).map(|(x, g)| x + scale * g).collect();
    if perturbed.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite perturbed weights".into()));
    }
    let (_, g2) = loss_grad(&perturbed)?;
    adam.step(w, &g2)?;
    Ok(value)
}

/// Pure form of [`sam_update`] with a gradient-only callback.
pub fn sam_step<F>(w: &ParamVector, loss_grad: &mut F, adam: &AdamState, sam: SamConfig) -> Result<(ParamVector, AdamState)>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut w = w.clone();
    let mut adam = adam.clone();
    let mut wrapped = |x: &[f64]| loss_grad(x).map(|g| ((), g));
    sam_update(&mut w.0, &mut wrapped, &mut adam, sam)?;
    Ok((w, adam))
}
