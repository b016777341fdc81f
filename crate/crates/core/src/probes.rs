//! Sharpness estimates and one-dimensional loss scans around trained weights.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

pub const DEFAULT_RHO: f64 = 0.05;
pub const DEFAULT_SAMPLES: usize = 1000;
pub const DEFAULT_SCAN_POINTS: usize = 41;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpnessEstimate {
    /// Largest observed `L(w + e) - L(w)`.
    pub value: f64,
    pub rho: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Unit direction of the worst sample.
    pub argmax_direction: Vec<f64>,
    /// Always "sphere": perturbations have norm exactly `rho`.
    pub sampling: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossScan {
    /// Unit direction.
    pub direction: Vec<f64>,
    /// Length of the displacement at `p = 1`.
    pub scale: f64,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl LossScan {
    pub fn points(&self) -> Vec<[f64; 2]> {
        self.grid.iter().zip(&self.values).map(|(&p, &v)| [p, v]).collect()
    }
}

fn unit_gaussian<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let mut d: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            d.iter_mut().for_each(|x| *x /= norm);
            return d;
        }
    }
}

fn checked<F: FnMut(&[f64]) -> Result<f64>>(loss: &mut F, w: &[f64]) -> Result<f64> {
    let v = loss(w)?;
    if !v.is_finite() {
        return Err(Error::Numerical("non-finite loss during probe".into()));
    }
    Ok(v)
}

/// Maximum loss increase over `n_samples` random points on the radius-`rho` sphere around `w`.
///
/// Directions come from one seeded stream in order, so a longer run sees a superset of the
/// samples of a shorter one.
pub fn measure_sharpness<F>(mut loss: F, w: &[f64], rho: f64, n_samples: usize, seed: u64) -> Result<SharpnessEstimate>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::Invalid(format!("rho must be positive, got {rho}")));
    }
    if n_samples == 0 || w.is_empty() {
        return Err(Error::Invalid("need at least one sample and one weight".into()));
    }
    let base = checked(&mut loss, w)?;
    let mut rng = seeds::rng(seed, "sharpness");
    let mut best = (f64::NEG_INFINITY, Vec::new());
    let mut probe = vec![0.0; w.len()];
    for _ in 0..n_samples {
        let d = unit_gaussian(&mut rng, w.len());
        for ((p, &x), &dk) in probe.iter_mut().zip(w).zip(&d) {
            *p = x + rho * dk;
        }
        let delta = checked(&mut loss, &probe)? - base;
        if delta > best.0 {
            best = (delta, d);
        }
    }
    Ok(SharpnessEstimate {
        value: best.0,
        rho,
        n_samples,
        seed,
        argmax_direction: best.1,
        sampling: "sphere".into(),
    })
}

/// `n` evenly spaced points on [-1, 1]; odd `n` includes 0 exactly.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => {
            let half = (n - 1) as f64 / 2.0;
            (0..n).map(|i| (i as f64 - half) / half).collect()
        }
    }
}

/// Loss along `w + p * scale * d` for one seeded random unit direction `d`.
pub fn loss_scan<F>(mut loss: F, w: &[f64], grid: &[f64], scale: f64, seed: u64) -> Result<LossScan>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if grid.is_empty() || grid.iter().any(|p| !(-1.0..=1.0).contains(p)) {
        return Err(Error::Invalid("scan grid must be nonempty and inside [-1, 1]".into()));
    }
    if !(scale > 0.0 && scale.is_finite()) || w.is_empty() {
        return Err(Error::Invalid(format!("scan scale must be positive, got {scale}")));
    }
    let mut rng = seeds::rng(seed, "scan");
    let direction = unit_gaussian(&mut rng, w.len());
    let mut values = Vec::with_capacity(grid.len());
    let mut probe = vec![0.0; w.len()];
    for &p in grid {
        for ((x, &w0), &dk) in probe.iter_mut().zip(w).zip(&direction) {
            *x = w0 + p * scale * dk;
        }
        values.push(checked(&mut loss, &probe)?);
    }
    Ok(LossScan { direction, scale, grid: grid.to_vec(), values })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(lambda: f64) -> impl FnMut(&[f64]) -> Result<f64> {
        move |w: &[f64]| Ok(0.5 * lambda * w.iter().map(|x| x * x).sum::<f64>())
    }

    #[test]
    fn constant_loss_is_flat() {
        let s = measure_sharpness(|_: &[f64]| Ok(3.0), &[1.0, 2.0], 0.05, 50, 1).unwrap();
        assert_eq!(s.value, 0.0);
    }

    #[test]
    fn quadratic_bounds() {
        for dim in 1..=4 {
            let w = vec![0.0; dim];
            let s = measure_sharpness(quad(2.0), &w, 0.05, 1000, 9).unwrap();
            let exact = 0.5 * 2.0 * 0.05 * 0.05;
            assert!(s.value <= exact * (1.0 + 1e-12), "dim {dim}: {}", s.value);
            assert!(s.value >= 0.9 * exact, "dim {dim}: {}", s.value);
            let n: f64 = s.argmax_direction.iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scales_linearly_with_curvature() {
        let w = [0.1, -0.2, 0.3];
        let a = measure_sharpness(quad(1.0), &w, 0.05, 200, 4).unwrap();
        let b = measure_sharpness(quad(2.0), &w, 0.05, 200, 4).unwrap();
        assert!((b.value - 2.0 * a.value).abs() <= 1e-12 * b.value.abs());
    }

    #[test]
    fn prefix_property() {
        let w = [0.3, 0.1, -0.5, 0.2, 0.0];
        let mut last = f64::NEG_INFINITY;
        for n in [1, 10, 100, 500] {
            let s = measure_sharpness(|x: &[f64]| Ok(x.iter().map(|v| v.sin()).sum()), &w, 0.05, n, 7).unwrap();
            assert!(s.value >= last);
            last = s.value;
        }
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let r = measure_sharpness(|x: &[f64]| Ok(if x[0] > 0.0 { f64::NAN } else { 0.0 }), &[0.0], 0.05, 10, 1);
        assert!(r.is_err());
    }

    #[test]
    fn grid_contains_zero() {
        let g = uniform_grid(DEFAULT_SCAN_POINTS);
        assert_eq!(g.len(), 41);
        assert_eq!(g[20], 0.0);
        assert_eq!(g[0], -1.0);
        assert_eq!(g[40], 1.0);
    }

    #[test]
    fn scan_single_point_and_symmetry() {
        let w = [0.0, 0.0, 0.0];
        let one = loss_scan(quad(3.0), &w, &[0.0], 0.05, 2).unwrap();
        assert_eq!(one.values, vec![0.0]);
        let s = loss_scan(quad(3.0), &w, &uniform_grid(41), 0.05, 2).unwrap();
        for i in 0..41 {
            assert!((s.values[i] - s.values[40 - i]).abs() < 1e-10);
        }
        let again = loss_scan(quad(3.0), &w, &uniform_grid(41), 0.05, 2).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn scan_rejects_out_of_range_grid() {
        assert!(loss_scan(quad(1.0), &[0.0], &[1.5], 0.05, 1).is_err());
        assert!(loss_scan(quad(1.0), &[0.0], &[], 0.05, 1).is_err());
    }
}
