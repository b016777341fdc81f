//! Sharpness and loss-scan checks against closed-form quadratics.

use ttflab_core::probes::{loss_scan, measure_sharpness, uniform_grid, DEFAULT_SAMPLES};
use ttflab_core::Result;

/// `0.5 * sum_i lambda_i (w_i - c_i)^2`
fn quadratic(lambda: Vec<f64>, centre: Vec<f64>) -> impl FnMut(&[f64]) -> Result<f64> {
    move |w: &[f64]| Ok(0.5 * w.iter().zip(&lambda).zip(&centre).map(|((x, l), c)| l * (x - c) * (x - c)).sum::<f64>())
}

/// Least-squares `a + b p + c p^2` by the 3x3 normal equations (Cramer's rule) and its R^2.
fn parabola_fit(p: &[f64], y: &[f64]) -> ([f64; 3], f64) {
    let mut s = [0.0; 5];
    let mut t = [0.0; 3];
    for (&x, &v) in p.iter().zip(y) {
        for (k, sk) in s.iter_mut().enumerate() {
            *sk += x.powi(k as i32);
        }
        for (k, tk) in t.iter_mut().enumerate() {
            *tk += v * x.powi(k as i32);
        }
    }
    let m = [[s[0], s[1], s[2]], [s[1], s[2], s[3]], [s[2], s[3], s[4]]];
    let det = |a: [[f64; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let d = det(m);
    let mut coef = [0.0; 3];
    for (col, c) in coef.iter_mut().enumerate() {
        let mut mc = m;
        for row in 0..3 {
            mc[row][col] = t[row];
        }
        *c = det(mc) / d;
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = p.iter().zip(y).map(|(&x, &v)| (v - coef[0] - coef[1] * x - coef[2] * x * x).powi(2)).sum();
    (coef, 1.0 - ss_res / ss_tot)
}

#[test]
fn isotropic_quadratic_at_minimum_is_exact() {
    for dim in 1..=4 {
        let lambda = 3.0;
        let rho = 0.05;
        let est = measure_sharpness(quadratic(vec![lambda; dim], vec![0.0; dim]), &vec![0.0; dim], rho, DEFAULT_SAMPLES, 1).unwrap();
        let expected = 0.5 * lambda * rho * rho;
        assert!(est.value >= 0.9 * expected && est.value <= expected * (1.0 + 1e-12), "dim {dim}: {}", est.value);
    }
}

#[test]
fn anisotropic_quadratic_finds_the_stiff_direction() {
    let lambda = vec![4.0, 2.0, 1.0, 0.5];
    for dim in 1..=4 {
        for seed in 0..5 {
            let rho = 0.1;
            let est =
                measure_sharpness(quadratic(lambda[..dim].to_vec(), vec![0.0; dim]), &vec![0.0; dim], rho, 1000, seed).unwrap();
            let bound = 0.5 * lambda[0] * rho * rho;
            assert!(est.value <= bound * (1.0 + 1e-12), "sampled value above the true maximum");
            assert!(est.value >= 0.9 * bound, "dim {dim} seed {seed}: {} vs {bound}", est.value);
            // the worst direction leans on the stiffest axis
            assert!(est.argmax_direction[0].abs() > 0.9);
        }
    }
}

#[test]
fn off_minimum_quadratic_matches_linear_plus_curvature_bound() {
    // away from the minimum: max over the sphere is lambda rho |w - c| + lambda rho^2 / 2
    let lambda = 2.0;
    let rho = 0.05;
    let w = [0.3, -0.4];
    let est = measure_sharpness(quadratic(vec![lambda; 2], vec![0.0; 2]), &w, rho, 1000, 9).unwrap();
    let exact = lambda * rho * 0.5 + 0.5 * lambda * rho * rho;
    assert!(est.value <= exact * (1.0 + 1e-12) && est.value >= 0.99 * exact, "{} vs {exact}", est.value);
}

#[test]
fn more_samples_never_lower_the_estimate() {
    let f = || quadratic(vec![5.0, 1.0, 0.2, 0.1, 0.05, 0.01], vec![0.1; 6]);
    let w = vec![0.0; 6];
    let mut last = f64::NEG_INFINITY;
    for n in [1, 10, 100, 1000] {
        let est = measure_sharpness(f(), &w, 0.05, n, 4).unwrap();
        assert!(est.value >= last);
        last = est.value;
    }
    let a = measure_sharpness(f(), &w, 0.05, 200, 4).unwrap();
    let b = measure_sharpness(f(), &w, 0.05, 200, 4).unwrap();
    assert_eq!(a, b);
}

#[test]
fn loss_scan_of_quadratic_is_a_parabola() {
    let lambda = vec![3.0, 1.0, 0.5, 2.0, 0.7];
    let w = vec![0.2, -0.1, 0.05, 0.0, 0.3];
    let scale = 0.05;
    let scan = loss_scan(quadratic(lambda.clone(), vec![0.0; 5]), &w, &uniform_grid(41), scale, 2).unwrap();
    assert_eq!(scan.grid.len(), 41);
    assert_eq!(scan.grid[20], 0.0);
    let (coef, r2) = parabola_fit(&scan.grid, &scan.values);
    assert!(r2 > 0.999999, "R^2 = {r2}");
    // curvature along d is lambda-weighted: 0.5 * scale^2 * sum lambda_i d_i^2
    let curv = 0.5 * scale * scale * lambda.iter().zip(&scan.direction).map(|(l, d)| l * d * d).sum::<f64>();
    assert!((coef[2] - curv).abs() < 1e-10 * curv.max(1.0), "{} vs {curv}", coef[2]);
    let base = quadratic(lambda, vec![0.0; 5])(&w).unwrap();
    assert_eq!(scan.values[20], base);
}

#[test]
fn scan_and_probe_reject_bad_input() {
    let f = || quadratic(vec![1.0], vec![0.0]);
    assert!(measure_sharpness(f(), &[0.0], 0.0, 10, 0).is_err());
    assert!(measure_sharpness(f(), &[0.0], 0.1, 0, 0).is_err());
    assert!(loss_scan(f(), &[0.0], &[2.0], 0.05, 0).is_err());
    assert!(loss_scan(f(), &[0.0], &[0.0], -1.0, 0).is_err());
    let nan = |_: &[f64]| -> Result<f64> { Ok(f64::NAN) };
    assert!(measure_sharpness(nan, &[0.0], 0.1, 5, 0).is_err());
}
