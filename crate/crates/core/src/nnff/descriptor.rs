//! Radial Gaussian descriptors with a cosine cutoff.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simcore::{NeighborTable, PairGeometry, SystemState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptorConfig {
    pub r_max: f64,
    /// Gaussian centres, strictly increasing inside `(0, r_max)`.
    pub centers: Vec<f64>,
    pub width: f64,
}

impl DescriptorConfig {
    /// `n_basis` centres evenly spaced from `r_min`, with the spacing as width.
    pub fn uniform(n_basis: usize, r_min: f64, r_max: f64) -> Result<Self> {
        if n_basis == 0 {
            return Err(Error::Invalid("descriptor needs at least one basis function".into()));
        }
        let spacing = (r_max - r_min) / n_basis as f64;
        let centers = (0..n_basis).map(|k| r_min + k as f64 * spacing).collect();
        let cfg = Self { r_max, centers, width: spacing };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n_basis(&self) -> usize {
        self.centers.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_max > 0.0 && self.width > 0.0) {
            return Err(Error::Invalid("r_max and width must be positive".into()));
        }
        if self.centers.is_empty() {
            return Err(Error::Invalid("descriptor needs at least one centre".into()));
        }
        if self.centers.iter().any(|c| !(*c > 0.0 && *c < self.r_max)) {
            return Err(Error::Invalid("centres must lie strictly inside (0, r_max)".into()));
        }
        if self.centers.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Invalid("centres must be strictly increasing".into()));
        }
        Ok(())
    }

    /// `f_c(r) = (cos(pi r / r_max) + 1) / 2` inside the cutoff and its derivative.
    #[inline]
    pub fn cutoff_fn(&self, r: f64) -> (f64, f64) {
        if r >= self.r_max {
            return (0.0, 0.0);
        }
        let a = std::f64::consts::PI / self.r_max;
        (0.5 * ((a * r).cos() + 1.0), -0.5 * a * (a * r).sin())
    }

    /// Basis values `g_k(r)` and derivatives `g_k'(r)`, written into the two slices.
    #[inline]
    pub fn basis(&self, r: f64, g: &mut [f64], dg: &mut [f64]) {
        let (fc, dfc) = self.cutoff_fn(r);
        let inv_w2 = 1.0 / (self.width * self.width);
        for (k, c) in self.centers.iter().enumerate() {
            let d = r - c;
            let gauss = (-0.5 * d * d * inv_w2).exp();
            g[k] = gauss * fc;
            dg[k] = gauss * (dfc - d * inv_w2 * fc);
        }
    }

    /// Raw descriptors for every atom, `n_atoms x n_basis` row-major.
    pub fn describe_all(&self, n_atoms: usize, pairs: &[PairGeometry]) -> Vec<f64> {
        let k = self.n_basis();
        let mut out = vec![0.0; n_atoms * k];
        let mut g = vec![0.0; k];
        let mut dg = vec![0.0; k];
        for p in pairs {
            if p.r > self.r_max {
                continue;
            }
            self.basis(p.r, &mut g, &mut dg);
            for b in 0..k {
                out[p.i * k + b] += g[b];
                out[p.j * k + b] += g[b];
            }
        }
        out
    }
}

/// Raw descriptor vector of one atom in a periodic state.
pub fn describe(state: &SystemState, atom_index: usize, config: &DescriptorConfig, table: &NeighborTable) -> Vec<f64> {
    let pairs: Vec<_> = table
        .pair_geometry(state, config.r_max)
        .into_iter()
        .filter(|p| p.i == atom_index || p.j == atom_index)
        .collect();
    let all = config.describe_all(state.n_atoms(), &pairs);
    let k = config.n_basis();
    all[atom_index * k..(atom_index + 1) * k].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simcore::build_neighbor_table;

    fn cfg() -> DescriptorConfig {
        DescriptorConfig::uniform(8, 0.8, 2.1).unwrap()
    }

    #[test]
    fn isolated_atom_is_zero() {
        let s = SystemState::at_rest(vec![[1.0, 1.0, 1.0], [4.0, 4.0, 4.0]], 10.0).unwrap();
        let t = build_neighbor_table(&s, 2.1, 0.1).unwrap();
        assert_eq!(describe(&s, 0, &cfg(), &t), vec![0.0; 8]);
    }

    #[test]
    fn neighbor_at_cutoff_is_zero() {
        let c = cfg();
        let s = SystemState::at_rest(vec![[1.0, 1.0, 1.0], [1.0 + c.r_max, 1.0, 1.0]], 10.0).unwrap();
        let t = build_neighbor_table(&s, c.r_max, 0.1).unwrap();
        let d = describe(&s, 0, &c, &t);
        assert!(d.iter().all(|x| x.abs() < 1e-30), "{d:?}");
    }

    #[test]
    fn neighbor_on_a_centre() {
        let c = cfg();
        let r = c.centers[3];
        let s = SystemState::at_rest(vec![[1.0, 1.0, 1.0], [1.0, 1.0 + r, 1.0]], 10.0).unwrap();
        let t = build_neighbor_table(&s, c.r_max, 0.1).unwrap();
        let d = describe(&s, 0, &c, &t);
        let fc = 0.5 * ((std::f64::consts::PI * r / c.r_max).cos() + 1.0);
        assert!((d[3] - fc).abs() < 1e-15);
        for k in 0..8 {
            let dist = r - c.centers[k];
            let expect = (-dist * dist / (2.0 * c.width * c.width)).exp() * fc;
            assert!((d[k] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn basis_derivative_matches_difference() {
        let c = cfg();
        let mut g = [0.0; 8];
        let mut dg = [0.0; 8];
        let mut gp = [0.0; 8];
        let mut gm = [0.0; 8];
        let mut tmp = [0.0; 8];
        for &r in &[0.7, 1.0, 1.33, 1.9, 2.09] {
            c.basis(r, &mut g, &mut dg);
            let h = 1e-6;
            c.basis(r + h, &mut gp, &mut tmp);
            c.basis(r - h, &mut gm, &mut tmp);
            for k in 0..8 {
                let fd = (gp[k] - gm[k]) / (2.0 * h);
                assert!((fd - dg[k]).abs() < 1e-7 * (1.0 + dg[k].abs()));
            }
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(DescriptorConfig { r_max: 2.0, centers: vec![1.0, 0.5], width: 0.1 }.validate().is_err());
        assert!(DescriptorConfig { r_max: 2.0, centers: vec![2.0], width: 0.1 }.validate().is_err());
        assert!(DescriptorConfig { r_max: 2.0, centers: vec![1.0], width: 0.0 }.validate().is_err());
    }
}
