//! Linked-cell neighbor search under periodic boundaries.

use super::state::{minimum_image, SystemState};
use super::vec3::{self, Vec3};
use crate::error::{Error, Result};

/// Verlet list of pairs within `cutoff + skin`, with the positions it was built from.
#[derive(Clone, Debug)]
pub struct NeighborTable {
    pub cutoff: f64,
    pub skin: f64,
    pub box_length: f64,
    /// Sorted `(i, j)` with `i < j`.
    pub pairs: Vec<(usize, usize)>,
    pub build_positions: Vec<Vec3>,
}

/// One interacting pair in a concrete frame: `delta = r_j - r_i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairGeometry {
    pub i: usize,
    pub j: usize,
    pub delta: Vec3,
    pub r: f64,
}

pub fn build_neighbor_table(state: &SystemState, cutoff: f64, skin: f64) -> Result<NeighborTable> {
    let l = state.box_length;
    let reach = cutoff + skin;
    if !(cutoff > 0.0) || !(skin >= 0.0) {
        return Err(Error::Geometry(format!("invalid cutoff {cutoff} / skin {skin}")));
    }
    if reach >= 0.5 * l {
        return Err(Error::Geometry(format!(
            "cutoff + skin = {reach} must be below half the box length {}",
            0.5 * l
        )));
    }
    let reach2 = reach * reach;
    let pos = &state.positions;
    let n = pos.len();
    let n_cells = (l / reach).floor() as usize;

    let mut pairs = Vec::new();
    if n_cells < 3 {
        // too few cells for a 27-cell stencil without double visits
        for i in 0..n {
            for j in i + 1..n {
                if vec3::norm2(minimum_image(vec3::sub(pos[j], pos[i]), l)) <= reach2 {
                    pairs.push((i, j));
                }
            }
        }
    } else {
        let cell_edge = l / n_cells as f64;
        let cell_of = |p: Vec3| -> [usize; 3] {
            let mut c = [0usize; 3];
            for k in 0..3 {
                c[k] = ((p[k] / cell_edge) as usize).min(n_cells - 1);
            }
            c
        };
        let flat = |c: [usize; 3]| (c[0] * n_cells + c[1]) * n_cells + c[2];
        let total = n_cells * n_cells * n_cells;
        let mut head = vec![usize::MAX; total];
        let mut next = vec![usize::MAX; n];
        for i in (0..n).rev() {
            let c = flat(cell_of(pos[i]));
            next[i] = head[c];
            head[c] = i;
        }
        let nc = n_cells as isize;
        for cx in 0..nc {
            for cy in 0..nc {
                for cz in 0..nc {
                    let home = flat([cx as usize, cy as usize, cz as usize]);
                    for dx in -1..=1 {
                        for dy in -1..=1 {
                            for dz in -1..=1 {
                                let other = flat([
                                    (cx + dx).rem_euclid(nc) as usize,
                                    (cy + dy).rem_euclid(nc) as usize,
                                    (cz + dz).rem_euclid(nc) as usize,
                                ]);
                                if other < home {
                                    continue;
                                }
                                let mut i = head[home];
                                while i != usize::MAX {
                                    let mut j = if other == home { next[i] } else { head[other] };
                                    while j != usize::MAX {
                                        let d = minimum_image(vec3::sub(pos[j], pos[i]), l);
                                        if vec3::norm2(d) <= reach2 {
                                            pairs.push((i.min(j), i.max(j)));
                                        }
                                        j = next[j];
                                    }
                                    i = next[i];
                                }
                            }
                        }
                    }
                }
            }
        }
        pairs.sort_unstable();
        // a neighbor cell can be reached through two stencil offsets only when n_cells < 3
        debug_assert!(pairs.windows(2).all(|w| w[0] != w[1]));
    }

    Ok(NeighborTable { cutoff, skin, box_length: l, pairs, build_positions: pos.clone() })
}

impl NeighborTable {
    /// True once any atom has moved at least half the skin since the build.
    pub fn needs_rebuild(&self, state: &SystemState) -> bool {
        if state.positions.len() != self.build_positions.len() {
            return true;
        }
        let half2 = (0.5 * self.skin) * (0.5 * self.skin);
        state.positions.iter().zip(&self.build_positions).any(|(p, q)| {
            vec3::norm2(minimum_image(vec3::sub(*p, *q), state.box_length)) >= half2
        })
    }

    /// Minimum-image geometry of every listed pair currently within `cutoff`.
    pub fn pair_geometry(&self, state: &SystemState, cutoff: f64) -> Vec<PairGeometry> {
        let c2 = cutoff * cutoff;
        let l = state.box_length;
        let pos = &state.positions;
        self.pairs
            .iter()
            .filter_map(|&(i, j)| {
                let delta = minimum_image(vec3::sub(pos[j], pos[i]), l);
                let r2 = vec3::norm2(delta);
                (r2 <= c2).then(|| PairGeometry { i, j, delta, r: r2.sqrt() })
            })
            .collect()
    }
}

/// All pairs within `cutoff` of each other in an open (non-periodic) frame.
///
/// Used for domain-local systems whose ghost atoms already carry their periodic shifts.
pub fn open_pairs(positions: &[Vec3], cutoff: f64) -> Vec<PairGeometry> {
    let n = positions.len();
    if n == 0 {
        return Vec::new();
    }
    let c2 = cutoff * cutoff;
    let mut lo = positions[0];
    let mut hi = positions[0];
    for p in positions {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let mut dims = [1usize; 3];
    for k in 0..3 {
        dims[k] = (((hi[k] - lo[k]) / cutoff).floor() as usize + 1).max(1);
    }
    let flat = |c: [usize; 3]| (c[0] * dims[1] + c[1]) * dims[2] + c[2];
    let cell_of = |p: Vec3| -> [usize; 3] {
        let mut c = [0usize; 3];
        for k in 0..3 {
            c[k] = (((p[k] - lo[k]) / cutoff) as usize).min(dims[k] - 1);
        }
        c
    };
    let mut head = vec![usize::MAX; dims[0] * dims[1] * dims[2]];
    let mut next = vec![usize::MAX; n];
    for i in (0..n).rev() {
        let c = flat(cell_of(positions[i]));
        next[i] = head[c];
        head[c] = i;
    }
    let mut out = Vec::new();
    for i in 0..n {
        let ci = cell_of(positions[i]);
        for dx in -1isize..=1 {
            for dy in -1isize..=1 {
                for dz in -1isize..=1 {
                    let c = [ci[0] as isize + dx, ci[1] as isize + dy, ci[2] as isize + dz];
                    if (0..3).any(|k| c[k] < 0 || c[k] >= dims[k] as isize) {
                        continue;
                    }
                    let mut j = head[flat([c[0] as usize, c[1] as usize, c[2] as usize])];
                    while j != usize::MAX {
                        if j > i {
                            let delta = vec3::sub(positions[j], positions[i]);
                            let r2 = vec3::norm2(delta);
                            if r2 <= c2 {
                                out.push(PairGeometry { i, j, delta, r: r2.sqrt() });
                            }
                        }
                        j = next[j];
                    }
                }
            }
        }
    }
    out.sort_unstable_by_key(|p| (p.i, p.j));
    out
}
