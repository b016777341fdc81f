//! Spatial domain decomposition over worker threads.
//!
//! Each domain owns the atoms inside its box and receives read-only ghost copies of nearby
//! atoms from its 26 neighbors. Workers only talk through channels; the caller thread
//! reduces the per-domain results in domain order.

use std::io::Write;
use std::sync::mpsc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simcore::{
    build_neighbor_table, minimum_image, open_pairs, vec3, ForceEval, ForceProvider, Integrator, NeighborForces,
    PairGeometry, Potential, SystemState, Vec3,
};

/// Neighbor offsets in a fixed order; a message's tag is its index here.
pub fn directions() -> Vec<[i64; 3]> {
    let mut out = Vec::with_capacity(26);
    for dz in -1..=1 {
        for dy in -1..=1 {
            for dx in -1..=1 {
                if (dx, dy, dz) != (0, 0, 0) {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

/// Worker grid that tiles the periodic box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainGrid {
    pub dims: [usize; 3],
    pub box_length: f64,
    pub cutoff: f64,
    pub skin: f64,
    /// Distance outside a domain from which ghosts are imported.
    pub ghost_width: f64,
}

impl DomainGrid {
    /// Grid for a potential with the given cutoff and ghost reach; ghosts extend `reach + skin`.
    pub fn new(dims: [usize; 3], box_length: f64, cutoff: f64, skin: f64, ghost_reach: f64) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Geometry(format!("domain dims must be at least 1, got {dims:?}")));
        }
        let ghost_width = ghost_reach.max(cutoff) + skin;
        let grid = Self { dims, box_length, cutoff, skin, ghost_width };
        for a in 0..3 {
            let edge = grid.edge(a);
            let need = (2.0 * (cutoff + skin)).max(ghost_width);
            if edge < need {
                return Err(Error::Geometry(format!(
                    "domain edge {edge:.4} along axis {a} is below the required {need:.4} for dims {dims:?}"
                )));
            }
        }
        Ok(grid)
    }

    pub fn for_potential<P: Potential + ?Sized>(dims: [usize; 3], box_length: f64, potential: &P, skin: f64) -> Result<Self> {
        Self::new(dims, box_length, potential.cutoff(), skin, potential.ghost_reach())
    }

    pub fn n_domains(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn edge(&self, axis: usize) -> f64 {
        self.box_length / self.dims[axis] as f64
    }

    pub fn coords(&self, d: usize) -> [usize; 3] {
        [d % self.dims[0], (d / self.dims[0]) % self.dims[1], d / (self.dims[0] * self.dims[1])]
    }

    pub fn index(&self, c: [usize; 3]) -> usize {
        c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])
    }

    /// Lower and upper corners of domain `d`.
    pub fn bounds(&self, d: usize) -> (Vec3, Vec3) {
        let c = self.coords(d);
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in 0..3 {
            lo[a] = c[a] as f64 * self.edge(a);
            hi[a] = (c[a] + 1) as f64 * self.edge(a);
        }
        (lo, hi)
    }

    /// Domain containing a wrapped position. A point on an internal face goes to the lower index.
    pub fn domain_of(&self, p: Vec3) -> usize {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let k = (p[a] / self.edge(a)).ceil() as i64 - 1;
            c[a] = k.clamp(0, self.dims[a] as i64 - 1) as usize;
        }
        self.index(c)
    }

    /// Target domain and periodic image for what domain `source` sends in direction `dir`.
    ///
    /// The target sees `source` as its neighbor at offset `dir`, displaced by `image` boxes.
    fn route(&self, source: usize, dir: [i64; 3]) -> (usize, Image) {
        let s = self.coords(source);
        let mut t = [0usize; 3];
        let mut image = [0i64; 3];
        for a in 0..3 {
            let p = self.dims[a] as i64;
            let ta = (s[a] as i64 - dir[a]).rem_euclid(p);
            t[a] = ta as usize;
            image[a] = (ta + dir[a]).div_euclid(p);
        }
        (self.index(t), image)
    }

    fn place(&self, p: Vec3, image: Image) -> Vec3 {
        std::array::from_fn(|a| p[a] + image[a] as f64 * self.box_length)
    }

    fn in_halo(&self, d: usize, p: Vec3) -> bool {
        let (lo, hi) = self.bounds(d);
        (0..3).all(|a| p[a] >= lo[a] - self.ghost_width && p[a] <= hi[a] + self.ghost_width)
    }
}

/// Owned atoms per domain, ascending.
pub fn decompose(state: &SystemState, grid: &DomainGrid) -> Result<Vec<Vec<usize>>> {
    if (grid.box_length - state.box_length).abs() > 1e-12 * state.box_length {
        return Err(Error::Geometry("grid and state box lengths differ".into()));
    }
    let mut owned = vec![Vec::new(); grid.n_domains()];
    for (i, p) in state.positions.iter().enumerate() {
        owned[grid.domain_of(*p)].push(i);
    }
    Ok(owned)
}

/// Whole-box displacement of a periodic image.
pub type Image = [i64; 3];

/// A read-only copy of an atom owned elsewhere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ghost {
    pub index: usize,
    pub image: Image,
    /// Position of the image, `wrapped + image * L`.
    pub position: Vec3,
}

/// Runs one worker per domain. Worker `d` first posts its outbound `(target, tag, payload)`
/// messages, then receives one message per direction, sorted by tag, and reduces them.
fn run_domains<T, R, S, C>(n_domains: usize, send: S, consume: C) -> Vec<R>
where
    T: Send,
    R: Send,
    S: Fn(usize) -> Vec<(usize, usize, T)> + Sync,
    C: Fn(usize, Vec<(usize, T)>) -> R + Sync,
{
    let expected = directions().len();
    let (senders, receivers): (Vec<_>, Vec<_>) = (0..n_domains).map(|_| mpsc::channel::<(usize, T)>()).unzip();
    let (done_tx, done_rx) = mpsc::channel::<(usize, R)>();
    std::thread::scope(|scope| {
        for (d, inbox) in receivers.into_iter().enumerate() {
            let senders = senders.clone();
            let done = done_tx.clone();
            let (send, consume) = (&send, &consume);
            scope.spawn(move || {
                for (target, tag, payload) in send(d) {
                    senders[target].send((tag, payload)).expect("domain inbox open");
                }
                drop(senders);
                let mut inbound: Vec<(usize, T)> = (0..expected).map(|_| inbox.recv().expect("neighbor message")).collect();
                inbound.sort_by_key(|m| m.0);
                done.send((d, consume(d, inbound))).expect("collector open");
            });
        }
    });
    drop(done_tx);
    let mut out: Vec<(usize, R)> = done_rx.into_iter().collect();
    out.sort_by_key(|r| r.0);
    out.into_iter().map(|r| r.1).collect()
}

/// Sends every atom to each neighbor whose halo it falls in; returns ghosts per domain,
/// ordered by direction tag then by global index.
pub fn exchange_ghosts(grid: &DomainGrid, owned: &[Vec<usize>], state: &SystemState) -> Vec<Vec<Ghost>> {
    let dirs = directions();
    run_domains(
        grid.n_domains(),
        |d| {
            dirs.iter()
                .enumerate()
                .map(|(tag, &dir)| {
                    let (target, image) = grid.route(d, dir);
                    let batch: Vec<Ghost> = owned[d]
                        .iter()
                        .filter_map(|&i| {
                            let position = grid.place(state.positions[i], image);
                            grid.in_halo(target, position).then_some(Ghost { index: i, image, position })
                        })
                        .collect();
                    (target, tag, batch)
                })
                .collect()
        },
        |_, inbound| inbound.into_iter().flat_map(|m| m.1).collect(),
    )
}

/// Global pairs within `cutoff` seen by the domains, each with at least one owned endpoint.
pub fn domain_pair_set(grid: &DomainGrid, state: &SystemState, cutoff: f64) -> Result<Vec<(usize, usize)>> {
    let owned = decompose(state, grid)?;
    let ghosts = exchange_ghosts(grid, &owned, state);
    let mut all = Vec::new();
    for (own, gh) in owned.iter().zip(&ghosts) {
        let mut pos: Vec<Vec3> = own.iter().map(|&i| state.positions[i]).collect();
        pos.extend(gh.iter().map(|g| g.position));
        let global: Vec<usize> = own.iter().copied().chain(gh.iter().map(|g| g.index)).collect();
        for p in open_pairs(&pos, cutoff) {
            if p.i < own.len() || p.j < own.len() {
                let (a, b) = (global[p.i], global[p.j]);
                all.push((a.min(b), a.max(b)));
            }
        }
    }
    all.sort_unstable();
    all.dedup();
    Ok(all)
}

struct Outbound {
    target: usize,
    tag: usize,
    atoms: Vec<usize>,
    image: Image,
}

struct DomainPlan {
    owned: Vec<usize>,
    /// Global index of each ghost, in the order its positions arrive.
    ghosts: Vec<usize>,
    outbound: Vec<Outbound>,
    /// Local pairs within `cutoff + skin` at the last rebuild.
    candidates: Vec<(usize, usize)>,
}

struct Plan {
    grid: DomainGrid,
    reference: Vec<Vec3>,
    domains: Vec<DomainPlan>,
}

/// Force provider that evaluates each domain on its own thread.
///
/// Ownership, ghost lists and local pair candidates are rebuilt when any atom has moved half
/// the skin; in between, only positions travel between workers. With one domain it is the
/// serial provider.
pub struct ParallelForces<P> {
    potential: P,
    dims: [usize; 3],
    skin: f64,
    plan: Option<Plan>,
    serial: Option<NeighborForces<P>>,
    rebuilds: usize,
}

impl<P: Potential + Clone> ParallelForces<P> {
    pub fn new(potential: P, dims: [usize; 3], skin: f64) -> Self {
        let serial = (dims == [1, 1, 1]).then(|| NeighborForces::new(potential.clone(), skin));
        Self { potential, dims, skin, plan: None, serial, rebuilds: 0 }
    }
}

impl<P: Potential> ParallelForces<P> {
    pub fn rebuilds(&self) -> usize {
        self.rebuilds
    }

    pub fn n_domains(&self) -> usize {
        self.dims.iter().product()
    }

    fn stale(&self, state: &SystemState) -> bool {
        let Some(plan) = &self.plan else { return true };
        if plan.reference.len() != state.n_atoms() || plan.grid.box_length != state.box_length {
            return true;
        }
        let half2 = 0.25 * self.skin * self.skin;
        plan.reference
            .iter()
            .zip(&state.positions)
            .any(|(r, p)| vec3::norm2(minimum_image(vec3::sub(*p, *r), state.box_length)) >= half2)
    }

    fn rebuild(&mut self, state: &SystemState) -> Result<()> {
        let grid = DomainGrid::for_potential(self.dims, state.box_length, &self.potential, self.skin)?;
        let owned = decompose(state, &grid)?;
        let ghosts = exchange_ghosts(&grid, &owned, state);
        let dirs = directions();
        let reach = grid.cutoff + self.skin;
        let mut domains = Vec::with_capacity(owned.len());
        for (d, (own, gh)) in owned.iter().zip(&ghosts).enumerate() {
            let mut outbound = Vec::with_capacity(dirs.len());
            for (tag, &dir) in dirs.iter().enumerate() {
                let (target, image) = grid.route(d, dir);
                let atoms = own
                    .iter()
                    .copied()
                    .filter(|&i| grid.in_halo(target, grid.place(state.positions[i], image)))
                    .collect();
                outbound.push(Outbound { target, tag, atoms, image });
            }
            let mut pos: Vec<Vec3> = own.iter().map(|&i| state.positions[i]).collect();
            pos.extend(gh.iter().map(|g| g.position));
            let candidates = open_pairs(&pos, reach)
                .into_iter()
                .filter(|p| p.i < own.len() || p.j < own.len() || self.potential.ghost_reach() > grid.cutoff)
                .map(|p| (p.i, p.j))
                .collect();
            domains.push(DomainPlan { owned: own.clone(), ghosts: gh.iter().map(|g| g.index).collect(), outbound, candidates });
        }
        self.plan = Some(Plan { grid, reference: state.positions.clone(), domains });
        self.rebuilds += 1;
        Ok(())
    }

    fn evaluate(&self, state: &SystemState) -> Result<ForceEval> {
        let plan = self.plan.as_ref().expect("plan built");
        let l = state.box_length;
        let cutoff = plan.grid.cutoff;
        // Atoms travel as (wrapped position, image). Pair deltas are formed as
        // (p_j - p_i) + (m_j - m_i) L, which rounds exactly like the serial minimum image.
        let crossed = |i: usize| -> Image {
            let moved = vec3::add(plan.reference[i], minimum_image(vec3::sub(state.positions[i], plan.reference[i]), l));
            std::array::from_fn(|a| ((moved[a] - state.positions[i][a]) / l).round() as i64)
        };
        let potential = &self.potential;
        let results = run_domains(
            plan.domains.len(),
            |d| {
                plan.domains[d]
                    .outbound
                    .iter()
                    .map(|o| {
                        let batch: Vec<(Vec3, Image)> = o
                            .atoms
                            .iter()
                            .map(|&i| {
                                let c = crossed(i);
                                (state.positions[i], std::array::from_fn(|a| c[a] + o.image[a]))
                            })
                            .collect();
                        (o.target, o.tag, batch)
                    })
                    .collect()
            },
            |d, inbound| -> Result<(f64, Vec<Vec3>)> {
                let dp = &plan.domains[d];
                let mut atoms: Vec<(Vec3, Image)> = dp.owned.iter().map(|&i| (state.positions[i], crossed(i))).collect();
                atoms.extend(inbound.into_iter().flat_map(|m| m.1));
                if atoms.len() != dp.owned.len() + dp.ghosts.len() {
                    return Err(Error::Geometry(format!("domain {d}: ghost count changed between rebuilds")));
                }
                let c2 = cutoff * cutoff;
                let pairs: Vec<PairGeometry> = dp
                    .candidates
                    .iter()
                    .filter_map(|&(i, j)| {
                        let (pi, mi) = atoms[i];
                        let (pj, mj) = atoms[j];
                        let delta: Vec3 = std::array::from_fn(|a| (pj[a] - pi[a]) + (mj[a] - mi[a]) as f64 * l);
                        let r2 = vec3::norm2(delta);
                        (r2 <= c2).then(|| PairGeometry { i, j, delta, r: r2.sqrt() })
                    })
                    .collect();
                let eval = potential
                    .evaluate(atoms.len(), dp.owned.len(), &pairs)
                    .map_err(|e| e.context(format!("domain {d}")))?;
                Ok((eval.energy, eval.forces[..dp.owned.len()].to_vec()))
            },
        );
        let mut energy = 0.0;
        let mut forces = vec![[0.0; 3]; state.n_atoms()];
        for (dp, r) in plan.domains.iter().zip(results) {
            let (e, f) = r?;
            energy += e;
            for (&i, fi) in dp.owned.iter().zip(f) {
                forces[i] = fi;
            }
        }
        Ok(ForceEval { energy, forces })
    }
}

impl<P: Potential> ForceProvider for ParallelForces<P> {
    fn compute(&mut self, state: &SystemState) -> Result<ForceEval> {
        if let Some(serial) = self.serial.as_mut() {
            return serial.compute(state);
        }
        if self.stale(state) {
            self.rebuild(state)?;
        }
        let eval = self.evaluate(state)?;
        if !eval.is_finite() {
            return Err(Error::Numerical(format!("non-finite energy or force at step {}", state.step_count)));
        }
        Ok(eval)
    }
}

/// One-shot decomposed evaluation; a single domain takes the serial path.
pub fn parallel_forces<P: Potential + Clone>(potential: &P, state: &SystemState, dims: [usize; 3], skin: f64) -> Result<ForceEval> {
    if dims == [1, 1, 1] {
        let table = build_neighbor_table(state, potential.cutoff(), skin)?;
        return potential.energy_forces(state, &table);
    }
    ParallelForces::new(potential.clone(), dims, skin).compute(state)
}

/// Near-cubic factorization of a worker count, largest factor first.
pub fn dims_for(p: usize) -> [usize; 3] {
    let mut factors = Vec::new();
    let mut n = p.max(1);
    let mut f = 2;
    while n > 1 {
        while n % f == 0 {
            factors.push(f);
            n /= f;
        }
        f += 1;
    }
    factors.sort_unstable_by(|a, b| b.cmp(a));
    let mut dims = [1usize; 3];
    for f in factors {
        let k = (0..3).min_by_key(|&k| dims[k]).expect("three axes");
        dims[k] *= f;
    }
    dims.sort_unstable_by(|a, b| b.cmp(a));
    dims
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub p: usize,
    pub atoms: usize,
    pub ms_per_step: f64,
    /// Atom-steps per second.
    pub speed: f64,
    pub efficiency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
}

impl ScalingReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = std::io::BufWriter::new(out);
        writeln!(w, "P,atoms,ms_per_step,speed,efficiency")?;
        for r in &self.rows {
            writeln!(w, "{},{},{:.6},{:.6e},{:.6}", r.p, r.atoms, r.ms_per_step, r.speed, r.efficiency)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub atoms_per_domain: usize,
    pub workers: Vec<usize>,
    pub steps: usize,
    pub density: f64,
    pub temperature: f64,
    pub dt: f64,
    pub skin: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { atoms_per_domain: 512, workers: vec![1, 2, 4, 8], steps: 50, density: 0.8, temperature: 0.7, dt: 0.002, skin: 0.05, seed: 0 }
    }
}

/// Weak scaling: `atoms_per_domain * P` atoms on `P` workers, timed over NVE steps.
pub fn weak_scaling_bench<P: Potential + Clone>(potential: &P, config: &BenchConfig) -> Result<ScalingReport> {
    if config.steps == 0 || config.workers.is_empty() {
        return Err(Error::Invalid("bench needs at least one step and one worker count".into()));
    }
    let mut rows: Vec<ScalingRow> = Vec::with_capacity(config.workers.len());
    let mut base_speed = None;
    for &p in &config.workers {
        let atoms = config.atoms_per_domain * p;
        let mut rng = ChaCha8Rng::seed_from_u64(crate::seeds::derive(config.seed, "bench"));
        let mut state = SystemState::lattice(atoms, config.density, config.temperature, &mut rng)?;
        let mut integ = Integrator::new(ParallelForces::new(potential.clone(), dims_for(p), config.skin));
        integ.current(&state)?;
        let clock = Instant::now();
        for _ in 0..config.steps {
            integ.step_nve(&mut state, config.dt)?;
        }
        let seconds = clock.elapsed().as_secs_f64().max(1e-12);
        let speed = (atoms * config.steps) as f64 / seconds;
        let base = *base_speed.get_or_insert(speed / p as f64);
        rows.push(ScalingRow {
            p,
            atoms,
            ms_per_step: 1e3 * seconds / config.steps as f64,
            speed,
            efficiency: if rows.is_empty() { 1.0 } else { speed / (p as f64 * base) },
        });
    }
    Ok(ScalingReport { rows })
}
