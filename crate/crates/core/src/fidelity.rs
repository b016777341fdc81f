//! Time-to-failure runs, force-outlier monitoring and the size-scaling fit.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnff::ForceField;
use crate::oracle::{equilibrated_liquid, SimConfig, TrainExample};
use crate::seeds;
use crate::simcore::{minimum_image, vec3, ForceEval, Integrator, NeighborForces, Potential, SystemState, Vec3};
use crate::train::{train, ModelSpec, OptimizerChoice, TrainConfig};

/// Which force magnitude the outlier rule looks at.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForceStatistic {
    /// Per-atom norm `|f_i|`.
    #[default]
    Norm,
    /// Individual Cartesian components; an atom counts if any component is an outlier.
    Component,
}

/// Where the outlier baseline comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselinePopulation {
    #[default]
    Training,
    /// Forces seen by the model during its own thermalization phase.
    EarlyTrajectory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForceBaseline {
    pub mean: f64,
    pub sigma: f64,
    pub statistic: ForceStatistic,
    pub source: String,
}

impl ForceBaseline {
    /// Mean and population standard deviation of the chosen statistic over all atoms of all frames.
    pub fn from_forces<'a, I>(frames: I, statistic: ForceStatistic, source: &str) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [Vec3]>,
    {
        let mut values = Vec::new();
        for frame in frames {
            for f in frame {
                match statistic {
                    ForceStatistic::Norm => values.push(vec3::norm(*f)),
                    ForceStatistic::Component => values.extend_from_slice(f),
                }
            }
        }
        if values.is_empty() {
            return Err(Error::Invalid("force baseline needs at least one atom".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sigma = var.sqrt();
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Invalid(format!("force baseline has degenerate spread (sigma = {sigma})")));
        }
        Ok(Self { mean, sigma, statistic, source: source.into() })
    }

    pub fn threshold(&self, k: f64) -> f64 {
        self.mean + k * self.sigma
    }
}

/// Force-norm baseline over a training set.
pub fn compute_force_baseline(examples: &[TrainExample]) -> Result<ForceBaseline> {
    ForceBaseline::from_forces(examples.iter().map(|e| e.forces.as_slice()), ForceStatistic::Norm, "training_set")
}

/// Atoms whose force exceeds the baseline by more than `k` standard deviations.
pub fn count_outliers(forces: &[Vec3], baseline: &ForceBaseline, k: f64) -> usize {
    match baseline.statistic {
        ForceStatistic::Norm => {
            let limit = baseline.threshold(k);
            forces.iter().filter(|f| vec3::norm(**f) > limit).count()
        }
        ForceStatistic::Component => {
            let limit = k * baseline.sigma;
            forces.iter().filter(|f| f.iter().any(|c| (c - baseline.mean).abs() > limit)).count()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TtfProtocol {
    pub n_atoms: usize,
    pub temperature: f64,
    /// Step, density, neighbor skin, thermostat and the oracle used for the pre-melt.
    pub sim: SimConfig,
    /// Oracle NVT steps that melt the lattice before the model takes over.
    pub equilibration_steps: usize,
    /// Model NVT steps before switching to NVE.
    pub nvt_steps: usize,
    /// Total step cap, thermalization included.
    pub max_steps: usize,
    pub energy_drift_tol: f64,
    pub check_interval: usize,
    /// Multiplier on half the skin for the per-step displacement limit.
    pub displacement_safety: f64,
    pub outlier_sigma: f64,
    pub outlier_interval: usize,
    pub baseline_population: BaselinePopulation,
    pub baseline_statistic: ForceStatistic,
    pub seeds: Vec<u64>,
}

impl Default for TtfProtocol {
    fn default() -> Self {
        Self {
            n_atoms: 64,
            temperature: 0.7,
            sim: SimConfig::default(),
            equilibration_steps: 2000,
            nvt_steps: 1000,
            max_steps: 1_000_000,
            energy_drift_tol: 0.1,
            check_interval: 100,
            displacement_safety: 1.0,
            outlier_sigma: 5.0,
            outlier_interval: 10,
            baseline_population: BaselinePopulation::Training,
            baseline_statistic: ForceStatistic::Norm,
            seeds: (0..10).collect(),
        }
    }
}

impl TtfProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.n_atoms == 0 {
            return Err(Error::Invalid("n_atoms must be positive".into()));
        }
        if self.max_steps <= self.nvt_steps {
            return Err(Error::Invalid(format!(
                "max_steps ({}) must exceed nvt_steps ({})",
                self.max_steps, self.nvt_steps
            )));
        }
        if self.check_interval == 0 || self.outlier_interval == 0 {
            return Err(Error::Invalid("check and outlier intervals must be positive".into()));
        }
        if !(self.energy_drift_tol > 0.0 && self.displacement_safety > 0.0 && self.outlier_sigma > 0.0) {
            return Err(Error::Invalid("tolerances must be positive".into()));
        }
        if !(self.temperature > 0.0 && self.sim.dt > 0.0 && self.sim.skin > 0.0) {
            return Err(Error::Invalid("temperature, dt and skin must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Invalid("at least one seed is required".into()));
        }
        Ok(())
    }

    pub fn nve_budget(&self) -> usize {
        self.max_steps - self.nvt_steps
    }

    pub fn displacement_limit(&self) -> f64 {
        0.5 * self.sim.skin * self.displacement_safety
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    NonFinite,
    DisplacementBlowup,
    EnergyDrift,
    Censored,
}

impl FailureReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            FailureReason::NonFinite => "non_finite",
            FailureReason::DisplacementBlowup => "displacement_blowup",
            FailureReason::EnergyDrift => "energy_drift",
            FailureReason::Censored => "censored",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtfRecord {
    pub n_atoms: usize,
    pub seed: u64,
    /// NVE steps completed before the failing one.
    pub steps_survived: usize,
    pub failure_reason: FailureReason,
    pub initial_energy: f64,
    /// `(nve_step, outlier_count)` samples.
    pub outlier_series: Vec<(usize, usize)>,
}

impl TtfRecord {
    pub fn censored(&self) -> bool {
        self.failure_reason == FailureReason::Censored
    }

    /// Whether the outlier count at the end of life is at least its value at the start,
    /// comparing means over the first and last tenth of the samples. `None` without samples.
    pub fn outliers_rise(&self) -> Option<bool> {
        let s = &self.outlier_series;
        if s.is_empty() {
            return None;
        }
        let k = (s.len() / 10).max(1);
        let mean = |xs: &[(usize, usize)]| xs.iter().map(|x| x.1 as f64).sum::<f64>() / xs.len() as f64;
        Some(mean(&s[s.len() - k..]) >= mean(&s[..k]))
    }
}

/// Classifies one NVE step. `nve_step` counts completed NVE steps; the energy test only runs
/// when it is a multiple of the check interval.
pub fn detect_failure(
    previous_positions: &[Vec3],
    state: &SystemState,
    eval: &ForceEval,
    initial_energy: f64,
    nve_step: usize,
    protocol: &TtfProtocol,
) -> Option<FailureReason> {
    if !state.is_finite() || !eval.is_finite() {
        return Some(FailureReason::NonFinite);
    }
    let limit = protocol.displacement_limit();
    let moved_too_far = previous_positions
        .iter()
        .zip(&state.positions)
        .any(|(a, b)| vec3::norm(minimum_image(vec3::sub(*b, *a), state.box_length)) > limit);
    if moved_too_far {
        return Some(FailureReason::DisplacementBlowup);
    }
    if nve_step % protocol.check_interval == 0 {
        let energy = state.kinetic_energy() + eval.energy;
        let scale = initial_energy.abs().max(f64::MIN_POSITIVE);
        if (energy - initial_energy).abs() / scale > protocol.energy_drift_tol {
            return Some(FailureReason::EnergyDrift);
        }
    }
    None
}

/// Thermalizes with `potential` and runs NVE until failure or the step cap.
///
/// `training_baseline` is required when the protocol takes its baseline from the training set.
pub fn run_ttf<P: Potential>(
    potential: P,
    training_baseline: Option<&ForceBaseline>,
    protocol: &TtfProtocol,
    seed: u64,
) -> Result<TtfRecord> {
    protocol.validate()?;
    let n = protocol.n_atoms;
    let dt = protocol.sim.dt;
    let mut state = equilibrated_liquid(
        n,
        protocol.temperature,
        &protocol.sim,
        protocol.equilibration_steps,
        seeds::derive(seed, "ttf"),
    )?;
    let mut integ = Integrator::new(NeighborForces::new(potential, protocol.sim.skin));
    let mut thermostat = protocol.sim.thermostat(n, protocol.temperature)?;
    let mut early = Vec::new();
    let record = |steps, reason, e0, series| TtfRecord {
        n_atoms: n,
        seed,
        steps_survived: steps,
        failure_reason: reason,
        initial_energy: e0,
        outlier_series: series,
    };
    for step in 0..protocol.nvt_steps {
        if let Err(e) = integ.step_nvt(&mut state, dt, &mut thermostat) {
            return match e {
                Error::Numerical(_) => Ok(record(0, FailureReason::NonFinite, f64::NAN, Vec::new())),
                other => Err(other.context(format!("thermalization step {step}"))),
            };
        }
        if protocol.baseline_population == BaselinePopulation::EarlyTrajectory && step % protocol.outlier_interval == 0 {
            early.push(integ.current(&state)?.forces.clone());
        }
    }
    let baseline = match protocol.baseline_population {
        BaselinePopulation::Training => training_baseline
            .cloned()
            .ok_or_else(|| Error::Invalid("protocol needs a training-set force baseline".into()))?,
        BaselinePopulation::EarlyTrajectory => {
            ForceBaseline::from_forces(early.iter().map(|f| f.as_slice()), protocol.baseline_statistic, "early_trajectory")?
        }
    };
    let eval = integ.current(&state)?;
    let e0 = state.kinetic_energy() + eval.energy;
    let mut series = vec![(0, count_outliers(&eval.forces, &baseline, protocol.outlier_sigma))];
    let mut previous = state.positions.clone();
    for k in 1..=protocol.nve_budget() {
        previous.copy_from_slice(&state.positions);
        match integ.step_nve(&mut state, dt) {
            Ok(()) => {}
            Err(Error::Numerical(_)) => return Ok(record(k - 1, FailureReason::NonFinite, e0, series)),
            Err(e) => return Err(e.context(format!("NVE step {k}"))),
        }
        let eval = integ.current(&state)?;
        if let Some(reason) = detect_failure(&previous, &state, eval, e0, k, protocol) {
            return Ok(record(k - 1, reason, e0, series));
        }
        if k % protocol.outlier_interval == 0 {
            series.push((k, count_outliers(&eval.forces, &baseline, protocol.outlier_sigma)));
        }
    }
    Ok(record(protocol.nve_budget(), FailureReason::Censored, e0, series))
}

/// Runs every `(size, seed)` pair on up to `workers` threads; records come back sorted by size
/// then seed whatever the schedule.
pub fn run_ttf_grid<P: Potential>(
    potential: &P,
    training_baseline: Option<&ForceBaseline>,
    protocol: &TtfProtocol,
    sizes: &[usize],
    workers: usize,
) -> Result<Vec<TtfRecord>> {
    let jobs: Vec<(usize, u64)> = sizes.iter().flat_map(|&n| protocol.seeds.iter().map(move |&s| (n, s))).collect();
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(jobs.len()));
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(n, seed)) = jobs.get(i) else { break };
                let p = TtfProtocol { n_atoms: n, ..protocol.clone() };
                let out = run_ttf(potential, training_baseline, &p, seed)
                    .map_err(|e| e.context(format!("N = {n}, seed {seed}")));
                results.lock().expect("collector lock").push((i, out));
            });
        }
    });
    let mut results = results.into_inner().expect("collector lock");
    results.sort_by_key(|r| r.0);
    results.into_iter().map(|r| r.1).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub alpha: f64,
    pub beta: f64,
    /// Standard error of `beta`; absent with only two sizes.
    pub beta_stderr: Option<f64>,
    pub n_points: usize,
    pub r_squared: f64,
    pub censored_count: usize,
}

/// Least squares of `ln t` against `ln N` for `(N, t)` points; `t = alpha N^-beta`.
pub fn fit_power_law_points(points: &[(f64, f64)]) -> Result<FitResult> {
    if points.iter().any(|&(n, t)| !(n > 0.0 && t > 0.0 && n.is_finite() && t.is_finite())) {
        return Err(Error::Fit("sizes and failure times must be positive".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let m = xs.len();
    let mx = xs.iter().sum::<f64>() / m.max(1) as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if m < 2 || sxx <= 0.0 {
        return Err(Error::Fit(format!("need at least two distinct sizes, got {m} points")));
    }
    let my = ys.iter().sum::<f64>() / m as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let beta_stderr = (m > 2).then(|| (sse / (m - 2) as f64 / sxx).sqrt());
    Ok(FitResult { alpha: intercept.exp(), beta: -slope, beta_stderr, n_points: m, r_squared, censored_count: 0 })
}

/// One lifetime observation: size, NVE steps survived, whether the run hit the cap.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lifetime {
    pub n_atoms: usize,
    pub steps: f64,
    pub censored: bool,
}

impl From<&TtfRecord> for Lifetime {
    fn from(r: &TtfRecord) -> Self {
        Self { n_atoms: r.n_atoms, steps: r.steps_survived as f64, censored: r.censored() }
    }
}

/// Fits mean uncensored NVE lifetimes per size; censored runs are left out and counted.
pub fn fit_lifetimes(samples: &[Lifetime]) -> Result<FitResult> {
    let censored = samples.iter().filter(|r| r.censored).count();
    let mut sizes: Vec<usize> = samples.iter().filter(|r| !r.censored).map(|r| r.n_atoms).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let mut points = Vec::new();
    for n in sizes {
        let t: Vec<f64> = samples.iter().filter(|r| r.n_atoms == n && !r.censored).map(|r| r.steps).collect();
        let mean = t.iter().sum::<f64>() / t.len() as f64;
        if mean <= 0.0 {
            return Err(Error::Fit(format!("mean lifetime at N = {n} is zero; a power law cannot be fitted")));
        }
        points.push((n as f64, mean));
    }
    if points.len() < 2 {
        return Err(Error::Fit(format!(
            "need uncensored runs at two or more sizes, have {} ({} censored runs)",
            points.len(),
            censored
        )));
    }
    let mut fit = fit_power_law_points(&points)?;
    fit.censored_count = censored;
    Ok(fit)
}

pub fn fit_power_law(records: &[TtfRecord]) -> Result<FitResult> {
    let samples: Vec<Lifetime> = records.iter().map(Lifetime::from).collect();
    fit_lifetimes(&samples)
}

/// Mean NVE lifetime per size over all runs, censored runs counted at their cap.
pub fn mean_lifetimes(records: &[TtfRecord]) -> Vec<(usize, f64)> {
    let mut sizes: Vec<usize> = records.iter().map(|r| r.n_atoms).collect();
    sizes.sort_unstable();
    sizes.dedup();
    sizes
        .into_iter()
        .map(|n| {
            let t: Vec<f64> = records.iter().filter(|r| r.n_atoms == n).map(|r| r.steps_survived as f64).collect();
            (n, t.iter().sum::<f64>() / t.len() as f64)
        })
        .collect()
}

pub const DEFAULT_RHO_GRID: [f64; 7] = [0.0, 0.001, 0.0025, 0.005, 0.01, 0.025, 0.05];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rho: f64,
    /// Mean NVE lifetime, censored runs counted at the cap. `None` if the cell failed.
    pub mean_t_failure: Option<f64>,
    pub n_runs: usize,
    pub n_censored: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub best_rho: Option<f64>,
}

/// Trains one model per `rho` on the same data and seed, then measures lifetimes at
/// `protocol.n_atoms` for every protocol seed. A failing cell is reported and skipped.
#[allow(clippy::too_many_arguments)]
pub fn rho_sweep(
    train_set: &[TrainExample],
    val_set: &[TrainExample],
    spec: &ModelSpec,
    config: &TrainConfig,
    grid: &[f64],
    protocol: &TtfProtocol,
    seed: u64,
    workers: usize,
) -> Result<SweepReport> {
    if grid.is_empty() {
        return Err(Error::Invalid("rho grid is empty".into()));
    }
    let baseline = compute_force_baseline(train_set)?;
    let mut rows = Vec::with_capacity(grid.len());
    for &rho in grid {
        let optimizer = if rho == 0.0 { OptimizerChoice::Adam } else { OptimizerChoice::Sam { rho } };
        let cell = train(train_set, val_set, spec, optimizer, config, seed).and_then(|fit| {
            run_ttf_grid::<ForceField>(&fit.model, Some(&baseline), protocol, &[protocol.n_atoms], workers)
        });
        rows.push(match cell {
            Ok(records) => SweepRow {
                rho,
                mean_t_failure: mean_lifetimes(&records).first().map(|m| m.1),
                n_runs: records.len(),
                n_censored: records.iter().filter(|r| r.censored()).count(),
                error: None,
            },
            Err(e) => SweepRow { rho, mean_t_failure: None, n_runs: 0, n_censored: 0, error: Some(e.to_string()) },
        });
    }
    let best_rho = rows
        .iter()
        .filter_map(|r| r.mean_t_failure.map(|t| (r.rho, t)))
        .fold(None, |best: Option<(f64, f64)>, (rho, t)| match best {
            Some((_, bt)) if bt >= t => best,
            _ => Some((rho, t)),
        })
        .map(|b| b.0);
    Ok(SweepReport { rows, best_rho })
}

/// TTF table: one row per run.
pub fn write_ttf_csv<W: Write>(out: W, model_id: &str, rho: f64, records: &[TtfRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(out);
    writeln!(w, "model_id,rho,n_atoms,seed,steps_survived,failure_reason")?;
    for r in records {
        writeln!(w, "{model_id},{rho},{},{},{},{}", r.n_atoms, r.seed, r.steps_survived, r.failure_reason.as_str())?;
    }
    w.flush()?;
    Ok(())
}

/// Outlier series side-car: one JSON object per run.
pub fn write_outliers_jsonl<W: Write>(out: W, records: &[TtfRecord]) -> Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        n_atoms: usize,
        seed: u64,
        series: &'a [(usize, usize)],
    }
    let mut w = std::io::BufWriter::new(out);
    for r in records {
        serde_json::to_writer(&mut w, &Line { n_atoms: r.n_atoms, seed: r.seed, series: &r.outlier_series })?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
