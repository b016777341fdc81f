//! One function per subcommand. Flags are folded into the config first so that the snapshot in
//! the run directory reproduces the run.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use serde::Deserialize;
use serde_json::json;
use ttflab_core::fidelity::{self, BaselinePopulation, FailureReason, ForceBaseline, Lifetime, TtfRecord};
use ttflab_core::nnff::{Checkpoint, ForceField, LossCoefficients, Objective};
use ttflab_core::oracle::{equilibrated_liquid, Dataset, LennardJones, TrainExample};
use ttflab_core::pardomain::weak_scaling_bench;
use ttflab_core::probes::{loss_scan, measure_sharpness, uniform_grid};
use ttflab_core::simcore::{xyz, Integrator, NeighborForces, Potential, SystemState};
use ttflab_core::{seeds, train, Error};

use crate::config::{ExperimentConfig, LossSet};
use crate::manifest::Run;
use crate::{
    BenchArgs, Command, Ensemble, FitArgs, GenDataArgs, LossScanArgs, SharpnessArgs, SimulateArgs, SweepArgs, TrainArgs,
    TtfArgs,
};

pub struct Context {
    pub config: ExperimentConfig,
    pub out: Option<PathBuf>,
    pub command: &'static str,
}

impl Context {
    fn start(&self) -> Result<Run> {
        Run::create(self.command, self.out.as_deref(), self.config.paths.runs_dir.as_deref(), self.config.seed)
    }

    /// Writes the effective config and the manifest, then prints a one-line JSON summary.
    fn finish(&self, mut run: Run, summary: serde_json::Value) -> Result<()> {
        let mut w = run.create_file("config.toml")?;
        w.write_all(self.config.to_toml()?.as_bytes())?;
        w.flush()?;
        drop(w);
        let dir = run.dir.clone();
        run.finish(&self.config, summary.clone())?;
        let line = json!({ "status": "ok", "command": self.command, "out": dir, "summary": summary });
        println!("{line}");
        Ok(())
    }
}

pub fn dispatch(ctx: Context, command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(ctx, a),
        Command::Train(a) => train_cmd(ctx, a),
        Command::Simulate(a) => simulate(ctx, a),
        Command::Ttf(a) => ttf(ctx, a),
        Command::RhoSweep(a) => rho_sweep(ctx, a),
        Command::Sharpness(a) => sharpness(ctx, a),
        Command::LossScan(a) => loss_scan_cmd(ctx, a),
        Command::Fit(a) => fit(ctx, a),
        Command::BenchParallel(a) => bench(ctx, a),
        Command::ShowConfig => {
            print!("{}", ctx.config.to_toml()?);
            Ok(())
        }
    }
}

/// Picks the flag, else the config entry, checks it exists and stores the absolute path back.
fn resolve_input(flag: Option<PathBuf>, slot: &mut Option<PathBuf>, what: &str, flag_name: &str) -> Result<PathBuf> {
    let path = flag
        .or_else(|| slot.clone())
        .with_context(|| format!("no {what} given; pass {flag_name} or set it under [paths]"))?;
    if !path.is_file() {
        bail!("{what} {} does not exist", path.display());
    }
    let abs = std::path::absolute(&path)?;
    *slot = Some(abs.clone());
    Ok(abs)
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn gen_data(mut ctx: Context, a: GenDataArgs) -> Result<()> {
    let c = &mut ctx.config;
    if let Some(n) = a.n_train {
        c.dataset.n_train = n;
    }
    if let Some(n) = a.n_val {
        c.dataset.n_val = n;
    }
    if let Some(n) = a.n_atoms {
        c.system.n_atoms = n;
    }
    let sim = ctx.config.sim()?;
    let spec = ctx.config.dataset_spec();
    let mut run = ctx.start()?;
    run.seed("data", spec.seed);
    run.phase("generate");
    let ds = Dataset::generate(&spec, &sim)?;
    run.phase("write");
    let mut w = run.create_file("dataset.jsonl")?;
    ds.write_jsonl(&mut w)?;
    w.flush()?;
    drop(w);
    let summary = json!({ "n_train": ds.train.len(), "n_val": ds.val.len(), "n_atoms": spec.n_atoms });
    ctx.finish(run, summary)
}

fn train_cmd(mut ctx: Context, a: TrainArgs) -> Result<()> {
    let c = &mut ctx.config;
    let data_path = resolve_input(a.dataset, &mut c.paths.dataset, "dataset", "--dataset")?;
    if let Some(o) = a.optimizer {
        c.train.optimizer = o;
    }
    if let Some(r) = a.rho {
        c.train.rho = r;
    }
    if let Some(e) = a.epochs {
        c.train.max_epochs = e;
    }
    if let Some(lr) = a.lr {
        c.train.lr = lr;
    }
    let optimizer = ctx.config.optimizer()?;
    let tc = ctx.config.train_config()?;
    let spec = ctx.config.model_spec()?;
    let seed = ctx.config.seed;
    let mut run = ctx.start()?;
    run.input(&data_path);
    run.seed("init", seeds::derive(seed, "init"));
    run.seed("shuffle", seeds::derive(seed, "shuffle"));
    run.phase("load");
    let ds = load_dataset(&data_path)?;
    run.phase("train");
    let fit = train::train(&ds.train, &ds.val, &spec, optimizer, &tc, seed)?;
    run.phase("write");
    Checkpoint::from_model(&fit.model, Some(fit.metadata.clone())).save(&run.path("model.json"))?;
    run.record_output("model.json");
    fit.report.write_csv(run.create_file("train_log.csv")?)?;
    let r = &fit.report;
    let summary = json!({
        "optimizer": optimizer.name(),
        "rho": optimizer.rho(),
        "epochs_run": r.epochs_run,
        "best_epoch": r.best_epoch,
        "best_val_loss": r.best_val_loss,
        "final_train_loss": r.final_train_loss(),
        "stop_reason": format!("{:?}", r.stop_reason),
    });
    ctx.finish(run, summary)
}

fn simulate(mut ctx: Context, a: SimulateArgs) -> Result<()> {
    if a.every == 0 {
        bail!("--every must be at least 1");
    }
    let model_path = match a.model {
        Some(p) => Some(resolve_input(Some(p), &mut ctx.config.paths.model, "model", "--model")?),
        None => None,
    };
    if let Some(n) = a.n_atoms {
        ctx.config.system.n_atoms = n;
    }
    let c = &ctx.config;
    let sim = c.sim()?;
    let n = c.system.n_atoms;
    let start_seed = seeds::derive(c.seed, "simulate");
    let mut run = ctx.start()?;
    run.seed("simulate", start_seed);
    run.phase("equilibrate");
    let state = equilibrated_liquid(n, c.system.temperature, &sim, c.ttf.equilibration_steps, start_seed)?;
    run.phase("simulate");
    let thermostat = match a.ensemble {
        Ensemble::Nvt => Some(sim.thermostat(n, c.system.temperature)?),
        Ensemble::Nve => None,
    };
    let mut xyz_out = run.create_file("trajectory.xyz")?;
    let mut thermo = run.create_file("thermo.csv")?;
    let md = MdRun { state, thermostat, dt: sim.dt, steps: a.steps, every: a.every };
    let outcome = match &model_path {
        Some(p) => {
            run.input(p);
            let model = load_checkpoint(p)?.model()?;
            md.run(NeighborForces::new(model, sim.skin), &mut xyz_out, &mut thermo)?
        }
        None => md.run(NeighborForces::new(LennardJones(sim.lj), sim.skin), &mut xyz_out, &mut thermo)?,
    };
    xyz_out.flush()?;
    thermo.flush()?;
    drop((xyz_out, thermo));
    let summary = json!({
        "potential": if model_path.is_some() { "model" } else { "oracle" },
        "ensemble": format!("{:?}", a.ensemble).to_lowercase(),
        "steps_completed": outcome.0,
        "stopped_early": outcome.1,
    });
    ctx.finish(run, summary)
}

struct MdRun {
    state: SystemState,
    thermostat: Option<ttflab_core::simcore::Thermostat>,
    dt: f64,
    steps: usize,
    every: usize,
}

impl MdRun {
    /// Returns the steps completed and, if the run broke down, why.
    fn run<P: Potential>(
        mut self,
        provider: NeighborForces<P>,
        traj: &mut impl Write,
        thermo: &mut impl Write,
    ) -> Result<(usize, Option<String>)> {
        let mut integ = Integrator::new(provider);
        writeln!(thermo, "step,temperature,potential_energy,kinetic_energy,total_energy")?;
        for k in 0..=self.steps {
            if k > 0 {
                let stepped = match &mut self.thermostat {
                    Some(th) => integ.step_nvt(&mut self.state, self.dt, th),
                    None => integ.step_nve(&mut self.state, self.dt),
                };
                match stepped {
                    Ok(()) => {}
                    Err(Error::Numerical(m)) => return Ok((k - 1, Some(m))),
                    Err(e) => return Err(e.into()),
                }
            }
            if k % self.every == 0 || k == self.steps {
                let u = integ.current(&self.state)?.energy;
                let kin = self.state.kinetic_energy();
                writeln!(
                    thermo,
                    "{k},{:.10e},{u:.10e},{kin:.10e},{:.10e}",
                    self.state.instantaneous_temperature(),
                    u + kin
                )?;
                xyz::write_frame(traj, &self.state, u)?;
            }
        }
        Ok((self.steps, None))
    }
}

fn training_baseline(c: &ExperimentConfig, train: &[TrainExample]) -> Result<ForceBaseline> {
    Ok(ForceBaseline::from_forces(train.iter().map(|e| e.forces.as_slice()), c.ttf.baseline_statistic, "training")?)
}

fn ttf(mut ctx: Context, a: TtfArgs) -> Result<()> {
    let c = &mut ctx.config;
    let model_path = if a.oracle { None } else { Some(resolve_input(a.model, &mut c.paths.model, "model", "--model")?) };
    let data_path = match c.ttf.baseline_population {
        BaselinePopulation::Training => Some(resolve_input(a.dataset, &mut c.paths.dataset, "dataset", "--dataset")?),
        BaselinePopulation::EarlyTrajectory => None,
    };
    if let Some(s) = a.sizes {
        c.ttf.sizes = s;
    }
    if let Some(s) = a.seeds {
        c.ttf.seeds = s;
    }
    if let Some(m) = a.max_steps {
        c.ttf.max_steps = m;
    }
    if let Some(w) = a.workers {
        c.ttf.workers = w;
    }
    if c.ttf.sizes.is_empty() {
        bail!("ttf.sizes is empty");
    }
    let protocol = ctx.config.ttf_protocol(ctx.config.ttf.sizes[0])?;
    let workers = ctx.config.ttf_workers();
    let mut run = ctx.start()?;
    for s in &protocol.seeds {
        run.seed(&format!("ttf/{s}"), seeds::derive(*s, "ttf"));
    }
    run.phase("load");
    let baseline = match &data_path {
        Some(p) => {
            run.input(p);
            Some(training_baseline(&ctx.config, &load_dataset(p)?.train)?)
        }
        None => None,
    };
    let sizes = ctx.config.ttf.sizes.clone();
    run.phase("runs");
    let (model_id, rho, records) = match &model_path {
        Some(p) => {
            run.input(p);
            let ckpt = load_checkpoint(p)?;
            let rho = ckpt.metadata.as_ref().map_or(0.0, |m| m.rho);
            let model = ckpt.model()?;
            let id = p.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
            (id, rho, fidelity::run_ttf_grid::<ForceField>(&model, baseline.as_ref(), &protocol, &sizes, workers)?)
        }
        None => {
            let lj = LennardJones(protocol.sim.lj);
            ("oracle".to_owned(), 0.0, fidelity::run_ttf_grid(&lj, baseline.as_ref(), &protocol, &sizes, workers)?)
        }
    };
    run.phase("write");
    fidelity::write_ttf_csv(run.create_file("ttf.csv")?, &model_id, rho, &records)?;
    fidelity::write_outliers_jsonl(run.create_file("outliers.jsonl")?, &records)?;
    let fit = fidelity::fit_power_law(&records);
    if let Ok(f) = &fit {
        run.write_json("fit.json", f)?;
    }
    let summary = json!({
        "model_id": model_id,
        "runs": records.len(),
        "censored": records.iter().filter(|r| r.censored()).count(),
        "mean_lifetimes": fidelity::mean_lifetimes(&records),
        "fit": fit.as_ref().ok(),
        "fit_error": fit.as_ref().err().map(ToString::to_string),
        "failures": failure_counts(&records),
    });
    ctx.finish(run, summary)
}

fn failure_counts(records: &[TtfRecord]) -> serde_json::Value {
    let mut counts = serde_json::Map::new();
    for reason in [FailureReason::NonFinite, FailureReason::DisplacementBlowup, FailureReason::EnergyDrift, FailureReason::Censored] {
        let n = records.iter().filter(|r| r.failure_reason == reason).count();
        counts.insert(reason.as_str().into(), n.into());
    }
    counts.into()
}

fn rho_sweep(mut ctx: Context, a: SweepArgs) -> Result<()> {
    let c = &mut ctx.config;
    let data_path = resolve_input(a.dataset, &mut c.paths.dataset, "dataset", "--dataset")?;
    if let Some(g) = a.grid {
        c.sweep.grid = g;
    }
    if let Some(n) = a.n_atoms {
        c.sweep.n_atoms = n;
    }
    if let Some(s) = a.seeds {
        c.ttf.seeds = s;
    }
    if let Some(m) = a.max_steps {
        c.ttf.max_steps = m;
    }
    if let Some(e) = a.epochs {
        c.train.max_epochs = e;
    }
    if let Some(w) = a.workers {
        c.ttf.workers = w;
    }
    let protocol = ctx.config.ttf_protocol(ctx.config.sweep.n_atoms)?;
    let tc = ctx.config.train_config()?;
    let spec = ctx.config.model_spec()?;
    let workers = ctx.config.ttf_workers();
    let seed = ctx.config.seed;
    let mut run = ctx.start()?;
    run.input(&data_path);
    run.seed("init", seeds::derive(seed, "init"));
    run.seed("shuffle", seeds::derive(seed, "shuffle"));
    run.phase("load");
    let ds = load_dataset(&data_path)?;
    run.phase("sweep");
    let report = fidelity::rho_sweep(&ds.train, &ds.val, &spec, &tc, &ctx.config.sweep.grid, &protocol, seed, workers)?;
    run.phase("write");
    let mut w = run.create_file("sweep.csv")?;
    writeln!(w, "rho,mean_t_failure,n_runs,n_censored,error")?;
    for r in &report.rows {
        let mean = r.mean_t_failure.map_or(String::new(), |t| t.to_string());
        let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        writeln!(w, "{},{mean},{},{},{err}", r.rho, r.n_runs, r.n_censored)?;
    }
    w.flush()?;
    drop(w);
    run.write_json("sweep.json", &report)?;
    let summary = json!({ "best_rho": report.best_rho, "rows": report.rows.len() });
    ctx.finish(run, summary)
}

/// Model, the chosen example set and the loss weights the model was trained with.
fn probe_objective(c: &ExperimentConfig, model_path: &Path, data_path: &Path, set: LossSet) -> Result<(Objective, Vec<f64>)> {
    let ckpt = load_checkpoint(model_path)?;
    let coefficients = ckpt.metadata.as_ref().map_or(
        LossCoefficients { energy: c.train.energy_weight, force: c.train.force_weight },
        |m| m.loss_coefficients,
    );
    let model = ckpt.model()?;
    let ds = load_dataset(data_path)?;
    let examples = match set {
        LossSet::Train => &ds.train,
        LossSet::Val => &ds.val,
    };
    let w = model.params.0.clone();
    Ok((Objective::new(&model, examples, coefficients)?, w))
}

fn sharpness(mut ctx: Context, a: SharpnessArgs) -> Result<()> {
    let c = &mut ctx.config;
    let model_path = resolve_input(a.model, &mut c.paths.model, "model", "--model")?;
    let data_path = resolve_input(a.dataset, &mut c.paths.dataset, "dataset", "--dataset")?;
    if let Some(r) = a.rho {
        c.probe.rho = r;
    }
    if let Some(s) = a.samples {
        c.probe.samples = s;
    }
    if let Some(s) = a.loss_set {
        c.probe.loss_set = s;
    }
    let seed = ctx.config.seed;
    let p = ctx.config.probe.clone();
    let mut run = ctx.start()?;
    run.input(&model_path);
    run.input(&data_path);
    run.seed("sharpness", seeds::derive(seed, "sharpness"));
    run.phase("load");
    let (obj, w) = probe_objective(&ctx.config, &model_path, &data_path, p.loss_set)?;
    run.phase("probe");
    let base = obj.loss(&w)?.total;
    let est = measure_sharpness(|x| Ok(obj.loss(x)?.total), &w, p.rho, p.samples, seed)?;
    let out = json!({ "model": model_path, "loss_set": p.loss_set, "base_loss": base, "estimate": est });
    run.write_json("sharpness.json", &out)?;
    let summary = json!({ "sharpness": est.value, "rho": est.rho, "n_samples": est.n_samples, "base_loss": base });
    ctx.finish(run, summary)
}

fn loss_scan_cmd(mut ctx: Context, a: LossScanArgs) -> Result<()> {
    let c = &mut ctx.config;
    let model_path = resolve_input(a.model, &mut c.paths.model, "model", "--model")?;
    let data_path = resolve_input(a.dataset, &mut c.paths.dataset, "dataset", "--dataset")?;
    if let Some(n) = a.points {
        c.probe.scan_points = n;
    }
    if let Some(s) = a.scale {
        c.probe.scan_scale = s;
    }
    if let Some(s) = a.loss_set {
        c.probe.loss_set = s;
    }
    let seed = ctx.config.seed;
    let p = ctx.config.probe.clone();
    let mut run = ctx.start()?;
    run.input(&model_path);
    run.input(&data_path);
    run.seed("scan", seeds::derive(seed, "scan"));
    run.phase("load");
    let (obj, w) = probe_objective(&ctx.config, &model_path, &data_path, p.loss_set)?;
    run.phase("scan");
    let scan = loss_scan(|x| Ok(obj.loss(x)?.total), &w, &uniform_grid(p.scan_points), p.scan_scale, seed)?;
    let out = json!({
        "model": model_path,
        "loss_set": p.loss_set,
        "seed": seed,
        "scale": scan.scale,
        "points": scan.points(),
        "direction": scan.direction,
    });
    run.write_json("scan.json", &out)?;
    let lo = scan.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scan.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ctx.finish(run, json!({ "points": scan.grid.len(), "min_loss": lo, "max_loss": hi }))
}

#[derive(Deserialize)]
struct LifetimeRow {
    n_atoms: usize,
    steps_survived: f64,
    failure_reason: String,
}

pub fn read_lifetimes(path: &Path) -> Result<Vec<Lifetime>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (k, row) in reader.deserialize::<LifetimeRow>().enumerate() {
        let row = row.with_context(|| format!("{}: record {}", path.display(), k + 1))?;
        let censored = row.failure_reason == FailureReason::Censored.as_str();
        out.push(Lifetime { n_atoms: row.n_atoms, steps: row.steps_survived, censored });
    }
    Ok(out)
}

fn fit(ctx: Context, a: FitArgs) -> Result<()> {
    if !a.input.is_file() {
        bail!("input {} does not exist", a.input.display());
    }
    let mut run = ctx.start()?;
    run.input(&a.input);
    let samples = read_lifetimes(&a.input)?;
    let result = fidelity::fit_lifetimes(&samples)?;
    run.write_json("fit.json", &result)?;
    let summary = serde_json::to_value(&result)?;
    ctx.finish(run, summary)
}

fn bench(mut ctx: Context, a: BenchArgs) -> Result<()> {
    let model_path = match a.model {
        Some(p) => Some(resolve_input(Some(p), &mut ctx.config.paths.model, "model", "--model")?),
        None => None,
    };
    let c = &mut ctx.config;
    if let Some(w) = a.workers_list {
        c.bench.workers = w;
    }
    if let Some(n) = a.atoms_per_domain {
        c.bench.atoms_per_domain = n;
    }
    if let Some(s) = a.steps {
        c.bench.steps = s;
    }
    let bc = ctx.config.bench_config();
    let sim = ctx.config.sim()?;
    let mut run = ctx.start()?;
    run.seed("bench", bc.seed);
    run.phase("bench");
    let report = match &model_path {
        Some(p) => {
            run.input(p);
            weak_scaling_bench(&load_checkpoint(p)?.model()?, &bc)?
        }
        None => weak_scaling_bench(&LennardJones(sim.lj), &bc)?,
    };
    run.phase("write");
    report.write_csv(run.create_file("scaling.csv")?)?;
    ctx.finish(run, serde_json::to_value(&report)?)
}
