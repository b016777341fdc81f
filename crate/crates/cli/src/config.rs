//! Layered experiment configuration: built-in preset, then an optional file, then flags.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use ttflab_core::fidelity::{BaselinePopulation, ForceStatistic, TtfProtocol};
use ttflab_core::nnff::{DescriptorConfig, LossCoefficients};
use ttflab_core::oracle::{DatasetSpec, LjForm, LjParams, SimConfig};
use ttflab_core::pardomain::BenchConfig;
use ttflab_core::seeds;
use ttflab_core::train::{ModelSpec, OptimizerChoice, TrainConfig};

pub const PRESETS: [(&str, &str); 3] = [
    ("desk", include_str!("../presets/desk.toml")),
    ("fragile", include_str!("../presets/fragile.toml")),
    ("paper-analog", include_str!("../presets/paper-analog.toml")),
];

pub fn preset_text(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|p| p.0 == name)
        .map(|p| p.1)
        .ok_or_else(|| anyhow!("unknown preset `{name}`; available: desk, fragile, paper-analog"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Preset the file builds on; the command-line flag wins over this.
    pub preset: String,
    /// Root seed; every random stream is derived from it by name.
    pub seed: u64,
    pub system: SystemSection,
    pub oracle: OracleSection,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub ttf: TtfSection,
    pub probe: ProbeSection,
    pub sweep: SweepSection,
    pub bench: BenchSection,
    pub paths: PathsSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: "desk".into(),
            seed: 0,
            system: SystemSection::default(),
            oracle: OracleSection::default(),
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            ttf: TtfSection::default(),
            probe: ProbeSection::default(),
            sweep: SweepSection::default(),
            bench: BenchSection::default(),
            paths: PathsSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSection {
    pub n_atoms: usize,
    pub density: f64,
    pub temperature: f64,
    pub dt: f64,
    pub skin: f64,
    pub burn_in_steps: usize,
    pub thermostat_tau_steps: f64,
}

impl Default for SystemSection {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            n_atoms: 64,
            density: sim.density,
            temperature: 0.7,
            dt: sim.dt,
            skin: sim.skin,
            burn_in_steps: sim.burn_in_steps,
            thermostat_tau_steps: sim.thermostat_tau_steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub form: LjForm,
    pub epsilon: f64,
    pub sigma: f64,
    pub cutoff: f64,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self { form: LjForm::ForceShifted, epsilon: 1.0, sigma: 1.0, cutoff: 2.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub n_train: usize,
    pub n_val: usize,
    pub sample_interval: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let d = DatasetSpec::default();
        Self { n_train: d.n_train, n_val: d.n_val, sample_interval: d.sample_interval }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub n_basis: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub hidden: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { n_basis: 8, r_min: 0.8, r_max: 2.1, hidden: vec![16, 16] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub optimizer: OptimizerKind,
    pub rho: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub scheduler_patience: usize,
    pub scheduler_factor: f64,
    pub stop_window: usize,
    pub stop_delta: f64,
    pub energy_weight: f64,
    pub force_weight: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            optimizer: OptimizerKind::Adam,
            rho: 0.005,
            lr: t.lr,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            scheduler_patience: t.scheduler_patience,
            scheduler_factor: t.scheduler_factor,
            stop_window: t.stop_window,
            stop_delta: t.stop_delta,
            energy_weight: t.loss_coefficients.energy,
            force_weight: t.loss_coefficients.force,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TtfSection {
    pub sizes: Vec<usize>,
    /// Run seeds are `0..seeds`.
    pub seeds: u64,
    /// Concurrent runs; 0 uses every available core.
    pub workers: usize,
    pub equilibration_steps: usize,
    pub nvt_steps: usize,
    pub max_steps: usize,
    pub energy_drift_tol: f64,
    pub check_interval: usize,
    pub displacement_safety: f64,
    pub outlier_sigma: f64,
    pub outlier_interval: usize,
    pub baseline_population: BaselinePopulation,
    pub baseline_statistic: ForceStatistic,
}

impl Default for TtfSection {
    fn default() -> Self {
        let p = TtfProtocol::default();
        Self {
            sizes: vec![64, 128, 256],
            seeds: 10,
            workers: 0,
            equilibration_steps: p.equilibration_steps,
            nvt_steps: p.nvt_steps,
            max_steps: 100_000,
            energy_drift_tol: p.energy_drift_tol,
            check_interval: p.check_interval,
            displacement_safety: p.displacement_safety,
            outlier_sigma: p.outlier_sigma,
            outlier_interval: p.outlier_interval,
            baseline_population: p.baseline_population,
            baseline_statistic: p.baseline_statistic,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LossSet {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub rho: f64,
    pub samples: usize,
    pub scan_points: usize,
    pub scan_scale: f64,
    pub loss_set: LossSet,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self { rho: 0.05, samples: 1000, scan_points: 41, scan_scale: 0.05, loss_set: LossSet::Train }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub grid: Vec<f64>,
    /// System size of the sweep's stability runs.
    pub n_atoms: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { grid: ttflab_core::fidelity::DEFAULT_RHO_GRID.to_vec(), n_atoms: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub atoms_per_domain: usize,
    pub workers: Vec<usize>,
    pub steps: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        let b = BenchConfig::default();
        Self { atoms_per_domain: b.atoms_per_domain, workers: b.workers, steps: b.steps }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    /// Parent of the per-run `<timestamp>-<command>` directories.
    pub runs_dir: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

/// Recursively overlays `top` onto `base`; tables merge, everything else is replaced.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

fn parse_strict(text: &str, origin: &str) -> Result<toml::Table> {
    // deserializing into the typed config first catches misspelled keys with their location
    toml::from_str::<ExperimentConfig>(text).map_err(|e| anyhow!("{origin}: {e}"))?;
    text.parse::<toml::Table>().map_err(|e| anyhow!("{origin}: {e}"))
}

/// Resolves the preset, overlays the file, and makes relative file paths relative to the file.
pub fn load(preset_flag: Option<&str>, file: Option<&Path>) -> Result<ExperimentConfig> {
    let user = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            Some(parse_strict(&text, &path.display().to_string())?)
        }
        None => None,
    };
    let preset = preset_flag
        .map(str::to_owned)
        .or_else(|| user.as_ref().and_then(|t| t.get("preset")).and_then(|v| v.as_str()).map(str::to_owned))
        .unwrap_or_else(|| "desk".into());
    let mut table = parse_strict(preset_text(&preset)?, &format!("preset {preset}"))?;
    if let Some(user) = user {
        merge(&mut table, user);
    }
    table.insert("preset".into(), toml::Value::String(preset));
    let mut config: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| anyhow!("{e}"))?;
    if let Some(dir) = file.and_then(Path::parent) {
        for p in [&mut config.paths.runs_dir, &mut config.paths.dataset, &mut config.paths.model].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }
    Ok(config)
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn sim(&self) -> Result<SimConfig> {
        let o = &self.oracle;
        let lj = match o.form {
            LjForm::TruncatedShifted => LjParams::new(o.epsilon, o.sigma, o.cutoff)?,
            LjForm::ForceShifted => LjParams::force_shifted(o.epsilon, o.sigma, o.cutoff)?,
        };
        let s = &self.system;
        if !(s.dt > 0.0 && s.density > 0.0 && s.skin >= 0.0 && s.thermostat_tau_steps > 0.0) {
            bail!("system: dt, density and thermostat_tau_steps must be positive and skin non-negative");
        }
        Ok(SimConfig {
            density: s.density,
            dt: s.dt,
            skin: s.skin,
            lj,
            burn_in_steps: s.burn_in_steps,
            thermostat_tau_steps: s.thermostat_tau_steps,
            thermostat_q: None,
        })
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            n_train: self.dataset.n_train,
            n_val: self.dataset.n_val,
            n_atoms: self.system.n_atoms,
            sample_interval: self.dataset.sample_interval,
            temperature: self.system.temperature,
            seed: seeds::derive(self.seed, "data"),
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let m = &self.model;
        Ok(ModelSpec { descriptor: DescriptorConfig::uniform(m.n_basis, m.r_min, m.r_max)?, hidden: m.hidden.clone() })
    }

    pub fn optimizer(&self) -> Result<OptimizerChoice> {
        match self.train.optimizer {
            OptimizerKind::Adam => Ok(OptimizerChoice::Adam),
            OptimizerKind::Sam if self.train.rho >= 0.0 && self.train.rho.is_finite() => {
                Ok(OptimizerChoice::Sam { rho: self.train.rho })
            }
            OptimizerKind::Sam => bail!("train.rho must be finite and non-negative, got {}", self.train.rho),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let config = TrainConfig {
            lr: t.lr,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            scheduler_patience: t.scheduler_patience,
            scheduler_factor: t.scheduler_factor,
            stop_window: t.stop_window,
            stop_delta: t.stop_delta,
            loss_coefficients: LossCoefficients { energy: t.energy_weight, force: t.force_weight },
        };
        config.validate()?;
        Ok(config)
    }

    pub fn ttf_protocol(&self, n_atoms: usize) -> Result<TtfProtocol> {
        let t = &self.ttf;
        let protocol = TtfProtocol {
            n_atoms,
            temperature: self.system.temperature,
            sim: self.sim()?,
            equilibration_steps: t.equilibration_steps,
            nvt_steps: t.nvt_steps,
            max_steps: t.max_steps,
            energy_drift_tol: t.energy_drift_tol,
            check_interval: t.check_interval,
            displacement_safety: t.displacement_safety,
            outlier_sigma: t.outlier_sigma,
            outlier_interval: t.outlier_interval,
            baseline_population: t.baseline_population,
            baseline_statistic: t.baseline_statistic,
            seeds: (0..t.seeds).collect(),
        };
        protocol.validate()?;
        Ok(protocol)
    }

    pub fn ttf_workers(&self) -> usize {
        match self.ttf.workers {
            0 => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            w => w,
        }
    }

    pub fn bench_config(&self) -> BenchConfig {
        BenchConfig {
            atoms_per_domain: self.bench.atoms_per_domain,
            workers: self.bench.workers.clone(),
            steps: self.bench.steps,
            density: self.system.density,
            temperature: self.system.temperature,
            dt: self.system.dt,
            skin: self.system.skin,
            seed: seeds::derive(self.seed, "bench"),
        }
    }
}
