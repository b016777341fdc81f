//! Optimizers, learning-rate schedule and the training loop.

mod optim;
mod schedule;

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use optim::{adam_step, sam_step, sam_update, AdamState, SamConfig};
pub use schedule::{check_stop, scheduler_update, SchedulerState};

use crate::error::{Error, Result};
use crate::nnff::{
    DescriptorConfig, ForceField, LossCoefficients, LossValue, MlpArchitecture, Normalization, Objective, ParamVector,
    TrainingMetadata,
};
use crate::oracle::TrainExample;
use crate::seeds;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerChoice {
    Adam,
    Sam { rho: f64 },
}

impl OptimizerChoice {
    pub fn rho(&self) -> f64 {
        match self {
            OptimizerChoice::Adam => 0.0,
            OptimizerChoice::Sam { rho } => *rho,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerChoice::Adam => "adam",
            OptimizerChoice::Sam { .. } => "sam",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
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
    pub loss_coefficients: LossCoefficients,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-3,
            batch_size: 4,
            max_epochs: 2000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            scheduler_patience: 50,
            scheduler_factor: 0.5,
            stop_window: 100,
            stop_delta: 3e-3,
            loss_coefficients: LossCoefficients::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Invalid(format!("learning rate must be finite and non-negative, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.stop_window == 0 {
            return Err(Error::Invalid("batch_size, max_epochs and stop_window must be positive".into()));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0 && self.eps > 0.0) {
            return Err(Error::Invalid("Adam betas must lie in (0, 1) and eps must be positive".into()));
        }
        if !(self.scheduler_factor > 0.0 && self.scheduler_factor < 1.0) {
            return Err(Error::Invalid(format!("scheduler factor must lie in (0, 1), got {}", self.scheduler_factor)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxEpochs,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::Converged => "converged",
            StopReason::MaxEpochs => "max_epochs",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch loss seen during the epoch, at the pre-step weights.
    pub train_loss: f64,
    pub energy_term: f64,
    pub force_term: f64,
    pub val_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainReport {
    pub fn final_train_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.train_loss)
    }

    /// Training log as CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = std::io::BufWriter::new(out);
        writeln!(w, "epoch,train_loss,energy_term,force_term,val_loss,lr,seconds")?;
        for e in &self.epochs {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e},{:e},{:.3}",
                e.epoch, e.train_loss, e.energy_term, e.force_term, e.val_loss, e.lr, e.seconds
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Anything the loop can minimize: a loss over indexed examples with an exact gradient.
pub trait BatchObjective {
    fn n_examples(&self) -> usize;
    fn n_params(&self) -> usize;
    fn loss_gradient_on(&self, w: &[f64], indices: &[usize]) -> Result<(LossValue, Vec<f64>)>;
    fn loss_all(&self, w: &[f64]) -> Result<LossValue>;
}

impl BatchObjective for Objective {
    fn n_examples(&self) -> usize {
        self.len()
    }

    fn n_params(&self) -> usize {
        Objective::n_params(self)
    }

    fn loss_gradient_on(&self, w: &[f64], indices: &[usize]) -> Result<(LossValue, Vec<f64>)> {
        Objective::loss_gradient_on(self, w, indices)
    }

    fn loss_all(&self, w: &[f64]) -> Result<LossValue> {
        self.loss(w)
    }
}

/// Runs the optimizer loop from `w0`; returns the best-validation weights.
pub fn optimize<O: BatchObjective, V: BatchObjective>(
    train: &O,
    val: &V,
    w0: &[f64],
    optimizer: OptimizerChoice,
    config: &TrainConfig,
    seed: u64,
) -> Result<(Vec<f64>, TrainReport)> {
    config.validate()?;
    let sam = SamConfig::new(optimizer.rho())?;
    if train.n_examples() == 0 || val.n_examples() == 0 {
        return Err(Error::Invalid("training and validation sets must be nonempty".into()));
    }
    if w0.len() != train.n_params() {
        return Err(Error::Invalid(format!("expected {} weights, got {}", train.n_params(), w0.len())));
    }
    let mut rng = seeds::rng(seed, "shuffle");
    let mut w = w0.to_vec();
    let mut adam = AdamState::new(w.len(), config.lr);
    adam.beta1 = config.beta1;
    adam.beta2 = config.beta2;
    adam.eps = config.eps;
    let mut scheduler = SchedulerState::new(config.lr, config.scheduler_patience, config.scheduler_factor);
    let mut order: Vec<usize> = (0..train.n_examples()).collect();
    let mut epochs = Vec::new();
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0usize, w.clone());
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=config.max_epochs {
        let clock = Instant::now();
        order.shuffle(&mut rng);
        adam.eta = scheduler.current_lr;
        let (mut total, mut et, mut ft, mut n_batches) = (0.0, 0.0, 0.0, 0usize);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let mut lg = |x: &[f64]| train.loss_gradient_on(x, batch);
            let value = sam_update(&mut w, &mut lg, &mut adam, sam)
                .map_err(|e| e.context(format!("epoch {epoch}, batch {b}")))?;
            total += value.total;
            et += value.energy_term;
            ft += value.force_term;
            n_batches += 1;
        }
        let nb = n_batches as f64;
        let val_loss = val.loss_all(&w).map_err(|e| e.context(format!("validation after epoch {epoch}")))?.total;
        epochs.push(EpochRecord {
            epoch,
            train_loss: total / nb,
            energy_term: et / nb,
            force_term: ft / nb,
            val_loss,
            lr: adam.eta,
            seconds: clock.elapsed().as_secs_f64(),
        });
        if val_loss < best.0 {
            best = (val_loss, epoch, w.clone());
        }
        history.push(val_loss);
        scheduler.update(val_loss);
        if check_stop(&history, config.stop_window, config.stop_delta) {
            stop_reason = StopReason::Converged;
            break;
        }
    }
    let report = TrainReport { epochs_run: epochs.len(), epochs, stop_reason, best_epoch: best.1, best_val_loss: best.0 };
    Ok((best.2, report))
}

/// Model architecture and descriptor settings for a fresh fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub descriptor: DescriptorConfig,
    pub hidden: Vec<usize>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { descriptor: DescriptorConfig::uniform(8, 0.8, 2.1).expect("valid default descriptor"), hidden: vec![16, 16] }
    }
}

impl ModelSpec {
    pub fn architecture(&self) -> Result<MlpArchitecture> {
        MlpArchitecture::new(self.descriptor.n_basis(), &self.hidden)
    }
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: ForceField,
    pub report: TrainReport,
    pub metadata: TrainingMetadata,
}

/// Fits a force field to `train_set`, selecting weights on `val_set`.
///
/// Normalization is fitted on the training set and the output bias starts at the mean
/// per-atom training energy.
pub fn train(
    train_set: &[TrainExample],
    val_set: &[TrainExample],
    spec: &ModelSpec,
    optimizer: OptimizerChoice,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainedModel> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Invalid("training and validation sets must be nonempty".into()));
    }
    spec.descriptor.validate()?;
    let arch = spec.architecture()?;
    let norm = Normalization::fit(train_set, &spec.descriptor)?;
    let bias = train_set.iter().map(|e| e.energy / e.n_atoms() as f64).sum::<f64>() / train_set.len() as f64;
    let mut init_rng = seeds::rng(seed, "init");
    let model = ForceField::initialized(spec.descriptor.clone(), arch, norm, bias, &mut init_rng)?;
    let train_obj = Objective::new(&model, train_set, config.loss_coefficients)?;
    let val_obj = Objective::new(&model, val_set, config.loss_coefficients)?;
    let (w, report) = optimize(&train_obj, &val_obj, &model.params.0, optimizer, config, seed)?;
    let model = model.with_params(ParamVector(w))?;
    let metadata = TrainingMetadata {
        optimizer: optimizer.name().into(),
        rho: optimizer.rho(),
        seed,
        epochs: report.epochs_run,
        best_epoch: report.best_epoch,
        stop_reason: report.stop_reason.as_str().into(),
        final_train_loss: report.final_train_loss(),
        best_val_loss: report.best_val_loss,
        loss_coefficients: config.loss_coefficients,
        force_loss: "per_component_mse".into(),
    };
    Ok(TrainedModel { model, report, metadata })
}
