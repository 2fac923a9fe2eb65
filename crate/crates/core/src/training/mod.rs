//! Losses, optimizer, metrics and the k-fold experiment loop.
//!
//! Early stopping monitors the test fold's loss by default, as in the
//! original protocol; set [`TrainConfig::validation_fraction`] to monitor an
//! inner split of the training trials instead.

mod loss;
mod metrics;
mod optim;
pub mod report;

use ndarray::{Array2, Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::channels::ChannelSubset;
use crate::cwt::{trial_rasters, CwtConfig, CwtPlan};
use crate::data_io::PortableDataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{backward, forward, HeadKind, Mode, ModelConfig, ModelParams};
use crate::rng;
use crate::signal::{FoldAssignment, Labels};

pub use loss::{cross_entropy, cross_entropy_grad, huber, huber_grad, Loss, Target};
pub use metrics::{
    accuracy, argmax, baseline_random_rmse, combined_binary_accuracy, early_stop_check, is_relevant,
    pooled_rmse, relevance_threshold, BaselinePredictor,
};
pub use optim::{adam_scalar, adam_step, AdamConfig, AdamState, Scheduler};

/// Samples per forward pass when only predictions are needed.
const EVAL_CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSource {
    /// Experimenter-assigned video quadrant.
    Vaq,
    /// Quadrant from the participant's own ratings.
    Sam,
    /// Raw (valence, arousal) ratings, for regression.
    SamContinuous,
}

impl LabelSource {
    pub fn name(self) -> &'static str {
        match self {
            LabelSource::Vaq => "vaq",
            LabelSource::Sam => "sam",
            LabelSource::SamContinuous => "sam-continuous",
        }
    }

    pub fn target(self, labels: &Labels) -> Target {
        match self {
            LabelSource::Vaq => Target::Class(labels.vaq_quadrant.code() as usize),
            LabelSource::Sam => Target::Class(labels.sam_quadrant().code() as usize),
            LabelSource::SamContinuous => {
                Target::Pair([labels.sam_valence as f64, labels.sam_arousal as f64])
            }
        }
    }

    fn check_head(self, head: HeadKind) -> Result<()> {
        let ok = matches!(
            (self, head),
            (LabelSource::Vaq | LabelSource::Sam, HeadKind::Classify4)
                | (LabelSource::SamContinuous, HeadKind::Regress2)
        );
        if ok {
            Ok(())
        } else {
            Err(Error::BadConfig(format!(
                "label source {} does not fit a {:?} head",
                self.name(),
                head
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub scheduler: Scheduler,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub huber_delta: f64,
    /// Share of each training fold held out to drive early stopping.
    pub validation_fraction: Option<f64>,
}

impl TrainConfig {
    /// Defaults for a task: patience 5 for classification, 10 for regression.
    pub fn for_task(task: HeadKind) -> Self {
        Self {
            lr: 1e-4,
            scheduler: Scheduler::default(),
            adam: AdamConfig::default(),
            batch_size: 16,
            max_epochs: 100,
            patience: match task {
                HeadKind::Classify4 => 5,
                HeadKind::Regress2 => 10,
            },
            seed: 0,
            huber_delta: 1.0,
            validation_fraction: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::BadConfig(msg.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.patience < 1 {
            return bad("patience must be >= 1");
        }
        if self.batch_size < 1 || self.max_epochs < 1 {
            return bad("batch_size and max_epochs must be >= 1");
        }
        for b in [self.adam.beta1, self.adam.beta2] {
            if !(b > 0.0 && b < 1.0) {
                return bad("Adam betas must lie in (0, 1)");
            }
        }
        if !(self.adam.eps > 0.0) || !(self.huber_delta > 0.0) {
            return bad("eps and huber_delta must be positive");
        }
        if let Some(f) = self.validation_fraction {
            if !(f > 0.0 && f < 1.0) {
                return bad("validation_fraction must lie in (0, 1)");
            }
        }
        if let Scheduler::Step { step_epochs, gamma } = self.scheduler {
            if step_epochs == 0 || !(gamma > 0.0) {
                return bad("step scheduler needs step_epochs >= 1 and gamma > 0");
            }
        }
        Ok(())
    }

    pub fn loss(&self, task: HeadKind) -> Loss {
        match task {
            HeadKind::Classify4 => Loss::CrossEntropy,
            HeadKind::Regress2 => Loss::Huber {
                delta: self.huber_delta,
            },
        }
    }
}

/// Model inputs for every trial of a dataset, restricted to one subset.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub subset: String,
    pub channel_names: Vec<String>,
    /// One `[channels x H x W]` raster stack per trial.
    pub inputs: Vec<Array3<f32>>,
    pub labels: Vec<Labels>,
    pub participants: Vec<u16>,
}

impl PreparedData {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn views(&self, indices: &[usize]) -> Vec<ArrayView3<'_, f32>> {
        indices.iter().map(|&i| self.inputs[i].view()).collect()
    }
}

/// Rasterizes the subset's channels of every trial. Trials run through
/// `exec`.
pub fn prepare(
    dataset: &PortableDataset,
    subset: &ChannelSubset,
    cwt: &CwtConfig,
    exec: Exec,
) -> Result<PreparedData> {
    let positions = subset.positions_in(&dataset.channel_names)?;
    let grid = cwt.grid(dataset.sample_rate_hz as f64)?;
    let plan = CwtPlan::new(&grid, dataset.n_samples())?;
    let inputs = exec.try_map(dataset.trials.len(), |i| {
        trial_rasters(&plan, &dataset.trials[i], &positions, cwt, Exec::Sequential)
    })?;
    Ok(PreparedData {
        subset: subset.name.clone(),
        channel_names: subset.channel_names.clone(),
        inputs,
        labels: dataset.trials.iter().map(|t| t.labels).collect(),
        participants: dataset.trials.iter().map(|t| t.participant_id).collect(),
    })
}

/// Mean loss over the batch and its gradient.
pub fn batch_loss_and_grad(
    params: &ModelParams,
    config: &ModelConfig,
    inputs: &[ArrayView3<f32>],
    targets: &[Target],
    loss: Loss,
    mode: Mode,
    exec: Exec,
) -> Result<(f64, ModelParams)> {
    if inputs.len() != targets.len() {
        return Err(Error::BadShape("one target per input".into()));
    }
    let (outputs, caches) = forward(inputs, params, config, mode, exec)?;
    let n = inputs.len() as f64;
    let mut d_outputs = Array2::zeros(outputs.dim());
    let mut total = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let (l, g) = loss.eval(outputs.row(i), t);
        total += l;
        d_outputs.row_mut(i).assign(&(g / n));
    }
    let grads = backward(params, config, &caches, d_outputs.view(), exec)?;
    Ok((total / n, grads))
}

/// Eval-mode outputs, one row per input.
pub fn predict(
    params: &ModelParams,
    config: &ModelConfig,
    inputs: &[ArrayView3<f32>],
    exec: Exec,
) -> Result<Array2<f64>> {
    if inputs.is_empty() {
        return Err(Error::EmptyData);
    }
    let mut out = Array2::zeros((inputs.len(), config.head.out_dim()));
    for (c, chunk) in inputs.chunks(EVAL_CHUNK).enumerate() {
        let (o, _) = forward(chunk, params, config, Mode::Eval, exec)?;
        out.slice_mut(ndarray::s![c * EVAL_CHUNK..c * EVAL_CHUNK + chunk.len(), ..])
            .assign(&o);
    }
    Ok(out)
}

/// Mean loss and task metric (accuracy or pooled RMSE).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub metric: f64,
}

pub fn evaluate(
    params: &ModelParams,
    config: &ModelConfig,
    inputs: &[ArrayView3<f32>],
    targets: &[Target],
    loss: Loss,
    exec: Exec,
) -> Result<Evaluation> {
    if inputs.len() != targets.len() {
        return Err(Error::BadShape("one target per input".into()));
    }
    let outputs = predict(params, config, inputs, exec)?;
    let mean_loss = targets
        .iter()
        .enumerate()
        .map(|(i, &t)| loss.eval(outputs.row(i), t).0)
        .sum::<f64>()
        / targets.len() as f64;
    let metric = output_metric(outputs.view(), targets)?;
    Ok(Evaluation {
        loss: mean_loss,
        metric,
    })
}

fn output_metric(outputs: ndarray::ArrayView2<f64>, targets: &[Target]) -> Result<f64> {
    match targets.first() {
        None => Err(Error::EmptyData),
        Some(Target::Class(_)) => {
            let labels: Vec<usize> = targets
                .iter()
                .map(|t| match t {
                    Target::Class(c) => Ok(*c),
                    _ => Err(Error::BadShape("mixed target kinds".into())),
                })
                .collect::<Result<_>>()?;
            accuracy(outputs, &labels)
        }
        Some(Target::Pair(_)) => {
            let mut t = Array2::zeros((targets.len(), 2));
            for (i, target) in targets.iter().enumerate() {
                match target {
                    Target::Pair(p) => t.row_mut(i).assign(&ndarray::arr1(p)),
                    _ => return Err(Error::BadShape("mixed target kinds".into())),
                }
            }
            pooled_rmse(outputs, t.view())
        }
    }
}

/// Accuracy of a Classify4 model on labelled inputs.
pub fn evaluate_classification(
    params: &ModelParams,
    config: &ModelConfig,
    inputs: &[ArrayView3<f32>],
    labels: &[usize],
    exec: Exec,
) -> Result<f64> {
    if config.head != HeadKind::Classify4 {
        return Err(Error::BadConfig("classification needs a Classify4 head".into()));
    }
    if inputs.is_empty() {
        return Err(Error::EmptyData);
    }
    accuracy(predict(params, config, inputs, exec)?.view(), labels)
}

/// Pooled RMSE of a Regress2 model against (valence, arousal) targets.
pub fn evaluate_regression(
    params: &ModelParams,
    config: &ModelConfig,
    inputs: &[ArrayView3<f32>],
    targets: &[[f64; 2]],
    exec: Exec,
) -> Result<f64> {
    if config.head != HeadKind::Regress2 {
        return Err(Error::BadConfig("regression needs a Regress2 head".into()));
    }
    if inputs.is_empty() {
        return Err(Error::EmptyData);
    }
    let t = Array2::from_shape_fn((targets.len(), 2), |(i, j)| targets[i][j]);
    pooled_rmse(predict(params, config, inputs, exec)?.view(), t.view())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Loss on the monitored split (the test fold unless a validation split
    /// is configured).
    pub test_loss: f64,
    /// Task metric on the test fold.
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_index: usize,
    /// Test-fold metric of the restored best-epoch parameters.
    pub metric: f64,
    pub history: Vec<EpochRecord>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub subset: String,
    pub channels: Vec<String>,
    pub n_channels: usize,
    pub label_source: LabelSource,
    pub task: HeadKind,
    /// "accuracy" or "rmse".
    pub metric_name: String,
    pub fold_metrics: Vec<f64>,
    pub mean: f64,
    pub threshold: f64,
    pub relevant: bool,
    pub seed: u64,
    pub folds: Vec<FoldResult>,
}

/// A finished experiment: the report plus the restored parameters per fold.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub report: ExperimentReport,
    pub models: Vec<ModelParams>,
}

pub fn metric_name(task: HeadKind) -> &'static str {
    match task {
        HeadKind::Classify4 => "accuracy",
        HeadKind::Regress2 => "rmse",
    }
}

/// Rasterizes `subset` and runs the k-fold protocol.
#[allow(clippy::too_many_arguments)]
pub fn run_experiment(
    dataset: &PortableDataset,
    subset: &ChannelSubset,
    labels: LabelSource,
    folds: &FoldAssignment,
    train: &TrainConfig,
    model: &ModelConfig,
    cwt: &CwtConfig,
    exec: Exec,
) -> Result<Experiment> {
    let data = prepare(dataset, subset, cwt, exec)?;
    run_prepared(&data, labels, folds, train, model, exec)
}

/// The k-fold protocol on already-rasterized data. Folds run through `exec`;
/// the result does not depend on it.
pub fn run_prepared(
    data: &PreparedData,
    labels: LabelSource,
    folds: &FoldAssignment,
    train: &TrainConfig,
    model: &ModelConfig,
    exec: Exec,
) -> Result<Experiment> {
    train.validate()?;
    model.validate()?;
    labels.check_head(model.head)?;
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    if model.n_channels != data.channel_names.len() {
        return Err(Error::BadConfig(format!(
            "model expects {} channels, subset {} has {}",
            model.n_channels,
            data.subset,
            data.channel_names.len()
        )));
    }
    if folds.assignment.len() != data.len() {
        return Err(Error::BadConfig("fold assignment does not cover the dataset".into()));
    }
    if let Some(empty) = folds.fold_sizes().iter().position(|&s| s == 0) {
        return Err(Error::BadConfig(format!("fold {} is empty", empty + 1)));
    }
    let targets: Vec<Target> = data.labels.iter().map(|l| labels.target(l)).collect();
    let results = exec.try_map(folds.k, |f| {
        run_fold(data, &targets, folds, f, train, model, exec)
    })?;
    let (fold_results, models): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let fold_metrics: Vec<f64> = fold_results.iter().map(|r: &FoldResult| r.metric).collect();
    let mean = fold_metrics.iter().sum::<f64>() / fold_metrics.len() as f64;
    let report = ExperimentReport {
        subset: data.subset.clone(),
        channels: data.channel_names.clone(),
        n_channels: data.channel_names.len(),
        label_source: labels,
        task: model.head,
        metric_name: metric_name(model.head).into(),
        fold_metrics,
        mean,
        threshold: relevance_threshold(model.head),
        relevant: is_relevant(model.head, mean),
        seed: train.seed,
        folds: fold_results,
    };
    Ok(Experiment { report, models })
}

fn diverged(fold: usize, epoch: usize) -> impl Fn(Error) -> Error {
    move |e| if e.is_numerical() { Error::Diverged { fold: fold + 1, epoch } } else { e }
}

fn run_fold(
    data: &PreparedData,
    targets: &[Target],
    folds: &FoldAssignment,
    fold: usize,
    train: &TrainConfig,
    model: &ModelConfig,
    exec: Exec,
) -> Result<(FoldResult, ModelParams)> {
    let f = fold as u64;
    let test_idx = folds.test_indices(fold);
    let mut train_idx = folds.train_indices(fold);
    let monitor_idx = match train.validation_fraction {
        None => test_idx.clone(),
        Some(frac) => {
            let mut r = rng::rng_from(train.seed, &[0x7A11, f]);
            rng::shuffle(&mut r, &mut train_idx);
            let n_val = ((train_idx.len() as f64 * frac).round() as usize).clamp(1, train_idx.len() - 1);
            let val = train_idx.split_off(train_idx.len() - n_val);
            train_idx.sort_unstable();
            val
        }
    };
    let pick = |idx: &[usize]| -> Vec<Target> { idx.iter().map(|&i| targets[i]).collect() };
    let (test_in, test_t) = (data.views(&test_idx), pick(&test_idx));
    let (mon_in, mon_t) = (data.views(&monitor_idx), pick(&monitor_idx));
    let loss = train.loss(model.head);

    let mut params = ModelParams::init(model, rng::derive_seed(train.seed, &[0x1417, f]))?;
    if model.head == HeadKind::Regress2 {
        // start the regression head at the training-fold mean rating
        for j in 0..2 {
            let mean = train_idx
                .iter()
                .map(|&i| match targets[i] {
                    Target::Pair(p) => p[j],
                    Target::Class(_) => 0.0,
                })
                .sum::<f64>()
                / train_idx.len() as f64;
            params.head_b[j] = mean;
        }
    }
    let mut state = AdamState::new(&params);
    let mut order = train_idx.clone();
    let mut shuffle_rng = rng::rng_from(train.seed, &[0x5EED, f]);

    let mut history: Vec<EpochRecord> = Vec::new();
    let mut monitor_losses = Vec::new();
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut step = 0u64;
    let mut stopped_epoch = train.max_epochs;
    for epoch in 1..=train.max_epochs {
        let on_err = diverged(fold, epoch);
        let lr = train.scheduler.lr(train.lr, epoch, train.max_epochs);
        rng::shuffle(&mut shuffle_rng, &mut order);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(train.batch_size).enumerate() {
            step += 1;
            let mode = Mode::Train {
                seed: rng::derive_seed(train.seed, &[0xD809, f, epoch as u64, b as u64]),
            };
            let (l, g) = batch_loss_and_grad(&params, model, &data.views(batch), &pick(batch), loss, mode, exec)
                .map_err(&on_err)?;
            if !l.is_finite() {
                return Err(on_err(Error::NonFinite("training loss")));
            }
            adam_step(&mut params, &g, &mut state, step, lr, &train.adam).map_err(&on_err)?;
            loss_sum += l * batch.len() as f64;
        }
        let train_loss = loss_sum / order.len() as f64;
        let monitored = evaluate(&params, model, &mon_in, &mon_t, loss, exec).map_err(&on_err)?;
        let metric = if train.validation_fraction.is_none() {
            monitored.metric
        } else {
            evaluate(&params, model, &test_in, &test_t, loss, exec).map_err(&on_err)?.metric
        };
        if !monitored.loss.is_finite() {
            return Err(on_err(Error::NonFinite("monitored loss")));
        }
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            test_loss: monitored.loss,
            metric,
        });
        monitor_losses.push(monitored.loss);
        if monitored.loss < best.0 {
            best = (monitored.loss, epoch, params.clone());
        }
        if early_stop_check(&monitor_losses, train.patience) {
            stopped_epoch = epoch;
            break;
        }
    }
    let (_, best_epoch, best_params) = best;
    let final_eval = evaluate(&best_params, model, &test_in, &test_t, loss, exec)?;
    Ok((
        FoldResult {
            fold_index: fold + 1,
            metric: final_eval.metric,
            history,
            stopped_epoch,
            best_epoch,
            n_train: train_idx.len(),
            n_test: test_idx.len(),
        },
        best_params,
    ))
}
