//! Training loop: routes each sample's height loss to the decoder branch
//! matching its label quality, supervises the quality classifier on every
//! sample, assembles ordinal pixel-pair constraints within and across
//! images, refines noisy labels against the trusted branch's detached
//! predictions, and selects the checkpoint with the best validation RMSE.
//!
//! All randomness is derived per (epoch, step, slot) from the config seed,
//! so runs are reproducible bit for bit; worker parallelism only fans out
//! pure forward/backward work and cannot change results.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{
    blend_one, save_checkpoint, CheckpointError, EnsembleModel, Gradients, ModelConfig, ModelError,
    SampleForward,
};
use crate::evalsuite::{
    building_records, grouped_report, DomainGroup, EvalError, MetricsReport, SetResult,
};
use crate::gtaug::{augment_ground_truth, AugError, AugmentationState};
use crate::heightbins::{
    balanced_pair_sample, balanced_pixel_sample, random_pair_sample, BinsError, SampleError,
    SidBins,
};
use crate::losses::{
    accumulate_hard_height_grad, accumulate_ordinal_grad, accumulate_soft_height_grad_at,
    hard_height_loss, ordinal_constraint_loss, soft_height_loss_at, softmax_cross_entropy,
    LossBreakdown, LossError,
};
use crate::manifest::Split;
use crate::nn::AdamState;
use crate::patch::{Patch, QualityClass};
use crate::seeds;

/// Salt separating the epoch-shuffle random stream from other consumers of
/// the run seed.
const STREAM_ORDER: u64 = 4;
/// Salt for per-sample streams (label refinement, then pixel sampling).
const STREAM_SAMPLE: u64 = 5;
/// Salt for per-evaluation ordinal pair sampling streams.
const STREAM_PAIRS: u64 = 6;

/// Which pixel-pair sets feed the ordinal penalty each step.
///
/// `Cross` variants concatenate the own-branch predictions of all high- and
/// mid-quality samples in the batch into one vector, so pairs can span
/// images; `Within` variants sample pairs inside each image separately.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintType {
    /// Cross-image high+mid pairs plus within-image pairs per low-quality
    /// sample (the default).
    #[default]
    #[serde(rename = "(H+M)C+L")]
    CrossHighMidPlusLow,
    /// Within-image pairs for high- and mid-quality samples only.
    #[serde(rename = "H+M")]
    WithinHighMid,
    /// Cross-image high+mid pairs only.
    #[serde(rename = "(H+M)C")]
    CrossHighMid,
    /// Within-image pairs for all three qualities.
    #[serde(rename = "H+M+L")]
    WithinHighMidLow,
    /// Same pair sets as the default, but sampled uniformly instead of
    /// class-balanced.
    #[serde(rename = "random-sampling")]
    RandomSampling,
}

/// Every knob of one training run. `Default` carries the documented
/// defaults; the synthetic benchmark presets override the budget-sensitive
/// ones (epochs, learning rate).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Worker threads for forward/backward fan-out; results are identical
    /// for any value, 1 keeps everything on the calling thread.
    pub workers: usize,
    /// Deal batches round-robin across qualities instead of plain shuffling.
    pub stratified_batches: bool,
    /// Train the label-quality classifier (cross-entropy on every sample).
    pub classifier_loss: bool,
    /// Apply the ordinal pixel-pair penalty.
    pub ordinal_loss: bool,
    /// Supervise mid/low samples with the buffered balanced loss; when off,
    /// every sample gets the plain pixel-wise L1 of the high-quality route.
    pub balanced_soft_loss: bool,
    /// Refine mid/low labels toward the trusted branch's predictions.
    pub augmentation: bool,
    /// Buffer width as a fraction of label height for mid-quality samples.
    pub lambda_tau_mid: f64,
    /// Buffer width as a fraction of label height for low-quality samples.
    pub lambda_tau_low: f64,
    /// Fraction of pixels drawn by the rank-stratified sampler.
    pub sample_fraction: f64,
    /// Height-bin range and resolution for ordinal classes.
    pub h_min: f64,
    pub h_max: f64,
    pub bin_classes: usize,
    /// Pairs per constraint evaluation; `None` uses the patch pixel count.
    pub pair_budget: Option<usize>,
    pub constraint_type: ConstraintType,
    /// Initial label weight of the refinement blend.
    pub eta0: f64,
    /// Per-epoch decay factor applied to the label weight.
    pub eta_decay: f64,
    /// Agreement window as a fraction of the label height.
    pub omega_rel: f64,
    /// Probability of leaving a patch's labels raw for one step.
    pub aug_dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 8,
            learning_rate: 1e-4,
            seed: 0,
            workers: 1,
            stratified_batches: false,
            classifier_loss: true,
            ordinal_loss: true,
            balanced_soft_loss: true,
            augmentation: true,
            lambda_tau_mid: 0.3,
            lambda_tau_low: 0.5,
            sample_fraction: 0.10,
            h_min: 1.0,
            h_max: 150.0,
            bin_classes: 20,
            pair_budget: None,
            constraint_type: ConstraintType::CrossHighMidPlusLow,
            eta0: 1.0,
            eta_decay: 0.99,
            omega_rel: 0.1,
            aug_dropout: 0.3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |reason: String| Err(TrainError::Config(reason));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        for (name, v) in [
            ("lambda_tau_mid", self.lambda_tau_mid),
            ("lambda_tau_low", self.lambda_tau_low),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return bad(format!(
                "sample_fraction must be in (0, 1], got {}",
                self.sample_fraction
            ));
        }
        if self.pair_budget == Some(0) {
            return bad("pair_budget must be at least 1 when set".into());
        }
        // Bin and refinement parameters reuse their owners' validation.
        SidBins::new(self.h_min, self.h_max, self.bin_classes)?;
        self.augmentation_state()?;
        Ok(())
    }

    fn augmentation_state(&self) -> Result<AugmentationState, AugError> {
        AugmentationState::new(self.eta0, self.eta_decay, self.omega_rel, self.aug_dropout)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training requires a non-empty train split")]
    NoTrainData,
    #[error("training requires a non-empty val split")]
    NoValData,
    #[error("a training batch may not be empty")]
    EmptyBatch,
    #[error("non-finite {component} at epoch {epoch}, step {step}")]
    NonFiniteLoss {
        component: String,
        epoch: usize,
        step: usize,
    },
    #[error("non-finite validation RMSE at epoch {epoch}")]
    NonFiniteValidation { epoch: usize },
    #[error("the log holds no validation records")]
    EmptyLog,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Bins(#[from] BinsError),
    #[error(transparent)]
    Aug(#[from] AugError),
    #[error(transparent)]
    Sampling(#[from] SampleError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One optimizer step's loss terms, as logged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub l_dc: f64,
    pub l_hh: f64,
    pub l_bsh: f64,
    pub l_oc: f64,
    pub total: f64,
    /// Label weight in effect during this step.
    pub eta: f64,
}

/// One epoch's validation metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValRecord {
    pub epoch: usize,
    pub val_rmse_combined: f64,
    pub val_rmse_in: Option<f64>,
    pub val_rmse_out: Option<f64>,
    pub val_rmse_per_set: BTreeMap<String, f64>,
}

/// A line of the training log; serializes to JSON lines tagged by `kind`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step(StepRecord),
    Val(ValRecord),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<LogRecord>,
}

impl TrainingLog {
    pub fn step_records(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Step(s) => Some(s),
            LogRecord::Val(_) => None,
        })
    }

    pub fn val_records(&self) -> impl Iterator<Item = &ValRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Val(v) => Some(v),
            LogRecord::Step(_) => None,
        })
    }

    /// One JSON document per line, in record order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("log records always serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TrainingLog { records })
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), TrainError> {
        let io_err = |source| TrainError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(io_err)?;
            }
        }
        let mut file = std::fs::File::create(path).map_err(io_err)?;
        file.write_all(self.to_jsonl().as_bytes()).map_err(io_err)
    }
}

/// Epoch whose validation combined RMSE is smallest; ties go to the earliest
/// epoch.
pub fn select_best(log: &TrainingLog) -> Result<usize, TrainError> {
    let mut best: Option<(usize, f64)> = None;
    for v in log.val_records() {
        if best.is_none_or(|(_, rmse)| v.val_rmse_combined < rmse) {
            best = Some((v.epoch, v.val_rmse_combined));
        }
    }
    best.map(|(epoch, _)| epoch).ok_or(TrainError::EmptyLog)
}

/// Result of [`fit`]: the best-validation model plus the full log.
#[derive(Debug)]
pub struct FitOutcome {
    pub model: EnsembleModel,
    pub best_epoch: usize,
    pub best_val_rmse: f64,
    pub log: TrainingLog,
}

/// Trains a fresh model on the dataset's train split, validating each epoch
/// on the val split, and returns the weights from the best-validation epoch.
/// When `checkpoint_path` is given, the best weights so far are saved there
/// every time they improve, so an aborted run still leaves the last good
/// checkpoint behind.
pub fn fit(
    dataset: &crate::dataset::Dataset,
    model_config: &ModelConfig,
    config: &TrainConfig,
    checkpoint_path: Option<&Path>,
) -> Result<FitOutcome, TrainError> {
    config.validate()?;
    if dataset.train.is_empty() {
        return Err(TrainError::NoTrainData);
    }
    if dataset.val.is_empty() {
        return Err(TrainError::NoValData);
    }
    let bins = SidBins::new(config.h_min, config.h_max, config.bin_classes)?;
    let mut model = EnsembleModel::new(model_config.clone(), config.seed)?;
    let mut opt = AdamState::new(model.param_count(), config.learning_rate);
    let mut aug = config.augmentation_state()?;
    let val_sets = dataset.sets_of(Split::Val);
    let in_domain = dataset.in_domain_tags();

    let mut log = TrainingLog::default();
    let mut best: Option<(usize, f64, EnsembleModel)> = None;
    for epoch in 0..config.epochs {
        let order = batch_order(&dataset.train, config, epoch);
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Patch> = chunk.iter().map(|&i| &dataset.train[i]).collect();
            let breakdown = train_step(
                &mut model, &mut opt, &batch, config, &bins, &aug, epoch, step,
            )?;
            log.records.push(LogRecord::Step(StepRecord {
                epoch,
                step,
                l_dc: breakdown.l_dc,
                l_hh: breakdown.l_hh,
                l_bsh: breakdown.l_bsh,
                l_oc: breakdown.l_oc,
                total: breakdown.total,
                eta: aug.eta,
            }));
        }

        let (report, _) = evaluate_blended(&model, &val_sets, &in_domain, config.workers)?;
        if !report.combined_avg.is_finite() {
            return Err(TrainError::NonFiniteValidation { epoch });
        }
        log.records.push(LogRecord::Val(ValRecord {
            epoch,
            val_rmse_combined: report.combined_avg,
            val_rmse_in: report.in_domain_avg,
            val_rmse_out: report.out_domain_avg,
            val_rmse_per_set: report.per_set_rmse,
        }));
        if best
            .as_ref()
            .is_none_or(|(_, rmse, _)| report.combined_avg < *rmse)
        {
            best = Some((epoch, report.combined_avg, model.clone()));
            if let Some(path) = checkpoint_path {
                save_checkpoint(&model, path)?;
            }
        }
        aug.decay_eta();
    }
    let (best_epoch, best_val_rmse, best_model) = best.expect("epochs >= 1 yields a val record");
    Ok(FitOutcome {
        model: best_model,
        best_epoch,
        best_val_rmse,
        log,
    })
}

/// One optimizer step over a batch: loss terms, gradients, parameter update.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut EnsembleModel,
    opt: &mut AdamState,
    batch: &[&Patch],
    config: &TrainConfig,
    bins: &SidBins,
    aug_state: &AugmentationState,
    epoch: usize,
    step: usize,
) -> Result<LossBreakdown, TrainError> {
    let (breakdown, grads) = batch_gradients(model, batch, config, bins, aug_state, epoch, step)?;
    let delta = opt.step(&grads.flatten());
    model.apply_delta(&delta);
    Ok(breakdown)
}

struct SampleWork {
    branch: usize,
    fwd: SampleForward,
    pred64: Vec<f64>,
    /// Gradient of the total loss w.r.t. this sample's own-branch height
    /// map, accumulated in f64 until the backward pass.
    d_own: Vec<f64>,
    d_logits: Option<Array1<f32>>,
    /// Ordinal height classes of the original labels, filled on demand.
    classes: Option<Vec<u16>>,
}

/// Loss terms and parameter gradients for one batch, without touching the
/// model. Randomness is drawn from streams derived per `(epoch, step, slot)`,
/// so the result is a pure function of model, batch, and configuration.
pub fn batch_gradients(
    model: &EnsembleModel,
    batch: &[&Patch],
    config: &TrainConfig,
    bins: &SidBins,
    aug_state: &AugmentationState,
    epoch: usize,
    step: usize,
) -> Result<(LossBreakdown, Gradients), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let branches = model.config().n_branches;
    let trusted_branch = routed_branch(QualityClass::High, branches);

    let fwds: Vec<SampleForward> =
        maybe_par_map(config.workers, batch, |p| model.forward_one(&p.image))?;

    let hard_n = batch.iter().filter(|p| !is_soft(p.quality, config)).count();
    let soft_n = batch.len() - hard_n;

    let mut works: Vec<SampleWork> = Vec::with_capacity(batch.len());
    let (mut dc_sum, mut hh_sum, mut bsh_sum) = (0.0f64, 0.0f64, 0.0f64);
    for (slot, (patch, fwd)) in batch.iter().zip(fwds).enumerate() {
        let branch = routed_branch(patch.quality, branches);
        let pred64: Vec<f64> = fwd.branch_heights[branch]
            .iter()
            .map(|v| f64::from(*v))
            .collect();
        let mut d_own = vec![0.0f64; pred64.len()];
        // Draw order within a sample's stream is fixed: label refinement
        // first, pixel sampling second.
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::mix(
            config.seed,
            &[STREAM_SAMPLE, epoch as u64, step as u64, slot as u64],
        ));

        if is_soft(patch.quality, config) {
            let target = if config.augmentation {
                augment_ground_truth(
                    &patch.height,
                    &fwd.branch_heights[trusted_branch],
                    aug_state,
                    &mut rng,
                )?
            } else {
                patch.height.clone()
            };
            let target64: Vec<f64> = target.iter().map(|v| f64::from(*v)).collect();
            let lambda = match patch.quality {
                QualityClass::Mid => config.lambda_tau_mid,
                QualityClass::Low => config.lambda_tau_low,
                QualityClass::High => unreachable!("high labels never take the soft route"),
            };
            let indices = balanced_pixel_sample(&target64, config.sample_fraction, &mut rng)?;
            bsh_sum += soft_height_loss_at(&pred64, &target64, lambda, &indices)?;
            accumulate_soft_height_grad_at(
                &pred64,
                &target64,
                lambda,
                &indices,
                1.0 / soft_n as f64,
                &mut d_own,
            );
        } else {
            let gt64: Vec<f64> = patch.height.iter().map(|v| f64::from(*v)).collect();
            hh_sum += hard_height_loss(&pred64, &gt64)?;
            accumulate_hard_height_grad(&pred64, &gt64, 1.0 / hard_n as f64, &mut d_own);
        }

        let d_logits = if config.classifier_loss {
            let logits64: Vec<f64> = fwd.logits.iter().map(|v| f64::from(*v)).collect();
            let (ce, grad) = softmax_cross_entropy(&logits64, branch)?;
            dc_sum += ce;
            Some(Array1::from_iter(
                grad.iter().map(|g| (*g / batch.len() as f64) as f32),
            ))
        } else {
            None
        };

        works.push(SampleWork {
            branch,
            fwd,
            pred64,
            d_own,
            d_logits,
            classes: None,
        });
    }
    let l_dc = dc_sum / batch.len() as f64;
    let l_hh = if hard_n > 0 {
        hh_sum / hard_n as f64
    } else {
        0.0
    };
    let l_bsh = if soft_n > 0 {
        bsh_sum / soft_n as f64
    } else {
        0.0
    };

    let l_oc = if config.ordinal_loss {
        apply_ordinal_constraints(&mut works, batch, config, bins, epoch, step)?
    } else {
        0.0
    };

    let breakdown = LossBreakdown::new(l_dc, l_hh, l_bsh, l_oc).map_err(|e| match e {
        LossError::NonFinite { component } => TrainError::NonFiniteLoss {
            component: component.to_string(),
            epoch,
            step,
        },
        other => TrainError::Loss(other),
    })?;

    let per_sample: Vec<Gradients> = maybe_par_map(config.workers, &works, |work| {
        let (h, w) = work.fwd.branch_heights[work.branch].dim();
        let mut d_heights: Vec<Option<Array2<f32>>> = vec![None; branches];
        let d_own32 =
            Array2::from_shape_vec((h, w), work.d_own.iter().map(|v| *v as f32).collect())
                .expect("gradient buffer matches the map shape");
        d_heights[work.branch] = Some(d_own32);
        let mut grads = Gradients::zeros_of(model);
        model.backward_one(&work.fwd, &d_heights, work.d_logits.as_ref(), &mut grads);
        Ok::<_, TrainError>(grads)
    })?;
    let mut total = Gradients::zeros_of(model);
    for g in &per_sample {
        total.add(g);
    }
    Ok((breakdown, total))
}

/// Builds the pair evaluations dictated by the constraint type, accumulates
/// their gradients onto each participant's own-branch map, and returns the
/// mean penalty over non-empty evaluations (zero when all are empty).
fn apply_ordinal_constraints(
    works: &mut [SampleWork],
    batch: &[&Patch],
    config: &TrainConfig,
    bins: &SidBins,
    epoch: usize,
    step: usize,
) -> Result<f64, TrainError> {
    let cross_high_mid = |q: QualityClass| q != QualityClass::Low;
    let evals: Vec<Vec<usize>> = match config.constraint_type {
        ConstraintType::CrossHighMidPlusLow | ConstraintType::RandomSampling => {
            let hm: Vec<usize> = (0..batch.len())
                .filter(|&i| cross_high_mid(batch[i].quality))
                .collect();
            let mut evals: Vec<Vec<usize>> = Vec::new();
            if !hm.is_empty() {
                evals.push(hm);
            }
            evals.extend(
                (0..batch.len())
                    .filter(|&i| batch[i].quality == QualityClass::Low)
                    .map(|i| vec![i]),
            );
            evals
        }
        ConstraintType::CrossHighMid => {
            let hm: Vec<usize> = (0..batch.len())
                .filter(|&i| cross_high_mid(batch[i].quality))
                .collect();
            if hm.is_empty() {
                vec![]
            } else {
                vec![hm]
            }
        }
        ConstraintType::WithinHighMid => (0..batch.len())
            .filter(|&i| cross_high_mid(batch[i].quality))
            .map(|i| vec![i])
            .collect(),
        ConstraintType::WithinHighMidLow => (0..batch.len()).map(|i| vec![i]).collect(),
    };

    let mut non_empty: Vec<(Vec<usize>, Vec<f64>, crate::heightbins::PixelPairSet)> = Vec::new();
    let mut loss_sum = 0.0f64;
    for (eval_index, participants) in evals.into_iter().enumerate() {
        let mut pred = Vec::new();
        let mut classes = Vec::new();
        for &i in &participants {
            pred.extend_from_slice(&works[i].pred64);
            if works[i].classes.is_none() {
                let heights = batch[i].height.as_slice().expect("standard layout heights");
                works[i].classes = Some(bins.class_map(heights)?);
            }
            classes.extend_from_slice(works[i].classes.as_ref().expect("just filled"));
        }
        let first = participants[0];
        let budget = config
            .pair_budget
            .unwrap_or_else(|| batch[first].height.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::mix(
            config.seed,
            &[STREAM_PAIRS, epoch as u64, step as u64, eval_index as u64],
        ));
        let pairs = if config.constraint_type == ConstraintType::RandomSampling {
            random_pair_sample(&classes, budget, &mut rng)
        } else {
            balanced_pair_sample(&classes, budget, &mut rng)
        };
        if pairs.is_empty() {
            continue;
        }
        loss_sum += ordinal_constraint_loss(&pred, &pairs);
        non_empty.push((participants, pred, pairs));
    }

    if non_empty.is_empty() {
        return Ok(0.0);
    }
    let scale = 1.0 / non_empty.len() as f64;
    for (participants, pred, pairs) in &non_empty {
        let mut grad = vec![0.0f64; pred.len()];
        accumulate_ordinal_grad(pred, pairs, scale, &mut grad);
        let mut offset = 0;
        for &i in participants {
            let n = works[i].pred64.len();
            for (dst, src) in works[i].d_own.iter_mut().zip(&grad[offset..offset + n]) {
                *dst += src;
            }
            offset += n;
        }
    }
    Ok(loss_sum * scale)
}

/// Blended predictions evaluated building-wise per set; sets whose tag
/// appears in `in_domain` report under the in-domain average.
pub fn evaluate_blended(
    model: &EnsembleModel,
    sets: &BTreeMap<&str, Vec<&Patch>>,
    in_domain: &BTreeSet<String>,
    workers: usize,
) -> Result<(MetricsReport, BTreeMap<String, SetResult>), TrainError> {
    let mut results = BTreeMap::new();
    for (name, patches) in sets {
        let preds: Vec<Array2<f32>> = maybe_par_map(workers, patches, |p| {
            model.forward_one(&p.image).map(|fwd| blend_one(&fwd))
        })?;
        let mut records = Vec::new();
        for (k, (patch, pred)) in patches.iter().zip(&preds).enumerate() {
            records.extend(building_records(
                &format!("{name}-{k:04}"),
                pred,
                &patch.height,
                &patch.instances,
            )?);
        }
        let group = if in_domain.contains(*name) {
            DomainGroup::In
        } else {
            DomainGroup::Out
        };
        results.insert(name.to_string(), SetResult { group, records });
    }
    let report = grouped_report(&results)?;
    Ok((report, results))
}

fn routed_branch(quality: QualityClass, branches: usize) -> usize {
    quality.index().min(branches - 1)
}

fn is_soft(quality: QualityClass, config: &TrainConfig) -> bool {
    config.balanced_soft_loss && quality != QualityClass::High
}

/// Epoch ordering of train indices: seeded shuffle, optionally re-dealt
/// round-robin by quality so every batch mixes qualities.
fn batch_order(patches: &[Patch], config: &TrainConfig, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::mix(config.seed, &[STREAM_ORDER, epoch as u64]));
    let mut order: Vec<usize> = (0..patches.len()).collect();
    order.shuffle(&mut rng);
    if !config.stratified_batches {
        return order;
    }
    let mut queues: [std::collections::VecDeque<usize>; 3] = Default::default();
    for &i in &order {
        queues[patches[i].quality.index()].push_back(i);
    }
    let mut out = Vec::with_capacity(order.len());
    while out.len() < order.len() {
        for queue in &mut queues {
            if let Some(i) = queue.pop_front() {
                out.push(i);
            }
        }
    }
    out
}

/// Order-preserving map over `items`, fanned out to rayon when `workers > 1`.
/// Both paths visit items in order and produce identical results.
fn maybe_par_map<T: Sync, U: Send, E: Send, F>(
    workers: usize,
    items: &[T],
    f: F,
) -> Result<Vec<U>, E>
where
    F: Fn(&T) -> Result<U, E> + Sync + Send,
{
    if workers > 1 {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}
