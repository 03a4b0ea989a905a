//! The training loop and the speaker-independent cross-validation driver.
//!
//! One fold trains a fresh model on eight speakers, selects the best epoch
//! on a ninth (validation) speaker, and reports test metrics on the tenth.
//! [`run_experiment`] rotates the fold assignment, repeats everything per
//! seed, and aggregates test metrics as mean ± sample standard deviation
//! across seeds.
//!
//! # Reproducibility
//!
//! All randomness within a (seed, fold) run derives from a single base seed
//! (`seed · 1000 + fold_index`) through per-purpose, per-epoch streams
//! ([`stream_seed`]). Because each epoch reseeds its own shuffle and masking
//! streams, a run resumed from a checkpoint consumes exactly the same
//! random numbers as an uninterrupted run — results are bitwise identical
//! either way.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{ConfigError, FusionConfig};
use crate::checkpoint::{self, Checkpoint, CheckpointError};
use crate::data::{
    check_speaker_coverage, make_batches, make_batches_ordered, make_fold_plan, DataError, Fold,
    FoldPlan, UtteranceRecord, N_SPEAKERS,
};
use crate::losses::{self, LossWeights};
use crate::metrics::{compute_metrics, EvalReport};
use crate::model::FusionModel;
use crate::optim::{clip_gradients, Adam};
use crate::rmm::{apply_mask, decide_epoch, Modality, RmmError, RmmSchedule};
use crate::tape::Tape;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Numeric(#[from] TensorError),
    #[error(transparent)]
    Rmm(#[from] RmmError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("non-finite loss at seed {seed}, fold {fold}, epoch {epoch}, step {step}")]
    NonFiniteLoss {
        seed: u64,
        fold: usize,
        epoch: usize,
        step: usize,
    },
}

/// Which validation quantity picks the best epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    /// Highest validation weighted accuracy wins.
    ValWar,
    /// Lowest validation multi-task loss wins.
    ValTotalLoss,
}

/// Optimization hyperparameters and the experiment-level seed list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Global L2 gradient-norm ceiling.
    pub grad_clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Every seed runs the full fold rotation.
    pub seeds: Vec<u64>,
    pub model_selection: SelectionMetric,
    /// Relative weights of the three loss terms; normalized to sum 1 before
    /// training starts.
    pub loss_weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-5,
            batch_size: 16,
            epochs: 20,
            grad_clip_norm: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seeds: vec![1, 2, 3],
            model_selection: SelectionMetric::ValWar,
            loss_weights: LossWeights::balanced(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive: [(&'static str, f64); 4] = [
            ("learning_rate", self.learning_rate),
            ("grad_clip_norm", self.grad_clip_norm),
            ("eps", self.eps),
            ("epochs", self.epochs as f64),
        ];
        for (field, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ConfigError::NonPositive { field });
            }
        }
        if self.batch_size == 0 {
            return Err(ConfigError::NonPositive { field: "batch_size" });
        }
        for (field, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0 < beta && beta < 1.0) {
                return Err(ConfigError::Invalid {
                    field,
                    reason: format!("must be in (0, 1), got {beta}"),
                });
            }
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid {
                field: "seeds",
                reason: "at least one seed is required".into(),
            });
        }
        self.normalized_weights().map(|_| ())
    }

    /// The loss weights rescaled to sum exactly 1.
    pub fn normalized_weights(&self) -> Result<LossWeights, ConfigError> {
        LossWeights::new(
            self.loss_weights.h_ce,
            self.loss_weights.h_valence,
            self.loss_weights.h_arousal,
        )
        .map_err(|_| ConfigError::Invalid {
            field: "loss_weights",
            reason: "weights must be non-negative with a positive sum".into(),
        })
    }
}

/// One experiment: architecture, optimization, and the masking schedule.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: FusionConfig,
    pub train: TrainConfig,
    pub rmm: RmmSchedule,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate()?;
        self.train.validate()?;
        self.rmm.validate()?;
        if self.rmm.enabled && self.rmm.total_epochs != self.train.epochs {
            return Err(ConfigError::Invalid {
                field: "rmm.total_epochs",
                reason: format!(
                    "masking schedule spans {} epochs but training runs {}",
                    self.rmm.total_epochs, self.train.epochs
                ),
            });
        }
        Ok(())
    }

    /// Canonical string identity of this configuration; checkpoints are
    /// fingerprinted with it (plus seed and fold) so state never crosses
    /// configurations.
    pub fn config_key(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

// ---------------------------------------------------------------------------
// Seed streams

/// Purpose of a derived RNG stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamTag {
    /// Weight initialization (epoch is ignored; use 0).
    Init = 1,
    /// Batch shuffling for one epoch.
    Shuffle = 2,
    /// The epoch's masking decision.
    Rmm = 3,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Base seed of one (experiment seed, fold) run.
pub fn fold_base_seed(seed: u64, fold_index: usize) -> u64 {
    seed.wrapping_mul(1000).wrapping_add(fold_index as u64)
}

/// Seed of one named stream in one epoch, derived by integer mixing so the
/// streams are independent of how many draws any other stream consumed.
pub fn stream_seed(base: u64, tag: StreamTag, epoch: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ tag as u64) ^ epoch as u64)
}

// ---------------------------------------------------------------------------
// Fold training

/// Per-epoch training record (also the masking audit trail).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean loss over this epoch's optimizer steps.
    pub train_loss: f64,
    /// Mean pre-clip global gradient norm.
    pub mean_grad_norm: f64,
    /// Which modality was masked this epoch, if any.
    pub masked_modality: Option<Modality>,
    pub val_loss: f64,
    pub val: EvalReport,
}

/// Outcome of one (seed, fold) training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_index: usize,
    pub seed: u64,
    /// True when all configured epochs have completed (always true unless an
    /// `epoch_budget` cut the run short).
    pub finished: bool,
    pub best_epoch: usize,
    /// Best selection value (negated loss when selecting by loss, so larger
    /// is always better).
    pub best_value: f64,
    /// Stats for the epochs executed in this invocation.
    pub epochs: Vec<EpochStats>,
    /// Test metrics of the best-epoch snapshot.
    pub test: EvalReport,
}

/// What to train on and where to keep restartable state.
#[derive(Debug, Clone)]
pub struct FoldContext<'a> {
    pub records: &'a [UtteranceRecord],
    pub fold: &'a Fold,
    pub fold_index: usize,
    pub seed: u64,
    /// When set, state is saved here after every epoch, and an existing file
    /// resumes the run instead of starting over.
    pub checkpoint_path: Option<PathBuf>,
    /// Maximum epochs to execute in this invocation (for deliberately
    /// interrupted runs); `None` runs to the configured end.
    pub epoch_budget: Option<usize>,
}

struct BestState {
    epoch: usize,
    value: f64,
    snapshot: Vec<(String, crate::tensor::Tensor)>,
}

fn selection_value(metric: SelectionMetric, val: &EvalReport, val_loss: f64) -> f64 {
    match metric {
        SelectionMetric::ValWar => val.war,
        SelectionMetric::ValTotalLoss => -val_loss,
    }
}

fn records_for(records: &[UtteranceRecord], speakers: &[usize]) -> Vec<UtteranceRecord> {
    records
        .iter()
        .filter(|r| speakers.contains(&r.speaker_id))
        .cloned()
        .collect()
}

/// Evaluates a model on a record set: pooled metrics over everything (one
/// concordance computation across all samples, not a mean of batch values)
/// plus the weighted loss under `weights`.
pub fn evaluate_records(
    model: &FusionModel,
    records: &[UtteranceRecord],
    batch_size: usize,
    weights: &LossWeights,
) -> Result<(EvalReport, f64), TrainError> {
    use crate::data::Emotion;
    let batches = make_batches_ordered(records, batch_size)?;
    let mut pred_labels = Vec::with_capacity(records.len());
    let mut truth = Vec::with_capacity(records.len());
    let mut pred_v = Vec::with_capacity(records.len());
    let mut pred_a = Vec::with_capacity(records.len());
    let mut true_v = Vec::with_capacity(records.len());
    let mut true_a = Vec::with_capacity(records.len());
    let mut ce_sum = 0.0;
    for batch in &batches {
        let pred = model.predict_batch(batch)?;
        for i in 0..batch.len() {
            pred_labels.push(Emotion::from_index(pred.labels[i]).expect("argmax over 4 classes"));
            truth.push(Emotion::from_index(batch.emotions[i]).expect("stored label"));
            if weights.h_ce > 0.0 {
                let row = &pred.logits[i];
                let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                ce_sum += lse - row[batch.emotions[i]];
            }
        }
        pred_v.extend_from_slice(&pred.valence);
        pred_a.extend_from_slice(&pred.arousal);
        true_v.extend_from_slice(&batch.valence);
        true_a.extend_from_slice(&batch.arousal);
    }
    let report = compute_metrics(&pred_labels, &truth, &pred_v, &true_v, &pred_a, &true_a)?;
    let mut loss = 0.0;
    if weights.h_ce > 0.0 {
        loss += weights.h_ce * ce_sum / pred_labels.len() as f64;
    }
    if weights.h_valence > 0.0 {
        loss += weights.h_valence * (1.0 - report.ccc_valence);
    }
    if weights.h_arousal > 0.0 {
        loss += weights.h_arousal * (1.0 - report.ccc_arousal);
    }
    Ok((report, loss))
}

/// Trains one fold from scratch or from its checkpoint; returns the fold's
/// epoch log and best-snapshot test metrics.
pub fn train_fold(
    config: &ExperimentConfig,
    ctx: &FoldContext,
) -> Result<FoldResult, TrainError> {
    config.validate()?;
    let weights = config.train.normalized_weights()?;
    let train_records = records_for(ctx.records, &ctx.fold.train_speakers);
    let val_records = records_for(ctx.records, &[ctx.fold.val_speaker]);
    let test_records = records_for(ctx.records, &[ctx.fold.test_speaker]);
    if train_records.is_empty() || val_records.is_empty() || test_records.is_empty() {
        return Err(DataError::EmptyRecords.into());
    }

    let base = fold_base_seed(ctx.seed, ctx.fold_index);
    let config_key = format!(
        "{}|seed={}|fold={}",
        config.config_key(),
        ctx.seed,
        ctx.fold_index
    );

    let mut model = FusionModel::new(&config.model, stream_seed(base, StreamTag::Init, 0))?;
    let mut adam = Adam::new(
        &model.params,
        config.train.learning_rate,
        config.train.beta1,
        config.train.beta2,
        config.train.eps,
    );
    let mut start_epoch = 0usize;
    let mut best: Option<BestState> = None;

    if let Some(path) = &ctx.checkpoint_path {
        if path.exists() {
            let ckpt = checkpoint::load(path, Some(&config_key))?;
            model
                .params
                .restore(&ckpt.params)
                .map_err(CheckpointError::Corrupt)?;
            adam = ckpt.adam;
            start_epoch = ckpt.completed_epochs;
            best = match (ckpt.best_epoch, ckpt.best_params) {
                (Some(epoch), Some(snapshot)) => Some(BestState {
                    epoch,
                    value: ckpt.best_value,
                    snapshot,
                }),
                _ => None,
            };
            log::info!(
                "seed {} fold {}: resumed after {} completed epochs",
                ctx.seed,
                ctx.fold_index,
                start_epoch
            );
        }
    }

    let end_epoch = match ctx.epoch_budget {
        Some(budget) => config.train.epochs.min(start_epoch + budget),
        None => config.train.epochs,
    };

    let mut epochs_log = Vec::new();
    for epoch in start_epoch..end_epoch {
        let mut rmm_rng = ChaCha8Rng::seed_from_u64(stream_seed(base, StreamTag::Rmm, epoch));
        let decision = decide_epoch(epoch, &config.rmm, &mut rmm_rng)?;

        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(stream_seed(base, StreamTag::Shuffle, epoch));
        let batches = make_batches(&train_records, config.train.batch_size, &mut shuffle_rng)?;

        let mut loss_sum = 0.0;
        let mut norm_sum = 0.0;
        let mut steps = 0usize;
        for (step, batch) in batches.iter().enumerate() {
            let (masked, frozen) = apply_mask(&decision, batch, &model);
            let mut tape = Tape::new();
            let vars = model.params.bind(&mut tape);
            let fw = model.forward_batch(&mut tape, &vars, &masked)?;
            let needs_pairs = weights.h_valence > 0.0 || weights.h_arousal > 0.0;
            let loss = if masked.len() < 2 && needs_pairs {
                // Concordance needs at least two samples; a trailing
                // single-sample batch contributes its categorical term only.
                if weights.h_ce == 0.0 {
                    log::warn!(
                        "skipping single-sample batch (concordance needs >= 2 samples and the categorical weight is 0)"
                    );
                    continue;
                }
                log::warn!("single-sample batch: applying the categorical term only");
                let ce = losses::cross_entropy(&mut tape, fw.logits, &masked.emotions)?;
                tape.mul_scalar(ce, weights.h_ce)
            } else {
                losses::multitask_loss(
                    &mut tape,
                    fw.logits,
                    &masked.emotions,
                    fw.pred_valence,
                    &masked.valence,
                    fw.pred_arousal,
                    &masked.arousal,
                    &weights,
                )?
            };
            let loss_value = tape.data(loss)[0];
            if !loss_value.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    seed: ctx.seed,
                    fold: ctx.fold_index,
                    epoch,
                    step,
                });
            }
            tape.backward(loss)?;
            model.params.absorb_grads(&tape, &vars);
            model.params.drop_grads(&frozen);
            let norm = clip_gradients(&mut model.params, config.train.grad_clip_norm);
            adam.step(&mut model.params)?;
            loss_sum += loss_value;
            norm_sum += norm;
            steps += 1;
        }

        let (val, val_loss) =
            evaluate_records(&model, &val_records, config.train.batch_size, &weights)?;
        let value = selection_value(config.train.model_selection, &val, val_loss);
        if best.as_ref().map_or(true, |b| value > b.value) {
            best = Some(BestState {
                epoch,
                value,
                snapshot: model.params.snapshot(),
            });
        }

        let denom = steps.max(1) as f64;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / denom,
            mean_grad_norm: norm_sum / denom,
            masked_modality: decision.masked_modality,
            val_loss,
            val,
        };
        log::info!(
            "seed {} fold {} epoch {}: train_loss {:.4} val_loss {:.4} val_war {:.4}{}",
            ctx.seed,
            ctx.fold_index,
            epoch,
            stats.train_loss,
            stats.val_loss,
            stats.val.war,
            match stats.masked_modality {
                Some(Modality::Audio) => " (audio masked)",
                Some(Modality::Text) => " (text masked)",
                None => "",
            }
        );
        epochs_log.push(stats);

        if let Some(path) = &ctx.checkpoint_path {
            let b = best.as_ref().expect("best is set after the first epoch");
            checkpoint::save(
                path,
                &config_key,
                &Checkpoint {
                    model_config: config.model.clone(),
                    completed_epochs: epoch + 1,
                    best_epoch: Some(b.epoch),
                    best_value: b.value,
                    params: model.params.snapshot(),
                    adam: adam.clone(),
                    best_params: Some(b.snapshot.clone()),
                },
            )?;
        }
    }

    let best = best.ok_or_else(|| {
        CheckpointError::Corrupt("checkpoint has completed epochs but no best snapshot".into())
    })?;
    model
        .params
        .restore(&best.snapshot)
        .map_err(CheckpointError::Corrupt)?;
    let (test, _) = evaluate_records(&model, &test_records, config.train.batch_size, &weights)?;

    Ok(FoldResult {
        fold_index: ctx.fold_index,
        seed: ctx.seed,
        finished: end_epoch == config.train.epochs,
        best_epoch: best.epoch,
        best_value: best.value,
        epochs: epochs_log,
        test,
    })
}

// ---------------------------------------------------------------------------
// Experiment driver

/// Mean and sample standard deviation (n−1 denominator; 0 for one value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MetricSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    MetricSummary { mean, std }
}

/// Fold-averaged test metrics of one seed's full rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedMeans {
    pub war: f64,
    pub uar: f64,
    pub ccc_valence: f64,
    pub ccc_arousal: f64,
}

/// All fold results of one seed.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub folds: Vec<FoldResult>,
    pub means: SeedMeans,
}

/// Cross-validated, multi-seed experiment result.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub fold_plan: FoldPlan,
    pub per_seed: Vec<SeedOutcome>,
    pub war: MetricSummary,
    pub uar: MetricSummary,
    pub ccc_valence: MetricSummary,
    pub ccc_arousal: MetricSummary,
}

fn seed_means(folds: &[FoldResult]) -> SeedMeans {
    let n = folds.len() as f64;
    SeedMeans {
        war: folds.iter().map(|f| f.test.war).sum::<f64>() / n,
        uar: folds.iter().map(|f| f.test.uar).sum::<f64>() / n,
        ccc_valence: folds.iter().map(|f| f.test.ccc_valence).sum::<f64>() / n,
        ccc_arousal: folds.iter().map(|f| f.test.ccc_arousal).sum::<f64>() / n,
    }
}

/// Runs the full protocol: every fold of the rotation for every seed, with
/// up to `jobs` folds training in parallel. When `checkpoint_dir` is given,
/// each (seed, fold) run keeps a restartable checkpoint there.
pub fn run_experiment(
    config: &ExperimentConfig,
    records: &[UtteranceRecord],
    checkpoint_dir: Option<&std::path::Path>,
    jobs: usize,
) -> Result<ExperimentOutcome, TrainError> {
    config.validate()?;
    check_speaker_coverage(records)?;
    let plan = make_fold_plan(N_SPEAKERS)?;
    let jobs = jobs.max(1);

    // Flat job list in deterministic order; workers pull the next index.
    let contexts: Vec<FoldContext> = config
        .train
        .seeds
        .iter()
        .flat_map(|&seed| {
            plan.folds.iter().enumerate().map(move |(k, fold)| FoldContext {
                records,
                fold,
                fold_index: k,
                seed,
                checkpoint_path: checkpoint_dir
                    .map(|dir| dir.join(format!("seed{seed}_fold{k}.ckpt"))),
                epoch_budget: None,
            })
        })
        .collect();

    let mut results: Vec<Option<Result<FoldResult, TrainError>>> =
        (0..contexts.len()).map(|_| None).collect();

    if jobs == 1 {
        for (slot, ctx) in results.iter_mut().zip(&contexts) {
            *slot = Some(train_fold(config, ctx));
        }
    } else {
        use std::sync::Mutex;
        let next = Mutex::new(0usize);
        let slots = Mutex::new(&mut results);
        std::thread::scope(|scope| {
            for _ in 0..jobs.min(contexts.len()) {
                scope.spawn(|| loop {
                    let idx = {
                        let mut guard = next.lock().expect("job counter");
                        let idx = *guard;
                        *guard += 1;
                        idx
                    };
                    if idx >= contexts.len() {
                        break;
                    }
                    let outcome = train_fold(config, &contexts[idx]);
                    slots.lock().expect("result slots")[idx] = Some(outcome);
                });
            }
        });
    }

    let mut flat = Vec::with_capacity(results.len());
    for slot in results {
        flat.push(slot.expect("every job ran")?);
    }

    let folds_per_seed = plan.folds.len();
    let per_seed: Vec<SeedOutcome> = config
        .train
        .seeds
        .iter()
        .enumerate()
        .map(|(i, &seed)| {
            let folds: Vec<FoldResult> =
                flat[i * folds_per_seed..(i + 1) * folds_per_seed].to_vec();
            let means = seed_means(&folds);
            SeedOutcome { seed, folds, means }
        })
        .collect();

    let collect = |f: fn(&SeedMeans) -> f64| -> Vec<f64> {
        per_seed.iter().map(|s| f(&s.means)).collect()
    };
    Ok(ExperimentOutcome {
        fold_plan: plan,
        war: mean_std(&collect(|m| m.war)),
        uar: mean_std(&collect(|m| m.uar)),
        ccc_valence: mean_std(&collect(|m| m.ccc_valence)),
        ccc_arousal: mean_std(&collect(|m| m.ccc_arousal)),
        per_seed,
    })
}
