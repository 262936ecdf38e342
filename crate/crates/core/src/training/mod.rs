//! Training: configuration, batched loss/gradient evaluation, the epoch
//! loop, checkpoints, and grid search.

mod checkpoint;
mod grid;
mod optim;
mod schedule;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointError,
    NamedTensor, LRCK_MAGIC, LRCK_VERSION,
};
pub use grid::{grid_search, GridOutcome, GridPoint, GridSpace};
pub use optim::{adamw_step, sgd_step, AdamState, OptimError, OptimState, OptimizerConfig, ADAM_EPS};
pub use schedule::{lr_at, Schedule};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_store::{
    dataset_fingerprint, sample_groups, CandidateGroup, DatasetMeta, FeatureRecord, FeatureStoreError,
    LabelMode,
};
use crate::numkernel::{Tape, Tensor2};
use crate::objectives::{
    list_cls_loss, list_reg_loss, point_cls_loss, point_reg_loss, LossKind, ObjectiveError,
};
use crate::rankers::{RankerError, RankerKind, RankerParams, RankerSpec, RelevanceKind, Variant};

/// Groups per tape during listwise training.
const LIST_CHUNK: usize = 16;
/// Pairs per tape during pointwise training.
const POINT_CHUNK: usize = 128;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Data(#[from] FeatureStoreError),
    #[error(transparent)]
    Ranker(#[from] RankerError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no training data left after sampling: {0}")]
    EmptyAfterFilter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Cls,
    Reg,
}

impl std::str::FromStr for Objective {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cls" => Ok(Objective::Cls),
            "reg" => Ok(Objective::Reg),
            other => Err(format!("unknown loss `{other}` (expected cls or reg)")),
        }
    }
}

/// Full training recipe. Defaults follow the ranker hyperparameter table:
/// batch 256, one epoch, AdamW(1e-4, (0.9, 0.999)), weight decay 1e-4,
/// constant schedule, d_proj 64, K = 10.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub ranker: RankerKind,
    pub relevance: RelevanceKind,
    pub loss: Objective,
    pub variant: Variant,
    pub d_proj: usize,
    pub d_hidden: usize,
    pub block_count: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub group_size: usize,
    pub groups_per_query: usize,
    /// Multiplier on cosine logits before the softmax or sigmoid.
    pub logit_scale: f64,
    pub seed: u64,
}

pub const DEFAULT_SEED: u64 = 20_250_101;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ranker: RankerKind::Listwise,
            relevance: RelevanceKind::Cosine,
            loss: Objective::Cls,
            variant: Variant::Full,
            d_proj: crate::rankers::DEFAULT_D_PROJ,
            d_hidden: crate::rankers::DEFAULT_D_HIDDEN,
            block_count: 1,
            batch_size: 256,
            epochs: 1,
            optimizer: OptimizerConfig::adamw(1e-4),
            weight_decay: 1e-4,
            schedule: Schedule::Constant,
            group_size: 10,
            groups_per_query: 16,
            logit_scale: 1.0,
            seed: DEFAULT_SEED,
        }
    }
}

impl TrainConfig {
    /// Defaults for `ranker` trained on `loss`, with the relevance function
    /// that goes with it (cosine for classification, learnable for regression).
    pub fn new(ranker: RankerKind, loss: Objective) -> Self {
        Self {
            ranker,
            loss,
            relevance: match loss {
                Objective::Cls => RelevanceKind::Cosine,
                Objective::Reg => RelevanceKind::Learnable,
            },
            ..Self::default()
        }
    }

    pub fn loss_kind(&self) -> LossKind {
        match (self.ranker, self.loss) {
            (RankerKind::Listwise, Objective::Cls) => LossKind::ListCls,
            (RankerKind::Listwise, Objective::Reg) => LossKind::ListReg,
            (RankerKind::Pointwise, Objective::Cls) => LossKind::PointCls,
            (RankerKind::Pointwise, Objective::Reg) => LossKind::PointReg,
        }
    }

    pub fn ranker_spec(&self, d_model: usize) -> RankerSpec {
        RankerSpec {
            kind: self.ranker,
            relevance: self.relevance,
            d_model,
            d_proj: self.d_proj,
            d_hidden: self.d_hidden,
            block_count: self.block_count,
            variant: self.variant,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.group_size < 2 {
            return bad(format!("group size must be >= 2, got {}", self.group_size));
        }
        if self.groups_per_query < 1 || self.batch_size < 1 {
            return bad("groups_per_query and batch_size must be >= 1".into());
        }
        if self.loss == Objective::Reg && self.relevance == RelevanceKind::Cosine {
            return bad("regression losses need the learnable relevance (cosine scores are bounded)".into());
        }
        if !(self.logit_scale.is_finite() && self.logit_scale > 0.0) {
            return bad(format!("logit_scale must be positive, got {}", self.logit_scale));
        }
        let lr = self.optimizer.lr();
        if !(lr.is_finite() && lr >= 0.0) || !self.weight_decay.is_finite() {
            return bad("learning rate and weight decay must be finite and non-negative".into());
        }
        Ok(())
    }

    fn check_data(&self, meta: &DatasetMeta) -> Result<(), TrainError> {
        if self.loss == Objective::Cls && meta.label_mode != LabelMode::Classification {
            return Err(TrainError::Config(
                "classification loss needs a dataset with binary labels".into(),
            ));
        }
        Ok(())
    }

    /// Effective logit multiplier: only cosine scores are rescaled.
    fn score_scale(&self) -> f64 {
        match self.relevance {
            RelevanceKind::Cosine => self.logit_scale,
            RelevanceKind::Learnable => 1.0,
        }
    }
}

/// One unit of pointwise training data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pair<'a> {
    pub instruction: &'a [f32],
    pub response: &'a [f32],
    pub label: f64,
}

/// Flattens groups into (instruction, response, label) pairs.
pub fn pairs_from_groups<'a>(groups: &[CandidateGroup<'a>]) -> Vec<Pair<'a>> {
    groups
        .iter()
        .flat_map(|g| {
            g.candidates.iter().zip(&g.labels).map(|(c, &label)| Pair {
                instruction: g.instruction,
                response: c,
                label,
            })
        })
        .collect()
}

/// Batch-averaged loss and parameter gradients.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub loss: f64,
    pub grads: Vec<Tensor2>,
}

fn zero_grads(params: &RankerParams) -> Vec<Tensor2> {
    params
        .tensors()
        .iter()
        .map(|t| Tensor2::zeros(t.rows(), t.cols()))
        .collect()
}

fn sum_chunks(params: &RankerParams, parts: Vec<BatchGradient>) -> BatchGradient {
    let mut total = BatchGradient {
        loss: 0.0,
        grads: zero_grads(params),
    };
    for part in parts {
        total.loss += part.loss;
        for (t, g) in total.grads.iter_mut().zip(&part.grads) {
            t.add_assign(g);
        }
    }
    total
}

/// Listwise loss and gradient over a batch of groups. Chunks are reduced in
/// a fixed order, so the result does not depend on the worker count.
pub fn listwise_batch_gradient(
    params: &RankerParams,
    groups: &[&CandidateGroup<'_>],
    loss: LossKind,
    logit_scale: f64,
) -> Result<BatchGradient, TrainError> {
    if !loss.is_listwise() {
        return Err(TrainError::Config(format!("{loss:?} is not a listwise loss")));
    }
    let n = groups.len();
    let layout = params.layout();
    let parts = groups
        .par_chunks(LIST_CHUNK)
        .map(|chunk| -> Result<BatchGradient, TrainError> {
            let mut tape = Tape::new(params.tensors());
            let mut vars = Vec::with_capacity(chunk.len());
            let mut scores = Vec::with_capacity(chunk.len());
            for g in chunk {
                let v = params.listwise_on_tape(&mut tape, &layout, g.instruction, &g.candidates)?;
                scores.push(
                    tape.value(v.scores)
                        .data()
                        .iter()
                        .map(|s| s * logit_scale)
                        .collect::<Vec<_>>(),
                );
                vars.push(v.scores);
            }
            let labels: Vec<Vec<f64>> = chunk.iter().map(|g| g.labels.clone()).collect();
            let report = match loss {
                LossKind::ListCls => list_cls_loss(&scores, &labels)?,
                _ => list_reg_loss(&scores, &labels)?,
            };
            let weight = chunk.len() as f64 / n as f64;
            let mut offset = 0;
            let seeds: Vec<_> = vars
                .iter()
                .zip(&scores)
                .map(|(&v, s)| {
                    let g: Vec<f64> = report.grads[offset..offset + s.len()]
                        .iter()
                        .map(|x| x * weight * logit_scale)
                        .collect();
                    offset += s.len();
                    (v, Tensor2::from_vec(s.len(), 1, g))
                })
                .collect();
            let mut grads = zero_grads(params);
            tape.backward(&seeds, &mut grads);
            Ok(BatchGradient {
                loss: report.loss * weight,
                grads,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(sum_chunks(params, parts))
}

/// Pointwise loss and gradient over a batch of pairs.
pub fn pointwise_batch_gradient(
    params: &RankerParams,
    pairs: &[&Pair<'_>],
    loss: LossKind,
    logit_scale: f64,
) -> Result<BatchGradient, TrainError> {
    if loss.is_listwise() {
        return Err(TrainError::Config(format!("{loss:?} is not a pointwise loss")));
    }
    let n = pairs.len();
    let layout = params.layout();
    let parts = pairs
        .par_chunks(POINT_CHUNK)
        .map(|chunk| -> Result<BatchGradient, TrainError> {
            let mut tape = Tape::new(params.tensors());
            let inputs: Vec<_> = chunk.iter().map(|p| (p.instruction, p.response)).collect();
            let v = params.pointwise_on_tape(&mut tape, &layout, &inputs)?;
            let scores: Vec<f64> = tape.value(v.scores).data().iter().map(|s| s * logit_scale).collect();
            let labels: Vec<f64> = chunk.iter().map(|p| p.label).collect();
            let report = match loss {
                LossKind::PointCls => point_cls_loss(&scores, &labels)?,
                _ => point_reg_loss(&scores, &labels)?,
            };
            let weight = chunk.len() as f64 / n as f64;
            let seed: Vec<f64> = report.grads.iter().map(|g| g * weight * logit_scale).collect();
            let mut grads = zero_grads(params);
            tape.backward(&[(v.scores, Tensor2::from_vec(chunk.len(), 1, seed))], &mut grads);
            Ok(BatchGradient {
                loss: report.loss * weight,
                grads,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(sum_chunks(params, parts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchLog {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub batch_size: usize,
    /// The update was skipped because of a non-finite gradient.
    pub aborted: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub batches: Vec<BatchLog>,
    pub groups: usize,
    pub units: usize,
    pub total_steps: usize,
    pub skipped_short_queries: usize,
    pub under_filled_queries: usize,
}

impl TrainLog {
    pub fn first_loss(&self) -> Option<f64> {
        self.batches.first().map(|b| b.loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.batches.last().map(|b| b.loss)
    }

    pub fn aborted_steps(&self) -> usize {
        self.batches.iter().filter(|b| b.aborted).count()
    }
}

/// Trains a ranker per `config` and returns its parameters at full precision.
pub fn train_params(
    config: &TrainConfig,
    records: &[FeatureRecord],
    meta: &DatasetMeta,
) -> Result<(RankerParams, TrainLog), TrainError> {
    config.validate()?;
    config.check_data(meta)?;
    let spec = config.ranker_spec(meta.d_model);
    let mut params = RankerParams::init(spec, config.seed)?;

    let sample = sample_groups(
        records,
        config.group_size,
        config.groups_per_query,
        meta.label_mode,
        config.seed,
    )?;
    if sample.groups.is_empty() {
        let cause = match meta.label_mode {
            LabelMode::Classification => format!(
                "the positive/negative filter discarded every group of size {} ({} of {} queries had fewer responses)",
                config.group_size,
                sample.skipped_short,
                records.len()
            ),
            LabelMode::Regression => format!(
                "no query has at least {} responses",
                config.group_size
            ),
        };
        return Err(TrainError::EmptyAfterFilter(cause));
    }
    let loss = config.loss_kind();
    let pairs = if loss.is_listwise() {
        Vec::new()
    } else {
        pairs_from_groups(&sample.groups)
    };
    let units = if loss.is_listwise() {
        sample.groups.len()
    } else {
        pairs.len()
    };

    let batches_per_epoch = units.div_ceil(config.batch_size);
    let total_steps = batches_per_epoch * config.epochs;
    let mut log = TrainLog {
        groups: sample.groups.len(),
        units,
        total_steps,
        skipped_short_queries: sample.skipped_short,
        under_filled_queries: sample.under_filled,
        ..TrainLog::default()
    };
    let mut state = OptimState::new(&config.optimizer, params.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5348_5546_464c_4521);
    let mut order: Vec<usize> = (0..units).collect();
    let scale = config.score_scale();
    let mut step = 0;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let grad = if loss.is_listwise() {
                let refs: Vec<_> = batch.iter().map(|&i| &sample.groups[i]).collect();
                listwise_batch_gradient(&params, &refs, loss, scale)?
            } else {
                let refs: Vec<_> = batch.iter().map(|&i| &pairs[i]).collect();
                pointwise_batch_gradient(&params, &refs, loss, scale)?
            };
            let lr = lr_at(config.schedule, config.optimizer.lr(), step, total_steps);
            let aborted = match state.step(&config.optimizer, params.tensors_mut(), &grad.grads, lr, config.weight_decay) {
                Ok(()) => false,
                Err(OptimError::NonFiniteGradient { tensor }) => {
                    log::warn!("step {step}: non-finite gradient in tensor {tensor}, update skipped");
                    true
                }
                Err(e) => return Err(TrainError::Config(e.to_string())),
            };
            log.batches.push(BatchLog {
                step,
                loss: grad.loss,
                lr,
                batch_size: batch.len(),
                aborted,
            });
            step += 1;
        }
    }
    Ok((params, log))
}

/// Trains a ranker and packages it as a checkpoint (parameters rounded to
/// `f32`, the stored precision).
pub fn train(
    config: &TrainConfig,
    records: &[FeatureRecord],
    meta: &DatasetMeta,
) -> Result<(Checkpoint, TrainLog), TrainError> {
    let (params, log) = train_params(config, records, meta)?;
    let fingerprint = dataset_fingerprint(records, meta)?;
    Ok((Checkpoint::from_params(&params, config.clone(), fingerprint), log))
}
