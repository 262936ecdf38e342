//! Best-of-K selection accuracy and the reference baselines around it,
//! candidate-count scaling curves, and ablation runs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_store::{
    sample_eval_groups, split_by_query, CandidateGroup, DatasetMeta, FeatureRecord, FeatureStoreError,
    LabelMode,
};
use crate::rankers::{select_best, RankerError, RankerKind, RankerParams, Variant};
use crate::training::{train, Checkpoint, TrainConfig, TrainError};

/// A regression pick counts as correct when within this of the group max.
pub const REGRESSION_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_TRIALS_PER_K: usize = 8;
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Ranker(#[from] RankerError),
    #[error(transparent)]
    Data(#[from] FeatureStoreError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("contract violation: {0}")]
    Contract(String),
}

/// Anything that assigns one score per candidate of a group.
pub trait GroupScorer: Sync {
    fn score_group(&self, group: &CandidateGroup<'_>) -> Result<Vec<f64>, RankerError>;
}

impl GroupScorer for RankerParams {
    fn score_group(&self, group: &CandidateGroup<'_>) -> Result<Vec<f64>, RankerError> {
        Ok(RankerParams::score_group(self, group)?.scores)
    }
}

/// Scores candidates by their labels: the best any ranker can do.
#[derive(Debug, Clone, Copy, Default)]
pub struct LabelOracle;

impl GroupScorer for LabelOracle {
    fn score_group(&self, group: &CandidateGroup<'_>) -> Result<Vec<f64>, RankerError> {
        Ok(group.labels.clone())
    }
}

/// Scores every candidate identically, so selection always takes index 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct FirstSample;

impl GroupScorer for FirstSample {
    fn score_group(&self, group: &CandidateGroup<'_>) -> Result<Vec<f64>, RankerError> {
        Ok(vec![0.0; group.len()])
    }
}

fn group_max(labels: &[f64]) -> f64 {
    labels.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// Whether picking candidate `pick` counts as a success.
pub fn is_success(labels: &[f64], pick: usize, mode: LabelMode) -> bool {
    match mode {
        LabelMode::Classification => labels[pick] == 1.0,
        LabelMode::Regression => labels[pick] >= group_max(labels) - REGRESSION_TOLERANCE,
    }
}

fn check_dims<S: GroupScorer>(_: &S, groups: &[CandidateGroup<'_>], d_model: Option<usize>) -> Result<(), EvalError> {
    if let Some(d) = d_model {
        if let Some(g) = groups.iter().find(|g| g.d_model() != d) {
            return Err(RankerError::Dimension {
                expected: d,
                got: g.d_model(),
            }
            .into());
        }
    }
    Ok(())
}

/// Per-group success of the scorer's pick, in group order.
pub fn selection_outcomes<S: GroupScorer>(
    scorer: &S,
    groups: &[CandidateGroup<'_>],
    mode: LabelMode,
) -> Result<Vec<bool>, EvalError> {
    groups
        .par_iter()
        .map(|g| {
            let scores = scorer.score_group(g)?;
            let pick = select_best(&scores)?;
            Ok(is_success(&g.labels, pick, mode))
        })
        .collect()
}

fn fraction(hits: impl Iterator<Item = bool>, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    hits.filter(|&h| h).count() as f64 / n as f64
}

pub fn selection_accuracy<S: GroupScorer>(
    scorer: &S,
    groups: &[CandidateGroup<'_>],
    mode: LabelMode,
) -> Result<f64, EvalError> {
    let outcomes = selection_outcomes(scorer, groups, mode)?;
    Ok(fraction(outcomes.into_iter(), groups.len()))
}

/// Fraction of groups that contain at least one correct candidate. For
/// regression data every group has a maximum, so the value is 1.0 and the
/// caveat flag is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleAccuracy {
    pub value: f64,
    pub regression_caveat: bool,
}

pub fn oracle_accuracy(groups: &[CandidateGroup<'_>], mode: LabelMode) -> OracleAccuracy {
    match mode {
        LabelMode::Classification => OracleAccuracy {
            value: fraction(groups.iter().map(|g| g.labels.contains(&1.0)), groups.len()),
            regression_caveat: false,
        },
        LabelMode::Regression => OracleAccuracy {
            value: if groups.is_empty() { 0.0 } else { 1.0 },
            regression_caveat: true,
        },
    }
}

pub fn first_sample_accuracy(groups: &[CandidateGroup<'_>], mode: LabelMode) -> f64 {
    fraction(
        groups.iter().map(|g| !g.is_empty() && is_success(&g.labels, 0, mode)),
        groups.len(),
    )
}

/// Expected accuracy of a uniformly random pick.
pub fn random_accuracy(groups: &[CandidateGroup<'_>], mode: LabelMode) -> f64 {
    if groups.is_empty() {
        return 0.0;
    }
    let total: f64 = groups
        .iter()
        .map(|g| {
            let good = (0..g.len()).filter(|&i| is_success(&g.labels, i, mode)).count();
            good as f64 / g.len() as f64
        })
        .sum();
    total / groups.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_id: u64,
    pub groups: usize,
    pub selected_correct: usize,
    pub oracle_correct: usize,
    pub first_sample_correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_id: String,
    pub ranker_id: String,
    pub label_mode: LabelMode,
    pub k: usize,
    /// Groups drawn per query.
    pub trials: usize,
    pub groups: usize,
    pub selection_accuracy: f64,
    pub oracle_accuracy: f64,
    pub oracle_regression_caveat: bool,
    pub first_sample_accuracy: f64,
    pub random_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    pub protocol: String,
    pub per_query: Vec<QueryOutcome>,
}

impl EvalReport {
    /// Fixed-width text rendering of the headline numbers.
    pub fn render_table(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![
            ("dataset".into(), short(&self.dataset_id)),
            ("ranker".into(), short(&self.ranker_id)),
            ("label mode".into(), format!("{:?}", self.label_mode).to_lowercase()),
            ("K".into(), self.k.to_string()),
            ("groups".into(), format!("{} ({} per query)", self.groups, self.trials)),
            ("selection accuracy".into(), format!("{:.4}", self.selection_accuracy)),
            (
                "oracle accuracy".into(),
                format!(
                    "{:.4}{}",
                    self.oracle_accuracy,
                    if self.oracle_regression_caveat { " (regression: trivially 1)" } else { "" }
                ),
            ),
            ("first-sample accuracy".into(), format!("{:.4}", self.first_sample_accuracy)),
            ("random accuracy".into(), format!("{:.4}", self.random_accuracy)),
        ];
        if let Some(v) = self.variant {
            rows.push(("variant".into(), serde_json::to_value(v).ok().and_then(|j| j.as_str().map(String::from)).unwrap_or_default()));
        }
        if let Some(p) = self.parameter_count {
            rows.push(("parameters".into(), p.to_string()));
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = format!("# {}\n", self.protocol);
        for (k, v) in rows {
            out.push_str(&format!("{k:<width$}  {v}\n"));
        }
        out
    }
}

fn short(id: &str) -> String {
    if id.len() > 16 && id.chars().all(|c| c.is_ascii_hexdigit()) {
        id[..16].to_string()
    } else {
        id.to_string()
    }
}

pub fn eval_protocol(k: usize, trials: usize, seed: u64) -> String {
    format!(
        "protocol: {trials} groups of K={k} per query, drawn without replacement within a group, no label filtering, seed {seed}"
    )
}

/// Evaluates `scorer` on pre-drawn groups.
pub fn evaluate_groups<S: GroupScorer>(
    scorer: &S,
    groups: &[CandidateGroup<'_>],
    mode: LabelMode,
    d_model: Option<usize>,
) -> Result<(f64, Vec<QueryOutcome>), EvalError> {
    check_dims(scorer, groups, d_model)?;
    let outcomes = selection_outcomes(scorer, groups, mode)?;
    let mut per_query: Vec<QueryOutcome> = Vec::new();
    for (g, &hit) in groups.iter().zip(&outcomes) {
        let oracle = match mode {
            LabelMode::Classification => g.labels.contains(&1.0),
            LabelMode::Regression => true,
        };
        let first = is_success(&g.labels, 0, mode);
        match per_query.last_mut() {
            Some(q) if q.query_id == g.query_id => {
                q.groups += 1;
                q.selected_correct += hit as usize;
                q.oracle_correct += oracle as usize;
                q.first_sample_correct += first as usize;
            }
            _ => per_query.push(QueryOutcome {
                query_id: g.query_id,
                groups: 1,
                selected_correct: hit as usize,
                oracle_correct: oracle as usize,
                first_sample_correct: first as usize,
            }),
        }
    }
    Ok((fraction(outcomes.into_iter(), groups.len()), per_query))
}

/// Draws evaluation groups from `records` and scores them with the
/// checkpoint's ranker.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    ranker_id: &str,
    records: &[FeatureRecord],
    meta: &DatasetMeta,
    dataset_id: &str,
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    if meta.d_model != ckpt.spec.d_model {
        return Err(RankerError::Dimension {
            expected: ckpt.spec.d_model,
            got: meta.d_model,
        }
        .into());
    }
    let params = ckpt.to_params();
    let sample = sample_eval_groups(records, k, trials, seed)?;
    let groups = &sample.groups;
    let (selection, per_query) = evaluate_groups(&params, groups, meta.label_mode, Some(meta.d_model))?;
    let oracle = oracle_accuracy(groups, meta.label_mode);
    Ok(EvalReport {
        dataset_id: dataset_id.to_string(),
        ranker_id: ranker_id.to_string(),
        label_mode: meta.label_mode,
        k,
        trials,
        groups: groups.len(),
        selection_accuracy: selection,
        oracle_accuracy: oracle.value,
        oracle_regression_caveat: oracle.regression_caveat,
        first_sample_accuracy: first_sample_accuracy(groups, meta.label_mode),
        random_accuracy: random_accuracy(groups, meta.label_mode),
        parameter_count: Some(ckpt.parameter_count()),
        variant: Some(ckpt.spec.variant),
        protocol: eval_protocol(k, trials, seed),
        per_query,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub mean: f64,
    /// Standard deviation of per-query accuracy across queries.
    pub std: f64,
    pub queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCurve {
    pub points: Vec<CurvePoint>,
    /// Requested K values larger than the smallest response pool.
    pub skipped_k: Vec<usize>,
    pub trials_per_k: usize,
    pub seed: u64,
    pub protocol: String,
}

impl ScalingCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("K,mean,std\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.k, p.mean, p.std));
        }
        out
    }
}

/// Selection accuracy as a function of the candidate count. For each K,
/// `trials_per_k` groups are redrawn per query from its stored pool.
pub fn scaling_curve<S: GroupScorer>(
    scorer: &S,
    records: &[FeatureRecord],
    mode: LabelMode,
    k_values: &[usize],
    trials_per_k: usize,
    seed: u64,
) -> Result<ScalingCurve, EvalError> {
    if trials_per_k == 0 {
        return Err(EvalError::Contract("trials_per_k must be >= 1".into()));
    }
    let min_pool = records.iter().map(|r| r.responses.len()).min().unwrap_or(0);
    let mut points = Vec::new();
    let mut skipped_k = Vec::new();
    for &k in k_values {
        if k == 0 || k > min_pool {
            log::warn!("K={k} exceeds the smallest response pool ({min_pool}); skipped");
            skipped_k.push(k);
            continue;
        }
        let k_seed = seed ^ (k as u64).wrapping_mul(0x2545_F491_4F6C_DD1D);
        let sample = sample_eval_groups(records, k, trials_per_k, k_seed)?;
        let outcomes = selection_outcomes(scorer, &sample.groups, mode)?;
        let per_query: Vec<f64> = outcomes
            .chunks(trials_per_k)
            .map(|c| c.iter().filter(|&&h| h).count() as f64 / c.len() as f64)
            .collect();
        let q = per_query.len() as f64;
        let mean = per_query.iter().sum::<f64>() / q;
        let var = per_query.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / q;
        points.push(CurvePoint {
            k,
            mean,
            std: var.sqrt(),
            queries: per_query.len(),
        });
    }
    Ok(ScalingCurve {
        points,
        skipped_k,
        trials_per_k,
        seed,
        protocol: format!(
            "protocol: per K, {trials_per_k} groups per query resampled without replacement from the stored pool; mean over queries, population std across queries; seed {seed}"
        ),
    })
}

/// Trains `variant` on 90% of the queries and evaluates it on the held-out 10%.
pub fn ablation_run(
    variant: Variant,
    config: &TrainConfig,
    records: Vec<FeatureRecord>,
    meta: &DatasetMeta,
) -> Result<(EvalReport, Checkpoint), EvalError> {
    if variant == Variant::NoMlpBlock && config.ranker != RankerKind::Pointwise {
        return Err(EvalError::Contract("no_mlp_block applies to pointwise rankers only".into()));
    }
    let mut config = config.clone();
    config.variant = variant;
    let (train_recs, val_recs) = split_by_query(records, DEFAULT_VALIDATION_FRACTION, config.seed)?;
    let (ckpt, _) = train(&config, &train_recs, meta)?;
    let mut report = evaluate_checkpoint(
        &ckpt,
        &format!("{:?}/{variant:?}", config.ranker).to_lowercase(),
        &val_recs,
        meta,
        "held-out 10% of queries",
        config.group_size,
        DEFAULT_TRIALS_PER_K,
        config.seed,
    )?;
    report.parameter_count = Some(config.ranker_spec(meta.d_model).parameter_count());
    Ok((report, ckpt))
}
