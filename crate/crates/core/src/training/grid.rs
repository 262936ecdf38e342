//! Exhaustive hyperparameter grid over batch size, optimizer and schedule.

use serde::{Deserialize, Serialize};

use super::{train_params, OptimizerConfig, Schedule, TrainConfig, TrainError};
use crate::evaluation::{selection_accuracy, DEFAULT_VALIDATION_FRACTION};
use crate::feature_store::{sample_eval_groups, split_by_query, DatasetMeta, FeatureRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpace {
    pub batch_sizes: Vec<usize>,
    pub optimizers: Vec<OptimizerConfig>,
    pub schedules: Vec<Schedule>,
}

impl Default for GridSpace {
    fn default() -> Self {
        let mut optimizers = Vec::new();
        for lr in [0.05, 0.1, 0.5, 1.0] {
            for momentum in [0.0, 0.9] {
                optimizers.push(OptimizerConfig::sgd(lr, momentum));
            }
        }
        optimizers.push(OptimizerConfig::adamw(1e-5));
        optimizers.push(OptimizerConfig::adamw(1e-4));
        Self {
            batch_sizes: vec![256, 1024],
            optimizers,
            schedules: vec![Schedule::Constant, Schedule::CosineDecay],
        }
    }
}

impl GridSpace {
    pub fn len(&self) -> usize {
        self.batch_sizes.len() * self.optimizers.len() * self.schedules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Configurations in enumeration order: batch size, then optimizer, then
    /// schedule.
    pub fn configs(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::with_capacity(self.len());
        for &batch_size in &self.batch_sizes {
            for &optimizer in &self.optimizers {
                for &schedule in &self.schedules {
                    out.push(TrainConfig {
                        batch_size,
                        optimizer,
                        schedule,
                        ..base.clone()
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub config: TrainConfig,
    pub accuracy: Option<f64>,
    pub final_loss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub best: Option<TrainConfig>,
    pub best_accuracy: Option<f64>,
    pub results: Vec<GridPoint>,
    pub protocol: String,
}

impl GridOutcome {
    pub fn render_table(&self) -> String {
        let mut out = format!("# {}\n", self.protocol);
        out.push_str(&format!(
            "{:>6}  {:<28}  {:<12}  {:>8}  {:>10}\n",
            "batch", "optimizer", "schedule", "acc", "loss"
        ));
        for p in &self.results {
            let acc = p.accuracy.map_or("-".into(), |a| format!("{a:.4}"));
            let loss = p.final_loss.map_or("-".into(), |l| format!("{l:.5}"));
            out.push_str(&format!(
                "{:>6}  {:<28}  {:<12}  {:>8}  {:>10}{}\n",
                p.config.batch_size,
                p.config.optimizer.label(),
                format!("{:?}", p.config.schedule).to_lowercase(),
                acc,
                loss,
                p.error.as_ref().map_or(String::new(), |e| format!("  error: {e}"))
            ));
        }
        out
    }
}

/// Trains every grid point on 90% of the queries and scores it on the
/// remaining 10%. A failing point is recorded and the search continues.
/// Ties on accuracy keep the earliest point.
pub fn grid_search(
    space: &GridSpace,
    base: &TrainConfig,
    records: Vec<FeatureRecord>,
    meta: &DatasetMeta,
) -> Result<GridOutcome, TrainError> {
    let (train_recs, val_recs) = split_by_query(records, DEFAULT_VALIDATION_FRACTION, base.seed)?;
    let val = sample_eval_groups(&val_recs, base.group_size, base.groups_per_query, base.seed)?;
    let mut results = Vec::with_capacity(space.len());
    for config in space.configs(base) {
        let point = match train_params(&config, &train_recs, meta) {
            Ok((params, log)) => match selection_accuracy(&params, &val.groups, meta.label_mode) {
                Ok(acc) => GridPoint {
                    accuracy: Some(acc),
                    final_loss: log.last_loss(),
                    error: None,
                    config,
                },
                Err(e) => GridPoint {
                    accuracy: None,
                    final_loss: log.last_loss(),
                    error: Some(e.to_string()),
                    config,
                },
            },
            Err(e) => GridPoint {
                accuracy: None,
                final_loss: None,
                error: Some(e.to_string()),
                config,
            },
        };
        log::info!(
            "grid {}/{}: {} {:?} -> {:?}",
            results.len() + 1,
            space.len(),
            point.config.optimizer.label(),
            point.config.schedule,
            point.accuracy
        );
        results.push(point);
    }
    let mut best: Option<&GridPoint> = None;
    for p in &results {
        if let Some(a) = p.accuracy {
            if best.and_then(|b| b.accuracy).is_none_or(|b| a > b) {
                best = Some(p);
            }
        }
    }
    Ok(GridOutcome {
        best: best.map(|p| p.config.clone()),
        best_accuracy: best.and_then(|p| p.accuracy),
        protocol: format!(
            "protocol: {} points; train on {:.0}% of queries, select on the held-out rest ({} groups of K={} per query, unfiltered); seed {}",
            space.len(),
            (1.0 - DEFAULT_VALIDATION_FRACTION) * 100.0,
            base.groups_per_query,
            base.group_size,
            base.seed
        ),
        results,
    })
}
