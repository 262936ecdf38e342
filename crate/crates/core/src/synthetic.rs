//! Synthetic feature sets with a planted linear rule, for tests and smoke
//! runs without a language model.
//!
//! Every feature is `topic_q + t·√d·u + ε` for a shared unit direction `u`,
//! a per-query topic vector and isotropic noise. A response is positive iff
//! `u·x > 0`; the planted coordinate `t` is kept at least `margin` away from
//! zero so the rule separates the classes. Instructions carry `+signal` along
//! `u`, so positives also sit closer to their instruction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::feature_store::{DatasetMeta, FeatureRecord, LabelMode, Response};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub d_model: usize,
    pub queries: usize,
    pub responses_per_query: usize,
    /// Per-query positive rate is drawn uniformly from this range.
    pub positive_rate: (f64, f64),
    pub margin: f64,
    pub signal: f64,
    pub topic_scale: f64,
    pub noise: f64,
    pub label_mode: LabelMode,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            d_model: 256,
            queries: 500,
            responses_per_query: 40,
            positive_rate: (0.1, 0.5),
            margin: 0.15,
            signal: 0.4,
            topic_scale: 1.0,
            noise: 1.0,
            label_mode: LabelMode::Classification,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub records: Vec<FeatureRecord>,
    pub meta: DatasetMeta,
    /// The planted unit direction.
    pub direction: Vec<f64>,
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

pub fn generate(spec: &SyntheticSpec) -> SyntheticData {
    assert!(spec.d_model >= 2, "d_model must be >= 2");
    let (lo, hi) = spec.positive_rate;
    assert!(0.0 <= lo && lo <= hi && hi <= 1.0, "positive_rate must be a sub-range of [0,1]");
    let d = spec.d_model;
    let root_d = (d as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let raw = normal_vec(&mut rng, d, 1.0);
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    let u: Vec<f64> = raw.iter().map(|x| x / norm).collect();

    // Writes `base + t·√d·u + noise`, then removes any stray component along
    // `u` so the realized planted coordinate is exactly `t`.
    let place = |rng: &mut ChaCha8Rng, base: &[f64], t: f64| -> Vec<f64> {
        let mut x: Vec<f64> = base
            .iter()
            .zip(normal_vec(rng, d, spec.noise))
            .map(|(b, e)| b + e)
            .collect();
        let along: f64 = x.iter().zip(&u).map(|(a, b)| a * b).sum();
        for (xi, ui) in x.iter_mut().zip(&u) {
            *xi += (t * root_d - along) * ui;
        }
        x
    };

    let mut records = Vec::with_capacity(spec.queries);
    for q in 0..spec.queries {
        let topic = normal_vec(&mut rng, d, spec.topic_scale);
        let instruction = place(&mut rng, &topic, spec.signal);
        let rate = rng.random_range(lo..=hi);
        let responses = (0..spec.responses_per_query)
            .map(|_| {
                let extra = rng.sample::<f64, _>(StandardNormal).abs() * 0.5;
                let (t, label) = match spec.label_mode {
                    LabelMode::Classification => {
                        if rng.random_bool(rate) {
                            (spec.margin + extra, 1.0)
                        } else {
                            (-(spec.margin + extra), 0.0)
                        }
                    }
                    LabelMode::Regression => {
                        let t = rng.random_range(-1.0..1.0) * (spec.margin + 1.0);
                        (t, t as f32)
                    }
                };
                Response {
                    feature: to_f32(&place(&mut rng, &topic, t)),
                    label,
                }
            })
            .collect();
        records.push(FeatureRecord {
            query_id: q as u64,
            instruction: to_f32(&instruction),
            responses,
        });
    }
    let mut meta = DatasetMeta::new(d, spec.label_mode);
    meta.source_model = format!("synthetic(seed={})", spec.seed);
    SyntheticData {
        records,
        meta,
        direction: u,
    }
}
