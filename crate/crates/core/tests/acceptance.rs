//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Built with `harness = false`.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use rand::Rng;

use ranker_core::evaluation::{oracle_accuracy, scaling_curve, selection_accuracy, GroupScorer, LabelOracle};
use ranker_core::feature_store::{
    decode_dataset, encode_dataset, read_dataset, sample_groups, split_by_query, write_dataset, CandidateGroup,
    FeatureRecord, LabelMode, Response,
};
use ranker_core::numkernel::Tensor2;
use ranker_core::objectives::{list_cls_loss, point_cls_loss, LossKind};
use ranker_core::rankers::{
    cosine_relevance, select_best, RankerError, RankerKind, RankerParams, RankerSpec, RelevanceKind, Variant,
};
use ranker_core::synthetic::{generate, SyntheticSpec};
use ranker_core::training::{
    adamw_step, decode_checkpoint, encode_checkpoint, listwise_batch_gradient, load_checkpoint, lr_at,
    save_checkpoint, sgd_step, train_params, AdamState, Objective, Schedule, TrainConfig, ADAM_EPS,
};

type Outcome = Result<String, String>;

struct Suite {
    failures: usize,
}

impl Suite {
    fn check(&mut self, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let mut result = f();
        let took = start.elapsed();
        if let (Some(limit), Ok(detail)) = (budget, &result) {
            if took > limit {
                result = Err(format!("{detail}; took {took:.1?}, limit {limit:?}"));
            }
        }
        match result {
            Ok(detail) => println!("PASS  {name}: {detail} [{took:.1?}]"),
            Err(detail) => {
                self.failures += 1;
                println!("FAIL  {name}: {detail} [{took:.1?}]");
            }
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(count: usize, target: f64) -> bool {
    (count as f64 - target).abs() <= 0.1 * target
}

fn parameter_budgets() -> Outcome {
    let count = |kind, variant| {
        RankerSpec::new(kind, RelevanceKind::Cosine, 4096)
            .with_variant(variant)
            .parameter_count()
    };
    let listwise = count(RankerKind::Listwise, Variant::Full);
    let pointwise = count(RankerKind::Pointwise, Variant::Full);
    let no_proj = count(RankerKind::Listwise, Variant::NoProjection);
    let no_mlp = count(RankerKind::Pointwise, Variant::NoMlpBlock);
    ensure(within(listwise, 0.30e6), || format!("listwise {listwise} not within 10% of 0.30M"))?;
    ensure(within(pointwise, 0.28e6), || format!("pointwise {pointwise} not within 10% of 0.28M"))?;
    ensure(within(no_proj, 192e6), || format!("no_projection listwise {no_proj} not within 10% of 192M"))?;
    ensure(within(no_mlp, 0.25e6), || format!("no_mlp_block pointwise {no_mlp} not within 10% of 0.25M"))?;

    let mut largest = 0;
    for d_model in [2048, 2560, 3072, 3584, 4096] {
        for kind in [RankerKind::Listwise, RankerKind::Pointwise] {
            for relevance in [RelevanceKind::Cosine, RelevanceKind::Learnable] {
                let n = RankerSpec::new(kind, relevance, d_model).parameter_count();
                ensure(n < 500_000, || format!("{kind:?}/{relevance:?} at d_model {d_model}: {n} >= 0.5M"))?;
                largest = largest.max(n);
            }
        }
    }
    Ok(format!(
        "listwise {listwise}, pointwise {pointwise}, no_projection {no_proj}, no_mlp_block {no_mlp}, largest default {largest}"
    ))
}

fn gradient_oracle() -> Outcome {
    const SEEDS: u64 = 20;
    let (mut worst_rel, mut worst_abs, mut coords) = (0.0f64, 0.0f64, 0);
    let mut tally = |name: String, report: ranker_core::numkernel::GradCheckReport| {
        ensure(report.passes(FD_TOLERANCE), || {
            format!("{name}: rel err {:.3e} at {:?}", report.max_relative_error, report.worst)
        })?;
        worst_rel = worst_rel.max(report.max_relative_error);
        worst_abs = worst_abs.max(report.max_abs_difference);
        coords += report.coordinates_checked;
        Ok::<(), String>(())
    };
    let primitives = primitive_checks(0).len();
    for seed in 0..SEEDS {
        for (name, report) in primitive_checks(seed) {
            tally(format!("{name} seed {seed}"), report)?;
        }
        for (kind, relevance, objective) in all_compositions() {
            let report = composition_check(kind, relevance, objective, Variant::Full, seed);
            tally(format!("{kind:?}/{relevance:?}/{objective:?} seed {seed}"), report)?;
        }
    }
    Ok(format!(
        "{primitives} primitives + {} compositions x {SEEDS} seeds, {coords} coordinates, max rel err {worst_rel:.1e} (floor 1e-6), max abs diff {worst_abs:.1e}",
        all_compositions().len()
    ))
}

fn one_positive_records(queries: usize, pool: usize, d: usize, seed: u64) -> Vec<FeatureRecord> {
    let mut r = rng(seed);
    (0..queries as u64)
        .map(|q| {
            let hit = r.random_range(0..pool);
            FeatureRecord {
                query_id: q,
                instruction: rand_features(&mut r, d),
                responses: (0..pool)
                    .map(|i| Response {
                        feature: rand_features(&mut r, d),
                        label: (i == hit) as u8 as f32,
                    })
                    .collect(),
            }
        })
        .collect()
}

fn loss_oracles() -> Outcome {
    let ln2 = std::f64::consts::LN_2;
    let matched = [
        (vec![0.0, 0.0, 0.0, 0.0], vec![1.0, 1.0, 1.0, 1.0]),
        (vec![3.5, 3.5, -1e3], vec![1.0, 1.0, 0.0]),
        (vec![-900.0, 9.0, -900.0, -900.0], vec![0.0, 1.0, 0.0, 0.0]),
    ];
    for (s, y) in matched {
        let kl = list_cls_loss(std::slice::from_ref(&s), &[y]).map_err(|e| e.to_string())?.loss;
        ensure(kl.abs() < 1e-8, || format!("KL on matched distribution {s:?} = {kl:e}"))?;
    }
    let kl = list_cls_loss(&[vec![0.0, 0.0]], &[vec![1.0, 0.0]]).map_err(|e| e.to_string())?.loss;
    ensure((kl - ln2).abs() < 1e-6, || format!("KL([1,0] | [0,0]) = {kl}"))?;
    for y in [0.0, 1.0] {
        let bce = point_cls_loss(&[0.0], &[y]).map_err(|e| e.to_string())?.loss;
        ensure((bce - ln2).abs() < 1e-9, || format!("BCE at s=0, y={y} = {bce}"))?;
    }

    let records = one_positive_records(64, 10, 256, 11);
    let groups = sample_groups(&records, 10, 4, LabelMode::Classification, 12)
        .map_err(|e| e.to_string())?
        .groups;
    let refs: Vec<&CandidateGroup<'_>> = groups.iter().collect();
    let spec = RankerSpec::new(RankerKind::Listwise, RelevanceKind::Cosine, 256);
    let params = RankerParams::init(spec, 13).map_err(|e| e.to_string())?;
    let max_score = groups
        .iter()
        .flat_map(|g| params.score_group(g).unwrap().scores)
        .fold(0.0f64, |m, s| m.max(s.abs()));
    let init = listwise_batch_gradient(&params, &refs, LossKind::ListCls, 1.0)
        .map_err(|e| e.to_string())?
        .loss;
    let ln10 = 10f64.ln();
    ensure((init - ln10).abs() < 0.05, || format!("init listwise loss {init:.4}, expected {ln10:.4} +- 0.05"))?;
    Ok(format!(
        "KL matched < 1e-8, KL([1,0]|[0,0]) = {kl:.9}, BCE(0) = ln 2, init listwise loss {init:.4} (max |score| {max_score:.3})"
    ))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn structural_invariants() -> Outcome {
    let mut r = rng(21);
    let d = 12;
    let mut perms_checked = 0;
    for relevance in [RelevanceKind::Cosine, RelevanceKind::Learnable] {
        let spec = RankerSpec {
            d_proj: 6,
            ..RankerSpec::new(RankerKind::Listwise, relevance, d)
        };
        for trial in 0..25u64 {
            let params = RankerParams::init(spec, trial).map_err(|e| e.to_string())?;
            for k in [3, 4] {
                let rec = &tiny_records(&mut r, 1, k, d, LabelMode::Classification)[0];
                let base = params.score_group(&CandidateGroup::from_indices(rec, (0..k).collect())).unwrap().scores;
                let chosen = select_best(&base).unwrap();
                for perm in permutations(k) {
                    let group = CandidateGroup::from_indices(rec, perm.clone());
                    let scores = params.score_group(&group).unwrap().scores;
                    for (pos, &orig) in perm.iter().enumerate() {
                        ensure((scores[pos] - base[orig]).abs() < 1e-10, || {
                            format!("listwise {relevance:?} k={k}: score moved under permutation {perm:?}")
                        })?;
                    }
                    let pick = group.response_indices[select_best(&scores).unwrap()];
                    ensure(pick == chosen, || format!("selection changed under permutation {perm:?}"))?;
                    perms_checked += 1;
                }
            }
        }
    }

    for relevance in [RelevanceKind::Cosine, RelevanceKind::Learnable] {
        let spec = RankerSpec {
            d_proj: 6,
            d_hidden: 8,
            ..RankerSpec::new(RankerKind::Pointwise, relevance, d)
        };
        let params = RankerParams::init(spec, 5).map_err(|e| e.to_string())?;
        let rec = &tiny_records(&mut r, 1, 9, d, LabelMode::Classification)[0];
        let pairs: Vec<(&[f32], &[f32])> = rec.responses.iter().map(|x| (&rec.instruction[..], &x.feature[..])).collect();
        let batch = params.score_pointwise_batch(&pairs).unwrap();
        for n in 1..=pairs.len() {
            let prefix = params.score_pointwise_batch(&pairs[..n]).unwrap();
            ensure(prefix[..] == batch[..n], || format!("pointwise batch of {n} differs from the full batch"))?;
        }
        for (i, (a, b)) in pairs.iter().enumerate() {
            ensure(params.score_pointwise(a, b).unwrap() == batch[i], || {
                format!("pointwise pair {i} scored differently alone")
            })?;
        }
    }

    for _ in 0..1000 {
        let a: Vec<f64> = (0..8).map(|_| r.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| r.random_range(-5.0..5.0)).collect();
        let (alpha, beta) = (r.random_range(1e-3..1e3), r.random_range(1e-3..1e3));
        let c = cosine_relevance(&a, &b).unwrap();
        let sa: Vec<f64> = a.iter().map(|x| x * alpha).collect();
        let sb: Vec<f64> = b.iter().map(|x| x * beta).collect();
        let cs = cosine_relevance(&sa, &sb).unwrap();
        ensure((c - cs).abs() < 1e-12, || format!("cosine changed under scaling: {c} vs {cs}"))?;

        let s: Vec<f64> = (0..10).map(|_| r.random_range(-10.0..10.0)).collect();
        let shift = r.random_range(-1e3..1e3);
        let moved: Vec<f64> = s.iter().map(|x| x + shift).collect();
        let (i, j) = (select_best(&s).unwrap(), select_best(&moved).unwrap());
        let mut sorted = s.clone();
        sorted.sort_by(|x, y| y.total_cmp(x));
        if sorted[0] - sorted[1] > 1e-9 {
            ensure(i == j, || format!("argmax moved under shift {shift}"))?;
        }
    }
    let ties = select_best(&[1.0, 3.0, 3.0, 2.0]).unwrap();
    ensure(ties == 1, || format!("tie broke to {ties}, expected lowest index"))?;

    optimizer_recursions()?;
    Ok(format!(
        "{perms_checked} listwise permutations (3!, 4!), pointwise batch independence, cosine scale and argmax shift invariance, optimizer recursions"
    ))
}

fn scalar(v: f64) -> Vec<Tensor2> {
    vec![Tensor2::from_vec(1, 1, vec![v])]
}

fn optimizer_recursions() -> Result<(), String> {
    let close = |a: f64, b: f64, what: &str| ensure((a - b).abs() <= 1e-12 * b.abs().max(1.0), || format!("{what}: {a} vs {b}"));

    // Plain SGD on f(p) = a·p²/2: p_t = (1 − lr·a)^t · p0.
    let (a, lr, p0) = (0.7, 0.3, 2.5);
    let mut p = scalar(p0);
    let mut vel = scalar(0.0);
    for t in 1..=50 {
        let g = scalar(a * p[0].data()[0]);
        sgd_step(&mut p, &g, lr, 0.0, 0.0, &mut vel).map_err(|e| e.to_string())?;
        close(p[0].data()[0], p0 * (1.0 - lr * a).powi(t), "sgd closed form")?;
    }

    // Heavy ball with a constant gradient: v_t = g(1 − μ^t)/(1 − μ),
    // p_t = p0 − lr·g·Σ_{i≤t} (1 − μ^i)/(1 − μ).
    let (g0, mu) = (0.4, 0.9);
    let mut p = scalar(1.0);
    let mut vel = scalar(0.0);
    for t in 1..=50i32 {
        sgd_step(&mut p, &scalar(g0), lr, mu, 0.0, &mut vel).map_err(|e| e.to_string())?;
        let sum: f64 = (1..=t).map(|i| (1.0 - mu.powi(i)) / (1.0 - mu)).sum();
        close(p[0].data()[0], 1.0 - lr * g0 * sum, "momentum closed form")?;
        close(vel[0].data()[0], g0 * (1.0 - mu.powi(t)) / (1.0 - mu), "momentum velocity")?;
    }

    // AdamW with a constant gradient: bias correction makes m̂ = g, v̂ = g², so
    // p_t = r·p_{t−1} − c with r = 1 − lr·λ and c = lr·g/(|g| + ε).
    let (lr, wd, g): (f64, f64, f64) = (0.01, 0.1, -0.3);
    let (r, c) = (1.0 - lr * wd, lr * g / (g.abs() + ADAM_EPS));
    let mut p = scalar(1.5);
    let mut state = AdamState { m: scalar(0.0), v: scalar(0.0), t: 0 };
    for t in 1..=50i32 {
        adamw_step(&mut p, &scalar(g), lr, (0.9, 0.999), wd, &mut state).map_err(|e| e.to_string())?;
        let expected = r.powi(t) * 1.5 - c * (1.0 - r.powi(t)) / (1.0 - r);
        ensure((p[0].data()[0] - expected).abs() < 1e-12, || {
            format!("adamw closed form at t={t}: {} vs {expected}", p[0].data()[0])
        })?;
    }

    for step in 0..=20 {
        let expected = 0.2 * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / 20.0).cos());
        close(lr_at(Schedule::CosineDecay, 0.2, step, 20), expected, "cosine schedule")?;
        close(lr_at(Schedule::Constant, 0.2, step, 20), 0.2, "constant schedule")?;
    }
    Ok(())
}

/// Logistic regression on standardized response features, fit by
/// full-batch gradient descent.
struct Logistic {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    w: Vec<f64>,
    b: f64,
}

impl Logistic {
    fn fit(records: &[FeatureRecord], d: usize, iterations: usize, lr: f64) -> Self {
        let xs: Vec<(Vec<f64>, f64)> = records
            .iter()
            .flat_map(|r| r.responses.iter())
            .map(|x| (x.feature.iter().map(|&v| v as f64).collect(), x.label as f64))
            .collect();
        let n = xs.len() as f64;
        let mut mean = vec![0.0; d];
        for (x, _) in &xs {
            mean.iter_mut().zip(x).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; d];
        for (x, _) in &xs {
            var.iter_mut().zip(x).zip(&mean).for_each(|((s, v), m)| *s += (v - m) * (v - m) / n);
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / v.sqrt().max(1e-12)).collect();
        let z: Vec<(Vec<f64>, f64)> = xs
            .into_iter()
            .map(|(x, y)| (x.iter().zip(&mean).zip(&inv_std).map(|((v, m), s)| (v - m) * s).collect(), y))
            .collect();
        let mut model = Logistic { mean, inv_std, w: vec![0.0; d], b: 0.0 };
        for _ in 0..iterations {
            let mut gw = vec![0.0; d];
            let mut gb = 0.0;
            for (x, y) in &z {
                let logit: f64 = model.b + x.iter().zip(&model.w).map(|(a, b)| a * b).sum::<f64>();
                let err = 1.0 / (1.0 + (-logit).exp()) - y;
                gw.iter_mut().zip(x).for_each(|(g, v)| *g += err * v / n);
                gb += err / n;
            }
            model.w.iter_mut().zip(&gw).for_each(|(w, g)| *w -= lr * g);
            model.b -= lr * gb;
        }
        model
    }

    fn logit(&self, x: &[f32]) -> f64 {
        self.b
            + x.iter()
                .zip(&self.mean)
                .zip(&self.inv_std)
                .zip(&self.w)
                .map(|(((&v, m), s), w)| (v as f64 - m) * s * w)
                .sum::<f64>()
    }
}

impl GroupScorer for Logistic {
    fn score_group(&self, group: &CandidateGroup<'_>) -> Result<Vec<f64>, RankerError> {
        Ok(group.candidates.iter().map(|c| self.logit(c)).collect())
    }
}

fn synthetic_end_to_end() -> Outcome {
    let mode = LabelMode::Classification;
    let data = generate(&SyntheticSpec::default());
    let d = data.meta.d_model;
    let (train_recs, held_out) = split_by_query(data.records, 0.1, 1).map_err(|e| e.to_string())?;
    // Held-out groups use the training filter (at least one positive and one
    // negative), so a perfect ranker scores 1.0.
    let held = sample_groups(&held_out, 10, 16, mode, 3).map_err(|e| e.to_string())?.groups;
    let oracle = oracle_accuracy(&held, mode).value;

    let logistic = Logistic::fit(&train_recs, d, 200, 0.5);
    let lr_acc = selection_accuracy(&logistic, &held, mode).map_err(|e| e.to_string())?;
    ensure(lr_acc >= 0.99, || format!("logistic-regression reference {lr_acc:.4} < 0.99"))?;

    let mut detail = vec![format!("{} held-out groups, oracle {oracle:.3}, logistic {lr_acc:.4}", held.len())];
    for kind in [RankerKind::Listwise, RankerKind::Pointwise] {
        let cfg = TrainConfig::new(kind, Objective::Cls);
        let init = RankerParams::init(cfg.ranker_spec(d), cfg.seed).map_err(|e| e.to_string())?;
        let before = selection_accuracy(&init, &held, mode).map_err(|e| e.to_string())?;
        let (params, log) = train_params(&cfg, &train_recs, &data.meta).map_err(|e| e.to_string())?;
        let acc = selection_accuracy(&params, &held, mode).map_err(|e| e.to_string())?;
        let (first, last) = (log.first_loss().unwrap_or(f64::NAN), log.last_loss().unwrap_or(f64::NAN));
        ensure(acc >= 0.95, || format!("{kind:?} held-out accuracy {acc:.4} < 0.95"))?;
        ensure(last < first, || format!("{kind:?} loss did not fall: {first:.4} -> {last:.4}"))?;

        let curve = scaling_curve(&params, &held_out, mode, &[2, 10], 16, 4).map_err(|e| e.to_string())?;
        let (k2, k10) = (curve.points[0].mean, curve.points[1].mean);
        ensure(k10 >= k2, || format!("{kind:?} accuracy(K=10) {k10:.4} < accuracy(K=2) {k2:.4}"))?;
        detail.push(format!(
            "{kind:?} {before:.3} -> {acc:.4} (loss {first:.3} -> {last:.3}, K=2 {k2:.3}, K=10 {k10:.3})"
        ));
    }

    let oracle_curve =
        scaling_curve(&LabelOracle, &held_out, mode, &[1, 2, 4, 8, 10, 16, 32], 16, 5).map_err(|e| e.to_string())?;
    let means: Vec<String> = oracle_curve.points.iter().map(|p| format!("{:.3}", p.mean)).collect();
    ensure(oracle_curve.points.windows(2).all(|w| w[1].mean >= w[0].mean), || {
        format!("oracle curve decreases: {means:?}")
    })?;
    detail.push(format!("oracle curve {}", means.join(" ")));
    Ok(detail.join("; "))
}

fn training_speed() -> Outcome {
    let data = generate(&SyntheticSpec {
        d_model: 4096,
        queries: 374,
        responses_per_query: 20,
        ..SyntheticSpec::default()
    });
    let mut detail = Vec::new();
    for kind in [RankerKind::Listwise, RankerKind::Pointwise] {
        let cfg = TrainConfig::new(kind, Objective::Cls);
        let start = Instant::now();
        let (_, log) = train_params(&cfg, &data.records, &data.meta).map_err(|e| e.to_string())?;
        let took = start.elapsed();
        ensure(took < Duration::from_secs(300), || format!("{kind:?} took {took:.1?}"))?;
        detail.push(format!("{kind:?} {} units / {} steps in {took:.1?}", log.units, log.total_steps));
    }
    Ok(format!("374 queries x 16 groups, K=10, d_model 4096: {}", detail.join(", ")))
}

fn round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ckpt_path = dir.path().join("c.lrck");
    let data_path = dir.path().join("d.lrfd");
    for seed in 0..1000u64 {
        let ckpt = random_checkpoint(seed);
        let bytes = encode_checkpoint(&ckpt);
        let back = decode_checkpoint(&bytes).map_err(|e| format!("checkpoint {seed}: {e}"))?;
        ensure(back == ckpt && encode_checkpoint(&back) == bytes, || format!("checkpoint {seed} changed in memory"))?;
        save_checkpoint(&ckpt, &ckpt_path).map_err(|e| e.to_string())?;
        let loaded = load_checkpoint(&ckpt_path).map_err(|e| format!("checkpoint {seed}: {e}"))?;
        ensure(loaded == ckpt, || format!("checkpoint {seed} changed on disk"))?;

        let (records, meta) = random_dataset(seed);
        let bytes = encode_dataset(&records, &meta).map_err(|e| e.to_string())?;
        let (back, _) = decode_dataset(&bytes).map_err(|e| format!("dataset {seed}: {e}"))?;
        ensure(back == records, || format!("dataset {seed} changed in memory"))?;
        write_dataset(&records, &meta, &data_path).map_err(|e| e.to_string())?;
        let (loaded, loaded_meta) = read_dataset(&data_path).map_err(|e| format!("dataset {seed}: {e}"))?;
        ensure(loaded == records && loaded_meta == meta, || format!("dataset {seed} changed on disk"))?;
    }
    Ok("1000 checkpoints and 1000 datasets bit-exact in memory and on disk".into())
}

fn main() -> ExitCode {
    let mut suite = Suite { failures: 0 };
    suite.check("parameter budgets", None, parameter_budgets);
    suite.check("gradient oracle", Some(Duration::from_secs(120)), gradient_oracle);
    suite.check("loss unit oracles", None, loss_oracles);
    suite.check("structural invariants", None, structural_invariants);
    suite.check("synthetic end-to-end", Some(Duration::from_secs(180)), synthetic_end_to_end);
    suite.check("cpu training speed", Some(Duration::from_secs(300)), training_speed);
    suite.check("serialization round trips", None, round_trips);
    if suite.failures == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failed", suite.failures);
        ExitCode::FAILURE
    }
}
