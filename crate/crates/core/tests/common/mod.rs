#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ranker_core::feature_store::{sample_groups, DatasetMeta, FeatureRecord, LabelMode, Response};
use ranker_core::numkernel::{attention_block, grad_check, BlockParamIndex, GradCheckReport, Tape, Tensor2, Var};
use ranker_core::objectives::LossKind;
use ranker_core::rankers::{RankerKind, RankerParams, RankerSpec, RelevanceKind, Variant};
use ranker_core::training::{
    listwise_batch_gradient, pairs_from_groups, pointwise_batch_gradient, Checkpoint, Objective, TrainConfig,
};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor2 {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor2::from_vec(rows, cols, data)
}

pub fn rand_features(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

/// Records whose classification labels alternate so every group of size >= 2
/// drawn from the first two responses onward can be mixed.
pub fn tiny_records(
    rng: &mut ChaCha8Rng,
    queries: usize,
    responses: usize,
    d_model: usize,
    mode: LabelMode,
) -> Vec<FeatureRecord> {
    (0..queries)
        .map(|q| FeatureRecord {
            query_id: q as u64,
            instruction: rand_features(rng, d_model),
            responses: (0..responses)
                .map(|i| Response {
                    feature: rand_features(rng, d_model),
                    label: match mode {
                        LabelMode::Classification => (i % 2) as f32,
                        LabelMode::Regression => rng.random_range(-2.0f32..2.0),
                    },
                })
                .collect(),
        })
        .collect()
}

pub fn loss_kind(kind: RankerKind, objective: Objective) -> LossKind {
    match (kind, objective) {
        (RankerKind::Listwise, Objective::Cls) => LossKind::ListCls,
        (RankerKind::Listwise, Objective::Reg) => LossKind::ListReg,
        (RankerKind::Pointwise, Objective::Cls) => LossKind::PointCls,
        (RankerKind::Pointwise, Objective::Reg) => LossKind::PointReg,
    }
}

/// Ranker kind × relevance × objective.
pub fn all_compositions() -> Vec<(RankerKind, RelevanceKind, Objective)> {
    let mut out = Vec::new();
    for kind in [RankerKind::Listwise, RankerKind::Pointwise] {
        for relevance in [RelevanceKind::Cosine, RelevanceKind::Learnable] {
            for objective in [Objective::Cls, Objective::Reg] {
                out.push((kind, relevance, objective));
            }
        }
    }
    out
}

pub fn tiny_spec(kind: RankerKind, relevance: RelevanceKind, variant: Variant) -> RankerSpec {
    RankerSpec {
        kind,
        relevance,
        d_model: 6,
        d_proj: 4,
        d_hidden: 5,
        block_count: 1,
        variant,
    }
}

/// Gradient check of the batched loss for one composition at a random point.
pub fn composition_check(
    kind: RankerKind,
    relevance: RelevanceKind,
    objective: Objective,
    variant: Variant,
    seed: u64,
) -> GradCheckReport {
    let mut r = rng(seed);
    let spec = tiny_spec(kind, relevance, variant);
    let mut params = RankerParams::init(spec, seed).expect("valid spec");
    for t in params.tensors_mut() {
        for x in t.data_mut() {
            *x += r.random_range(-0.2..0.2);
        }
    }
    let mode = match objective {
        Objective::Cls => LabelMode::Classification,
        Objective::Reg => LabelMode::Regression,
    };
    let records = tiny_records(&mut r, 2, 5, spec.d_model, mode);
    let sample = sample_groups(&records, 3, 2, mode, seed).expect("sampling");
    let groups: Vec<_> = sample.groups.iter().collect();
    let pairs = pairs_from_groups(&sample.groups);
    let pair_refs: Vec<_> = pairs.iter().collect();
    let loss = loss_kind(kind, objective);
    let scale = if relevance == RelevanceKind::Cosine { 1.7 } else { 1.0 };
    let f = |ts: &[Tensor2]| {
        let p = RankerParams::from_tensors(spec, ts.to_vec()).expect("same layout");
        let g = match kind {
            RankerKind::Listwise => listwise_batch_gradient(&p, &groups, loss, scale),
            RankerKind::Pointwise => pointwise_batch_gradient(&p, &pair_refs, loss, scale),
        }
        .expect("loss evaluates");
        (g.loss, g.grads)
    };
    grad_check(f, params.tensors(), FD_STEP).expect("finite probes")
}

/// Gradient check of `build` with every input as a parameter, through the
/// linear functional `Σ c ⊙ out` for a fixed random `c`.
pub fn primitive_check<B>(inputs: Vec<Tensor2>, seed: u64, build: B) -> GradCheckReport
where
    B: Fn(&mut Tape<'_>, &[Var]) -> Var,
{
    let f = |ts: &[Tensor2]| {
        let mut tape = Tape::new(ts);
        let vars: Vec<Var> = (0..ts.len()).map(|i| tape.param(i)).collect();
        let out = build(&mut tape, &vars);
        let o = tape.value(out).clone();
        let c = rand_tensor(&mut rng(seed ^ 0x00c0_ffee), o.rows(), o.cols(), 1.0);
        let value: f64 = o.data().iter().zip(c.data()).map(|(a, b)| a * b).sum();
        let mut grads: Vec<Tensor2> = ts.iter().map(|t| Tensor2::zeros(t.rows(), t.cols())).collect();
        tape.backward(&[(out, c)], &mut grads);
        (value, grads)
    };
    grad_check(f, &inputs, FD_STEP).expect("finite probes")
}

fn block_inputs(r: &mut ChaCha8Rng, rows: usize, w: usize) -> (Vec<Tensor2>, BlockParamIndex) {
    let f = 4 * w;
    let mut ts = vec![rand_tensor(r, rows, w, 1.0)];
    let mut push = |t: Tensor2| {
        ts.push(t);
        ts.len() - 1
    };
    let gain = |r: &mut ChaCha8Rng| {
        let mut g = rand_tensor(r, 1, w, 0.3);
        g.data_mut().iter_mut().for_each(|x| *x += 1.0);
        g
    };
    let ln1_gain = push(gain(r));
    let ln1_shift = push(rand_tensor(r, 1, w, 0.3));
    let q_weight = push(rand_tensor(r, w, w, 0.6));
    let q_bias = push(rand_tensor(r, 1, w, 0.2));
    let k_weight = push(rand_tensor(r, w, w, 0.6));
    let k_bias = push(rand_tensor(r, 1, w, 0.2));
    let v_weight = push(rand_tensor(r, w, w, 0.6));
    let v_bias = push(rand_tensor(r, 1, w, 0.2));
    let o_weight = push(rand_tensor(r, w, w, 0.6));
    let o_bias = push(rand_tensor(r, 1, w, 0.2));
    let ln2_gain = push(gain(r));
    let ln2_shift = push(rand_tensor(r, 1, w, 0.3));
    let ff1_weight = push(rand_tensor(r, w, f, 0.5));
    let ff1_bias = push(rand_tensor(r, 1, f, 0.2));
    let ff2_weight = push(rand_tensor(r, f, w, 0.5));
    let ff2_bias = push(rand_tensor(r, 1, w, 0.2));
    let idx = BlockParamIndex {
        ln1_gain,
        ln1_shift,
        q_weight,
        q_bias,
        k_weight,
        k_bias,
        v_weight,
        v_bias,
        o_weight,
        o_bias,
        ln2_gain,
        ln2_shift,
        ff1_weight,
        ff1_bias,
        ff2_weight,
        ff2_bias,
    };
    (ts, idx)
}

/// One gradient check per tape primitive, plus the encoder block.
pub fn primitive_checks(seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    let mut r = rng(seed);
    let r = &mut r;
    let mut out = Vec::new();
    let t = |r: &mut ChaCha8Rng, rows, cols| rand_tensor(r, rows, cols, 1.0);

    let ins = vec![t(r, 3, 4), t(r, 4, 5), t(r, 1, 5)];
    out.push(("linear", primitive_check(ins, seed, |tp, v| tp.linear(v[0], v[1], Some(v[2])).unwrap())));
    let ins = vec![t(r, 3, 4), t(r, 4, 2)];
    out.push(("matmul", primitive_check(ins, seed, |tp, v| tp.matmul(v[0], v[1]).unwrap())));
    let ins = vec![t(r, 3, 4), t(r, 2, 4)];
    out.push(("matmul_nt", primitive_check(ins, seed, |tp, v| tp.matmul_nt(v[0], v[1]).unwrap())));
    let ins = vec![t(r, 3, 4), t(r, 3, 4)];
    out.push(("add", primitive_check(ins, seed, |tp, v| tp.add(v[0], v[1]).unwrap())));
    let ins = vec![t(r, 2, 3)];
    out.push(("scale", primitive_check(ins, seed, |tp, v| tp.scale(v[0], -0.7))));
    let ins = vec![rand_tensor(r, 3, 4, 3.0)];
    out.push(("gelu", primitive_check(ins, seed, |tp, v| tp.gelu(v[0]))));
    let mut gain = t(r, 1, 5);
    gain.data_mut().iter_mut().for_each(|x| *x += 1.5);
    let ins = vec![rand_tensor(r, 3, 5, 2.0), gain, t(r, 1, 5)];
    out.push(("layer_norm", primitive_check(ins, seed, |tp, v| tp.layer_norm(v[0], v[1], v[2]).unwrap())));
    let ins = vec![rand_tensor(r, 3, 4, 2.0)];
    out.push(("softmax_rows", primitive_check(ins, seed, |tp, v| tp.softmax_rows(v[0]))));
    let ins = vec![t(r, 5, 3)];
    out.push(("slice_rows", primitive_check(ins, seed, |tp, v| tp.slice_rows(v[0], 1, 3).unwrap())));
    let ins = vec![t(r, 2, 3), t(r, 3, 3)];
    out.push(("concat_rows", primitive_check(ins, seed, |tp, v| tp.concat_rows(&[v[0], v[1]]).unwrap())));
    let ins = vec![t(r, 1, 3)];
    out.push(("broadcast_rows", primitive_check(ins, seed, |tp, v| tp.broadcast_rows(v[0], 4).unwrap())));
    let ins = vec![t(r, 3, 2), t(r, 3, 4)];
    out.push(("concat_cols", primitive_check(ins, seed, |tp, v| tp.concat_cols(v[0], v[1]).unwrap())));
    let ins = vec![t(r, 3, 4), t(r, 3, 4)];
    out.push(("cosine_rows", primitive_check(ins, seed, |tp, v| tp.cosine_rows(v[0], v[1]).unwrap())));
    let (ins, idx) = block_inputs(r, 3, 4);
    out.push(("attention_block", primitive_check(ins, seed, move |tp, v| attention_block(tp, v[0], &idx).unwrap())));
    out
}

pub fn config_for(spec: &RankerSpec) -> TrainConfig {
    TrainConfig {
        ranker: spec.kind,
        relevance: spec.relevance,
        d_proj: spec.d_proj,
        d_hidden: spec.d_hidden,
        block_count: spec.block_count,
        variant: spec.variant,
        ..TrainConfig::default()
    }
}

/// A checkpoint with random kinds, small dimensions and random weights.
pub fn random_checkpoint(seed: u64) -> Checkpoint {
    let mut r = rng(seed);
    let kind = if r.random_bool(0.5) { RankerKind::Listwise } else { RankerKind::Pointwise };
    let relevance = if r.random_bool(0.5) { RelevanceKind::Cosine } else { RelevanceKind::Learnable };
    let variant = match (kind, r.random_range(0..4)) {
        (_, 0) => Variant::Full,
        (_, 1) => Variant::NoProjection,
        (_, 2) => Variant::NoInstruction,
        (RankerKind::Pointwise, _) => Variant::NoMlpBlock,
        _ => Variant::Full,
    };
    let d_proj = r.random_range(2..6);
    let spec = RankerSpec {
        kind,
        relevance,
        d_model: d_proj + r.random_range(0..5),
        d_proj,
        d_hidden: r.random_range(1..7),
        block_count: r.random_range(1..3),
        variant,
    };
    let mut params = RankerParams::init(spec, seed).expect("valid spec");
    for t in params.tensors_mut() {
        for x in t.data_mut() {
            *x += r.random_range(-1.0..1.0);
        }
    }
    Checkpoint::from_params(&params, config_for(&spec), format!("{seed:064x}"))
}

/// A small random LRFD dataset (records plus metadata).
pub fn random_dataset(seed: u64) -> (Vec<FeatureRecord>, DatasetMeta) {
    let mut r = rng(seed);
    let mode = if r.random_bool(0.5) { LabelMode::Classification } else { LabelMode::Regression };
    let d = r.random_range(1..9);
    let records = (0..r.random_range(0..5))
        .map(|q| FeatureRecord {
            query_id: r.random::<u64>() ^ q,
            instruction: (0..d).map(|_| r.random_range(-1e3f32..1e3)).collect(),
            responses: (0..r.random_range(1..6))
                .map(|_| Response {
                    feature: (0..d).map(|_| r.random_range(-1e3f32..1e3)).collect(),
                    label: match mode {
                        LabelMode::Classification => r.random_range(0..2) as f32,
                        LabelMode::Regression => r.random_range(-5f32..5.0),
                    },
                })
                .collect(),
        })
        .collect();
    (records, DatasetMeta::new(d, mode))
}
