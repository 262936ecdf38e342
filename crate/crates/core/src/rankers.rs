//! Listwise and pointwise rankers over cached hidden-state features.
//!
//! Both architectures share one projection for the instruction and the
//! responses. The listwise ranker then lets all `K + 1` projected rows
//! attend to each other in one or more encoder blocks; the pointwise ranker
//! pushes each row through a shared MLP on its own. A relevance function
//! turns each (instruction, response) pair of outputs into a score.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_store::CandidateGroup;
use crate::numkernel::{attention_block, BlockParamIndex, KernelError, Tape, Tensor2, Var, COSINE_EPS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RankerError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("feature dimension mismatch: ranker expects d_model = {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("contract violation: {0}")]
    Contract(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankerKind {
    Listwise,
    Pointwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceKind {
    Cosine,
    Learnable,
}

/// Architectural ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    /// Blocks run directly on `d_model`-wide features.
    NoProjection,
    /// The projected instruction is replaced by a learned vector.
    NoInstruction,
    /// Pointwise only: relevance is computed on the projected features.
    NoMlpBlock,
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Variant::Full),
            "no_projection" => Ok(Variant::NoProjection),
            "no_instruction" => Ok(Variant::NoInstruction),
            "no_mlp_block" => Ok(Variant::NoMlpBlock),
            other => Err(format!("unknown variant `{other}`")),
        }
    }
}

pub const DEFAULT_D_PROJ: usize = 64;
pub const DEFAULT_D_HIDDEN: usize = 128;
/// Feed-forward expansion inside the listwise encoder block.
pub const FFN_EXPANSION: usize = 4;

/// Everything needed to rebuild a ranker's tensor layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankerSpec {
    pub kind: RankerKind,
    pub relevance: RelevanceKind,
    pub d_model: usize,
    pub d_proj: usize,
    pub d_hidden: usize,
    pub block_count: usize,
    #[serde(default)]
    pub variant: Variant,
}

impl RankerSpec {
    pub fn new(kind: RankerKind, relevance: RelevanceKind, d_model: usize) -> Self {
        Self {
            kind,
            relevance,
            d_model,
            d_proj: DEFAULT_D_PROJ,
            d_hidden: DEFAULT_D_HIDDEN,
            block_count: 1,
            variant: Variant::Full,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<(), RankerError> {
        if self.d_proj < 2 {
            return Err(RankerError::Contract(format!("d_proj must be >= 2, got {}", self.d_proj)));
        }
        if self.d_model < self.d_proj {
            return Err(RankerError::Contract(format!(
                "d_model ({}) must be >= d_proj ({})",
                self.d_model, self.d_proj
            )));
        }
        if self.d_hidden == 0 {
            return Err(RankerError::Contract("d_hidden must be positive".into()));
        }
        if self.variant == Variant::NoMlpBlock && self.kind != RankerKind::Pointwise {
            return Err(RankerError::Contract(
                "no_mlp_block applies to pointwise rankers only".into(),
            ));
        }
        Ok(())
    }

    /// Width of the rows entering the blocks.
    pub fn width(&self) -> usize {
        match self.variant {
            Variant::NoProjection => self.d_model,
            _ => self.d_proj,
        }
    }

    /// Pointwise MLP hidden width; scales with the row width when the
    /// projection is removed.
    pub fn hidden(&self) -> usize {
        match self.variant {
            Variant::NoProjection => self.d_hidden * self.d_model / self.d_proj,
            _ => self.d_hidden,
        }
    }

    pub fn blocks(&self) -> usize {
        match self.variant {
            Variant::NoMlpBlock => 0,
            _ => self.block_count,
        }
    }

    pub fn has_projection(&self) -> bool {
        self.variant != Variant::NoProjection
    }

    /// Closed-form learnable scalar count.
    pub fn parameter_count(&self) -> usize {
        let w = self.width();
        let proj = if self.has_projection() {
            self.d_model * self.d_proj + self.d_proj
        } else {
            0
        };
        let instr = if self.variant == Variant::NoInstruction { w } else { 0 };
        let per_block = match self.kind {
            RankerKind::Listwise => {
                let f = FFN_EXPANSION * w;
                2 * w + 4 * (w * w + w) + 2 * w + (w * f + f) + (f * w + w)
            }
            RankerKind::Pointwise => {
                let h = self.hidden();
                (w * h + h) + (h * w + w)
            }
        };
        let rel = match self.relevance {
            RelevanceKind::Cosine => 0,
            RelevanceKind::Learnable => 2 * w + 1,
        };
        proj + instr + self.blocks() * per_block + rel
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

/// Shape and initializer of one named tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Stored as rank 1 in checkpoints.
    pub vector: bool,
    init: Init,
}

impl TensorSpec {
    fn matrix(name: String, rows: usize, cols: usize) -> Self {
        Self {
            name,
            rows,
            cols,
            vector: false,
            init: Init::Xavier {
                fan_in: rows,
                fan_out: cols,
            },
        }
    }

    fn vector(name: String, len: usize, init: Init) -> Self {
        Self {
            name,
            rows: 1,
            cols: len,
            vector: true,
            init,
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
struct MlpIndex {
    fc1_weight: usize,
    fc1_bias: usize,
    fc2_weight: usize,
    fc2_bias: usize,
}

#[derive(Debug, Clone, Copy)]
enum BlockIndex {
    Attention(BlockParamIndex),
    Mlp(MlpIndex),
}

/// Ordered tensor list for a [`RankerSpec`], plus typed positions into it.
#[derive(Debug, Clone)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    proj: Option<(usize, usize)>,
    instruction_embedding: Option<usize>,
    blocks: Vec<BlockIndex>,
    relevance: Option<(usize, usize)>,
}

impl Layout {
    pub fn for_spec(spec: &RankerSpec) -> Self {
        let w = spec.width();
        let mut tensors = Vec::new();
        let push = |tensors: &mut Vec<TensorSpec>, t: TensorSpec| {
            tensors.push(t);
            tensors.len() - 1
        };
        let proj = spec.has_projection().then(|| {
            let wt = push(&mut tensors, TensorSpec::matrix("proj.weight".into(), spec.d_model, spec.d_proj));
            let b = push(&mut tensors, TensorSpec::vector("proj.bias".into(), spec.d_proj, Init::Zeros));
            (wt, b)
        });
        let instruction_embedding = (spec.variant == Variant::NoInstruction).then(|| {
            push(&mut tensors, TensorSpec {
                name: "instruction_embedding".into(),
                rows: 1,
                cols: w,
                vector: true,
                init: Init::Xavier {
                    fan_in: 1,
                    fan_out: w,
                },
            })
        });
        let mut blocks = Vec::new();
        for i in 0..spec.blocks() {
            let p = |s: &str| format!("blocks.{i}.{s}");
            match spec.kind {
                RankerKind::Listwise => {
                    let f = FFN_EXPANSION * w;
                    let lin = |tensors: &mut Vec<TensorSpec>, name: &str, rows: usize, cols: usize| {
                        let wt = push(tensors, TensorSpec::matrix(p(&format!("{name}.weight")), rows, cols));
                        let b = push(tensors, TensorSpec::vector(p(&format!("{name}.bias")), cols, Init::Zeros));
                        (wt, b)
                    };
                    let ln1_gain = push(&mut tensors, TensorSpec::vector(p("ln1.gain"), w, Init::Ones));
                    let ln1_shift = push(&mut tensors, TensorSpec::vector(p("ln1.shift"), w, Init::Zeros));
                    let (q_weight, q_bias) = lin(&mut tensors, "attn.q", w, w);
                    let (k_weight, k_bias) = lin(&mut tensors, "attn.k", w, w);
                    let (v_weight, v_bias) = lin(&mut tensors, "attn.v", w, w);
                    let (o_weight, o_bias) = lin(&mut tensors, "attn.o", w, w);
                    let ln2_gain = push(&mut tensors, TensorSpec::vector(p("ln2.gain"), w, Init::Ones));
                    let ln2_shift = push(&mut tensors, TensorSpec::vector(p("ln2.shift"), w, Init::Zeros));
                    let (ff1_weight, ff1_bias) = lin(&mut tensors, "ffn.fc1", w, f);
                    let (ff2_weight, ff2_bias) = lin(&mut tensors, "ffn.fc2", f, w);
                    blocks.push(BlockIndex::Attention(BlockParamIndex {
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
                    }));
                }
                RankerKind::Pointwise => {
                    let h = spec.hidden();
                    let fc1_weight = push(&mut tensors, TensorSpec::matrix(p("fc1.weight"), w, h));
                    let fc1_bias = push(&mut tensors, TensorSpec::vector(p("fc1.bias"), h, Init::Zeros));
                    let fc2_weight = push(&mut tensors, TensorSpec::matrix(p("fc2.weight"), h, w));
                    let fc2_bias = push(&mut tensors, TensorSpec::vector(p("fc2.bias"), w, Init::Zeros));
                    blocks.push(BlockIndex::Mlp(MlpIndex {
                        fc1_weight,
                        fc1_bias,
                        fc2_weight,
                        fc2_bias,
                    }));
                }
            }
        }
        let relevance = (spec.relevance == RelevanceKind::Learnable).then(|| {
            let wt = push(&mut tensors, TensorSpec::matrix("relevance.weight".into(), 2 * w, 1));
            let b = push(&mut tensors, TensorSpec::vector("relevance.bias".into(), 1, Init::Zeros));
            (wt, b)
        });
        Self {
            tensors,
            proj,
            instruction_embedding,
            blocks,
            relevance,
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|t| t.name.as_str())
    }

    /// Sum over every tensor's element count.
    pub fn enumerated_count(&self) -> usize {
        self.tensors.iter().map(TensorSpec::len).sum()
    }
}

/// Intermediate outputs of one scoring pass over a group.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringTrace {
    /// Instruction row after projection and blocks.
    pub projected_instruction: Vec<f64>,
    pub projected_responses: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
    /// Logistic probabilities; pointwise cosine rankers only.
    pub probabilities: Option<Vec<f64>>,
}

/// Learnable tensors of a listwise or pointwise ranker.
#[derive(Debug, Clone, PartialEq)]
pub struct RankerParams {
    spec: RankerSpec,
    tensors: Vec<Tensor2>,
}

/// Tape handles for one forward pass: per-unit output rows and scores.
pub(crate) struct ForwardVars {
    pub instruction_rows: Var,
    pub response_rows: Var,
    pub scores: Var,
}

impl RankerParams {
    /// Xavier-uniform weights, zero biases and shifts, unit gains.
    pub fn init(spec: RankerSpec, seed: u64) -> Result<Self, RankerError> {
        spec.validate()?;
        let layout = Layout::for_spec(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = layout
            .tensors
            .iter()
            .map(|t| match t.init {
                Init::Zeros => Tensor2::zeros(t.rows, t.cols),
                Init::Ones => Tensor2::filled(t.rows, t.cols, 1.0),
                Init::Xavier { fan_in, fan_out } => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let data = (0..t.len()).map(|_| rng.random_range(-limit..limit)).collect();
                    Tensor2::from_vec(t.rows, t.cols, data)
                }
            })
            .collect();
        Ok(Self { spec, tensors })
    }

    /// Assembles parameters from tensors in layout order.
    pub fn from_tensors(spec: RankerSpec, tensors: Vec<Tensor2>) -> Result<Self, RankerError> {
        spec.validate()?;
        let layout = Layout::for_spec(&spec);
        if layout.tensors.len() != tensors.len() {
            return Err(RankerError::Contract(format!(
                "expected {} tensors, got {}",
                layout.tensors.len(),
                tensors.len()
            )));
        }
        for (t, ts) in tensors.iter().zip(&layout.tensors) {
            if t.shape() != (ts.rows, ts.cols) {
                return Err(RankerError::Contract(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    ts.name,
                    t.shape(),
                    (ts.rows, ts.cols)
                )));
            }
        }
        Ok(Self { spec, tensors })
    }

    pub fn spec(&self) -> &RankerSpec {
        &self.spec
    }

    pub fn layout(&self) -> Layout {
        Layout::for_spec(&self.spec)
    }

    pub fn tensors(&self) -> &[Tensor2] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor2] {
        &mut self.tensors
    }

    pub fn into_tensors(self) -> Vec<Tensor2> {
        self.tensors
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor2::len).sum()
    }

    /// Rounds every value to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    fn check_dim(&self, len: usize) -> Result<(), RankerError> {
        if len != self.spec.d_model {
            return Err(RankerError::Dimension {
                expected: self.spec.d_model,
                got: len,
            });
        }
        Ok(())
    }

    /// Shared projection, or identity when the variant has none.
    fn project_rows(
        &self,
        tape: &mut Tape<'_>,
        layout: &Layout,
        rows: Var,
    ) -> Result<Var, RankerError> {
        match layout.proj {
            Some((w, b)) => {
                let (w, b) = (tape.param(w), tape.param(b));
                Ok(tape.linear(rows, w, Some(b))?)
            }
            None => Ok(rows),
        }
    }

    fn mlp_stack(&self, tape: &mut Tape<'_>, layout: &Layout, mut x: Var) -> Result<Var, RankerError> {
        for block in &layout.blocks {
            let BlockIndex::Mlp(m) = block else {
                unreachable!("pointwise layout holds MLP blocks")
            };
            let (w1, b1) = (tape.param(m.fc1_weight), tape.param(m.fc1_bias));
            let (w2, b2) = (tape.param(m.fc2_weight), tape.param(m.fc2_bias));
            let h = tape.linear(x, w1, Some(b1))?;
            let h = tape.gelu(h);
            x = tape.linear(h, w2, Some(b2))?;
        }
        Ok(x)
    }

    fn relevance(
        &self,
        tape: &mut Tape<'_>,
        layout: &Layout,
        instr: Var,
        resp: Var,
    ) -> Result<Var, RankerError> {
        match layout.relevance {
            None => Ok(tape.cosine_rows(instr, resp)?),
            Some((w, b)) => {
                let pair = tape.concat_cols(instr, resp)?;
                let (w, b) = (tape.param(w), tape.param(b));
                Ok(tape.linear(pair, w, Some(b))?)
            }
        }
    }

    /// Records the listwise forward pass for one group: rows `[i, r_1..r_K]`
    /// go through the shared projection and the encoder blocks, then each
    /// response row is scored against the instruction row.
    pub(crate) fn listwise_on_tape(
        &self,
        tape: &mut Tape<'_>,
        layout: &Layout,
        instruction: &[f32],
        candidates: &[&[f32]],
    ) -> Result<ForwardVars, RankerError> {
        let k = candidates.len();
        if k < 1 {
            return Err(RankerError::Contract("a group needs at least one candidate".into()));
        }
        self.check_dim(instruction.len())?;
        let d = self.spec.d_model;
        let mut data = Vec::with_capacity((k + 1) * d);
        data.extend(instruction.iter().map(|&v| v as f64));
        for c in candidates {
            self.check_dim(c.len())?;
            data.extend(c.iter().map(|&v| v as f64));
        }
        let x = tape.constant(Tensor2::from_vec(k + 1, d, data));
        let mut h = self.project_rows(tape, layout, x)?;
        if let Some(e) = layout.instruction_embedding {
            let e = tape.param(e);
            let rest = tape.slice_rows(h, 1, k)?;
            h = tape.concat_rows(&[e, rest])?;
        }
        for block in &layout.blocks {
            let BlockIndex::Attention(p) = block else {
                unreachable!("listwise layout holds attention blocks")
            };
            h = attention_block(tape, h, p)?;
        }
        let instr = tape.slice_rows(h, 0, 1)?;
        let resp = tape.slice_rows(h, 1, k)?;
        let instr_rows = tape.broadcast_rows(instr, k)?;
        let scores = self.relevance(tape, layout, instr_rows, resp)?;
        Ok(ForwardVars {
            instruction_rows: instr_rows,
            response_rows: resp,
            scores,
        })
    }

    /// Records the pointwise forward pass for `n` independent pairs.
    pub(crate) fn pointwise_on_tape(
        &self,
        tape: &mut Tape<'_>,
        layout: &Layout,
        pairs: &[(&[f32], &[f32])],
    ) -> Result<ForwardVars, RankerError> {
        let n = pairs.len();
        if n == 0 {
            return Err(RankerError::Contract("no pairs to score".into()));
        }
        let d = self.spec.d_model;
        let learned_instr = layout.instruction_embedding;
        let mut instr_data = Vec::new();
        let mut resp_data = Vec::with_capacity(n * d);
        for (i, r) in pairs {
            self.check_dim(i.len())?;
            self.check_dim(r.len())?;
            if learned_instr.is_none() {
                instr_data.extend(i.iter().map(|&v| v as f64));
            }
            resp_data.extend(r.iter().map(|&v| v as f64));
        }
        let instr_in = match learned_instr {
            Some(e) => {
                let e = tape.param(e);
                tape.broadcast_rows(e, n)?
            }
            None => {
                let x = tape.constant(Tensor2::from_vec(n, d, instr_data));
                self.project_rows(tape, layout, x)?
            }
        };
        let resp_in = tape.constant(Tensor2::from_vec(n, d, resp_data));
        let resp_in = self.project_rows(tape, layout, resp_in)?;
        let instr_rows = self.mlp_stack(tape, layout, instr_in)?;
        let resp_rows = self.mlp_stack(tape, layout, resp_in)?;
        let scores = self.relevance(tape, layout, instr_rows, resp_rows)?;
        Ok(ForwardVars {
            instruction_rows: instr_rows,
            response_rows: resp_rows,
            scores,
        })
    }

    fn trace_from(&self, tape: &Tape<'_>, vars: &ForwardVars, logit_scale: f64) -> ScoringTrace {
        let instr = tape.value(vars.instruction_rows);
        let resp = tape.value(vars.response_rows);
        let scores = tape.value(vars.scores).data().to_vec();
        let probabilities = (self.spec.kind == RankerKind::Pointwise
            && self.spec.relevance == RelevanceKind::Cosine)
            .then(|| scores.iter().map(|&s| sigmoid(logit_scale * s)).collect());
        ScoringTrace {
            projected_instruction: instr.row(0).to_vec(),
            projected_responses: (0..resp.rows()).map(|i| resp.row(i).to_vec()).collect(),
            scores,
            probabilities,
        }
    }

    pub fn score_listwise(&self, group: &CandidateGroup<'_>) -> Result<ScoringTrace, RankerError> {
        if self.spec.kind != RankerKind::Listwise {
            return Err(RankerError::Contract("score_listwise called on a pointwise ranker".into()));
        }
        let layout = self.layout();
        let mut tape = Tape::new(&self.tensors);
        let vars = self.listwise_on_tape(&mut tape, &layout, group.instruction, &group.candidates)?;
        Ok(self.trace_from(&tape, &vars, 1.0))
    }

    /// Scores a single (instruction, response) pair.
    pub fn score_pointwise(&self, instruction: &[f32], response: &[f32]) -> Result<f64, RankerError> {
        Ok(self.score_pointwise_batch(&[(instruction, response)])?[0])
    }

    pub fn score_pointwise_batch(&self, pairs: &[(&[f32], &[f32])]) -> Result<Vec<f64>, RankerError> {
        if self.spec.kind != RankerKind::Pointwise {
            return Err(RankerError::Contract("score_pointwise called on a listwise ranker".into()));
        }
        let layout = self.layout();
        let mut tape = Tape::new(&self.tensors);
        let vars = self.pointwise_on_tape(&mut tape, &layout, pairs)?;
        Ok(tape.value(vars.scores).data().to_vec())
    }

    /// Scores every candidate of a group with whichever architecture this is.
    pub fn score_group(&self, group: &CandidateGroup<'_>) -> Result<ScoringTrace, RankerError> {
        match self.spec.kind {
            RankerKind::Listwise => self.score_listwise(group),
            RankerKind::Pointwise => {
                let layout = self.layout();
                let mut tape = Tape::new(&self.tensors);
                let pairs: Vec<_> = group.candidates.iter().map(|c| (group.instruction, *c)).collect();
                let vars = self.pointwise_on_tape(&mut tape, &layout, &pairs)?;
                Ok(self.trace_from(&tape, &vars, 1.0))
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `a·b / (max(‖a‖, ε)·max(‖b‖, ε))`, clamped to [-1, 1].
pub fn cosine_relevance(a: &[f64], b: &[f64]) -> Result<f64, RankerError> {
    if a.len() != b.len() {
        return Err(RankerError::Contract(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(COSINE_EPS);
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(COSINE_EPS);
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// `W · concat(a, b) + bias`.
pub fn learnable_relevance(a: &[f64], b: &[f64], weight: &[f64], bias: f64) -> Result<f64, RankerError> {
    if a.len() != b.len() || weight.len() != a.len() + b.len() {
        return Err(RankerError::Contract(format!(
            "learnable relevance needs |W| = |a| + |b|, got {} vs {} + {}",
            weight.len(),
            a.len(),
            b.len()
        )));
    }
    let s: f64 = a
        .iter()
        .chain(b)
        .zip(weight)
        .map(|(x, w)| x * w)
        .sum();
    Ok(s + bias)
}

/// Index of the highest score; ties go to the smallest index.
pub fn select_best(scores: &[f64]) -> Result<usize, RankerError> {
    if scores.is_empty() {
        return Err(RankerError::Contract("select_best on an empty score list".into()));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(RankerError::Contract(format!("score {i} is NaN")));
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}
