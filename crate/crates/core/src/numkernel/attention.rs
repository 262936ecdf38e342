use super::{KernelError, Tape, Var};

/// Positions of one encoder block's tensors inside a parameter slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockParamIndex {
    pub ln1_gain: usize,
    pub ln1_shift: usize,
    pub q_weight: usize,
    pub q_bias: usize,
    pub k_weight: usize,
    pub k_bias: usize,
    pub v_weight: usize,
    pub v_bias: usize,
    pub o_weight: usize,
    pub o_bias: usize,
    pub ln2_gain: usize,
    pub ln2_shift: usize,
    pub ff1_weight: usize,
    pub ff1_bias: usize,
    pub ff2_weight: usize,
    pub ff2_bias: usize,
}

/// One pre-norm encoder block with a single attention head and a GELU
/// feed-forward:
///
/// ```text
/// h = x + Attn(LN1(x))
/// y = h + FFN(LN2(h))
/// ```
///
/// No positional information is injected, so permuting input rows permutes
/// output rows.
pub fn attention_block(tape: &mut Tape<'_>, x: Var, p: &BlockParamIndex) -> Result<Var, KernelError> {
    let d = tape.value(x).cols();
    let g1 = tape.param(p.ln1_gain);
    let s1 = tape.param(p.ln1_shift);
    let h = tape.layer_norm(x, g1, s1)?;

    let (wq, bq) = (tape.param(p.q_weight), tape.param(p.q_bias));
    let (wk, bk) = (tape.param(p.k_weight), tape.param(p.k_bias));
    let (wv, bv) = (tape.param(p.v_weight), tape.param(p.v_bias));
    let q = tape.linear(h, wq, Some(bq))?;
    let k = tape.linear(h, wk, Some(bk))?;
    let v = tape.linear(h, wv, Some(bv))?;

    let logits = tape.matmul_nt(q, k)?;
    let logits = tape.scale(logits, 1.0 / (d as f64).sqrt());
    let weights = tape.softmax_rows(logits);
    let mixed = tape.matmul(weights, v)?;
    let (wo, bo) = (tape.param(p.o_weight), tape.param(p.o_bias));
    let attn = tape.linear(mixed, wo, Some(bo))?;
    let x1 = tape.add(x, attn)?;

    let g2 = tape.param(p.ln2_gain);
    let s2 = tape.param(p.ln2_shift);
    let h2 = tape.layer_norm(x1, g2, s2)?;
    let (w1, b1) = (tape.param(p.ff1_weight), tape.param(p.ff1_bias));
    let (w2, b2) = (tape.param(p.ff2_weight), tape.param(p.ff2_bias));
    let f = tape.linear(h2, w1, Some(b1))?;
    let f = tape.gelu(f);
    let f = tape.linear(f, w2, Some(b2))?;
    tape.add(x1, f)
}
