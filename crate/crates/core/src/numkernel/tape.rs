use super::tensor::{dot, matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor2};
use super::KernelError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
pub(crate) const COSINE_EPS: f64 = 1e-8;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

enum Op {
    Param(usize),
    Const,
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMul { a: Var, b: Var },
    MatMulNT { a: Var, b: Var },
    Add { a: Var, b: Var },
    Scale { a: Var, c: f64 },
    Gelu { a: Var },
    LayerNorm { x: Var, gain: Var, shift: Var, xhat: Tensor2, rstd: Vec<f64> },
    SoftmaxRows { a: Var },
    SliceRows { a: Var, start: usize },
    ConcatRows { parts: Vec<Var> },
    BroadcastRows { a: Var },
    ConcatCols { a: Var, b: Var },
    CosineRows { a: Var, b: Var, a_norms: Vec<FlooredNorm>, b_norms: Vec<FlooredNorm> },
}

struct Node {
    op: Op,
    value: Option<Tensor2>,
    needs_grad: bool,
}

/// Records primitive ops in forward order so that [`Tape::backward`] can
/// replay them in reverse.
///
/// Parameters are borrowed, never copied; their gradients are accumulated
/// into a caller-owned buffer indexed like the parameter slice.
pub struct Tape<'p> {
    params: &'p [Tensor2],
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Tensor2]) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(64),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(i) => &self.params[i],
            _ => node.value.as_ref().expect("non-param node carries a value"),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, op: Op, value: Tensor2, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, index: usize) -> Var {
        assert!(index < self.params.len(), "parameter index {index} out of range");
        self.nodes.push(Node {
            op: Op::Param(index),
            value: None,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor2) -> Var {
        self.push(Op::Const, value, false)
    }

    /// `x · w + b` with `x: n×a`, `w: a×b`, `b: 1×b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, KernelError> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        if xs.1 != ws.0 {
            return Err(KernelError::shape("linear", xs, ws));
        }
        if let Some(b) = b {
            let bs = self.value(b).shape();
            if bs != (1, ws.1) {
                return Err(KernelError::shape("linear bias", ws, bs));
            }
        }
        let mut out = Tensor2::zeros(xs.0, ws.1);
        matmul_acc(self.value(x), self.value(w), &mut out);
        if let Some(b) = b {
            let bias = self.value(b).data().to_vec();
            for i in 0..xs.0 {
                for (o, bj) in out.row_mut(i).iter_mut().zip(&bias) {
                    *o += bj;
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(Op::Linear { x, w, b }, out, needs))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let (as_, bs) = (self.value(a).shape(), self.value(b).shape());
        if as_.1 != bs.0 {
            return Err(KernelError::shape("matmul", as_, bs));
        }
        let mut out = Tensor2::zeros(as_.0, bs.1);
        matmul_acc(self.value(a), self.value(b), &mut out);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMul { a, b }, out, needs))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let (as_, bs) = (self.value(a).shape(), self.value(b).shape());
        if as_.1 != bs.1 {
            return Err(KernelError::shape("matmul_nt", as_, bs));
        }
        let mut out = Tensor2::zeros(as_.0, bs.0);
        matmul_nt_acc(self.value(a), self.value(b), &mut out);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMulNT { a, b }, out, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let (as_, bs) = (self.value(a).shape(), self.value(b).shape());
        if as_ != bs {
            return Err(KernelError::shape("add", as_, bs));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add { a, b }, out, needs))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale_assign(c);
        let needs = self.needs(a);
        self.push(Op::Scale { a, c }, out, needs)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let data = src.data().iter().map(|&x| gelu(x)).collect();
        let out = Tensor2::from_vec(src.rows(), src.cols(), data);
        let needs = self.needs(a);
        self.push(Op::Gelu { a }, out, needs)
    }

    /// Row-wise layer norm with population variance and ε = 1e-5.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var) -> Result<Var, KernelError> {
        let xs = self.value(x).shape();
        for g in [gain, shift] {
            let gs = self.value(g).shape();
            if gs != (1, xs.1) {
                return Err(KernelError::shape("layer_norm", xs, gs));
            }
        }
        if xs.1 < 2 {
            return Err(KernelError::Precondition(format!(
                "layer_norm needs at least 2 columns, got {}",
                xs.1
            )));
        }
        let d = xs.1 as f64;
        let src = self.value(x);
        let (g, s) = (self.value(gain).data(), self.value(shift).data());
        let mut xhat = Tensor2::zeros(xs.0, xs.1);
        let mut out = Tensor2::zeros(xs.0, xs.1);
        let mut rstd = Vec::with_capacity(xs.0);
        for i in 0..xs.0 {
            let row = src.row(i);
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let r = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(r);
            let xh = xhat.row_mut(i);
            for (h, v) in xh.iter_mut().zip(row) {
                *h = (v - mean) * r;
            }
            let xh = xhat.row(i).to_vec();
            for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = xh[j] * g[j] + s[j];
            }
        }
        let needs = self.needs(x) || self.needs(gain) || self.needs(shift);
        Ok(self.push(
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                rstd,
            },
            out,
            needs,
        ))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let mut out = src.clone();
        for i in 0..out.rows() {
            softmax_in_place(out.row_mut(i));
        }
        let needs = self.needs(a);
        self.push(Op::SoftmaxRows { a }, out, needs)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, KernelError> {
        let s = self.value(a).shape();
        if start + len > s.0 {
            return Err(KernelError::shape("slice_rows", s, (start, len)));
        }
        let out = self.value(a).slice_rows(start, len);
        let needs = self.needs(a);
        Ok(self.push(Op::SliceRows { a, start }, out, needs))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, KernelError> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(KernelError::shape(
                    "concat_rows",
                    self.value(parts[0]).shape(),
                    t.shape(),
                ));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        let out = Tensor2::from_vec(rows, cols, data);
        Ok(self.push(
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
            out,
            needs,
        ))
    }

    /// Repeats a `1×d` row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var, KernelError> {
        let s = self.value(a).shape();
        if s.0 != 1 {
            return Err(KernelError::shape("broadcast_rows", s, (n, s.1)));
        }
        let row = self.value(a).data();
        let mut data = Vec::with_capacity(n * s.1);
        for _ in 0..n {
            data.extend_from_slice(row);
        }
        let out = Tensor2::from_vec(n, s.1, data);
        let needs = self.needs(a);
        Ok(self.push(Op::BroadcastRows { a }, out, needs))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let (as_, bs) = (self.value(a).shape(), self.value(b).shape());
        if as_.0 != bs.0 {
            return Err(KernelError::shape("concat_cols", as_, bs));
        }
        let mut out = Tensor2::zeros(as_.0, as_.1 + bs.1);
        for i in 0..as_.0 {
            let row = out.row_mut(i);
            row[..as_.1].copy_from_slice(self.value(a).row(i));
            row[as_.1..].copy_from_slice(self.value(b).row(i));
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::ConcatCols { a, b }, out, needs))
    }

    /// Row-wise cosine similarity between paired rows of `a` and `b`,
    /// returned as an `n×1` column. Norms are floored at 1e-8 and the
    /// result clamped to [-1, 1].
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let (as_, bs) = (self.value(a).shape(), self.value(b).shape());
        if as_ != bs {
            return Err(KernelError::shape("cosine_rows", as_, bs));
        }
        let (at, bt) = (self.value(a), self.value(b));
        let mut a_norms = Vec::with_capacity(as_.0);
        let mut b_norms = Vec::with_capacity(as_.0);
        let mut out = Tensor2::zeros(as_.0, 1);
        for j in 0..as_.0 {
            let (ar, br) = (at.row(j), bt.row(j));
            let na = FlooredNorm::of(ar);
            let nb = FlooredNorm::of(br);
            let c = dot(ar, br) / (na.value * nb.value);
            out.set(j, 0, c.clamp(-1.0, 1.0));
            a_norms.push(na);
            b_norms.push(nb);
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Op::CosineRows {
                a,
                b,
                a_norms,
                b_norms,
            },
            out,
            needs,
        ))
    }

    /// Reverse-mode sweep. Each seed is `(output, dL/d output)`; parameter
    /// gradients are added into `param_grads`, which must mirror the
    /// parameter slice the tape was built on.
    pub fn backward(&self, seeds: &[(Var, Tensor2)], param_grads: &mut [Tensor2]) {
        assert_eq!(param_grads.len(), self.params.len());
        let mut grads: Vec<Option<Tensor2>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            assert_eq!(self.value(*v).shape(), g.shape(), "seed shape mismatch");
            accumulate(&mut grads[v.0], g.clone());
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Param(i) => param_grads[*i].add_assign(&grad),
                Op::Const => {}
                Op::Linear { x, w, b } => {
                    if self.needs(*x) {
                        let wt = self.value(*w);
                        let mut dx = Tensor2::zeros(grad.rows(), wt.rows());
                        matmul_nt_acc(&grad, wt, &mut dx);
                        accumulate(&mut grads[x.0], dx);
                    }
                    if self.needs(*w) {
                        let xt = self.value(*x);
                        let mut dw = Tensor2::zeros(xt.cols(), grad.cols());
                        matmul_tn_acc(xt, &grad, &mut dw);
                        accumulate(&mut grads[w.0], dw);
                    }
                    if let Some(b) = b {
                        if self.needs(*b) {
                            let mut db = Tensor2::zeros(1, grad.cols());
                            for i in 0..grad.rows() {
                                for (d, g) in db.data_mut().iter_mut().zip(grad.row(i)) {
                                    *d += g;
                                }
                            }
                            accumulate(&mut grads[b.0], db);
                        }
                    }
                }
                Op::MatMul { a, b } => {
                    if self.needs(*a) {
                        let bt = self.value(*b);
                        let mut da = Tensor2::zeros(grad.rows(), bt.rows());
                        matmul_nt_acc(&grad, bt, &mut da);
                        accumulate(&mut grads[a.0], da);
                    }
                    if self.needs(*b) {
                        let at = self.value(*a);
                        let mut db = Tensor2::zeros(at.cols(), grad.cols());
                        matmul_tn_acc(at, &grad, &mut db);
                        accumulate(&mut grads[b.0], db);
                    }
                }
                Op::MatMulNT { a, b } => {
                    if self.needs(*a) {
                        let bt = self.value(*b);
                        let mut da = Tensor2::zeros(grad.rows(), bt.cols());
                        matmul_acc(&grad, bt, &mut da);
                        accumulate(&mut grads[a.0], da);
                    }
                    if self.needs(*b) {
                        let at = self.value(*a);
                        let mut db = Tensor2::zeros(grad.cols(), at.cols());
                        matmul_tn_acc(&grad, at, &mut db);
                        accumulate(&mut grads[b.0], db);
                    }
                }
                Op::Add { a, b } => {
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], grad.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads[b.0], grad);
                    }
                }
                Op::Scale { a, c } => {
                    let mut g = grad;
                    g.scale_assign(*c);
                    accumulate(&mut grads[a.0], g);
                }
                Op::Gelu { a } => {
                    let src = self.value(*a);
                    let mut g = grad;
                    for (gi, &x) in g.data_mut().iter_mut().zip(src.data()) {
                        *gi *= gelu_grad(x);
                    }
                    accumulate(&mut grads[a.0], g);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    shift,
                    xhat,
                    rstd,
                } => {
                    let (n, d) = grad.shape();
                    if self.needs(*gain) || self.needs(*shift) {
                        let mut dg = Tensor2::zeros(1, d);
                        let mut ds = Tensor2::zeros(1, d);
                        for i in 0..n {
                            for j in 0..d {
                                let gij = grad.get(i, j);
                                dg.data_mut()[j] += gij * xhat.get(i, j);
                                ds.data_mut()[j] += gij;
                            }
                        }
                        if self.needs(*gain) {
                            accumulate(&mut grads[gain.0], dg);
                        }
                        if self.needs(*shift) {
                            accumulate(&mut grads[shift.0], ds);
                        }
                    }
                    if self.needs(*x) {
                        let g = self.value(*gain).data();
                        let mut dx = Tensor2::zeros(n, d);
                        for (i, &r) in rstd.iter().enumerate().take(n) {
                            let dxhat: Vec<f64> =
                                grad.row(i).iter().zip(g).map(|(a, b)| a * b).collect();
                            let xh = xhat.row(i);
                            let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                            let mean_dx = dot(&dxhat, xh) / d as f64;
                            for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                                *o = r * (dxhat[j] - mean_d - xh[j] * mean_dx);
                            }
                        }
                        accumulate(&mut grads[x.0], dx);
                    }
                }
                Op::SoftmaxRows { a } => {
                    let y = node.value.as_ref().unwrap();
                    let mut da = Tensor2::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let yr = y.row(i);
                        let gr = grad.row(i);
                        let inner = dot(yr, gr);
                        for (j, o) in da.row_mut(i).iter_mut().enumerate() {
                            *o = yr[j] * (gr[j] - inner);
                        }
                    }
                    accumulate(&mut grads[a.0], da);
                }
                Op::SliceRows { a, start } => {
                    let src = self.value(*a);
                    let mut da = Tensor2::zeros(src.rows(), src.cols());
                    let c = src.cols();
                    da.data_mut()[start * c..start * c + grad.len()].copy_from_slice(grad.data());
                    accumulate(&mut grads[a.0], da);
                }
                Op::ConcatRows { parts } => {
                    let mut offset = 0;
                    for p in parts {
                        let r = self.value(*p).rows();
                        if self.needs(*p) {
                            accumulate(&mut grads[p.0], grad.slice_rows(offset, r));
                        }
                        offset += r;
                    }
                }
                Op::BroadcastRows { a } => {
                    let mut da = Tensor2::zeros(1, grad.cols());
                    for i in 0..grad.rows() {
                        for (d, g) in da.data_mut().iter_mut().zip(grad.row(i)) {
                            *d += g;
                        }
                    }
                    accumulate(&mut grads[a.0], da);
                }
                Op::ConcatCols { a, b } => {
                    let ac = self.value(*a).cols();
                    let bc = self.value(*b).cols();
                    let n = grad.rows();
                    if self.needs(*a) {
                        let mut da = Tensor2::zeros(n, ac);
                        for i in 0..n {
                            da.row_mut(i).copy_from_slice(&grad.row(i)[..ac]);
                        }
                        accumulate(&mut grads[a.0], da);
                    }
                    if self.needs(*b) {
                        let mut db = Tensor2::zeros(n, bc);
                        for i in 0..n {
                            db.row_mut(i).copy_from_slice(&grad.row(i)[ac..]);
                        }
                        accumulate(&mut grads[b.0], db);
                    }
                }
                Op::CosineRows {
                    a,
                    b,
                    a_norms,
                    b_norms,
                } => {
                    let at = self.value(*a);
                    let bt = self.value(*b);
                    let s = node.value.as_ref().unwrap();
                    let (n, d) = at.shape();
                    let mut da = Tensor2::zeros(n, d);
                    let mut db = Tensor2::zeros(n, d);
                    for j in 0..n {
                        let g = grad.get(j, 0);
                        if g == 0.0 {
                            continue;
                        }
                        let (ar, br) = (at.row(j), bt.row(j));
                        let (na, nb) = (a_norms[j], b_norms[j]);
                        let sj = s.get(j, 0);
                        let inv = 1.0 / (na.value * nb.value);
                        let dar = da.row_mut(j);
                        for k in 0..d {
                            let mut ga = br[k] * inv;
                            if !na.floored {
                                ga -= sj * ar[k] / (na.value * na.value);
                            }
                            dar[k] = g * ga;
                        }
                        let dbr = db.row_mut(j);
                        for k in 0..d {
                            let mut gb = ar[k] * inv;
                            if !nb.floored {
                                gb -= sj * br[k] / (nb.value * nb.value);
                            }
                            dbr[k] = g * gb;
                        }
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], da);
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads[b.0], db);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct FlooredNorm {
    value: f64,
    floored: bool,
}

impl FlooredNorm {
    fn of(v: &[f64]) -> Self {
        let raw = dot(v, v).sqrt();
        Self {
            value: raw.max(COSINE_EPS),
            floored: raw < COSINE_EPS,
        }
    }
}

fn accumulate(slot: &mut Option<Tensor2>, g: Tensor2) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

/// Tanh-approximation GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Max-subtracted softmax.
pub fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}
