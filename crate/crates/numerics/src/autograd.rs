//! Reverse-mode autodiff over a linear tape of matrix-valued nodes.
//!
//! Parameters live in a [`ParamStore`] that the tape borrows; their values
//! are never copied onto the tape. Every node is a `rows × cols` matrix
//! (rank-1 parameters are one row, the loss is 1×1). A backward pass returns
//! [`Gradients`] keyed by [`ParamId`]; parameters marked frozen never
//! receive a gradient and the tape does not propagate into subgraphs that
//! only depend on frozen values.

use std::collections::HashMap;

use crate::error::{NumericsError, Result};
use crate::ops::{
    gelu_grad_scalar, gelu_scalar, layer_norm_kernel, log_softmax, matmul_a_bt, matmul_at_b,
    matmul_kernel, softmax_in_place, NormStats,
};
use crate::tensor::{Precision, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
    /// Whether decoupled weight decay applies.
    pub decay: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, mut tensor: Tensor, decay: bool) -> ParamId {
        let name = name.into();
        tensor.set_requires_grad(true);
        assert!(!self.by_name.contains_key(&name), "duplicate parameter `{name}`");
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        self.entries.push(ParamEntry {
            name,
            tensor,
            trainable: true,
            decay,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, on: bool) {
        self.entries[id.0].trainable = on;
        self.entries[id.0].tensor.set_requires_grad(on);
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }
}

/// Per-parameter gradient buffers produced by [`Tape::backward`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn new(num_params: usize) -> Self {
        Self {
            grads: vec![None; num_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.iter().all(Option::is_none)
    }

    fn slot(&mut self, id: ParamId, n: usize) -> &mut Vec<f64> {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        self.grads[id.0].get_or_insert_with(|| vec![0.0; n])
    }

    pub fn accumulate_into(&mut self, id: ParamId, g: &[f64]) {
        let slot = self.slot(id, g.len());
        for (a, b) in slot.iter_mut().zip(g) {
            *a += b;
        }
    }

    /// Adds `other` in parameter order.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate_into(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x *= c);
        }
    }

    pub fn global_norm(&self) -> f64 {
        let mut sq = 0.0;
        for g in self.grads.iter().flatten() {
            for x in g {
                sq += x * x;
            }
        }
        sq.sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_deref().map(|g| (ParamId(i), g)))
    }
}

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Which keys a query row may attend to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttnMask {
    /// Every key.
    Full,
    /// Keys `j <= t` that are also below `valid` (keys past `valid` are padding).
    Causal { valid: usize },
}

impl AttnMask {
    /// Exclusive end of the allowed key range for query row `t` among `keys`.
    #[inline]
    pub fn key_end(self, t: usize, keys: usize) -> usize {
        match self {
            AttnMask::Full => keys,
            AttnMask::Causal { valid } => (t + 1).min(valid).min(keys).max(1.min(keys)),
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Param(ParamId),
    Constant,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: f64,
    },
    Gelu {
        x: Var,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        stats: NormStats,
    },
    GatherRows {
        sources: Vec<Var>,
        picks: Vec<(usize, usize)>,
    },
    PairRotate {
        x: Var,
        coeffs: Vec<[f64; 3]>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        mask: AttnMask,
        scale: f64,
        probs: Vec<f64>,
        keep: Option<Vec<f64>>,
    },
    Dropout {
        x: Var,
        keep: Vec<f64>,
    },
    NllSum {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        scale: f64,
    },
}

#[derive(Clone, Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    precision: Precision,
    grad_enabled: bool,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore, precision: Precision) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            precision,
            grad_enabled: true,
        }
    }

    /// A tape that records values only; `backward` yields no gradients.
    pub fn inference(store: &'s ParamStore, precision: Precision) -> Self {
        Self {
            grad_enabled: false,
            ..Self::new(store, precision)
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0].op {
            Op::Param(id) => self.store.get(*id).data(),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let (r, c) = self.dims(v);
        Tensor::new(vec![r, c], self.value(v).to_vec()).expect("node dims match value")
    }

    /// Number of layer-norm applications recorded so far.
    pub fn layer_norm_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::LayerNorm { .. }))
            .count()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, rows: usize, cols: usize, mut value: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.precision.round_slice(&mut value);
        let needs_grad = self.grad_enabled && inputs.iter().any(|&v| self.needs(v));
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let (rows, cols) = self.store.get(id).matrix_dims();
        let needs_grad = self.grad_enabled && self.store.is_trainable(id);
        self.nodes.push(Node {
            rows,
            cols,
            value: Vec::new(),
            op: Op::Param(id),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        assert_eq!(data.len(), rows * cols, "constant data does not match {rows}×{cols}");
        self.push(rows, cols, data, Op::Constant, &[])
    }

    fn shape_err<T>(&self, what: &str, a: Var, b: Var) -> Result<T> {
        Err(NumericsError::Shape(format!(
            "{what}: {:?} vs {:?}",
            self.dims(a),
            self.dims(b)
        )))
    }

    /// `x · w + b` with `x[T×in]`, `w[in×out]`, `b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (t, inp) = self.dims(x);
        let (inp2, out) = self.dims(w);
        if inp != inp2 {
            return self.shape_err("linear input width", x, w);
        }
        let mut y = matmul_kernel(self.value(x), self.value(w), t, inp, out);
        if let Some(b) = b {
            let bias = self.value(b);
            if bias.len() != out {
                return self.shape_err("linear bias", w, b);
            }
            for row in y.chunks_exact_mut(out) {
                for (v, bv) in row.iter_mut().zip(bias) {
                    *v += bv;
                }
            }
        }
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(t, out, y, Op::Linear { x, w, b }, &inputs))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return self.shape_err("matmul inner dimensions", a, b);
        }
        let y = matmul_kernel(self.value(a), self.value(b), m, k, n);
        Ok(self.push(m, n, y, Op::MatMul { a, b }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.dims(a) != self.dims(b) {
            return self.shape_err("add", a, b);
        }
        let y = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let (r, c) = self.dims(a);
        Ok(self.push(r, c, y, Op::Add { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let y = self.value(x).iter().map(|v| v * c).collect();
        let (r, cols) = self.dims(x);
        self.push(r, cols, y, Op::Scale { x, c }, &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let y = self.value(x).iter().map(|&v| gelu_scalar(v)).collect();
        let (r, c) = self.dims(x);
        self.push(r, c, y, Op::Gelu { x }, &[x])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.value(gain).len() != c || self.value(bias).len() != c {
            return self.shape_err("layer norm gain", x, gain);
        }
        let (y, stats) = layer_norm_kernel(self.value(x), self.value(gain), self.value(bias), c, eps);
        Ok(self.push(r, c, y, Op::LayerNorm { x, gain, bias, stats }, &[x, gain, bias]))
    }

    /// Output row `i` is row `picks[i].1` of `sources[picks[i].0]`.
    pub fn gather_rows(&mut self, sources: &[Var], picks: Vec<(usize, usize)>) -> Result<Var> {
        let cols = match sources.first() {
            Some(&s) => self.dims(s).1,
            None => return Err(NumericsError::Shape("gather from no sources".into())),
        };
        for &s in sources {
            if self.dims(s).1 != cols {
                return self.shape_err("gather sources of different width", sources[0], s);
            }
        }
        let mut y = Vec::with_capacity(picks.len() * cols);
        for &(src, row) in &picks {
            let s = *sources
                .get(src)
                .ok_or_else(|| NumericsError::Shape(format!("gather source {src} does not exist")))?;
            if row >= self.dims(s).0 {
                return Err(NumericsError::Shape(format!(
                    "gather row {row} out of range for source with {} rows",
                    self.dims(s).0
                )));
            }
            y.extend_from_slice(&self.value(s)[row * cols..(row + 1) * cols]);
        }
        let rows = picks.len();
        let op = Op::GatherRows {
            sources: sources.to_vec(),
            picks,
        };
        Ok(self.push(rows, cols, y, op, sources))
    }

    /// Rotates consecutive column pairs and scales them: for row `t` and pair
    /// `p`, with `[cos, sin, s] = coeffs[t * cols / 2 + p]`,
    /// `(a, b) ↦ s·(a·cos − b·sin, a·sin + b·cos)`.
    pub fn pair_rotate(&mut self, x: Var, coeffs: Vec<[f64; 3]>) -> Result<Var> {
        let (r, c) = self.dims(x);
        if c % 2 != 0 || coeffs.len() != r * c / 2 {
            return Err(NumericsError::Shape(format!(
                "pair rotation of a {r}×{c} matrix needs {} coefficient triples, got {}",
                r * c / 2,
                coeffs.len()
            )));
        }
        let src = self.value(x);
        let mut y = vec![0.0; src.len()];
        for (p, &[cos, sin, s]) in coeffs.iter().enumerate() {
            let (a, b) = (src[2 * p], src[2 * p + 1]);
            y[2 * p] = s * (a * cos - b * sin);
            y[2 * p + 1] = s * (a * sin + b * cos);
        }
        Ok(self.push(r, c, y, Op::PairRotate { x, coeffs }, &[x]))
    }

    /// Multi-head scaled dot-product attention. `q[T×D]`, `k[S×D]`, `v[S×D]`
    /// with `heads` equal column blocks. `keep`, when given, multiplies the
    /// attention probabilities (layout `[head][t][s]`); it is how dropout
    /// reaches the attention weights.
    #[allow(clippy::too_many_arguments)]
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        mask: AttnMask,
        scale: f64,
        keep: Option<Vec<f64>>,
    ) -> Result<Var> {
        let (t_len, d) = self.dims(q);
        let (s_len, dk) = self.dims(k);
        if dk != d || self.dims(v) != (s_len, d) {
            return self.shape_err("attention key/value shape", q, k);
        }
        if heads == 0 || d % heads != 0 {
            return Err(NumericsError::Shape(format!("width {d} not divisible into {heads} heads")));
        }
        if s_len == 0 {
            return Err(NumericsError::Shape("attention over zero keys".into()));
        }
        if let Some(keep) = &keep {
            if keep.len() != heads * t_len * s_len {
                return Err(NumericsError::Shape("attention dropout mask size".into()));
            }
        }
        let dh = d / heads;
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![0.0; heads * t_len * s_len];
        let mut out = vec![0.0; t_len * d];
        let mut scores = vec![0.0; s_len];
        for h in 0..heads {
            let off = h * dh;
            for t in 0..t_len {
                let end = mask.key_end(t, s_len);
                let qrow = &qv[t * d + off..t * d + off + dh];
                for (j, sc) in scores[..end].iter_mut().enumerate() {
                    let krow = &kv[j * d + off..j * d + off + dh];
                    let mut dot = 0.0;
                    for (a, b) in qrow.iter().zip(krow) {
                        dot += a * b;
                    }
                    *sc = dot * scale;
                }
                softmax_in_place(&mut scores[..end]);
                let pbase = (h * t_len + t) * s_len;
                probs[pbase..pbase + end].copy_from_slice(&scores[..end]);
                let orow = &mut out[t * d + off..t * d + off + dh];
                for j in 0..end {
                    let p = match &keep {
                        Some(keep) => scores[j] * keep[pbase + j],
                        None => scores[j],
                    };
                    let vrow = &vv[j * d + off..j * d + off + dh];
                    for (o, x) in orow.iter_mut().zip(vrow) {
                        *o += p * x;
                    }
                }
            }
        }
        let op = Op::Attention {
            q,
            k,
            v,
            heads,
            mask,
            scale,
            probs,
            keep,
        };
        Ok(self.push(t_len, d, out, op, &[q, k, v]))
    }

    /// Attention probabilities stored by an attention node, `[head][t][s]`.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Elementwise multiply by a fixed mask (already scaled by `1/(1-p)`).
    pub fn dropout(&mut self, x: Var, keep: Vec<f64>) -> Result<Var> {
        let (r, c) = self.dims(x);
        if keep.len() != r * c {
            return Err(NumericsError::Shape("dropout mask size".into()));
        }
        let y = self.value(x).iter().zip(&keep).map(|(a, k)| a * k).collect();
        Ok(self.push(r, c, y, Op::Dropout { x, keep }, &[x]))
    }

    /// `scale · Σ_t −log softmax(logits_t)[target_t]` over rows where `mask`
    /// is set. Targets of unmasked rows are never read.
    pub fn nll_sum(&mut self, logits: Var, targets: Vec<usize>, mask: Vec<bool>, scale: f64) -> Result<Var> {
        let (rows, vocab) = self.dims(logits);
        if targets.len() != rows || mask.len() != rows {
            return Err(NumericsError::Shape(format!(
                "{rows} logit rows but {} targets and {} mask entries",
                targets.len(),
                mask.len()
            )));
        }
        let (sum, _) = crate::ops::masked_nll_sum(self.value(logits), vocab, &targets, &mask)?;
        let op = Op::NllSum {
            logits,
            targets,
            mask,
            scale,
        };
        Ok(self.push(1, 1, vec![sum * scale], op, &[logits]))
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut out = Gradients::new(self.store.len());
        if !self.needs(root) {
            return out;
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0; self.value(root).len()]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads, &mut out);
        }
        out
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.needs(v) {
            return None;
        }
        let (r, c) = self.dims(v);
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; r * c]))
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>], out: &mut Gradients) {
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => out.accumulate_into(*id, g),
            Op::Linear { x, w, b } => {
                let (t, inp) = self.dims(*x);
                let outw = node.cols;
                if let Some(gx) = self.acc(grads, *x) {
                    let d = matmul_a_bt(g, self.value(*w), t, outw, inp);
                    add_into(gx, &d);
                }
                if let Some(gw) = self.acc(grads, *w) {
                    let d = matmul_at_b(self.value(*x), g, t, inp, outw);
                    add_into(gw, &d);
                }
                if let Some(b) = b {
                    if let Some(gb) = self.acc(grads, *b) {
                        for row in g.chunks_exact(outw) {
                            add_into(gb, row);
                        }
                    }
                }
            }
            Op::MatMul { a, b } => {
                let (m, k) = self.dims(*a);
                let n = node.cols;
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, &matmul_a_bt(g, self.value(*b), m, n, k));
                }
                if let Some(gb) = self.acc(grads, *b) {
                    add_into(gb, &matmul_at_b(self.value(*a), g, m, k, n));
                }
            }
            Op::Add { a, b } => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    add_into(gb, g);
                }
            }
            Op::Scale { x, c } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (a, b) in gx.iter_mut().zip(g) {
                        *a += b * c;
                    }
                }
            }
            Op::Gelu { x } => {
                let xv = self.value(*x);
                if let Some(gx) = self.acc(grads, *x) {
                    for ((a, b), &xi) in gx.iter_mut().zip(g).zip(xv) {
                        *a += b * gelu_grad_scalar(xi);
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, stats } => {
                let cols = node.cols;
                let xv = self.value(*x);
                let gv = self.value(*gain);
                let n = cols as f64;
                let xhat = |r: usize, c: usize| (xv[r * cols + c] - stats.mean[r]) * stats.rstd[r];
                if let Some(gx) = self.acc(grads, *x) {
                    for r in 0..node.rows {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let mut mean_dxhat = 0.0;
                        let mut mean_dxhat_xhat = 0.0;
                        for c in 0..cols {
                            let dxhat = gr[c] * gv[c];
                            mean_dxhat += dxhat;
                            mean_dxhat_xhat += dxhat * xhat(r, c);
                        }
                        mean_dxhat /= n;
                        mean_dxhat_xhat /= n;
                        let rstd = stats.rstd[r];
                        for c in 0..cols {
                            let dxhat = gr[c] * gv[c];
                            gx[r * cols + c] += rstd * (dxhat - mean_dxhat - xhat(r, c) * mean_dxhat_xhat);
                        }
                    }
                }
                if let Some(gg) = self.acc(grads, *gain) {
                    for r in 0..node.rows {
                        for c in 0..cols {
                            gg[c] += g[r * cols + c] * xhat(r, c);
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *bias) {
                    for row in g.chunks_exact(cols) {
                        add_into(gb, row);
                    }
                }
            }
            Op::GatherRows { sources, picks } => {
                let cols = node.cols;
                for (i, &(src, row)) in picks.iter().enumerate() {
                    if let Some(gs) = self.acc(grads, sources[src]) {
                        add_into(&mut gs[row * cols..(row + 1) * cols], &g[i * cols..(i + 1) * cols]);
                    }
                }
            }
            Op::PairRotate { x, coeffs } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (p, &[cos, sin, s]) in coeffs.iter().enumerate() {
                        let (g0, g1) = (g[2 * p], g[2 * p + 1]);
                        gx[2 * p] += s * (g0 * cos + g1 * sin);
                        gx[2 * p + 1] += s * (g1 * cos - g0 * sin);
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                mask,
                scale,
                probs,
                keep,
            } => self.backprop_attention(node, g, grads, [*q, *k, *v], *heads, *mask, *scale, probs, keep.as_deref()),
            Op::Dropout { x, keep } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for ((a, b), k) in gx.iter_mut().zip(g).zip(keep) {
                        *a += b * k;
                    }
                }
            }
            Op::NllSum {
                logits,
                targets,
                mask,
                scale,
            } => {
                let vocab = self.dims(*logits).1;
                let lv = self.value(*logits);
                let coef = g[0] * scale;
                if let Some(gl) = self.acc(grads, *logits) {
                    for (t, &on) in mask.iter().enumerate() {
                        if !on {
                            continue;
                        }
                        let row = &lv[t * vocab..(t + 1) * vocab];
                        let logp = log_softmax(row);
                        let dst = &mut gl[t * vocab..(t + 1) * vocab];
                        for (j, lp) in logp.iter().enumerate() {
                            dst[j] += coef * lp.exp();
                        }
                        dst[targets[t]] -= coef;
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_attention(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        [q, k, v]: [Var; 3],
        heads: usize,
        mask: AttnMask,
        scale: f64,
        probs: &[f64],
        keep: Option<&[f64]>,
    ) {
        let (t_len, d) = (node.rows, node.cols);
        let s_len = self.dims(k).0;
        let dh = d / heads;
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut gq = vec![0.0; t_len * d];
        let mut gk = vec![0.0; s_len * d];
        let mut gv = vec![0.0; s_len * d];
        let mut dp = vec![0.0; s_len];
        for h in 0..heads {
            let off = h * dh;
            for t in 0..t_len {
                let end = mask.key_end(t, s_len);
                let pbase = (h * t_len + t) * s_len;
                let p = &probs[pbase..pbase + end];
                let grow = &g[t * d + off..t * d + off + dh];
                for j in 0..end {
                    let vrow = &vv[j * d + off..j * d + off + dh];
                    let mut dot = 0.0;
                    for (a, b) in grow.iter().zip(vrow) {
                        dot += a * b;
                    }
                    let kj = keep.map_or(1.0, |kp| kp[pbase + j]);
                    let pk = p[j] * kj;
                    let gvrow = &mut gv[j * d + off..j * d + off + dh];
                    for (a, b) in gvrow.iter_mut().zip(grow) {
                        *a += pk * b;
                    }
                    dp[j] = dot * kj;
                }
                let mut inner = 0.0;
                for j in 0..end {
                    inner += p[j] * dp[j];
                }
                let qrow = &qv[t * d + off..t * d + off + dh];
                for j in 0..end {
                    let ds = p[j] * (dp[j] - inner) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let krow = &kv[j * d + off..j * d + off + dh];
                    let gqrow = &mut gq[t * d + off..t * d + off + dh];
                    for (a, b) in gqrow.iter_mut().zip(krow) {
                        *a += ds * b;
                    }
                    let gkrow = &mut gk[j * d + off..j * d + off + dh];
                    for (a, b) in gkrow.iter_mut().zip(qrow) {
                        *a += ds * b;
                    }
                }
            }
        }
        if let Some(acc) = self.acc(grads, q) {
            add_into(acc, &gq);
        }
        if let Some(acc) = self.acc(grads, k) {
            add_into(acc, &gk);
        }
        if let Some(acc) = self.acc(grads, v) {
            add_into(acc, &gv);
        }
    }
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}
