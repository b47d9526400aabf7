//! Dense building blocks with explicit forward caches and backward passes.
//!
//! Activations are row-major `(tokens, features)` matrices. Every layer's
//! `backward` accumulates parameter gradients into a same-shaped layer value
//! and returns the gradient with respect to its input.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;

use crate::{Result, SpaNetError};

pub const LN_EPS: f64 = 1e-5;

/// Callback receiving a tensor name, shape and values.
pub type Visitor<'a> = dyn FnMut(&str, &[usize], &[f64]) + 'a;

/// Named walk over parameter tensors, in a fixed order.
pub trait Params {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_>);
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64]));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn visit_array<D: ndarray::Dimension>(
    name: &str,
    a: &ndarray::Array<f64, D>,
    f: &mut Visitor<'_>,
) {
    f(
        name,
        a.shape(),
        a.as_slice().expect("parameters are contiguous"),
    );
}

pub(crate) fn visit_array_mut<D: ndarray::Dimension>(
    name: &str,
    a: &mut ndarray::Array<f64, D>,
    f: &mut dyn FnMut(&str, &mut [f64]),
) {
    f(name, a.as_slice_mut().expect("parameters are contiguous"));
}

pub(crate) fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, limit: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..=limit))
}

/// `y = x W + b` with `W` stored as `(in, out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn new(rng: &mut impl Rng, input: usize, output: usize) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        Self {
            w: uniform(rng, input, output, limit),
            b: Array1::zeros(output),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Array2::zeros((input, output)),
            b: Array1::zeros(output),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, g: &mut Linear) -> Array2<f64> {
        general_mat_mul(1.0, &x.t(), dy, 1.0, &mut g.w);
        g.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w.t())
    }
}

impl Params for Linear {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_>) {
        visit_array(&join(prefix, "w"), &self.w, f);
        visit_array(&join(prefix, "b"), &self.b, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        visit_array_mut(&join(prefix, "w"), &mut self.w, f);
        visit_array_mut(&join(prefix, "b"), &mut self.b, f);
    }
}

/// Row-wise standardization without affine parameters.
pub fn standardize_rows(x: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *is = 1.0 / (var + LN_EPS).sqrt();
        row *= *is;
    }
    (xhat, inv_std)
}

pub fn standardize_rows_backward(
    xhat: &Array2<f64>,
    inv_std: &Array1<f64>,
    dxhat: &Array2<f64>,
) -> Array2<f64> {
    let d = xhat.ncols() as f64;
    let mut dx = Array2::zeros(xhat.raw_dim());
    for i in 0..xhat.nrows() {
        let (xh, dh) = (xhat.row(i), dxhat.row(i));
        let mean_dh = dh.sum() / d;
        let mean_dh_xh = dh.dot(&xh) / d;
        let mut out = dx.row_mut(i);
        for j in 0..xhat.ncols() {
            out[j] = inv_std[i] * (dh[j] - mean_dh - xh[j] * mean_dh_xh);
        }
    }
    dx
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Clone, Debug)]
pub struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            gamma: Array1::zeros(dim),
            beta: Array1::zeros(dim),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LnCache) {
        let (xhat, inv_std) = standardize_rows(x);
        let y = &xhat * &self.gamma + &self.beta;
        (y, LnCache { xhat, inv_std })
    }

    pub fn backward(&self, c: &LnCache, dy: &Array2<f64>, g: &mut LayerNorm) -> Array2<f64> {
        g.gamma += &(dy * &c.xhat).sum_axis(Axis(0));
        g.beta += &dy.sum_axis(Axis(0));
        let dxhat = dy * &self.gamma;
        standardize_rows_backward(&c.xhat, &c.inv_std, &dxhat)
    }
}

impl Params for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_>) {
        visit_array(&join(prefix, "gamma"), &self.gamma, f);
        visit_array(&join(prefix, "beta"), &self.beta, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        visit_array_mut(&join(prefix, "gamma"), &mut self.gamma, f);
        visit_array_mut(&join(prefix, "beta"), &mut self.beta, f);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Multi-head scaled dot-product self-attention. An optional key mask
/// removes invalid rows from every softmax; all rows still act as queries.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

#[derive(Clone, Debug)]
pub struct AttnCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    merged: Array2<f64>,
}

impl Attention {
    pub fn new(rng: &mut impl Rng, dim: usize, heads: usize) -> Self {
        Self {
            heads,
            q: Linear::new(rng, dim, dim),
            k: Linear::new(rng, dim, dim),
            v: Linear::new(rng, dim, dim),
            o: Linear::new(rng, dim, dim),
        }
    }

    pub fn zeros(dim: usize, heads: usize) -> Self {
        Self {
            heads,
            q: Linear::zeros(dim, dim),
            k: Linear::zeros(dim, dim),
            v: Linear::zeros(dim, dim),
            o: Linear::zeros(dim, dim),
        }
    }

    pub fn forward(
        &self,
        x: &Array2<f64>,
        mask: Option<&[bool]>,
    ) -> Result<(Array2<f64>, AttnCache)> {
        let n = x.nrows();
        if let Some(m) = mask {
            if m.len() != n {
                return Err(SpaNetError::Shape {
                    what: "attention mask",
                    expected: n,
                    actual: m.len(),
                });
            }
            if !m.iter().any(|&v| v) {
                return Err(SpaNetError::EmptyMask);
            }
        }
        let dim = self.q.out_dim();
        let dh = dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (q, k, v) = (self.q.forward(x), self.k.forward(x), self.v.forward(x));
        let mut merged = Array2::zeros((n, dim));
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut p = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            for mut row in p.rows_mut() {
                let mx = row
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| mask.is_none_or(|m| m[*j]))
                    .map(|(_, v)| *v)
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (j, e) in row.iter_mut().enumerate() {
                    *e = if mask.is_none_or(|m| m[j]) {
                        (*e - mx).exp()
                    } else {
                        0.0
                    };
                    sum += *e;
                }
                row /= sum;
            }
            merged.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
            probs.push(p);
        }
        let y = self.o.forward(&merged);
        Ok((
            y,
            AttnCache {
                x: x.clone(),
                q,
                k,
                v,
                probs,
                merged,
            },
        ))
    }

    pub fn backward(&self, c: &AttnCache, dy: &Array2<f64>, g: &mut Attention) -> Array2<f64> {
        let dim = self.q.out_dim();
        let dh = dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let dmerged = self.o.backward(&c.merged, dy, &mut g.o);
        let mut dq = Array2::zeros(c.q.raw_dim());
        let mut dk = Array2::zeros(c.k.raw_dim());
        let mut dv = Array2::zeros(c.v.raw_dim());
        for (h, p) in c.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let dout = dmerged.slice(cols);
            dv.slice_mut(cols).assign(&p.t().dot(&dout));
            let dp = dout.dot(&c.v.slice(cols).t());
            // softmax backward, row by row
            let mut ds = &dp * p;
            for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                let dot = row.sum();
                row.zip_mut_with(&prow, |d, &pv| *d -= pv * dot);
            }
            ds *= scale;
            dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
        }
        self.q.backward(&c.x, &dq, &mut g.q)
            + self.k.backward(&c.x, &dk, &mut g.k)
            + self.v.backward(&c.x, &dv, &mut g.v)
    }
}

impl Params for Attention {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_>) {
        self.q.visit(&join(prefix, "q"), f);
        self.k.visit(&join(prefix, "k"), f);
        self.v.visit(&join(prefix, "v"), f);
        self.o.visit(&join(prefix, "o"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.q.visit_mut(&join(prefix, "q"), f);
        self.k.visit_mut(&join(prefix, "k"), f);
        self.v.visit_mut(&join(prefix, "v"), f);
        self.o.visit_mut(&join(prefix, "o"), f);
    }
}

/// Pre-norm transformer block: `x + attn(ln1(x))`, then `x + ff(ln2(x))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

#[derive(Clone, Debug)]
pub struct BlockCache {
    ln1: LnCache,
    attn: AttnCache,
    ln2: LnCache,
    ff_in: Array2<f64>,
    hidden: Array2<f64>,
    act: Array2<f64>,
}

impl Block {
    pub fn new(rng: &mut impl Rng, dim: usize, heads: usize, ff_hidden: usize) -> Self {
        Self {
            ln1: LayerNorm::new(dim),
            attn: Attention::new(rng, dim, heads),
            ln2: LayerNorm::new(dim),
            ff1: Linear::new(rng, dim, ff_hidden),
            ff2: Linear::new(rng, ff_hidden, dim),
        }
    }

    pub fn zeros(dim: usize, heads: usize, ff_hidden: usize) -> Self {
        Self {
            ln1: LayerNorm::zeros(dim),
            attn: Attention::zeros(dim, heads),
            ln2: LayerNorm::zeros(dim),
            ff1: Linear::zeros(dim, ff_hidden),
            ff2: Linear::zeros(ff_hidden, dim),
        }
    }

    pub fn forward(
        &self,
        x: &Array2<f64>,
        mask: Option<&[bool]>,
    ) -> Result<(Array2<f64>, BlockCache)> {
        let (a, ln1) = self.ln1.forward(x);
        let (att, attn) = self.attn.forward(&a, mask)?;
        let x1 = x + &att;
        let (ff_in, ln2) = self.ln2.forward(&x1);
        let hidden = self.ff1.forward(&ff_in);
        let act = hidden.mapv(gelu);
        let x2 = &x1 + &self.ff2.forward(&act);
        Ok((
            x2,
            BlockCache {
                ln1,
                attn,
                ln2,
                ff_in,
                hidden,
                act,
            },
        ))
    }

    pub fn backward(&self, c: &BlockCache, dy: &Array2<f64>, g: &mut Block) -> Array2<f64> {
        let dact = self.ff2.backward(&c.act, dy, &mut g.ff2);
        let mut dhidden = dact;
        dhidden.zip_mut_with(&c.hidden, |d, &h| *d *= gelu_grad(h));
        let dff_in = self.ff1.backward(&c.ff_in, &dhidden, &mut g.ff1);
        let dx1 = dy + &self.ln2.backward(&c.ln2, &dff_in, &mut g.ln2);
        let da = self.attn.backward(&c.attn, &dx1, &mut g.attn);
        &dx1 + &self.ln1.backward(&c.ln1, &da, &mut g.ln1)
    }
}

impl Params for Block {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_>) {
        self.ln1.visit(&join(prefix, "ln1"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.ln2.visit(&join(prefix, "ln2"), f);
        self.ff1.visit(&join(prefix, "ff1"), f);
        self.ff2.visit(&join(prefix, "ff2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.ln1.visit_mut(&join(prefix, "ln1"), f);
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.ln2.visit_mut(&join(prefix, "ln2"), f);
        self.ff1.visit_mut(&join(prefix, "ff1"), f);
        self.ff2.visit_mut(&join(prefix, "ff2"), f);
    }
}

/// Stack of pre-norm blocks. There is no trailing norm: branch outputs are
/// standardized after pooling, and a per-token norm here would also discard
/// the overall intensity of the frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub blocks: Vec<Block>,
}

#[derive(Clone, Debug)]
pub struct EncoderCache {
    blocks: Vec<BlockCache>,
}

impl Encoder {
    pub fn new(
        rng: &mut impl Rng,
        dim: usize,
        heads: usize,
        ff_hidden: usize,
        layers: usize,
    ) -> Self {
        Self {
            blocks: (0..layers)
                .map(|_| Block::new(rng, dim, heads, ff_hidden))
                .collect(),
        }
    }

    pub fn zeros(dim: usize, heads: usize, ff_hidden: usize, layers: usize) -> Self {
        Self {
            blocks: (0..layers)
                .map(|_| Block::zeros(dim, heads, ff_hidden))
                .collect(),
        }
    }

    pub fn forward(
        &self,
        x: &Array2<f64>,
        mask: Option<&[bool]>,
    ) -> Result<(Array2<f64>, EncoderCache)> {
        let mut h = x.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, c) = b.forward(&h, mask)?;
            h = next;
            blocks.push(c);
        }
        Ok((h, EncoderCache { blocks }))
    }

    pub fn backward(&self, c: &EncoderCache, dy: &Array2<f64>, g: &mut Encoder) -> Array2<f64> {
        let mut d = dy.clone();
        for ((b, bc), bg) in self.blocks.iter().zip(&c.blocks).zip(&mut g.blocks).rev() {
            d = b.backward(bc, &d, bg);
        }
        d
    }
}

impl Params for Encoder {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("block{i}")), f);
        }
    }
}
