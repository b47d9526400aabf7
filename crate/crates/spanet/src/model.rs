//! Dual-branch regressor: a patch-token transformer and a superpixel-token
//! transformer, each mean-pooled and projected, standardized, concatenated
//! and fed through a one-hidden-layer head.

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{SpaNetConfig, SUPERPIXEL_ENCODING};
use crate::layers::{
    gelu, gelu_grad, join, standardize_rows, standardize_rows_backward, uniform, visit_array,
    visit_array_mut, Encoder, EncoderCache, Linear, Params, Visitor,
};
use crate::{Result, SpaNetError};

/// Scale of the uniform initialization of learned positional embeddings.
pub const POS_INIT: f64 = 0.05;

/// Padded superpixel rows. `features` is `(k, 6)`, `encodings` `(k, 3)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperpixelInput {
    pub features: Array2<f64>,
    pub encodings: Array2<f64>,
    pub mask: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpaNetInput {
    /// `(n_patches, patch_dim)` flattened patches in `[0, 1]`.
    pub tokens: Array2<f64>,
    pub superpixels: Option<SuperpixelInput>,
}

fn shape_check(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(SpaNetError::Shape {
            what,
            expected,
            actual,
        })
    }
}

fn finite_check(what: &str, a: &Array2<f64>) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SpaNetError::NonFinite(what.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PixelBranch {
    pub patch: Linear,
    pub pos: Array2<f64>,
    pub encoder: Encoder,
    pub out: Linear,
}

pub struct PixelCache {
    tokens: Array2<f64>,
    encoder: EncoderCache,
    pooled: Array2<f64>,
    n: usize,
}

impl PixelBranch {
    fn new(rng: &mut impl Rng, c: &SpaNetConfig) -> Self {
        Self {
            patch: Linear::new(rng, c.patch_dim(), c.token_dim),
            pos: uniform(rng, c.n_patches(), c.token_dim, POS_INIT),
            encoder: Encoder::new(rng, c.token_dim, c.heads, c.ff_hidden, c.layers),
            out: Linear::new(rng, c.token_dim, c.branch_out),
        }
    }

    fn zeros(c: &SpaNetConfig) -> Self {
        Self {
            patch: Linear::zeros(c.patch_dim(), c.token_dim),
            pos: Array2::zeros((c.n_patches(), c.token_dim)),
            encoder: Encoder::zeros(c.token_dim, c.heads, c.ff_hidden, c.layers),
            out: Linear::zeros(c.token_dim, c.branch_out),
        }
    }

    pub fn forward(&self, tokens: &Array2<f64>) -> Result<(Array1<f64>, PixelCache)> {
        shape_check("patch tokens", self.pos.nrows(), tokens.nrows())?;
        shape_check("patch token width", self.patch.in_dim(), tokens.ncols())?;
        let z = self.patch.forward(tokens) + &self.pos;
        let (e, encoder) = self.encoder.forward(&z, None)?;
        finite_check("pixel branch activations", &e)?;
        let pooled = e
            .mean_axis(Axis(0))
            .expect("at least one token")
            .insert_axis(Axis(0));
        let y = self.out.forward(&pooled);
        let y = y.index_axis_move(Axis(0), 0);
        Ok((
            y,
            PixelCache {
                tokens: tokens.clone(),
                encoder,
                pooled,
                n: tokens.nrows(),
            },
        ))
    }

    fn backward(&self, c: &PixelCache, dy: &Array1<f64>, g: &mut PixelBranch) -> Array2<f64> {
        let dy = dy.view().insert_axis(Axis(0)).to_owned();
        let dpooled = self.out.backward(&c.pooled, &dy, &mut g.out);
        let de = Array2::from_shape_fn((c.n, dpooled.ncols()), |(_, j)| {
            dpooled[[0, j]] / c.n as f64
        });
        let dz = self.encoder.backward(&c.encoder, &de, &mut g.encoder);
        g.pos += &dz;
        self.patch.backward(&c.tokens, &dz, &mut g.patch)
    }
}

impl Params for PixelBranch {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_>) {
        self.patch.visit(&join(prefix, "patch"), f);
        visit_array(&join(prefix, "pos"), &self.pos, f);
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.patch.visit_mut(&join(prefix, "patch"), f);
        visit_array_mut(&join(prefix, "pos"), &mut self.pos, f);
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuperpixelBranch {
    pub input: Linear,
    /// Size/position encoder; absent when the encoding is disabled.
    pub encoding: Option<Linear>,
    pub encoder: Encoder,
    pub out: Linear,
}

pub struct SuperpixelCache {
    features: Array2<f64>,
    encodings: Array2<f64>,
    mask: Vec<bool>,
    encoder: EncoderCache,
    pooled: Array2<f64>,
    valid: usize,
}

impl SuperpixelBranch {
    fn new(rng: &mut impl Rng, c: &SpaNetConfig) -> Self {
        Self {
            input: Linear::new(rng, c.superpixel_feat, c.token_dim),
            encoding: c
                .superpixel_encoding
                .then(|| Linear::new(rng, SUPERPIXEL_ENCODING, c.token_dim)),
            encoder: Encoder::new(rng, c.token_dim, c.heads, c.ff_hidden, c.layers),
            out: Linear::new(rng, c.token_dim, c.branch_out),
        }
    }

    fn zeros(c: &SpaNetConfig) -> Self {
        Self {
            input: Linear::zeros(c.superpixel_feat, c.token_dim),
            encoding: c
                .superpixel_encoding
                .then(|| Linear::zeros(SUPERPIXEL_ENCODING, c.token_dim)),
            encoder: Encoder::zeros(c.token_dim, c.heads, c.ff_hidden, c.layers),
            out: Linear::zeros(c.token_dim, c.branch_out),
        }
    }

    pub fn forward(&self, sp: &SuperpixelInput) -> Result<(Array1<f64>, SuperpixelCache)> {
        let k = sp.mask.len();
        shape_check("superpixel rows", k, sp.features.nrows())?;
        shape_check("superpixel encoding rows", k, sp.encodings.nrows())?;
        shape_check(
            "superpixel feature width",
            self.input.in_dim(),
            sp.features.ncols(),
        )?;
        shape_check(
            "superpixel encoding width",
            SUPERPIXEL_ENCODING,
            sp.encodings.ncols(),
        )?;
        let valid = sp.mask.iter().filter(|&&m| m).count();
        if valid == 0 {
            return Err(SpaNetError::EmptyMask);
        }
        let mut z = self.input.forward(&sp.features);
        if let Some(enc) = &self.encoding {
            z += &enc.forward(&sp.encodings);
        }
        let (e, encoder) = self.encoder.forward(&z, Some(&sp.mask))?;
        finite_check("superpixel branch activations", &e)?;
        let mut pooled = Array2::zeros((1, e.ncols()));
        for (row, _) in e.rows().into_iter().zip(&sp.mask).filter(|(_, m)| **m) {
            pooled.row_mut(0).scaled_add(1.0 / valid as f64, &row);
        }
        let y = self.out.forward(&pooled).index_axis_move(Axis(0), 0);
        Ok((
            y,
            SuperpixelCache {
                features: sp.features.clone(),
                encodings: sp.encodings.clone(),
                mask: sp.mask.clone(),
                encoder,
                pooled,
                valid,
            },
        ))
    }

    /// Returns the gradients with respect to the features and encodings.
    fn backward(
        &self,
        c: &SuperpixelCache,
        dy: &Array1<f64>,
        g: &mut SuperpixelBranch,
    ) -> (Array2<f64>, Array2<f64>) {
        let dy = dy.view().insert_axis(Axis(0)).to_owned();
        let dpooled = self.out.backward(&c.pooled, &dy, &mut g.out);
        let mut de = Array2::zeros((c.mask.len(), dpooled.ncols()));
        for (mut row, _) in de.rows_mut().into_iter().zip(&c.mask).filter(|(_, m)| **m) {
            row.scaled_add(1.0 / c.valid as f64, &dpooled.row(0));
        }
        let dz = self.encoder.backward(&c.encoder, &de, &mut g.encoder);
        let dfeat = self.input.backward(&c.features, &dz, &mut g.input);
        let denc = match (&self.encoding, &mut g.encoding) {
            (Some(enc), Some(genc)) => enc.backward(&c.encodings, &dz, genc),
            _ => Array2::zeros(c.encodings.raw_dim()),
        };
        (dfeat, denc)
    }
}

impl Params for SuperpixelBranch {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_>) {
        self.input.visit(&join(prefix, "input"), f);
        if let Some(e) = &self.encoding {
            e.visit(&join(prefix, "encoding"), f);
        }
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.input.visit_mut(&join(prefix, "input"), f);
        if let Some(e) = &mut self.encoding {
            e.visit_mut(&join(prefix, "encoding"), f);
        }
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

/// `linear -> GELU -> linear` on the fused vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub hidden: Linear,
    pub out: Linear,
}

pub struct HeadCache {
    branches: Vec<(Array2<f64>, Array1<f64>)>,
    fused: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
}

impl Head {
    /// Standardizes each branch vector, concatenates and regresses.
    pub fn forward(&self, branches: &[&Array1<f64>]) -> Result<(f64, HeadCache)> {
        let mut fused = Vec::new();
        let mut caches = Vec::with_capacity(branches.len());
        for b in branches {
            let (z, inv_std) = standardize_rows(&b.view().insert_axis(Axis(0)).to_owned());
            fused.extend(z.iter().copied());
            caches.push((z, inv_std));
        }
        shape_check("fused width", self.hidden.in_dim(), fused.len())?;
        let fused = Array2::from_shape_vec((1, fused.len()), fused).expect("one row");
        let pre = self.hidden.forward(&fused);
        shape_check("head hidden width", 18, pre.ncols())?;
        let act = pre.mapv(gelu);
        let y = self.out.forward(&act);
        shape_check("output width", 1, y.ncols())?;
        let pred = y[[0, 0]];
        if !pred.is_finite() {
            return Err(SpaNetError::NonFinite("prediction".into()));
        }
        Ok((
            pred,
            HeadCache {
                branches: caches,
                fused,
                pre,
                act,
            },
        ))
    }

    fn backward(&self, c: &HeadCache, dpred: f64, g: &mut Head) -> Vec<Array1<f64>> {
        let dy = Array2::from_elem((1, 1), dpred);
        let mut dact = self.out.backward(&c.act, &dy, &mut g.out);
        dact.zip_mut_with(&c.pre, |d, &p| *d *= gelu_grad(p));
        let dfused = self.hidden.backward(&c.fused, &dact, &mut g.hidden);
        let mut off = 0;
        c.branches
            .iter()
            .map(|(z, inv_std)| {
                let w = z.ncols();
                let dz = dfused.slice(s![.., off..off + w]).to_owned();
                off += w;
                standardize_rows_backward(z, inv_std, &dz).index_axis_move(Axis(0), 0)
            })
            .collect()
    }
}

impl Params for Head {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_>) {
        self.hidden.visit(&join(prefix, "hidden"), f);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.hidden.visit_mut(&join(prefix, "hidden"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpaNetModel {
    config: SpaNetConfig,
    pub pixel: PixelBranch,
    pub superpixel: Option<SuperpixelBranch>,
    pub head: Head,
}

/// Everything backward needs from one forward pass.
pub struct ForwardCache {
    pixel: PixelCache,
    superpixel: Option<SuperpixelCache>,
    head: HeadCache,
}

/// Gradients of a scalar objective with respect to parameters and inputs.
pub struct Gradients {
    pub params: SpaNetModel,
    pub tokens: Array2<f64>,
    pub superpixel_features: Option<Array2<f64>>,
    pub superpixel_encodings: Option<Array2<f64>>,
}

impl SpaNetModel {
    /// Randomly initialized model: Glorot-uniform weights, zero biases, unit
    /// norm gains and small uniform positional embeddings.
    pub fn new(config: SpaNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pixel = PixelBranch::new(&mut rng, &config);
        let superpixel = config
            .has_superpixels()
            .then(|| SuperpixelBranch::new(&mut rng, &config));
        let head = Head {
            hidden: Linear::new(&mut rng, config.fused_dim(), config.head_hidden),
            out: Linear::new(&mut rng, config.head_hidden, 1),
        };
        Ok(Self {
            config,
            pixel,
            superpixel,
            head,
        })
    }

    /// Every parameter zero, including norm gains.
    pub fn zeros(config: SpaNetConfig) -> Result<Self> {
        config.validate()?;
        let pixel = PixelBranch::zeros(&config);
        let superpixel = config
            .has_superpixels()
            .then(|| SuperpixelBranch::zeros(&config));
        let head = Head {
            hidden: Linear::zeros(config.fused_dim(), config.head_hidden),
            out: Linear::zeros(config.head_hidden, 1),
        };
        Ok(Self {
            config,
            pixel,
            superpixel,
            head,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut("", &mut |_, d| d.fill(0.0));
        z
    }

    pub fn config(&self) -> &SpaNetConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, d| n += d.len());
        n
    }

    /// Parameter values concatenated in visit order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit("", &mut |_, _, d| out.extend_from_slice(d));
        out
    }

    /// Tensor names and shapes in visit order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit("", &mut |n, s, _| out.push((n.to_string(), s.to_vec())));
        out
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, _, d| ok &= d.iter().all(|v| v.is_finite()));
        ok
    }

    fn check_input(&self, x: &SpaNetInput) -> Result<()> {
        let c = &self.config;
        shape_check("patch tokens", c.n_patches(), x.tokens.nrows())?;
        shape_check("patch token width", c.patch_dim(), x.tokens.ncols())?;
        match (&self.superpixel, &x.superpixels) {
            (Some(_), Some(sp)) => shape_check("superpixel rows", c.superpixel_k, sp.mask.len()),
            (Some(_), None) => Err(SpaNetError::MissingSuperpixels),
            (None, _) => Ok(()),
        }
    }

    pub fn forward(&self, x: &SpaNetInput) -> Result<(f64, ForwardCache)> {
        self.check_input(x)?;
        let (p, pixel) = self.pixel.forward(&x.tokens)?;
        shape_check("pixel branch output", self.config.branch_out, p.len())?;
        let (s, superpixel) = match (&self.superpixel, &x.superpixels) {
            (Some(branch), Some(sp)) => {
                let (s, c) = branch.forward(sp)?;
                shape_check("superpixel branch output", self.config.branch_out, s.len())?;
                (Some(s), Some(c))
            }
            _ => (None, None),
        };
        let branches: Vec<&Array1<f64>> = std::iter::once(&p).chain(s.as_ref()).collect();
        let (pred, head) = self.head.forward(&branches)?;
        Ok((
            pred,
            ForwardCache {
                pixel,
                superpixel,
                head,
            },
        ))
    }

    pub fn predict(&self, x: &SpaNetInput) -> Result<f64> {
        self.forward(x).map(|(p, _)| p)
    }

    /// Backpropagates `d objective / d prediction`.
    pub fn backward(&self, cache: &ForwardCache, dpred: f64) -> Gradients {
        let mut g = self.zeros_like();
        let dbranches = self.head.backward(&cache.head, dpred, &mut g.head);
        let tokens = self
            .pixel
            .backward(&cache.pixel, &dbranches[0], &mut g.pixel);
        let (mut sf, mut se) = (None, None);
        if let (Some(branch), Some(c), Some(gb)) =
            (&self.superpixel, &cache.superpixel, &mut g.superpixel)
        {
            let (f, e) = branch.backward(c, &dbranches[1], gb);
            sf = Some(f);
            se = Some(e);
        }
        Gradients {
            params: g,
            tokens,
            superpixel_features: sf,
            superpixel_encodings: se,
        }
    }

    /// Squared error and its gradient for one labeled input.
    pub fn loss_and_grad(&self, x: &SpaNetInput, target: f64) -> Result<(f64, Gradients)> {
        let (pred, cache) = self.forward(x)?;
        let err = pred - target;
        Ok((err * err, self.backward(&cache, 2.0 * err)))
    }
}

impl Params for SpaNetModel {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_>) {
        self.pixel.visit(&join(prefix, "pixel"), f);
        if let Some(s) = &self.superpixel {
            s.visit(&join(prefix, "superpixel"), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.pixel.visit_mut(&join(prefix, "pixel"), f);
        if let Some(s) = &mut self.superpixel {
            s.visit_mut(&join(prefix, "superpixel"), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}
