use crate::{Result, SpaNetError};

/// Number of per-superpixel color features (RGB mean and std).
pub const SUPERPIXEL_FEATURES: usize = 6;
/// Size and 2-D centroid.
pub const SUPERPIXEL_ENCODING: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpaNetConfig {
    /// Side of the square model input in pixels.
    pub image_side: usize,
    pub patch_side: usize,
    pub heads: usize,
    pub layers: usize,
    pub token_dim: usize,
    /// Width of the feedforward sublayer in each block.
    pub ff_hidden: usize,
    /// Output width of each branch.
    pub branch_out: usize,
    /// Fixed superpixel count; 0 removes the superpixel branch.
    pub superpixel_k: usize,
    pub superpixel_feat: usize,
    pub head_hidden: usize,
    /// Add the learned size/position encoding to superpixel tokens.
    pub superpixel_encoding: bool,
}

impl Default for SpaNetConfig {
    fn default() -> Self {
        Self {
            image_side: 512,
            patch_side: 32,
            heads: 8,
            layers: 2,
            token_dim: 256,
            ff_hidden: 1024,
            branch_out: 1024,
            superpixel_k: 500,
            superpixel_feat: SUPERPIXEL_FEATURES,
            head_hidden: 18,
            superpixel_encoding: true,
        }
    }
}

impl SpaNetConfig {
    /// Small configuration that trains in seconds on one core. Same block
    /// structure, head and branch widths as the default.
    pub fn desk() -> Self {
        Self {
            image_side: 64,
            patch_side: 16,
            token_dim: 32,
            ff_hidden: 64,
            superpixel_k: 32,
            ..Self::default()
        }
    }

    pub fn patches_per_side(&self) -> usize {
        self.image_side / self.patch_side
    }

    pub fn n_patches(&self) -> usize {
        self.patches_per_side().pow(2)
    }

    /// Raw length of one flattened patch token.
    pub fn patch_dim(&self) -> usize {
        3 * self.patch_side * self.patch_side
    }

    pub fn has_superpixels(&self) -> bool {
        self.superpixel_k > 0
    }

    /// Width of the fused vector fed to the regression head.
    pub fn fused_dim(&self) -> usize {
        if self.has_superpixels() {
            2 * self.branch_out
        } else {
            self.branch_out
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SpaNetError::Config(m));
        if self.patch_side == 0 || self.image_side == 0 {
            return bad("image_side and patch_side must be positive".into());
        }
        if !self.image_side.is_multiple_of(self.patch_side) {
            return bad(format!(
                "image_side {} is not divisible by patch_side {}",
                self.image_side, self.patch_side
            ));
        }
        if self.heads == 0 || self.token_dim == 0 || !self.token_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "heads {} must divide token_dim {}",
                self.heads, self.token_dim
            ));
        }
        if self.ff_hidden == 0 || self.branch_out == 0 {
            return bad("ff_hidden and branch_out must be positive".into());
        }
        if self.superpixel_feat != SUPERPIXEL_FEATURES {
            return bad(format!("superpixel_feat must be {SUPERPIXEL_FEATURES}"));
        }
        if self.head_hidden != 18 {
            return bad(format!("head_hidden must be 18, got {}", self.head_hidden));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Set the output bias to the mean training target before the first step.
    pub init_output_bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr_max: 2e-5,
            lr_min: 1e-6,
            batch_size: 8,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            init_output_bias: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(SpaNetError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(SpaNetError::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr_min > 0.0 && self.lr_min < self.lr_max && self.lr_max.is_finite()) {
            return Err(SpaNetError::Config(format!(
                "need 0 < lr_min < lr_max, got {} and {}",
                self.lr_min, self.lr_max
            )));
        }
        Ok(())
    }

    /// Half-cosine decay from `lr_max` at epoch 0 to `lr_min` at the last epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lr_max;
        }
        let t = epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64;
        self.lr_min + (self.lr_max - self.lr_min) * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0
    }
}
