//! Train-and-evaluate runs over architecture variants.

use pqi_core::metrics::{evaluate, PairedScores};
use pqi_core::RgbImage;

use crate::config::{SpaNetConfig, TrainConfig};
use crate::model::SpaNetModel;
use crate::preprocess::{prepare_input, SuperpixelOptions};
use crate::train::{predict_all, train, Sample};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationVariant {
    /// The base configuration unchanged.
    Full,
    /// Pixel branch only.
    NoSuperpixel,
    /// Superpixel tokens without the size/position encoding.
    NoPosEncoding,
    /// A different superpixel count; 0 is the same as `NoSuperpixel`.
    SuperpixelK(usize),
}

impl AblationVariant {
    /// Superpixel counts 0, 100, ..., 500 followed by the encoding ablation.
    pub fn superpixel_sweep() -> Vec<AblationVariant> {
        let mut v: Vec<_> = (0..=5)
            .map(|i| AblationVariant::SuperpixelK(i * 100))
            .collect();
        v.push(AblationVariant::NoPosEncoding);
        v
    }

    pub fn apply(self, base: &SpaNetConfig) -> SpaNetConfig {
        match self {
            AblationVariant::Full => base.clone(),
            AblationVariant::NoSuperpixel => SpaNetConfig {
                superpixel_k: 0,
                ..base.clone()
            },
            AblationVariant::NoPosEncoding => SpaNetConfig {
                superpixel_encoding: false,
                ..base.clone()
            },
            AblationVariant::SuperpixelK(k) => SpaNetConfig {
                superpixel_k: k,
                ..base.clone()
            },
        }
    }

    pub fn label(self) -> String {
        match self {
            AblationVariant::Full => "full".into(),
            AblationVariant::NoSuperpixel => "no_superpixel".into(),
            AblationVariant::NoPosEncoding => "no_pos_encoding".into(),
            AblationVariant::SuperpixelK(k) => format!("k={k}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRecord {
    pub variant: String,
    pub superpixel_k: usize,
    pub r2: f64,
    pub plcc: f64,
    pub srcc: f64,
    pub n_test: usize,
    pub final_train_loss: f64,
}

/// An image with its target PQI.
#[derive(Clone, Debug)]
pub struct LabeledImage {
    pub image: RgbImage,
    pub target: f64,
}

fn prepare(
    data: &[LabeledImage],
    config: &SpaNetConfig,
    opts: SuperpixelOptions,
) -> Result<Vec<Sample>> {
    data.iter()
        .map(|d| {
            Ok(Sample {
                input: prepare_input(&d.image, config, opts)?,
                target: d.target,
            })
        })
        .collect()
}

/// Builds the variant's model from `model_seed`, trains it on `train_set`
/// and scores predictions on `test_set`.
pub fn ablation_run(
    variant: AblationVariant,
    base: &SpaNetConfig,
    train_cfg: &TrainConfig,
    train_set: &[LabeledImage],
    test_set: &[LabeledImage],
    model_seed: u64,
) -> Result<AblationRecord> {
    let config = variant.apply(base);
    let opts = SuperpixelOptions::default();
    let train_samples = prepare(train_set, &config, opts)?;
    let test_samples = prepare(test_set, &config, opts)?;
    let mut model = SpaNetModel::new(config.clone(), model_seed)?;
    let report = train(&mut model, &train_samples, &[], train_cfg)?;
    let inputs: Vec<_> = test_samples.iter().map(|s| &s.input).collect();
    let preds = predict_all(&model, &inputs)?;
    let targets = test_samples.iter().map(|s| s.target).collect();
    let m = evaluate(&PairedScores::new(preds, targets)?)?;
    Ok(AblationRecord {
        variant: variant.label(),
        superpixel_k: config.superpixel_k,
        r2: m.r2,
        plcc: m.plcc,
        srcc: m.srcc,
        n_test: m.n,
        final_train_loss: report.final_train_loss().unwrap_or(f64::NAN),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_zero_is_pixel_only() {
        let base = SpaNetConfig::default();
        let c = AblationVariant::SuperpixelK(0).apply(&base);
        assert!(!c.has_superpixels());
        assert_eq!(c, AblationVariant::NoSuperpixel.apply(&base));
        let m = SpaNetModel::zeros(SpaNetConfig {
            superpixel_k: 0,
            ..SpaNetConfig::desk()
        })
        .unwrap();
        assert!(m.superpixel.is_none());
    }

    #[test]
    fn k_500_is_the_full_model() {
        let base = SpaNetConfig::default();
        assert_eq!(AblationVariant::SuperpixelK(500).apply(&base), base);
        assert_eq!(AblationVariant::Full.apply(&base), base);
    }

    #[test]
    fn sweep_lists_table_rows() {
        let labels: Vec<_> = AblationVariant::superpixel_sweep()
            .into_iter()
            .map(AblationVariant::label)
            .collect();
        assert_eq!(
            labels,
            [
                "k=0",
                "k=100",
                "k=200",
                "k=300",
                "k=400",
                "k=500",
                "no_pos_encoding"
            ]
        );
    }
}
