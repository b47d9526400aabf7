//! Turning an RGB frame into model input.

use ndarray::Array2;
use pqi_core::superpixel::{
    extract_features, pad_or_truncate, slic, DEFAULT_COMPACTNESS, DEFAULT_ITERATIONS,
};
use pqi_core::RgbImage;

use crate::config::SpaNetConfig;
use crate::model::{SpaNetInput, SuperpixelInput};
use crate::{Result, SpaNetError};

/// Bilinear resampling with pixel-center alignment and clamped borders.
pub fn resize_bilinear(img: &RgbImage, width: usize, height: usize) -> Result<RgbImage> {
    if width == 0 || height == 0 {
        return Err(SpaNetError::Config(
            "resize target must be non-empty".into(),
        ));
    }
    let (sw, sh) = (img.width(), img.height());
    if (sw, sh) == (width, height) {
        return Ok(img.clone());
    }
    let (fx, fy) = (sw as f64 / width as f64, sh as f64 / height as f64);
    let src = img.data();
    let mut out = vec![0u8; width * height * 3];
    for y in 0..height {
        let sy = ((y as f64 + 0.5) * fy - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let ty = sy - y0 as f64;
        for x in 0..width {
            let sx = ((x as f64 + 0.5) * fx - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let tx = sx - x0 as f64;
            for c in 0..3 {
                let at = |xx: usize, yy: usize| f64::from(src[(yy * sw + xx) * 3 + c]);
                let top = at(x0, y0) * (1.0 - tx) + at(x1, y0) * tx;
                let bottom = at(x0, y1) * (1.0 - tx) + at(x1, y1) * tx;
                let v = top * (1.0 - ty) + bottom * ty;
                out[(y * width + x) * 3 + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(RgbImage::new(width, height, out)?)
}

/// Splits a square image into row-major patches. Each token is the patch
/// flattened channel-major (`c, y, x`) with values scaled to `[0, 1]`.
pub fn patchify(img: &RgbImage, patch_side: usize) -> Result<Array2<f64>> {
    let side = img.width();
    if img.height() != side || patch_side == 0 || !side.is_multiple_of(patch_side) {
        return Err(SpaNetError::Config(format!(
            "cannot cut a {}x{} image into {patch_side}-pixel patches",
            img.width(),
            img.height()
        )));
    }
    let per_side = side / patch_side;
    let dim = 3 * patch_side * patch_side;
    let data = img.data();
    let tokens = Array2::from_shape_fn((per_side * per_side, dim), |(t, d)| {
        let (py, px) = (t / per_side, t % per_side);
        let c = d / (patch_side * patch_side);
        let r = d % (patch_side * patch_side);
        let (y, x) = (
            py * patch_side + r / patch_side,
            px * patch_side + r % patch_side,
        );
        f64::from(data[(y * side + x) * 3 + c]) / 255.0
    });
    Ok(tokens)
}

/// SLIC parameters used when building superpixel input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuperpixelOptions {
    pub compactness: f64,
    pub iterations: usize,
}

impl Default for SuperpixelOptions {
    fn default() -> Self {
        Self {
            compactness: DEFAULT_COMPACTNESS,
            iterations: DEFAULT_ITERATIONS,
        }
    }
}

pub fn superpixel_input(
    img: &RgbImage,
    k: usize,
    opts: SuperpixelOptions,
) -> Result<SuperpixelInput> {
    let seg = slic(img, k, opts.compactness, opts.iterations)?;
    let feats = extract_features(img, &seg)?;
    let block = pad_or_truncate(&feats, k)?;
    Ok(SuperpixelInput {
        features: Array2::from_shape_fn((k, 6), |(i, j)| block.features[i][j]),
        encodings: Array2::from_shape_fn((k, 3), |(i, j)| block.encodings[i][j]),
        mask: block.mask,
    })
}

/// Resizes to the model's input side, then builds patch tokens and, when the
/// configuration has a superpixel branch, the padded superpixel rows.
pub fn prepare_input(
    img: &RgbImage,
    config: &SpaNetConfig,
    opts: SuperpixelOptions,
) -> Result<SpaNetInput> {
    let side = config.image_side;
    let resized = resize_bilinear(img, side, side)?;
    let tokens = patchify(&resized, config.patch_side)?;
    let superpixels = if config.has_superpixels() {
        Some(superpixel_input(&resized, config.superpixel_k, opts)?)
    } else {
        None
    };
    Ok(SpaNetInput {
        tokens,
        superpixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_image_gives_zero_tokens() {
        let img = RgbImage::filled(512, 512, [0, 0, 0]).unwrap();
        let t = patchify(&img, 32).unwrap();
        assert_eq!(t.dim(), (256, 3072));
        assert!(t.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_pixel_lands_in_token_zero() {
        let mut img = RgbImage::filled(512, 512, [0, 0, 0]).unwrap();
        img.put(0, 0, [255, 0, 0]);
        let t = patchify(&img, 32).unwrap();
        for (i, row) in t.rows().into_iter().enumerate() {
            assert_eq!(row.iter().any(|&v| v != 0.0), i == 0);
        }
        assert_eq!(t[[0, 0]], 1.0);
    }

    #[test]
    fn patch_layout_is_row_major_channel_major() {
        let mut img = RgbImage::filled(4, 4, [0, 0, 0]).unwrap();
        // pixel (3, 1) is in patch (px 1, py 0) -> token 1, local (1, 1)
        img.put(3, 1, [0, 0, 255]);
        let t = patchify(&img, 2).unwrap();
        assert_eq!(t[[1, 2 * 4 + 3]], 1.0);
        assert_eq!(t.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn patchify_rejects_bad_size() {
        let img = RgbImage::filled(30, 32, [0, 0, 0]).unwrap();
        assert!(patchify(&img, 32).is_err());
        let img = RgbImage::filled(48, 48, [0, 0, 0]).unwrap();
        assert!(patchify(&img, 32).is_err());
    }

    #[test]
    fn resize_keeps_constant_images() {
        let img = RgbImage::filled(37, 21, [10, 200, 99]).unwrap();
        let r = resize_bilinear(&img, 64, 64).unwrap();
        assert!(r.data().chunks(3).all(|p| p == [10, 200, 99]));
    }

    #[test]
    fn resize_interpolates_between_columns() {
        let img = RgbImage::new(2, 1, vec![0, 0, 0, 200, 200, 200]).unwrap();
        let r = resize_bilinear(&img, 4, 1).unwrap();
        // centers map to -0.25, 0.25, 0.75, 1.25 in source space
        let px: Vec<u8> = r.data().chunks(3).map(|p| p[0]).collect();
        assert_eq!(px, vec![0, 50, 150, 200]);
    }

    #[test]
    fn prepared_input_matches_config() {
        let c = SpaNetConfig::desk();
        let scene = pqi_core::synth::road_scene(3, 80, 60);
        let x = prepare_input(&scene.image, &c, SuperpixelOptions::default()).unwrap();
        assert_eq!(x.tokens.dim(), (c.n_patches(), c.patch_dim()));
        let sp = x.superpixels.unwrap();
        assert_eq!(sp.features.dim(), (c.superpixel_k, 6));
        assert!(sp.mask.iter().any(|&m| m));
    }
}
