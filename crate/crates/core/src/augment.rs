//! Synthetic artifacts (brightness, darkness, fog, speed blur) and the
//! sweep harness that tracks mean PQI as an artifact gets stronger.
//!
//! Every transform takes a level in `[0, 1]`; level 0 returns the input
//! unchanged, byte for byte.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::detection::DetectionSet;
use crate::image::{to_grayscale, RgbImage};
use crate::pqi::compute_pqi;
use crate::saliency::{fine_grained_saliency, SaliencyParams};
use crate::{Error, Result};

/// Haze color the fog layer blends toward.
pub const FOG_HAZE: [f64; 3] = [200.0, 200.0, 200.0];
/// Fraction of the remaining headroom to white added by fog at level 1.
pub const FOG_LIFT: f64 = 0.1;
/// Longest speed-blur kernel, reached at level 1.
pub const MAX_BLUR_KERNEL: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ArtifactKind {
    Brightness,
    Darkness,
    Fog,
    Speed,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 4] = [
        ArtifactKind::Brightness,
        ArtifactKind::Darkness,
        ArtifactKind::Fog,
        ArtifactKind::Speed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::Brightness => "brightness",
            ArtifactKind::Darkness => "darkness",
            ArtifactKind::Fog => "fog",
            ArtifactKind::Speed => "speed",
        }
    }

    pub fn apply(self, img: &RgbImage, level: f64) -> Result<RgbImage> {
        match self {
            ArtifactKind::Brightness => apply_brightness(img, level),
            ArtifactKind::Darkness => apply_darkness(img, level),
            ArtifactKind::Fog => apply_fog(img, level),
            ArtifactKind::Speed => apply_speed_blur(img, level),
        }
    }
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArtifactKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArtifactKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidParams(format!("unknown artifact kind `{s}`")))
    }
}

fn check_level(level: f64) -> Result<()> {
    if (0.0..=1.0).contains(&level) {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!(
            "level {level} outside [0, 1]"
        )))
    }
}

#[inline]
fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Scales the HSV value channel of every pixel by `factor`, clamping V at 1.
/// With hue and saturation fixed this multiplies all three channels by
/// `min(factor, 255 / max(r, g, b))`.
fn scale_value(img: &RgbImage, factor: f64) -> RgbImage {
    let mut out = img.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let vmax = px.iter().copied().max().unwrap_or(0);
        if vmax == 0 {
            continue;
        }
        let f = factor.min(255.0 / f64::from(vmax));
        for c in px.iter_mut() {
            *c = to_u8(f64::from(*c) * f);
        }
    }
    out
}

pub fn apply_brightness(img: &RgbImage, level: f64) -> Result<RgbImage> {
    check_level(level)?;
    if level == 0.0 {
        return Ok(img.clone());
    }
    Ok(scale_value(img, 1.0 + level))
}

pub fn apply_darkness(img: &RgbImage, level: f64) -> Result<RgbImage> {
    check_level(level)?;
    if level == 0.0 {
        return Ok(img.clone());
    }
    Ok(scale_value(img, 1.0 - level))
}

/// Blends toward [`FOG_HAZE`] with weight `level`, then lifts the result
/// toward white by `FOG_LIFT * level` of its headroom.
pub fn apply_fog(img: &RgbImage, level: f64) -> Result<RgbImage> {
    check_level(level)?;
    if level == 0.0 {
        return Ok(img.clone());
    }
    let lift = FOG_LIFT * level;
    let mut out = img.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        for (c, haze) in px.iter_mut().zip(FOG_HAZE) {
            let blended = (1.0 - level) * f64::from(*c) + level * haze;
            *c = to_u8(blended + lift * (255.0 - blended));
        }
    }
    Ok(out)
}

/// Odd horizontal kernel length: `1 + round(14 * level)`, bumped to the
/// next odd number when even.
pub fn blur_kernel_len(level: f64) -> usize {
    let n = 1 + (level * (MAX_BLUR_KERNEL - 1) as f64).round() as usize;
    if n.is_multiple_of(2) {
        (n + 1).min(MAX_BLUR_KERNEL)
    } else {
        n
    }
}

/// Horizontal box blur with replicated borders.
pub fn apply_speed_blur(img: &RgbImage, level: f64) -> Result<RgbImage> {
    check_level(level)?;
    let len = blur_kernel_len(level);
    if len == 1 {
        return Ok(img.clone());
    }
    let w = img.width();
    let half = (len / 2) as i64;
    let src = img.data();
    let mut out = img.clone();
    let dst = out.data_mut();
    dst.par_chunks_mut(w * 3).enumerate().for_each(|(y, row)| {
        let srow = &src[y * w * 3..(y + 1) * w * 3];
        for x in 0..w {
            let mut acc = [0u32; 3];
            for k in -half..=half {
                let xx = (x as i64 + k).clamp(0, w as i64 - 1) as usize;
                for c in 0..3 {
                    acc[c] += u32::from(srow[xx * 3 + c]);
                }
            }
            for c in 0..3 {
                row[x * 3 + c] = to_u8(f64::from(acc[c]) / len as f64);
            }
        }
    });
    Ok(out)
}

/// One image of a sweep with the detections scored against it.
#[derive(Clone, Debug)]
pub struct SweepSample {
    pub image: RgbImage,
    pub detections: DetectionSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub kind: ArtifactKind,
    pub levels: Vec<f64>,
    pub mean_pqi: Vec<f64>,
    /// Images that contributed at each level.
    pub n_images: Vec<usize>,
    /// (image, level) pairs dropped because scoring failed.
    pub excluded: usize,
}

impl SweepResult {
    /// Mean PQI at each level relative to the first level.
    pub fn relative_change(&self) -> Vec<f64> {
        let base = self.mean_pqi[0];
        self.mean_pqi.iter().map(|v| v / base - 1.0).collect()
    }
}

/// Default grid `0.0, 0.1, ..., 1.0`.
pub fn default_levels() -> Vec<f64> {
    (0..=10).map(|i| f64::from(i) / 10.0).collect()
}

/// Applies `kind` at every level to every image, recomputes saliency and
/// PQI with the image's own (unchanged) detections and averages per level.
pub fn sweep(
    samples: &[SweepSample],
    kind: ArtifactKind,
    levels: &[f64],
    params: &SaliencyParams,
) -> Result<SweepResult> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("sweep needs at least one image".into()));
    }
    if levels.is_empty() {
        return Err(Error::EmptyInput("sweep needs at least one level".into()));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParams(
            "levels must be strictly increasing".into(),
        ));
    }
    for &l in levels {
        check_level(l)?;
    }
    params.validate()?;

    let jobs: Vec<(usize, usize)> = (0..levels.len())
        .flat_map(|li| (0..samples.len()).map(move |si| (li, si)))
        .collect();
    let scores: Vec<Option<f64>> = jobs
        .par_iter()
        .map(|&(li, si)| {
            let s = &samples[si];
            let img = kind.apply(&s.image, levels[li]).ok()?;
            let sm = fine_grained_saliency(&to_grayscale(&img), params).ok()?;
            let v = compute_pqi(&sm, &s.detections).ok()?.value;
            v.is_finite().then_some(v)
        })
        .collect();

    let mut mean_pqi = Vec::with_capacity(levels.len());
    let mut n_images = Vec::with_capacity(levels.len());
    let mut excluded = 0;
    for chunk in scores.chunks(samples.len()) {
        let (mut sum, mut n) = (0.0, 0usize);
        for v in chunk {
            match v {
                Some(v) => {
                    sum += v;
                    n += 1;
                }
                None => excluded += 1,
            }
        }
        mean_pqi.push(if n > 0 { sum / n as f64 } else { f64::NAN });
        n_images.push(n);
    }
    Ok(SweepResult {
        kind,
        levels: levels.to_vec(),
        mean_pqi,
        n_images,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::luma;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rgb(seed: u64, w: usize, h: usize) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::new(w, h, (0..w * h * 3).map(|_| rng.random()).collect()).unwrap()
    }

    fn mean_luma(img: &RgbImage) -> f64 {
        img.data()
            .chunks_exact(3)
            .map(|p| f64::from(luma([p[0], p[1], p[2]])))
            .sum::<f64>()
            / img.pixel_count() as f64
    }

    fn luma_std(img: &RgbImage) -> f64 {
        let m = mean_luma(img);
        (img.data()
            .chunks_exact(3)
            .map(|p| (f64::from(luma([p[0], p[1], p[2]])) - m).powi(2))
            .sum::<f64>()
            / img.pixel_count() as f64)
            .sqrt()
    }

    #[test]
    fn level_zero_is_identity() {
        let img = random_rgb(1, 9, 7);
        for kind in ArtifactKind::ALL {
            assert_eq!(kind.apply(&img, 0.0).unwrap(), img, "{kind}");
        }
    }

    #[test]
    fn dimensions_preserved() {
        let img = random_rgb(2, 11, 5);
        for kind in ArtifactKind::ALL {
            for level in [0.3, 1.0] {
                let out = kind.apply(&img, level).unwrap();
                assert_eq!((out.width(), out.height()), (11, 5));
            }
        }
    }

    #[test]
    fn levels_outside_unit_interval_rejected() {
        let img = random_rgb(3, 2, 2);
        for kind in ArtifactKind::ALL {
            assert!(kind.apply(&img, -0.1).is_err());
            assert!(kind.apply(&img, 1.1).is_err());
        }
    }

    #[test]
    fn brightness_doubles_mid_gray() {
        let img = RgbImage::filled(2, 2, [128, 128, 128]).unwrap();
        let out = apply_brightness(&img, 1.0).unwrap();
        assert!(out.data().iter().all(|&v| v == 255));
    }

    #[test]
    fn brightness_keeps_hue_when_clamping() {
        let img = RgbImage::filled(1, 1, [170, 68, 34]).unwrap();
        let out = apply_brightness(&img, 1.0).unwrap();
        assert_eq!(out.get(0, 0), [255, 102, 51]);
    }

    #[test]
    fn brightness_mean_luma_monotone() {
        let img = random_rgb(4, 16, 16);
        let lumas: Vec<f64> = default_levels()
            .iter()
            .map(|&l| mean_luma(&apply_brightness(&img, l).unwrap()))
            .collect();
        assert!(lumas.windows(2).all(|w| w[1] >= w[0]), "{lumas:?}");
    }

    #[test]
    fn darkness_examples() {
        let img = RgbImage::filled(2, 1, [200, 200, 200]).unwrap();
        assert!(apply_darkness(&img, 0.5)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 100));
        let any = random_rgb(5, 6, 6);
        assert!(apply_darkness(&any, 1.0)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0));
    }

    #[test]
    fn fog_full_level_is_near_haze() {
        let img = random_rgb(6, 8, 8);
        let out = apply_fog(&img, 1.0).unwrap();
        for (c, haze) in out.data().iter().zip(FOG_HAZE.iter().cycle()) {
            assert!((f64::from(*c) - haze).abs() <= 0.1 * 255.0);
        }
    }

    #[test]
    fn fog_reduces_contrast() {
        let img = random_rgb(7, 24, 24);
        let stds: Vec<f64> = default_levels()
            .iter()
            .map(|&l| luma_std(&apply_fog(&img, l).unwrap()))
            .collect();
        assert!(stds.windows(2).all(|w| w[1] < w[0]), "{stds:?}");
    }

    #[test]
    fn kernel_lengths() {
        assert_eq!(blur_kernel_len(0.0), 1);
        assert_eq!(blur_kernel_len(1.0), 15);
        assert_eq!(blur_kernel_len(0.5), 9);
        for i in 0..=100 {
            let n = blur_kernel_len(f64::from(i) / 100.0);
            assert!(n % 2 == 1 && n <= MAX_BLUR_KERNEL);
        }
    }

    #[test]
    fn blur_of_constant_is_constant() {
        let img = RgbImage::filled(9, 3, [10, 120, 240]).unwrap();
        assert_eq!(apply_speed_blur(&img, 0.7).unwrap(), img);
    }

    #[test]
    fn step_edge_transition_equals_kernel_length() {
        let (w, edge) = (40usize, 20usize);
        let mut img = RgbImage::filled(w, 2, [0, 0, 0]).unwrap();
        for y in 0..2 {
            for x in edge..w {
                img.put(x, y, [255, 255, 255]);
            }
        }
        let out = apply_speed_blur(&img, 1.0).unwrap();
        let row: Vec<u8> = (0..w).map(|x| out.get(x, 0)[0]).collect();
        let last_dark = row.iter().rposition(|&v| v == 0).unwrap();
        let first_bright = row.iter().position(|&v| v == 255).unwrap();
        assert_eq!(first_bright - last_dark, blur_kernel_len(1.0));
    }

    #[test]
    fn uniform_sweep_is_zero() {
        let s = SweepSample {
            image: RgbImage::filled(12, 12, [90, 90, 90]).unwrap(),
            detections: DetectionSet::empty("u"),
        };
        for kind in ArtifactKind::ALL {
            let r = sweep(
                std::slice::from_ref(&s),
                kind,
                &default_levels(),
                &SaliencyParams::default(),
            )
            .unwrap();
            assert!(r.mean_pqi.iter().all(|&v| v == 0.0));
            assert_eq!(r.levels.len(), r.mean_pqi.len());
        }
    }

    #[test]
    fn darkness_drives_pqi_to_zero() {
        let s = SweepSample {
            image: random_rgb(8, 16, 16),
            detections: DetectionSet::empty("d"),
        };
        let r = sweep(
            &[s],
            ArtifactKind::Darkness,
            &[0.0, 0.5, 1.0],
            &SaliencyParams::default(),
        )
        .unwrap();
        assert!(r.mean_pqi[0] > 0.0);
        assert_eq!(r.mean_pqi[2], 0.0);
    }

    #[test]
    fn sweep_rejects_bad_levels() {
        let s = SweepSample {
            image: random_rgb(9, 4, 4),
            detections: DetectionSet::empty("b"),
        };
        let p = SaliencyParams::default();
        assert!(sweep(std::slice::from_ref(&s), ArtifactKind::Fog, &[0.5, 0.2], &p).is_err());
        assert!(sweep(std::slice::from_ref(&s), ArtifactKind::Fog, &[], &p).is_err());
        assert!(sweep(&[], ArtifactKind::Fog, &[0.0], &p).is_err());
    }

    #[test]
    fn parse_kind() {
        for k in ArtifactKind::ALL {
            assert_eq!(k.as_str().parse::<ArtifactKind>().unwrap(), k);
        }
        assert!("rain".parse::<ArtifactKind>().is_err());
    }
}
