//! Fine-grained center-surround saliency.
//!
//! For each window radius `zeta = sigma * 2^s` the submap is
//! `max(c(x,y) - s(x,y,zeta), 0)`, where `c` is the pixel intensity and `s`
//! the mean of the clamped `(2*zeta+1)^2` window without the center pixel.
//! The saliency map is the plain element-wise sum of all submaps.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::image::{GrayImage, RealImage, Rect};
use crate::integral::{IntegralImage, RealIntegralImage};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyParams {
    /// Base surround radius in pixels.
    pub sigma: usize,
    /// Scale exponents; each contributes a window of radius `sigma * 2^s`.
    pub scales: Vec<u32>,
}

impl Default for SaliencyParams {
    fn default() -> Self {
        Self {
            sigma: 1,
            scales: vec![0, 1, 2, 3, 4, 5],
        }
    }
}

impl SaliencyParams {
    pub fn new(sigma: usize, scales: Vec<u32>) -> Result<Self> {
        let p = Self { sigma, scales };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma < 1 {
            return Err(Error::InvalidParams("sigma must be >= 1".into()));
        }
        if self.scales.is_empty() {
            return Err(Error::InvalidParams(
                "at least one scale is required".into(),
            ));
        }
        if self.scales.iter().any(|&s| s > 30) {
            return Err(Error::InvalidParams("scale exponent too large".into()));
        }
        Ok(())
    }

    /// Window radii, in the order the scales were given.
    pub fn zetas(&self) -> Vec<usize> {
        self.scales.iter().map(|&s| self.sigma << s).collect()
    }
}

/// Non-negative per-pixel saliency intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParams(
                "saliency entries must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn mean(&self) -> Option<f64> {
        if self.data.is_empty() {
            None
        } else {
            Some(self.data.iter().sum::<f64>() / self.data.len() as f64)
        }
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// Element-wise sum. Panics on mismatched dimensions.
    pub fn add_assign(&mut self, other: &SaliencyMap) {
        assert_eq!((self.width, self.height), (other.width, other.height));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scaled(&self, alpha: f64) -> SaliencyMap {
        SaliencyMap {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v * alpha).collect(),
        }
    }

    /// 8-bit preview: `[0, max]` rescaled linearly to `[0, 255]`. The max is
    /// written next to the PNG as `<name>.max.txt`.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let max = self.max();
        let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v * scale).round().clamp(0.0, 255.0) as u8)
            .collect();
        image::save_buffer(
            path,
            &bytes,
            self.width as u32,
            self.height as u32,
            image::ColorType::L8,
        )
        .map_err(|e| Error::Encode {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let sidecar = path.with_extension("max.txt");
        std::fs::write(&sidecar, format!("{max}\n")).map_err(|e| Error::Io {
            path: sidecar.display().to_string(),
            source: e,
        })
    }

    /// Raw dump: `PQISMAP1`, width and height as little-endian u32, then
    /// the entries as little-endian f32 in row-major order.
    pub fn write_raw<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(RAW_MAGIC)?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_raw<R: Read>(mut r: R) -> Result<SaliencyMap> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)
            .map_err(|_| Error::BadRawMap("short header".into()))?;
        if &header[..8] != RAW_MAGIC {
            return Err(Error::BadRawMap("bad magic".into()));
        }
        let width = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        let mut body = Vec::new();
        r.read_to_end(&mut body)
            .map_err(|e| Error::BadRawMap(e.to_string()))?;
        if body.len() != width * height * 4 {
            return Err(Error::BadRawMap(format!(
                "expected {} payload bytes, found {}",
                width * height * 4,
                body.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        SaliencyMap::new(width, height, data)
    }
}

pub const RAW_MAGIC: &[u8; 8] = b"PQISMAP1";

/// Anything that can answer center and window-sum queries.
trait Field: Sync {
    fn dims(&self) -> (usize, usize);
    fn value(&self, x: usize, y: usize) -> f64;
    fn window_sum(&self, r: Rect) -> f64;
}

struct GrayField<'a> {
    img: &'a GrayImage,
    ii: &'a IntegralImage,
}

impl Field for GrayField<'_> {
    fn dims(&self) -> (usize, usize) {
        (self.img.width(), self.img.height())
    }
    fn value(&self, x: usize, y: usize) -> f64 {
        f64::from(self.img.get(x, y))
    }
    fn window_sum(&self, r: Rect) -> f64 {
        self.ii.rect_sum(r)
    }
}

struct RealField<'a> {
    img: &'a RealImage,
    ii: RealIntegralImage,
}

impl Field for RealField<'_> {
    fn dims(&self) -> (usize, usize) {
        (self.img.width(), self.img.height())
    }
    fn value(&self, x: usize, y: usize) -> f64 {
        self.img.get(x, y)
    }
    fn window_sum(&self, r: Rect) -> f64 {
        self.ii.rect_sum(r)
    }
}

fn surround_of<F: Field>(f: &F, x: usize, y: usize, zeta: usize) -> f64 {
    let (w, h) = f.dims();
    let Some(win) = Rect::around(x, y, zeta).clamp_to(w, h) else {
        return 0.0;
    };
    let n = win.area();
    if n <= 1 {
        return 0.0;
    }
    (f.window_sum(win) - f.value(x, y)) / (n - 1) as f64
}

fn accumulate_submap<F: Field>(f: &F, zeta: usize, out: &mut [f64]) {
    let (w, _) = f.dims();
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let d = f.value(x, y) - surround_of(f, x, y, zeta);
            if d > 0.0 {
                *o += d;
            }
        }
    });
}

fn saliency_of<F: Field>(f: &F, params: &SaliencyParams) -> Result<SaliencyMap> {
    params.validate()?;
    let (w, h) = f.dims();
    let mut data = vec![0.0; w * h];
    for zeta in params.zetas() {
        accumulate_submap(f, zeta, &mut data);
    }
    Ok(SaliencyMap {
        width: w,
        height: h,
        data,
    })
}

/// Mean intensity of the clamped window of radius `zeta` around `(x, y)`,
/// excluding the center. A window holding only the center yields 0.
pub fn surround(ii: &IntegralImage, x: usize, y: usize, zeta: usize) -> f64 {
    let Some(win) = Rect::around(x, y, zeta).clamp_to(ii.width(), ii.height()) else {
        return 0.0;
    };
    let n = win.area();
    if n <= 1 {
        return 0.0;
    }
    let center = ii.rect_sum_exact(Rect::around(x, y, 0));
    (ii.rect_sum_exact(win) - center) as f64 / (n - 1) as f64
}

#[inline]
pub fn center(img: &GrayImage, x: usize, y: usize) -> f64 {
    f64::from(img.get(x, y))
}

pub fn submap(img: &GrayImage, ii: &IntegralImage, zeta: usize) -> SaliencyMap {
    let mut data = vec![0.0; img.width() * img.height()];
    accumulate_submap(&GrayField { img, ii }, zeta, &mut data);
    SaliencyMap {
        width: img.width(),
        height: img.height(),
        data,
    }
}

pub fn fine_grained_saliency(img: &GrayImage, params: &SaliencyParams) -> Result<SaliencyMap> {
    let ii = IntegralImage::new(img);
    saliency_of(&GrayField { img, ii: &ii }, params)
}

/// Same map computed on real-valued intensities.
pub fn fine_grained_saliency_real(img: &RealImage, params: &SaliencyParams) -> Result<SaliencyMap> {
    let ii = RealIntegralImage::new(img);
    saliency_of(&RealField { img, ii }, params)
}
