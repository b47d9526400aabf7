//! Summed-area tables.
//!
//! Entry `(x, y)` holds the sum of every source value in `(0,0)..=(x,y)`.
//! Rectangle sums use the usual four-corner inclusion-exclusion and clamp
//! the query rectangle to the image first.

use crate::image::{GrayImage, RealImage, Rect};

/// Integer summed-area table over an 8-bit image. Sums are exact.
#[derive(Clone, Debug)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    data: Vec<u64>,
}

impl IntegralImage {
    pub fn new(img: &GrayImage) -> Self {
        let (w, h) = (img.width(), img.height());
        let src = img.data();
        let mut data = vec![0u64; w * h];
        for y in 0..h {
            let mut row = 0u64;
            for x in 0..w {
                row += u64::from(src[y * w + x]);
                let above = if y > 0 { data[(y - 1) * w + x] } else { 0 };
                data[y * w + x] = row + above;
            }
        }
        Self {
            width: w,
            height: h,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> u64 {
        self.data[y * self.width + x]
    }

    /// Exact integer sum over `r` clamped to the image; 0 if nothing remains.
    pub fn rect_sum_exact(&self, r: Rect) -> u64 {
        let Some(r) = r.clamp_to(self.width, self.height) else {
            return 0;
        };
        let (x0, y0, x1, y1) = (r.x0 as usize, r.y0 as usize, r.x1 as usize, r.y1 as usize);
        let total = self.at(x1, y1);
        let left = if x0 > 0 { self.at(x0 - 1, y1) } else { 0 };
        let up = if y0 > 0 { self.at(x1, y0 - 1) } else { 0 };
        let corner = if x0 > 0 && y0 > 0 {
            self.at(x0 - 1, y0 - 1)
        } else {
            0
        };
        // total + corner >= left + up always holds, so this never underflows
        total + corner - left - up
    }

    pub fn rect_sum(&self, r: Rect) -> f64 {
        self.rect_sum_exact(r) as f64
    }
}

/// Real-valued summed-area table, for fields that are not 8-bit quantized.
#[derive(Clone, Debug)]
pub struct RealIntegralImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RealIntegralImage {
    pub fn new(img: &RealImage) -> Self {
        Self::from_slice(img.width(), img.height(), img.data())
    }

    pub(crate) fn from_slice(w: usize, h: usize, src: &[f64]) -> Self {
        let mut data = vec![0f64; w * h];
        for y in 0..h {
            let mut row = 0f64;
            for x in 0..w {
                row += src[y * w + x];
                let above = if y > 0 { data[(y - 1) * w + x] } else { 0.0 };
                data[y * w + x] = row + above;
            }
        }
        Self {
            width: w,
            height: h,
            data,
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn rect_sum(&self, r: Rect) -> f64 {
        let Some(r) = r.clamp_to(self.width, self.height) else {
            return 0.0;
        };
        let (x0, y0, x1, y1) = (r.x0 as usize, r.y0 as usize, r.x1 as usize, r.y1 as usize);
        let total = self.at(x1, y1);
        let left = if x0 > 0 { self.at(x0 - 1, y1) } else { 0.0 };
        let up = if y0 > 0 { self.at(x1, y0 - 1) } else { 0.0 };
        let corner = if x0 > 0 && y0 > 0 {
            self.at(x0 - 1, y0 - 1)
        } else {
            0.0
        };
        total - left - up + corner
    }
}
