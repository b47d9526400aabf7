//! SLIC superpixels and per-segment descriptors.
//!
//! Clustering runs in CIELAB + image-plane space from a regular seed grid.
//! After the k-means iterations every label keeps only its largest
//! 4-connected piece; the other pieces are absorbed, smallest first, into
//! the largest segment they touch, so every output segment is connected.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;

use crate::image::RgbImage;
use crate::{Error, Result};

pub const DEFAULT_COMPACTNESS: f64 = 10.0;
pub const DEFAULT_ITERATIONS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct SuperpixelSegmentation {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    k_actual: usize,
    compactness: f64,
}

impl SuperpixelSegmentation {
    /// Builds a segmentation from an explicit label map. Labels must be
    /// dense in `0..k` with every label used.
    pub fn from_labels(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width * height || labels.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: labels.len(),
            });
        }
        let k = *labels.iter().max().unwrap() as usize + 1;
        let mut seen = vec![false; k];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidParams("label ids must be dense".into()));
        }
        Ok(Self {
            width,
            height,
            labels,
            k_actual: k,
            compactness: 0.0,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn k_actual(&self) -> usize {
        self.k_actual
    }

    pub fn compactness(&self) -> f64 {
        self.compactness
    }

    /// Debug export as a 16-bit grayscale PNG of label ids.
    pub fn save_label_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if self.k_actual > usize::from(u16::MAX) + 1 {
            return Err(Error::InvalidParams(
                "too many labels for 16-bit export".into(),
            ));
        }
        let buf: image::ImageBuffer<image::Luma<u16>, Vec<u16>> = image::ImageBuffer::from_raw(
            self.width as u32,
            self.height as u32,
            self.labels.iter().map(|&l| l as u16).collect(),
        )
        .expect("buffer size matches dimensions");
        buf.save(path).map_err(|e| Error::Encode {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

fn srgb_to_linear_lut() -> &'static [f64; 256] {
    static LUT: OnceLock<[f64; 256]> = OnceLock::new();
    LUT.get_or_init(|| {
        let mut t = [0.0; 256];
        for (i, v) in t.iter_mut().enumerate() {
            let c = i as f64 / 255.0;
            *v = if c <= 0.04045 {
                c / 12.92
            } else {
                ((c + 0.055) / 1.055).powf(2.4)
            };
        }
        t
    })
}

/// sRGB (D65) to CIELAB.
pub fn rgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lut = srgb_to_linear_lut();
    let (r, g, b) = (
        lut[rgb[0] as usize],
        lut[rgb[1] as usize],
        lut[rgb[2] as usize],
    );
    let x = (0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b) / 0.950_47;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175 * b;
    let z = (0.019_333_9 * r + 0.119_192 * g + 0.950_304_1 * b) / 1.088_83;
    let f = |t: f64| {
        if t > 0.008_856 {
            t.cbrt()
        } else {
            7.787 * t + 16.0 / 116.0
        }
    };
    let (fx, fy, fz) = (f(x), f(y), f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

#[derive(Clone, Copy, Debug)]
struct Center {
    lab: [f64; 3],
    x: f64,
    y: f64,
}

/// Seed grid dimensions `(nx, ny)` with `nx * ny` close to `k`.
fn grid_dims(w: usize, h: usize, k: usize) -> (usize, usize) {
    let nx = ((k as f64 * w as f64 / h as f64).sqrt().round() as usize).clamp(1, k.min(w));
    let ny = ((k as f64 / nx as f64).round() as usize).clamp(1, h);
    (nx, ny)
}

fn lab_gradient(lab: &[[f64; 3]], w: usize, h: usize, x: usize, y: usize) -> f64 {
    let at = |xx: usize, yy: usize| lab[yy * w + xx];
    let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
    let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
    let d2 = |a: [f64; 3], b: [f64; 3]| (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>();
    d2(at(xr, y), at(xl, y)) + d2(at(x, yd), at(x, yu))
}

pub fn slic(
    img: &RgbImage,
    k_target: usize,
    compactness: f64,
    iters: usize,
) -> Result<SuperpixelSegmentation> {
    let (w, h) = (img.width(), img.height());
    let n = w * h;
    if k_target == 0 {
        return Err(Error::InvalidParams("k_target must be >= 1".into()));
    }
    if k_target > n {
        return Err(Error::InvalidParams(format!(
            "k_target {k_target} exceeds pixel count {n}"
        )));
    }
    if iters == 0 {
        return Err(Error::InvalidParams("iterations must be >= 1".into()));
    }
    if !(compactness.is_finite() && compactness >= 0.0) {
        return Err(Error::InvalidParams("compactness must be >= 0".into()));
    }

    let lab: Vec<[f64; 3]> = img
        .data()
        .par_chunks_exact(3)
        .map(|p| rgb_to_lab([p[0], p[1], p[2]]))
        .collect();

    let (nx, ny) = grid_dims(w, h, k_target);
    let (step_x, step_y) = (w as f64 / nx as f64, h as f64 / ny as f64);
    let spacing = (step_x * step_y).sqrt();
    let radius = step_x.max(step_y).ceil();

    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            // mean pixel coordinate of the grid cell
            let fx = i as f64 * step_x + (step_x - 1.0) / 2.0;
            let fy = j as f64 * step_y + (step_y - 1.0) / 2.0;
            let (cx, cy) = (
                (fx.round() as usize).min(w - 1),
                (fy.round() as usize).min(h - 1),
            );
            // move the seed to a strictly lower-gradient pixel of its 3x3 block
            let mut best = (lab_gradient(&lab, w, h, cx, cy), cx, cy);
            for yy in cy.saturating_sub(1)..=(cy + 1).min(h - 1) {
                for xx in cx.saturating_sub(1)..=(cx + 1).min(w - 1) {
                    let g = lab_gradient(&lab, w, h, xx, yy);
                    if g < best.0 {
                        best = (g, xx, yy);
                    }
                }
            }
            let (x, y) = if (best.1, best.2) == (cx, cy) {
                (fx, fy)
            } else {
                (best.1 as f64, best.2 as f64)
            };
            centers.push(Center {
                lab: lab[best.2 * w + best.1],
                x,
                y,
            });
        }
    }

    let spatial_weight = (compactness / spacing).powi(2);
    let mut labels = vec![0u32; n];
    for _ in 0..iters {
        assign(&lab, w, &centers, radius, spatial_weight, &mut labels);
        update_centers(&lab, w, &labels, &mut centers);
    }
    assign(&lab, w, &centers, radius, spatial_weight, &mut labels);

    let labels = enforce_connectivity(w, h, &labels);
    let k_actual = *labels.iter().max().unwrap() as usize + 1;
    Ok(SuperpixelSegmentation {
        width: w,
        height: h,
        labels,
        k_actual,
        compactness,
    })
}

/// Nearest center in the joint distance among the centers whose window
/// covers the pixel; ties go to the lower cluster index.
fn assign(
    lab: &[[f64; 3]],
    w: usize,
    centers: &[Center],
    radius: f64,
    spatial_weight: f64,
    labels: &mut [u32],
) {
    labels.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let yf = y as f64;
        let near: Vec<usize> = (0..centers.len())
            .filter(|&c| (centers[c].y - yf).abs() <= radius)
            .collect();
        for (x, out) in row.iter_mut().enumerate() {
            let xf = x as f64;
            let p = lab[y * w + x];
            let dist = |c: &Center| {
                let dc: f64 = (0..3).map(|i| (p[i] - c.lab[i]).powi(2)).sum();
                let ds = (c.x - xf).powi(2) + (c.y - yf).powi(2);
                dc + ds * spatial_weight
            };
            let mut best = (f64::INFINITY, usize::MAX);
            for &ci in &near {
                if (centers[ci].x - xf).abs() > radius {
                    continue;
                }
                let d = dist(&centers[ci]);
                if d < best.0 {
                    best = (d, ci);
                }
            }
            if best.1 == usize::MAX {
                // drifted centers can leave a pixel uncovered; fall back to
                // the spatially nearest one
                for (ci, c) in centers.iter().enumerate() {
                    let d = (c.x - xf).powi(2) + (c.y - yf).powi(2);
                    if d < best.0 {
                        best = (d, ci);
                    }
                }
            }
            *out = best.1 as u32;
        }
    });
}

fn update_centers(lab: &[[f64; 3]], w: usize, labels: &[u32], centers: &mut [Center]) {
    let mut acc = vec![[0.0f64; 6]; centers.len()];
    for (i, &l) in labels.iter().enumerate() {
        let a = &mut acc[l as usize];
        a[0] += lab[i][0];
        a[1] += lab[i][1];
        a[2] += lab[i][2];
        a[3] += (i % w) as f64;
        a[4] += (i / w) as f64;
        a[5] += 1.0;
    }
    for (c, a) in centers.iter_mut().zip(acc) {
        if a[5] > 0.0 {
            c.lab = [a[0] / a[5], a[1] / a[5], a[2] / a[5]];
            c.x = a[3] / a[5];
            c.y = a[4] / a[5];
        }
    }
}

/// 4-connected components of a label map: (component id per pixel, sizes).
fn components(w: usize, h: usize, labels: &[u32]) -> (Vec<usize>, Vec<usize>) {
    let mut comp = vec![usize::MAX; w * h];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let label = labels[start];
        comp[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (x, y) = (p % w, p / w);
            let mut visit = |q: usize| {
                if comp[q] == usize::MAX && labels[q] == label {
                    comp[q] = id;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        sizes.push(size);
    }
    (comp, sizes)
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Relabels so that every segment is one 4-connected region, with ids dense
/// in scan order of first appearance.
pub fn enforce_connectivity(w: usize, h: usize, labels: &[u32]) -> Vec<u32> {
    let (comp, sizes) = components(w, h, labels);
    let ncomp = sizes.len();

    let mut comp_label = vec![0u32; ncomp];
    for (p, &c) in comp.iter().enumerate() {
        comp_label[c] = labels[p];
    }
    // largest piece of every label; first in scan order wins ties
    let max_label = labels.iter().copied().max().unwrap_or(0) as usize;
    let mut keeper = vec![usize::MAX; max_label + 1];
    for c in 0..ncomp {
        let l = comp_label[c] as usize;
        if keeper[l] == usize::MAX || sizes[c] > sizes[keeper[l]] {
            keeper[l] = c;
        }
    }

    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); ncomp];
    for y in 0..h {
        for x in 0..w {
            let a = comp[y * w + x];
            let right = (x + 1 < w).then(|| comp[y * w + x + 1]);
            let down = (y + 1 < h).then(|| comp[(y + 1) * w + x]);
            for b in [right, down].into_iter().flatten() {
                if a != b {
                    adjacency[a].push(b);
                    adjacency[b].push(a);
                }
            }
        }
    }
    for adj in &mut adjacency {
        adj.sort_unstable();
        adj.dedup();
    }

    let mut orphans: Vec<usize> = (0..ncomp)
        .filter(|&c| keeper[comp_label[c] as usize] != c)
        .collect();
    orphans.sort_by_key(|&c| (sizes[c], c));

    let mut parent: Vec<usize> = (0..ncomp).collect();
    let mut set_size = sizes.clone();
    for o in orphans {
        let root = find(&mut parent, o);
        let mut target: Option<usize> = None;
        for &nb in &adjacency[o] {
            let r = find(&mut parent, nb);
            if r == root {
                continue;
            }
            target = match target {
                Some(t)
                    if (set_size[t], std::cmp::Reverse(t))
                        >= (set_size[r], std::cmp::Reverse(r)) =>
                {
                    Some(t)
                }
                _ => Some(r),
            };
        }
        if let Some(t) = target {
            parent[root] = t;
            set_size[t] += set_size[root];
        }
    }

    let mut new_id = vec![u32::MAX; ncomp];
    let mut next = 0u32;
    comp.iter()
        .map(|&c| {
            let r = find(&mut parent, c);
            if new_id[r] == u32::MAX {
                new_id[r] = next;
                next += 1;
            }
            new_id[r]
        })
        .collect()
}

/// Descriptors of one segment. Colors are in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentFeature {
    pub rgb_mean: [f64; 3],
    pub rgb_std: [f64; 3],
    pub size: usize,
    /// Mean pixel coordinate `(x, y)`.
    pub centroid: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuperpixelFeatures {
    pub width: usize,
    pub height: usize,
    pub segments: Vec<SegmentFeature>,
}

pub fn extract_features(
    img: &RgbImage,
    seg: &SuperpixelSegmentation,
) -> Result<SuperpixelFeatures> {
    if (img.width(), img.height()) != (seg.width, seg.height) {
        return Err(Error::DimensionMismatch {
            expected: seg.width * seg.height,
            actual: img.pixel_count(),
        });
    }
    let w = img.width();
    let k = seg.k_actual;
    // per segment: sum rgb, sum rgb^2, sum x, sum y, count
    let mut acc = vec![[0.0f64; 9]; k];
    for (i, (px, &l)) in img.data().chunks_exact(3).zip(&seg.labels).enumerate() {
        let a = &mut acc[l as usize];
        for c in 0..3 {
            let v = f64::from(px[c]) / 255.0;
            a[c] += v;
            a[3 + c] += v * v;
        }
        a[6] += (i % w) as f64;
        a[7] += (i / w) as f64;
        a[8] += 1.0;
    }
    let segments = acc
        .into_iter()
        .map(|a| {
            let n = a[8];
            let mean = [a[0] / n, a[1] / n, a[2] / n];
            let std = [0, 1, 2].map(|c| (a[3 + c] / n - mean[c] * mean[c]).max(0.0).sqrt());
            SegmentFeature {
                rgb_mean: mean,
                rgb_std: std,
                size: n as usize,
                centroid: (a[6] / n, a[7] / n),
            }
        })
        .collect();
    Ok(SuperpixelFeatures {
        width: img.width(),
        height: seg.height,
        segments,
    })
}

/// Fixed-length superpixel input: `k_fixed` rows of 6 color features and 3
/// size/position encodings, with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperpixelBlock {
    /// `[mean_r, mean_g, mean_b, std_r, std_g, std_b]` per row.
    pub features: Vec<[f64; 6]>,
    /// `[relative size, centroid_x / width, centroid_y / height]` per row,
    /// where relative size is the segment size over the mean segment size.
    pub encodings: Vec<[f64; 3]>,
    pub mask: Vec<bool>,
}

impl SuperpixelBlock {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Zero-pads (masked) or truncates (highest indices dropped) to `k_fixed` rows.
pub fn pad_or_truncate(features: &SuperpixelFeatures, k_fixed: usize) -> Result<SuperpixelBlock> {
    if k_fixed == 0 {
        return Err(Error::InvalidParams("k_fixed must be >= 1".into()));
    }
    let total: usize = features.segments.iter().map(|s| s.size).sum();
    let mean_size = total as f64 / features.segments.len().max(1) as f64;
    let mut block = SuperpixelBlock {
        features: vec![[0.0; 6]; k_fixed],
        encodings: vec![[0.0; 3]; k_fixed],
        mask: vec![false; k_fixed],
    };
    for (i, s) in features.segments.iter().take(k_fixed).enumerate() {
        block.features[i] = [
            s.rgb_mean[0],
            s.rgb_mean[1],
            s.rgb_mean[2],
            s.rgb_std[0],
            s.rgb_std[1],
            s.rgb_std[2],
        ];
        block.encodings[i] = [
            s.size as f64 / mean_size,
            s.centroid.0 / features.width as f64,
            s.centroid.1 / features.height as f64,
        ];
        block.mask[i] = true;
    }
    Ok(block)
}
