//! Procedural road scenes with ground-truth vehicle boxes.
//!
//! Used to build the bundled fixture set and the synthetic regression
//! datasets. Output depends only on the seed and size.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detection::Detection;
use crate::image::{Rect, RgbImage};

pub const CLASS_PERSON: i64 = 0;
pub const CLASS_CAR: i64 = 2;

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub image: RgbImage,
    pub detections: Vec<Detection>,
}

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<[f64; 3]>,
}

impl Canvas {
    fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: [f64; 3]) {
        let Some(r) = Rect::new(x0, y0, x1, y1).clamp_to(self.w, self.h) else {
            return;
        };
        for y in r.y0..=r.y1 {
            for x in r.x0..=r.x1 {
                self.px[y as usize * self.w + x as usize] = c;
            }
        }
    }

    fn fill_disc(&mut self, cx: f64, cy: f64, r: f64, c: [f64; 3]) {
        let (x0, x1) = ((cx - r).floor() as i64, (cx + r).ceil() as i64);
        let (y0, y1) = ((cy - r).floor() as i64, (cy + r).ceil() as i64);
        for y in y0.max(0)..=y1.min(self.h as i64 - 1) {
            for x in x0.max(0)..=x1.min(self.w as i64 - 1) {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx + dy * dy <= r * r {
                    self.px[y as usize * self.w + x as usize] = c;
                }
            }
        }
    }
}

fn jitter(rng: &mut ChaCha8Rng, c: [f64; 3], amount: f64) -> [f64; 3] {
    c.map(|v| v + rng.random_range(-amount..=amount))
}

/// Renders one scene. Vehicles get confidences in `[0.25, 0.99]` so that
/// some fall below the usual 0.4 threshold.
pub fn road_scene(seed: u64, width: usize, height: usize) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width, height);
    let (wf, hf) = (w as f64, h as f64);
    let mut cv = Canvas {
        w,
        h,
        px: vec![[0.0; 3]; w * h],
    };

    let horizon = (hf * rng.random_range(0.38..0.5)) as i64;
    let sky_top = jitter(&mut rng, [110.0, 150.0, 210.0], 40.0);
    let sky_low = jitter(&mut rng, [190.0, 200.0, 215.0], 25.0);
    for y in 0..horizon.max(1) as usize {
        let t = y as f64 / horizon.max(1) as f64;
        let c = [0, 1, 2].map(|i| sky_top[i] * (1.0 - t) + sky_low[i] * t);
        for x in 0..w {
            cv.px[y * w + x] = c;
        }
    }
    let ground = jitter(&mut rng, [80.0, 110.0, 60.0], 20.0);
    cv.fill_rect(0, horizon, w as i64 - 1, h as i64 - 1, ground);

    // skyline
    let mut x = 0i64;
    while x < w as i64 {
        let bw = rng
            .random_range((wf * 0.05) as i64..=(wf * 0.16) as i64)
            .max(2);
        let bh = rng
            .random_range((hf * 0.05) as i64..=(hf * 0.25) as i64)
            .max(2);
        let c = jitter(&mut rng, [120.0, 115.0, 110.0], 45.0);
        cv.fill_rect(x, horizon - bh, x + bw - 1, horizon, c);
        let win = jitter(&mut rng, [60.0, 70.0, 90.0], 20.0);
        let mut wy = horizon - bh + 2;
        while wy < horizon - 2 {
            let mut wx = x + 2;
            while wx < x + bw - 2 {
                cv.fill_rect(wx, wy, wx + 1, wy + 1, win);
                wx += 4;
            }
            wy += 4;
        }
        x += bw + rng.random_range(0..=(wf * 0.03) as i64);
    }

    // road: trapezoid from the bottom edge to the vanishing point
    let vp = wf * rng.random_range(0.4..0.6);
    let asphalt = jitter(&mut rng, [95.0, 95.0, 100.0], 20.0);
    let marking = [225.0, 225.0, 210.0];
    for y in horizon.max(0) as usize..h {
        let t = (y as f64 - horizon as f64) / (hf - horizon as f64).max(1.0);
        let half = 0.02 * wf + t * 0.55 * wf;
        let (l, r) = (
            (vp - half).max(0.0) as usize,
            ((vp + half) as usize).min(w - 1),
        );
        for x in l..=r {
            cv.px[y * w + x] = asphalt;
        }
        let dash = ((t * 12.0) as i64) % 2 == 0;
        let lane = (0.015 * wf * t).max(0.6);
        if dash {
            for x in ((vp - lane) as usize)..=((vp + lane) as usize).min(w - 1) {
                cv.px[y * w + x] = marking;
            }
        }
        for edge in [l, r] {
            for x in edge.saturating_sub(1)..=(edge + 1).min(w - 1) {
                cv.px[y * w + x] = marking;
            }
        }
    }

    // trees at the roadside
    for _ in 0..rng.random_range(2..6) {
        let tx = rng.random_range(0.0..wf);
        let ty = horizon as f64 + rng.random_range(0.0..hf * 0.15);
        let r = rng.random_range(hf * 0.04..hf * 0.1);
        let trunk = [70.0, 50.0, 35.0];
        cv.fill_rect(
            tx as i64 - 1,
            ty as i64,
            tx as i64 + 1,
            (ty + r * 1.2) as i64,
            trunk,
        );
        let leaves = jitter(&mut rng, [50.0, 105.0, 45.0], 20.0);
        cv.fill_disc(tx, ty - r * 0.3, r, leaves);
    }

    // vehicles, far to near so closer ones overdraw
    let mut detections = Vec::new();
    let n_cars = rng.random_range(1..=4);
    let mut depths: Vec<f64> = (0..n_cars).map(|_| rng.random_range(0.15..0.95)).collect();
    depths.sort_by(f64::total_cmp);
    for t in depths {
        let y_bottom = horizon as f64 + t * (hf - horizon as f64);
        let car_w = (0.06 + 0.3 * t) * wf;
        let car_h = car_w * rng.random_range(0.55..0.8);
        let half_road = 0.02 * wf + t * 0.55 * wf;
        let cx = vp + rng.random_range(-0.8..0.8) * half_road;
        let (x0, x1) = ((cx - car_w / 2.0) as i64, (cx + car_w / 2.0) as i64);
        let (y0, y1) = ((y_bottom - car_h) as i64, y_bottom as i64);
        let body = [
            rng.random_range(20.0..230.0),
            rng.random_range(20.0..230.0),
            rng.random_range(20.0..230.0),
        ];
        cv.fill_rect(
            x0,
            y0 + (car_h * 0.35) as i64,
            x1,
            y1 - (car_h * 0.12) as i64,
            body,
        );
        let roof_in = (car_w * 0.18) as i64;
        cv.fill_rect(
            x0 + roof_in,
            y0,
            x1 - roof_in,
            y0 + (car_h * 0.35) as i64,
            body,
        );
        let glass = [40.0, 55.0, 70.0];
        cv.fill_rect(
            x0 + roof_in + 1,
            y0 + (car_h * 0.06) as i64,
            x1 - roof_in - 1,
            y0 + (car_h * 0.32) as i64,
            glass,
        );
        let wheel_r = car_h * 0.14;
        for wx in [x0 as f64 + car_w * 0.2, x1 as f64 - car_w * 0.2] {
            cv.fill_disc(wx, y1 as f64 - wheel_r, wheel_r, [15.0, 15.0, 15.0]);
        }
        let light = [240.0, 60.0, 40.0];
        let lw = (car_w * 0.08).max(1.0) as i64;
        let ly = y0 + (car_h * 0.45) as i64;
        cv.fill_rect(x0 + 1, ly, x0 + lw, ly + lw / 2, light);
        cv.fill_rect(x1 - lw, ly, x1 - 1, ly + lw / 2, light);

        if let Some(r) = Rect::new(x0, y0, x1, y1).clamp_to(w, h) {
            let conf = rng.random_range(0.25..0.99);
            detections.push(Detection::pixel(
                r,
                CLASS_CAR,
                (conf * 1000.0f64).round() / 1000.0,
            ));
        }
    }

    // occasional pedestrian on the sidewalk
    if rng.random_bool(0.5) {
        let t = rng.random_range(0.3..0.9);
        let y_bottom = horizon as f64 + t * (hf - horizon as f64);
        let ph = (0.08 + 0.25 * t) * hf;
        let pw = ph * 0.35;
        let side = if rng.random_bool(0.5) { -1.0 } else { 1.0 };
        let px = vp + side * (0.02 * wf + t * 0.62 * wf);
        let (x0, x1) = ((px - pw / 2.0) as i64, (px + pw / 2.0) as i64);
        let (y0, y1) = ((y_bottom - ph) as i64, y_bottom as i64);
        let coat = jitter(&mut rng, [60.0, 60.0, 120.0], 50.0);
        cv.fill_rect(x0, y0 + (ph * 0.2) as i64, x1, y1, coat);
        cv.fill_disc(px, y0 as f64 + ph * 0.1, ph * 0.1, [200.0, 160.0, 130.0]);
        if let Some(r) = Rect::new(x0, y0, x1, y1).clamp_to(w, h) {
            let conf = rng.random_range(0.25..0.99);
            detections.push(Detection::pixel(
                r,
                CLASS_PERSON,
                (conf * 1000.0f64).round() / 1000.0,
            ));
        }
    }

    // lighting: dash cams see anything from dusk to bright day
    let exposure = rng.random_range(0.35..0.85);
    let tint = jitter(&mut rng, [1.0, 1.0, 1.0], 0.08);
    let data = cv
        .px
        .iter()
        .flat_map(|c| {
            let noise = rng.random_range(-6.0..=6.0);
            [0, 1, 2].map(|i| {
                (c[i] * exposure * tint[i] + noise)
                    .round()
                    .clamp(0.0, 255.0) as u8
            })
        })
        .collect();
    SyntheticScene {
        image: RgbImage::new(w, h, data).expect("dimensions are consistent"),
        detections,
    }
}
