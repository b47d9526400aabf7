//! Perception quality index.
//!
//! The index of a frame is the mean over all pixels of
//! `sm(x,y) * (1 + sum_i c_i * [ (x,y) in box_i ])`: the whole-image
//! saliency plus, for every detection, its confidence times the saliency
//! restricted to its box. Overlapping boxes add up.

use crate::detection::{Detection, DetectionSet};
use crate::saliency::SaliencyMap;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PqiScore {
    pub image_id: String,
    pub value: f64,
    /// Detections whose box kept a positive area inside the frame.
    pub k_used: usize,
}

/// Confidence times the saliency mass inside the detection's box.
pub fn object_saliency_term(sm: &SaliencyMap, d: &Detection) -> f64 {
    let Some(r) = d.pixel_rect(sm.width(), sm.height()) else {
        return 0.0;
    };
    let mut sum = 0.0;
    for y in r.y0 as usize..=r.y1 as usize {
        let row = &sm.data()[y * sm.width()..(y + 1) * sm.width()];
        sum += row[r.x0 as usize..=r.x1 as usize].iter().sum::<f64>();
    }
    d.confidence * sum
}

pub fn compute_pqi(sm: &SaliencyMap, ds: &DetectionSet) -> Result<PqiScore> {
    if sm.is_empty() {
        return Err(Error::EmptyImage);
    }
    let (w, h) = (sm.width(), sm.height());
    // Per-pixel weight 1 + sum of confidences of the boxes covering it.
    let mut weight = vec![1.0f64; w * h];
    let mut k_used = 0;
    for d in &ds.detections {
        let Some(r) = d.pixel_rect(w, h) else {
            continue;
        };
        k_used += 1;
        for y in r.y0 as usize..=r.y1 as usize {
            for wv in &mut weight[y * w + r.x0 as usize..=y * w + r.x1 as usize] {
                *wv += d.confidence;
            }
        }
    }
    let total: f64 = sm.data().iter().zip(&weight).map(|(s, k)| s * k).sum();
    Ok(PqiScore {
        image_id: ds.image_id.clone(),
        value: total / (w * h) as f64,
        k_used,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum StdKind {
    #[default]
    Population,
    Sample,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistogramBucket {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PqiDistribution {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub histogram: Vec<HistogramBucket>,
}

#[derive(Clone, Copy, Debug)]
pub struct DistributionOptions {
    pub bucket_width: f64,
    pub std_kind: StdKind,
}

impl Default for DistributionOptions {
    fn default() -> Self {
        Self {
            bucket_width: 1.0,
            std_kind: StdKind::Population,
        }
    }
}

pub fn pqi_distribution(scores: &[PqiScore]) -> Result<PqiDistribution> {
    let values: Vec<f64> = scores.iter().map(|s| s.value).collect();
    distribution_of(&values, DistributionOptions::default())
}

/// Mean, standard deviation and a fixed-width histogram. Buckets are
/// `[k*width, (k+1)*width)` starting at the bucket holding the minimum.
pub fn distribution_of(values: &[f64], opts: DistributionOptions) -> Result<PqiDistribution> {
    if values.is_empty() {
        return Err(Error::EmptyInput("no scores".into()));
    }
    if !(opts.bucket_width > 0.0 && opts.bucket_width.is_finite()) {
        return Err(Error::InvalidParams("bucket width must be positive".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams("scores must be finite".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let std = match opts.std_kind {
        StdKind::Population => (ss / n as f64).sqrt(),
        StdKind::Sample if n > 1 => (ss / (n - 1) as f64).sqrt(),
        StdKind::Sample => 0.0,
    };

    let bw = opts.bucket_width;
    let bucket = |v: f64| (v / bw).floor() as i64;
    let lo = values.iter().map(|&v| bucket(v)).min().unwrap();
    let hi = values.iter().map(|&v| bucket(v)).max().unwrap();
    let mut counts = vec![0usize; (hi - lo + 1) as usize];
    for &v in values {
        counts[(bucket(v) - lo) as usize] += 1;
    }
    let histogram = counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| {
            let k = lo + i as i64;
            HistogramBucket {
                lower: k as f64 * bw,
                upper: (k + 1) as f64 * bw,
                count,
            }
        })
        .collect();
    Ok(PqiDistribution {
        mean,
        std,
        n,
        histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Rect;
    use proptest::prelude::*;

    fn det(x0: i64, y0: i64, x1: i64, y1: i64, c: f64) -> Detection {
        Detection::pixel(Rect::new(x0, y0, x1, y1), 0, c)
    }

    fn score(v: f64) -> PqiScore {
        PqiScore {
            image_id: String::new(),
            value: v,
            k_used: 0,
        }
    }

    #[test]
    fn object_term_examples() {
        let ones = SaliencyMap::new(4, 4, vec![1.0; 16]).unwrap();
        assert_eq!(object_saliency_term(&ones, &det(0, 0, 1, 1, 0.5)), 2.0);
        assert_eq!(object_saliency_term(&ones, &det(0, 0, 3, 3, 0.0)), 0.0);
        let zeros = SaliencyMap::zeros(4, 4);
        assert_eq!(object_saliency_term(&zeros, &det(0, 0, 3, 3, 0.9)), 0.0);
        assert_eq!(object_saliency_term(&ones, &det(10, 10, 12, 12, 1.0)), 0.0);
    }

    #[test]
    fn no_detections_gives_mean() {
        let sm = SaliencyMap::new(2, 2, vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let s = compute_pqi(&sm, &DetectionSet::empty("a")).unwrap();
        assert_eq!(s.value, 3.0);
        assert_eq!(s.k_used, 0);
        assert_eq!(s.image_id, "a");
    }

    #[test]
    fn zero_map_scores_zero() {
        let sm = SaliencyMap::zeros(5, 5);
        let ds = DetectionSet::new("z", vec![det(0, 0, 4, 4, 1.0), det(1, 1, 2, 2, 0.5)]);
        assert_eq!(compute_pqi(&sm, &ds).unwrap().value, 0.0);
    }

    #[test]
    fn full_frame_detection_doubles() {
        let sm = SaliencyMap::new(2, 2, vec![10.0; 4]).unwrap();
        let ds = DetectionSet::new("d", vec![det(0, 0, 1, 1, 1.0)]);
        let s = compute_pqi(&sm, &ds).unwrap();
        assert_eq!(s.value, 20.0);
        assert_eq!(s.k_used, 1);
    }

    #[test]
    fn offscreen_detection_not_counted() {
        let sm = SaliencyMap::new(2, 2, vec![10.0; 4]).unwrap();
        let ds = DetectionSet::new("d", vec![det(5, 5, 9, 9, 1.0)]);
        assert_eq!(compute_pqi(&sm, &ds).unwrap().k_used, 0);
    }

    #[test]
    fn empty_map_is_error() {
        let sm = SaliencyMap::zeros(0, 0);
        assert!(compute_pqi(&sm, &DetectionSet::empty("e")).is_err());
    }

    #[test]
    fn distribution_examples() {
        let d = pqi_distribution(&[score(5.0)]).unwrap();
        assert_eq!((d.mean, d.std, d.n), (5.0, 0.0, 1));
        let d = pqi_distribution(&[score(0.0), score(10.0)]).unwrap();
        assert_eq!((d.mean, d.std), (5.0, 5.0));
        assert_eq!(d.histogram.len(), 11);
        assert_eq!(d.histogram.iter().map(|b| b.count).sum::<usize>(), 2);
        assert!(pqi_distribution(&[]).is_err());
    }

    #[test]
    fn sample_std_option() {
        let opts = DistributionOptions {
            bucket_width: 2.0,
            std_kind: StdKind::Sample,
        };
        let d = distribution_of(&[1.0, 3.0], opts).unwrap();
        assert!((d.std - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(d.histogram[0].lower, 0.0);
        assert_eq!(d.histogram[0].upper, 2.0);
    }

    fn arb_case() -> impl Strategy<Value = (SaliencyMap, Vec<Detection>)> {
        (1usize..10, 1usize..10).prop_flat_map(|(w, h)| {
            let map = proptest::collection::vec(0.0f64..100.0, w * h)
                .prop_map(move |d| SaliencyMap::new(w, h, d).unwrap());
            let dets = proptest::collection::vec(
                (-2i64..12, -2i64..12, 0i64..8, 0i64..8, 0.0f64..=1.0)
                    .prop_map(|(x, y, dx, dy, c)| det(x, y, x + dx, y + dy, c)),
                0..6,
            );
            (map, dets)
        })
    }

    proptest! {
        #[test]
        fn decomposition_holds((sm, dets) in arb_case()) {
            let ds = DetectionSet::new("p", dets.clone());
            let direct = compute_pqi(&sm, &ds).unwrap().value;
            let terms: f64 = dets.iter().map(|d| object_saliency_term(&sm, d)).sum();
            let expected = sm.mean().unwrap() + terms / sm.len() as f64;
            prop_assert!((direct - expected).abs() <= 1e-9 * expected.abs().max(1e-12));
        }

        #[test]
        fn permutation_invariant((sm, dets) in arb_case()) {
            let fwd = compute_pqi(&sm, &DetectionSet::new("p", dets.clone())).unwrap().value;
            let mut rev = dets;
            rev.reverse();
            let bwd = compute_pqi(&sm, &DetectionSet::new("p", rev)).unwrap().value;
            prop_assert!((fwd - bwd).abs() <= 1e-9 * fwd.abs().max(1e-12));
        }

        #[test]
        fn scales_linearly((sm, dets) in arb_case(), alpha in 0.0f64..5.0) {
            let ds = DetectionSet::new("p", dets);
            let base = compute_pqi(&sm, &ds).unwrap().value;
            let scaled = compute_pqi(&sm.scaled(alpha), &ds).unwrap().value;
            prop_assert!((scaled - alpha * base).abs() <= 1e-9 * (alpha * base).abs().max(1e-12));
        }

        #[test]
        fn value_at_least_mean((sm, dets) in arb_case()) {
            let v = compute_pqi(&sm, &DetectionSet::new("p", dets)).unwrap().value;
            prop_assert!(v >= sm.mean().unwrap() * (1.0 - 1e-12));
        }

        #[test]
        fn confidence_monotone((sm, dets) in arb_case(), bump in 0.0f64..1.0) {
            prop_assume!(!dets.is_empty());
            let before = compute_pqi(&sm, &DetectionSet::new("p", dets.clone())).unwrap().value;
            let mut raised = dets;
            raised[0].confidence = (raised[0].confidence + bump).min(1.0);
            let after = compute_pqi(&sm, &DetectionSet::new("p", raised)).unwrap().value;
            prop_assert!(after >= before);
        }
    }
}
