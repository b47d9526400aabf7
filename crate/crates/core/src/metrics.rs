//! Regression agreement metrics: Pearson (PLCC), Spearman (SRCC) and R².

use crate::{Error, Result};

/// Predicted and target scores, paired by position.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedScores {
    predicted: Vec<f64>,
    target: Vec<f64>,
}

impl PairedScores {
    pub fn new(predicted: Vec<f64>, target: Vec<f64>) -> Result<Self> {
        if predicted.len() != target.len() {
            return Err(Error::DimensionMismatch {
                expected: target.len(),
                actual: predicted.len(),
            });
        }
        if predicted.len() < 2 {
            return Err(Error::EmptyInput("need at least two pairs".into()));
        }
        if predicted.iter().chain(&target).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("scores must be finite".into()));
        }
        Ok(Self { predicted, target })
    }

    pub fn predicted(&self) -> &[f64] {
        &self.predicted
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn len(&self) -> usize {
        self.predicted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicted.is_empty()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (p, q) = (x - ma, y - mb);
        sab += p * q;
        saa += p * p;
        sbb += q * q;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson linear correlation of the mean-centered series,
/// `sum(p q) / (sqrt(sum p^2) sqrt(sum q^2))`.
pub fn plcc(s: &PairedScores) -> Result<f64> {
    pearson(&s.predicted, &s.target)
}

/// 1-based ranks; tied values share the average of the ranks they span.
pub fn rank(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of the rank vectors.
pub fn srcc(s: &PairedScores) -> Result<f64> {
    pearson(&rank(&s.predicted), &rank(&s.target))
}

/// `1 - RSS/TSS`. Negative when the predictions are worse than the target
/// mean.
pub fn r_squared(s: &PairedScores) -> Result<f64> {
    let mt = mean(&s.target);
    let tss: f64 = s.target.iter().map(|t| (t - mt).powi(2)).sum();
    if tss == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    let rss: f64 = s
        .target
        .iter()
        .zip(&s.predicted)
        .map(|(t, p)| (t - p).powi(2))
        .sum();
    Ok(1.0 - rss / tss)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub plcc: f64,
    pub srcc: f64,
    pub r2: f64,
    pub n: usize,
}

pub fn evaluate(s: &PairedScores) -> Result<MetricsReport> {
    Ok(MetricsReport {
        plcc: plcc(s)?,
        srcc: srcc(s)?,
        r2: r_squared(s)?,
        n: s.len(),
    })
}
