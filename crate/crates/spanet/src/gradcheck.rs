//! Central finite differences against the analytic backward pass.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::layers::{uniform, Attention, Linear, Params};
use crate::model::{SpaNetInput, SpaNetModel};
use crate::Result;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for the relative error. Parameters whose gradient is
/// smaller (some are exactly zero, e.g. key biases) are judged by absolute
/// error against this scale, which stays well above difference roundoff.
pub const REL_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Worst relative error per parameter tensor.
    pub per_tensor: BTreeMap<String, f64>,
}

fn perturb(model: &mut SpaNetModel, index: usize, delta: f64) {
    let mut off = 0;
    model.visit_mut("", &mut |_, p| {
        if (off..off + p.len()).contains(&index) {
            p[index - off] += delta;
        }
        off += p.len();
    });
}

/// Checks at least `n_params` parameters: one from every tensor, the rest
/// drawn uniformly from the whole parameter vector. The objective is the
/// squared error against `target`.
pub fn gradient_check(
    model: &SpaNetModel,
    input: &SpaNetInput,
    target: f64,
    n_params: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, grads) = model.loss_and_grad(input, target)?;
    let analytic = grads.params.flatten();

    let mut tensors = Vec::new();
    let mut off = 0;
    model.visit("", &mut |name, _, d| {
        tensors.push((name.to_string(), off, d.len()));
        off += d.len();
    });
    let total = off;
    let mut picks: Vec<usize> = tensors
        .iter()
        .map(|(_, start, len)| start + rng.random_range(0..*len))
        .collect();
    while picks.len() < n_params.min(total) {
        let i = rng.random_range(0..total);
        if !picks.contains(&i) {
            picks.push(i);
        }
    }

    let loss = |m: &SpaNetModel| -> Result<f64> { Ok((m.predict(input)? - target).powi(2)) };
    let mut work = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        per_tensor: BTreeMap::new(),
    };
    for &i in &picks {
        perturb(&mut work, i, FD_STEP);
        let up = loss(&work)?;
        perturb(&mut work, i, -2.0 * FD_STEP);
        let down = loss(&work)?;
        perturb(&mut work, i, FD_STEP);
        let numeric = (up - down) / (2.0 * FD_STEP);
        let err = relative_error(analytic[i], numeric);
        let name = &tensors
            .iter()
            .find(|(_, s, l)| (*s..s + l).contains(&i))
            .expect("index inside some tensor")
            .0;
        let worst = report.per_tensor.entry(name.clone()).or_insert(0.0);
        *worst = worst.max(err);
        report.max_rel_error = report.max_rel_error.max(err);
        report.checked += 1;
    }
    Ok(report)
}

/// Two stacked linear maps under squared error: the loss is quadratic in
/// each parameter, so central differences are exact up to rounding.
pub fn linear_probe_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut l1 = Linear::new(&mut rng, 6, 5);
    let mut l2 = Linear::new(&mut rng, 5, 1);
    l1.b = ndarray::Array1::from_shape_simple_fn(5, || rng.random_range(-0.5..0.5));
    let x = uniform(&mut rng, 4, 6, 1.0);
    let t = uniform(&mut rng, 4, 1, 1.0);
    let loss = |l1: &Linear, l2: &Linear| (l2.forward(&l1.forward(&x)) - &t).mapv(|v| v * v).sum();

    let h = l1.forward(&x);
    let dy = (l2.forward(&h) - &t) * 2.0;
    let (mut g1, mut g2) = (Linear::zeros(6, 5), Linear::zeros(5, 1));
    let dh = l2.backward(&h, &dy, &mut g2);
    l1.backward(&x, &dh, &mut g1);

    let mut worst = 0.0f64;
    let mut analytic = Vec::new();
    g1.visit("", &mut |_, _, d| analytic.extend_from_slice(d));
    g2.visit("", &mut |_, _, d| analytic.extend_from_slice(d));
    for (i, a) in analytic.into_iter().enumerate() {
        let nudge = |l1: &mut Linear, l2: &mut Linear, delta: f64| {
            let mut off = 0;
            let mut f = |_: &str, p: &mut [f64]| {
                if (off..off + p.len()).contains(&i) {
                    p[i - off] += delta;
                }
                off += p.len();
            };
            l1.visit_mut("", &mut f);
            l2.visit_mut("", &mut f);
        };
        nudge(&mut l1, &mut l2, FD_STEP);
        let up = loss(&l1, &l2);
        nudge(&mut l1, &mut l2, -2.0 * FD_STEP);
        let down = loss(&l1, &l2);
        nudge(&mut l1, &mut l2, FD_STEP);
        worst = worst.max(relative_error(a, (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

/// Multi-head attention on its own under a fixed random linear readout;
/// checks every parameter and every input entry.
pub fn attention_probe_check(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, dim, heads) = (5, 8, 2);
    let mut attn = Attention::new(&mut rng, dim, heads);
    let x = uniform(&mut rng, n, dim, 1.0);
    let readout = uniform(&mut rng, n, dim, 1.0);
    let mask = [true, true, false, true, true];
    let objective = |a: &Attention, x: &Array2<f64>| -> Result<f64> {
        Ok((a.forward(x, Some(&mask))?.0 * &readout).sum())
    };

    let (_, cache) = attn.forward(&x, Some(&mask))?;
    let mut g = Attention::zeros(dim, heads);
    let dx = attn.backward(&cache, &readout, &mut g);

    let mut worst = 0.0f64;
    let mut analytic = Vec::new();
    g.visit("", &mut |_, _, d| analytic.extend_from_slice(d));
    for (i, a) in analytic.into_iter().enumerate() {
        let nudge = |m: &mut Attention, delta: f64| {
            let mut off = 0;
            m.visit_mut("", &mut |_, p| {
                if (off..off + p.len()).contains(&i) {
                    p[i - off] += delta;
                }
                off += p.len();
            });
        };
        nudge(&mut attn, FD_STEP);
        let up = objective(&attn, &x)?;
        nudge(&mut attn, -2.0 * FD_STEP);
        let down = objective(&attn, &x)?;
        nudge(&mut attn, FD_STEP);
        worst = worst.max(relative_error(a, (up - down) / (2.0 * FD_STEP)));
    }
    for r in 0..n {
        for c in 0..dim {
            let mut xp = x.clone();
            xp[[r, c]] += FD_STEP;
            let mut xm = x.clone();
            xm[[r, c]] -= FD_STEP;
            let num = (objective(&attn, &xp)? - objective(&attn, &xm)?) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(dx[[r, c]], num));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9) - 1e-5).abs() < 1e-15);
    }

    #[test]
    fn linear_probe_is_exact() {
        for seed in 0..3 {
            assert!(linear_probe_check(seed) < 1e-8);
        }
    }

    #[test]
    fn attention_probe() {
        for seed in 0..3 {
            assert!(attention_probe_check(seed).unwrap() < 1e-6);
        }
    }
}
