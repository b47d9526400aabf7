//! Mini-batch Adam on squared error with a half-cosine learning-rate decay.
//!
//! Per-sample gradients within a batch are computed in parallel and summed
//! in sample order, so a run is bitwise reproducible for a given seed.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::TrainConfig;
use crate::layers::Params;
use crate::model::{SpaNetInput, SpaNetModel};
use crate::{Result, SpaNetError};

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: SpaNetInput,
    pub target: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean squared error over the epoch's batches, before each update.
    pub train_loss: f64,
    /// Mean squared error on the validation set after the epoch.
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
}

impl TrainReport {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.history.last().map(|r| r.train_loss)
    }

    /// CSV with header `epoch,lr,train_loss,val_loss`; the last column is
    /// empty when no validation set was given.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,lr,train_loss,val_loss")?;
        for r in &self.history {
            let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
            writeln!(w, "{},{:e},{},{}", r.epoch, r.lr, r.train_loss, val)?;
        }
        Ok(())
    }
}

/// Adam state over the flattened parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, model: &mut SpaNetModel, grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let (m, v) = (&mut self.m, &mut self.v);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let mut off = 0;
        model.visit_mut("", &mut |_, p| {
            for (i, w) in p.iter_mut().enumerate() {
                let j = off + i;
                let g = grad[j];
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                *w -= lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + eps);
            }
            off += p.len();
        });
    }
}

/// Mean squared error and mean gradient over a batch.
fn batch_grad(model: &SpaNetModel, batch: &[&Sample]) -> Result<(f64, Vec<f64>)> {
    let per_sample: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|s| {
            let (loss, g) = model.loss_and_grad(&s.input, s.target)?;
            Ok((loss, g.params.flatten()))
        })
        .collect::<Result<_>>()?;
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; per_sample[0].1.len()];
    for (l, g) in &per_sample {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

pub fn mean_squared_error(model: &SpaNetModel, data: &[Sample]) -> Result<f64> {
    let preds = predict_all(
        model,
        data.iter().map(|s| &s.input).collect::<Vec<_>>().as_slice(),
    )?;
    Ok(preds
        .iter()
        .zip(data)
        .map(|(p, s)| (p - s.target).powi(2))
        .sum::<f64>()
        / data.len() as f64)
}

pub fn predict_all(model: &SpaNetModel, inputs: &[&SpaNetInput]) -> Result<Vec<f64>> {
    inputs.par_iter().map(|x| model.predict(x)).collect()
}

pub fn train(
    model: &mut SpaNetModel,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(SpaNetError::EmptyDataset);
    }
    if let Some(s) = train_set
        .iter()
        .chain(val_set)
        .find(|s| !s.target.is_finite())
    {
        return Err(SpaNetError::NonFinite(format!("target {}", s.target)));
    }
    if cfg.init_output_bias {
        let mean = train_set.iter().map(|s| s.target).sum::<f64>() / train_set.len() as f64;
        model.head.out.b[0] = mean;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.param_count(), cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, grad) = batch_grad(model, &batch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(SpaNetError::Diverged { epoch, loss });
            }
            adam.step(model, &grad, lr);
            loss_sum += loss;
            batches += 1;
        }
        if !model.is_finite() {
            return Err(SpaNetError::Diverged {
                epoch,
                loss: f64::NAN,
            });
        }
        let val_loss = if val_set.is_empty() {
            None
        } else {
            Some(mean_squared_error(model, val_set)?)
        };
        report.history.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / batches as f64,
            val_loss,
        });
    }
    Ok(report)
}
