use super::attention::{AttentionGrads, LinearAttentionICL};
use super::IclModel;
use crate::embedding::EmbeddingLayout;
use crate::error::{GradselError, Result};
use crate::rng::{stream, streams, GsRng};
use crate::scalar::Scalar;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Source of training prompts: an embedding and the target for its query.
pub trait PromptSource<T: Scalar>: Sync {
    fn layout(&self) -> EmbeddingLayout;
    fn sample(&self, rng: &mut GsRng) -> (Vec<T>, Vec<T>);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Learning-rate multiplier for the key and query maps. The normalised
    /// Gram matrix makes the loss very sensitive to them.
    pub key_query_lr_scale: f64,
    /// Record the batch loss every this many steps (0: every step).
    pub log_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 64,
            learning_rate: 0.01,
            seed: 0,
            optimizer: Optimizer::Adam,
            key_query_lr_scale: 0.05,
            log_every: 50,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(GradselError::InvalidConfig("learning rate must be > 0".into()));
        }
        if self.batch_size < 1 {
            return Err(GradselError::InvalidConfig("batch size must be ≥ 1".into()));
        }
        if !(self.key_query_lr_scale >= 0.0) {
            return Err(GradselError::InvalidConfig("key/query scale must be ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// (step, mean batch loss)
    pub loss_trace: Vec<(usize, f64)>,
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> Adam<T> {
    fn new(n: usize) -> Self {
        Self { m: vec![T::zero(); n], v: vec![T::zero(); n] }
    }

    fn step(&mut self, theta: &mut [T], g: &[T], lr: T, t: i32) {
        let (b1, b2, eps) = (T::of(0.9), T::of(0.999), T::of(1e-8));
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        for i in 0..theta.len() {
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g[i] * g[i];
            theta[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
        }
    }
}

fn sgd<T: Scalar>(theta: &mut [T], g: &[T], lr: T) {
    for (p, &d) in theta.iter_mut().zip(g) {
        *p -= lr * d;
    }
}

/// Train on squared query error with a cosine-decayed learning rate.
///
/// Prompts are drawn sequentially from one seeded stream; per-prompt
/// gradients are computed in parallel and summed in batch order, so the
/// result does not depend on the worker count. `steps = 0` returns `init`.
pub fn train_icl_model<T: Scalar, S: PromptSource<T>>(
    init: LinearAttentionICL<T>,
    cfg: &TrainingConfig,
    source: &S,
) -> Result<(LinearAttentionICL<T>, TrainingReport)> {
    cfg.validate()?;
    if source.layout() != init.layout {
        return Err(GradselError::LayoutMismatch);
    }
    let mut model = init;
    let mut report = TrainingReport::default();
    if cfg.steps == 0 {
        return Ok((model, report));
    }
    let mut rng = stream(cfg.seed, streams::TRAINING);
    let mut opt: Vec<Adam<T>> = [model.wk.as_slice().len(), model.wq.as_slice().len(), model.wv.as_slice().len(), 1, model.b.len()]
        .into_iter()
        .map(Adam::new)
        .collect();
    let bs = T::of(cfg.batch_size as f64);
    for step in 1..=cfg.steps {
        let batch: Vec<(Vec<T>, Vec<T>)> = (0..cfg.batch_size).map(|_| source.sample(&mut rng)).collect();
        let per: Vec<Result<(AttentionGrads<T>, T)>> = batch
            .par_iter()
            .map(|(emb, y)| {
                let pred = model.forward(emb)?.value;
                let up: Vec<T> = pred.iter().zip(y).map(|(&p, &t)| T::of(2.0) * (p - t) / bs).collect();
                let mut g = AttentionGrads::zeros_like(&model);
                model.backward_params(emb, &up, &mut g)?;
                let l: T = pred.iter().zip(y).map(|(&p, &t)| (p - t) * (p - t)).sum();
                Ok((g, l))
            })
            .collect();
        let mut grads = AttentionGrads::zeros_like(&model);
        let mut loss = T::zero();
        for r in per {
            let (g, l) = r.map_err(|_| GradselError::Divergence { step })?;
            grads.add(&g);
            loss += l;
        }
        let loss = loss / bs;
        if !loss.is_finite() {
            return Err(GradselError::Divergence { step });
        }
        if cfg.log_every == 0 || step % cfg.log_every == 0 || step == 1 || step == cfg.steps {
            report.loss_trace.push((step, loss.f64()));
        }
        let frac = step as f64 / cfg.steps as f64;
        let base = cfg.learning_rate * (0.5 * (1.0 + (std::f64::consts::PI * frac).cos()) + 1e-3);
        let kq = T::of(base * cfg.key_query_lr_scale);
        let lr = T::of(base);
        let t = step as i32;
        let mut ridge = [model.log_ridge];
        match cfg.optimizer {
            Optimizer::Adam => {
                opt[0].step(model.wk.as_mut_slice(), grads.wk.as_slice(), kq, t);
                opt[1].step(model.wq.as_mut_slice(), grads.wq.as_slice(), kq, t);
                opt[2].step(model.wv.as_mut_slice(), grads.wv.as_slice(), lr, t);
                opt[3].step(&mut ridge, &[grads.log_ridge], lr, t);
                opt[4].step(&mut model.b, &grads.b, lr, t);
            }
            Optimizer::Sgd => {
                sgd(model.wk.as_mut_slice(), grads.wk.as_slice(), kq);
                sgd(model.wq.as_mut_slice(), grads.wq.as_slice(), kq);
                sgd(model.wv.as_mut_slice(), grads.wv.as_slice(), lr);
                sgd(&mut ridge, &[grads.log_ridge], lr);
                sgd(&mut model.b, &grads.b, lr);
            }
        }
        model.log_ridge = ridge[0];
    }
    model.trained = true;
    Ok((model, report))
}

/// Mean squared query error over `n` fresh prompts from `source`.
pub fn heldout_error<T: Scalar, M: IclModel<T>, S: PromptSource<T>>(model: &M, source: &S, n: usize, seed: u64) -> Result<f64> {
    let mut rng = stream(seed, streams::TEST);
    let batch: Vec<(Vec<T>, Vec<T>)> = (0..n).map(|_| source.sample(&mut rng)).collect();
    let errs: Vec<Result<f64>> = batch
        .par_iter()
        .map(|(e, y)| {
            let p = model.forward(e)?.value;
            Ok(p.iter().zip(y).map(|(&a, &b)| ((a - b) * (a - b)).f64()).sum())
        })
        .collect();
    let mut s = 0.0;
    for e in errs {
        s += e?;
    }
    Ok(s / n.max(1) as f64)
}
