//! Hessian-trace probe: tr ∇²f(x) ≈ (2/σ²)·E[f(x+U) − f(x)], U ~ N(0, σ²I).
//!
//! Samples are antithetic — each U is paired with −U — which leaves the
//! expectation unchanged but cancels the first-order term, so the estimator
//! does not need σ⁻² times the gradient noise to average out.

use crate::data::{DemoSet, LossKind, PromptSubset, QuerySet};
use crate::embedding::EmbeddingLayout;
use crate::error::{GradselError, Result};
use crate::gradest::exact_loss;
use crate::metrics::FlopLedger;
use crate::models::{loss, IclModel};
use crate::rng::{normal, stream, streams};
use crate::scalar::Scalar;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessianProbeConfig {
    pub sigma: f64,
    pub n_samples: usize,
    pub seed: u64,
    #[serde(default = "yes")]
    pub antithetic: bool,
}

fn yes() -> bool {
    true
}

impl HessianProbeConfig {
    pub fn new(sigma: f64, n_samples: usize, seed: u64) -> Result<Self> {
        let c = Self { sigma, n_samples, seed, antithetic: true };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(GradselError::InvalidConfig("sigma must be > 0".into()));
        }
        if self.n_samples < 1 {
            return Err(GradselError::InvalidConfig("n_samples must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessianEstimate {
    pub trace: f64,
    pub std_err: f64,
}

/// Monte Carlo trace of the Hessian of `f` at `x`.
pub fn hessian_trace<T: Scalar, F>(f: F, x: &[T], cfg: &HessianProbeConfig) -> Result<HessianEstimate>
where
    F: Fn(&[T]) -> Result<T> + Sync,
{
    cfg.validate()?;
    let mut rng = stream(cfg.seed, streams::PROBE);
    let d = x.len();
    let noise: Vec<Vec<T>> = (0..cfg.n_samples)
        .map(|_| (0..d).map(|_| normal::<T, _>(&mut rng) * T::of(cfg.sigma)).collect())
        .collect();
    let f0 = f(x)?.f64();
    let shifted = |u: &[T], sign: T| -> Vec<T> { x.iter().zip(u).map(|(&a, &b)| a + sign * b).collect() };
    let samples: Vec<Result<f64>> = noise
        .par_iter()
        .map(|u| {
            let plus = f(&shifted(u, T::one()))?.f64();
            if cfg.antithetic {
                let minus = f(&shifted(u, -T::one()))?.f64();
                Ok(0.5 * (plus + minus) - f0)
            } else {
                Ok(plus - f0)
            }
        })
        .collect();
    let v: Vec<f64> = samples.into_iter().collect::<Result<_>>()?;
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let scale = 2.0 / (cfg.sigma * cfg.sigma);
    Ok(HessianEstimate { trace: scale * mean, std_err: scale * (var / n).sqrt() })
}

/// Hessian trace of the mean query loss as a function of a perturbation
/// added to the query-slot coordinates of every prompt.
#[allow(clippy::too_many_arguments)]
pub fn query_loss_trace<T: Scalar, M: IclModel<T> + ?Sized>(
    model: &M,
    layout: &EmbeddingLayout,
    demos: &DemoSet<T>,
    s: &PromptSubset,
    queries: &QuerySet<T>,
    kind: LossKind,
    cfg: &HessianProbeConfig,
) -> Result<HessianEstimate> {
    let embs: Vec<Vec<T>> = queries.iter().map(|q| layout.embed(demos, s, &q.x).map(|e| e.0)).collect::<Result<_>>()?;
    let qs = layout.query_slot();
    let f = |u: &[T]| -> Result<T> {
        let mut total = T::zero();
        let mut e = vec![T::zero(); layout.d_emb()];
        for (emb, q) in embs.iter().zip(queries.iter()) {
            e.copy_from_slice(emb);
            for (c, &du) in e[qs.clone()].iter_mut().zip(u) {
                *c += du;
            }
            total += loss(kind, &model.forward(&e)?.value, &q.y)?;
        }
        Ok(total / T::of(queries.len() as f64))
    };
    hessian_trace(f, &vec![T::zero(); layout.token_dim()], cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpnessRow {
    pub method: String,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_trace: HessianEstimate,
    pub test_trace: HessianEstimate,
}

/// Loss and query-loss Hessian trace on train and test queries for each selection.
#[allow(clippy::too_many_arguments)]
pub fn sharpness_report<T: Scalar, M: IclModel<T> + ?Sized>(
    model: &M,
    layout: &EmbeddingLayout,
    demos: &DemoSet<T>,
    selections: &[(String, PromptSubset)],
    train: &QuerySet<T>,
    test: &QuerySet<T>,
    kind: LossKind,
    cfg: &HessianProbeConfig,
) -> Result<Vec<SharpnessRow>> {
    let ledger = FlopLedger::new();
    selections
        .iter()
        .map(|(method, s)| {
            Ok(SharpnessRow {
                method: method.clone(),
                train_loss: exact_loss(model, layout, demos, train, s, kind, &ledger)?.value.f64(),
                test_loss: exact_loss(model, layout, demos, test, s, kind, &ledger)?.value.f64(),
                train_trace: query_loss_trace(model, layout, demos, s, train, kind, cfg)?,
                test_trace: query_loss_trace(model, layout, demos, s, test, kind, cfg)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_quadratic_has_trace_d() {
        let cfg = HessianProbeConfig::new(1e-2, 10_000, 1).unwrap();
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.3 - 1.0).collect();
        let h = hessian_trace(|v: &[f64]| Ok(0.5 * v.iter().map(|a| a * a).sum::<f64>()), &x, &cfg).unwrap();
        assert!((h.trace - 10.0).abs() < 0.5, "{h:?}");
    }

    #[test]
    fn affine_function_has_zero_trace() {
        let cfg = HessianProbeConfig::new(1e-2, 2000, 2).unwrap();
        let h = hessian_trace(|v: &[f64]| Ok(3.0 * v[0] - v[1] + 2.0), &[1.0, 2.0], &cfg).unwrap();
        assert!(h.trace.abs() <= 3.0 * h.std_err + 1e-6, "{h:?}");
    }

    #[test]
    fn rejects_bad_config() {
        assert!(HessianProbeConfig::new(0.0, 10, 0).is_err());
        assert!(HessianProbeConfig::new(0.1, 0, 0).is_err());
    }
}
