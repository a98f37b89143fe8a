//! First-order loss estimation around anchor prompts.
//!
//! For each training query the model output and its input gradient are
//! computed once at the anchor φ(S₀, x_i). Any other subset is then scored
//! with `f̂ = f(φ(S₀,x)) + ⟨Pᵀ∇f, Pᵀ(φ(S,x) − φ(S₀,x))⟩`, with no model
//! evaluations. The displacement only touches demonstration slots, so it is
//! the same for every query and is projected once per subset.

use crate::data::{DemoSet, LossKind, PromptSubset, QuerySet};
use crate::embedding::{EmbeddingLayout, EmbeddingVector};
use crate::error::{GradselError, Result};
use crate::linalg::{axpy, dot, norm, Matrix};
use crate::metrics::FlopLedger;
use crate::models::{loss, Counted, IclModel};
use crate::rng::{normal, stream, streams};
use crate::scalar::Scalar;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Random map P (d_emb × d_proj) with N(0, 1/d_proj) entries, or the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection<T> {
    d_emb: usize,
    d_proj: usize,
    seed: u64,
    /// `None` for the identity.
    matrix: Option<Matrix<T>>,
}

pub fn build_projection<T: Scalar>(d_emb: usize, d_proj: usize, seed: u64) -> Result<Projection<T>> {
    if d_proj < 1 || d_emb < 1 {
        return Err(GradselError::InvalidConfig("projection dimensions must be ≥ 1".into()));
    }
    let mut rng = stream(seed, streams::PROJECTION);
    let s = T::of(1.0 / (d_proj as f64).sqrt());
    let m = Matrix::from_fn(d_emb, d_proj, |_, _| normal::<T, _>(&mut rng) * s);
    Ok(Projection { d_emb, d_proj, seed, matrix: Some(m) })
}

impl<T: Scalar> Projection<T> {
    pub fn identity(d_emb: usize) -> Self {
        Self { d_emb, d_proj: d_emb, seed: 0, matrix: None }
    }
    pub fn d_emb(&self) -> usize {
        self.d_emb
    }
    pub fn d_proj(&self) -> usize {
        self.d_proj
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn is_identity(&self) -> bool {
        self.matrix.is_none()
    }

    /// Pᵀu.
    pub fn project(&self, u: &[T]) -> Vec<T> {
        match &self.matrix {
            None => u.to_vec(),
            Some(p) => p.matvec_t(u),
        }
    }

    /// Pᵀu for a sparse u given as (coordinate, value) pairs.
    pub fn project_sparse(&self, u: &[(usize, T)]) -> Vec<T> {
        let mut out = vec![T::zero(); self.d_proj];
        match &self.matrix {
            None => u.iter().for_each(|&(i, v)| out[i] += v),
            Some(p) => u.iter().for_each(|&(i, v)| axpy(v, p.row(i), &mut out)),
        }
        out
    }

    fn same_as(&self, o: &Projection<T>) -> bool {
        self.d_emb == o.d_emb && self.d_proj == o.d_proj && self.seed == o.seed && self.is_identity() == o.is_identity()
    }
}

#[derive(Clone, Debug)]
pub struct AnchorEntry<T> {
    pub embedding: EmbeddingVector<T>,
    pub output: Vec<T>,
    /// d_out × d_proj
    pub grad_proj: Matrix<T>,
    pub y: Vec<T>,
    emb_norm: T,
}

/// Stage-1 precomputation for one anchor subset.
#[derive(Clone, Debug)]
pub struct AnchorCache<T> {
    pub anchor: PromptSubset,
    pub anchor_id: usize,
    pub layout: EmbeddingLayout,
    pub projection: Projection<T>,
    pub entries: Vec<AnchorEntry<T>>,
    /// demo tokens, n_demo × token_dim
    tokens: Matrix<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Estimated { anchors: Vec<usize> },
    Exact,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossEstimate<T> {
    pub subset: PromptSubset,
    pub value: T,
    pub provenance: Provenance,
    /// Mean over queries of ‖φ(S,x) − φ(S₀,x)‖/‖φ(S₀,x)‖ (averaged over anchors).
    pub relative_distance: Option<T>,
}

fn token_table<T: Scalar>(layout: &EmbeddingLayout, demos: &DemoSet<T>) -> Matrix<T> {
    let mut m = Matrix::zeros(demos.len(), layout.token_dim());
    for (i, d) in demos.iter().enumerate() {
        layout.write_token(&d.x, Some(&d.y), m.row_mut(i));
    }
    m
}

fn check_model<T: Scalar, M: IclModel<T> + ?Sized>(model: &M, layout: &EmbeddingLayout) -> Result<()> {
    if model.d_emb() != layout.d_emb() {
        return Err(GradselError::DimensionMismatch { what: "model d_emb", expected: layout.d_emb(), got: model.d_emb() });
    }
    if model.d_out() != layout.d_out {
        return Err(GradselError::DimensionMismatch { what: "model d_out", expected: layout.d_out, got: model.d_out() });
    }
    Ok(())
}

/// Stage 1: one forward and one input-gradient pass per training query.
#[allow(clippy::too_many_arguments)]
pub fn precompute_anchor<T: Scalar, M: IclModel<T> + ?Sized>(
    model: &M,
    layout: &EmbeddingLayout,
    demos: &DemoSet<T>,
    queries: &QuerySet<T>,
    s0: &PromptSubset,
    proj: &Projection<T>,
    anchor_id: usize,
    ledger: &FlopLedger,
) -> Result<AnchorCache<T>> {
    check_model(model, layout)?;
    if proj.d_emb() != layout.d_emb() {
        return Err(GradselError::LayoutMismatch);
    }
    let counted = Counted::new(model, ledger);
    let entries: Vec<Result<AnchorEntry<T>>> = queries
        .queries
        .par_iter()
        .map(|q| {
            let embedding = layout.embed(demos, s0, &q.x)?;
            let (out, grad) = counted.forward_with_gradient(&embedding)?;
            let mut grad_proj = Matrix::zeros(layout.d_out, proj.d_proj());
            for o in 0..layout.d_out {
                grad_proj.row_mut(o).copy_from_slice(&proj.project(grad.rows.row(o)));
            }
            let emb_norm = norm(&embedding);
            Ok(AnchorEntry { embedding, output: out.value, grad_proj, y: q.y.clone(), emb_norm })
        })
        .collect();
    Ok(AnchorCache {
        anchor: s0.clone(),
        anchor_id,
        layout: *layout,
        projection: proj.clone(),
        entries: entries.into_iter().collect::<Result<_>>()?,
        tokens: token_table(layout, demos),
    })
}

impl<T: Scalar> AnchorCache<T> {
    /// h(S₀) from the cached outputs.
    pub fn anchor_loss(&self, kind: LossKind) -> Result<T> {
        let mut s = T::zero();
        for e in &self.entries {
            s += loss(kind, &e.output, &e.y)?;
        }
        Ok(s / T::of(self.entries.len() as f64))
    }

    fn check_subset(&self, s: &PromptSubset) -> Result<()> {
        if s.len() > self.layout.k_max {
            return Err(GradselError::OversizeSubset { size: s.len(), k_max: self.layout.k_max });
        }
        if let Some(&i) = s.indices().iter().find(|&&i| i >= self.tokens.rows()) {
            return Err(GradselError::InvalidSubset(format!("index {i} out of range")));
        }
        Ok(())
    }

    /// φ(S,x) − φ(S₀,x) as sparse (coordinate, value) pairs.
    fn displacement(&self, s: &PromptSubset) -> Vec<(usize, T)> {
        let mut out = Vec::new();
        let (a, b) = (s.indices(), self.anchor.indices());
        for j in self.layout.differing_slots(s, &self.anchor) {
            let base = self.layout.slot(j).start;
            let ta = a.get(j).map(|&i| self.tokens.row(i));
            let tb = b.get(j).map(|&i| self.tokens.row(i));
            for c in 0..self.layout.token_dim() {
                let va = ta.map_or(T::zero(), |t| t[c]);
                let vb = tb.map_or(T::zero(), |t| t[c]);
                let d = va - vb;
                if d != T::zero() {
                    out.push((base + c, d));
                }
            }
        }
        out
    }

    /// ĥ(S) and the mean relative distance, plus the number of vector ops used.
    fn estimate_one(&self, kind: LossKind, s: &PromptSubset) -> Result<(T, T, u64)> {
        self.check_subset(s)?;
        if s.set_eq(&self.anchor) {
            return Ok((self.anchor_loss(kind)?, T::zero(), 0));
        }
        let delta = self.displacement(s);
        let dnorm = delta.iter().map(|&(_, v)| v * v).sum::<T>().sqrt();
        let d_out = self.layout.d_out;
        let n = self.entries.len();
        let mut ops = 0u64;
        let dense = if self.projection.is_identity() {
            None
        } else {
            ops += (delta.len() * self.projection.d_proj()) as u64;
            Some(self.projection.project_sparse(&delta))
        };
        let mut total = T::zero();
        let mut dist = T::zero();
        let mut fhat = vec![T::zero(); d_out];
        for e in &self.entries {
            for o in 0..d_out {
                let g = e.grad_proj.row(o);
                let lin = match &dense {
                    Some(dt) => dot(g, dt),
                    None => delta.iter().map(|&(i, v)| g[i] * v).sum(),
                };
                fhat[o] = e.output[o] + lin;
            }
            total += loss(kind, &fhat, &e.y)?;
            if e.emb_norm > T::zero() {
                dist += dnorm / e.emb_norm;
            }
        }
        ops += (n * d_out * dense.as_ref().map_or(delta.len(), |d| d.len())) as u64;
        let nn = T::of(n as f64);
        Ok((total / nn, dist / nn, ops))
    }
}

/// Stage 2: estimate ĥ for every subset from a single anchor. Makes no model calls.
pub fn estimate_losses<T: Scalar>(
    cache: &AnchorCache<T>,
    kind: LossKind,
    subsets: &[PromptSubset],
    ledger: &FlopLedger,
) -> Result<Vec<LossEstimate<T>>> {
    multi_anchor_estimate(std::slice::from_ref(cache), kind, subsets, ledger)
}

/// Mean of the single-anchor estimates over α anchors.
pub fn multi_anchor_estimate<T: Scalar>(
    caches: &[AnchorCache<T>],
    kind: LossKind,
    subsets: &[PromptSubset],
    ledger: &FlopLedger,
) -> Result<Vec<LossEstimate<T>>> {
    let first = caches.first().ok_or(GradselError::EmptyAnchors)?;
    for c in caches {
        if c.layout != first.layout || !c.projection.same_as(&first.projection) || c.entries.len() != first.entries.len() {
            return Err(GradselError::LayoutMismatch);
        }
    }
    let anchors: Vec<usize> = caches.iter().map(|c| c.anchor_id).collect();
    let alpha = T::of(caches.len() as f64);
    let out: Vec<Result<(LossEstimate<T>, u64)>> = subsets
        .par_iter()
        .map(|s| {
            let (mut v, mut d, mut ops) = (T::zero(), T::zero(), 0);
            for c in caches {
                let (a, b, o) = c.estimate_one(kind, s)?;
                v += a;
                d += b;
                ops += o;
            }
            let est = LossEstimate {
                subset: s.clone(),
                value: if caches.len() == 1 { v } else { v / alpha },
                provenance: Provenance::Estimated { anchors: anchors.clone() },
                relative_distance: Some(d / alpha),
            };
            Ok((est, ops))
        })
        .collect();
    let mut res = Vec::with_capacity(out.len());
    let mut ops = 0;
    for r in out {
        let (e, o) = r?;
        ops += o;
        res.push(e);
    }
    ledger.add_vector_ops(ops);
    Ok(res)
}

/// h(S) by full inference: one forward pass per training query.
pub fn exact_loss<T: Scalar, M: IclModel<T> + ?Sized>(
    model: &M,
    layout: &EmbeddingLayout,
    demos: &DemoSet<T>,
    queries: &QuerySet<T>,
    s: &PromptSubset,
    kind: LossKind,
    ledger: &FlopLedger,
) -> Result<LossEstimate<T>> {
    check_model(model, layout)?;
    let counted = Counted::new(model, ledger);
    let per: Vec<Result<T>> = queries
        .queries
        .par_iter()
        .map(|q| {
            let e = layout.embed(demos, s, &q.x)?;
            loss(kind, &counted.forward(&e)?.value, &q.y)
        })
        .collect();
    let mut total = T::zero();
    for l in per {
        total += l?;
    }
    Ok(LossEstimate {
        subset: s.clone(),
        value: total / T::of(queries.len() as f64),
        provenance: Provenance::Exact,
        relative_distance: None,
    })
}

/// [`exact_loss`] for many subsets (parallel over subsets).
pub fn exact_losses<T: Scalar, M: IclModel<T> + ?Sized>(
    model: &M,
    layout: &EmbeddingLayout,
    demos: &DemoSet<T>,
    queries: &QuerySet<T>,
    subsets: &[PromptSubset],
    kind: LossKind,
    ledger: &FlopLedger,
) -> Result<Vec<LossEstimate<T>>> {
    subsets.par_iter().map(|s| exact_loss(model, layout, demos, queries, s, kind, ledger)).collect()
}

/// Mean relative distance of `s` from `s0` over the training queries, computed directly.
pub fn mean_relative_distance<T: Scalar>(
    layout: &EmbeddingLayout,
    demos: &DemoSet<T>,
    queries: &QuerySet<T>,
    s: &PromptSubset,
    s0: &PromptSubset,
) -> Result<T> {
    let mut acc = T::zero();
    for q in queries.iter() {
        let e = layout.embed(demos, s, &q.x)?;
        let e0 = layout.embed(demos, s0, &q.x)?;
        acc += crate::embedding::relative_distance(&e, &e0)?;
    }
    Ok(acc / T::of(queries.len() as f64))
}
