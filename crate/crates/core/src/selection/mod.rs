//! Demonstration subset selection: gradient-estimated random ensemble,
//! forward selection and cross-entropy selection, their exact-inference
//! oracles, similarity/random baselines, pseudo-labelling and per-query
//! selection.

mod baselines;
mod ensemble;
mod forward;
mod sampling;

pub use baselines::{nearest_queries, per_query_select, prefilter, pseudo_label, select_random, select_topk};
pub use ensemble::{oracle_random_ensemble, pick_anchors, scores_from_estimates, select_random_ensemble, select_threshold, lowest_k};
pub use forward::{oracle_cross_entropy, oracle_forward_selection, select_cross_entropy, select_forward};
pub use sampling::{random_subsets, sample_subsets, swap_subsets};

use crate::data::{DemoSet, LossKind, PromptSubset, QuerySet, SelectionConfig};
use crate::embedding::EmbeddingLayout;
use crate::error::{GradselError, Result};
use crate::gradest::{build_projection, LossEstimate, Projection};
use crate::metrics::LedgerSnapshot;
use crate::models::IclModel;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// Everything a selector needs besides its configuration.
pub struct Problem<'a, T, M: ?Sized> {
    pub model: &'a M,
    pub layout: EmbeddingLayout,
    pub demos: &'a DemoSet<T>,
    pub queries: &'a QuerySet<T>,
    pub loss: LossKind,
}

impl<T, M: ?Sized> Clone for Problem<'_, T, M> {
    fn clone(&self) -> Self {
        Self { model: self.model, layout: self.layout, demos: self.demos, queries: self.queries, loss: self.loss }
    }
}

impl<'a, T: Scalar, M: IclModel<T> + ?Sized> Problem<'a, T, M> {
    pub fn new(model: &'a M, layout: EmbeddingLayout, demos: &'a DemoSet<T>, queries: &'a QuerySet<T>, loss: LossKind) -> Self {
        Self { model, layout, demos, queries, loss }
    }

    pub fn n_demo(&self) -> usize {
        self.demos.len()
    }

    pub fn with_queries<'b>(&self, queries: &'b QuerySet<T>) -> Problem<'b, T, M>
    where
        'a: 'b,
    {
        Problem { model: self.model, layout: self.layout, demos: self.demos, queries, loss: self.loss }
    }

    fn check(&self, cfg: &SelectionConfig) -> Result<()> {
        cfg.validate(self.n_demo())?;
        if cfg.k > self.layout.k_max {
            return Err(GradselError::OversizeSubset { size: cfg.k, k_max: self.layout.k_max });
        }
        Ok(())
    }

    fn projection(&self, cfg: &SelectionConfig) -> Result<Projection<T>> {
        if cfg.identity_projection {
            Ok(Projection::identity(self.layout.d_emb()))
        } else {
            build_projection(self.layout.d_emb(), cfg.d_proj, cfg.seed)
        }
    }
}

/// s_q: mean estimated loss of the sampled subsets containing q, averaged over anchors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluenceScores {
    pub s: Vec<f64>,
    pub coverage: Vec<usize>,
    pub alpha: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    pub chosen: usize,
    pub loss: f64,
    pub estimated: bool,
    pub anchor_extension: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult<T> {
    pub chosen: PromptSubset,
    pub scores: Option<InfluenceScores>,
    pub ledger: LedgerSnapshot,
    pub trace: Vec<StepTrace>,
    /// Per-subset losses behind the scores (ensemble selectors).
    pub estimates: Vec<LossEstimate<T>>,
    /// Indices (into `estimates`) of the anchor subsets.
    pub anchors: Vec<usize>,
}

impl<T> SelectionResult<T> {
    fn simple(chosen: PromptSubset) -> Self {
        Self { chosen, scores: None, ledger: LedgerSnapshot::default(), trace: Vec::new(), estimates: Vec::new(), anchors: Vec::new() }
    }
}

/// Every selector by name, for drivers that pick one at run time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    GeRe,
    GeFs,
    GeCe,
    OracleRe,
    OracleFs,
    OracleCe,
    TopK,
    Random,
}

impl Method {
    pub const ALL: [Method; 8] =
        [Method::GeRe, Method::GeFs, Method::GeCe, Method::OracleRe, Method::OracleFs, Method::OracleCe, Method::TopK, Method::Random];

    pub fn name(self) -> &'static str {
        match self {
            Method::GeRe => "ge-re",
            Method::GeFs => "ge-fs",
            Method::GeCe => "ge-ce",
            Method::OracleRe => "oracle-re",
            Method::OracleFs => "oracle-fs",
            Method::OracleCe => "oracle-ce",
            Method::TopK => "top-k",
            Method::Random => "random",
        }
    }

    pub fn run<T: Scalar, M: IclModel<T> + ?Sized>(self, problem: &Problem<'_, T, M>, cfg: &SelectionConfig) -> Result<SelectionResult<T>> {
        match self {
            Method::GeRe => select_random_ensemble(problem, cfg),
            Method::GeFs => select_forward(problem, cfg),
            Method::GeCe => select_cross_entropy(problem, cfg),
            Method::OracleRe => oracle_random_ensemble(problem, cfg),
            Method::OracleFs => oracle_forward_selection(problem, cfg),
            Method::OracleCe => oracle_cross_entropy(problem, cfg),
            Method::TopK => {
                problem.check(cfg)?;
                select_topk(problem.demos, problem.queries, cfg.k)
            }
            Method::Random => {
                problem.check(cfg)?;
                select_random(problem.n_demo(), cfg.k, cfg.seed)
            }
        }
    }
}

impl std::str::FromStr for Method {
    type Err = GradselError;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| GradselError::InvalidConfig(format!("unknown method `{s}`")))
    }
}

/// Indices sorted by ascending value, ties broken by lower index.
pub(crate) fn argsort(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    idx
}
