use super::{argsort, select_random_ensemble, Problem, SelectionResult};
use crate::data::{DemoExample, DemoSet, LossKind, PromptSubset, QuerySet, SelectionConfig};
use crate::embedding::EmbeddingLayout;
use crate::error::{GradselError, Result};
use crate::linalg::{cosine, mean_rows};
use crate::models::IclModel;
use crate::rng::{stream, streams};
use crate::scalar::Scalar;
use rand::seq::index::sample;

fn mean_query_x<T: Scalar>(queries: &QuerySet<T>) -> Vec<T> {
    mean_rows(&queries.iter().map(|q| q.x.as_slice()).collect::<Vec<_>>())
}

/// The `k` demos whose inputs have the highest cosine similarity to the
/// mean training-query input (ties: lower index).
pub fn prefilter<T: Scalar>(demos: &DemoSet<T>, queries: &QuerySet<T>, k: usize) -> Vec<usize> {
    let center = mean_query_x(queries);
    let neg: Vec<f64> = demos.iter().map(|d| -cosine(&d.x, &center).f64()).collect();
    argsort(&neg).into_iter().take(k).collect()
}

/// Top-k similarity baseline.
pub fn select_topk<T: Scalar>(demos: &DemoSet<T>, queries: &QuerySet<T>, k: usize) -> Result<SelectionResult<T>> {
    if k < 1 || k > demos.len() {
        return Err(GradselError::InvalidConfig(format!("k = {k} out of range")));
    }
    Ok(SelectionResult::simple(PromptSubset::from_trusted(prefilter(demos, queries, k))))
}

/// Uniform random k-subset.
pub fn select_random<T>(n_demo: usize, k: usize, seed: u64) -> Result<SelectionResult<T>> {
    if k < 1 || k > n_demo {
        return Err(GradselError::InvalidConfig(format!("k = {k} out of range")));
    }
    let idx = sample(&mut stream(seed, streams::SUBSETS), n_demo, k).into_vec();
    Ok(SelectionResult::simple(PromptSubset::from_trusted(idx)))
}

/// Label unlabeled demonstration inputs with the model itself, prompted by
/// the `k` labeled queries most similar to the mean demo input.
pub fn pseudo_label<T: Scalar, M: IclModel<T> + ?Sized>(
    model: &M,
    layout: &EmbeddingLayout,
    inputs: &[Vec<T>],
    queries: &QuerySet<T>,
    k: usize,
    kind: LossKind,
) -> Result<DemoSet<T>> {
    if k < 1 || k > queries.len() || k > layout.k_max {
        return Err(GradselError::InvalidConfig(format!("pseudo-label prompt size {k} out of range")));
    }
    let center = mean_rows(&inputs.iter().map(|x| x.as_slice()).collect::<Vec<_>>());
    let neg: Vec<f64> = queries.iter().map(|q| -cosine(&q.x, &center).f64()).collect();
    let prompt = PromptSubset::from_trusted(argsort(&neg).into_iter().take(k).collect());
    let labeled = DemoSet::new(queries.queries.clone())?;
    let demos = inputs
        .iter()
        .map(|x| {
            let e = layout.embed(&labeled, &prompt, x)?;
            let out = model.forward(&e)?.value;
            let y = match kind {
                LossKind::SquaredError => out,
                LossKind::Logistic => out.iter().map(|&v| if v > T::zero() { T::one() } else { T::zero() }).collect(),
            };
            Ok(DemoExample::new(x.clone(), y))
        })
        .collect::<Result<Vec<_>>>()?;
    DemoSet::new(demos)
}

/// The `pool` training queries nearest (Euclidean, in input space) to
/// `x`, returned in their original order.
pub fn nearest_queries<T: Scalar>(queries: &QuerySet<T>, x: &[T], pool: usize) -> Result<QuerySet<T>> {
    if pool < 1 || pool > queries.len() {
        return Err(GradselError::InvalidConfig(format!("pool size {pool} out of range")));
    }
    let dist: Vec<f64> = queries.iter().map(|q| q.x.iter().zip(x).map(|(&a, &b)| ((a - b) * (a - b)).f64()).sum()).collect();
    let mut keep: Vec<usize> = argsort(&dist).into_iter().take(pool).collect();
    keep.sort_unstable();
    QuerySet::new(keep.into_iter().map(|i| queries.get(i).clone()).collect())
}

/// Random-ensemble selection targeted at one test input, using only its
/// `pool` nearest training queries.
pub fn per_query_select<T: Scalar, M: IclModel<T> + ?Sized>(
    problem: &Problem<'_, T, M>,
    test_x: &[T],
    pool: usize,
    cfg: &SelectionConfig,
) -> Result<SelectionResult<T>> {
    let local = nearest_queries(problem.queries, test_x, pool)?;
    select_random_ensemble(&problem.with_queries(&local), cfg)
}
