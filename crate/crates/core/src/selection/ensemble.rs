use super::{argsort, sample_subsets, InfluenceScores, Problem, SelectionResult};
use crate::data::{AnchorPolicy, PromptSubset, SelectionConfig};
use crate::error::{GradselError, Result};
use crate::gradest::{exact_losses, multi_anchor_estimate, precompute_anchor, LossEstimate};
use crate::linalg::axpy;
use crate::metrics::FlopLedger;
use crate::models::IclModel;
use crate::rng::{stream, streams};
use crate::scalar::Scalar;
use rand::seq::index::sample;

/// Score each demo by the mean loss of the subsets that contain it.
pub fn scores_from_estimates<T: Scalar>(n_demo: usize, estimates: &[LossEstimate<T>], alpha: usize) -> InfluenceScores {
    let mut sum = vec![0.0; n_demo];
    let mut coverage = vec![0usize; n_demo];
    for e in estimates {
        let v = e.value.f64();
        for &q in e.subset.indices() {
            sum[q] += v;
            coverage[q] += 1;
        }
    }
    let s = sum.iter().zip(&coverage).map(|(&a, &c)| if c > 0 { a / c as f64 } else { f64::INFINITY }).collect();
    InfluenceScores { s, coverage, alpha }
}

/// The k lowest-scoring demos (ties: lower index first).
pub fn lowest_k(scores: &[f64], k: usize) -> PromptSubset {
    PromptSubset::from_trusted(argsort(scores).into_iter().take(k).collect())
}

/// Every demo with s_q ≤ λ, in ascending score order.
pub fn select_threshold(scores: &[f64], lambda: f64) -> PromptSubset {
    PromptSubset::from_trusted(argsort(scores).into_iter().take_while(|&i| scores[i] <= lambda).collect())
}

fn choose(scores: &InfluenceScores, cfg: &SelectionConfig) -> PromptSubset {
    match cfg.score_threshold {
        Some(l) => select_threshold(&scores.s, l),
        None => lowest_k(&scores.s, cfg.k),
    }
}

/// Indices of the α anchor subsets among `subsets`.
pub fn pick_anchors<T: Scalar, M: IclModel<T> + ?Sized>(
    problem: &Problem<'_, T, M>,
    subsets: &[PromptSubset],
    cfg: &SelectionConfig,
) -> Result<Vec<usize>> {
    if cfg.alpha > subsets.len() {
        return Err(GradselError::InvalidConfig("more anchors than subsets".into()));
    }
    Ok(match cfg.anchor_policy {
        AnchorPolicy::Random => sample(&mut stream(cfg.seed, streams::ANCHORS), subsets.len(), cfg.alpha).into_vec(),
        AnchorPolicy::MeanEmbedding => {
            let l = problem.layout;
            let tokens: Vec<Vec<T>> = problem.demos.iter().map(|d| l.demo_token(d)).collect();
            let mut center = vec![T::zero(); l.token_dim()];
            tokens.iter().for_each(|t| axpy(T::one(), t, &mut center));
            let nd = T::of(tokens.len() as f64);
            center.iter_mut().for_each(|v| *v /= nd);
            let dist: Vec<f64> = subsets
                .iter()
                .map(|s| {
                    let mut m = vec![T::zero(); l.token_dim()];
                    s.indices().iter().for_each(|&i| axpy(T::one(), &tokens[i], &mut m));
                    let k = T::of(s.len() as f64);
                    m.iter().zip(&center).map(|(&a, &c)| ((a / k - c) * (a / k - c)).f64()).sum()
                })
                .collect();
            argsort(&dist).into_iter().take(cfg.alpha).collect()
        }
    })
}

/// Random-ensemble selection with first-order estimated subset losses.
/// The α anchor caches are the only model evaluations.
pub fn select_random_ensemble<T: Scalar, M: IclModel<T> + ?Sized>(problem: &Problem<'_, T, M>, cfg: &SelectionConfig) -> Result<SelectionResult<T>> {
    problem.check(cfg)?;
    let n = problem.n_demo();
    let ledger = FlopLedger::new();
    let subsets = sample_subsets(n, cfg.m, cfg.k, cfg.seed)?;
    let anchors = pick_anchors(problem, &subsets, cfg)?;
    let proj = problem.projection(cfg)?;
    let caches = anchors
        .iter()
        .map(|&a| precompute_anchor(problem.model, &problem.layout, problem.demos, problem.queries, &subsets[a], &proj, a, &ledger))
        .collect::<Result<Vec<_>>>()?;
    let estimates = multi_anchor_estimate(&caches, problem.loss, &subsets, &ledger)?;
    let scores = scores_from_estimates(n, &estimates, cfg.alpha);
    Ok(SelectionResult {
        chosen: choose(&scores, cfg),
        scores: Some(scores),
        ledger: ledger.snapshot(),
        trace: Vec::new(),
        estimates,
        anchors,
    })
}

/// Same control flow with every subset loss computed by full inference.
pub fn oracle_random_ensemble<T: Scalar, M: IclModel<T> + ?Sized>(problem: &Problem<'_, T, M>, cfg: &SelectionConfig) -> Result<SelectionResult<T>> {
    problem.check(cfg)?;
    let n = problem.n_demo();
    let ledger = FlopLedger::new();
    let subsets = sample_subsets(n, cfg.m, cfg.k, cfg.seed)?;
    let anchors = pick_anchors(problem, &subsets, cfg)?;
    let estimates = exact_losses(problem.model, &problem.layout, problem.demos, problem.queries, &subsets, problem.loss, &ledger)?;
    let scores = scores_from_estimates(n, &estimates, cfg.alpha);
    Ok(SelectionResult {
        chosen: choose(&scores, cfg),
        scores: Some(scores),
        ledger: ledger.snapshot(),
        trace: Vec::new(),
        estimates,
        anchors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradest::Provenance;

    fn est(ix: &[usize], v: f64) -> LossEstimate<f64> {
        LossEstimate { subset: PromptSubset::from_trusted(ix.to_vec()), value: v, provenance: Provenance::Exact, relative_distance: None }
    }

    #[test]
    fn hand_computed_scores() {
        // demos 1,2,3 of the worked example are indices 0,1,2 here
        let e = vec![est(&[0, 1], 1.0), est(&[1, 2], 2.0), est(&[0, 2], 3.0)];
        let s = scores_from_estimates(3, &e, 1);
        assert_eq!(s.s, vec![2.0, 1.5, 2.5]);
        assert_eq!(s.coverage, vec![2, 2, 2]);
        assert_eq!(lowest_k(&s.s, 2).indices(), &[1, 0]);
        assert_eq!(select_threshold(&s.s, 2.0).indices(), &[1, 0]);
    }

    #[test]
    fn ties_prefer_lower_index_and_shift_is_invariant() {
        let s = [1.0, 0.5, 0.5, 2.0];
        assert_eq!(lowest_k(&s, 2).indices(), &[1, 2]);
        let shifted: Vec<f64> = s.iter().map(|v| v + 7.25).collect();
        assert_eq!(lowest_k(&shifted, 3), lowest_k(&s, 3));
    }
}
