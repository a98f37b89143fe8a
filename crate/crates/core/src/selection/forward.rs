use super::{argsort, prefilter, Problem, SelectionResult, StepTrace};
use crate::data::{PromptSubset, SelectionConfig};
use crate::error::Result;
use crate::gradest::{estimate_losses, exact_losses, precompute_anchor, LossEstimate};
use crate::metrics::FlopLedger;
use crate::models::IclModel;
use crate::rng::{stream, streams};
use crate::scalar::Scalar;
use rand::Rng;

/// First minimum (lowest position wins ties).
fn argmin<T: Scalar>(losses: &[LossEstimate<T>]) -> usize {
    let mut best = 0;
    for (i, l) in losses.iter().enumerate() {
        if l.value < losses[best].value {
            best = i;
        }
    }
    best
}

fn greedy<T: Scalar, M: IclModel<T> + ?Sized>(problem: &Problem<'_, T, M>, cfg: &SelectionConfig, t_start: usize) -> Result<SelectionResult<T>> {
    problem.check(cfg)?;
    let ledger = FlopLedger::new();
    let mut rng = stream(cfg.seed, streams::ANCHORS);
    let proj = problem.projection(cfg)?;
    let mut s = PromptSubset::empty();
    let mut trace = Vec::with_capacity(cfg.k);
    for step in 0..cfg.k {
        let remaining: Vec<usize> = (0..problem.n_demo()).filter(|&q| !s.contains(q)).collect();
        let candidates: Vec<PromptSubset> = remaining.iter().map(|&q| s.with(q)).collect();
        let estimated = step + 1 >= t_start;
        let (losses, anchor_extension) = if estimated {
            let a = remaining[rng.random_range(0..remaining.len())];
            let cache = precompute_anchor(problem.model, &problem.layout, problem.demos, problem.queries, &s.with(a), &proj, step, &ledger)?;
            (estimate_losses(&cache, problem.loss, &candidates, &ledger)?, Some(a))
        } else {
            (exact_losses(problem.model, &problem.layout, problem.demos, problem.queries, &candidates, problem.loss, &ledger)?, None)
        };
        let best = argmin(&losses);
        trace.push(StepTrace { step, chosen: remaining[best], loss: losses[best].value.f64(), estimated, anchor_extension });
        s = s.with(remaining[best]);
    }
    Ok(SelectionResult { chosen: s, scores: None, ledger: ledger.snapshot(), trace, estimates: Vec::new(), anchors: Vec::new() })
}

/// Greedy forward selection. Steps whose candidate prompts have fewer than
/// `t_start` demonstrations are scored exactly; later steps extend the current
/// subset by one random demonstration, use that as the anchor, and estimate
/// every other extension from it.
pub fn select_forward<T: Scalar, M: IclModel<T> + ?Sized>(problem: &Problem<'_, T, M>, cfg: &SelectionConfig) -> Result<SelectionResult<T>> {
    greedy(problem, cfg, cfg.t_start)
}

/// Exact greedy forward selection.
pub fn oracle_forward_selection<T: Scalar, M: IclModel<T> + ?Sized>(problem: &Problem<'_, T, M>, cfg: &SelectionConfig) -> Result<SelectionResult<T>> {
    greedy(problem, cfg, usize::MAX)
}

fn single_demo<T: Scalar, M: IclModel<T> + ?Sized>(problem: &Problem<'_, T, M>, cfg: &SelectionConfig, estimate: bool) -> Result<SelectionResult<T>> {
    problem.check(cfg)?;
    let ledger = FlopLedger::new();
    let pool = prefilter(problem.demos, problem.queries, cfg.k_prefilter);
    let singles: Vec<PromptSubset> = pool.iter().map(|&q| PromptSubset::from_trusted(vec![q])).collect();
    let (losses, anchors) = if estimate {
        let mut rng = stream(cfg.seed, streams::ANCHORS);
        let a = rng.random_range(0..pool.len());
        let proj = problem.projection(cfg)?;
        let cache = precompute_anchor(problem.model, &problem.layout, problem.demos, problem.queries, &singles[a], &proj, a, &ledger)?;
        (estimate_losses(&cache, problem.loss, &singles, &ledger)?, vec![a])
    } else {
        (exact_losses(problem.model, &problem.layout, problem.demos, problem.queries, &singles, problem.loss, &ledger)?, Vec::new())
    };
    let values: Vec<f64> = losses.iter().map(|l| l.value.f64()).collect();
    let chosen = argsort(&values).into_iter().take(cfg.k).map(|i| pool[i]).collect();
    Ok(SelectionResult {
        chosen: PromptSubset::from_trusted(chosen),
        scores: None,
        ledger: ledger.snapshot(),
        trace: Vec::new(),
        estimates: losses,
        anchors,
    })
}

/// Cross-entropy selection: restrict to the `K_prefilter` demos most similar
/// to the mean training query, estimate each single-demonstration prompt's
/// loss from one random single-demonstration anchor, keep the k lowest.
pub fn select_cross_entropy<T: Scalar, M: IclModel<T> + ?Sized>(problem: &Problem<'_, T, M>, cfg: &SelectionConfig) -> Result<SelectionResult<T>> {
    single_demo(problem, cfg, true)
}

/// Cross-entropy selection with exact single-demonstration losses.
pub fn oracle_cross_entropy<T: Scalar, M: IclModel<T> + ?Sized>(problem: &Problem<'_, T, M>, cfg: &SelectionConfig) -> Result<SelectionResult<T>> {
    single_demo(problem, cfg, false)
}
