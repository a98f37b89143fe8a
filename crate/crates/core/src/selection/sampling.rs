use crate::data::PromptSubset;
use crate::error::{GradselError, Result};
use crate::rng::{stream, streams};
use rand::seq::index::sample;
use rand::Rng;

const REDRAWS: usize = 64;

/// `m` uniform random k-subsets in which every demo index appears at least once.
///
/// Lists that leave a demo uncovered are redrawn; if that keeps failing
/// (m·k close to n) the last draw is repaired by swapping uncovered indices
/// in for over-covered ones.
pub fn sample_subsets(n_demo: usize, m: usize, k: usize, seed: u64) -> Result<Vec<PromptSubset>> {
    if k < 1 || k > n_demo {
        return Err(GradselError::InvalidConfig(format!("subset size {k} must lie in [1, {n_demo}]")));
    }
    if m.saturating_mul(k) < n_demo {
        return Err(GradselError::InfeasibleCoverage { m, k, n_demo });
    }
    let mut rng = stream(seed, streams::SUBSETS);
    let mut lists = Vec::new();
    for _ in 0..REDRAWS {
        lists = (0..m).map(|_| sample(&mut rng, n_demo, k).into_vec()).collect::<Vec<_>>();
        let mut count = vec![0usize; n_demo];
        lists.iter().flatten().for_each(|&i| count[i] += 1);
        if count.iter().all(|&c| c > 0) {
            return Ok(lists.into_iter().map(PromptSubset::from_trusted).collect());
        }
    }
    let mut count = vec![0usize; n_demo];
    lists.iter().flatten().for_each(|&i| count[i] += 1);
    for q in 0..n_demo {
        if count[q] > 0 {
            continue;
        }
        let start = rng.random_range(0..m);
        'outer: for off in 0..m {
            let j = (start + off) % m;
            for pos in 0..k {
                let e = lists[j][pos];
                if count[e] >= 2 {
                    lists[j][pos] = q;
                    count[e] -= 1;
                    count[q] = 1;
                    break 'outer;
                }
            }
        }
    }
    debug_assert!(count.iter().all(|&c| c > 0));
    Ok(lists.into_iter().map(PromptSubset::from_trusted).collect())
}

/// `m` independent uniform k-subsets (no coverage requirement).
pub fn random_subsets(n_demo: usize, m: usize, k: usize, seed: u64) -> Result<Vec<PromptSubset>> {
    if k > n_demo {
        return Err(GradselError::InvalidConfig(format!("subset size {k} exceeds n_demo = {n_demo}")));
    }
    let mut rng = stream(seed, streams::SUBSETS);
    Ok((0..m).map(|_| PromptSubset::from_trusted(sample(&mut rng, n_demo, k).into_vec())).collect())
}

/// `m` neighbours of `anchor`, each replacing r ∈ [1, max_swaps] demos in
/// place with demos outside the anchor. Slot positions are preserved, so
/// only the swapped slots differ in embedding space.
pub fn swap_subsets(anchor: &PromptSubset, n_demo: usize, m: usize, max_swaps: usize, seed: u64) -> Result<Vec<PromptSubset>> {
    let k = anchor.len();
    if max_swaps < 1 || max_swaps > k || k + max_swaps > n_demo {
        return Err(GradselError::InvalidConfig(format!(
            "max_swaps = {max_swaps} infeasible for |S0| = {k}, n_demo = {n_demo}"
        )));
    }
    let outside: Vec<usize> = (0..n_demo).filter(|&i| !anchor.contains(i)).collect();
    let mut rng = stream(seed, streams::SUBSETS);
    Ok((0..m)
        .map(|_| {
            let r = rng.random_range(1..=max_swaps);
            let slots = sample(&mut rng, k, r);
            let fresh = sample(&mut rng, outside.len(), r);
            let mut v = anchor.indices().to_vec();
            for (slot, f) in slots.iter().zip(fresh.iter()) {
                v[slot] = outside[f];
            }
            PromptSubset::from_trusted(v)
        })
        .collect())
}
