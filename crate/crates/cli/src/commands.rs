//! One function per subcommand. Each is a pure function of the effective
//! config (including the seed) to output bytes.

use crate::config::{ExperimentConfig, ModelKind, SubsetMode};
use crate::io::{to_json, write_atomic, Failure};
use gradsel::data::DatasetFile;
use gradsel::gradest::{build_projection, estimate_losses, exact_losses, precompute_anchor, Projection, Provenance};
use gradsel::metrics::{
    aggregate_relative_error, fmt_f64, rss_scores, sharpness_report, speedup, ApproxErrorRecord, FlopLedger,
    HessianProbeConfig, LedgerSnapshot, Table,
};
use gradsel::models::{train_icl_model, AffineModel, AnyModel, IclModel, LinearAttentionICL, ModelFile, TrainingConfig, TwoLayerReLU};
use gradsel::rng::child_seed;
use gradsel::selection::{random_subsets, swap_subsets, Method, Problem, StepTrace};
use gradsel::tasks::{gen_linear_family, gen_relu_family, Family};
use gradsel::{Dataset64, EmbeddingLayout, LossKind, PromptSubset, QuerySet64, SelectionConfig};
use serde::Serialize;
use std::path::PathBuf;

pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub digest: String,
}

impl Ctx {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, Failure> {
        let out = cfg.out_dir()?;
        let digest = cfg.digest();
        Ok(Self { cfg, out, digest })
    }

    fn table<S: Into<String>>(&self, command: &str, columns: impl IntoIterator<Item = S>) -> Table {
        Table::new(columns).meta("command", command).meta("seed", self.cfg.seed).meta("config_digest", &self.digest)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        write_atomic(&self.out.join(name), bytes)
    }

    fn write_table(&self, name: &str, t: &Table) -> Result<(), Failure> {
        self.write(name, t.to_csv()?.as_bytes())
    }

    fn meta(&self) -> std::collections::BTreeMap<String, String> {
        [("seed".to_string(), self.cfg.seed.to_string()), ("config_digest".to_string(), self.digest.clone())].into()
    }
}

struct Loaded {
    data: Dataset64,
    model: AnyModel<f64>,
    layout: EmbeddingLayout,
}

fn load(ctx: &Ctx) -> Result<Loaded, Failure> {
    let data = DatasetFile::read(&ctx.cfg.dataset_path()?)?.into_dataset::<f64>()?;
    let file = ModelFile::read(&ctx.cfg.model_path()?)?;
    let model = AnyModel::from_file(&file)?;
    let layout = model.layout().or(file.dims.layout).ok_or_else(|| Failure::validation("model file carries no embedding layout"))?;
    if layout.d_in != data.demos.d_in() || layout.d_out != data.demos.d_out() {
        return Err(Failure::validation(format!(
            "model expects d_in = {}, d_out = {}; dataset has {}, {}",
            layout.d_in,
            layout.d_out,
            data.demos.d_in(),
            data.demos.d_out()
        )));
    }
    if layout.d_emb() != model.d_emb() {
        return Err(Failure::validation("model layout disagrees with its input dimension"));
    }
    Ok(Loaded { data, model, layout })
}

impl Loaded {
    fn problem<'a>(&'a self, queries: &'a QuerySet64) -> Problem<'a, f64, AnyModel<f64>> {
        Problem::new(&self.model, self.layout, &self.data.demos, queries, self.data.loss)
    }

    fn selection(&self, ctx: &Ctx, k: usize) -> Result<SelectionConfig, Failure> {
        ctx.cfg.selection.resolve(self.data.demos.len(), k, ctx.cfg.seed)
    }

    fn test(&self) -> Result<&QuerySet64, Failure> {
        self.data.test.as_ref().ok_or_else(|| Failure::validation("dataset has no test queries"))
    }
}

#[derive(Serialize)]
struct Components<'a> {
    format: &'static str,
    seed: u64,
    config_digest: &'a str,
    demo_component: &'a [usize],
    query_component: &'a [usize],
    test_component: &'a [usize],
    /// ⟨β⁽ⁱ⁾, β⁽ʲ⁾⟩ for linear families.
    beta_inner_products: Option<Vec<Vec<f64>>>,
}

pub fn gen_task(ctx: &Ctx) -> Result<(), Failure> {
    let spec = &ctx.cfg.task;
    let ds = match spec.family {
        Family::Linear => gen_linear_family::<f64>(spec)?,
        Family::Relu { .. } => gen_relu_family::<f64>(spec)?,
    };
    let mut file = DatasetFile::from_dataset(&ds.dataset(), Some(ctx.cfg.seed));
    file.meta = ctx.meta();
    // Round-trip through validation before anything touches the disk.
    file.into_dataset::<f64>()?;
    let comps = Components {
        format: "components.v1",
        seed: ctx.cfg.seed,
        config_digest: &ctx.digest,
        demo_component: &ds.demo_component,
        query_component: &ds.query_component,
        test_component: &ds.test_component,
        beta_inner_products: ds.beta_inner_products(),
    };
    let (a, b) = (to_json(&file)?, to_json(&comps)?);
    ctx.write("dataset.json", &a)?;
    ctx.write("components.json", &b)
}

pub fn train_model(ctx: &Ctx) -> Result<(), Failure> {
    let t = &ctx.cfg.training;
    let seed = ctx.cfg.seed;
    let layout = EmbeddingLayout::new(t.k_max, ctx.cfg.task.d_in, 1, t.features)?;
    let mut trace = ctx.table("train-model", ["step", "loss"]);
    let model: AnyModel<f64> = match t.model_kind {
        ModelKind::Affine => AnyModel::Affine(AffineModel::random(layout.d_emb(), 1, seed)),
        ModelKind::TwoLayerRelu => AnyModel::Relu(TwoLayerReLU::random(layout.d_emb(), t.hidden, 1, seed)),
        ModelKind::LinearAttention => {
            let init = LinearAttentionICL::init(layout, t.key_dim.unwrap_or(layout.d_in), -4.0, seed)?;
            let cfg = TrainingConfig { steps: t.steps, batch_size: t.batch_size, learning_rate: t.learning_rate, seed, ..Default::default() };
            let (m, report) = train_icl_model(init, &cfg, &t.task.sampler(layout)?)?;
            for (step, loss) in report.loss_trace {
                trace.push(vec![step.to_string(), fmt_f64(loss)])?;
            }
            AnyModel::Attention(m)
        }
    };
    let mut file = model.to_file();
    file.dims.layout = Some(layout);
    file.meta = ctx.meta();
    ctx.write("model.json", &to_json(&file)?)?;
    ctx.write_table("training_trace.csv", &trace)
}

pub fn estimate(ctx: &Ctx) -> Result<(), Failure> {
    let l = load(ctx)?;
    let o = &ctx.cfg.estimate;
    let n = l.data.demos.len();
    let queries = &l.data.queries;
    let mut per = ctx.table(
        "estimate",
        ["k", "subset_id", "relative_distance", "exact", "estimated", "relative_squared_error", "estimate_model_calls"],
    );
    let mut buckets = ctx.table("estimate", ["k", "lo", "hi", "count", "mean_relative_squared_error", "std"]);
    let mut rss = ctx.table(
        "estimate",
        ["k", "n_subsets", "rss", "mean_relative_distance", "anchor_forward_equivalents", "estimate_model_calls", "exact_forward_equivalents"],
    );
    for &k in &o.ks {
        if k < 1 || k > l.layout.k_max || k > n {
            return Err(Failure::validation(format!("k = {k} must lie in [1, min(k_max = {}, n_demo = {n})]", l.layout.k_max)));
        }
        let kseed = child_seed(ctx.cfg.seed, k as u64);
        let anchor = random_subsets(n, 1, k, child_seed(kseed, 1))?.remove(0);
        let subsets = match o.mode {
            SubsetMode::Random => random_subsets(n, o.n_subsets, k, kseed)?,
            SubsetMode::Swap => swap_subsets(&anchor, n, o.n_subsets, o.max_swaps.min(k), kseed)?,
        };
        let proj: Projection<f64> = if ctx.cfg.selection.identity_projection {
            Projection::identity(l.layout.d_emb())
        } else {
            build_projection(l.layout.d_emb(), ctx.cfg.selection.d_proj.unwrap_or(400), kseed)?
        };
        let ledger = FlopLedger::new();
        let cache = precompute_anchor(&l.model, &l.layout, &l.data.demos, queries, &anchor, &proj, 0, &ledger)?;
        let stage1 = ledger.snapshot();
        let est = estimate_losses(&cache, l.data.loss, &subsets, &ledger)?;
        let stage2 = ledger.snapshot().since(&stage1);
        let exact_ledger = FlopLedger::new();
        let exact = exact_losses(&l.model, &l.layout, &l.data.demos, queries, &subsets, l.data.loss, &exact_ledger)?;
        let records: Vec<ApproxErrorRecord> = est
            .iter()
            .zip(&exact)
            .enumerate()
            .map(|(i, (e, h))| ApproxErrorRecord {
                subset_id: i,
                exact: h.value,
                estimated: e.value,
                relative_distance: e.relative_distance.unwrap_or(0.0),
            })
            .collect();
        if o.per_subset {
            for r in &records {
                per.push(vec![
                    k.to_string(),
                    r.subset_id.to_string(),
                    fmt_f64(r.relative_distance),
                    fmt_f64(r.exact),
                    fmt_f64(r.estimated),
                    r.relative_squared_error().map(fmt_f64).unwrap_or_default(),
                    stage2.model_calls().to_string(),
                ])?;
            }
        }
        for b in aggregate_relative_error(&records, &o.buckets)?.rows {
            buckets.push(vec![k.to_string(), fmt_f64(b.lo), fmt_f64(b.hi), b.count.to_string(), fmt_f64(b.mean), fmt_f64(b.std)])?;
        }
        let ev: Vec<f64> = records.iter().map(|r| r.estimated).collect();
        let hv: Vec<f64> = records.iter().map(|r| r.exact).collect();
        let mean_dist = records.iter().map(|r| r.relative_distance).sum::<f64>() / records.len().max(1) as f64;
        rss.push(vec![
            k.to_string(),
            records.len().to_string(),
            fmt_f64(rss_scores(&ev, &hv)?),
            fmt_f64(mean_dist),
            stage1.forward_equivalents().to_string(),
            stage2.model_calls().to_string(),
            exact_ledger.snapshot().forward_equivalents().to_string(),
        ])?;
    }
    if o.per_subset {
        ctx.write_table("estimate_subsets.csv", &per)?;
    }
    ctx.write_table("estimate_buckets.csv", &buckets)?;
    ctx.write_table("estimate_rss.csv", &rss)
}

#[derive(Serialize)]
struct EstimateRow {
    subset: Vec<usize>,
    value: f64,
    estimated: bool,
    relative_distance: Option<f64>,
}

#[derive(Serialize)]
struct SelectionFile<'a> {
    format: &'static str,
    seed: u64,
    config_digest: &'a str,
    method: &'static str,
    config: &'a SelectionConfig,
    chosen: &'a [usize],
    scores: Option<&'a [f64]>,
    coverage: Option<&'a [usize]>,
    ledger: LedgerSnapshot,
    forward_equivalents: u64,
    trace: &'a [StepTrace],
    anchors: &'a [usize],
    estimates: Vec<EstimateRow>,
}

pub fn select(ctx: &Ctx) -> Result<(), Failure> {
    let l = load(ctx)?;
    let cfg = l.selection(ctx, ctx.cfg.selection.k)?;
    let method = ctx.cfg.method;
    let r = method.run(&l.problem(&l.data.queries), &cfg)?;
    let file = SelectionFile {
        format: "selection.v1",
        seed: ctx.cfg.seed,
        config_digest: &ctx.digest,
        method: method.name(),
        config: &cfg,
        chosen: r.chosen.indices(),
        scores: r.scores.as_ref().map(|s| s.s.as_slice()),
        coverage: r.scores.as_ref().map(|s| s.coverage.as_slice()),
        ledger: r.ledger,
        forward_equivalents: r.ledger.forward_equivalents(),
        trace: &r.trace,
        anchors: &r.anchors,
        estimates: r
            .estimates
            .iter()
            .map(|e| EstimateRow {
                subset: e.subset.indices().to_vec(),
                value: e.value,
                estimated: matches!(e.provenance, Provenance::Estimated { .. }),
                relative_distance: e.relative_distance,
            })
            .collect(),
    };
    ctx.write("selection.json", &to_json(&file)?)
}

/// Mean loss and, for the logistic loss, the sign error rate.
fn evaluate_subset(l: &Loaded, queries: &QuerySet64, s: &PromptSubset) -> Result<(f64, Option<f64>), Failure> {
    let mut total = 0.0;
    let mut wrong = 0usize;
    for q in queries.iter() {
        let pred = l.model.forward(&l.layout.embed(&l.data.demos, s, &q.x)?)?.value;
        total += gradsel::models::loss(l.data.loss, &pred, &q.y)?;
        if l.data.loss == LossKind::Logistic {
            wrong += pred.iter().zip(&q.y).filter(|(p, y)| (**p > 0.0) != (**y > 0.5)).count();
        }
    }
    let n = queries.len() as f64;
    let rate = (l.data.loss == LossKind::Logistic).then(|| wrong as f64 / (n * l.layout.d_out as f64));
    Ok((total / n, rate))
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn evaluate(ctx: &Ctx) -> Result<(), Failure> {
    let l = load(ctx)?;
    let mut t = ctx.table(
        "evaluate",
        ["method", "k", "forward_equivalents", "model_calls", "train_loss", "test_loss", "train_error_rate", "test_error_rate"],
    );
    for &method in &ctx.cfg.evaluate.methods {
        for &k in &ctx.cfg.evaluate.ks {
            let cfg = l.selection(ctx, k)?;
            let r = method.run(&l.problem(&l.data.queries), &cfg)?;
            let (train, train_err) = evaluate_subset(&l, &l.data.queries, &r.chosen)?;
            let (test, test_err) = match &l.data.test {
                Some(ts) => {
                    let (a, b) = evaluate_subset(&l, ts, &r.chosen)?;
                    (Some(a), b)
                }
                None => (None, None),
            };
            t.push(vec![
                method.name().into(),
                k.to_string(),
                r.ledger.forward_equivalents().to_string(),
                r.ledger.model_calls().to_string(),
                fmt_f64(train),
                opt(test),
                opt(train_err),
                opt(test_err),
            ])?;
        }
    }
    ctx.write_table("evaluate.csv", &t)
}

pub fn bench_flops(ctx: &Ctx) -> Result<(), Failure> {
    let l = load(ctx)?;
    let cfg = l.selection(ctx, ctx.cfg.selection.k)?;
    let problem = l.problem(&l.data.queries);
    let mut t = ctx.table(
        "bench-flops",
        ["method", "baseline", "forward", "backward", "vector_ops", "forward_equivalents", "speedup"],
    );
    let pairs = [(Method::GeRe, Method::OracleRe), (Method::GeFs, Method::OracleFs), (Method::GeCe, Method::OracleCe)];
    for (ours, oracle) in pairs {
        let a = ours.run(&problem, &cfg)?.ledger;
        let b = oracle.run(&problem, &cfg)?.ledger;
        for (m, s, base) in [(oracle, b, ""), (ours, a, oracle.name())] {
            t.push(vec![
                m.name().into(),
                base.into(),
                s.forward.to_string(),
                s.backward.to_string(),
                s.vector_ops.to_string(),
                s.forward_equivalents().to_string(),
                if base.is_empty() { String::new() } else { opt(speedup(&b, &a)) },
            ])?;
        }
    }
    ctx.write_table("bench_flops.csv", &t)
}

pub fn hessian(ctx: &Ctx) -> Result<(), Failure> {
    let l = load(ctx)?;
    let test = l.test()?;
    let cfg = l.selection(ctx, ctx.cfg.selection.k)?;
    let problem = l.problem(&l.data.queries);
    let selections = ctx
        .cfg
        .evaluate
        .methods
        .iter()
        .map(|m| Ok((m.name().to_string(), m.run(&problem, &cfg)?.chosen)))
        .collect::<Result<Vec<_>, Failure>>()?;
    let h = &ctx.cfg.hessian;
    let probe = HessianProbeConfig::new(h.sigma, h.n_samples, child_seed(ctx.cfg.seed, 0x4e55))?;
    let rows = sharpness_report(&l.model, &l.layout, &l.data.demos, &selections, &l.data.queries, test, l.data.loss, &probe)?;
    let mut t = ctx.table(
        "hessian",
        ["method", "train_loss", "test_loss", "train_trace", "train_trace_se", "test_trace", "test_trace_se"],
    );
    for r in rows {
        t.push(vec![
            r.method,
            fmt_f64(r.train_loss),
            fmt_f64(r.test_loss),
            fmt_f64(r.train_trace.trace),
            fmt_f64(r.train_trace.std_err),
            fmt_f64(r.test_trace.trace),
            fmt_f64(r.test_trace.std_err),
        ])?;
    }
    ctx.write_table("hessian.csv", &t)
}
