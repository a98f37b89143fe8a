//! Synthetic tasks: linear-function families (optionally noisy, optionally
//! a mixture of several coefficient vectors) and ReLU-teacher families,
//! with ground-truth component labels.

use crate::data::{Dataset, DemoExample, DemoSet, LossKind, PromptSubset, QuerySet};
use crate::embedding::EmbeddingLayout;
use crate::error::{GradselError, Result};
use crate::linalg::{dot, Matrix};
use crate::models::PromptSource;
use crate::rng::{normal, normal_vec, stream, streams, GsRng};
use crate::scalar::Scalar;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    None,
    /// ε ~ N(0, 1)
    UnitGaussian,
}

impl NoiseKind {
    pub fn std(self) -> f64 {
        match self {
            NoiseKind::None => 0.0,
            NoiseKind::UnitGaussian => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    Linear,
    Relu { hidden: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub d_in: usize,
    pub components: usize,
    pub noise: NoiseKind,
    pub n_demo: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Component that generates the training and test queries.
    pub query_component: usize,
    pub family: Family,
    pub seed: u64,
}

impl TaskSpec {
    /// Single noiseless linear function, d = 20.
    pub fn linear(n_demo: usize, n_train: usize, seed: u64) -> Self {
        Self {
            d_in: 20,
            components: 1,
            noise: NoiseKind::None,
            n_demo,
            n_train,
            n_test: n_train,
            query_component: 0,
            family: Family::Linear,
            seed,
        }
    }

    /// Three linear functions, 3,000 demos split evenly, 100 queries from β⁽¹⁾.
    pub fn mixture(seed: u64) -> Self {
        Self { components: 3, n_demo: 3000, n_train: 100, n_test: 100, ..Self::linear(3000, 100, seed) }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: &str| Err(GradselError::InvalidConfig(s.into()));
        if self.d_in < 1 || self.components < 1 {
            return bad("d_in and components must be ≥ 1");
        }
        if self.components > 1 && self.components >= self.d_in {
            return bad("a mixture needs fewer components than input dimensions");
        }
        if self.n_demo < self.components || self.n_train < 1 || self.n_test < 1 {
            return bad("sample counts must be ≥ 1 and cover every component");
        }
        if self.query_component >= self.components {
            return bad("query component out of range");
        }
        if let Family::Relu { hidden } = self.family {
            if hidden < 1 {
                return bad("teacher hidden width must be ≥ 1");
            }
        }
        Ok(())
    }

    /// Demo `i` belongs to component `i mod C`.
    pub fn demo_component(&self, i: usize) -> usize {
        i % self.components
    }
}

/// Two-layer ReLU teacher: y = w2·relu(W1 x) + b2.
#[derive(Clone, Debug, PartialEq)]
pub struct ReluTeacher {
    pub w1: Matrix<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl ReluTeacher {
    pub fn random<R: Rng>(d_in: usize, hidden: usize, rng: &mut R) -> Self {
        let s1 = 1.0 / (d_in as f64).sqrt();
        let w1 = Matrix::from_fn(hidden, d_in, |_, _| s1 * normal::<f64, _>(rng));
        let w2 = normal_vec(rng, hidden, 1.0 / (hidden as f64).sqrt());
        Self { w1, w2, b2: 0.0 }
    }

    pub fn label(&self, x: &[f64]) -> f64 {
        let h = self.w1.matvec(x);
        h.iter().zip(&self.w2).map(|(&a, &w)| a.max(0.0) * w).sum::<f64>() + self.b2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ComponentParams {
    Linear(Vec<Vec<f64>>),
    Relu(Vec<ReluTeacher>),
}

#[derive(Clone, Debug)]
pub struct LabeledDataset<T> {
    pub spec: TaskSpec,
    pub demos: DemoSet<T>,
    pub queries: QuerySet<T>,
    pub test: QuerySet<T>,
    pub demo_component: Vec<usize>,
    pub query_component: Vec<usize>,
    pub test_component: Vec<usize>,
    pub params: ComponentParams,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn dataset(&self) -> Dataset<T> {
        Dataset { demos: self.demos.clone(), queries: self.queries.clone(), test: Some(self.test.clone()), loss: LossKind::SquaredError }
    }

    /// Fraction of `s` drawn from component `c`.
    pub fn fraction_from(&self, s: &PromptSubset, c: usize) -> f64 {
        if s.is_empty() {
            return 0.0;
        }
        s.indices().iter().filter(|&&i| self.demo_component[i] == c).count() as f64 / s.len() as f64
    }

    /// Gram matrix of the coefficient vectors (linear families only).
    pub fn beta_inner_products(&self) -> Option<Vec<Vec<f64>>> {
        match &self.params {
            ComponentParams::Linear(b) => Some(b.iter().map(|u| b.iter().map(|v| dot(u, v)).collect()).collect()),
            ComponentParams::Relu(_) => None,
        }
    }
}

fn draw_set<T: Scalar>(
    rng: &mut GsRng,
    n: usize,
    d: usize,
    noise: f64,
    comp: impl Fn(usize) -> usize,
    label: &dyn Fn(usize, &[f64]) -> f64,
) -> (Vec<DemoExample<T>>, Vec<usize>) {
    let mut out = Vec::with_capacity(n);
    let mut comps = Vec::with_capacity(n);
    for i in 0..n {
        let c = comp(i);
        let x: Vec<f64> = normal_vec(rng, d, 1.0);
        let mut y = label(c, &x);
        if noise > 0.0 {
            y += noise * normal::<f64, _>(rng);
        }
        out.push(DemoExample::new(x.iter().map(|&v| T::of(v)).collect(), vec![T::of(y)]));
        comps.push(c);
    }
    (out, comps)
}

fn generate<T: Scalar>(spec: &TaskSpec, params: ComponentParams) -> Result<LabeledDataset<T>> {
    spec.validate()?;
    let label: Box<dyn Fn(usize, &[f64]) -> f64> = match &params {
        ComponentParams::Linear(b) => {
            let b = b.clone();
            Box::new(move |c, x| dot(&b[c], x))
        }
        ComponentParams::Relu(t) => {
            let t = t.clone();
            Box::new(move |c, x| t[c].label(x))
        }
    };
    let noise = spec.noise.std();
    let d = spec.d_in;
    let (demos, demo_component) = draw_set::<T>(&mut stream(spec.seed, streams::DEMOS), spec.n_demo, d, noise, |i| spec.demo_component(i), &*label);
    let qc = spec.query_component;
    let (queries, query_component) = draw_set::<T>(&mut stream(spec.seed, streams::QUERIES), spec.n_train, d, noise, |_| qc, &*label);
    let (test, test_component) = draw_set::<T>(&mut stream(spec.seed, streams::TEST), spec.n_test, d, noise, |_| qc, &*label);
    Ok(LabeledDataset {
        spec: spec.clone(),
        demos: DemoSet::new(demos)?,
        queries: QuerySet::new(queries)?,
        test: QuerySet::new(test)?,
        demo_component,
        query_component,
        test_component,
        params,
    })
}

/// y = ⟨β⁽ᶜ⁾, x⟩ + ε with x, β ~ N(0, I).
pub fn gen_linear_family<T: Scalar>(spec: &TaskSpec) -> Result<LabeledDataset<T>> {
    spec.validate()?;
    let mut rng = stream(spec.seed, streams::PARAMS);
    let betas = (0..spec.components).map(|_| normal_vec(&mut rng, spec.d_in, 1.0)).collect();
    generate(spec, ComponentParams::Linear(betas))
}

/// Labels from one random ReLU teacher per component.
pub fn gen_relu_family<T: Scalar>(spec: &TaskSpec) -> Result<LabeledDataset<T>> {
    spec.validate()?;
    let Family::Relu { hidden } = spec.family else {
        return Err(GradselError::InvalidConfig("spec family is not relu".into()));
    };
    let mut rng = stream(spec.seed, streams::PARAMS);
    let teachers = (0..spec.components).map(|_| ReluTeacher::random(spec.d_in, hidden, &mut rng)).collect();
    generate(spec, ComponentParams::Relu(teachers))
}

/// ReLU family with caller-supplied teachers.
pub fn gen_relu_family_with<T: Scalar>(spec: &TaskSpec, teachers: Vec<ReluTeacher>) -> Result<LabeledDataset<T>> {
    if teachers.len() != spec.components {
        return Err(GradselError::DimensionMismatch { what: "teachers", expected: spec.components, got: teachers.len() });
    }
    generate(spec, ComponentParams::Relu(teachers))
}

/// Repeat each demonstration `copies` times in place (component ids follow).
pub fn duplicate_demos<T: Scalar>(ds: &LabeledDataset<T>, copies: usize) -> Result<LabeledDataset<T>> {
    if copies < 1 {
        return Err(GradselError::InvalidConfig("copies must be ≥ 1".into()));
    }
    let mut out = ds.clone();
    out.demos = DemoSet::new(ds.demos.iter().flat_map(|d| std::iter::repeat_n(d.clone(), copies)).collect())?;
    out.demo_component = ds.demo_component.iter().flat_map(|&c| std::iter::repeat_n(c, copies)).collect();
    out.spec.n_demo = ds.spec.n_demo * copies;
    Ok(out)
}

/// Training prompts: each prompt draws `components` fresh coefficient
/// vectors, a length k in `[k_min, k_max]`, demonstrations from random
/// components, and a query from a random component.
#[derive(Clone, Debug)]
pub struct LinearPromptSampler {
    pub layout: EmbeddingLayout,
    pub components: usize,
    /// Draw per-prompt component weights from Dirichlet(1, …, 1) and the
    /// query component in proportion to them (instead of uniformly).
    pub weighted: bool,
    pub noise_std: f64,
    pub k_min: usize,
    pub k_max: usize,
}

impl LinearPromptSampler {
    pub fn new(layout: EmbeddingLayout, components: usize, noise: NoiseKind, k_min: usize, k_max: usize) -> Result<Self> {
        if layout.d_out != 1 {
            return Err(GradselError::InvalidConfig("linear prompts have a scalar label".into()));
        }
        if components < 1 || k_min < 1 || k_min > k_max || k_max > layout.k_max {
            return Err(GradselError::InvalidConfig("need 1 ≤ k_min ≤ k_max ≤ layout.k_max and ≥ 1 component".into()));
        }
        Ok(Self { layout, components, weighted: false, noise_std: noise.std(), k_min, k_max })
    }
}

impl<T: Scalar> PromptSource<T> for LinearPromptSampler {
    fn layout(&self) -> EmbeddingLayout {
        self.layout
    }

    fn sample(&self, rng: &mut GsRng) -> (Vec<T>, Vec<T>) {
        let d = self.layout.d_in;
        let betas: Vec<Vec<f64>> = (0..self.components).map(|_| normal_vec(rng, d, 1.0)).collect();
        let k = rng.random_range(self.k_min..=self.k_max);
        let weights: Vec<f64> = if self.weighted {
            // Dirichlet(1) via normalised Exp(1) draws
            let e: Vec<f64> = (0..self.components).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let t: f64 = e.iter().sum();
            e.into_iter().map(|v| v / t).collect()
        } else {
            vec![1.0 / self.components as f64; self.components]
        };
        let pick = |rng: &mut GsRng| {
            let mut u = rng.random::<f64>();
            for (c, &w) in weights.iter().enumerate() {
                if u < w {
                    return c;
                }
                u -= w;
            }
            weights.len() - 1
        };
        let mut emb = vec![T::zero(); self.layout.d_emb()];
        let draw = |rng: &mut GsRng| {
            let c = if self.weighted { pick(rng) } else { rng.random_range(0..self.components) };
            let x: Vec<f64> = normal_vec(rng, d, 1.0);
            let y = dot(&betas[c], &x) + self.noise_std * normal::<f64, _>(rng);
            (x.iter().map(|&v| T::of(v)).collect::<Vec<T>>(), T::of(y))
        };
        for j in 0..k {
            let (x, y) = draw(rng);
            self.layout.write_token(&x, Some(&[y]), &mut emb[self.layout.slot(j)]);
        }
        let (xq, yq) = draw(rng);
        let qs = self.layout.query_slot();
        self.layout.write_token(&xq, None, &mut emb[qs]);
        (emb, vec![yq])
    }
}

/// Prompt distributions used to train the attention model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingTask {
    /// One fresh noiseless linear function per prompt.
    Linear,
    /// As `Linear` with unit Gaussian label noise.
    NoisyLinear,
    /// Three functions per prompt with Dirichlet(1) weights; the query
    /// follows the same weights. Used for the selection experiments.
    Mixture,
}

impl TrainingTask {
    /// Prompts of length k ∈ [min(2·d_in, k_max), k_max].
    pub fn sampler(self, layout: EmbeddingLayout) -> Result<LinearPromptSampler> {
        let k_min = (2 * layout.d_in).min(layout.k_max);
        match self {
            TrainingTask::Linear => LinearPromptSampler::new(layout, 1, NoiseKind::None, k_min, layout.k_max),
            TrainingTask::NoisyLinear => LinearPromptSampler::new(layout, 1, NoiseKind::UnitGaussian, k_min, layout.k_max),
            TrainingTask::Mixture => {
                let mut s = LinearPromptSampler::new(layout, 3, NoiseKind::None, k_min, layout.k_max)?;
                s.weighted = true;
                Ok(s)
            }
        }
    }
}

/// The layout used throughout the linear-function experiments: 50 demo
/// slots, scalar labels, interaction features.
pub fn default_layout(d_in: usize) -> EmbeddingLayout {
    EmbeddingLayout { k_max: 50, d_in, d_out: 1, features: crate::embedding::TokenFeatures::Interaction }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_labels_are_exact_inner_products() {
        let ds = gen_linear_family::<f64>(&TaskSpec::linear(50, 10, 3)).unwrap();
        let ComponentParams::Linear(b) = &ds.params else { panic!() };
        for d in ds.demos.iter() {
            assert!((d.y[0] - dot(&b[0], &d.x)).abs() < 1e-12);
        }
    }

    #[test]
    fn mixture_defaults() {
        let ds = gen_linear_family::<f64>(&TaskSpec::mixture(1)).unwrap();
        assert_eq!(ds.demos.len(), 3000);
        assert_eq!(ds.queries.len(), 100);
        assert!(ds.query_component.iter().all(|&c| c == 0));
        for c in 0..3 {
            assert_eq!(ds.demo_component.iter().filter(|&&x| x == c).count(), 1000);
        }
        assert_eq!(ds.beta_inner_products().unwrap().len(), 3);
    }

    #[test]
    fn deterministic_from_seed() {
        let spec = TaskSpec { family: Family::Relu { hidden: 8 }, components: 2, ..TaskSpec::linear(20, 5, 9) };
        let a = gen_relu_family::<f64>(&spec).unwrap();
        let b = gen_relu_family::<f64>(&spec).unwrap();
        assert_eq!(a.demos, b.demos);
        assert_eq!(a.demo_component, b.demo_component);
        let c = gen_relu_family::<f64>(&TaskSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a.demos, c.demos);
    }

    #[test]
    fn zero_teacher_output_gives_bias_labels() {
        let spec = TaskSpec { family: Family::Relu { hidden: 4 }, ..TaskSpec::linear(10, 3, 0) };
        let t = ReluTeacher { w1: Matrix::from_fn(4, 20, |i, j| (i + j) as f64), w2: vec![0.0; 4], b2: 1.25 };
        let ds = gen_relu_family_with::<f64>(&spec, vec![t]).unwrap();
        assert!(ds.demos.iter().all(|d| d.y[0] == 1.25));
    }

    #[test]
    fn duplication_counts() {
        let ds = gen_linear_family::<f64>(&TaskSpec { components: 2, ..TaskSpec::linear(10, 3, 0) }).unwrap();
        let one = duplicate_demos(&ds, 1).unwrap();
        assert_eq!(one.demos, ds.demos);
        let three = duplicate_demos(&ds, 3).unwrap();
        assert_eq!(three.demos.len(), 30);
        assert_eq!(three.demo_component[3], ds.demo_component[1]);
        assert!(duplicate_demos(&ds, 0).is_err());
    }

    #[test]
    fn noisy_label_variance_matches() {
        let spec = TaskSpec { noise: NoiseKind::UnitGaussian, ..TaskSpec::linear(100_000, 1, 4) };
        let ds = gen_linear_family::<f64>(&spec).unwrap();
        let ComponentParams::Linear(b) = &ds.params else { panic!() };
        let n = ds.demos.len() as f64;
        let m = ds.demos.iter().map(|d| d.y[0]).sum::<f64>() / n;
        let var = ds.demos.iter().map(|d| (d.y[0] - m).powi(2)).sum::<f64>() / n;
        let expect = dot(&b[0], &b[0]) + 1.0;
        assert!((var / expect - 1.0).abs() < 0.03, "{var} vs {expect}");
    }

    #[test]
    fn spec_validation() {
        assert!(TaskSpec { components: 20, ..TaskSpec::linear(100, 1, 0) }.validate().is_err());
        assert!(TaskSpec { query_component: 1, ..TaskSpec::linear(100, 1, 0) }.validate().is_err());
    }
}
