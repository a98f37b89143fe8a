//! Dataset model: demonstrations, training queries, prompt subsets, loss
//! kinds and the selection configuration.

use crate::error::{GradselError, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::path::Path;

/// One labeled example: a demonstration or a training/test query.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoExample<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
}

impl<T: Scalar> DemoExample<T> {
    pub fn new(x: Vec<T>, y: Vec<T>) -> Self {
        Self { x, y }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoSet<T> {
    pub demos: Vec<DemoExample<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuerySet<T> {
    pub queries: Vec<DemoExample<T>>,
}

macro_rules! example_list {
    ($ty:ident, $field:ident, $what:literal) => {
        impl<T: Scalar> $ty<T> {
            pub fn new($field: Vec<DemoExample<T>>) -> Result<Self> {
                let Some(first) = $field.first() else {
                    return Err(GradselError::InvalidConfig(concat!($what, " must be non-empty").into()));
                };
                let (di, dout) = (first.x.len(), first.y.len());
                if di == 0 || dout == 0 {
                    return Err(GradselError::InvalidConfig("d_in and d_out must be ≥ 1".into()));
                }
                for e in &$field {
                    if e.x.len() != di {
                        return Err(GradselError::DimensionMismatch { what: "x", expected: di, got: e.x.len() });
                    }
                    if e.y.len() != dout {
                        return Err(GradselError::DimensionMismatch { what: "y", expected: dout, got: e.y.len() });
                    }
                }
                Ok(Self { $field })
            }
            pub fn len(&self) -> usize {
                self.$field.len()
            }
            pub fn is_empty(&self) -> bool {
                self.$field.is_empty()
            }
            pub fn d_in(&self) -> usize {
                self.$field[0].x.len()
            }
            pub fn d_out(&self) -> usize {
                self.$field[0].y.len()
            }
            pub fn get(&self, i: usize) -> &DemoExample<T> {
                &self.$field[i]
            }
            pub fn iter(&self) -> std::slice::Iter<'_, DemoExample<T>> {
                self.$field.iter()
            }
        }
    };
}

example_list!(DemoSet, demos, "demo set");
example_list!(QuerySet, queries, "query set");

/// Ordered demonstration indices. Order is the sampling order (it fixes
/// slot placement in the prompt); equality for scoring is set equality.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptSubset {
    indices: Vec<usize>,
}

impl PromptSubset {
    /// Checked constructor: indices must be distinct, `< n_demo`, and at most `k_max`.
    pub fn new(indices: Vec<usize>, n_demo: usize, k_max: usize) -> Result<Self> {
        if indices.len() > k_max {
            return Err(GradselError::OversizeSubset { size: indices.len(), k_max });
        }
        let mut seen = HashSet::with_capacity(indices.len());
        for &i in &indices {
            if i >= n_demo {
                return Err(GradselError::InvalidSubset(format!("index {i} out of range for {n_demo} demos")));
            }
            if !seen.insert(i) {
                return Err(GradselError::InvalidSubset(format!("duplicate index {i}")));
            }
        }
        Ok(Self { indices })
    }

    /// Constructor for callers that already guarantee the invariants.
    pub(crate) fn from_trusted(indices: Vec<usize>) -> Self {
        debug_assert!({
            let s: HashSet<_> = indices.iter().collect();
            s.len() == indices.len()
        });
        Self { indices }
    }

    pub fn empty() -> Self {
        Self { indices: Vec::new() }
    }
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
    pub fn len(&self) -> usize {
        self.indices.len()
    }
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
    pub fn contains(&self, i: usize) -> bool {
        self.indices.contains(&i)
    }
    pub fn sorted(&self) -> Vec<usize> {
        let mut v = self.indices.clone();
        v.sort_unstable();
        v
    }
    pub fn set_eq(&self, other: &PromptSubset) -> bool {
        self.len() == other.len() && self.sorted() == other.sorted()
    }
    /// A copy with `i` appended.
    pub fn with(&self, i: usize) -> Self {
        let mut v = self.indices.clone();
        v.push(i);
        Self::from_trusted(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[serde(rename = "squared")]
    SquaredError,
    Logistic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorPolicy {
    /// Anchors drawn uniformly among the sampled subsets.
    #[default]
    Random,
    /// The subsets whose mean demo input lies closest to the demo-set mean.
    MeanEmbedding,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub m: usize,
    pub k: usize,
    pub alpha: usize,
    pub d_proj: usize,
    pub t_start: usize,
    pub k_prefilter: usize,
    #[serde(default)]
    pub score_threshold: Option<f64>,
    #[serde(default)]
    pub anchor_policy: AnchorPolicy,
    /// Use the identity map instead of a Gaussian projection.
    #[serde(default)]
    pub identity_projection: bool,
    pub seed: u64,
}

impl SelectionConfig {
    /// Defaults: m = max(500, 2n), α = 5, d_proj = 400, t_start = 4, K = min(n, 4k).
    pub fn defaults(n_demo: usize, k: usize, seed: u64) -> Self {
        Self {
            m: 500.max(2 * n_demo),
            k,
            alpha: 5,
            d_proj: 400,
            t_start: 4,
            k_prefilter: n_demo.min(4 * k),
            score_threshold: None,
            anchor_policy: AnchorPolicy::Random,
            identity_projection: false,
            seed,
        }
    }

    pub fn validate(&self, n_demo: usize) -> Result<()> {
        let bad = |s: String| Err(GradselError::InvalidConfig(s));
        if self.k < 1 || self.k > n_demo {
            return bad(format!("k = {} must lie in [1, n_demo = {n_demo}]", self.k));
        }
        if self.alpha < 1 || self.alpha > self.m {
            return bad(format!("alpha = {} must lie in [1, m = {}]", self.alpha, self.m));
        }
        if self.d_proj < 1 {
            return bad("d_proj must be ≥ 1".into());
        }
        if self.t_start < 1 {
            return bad("t_start must be ≥ 1".into());
        }
        if self.k_prefilter < self.k || self.k_prefilter > n_demo {
            return bad(format!(
                "K_prefilter = {} must lie in [k = {}, n_demo = {n_demo}]",
                self.k_prefilter, self.k
            ));
        }
        if let Some(l) = self.score_threshold {
            if !l.is_finite() {
                return bad("score threshold must be finite".into());
            }
        }
        Ok(())
    }

    /// Construct and validate in one step.
    pub fn checked(self, n_demo: usize) -> Result<Self> {
        self.validate(n_demo)?;
        Ok(self)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    DimensionMismatch { set: &'static str, index: usize, field: &'static str, expected: usize, got: usize },
    NonFinite { set: &'static str, index: usize, field: &'static str },
    LabelDomain { set: &'static str, index: usize },
    Empty { set: &'static str },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::DimensionMismatch { set, index, field, expected, got } => {
                write!(f, "{set}[{index}].{field}: expected length {expected}, got {got}")
            }
            Violation::NonFinite { set, index, field } => write!(f, "{set}[{index}].{field}: non-finite entry"),
            Violation::LabelDomain { set, index } => write!(f, "{set}[{index}].y: logistic label must be 0 or 1"),
            Violation::Empty { set } => write!(f, "{set} is empty"),
        }
    }
}

/// Report-based validation; an empty list means the dataset is valid.
pub fn validate_dataset<T: Scalar>(demos: &[DemoExample<T>], queries: &[DemoExample<T>], loss: LossKind) -> Vec<Violation> {
    let mut out = Vec::new();
    let reference = demos.first().or(queries.first()).map(|e| (e.x.len(), e.y.len()));
    for (set, list) in [("demos", demos), ("queries", queries)] {
        if list.is_empty() {
            out.push(Violation::Empty { set });
        }
        let Some((di, dout)) = reference else { continue };
        for (index, e) in list.iter().enumerate() {
            if e.x.len() != di {
                out.push(Violation::DimensionMismatch { set, index, field: "x", expected: di, got: e.x.len() });
            }
            if e.y.len() != dout {
                out.push(Violation::DimensionMismatch { set, index, field: "y", expected: dout, got: e.y.len() });
            }
            if e.x.iter().any(|v| !v.is_finite()) {
                out.push(Violation::NonFinite { set, index, field: "x" });
            }
            if e.y.iter().any(|v| !v.is_finite()) {
                out.push(Violation::NonFinite { set, index, field: "y" });
            } else if loss == LossKind::Logistic && e.y.iter().any(|&v| v != T::zero() && v != T::one()) {
                out.push(Violation::LabelDomain { set, index });
            }
        }
    }
    out
}

/// On-disk dataset, format 1. Examples are `[x, y]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub format: u32,
    pub d_in: usize,
    pub d_out: usize,
    pub loss: LossKind,
    pub demos: Vec<(Vec<f64>, Vec<f64>)>,
    pub queries: Vec<(Vec<f64>, Vec<f64>)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub test: Vec<(Vec<f64>, Vec<f64>)>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

pub const DATASET_FORMAT: u32 = 1;

/// A dataset loaded into scalar type `T`.
#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub demos: DemoSet<T>,
    pub queries: QuerySet<T>,
    pub test: Option<QuerySet<T>>,
    pub loss: LossKind,
}

fn to_examples<T: Scalar>(v: &[(Vec<f64>, Vec<f64>)]) -> Vec<DemoExample<T>> {
    v.iter()
        .map(|(x, y)| DemoExample::new(x.iter().map(|&a| T::of(a)).collect(), y.iter().map(|&a| T::of(a)).collect()))
        .collect()
}

fn from_examples<T: Scalar>(v: &[DemoExample<T>]) -> Vec<(Vec<f64>, Vec<f64>)> {
    v.iter()
        .map(|e| (e.x.iter().map(|a| a.f64()).collect(), e.y.iter().map(|a| a.f64()).collect()))
        .collect()
}

impl DatasetFile {
    pub fn from_dataset<T: Scalar>(d: &Dataset<T>, seed: Option<u64>) -> Self {
        Self {
            format: DATASET_FORMAT,
            d_in: d.demos.d_in(),
            d_out: d.demos.d_out(),
            loss: d.loss,
            demos: from_examples(&d.demos.demos),
            queries: from_examples(&d.queries.queries),
            test: d.test.as_ref().map(|t| from_examples(&t.queries)).unwrap_or_default(),
            seed,
            meta: BTreeMap::new(),
        }
    }

    /// Validate and convert. Violations are reported as a single `Format` error.
    pub fn into_dataset<T: Scalar>(&self) -> Result<Dataset<T>> {
        if self.format != DATASET_FORMAT {
            return Err(GradselError::Format(format!("unsupported dataset format {}", self.format)));
        }
        let demos = to_examples::<T>(&self.demos);
        let queries = to_examples::<T>(&self.queries);
        let test = to_examples::<T>(&self.test);
        let mut report = validate_dataset(&demos, &queries, self.loss);
        if !test.is_empty() {
            report.extend(validate_dataset(&demos, &test, self.loss).into_iter().filter(|v| {
                !matches!(v, Violation::Empty { .. }) && !matches!(v, Violation::DimensionMismatch { set: "demos", .. })
            }));
        }
        if let Some(d) = demos.first() {
            if d.x.len() != self.d_in || d.y.len() != self.d_out {
                return Err(GradselError::Format("header dimensions disagree with the data".into()));
            }
        }
        if !report.is_empty() {
            let msg: Vec<String> = report.iter().map(|v| v.to_string()).collect();
            return Err(GradselError::Format(msg.join("; ")));
        }
        Ok(Dataset {
            demos: DemoSet::new(demos)?,
            queries: QuerySet::new(queries)?,
            test: if test.is_empty() { None } else { Some(QuerySet::new(test)?) },
            loss: self.loss,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(x: &[f64], y: &[f64]) -> DemoExample<f64> {
        DemoExample::new(x.to_vec(), y.to_vec())
    }

    #[test]
    fn clean_regression_set_has_empty_report() {
        let demos: Vec<_> = (0..10).map(|i| ex(&[i as f64, 1.0], &[2.0 * i as f64])).collect();
        let q = vec![ex(&[0.5, 0.5], &[1.0])];
        assert!(validate_dataset(&demos, &q, LossKind::SquaredError).is_empty());
    }

    #[test]
    fn nan_label_is_one_violation() {
        let demos = vec![ex(&[1.0], &[f64::NAN]), ex(&[2.0], &[1.0])];
        let q = vec![ex(&[0.0], &[0.0])];
        let r = validate_dataset(&demos, &q, LossKind::SquaredError);
        assert_eq!(r, vec![Violation::NonFinite { set: "demos", index: 0, field: "y" }]);
    }

    #[test]
    fn logistic_half_label_violates_domain() {
        let demos = vec![ex(&[1.0], &[0.5])];
        let q = vec![ex(&[0.0], &[1.0])];
        let r = validate_dataset(&demos, &q, LossKind::Logistic);
        assert_eq!(r, vec![Violation::LabelDomain { set: "demos", index: 0 }]);
    }

    #[test]
    fn dimension_mismatch_reported() {
        let demos = vec![ex(&[1.0, 2.0], &[0.0]), ex(&[1.0], &[0.0])];
        let r = validate_dataset(&demos, &[ex(&[1.0, 1.0], &[0.0])], LossKind::SquaredError);
        assert_eq!(r.len(), 1);
    }

    #[test]
    fn subset_rejects_duplicates_and_range() {
        assert!(PromptSubset::new(vec![0, 1, 1], 5, 5).is_err());
        assert!(PromptSubset::new(vec![0, 5], 5, 5).is_err());
        assert!(PromptSubset::new(vec![0, 1, 2], 5, 2).is_err());
        let s = PromptSubset::new(vec![3, 1], 5, 5).unwrap();
        assert!(s.set_eq(&PromptSubset::new(vec![1, 3], 5, 5).unwrap()));
        assert!(!s.set_eq(&PromptSubset::new(vec![1, 2], 5, 5).unwrap()));
    }

    #[test]
    fn config_rejects_each_violation() {
        let ok = SelectionConfig::defaults(100, 10, 0);
        assert!(ok.validate(100).is_ok());
        assert_eq!(ok.m, 500);
        assert_eq!(ok.k_prefilter, 40);
        let cases: Vec<Box<dyn Fn(&mut SelectionConfig)>> = vec![
            Box::new(|c| c.k = 0),
            Box::new(|c| c.k = 101),
            Box::new(|c| c.alpha = 0),
            Box::new(|c| c.alpha = c.m + 1),
            Box::new(|c| c.d_proj = 0),
            Box::new(|c| c.t_start = 0),
            Box::new(|c| c.k_prefilter = 9),
            Box::new(|c| c.k_prefilter = 101),
            Box::new(|c| c.score_threshold = Some(f64::NAN)),
        ];
        for f in cases {
            let mut c = ok.clone();
            f(&mut c);
            assert!(c.validate(100).is_err(), "{c:?}");
        }
    }

    #[test]
    fn dataset_file_round_trip() {
        let d = Dataset {
            demos: DemoSet::new(vec![ex(&[1.0, 2.0], &[3.0])]).unwrap(),
            queries: QuerySet::new(vec![ex(&[0.0, 1.0], &[1.0])]).unwrap(),
            test: None,
            loss: LossKind::SquaredError,
        };
        let f = DatasetFile::from_dataset(&d, Some(9));
        let text = serde_json::to_string(&f).unwrap();
        assert!(text.contains("\"loss\":\"squared\""));
        let back: DatasetFile = serde_json::from_str(&text).unwrap();
        let d2: Dataset<f64> = back.into_dataset().unwrap();
        assert_eq!(d2.demos, d.demos);
        assert_eq!(d2.queries, d.queries);
    }
}
