//! Prompt encoding φ(S, x): `k_max` demonstration slots followed by one
//! query slot, right-padded with all-zero tokens.
//!
//! A demonstration token is `(x, y, x⊗y, 1)` under [`TokenFeatures::Interaction`]
//! or `(x, y, 1)` under [`TokenFeatures::Plain`]; the query token carries its
//! input, zeros in the label channels, and flag 1.

use crate::data::{DemoExample, DemoSet, PromptSubset};
use crate::error::{GradselError, Result};
use crate::linalg::norm;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::ops::Deref;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenFeatures {
    /// `(x, y, flag)`
    Plain,
    /// `(x, y, x⊗y, flag)`: adds the input–label product channel.
    #[default]
    Interaction,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingLayout {
    pub k_max: usize,
    pub d_in: usize,
    pub d_out: usize,
    #[serde(default)]
    pub features: TokenFeatures,
}

impl EmbeddingLayout {
    pub fn new(k_max: usize, d_in: usize, d_out: usize, features: TokenFeatures) -> Result<Self> {
        if k_max < 1 || d_in < 1 || d_out < 1 {
            return Err(GradselError::InvalidConfig("k_max, d_in and d_out must be ≥ 1".into()));
        }
        Ok(Self { k_max, d_in, d_out, features })
    }

    pub fn token_dim(&self) -> usize {
        match self.features {
            TokenFeatures::Plain => self.d_in + self.d_out + 1,
            TokenFeatures::Interaction => self.d_in + self.d_out + self.d_in * self.d_out + 1,
        }
    }

    #[inline]
    pub fn flag_channel(&self) -> usize {
        self.token_dim() - 1
    }

    pub fn d_emb(&self) -> usize {
        (self.k_max + 1) * self.token_dim()
    }

    /// Coordinate range of slot `j` (`j == k_max` is the query slot).
    #[inline]
    pub fn slot(&self, j: usize) -> std::ops::Range<usize> {
        let t = self.token_dim();
        j * t..(j + 1) * t
    }

    #[inline]
    pub fn query_slot(&self) -> std::ops::Range<usize> {
        self.slot(self.k_max)
    }

    /// Write a token into `out` (length `token_dim`). `y = None` encodes a query.
    pub fn write_token<T: Scalar>(&self, x: &[T], y: Option<&[T]>, out: &mut [T]) {
        let (di, dout) = (self.d_in, self.d_out);
        out.iter_mut().for_each(|v| *v = T::zero());
        out[..di].copy_from_slice(x);
        if let Some(y) = y {
            out[di..di + dout].copy_from_slice(y);
            if self.features == TokenFeatures::Interaction {
                let base = di + dout;
                for (o, &yo) in y.iter().enumerate() {
                    for (i, &xi) in x.iter().enumerate() {
                        out[base + o * di + i] = xi * yo;
                    }
                }
            }
        }
        out[self.flag_channel()] = T::one();
    }

    pub fn demo_token<T: Scalar>(&self, d: &DemoExample<T>) -> Vec<T> {
        let mut t = vec![T::zero(); self.token_dim()];
        self.write_token(&d.x, Some(&d.y), &mut t);
        t
    }

    pub fn query_token<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let mut t = vec![T::zero(); self.token_dim()];
        self.write_token(x, None, &mut t);
        t
    }

    fn check_dims<T: Scalar>(&self, demos: &DemoSet<T>, x: &[T]) -> Result<()> {
        if demos.d_in() != self.d_in || x.len() != self.d_in {
            return Err(GradselError::DimensionMismatch { what: "d_in", expected: self.d_in, got: x.len().max(demos.d_in()) });
        }
        if demos.d_out() != self.d_out {
            return Err(GradselError::DimensionMismatch { what: "d_out", expected: self.d_out, got: demos.d_out() });
        }
        Ok(())
    }

    /// φ(S, x).
    pub fn embed<T: Scalar>(&self, demos: &DemoSet<T>, s: &PromptSubset, x: &[T]) -> Result<EmbeddingVector<T>> {
        if s.len() > self.k_max {
            return Err(GradselError::OversizeSubset { size: s.len(), k_max: self.k_max });
        }
        self.check_dims(demos, x)?;
        if let Some(&bad) = s.indices().iter().find(|&&i| i >= demos.len()) {
            return Err(GradselError::InvalidSubset(format!("index {bad} out of range")));
        }
        let mut v = vec![T::zero(); self.d_emb()];
        for (j, &i) in s.indices().iter().enumerate() {
            let d = demos.get(i);
            self.write_token(&d.x, Some(&d.y), &mut v[self.slot(j)]);
        }
        let q = self.query_slot();
        self.write_token(x, None, &mut v[q]);
        Ok(EmbeddingVector(v))
    }

    /// Replace the demonstration slots of an existing embedding with those of `s`,
    /// keeping its query slot.
    pub fn with_demos<T: Scalar>(&self, e: &EmbeddingVector<T>, demos: &DemoSet<T>, s: &PromptSubset) -> Result<EmbeddingVector<T>> {
        let q = self.query_slot();
        let x = e.0[q.start..q.start + self.d_in].to_vec();
        self.embed(demos, s, &x)
    }

    /// Slots `j < k_max` whose tokens differ between `s` and `s0`.
    pub fn differing_slots(&self, s: &PromptSubset, s0: &PromptSubset) -> Vec<usize> {
        let (a, b) = (s.indices(), s0.indices());
        (0..a.len().max(b.len())).filter(|&j| a.get(j) != b.get(j)).collect()
    }
}

/// Flat prompt encoding of length `d_emb`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVector<T>(pub Vec<T>);

impl<T> Deref for EmbeddingVector<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T> From<Vec<T>> for EmbeddingVector<T> {
    fn from(v: Vec<T>) -> Self {
        Self(v)
    }
}

/// ‖e − e0‖ / ‖e0‖.
pub fn relative_distance<T: Scalar>(e: &[T], e0: &[T]) -> Result<T> {
    if e.len() != e0.len() {
        return Err(GradselError::DimensionMismatch { what: "embedding", expected: e0.len(), got: e.len() });
    }
    let n0 = norm(e0);
    if n0 == T::zero() {
        return Err(GradselError::ZeroAnchorNorm);
    }
    let mut s = T::zero();
    for (&a, &b) in e.iter().zip(e0) {
        s += (a - b) * (a - b);
    }
    Ok(s.sqrt() / n0)
}

/// Distance-bucket lower edges used for error tables: 15%, 20%, …, 35%.
pub const DISTANCE_BUCKETS: [f64; 6] = [0.15, 0.20, 0.25, 0.30, 0.35, 0.40];

#[cfg(test)]
mod tests {
    use super::*;

    fn demos() -> DemoSet<f64> {
        DemoSet::new((0..10).map(|i| DemoExample::new(vec![i as f64 + 1.0, -1.0], vec![0.5 * i as f64 + 0.25])).collect()).unwrap()
    }

    #[test]
    fn empty_subset_only_fills_query_slot() {
        let l = EmbeddingLayout::new(4, 2, 1, TokenFeatures::Interaction).unwrap();
        let e = l.embed(&demos(), &PromptSubset::empty(), &[3.0, 4.0]).unwrap();
        assert_eq!(e.len(), l.d_emb());
        assert!(e[..l.query_slot().start].iter().all(|&v| v == 0.0));
        assert_eq!(&e[l.query_slot()], &[3.0, 4.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn full_subset_has_no_padding_and_lengths_agree() {
        let l = EmbeddingLayout::new(7, 2, 1, TokenFeatures::Plain).unwrap();
        let d = demos();
        let full = l.embed(&d, &PromptSubset::new((0..7).collect(), 10, 7).unwrap(), &[0.0, 0.0]).unwrap();
        for j in 0..7 {
            assert_eq!(full[l.slot(j)][l.flag_channel()], 1.0);
        }
        let small = l.embed(&d, &PromptSubset::new(vec![1, 2, 3], 10, 7).unwrap(), &[0.0, 0.0]).unwrap();
        assert_eq!(full.len(), small.len());
        assert_eq!(&small[l.slot(0)], &[2.0, -1.0, 0.75, 1.0]);
    }

    #[test]
    fn interaction_channel_is_product() {
        let l = EmbeddingLayout::new(1, 2, 1, TokenFeatures::Interaction).unwrap();
        let t = l.demo_token(&DemoExample::new(vec![2.0, -3.0], vec![0.5]));
        assert_eq!(t, vec![2.0, -3.0, 0.5, 1.0, -1.5, 1.0]);
    }

    #[test]
    fn oversize_rejected() {
        let l = EmbeddingLayout::new(2, 2, 1, TokenFeatures::Plain).unwrap();
        let s = PromptSubset::new(vec![0, 1, 2], 10, 10).unwrap();
        assert!(matches!(l.embed(&demos(), &s, &[0.0, 0.0]), Err(GradselError::OversizeSubset { .. })));
    }

    #[test]
    fn relative_distance_examples() {
        let e0 = vec![1.0, 2.0, 2.0];
        assert_eq!(relative_distance(&e0, &e0).unwrap(), 0.0);
        let e: Vec<f64> = e0.iter().map(|v| 2.0 * v).collect();
        assert!((relative_distance(&e, &e0).unwrap() - 1.0).abs() < 1e-15);
        assert!(relative_distance(&e0, &[0.0; 3]).is_err());
    }

    #[test]
    fn distance_depends_only_on_differing_slots() {
        let l = EmbeddingLayout::new(5, 2, 1, TokenFeatures::Interaction).unwrap();
        let d = demos();
        let s0 = PromptSubset::new(vec![0, 1, 2, 3], 10, 5).unwrap();
        let s = PromptSubset::new(vec![0, 7, 2], 10, 5).unwrap();
        assert_eq!(l.differing_slots(&s, &s0), vec![1, 3]);
        let (e, e0) = (l.embed(&d, &s, &[1.0, 1.0]).unwrap(), l.embed(&d, &s0, &[1.0, 1.0]).unwrap());
        for j in [0, 2, 4, 5] {
            assert_eq!(&e[l.slot(j)], &e0[l.slot(j)]);
        }
    }
}
