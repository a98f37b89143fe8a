//! `model.v1` weight files: a header naming the model kind and its
//! dimensions, then named row-major arrays.

use super::{AffineModel, IclModel, InputGradient, LinearAttentionICL, ModelOutput, TwoLayerReLU};
use crate::embedding::EmbeddingLayout;
use crate::error::{GradselError, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const MODEL_FORMAT: &str = "model.v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub d_emb: usize,
    pub d_out: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<EmbeddingLayout>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trained: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub model_kind: String,
    pub dims: Dims,
    pub arrays: Vec<NamedArray>,
    /// Free-form provenance (seed, config digest); ignored when loading.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

/// Any of the supported models, for code that loads weights from disk.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyModel<T> {
    Affine(AffineModel<T>),
    Relu(TwoLayerReLU<T>),
    Attention(LinearAttentionICL<T>),
}

fn mat_array<T: Scalar>(name: &str, m: &Matrix<T>) -> NamedArray {
    NamedArray { name: name.into(), shape: vec![m.rows(), m.cols()], values: m.as_slice().iter().map(|v| v.f64()).collect() }
}

fn vec_array<T: Scalar>(name: &str, v: &[T]) -> NamedArray {
    NamedArray { name: name.into(), shape: vec![v.len()], values: v.iter().map(|a| a.f64()).collect() }
}

impl ModelFile {
    fn array(&self, name: &str) -> Result<&NamedArray> {
        let a = self
            .arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| GradselError::Format(format!("missing array `{name}`")))?;
        if a.shape.iter().product::<usize>() != a.values.len() {
            return Err(GradselError::Format(format!("array `{name}` shape disagrees with its length")));
        }
        Ok(a)
    }

    fn matrix<T: Scalar>(&self, name: &str) -> Result<Matrix<T>> {
        let a = self.array(name)?;
        let [r, c] = a.shape[..] else {
            return Err(GradselError::Format(format!("array `{name}` must be 2-d")));
        };
        Matrix::from_vec(r, c, a.values.iter().map(|&v| T::of(v)).collect())
    }

    fn vector<T: Scalar>(&self, name: &str) -> Result<Vec<T>> {
        let a = self.array(name)?;
        if a.shape.len() != 1 {
            return Err(GradselError::Format(format!("array `{name}` must be 1-d")));
        }
        Ok(a.values.iter().map(|&v| T::of(v)).collect())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

impl<T: Scalar> AnyModel<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            AnyModel::Affine(_) => "affine",
            AnyModel::Relu(_) => "two_layer_relu",
            AnyModel::Attention(_) => "linear_attention",
        }
    }

    pub fn to_file(&self) -> ModelFile {
        let (dims, arrays) = match self {
            AnyModel::Affine(m) => (
                Dims { d_emb: m.d_emb(), d_out: m.d_out(), hidden: None, key_dim: None, layout: None, trained: None },
                vec![mat_array("w", &m.w), vec_array("b", &m.b)],
            ),
            AnyModel::Relu(m) => (
                Dims { d_emb: m.d_emb(), d_out: m.d_out(), hidden: Some(m.hidden()), key_dim: None, layout: None, trained: None },
                vec![mat_array("w1", &m.w1), vec_array("b1", &m.b1), mat_array("w2", &m.w2), vec_array("b2", &m.b2)],
            ),
            AnyModel::Attention(m) => (
                Dims {
                    d_emb: m.d_emb(),
                    d_out: m.d_out(),
                    hidden: None,
                    key_dim: Some(m.key_dim),
                    layout: Some(m.layout),
                    trained: Some(m.trained),
                },
                vec![
                    mat_array("wk", &m.wk),
                    mat_array("wq", &m.wq),
                    mat_array("wv", &m.wv),
                    vec_array("log_ridge", &[m.log_ridge]),
                    vec_array("b", &m.b),
                ],
            ),
        };
        ModelFile { format: MODEL_FORMAT.into(), model_kind: self.kind().into(), dims, arrays, meta: BTreeMap::new() }
    }

    pub fn from_file(f: &ModelFile) -> Result<Self> {
        if f.format != MODEL_FORMAT {
            return Err(GradselError::Format(format!("unsupported model format `{}`", f.format)));
        }
        let model = match f.model_kind.as_str() {
            "affine" => AnyModel::Affine(AffineModel::new(f.matrix("w")?, f.vector("b")?)?),
            "two_layer_relu" => AnyModel::Relu(TwoLayerReLU::new(f.matrix("w1")?, f.vector("b1")?, f.matrix("w2")?, f.vector("b2")?)?),
            "linear_attention" => {
                let layout = f.dims.layout.ok_or_else(|| GradselError::Format("attention model needs a layout".into()))?;
                let wk: Matrix<T> = f.matrix("wk")?;
                let m = LinearAttentionICL {
                    layout,
                    key_dim: wk.rows(),
                    wk,
                    wq: f.matrix("wq")?,
                    wv: f.matrix("wv")?,
                    log_ridge: *f.vector::<T>("log_ridge")?.first().ok_or_else(|| GradselError::Format("empty log_ridge".into()))?,
                    b: f.vector("b")?,
                    trained: f.dims.trained.unwrap_or(false),
                };
                m.validate()?;
                AnyModel::Attention(m)
            }
            other => return Err(GradselError::Format(format!("unknown model kind `{other}`"))),
        };
        if model.d_emb() != f.dims.d_emb || model.d_out() != f.dims.d_out {
            return Err(GradselError::Format("header dims disagree with the arrays".into()));
        }
        Ok(model)
    }

    pub fn layout(&self) -> Option<EmbeddingLayout> {
        match self {
            AnyModel::Attention(m) => Some(m.layout),
            _ => None,
        }
    }
}

impl<T: Scalar> IclModel<T> for AnyModel<T> {
    fn d_emb(&self) -> usize {
        match self {
            AnyModel::Affine(m) => m.d_emb(),
            AnyModel::Relu(m) => m.d_emb(),
            AnyModel::Attention(m) => m.d_emb(),
        }
    }
    fn d_out(&self) -> usize {
        match self {
            AnyModel::Affine(m) => m.d_out(),
            AnyModel::Relu(m) => m.d_out(),
            AnyModel::Attention(m) => m.d_out(),
        }
    }
    fn forward(&self, emb: &[T]) -> Result<ModelOutput<T>> {
        match self {
            AnyModel::Affine(m) => m.forward(emb),
            AnyModel::Relu(m) => m.forward(emb),
            AnyModel::Attention(m) => m.forward(emb),
        }
    }
    fn input_gradient(&self, emb: &[T]) -> Result<InputGradient<T>> {
        match self {
            AnyModel::Affine(m) => m.input_gradient(emb),
            AnyModel::Relu(m) => m.input_gradient(emb),
            AnyModel::Attention(m) => m.input_gradient(emb),
        }
    }
    fn forward_with_gradient(&self, emb: &[T]) -> Result<(ModelOutput<T>, InputGradient<T>)> {
        match self {
            AnyModel::Affine(m) => m.forward_with_gradient(emb),
            AnyModel::Relu(m) => m.forward_with_gradient(emb),
            AnyModel::Attention(m) => m.forward_with_gradient(emb),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::TokenFeatures;

    #[test]
    fn every_kind_round_trips() {
        let layout = EmbeddingLayout::new(3, 2, 1, TokenFeatures::Interaction).unwrap();
        let models: Vec<AnyModel<f64>> = vec![
            AnyModel::Affine(AffineModel::random(layout.d_emb(), 1, 1)),
            AnyModel::Relu(TwoLayerReLU::random(layout.d_emb(), 5, 1, 2)),
            AnyModel::Attention(LinearAttentionICL::random(layout, 2, 3)),
        ];
        for m in models {
            let json = m.to_file().to_json().unwrap();
            let back = AnyModel::<f64>::from_file(&serde_json::from_str(&json).unwrap()).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn rejects_wrong_format_and_shapes() {
        let m = AnyModel::Affine(AffineModel::<f64>::random(4, 1, 1));
        let mut f = m.to_file();
        f.format = "model.v0".into();
        assert!(AnyModel::<f64>::from_file(&f).is_err());
        let mut f = m.to_file();
        f.arrays[0].shape = vec![2, 3];
        assert!(AnyModel::<f64>::from_file(&f).is_err());
    }
}
