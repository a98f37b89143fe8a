//! Differentiable in-context models: forward outputs and exact gradients
//! with respect to the flat prompt embedding.

mod affine;
mod attention;
mod counted;
mod relu;
mod train;
mod weights;

pub use affine::AffineModel;
pub use attention::{AttentionGrads, LinearAttentionICL};
pub use counted::Counted;
pub use relu::TwoLayerReLU;
pub use train::{heldout_error, train_icl_model, Optimizer, PromptSource, TrainingConfig, TrainingReport};
pub use weights::{AnyModel, ModelFile, NamedArray, MODEL_FORMAT};

use crate::data::LossKind;
use crate::error::{GradselError, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// f_W(φ): one value per label position.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput<T> {
    pub value: Vec<T>,
}

/// ∇_φ f_W(φ): row `o` is the gradient of output component `o`.
#[derive(Clone, Debug, PartialEq)]
pub struct InputGradient<T> {
    pub rows: Matrix<T>,
}

pub trait IclModel<T: Scalar>: Send + Sync {
    fn d_emb(&self) -> usize;
    fn d_out(&self) -> usize;
    fn forward(&self, emb: &[T]) -> Result<ModelOutput<T>>;
    fn input_gradient(&self, emb: &[T]) -> Result<InputGradient<T>>;

    /// Output and gradient together (one forward plus one backward pass).
    fn forward_with_gradient(&self, emb: &[T]) -> Result<(ModelOutput<T>, InputGradient<T>)> {
        Ok((self.forward(emb)?, self.input_gradient(emb)?))
    }
}

impl<T: Scalar, M: IclModel<T> + ?Sized> IclModel<T> for &M {
    fn d_emb(&self) -> usize {
        (**self).d_emb()
    }
    fn d_out(&self) -> usize {
        (**self).d_out()
    }
    fn forward(&self, emb: &[T]) -> Result<ModelOutput<T>> {
        (**self).forward(emb)
    }
    fn input_gradient(&self, emb: &[T]) -> Result<InputGradient<T>> {
        (**self).input_gradient(emb)
    }
    fn forward_with_gradient(&self, emb: &[T]) -> Result<(ModelOutput<T>, InputGradient<T>)> {
        (**self).forward_with_gradient(emb)
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(GradselError::DimensionMismatch { what, expected, got });
    }
    Ok(())
}

/// log(1 + eᶻ) without overflow.
fn softplus<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// ℓ(pred, y). Squared error is ‖pred − y‖²; the logistic loss is
/// `log(1 + exp(−(2y−1)·logit))`, summed over label positions.
pub fn loss<T: Scalar>(kind: LossKind, pred: &[T], y: &[T]) -> Result<T> {
    check_len("label", pred.len(), y.len())?;
    match kind {
        LossKind::SquaredError => Ok(pred.iter().zip(y).map(|(&p, &t)| (p - t) * (p - t)).sum()),
        LossKind::Logistic => {
            let mut s = T::zero();
            for (&logit, &t) in pred.iter().zip(y) {
                if t != T::zero() && t != T::one() {
                    return Err(GradselError::LabelDomain { value: t.f64() });
                }
                let sign = T::of(2.0) * t - T::one();
                s += softplus(-sign * logit);
            }
            Ok(s)
        }
    }
}

/// ℓ applied to a scalar estimate (single label position).
pub fn loss_of_estimate<T: Scalar>(kind: LossKind, estimate: T, y: T) -> Result<T> {
    loss(kind, &[estimate], &[y])
}
