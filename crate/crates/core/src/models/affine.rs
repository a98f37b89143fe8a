use super::{check_len, IclModel, InputGradient, ModelOutput};
use crate::error::{GradselError, Result};
use crate::linalg::Matrix;
use crate::rng::{normal, stream, streams};
use crate::scalar::Scalar;

/// f(φ) = Wφ + b. First-order estimation is exact for this model.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineModel<T> {
    pub w: Matrix<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> AffineModel<T> {
    pub fn new(w: Matrix<T>, b: Vec<T>) -> Result<Self> {
        check_len("affine bias", w.rows(), b.len())?;
        if !w.is_finite() || b.iter().any(|v| !v.is_finite()) {
            return Err(GradselError::InvalidConfig("affine weights must be finite".into()));
        }
        Ok(Self { w, b })
    }

    /// Gaussian weights with variance 1/d_emb.
    pub fn random(d_emb: usize, d_out: usize, seed: u64) -> Self {
        let mut rng = stream(seed, streams::INIT);
        let s = T::of(1.0 / (d_emb as f64).sqrt());
        let w = Matrix::from_fn(d_out, d_emb, |_, _| normal::<T, _>(&mut rng) * s);
        let b = (0..d_out).map(|_| normal(&mut rng)).collect();
        Self { w, b }
    }
}

impl<T: Scalar> IclModel<T> for AffineModel<T> {
    fn d_emb(&self) -> usize {
        self.w.cols()
    }
    fn d_out(&self) -> usize {
        self.w.rows()
    }
    fn forward(&self, emb: &[T]) -> Result<ModelOutput<T>> {
        check_len("embedding", self.w.cols(), emb.len())?;
        let mut v = self.w.matvec(emb);
        v.iter_mut().zip(&self.b).for_each(|(a, &b)| *a += b);
        Ok(ModelOutput { value: v })
    }
    fn input_gradient(&self, emb: &[T]) -> Result<InputGradient<T>> {
        check_len("embedding", self.w.cols(), emb.len())?;
        Ok(InputGradient { rows: self.w.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_is_affine_and_gradient_is_w() {
        let w = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.0, 0.5]).unwrap();
        let m = AffineModel::new(w.clone(), vec![0.5, -0.5]).unwrap();
        assert_eq!(m.forward(&[1.0, 1.0, 2.0]).unwrap().value, vec![9.5, -0.5]);
        assert_eq!(m.input_gradient(&[0.0; 3]).unwrap().rows, w);
        assert!(m.forward(&[1.0]).is_err());
    }

    #[test]
    fn first_order_expansion_is_exact() {
        let m = AffineModel::<f64>::random(6, 1, 3);
        let e0 = [0.1, 0.2, -0.3, 0.4, 0.0, 1.0];
        let e1 = [1.1, -0.2, 0.3, 0.0, 2.0, 1.0];
        let g = m.input_gradient(&e0).unwrap();
        let delta: Vec<f64> = e1.iter().zip(&e0).map(|(a, b)| a - b).collect();
        let est = m.forward(&e0).unwrap().value[0] + crate::linalg::dot(g.rows.row(0), &delta);
        let f1 = m.forward(&e1).unwrap().value[0];
        assert!(((est - f1) / f1).abs() < 1e-12);
    }
}
