use super::{check_len, IclModel, InputGradient, ModelOutput};
use crate::error::{GradselError, Result};
use crate::linalg::{axpy, dot, Matrix};
use crate::rng::{normal, stream, streams};
use crate::scalar::Scalar;

/// f(φ) = W2·relu(W1·φ + b1) + b2 on the flat embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoLayerReLU<T> {
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    pub w2: Matrix<T>,
    pub b2: Vec<T>,
}

impl<T: Scalar> TwoLayerReLU<T> {
    pub fn new(w1: Matrix<T>, b1: Vec<T>, w2: Matrix<T>, b2: Vec<T>) -> Result<Self> {
        if w1.rows() < 1 {
            return Err(GradselError::InvalidConfig("hidden width must be ≥ 1".into()));
        }
        check_len("b1", w1.rows(), b1.len())?;
        check_len("w2 columns", w1.rows(), w2.cols())?;
        check_len("b2", w2.rows(), b2.len())?;
        let finite = w1.is_finite() && w2.is_finite() && b1.iter().chain(&b2).all(|v| v.is_finite());
        if !finite {
            return Err(GradselError::InvalidConfig("ReLU weights must be finite".into()));
        }
        Ok(Self { w1, b1, w2, b2 })
    }

    /// He initialisation; hidden biases ~ 0.1·N(0,1), output bias zero.
    pub fn random(d_emb: usize, hidden: usize, d_out: usize, seed: u64) -> Self {
        let mut rng = stream(seed, streams::INIT);
        let s1 = T::of((2.0 / d_emb as f64).sqrt());
        let w1 = Matrix::from_fn(hidden, d_emb, |_, _| normal::<T, _>(&mut rng) * s1);
        let b1 = (0..hidden).map(|_| normal::<T, _>(&mut rng) * T::of(0.1)).collect();
        let s2 = T::of(1.0 / (hidden as f64).sqrt());
        let w2 = Matrix::from_fn(d_out, hidden, |_, _| normal::<T, _>(&mut rng) * s2);
        Self { w1, b1, w2, b2: vec![T::zero(); d_out] }
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }

    fn preact(&self, emb: &[T]) -> Result<Vec<T>> {
        check_len("embedding", self.w1.cols(), emb.len())?;
        Ok((0..self.hidden()).map(|h| dot(self.w1.row(h), emb) + self.b1[h]).collect())
    }
}

impl<T: Scalar> IclModel<T> for TwoLayerReLU<T> {
    fn d_emb(&self) -> usize {
        self.w1.cols()
    }
    fn d_out(&self) -> usize {
        self.w2.rows()
    }
    fn forward(&self, emb: &[T]) -> Result<ModelOutput<T>> {
        let a: Vec<T> = self.preact(emb)?.into_iter().map(|z| z.max(T::zero())).collect();
        let mut v = self.w2.matvec(&a);
        v.iter_mut().zip(&self.b2).for_each(|(o, &b)| *o += b);
        Ok(ModelOutput { value: v })
    }
    fn input_gradient(&self, emb: &[T]) -> Result<InputGradient<T>> {
        let z = self.preact(emb)?;
        let mut rows = Matrix::zeros(self.d_out(), self.d_emb());
        for o in 0..self.d_out() {
            let out = rows.row_mut(o);
            for (h, &zh) in z.iter().enumerate() {
                // subgradient 0 at the kink
                if zh > T::zero() {
                    axpy(self.w2[(o, h)], self.w1.row(h), out);
                }
            }
        }
        Ok(InputGradient { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_outputs_b2() {
        let m = TwoLayerReLU::new(Matrix::zeros(4, 3), vec![0.0; 4], Matrix::zeros(2, 4), vec![1.5, -2.0]).unwrap();
        assert_eq!(m.forward(&[3.0, 1.0, -1.0]).unwrap().value, vec![1.5, -2.0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = TwoLayerReLU::<f64>::random(8, 16, 2, 11);
        let mut rng = stream(5, 0);
        let e: Vec<f64> = (0..8).map(|_| normal(&mut rng)).collect();
        let g = m.input_gradient(&e).unwrap();
        let h = 1e-6;
        for o in 0..2 {
            for i in 0..8 {
                let (mut a, mut b) = (e.clone(), e.clone());
                a[i] += h;
                b[i] -= h;
                let fd = (m.forward(&a).unwrap().value[o] - m.forward(&b).unwrap().value[o]) / (2.0 * h);
                assert!((fd - g.rows[(o, i)]).abs() < 1e-7);
            }
        }
    }
}
