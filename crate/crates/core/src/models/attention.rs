//! Single-layer linear self-attention with a least-squares normalised
//! key Gram matrix.
//!
//! With demonstration tokens z_j, query token z_q, keys k_j = W_K z_j and
//! n = max(Σ flag_j, 1):
//!
//! ```text
//! G   = (1/n) Σ_j k_j k_jᵀ + ρ I          ρ = exp(log_ridge)
//! c_o = (1/n) Σ_j V_o z_j                 V_o = rows o·p..(o+1)·p of W_V
//! out_o = (W_Q z_q)ᵀ G⁻¹ c_o + b_o
//! ```
//!
//! One layer of this form can represent ridge regression on the prompt, which
//! plain (unnormalised) linear attention cannot do in a single step.

use super::{check_len, IclModel, InputGradient, ModelOutput};
use crate::embedding::EmbeddingLayout;
use crate::error::{GradselError, Result};
use crate::linalg::{axpy, dot, orthonormalize_rows, Cholesky, Matrix};
use crate::rng::{normal, stream, streams};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearAttentionICL<T> {
    pub layout: EmbeddingLayout,
    /// key/query dimension p
    pub key_dim: usize,
    /// p × token_dim
    pub wk: Matrix<T>,
    /// p × token_dim
    pub wq: Matrix<T>,
    /// (d_out·p) × token_dim
    pub wv: Matrix<T>,
    pub log_ridge: T,
    /// readout offset, one per label position
    pub b: Vec<T>,
    pub trained: bool,
}

/// Parameter gradients, same shapes as the model.
#[derive(Clone, Debug)]
pub struct AttentionGrads<T> {
    pub wk: Matrix<T>,
    pub wq: Matrix<T>,
    pub wv: Matrix<T>,
    pub log_ridge: T,
    pub b: Vec<T>,
}

impl<T: Scalar> AttentionGrads<T> {
    pub fn zeros_like(m: &LinearAttentionICL<T>) -> Self {
        Self {
            wk: Matrix::zeros(m.wk.rows(), m.wk.cols()),
            wq: Matrix::zeros(m.wq.rows(), m.wq.cols()),
            wv: Matrix::zeros(m.wv.rows(), m.wv.cols()),
            log_ridge: T::zero(),
            b: vec![T::zero(); m.b.len()],
        }
    }

    pub fn add(&mut self, o: &Self) {
        axpy(T::one(), o.wk.as_slice(), self.wk.as_mut_slice());
        axpy(T::one(), o.wq.as_slice(), self.wq.as_mut_slice());
        axpy(T::one(), o.wv.as_slice(), self.wv.as_mut_slice());
        self.log_ridge += o.log_ridge;
        axpy(T::one(), &o.b, &mut self.b);
    }
}

/// Intermediate quantities shared by the forward and backward passes.
struct State<T> {
    /// keys of the demonstration slots, k_max × p
    keys: Matrix<T>,
    /// Σ_j z_j
    zsum: Vec<T>,
    n: T,
    /// whether n tracks Σ flags (false when clamped at 1)
    n_active: bool,
    chol: Cholesky<T>,
    /// G⁻¹ q
    mu: Vec<T>,
    /// c_o for every output, d_out × p
    c: Matrix<T>,
    rho: T,
}

impl<T: Scalar> LinearAttentionICL<T> {
    /// Trainable initialisation: W_K = W_Q = a random orthonormal map on the
    /// input channels (plus small noise), W_V = 0, readout 0.
    pub fn init(layout: EmbeddingLayout, key_dim: usize, log_ridge: f64, seed: u64) -> Result<Self> {
        if key_dim < 1 {
            return Err(GradselError::InvalidConfig("key_dim must be ≥ 1".into()));
        }
        let d = layout.token_dim();
        let di = layout.d_in;
        let mut rng = stream(seed, streams::INIT);
        let mut basis = Matrix::from_fn(key_dim, di, |_, _| normal::<T, _>(&mut rng));
        orthonormalize_rows(&mut basis);
        let wk = Matrix::from_fn(key_dim, d, |i, j| {
            if j < di {
                basis[(i, j)] + T::of(0.01) * normal::<T, _>(&mut rng)
            } else {
                T::zero()
            }
        });
        Ok(Self {
            layout,
            key_dim,
            wq: wk.clone(),
            wk,
            wv: Matrix::zeros(layout.d_out * key_dim, d),
            log_ridge: T::of(log_ridge),
            b: vec![T::zero(); layout.d_out],
            trained: false,
        })
    }

    /// Fully random parameters (used for gradient checks).
    pub fn random(layout: EmbeddingLayout, key_dim: usize, seed: u64) -> Self {
        let d = layout.token_dim();
        let mut rng = stream(seed, streams::INIT);
        let s = T::of(1.0 / (d as f64).sqrt());
        let mut mat = |r: usize| Matrix::from_fn(r, d, |_, _| normal::<T, _>(&mut rng) * s);
        let wk = mat(key_dim);
        let wq = mat(key_dim);
        let wv = mat(layout.d_out * key_dim);
        let b = (0..layout.d_out).map(|_| normal::<T, _>(&mut rng) * T::of(0.1)).collect();
        Self { layout, key_dim, wk, wq, wv, log_ridge: T::of(-1.0), b, trained: false }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.layout.token_dim();
        let p = self.key_dim;
        for (what, m, r) in [("wk", &self.wk, p), ("wq", &self.wq, p), ("wv", &self.wv, self.layout.d_out * p)] {
            if m.shape() != (r, d) {
                return Err(GradselError::Format(format!("{what} has shape {:?}, expected ({r}, {d})", m.shape())));
            }
            if !m.is_finite() {
                return Err(GradselError::Format(format!("{what} is not finite")));
            }
        }
        check_len("readout", self.layout.d_out, self.b.len())?;
        if !self.log_ridge.is_finite() || self.b.iter().any(|v| !v.is_finite()) {
            return Err(GradselError::Format("non-finite attention parameters".into()));
        }
        Ok(())
    }

    pub fn ridge(&self) -> T {
        self.log_ridge.exp()
    }

    fn state(&self, emb: &[T]) -> Result<State<T>> {
        check_len("embedding", self.layout.d_emb(), emb.len())?;
        let p = self.key_dim;
        let d = self.layout.token_dim();
        let flag = self.layout.flag_channel();
        let mut keys = Matrix::zeros(self.layout.k_max, p);
        let mut gram = Matrix::zeros(p, p);
        let mut zsum = vec![T::zero(); d];
        let mut flags = T::zero();
        for j in 0..self.layout.k_max {
            let z = &emb[self.layout.slot(j)];
            if z.iter().all(|&v| v == T::zero()) {
                continue;
            }
            let k = self.wk.matvec(z);
            gram.add_outer(T::one(), &k, &k);
            keys.row_mut(j).copy_from_slice(&k);
            axpy(T::one(), z, &mut zsum);
            flags += z[flag];
        }
        let n_active = flags >= T::one();
        let n = if n_active { flags } else { T::one() };
        let rho = self.ridge();
        for v in gram.as_mut_slice() {
            *v /= n;
        }
        for i in 0..p {
            gram[(i, i)] += rho;
        }
        let chol = Cholesky::new(&gram)?;
        let q = self.wq.matvec(&emb[self.layout.query_slot()]);
        let mu = chol.solve(&q);
        let mut c = Matrix::zeros(self.layout.d_out, p);
        for o in 0..self.layout.d_out {
            for r in 0..p {
                c[(o, r)] = dot(self.wv.row(o * p + r), &zsum) / n;
            }
        }
        Ok(State { keys, zsum, n, n_active, chol, mu, c, rho })
    }

    fn output(&self, st: &State<T>) -> Vec<T> {
        (0..self.layout.d_out).map(|o| dot(&st.mu, st.c.row(o)) + self.b[o]).collect()
    }

    /// Accumulate parameter gradients of `Σ_o upstream[o]·out_o` into `g`;
    /// returns the outputs.
    pub fn backward_params(&self, emb: &[T], upstream: &[T], g: &mut AttentionGrads<T>) -> Result<Vec<T>> {
        let st = self.state(emb)?;
        let out = self.output(&st);
        let p = self.key_dim;
        let zq = &emb[self.layout.query_slot()];
        for (o, &e) in upstream.iter().enumerate() {
            if e == T::zero() {
                continue;
            }
            let u = st.chol.solve(st.c.row(o));
            g.b[o] += e;
            g.wq.add_outer(e, &u, zq);
            for r in 0..p {
                axpy(e * st.mu[r] / st.n, &st.zsum, g.wv.row_mut(o * p + r));
            }
            g.log_ridge -= e * dot(&st.mu, &u) * st.rho;
            let scale = -e / st.n;
            let mut w = vec![T::zero(); p];
            for j in 0..self.layout.k_max {
                let z = &emb[self.layout.slot(j)];
                if z.iter().all(|&v| v == T::zero()) {
                    continue;
                }
                let k = st.keys.row(j);
                let (ku, km) = (dot(k, &u), dot(k, &st.mu));
                for r in 0..p {
                    w[r] = st.mu[r] * ku + u[r] * km;
                }
                g.wk.add_outer(scale, &w, z);
            }
        }
        Ok(out)
    }
}

impl<T: Scalar> IclModel<T> for LinearAttentionICL<T> {
    fn d_emb(&self) -> usize {
        self.layout.d_emb()
    }
    fn d_out(&self) -> usize {
        self.layout.d_out
    }
    fn forward(&self, emb: &[T]) -> Result<ModelOutput<T>> {
        let st = self.state(emb)?;
        Ok(ModelOutput { value: self.output(&st) })
    }
    fn input_gradient(&self, emb: &[T]) -> Result<InputGradient<T>> {
        Ok(self.forward_with_gradient(emb)?.1)
    }
    fn forward_with_gradient(&self, emb: &[T]) -> Result<(ModelOutput<T>, InputGradient<T>)> {
        let st = self.state(emb)?;
        let p = self.key_dim;
        let d = self.layout.token_dim();
        let flag = self.layout.flag_channel();
        let mut rows = Matrix::zeros(self.layout.d_out, self.layout.d_emb());
        // W_Kᵀ μ is shared by every output
        let wk_mu = self.wk.matvec_t(&st.mu);
        for o in 0..self.layout.d_out {
            let u = st.chol.solve(st.c.row(o));
            let wq_u = self.wq.matvec_t(&u);
            let wk_u = self.wk.matvec_t(&u);
            let mut v_mu = vec![T::zero(); d];
            for r in 0..p {
                axpy(st.mu[r], self.wv.row(o * p + r), &mut v_mu);
            }
            let flag_term = if st.n_active { -st.rho * dot(&st.mu, &u) / st.n } else { T::zero() };
            let row = rows.row_mut(o);
            for j in 0..self.layout.k_max {
                let k = st.keys.row(j);
                let (ku, km) = (dot(k, &u), dot(k, &st.mu));
                let g = &mut row[self.layout.slot(j)];
                for c in 0..d {
                    g[c] = (v_mu[c] - ku * wk_mu[c] - km * wk_u[c]) / st.n;
                }
                g[flag] += flag_term;
            }
            row[self.layout.query_slot()].copy_from_slice(&wq_u);
        }
        Ok((ModelOutput { value: self.output(&st) }, InputGradient { rows }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DemoExample, DemoSet, PromptSubset};
    use crate::embedding::TokenFeatures;

    fn setup() -> (LinearAttentionICL<f64>, Vec<f64>) {
        let layout = EmbeddingLayout::new(6, 3, 2, TokenFeatures::Interaction).unwrap();
        let m = LinearAttentionICL::random(layout, 4, 3);
        let mut rng = stream(1, 0);
        let demos = DemoSet::new(
            (0..8)
                .map(|_| DemoExample::new((0..3).map(|_| normal(&mut rng)).collect(), (0..2).map(|_| normal(&mut rng)).collect()))
                .collect(),
        )
        .unwrap();
        let s = PromptSubset::new(vec![4, 1, 7, 2], 8, 6).unwrap();
        let e = layout.embed(&demos, &s, &[0.3, -0.2, 1.1]).unwrap().0;
        (m, e)
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let (m, e) = setup();
        let g = m.input_gradient(&e).unwrap();
        let h = 1e-6;
        for o in 0..2 {
            for i in 0..e.len() {
                let (mut a, mut b) = (e.clone(), e.clone());
                a[i] += h;
                b[i] -= h;
                let fd = (m.forward(&a).unwrap().value[o] - m.forward(&b).unwrap().value[o]) / (2.0 * h);
                let an = g.rows[(o, i)];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + an.abs()), "o={o} i={i} fd={fd} an={an}");
            }
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let (m, e) = setup();
        let up = [0.7, -1.3];
        let mut g = AttentionGrads::zeros_like(&m);
        m.backward_params(&e, &up, &mut g).unwrap();
        let f = |m: &LinearAttentionICL<f64>| {
            let v = m.forward(&e).unwrap().value;
            up[0] * v[0] + up[1] * v[1]
        };
        let h = 1e-6;
        let check = |name: &str, get: &dyn Fn(&mut LinearAttentionICL<f64>) -> &mut f64, an: f64| {
            let (mut a, mut b) = (m.clone(), m.clone());
            *get(&mut a) += h;
            *get(&mut b) -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            assert!((fd - an).abs() < 1e-6 * (1.0 + an.abs()), "{name}: fd={fd} an={an}");
        };
        for (r, c) in [(0, 0), (1, 3), (3, 9), (2, 11)] {
            check("wk", &|m| &mut m.wk[(r, c)], g.wk[(r, c)]);
            check("wq", &|m| &mut m.wq[(r, c)], g.wq[(r, c)]);
        }
        for (r, c) in [(0, 0), (5, 4), (7, 11)] {
            check("wv", &|m| &mut m.wv[(r, c)], g.wv[(r, c)]);
        }
        check("log_ridge", &|m| &mut m.log_ridge, g.log_ridge);
        check("b", &|m| &mut m.b[1], g.b[1]);
    }

    #[test]
    fn padding_does_not_change_output() {
        let (m, e) = setup();
        let l = m.layout;
        // move the query into a bigger layout: padding grows, output must not change
        let big = EmbeddingLayout::new(9, l.d_in, l.d_out, l.features).unwrap();
        let mut m2 = m.clone();
        m2.layout = big;
        let mut e2 = vec![0.0; big.d_emb()];
        e2[..l.k_max * l.token_dim()].copy_from_slice(&e[..l.k_max * l.token_dim()]);
        let qs = big.query_slot();
        e2[qs].copy_from_slice(&e[l.query_slot()]);
        let (a, b) = (m.forward(&e).unwrap().value, m2.forward(&e2).unwrap().value);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
