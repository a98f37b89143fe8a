use gradsel::linalg::Matrix;
use gradsel::models::*;
use gradsel::rng::{normal_vec, stream};
use gradsel::tasks::TrainingTask;
use gradsel::{DemoExample, DemoSet, EmbeddingLayout, PromptSubset, TokenFeatures};
use nalgebra::{DMatrix, DVector};
use std::sync::OnceLock;

fn layout() -> EmbeddingLayout {
    EmbeddingLayout::new(20, 5, 1, TokenFeatures::Interaction).unwrap()
}

fn trained() -> &'static LinearAttentionICL<f64> {
    static M: OnceLock<LinearAttentionICL<f64>> = OnceLock::new();
    M.get_or_init(|| {
        let l = layout();
        let init = LinearAttentionICL::init(l, 10, -4.0, 0).unwrap();
        let cfg = TrainingConfig { steps: 1500, ..Default::default() };
        train_icl_model(init, &cfg, &TrainingTask::Linear.sampler(l).unwrap()).unwrap().0
    })
}

/// Least squares prediction at `xq` from the prompt's demonstrations.
fn ols_prediction(xs: &[Vec<f64>], ys: &[f64], xq: &[f64]) -> f64 {
    let x = DMatrix::from_fn(xs.len(), xq.len(), |i, j| xs[i][j]);
    let y = DVector::from_column_slice(ys);
    let beta = x.svd(true, true).solve(&y, 1e-12).unwrap();
    beta.dot(&DVector::from_column_slice(xq))
}

#[test]
fn trained_attention_tracks_least_squares() {
    let l = layout();
    let model = trained();
    let mut rng = stream(42, 0);
    let (mut se, mut var) = (0.0, 0.0);
    for _ in 0..200 {
        let beta = normal_vec::<f64, _>(&mut rng, 5, 1.0);
        let xs: Vec<Vec<f64>> = (0..20).map(|_| normal_vec(&mut rng, 5, 1.0)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.iter().zip(&beta).map(|(a, b)| a * b).sum()).collect();
        let xq = normal_vec::<f64, _>(&mut rng, 5, 1.0);
        let demos = DemoSet::new(xs.iter().zip(&ys).map(|(x, &y)| DemoExample::new(x.clone(), vec![y])).collect()).unwrap();
        let s = PromptSubset::new((0..20).collect(), 20, 20).unwrap();
        let pred = model.forward(&l.embed(&demos, &s, &xq).unwrap()).unwrap().value[0];
        let ols = ols_prediction(&xs, &ys, &xq);
        se += (pred - ols).powi(2);
        var += ols * ols;
    }
    assert!(se / var < 0.05, "relative error {}", se / var);
}

#[test]
fn zero_steps_returns_the_initialisation() {
    let l = layout();
    let init = LinearAttentionICL::<f64>::init(l, 10, -4.0, 3).unwrap();
    let cfg = TrainingConfig { steps: 0, ..Default::default() };
    let (m, rep) = train_icl_model(init.clone(), &cfg, &TrainingTask::Linear.sampler(l).unwrap()).unwrap();
    assert_eq!(m, init);
    assert!(rep.loss_trace.is_empty());
}

#[test]
fn training_is_reproducible() {
    let l = layout();
    let init = LinearAttentionICL::<f64>::init(l, 10, -4.0, 3).unwrap();
    let cfg = TrainingConfig { steps: 20, ..Default::default() };
    let src = TrainingTask::Mixture.sampler(l).unwrap();
    let (a, ra) = train_icl_model(init.clone(), &cfg, &src).unwrap();
    let (b, rb) = train_icl_model(init, &cfg, &src).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
}

#[test]
fn noisy_training_approaches_the_noise_floor() {
    let l = layout();
    let init = LinearAttentionICL::<f64>::init(l, 10, -4.0, 0).unwrap();
    let src = TrainingTask::NoisyLinear.sampler(l).unwrap();
    let cfg = TrainingConfig { steps: 1000, ..Default::default() };
    let (m, _) = train_icl_model(init, &cfg, &src).unwrap();
    let err = heldout_error(&m, &src, 1000, 1).unwrap();
    // unit noise plus the least-squares excess risk d/(k−d−1) ≈ 0.36 at k = 19
    assert!(err > 0.9 && err < 2.0, "held-out error {err}");
}

#[test]
fn mismatched_source_layout_is_rejected() {
    let init = LinearAttentionICL::<f64>::init(layout(), 10, -4.0, 0).unwrap();
    let other = EmbeddingLayout::new(10, 5, 1, TokenFeatures::Interaction).unwrap();
    let r = train_icl_model(init, &TrainingConfig::default(), &TrainingTask::Linear.sampler(other).unwrap());
    assert!(r.is_err());
}

#[test]
fn affine_output_and_gradient() {
    let w = Matrix::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
    let m = AffineModel::new(w, vec![0.25]).unwrap();
    assert_eq!(m.forward(&[2.0, 1.0, 4.0]).unwrap().value, vec![2.25]);
    assert_eq!(m.input_gradient(&[9.0, 9.0, 9.0]).unwrap().rows.row(0), &[1.0, -2.0, 0.5]);
}

#[test]
fn zero_relu_outputs_its_bias_with_zero_gradient() {
    let m = TwoLayerReLU::new(Matrix::zeros(4, 3), vec![0.0; 4], Matrix::zeros(1, 4), vec![-0.5]).unwrap();
    assert_eq!(m.forward(&[1.0, 2.0, 3.0]).unwrap().value, vec![-0.5]);
    assert!(m.input_gradient(&[1.0, 2.0, 3.0]).unwrap().rows.row(0).iter().all(|&g| g == 0.0));
}

#[test]
fn shape_errors_are_reported() {
    let m = AffineModel::<f64>::random(6, 1, 0);
    assert!(m.forward(&[0.0; 5]).is_err());
    assert!(AffineModel::new(Matrix::<f64>::zeros(1, 3), vec![0.0, 1.0]).is_err());
}

#[test]
fn model_files_round_trip() {
    let l = layout();
    for m in [
        AnyModel::Affine(AffineModel::<f64>::random(l.d_emb(), 1, 1)),
        AnyModel::Relu(TwoLayerReLU::random(l.d_emb(), 8, 1, 2)),
        AnyModel::Attention(LinearAttentionICL::random(l, 4, 3)),
    ] {
        let json = m.to_file().to_json().unwrap();
        let back: ModelFile = serde_json::from_str(&json).unwrap();
        assert_eq!(AnyModel::<f64>::from_file(&back).unwrap(), m);
    }
}

#[test]
fn single_precision_agrees_with_double() {
    let l = layout();
    let m64 = LinearAttentionICL::<f64>::random(l, 4, 5);
    let file = AnyModel::Attention(m64.clone()).to_file();
    let m32 = AnyModel::<f32>::from_file(&file).unwrap();
    let e: Vec<f64> = normal_vec(&mut stream(5, 5), l.d_emb(), 1.0);
    let e32: Vec<f32> = e.iter().map(|&v| v as f32).collect();
    let a = m64.forward(&e).unwrap().value[0];
    let b = m32.forward(&e32).unwrap().value[0] as f64;
    assert!((a - b).abs() < 1e-3 * a.abs().max(1.0));
}
