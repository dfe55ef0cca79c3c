//! Parameter gradients against central finite differences.

use std::sync::Arc;

use federl_core::augmix::{AugMixConfig, AugmentedBatch};
use federl_core::image::{Image, Shape};
use federl_core::losses::{cross_entropy, cross_entropy_loss, dart_loss_and_grad, dart_loss_cached, LossWeights};
use federl_core::model::{Architecture, Classifier, ParameterVector};
use federl_core::rng;
use rand::Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-3;

fn images(seed: u64, n: usize, shape: Shape) -> Vec<Image> {
    let mut r = rng::stream(seed, &[99]);
    (0..n)
        .map(|_| Image::from_vec(shape, (0..shape.len()).map(|_| r.random::<f32>()).collect()).unwrap())
        .collect()
}

fn nets() -> Vec<Arc<Architecture>> {
    let shape = Shape::new(6, 6, 1);
    let nets = vec![
        Arc::new(Architecture::mlp(shape, &[6], 3).unwrap()),
        Arc::new(Architecture::small_cnn(shape, 3, 2, 3).unwrap()),
    ];
    for a in &nets {
        assert!(a.num_params() <= 500, "{} params", a.num_params());
    }
    nets
}

/// Largest relative error between the analytic gradient and central
/// differences of `f`. Components where both are tiny are compared
/// absolutely.
fn max_rel_error(params: &ParameterVector, analytic: &ParameterVector, f: impl Fn(&ParameterVector) -> f64) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let shifted = |d: f64| {
            let mut v = params.values().to_vec();
            v[i] += d;
            ParameterVector::from_values(params.layout().clone(), v).unwrap()
        };
        let numeric = (f(&shifted(H)) - f(&shifted(-H))) / (2.0 * H);
        let a = analytic.values()[i];
        let scale = a.abs().max(numeric.abs());
        let err = if scale < 1e-6 { (a - numeric).abs() } else { (a - numeric).abs() / scale };
        worst = worst.max(err);
    }
    worst
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    for arch in nets() {
        for seed in 0..20u64 {
            let clf = Classifier::init(arch.clone(), seed);
            let x = images(seed, 5, arch.input());
            let labels: Vec<u16> = (0..5).map(|i| ((i as u64 + seed) % 3) as u16).collect();
            let g = clf.grad(&x, |p| cross_entropy_loss(p, &labels)).unwrap();
            let err = max_rel_error(clf.params(), &g, |w| {
                cross_entropy(&clf.with_params(w.clone()).unwrap().predict_proba(&x).unwrap(), &labels).unwrap()
            });
            assert!(err < TOL, "{} seed {seed}: relative error {err}", arch.descriptor());
        }
    }
}

#[test]
fn dart_gradient_matches_finite_differences() {
    let aug = AugMixConfig::default();
    for arch in nets() {
        for seed in 0..20u64 {
            let student = Classifier::init(arch.clone(), seed);
            let teacher = Classifier::init(arch.clone(), seed + 1000);
            let x = images(seed, 4, arch.input());
            let batch = AugmentedBatch::build(x, &[0, 1, 2, 3], &aug, seed).unwrap();
            let t = teacher.predict_proba(&batch.clean).unwrap();
            let weights = LossWeights { alpha: 12.0, distill: 1.0 };
            let (_, g) = dart_loss_and_grad(&t, &student, &batch, weights).unwrap();
            let err = max_rel_error(student.params(), &g, |w| {
                dart_loss_cached(&t, &student.with_params(w.clone()).unwrap(), &batch, weights)
                    .unwrap()
                    .total
            });
            assert!(err < TOL, "{} seed {seed}: relative error {err}", arch.descriptor());
        }
    }
}
