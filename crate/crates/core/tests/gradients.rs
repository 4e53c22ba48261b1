use pbr_core::gradcheck::suite;
use pbr_core::nn::{conv2d, transposed_conv2d, Activation};
use pbr_core::{Shape4, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn every_kernel_passes_finite_differences() {
    for (name, report) in suite::run_all(11) {
        assert!(report.passed(), "{name}: {:?}", &report.failures[..report.failures.len().min(5)]);
        println!("{name}: {} coords ({} kink-crossing probes skipped), max rel err {:.2e}", report.checked, report.skipped, report.max_rel_error);
    }
}

#[test]
fn single_channel_unet_passes_finite_differences() {
    let report = suite::unet(99, 1, 4);
    assert!(report.passed(), "{:?}", report.failures);
}

#[test]
fn conv_and_transposed_conv_are_adjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let a = Tensor4::from_fn(Shape4::new(2, 3, 8, 6), |_, _, _, _| rng.random_range(-1.0..1.0));
        let b = Tensor4::from_fn(Shape4::new(2, 4, 4, 3), |_, _, _, _| rng.random_range(-1.0..1.0));
        let w = Tensor4::from_fn(Shape4::new(4, 3, 2, 2), |_, _, _, _| rng.random_range(-1.0..1.0));
        let lhs: f64 = conv2d(&a, &w, &[0.0; 4], 2, 0).unwrap().dot(&b).unwrap();
        let rhs = a.dot(&transposed_conv2d(&b, &w, &[0.0; 3]).unwrap()).unwrap();
        assert!((lhs - rhs).abs() <= 1e-5 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}

#[test]
fn relu_gradient_is_zero_on_negative_side() {
    let x = Tensor4::from_vec(Shape4::new(1, 1, 1, 2), vec![-1.0f64, 1.0]).unwrap();
    let y = Activation::Relu.forward(&x);
    let g = Activation::Relu.backward(&y, &Tensor4::full(x.shape(), 1.0)).unwrap();
    assert_eq!(g.data(), &[0.0, 1.0]);
}
