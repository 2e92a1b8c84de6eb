//! Finite-difference checks for every op, plus linearity properties.

use fanet_tensor::ops::{
    cat_channels, concat_channels, conv2d, dot, linear_combination, maxpool2x2, narrow_channels,
    relu, upsample_bilinear2x, Conv2dOpts,
};
use fanet_tensor::{grad_check, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn values(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn leaf(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::leaf(shape, values(shape.iter().product(), rng)).unwrap()
}

/// Random projection of an output to a scalar, so every output element
/// contributes with a distinct weight.
fn projection(t: &Tensor<f64>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    values(t.numel(), rng)
}

fn assert_passes(label: &str, report: fanet_tensor::GradCheckReport) {
    assert!(report.passes(TOL), "{label}: {report:?}");
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cases = [
        (3, 3, Conv2dOpts::same(3, 3)),
        (1, 3, Conv2dOpts::same(1, 3)),
        (3, 1, Conv2dOpts::same(3, 1)),
        (1, 1, Conv2dOpts::new(1, 0)),
        (3, 3, Conv2dOpts::new(2, 1)),
    ];
    for (kh, kw, opts) in cases {
        let x = leaf(&[2, 3, 5, 5], &mut rng);
        let w = leaf(&[4, 3, kh, kw], &mut rng);
        let b = leaf(&[4], &mut rng);
        let probe = conv2d(&x, &w, Some(&b), opts).unwrap();
        let proj = projection(&probe, &mut rng);
        let f = || dot(&conv2d(&x, &w, Some(&b), opts)?, &proj);
        for (name, t) in [("input", &x), ("weight", &w), ("bias", &b)] {
            assert_passes(&format!("conv {kh}x{kw} {name}"), grad_check(f, t, STEP).unwrap());
        }
    }
}

#[test]
fn relu_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = leaf(&[2, 3, 4, 4], &mut rng);
    let proj = projection(&x, &mut rng);
    let r = grad_check(|| dot(&relu(&x), &proj), &x, STEP).unwrap();
    assert_eq!(r.skipped, 0);
    assert_passes("relu", r);
}

#[test]
fn maxpool_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = leaf(&[1, 2, 6, 4], &mut rng);
    let proj = values(12, &mut rng);
    assert_passes("maxpool", grad_check(|| dot(&maxpool2x2(&x)?, &proj), &x, STEP).unwrap());
}

#[test]
fn maxpool_gradient_matches_finite_difference_on_example() {
    let x = Tensor::<f64>::leaf(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let r = grad_check(|| dot(&maxpool2x2(&x)?, &[1.0]), &x, STEP).unwrap();
    assert_passes("maxpool example", r);
    assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 0.0, 1.0]);
}

#[test]
fn upsample_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = leaf(&[2, 2, 3, 4], &mut rng);
    let proj = values(2 * 2 * 6 * 8, &mut rng);
    assert_passes(
        "upsample",
        grad_check(|| dot(&upsample_bilinear2x(&x)?, &proj), &x, STEP).unwrap(),
    );
}

#[test]
fn concat_and_narrow_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = leaf(&[2, 3, 2, 2], &mut rng);
    let b = leaf(&[2, 1, 2, 2], &mut rng);
    let proj = values(2 * 4 * 4, &mut rng);
    for t in [&a, &b] {
        assert_passes(
            "concat",
            grad_check(|| dot(&concat_channels(&a, &b)?, &proj), t, STEP).unwrap(),
        );
    }
    let proj = values(2 * 2 * 4, &mut rng);
    assert_passes(
        "narrow",
        grad_check(|| dot(&narrow_channels(&a, 1, 2)?, &proj), &a, STEP).unwrap(),
    );
}

#[test]
fn linear_combination_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = leaf(&[5], &mut rng);
    let b = leaf(&[5], &mut rng);
    let proj = values(5, &mut rng);
    let f = || dot(&linear_combination(&[a.clone(), b.clone()], &[0.3, -2.0])?, &proj);
    assert_passes("lincomb a", grad_check(f, &a, STEP).unwrap());
    assert_passes("lincomb b", grad_check(f, &b, STEP).unwrap());
}

#[test]
fn composite_conv_relu_pool_upsample_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = leaf(&[1, 2, 4, 4], &mut rng);
    let w = leaf(&[3, 2, 3, 3], &mut rng);
    let proj = values(3 * 4 * 4, &mut rng);
    let f = || {
        let y = relu(&conv2d(&x, &w, None, Conv2dOpts::same(3, 3))?);
        let y = upsample_bilinear2x(&maxpool2x2(&y)?)?;
        dot(&y, &proj)
    };
    let r = grad_check(f, &w, STEP).unwrap();
    assert!(r.checked > r.skipped);
    assert_passes("chain", r);
}

fn tensor_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, len)
}

proptest! {
    #[test]
    fn upsample_is_linear(x in tensor_strategy(24), y in tensor_strategy(24), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let shape = [1, 2, 3, 4];
        let tx = Tensor::<f64>::new(&shape, x.clone()).unwrap();
        let ty = Tensor::<f64>::new(&shape, y.clone()).unwrap();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let lhs = upsample_bilinear2x(&Tensor::new(&shape, mix).unwrap()).unwrap().to_vec();
        let ux = upsample_bilinear2x(&tx).unwrap().to_vec();
        let uy = upsample_bilinear2x(&ty).unwrap().to_vec();
        for ((l, p), q) in lhs.iter().zip(&ux).zip(&uy) {
            prop_assert!((l - (a * p + b * q)).abs() < 1e-10);
        }
    }

    #[test]
    fn concat_is_linear(x in tensor_strategy(12), y in tensor_strategy(12), a in -3.0f64..3.0) {
        let part = |v: &[f64]| Tensor::<f64>::new(&[1, 3, 2, 2], v.to_vec()).unwrap();
        let scaled: Vec<f64> = x.iter().map(|v| a * v).collect();
        let lhs = cat_channels(&[part(&scaled), part(&y)]).unwrap().to_vec();
        let rhs = cat_channels(&[part(&x), part(&y)]).unwrap().to_vec();
        for (i, (l, r)) in lhs.iter().zip(&rhs).enumerate() {
            let expected = if i < 12 { a * r } else { *r };
            prop_assert!((l - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_outputs_stay_finite(x in tensor_strategy(32)) {
        let t = Tensor::<f32>::from_f64(&[1, 2, 4, 4], &x).unwrap();
        let w = Tensor::<f32>::full(&[2, 2, 3, 3], 0.5);
        let y = conv2d(&t, &w, None, Conv2dOpts::same(3, 3)).unwrap();
        let y = upsample_bilinear2x(&maxpool2x2(&relu(&y)).unwrap()).unwrap();
        prop_assert!(y.data().iter().all(|v| v.is_finite()));
    }
}
