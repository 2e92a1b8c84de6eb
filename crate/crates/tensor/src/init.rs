use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Scalar, Tensor};

/// Fan-in/fan-out for a weight shape (`[out, in, kh, kw]`, `[out, in]` or `[n]`).
fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (*n, *n),
        [out, inp, rest @ ..] => {
            let receptive: usize = rest.iter().product();
            (inp * receptive, out * receptive)
        }
    }
}

/// Half-width of the Xavier/Glorot uniform distribution, `sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_bound(shape: &[usize]) -> f64 {
    let (fan_in, fan_out) = fans(shape);
    (6.0 / (fan_in + fan_out).max(1) as f64).sqrt()
}

/// Xavier-uniform samples drawn from `rng`. Values are sampled in `f64`
/// and cast, so `f32` and `f64` models built from one seed agree up to rounding.
pub fn xavier_uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Vec<T> {
    let bound = xavier_bound(shape);
    let n: usize = shape.iter().product();
    (0..n).map(|_| T::cast(rng.gen_range(-bound..=bound))).collect()
}

/// Deterministic Xavier-uniform leaf tensor.
pub fn xavier_init<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    assert!(!shape.is_empty(), "xavier_init needs a non-empty shape");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::leaf(shape, xavier_uniform(shape, &mut rng)).expect("shape matches sample count")
}
