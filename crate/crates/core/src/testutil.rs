//! Test-only helpers: a central finite-difference oracle independent of the tape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numcore::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a small floor on the denominator so components that
/// are zero analytically are compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Central differences of `f` with respect to every element of every input.
pub fn numeric_grads(inputs: &[Tensor<f64>], f: impl Fn(&[Tensor<f64>]) -> f64) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for t in 0..inputs.len() {
        let mut g = Vec::with_capacity(inputs[t].numel());
        for k in 0..inputs[t].numel() {
            let orig = work[t].data()[k];
            work[t].data_mut()[k] = orig + FD_STEP;
            let plus = f(&work);
            work[t].data_mut()[k] = orig - FD_STEP;
            let minus = f(&work);
            work[t].data_mut()[k] = orig;
            g.push((plus - minus) / (2.0 * FD_STEP));
        }
        out.push(g);
    }
    out
}

pub fn max_rel_err(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> f64 {
    analytic
        .iter()
        .flatten()
        .zip(numeric.iter().flatten())
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}
