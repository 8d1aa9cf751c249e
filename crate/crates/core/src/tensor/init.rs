//! Parameter initialisers.

use rand::Rng;

use super::Tensor;

/// Uniform in `[-r, r]` with `r = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let r = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-r..=r)).collect();
    Tensor::new(vec![rows, cols], data).expect("positive dims")
}
