use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::scalar::Scalar;
use super::tensor::Tensor;

/// Glorot/Xavier uniform initialization for a `fan_in x fan_out` matrix.
pub fn xavier_uniform<T: Scalar, R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let data = (0..fan_in * fan_out).map(|_| T::of(dist.sample(rng))).collect();
    Tensor::matrix(fan_in, fan_out, data).expect("consistent shape")
}

pub fn normal<T: Scalar, R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("positive std");
    let data = (0..rows * cols).map(|_| T::of(dist.sample(rng))).collect();
    Tensor::matrix(rows, cols, data).expect("consistent shape")
}
