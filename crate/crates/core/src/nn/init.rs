//! Parameter initialization.
//!
//! Dense and gate matrices use uniform Glorot; embeddings are drawn from
//! N(0, 0.1²). Recurrent matrices can optionally be made orthogonal.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct InitScheme {
    pub orthogonal_recurrent: bool,
}

pub fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).unwrap()
}

pub fn normal(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor {
    let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).unwrap()
}

/// Square orthogonal matrix from Gram-Schmidt on a Gaussian draw.
pub fn orthogonal(n: usize, rng: &mut impl Rng) -> Tensor {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        for r in &rows {
            let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            rows.push(v);
        }
    }
    Tensor::from_rows(&rows).unwrap()
}
