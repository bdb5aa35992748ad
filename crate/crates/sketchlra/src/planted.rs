//! Planted test instances: exact CP tensors, scaled Gaussian noise and sparse outliers.

use crate::linalg::Mat;
use crate::rng::{chacha, derive_seed, gaussian_at};
use crate::tensor::{FactorTriple, Tensor3};
use rand::seq::index::sample;

/// Gaussian factors of rank `k` for the given dims.
pub fn planted_factors(dims: [usize; 3], k: usize, seed: u64) -> FactorTriple {
    let f = |t: usize| {
        let s = derive_seed(seed, t as u64);
        Mat::from_fn(dims[t], k, |i, c| gaussian_at(s, i as u64, c as u64))
    };
    FactorTriple { u: f(0), v: f(1), w: f(2) }
}

/// Exact rank-`k` tensor with Gaussian factors.
pub fn planted_cp(dims: [usize; 3], k: usize, seed: u64) -> Tensor3 {
    planted_factors(dims, k, seed).eval()
}

/// A planted tensor plus a perturbation, with the perturbation kept separately.
#[derive(Clone, Debug)]
pub struct PlantedInstance {
    pub tensor: Tensor3,
    pub factors: FactorTriple,
    pub noise: Tensor3,
    pub noise_fro2: f64,
    pub noise_l1: f64,
}

fn instance(factors: FactorTriple, noise: Tensor3) -> PlantedInstance {
    let tensor = factors.eval().axpy(1.0, &noise).expect("matching dims");
    PlantedInstance { noise_fro2: noise.fro_norm2(), noise_l1: noise.l1_norm(), tensor, factors, noise }
}

/// Rank-`k` tensor plus Gaussian noise scaled so `‖E‖_F = ratio·‖planted‖_F`.
pub fn planted_with_noise(dims: [usize; 3], k: usize, ratio: f64, seed: u64) -> PlantedInstance {
    let factors = planted_factors(dims, k, seed);
    let planted_norm = factors.eval().fro_norm();
    let ns = derive_seed(seed, 100);
    let raw = Tensor3::from_fn(dims, |i, j, l| gaussian_at(ns, i as u64, (j * dims[2] + l) as u64));
    let scale = if raw.fro_norm() > 0.0 { ratio * planted_norm / raw.fro_norm() } else { 0.0 };
    instance(factors, raw.scale(scale))
}

/// Rank-`k` tensor plus `⌈fraction·len⌉` outliers of ±`magnitude` at random positions.
pub fn planted_with_outliers(dims: [usize; 3], k: usize, fraction: f64, magnitude: f64, seed: u64) -> PlantedInstance {
    let factors = planted_factors(dims, k, seed);
    let len = dims.iter().product::<usize>();
    let count = ((fraction * len as f64).ceil() as usize).min(len);
    let mut rng = chacha(derive_seed(seed, 200));
    let positions = sample(&mut rng, len, count);
    let mut entries = Vec::with_capacity(count);
    for (n, p) in positions.into_iter().enumerate() {
        let (i, rest) = (p / (dims[1] * dims[2]), p % (dims[1] * dims[2]));
        let sign = if gaussian_at(derive_seed(seed, 201), n as u64, 0) >= 0.0 { 1.0 } else { -1.0 };
        entries.push((i, rest / dims[2], rest % dims[2], sign * magnitude));
    }
    let noise = Tensor3::from_entries(dims, entries).expect("in range");
    instance(factors, noise)
}
