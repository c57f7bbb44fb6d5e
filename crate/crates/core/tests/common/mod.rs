#![allow(dead_code)]

use std::path::PathBuf;

use cmprior::synth;
use cmprior::{BinaryMask, FeatureMap, Prior};
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn features_f64(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap<f64> {
    FeatureMap::from_tensor(synth::random_features(c, h, w, seed).tensor().cast()).unwrap()
}

pub fn gaussian_features(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap<f64> {
    let mut rng = synth::rng(seed);
    let data = (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
    FeatureMap::new(c, h, w, data).unwrap()
}

pub fn uniform_prior(h: usize, w: usize, seed: u64) -> Prior<f64> {
    let mut rng = synth::rng(seed);
    Prior::new(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
}

pub fn random_mask(h: usize, w: usize, seed: u64) -> BinaryMask {
    let mut rng = synth::rng(seed);
    BinaryMask::from_bools(h, w, (0..h * w).map(|_| rng.random::<bool>())).unwrap()
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
