//! Seeded synthetic inputs for tests, benchmarks and fixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::{BinaryMask, FeatureMap, Prior};

pub const DEFAULT_SEED: u64 = 42;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Lower grid index and interpolation fraction of pixel `i` of `len` on a
/// `grid`-point lattice spanning the axis.
fn grid_cell(i: usize, len: usize, grid: usize) -> (usize, f64) {
    let g = i as f64 * (grid - 1) as f64 / (len.max(2) - 1) as f64;
    let lo = (g.floor() as usize).min(grid - 2);
    (lo, g - lo as f64)
}

/// Spatially smooth random features: a coarse Gaussian grid upsampled
/// bilinearly, plus per-pixel noise, scaled by `1/sqrt(C)` so pair scores
/// stay O(1).
pub fn random_features(channels: usize, height: usize, width: usize, seed: u64) -> FeatureMap<f32> {
    let mut rng = rng(seed);
    let grid = 4usize;
    let coarse: Vec<f64> = (0..channels * grid * grid).map(|_| normal(&mut rng)).collect();
    let scale = 1.0 / (channels as f64).sqrt();
    let mut data = Vec::with_capacity(channels * height * width);
    for c in 0..channels {
        let plane = &coarse[c * grid * grid..(c + 1) * grid * grid];
        for y in 0..height {
            let (y0, ty) = grid_cell(y, height, grid);
            for x in 0..width {
                let (x0, tx) = grid_cell(x, width, grid);
                let at = |yy: usize, xx: usize| plane[yy * grid + xx];
                let smooth = (1.0 - ty) * ((1.0 - tx) * at(y0, x0) + tx * at(y0, x0 + 1))
                    + ty * ((1.0 - tx) * at(y0 + 1, x0) + tx * at(y0 + 1, x0 + 1));
                let v = (smooth + 0.3 * normal(&mut rng)) * scale;
                data.push(v as f32);
            }
        }
    }
    FeatureMap::new(channels, height, width, data).expect("synthetic features are finite")
}

/// Uniform random prior.
pub fn random_prior(height: usize, width: usize, seed: u64) -> Prior<f32> {
    let mut rng = rng(seed);
    Prior::new(height, width, (0..height * width).map(|_| rng.random::<f32>()).collect())
        .expect("uniform samples lie in [0, 1)")
}

/// Filled ellipse with random centre and radii; never empty.
pub fn random_blob_mask(height: usize, width: usize, seed: u64) -> BinaryMask {
    let mut rng = rng(seed);
    let cy = rng.random_range(0.0..height as f64);
    let cx = rng.random_range(0.0..width as f64);
    let ry = rng.random_range(0.15..0.4) * height as f64 + 0.5;
    let rx = rng.random_range(0.15..0.4) * width as f64 + 0.5;
    let mut bits: Vec<bool> = (0..height * width)
        .map(|i| {
            let (y, x) = ((i / width) as f64, (i % width) as f64);
            ((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2) <= 1.0
        })
        .collect();
    let centre = (cy as usize).min(height - 1) * width + (cx as usize).min(width - 1);
    bits[centre] = true;
    BinaryMask::from_bools(height, width, bits).expect("dims are positive")
}

/// Support features, support mask and query features for solver tests.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub support: FeatureMap<f32>,
    pub support_mask: BinaryMask,
    pub query: FeatureMap<f32>,
}

pub fn random_instance(channels: usize, height: usize, width: usize, seed: u64) -> RandomInstance {
    let seed = seed.wrapping_mul(3);
    RandomInstance {
        support: random_features(channels, height, width, seed),
        support_mask: random_blob_mask(height, width, seed + 1),
        query: random_features(channels, height, width, seed + 2),
    }
}

/// One-shot episode with a ground-truth query mask.
#[derive(Debug, Clone)]
pub struct SyntheticEpisode {
    pub support: FeatureMap<f32>,
    pub support_mask: BinaryMask,
    pub query: FeatureMap<f32>,
    pub query_gt: BinaryMask,
}

fn unit_vector(channels: usize, rng: &mut impl Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..channels).map(|_| normal(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn disc(height: usize, width: usize, rng: &mut impl Rng) -> impl Fn(usize, usize) -> bool {
    let r = rng.random_range(0.12..0.22) * height.min(width) as f64;
    let cy = rng.random_range(r..height as f64 - r);
    let cx = rng.random_range(r..width as f64 - r);
    move |y, x| (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2) <= r * r
}

fn clustered_features(
    mask: &BinaryMask,
    fg: &[f64],
    bg: &[f64],
    noise: f64,
    rng: &mut impl Rng,
) -> FeatureMap<f32> {
    let channels = fg.len();
    let n = mask.len();
    let sigma = noise / (channels as f64).sqrt();
    let mut data = vec![0.0f32; channels * n];
    for (p, &m) in mask.values().iter().enumerate() {
        let centre = if m == 1 { fg } else { bg };
        for (c, mu) in centre.iter().enumerate() {
            data[c * n + p] = (mu + sigma * normal(rng)) as f32;
        }
    }
    FeatureMap::new(channels, mask.height(), mask.width(), data).expect("synthetic features are finite")
}

/// Support with one foreground disc, query with two, features drawn from a
/// foreground and a background cluster plus isotropic noise of norm ~`noise`.
pub fn two_blob_episode(size: usize, channels: usize, noise: f64, seed: u64) -> SyntheticEpisode {
    let mut rng = rng(seed);
    let fg = unit_vector(channels, &mut rng);
    let bg = unit_vector(channels, &mut rng);

    let s = disc(size, size, &mut rng);
    let support_mask = BinaryMask::from_bools(size, size, (0..size * size).map(|i| s(i / size, i % size)))
        .expect("dims are positive");
    let (a, b) = (disc(size, size, &mut rng), disc(size, size, &mut rng));
    let query_gt = BinaryMask::from_bools(
        size,
        size,
        (0..size * size).map(|i| a(i / size, i % size) || b(i / size, i % size)),
    )
    .expect("dims are positive");

    SyntheticEpisode {
        support: clustered_features(&support_mask, &fg, &bg, noise, &mut rng),
        query: clustered_features(&query_gt, &fg, &bg, noise, &mut rng),
        support_mask,
        query_gt,
    }
}
