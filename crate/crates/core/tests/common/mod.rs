//! Random layout configurations shared by the integration suites.
#![allow(dead_code)]

use hecnn::conv::FilterTensor;
use hecnn::dense::LinearWeights;
use hecnn::pack::{pack_permuted, ImageTensor, PackedImage};
use hecnn::{Evaluator, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOP_LEVEL: u32 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Single { d: usize },
    Image { t: usize },
    Channel { rps: usize },
}

#[derive(Clone, Debug)]
pub struct Config {
    pub regime: Regime,
    pub s: usize,
    pub m: usize,
    pub c: usize,
    pub co: usize,
    pub k: usize,
    pub tau: Vec<usize>,
    pub seed: u64,
}

pub const REGIMES: [Regime; 9] = [
    Regime::Single { d: 1 },
    Regime::Single { d: 2 },
    Regime::Single { d: 4 },
    Regime::Image { t: 2 },
    Regime::Image { t: 4 },
    Regime::Image { t: 8 },
    Regime::Channel { rps: 1 },
    Regime::Channel { rps: 2 },
    Regime::Channel { rps: 4 },
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn pick<R: Rng>(rng: &mut R, xs: &[usize]) -> usize {
    xs[rng.random_range(0..xs.len())]
}

/// A random configuration in `regime`. Channel counts and sides are powers
/// of two; tau is a random permutation unless rows are split across shards.
pub fn config_in(regime: Regime, seed: u64) -> Config {
    let mut r = rng(seed);
    let m = pick(&mut r, &[4, 8]);
    let k = pick(&mut r, &[1, 3]);
    let (s, c, co) = match regime {
        Regime::Single { d } => {
            let c = pick(&mut r, &[1, 2, 4]);
            let co = pick(&mut r, &[1, 2, 4].map(|x| x.min(c * d)));
            (d * c * m * m, c, co)
        }
        Regime::Image { t } => {
            let c = t * pick(&mut r, &[1, 2]);
            let co = pick(&mut r, &[1, 2, 4, 8, 16]);
            (c * m * m / t, c, co)
        }
        Regime::Channel { rps } => {
            let m = (2 * rps).max(4) * pick(&mut r, &[1, 2]);
            let c = pick(&mut r, &[1, 2]);
            let co = pick(&mut r, &[1, 2]);
            return Config {
                regime,
                s: rps * m,
                m,
                c,
                co,
                k,
                tau: (0..c).collect(),
                seed,
            };
        }
    };
    let mut tau: Vec<usize> = (0..c).collect();
    tau.shuffle(&mut r);
    Config { regime, s, m, c, co, k, tau, seed }
}

/// `n` configurations cycling through every regime.
pub fn configs(n: usize, seed: u64) -> Vec<Config> {
    (0..n)
        .map(|i| config_in(REGIMES[i % REGIMES.len()], seed.wrapping_mul(1_000_003).wrapping_add(i as u64)))
        .collect()
}

pub fn random_tensor(c: usize, m: usize, seed: u64) -> ImageTensor<f64> {
    let mut r = rng(seed);
    ImageTensor::from_fn(c, m, |_, _, _| r.random_range(-1.0..1.0))
}

pub fn random_filter(ci: usize, co: usize, k: usize, seed: u64) -> FilterTensor<f64> {
    let mut r = rng(seed);
    FilterTensor::from_fn(ci, co, k, |_, _, _, _| r.random_range(-0.5..0.5)).unwrap()
}

pub fn random_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(-0.5..0.5)).collect()
}

pub fn random_linear(out: usize, inp: usize, seed: u64) -> LinearWeights<f64> {
    let mut r = rng(seed);
    let b = (0..out).map(|_| r.random_range(-0.5..0.5)).collect();
    LinearWeights::from_fn(out, inp, |_, _| r.random_range(-0.5..0.5), b).unwrap()
}

impl Config {
    pub fn evaluator(&self) -> Evaluator {
        Evaluator::new(self.s, TOP_LEVEL).unwrap()
    }

    pub fn input(&self) -> ImageTensor<f64> {
        random_tensor(self.c, self.m, self.seed ^ 0xA5A5)
    }

    pub fn filter(&self) -> FilterTensor<f64> {
        random_filter(self.c, self.co, self.k, self.seed ^ 0x5A5A)
    }

    pub fn bias(&self) -> Vec<f64> {
        random_vec(self.co, self.seed ^ 0x3C3C)
    }

    pub fn pack(&self, ev: &Evaluator, t: &ImageTensor<f64>) -> Result<PackedImage<f64>> {
        pack_permuted(ev, t, &self.tau)
    }
}

pub fn fixture(rel: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

pub fn tiny_net() -> hecnn::net::Network {
    hecnn::net::Network::load(fixture("tiny/tiny.json")).unwrap()
}

pub fn tiny_input() -> ImageTensor<f64> {
    hecnn::fixture::read_tensor(fixture("tiny/input.txt")).unwrap()
}

/// Pooled residual std of `net` over several noise seeds.
pub fn residual_std(net: &hecnn::net::Network, noise: hecnn::NoiseModel, seeds: std::ops::Range<u64>) -> f64 {
    let input = tiny_input();
    let mut sq = 0.0;
    let mut n = 0usize;
    for seed in seeds {
        let mut model = noise;
        model.seed = seed;
        let report = hecnn::net::run(&net.clone().with_noise(model), &input).unwrap();
        for (a, b) in report.logits.iter().zip(&report.oracle_logits) {
            sq += (a - b) * (a - b);
            n += 1;
        }
    }
    (sq / n as f64).sqrt()
}
