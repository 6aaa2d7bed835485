//! Moment-matching loss that pulls pre-activation batches toward zero mean,
//! unit deviation and Gaussian kurtosis, with analytic gradients.

use crate::{Error, Result};

/// Bounds a range report may suggest, smallest first.
pub const CANDIDATE_BOUNDS: [f64; 3] = [10.0, 15.0, 25.0];
pub const DEFAULT_COVERAGE: f64 = 1.0 - 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentLoss {
    pub lambda_mu: f64,
    pub lambda_sigma: f64,
    pub lambda_kappa: f64,
    /// Use the bias-corrected excess-kurtosis estimator (shifted back by 3).
    pub unbiased_kurtosis: bool,
}

impl MomentLoss {
    pub fn new(lambda_mu: f64, lambda_sigma: f64, lambda_kappa: f64) -> Self {
        Self {
            lambda_mu,
            lambda_sigma,
            lambda_kappa,
            unbiased_kurtosis: false,
        }
    }

    pub fn with_unbiased_kurtosis(mut self, on: bool) -> Self {
        self.unbiased_kurtosis = on;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub kurtosis: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grads: Vec<Vec<f64>>,
    pub moments: Vec<Moments>,
}

struct Stats {
    n: f64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

fn stats(x: &[f64], batch: usize) -> Result<Stats> {
    if x.len() < 4 {
        return Err(Error::Invalid(format!("batch {batch} has fewer than 4 elements")));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let central = |p: i32| x.iter().map(|v| (v - mean).powi(p)).sum::<f64>() / n;
    let (m2, m3, m4) = (central(2), central(3), central(4));
    if m2 <= 0.0 {
        return Err(Error::KurtosisUndefined { batch });
    }
    Ok(Stats { n, mean, m2, m3, m4 })
}

/// Factor mapping `m4/m2^2` onto the bias-corrected estimator:
/// `k_u = a * k + b`.
fn unbiased_affine(n: f64) -> (f64, f64) {
    let a = (n + 1.0) * (n - 1.0) / ((n - 2.0) * (n - 3.0));
    let b = 3.0 - 3.0 * (n - 1.0) * (n - 1.0) / ((n - 2.0) * (n - 3.0));
    (a, b)
}

pub fn moments(x: &[f64], unbiased_kurtosis: bool) -> Result<Moments> {
    let st = stats(x, 0)?;
    let mut kurtosis = st.m4 / (st.m2 * st.m2);
    if unbiased_kurtosis {
        let (a, b) = unbiased_affine(st.n);
        kurtosis = a * kurtosis + b;
    }
    Ok(Moments {
        mean: st.mean,
        std: st.m2.sqrt(),
        kurtosis,
    })
}

/// Loss averaged over batches, with the gradient for every element.
pub fn moment_loss(batches: &[Vec<f64>], cfg: &MomentLoss) -> Result<LossOutput> {
    if batches.is_empty() {
        return Err(Error::Invalid("no batches".into()));
    }
    let nb = batches.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(batches.len());
    let mut all = Vec::with_capacity(batches.len());
    for (idx, x) in batches.iter().enumerate() {
        let st = stats(x, idx)?;
        let sigma = st.m2.sqrt();
        let raw = st.m4 / (st.m2 * st.m2);
        let (a, b) = if cfg.unbiased_kurtosis {
            unbiased_affine(st.n)
        } else {
            (1.0, 0.0)
        };
        let kappa = a * raw + b;
        loss += (cfg.lambda_mu * st.mean * st.mean
            + cfg.lambda_sigma * (sigma - 1.0).powi(2)
            + cfg.lambda_kappa * (kappa - 3.0).powi(2))
            / nb;

        let g_mu = 2.0 * cfg.lambda_mu * st.mean / nb;
        let g_sigma = 2.0 * cfg.lambda_sigma * (sigma - 1.0) / nb;
        let g_kappa = 2.0 * cfg.lambda_kappa * (kappa - 3.0) * a / nb;
        let g = x
            .iter()
            .map(|&v| {
                let d = v - st.mean;
                let d_mu = 1.0 / st.n;
                let d_sigma = d / (st.n * sigma);
                let d_m2 = 2.0 * d / st.n;
                let d_m4 = 4.0 / st.n * (d * d * d - st.m3);
                let d_raw = d_m4 / (st.m2 * st.m2) - 2.0 * st.m4 / st.m2.powi(3) * d_m2;
                g_mu * d_mu + g_sigma * d_sigma + g_kappa * d_raw
            })
            .collect();
        grads.push(g);
        all.push(Moments {
            mean: st.mean,
            std: sigma,
            kurtosis: kappa,
        });
    }
    Ok(LossOutput {
        loss,
        grads,
        moments: all,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangeReport {
    pub min: f64,
    pub max: f64,
    /// `|x|` value at the requested coverage quantile.
    pub quantile: f64,
    /// Smallest candidate bound covering the quantile, if any does.
    pub bound: Option<f64>,
}

/// Per-layer extremes and suggested activation bound.
pub fn range_report(layers: &[Vec<f64>], coverage: f64) -> Result<Vec<RangeReport>> {
    if !(0.0..=1.0).contains(&coverage) {
        return Err(Error::Invalid(format!("coverage {coverage} outside [0, 1]")));
    }
    layers
        .iter()
        .map(|xs| {
            if xs.is_empty() {
                return Err(Error::Invalid("empty layer in range report".into()));
            }
            let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut mags: Vec<f64> = xs.iter().map(|x| x.abs()).collect();
            mags.sort_by(f64::total_cmp);
            // nearest-rank quantile
            let rank = ((coverage * mags.len() as f64).ceil() as usize).clamp(1, mags.len());
            let quantile = mags[rank - 1];
            let bound = CANDIDATE_BOUNDS.iter().copied().find(|&b| b >= quantile);
            Ok(RangeReport {
                min,
                max,
                quantile,
                bound,
            })
        })
        .collect()
}
