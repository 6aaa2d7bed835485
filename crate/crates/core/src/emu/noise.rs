use serde::{Deserialize, Serialize};

/// Precision gain of the high-precision bootstrap mode.
pub const METABTS_PRECISION_GAIN: f64 = 20.0;

/// Additive Gaussian noise injected by every bootstrap.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub enabled: bool,
    /// Per-slot standard deviation of a regular bootstrap.
    pub sigma: f64,
    /// High-precision bootstrap: noise shrinks by [`METABTS_PRECISION_GAIN`]
    /// and one extra level is spent on every bootstrap.
    pub metabts: bool,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            enabled: false,
            sigma: 0.0,
            metabts: false,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn off() -> Self {
        Self::default()
    }

    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        Self {
            enabled: true,
            sigma,
            metabts: false,
            seed,
        }
    }

    pub fn with_metabts(mut self, metabts: bool) -> Self {
        self.metabts = metabts;
        self
    }

    pub fn effective_sigma(&self) -> f64 {
        if !self.enabled {
            0.0
        } else if self.metabts {
            self.sigma / METABTS_PRECISION_GAIN
        } else {
            self.sigma
        }
    }

    /// Levels lost by a bootstrap on top of the usual reset.
    pub fn extra_level_cost(&self) -> u32 {
        u32::from(self.metabts)
    }
}
