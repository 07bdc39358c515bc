//! Client-side Gaussian mechanism: norm clipping and calibrated noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

#[derive(Debug, Error, PartialEq)]
pub enum PrivacyError {
    #[error("invalid privacy parameter: {0}")]
    Argument(String),
}

/// How client messages are privatised.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DpConfig {
    Off,
    /// Noise variance set directly. Clipping is opt-in.
    FixedSigma { sigma2: f64, clip_c: Option<f64> },
    /// Variance derived from the budget; messages are always clipped to `clip_c`.
    EpsilonDelta { epsilon: f64, delta: f64, clip_c: f64 },
}

impl DpConfig {
    /// Per-coordinate noise variance.
    pub fn sigma2(&self) -> Result<f64, PrivacyError> {
        match *self {
            DpConfig::Off => Ok(0.0),
            DpConfig::FixedSigma { sigma2, .. } => {
                if sigma2.is_finite() && sigma2 >= 0.0 {
                    Ok(sigma2)
                } else {
                    Err(PrivacyError::Argument(format!("sigma2 must be >= 0, got {sigma2}")))
                }
            }
            DpConfig::EpsilonDelta {
                epsilon,
                delta,
                clip_c,
            } => sigma_from_budget(clip_c, epsilon, delta),
        }
    }

    pub fn clip_bound(&self) -> Option<f64> {
        match *self {
            DpConfig::Off => None,
            DpConfig::FixedSigma { clip_c, .. } => clip_c,
            DpConfig::EpsilonDelta { clip_c, .. } => Some(clip_c),
        }
    }

    pub fn validate(&self) -> Result<(), PrivacyError> {
        self.sigma2()?;
        if let Some(c) = self.clip_bound() {
            if !(c.is_finite() && c > 0.0) {
                return Err(PrivacyError::Argument(format!("clip_c must be > 0, got {c}")));
            }
        }
        Ok(())
    }

    /// Clips (when enabled) and then adds noise of the configured variance.
    pub fn privatize<R: Rng + ?Sized>(&self, g: Vec<f64>, rng: &mut R) -> Result<Vec<f64>, PrivacyError> {
        let sigma2 = self.sigma2()?;
        let g = match self.clip_bound() {
            Some(c) => clip(&g, c),
            None => g,
        };
        Ok(add_noise(g, sigma2, rng))
    }
}

/// `sigma^2 = 2 C^2 ln(1.25 / delta) / epsilon^2`.
pub fn sigma_from_budget(clip_c: f64, epsilon: f64, delta: f64) -> Result<f64, PrivacyError> {
    if !(clip_c.is_finite() && clip_c >= 0.0) {
        return Err(PrivacyError::Argument(format!("C must be >= 0, got {clip_c}")));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(PrivacyError::Argument(format!("epsilon must be > 0, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(PrivacyError::Argument(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(2.0 * clip_c * clip_c * (1.25 / delta).ln() / (epsilon * epsilon))
}

/// Projects `g` onto the l2 ball of radius `clip_c`.
pub fn clip(g: &[f64], clip_c: f64) -> Vec<f64> {
    let n = linalg::norm(g);
    if n <= clip_c {
        g.to_vec()
    } else {
        linalg::scale(clip_c / n, g)
    }
}

/// Adds i.i.d. `N(0, sigma2)` noise per coordinate. `sigma2 = 0` returns `g`
/// without touching the stream.
pub fn add_noise<R: Rng + ?Sized>(mut g: Vec<f64>, sigma2: f64, rng: &mut R) -> Vec<f64> {
    if sigma2 == 0.0 {
        return g;
    }
    let normal = Normal::new(0.0, sigma2.sqrt()).expect("finite positive std");
    for v in g.iter_mut() {
        *v += normal.sample(rng);
    }
    g
}
