//! Linear classifiers and the q-fair loss transform.
//!
//! Parameters are flat: binary logistic regression stores `[w_0..w_{n-1}, b]`;
//! softmax regression stores one such block per class, class-major.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Sample;
use crate::linalg;

/// Probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]` before logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("parameter dimension {found} does not match model dimension {expected}")]
    ParamDim { expected: usize, found: usize },
    #[error("sample has {found} features, model expects {expected}")]
    FeatureDim { expected: usize, found: usize },
    #[error("label {label} outside 0..{classes}")]
    Label { label: usize, classes: usize },
    #[error("cannot evaluate on an empty sample set")]
    Empty,
    #[error("fairness exponent q must be finite and >= 0, got {0}")]
    BadQ(f64),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub theta: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(dim: usize) -> Self {
        Self {
            theta: vec![0.0; dim],
        }
    }

    /// `theta -= eta * step`
    pub fn descend(&mut self, eta: f64, step: &[f64]) {
        linalg::axpy(-eta, step, &mut self.theta);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Mean cross-entropy `F_i`.
    pub base_loss: f64,
    /// `F_i^(q+1)`.
    pub fair_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Model {
    /// Logistic regression on labels {0, 1}.
    Binary { n_features: usize },
    /// Multinomial softmax regression.
    Softmax { n_features: usize, n_classes: usize },
}

impl Model {
    /// Logistic regression for two classes, softmax otherwise.
    pub fn for_shape(n_features: usize, n_classes: usize) -> Self {
        if n_classes == 2 {
            Model::Binary { n_features }
        } else {
            Model::Softmax {
                n_features,
                n_classes,
            }
        }
    }

    pub fn n_features(&self) -> usize {
        match *self {
            Model::Binary { n_features } | Model::Softmax { n_features, .. } => n_features,
        }
    }

    pub fn n_classes(&self) -> usize {
        match *self {
            Model::Binary { .. } => 2,
            Model::Softmax { n_classes, .. } => n_classes,
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            Model::Binary { n_features } => n_features + 1,
            Model::Softmax {
                n_features,
                n_classes,
            } => n_classes * (n_features + 1),
        }
    }

    fn check(&self, params: &ModelParams, samples: &[Sample]) -> Result<()> {
        if params.theta.len() != self.dim() {
            return Err(ModelError::ParamDim {
                expected: self.dim(),
                found: params.theta.len(),
            });
        }
        if samples.is_empty() {
            return Err(ModelError::Empty);
        }
        let n_classes = self.n_classes();
        for s in samples {
            if s.features.len() != self.n_features() {
                return Err(ModelError::FeatureDim {
                    expected: self.n_features(),
                    found: s.features.len(),
                });
            }
            if s.label >= n_classes {
                return Err(ModelError::Label {
                    label: s.label,
                    classes: n_classes,
                });
            }
        }
        Ok(())
    }

    fn logit(theta: &[f64], x: &[f64]) -> f64 {
        let n = x.len();
        linalg::dot(&theta[..n], x) + theta[n]
    }

    /// Class scores for softmax, written into `scores`.
    fn class_scores(&self, theta: &[f64], x: &[f64], scores: &mut [f64]) {
        let block = x.len() + 1;
        for (k, score) in scores.iter_mut().enumerate() {
            *score = Self::logit(&theta[k * block..(k + 1) * block], x);
        }
    }

    /// Stable softmax in place.
    fn softmax(scores: &mut [f64]) {
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - max).exp();
            total += *s;
        }
        scores.iter_mut().for_each(|s| *s /= total);
    }

    /// Mean cross-entropy over `samples`.
    pub fn base_loss(&self, params: &ModelParams, samples: &[Sample]) -> Result<f64> {
        Ok(self.loss_and_gradient(params, samples, false)?.0)
    }

    /// Gradient of [`Model::base_loss`] with respect to `theta`.
    pub fn base_gradient(&self, params: &ModelParams, samples: &[Sample]) -> Result<Vec<f64>> {
        Ok(self.loss_and_gradient(params, samples, true)?.1)
    }

    /// One pass over `samples`; the gradient is left empty unless asked for.
    fn loss_and_gradient(&self, params: &ModelParams, samples: &[Sample], want_grad: bool) -> Result<(f64, Vec<f64>)> {
        self.check(params, samples)?;
        let clamp = |p: f64| p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        let mut grad = if want_grad { vec![0.0; self.dim()] } else { Vec::new() };
        let n = self.n_features();
        let mut loss = 0.0;
        match *self {
            Model::Binary { .. } => {
                for s in samples {
                    let p = sigmoid(Self::logit(&params.theta, &s.features));
                    loss += if s.label == 1 { -clamp(p).ln() } else { -(1.0 - clamp(p)).ln() };
                    if want_grad {
                        let residual = p - s.label as f64;
                        linalg::axpy(residual, &s.features, &mut grad[..n]);
                        grad[n] += residual;
                    }
                }
            }
            Model::Softmax { n_classes, .. } => {
                let mut probs = vec![0.0; n_classes];
                let block = n + 1;
                for s in samples {
                    self.class_scores(&params.theta, &s.features, &mut probs);
                    Self::softmax(&mut probs);
                    loss -= clamp(probs[s.label]).ln();
                    if want_grad {
                        for (k, &p) in probs.iter().enumerate() {
                            let residual = p - f64::from(u8::from(k == s.label));
                            let g = &mut grad[k * block..(k + 1) * block];
                            linalg::axpy(residual, &s.features, &mut g[..n]);
                            g[n] += residual;
                        }
                    }
                }
            }
        }
        let m = samples.len() as f64;
        grad.iter_mut().for_each(|g| *g /= m);
        Ok((loss / m, grad))
    }

    /// Gradient of `F^(q+1)`: `(q+1) F^q grad F`, with the loss report.
    ///
    /// `q = 0` returns the base gradient untouched. When `F = 0` and `q > 0`
    /// the gradient is the zero vector.
    pub fn qfair_gradient(
        &self,
        params: &ModelParams,
        samples: &[Sample],
        q: f64,
    ) -> Result<(Vec<f64>, LossReport)> {
        if !(q.is_finite() && q >= 0.0) {
            return Err(ModelError::BadQ(q));
        }
        let (base_loss, grad) = self.loss_and_gradient(params, samples, true)?;
        let report = LossReport {
            base_loss,
            fair_loss: base_loss.powf(q + 1.0),
        };
        Ok((fair_scale(grad, base_loss, q), report))
    }

    /// Predicted class: logit > 0 for binary (p = 0.5 predicts class 0),
    /// lowest-index argmax for softmax.
    pub fn predict(&self, params: &ModelParams, x: &[f64]) -> usize {
        match *self {
            Model::Binary { .. } => usize::from(Self::logit(&params.theta, x) > 0.0),
            Model::Softmax { n_classes, .. } => {
                let mut scores = vec![0.0; n_classes];
                self.class_scores(&params.theta, x, &mut scores);
                argmax_first(&scores)
            }
        }
    }

    /// Fraction of samples classified correctly.
    pub fn accuracy(&self, params: &ModelParams, samples: &[Sample]) -> Result<f64> {
        self.check(params, samples)?;
        let correct = samples
            .iter()
            .filter(|s| self.predict(params, &s.features) == s.label)
            .count();
        Ok(correct as f64 / samples.len() as f64)
    }
}

/// Chain-rule factor of the fair transform applied to a base gradient.
pub fn fair_scale(grad: Vec<f64>, base_loss: f64, q: f64) -> Vec<f64> {
    if q == 0.0 {
        return grad;
    }
    if base_loss == 0.0 {
        return vec![0.0; grad.len()];
    }
    let factor = (q + 1.0) * base_loss.powf(q);
    grad.into_iter().map(|g| factor * g).collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = k;
        }
    }
    best
}
