//! Byzantine client behaviours.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ClientShard;

#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error("gaussian attack scale must be > 0, got {0}")]
    Scale(f64),
    #[error("gaussian attack dimension must be >= 1")]
    Dimension,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AttackSpec {
    None,
    /// Negate the honest gradient before privatisation.
    SignFlip,
    /// Train honestly on labels mapped `y -> K - 1 - y`.
    LabelFlip,
    /// Replace the message by isotropic noise with per-coordinate std `scale`.
    Gaussian { scale: f64 },
}

impl AttackSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AttackSpec::None => "none",
            AttackSpec::SignFlip => "sign_flip",
            AttackSpec::LabelFlip => "label_flip",
            AttackSpec::Gaussian { .. } => "gaussian",
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        match *self {
            AttackSpec::Gaussian { scale } if !(scale.is_finite() && scale > 0.0) => {
                Err(AttackError::Scale(scale))
            }
            _ => Ok(()),
        }
    }
}

pub fn sign_flip(g: &[f64]) -> Vec<f64> {
    g.iter().map(|v| -v).collect()
}

/// Copy of `shard` with every label reversed; features are untouched.
pub fn label_flip(shard: &ClientShard, n_classes: usize) -> ClientShard {
    let mut flipped = shard.clone();
    for s in &mut flipped.samples {
        debug_assert!(s.label < n_classes);
        s.label = n_classes - 1 - s.label;
    }
    flipped
}

pub fn gaussian_attack<R: Rng + ?Sized>(d: usize, scale: f64, rng: &mut R) -> Result<Vec<f64>, AttackError> {
    if d == 0 {
        return Err(AttackError::Dimension);
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(AttackError::Scale(scale));
    }
    let normal = Normal::new(0.0, scale).expect("validated scale");
    Ok((0..d).map(|_| normal.sample(rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;
    use crate::linalg;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shard(labels: &[usize]) -> ClientShard {
        ClientShard {
            client_id: 0,
            samples: labels
                .iter()
                .map(|&label| Sample {
                    features: vec![label as f64 * 0.5, -1.25],
                    label,
                })
                .collect(),
            source_indices: (0..labels.len()).collect(),
        }
    }

    #[test]
    fn sign_flip_examples() {
        assert_eq!(sign_flip(&[1.0, -2.0]), vec![-1.0, 2.0]);
        assert_eq!(sign_flip(&[0.0, 0.0]), vec![-0.0, -0.0]);
        let g = [0.3, -7.0, 1e10];
        assert_eq!(sign_flip(&sign_flip(&g)), g.to_vec());
        assert_eq!(linalg::norm(&sign_flip(&g)), linalg::norm(&g));
    }

    #[test]
    fn label_flip_mapping() {
        let bin = label_flip(&shard(&[1, 0]), 2);
        assert_eq!(bin.samples.iter().map(|s| s.label).collect::<Vec<_>>(), vec![0, 1]);
        let digits: Vec<usize> = (0..10).collect();
        let flipped = label_flip(&shard(&digits), 10);
        assert_eq!(flipped.samples[3].label, 6);
        assert_eq!(
            flipped.samples.iter().map(|s| s.label).collect::<Vec<_>>(),
            vec![9, 8, 7, 6, 5, 4, 3, 2, 1, 0]
        );
        let original = shard(&digits);
        assert_eq!(label_flip(&flipped, 10), original);
        for (a, b) in flipped.samples.iter().zip(&original.samples) {
            assert_eq!(a.features, b.features);
        }
    }

    #[test]
    fn gaussian_attack_statistics() {
        // 1e4 draws of 50 coordinates; the std estimate has relative standard
        // error 1/sqrt(2e4) ~ 0.7% per coordinate.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let d = 50;
        let n = 10_000;
        let mut sum_sq = vec![0.0; d];
        let mut norm_sum = 0.0;
        for _ in 0..n {
            let v = gaussian_attack(d, 100.0, &mut rng).unwrap();
            norm_sum += linalg::norm(&v);
            for j in 0..d {
                sum_sq[j] += v[j] * v[j];
            }
        }
        for s in sum_sq {
            let std = (s / n as f64).sqrt();
            assert!((std / 100.0 - 1.0).abs() < 0.03, "std {std}");
        }
        let mean_norm = norm_sum / n as f64;
        assert!((mean_norm / (100.0 * (d as f64).sqrt()) - 1.0).abs() < 0.05);
    }

    #[test]
    fn gaussian_attack_domain_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(gaussian_attack(3, 0.0, &mut rng), Err(AttackError::Scale(0.0)));
        assert_eq!(gaussian_attack(0, 1.0, &mut rng), Err(AttackError::Dimension));
        let a = gaussian_attack(5, 100.0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = gaussian_attack(5, 100.0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert!(AttackSpec::Gaussian { scale: -1.0 }.validate().is_err());
    }
}
