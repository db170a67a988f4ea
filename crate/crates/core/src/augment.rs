//! Weak and strong perturbations for feature vectors, and the augmented
//! labeled-target set used to estimate class-wise adaptation.

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::numerics::SeededRng;

/// Weak map: isotropic jitter. Strong map: per-coordinate random scale, larger
/// jitter, then random coordinate dropout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    pub weak_sigma: f64,
    pub strong_sigma: f64,
    pub drop_prob: f64,
    pub scale_lo: f64,
    pub scale_hi: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            weak_sigma: 0.05,
            strong_sigma: 0.25,
            drop_prob: 0.15,
            scale_lo: 0.7,
            scale_hi: 1.3,
        }
    }
}

impl AugmentPolicy {
    pub fn new(weak_sigma: f64, strong_sigma: f64, drop_prob: f64, scale_lo: f64, scale_hi: f64) -> Result<Self> {
        let p = AugmentPolicy {
            weak_sigma,
            strong_sigma,
            drop_prob,
            scale_lo,
            scale_hi,
        };
        p.validate()?;
        Ok(p)
    }

    /// No perturbation at all; both maps become the identity.
    pub fn identity() -> Self {
        AugmentPolicy {
            weak_sigma: 0.0,
            strong_sigma: 0.0,
            drop_prob: 0.0,
            scale_lo: 1.0,
            scale_hi: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weak_sigma >= 0.0) || !(self.strong_sigma >= self.weak_sigma) {
            return Err(Error::Config(format!(
                "augment: need strong_sigma ({}) >= weak_sigma ({}) >= 0",
                self.strong_sigma, self.weak_sigma
            )));
        }
        if !(0.0..1.0).contains(&self.drop_prob) {
            return Err(Error::Config(format!("augment: drop_prob {} not in [0, 1)", self.drop_prob)));
        }
        if !(self.scale_lo > 0.0 && self.scale_lo <= 1.0 && self.scale_hi >= 1.0) {
            return Err(Error::Config(format!(
                "augment: need 0 < scale_lo ({}) <= 1 <= scale_hi ({})",
                self.scale_lo, self.scale_hi
            )));
        }
        Ok(())
    }

    pub fn weak(&self, x: &[f64], rng: &mut SeededRng) -> Vec<f64> {
        x.iter().map(|&v| v + self.weak_sigma * rng.normal()).collect()
    }

    pub fn strong(&self, x: &[f64], rng: &mut SeededRng) -> Vec<f64> {
        x.iter()
            .map(|&v| {
                let scale = self.scale_lo + (self.scale_hi - self.scale_lo) * rng.uniform();
                let jittered = scale * v + self.strong_sigma * rng.normal();
                if rng.uniform() < self.drop_prob {
                    0.0
                } else {
                    jittered
                }
            })
            .collect()
    }
}

/// Labeled targets plus `n_weak` weak and `n_strong` strong copies of each,
/// all carrying the originating label.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedLabeledTargets {
    pub samples: Vec<(Vec<f64>, usize)>,
}

impl AugmentedLabeledTargets {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub fn build_lt_a(
    labeled: &[Sample],
    policy: &AugmentPolicy,
    n_weak: usize,
    n_strong: usize,
    rng: &mut SeededRng,
) -> Result<AugmentedLabeledTargets> {
    if labeled.is_empty() {
        return Err(Error::Empty("build_lt_a"));
    }
    let mut samples = Vec::with_capacity(labeled.len() * (1 + n_weak + n_strong));
    for s in labeled {
        samples.push((s.features.clone(), s.label));
        for _ in 0..n_weak {
            samples.push((policy.weak(&s.features, rng), s.label));
        }
        for _ in 0..n_strong {
            samples.push((policy.strong(&s.features, rng), s.label));
        }
    }
    Ok(AugmentedLabeledTargets { samples })
}
