//! Class-wise accuracy on augmented labeled targets and the linear source
//! example weighting built from it, plus the ablation weightings.
//!
//! For a labeled target of class `k` with accuracy `a_k`, the source samples
//! of class `k` are mapped linearly from `[min_sim, max_sim]` (cosine
//! similarity to the target in bank space) onto `[min_w, max_w]`, where
//! `max_w = 1 + phi / exp(a_k)` and `min_w = 1 - phi / exp(a_k)`. Poorly
//! adapted classes therefore get the widest spread: near source samples are
//! up-weighted and far ones down-weighted. With several labeled targets per
//! class the per-target weights are averaged.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentedLabeledTargets;
use crate::bank::FeatureBank;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Per-class accuracy `a_k` and the counts behind it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyVector {
    pub values: Vec<f64>,
    pub correct: Vec<usize>,
    pub totals: Vec<usize>,
}

impl AccuracyVector {
    /// Builds the vector from `(prediction, label)` pairs. Classes without any
    /// element get accuracy 1.
    pub fn from_predictions(pairs: impl IntoIterator<Item = (usize, usize)>, num_classes: usize) -> Self {
        let mut correct = vec![0; num_classes];
        let mut totals = vec![0; num_classes];
        for (pred, label) in pairs {
            totals[label] += 1;
            if pred == label {
                correct[label] += 1;
            }
        }
        let values = correct
            .iter()
            .zip(&totals)
            .map(|(&c, &t)| if t == 0 { 1.0 } else { c as f64 / t as f64 })
            .collect();
        AccuracyVector { values, correct, totals }
    }
}

pub fn class_accuracy(model: &ModelParams, lt_a: &AugmentedLabeledTargets, num_classes: usize) -> Result<AccuracyVector> {
    if lt_a.is_empty() {
        return Err(Error::Empty("class_accuracy"));
    }
    let pairs = lt_a
        .samples
        .iter()
        .map(|(x, y)| Ok((model.predict(x)?, *y)))
        .collect::<Result<Vec<_>>>()?;
    if let Some(&(_, y)) = pairs.iter().find(|(_, y)| *y >= num_classes) {
        return Err(Error::Index {
            index: y,
            len: num_classes,
        });
    }
    Ok(AccuracyVector::from_predictions(pairs, num_classes))
}

/// `(max_w, min_w) = (1 + phi / e^a, 1 - phi / e^a)`
pub fn class_weight_bounds(accuracy: f64, phi: f64) -> (f64, f64) {
    let spread = phi / accuracy.exp();
    (1.0 + spread, 1.0 - spread)
}

/// Linear map of similarities onto `[min_w, max_w]`; `None` when the
/// similarity range is degenerate.
pub fn linear_weights(sims: &[f64], min_sim: f64, max_sim: f64, min_w: f64, max_w: f64) -> Option<Vec<f64>> {
    if !(max_sim > min_sim) {
        return None;
    }
    let slope = (max_w - min_w) / (max_sim - min_sim);
    Some(
        sims.iter()
            .map(|&s| (slope * (s - min_sim) + min_w).clamp(min_w, max_w))
            .collect(),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    weights: Vec<f64>,
    /// Mean similarity to the class's labeled targets; `None` for classes
    /// without labeled targets.
    pub similarity: Vec<Option<f64>>,
    pub accuracy: Option<AccuracyVector>,
    pub phi: f64,
    /// Iteration at which the table was computed.
    pub created_at: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl WeightTable {
    pub fn uniform(n: usize) -> Self {
        Self::from_weights(vec![1.0; n])
    }

    pub fn from_weights(weights: Vec<f64>) -> Self {
        WeightTable {
            similarity: vec![None; weights.len()],
            weights,
            accuracy: None,
            phi: 0.0,
            created_at: None,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, source_index: usize) -> Result<f64> {
        self.weights.get(source_index).copied().ok_or(Error::Index {
            index: source_index,
            len: self.weights.len(),
        })
    }

    pub fn stats(&self) -> WeightStats {
        let n = self.weights.len().max(1) as f64;
        WeightStats {
            mean: self.weights.iter().sum::<f64>() / n,
            min: self.weights.iter().copied().fold(f64::INFINITY, f64::min),
            max: self.weights.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Keeps only up-weighting: every weight below 1 becomes 1.
    pub fn clamp_near_only(&self) -> Self {
        let mut t = self.clone();
        for w in &mut t.weights {
            *w = w.max(1.0);
        }
        t
    }

    /// Keeps only down-weighting: every weight above 1 becomes 1.
    pub fn clamp_far_only(&self) -> Self {
        let mut t = self.clone();
        for w in &mut t.weights {
            *w = w.min(1.0);
        }
        t
    }

    /// `idx,class,similarity,weight`, one row per source sample.
    pub fn dump_csv(&self, bank: &FeatureBank, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["idx", "class", "similarity", "weight"])?;
        for (i, (&wt, sim)) in self.weights.iter().zip(&self.similarity).enumerate() {
            w.write_record([
                i.to_string(),
                bank.class_of(i).to_string(),
                sim.map(|s| s.to_string()).unwrap_or_default(),
                wt.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Features of the labeled targets under the current model, with labels.
pub fn target_features(model: &ModelParams, labeled: &[Sample]) -> Result<Vec<(Vec<f64>, usize)>> {
    if labeled.is_empty() {
        return Err(Error::Empty("labeled targets"));
    }
    labeled
        .iter()
        .map(|s| Ok((model.features(&s.features)?, s.label)))
        .collect()
}

pub fn compute_weights(
    accuracy: &AccuracyVector,
    bank: &FeatureBank,
    model: &ModelParams,
    labeled: &[Sample],
    phi: f64,
) -> Result<WeightTable> {
    compute_weights_from_features(accuracy, bank, &target_features(model, labeled)?, phi)
}

/// [`compute_weights`] with the labeled-target features already computed.
pub fn compute_weights_from_features(
    accuracy: &AccuracyVector,
    bank: &FeatureBank,
    targets: &[(Vec<f64>, usize)],
    phi: f64,
) -> Result<WeightTable> {
    if phi < 0.0 {
        return Err(Error::Config(format!("phi {phi} < 0")));
    }
    let n = bank.len();
    let mut sum_w = vec![0.0; n];
    let mut sum_sim = vec![0.0; n];
    let mut count = vec![0usize; n];
    for (feature, k) in targets {
        let a_k = *accuracy.values.get(*k).ok_or(Error::Index {
            index: *k,
            len: accuracy.values.len(),
        })?;
        let (max_w, min_w) = class_weight_bounds(a_k, phi);
        let sims = bank.class_similarities(*k, feature)?;
        let values: Vec<f64> = sims.entries.iter().map(|e| e.1).collect();
        let weights = linear_weights(&values, sims.min_sim, sims.max_sim, min_w, max_w)
            .unwrap_or_else(|| vec![1.0; values.len()]);
        for (&(i, s), w) in sims.entries.iter().zip(weights) {
            sum_w[i] += w;
            sum_sim[i] += s;
            count[i] += 1;
        }
    }
    let weights = (0..n)
        .map(|i| if count[i] == 0 { 1.0 } else { sum_w[i] / count[i] as f64 })
        .collect();
    let similarity = (0..n)
        .map(|i| (count[i] > 0).then(|| sum_sim[i] / count[i] as f64))
        .collect();
    Ok(WeightTable {
        weights,
        similarity,
        accuracy: Some(accuracy.clone()),
        phi,
        created_at: None,
    })
}

pub const FIXED_NEAR: f64 = 1.5;
pub const FIXED_FAR: f64 = 0.5;

pub fn fixed_weights(bank: &FeatureBank, model: &ModelParams, labeled: &[Sample], w_near: f64, w_far: f64) -> Result<WeightTable> {
    fixed_weights_from_features(bank, &target_features(model, labeled)?, w_near, w_far)
}

/// Per class: source samples whose (target-averaged) similarity is strictly
/// above the class median get `w_near`, the rest `w_far`.
pub fn fixed_weights_from_features(bank: &FeatureBank, targets: &[(Vec<f64>, usize)], w_near: f64, w_far: f64) -> Result<WeightTable> {
    let n = bank.len();
    let mut sum_sim = vec![0.0; n];
    let mut count = vec![0usize; n];
    for (feature, k) in targets {
        for (i, s) in bank.class_similarities(*k, feature)?.entries {
            sum_sim[i] += s;
            count[i] += 1;
        }
    }
    let similarity: Vec<Option<f64>> = (0..n)
        .map(|i| (count[i] > 0).then(|| sum_sim[i] / count[i] as f64))
        .collect();
    let mut weights = vec![1.0; n];
    let mut classes: Vec<usize> = targets.iter().map(|t| t.1).collect();
    classes.sort_unstable();
    classes.dedup();
    for k in classes {
        let members = bank.class_members(k);
        let mut sims: Vec<f64> = members.iter().filter_map(|&i| similarity[i]).collect();
        sims.sort_by(f64::total_cmp);
        let median = median_sorted(&sims);
        for &i in members {
            if let Some(s) = similarity[i] {
                weights[i] = if s > median { w_near } else { w_far };
            }
        }
    }
    Ok(WeightTable {
        weights,
        similarity,
        accuracy: None,
        phi: 0.0,
        created_at: None,
    })
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
