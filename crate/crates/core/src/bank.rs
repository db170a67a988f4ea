//! Momentum-averaged source feature bank.
//!
//! Column `i` holds the running representation of source sample `i` (its
//! position in [`DatasetBundle::source`](crate::data::DatasetBundle::source)).
//! Raw features are stored; cosine normalisation happens at query time.

use std::path::Path;

use crate::data::Sample;
use crate::error::{check_len, Error, Result};
use crate::model::ModelParams;
use crate::numerics::cosine_similarity;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBank {
    feature_dim: usize,
    columns: Vec<f64>,
    classes: Vec<usize>,
    initialized: Vec<bool>,
    members: Vec<Vec<usize>>,
}

/// Similarities of one class's bank columns to a target feature.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassSimilarities {
    /// `(source index, cosine similarity)` in ascending source index order.
    pub entries: Vec<(usize, f64)>,
    pub min_sim: f64,
    pub max_sim: f64,
}

impl ClassSimilarities {
    /// Entries ordered by increasing similarity (ties by source index).
    pub fn ordered(&self) -> Vec<(usize, f64)> {
        let mut v = self.entries.clone();
        v.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        v
    }
}

impl FeatureBank {
    /// Zero-filled bank for the given source labels.
    pub fn new(feature_dim: usize, source_labels: &[usize], num_classes: usize) -> Result<Self> {
        let mut members = vec![Vec::new(); num_classes];
        for (i, &y) in source_labels.iter().enumerate() {
            if y >= num_classes {
                return Err(Error::Index {
                    index: y,
                    len: num_classes,
                });
            }
            members[y].push(i);
        }
        Ok(FeatureBank {
            feature_dim,
            columns: vec![0.0; feature_dim * source_labels.len()],
            classes: source_labels.to_vec(),
            initialized: vec![false; source_labels.len()],
            members,
        })
    }

    pub fn for_source(feature_dim: usize, source: &[Sample], num_classes: usize) -> Result<Self> {
        let labels: Vec<usize> = source.iter().map(|s| s.label).collect();
        Self::new(feature_dim, &labels, num_classes)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn class_of(&self, i: usize) -> usize {
        self.classes[i]
    }

    pub fn class_members(&self, class: usize) -> &[usize] {
        self.members.get(class).map_or(&[], Vec::as_slice)
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.columns[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn is_initialized(&self, i: usize) -> bool {
        self.initialized[i]
    }

    pub fn set_column(&mut self, i: usize, f: &[f64]) -> Result<()> {
        if i >= self.len() {
            return Err(Error::Index { index: i, len: self.len() });
        }
        check_len("FeatureBank::set_column", self.feature_dim, f.len())?;
        let d = self.feature_dim;
        self.columns[i * d..(i + 1) * d].copy_from_slice(f);
        self.initialized[i] = true;
        Ok(())
    }

    /// Sets every column to the current model's features of its source sample.
    pub fn refresh_full(&mut self, model: &ModelParams, source: &[Sample]) -> Result<()> {
        check_len("FeatureBank::refresh_full", self.len(), source.len())?;
        for (i, s) in source.iter().enumerate() {
            let f = model.features(&s.features)?;
            self.set_column(i, &f)?;
        }
        Ok(())
    }

    /// `s_i <- m s_i + (1 - m) f_i` for each batch index; other columns untouched.
    pub fn momentum_update(&mut self, indices: &[usize], features: &[Vec<f64>], momentum: f64) -> Result<()> {
        check_len("FeatureBank::momentum_update", indices.len(), features.len())?;
        for (&i, f) in indices.iter().zip(features) {
            if i >= self.len() {
                return Err(Error::Index { index: i, len: self.len() });
            }
            check_len("FeatureBank::momentum_update(feature)", self.feature_dim, f.len())?;
        }
        let d = self.feature_dim;
        for (&i, f) in indices.iter().zip(features) {
            for (s, &v) in self.columns[i * d..(i + 1) * d].iter_mut().zip(f) {
                *s = momentum * *s + (1.0 - momentum) * v;
            }
            self.initialized[i] = true;
        }
        Ok(())
    }

    pub fn class_similarities(&self, class: usize, target_feature: &[f64]) -> Result<ClassSimilarities> {
        check_len("FeatureBank::class_similarities", self.feature_dim, target_feature.len())?;
        let members = self.class_members(class);
        if members.is_empty() {
            return Err(Error::Data(format!("class {class} has no source samples in the bank")));
        }
        let entries = members
            .iter()
            .map(|&i| Ok((i, cosine_similarity(self.column(i), target_feature)?)))
            .collect::<Result<Vec<_>>>()?;
        let min_sim = entries.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
        let max_sim = entries.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
        Ok(ClassSimilarities {
            entries,
            min_sim,
            max_sim,
        })
    }

    /// One row per source sample: `idx,class,initialized,s0,...`.
    pub fn dump_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["idx".to_string(), "class".into(), "initialized".into()];
        header.extend((0..self.feature_dim).map(|j| format!("s{j}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![i.to_string(), self.classes[i].to_string(), self.initialized[i].to_string()];
            rec.extend(self.column(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}
