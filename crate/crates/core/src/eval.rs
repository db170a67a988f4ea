//! Accuracy reports and embedding export.
//!
//! This is the only module that can read the hidden labels of the unlabeled
//! target split: doing so requires a [`LabelKey`], which cannot be built
//! outside this module.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetBundle, Split};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numerics::argmax;

/// Capability token for [`DatasetBundle::hidden_labels`].
#[derive(Debug)]
pub struct LabelKey {
    _private: (),
}

impl LabelKey {
    fn new() -> Self {
        LabelKey { _private: () }
    }

    #[cfg(test)]
    pub(crate) fn for_tests() -> Self {
        Self::new()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `None` for classes with no samples in the split.
    pub per_class: Vec<Option<f64>>,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    pub count: usize,
}

impl EvalReport {
    /// Builds a report from `(prediction, label)` pairs.
    pub fn from_predictions(pairs: impl IntoIterator<Item = (usize, usize)>, num_classes: usize) -> Result<Self> {
        let mut confusion = vec![vec![0usize; num_classes]; num_classes];
        let mut count = 0;
        for (pred, label) in pairs {
            if pred >= num_classes || label >= num_classes {
                return Err(Error::Index {
                    index: pred.max(label),
                    len: num_classes,
                });
            }
            confusion[label][pred] += 1;
            count += 1;
        }
        if count == 0 {
            return Err(Error::Empty("evaluate"));
        }
        let correct: usize = (0..num_classes).map(|k| confusion[k][k]).sum();
        let per_class = confusion
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let total: usize = row.iter().sum();
                (total > 0).then(|| row[k] as f64 / total as f64)
            })
            .collect();
        Ok(EvalReport {
            accuracy: correct as f64 / count as f64,
            per_class,
            confusion,
            count,
        })
    }
}

/// Evaluates the model on arbitrary labeled inputs.
pub fn evaluate_samples<'a>(
    model: &ModelParams,
    samples: impl IntoIterator<Item = (&'a [f64], usize)>,
    num_classes: usize,
) -> Result<EvalReport> {
    let pairs = samples
        .into_iter()
        .map(|(x, y)| Ok((model.predict(x)?, y)))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_predictions(pairs, num_classes)
}

/// `(features, label)` pairs of a split, hidden labels included.
pub fn split_samples(bundle: &DatasetBundle, split: Split) -> Vec<(&[f64], usize)> {
    let key = LabelKey::new();
    match split {
        Split::Ls => bundle.source().iter().map(|s| (s.features.as_slice(), s.label)).collect(),
        Split::Lt => bundle
            .labeled_target()
            .iter()
            .map(|s| (s.features.as_slice(), s.label))
            .collect(),
        Split::Ut => bundle
            .unlabeled_target()
            .iter()
            .zip(bundle.hidden_labels(&key))
            .map(|(s, &y)| (s.features.as_slice(), y))
            .collect(),
        Split::Val => bundle.validation().iter().map(|s| (s.features.as_slice(), s.label)).collect(),
    }
}

pub fn evaluate(model: &ModelParams, bundle: &DatasetBundle, split: Split) -> Result<EvalReport> {
    evaluate_samples(model, split_samples(bundle, split), bundle.num_classes())
}

/// Writes `idx,split,label,pred,correct,f0,...` for every sample of every split.
pub fn export_embeddings(model: &ModelParams, bundle: &DatasetBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_embeddings(model, bundle, file)
}

pub fn write_embeddings<W: std::io::Write>(model: &ModelParams, bundle: &DatasetBundle, out: W) -> Result<()> {
    let key = LabelKey::new();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["idx", "split", "label", "pred", "correct"].map(String::from).to_vec();
    header.extend((0..model.dims.feature_dim).map(|i| format!("f{i}")));
    w.write_record(&header)?;

    let mut row = |idx: usize, split: Split, label: usize, x: &[f64]| -> Result<()> {
        let fwd = model.forward(x)?;
        let pred = argmax(&fwd.logits)?;
        let mut rec = vec![
            idx.to_string(),
            split.as_str().to_string(),
            label.to_string(),
            pred.to_string(),
            u8::from(pred == label).to_string(),
        ];
        rec.extend(fwd.features.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
        Ok(())
    };
    for s in bundle.source() {
        row(s.idx, Split::Ls, s.label, &s.features)?;
    }
    for s in bundle.labeled_target() {
        row(s.idx, Split::Lt, s.label, &s.features)?;
    }
    for (s, &y) in bundle.unlabeled_target().iter().zip(bundle.hidden_labels(&key)) {
        row(s.idx, Split::Ut, y, &s.features)?;
    }
    for s in bundle.validation() {
        row(s.idx, Split::Val, s.label, &s.features)?;
    }
    w.flush().map_err(|e| Error::io("<embedding writer>", e))?;
    Ok(())
}
