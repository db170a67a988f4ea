//! Synthetic source/target domain pairs and the four adaptation splits.
//!
//! A [`DatasetBundle`] holds labeled source (`ls`), labeled target (`lt`),
//! unlabeled target (`ut`) and a small labeled target validation split
//! (`val`). Unlabeled targets keep their true labels so accuracy can be
//! measured, but those labels are only reachable with an
//! [`eval::LabelKey`](crate::eval::LabelKey), which only the `eval` module can
//! construct.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::LabelKey;
use crate::numerics::{streams, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(Error::Data(format!("unknown domain '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Ls,
    Lt,
    Ut,
    Val,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Ls, Split::Lt, Split::Ut, Split::Val];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Ls => "ls",
            Split::Lt => "lt",
            Split::Ut => "ut",
            Split::Val => "val",
        }
    }

    fn domain(self) -> Domain {
        match self {
            Split::Ls => Domain::Source,
            _ => Domain::Target,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ls" => Ok(Split::Ls),
            "lt" => Ok(Split::Lt),
            "ut" => Ok(Split::Ut),
            "val" => Ok(Split::Val),
            other => Err(Error::Data(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub idx: usize,
    pub domain: Domain,
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledSample {
    pub idx: usize,
    pub domain: Domain,
    pub features: Vec<f64>,
}

#[derive(Debug)]
pub struct DatasetBundle {
    num_classes: usize,
    input_dim: usize,
    source: Vec<Sample>,
    labeled_target: Vec<Sample>,
    unlabeled_target: Vec<UnlabeledSample>,
    hidden_labels: Vec<usize>,
    validation: Vec<Sample>,
    lt_label_reads: AtomicUsize,
}

impl Clone for DatasetBundle {
    fn clone(&self) -> Self {
        DatasetBundle {
            num_classes: self.num_classes,
            input_dim: self.input_dim,
            source: self.source.clone(),
            labeled_target: self.labeled_target.clone(),
            unlabeled_target: self.unlabeled_target.clone(),
            hidden_labels: self.hidden_labels.clone(),
            validation: self.validation.clone(),
            lt_label_reads: AtomicUsize::new(0),
        }
    }
}

impl PartialEq for DatasetBundle {
    fn eq(&self, other: &Self) -> bool {
        self.num_classes == other.num_classes
            && self.input_dim == other.input_dim
            && self.source == other.source
            && self.labeled_target == other.labeled_target
            && self.unlabeled_target == other.unlabeled_target
            && self.hidden_labels == other.hidden_labels
            && self.validation == other.validation
    }
}

impl DatasetBundle {
    /// Builds a bundle, checking every split invariant.
    pub fn new(
        num_classes: usize,
        input_dim: usize,
        source: Vec<Sample>,
        labeled_target: Vec<Sample>,
        unlabeled_target: Vec<(UnlabeledSample, usize)>,
        validation: Vec<Sample>,
    ) -> Result<Self> {
        if num_classes == 0 || input_dim == 0 {
            return Err(Error::Data("need at least one class and one feature".into()));
        }
        let (unlabeled_target, hidden_labels): (Vec<_>, Vec<_>) =
            unlabeled_target.into_iter().unzip();

        let mut seen = HashSet::new();
        let mut check = |split: Split, idx: usize, domain: Domain, x: &[f64], label: usize| {
            if !seen.insert(idx) {
                return Err(Error::Data(format!("sample index {idx} appears in more than one row")));
            }
            if domain != split.domain() {
                return Err(Error::Data(format!(
                    "sample {idx}: split '{split}' requires domain '{}'",
                    split.domain().as_str()
                )));
            }
            if x.len() != input_dim {
                return Err(Error::Data(format!(
                    "sample {idx}: {} features, expected {input_dim}",
                    x.len()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("features of sample {idx}")));
            }
            if label >= num_classes {
                return Err(Error::Data(format!("sample {idx}: label {label} >= {num_classes} classes")));
            }
            Ok(())
        };
        for s in &source {
            check(Split::Ls, s.idx, s.domain, &s.features, s.label)?;
        }
        for s in &labeled_target {
            check(Split::Lt, s.idx, s.domain, &s.features, s.label)?;
        }
        for (s, &y) in unlabeled_target.iter().zip(&hidden_labels) {
            check(Split::Ut, s.idx, s.domain, &s.features, y)?;
        }
        for s in &validation {
            check(Split::Val, s.idx, s.domain, &s.features, s.label)?;
        }

        let mut source_counts = vec![0usize; num_classes];
        for s in &source {
            source_counts[s.label] += 1;
        }
        if let Some(k) = source_counts.iter().position(|&c| c == 0) {
            return Err(Error::Data(format!("class {k} has no source samples")));
        }

        let mut shot_counts = vec![0usize; num_classes];
        for s in &labeled_target {
            shot_counts[s.label] += 1;
        }
        let shots = shot_counts[0];
        if shots == 0 {
            return Err(Error::Data("class 0 has no labeled target samples".into()));
        }
        if let Some(k) = shot_counts.iter().position(|&c| c != shots) {
            return Err(Error::Data(format!(
                "shot-count violation: class {k} has {} labeled targets, class 0 has {shots}",
                shot_counts[k]
            )));
        }

        Ok(DatasetBundle {
            num_classes,
            input_dim,
            source,
            labeled_target,
            unlabeled_target,
            hidden_labels,
            validation,
            lt_label_reads: AtomicUsize::new(0),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Labeled target samples per class.
    pub fn shots(&self) -> usize {
        self.labeled_target.len() / self.num_classes
    }

    pub fn source(&self) -> &[Sample] {
        &self.source
    }

    /// Labeled targets *with* labels. Every call is counted, see
    /// [`DatasetBundle::lt_label_reads`].
    pub fn labeled_target(&self) -> &[Sample] {
        self.lt_label_reads.fetch_add(1, Ordering::Relaxed);
        &self.labeled_target
    }

    /// Labeled target features without their labels.
    pub fn labeled_target_features(&self) -> impl Iterator<Item = &[f64]> {
        self.labeled_target.iter().map(|s| s.features.as_slice())
    }

    pub fn labeled_target_len(&self) -> usize {
        self.labeled_target.len()
    }

    /// Number of times [`DatasetBundle::labeled_target`] was called on this instance.
    pub fn lt_label_reads(&self) -> usize {
        self.lt_label_reads.load(Ordering::Relaxed)
    }

    pub fn unlabeled_target(&self) -> &[UnlabeledSample] {
        &self.unlabeled_target
    }

    /// True labels of the unlabeled target split, aligned with
    /// [`DatasetBundle::unlabeled_target`].
    pub fn hidden_labels(&self, _key: &LabelKey) -> &[usize] {
        &self.hidden_labels
    }

    pub fn validation(&self) -> &[Sample] {
        &self.validation
    }

    pub fn len(&self) -> usize {
        self.source.len() + self.labeled_target.len() + self.unlabeled_target.len() + self.validation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn split_len(&self, split: Split) -> usize {
        match split {
            Split::Ls => self.source.len(),
            Split::Lt => self.labeled_target.len(),
            Split::Ut => self.unlabeled_target.len(),
            Split::Val => self.validation.len(),
        }
    }

    /// Writes the bundle in the documented CSV layout
    /// (`idx,split,domain,label,f0,...`), splits in `ls, lt, ut, val` order.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["idx", "split", "domain", "label"].map(String::from).to_vec();
        header.extend((0..self.input_dim).map(|i| format!("f{i}")));
        w.write_record(&header)?;

        let mut row = |idx: usize, split: Split, domain: Domain, label: usize, x: &[f64]| {
            let mut rec = vec![
                idx.to_string(),
                split.as_str().to_string(),
                domain.as_str().to_string(),
                label.to_string(),
            ];
            rec.extend(x.iter().map(|v| v.to_string()));
            w.write_record(&rec)
        };
        for s in &self.source {
            row(s.idx, Split::Ls, s.domain, s.label, &s.features)?;
        }
        for s in &self.labeled_target {
            row(s.idx, Split::Lt, s.domain, s.label, &s.features)?;
        }
        for (s, &y) in self.unlabeled_target.iter().zip(&self.hidden_labels) {
            row(s.idx, Split::Ut, s.domain, y, &s.features)?;
        }
        for s in &self.validation {
            row(s.idx, Split::Val, s.domain, s.label, &s.features)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Reads a bundle from the CSV layout written by [`DatasetBundle::save_csv`].
pub fn load_csv(path: impl AsRef<Path>) -> Result<DatasetBundle> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<DatasetBundle> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("missing column '{name}'")))
    };
    let idx_col = column("idx")?;
    let split_col = column("split")?;
    let domain_col = column("domain")?;
    let label_col = column("label")?;
    let mut feature_cols = Vec::new();
    while let Ok(c) = column(&format!("f{}", feature_cols.len())) {
        feature_cols.push(c);
    }
    if feature_cols.is_empty() {
        return Err(Error::Data("missing column 'f0'".into()));
    }
    let expected_cols = 4 + feature_cols.len();
    if headers.len() != expected_cols {
        return Err(Error::Data(format!(
            "unexpected columns: header has {} fields, expected {expected_cols}",
            headers.len()
        )));
    }

    let parse_usize = |s: &str, what: &str, line: usize| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| Error::Data(format!("row {line}: invalid {what} '{s}'")))
    };

    let mut rows: Vec<(Split, Sample)> = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = line + 2;
        let idx = parse_usize(&rec[idx_col], "idx", line)?;
        let split: Split = rec[split_col].trim().parse()?;
        let domain: Domain = rec[domain_col].trim().parse()?;
        let label = parse_usize(&rec[label_col], "label", line)?;
        let features = feature_cols
            .iter()
            .map(|&c| {
                rec[c]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Data(format!("row {line}: invalid feature '{}'", &rec[c])))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((split, Sample { idx, domain, features, label }));
    }

    let present: std::collections::BTreeSet<usize> = rows.iter().map(|(_, s)| s.label).collect();
    let num_classes = present.iter().next_back().map_or(0, |m| m + 1);
    if let Some(missing) = (0..num_classes).find(|k| !present.contains(k)) {
        return Err(Error::Data(format!(
            "non-contiguous class ids: class {missing} never appears (max id {})",
            num_classes - 1
        )));
    }

    let mut source = Vec::new();
    let mut lt = Vec::new();
    let mut ut = Vec::new();
    let mut val = Vec::new();
    for (split, s) in rows {
        match split {
            Split::Ls => source.push(s),
            Split::Lt => lt.push(s),
            Split::Ut => {
                let label = s.label;
                ut.push((
                    UnlabeledSample {
                        idx: s.idx,
                        domain: s.domain,
                        features: s.features,
                    },
                    label,
                ))
            }
            Split::Val => val.push(s),
        }
    }
    DatasetBundle::new(num_classes, feature_cols.len(), source, lt, ut, val)
}

/// Map from source domain to target domain: rotate the two informative
/// coordinates, scale them per axis, then translate every coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftSpec {
    pub rotation_deg: f64,
    pub scale: [f64; 2],
    /// One entry per input dimension; empty means no translation.
    pub translation: Vec<f64>,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        ShiftSpec {
            rotation_deg: 50.0,
            scale: [1.3, 0.8],
            translation: Vec::new(),
        }
    }
}

impl ShiftSpec {
    pub fn identity() -> Self {
        ShiftSpec {
            rotation_deg: 0.0,
            scale: [1.0, 1.0],
            translation: Vec::new(),
        }
    }

    pub fn apply(&self, x: &mut [f64]) {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let (a, b) = (x[0], x[1]);
        x[0] = self.scale[0] * (c * a - s * b);
        x[1] = self.scale[1] * (s * a + c * b);
        for (v, t) in x.iter_mut().zip(&self.translation) {
            *v += t;
        }
    }
}

/// Parameters of the synthetic benchmark.
///
/// Class `k` is a Gaussian cluster centred at angle `2πk/K` on a circle of
/// `radius` around `center` in the two informative coordinates; the remaining
/// coordinates are independent noise. The shift rotates about the origin, so
/// an off-origin `center` keeps rotated target clusters from landing on
/// other source classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub num_classes: usize,
    pub input_dim: usize,
    pub source_per_class: usize,
    pub target_per_class: usize,
    pub shots: usize,
    pub val_shots: usize,
    pub radius: f64,
    pub center: [f64; 2],
    /// Standard deviation of each cluster in the informative coordinates.
    pub noise: f64,
    /// Standard deviation of the uninformative coordinates.
    pub nuisance_noise: f64,
    pub shift: ShiftSpec,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            num_classes: 6,
            input_dim: 8,
            source_per_class: 200,
            target_per_class: 120,
            shots: 3,
            val_shots: 3,
            radius: 2.5,
            center: [5.0, 0.0],
            noise: 0.5,
            nuisance_noise: 0.5,
            shift: ShiftSpec::default(),
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2".into());
        }
        if self.input_dim < 2 {
            return bad("input_dim must be at least 2 (two informative coordinates)".into());
        }
        if self.source_per_class == 0 {
            return bad("source_per_class must be positive".into());
        }
        if self.shots == 0 {
            return bad("shots must be at least 1".into());
        }
        if self.shots + self.val_shots > self.target_per_class {
            return bad(format!(
                "shots ({}) + val_shots ({}) exceed target_per_class ({})",
                self.shots, self.val_shots, self.target_per_class
            ));
        }
        if !(self.noise > 0.0) || self.nuisance_noise < 0.0 {
            return bad("noise must be positive and nuisance_noise non-negative".into());
        }
        if !self.shift.translation.is_empty() && self.shift.translation.len() != self.input_dim {
            return bad(format!(
                "shift.translation has {} entries, expected {}",
                self.shift.translation.len(),
                self.input_dim
            ));
        }
        Ok(())
    }

    pub fn centroid(&self, class: usize) -> [f64; 2] {
        let angle = std::f64::consts::TAU * class as f64 / self.num_classes as f64;
        [
            self.center[0] + self.radius * angle.cos(),
            self.center[1] + self.radius * angle.sin(),
        ]
    }

    fn draw(&self, class: usize, rng: &mut SeededRng) -> Vec<f64> {
        let c = self.centroid(class);
        let mut x = Vec::with_capacity(self.input_dim);
        x.push(c[0] + self.noise * rng.normal());
        x.push(c[1] + self.noise * rng.normal());
        for _ in 2..self.input_dim {
            x.push(self.nuisance_noise * rng.normal());
        }
        x
    }
}

/// Samples a bundle; a pure function of `cfg`.
pub fn generate(cfg: &GeneratorConfig) -> Result<DatasetBundle> {
    cfg.validate()?;
    let mut rng = SeededRng::stream(cfg.seed, streams::DATA);
    let mut next_idx = 0usize;
    let mut take_idx = || {
        next_idx += 1;
        next_idx - 1
    };

    let mut source = Vec::with_capacity(cfg.num_classes * cfg.source_per_class);
    for k in 0..cfg.num_classes {
        for _ in 0..cfg.source_per_class {
            source.push(Sample {
                idx: take_idx(),
                domain: Domain::Source,
                features: cfg.draw(k, &mut rng),
                label: k,
            });
        }
    }

    let mut lt = Vec::new();
    let mut val = Vec::new();
    let mut ut = Vec::new();
    for k in 0..cfg.num_classes {
        for i in 0..cfg.target_per_class {
            let mut features = cfg.draw(k, &mut rng);
            cfg.shift.apply(&mut features);
            let idx = take_idx();
            let s = Sample {
                idx,
                domain: Domain::Target,
                features,
                label: k,
            };
            if i < cfg.shots {
                lt.push(s);
            } else if i < cfg.shots + cfg.val_shots {
                val.push(s);
            } else {
                ut.push((
                    UnlabeledSample {
                        idx,
                        domain: Domain::Target,
                        features: s.features,
                    },
                    k,
                ));
            }
        }
    }
    DatasetBundle::new(cfg.num_classes, cfg.input_dim, source, lt, ut, val)
}

/// Per-class sample counts of a labeled split; handy for reports.
pub fn class_counts(samples: &[Sample], num_classes: usize) -> BTreeMap<usize, usize> {
    let mut counts: BTreeMap<usize, usize> = (0..num_classes).map(|k| (k, 0)).collect();
    for s in samples {
        *counts.entry(s.label).or_default() += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::LabelKey;

    fn small_cfg() -> GeneratorConfig {
        GeneratorConfig {
            num_classes: 3,
            source_per_class: 20,
            target_per_class: 10,
            shots: 1,
            val_shots: 2,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn k_shot_counts() {
        let b = generate(&small_cfg()).unwrap();
        assert_eq!(b.labeled_target_len(), 3);
        assert_eq!(b.shots(), 1);
        assert_eq!(b.validation().len(), 6);
        assert_eq!(b.unlabeled_target().len(), 3 * 7);
    }

    #[test]
    fn unlabeled_count_arithmetic() {
        let cfg = GeneratorConfig {
            num_classes: 5,
            target_per_class: 100,
            source_per_class: 10,
            shots: 3,
            val_shots: 3,
            ..GeneratorConfig::default()
        };
        let b = generate(&cfg).unwrap();
        // brute-force recount from the CSV rows
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let ut_rows = text.lines().skip(1).filter(|l| l.split(',').nth(1) == Some("ut")).count();
        assert_eq!(ut_rows, 470);
        assert_eq!(b.unlabeled_target().len(), 470);
    }

    #[test]
    fn too_many_shots_is_rejected() {
        let cfg = GeneratorConfig {
            target_per_class: 5,
            shots: 3,
            val_shots: 3,
            ..small_cfg()
        };
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small_cfg()).unwrap();
        let b = generate(&small_cfg()).unwrap();
        assert_eq!(a, b);
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
        let c = generate(&GeneratorConfig { seed: 1, ..small_cfg() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn splits_are_disjoint() {
        let b = generate(&small_cfg()).unwrap();
        let mut seen = HashSet::new();
        for s in b.source().iter().chain(b.labeled_target()).chain(b.validation()) {
            assert!(seen.insert(s.idx));
        }
        for s in b.unlabeled_target() {
            assert!(seen.insert(s.idx));
        }
        assert_eq!(seen.len(), b.len());
    }

    fn centroid_means(samples: &[(Vec<f64>, usize)], k: usize) -> Vec<[f64; 2]> {
        let mut sums = vec![[0.0; 2]; k];
        let mut counts = vec![0.0; k];
        for (x, y) in samples {
            sums[*y][0] += x[0];
            sums[*y][1] += x[1];
            counts[*y] += 1.0;
        }
        sums.iter().zip(counts).map(|(s, c)| [s[0] / c, s[1] / c]).collect()
    }

    fn nearest_centroid_target_accuracy(cfg: &GeneratorConfig) -> f64 {
        let b = generate(cfg).unwrap();
        let src: Vec<_> = b.source().iter().map(|s| (s.features.clone(), s.label)).collect();
        let centroids = centroid_means(&src, cfg.num_classes);
        let labels = b.hidden_labels(&LabelKey::for_tests());
        let correct = b
            .unlabeled_target()
            .iter()
            .zip(labels)
            .filter(|(s, &y)| {
                let d = |c: &[f64; 2]| (s.features[0] - c[0]).powi(2) + (s.features[1] - c[1]).powi(2);
                let pred = (0..cfg.num_classes)
                    .min_by(|&a, &b| d(&centroids[a]).total_cmp(&d(&centroids[b])))
                    .unwrap();
                pred == y
            })
            .count();
        correct as f64 / labels.len() as f64
    }

    #[test]
    fn identity_shift_keeps_centroids() {
        let cfg = GeneratorConfig {
            noise: 1e-6,
            shift: ShiftSpec::identity(),
            ..small_cfg()
        };
        let b = generate(&cfg).unwrap();
        let labels = b.hidden_labels(&LabelKey::for_tests());
        for (s, &y) in b.unlabeled_target().iter().zip(labels) {
            let c = cfg.centroid(y);
            assert!((s.features[0] - c[0]).abs() < 1e-4);
            assert!((s.features[1] - c[1]).abs() < 1e-4);
        }
        assert!(nearest_centroid_target_accuracy(&cfg) >= 0.99);
    }

    #[test]
    fn rotation_opens_a_domain_gap() {
        let base = GeneratorConfig {
            num_classes: 6,
            noise: 0.3,
            ..small_cfg()
        };
        let identity = nearest_centroid_target_accuracy(&GeneratorConfig {
            shift: ShiftSpec::identity(),
            ..base.clone()
        });
        let rotated = nearest_centroid_target_accuracy(&GeneratorConfig {
            shift: ShiftSpec {
                rotation_deg: 60.0,
                ..ShiftSpec::identity()
            },
            ..base
        });
        assert!(identity > rotated + 0.3, "identity {identity} rotated {rotated}");
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let b = generate(&small_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        b.save_csv(&path).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(b, back);
    }

    const HEADER: &str = "idx,split,domain,label,f0,f1\n";

    #[test]
    fn missing_source_class_is_rejected() {
        let text = format!(
            "{HEADER}0,ls,source,0,0.1,0.2\n1,lt,target,0,0.3,0.1\n2,ut,target,1,1.0,1.0\n3,val,target,1,0.5,0.5\n"
        );
        let err = read_csv(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("class 1 has no source samples"), "{err}");
    }

    #[test]
    fn minimal_two_class_fixture() {
        let text = format!(
            "{HEADER}0,ls,source,0,0.1,0.2\n1,ls,source,1,-0.1,0.4\n\
             2,lt,target,0,0.3,0.1\n3,lt,target,1,0.2,0.9\n\
             4,ut,target,1,1.0,1.0\n5,ut,target,0,1.5,-1.0\n\
             6,val,target,0,0.5,0.5\n7,val,target,1,0.25,0.5\n"
        );
        let b = read_csv(text.as_bytes()).unwrap();
        assert_eq!(b.num_classes(), 2);
        assert_eq!(b.input_dim(), 2);
        let counts: Vec<usize> = Split::ALL.iter().map(|&s| b.split_len(s)).collect();
        assert_eq!(counts, vec![2, 2, 2, 2]);
        assert_eq!(b.hidden_labels(&LabelKey::for_tests()), &[1, 0]);

        // one row per split cannot give both classes a source sample and a shot
        let four = format!(
            "{HEADER}0,ls,source,0,0.1,0.2\n1,lt,target,1,0.3,0.1\n2,ut,target,0,1.0,1.0\n3,val,target,1,0.5,0.5\n"
        );
        assert!(read_csv(four.as_bytes()).is_err());
    }

    #[test]
    fn csv_errors_are_descriptive() {
        let no_split = "idx,domain,label,f0\n0,source,0,1.0\n";
        assert!(read_csv(no_split.as_bytes()).unwrap_err().to_string().contains("missing column 'split'"));

        let gap = format!("{HEADER}0,ls,source,0,0,0\n1,ls,source,2,0,0\n2,lt,target,0,0,0\n3,lt,target,2,0,0\n");
        assert!(read_csv(gap.as_bytes()).unwrap_err().to_string().contains("non-contiguous"));

        let shots = format!(
            "{HEADER}0,ls,source,0,0,0\n1,ls,source,1,0,0\n2,lt,target,0,0,0\n3,lt,target,0,1,0\n4,lt,target,1,0,0\n"
        );
        assert!(read_csv(shots.as_bytes()).unwrap_err().to_string().contains("shot-count"));

        let domain = format!("{HEADER}0,ls,target,0,0,0\n1,lt,target,0,0,0\n");
        assert!(read_csv(domain.as_bytes()).unwrap_err().to_string().contains("requires domain"));
    }

    #[test]
    fn labeled_target_reads_are_counted() {
        let b = generate(&small_cfg()).unwrap();
        assert_eq!(b.lt_label_reads(), 0);
        let _ = b.labeled_target_features().count();
        assert_eq!(b.lt_label_reads(), 0);
        let _ = b.labeled_target();
        assert_eq!(b.lt_label_reads(), 1);
    }
}
