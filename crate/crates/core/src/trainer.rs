//! The three-phase training loop, its baselines and ablations.
//!
//! Per iteration `t`:
//!
//! 1. if source weighting is on (`t >= T1`) and `t % T_n == 0`, rebuild the
//!    augmented labeled targets, measure class-wise accuracy and recompute the
//!    source weight table (the bank is fully refreshed before the first table);
//! 2. draw a source batch, an unlabeled batch (weak + strong views) and, after
//!    `T2`, a labeled-target batch;
//! 3. compute the gated loss terms and take one minimax SGD step;
//! 4. push the source batch features into the bank;
//! 5. periodically evaluate validation accuracy, which drives the
//!    convergence detector that sets `T1` and then `T2`.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::augment::{build_lt_a, AugmentPolicy};
use crate::bank::FeatureBank;
use crate::data::{self, DatasetBundle, GeneratorConfig, Sample, Split};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport};
use crate::losses::{compose, minimax_objectives, ActiveTerms, LossBatch, LossBreakdown, LossParams, SourceWeighting};
use crate::model::{self, HeadConfig, ModelDims, ModelParams, OptimizerState, SgdConfig};
use crate::numerics::{streams, SeededRng};
use crate::weighting::{self, class_accuracy, WeightStats, WeightTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Full method: self-training adaptation, class-adaptability weights, labeled targets.
    Predguide,
    /// Source + labeled target cross-entropy only.
    SPlusT,
    /// Self-training adaptation only; labeled-target labels are never read.
    UdaOnly,
    /// Full schedule with an all-ones weight table.
    NoWeights,
    /// Fixed 1.5 / 0.5 weights for near / far source samples.
    FixedWeights,
    /// Class-adaptability weights with down-weighting removed.
    NearOnly,
    /// Class-adaptability weights with up-weighting removed.
    FarOnly,
    /// Focal loss on the source batch in place of the weighted loss.
    Focal,
}

impl Mode {
    pub const ALL: [Mode; 8] = [
        Mode::Predguide,
        Mode::SPlusT,
        Mode::UdaOnly,
        Mode::NoWeights,
        Mode::FixedWeights,
        Mode::NearOnly,
        Mode::FarOnly,
        Mode::Focal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Predguide => "predguide",
            Mode::SPlusT => "s_plus_t",
            Mode::UdaOnly => "uda_only",
            Mode::NoWeights => "no_weights",
            Mode::FixedWeights => "fixed_weights",
            Mode::NearOnly => "near_only",
            Mode::FarOnly => "far_only",
            Mode::Focal => "focal",
        }
    }

    fn uses_weight_table(self) -> bool {
        matches!(
            self,
            Mode::Predguide | Mode::NoWeights | Mode::FixedWeights | Mode::NearOnly | Mode::FarOnly
        )
    }

    fn detects_phases(self) -> bool {
        !matches!(self, Mode::SPlusT | Mode::UdaOnly)
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode '{s}'")))
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Load this CSV instead of generating.
    pub csv: Option<PathBuf>,
    pub generator: GeneratorConfig,
    /// Replace the generator seed with the run seed.
    pub reseed: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            csv: None,
            generator: GeneratorConfig::default(),
            reseed: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub feature_dim: usize,
    pub head: HeadConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 32,
            feature_dim: 16,
            head: HeadConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchConfig {
    pub source: usize,
    pub unlabeled: usize,
    pub labeled_target: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            source: 16,
            unlabeled: 32,
            labeled_target: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Pin `T1` instead of detecting it.
    pub t1: Option<usize>,
    /// Pin `T2` instead of detecting it.
    pub t2: Option<usize>,
    /// Validation accuracy is measured every `eval_every` iterations.
    pub eval_every: usize,
    /// Convergence window, counted in validation evaluations.
    pub patience: usize,
    /// Target accuracy (hidden labels, never used for training) logged every
    /// this many iterations; 0 disables periodic logging.
    pub target_eval_every: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            t1: None,
            t2: None,
            eval_every: 10,
            patience: 50,
            target_eval_every: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabeledAugmentConfig {
    pub n_weak: usize,
    pub n_strong: usize,
}

impl Default for LabeledAugmentConfig {
    fn default() -> Self {
        LabeledAugmentConfig { n_weak: 4, n_strong: 4 }
    }
}

/// Every hyperparameter of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub iterations: usize,
    /// Weight table recompute period `T_n`.
    pub recompute_every: usize,
    /// Values above `e^{a_k}` give negative `min_w`, so `phi > 1` can push
    /// far source samples to negative weight.
    pub phi: f64,
    /// Bank momentum `m_s`: `s <- m_s s + (1 - m_s) f`.
    pub bank_momentum: f64,
    /// Add wall-clock milliseconds to each metrics record (breaks byte-identical logs).
    pub log_timing: bool,
    /// Write `weights_<t>.csv` into the run directory at every recompute.
    pub dump_weights: bool,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub optimizer: SgdConfig,
    pub loss: LossParams,
    pub batch: BatchConfig,
    pub schedule: ScheduleConfig,
    pub augment: AugmentPolicy,
    pub lt_augment: LabeledAugmentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Predguide,
            seed: 0,
            iterations: 4000,
            recompute_every: 200,
            phi: 0.5,
            bank_momentum: 0.1,
            log_timing: false,
            dump_weights: false,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            optimizer: SgdConfig::default(),
            loss: LossParams::default(),
            batch: BatchConfig::default(),
            schedule: ScheduleConfig::default(),
            augment: AugmentPolicy::default(),
            lt_augment: LabeledAugmentConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.iterations == 0 || self.recompute_every == 0 {
            return bad("iterations and recompute_every must be positive");
        }
        if self.batch.source == 0 || self.batch.unlabeled == 0 || self.batch.labeled_target == 0 {
            return bad("batch sizes must be positive");
        }
        if self.schedule.eval_every == 0 || self.schedule.patience == 0 {
            return bad("schedule.eval_every and schedule.patience must be positive");
        }
        if !(self.phi >= 0.0) {
            return bad("phi must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.bank_momentum) {
            return bad("bank_momentum must be in [0, 1]");
        }
        if !(self.loss.tau > 0.0 && self.loss.tau <= 1.0) {
            return bad("loss.tau must be in (0, 1]");
        }
        if self.loss.lambda < 0.0 || self.loss.focal_gamma < 0.0 {
            return bad("loss.lambda and loss.focal_gamma must be non-negative");
        }
        if !(self.optimizer.lr > 0.0) || self.optimizer.momentum < 0.0 || self.optimizer.weight_decay < 0.0 {
            return bad("optimizer: lr must be positive, momentum and weight_decay non-negative");
        }
        if self.model.hidden == 0 || self.model.feature_dim == 0 {
            return bad("model dimensions must be positive");
        }
        if self.model.head.normalize && !(self.model.head.temperature > 0.0) {
            return bad("model.head.temperature must be positive");
        }
        if let (Some(t1), Some(t2)) = (self.schedule.t1, self.schedule.t2) {
            if t1 > t2 {
                return bad("schedule.t1 must not exceed schedule.t2");
            }
        }
        self.augment.validate()
    }

    /// Loads or generates the dataset described by `data`.
    pub fn dataset(&self) -> Result<DatasetBundle> {
        match &self.data.csv {
            Some(path) => data::load_csv(path),
            None => {
                let mut g = self.data.generator.clone();
                if self.data.reseed {
                    g.seed = self.seed;
                }
                data::generate(&g)
            }
        }
    }
}

/// Fires once validation accuracy has not strictly improved for `window`
/// consecutive evaluations.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceDetector {
    best: Option<f64>,
    since_improvement: usize,
    window: usize,
}

impl ConvergenceDetector {
    pub fn new(window: usize) -> Self {
        ConvergenceDetector {
            best: None,
            since_improvement: 0,
            window: window.max(1),
        }
    }

    /// Feeds one evaluation; returns `true` on the evaluation at which the
    /// no-improvement streak first reaches the window.
    pub fn observe(&mut self, accuracy: f64) -> bool {
        match self.best {
            Some(b) if accuracy <= b => {
                self.since_improvement += 1;
                self.since_improvement == self.window
            }
            _ => {
                self.best = Some(accuracy);
                self.since_improvement = 0;
                false
            }
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn reset(&mut self) {
        self.best = None;
        self.since_improvement = 0;
    }
}

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub t: usize,
    pub phase: u8,
    pub l_p: f64,
    pub l_s: f64,
    pub l_sw: f64,
    pub l_lt: f64,
    pub l_ult: f64,
    pub l1: f64,
    pub active: ActiveTerms,
    pub pseudo_label_count: usize,
    pub val_acc: Option<f64>,
    pub target_acc: Option<f64>,
    pub weight_mean: f64,
    pub weight_min: f64,
    pub weight_max: f64,
    pub recomputed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
}

impl MetricsRecord {
    pub fn losses(&self) -> LossBreakdown {
        LossBreakdown {
            l_p: self.l_p,
            l_s: self.l_s,
            l_sw: self.l_sw,
            l_lt: self.l_lt,
            l_ult: self.l_ult,
            l1: self.l1,
            active: self.active,
            pseudo_label_count: self.pseudo_label_count,
        }
    }
}

/// Shuffle-and-cycle index sampler.
#[derive(Clone, Debug)]
struct Sampler {
    order: Vec<usize>,
    cursor: usize,
}

impl Sampler {
    fn new(n: usize) -> Self {
        Sampler {
            order: (0..n).collect(),
            cursor: n,
        }
    }

    fn draw(&mut self, count: usize, rng: &mut SeededRng) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        if self.order.is_empty() {
            return out;
        }
        while out.len() < count {
            if self.cursor == self.order.len() {
                rng.shuffle(&mut self.order);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Index and augmentation draws of one iteration.
#[derive(Clone, Debug, Default)]
pub struct DrawnBatch {
    pub source: Vec<usize>,
    pub labeled_target: Vec<usize>,
    pub weak: Vec<Vec<f64>>,
    pub strong: Vec<Vec<f64>>,
}

/// Minimax objective for `F` on a batch, before and after the step taken on it.
#[derive(Clone, Copy, Debug)]
pub struct DescentProbe {
    pub before: f64,
    pub after: f64,
}

#[derive(Clone, Debug)]
pub struct Trainer<'a> {
    cfg: RunConfig,
    bundle: &'a DatasetBundle,
    labeled: Option<&'a [Sample]>,
    unlabeled_pool: Vec<&'a [f64]>,
    params: ModelParams,
    optimizer: OptimizerState,
    bank: FeatureBank,
    bank_refreshed: bool,
    weights: WeightTable,
    recomputes: Vec<usize>,
    t: usize,
    t1: Option<usize>,
    t2: Option<usize>,
    detector: ConvergenceDetector,
    batch_rng: SeededRng,
    augment_rng: SeededRng,
    source_sampler: Sampler,
    unlabeled_sampler: Sampler,
    labeled_sampler: Sampler,
    last_val_acc: Option<f64>,
    started: Instant,
}

/// Everything produced by a finished run.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub params: ModelParams,
    pub history: Vec<MetricsRecord>,
    pub t1: Option<usize>,
    pub t2: Option<usize>,
    pub recompute_iterations: Vec<usize>,
    pub target: EvalReport,
    pub validation_accuracy: f64,
    pub final_weights: WeightTable,
    pub wall_clock_ms: u64,
}

impl RunResult {
    pub fn final_target_accuracy(&self) -> f64 {
        self.target.accuracy
    }
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: RunConfig, bundle: &'a DatasetBundle) -> Result<Self> {
        cfg.validate()?;
        let dims = ModelDims {
            input_dim: bundle.input_dim(),
            hidden: cfg.model.hidden,
            feature_dim: cfg.model.feature_dim,
            num_classes: bundle.num_classes(),
        };
        let params = ModelParams::init(dims, cfg.model.head, &mut SeededRng::stream(cfg.seed, streams::INIT));
        let labeled = match cfg.mode {
            Mode::UdaOnly => None,
            _ => Some(bundle.labeled_target()),
        };
        let mut unlabeled_pool: Vec<&[f64]> = Vec::new();
        if cfg.mode != Mode::SPlusT {
            unlabeled_pool.extend(bundle.unlabeled_target().iter().map(|s| s.features.as_slice()));
            unlabeled_pool.extend(bundle.labeled_target_features());
        }
        let (t1, t2) = match cfg.mode {
            Mode::SPlusT | Mode::UdaOnly => (None, None),
            _ => (cfg.schedule.t1, cfg.schedule.t2),
        };
        Ok(Trainer {
            optimizer: OptimizerState::new(cfg.optimizer.clone(), &dims),
            bank: FeatureBank::for_source(dims.feature_dim, bundle.source(), dims.num_classes)?,
            bank_refreshed: false,
            weights: WeightTable::uniform(bundle.source().len()),
            recomputes: Vec::new(),
            t: 0,
            t1,
            t2,
            detector: ConvergenceDetector::new(cfg.schedule.patience),
            batch_rng: SeededRng::stream(cfg.seed, streams::BATCH),
            augment_rng: SeededRng::stream(cfg.seed, streams::AUGMENT),
            source_sampler: Sampler::new(bundle.source().len()),
            unlabeled_sampler: Sampler::new(unlabeled_pool.len()),
            labeled_sampler: Sampler::new(bundle.labeled_target_len()),
            last_val_acc: None,
            started: Instant::now(),
            labeled,
            unlabeled_pool,
            params,
            bundle,
            cfg,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn bank(&self) -> &FeatureBank {
        &self.bank
    }

    pub fn weights(&self) -> &WeightTable {
        &self.weights
    }

    pub fn iteration(&self) -> usize {
        self.t
    }

    pub fn t1(&self) -> Option<usize> {
        self.t1
    }

    pub fn t2(&self) -> Option<usize> {
        self.t2
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.cfg.iterations
    }

    fn phase(&self, t: usize) -> u8 {
        match (self.t1, self.t2) {
            (Some(t1), _) if t < t1 => 1,
            (None, _) => 1,
            (Some(_), Some(t2)) if t > t2 => 3,
            _ => 2,
        }
    }

    pub fn active_terms(&self, t: usize) -> ActiveTerms {
        match self.cfg.mode {
            Mode::SPlusT => ActiveTerms {
                source: true,
                labeled_target: true,
                ..ActiveTerms::default()
            },
            Mode::UdaOnly => ActiveTerms::scheduled(t, None, None),
            _ => ActiveTerms::scheduled(t, self.t1, self.t2),
        }
    }

    fn recompute_due(&self, t: usize) -> bool {
        self.cfg.mode.uses_weight_table()
            && self.t1.is_some_and(|t1| t >= t1)
            && t % self.cfg.recompute_every == 0
    }

    fn labeled(&self) -> Result<&'a [Sample]> {
        self.labeled
            .ok_or_else(|| Error::Config(format!("mode {} has no access to labeled targets", self.cfg.mode)))
    }

    fn recompute_weights(&mut self, t: usize) -> Result<()> {
        let labeled = self.labeled()?;
        if !self.bank_refreshed {
            self.bank.refresh_full(&self.params, self.bundle.source())?;
            self.bank_refreshed = true;
        }
        let mut rng = SeededRng::derived(self.cfg.seed, streams::LABELED_AUGMENT, t as u64);
        let lt_a = build_lt_a(
            labeled,
            &self.cfg.augment,
            self.cfg.lt_augment.n_weak,
            self.cfg.lt_augment.n_strong,
            &mut rng,
        )?;
        let accuracy = class_accuracy(&self.params, &lt_a, self.bundle.num_classes())?;
        let n = self.bank.len();
        let mut table = match self.cfg.mode {
            Mode::NoWeights => {
                let mut t = WeightTable::uniform(n);
                t.accuracy = Some(accuracy);
                t
            }
            Mode::FixedWeights => {
                weighting::fixed_weights(&self.bank, &self.params, labeled, weighting::FIXED_NEAR, weighting::FIXED_FAR)?
            }
            Mode::NearOnly => {
                weighting::compute_weights(&accuracy, &self.bank, &self.params, labeled, self.cfg.phi)?.clamp_near_only()
            }
            Mode::FarOnly => {
                weighting::compute_weights(&accuracy, &self.bank, &self.params, labeled, self.cfg.phi)?.clamp_far_only()
            }
            _ => weighting::compute_weights(&accuracy, &self.bank, &self.params, labeled, self.cfg.phi)?,
        };
        table.created_at = Some(t);
        self.weights = table;
        self.recomputes.push(t);
        Ok(())
    }

    fn draw(&mut self, active: &ActiveTerms) -> DrawnBatch {
        let source = self.source_sampler.draw(self.cfg.batch.source, &mut self.batch_rng);
        let labeled_target = if active.labeled_target {
            self.labeled_sampler.draw(self.cfg.batch.labeled_target, &mut self.batch_rng)
        } else {
            Vec::new()
        };
        let (mut weak, mut strong) = (Vec::new(), Vec::new());
        if active.pseudo_label || active.entropy {
            let idx = self.unlabeled_sampler.draw(self.cfg.batch.unlabeled, &mut self.batch_rng);
            for i in idx {
                let x = self.unlabeled_pool[i];
                weak.push(self.cfg.augment.weak(x, &mut self.augment_rng));
                if active.pseudo_label {
                    strong.push(self.cfg.augment.strong(x, &mut self.augment_rng));
                }
            }
        }
        DrawnBatch {
            source,
            labeled_target,
            weak,
            strong,
        }
    }

    fn loss_batch<'b>(&'b self, drawn: &'b DrawnBatch, active: &ActiveTerms) -> Result<LossBatch<'b>> {
        let src = self.bundle.source();
        let source_weighting = if active.source_weighted {
            Some(match self.cfg.mode {
                Mode::Focal => SourceWeighting::Focal,
                _ => SourceWeighting::Table(&self.weights),
            })
        } else {
            None
        };
        let (target_inputs, target_labels) = if drawn.labeled_target.is_empty() {
            (Vec::new(), Vec::new())
        } else {
            let lt = self.labeled()?;
            (
                drawn.labeled_target.iter().map(|&i| lt[i].features.as_slice()).collect(),
                drawn.labeled_target.iter().map(|&i| lt[i].label).collect(),
            )
        };
        Ok(LossBatch {
            source_indices: drawn.source.clone(),
            source_inputs: drawn.source.iter().map(|&i| src[i].features.as_slice()).collect(),
            source_labels: drawn.source.iter().map(|&i| src[i].label).collect(),
            source_weighting,
            target_inputs,
            target_labels,
            unlabeled_weak: drawn.weak.clone(),
            unlabeled_strong: drawn.strong.clone(),
        })
    }

    /// Runs exactly one iteration and returns its metrics record.
    pub fn step(&mut self) -> Result<MetricsRecord> {
        self.step_inner(false).map(|(r, _)| r)
    }

    /// Like [`Trainer::step`], also reporting the `F` objective on this
    /// iteration's batch before and after the update.
    pub fn step_probe(&mut self) -> Result<(MetricsRecord, DescentProbe)> {
        self.step_inner(true).map(|(r, p)| (r, p.expect("probe requested")))
    }

    fn step_inner(&mut self, probe: bool) -> Result<(MetricsRecord, Option<DescentProbe>)> {
        if self.is_done() {
            return Err(Error::Config(format!("run already finished at t = {}", self.t)));
        }
        let t = self.t;
        let recomputed = self.recompute_due(t);
        if recomputed {
            self.recompute_weights(t)?;
        }

        let active = self.active_terms(t);
        let drawn = self.draw(&active);
        let backward = {
            let batch = self.loss_batch(&drawn, &active)?;
            model::backward(&self.params, &batch, &active, &self.cfg.loss)?
        };
        let breakdown = compose(active, &backward.components);
        let before = minimax_objectives(&breakdown, self.cfg.loss.lambda).0;
        let grads_finite = backward
            .grad_extractor
            .tensors()
            .iter()
            .chain(backward.grad_classifier.tensors().iter())
            .all(|g| g.iter().all(|v| v.is_finite()));
        if !before.is_finite() || !grads_finite {
            return Err(Error::NonFinite(format!(
                "loss at t = {t} (mode {}, seed {}): {}",
                self.cfg.mode,
                self.cfg.seed,
                serde_json::to_string(&breakdown).unwrap_or_default()
            )));
        }

        model::sgd_step(
            &mut self.params,
            &mut self.optimizer,
            &backward.grad_extractor,
            &backward.grad_classifier,
        );
        self.bank
            .momentum_update(&drawn.source, &backward.source_features, self.cfg.bank_momentum)?;

        let probe = if probe {
            let batch = self.loss_batch(&drawn, &active)?;
            let after = crate::losses::evaluate(&self.params, &batch, &active, &self.cfg.loss)?;
            let after = minimax_objectives(&compose(active, &after.components), self.cfg.loss.lambda).0;
            Some(DescentProbe { before, after })
        } else {
            None
        };

        let done_after = t + 1;
        let val_acc = if done_after % self.cfg.schedule.eval_every == 0 {
            let acc = eval::evaluate(&self.params, self.bundle, Split::Val)?.accuracy;
            self.observe_validation(done_after, acc);
            self.last_val_acc = Some(acc);
            Some(acc)
        } else {
            None
        };
        let target_every = self.cfg.schedule.target_eval_every;
        let target_acc = if target_every > 0 && done_after % target_every == 0 {
            Some(eval::evaluate(&self.params, self.bundle, Split::Ut)?.accuracy)
        } else {
            None
        };

        let WeightStats { mean, min, max } = self.weights.stats();
        let record = MetricsRecord {
            t,
            phase: self.phase(t),
            l_p: breakdown.l_p,
            l_s: breakdown.l_s,
            l_sw: breakdown.l_sw,
            l_lt: breakdown.l_lt,
            l_ult: breakdown.l_ult,
            l1: breakdown.l1,
            active: breakdown.active,
            pseudo_label_count: breakdown.pseudo_label_count,
            val_acc,
            target_acc,
            weight_mean: mean,
            weight_min: min,
            weight_max: max,
            recomputed,
            elapsed_ms: self.cfg.log_timing.then(|| self.started.elapsed().as_millis() as u64),
        };
        self.t += 1;
        Ok((record, probe))
    }

    /// `iteration` is the number of completed steps when the evaluation ran.
    fn observe_validation(&mut self, iteration: usize, acc: f64) {
        if !self.cfg.mode.detects_phases() {
            return;
        }
        match (self.t1, self.t2) {
            (None, _) => {
                if self.detector.observe(acc) {
                    self.t1 = Some(iteration);
                    self.detector.reset();
                }
            }
            (Some(t1), None) if iteration > t1 => {
                if self.detector.observe(acc) {
                    self.t2 = Some(iteration);
                }
            }
            _ => {}
        }
    }

    /// Runs to completion, handing each record to `on_record`.
    pub fn run<F>(mut self, mut on_record: F) -> Result<RunResult>
    where
        F: FnMut(&MetricsRecord) -> Result<()>,
    {
        let mut history = Vec::with_capacity(self.cfg.iterations);
        while !self.is_done() {
            let record = self.step()?;
            on_record(&record)?;
            history.push(record);
        }
        self.finish(history)
    }

    /// Final evaluation; `history` is whatever the caller collected from [`Trainer::step`].
    pub fn finish(self, history: Vec<MetricsRecord>) -> Result<RunResult> {
        let target = eval::evaluate(&self.params, self.bundle, Split::Ut)?;
        let validation_accuracy = eval::evaluate(&self.params, self.bundle, Split::Val)?.accuracy;
        Ok(RunResult {
            target,
            validation_accuracy,
            t1: self.t1,
            t2: self.t2,
            recompute_iterations: self.recomputes,
            final_weights: self.weights,
            wall_clock_ms: self.started.elapsed().as_millis() as u64,
            params: self.params,
            history,
        })
    }
}

/// Builds the dataset from `cfg` and trains to completion.
pub fn run(cfg: &RunConfig) -> Result<RunResult> {
    let bundle = cfg.dataset()?;
    run_on(cfg, &bundle)
}

pub fn run_on(cfg: &RunConfig, bundle: &DatasetBundle) -> Result<RunResult> {
    Trainer::new(cfg.clone(), bundle)?.run(|_| Ok(()))
}
