//! Feature extractor `F` (two-layer perceptron with a `tanh` feature layer)
//! and linear classifier `C`, their exact gradients, and momentum SGD.
//!
//! The two parameter groups are kept as separate structs because the minimax
//! update treats them differently: the entropy term is descended by `F` and
//! ascended by `C`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::losses::{self, ActiveTerms, LossBatch, LossComponents, LossParams};
use crate::numerics::{softmax, Matrix, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input_dim: usize,
    pub hidden: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
}

/// Optional cosine-style head: logits computed from `f / (|f| T)` instead of `f`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub normalize: bool,
    pub temperature: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            normalize: false,
            temperature: 0.05,
        }
    }
}

/// Parameters of `F`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

/// Parameters of `C`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub wc: Matrix,
    pub bc: Vec<f64>,
}

impl FeatureExtractor {
    pub fn zeros(d: &ModelDims) -> Self {
        FeatureExtractor {
            w1: Matrix::zeros(d.hidden, d.input_dim),
            b1: vec![0.0; d.hidden],
            w2: Matrix::zeros(d.feature_dim, d.hidden),
            b2: vec![0.0; d.feature_dim],
        }
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [self.w1.as_mut_slice(), &mut self.b1, self.w2.as_mut_slice(), &mut self.b2]
    }
}

impl Classifier {
    pub fn zeros(d: &ModelDims) -> Self {
        Classifier {
            wc: Matrix::zeros(d.num_classes, d.feature_dim),
            bc: vec![0.0; d.num_classes],
        }
    }

    pub fn tensors(&self) -> [&[f64]; 2] {
        [self.wc.as_slice(), &self.bc]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 2] {
        [self.wc.as_mut_slice(), &mut self.bc]
    }
}

/// Same-shaped accumulators for both groups.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub extractor: FeatureExtractor,
    pub classifier: Classifier,
}

impl Gradients {
    pub fn zeros(d: &ModelDims) -> Self {
        Gradients {
            extractor: FeatureExtractor::zeros(d),
            classifier: Classifier::zeros(d),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        flatten(&self.extractor, &self.classifier)
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

fn flatten(f: &FeatureExtractor, c: &Classifier) -> Vec<f64> {
    f.tensors()
        .into_iter()
        .chain(c.tensors())
        .flat_map(|t| t.iter().copied())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub head: HeadConfig,
    pub extractor: FeatureExtractor,
    pub classifier: Classifier,
}

/// Cached activations of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub pre_hidden: Vec<f64>,
    pub hidden: Vec<f64>,
    pub features: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ModelParams {
    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init(dims: ModelDims, head: HeadConfig, rng: &mut SeededRng) -> Self {
        let mut p = ModelParams {
            dims,
            head,
            extractor: FeatureExtractor::zeros(&dims),
            classifier: Classifier::zeros(&dims),
        };
        let fan_ins = [dims.input_dim, dims.input_dim, dims.hidden, dims.hidden];
        for (t, fan_in) in p.extractor.tensors_mut().into_iter().zip(fan_ins) {
            fill_uniform(t, fan_in, rng);
        }
        for t in p.classifier.tensors_mut() {
            fill_uniform(t, dims.feature_dim, rng);
        }
        p
    }

    pub fn zeros(dims: ModelDims) -> Self {
        ModelParams {
            dims,
            head: HeadConfig::default(),
            extractor: FeatureExtractor::zeros(&dims),
            classifier: Classifier::zeros(&dims),
        }
    }

    pub fn num_params(&self) -> usize {
        self.extractor_len() + self.classifier.tensors().iter().map(|t| t.len()).sum::<usize>()
    }

    /// Number of leading flat coordinates that belong to `F`.
    pub fn extractor_len(&self) -> usize {
        self.extractor.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        flatten(&self.extractor, &self.classifier)
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_len("ModelParams::set_flat", self.num_params(), flat.len())?;
        let mut rest = flat;
        for t in self.extractor.tensors_mut().into_iter().chain(self.classifier.tensors_mut()) {
            let (head, tail) = rest.split_at(t.len());
            t.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    /// `tanh(W2 relu(W1 x + b1) + b2)`
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.hidden_and_features(x)?.2)
    }

    fn hidden_and_features(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let e = &self.extractor;
        let pre_hidden = e.w1.affine(x, &e.b1)?;
        let hidden: Vec<f64> = pre_hidden.iter().map(|&z| z.max(0.0)).collect();
        let features = e.w2.affine(&hidden, &e.b2)?.into_iter().map(f64::tanh).collect();
        Ok((pre_hidden, hidden, features))
    }

    fn head_input(&self, f: &[f64]) -> Vec<f64> {
        if self.head.normalize {
            let n = crate::numerics::norm(f).max(crate::numerics::ZERO_NORM);
            f.iter().map(|v| v / (n * self.head.temperature)).collect()
        } else {
            f.to_vec()
        }
    }

    /// Classifier output for a feature vector.
    pub fn logits(&self, f: &[f64]) -> Result<Vec<f64>> {
        check_len("ModelParams::logits", self.dims.feature_dim, f.len())?;
        self.classifier.wc.affine(&self.head_input(f), &self.classifier.bc)
    }

    pub fn probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.probs)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        crate::numerics::argmax(&self.forward(x)?.logits)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        check_len("ModelParams::forward", self.dims.input_dim, x.len())?;
        let (pre_hidden, hidden, features) = self.hidden_and_features(x)?;
        let logits = self.logits(&features)?;
        let probs = softmax(&logits)?;
        Ok(Forward {
            pre_hidden,
            hidden,
            features,
            logits,
            probs,
        })
    }

    /// Accumulates into `grads` the parameter gradient of a scalar whose
    /// gradient with respect to this sample's logits is `dlogits`.
    pub fn backward_sample(&self, x: &[f64], fwd: &Forward, dlogits: &[f64], grads: &mut Gradients) -> Result<()> {
        check_len("backward_sample", self.dims.num_classes, dlogits.len())?;
        if dlogits.iter().all(|&g| g == 0.0) {
            return Ok(());
        }
        let g = &mut grads.classifier;
        g.wc.add_outer(dlogits, &self.head_input(&fwd.features), 1.0)?;
        for (b, d) in g.bc.iter_mut().zip(dlogits) {
            *b += d;
        }

        let dhead = self.classifier.wc.transpose_mul(dlogits)?;
        let dfeat = if self.head.normalize {
            let f = &fwd.features;
            let n = crate::numerics::norm(f).max(crate::numerics::ZERO_NORM);
            let t = self.head.temperature;
            let u: Vec<f64> = f.iter().map(|v| v / n).collect();
            let proj: f64 = u.iter().zip(&dhead).map(|(a, b)| a * b).sum();
            dhead.iter().zip(&u).map(|(d, ui)| (d - ui * proj) / (n * t)).collect()
        } else {
            dhead
        };
        let dpre_feat: Vec<f64> = dfeat
            .iter()
            .zip(&fwd.features)
            .map(|(d, f)| d * (1.0 - f * f))
            .collect();

        let e = &mut grads.extractor;
        e.w2.add_outer(&dpre_feat, &fwd.hidden, 1.0)?;
        for (b, d) in e.b2.iter_mut().zip(&dpre_feat) {
            *b += d;
        }
        let dhidden = self.extractor.w2.transpose_mul(&dpre_feat)?;
        let dpre_hidden: Vec<f64> = dhidden
            .iter()
            .zip(&fwd.pre_hidden)
            .map(|(d, &z)| if z > 0.0 { *d } else { 0.0 })
            .collect();
        e.w1.add_outer(&dpre_hidden, x, 1.0)?;
        for (b, d) in e.b1.iter_mut().zip(&dpre_hidden) {
            *b += d;
        }
        Ok(())
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: ModelParams = serde_json::from_str(&text)?;
        p.check_shapes()?;
        Ok(p)
    }

    pub fn check_shapes(&self) -> Result<()> {
        let d = &self.dims;
        let e = &self.extractor;
        let c = &self.classifier;
        check_len("checkpoint w1", d.hidden * d.input_dim, e.w1.as_slice().len())?;
        check_len("checkpoint w1 cols", d.input_dim, e.w1.cols())?;
        check_len("checkpoint b1", d.hidden, e.b1.len())?;
        check_len("checkpoint w2", d.feature_dim * d.hidden, e.w2.as_slice().len())?;
        check_len("checkpoint w2 cols", d.hidden, e.w2.cols())?;
        check_len("checkpoint b2", d.feature_dim, e.b2.len())?;
        check_len("checkpoint wc", d.num_classes * d.feature_dim, c.wc.as_slice().len())?;
        check_len("checkpoint wc cols", d.feature_dim, c.wc.cols())?;
        check_len("checkpoint bc", d.num_classes, c.bc.len())
    }
}

fn fill_uniform(t: &mut [f64], fan_in: usize, rng: &mut SeededRng) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    for v in t {
        *v = bound * (2.0 * rng.uniform() - 1.0);
    }
}

/// Result of one minimax backward pass.
#[derive(Clone, Debug)]
pub struct Backward {
    pub components: LossComponents,
    /// Gradient for `F`: `grad(L1) + lambda * grad(L_ULT)`.
    pub grad_extractor: FeatureExtractor,
    /// Gradient for `C`: `grad(L1) - lambda * grad(L_ULT)`.
    pub grad_classifier: Classifier,
    /// Features of the source batch, in batch order.
    pub source_features: Vec<Vec<f64>>,
}

/// Gradients of the active loss terms, composed with the minimax signs.
pub fn backward(params: &ModelParams, batch: &LossBatch<'_>, active: &ActiveTerms, loss: &LossParams) -> Result<Backward> {
    let eval = losses::evaluate(params, batch, active, loss)?;
    let lambda = loss.lambda;
    let mut grad_extractor = eval.grad_l1.extractor;
    for (g, u) in grad_extractor.tensors_mut().into_iter().zip(eval.grad_ult.extractor.tensors()) {
        for (a, b) in g.iter_mut().zip(u) {
            *a += lambda * b;
        }
    }
    let mut grad_classifier = eval.grad_l1.classifier;
    for (g, u) in grad_classifier.tensors_mut().into_iter().zip(eval.grad_ult.classifier.tensors()) {
        for (a, b) in g.iter_mut().zip(u) {
            *a -= lambda * b;
        }
    }
    Ok(Backward {
        components: eval.components,
        grad_extractor,
        grad_classifier,
        source_features: eval.source_features,
    })
}

/// Optional `lr * (1 + gamma * step)^(-power)` decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvDecay {
    pub gamma: f64,
    pub power: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub inv_decay: Option<InvDecay>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            inv_decay: None,
        }
    }
}

impl SgdConfig {
    pub fn lr_at(&self, step: u64) -> f64 {
        match self.inv_decay {
            Some(d) => self.lr * (1.0 + d.gamma * step as f64).powf(-d.power),
            None => self.lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: SgdConfig,
    pub velocity: Gradients,
    pub steps: u64,
}

impl OptimizerState {
    pub fn new(config: SgdConfig, dims: &ModelDims) -> Self {
        OptimizerState {
            config,
            velocity: Gradients::zeros(dims),
            steps: 0,
        }
    }
}

/// `v <- mu v + g + wd theta; theta <- theta - lr v`
pub fn sgd_update(theta: &mut [f64], velocity: &mut [f64], grad: &[f64], lr: f64, momentum: f64, weight_decay: f64) {
    for ((t, v), g) in theta.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v + g + weight_decay * *t;
        *t -= lr * *v;
    }
}

pub fn sgd_step(params: &mut ModelParams, opt: &mut OptimizerState, grad_f: &FeatureExtractor, grad_c: &Classifier) {
    let lr = opt.config.lr_at(opt.steps);
    let (mu, wd) = (opt.config.momentum, opt.config.weight_decay);
    let f_groups = params
        .extractor
        .tensors_mut()
        .into_iter()
        .zip(opt.velocity.extractor.tensors_mut())
        .zip(grad_f.tensors());
    for ((t, v), g) in f_groups {
        sgd_update(t, v, g, lr, mu, wd);
    }
    let c_groups = params
        .classifier
        .tensors_mut()
        .into_iter()
        .zip(opt.velocity.classifier.tensors_mut())
        .zip(grad_c.tensors());
    for ((t, v), g) in c_groups {
        sgd_update(t, v, g, lr, mu, wd);
    }
    opt.steps += 1;
}
