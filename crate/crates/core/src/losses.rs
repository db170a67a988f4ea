//! Loss terms, their phase gating, and their gradients with respect to logits.
//!
//! Each term function takes class probabilities and returns the batch-mean
//! value together with `d value / d logits` for every sample; [`evaluate`]
//! pushes those through the network.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::{Gradients, ModelParams};
use crate::numerics::{argmax, cross_entropy_index, entropy, LOG_EPS};
use crate::weighting::WeightTable;

/// Batch-mean loss value and its per-sample logit gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct TermOutput {
    pub value: f64,
    pub dlogits: Vec<Vec<f64>>,
}

impl TermOutput {
    fn empty() -> Self {
        TermOutput {
            value: 0.0,
            dlogits: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelOutput {
    pub term: TermOutput,
    /// Samples whose weak-view confidence exceeded `tau`.
    pub confident: usize,
}

/// Mean over the batch of `1(max p_w > tau) * H(onehot(argmax p_w), p_s)`.
///
/// The pseudo-label is a constant: gradients only flow through the strong view.
pub fn pseudo_label_loss(probs_weak: &[Vec<f64>], probs_strong: &[Vec<f64>], tau: f64) -> Result<PseudoLabelOutput> {
    check_len("pseudo_label_loss", probs_weak.len(), probs_strong.len())?;
    let n = probs_weak.len();
    if n == 0 {
        return Ok(PseudoLabelOutput {
            term: TermOutput::empty(),
            confident: 0,
        });
    }
    let mut total = 0.0;
    let mut confident = 0;
    let mut dlogits = Vec::with_capacity(n);
    for (pw, ps) in probs_weak.iter().zip(probs_strong) {
        check_len("pseudo_label_loss(classes)", pw.len(), ps.len())?;
        let label = argmax(pw)?;
        if pw[label] > tau {
            confident += 1;
            total += cross_entropy_index(label, ps)?;
            let mut d: Vec<f64> = ps.iter().map(|p| p / n as f64).collect();
            d[label] -= 1.0 / n as f64;
            dlogits.push(d);
        } else {
            dlogits.push(vec![0.0; ps.len()]);
        }
    }
    Ok(PseudoLabelOutput {
        term: TermOutput {
            value: total / n as f64,
            dlogits,
        },
        confident,
    })
}

fn scaled_ce(labels: &[usize], probs: &[Vec<f64>], weights: impl Iterator<Item = f64>) -> Result<TermOutput> {
    check_len("cross-entropy batch", labels.len(), probs.len())?;
    let n = labels.len();
    if n == 0 {
        return Ok(TermOutput::empty());
    }
    let mut total = 0.0;
    let mut dlogits = Vec::with_capacity(n);
    for ((&y, p), w) in labels.iter().zip(probs).zip(weights) {
        total += w * cross_entropy_index(y, p)?;
        let mut d: Vec<f64> = p.iter().map(|q| w * q / n as f64).collect();
        d[y] -= w / n as f64;
        dlogits.push(d);
    }
    Ok(TermOutput {
        value: total / n as f64,
        dlogits,
    })
}

/// Mean `H(y, p)` over a labeled source batch.
pub fn source_ce(labels: &[usize], probs: &[Vec<f64>]) -> Result<TermOutput> {
    scaled_ce(labels, probs, std::iter::repeat(1.0))
}

/// Mean `w_i H(y_i, p_i)`, weights looked up by source index.
pub fn weighted_source_ce(
    source_indices: &[usize],
    labels: &[usize],
    probs: &[Vec<f64>],
    table: &WeightTable,
) -> Result<TermOutput> {
    check_len("weighted_source_ce", labels.len(), source_indices.len())?;
    let weights = source_indices
        .iter()
        .map(|&i| table.weight(i))
        .collect::<Result<Vec<f64>>>()?;
    scaled_ce(labels, probs, weights.into_iter())
}

/// Mean `H(y, p)` over labeled targets.
pub fn labeled_target_ce(labels: &[usize], probs: &[Vec<f64>]) -> Result<TermOutput> {
    scaled_ce(labels, probs, std::iter::repeat(1.0))
}

/// Mean prediction entropy of a batch.
pub fn unlabeled_entropy(probs: &[Vec<f64>]) -> TermOutput {
    let n = probs.len();
    if n == 0 {
        return TermOutput::empty();
    }
    let mut total = 0.0;
    let dlogits = probs
        .iter()
        .map(|p| {
            let h = entropy(p);
            total += h;
            // dH/dz_j = -p_j (ln p_j + H)
            p.iter()
                .map(|&q| if q > 0.0 { -q * (q.max(LOG_EPS).ln() + h) / n as f64 } else { 0.0 })
                .collect()
        })
        .collect();
    TermOutput {
        value: total / n as f64,
        dlogits,
    }
}

/// Mean `(1 - p_y)^gamma * (-ln p_y)`.
pub fn focal_source_ce(labels: &[usize], probs: &[Vec<f64>], gamma: f64) -> Result<TermOutput> {
    if gamma < 0.0 {
        return Err(Error::Config(format!("focal gamma {gamma} < 0")));
    }
    check_len("focal_source_ce", labels.len(), probs.len())?;
    let n = labels.len();
    if n == 0 {
        return Ok(TermOutput::empty());
    }
    let mut total = 0.0;
    let mut dlogits = Vec::with_capacity(n);
    for (&y, p) in labels.iter().zip(probs) {
        let q = p[y];
        let nll = -q.max(LOG_EPS).ln();
        let modulator = (1.0 - q).powf(gamma);
        total += modulator * nll;
        // d/dq [(1-q)^g (-ln q)] = -g (1-q)^(g-1) (-ln q) - (1-q)^g / q
        let dmod = if gamma == 0.0 { 0.0 } else { -gamma * (1.0 - q).powf(gamma - 1.0) * nll };
        let dq = dmod - modulator / q.max(LOG_EPS);
        // dq/dz_j = q (1[j = y] - p_j)
        let d = p
            .iter()
            .enumerate()
            .map(|(j, &pj)| dq * q * (f64::from(u8::from(j == y)) - pj) / n as f64)
            .collect();
        dlogits.push(d);
    }
    Ok(TermOutput {
        value: total / n as f64,
        dlogits,
    })
}

/// Which terms contribute this iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveTerms {
    pub pseudo_label: bool,
    pub source: bool,
    pub source_weighted: bool,
    pub labeled_target: bool,
    pub entropy: bool,
}

impl ActiveTerms {
    /// Phase gates of the full method. `t1`/`t2` are `None` until detected.
    /// At `t == t1` the weighted source branch is used.
    pub fn scheduled(t: usize, t1: Option<usize>, t2: Option<usize>) -> Self {
        let weighted = t1.is_some_and(|t1| t >= t1);
        ActiveTerms {
            pseudo_label: true,
            source: !weighted,
            source_weighted: weighted,
            labeled_target: t2.is_some_and(|t2| t > t2),
            entropy: true,
        }
    }
}

/// Raw values of every computed term (zero when not computed).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub pseudo_label: f64,
    pub pseudo_label_count: usize,
    pub source: f64,
    pub source_weighted: f64,
    pub labeled_target: f64,
    pub entropy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_p: f64,
    pub l_s: f64,
    pub l_sw: f64,
    pub l_lt: f64,
    pub l_ult: f64,
    pub l1: f64,
    pub active: ActiveTerms,
    pub pseudo_label_count: usize,
}

/// Zeroes inactive terms and sums the active non-entropy terms into `l1`.
pub fn compose(active: ActiveTerms, c: &LossComponents) -> LossBreakdown {
    let on = |flag: bool, v: f64| if flag { v } else { 0.0 };
    let l_p = on(active.pseudo_label, c.pseudo_label);
    let l_s = on(active.source, c.source);
    let l_sw = on(active.source_weighted, c.source_weighted);
    let l_lt = on(active.labeled_target, c.labeled_target);
    LossBreakdown {
        l_p,
        l_s,
        l_sw,
        l_lt,
        l_ult: on(active.entropy, c.entropy),
        l1: l_p + l_s + l_sw + l_lt,
        active,
        pseudo_label_count: if active.pseudo_label { c.pseudo_label_count } else { 0 },
    }
}

/// `L1 = L_p + 1(t < T1) L_s + 1(t >= T1) L_s^w + 1(t > T2) L_lt`.
pub fn gated_l1(t: usize, t1: Option<usize>, t2: Option<usize>, components: &LossComponents) -> LossBreakdown {
    compose(ActiveTerms::scheduled(t, t1, t2), components)
}

/// Minimax objectives `(L1 + lambda L_ULT, L1 - lambda L_ULT)` for `F` and `C`.
pub fn minimax_objectives(b: &LossBreakdown, lambda: f64) -> (f64, f64) {
    (b.l1 + lambda * b.l_ult, b.l1 - lambda * b.l_ult)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossParams {
    /// Pseudo-label confidence threshold (strict `>`).
    pub tau: f64,
    /// Weight of the entropy term in the minimax objectives.
    pub lambda: f64,
    pub focal_gamma: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            tau: 0.9,
            lambda: 0.1,
            focal_gamma: 2.0,
        }
    }
}

/// How the source term is scaled once source weighting is active.
#[derive(Clone, Copy, Debug)]
pub enum SourceWeighting<'a> {
    Table(&'a WeightTable),
    Focal,
}

/// Inputs of one training iteration.
#[derive(Clone, Debug, Default)]
pub struct LossBatch<'a> {
    pub source_indices: Vec<usize>,
    pub source_inputs: Vec<&'a [f64]>,
    pub source_labels: Vec<usize>,
    pub source_weighting: Option<SourceWeighting<'a>>,
    pub target_inputs: Vec<&'a [f64]>,
    pub target_labels: Vec<usize>,
    pub unlabeled_weak: Vec<Vec<f64>>,
    pub unlabeled_strong: Vec<Vec<f64>>,
}

/// Term values plus separate gradients of `L1` and `L_ULT` over all parameters.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub components: LossComponents,
    pub grad_l1: Gradients,
    pub grad_ult: Gradients,
    pub source_features: Vec<Vec<f64>>,
}

fn push_back(params: &ModelParams, inputs: &[&[f64]], fwds: &[crate::model::Forward], out: &TermOutput, grads: &mut Gradients) -> Result<()> {
    for ((x, f), d) in inputs.iter().zip(fwds).zip(&out.dlogits) {
        params.backward_sample(x, f, d, grads)?;
    }
    Ok(())
}

pub fn evaluate(params: &ModelParams, batch: &LossBatch<'_>, active: &ActiveTerms, loss: &LossParams) -> Result<Evaluation> {
    let mut c = LossComponents::default();
    let mut grad_l1 = Gradients::zeros(&params.dims);
    let mut grad_ult = Gradients::zeros(&params.dims);

    let src_fwd = batch
        .source_inputs
        .iter()
        .map(|x| params.forward(x))
        .collect::<Result<Vec<_>>>()?;
    let src_probs: Vec<Vec<f64>> = src_fwd.iter().map(|f| f.probs.clone()).collect();
    if active.source {
        let out = source_ce(&batch.source_labels, &src_probs)?;
        c.source = out.value;
        push_back(params, &batch.source_inputs, &src_fwd, &out, &mut grad_l1)?;
    }
    if active.source_weighted {
        let out = match batch.source_weighting {
            Some(SourceWeighting::Table(table)) => {
                weighted_source_ce(&batch.source_indices, &batch.source_labels, &src_probs, table)?
            }
            Some(SourceWeighting::Focal) => focal_source_ce(&batch.source_labels, &src_probs, loss.focal_gamma)?,
            None => return Err(Error::Config("weighted source loss active without a weighting".into())),
        };
        c.source_weighted = out.value;
        push_back(params, &batch.source_inputs, &src_fwd, &out, &mut grad_l1)?;
    }

    if active.labeled_target {
        let fwd = batch
            .target_inputs
            .iter()
            .map(|x| params.forward(x))
            .collect::<Result<Vec<_>>>()?;
        let probs: Vec<Vec<f64>> = fwd.iter().map(|f| f.probs.clone()).collect();
        let out = labeled_target_ce(&batch.target_labels, &probs)?;
        c.labeled_target = out.value;
        push_back(params, &batch.target_inputs, &fwd, &out, &mut grad_l1)?;
    }

    if active.pseudo_label || active.entropy {
        let weak: Vec<&[f64]> = batch.unlabeled_weak.iter().map(Vec::as_slice).collect();
        let weak_fwd = weak.iter().map(|x| params.forward(x)).collect::<Result<Vec<_>>>()?;
        let weak_probs: Vec<Vec<f64>> = weak_fwd.iter().map(|f| f.probs.clone()).collect();
        if active.pseudo_label {
            let strong: Vec<&[f64]> = batch.unlabeled_strong.iter().map(Vec::as_slice).collect();
            let strong_fwd = strong.iter().map(|x| params.forward(x)).collect::<Result<Vec<_>>>()?;
            let strong_probs: Vec<Vec<f64>> = strong_fwd.iter().map(|f| f.probs.clone()).collect();
            let out = pseudo_label_loss(&weak_probs, &strong_probs, loss.tau)?;
            c.pseudo_label = out.term.value;
            c.pseudo_label_count = out.confident;
            push_back(params, &strong, &strong_fwd, &out.term, &mut grad_l1)?;
        }
        if active.entropy {
            let out = unlabeled_entropy(&weak_probs);
            c.entropy = out.value;
            push_back(params, &weak, &weak_fwd, &out, &mut grad_ult)?;
        }
    }

    Ok(Evaluation {
        components: c,
        grad_l1,
        grad_ult,
        source_features: src_fwd.into_iter().map(|f| f.features).collect(),
    })
}
