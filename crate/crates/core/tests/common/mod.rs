#![allow(dead_code)]

use predguide::losses::{self, ActiveTerms, LossBatch, LossParams, SourceWeighting};
use predguide::model::{self, HeadConfig, ModelDims, ModelParams};
use predguide::numerics::{finite_diff_gradient, SeededRng};
use predguide::weighting::WeightTable;

pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-7;
const FD_EPS: f64 = 1e-6;

/// A random small problem: h=4, d_f=4, K=3, every batch at most 8.
pub struct Instance {
    pub params: ModelParams,
    pub source: Vec<Vec<f64>>,
    pub source_labels: Vec<usize>,
    pub source_indices: Vec<usize>,
    pub weights: WeightTable,
    pub target: Vec<Vec<f64>>,
    pub target_labels: Vec<usize>,
    pub weak: Vec<Vec<f64>>,
    pub strong: Vec<Vec<f64>>,
    pub loss: LossParams,
}

pub fn instance(seed: u64) -> Instance {
    let mut rng = SeededRng::new(seed);
    let k = 3;
    let d_in = 5;
    let dims = ModelDims {
        input_dim: d_in,
        hidden: 4,
        feature_dim: 4,
        num_classes: k,
    };
    let head = if seed % 2 == 0 {
        HeadConfig::default()
    } else {
        HeadConfig {
            normalize: true,
            temperature: 0.5,
        }
    };
    let mut params = ModelParams::init(dims, head, &mut rng);
    // larger weights so predictions are not all near uniform
    let flat: Vec<f64> = params.to_flat().iter().map(|v| 3.0 * v).collect();
    params.set_flat(&flat).unwrap();

    let vecs = |n: usize, rng: &mut SeededRng| -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d_in).map(|_| 1.5 * rng.normal()).collect()).collect()
    };
    let n_s = 1 + rng.below(8);
    let n_t = 1 + rng.below(8);
    let n_u = 2 + rng.below(7);
    let source = vecs(n_s, &mut rng);
    let target = vecs(n_t, &mut rng);
    let weak = vecs(n_u, &mut rng);
    let strong: Vec<Vec<f64>> = weak
        .iter()
        .map(|x| x.iter().map(|v| v + 0.3 * rng.normal()).collect())
        .collect();
    let n_table = 12;
    let source_indices: Vec<usize> = (0..n_s).map(|_| rng.below(n_table)).collect();
    let weights = WeightTable::from_weights((0..n_table).map(|_| 0.5 + rng.uniform()).collect());
    let source_labels = (0..n_s).map(|_| rng.below(k)).collect();
    let target_labels = (0..n_t).map(|_| rng.below(k)).collect();

    // threshold halfway between two confidence levels so roughly half the
    // batch is gated and no sample sits on the boundary
    let mut conf: Vec<f64> = weak
        .iter()
        .map(|x| params.probs(x).unwrap().into_iter().fold(0.0, f64::max))
        .collect();
    conf.sort_by(f64::total_cmp);
    let mid = conf.len() / 2;
    let tau = if mid == 0 { conf[0] - 1e-3 } else { 0.5 * (conf[mid - 1] + conf[mid]) };
    Instance {
        params,
        source,
        source_labels,
        source_indices,
        weights,
        target,
        target_labels,
        weak,
        strong,
        loss: LossParams {
            tau,
            lambda: 0.1 + rng.uniform(),
            focal_gamma: 2.0,
        },
    }
}

impl Instance {
    pub fn batch(&self) -> LossBatch<'_> {
        LossBatch {
            source_indices: self.source_indices.clone(),
            source_inputs: self.source.iter().map(Vec::as_slice).collect(),
            source_labels: self.source_labels.clone(),
            source_weighting: Some(SourceWeighting::Table(&self.weights)),
            target_inputs: self.target.iter().map(Vec::as_slice).collect(),
            target_labels: self.target_labels.clone(),
            unlabeled_weak: self.weak.clone(),
            unlabeled_strong: self.strong.clone(),
        }
    }
}

fn ce(p: &[f64], y: usize) -> f64 {
    -p[y].ln()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Direct recomputation of every term from model probabilities.
pub struct Oracle<'a> {
    inst: &'a Instance,
    /// Pseudo-labels and gates fixed at the base parameters (stop-gradient).
    pseudo: Vec<Option<usize>>,
}

impl<'a> Oracle<'a> {
    pub fn new(inst: &'a Instance) -> Self {
        let pseudo = inst
            .weak
            .iter()
            .map(|x| {
                let p = inst.params.probs(x).unwrap();
                let (mut best, mut arg) = (p[0], 0);
                for (j, &v) in p.iter().enumerate() {
                    if v > best {
                        best = v;
                        arg = j;
                    }
                }
                (best > inst.loss.tau).then_some(arg)
            })
            .collect();
        Oracle { inst, pseudo }
    }

    pub fn gated_count(&self) -> usize {
        self.pseudo.iter().flatten().count()
    }

    pub fn l_s(&self, m: &ModelParams) -> f64 {
        let i = self.inst;
        mean(i.source.iter().zip(&i.source_labels).map(|(x, &y)| ce(&m.probs(x).unwrap(), y)))
    }

    pub fn l_sw(&self, m: &ModelParams) -> f64 {
        let i = self.inst;
        mean(
            i.source
                .iter()
                .zip(&i.source_labels)
                .zip(&i.source_indices)
                .map(|((x, &y), &idx)| i.weights.weights()[idx] * ce(&m.probs(x).unwrap(), y)),
        )
    }

    pub fn l_lt(&self, m: &ModelParams) -> f64 {
        let i = self.inst;
        mean(i.target.iter().zip(&i.target_labels).map(|(x, &y)| ce(&m.probs(x).unwrap(), y)))
    }

    pub fn l_p(&self, m: &ModelParams) -> f64 {
        let i = self.inst;
        mean(
            i.strong
                .iter()
                .zip(&self.pseudo)
                .map(|(x, g)| g.map_or(0.0, |y| ce(&m.probs(x).unwrap(), y))),
        )
    }

    pub fn l_ult(&self, m: &ModelParams) -> f64 {
        mean(self.inst.weak.iter().map(|x| {
            let p = m.probs(x).unwrap();
            -p.iter().map(|v| v * v.ln()).sum::<f64>()
        }))
    }
}

pub fn compare(name: &str, analytic: &[f64], numeric: &[f64]) -> Result<f64, String> {
    if analytic.len() != numeric.len() {
        return Err(format!("{name}: length {} vs {}", analytic.len(), numeric.len()));
    }
    let mut worst: f64 = 0.0;
    for (j, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let diff = (a - n).abs();
        if diff <= ABS_FLOOR {
            continue;
        }
        let rel = diff / a.abs().max(n.abs());
        if rel > REL_TOL {
            return Err(format!("{name}: coordinate {j}: analytic {a:e} numeric {n:e} rel {rel:e}"));
        }
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn numeric<F: Fn(&ModelParams) -> f64>(base: &ModelParams, f: F) -> Vec<f64> {
    let mut scratch = base.clone();
    finite_diff_gradient(
        |flat| {
            scratch.set_flat(flat).unwrap();
            f(&scratch)
        },
        &base.to_flat(),
        FD_EPS,
    )
}

fn only(pseudo_label: bool, source: bool, source_weighted: bool, labeled_target: bool, entropy: bool) -> ActiveTerms {
    ActiveTerms {
        pseudo_label,
        source,
        source_weighted,
        labeled_target,
        entropy,
    }
}

/// Checks each term and both group objectives on one instance; returns the
/// worst relative error seen.
pub fn check_instance(seed: u64) -> Result<f64, String> {
    let inst = instance(seed);
    let oracle = Oracle::new(&inst);
    let batch = inst.batch();
    let p = &inst.params;
    let mut worst: f64 = 0.0;

    type Term<'o> = (&'static str, ActiveTerms, Box<dyn Fn(&ModelParams) -> f64 + 'o>, bool);
    let terms: Vec<Term> = vec![
        ("L_s", only(false, true, false, false, false), Box::new(|m| oracle.l_s(m)), false),
        ("L_s^w", only(false, false, true, false, false), Box::new(|m| oracle.l_sw(m)), false),
        ("L_lt", only(false, false, false, true, false), Box::new(|m| oracle.l_lt(m)), false),
        ("L_p", only(true, false, false, false, false), Box::new(|m| oracle.l_p(m)), false),
        ("L_ULT", only(false, false, false, false, true), Box::new(|m| oracle.l_ult(m)), true),
    ];
    for (name, active, f, is_ult) in &terms {
        let ev = losses::evaluate(p, &batch, active, &inst.loss).map_err(|e| e.to_string())?;
        let g = if *is_ult { ev.grad_ult } else { ev.grad_l1 };
        worst = worst.max(compare(&format!("seed {seed} {name}"), &g.to_flat(), &numeric(p, f))?);
    }

    // both group objectives with every term of the post-T2 phase active
    let active = ActiveTerms::scheduled(5, Some(3), Some(4));
    let lambda = inst.loss.lambda;
    let l1 = |m: &ModelParams| oracle.l_p(m) + oracle.l_sw(m) + oracle.l_lt(m);
    let num_f = numeric(p, |m| l1(m) + lambda * oracle.l_ult(m));
    let num_c = numeric(p, |m| l1(m) - lambda * oracle.l_ult(m));
    let bw = model::backward(p, &batch, &active, &inst.loss).map_err(|e| e.to_string())?;
    let split = p.extractor_len();
    let grad_f: Vec<f64> = bw.grad_extractor.tensors().concat();
    let grad_c: Vec<f64> = bw.grad_classifier.tensors().concat();
    worst = worst.max(compare(&format!("seed {seed} F objective"), &grad_f, &num_f[..split])?);
    worst = worst.max(compare(&format!("seed {seed} C objective"), &grad_c, &num_c[split..])?);
    Ok(worst)
}
