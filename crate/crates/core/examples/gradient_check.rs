//! Compares backprop against central finite differences for every loss term
//! on one small random problem.
//!
//! cargo run --example gradient_check -- [seed]

use predguide::losses::{evaluate, ActiveTerms, LossBatch, LossParams, SourceWeighting};
use predguide::model::{HeadConfig, ModelDims, ModelParams};
use predguide::numerics::{finite_diff_gradient, SeededRng};
use predguide::weighting::WeightTable;

fn main() -> predguide::Result<()> {
    let seed = std::env::args().nth(1).map_or(1, |s| s.parse().expect("seed"));
    let mut rng = SeededRng::new(seed);
    let dims = ModelDims {
        input_dim: 5,
        hidden: 4,
        feature_dim: 4,
        num_classes: 3,
    };
    let params = ModelParams::init(dims, HeadConfig::default(), &mut rng);
    let mut point = || -> Vec<f64> { (0..5).map(|_| rng.normal()).collect() };
    let source: Vec<Vec<f64>> = (0..6).map(|_| point()).collect();
    let target: Vec<Vec<f64>> = (0..4).map(|_| point()).collect();
    let weak: Vec<Vec<f64>> = (0..8).map(|_| point()).collect();
    let strong: Vec<Vec<f64>> = weak.iter().map(|x| x.iter().map(|v| v * 1.1).collect()).collect();
    let table = WeightTable::from_weights(vec![0.6, 1.4, 0.9, 1.2, 1.0, 0.7]);
    let batch = LossBatch {
        source_indices: (0..6).collect(),
        source_inputs: source.iter().map(Vec::as_slice).collect(),
        source_labels: vec![0, 1, 2, 0, 1, 2],
        source_weighting: Some(SourceWeighting::Table(&table)),
        target_inputs: target.iter().map(Vec::as_slice).collect(),
        target_labels: vec![2, 1, 0, 2],
        unlabeled_weak: weak,
        unlabeled_strong: strong,
    };
    // low threshold so the pseudo-label term is not gated away on an untrained net
    let loss = LossParams {
        tau: 0.34,
        ..LossParams::default()
    };

    let none = ActiveTerms::default();
    let terms = [
        ("L_s", ActiveTerms { source: true, ..none }),
        ("L_s^w", ActiveTerms { source_weighted: true, ..none }),
        ("L_lt", ActiveTerms { labeled_target: true, ..none }),
        ("L_p", ActiveTerms { pseudo_label: true, ..none }),
        ("L_ULT", ActiveTerms { entropy: true, ..none }),
    ];
    for (name, active) in terms {
        let ev = evaluate(&params, &batch, &active, &loss)?;
        let analytic = if active.entropy { ev.grad_ult.to_flat() } else { ev.grad_l1.to_flat() };
        let mut scratch = params.clone();
        let numeric = finite_diff_gradient(
            |flat| {
                scratch.set_flat(flat).unwrap();
                let c = evaluate(&scratch, &batch, &active, &loss).unwrap().components;
                c.source + c.source_weighted + c.labeled_target + c.pseudo_label + c.entropy
            },
            &params.to_flat(),
            1e-6,
        );
        let worst = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-7))
            .fold(0.0, f64::max);
        println!("{name:<6} {} params, max relative error {worst:.2e}", analytic.len());
    }
    Ok(())
}
