//! The source feature bank and the class-adaptability weights built from it,
//! on a model fresh from initialisation.
//!
//! cargo run --example feature_bank

use predguide::augment::{build_lt_a, AugmentPolicy};
use predguide::bank::FeatureBank;
use predguide::data::{generate, GeneratorConfig};
use predguide::model::{HeadConfig, ModelDims, ModelParams};
use predguide::numerics::{streams, SeededRng};
use predguide::weighting::{class_accuracy, class_weight_bounds, compute_weights};

fn main() -> predguide::Result<()> {
    let bundle = generate(&GeneratorConfig {
        num_classes: 3,
        source_per_class: 8,
        target_per_class: 10,
        ..GeneratorConfig::default()
    })?;
    let dims = ModelDims {
        input_dim: bundle.input_dim(),
        hidden: 16,
        feature_dim: 6,
        num_classes: bundle.num_classes(),
    };
    let model = ModelParams::init(dims, HeadConfig::default(), &mut SeededRng::stream(0, streams::INIT));

    let mut bank = FeatureBank::for_source(dims.feature_dim, bundle.source(), dims.num_classes)?;
    bank.refresh_full(&model, bundle.source())?;

    // one momentum step with perturbed features for the first two samples
    let before = bank.column(0).to_vec();
    let moved: Vec<Vec<f64>> = (0..2).map(|i| bank.column(i).iter().map(|v| v + 0.5).collect()).collect();
    bank.momentum_update(&[0, 1], &moved, 0.1)?;
    println!("s_0 before {:?}", round(&before));
    println!("s_0 after  {:?}  (0.1 old + 0.9 new)", round(bank.column(0)));

    let labeled = bundle.labeled_target();
    let lt_a = build_lt_a(labeled, &AugmentPolicy::default(), 4, 4, &mut SeededRng::stream(0, streams::LABELED_AUGMENT))?;
    let acc = class_accuracy(&model, &lt_a, dims.num_classes)?;
    let phi = 0.5;
    let table = compute_weights(&acc, &bank, &model, labeled, phi)?;
    for k in 0..dims.num_classes {
        let (max_w, min_w) = class_weight_bounds(acc.values[k], phi);
        println!("class {k}: a_k = {:.2}, weight range [{min_w:.3}, {max_w:.3}]", acc.values[k]);
        let mut rows: Vec<(f64, f64)> = bank
            .class_members(k)
            .iter()
            .map(|&i| (table.similarity[i].unwrap_or(f64::NAN), table.weights()[i]))
            .collect();
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (s, w) in rows {
            println!("    mean sim {s:+.3} -> weight {w:.3}");
        }
    }
    Ok(())
}

fn round(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1000.0).round() / 1000.0).collect()
}
