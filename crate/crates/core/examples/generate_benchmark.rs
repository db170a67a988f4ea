//! Generates the default benchmark, prints split sizes and how badly a
//! source-fit nearest-centroid classifier does on the target domain.
//!
//! cargo run --example generate_benchmark -- [seed] [out.csv]

use predguide::data::{class_counts, generate, GeneratorConfig, ShiftSpec, Split};

fn nearest_centroid_accuracy(cfg: &GeneratorConfig) -> predguide::Result<(f64, f64)> {
    let bundle = generate(cfg)?;
    let k = bundle.num_classes();
    let d = bundle.input_dim();
    let mut centroids = vec![vec![0.0; d]; k];
    let counts = class_counts(bundle.source(), k);
    for s in bundle.source() {
        for (c, x) in centroids[s.label].iter_mut().zip(&s.features) {
            *c += x / counts[&s.label] as f64;
        }
    }
    let predict = |x: &[f64]| {
        (0..k)
            .min_by(|&a, &b| {
                let da: f64 = centroids[a].iter().zip(x).map(|(c, v)| (c - v).powi(2)).sum();
                let db: f64 = centroids[b].iter().zip(x).map(|(c, v)| (c - v).powi(2)).sum();
                da.total_cmp(&db)
            })
            .unwrap()
    };
    let acc = |split| {
        let samples = predguide::eval::split_samples(&bundle, split);
        samples.iter().filter(|(x, y)| predict(x) == *y).count() as f64 / samples.len() as f64
    };
    Ok((acc(Split::Ls), acc(Split::Ut)))
}

fn main() -> predguide::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().map_or(0, |s| s.parse().expect("seed must be an integer"));
    let out = args.next();

    let cfg = GeneratorConfig {
        seed,
        ..GeneratorConfig::default()
    };
    let bundle = generate(&cfg)?;
    println!("K = {}, d_in = {}, shots = {}", bundle.num_classes(), bundle.input_dim(), bundle.shots());
    for split in Split::ALL {
        println!("  {:<4} {:>5} samples", split.as_str(), bundle.split_len(split));
    }

    let (src, tgt) = nearest_centroid_accuracy(&cfg)?;
    println!("nearest source centroid: source {:.3}, target {:.3}", src, tgt);
    let (_, same) = nearest_centroid_accuracy(&GeneratorConfig {
        shift: ShiftSpec::identity(),
        ..cfg.clone()
    })?;
    println!("same classifier without the shift: target {same:.3}");

    if let Some(path) = out {
        bundle.save_csv(&path)?;
        println!("wrote {path}");
    }
    Ok(())
}
