//! Every training mode on the default benchmark, averaged over seeds.
//!
//! cargo run --release --example ablation_sweep -- [num_seeds]

use predguide::trainer::{run, Mode, RunConfig};

fn main() -> predguide::Result<()> {
    let n: u64 = std::env::args().nth(1).map_or(3, |s| s.parse().expect("number of seeds"));
    println!("{:<14} {:>8} {:>8}", "mode", "mean", "std");
    for mode in Mode::ALL {
        let accs = (0..n)
            .map(|seed| {
                let cfg = RunConfig {
                    mode,
                    seed,
                    ..RunConfig::default()
                };
                run(&cfg).map(|r| 100.0 * r.final_target_accuracy())
            })
            .collect::<predguide::Result<Vec<f64>>>()?;
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (accs.len().max(2) - 1) as f64;
        println!("{:<14} {:>8.2} {:>8.2}", mode.as_str(), mean, var.sqrt());
    }
    Ok(())
}
