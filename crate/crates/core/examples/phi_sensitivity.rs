//! Sweeps phi through the experiment harness and prints the report table.
//! Runs land in `target/phi_sweep` and are reused on a second invocation.
//!
//! cargo run --release --example phi_sensitivity

use std::path::Path;

use predguide::experiment::{execute_all, ExperimentSpec, Report};

fn main() -> predguide::Result<()> {
    let spec = ExperimentSpec::from_toml(
        r#"
        [run]
        mode = "predguide"

        [sweep]
        phi = [0.0, 0.1, 0.25, 0.5, 1.0, 2.0]
        seeds = [0, 1, 2]
        "#,
    )?;
    let out = Path::new("target/phi_sweep");
    for r in execute_all(&spec.expand()?, out, |cfg, r| {
        if let Ok(o) = r {
            eprintln!("phi {:<5} seed {}: {:.3}", cfg.phi, cfg.seed, o.summary().final_target_accuracy);
        }
    }) {
        r?;
    }
    let report = Report::collect(out)?;
    print!("{}", report.markdown());
    Ok(())
}
