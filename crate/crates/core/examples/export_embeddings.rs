//! Trains a short run and writes per-sample features for external plotting.
//!
//! cargo run --release --example export_embeddings -- [out.csv]

use predguide::eval::export_embeddings;
use predguide::trainer::{run_on, RunConfig};

fn main() -> predguide::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/embeddings.csv".into());
    let cfg = RunConfig {
        iterations: 1500,
        ..RunConfig::default()
    };
    let bundle = cfg.dataset()?;
    let res = run_on(&cfg, &bundle)?;
    export_embeddings(&res.params, &bundle, &out)?;
    println!("target accuracy {:.3}; wrote {} rows to {out}", res.final_target_accuracy(), bundle.len());
    Ok(())
}
