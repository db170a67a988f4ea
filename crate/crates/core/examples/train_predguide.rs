//! Trains the full method on the default benchmark and prints the phase
//! boundaries, the weight table at the end and the final accuracies.
//!
//! cargo run --release --example train_predguide -- [seed]

use predguide::trainer::{RunConfig, Trainer};

fn main() -> predguide::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed must be an integer"));
    let cfg = RunConfig {
        seed,
        ..RunConfig::default()
    };
    let bundle = cfg.dataset()?;
    let trainer = Trainer::new(cfg, &bundle)?;
    let res = trainer.run(|rec| {
        if let Some(acc) = rec.target_acc {
            if rec.t % 500 == 499 {
                println!(
                    "t = {:>4}  phase {}  L1 = {:.3}  L_ULT = {:.3}  confident = {:>2}  target acc = {:.3}",
                    rec.t, rec.phase, rec.l1, rec.l_ult, rec.pseudo_label_count, acc
                );
            }
        }
        Ok(())
    })?;

    println!("T1 = {:?}, T2 = {:?}", res.t1, res.t2);
    println!("weight recomputes at {:?}", res.recompute_iterations);
    let stats = res.final_weights.stats();
    println!("last weight table: mean {:.3}, min {:.3}, max {:.3}", stats.mean, stats.min, stats.max);
    if let Some(a) = &res.final_weights.accuracy {
        let a: Vec<String> = a.values.iter().map(|v| format!("{v:.2}")).collect();
        println!("labeled-target class accuracy A = [{}]", a.join(", "));
    }
    println!("validation accuracy {:.3}", res.validation_accuracy);
    println!("target accuracy     {:.3}", res.final_target_accuracy());
    for (k, acc) in res.target.per_class.iter().enumerate() {
        println!("  class {k}: {}", acc.map_or("-".into(), |a| format!("{a:.3}")));
    }
    Ok(())
}
