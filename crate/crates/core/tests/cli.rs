use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[run]
iterations = 60
recompute_every = 20

[run.schedule]
t1 = 20
t2 = 40
eval_every = 10
patience = 3
target_eval_every = 30

[run.data.generator]
num_classes = 3
source_per_class = 30
target_per_class = 20

[sweep]
seeds = [1, 2]
modes = ["predguide", "s_plus_t"]
"#;

fn predguide(args: &[&str], out_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_predguide"));
    cmd.args(args).env_remove("PREDGUIDE_OUT_DIR");
    if let Some(d) = out_dir {
        cmd.env("PREDGUIDE_OUT_DIR", d);
    }
    cmd.output().expect("spawn predguide")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn train_report_evaluate_export() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let cfg = write_config(tmp.path(), TINY);

    let o = predguide(&["train", "--quiet", "--config", &cfg], Some(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = out.join("predguide/phi_0.5/seed_1");
    for f in ["config.json", "metrics.jsonl", "model.json", "result.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let lines = fs::read_to_string(run.join("metrics.jsonl")).unwrap().lines().count();
    assert_eq!(lines, 60);

    // rerun skips finished runs and leaves them untouched
    let before = fs::read(run.join("metrics.jsonl")).unwrap();
    let o = predguide(&["train", "--config", &cfg], Some(&out));
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("already done"));
    assert_eq!(before, fs::read(run.join("metrics.jsonl")).unwrap());

    let o = predguide(&["report"], Some(&out));
    assert!(o.status.success());
    let md = String::from_utf8_lossy(&o.stdout);
    assert!(md.contains("| predguide | 0.5 | 2 |") && md.contains("| s_plus_t | 0.5 | 2 |"), "{md}");
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);

    let o = predguide(&["evaluate", run.to_str().unwrap()], None);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for split in ["ls", "lt", "ut", "val"] {
        let acc = v[split]["accuracy"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }

    let o = predguide(&["export-embeddings", "-q", run.to_str().unwrap()], None);
    assert!(o.status.success());
    let emb = fs::read_to_string(run.join("embeddings.csv")).unwrap();
    let header = emb.lines().next().unwrap();
    assert!(header.starts_with("idx,split,label,pred,correct,f0,"));
    assert!(header.ends_with(",f15"));
    assert_eq!(emb.lines().count(), 1 + 3 * 30 + 3 * 20);

    // a corrupted result makes the report fail loudly
    fs::write(run.join("result.json"), "{ not json").unwrap();
    let o = predguide(&["report"], Some(&out));
    assert_eq!(o.status.code(), Some(2));
    assert!(fs::read_to_string(out.join("report.csv")).unwrap().contains("failed"));
}

#[test]
fn overrides_collapse_sweep_axes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("o");
    let o = predguide(
        &["train", "-q", "--config", &cfg, "--out-dir", out.to_str().unwrap(), "--seed", "7", "--mode", "no_weights", "--phi", "0.25"],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let modes: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(modes, vec!["no_weights"]);
    assert!(out.join("no_weights/phi_0.25/seed_7/result.json").is_file());
}

#[test]
fn generate_writes_loadable_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let o = predguide(&["generate", "-q", "--seed", "3"], Some(tmp.path()));
    assert!(o.status.success());
    let bundle = predguide::data::load_csv(tmp.path().join("dataset.csv")).unwrap();
    assert_eq!(bundle.num_classes(), 6);
    assert_eq!(bundle, {
        let mut cfg = predguide::trainer::RunConfig::default();
        cfg.seed = 3;
        cfg.dataset().unwrap()
    });
}

#[test]
fn bad_configs_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let typo = write_config(tmp.path(), "[run]\nitrations = 5\n");
    let o = predguide(&["train", "--config", &typo], Some(tmp.path()));
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("itrations"));

    let o = predguide(&["train", "--mode", "mme"], Some(tmp.path()));
    assert!(!o.status.success());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let mut logs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let o = predguide(&["train", "-q", "--config", &cfg, "--seed", "5", "--mode", "predguide", "--out-dir", out.to_str().unwrap()], None);
        assert!(o.status.success());
        logs.push(fs::read(out.join("predguide/phi_0.5/seed_5/metrics.jsonl")).unwrap());
    }
    assert_eq!(logs[0], logs[1]);
}

fn tiny_run() -> predguide::trainer::RunConfig {
    predguide::experiment::ExperimentSpec::from_toml(TINY).unwrap().run
}

#[test]
fn weight_tables_dumped_at_each_recompute() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = predguide::trainer::RunConfig {
        dump_weights: true,
        ..tiny_run()
    };
    predguide::experiment::execute(&cfg, tmp.path()).unwrap();
    let mut dumps: Vec<String> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("weights_"))
        .collect();
    dumps.sort();
    assert_eq!(dumps, vec!["weights_00020.csv", "weights_00040.csv"]);
    let text = fs::read_to_string(tmp.path().join(&dumps[0])).unwrap();
    assert!(text.starts_with("idx,class,similarity,weight\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 30);
}

#[test]
fn divergence_aborts_with_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_run();
    cfg.optimizer.lr = 1e12;
    let err = predguide::experiment::execute(&cfg, tmp.path()).unwrap_err();
    assert!(matches!(err, predguide::Error::NonFinite(_)), "{err}");
    let diag = fs::read_to_string(tmp.path().join("error.json")).unwrap();
    assert!(diag.contains("non-finite") || diag.contains("NaN") || diag.contains("loss at t"), "{diag}");
    assert!(!tmp.path().join("result.json").exists());
}

#[test]
fn example_configs_parse_and_full_lists_defaults() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs");
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let spec = predguide::experiment::ExperimentSpec::load(&path).unwrap();
        assert!(!spec.expand().unwrap().is_empty(), "{}", path.display());
    }
    let full = predguide::experiment::ExperimentSpec::load(dir.join("full.toml")).unwrap();
    assert_eq!(
        serde_json::to_value(&full.run).unwrap(),
        serde_json::to_value(predguide::trainer::RunConfig::default()).unwrap()
    );
}
