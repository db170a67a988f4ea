//! Experiment files, run directories and reports.
//!
//! An experiment file is TOML with a `[run]` table (a [`RunConfig`]) and an
//! optional `[sweep]` table listing `phi`, `seeds` and `modes`. Each point of
//! the sweep gets its own directory `<out>/<mode>/phi_<phi>/seed_<seed>/`
//! holding `config.json`, `metrics.jsonl`, `model.json` and `result.json`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::{Mode, RunConfig, RunResult, Trainer};

/// Upper bound on the number of runs one sweep may expand to.
pub const MAX_SWEEP_RUNS: usize = 64;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub phi: Vec<f64>,
    pub seeds: Vec<u64>,
    pub modes: Vec<Mode>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub run: RunConfig,
    pub sweep: SweepConfig,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text)?;
        spec.run.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// One config per (mode, phi, seed); an empty axis keeps the base value.
    pub fn expand(&self) -> Result<Vec<RunConfig>> {
        let modes = if self.sweep.modes.is_empty() { vec![self.run.mode] } else { self.sweep.modes.clone() };
        let phis = if self.sweep.phi.is_empty() { vec![self.run.phi] } else { self.sweep.phi.clone() };
        let seeds = if self.sweep.seeds.is_empty() { vec![self.run.seed] } else { self.sweep.seeds.clone() };
        let n = modes.len() * phis.len() * seeds.len();
        if n > MAX_SWEEP_RUNS {
            return Err(Error::Config(format!(
                "sweep expands to {n} runs, the limit is {MAX_SWEEP_RUNS}"
            )));
        }
        let mut out = Vec::with_capacity(n);
        for &mode in &modes {
            for &phi in &phis {
                for &seed in &seeds {
                    let cfg = RunConfig {
                        mode,
                        phi,
                        seed,
                        ..self.run.clone()
                    };
                    cfg.validate()?;
                    out.push(cfg);
                }
            }
        }
        Ok(out)
    }
}

/// `result.json` of a finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub phi: f64,
    pub seed: u64,
    pub iterations: usize,
    pub t1: Option<usize>,
    pub t2: Option<usize>,
    pub recompute_iterations: Vec<usize>,
    pub final_target_accuracy: f64,
    pub per_class_target_accuracy: Vec<Option<f64>>,
    pub validation_accuracy: f64,
    /// The augmented labeled-target set is redrawn at every weight recompute.
    pub lt_a_resampled: bool,
    pub wall_clock_ms: u64,
}

impl RunSummary {
    pub fn new(cfg: &RunConfig, result: &RunResult) -> Self {
        RunSummary {
            mode: cfg.mode,
            phi: cfg.phi,
            seed: cfg.seed,
            iterations: cfg.iterations,
            t1: result.t1,
            t2: result.t2,
            recompute_iterations: result.recompute_iterations.clone(),
            final_target_accuracy: result.target.accuracy,
            per_class_target_accuracy: result.target.per_class.clone(),
            validation_accuracy: result.validation_accuracy,
            lt_a_resampled: true,
            wall_clock_ms: result.wall_clock_ms,
        }
    }
}

pub fn run_dir(out_dir: &Path, cfg: &RunConfig) -> PathBuf {
    out_dir
        .join(cfg.mode.as_str())
        .join(format!("phi_{}", cfg.phi))
        .join(format!("seed_{}", cfg.seed))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Outcome of [`execute`] for one run.
#[derive(Clone, Debug)]
pub enum RunOutcome {
    Completed(RunSummary),
    /// A matching `result.json` already existed.
    Skipped(RunSummary),
}

impl RunOutcome {
    pub fn summary(&self) -> &RunSummary {
        match self {
            RunOutcome::Completed(s) | RunOutcome::Skipped(s) => s,
        }
    }
}

/// Trains one configuration inside `dir`, skipping it if a result for the
/// same config is already there. A failed run leaves `error.json` behind.
pub fn execute(cfg: &RunConfig, dir: &Path) -> Result<RunOutcome> {
    let config_path = dir.join("config.json");
    let result_path = dir.join("result.json");
    if result_path.exists() && config_path.exists() {
        if let (Ok(old), Ok(summary)) = (read_json::<RunConfig>(&config_path), read_json::<RunSummary>(&result_path)) {
            if &old == cfg {
                return Ok(RunOutcome::Skipped(summary));
            }
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let _ = fs::remove_file(&result_path);
    let _ = fs::remove_file(dir.join("error.json"));
    write_json(&config_path, cfg)?;

    let outcome = train_into(cfg, dir);
    match outcome {
        Ok(summary) => Ok(RunOutcome::Completed(summary)),
        Err(e) => {
            #[derive(Serialize)]
            struct Failure<'a> {
                mode: Mode,
                phi: f64,
                seed: u64,
                error: &'a str,
            }
            let msg = e.to_string();
            write_json(
                &dir.join("error.json"),
                &Failure {
                    mode: cfg.mode,
                    phi: cfg.phi,
                    seed: cfg.seed,
                    error: &msg,
                },
            )?;
            Err(e)
        }
    }
}

fn train_into(cfg: &RunConfig, dir: &Path) -> Result<RunSummary> {
    let bundle = cfg.dataset()?;
    let metrics_path = dir.join("metrics.jsonl");
    let file = fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut metrics = BufWriter::new(file);
    let mut trainer = Trainer::new(cfg.clone(), &bundle)?;
    let mut history = Vec::with_capacity(cfg.iterations);
    while !trainer.is_done() {
        let rec = trainer.step()?;
        serde_json::to_writer(&mut metrics, &rec)?;
        metrics.write_all(b"\n").map_err(|e| Error::io(&metrics_path, e))?;
        if rec.recomputed && cfg.dump_weights {
            trainer
                .weights()
                .dump_csv(trainer.bank(), dir.join(format!("weights_{:05}.csv", rec.t)))?;
        }
        history.push(rec);
    }
    metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
    let result = trainer.finish(history)?;
    result.params.save_json(dir.join("model.json"))?;
    let summary = RunSummary::new(cfg, &result);
    write_json(&dir.join("result.json"), &summary)?;
    Ok(summary)
}

/// Runs every configuration of a sweep, sequentially.
pub fn execute_all(
    configs: &[RunConfig],
    out_dir: &Path,
    mut progress: impl FnMut(&RunConfig, &Result<RunOutcome>),
) -> Vec<Result<RunOutcome>> {
    configs
        .iter()
        .map(|cfg| {
            let r = execute(cfg, &run_dir(out_dir, cfg));
            progress(cfg, &r);
            r
        })
        .collect()
}

/// Per-mode aggregate of final target accuracy.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModeAggregate {
    pub mode: Mode,
    pub phi: f64,
    pub runs: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub runs: Vec<RunSummary>,
    /// Run directories with a missing or unreadable `result.json`.
    pub failed: Vec<PathBuf>,
}

impl Report {
    /// Collects every run directory (one containing `config.json`) below `out_dir`.
    pub fn collect(out_dir: &Path) -> Result<Self> {
        let mut dirs = Vec::new();
        find_run_dirs(out_dir, &mut dirs)?;
        dirs.sort();
        let mut report = Report::default();
        for dir in dirs {
            match read_json::<RunSummary>(&dir.join("result.json")) {
                Ok(s) if s.final_target_accuracy.is_finite() => report.runs.push(s),
                _ => report.failed.push(dir),
            }
        }
        report
            .runs
            .sort_by(|a, b| (a.mode, a.seed).cmp(&(b.mode, b.seed)).then(a.phi.total_cmp(&b.phi)));
        Ok(report)
    }

    pub fn aggregates(&self) -> Vec<ModeAggregate> {
        let mut groups: Vec<(Mode, f64, Vec<f64>)> = Vec::new();
        for r in &self.runs {
            match groups.iter_mut().find(|g| g.0 == r.mode && g.1 == r.phi) {
                Some(g) => g.2.push(r.final_target_accuracy),
                None => groups.push((r.mode, r.phi, vec![r.final_target_accuracy])),
            }
        }
        groups.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        groups
            .into_iter()
            .map(|(mode, phi, accs)| {
                let n = accs.len() as f64;
                let mean = accs.iter().sum::<f64>() / n;
                let var = if accs.len() > 1 {
                    accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                ModeAggregate {
                    mode,
                    phi,
                    runs: accs.len(),
                    mean,
                    std: var.sqrt(),
                }
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["mode", "phi", "seed", "status", "final_target_accuracy", "validation_accuracy", "t1", "t2"])?;
        let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.runs {
            w.write_record([
                r.mode.to_string(),
                r.phi.to_string(),
                r.seed.to_string(),
                "ok".into(),
                r.final_target_accuracy.to_string(),
                r.validation_accuracy.to_string(),
                opt(r.t1),
                opt(r.t2),
            ])?;
        }
        for dir in &self.failed {
            w.write_record([dir.display().to_string(), String::new(), String::new(), "failed".into()].iter().chain(
                std::iter::repeat(&String::new()).take(4),
            ))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn markdown(&self) -> String {
        let mut s = String::from("| mode | phi | runs | mean target acc | std |\n|---|---|---|---|---|\n");
        for a in self.aggregates() {
            s += &format!(
                "| {} | {} | {} | {:.2} | {:.2} |\n",
                a.mode,
                a.phi,
                a.runs,
                100.0 * a.mean,
                100.0 * a.std
            );
        }
        if !self.failed.is_empty() {
            s += "\nFailed runs:\n";
            for d in &self.failed {
                s += &format!("- {}\n", d.display());
            }
        }
        s
    }
}

fn find_run_dirs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if dir.join("config.json").is_file() {
        out.push(dir.to_path_buf());
        return Ok(());
    }
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_dir() {
            find_run_dirs(&entry.path(), out)?;
        }
    }
    Ok(())
}
