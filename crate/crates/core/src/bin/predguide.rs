use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use predguide::data::Split;
use predguide::eval;
use predguide::experiment::{self, ExperimentSpec, Report, RunOutcome};
use predguide::model::ModelParams;
use predguide::trainer::{Mode, RunConfig};

#[derive(Parser)]
#[command(name = "predguide", version, about = "Semi-supervised domain adaptation with source example weighting")]
struct Cli {
    /// Experiment TOML (a `[run]` table and an optional `[sweep]` table).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "PREDGUIDE_OUT_DIR", default_value = "runs")]
    out_dir: PathBuf,
    /// Overrides the seed (and any seed sweep).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the mode (and any mode sweep).
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// Overrides phi (and any phi sweep).
    #[arg(long, global = true)]
    phi: Option<f64>,
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured dataset to <out-dir>/dataset.csv.
    Generate,
    /// Train every run of the experiment under <out-dir>.
    Train,
    /// Print per-split accuracy of a finished run.
    Evaluate { run_dir: PathBuf },
    /// Summarise every run under <out-dir>.
    Report,
    /// Write per-sample features and predictions of a finished run.
    ExportEmbeddings {
        run_dir: PathBuf,
        /// Defaults to <run-dir>/embeddings.csv.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

impl Cli {
    fn spec(&self) -> anyhow::Result<ExperimentSpec> {
        let mut spec = match &self.config {
            Some(p) => ExperimentSpec::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentSpec::default(),
        };
        if let Some(s) = self.seed {
            spec.run.seed = s;
            spec.sweep.seeds.clear();
        }
        if let Some(m) = self.mode {
            spec.run.mode = m;
            spec.sweep.modes.clear();
        }
        if let Some(p) = self.phi {
            spec.run.phi = p;
            spec.sweep.phi.clear();
        }
        spec.run.validate()?;
        Ok(spec)
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn load_run(run_dir: &Path) -> anyhow::Result<(RunConfig, ModelParams)> {
    let cfg_path = run_dir.join("config.json");
    let text = std::fs::read_to_string(&cfg_path).with_context(|| format!("reading {}", cfg_path.display()))?;
    let cfg: RunConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", cfg_path.display()))?;
    let model = ModelParams::load_json(run_dir.join("model.json"))?;
    Ok((cfg, model))
}

fn main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Generate => {
            let spec = cli.spec()?;
            let bundle = spec.run.dataset()?;
            std::fs::create_dir_all(&cli.out_dir)?;
            let path = cli.out_dir.join("dataset.csv");
            bundle.save_csv(&path)?;
            cli.say(format!(
                "wrote {} ({} samples, {} classes)",
                path.display(),
                bundle.len(),
                bundle.num_classes()
            ));
        }
        Command::Train => {
            let runs = cli.spec()?.expand()?;
            let results = experiment::execute_all(&runs, &cli.out_dir, |cfg, r| {
                let tag = format!("{} phi={} seed={}", cfg.mode, cfg.phi, cfg.seed);
                match r {
                    Ok(RunOutcome::Completed(s)) => {
                        cli.say(format!("{tag}: target acc {:.4}", s.final_target_accuracy))
                    }
                    Ok(RunOutcome::Skipped(s)) => {
                        cli.say(format!("{tag}: already done, target acc {:.4}", s.final_target_accuracy))
                    }
                    Err(e) => eprintln!("{tag}: failed: {e}"),
                }
            });
            let failed = results.iter().filter(|r| r.is_err()).count();
            if failed > 0 {
                bail!("{failed} of {} runs failed", results.len());
            }
        }
        Command::Evaluate { run_dir } => {
            let (cfg, model) = load_run(run_dir)?;
            let bundle = cfg.dataset()?;
            let mut out = serde_json::Map::new();
            for split in Split::ALL {
                let report = eval::evaluate(&model, &bundle, split)?;
                out.insert(split.as_str().into(), serde_json::to_value(report)?);
            }
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::Report => {
            let report = Report::collect(&cli.out_dir)?;
            report.write_csv(&cli.out_dir.join("report.csv"))?;
            let md = report.markdown();
            std::fs::write(cli.out_dir.join("report.md"), &md)?;
            println!("{md}");
            if !report.failed.is_empty() {
                eprintln!("{} run(s) failed or are incomplete", report.failed.len());
                return Ok(ExitCode::from(2));
            }
        }
        Command::ExportEmbeddings { run_dir, output } => {
            let (cfg, model) = load_run(run_dir)?;
            let bundle = cfg.dataset()?;
            let path = output.clone().unwrap_or_else(|| run_dir.join("embeddings.csv"));
            eval::export_embeddings(&model, &bundle, &path)?;
            cli.say(format!("wrote {}", path.display()));
        }
    }
    Ok(ExitCode::SUCCESS)
}
