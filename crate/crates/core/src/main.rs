use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mix2::data::SubsetMode;
use mix2::experiment::{self, ExperimentConfig};
use mix2::Result;

/// Mixing-regularizer experiments on long-tailed multi-label data.
#[derive(Debug, Parser)]
#[command(name = "mix2", version)]
struct Cli {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Synthetic data seed for gen-data; the single training seed otherwise.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Mix policy: none, mixup, manifold, multimix, a+b, mix2 or name=weight,...
    #[arg(long, global = true)]
    policy: Option<String>,
    /// Class/negative subset: full, 36n or 36.
    #[arg(long, global = true)]
    subset: Option<SubsetMode>,
    /// Decision threshold on sigmoid outputs.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic dataset into a feature cache.
    GenData,
    /// Resample, segment and featurize a directory of WAV files.
    Featurize {
        #[arg(long)]
        audio_dir: PathBuf,
        /// CSV with header recording_id,offset_s,class_list.
        #[arg(long)]
        annotations: PathBuf,
    },
    /// Train one network per seed and write checkpoints.
    Train,
    /// Evaluate checkpoints on the test split.
    Eval {
        /// A single checkpoint; defaults to every checkpoint under <out>/checkpoints.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the eight-policy grid over all seeds and write the tables.
    Ablate,
    /// Rebuild tables and curves from stored predictions.
    Report {
        /// Directory to scan; defaults to --out.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        match cli.command {
            Command::GenData => cfg.data.synthetic.seed = seed,
            _ => cfg.training.seeds = vec![seed],
        }
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    if let Some(policy) = &cli.policy {
        cfg.mix.policy = policy.clone();
    }
    if let Some(subset) = cli.subset {
        cfg.data.subset = subset;
    }
    if let Some(t) = cli.threshold {
        cfg.eval.threshold = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_row(row: &experiment::TableRow) {
    let pct = |c: experiment::CellStat| match (c.mean, c.std) {
        (Some(m), Some(s)) => format!("{:6.2} ± {:4.2}", 100.0 * m, 100.0 * s),
        (Some(m), None) => format!("{:6.2}       ", 100.0 * m),
        _ => format!("{:>13}", "n/a"),
    };
    println!(
        "{:<20} {}  {}  {}  {}",
        row.policy,
        pct(row.frequent),
        pct(row.common),
        pct(row.rare),
        pct(row.all)
    );
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::GenData => print!("{}", experiment::cmd_gen_data(&cfg)?),
        Command::Featurize { audio_dir, annotations } => {
            println!("{}", experiment::cmd_featurize(&cfg, audio_dir, annotations)?)
        }
        Command::Train => {
            for log in experiment::cmd_train(&cfg)? {
                println!(
                    "seed {}: final loss {} in {:.1}s, strategies {:?}",
                    log.seed,
                    log.final_loss().map_or("n/a".into(), |l| format!("{l:.5}")),
                    log.wall_clock_s,
                    log.strategy_counts
                );
            }
        }
        Command::Eval { checkpoint } => {
            for r in experiment::cmd_eval(&cfg, checkpoint.as_deref())? {
                println!("{}", serde_json::to_string(&r.groups).expect("groups serialize"));
            }
        }
        Command::Ablate | Command::Report { .. } => {
            let summary = match &cli.command {
                Command::Report { dir } => {
                    experiment::cmd_report(dir.as_ref().unwrap_or(&cfg.output.dir), cli.threshold)?
                }
                _ => experiment::cmd_ablate(&cfg)?,
            };
            println!("{:<20} {:>13}  {:>13}  {:>13}  {:>13}", "policy", "frequent", "common", "rare", "all");
            for p in &summary.policies {
                print_row(&p.row);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
