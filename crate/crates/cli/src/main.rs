use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use grace_cli::commands::{self, EvalSource, SweepSpec};
use grace_cli::gradcheck::cmd_gradcheck;
use grace_cli::{CliResult, ExperimentConfig, Failure};
use grace_core::Real;

/// Contrastive node-embedding experiments.
#[derive(Debug, Parser)]
#[command(name = "grace", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (flat TOML), or a preset name: cora, citeseer, pubmed, dblp.
    #[arg(long, global = true)]
    config: Option<String>,
    /// Dataset directory; overrides `data` in the config.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for independent runs and grid cells.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Protocol runs; overrides `runs` in the config.
    #[arg(long, global = true)]
    runs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model; write checkpoint, embeddings and log.
    Train,
    /// Probe embeddings, a checkpoint, or the raw features.
    Eval {
        /// Embedding dump to probe [default: <out>/embeddings.grem].
        #[arg(long, group = "source")]
        embeddings: Option<PathBuf>,
        /// Checkpoint whose encoder embeds the clean graph.
        #[arg(long, group = "source")]
        checkpoint: Option<PathBuf>,
        /// Probe the node features directly.
        #[arg(long, group = "source")]
        raw_features: bool,
    },
    /// GRACE against no edge removal and no feature masking.
    Ablate,
    /// GRACE against the InfoNCE objective.
    CompareNce,
    /// Accuracy over a grid of view corruption rates.
    Sensitivity {
        /// View-1 rates, comma separated (default 0.1,...,0.9).
        #[arg(long, value_delimiter = ',')]
        p1: Option<Vec<Real>>,
        /// View-2 rates, comma separated (default 0.1,...,0.9).
        #[arg(long, value_delimiter = ',')]
        p2: Option<Vec<Real>>,
    },
    /// Zero a fraction of feature entries once, then train and evaluate.
    Contaminate {
        /// Fractions of entries to zero, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        rate: Vec<Real>,
    },
    /// Finite-difference check of every gradient.
    Gradcheck {
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
}

const PRESETS: [(&str, &str); 4] = [
    ("cora", include_str!("../presets/cora.toml")),
    ("citeseer", include_str!("../presets/citeseer.toml")),
    ("pubmed", include_str!("../presets/pubmed.toml")),
    ("dblp", include_str!("../presets/dblp.toml")),
];

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let name = cli
        .config
        .as_deref()
        .ok_or_else(|| Failure::Config("--config is required (a file or a preset name)".into()))?;
    let mut cfg = if Path::new(name).is_file() {
        ExperimentConfig::load(Path::new(name))?
    } else if let Some((_, text)) = PRESETS.iter().find(|(p, _)| *p == name) {
        ExperimentConfig::parse(text)?
    } else {
        return Err(Failure::Config(format!("{name} is neither a config file nor a preset")));
    };
    if let Some(d) = &cli.data {
        cfg.data = Some(d.clone());
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    if let Some(r) = cli.runs {
        if r == 0 {
            return Err(Failure::Config("--runs must be at least 1".into()));
        }
        cfg.runs = r;
    }
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serialises"));
}

fn run(cli: &Cli) -> CliResult<()> {
    if cli.threads == 0 {
        return Err(Failure::Config("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| Failure::Config(e.to_string()))?;

    if let Command::Gradcheck { corrupt_gradient } = cli.command {
        let summary = cmd_gradcheck(cli.seed.unwrap_or(0), corrupt_gradient)?;
        print!("{}", summary.table());
        if let Some(out) = &cli.out {
            grace_cli::artifacts::create_dir(out)?;
            grace_cli::artifacts::write_json(&out.join("gradcheck.json"), &summary)?;
        }
        return summary.verdict();
    }

    let cfg = load_config(cli)?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    match &cli.command {
        Command::Train => {
            let s = commands::cmd_train(&cfg, &out)?;
            println!(
                "trained {} epochs: loss {:.5}, bound gap {:.4}; {}×{} embeddings in {}",
                s.epochs,
                s.final_loss,
                s.final_bound_gap,
                s.n_nodes,
                s.embedding_dim,
                s.embeddings.display()
            );
        }
        Command::Eval {
            embeddings,
            checkpoint,
            raw_features,
        } => {
            let source = match (embeddings, checkpoint, raw_features) {
                (Some(p), _, _) => EvalSource::Embeddings(p.clone()),
                (_, Some(p), _) => EvalSource::Checkpoint(p.clone()),
                (_, _, true) => EvalSource::RawFeatures,
                _ => EvalSource::Embeddings(out.join(commands::EMBEDDINGS_FILE)),
            };
            let r = commands::cmd_eval(&cfg, &source, &out)?;
            print_json(&r.report);
        }
        Command::Ablate => print!("{}", commands::cmd_ablate(&cfg, &out)?.table()),
        Command::CompareNce => print!("{}", commands::cmd_compare_nce(&cfg, &out)?.table()),
        Command::Sensitivity { p1, p2 } => {
            let d = SweepSpec::default();
            let sweep = SweepSpec {
                p1: p1.clone().unwrap_or(d.p1),
                p2: p2.clone().unwrap_or(d.p2),
            };
            for c in commands::cmd_sensitivity(&cfg, &sweep, &out)? {
                println!("{},{},{}", c.p_1, c.p_2, c.score);
            }
        }
        Command::Contaminate { rate } => {
            for row in commands::cmd_contaminate(&cfg, rate, &out)? {
                println!("rate {}: {} ({} entries zeroed)", row.rate, row.report.summary(), row.zeroed_entries);
            }
        }
        Command::Gradcheck { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
