//! `flab`: score, calibrate, filter and evaluate an open-world
//! state-object label space.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flab_core::labelspace::Pair;
use flab_core::prompts::SelectionMode;

use commands::TauSource;
use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "flab", version, about = "Feasibility scoring and open-world evaluation of state-object pairs")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Label space directory.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a label space and optional score matrices or table.
    Ingest {
        /// Score matrix directory to check against the label space.
        #[arg(long = "matrix")]
        matrices: Vec<PathBuf>,
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Score every pair of the label space.
    Score(ScoreArgs),
    /// Normalize, pick the threshold on validation images, and filter.
    Calibrate {
        /// Defaults to <out>/table.csv.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        val_matrix: Option<PathBuf>,
    },
    /// Keep seen pairs and pairs scoring at least the threshold.
    Filter {
        #[arg(long)]
        table: PathBuf,
        #[command(flatten)]
        tau: TauArgs,
        /// Defaults to <out>/candidates.tsv.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Calibration-bias sweep over a test score matrix.
    Evaluate {
        #[arg(long)]
        test_matrix: Option<PathBuf>,
        /// Defaults to <out>/candidates.tsv.
        #[arg(long, conflicts_with = "all_pairs")]
        candidates: Option<PathBuf>,
        /// Evaluate over the whole label space without filtering.
        #[arg(long)]
        all_pairs: bool,
        /// Defaults to <out>/table_normalized.csv when present.
        #[arg(long)]
        table: Option<PathBuf>,
        #[command(flatten)]
        tau: TauArgs,
        /// Pairs for the qualitative report; all non-seen pairs by default.
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Feasibility reports, or the two means from recorded accuracies.
    Report {
        /// Feasible (unseen) accuracy in percent.
        #[arg(long, requires = "infeasible_acc", conflicts_with = "table")]
        feasible_acc: Option<f64>,
        /// Infeasible (confusing) accuracy in percent.
        #[arg(long, requires = "feasible_acc")]
        infeasible_acc: Option<f64>,
        #[arg(long)]
        table: Option<PathBuf>,
        #[command(flatten)]
        tau: TauArgs,
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Prompt grid and rendering.
    #[command(subcommand)]
    Prompts(PromptsCommand),
}

#[derive(Args)]
struct ScoreArgs {
    /// flm-logit, flm-binary, flm-qa-score, glove or conceptnet.
    #[arg(long)]
    method: Option<String>,
    #[command(flatten)]
    prompt: PromptArgs,
    /// Embedding file for the baselines.
    #[arg(long)]
    embedding: Option<PathBuf>,
    /// Response cache directory.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    url: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    requests_per_minute: Option<f64>,
}

#[derive(Args)]
struct PromptArgs {
    #[arg(long)]
    prompt_preset: Option<String>,
    #[arg(long, value_parser = parse_mode)]
    guidance: Option<SelectionMode>,
    /// Guidance pairs per query.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args)]
struct TauArgs {
    #[arg(long, conflicts_with = "calibration")]
    tau: Option<f64>,
    /// calibration.json; its threshold applies to normalized scores.
    #[arg(long)]
    calibration: Option<PathBuf>,
}

impl TauArgs {
    fn source(&self) -> Option<TauSource<'_>> {
        match (&self.tau, &self.calibration) {
            (Some(t), _) => Some(TauSource::Value(*t)),
            (None, Some(p)) => Some(TauSource::Calibration(p)),
            (None, None) => None,
        }
    }
}

#[derive(Subcommand)]
enum PromptsCommand {
    /// Print the 64 list-guided prompt variants as JSON lines.
    Grid,
    /// Print the prompt for one pair.
    Render {
        #[command(flatten)]
        prompt: PromptArgs,
        #[arg(long)]
        state: String,
        #[arg(long)]
        object: String,
    },
}

fn parse_mode(s: &str) -> Result<SelectionMode, String> {
    match s {
        "related" => Ok(SelectionMode::Related),
        "random" => Ok(SelectionMode::Random),
        other => Err(format!("unknown guidance mode {other:?}; expected related or random")),
    }
}

fn apply_prompt_args(cfg: &mut RunConfig, p: &PromptArgs) {
    if let Some(v) = &p.prompt_preset {
        cfg.prompt.preset = Some(v.clone());
    }
    if let Some(v) = p.guidance {
        cfg.guidance.mode = v;
    }
    if let Some(v) = p.n {
        cfg.guidance.n = v;
    }
}

fn out_path(cfg: &RunConfig, name: &str) -> Result<PathBuf, CliError> {
    Ok(cfg.output()?.join(name))
}

/// An explicit path, else the default under the output directory if it exists.
fn existing_default(cfg: &RunConfig, explicit: &Option<PathBuf>, name: &str) -> Option<PathBuf> {
    explicit
        .clone()
        .or_else(|| cfg.output.as_ref().map(|o| o.join(name)).filter(|p| p.exists()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = cli.dataset {
        cfg.dataset = Some(v);
    }
    if let Some(v) = cli.out {
        cfg.output = Some(v);
    }
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }

    match cli.command {
        Command::Ingest { matrices, table } => {
            let summary = commands::ingest(&cfg, &matrices, table.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
        }
        Command::Score(a) => {
            if let Some(v) = a.method {
                cfg.method = Some(v);
            }
            apply_prompt_args(&mut cfg, &a.prompt);
            if let Some(v) = a.embedding {
                cfg.embedding.path = Some(v);
            }
            if let Some(v) = a.cache {
                cfg.cache = Some(v);
            }
            if let Some(v) = a.url {
                cfg.endpoint.url = v;
            }
            if let Some(v) = a.model {
                cfg.endpoint.model = v;
            }
            if let Some(v) = a.parallelism {
                cfg.endpoint.parallelism = v;
            }
            if let Some(v) = a.requests_per_minute {
                cfg.endpoint.requests_per_minute = Some(v);
            }
            let path = commands::score(&cfg)?;
            println!("{}", path.display());
        }
        Command::Calibrate { table, val_matrix } => {
            if let Some(v) = val_matrix {
                cfg.calibration.val_matrix = Some(v);
            }
            let table = match table {
                Some(t) => t,
                None => out_path(&cfg, commands::TABLE_FILE)?,
            };
            let cal = commands::calibrate(&cfg, &table)?;
            println!("tau={:?} val_unseen_acc={:.4}", cal.tau, cal.best_accuracy());
        }
        Command::Filter { table, tau, output } => {
            let source = tau
                .source()
                .ok_or_else(|| CliError::validation("filter needs --tau or --calibration"))?;
            let dest = match output {
                Some(p) => p,
                None => out_path(&cfg, commands::CANDIDATES_FILE)?,
            };
            let kept = commands::filter_cmd(&cfg, &table, source, &dest)?;
            println!("{kept} pairs kept -> {}", dest.display());
        }
        Command::Evaluate {
            test_matrix,
            candidates,
            all_pairs,
            table,
            tau,
            pairs,
            bins,
        } => {
            if let Some(v) = test_matrix {
                cfg.evaluation.test_matrix = Some(v);
            }
            if let Some(v) = bins {
                cfg.evaluation.bins = v;
            }
            let candidates = match (all_pairs, candidates) {
                (true, _) => None,
                (false, Some(p)) => Some(p),
                (false, None) => Some(out_path(&cfg, commands::CANDIDATES_FILE)?),
            };
            let table = existing_default(&cfg, &table, commands::NORMALIZED_TABLE_FILE);
            let calibration = existing_default(&cfg, &tau.calibration, commands::CALIBRATION_JSON);
            let tau_source = match (tau.tau, &calibration) {
                (Some(t), _) => Some(TauSource::Value(t)),
                (None, Some(p)) => Some(TauSource::Calibration(p)),
                (None, None) => None,
            };
            let inputs = commands::EvaluateInputs {
                candidates: candidates.as_deref(),
                table: table.as_deref(),
                tau: tau_source,
                pairs: pairs.as_deref(),
            };
            let e = commands::evaluate(&cfg, &inputs)?;
            println!("{}", e.line());
        }
        Command::Report {
            feasible_acc,
            infeasible_acc,
            table,
            tau,
            pairs,
            bins,
        } => {
            if let (Some(f), Some(i)) = (feasible_acc, infeasible_acc) {
                let r = commands::replay_means(f, i)?;
                println!(
                    "feasible={:.2} infeasible={:.2} arith_mean={:.2} harm_mean={:.2}",
                    f,
                    i,
                    r.arith_mean * 100.0,
                    r.harm_mean * 100.0
                );
                return Ok(());
            }
            if let Some(v) = bins {
                cfg.evaluation.bins = v;
            }
            let table = table.ok_or_else(|| {
                CliError::validation("report needs --table or both --feasible-acc and --infeasible-acc")
            })?;
            let source = tau
                .source()
                .ok_or_else(|| CliError::validation("report needs --tau or --calibration"))?;
            let (_, space) = commands::load_space(&cfg)?;
            let out = commands::out_dir(&cfg)?;
            for p in commands::feasibility_reports(&cfg, &space, &table, source, pairs.as_deref(), &out)? {
                println!("{}", p.display());
            }
        }
        Command::Prompts(PromptsCommand::Grid) => {
            for line in commands::prompts_grid() {
                println!("{line}");
            }
        }
        Command::Prompts(PromptsCommand::Render { prompt, state, object }) => {
            apply_prompt_args(&mut cfg, &prompt);
            let pair = Pair::new(state, object).map_err(|e| CliError::validation(e.to_string()))?;
            print!("{}", commands::prompts_render(&cfg, &pair)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.code as u8)
        }
    }
}
