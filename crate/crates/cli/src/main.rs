use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cappy::construct::dataset_stats;
use cappy::corpus::{read_regression_dataset, write_regression_dataset};
use cappy::eval::{build_data, run_experiment_config, DataConfig, ExperimentConfig};
use cappy::genclient::{GeneratorHandle, GeneratorSpec};
use cappy::http::HttpOptions;
use cappy::scorer::{
    load_checkpoint, parse_score_request, sidecar_path, train_to_checkpoint, OracleScorer, RemoteScorer, Scorer,
    ScorerModel, TrainConfig, DEFAULT_FEATURE_DIM,
};
use cappy::select::{self, LikelihoodNorm, SelectionMethod};
use cappy::Error;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser)]
#[command(name = "cappy", version, about = "Train and apply a lightweight response scorer")]
struct Cli {
    /// Pretty-print JSON output.
    #[arg(long, global = true)]
    pretty: bool,
    /// Seed for every random choice; overrides seeds in config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a weakly supervised regression dataset from a task corpus.
    BuildData {
        #[arg(long)]
        corpus: PathBuf,
        /// Generators and construction switches (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the scorer on a regression dataset and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training hyper-parameters (JSON); fields left out take the
        /// preset's values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Preset::Pretraining)]
        preset: Preset,
        /// Start from this checkpoint instead of zeros.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_FEATURE_DIM)]
        feature_dim: usize,
    },
    /// Score one pair, or a JSONL stream of {"instruction", "response"}.
    Score {
        #[arg(long, conflicts_with = "remote")]
        checkpoint: Option<PathBuf>,
        /// Base URL of a remote scoring service.
        #[arg(long)]
        remote: Option<String>,
        #[arg(long, requires = "response")]
        instruction: Option<String>,
        #[arg(long, requires = "instruction")]
        response: Option<String>,
        /// JSONL input; `-` reads standard input.
        #[arg(long, conflicts_with = "instruction")]
        input: Option<PathBuf>,
    },
    /// Pick one candidate for an instruction.
    Select {
        #[arg(long)]
        instruction: String,
        /// One candidate per line: a JSON string or {"text", "token_logprobs"}.
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Cappy)]
        method: Method,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Reference text for the oracle method.
        #[arg(long)]
        reference: Option<String>,
        /// Generator spec (JSON) used to fetch missing log-likelihoods.
        #[arg(long)]
        generator: Option<PathBuf>,
    },
    /// Evaluate systems on a test split without downstream finetuning.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Also write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Print the rendered table instead of JSON.
        #[arg(long)]
        table: bool,
    },
    /// Build downstream data, finetune the scorer, and evaluate.
    Adapt {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        table: bool,
        /// Save the finetuned scorer here.
        #[arg(long)]
        save_scorer: Option<PathBuf>,
    },
    /// Summarize a regression dataset or a checkpoint.
    Inspect {
        #[arg(long, required_unless_present = "checkpoint")]
        data: Option<PathBuf>,
        #[arg(long, conflicts_with = "data")]
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Pretraining,
    Adaptation,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Cappy,
    SelfScoring,
    Random,
    Oracle,
}

type CliResult = Result<(), Error>;

fn emit(value: &serde_json::Value, pretty: bool) -> CliResult {
    let text = if pretty {
        serde_json::to_string_pretty(value)
    } else {
        serde_json::to_string(value)
    }
    .expect("json values serialize");
    let mut out = io::stdout().lock();
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn to_value<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("outputs serialize")
}

fn parent_dir(p: &Path) -> &Path {
    p.parent().unwrap_or(Path::new("."))
}

fn load_model(path: &Path) -> Result<ScorerModel, Error> {
    Ok(load_checkpoint(path)?.model)
}

fn format_score(v: f64) -> String {
    format!("{v:.4}")
}

fn run(cli: Cli) -> CliResult {
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::BuildData { corpus, config, out } => {
            let (cfg, base) = match &config {
                Some(p) => (DataConfig::load(p)?, parent_dir(p).to_owned()),
                None => (DataConfig::default(), PathBuf::from(".")),
            };
            let built = build_data(&cfg, &corpus, &base, seed)?;
            write_regression_dataset(&built.examples, &out)?;
            emit(
                &json!({ "seed": seed, "out": out.display().to_string(), "summary": to_value(&built.summary) }),
                cli.pretty,
            )
        }
        Command::Train {
            data,
            out,
            config,
            preset,
            init,
            feature_dim,
        } => {
            let preset = match preset {
                Preset::Pretraining => TrainConfig::pretraining(),
                Preset::Adaptation => TrainConfig::adaptation(),
            };
            let mut cfg = match &config {
                Some(p) => TrainConfig::load_over(p, &preset)?,
                None => preset,
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let (outcome, sidecar) = train_to_checkpoint(&data, &cfg, init.as_deref(), feature_dim, &out)?;
            emit(
                &json!({
                    "checkpoint": out.display().to_string(),
                    "sidecar": sidecar_path(&out).display().to_string(),
                    "steps": outcome.state.step,
                    "seed": cfg.seed,
                    "final_loss": sidecar.final_loss,
                }),
                cli.pretty,
            )
        }
        Command::Score {
            checkpoint,
            remote,
            instruction,
            response,
            input,
        } => {
            let scorer: Box<dyn Scorer> = match (checkpoint, remote) {
                (Some(p), _) => Box::new(load_model(&p)?),
                (None, Some(url)) => Box::new(RemoteScorer::new(url, None, HttpOptions::default())),
                (None, None) => {
                    return Err(Error::Config {
                        field: "--checkpoint".into(),
                        message: "give --checkpoint or --remote".into(),
                    })
                }
            };
            if let (Some(i), Some(r)) = (instruction, response) {
                let s = scorer.score(&i, &r)?;
                println!("{}", format_score(s.value()));
                return Ok(());
            }
            let Some(input) = input else {
                return Err(Error::Config {
                    field: "--input".into(),
                    message: "give --instruction/--response or --input".into(),
                });
            };
            let reader: Box<dyn BufRead> = if input.as_os_str() == "-" {
                Box::new(io::stdin().lock())
            } else {
                Box::new(io::BufReader::new(std::fs::File::open(&input).map_err(|e| Error::io(&input, e))?))
            };
            let mut out = io::stdout().lock();
            for (idx, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| Error::io(&input, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let req = parse_score_request(&line).map_err(|message| Error::Invalid {
                    path: input.clone(),
                    line: idx + 1,
                    message,
                })?;
                let s = scorer.score(&req.instruction, &req.response)?;
                let row = json!({ "instruction": req.instruction, "response": req.response, "score": s.value() });
                writeln!(out, "{row}").map_err(|e| Error::io("<stdout>", e))?;
            }
            Ok(())
        }
        Command::Select {
            instruction,
            candidates,
            method,
            checkpoint,
            reference,
            generator,
        } => {
            let cands = select::read_candidates(&candidates)?;
            if cands.is_empty() {
                return Err(Error::precondition(format!("{}: no candidates", candidates.display())));
            }
            let result = match method {
                Method::Cappy => {
                    let Some(p) = checkpoint else {
                        return Err(Error::Config {
                            field: "--checkpoint".into(),
                            message: "cappy selection needs a checkpoint".into(),
                        });
                    };
                    select::select_generation(&instruction, &cands, &load_model(&p)?, SelectionMethod::Cappy)?
                }
                Method::Oracle => {
                    let Some(r) = reference else {
                        return Err(Error::Config {
                            field: "--reference".into(),
                            message: "oracle selection needs a reference".into(),
                        });
                    };
                    select::select_generation(&instruction, &cands, &OracleScorer::new(r), SelectionMethod::Oracle)?
                }
                Method::Random => select::random_select(&cands, seed)?,
                Method::SelfScoring => {
                    let handle = match generator {
                        Some(p) => {
                            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                            let spec: GeneratorSpec = serde_json::from_str(&text).map_err(|e| Error::Config {
                                field: "--generator".into(),
                                message: e.to_string(),
                            })?;
                            spec.build(parent_dir(&p), std::iter::empty())?
                        }
                        None => GeneratorHandle::Scripted(Default::default()),
                    };
                    select::self_score_select(&instruction, &cands, &handle, LikelihoodNorm::Mean)?
                }
            };
            let mut v = to_value(&result);
            v["seed"] = json!(seed);
            emit(&v, cli.pretty)
        }
        Command::Eval { config, report, table } => {
            let cfg = load_experiment(&config, cli.seed)?;
            if cfg.train_corpus.is_some() {
                return Err(Error::Config {
                    field: "train_corpus".into(),
                    message: "eval does not finetune; run `adapt` for configs with a train split".into(),
                });
            }
            run_and_emit(&cfg, &config, report, table, None, cli.pretty)
        }
        Command::Adapt {
            config,
            report,
            table,
            save_scorer,
        } => {
            let cfg = load_experiment(&config, cli.seed)?;
            if cfg.train_corpus.is_none() {
                return Err(Error::Config {
                    field: "train_corpus".into(),
                    message: "adapt needs a train split".into(),
                });
            }
            run_and_emit(&cfg, &config, report, table, save_scorer, cli.pretty)
        }
        Command::Inspect { data, checkpoint } => {
            if let Some(p) = checkpoint {
                let ck = load_checkpoint(&p)?;
                let sidecar = std::fs::read_to_string(sidecar_path(&p))
                    .ok()
                    .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok());
                return emit(
                    &json!({
                        "feature_dim": ck.model.feature_dim(),
                        "featurizer_version": ck.model.featurizer_version,
                        "featurizer_mismatch": ck.featurizer_mismatch,
                        "optimizer_step": ck.optimizer.as_ref().map(|s| s.step),
                        "nonzero_weights": ck.model.weights().iter().filter(|w| **w != 0.0).count(),
                        "bias": ck.model.bias(),
                        "sidecar": sidecar,
                    }),
                    cli.pretty,
                );
            }
            let p = data.expect("clap enforces --data or --checkpoint");
            let rows = read_regression_dataset(&p)?;
            emit(&to_value(&dataset_stats(&rows)), cli.pretty)
        }
    }
}

fn load_experiment(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, Error> {
    let cfg = ExperimentConfig::load(path)?;
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn run_and_emit(
    cfg: &ExperimentConfig,
    config_path: &Path,
    report: Option<PathBuf>,
    table: bool,
    save_scorer: Option<PathBuf>,
    pretty: bool,
) -> CliResult {
    let out = run_experiment_config(cfg, parent_dir(config_path))?;
    let json = out.report.to_json(pretty);
    if let Some(p) = &report {
        std::fs::write(p, format!("{json}\n")).map_err(|e| Error::io(p, e))?;
    }
    if let (Some(p), Some(model)) = (&save_scorer, &out.finetuned) {
        cappy::scorer::save_checkpoint(model, None, p)?;
    }
    let mut stdout = io::stdout().lock();
    let text = if table { out.table } else { format!("{json}\n") };
    stdout.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} workers: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
