use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sampler_synth::corpus::{builtin_corpus, load_corpus};
use sampler_synth::harness::{
    run_experiment, sample_prior_showcase, showcase_grammar, ExperimentConfig, HarnessError, Report,
};
use sampler_synth::sexpr::EvalBudget;
use serde_json::{json, Value};

const CORPUS_ENV: &str = "SYNTH_CORPUS_DIR";

#[derive(Parser)]
#[command(name = "synth", version, about = "Infer sampler program text from samples")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a sampler for a reference distribution family.
    Learn {
        /// bernoulli, poisson, gamma, beta, stdnormal or normal
        #[arg(long)]
        target: Option<String>,
        /// Held-out parameter setting, comma separated; repeatable.
        #[arg(long = "held-out")]
        held_out: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Learn a parameterless sampler for a one-column CSV of reals.
    Generalize {
        #[arg(long)]
        data: Option<PathBuf>,
        /// The CSV starts with a header row.
        #[arg(long)]
        header: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Compile a posterior into a sampler program.
    Compile {
        #[arg(long)]
        model: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Sample programs from the prior and write output histograms.
    Showcase {
        #[arg(long, default_value_t = 6)]
        count: usize,
        /// Evaluations per program.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 30)]
        bins: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Stop chains once a best program passes the fresh checks.
    #[arg(long)]
    stop_on_success: bool,
}

fn config_error(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn parse_setting(text: &str) -> Result<Vec<f64>, HarnessError> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| config_error(format!("bad held-out setting '{text}'"))))
        .collect()
}

/// Merges the config file, the subcommand's task and flag overrides.
fn build_config(kind: &str, task: Option<Value>, common: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut v = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<Value>(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?
        }
        None => json!({}),
    };
    let obj = v.as_object_mut().ok_or_else(|| config_error("config must be a JSON object"))?;
    if let Some(t) = task {
        obj.insert("task".into(), t);
    }
    match obj.get("task").and_then(|t| t.get("kind")).and_then(Value::as_str) {
        Some(k) if k == kind => {}
        Some(k) => return Err(config_error(format!("config describes a '{k}' task, not '{kind}'"))),
        None => return Err(config_error(format!("no {kind} task given on the command line or in the config"))),
    }
    let mut set = |key: &str, value: Value| {
        obj.insert(key.to_string(), value);
    };
    if let Some(x) = common.seed {
        set("seed", json!(x));
    }
    if let Some(x) = common.chains {
        set("chains", json!(x));
    }
    if let Some(x) = common.iterations {
        set("iterations", json!(x));
    }
    if let Some(x) = common.temperature {
        set("temperature", json!(x));
    }
    if common.stop_on_success {
        set("stop_on_success", json!(true));
    }
    if let Some(out) = &common.out {
        set("out_dir", json!(out));
    }
    if let Ok(dir) = std::env::var(CORPUS_ENV) {
        set("corpus_dir", json!(dir));
    }
    let config: ExperimentConfig = serde_json::from_value(v).map_err(|e| config_error(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

fn summarize(report: &Report) -> Value {
    json!({
        "task": report.task,
        "best_program": report.best_program,
        "best_log_penalty": report.best_log_penalty,
        "any_chain_passed": report.any_chain_passed,
        "chains_run": report.chains.len(),
        "out_dir": report.config.out_dir,
    })
}

fn run(cli: Cli) -> Result<Value, HarnessError> {
    match cli.command {
        Command::Learn { target, held_out, common } => {
            let task = match target {
                Some(t) => {
                    let held: Option<Vec<Vec<f64>>> = if held_out.is_empty() {
                        None
                    } else {
                        Some(held_out.iter().map(|s| parse_setting(s)).collect::<Result<_, _>>()?)
                    };
                    Some(json!({ "kind": "learn", "target": t, "held_out": held }))
                }
                None if !held_out.is_empty() => return Err(config_error("--held-out needs --target")),
                None => None,
            };
            Ok(summarize(&run_experiment(&build_config("learn", task, &common)?)?))
        }
        Command::Generalize { data, header, common } => {
            let task = data.map(|d| json!({ "kind": "generalize", "data": d, "has_header": header }));
            Ok(summarize(&run_experiment(&build_config("generalize", task, &common)?)?))
        }
        Command::Compile { model, common } => {
            let task = model.map(|m| json!({ "kind": "compile", "model": m }));
            Ok(summarize(&run_experiment(&build_config("compile", task, &common)?)?))
        }
        Command::Showcase { count, samples, bins, seed, out } => {
            let corpus = match std::env::var(CORPUS_ENV) {
                Ok(dir) => load_corpus(dir.as_ref())?,
                Err(_) => builtin_corpus(),
            };
            let grammar = showcase_grammar(&corpus, 1.0)?;
            let s = sample_prior_showcase(&grammar, count, samples, seed, EvalBudget::default(), bins, Some(&out))?;
            Ok(json!({ "programs": s.programs.len(), "skip_rate": s.skip_rate, "out_dir": out }))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("synth: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
