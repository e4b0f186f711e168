//! `rac`: data generation, index building, training, evaluation, sweeps and
//! benchmarks for retrieval augmented classification.
//!
//! Every command writes `<command>.config.toml` into `--out`. Running
//! `rac replay <file>` repeats the command from that file.

mod commands;
mod opts;
mod store;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use commands::Ctx;
use opts::{AblateArgs, BenchArgs, BuildIndexArgs, EvalArgs, GenDataArgs, InspectArgs, KnnArgs, SweepArgs, TrainArgs};
use rac_core::RacError;

#[derive(Parser, Debug)]
#[command(name = "rac", version, about = "Retrieval augmented classification on long-tail data")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "RAC_OUT_DIR", default_value = "rac-out")]
    out: PathBuf,
    /// Worker threads; 0 uses every core. 1 gives bit-reproducible runs.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(untagged)]
enum Command {
    /// Synthetic long-tail train/test sets and class names.
    GenData(GenDataArgs),
    /// Encode and index one or more labeled datasets.
    BuildIndex(BuildIndexArgs),
    /// Train the fused classifier and write a checkpoint with reports.
    Train(Box<TrainArgs>),
    /// Score a trained model on a labeled dataset.
    Eval(EvalArgs),
    /// Majority vote over retrieved labels.
    KnnBaseline(KnnArgs),
    /// Accuracy over a range of k or tau.
    Sweep(Box<SweepArgs>),
    /// Retrieval-only accuracy as the auxiliary index content varies.
    AblateIndex(Box<AblateArgs>),
    /// Query latency and recall of an index.
    BenchIndex(BenchArgs),
    /// Retrieved labels and distances for a few queries.
    Inspect(InspectArgs),
    /// Re-run a command from its resolved config file.
    #[serde(skip)]
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
struct ReplayArgs {
    config: PathBuf,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::BuildIndex(_) => "build-index",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::KnnBaseline(_) => "knn-baseline",
            Command::Sweep(_) => "sweep",
            Command::AblateIndex(_) => "ablate-index",
            Command::BenchIndex(_) => "bench-index",
            Command::Inspect(_) => "inspect",
            Command::Replay(_) => "replay",
        }
    }
}

enum Failure {
    Usage(String),
    Io(String),
}

impl From<RacError> for Failure {
    fn from(e: RacError) -> Self {
        if e.is_io_or_format() {
            Failure::Io(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

fn strip_nulls(v: serde_json::Value) -> Option<serde_json::Value> {
    use serde_json::Value;
    match v {
        Value::Null => None,
        Value::Object(map) => Some(Value::Object(
            map.into_iter().filter_map(|(k, v)| strip_nulls(v).map(|v| (k, v))).collect(),
        )),
        Value::Array(items) => Some(Value::Array(items.into_iter().filter_map(strip_nulls).collect())),
        other => Some(other),
    }
}

/// Flat TOML: the command name, the global options, then one key per flag.
fn resolved_config(cli: &Cli) -> String {
    let mut map = serde_json::Map::new();
    map.insert("command".into(), cli.command.name().into());
    map.insert("out".into(), cli.out.display().to_string().into());
    map.insert("threads".into(), cli.threads.into());
    if let Some(serde_json::Value::Object(flags)) = strip_nulls(serde_json::to_value(&cli.command).expect("serializable")) {
        map.extend(flags);
    }
    let value = toml::Value::try_from(serde_json::Value::Object(map)).expect("flat config maps to TOML");
    toml::to_string(&value).expect("serializable")
}

/// Command-line arguments equivalent to a resolved config file.
fn replay_args(path: &Path, cli_out: Option<&Path>) -> Result<Vec<String>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::from(RacError::io(path, e)))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Failure::from(RacError::format("config file", e.to_string())))?;
    let command = table
        .get("command")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Failure::Usage("config file has no `command`".into()))?;
    let mut args = vec!["rac".to_string(), command.to_string()];
    for (key, value) in &table {
        if key == "command" || (key == "out" && cli_out.is_some()) {
            continue;
        }
        let items = match value {
            toml::Value::Array(items) => items.clone(),
            other => vec![other.clone()],
        };
        for item in items {
            let v = match item {
                toml::Value::String(s) => s,
                other => other.to_string(),
            };
            args.push(format!("--{key}={v}"));
        }
    }
    if let Some(out) = cli_out {
        args.push(format!("--out={}", out.display()));
    }
    Ok(args)
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Command::Replay(r) = &cli.command {
        let explicit_out = std::env::args().any(|a| a == "--out" || a.starts_with("--out="));
        let args = replay_args(&r.config, explicit_out.then_some(cli.out.as_path()))?;
        let replayed = Cli::try_parse_from(&args).map_err(|e| Failure::Usage(e.to_string()))?;
        if matches!(replayed.command, Command::Replay(_)) {
            return Err(Failure::Usage("a config file cannot replay another".into()));
        }
        return run(replayed);
    }
    if cli.threads > 0 {
        // A second call in the same process (replay) keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    fs::create_dir_all(&cli.out).map_err(|e| Failure::from(RacError::io(&cli.out, e)))?;
    let config = resolved_config(&cli);
    let ctx = Ctx {
        out: cli.out.clone(),
        config: config.clone(),
    };
    store::write_text(&cli.out.join(format!("{}.config.toml", cli.command.name())), &config)?;
    match &cli.command {
        Command::GenData(a) => commands::gen_data(&ctx, a)?,
        Command::BuildIndex(a) => commands::build_index(&ctx, a)?,
        Command::Train(a) => commands::train_cmd(&ctx, a)?,
        Command::Eval(a) => commands::eval_cmd(&ctx, a)?,
        Command::KnnBaseline(a) => commands::knn_baseline(&ctx, a)?,
        Command::Sweep(a) => commands::sweep(&ctx, a)?,
        Command::AblateIndex(a) => commands::ablate_index(&ctx, a)?,
        Command::BenchIndex(a) => commands::bench(&ctx, a)?,
        Command::Inspect(a) => commands::inspect(&ctx, a)?,
        Command::Replay(_) => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
