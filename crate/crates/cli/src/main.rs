//! Config-driven experiment runner.
//!
//! `run` executes one experiment from a JSON config (plus inline overrides),
//! `sweep` fans a config out over a list of values for one key, and
//! `dump-consistency` exports the filter's internal representation of the
//! final round as tab-separated text.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data/format error,
//! 4 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use protoguard::protocol::ExperimentOutcome;
use protoguard::{run_experiment, Error, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "protoguard",
    version,
    about = "Vertical split-learning backdoor defense simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its report.
    Run(RunArgs),
    /// Run the same config once per value of a swept key.
    Sweep(SweepArgs),
    /// Run an experiment and export the final-round consistency vectors.
    DumpConsistency(DumpArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Inline overrides, e.g. --set defense.alpha=0.7 --set rounds=10
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Report path (overrides the config's output_path; default report.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Swept key and comma-separated values, e.g. defense.alpha=0.3,0.5,0.7
    #[arg(long, value_name = "KEY=V1,V2,...")]
    over: String,
    /// Directory for per-run reports and the merged summary.
    #[arg(long, default_value = "sweep")]
    out_dir: PathBuf,
    /// Concurrent experiments.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

#[derive(Args)]
struct DumpArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output TSV path.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::DumpConsistency(args) => cmd_dump(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err);
            ExitCode::from(exit_class(&err))
        }
    }
}

enum CliError {
    Core(Error),
    Usage(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{}", e),
            CliError::Usage(msg) => write!(f, "{}", msg),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

fn exit_class(err: &CliError) -> u8 {
    match err {
        CliError::Usage(_) => 2,
        CliError::Core(e) => match e {
            Error::Config(_) => 2,
            Error::Format(_) | Error::Data(_) | Error::Io(_) => 3,
            _ => 4,
        },
    }
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let config = load_config(&args.common.config, &args.common.sets)?;
    let out_path = args
        .out
        .or_else(|| config.output_path.clone())
        .unwrap_or_else(|| PathBuf::from("report.json"));
    let outcome = run_experiment(&config)?;
    write_report(&outcome, &out_path, &config)?;
    println!("{}", summary_line(&outcome, &out_path));
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let base = load_config(&args.common.config, &args.common.sets)?;
    let (key, values) = parse_over(&args.over)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| CliError::Core(e.into()))?;

    // Materialize every entry's config up front so bad values fail fast.
    let mut entries = Vec::new();
    for (i, value) in values.iter().enumerate() {
        let mut json = serde_json::to_value(&base)
            .map_err(|e| CliError::Usage(format!("config serialization failed: {}", e)))?;
        set_key(&mut json, &key, value)?;
        let config: ExperimentConfig = serde_json::from_value(json)
            .map_err(|e| CliError::Core(Error::Config(e.to_string())))?;
        config.validate()?;
        entries.push((i, value.clone(), config));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.parallel.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {}", e)))?;
    let results: Vec<Result<(usize, String, ExperimentOutcome), Error>> = pool.install(|| {
        entries
            .par_iter()
            .map(|(i, value, config)| {
                let outcome = run_experiment(config)?;
                Ok((*i, value.clone(), outcome))
            })
            .collect()
    });

    // Merge in sweep-definition order.
    let mut summary =
        String::from("index\tkey\tvalue\tmain_accuracy\tattack_success_rate\treport\n");
    for result in results {
        let (i, value, outcome) = result.map_err(CliError::Core)?;
        let path = args.out_dir.join(format!("sweep_{:03}.json", i));
        let config = outcome.report.config.clone();
        write_report(&outcome, &path, &config)?;
        let line = format!(
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{}",
            i,
            key,
            value,
            outcome.report.main_accuracy,
            outcome.report.attack_success_rate,
            path.display()
        );
        println!("{}", line);
        summary.push_str(&line);
        summary.push('\n');
    }
    let summary_path = args.out_dir.join("summary.tsv");
    std::fs::write(&summary_path, summary).map_err(|e| CliError::Core(e.into()))?;
    println!("sweep summary written to {}", summary_path.display());
    Ok(())
}

fn cmd_dump(args: DumpArgs) -> Result<(), CliError> {
    let mut config = load_config(&args.common.config, &args.common.sets)?;
    config.dump_consistency = true;
    if config.rounds == 0 {
        return Err(CliError::Core(Error::Config(
            "dump-consistency needs at least one round".into(),
        )));
    }
    let outcome = run_experiment(&config)?;
    let dump = outcome
        .consistency
        .as_ref()
        .ok_or_else(|| CliError::Core(Error::Eval("experiment produced no dump".into())))?;
    std::fs::write(&args.out, dump.to_tsv()).map_err(|e| CliError::Core(e.into()))?;
    println!(
        "{} consistency rows (alpha={}) written to {}",
        dump.rows.len(),
        dump.alpha,
        args.out.display()
    );
    println!("{}", summary_line(&outcome, Path::new("-")));
    Ok(())
}

fn load_config(path: &Path, sets: &[String]) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Core(Error::Config(format!(
            "cannot read config {}: {}",
            path.display(),
            e
        )))
    })?;
    let config: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Core(Error::Config(format!("{}: {}", path.display(), e))))?;
    // Overrides apply to the fully resolved config, so dotted keys can
    // address fields the file left at their defaults.
    let mut json = serde_json::to_value(&config)
        .map_err(|e| CliError::Usage(format!("config serialization failed: {}", e)))?;
    for set in sets {
        let (key, value) = set
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set needs KEY=VALUE, got {:?}", set)))?;
        set_key(&mut json, key, value)?;
    }
    let config: ExperimentConfig = serde_json::from_value(json)
        .map_err(|e| CliError::Core(Error::Config(format!("{}: {}", path.display(), e))))?;
    config.validate()?;
    Ok(config)
}

/// Sets a dotted key in a JSON object tree, creating objects on the way.
/// Values parse as JSON when possible and fall back to plain strings.
fn set_key(json: &mut serde_json::Value, key: &str, value: &str) -> Result<(), CliError> {
    let parsed: serde_json::Value = serde_json::from_str(value)
        .unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
    let mut cursor = json;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let object = cursor
            .as_object_mut()
            .ok_or_else(|| CliError::Usage(format!("key {:?} does not address an object", key)))?;
        if i + 1 == parts.len() {
            object.insert((*part).to_string(), parsed);
            return Ok(());
        }
        cursor = object
            .entry((*part).to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Err(CliError::Usage(format!("empty key in --set {:?}", key)))
}

fn parse_over(over: &str) -> Result<(String, Vec<String>), CliError> {
    let (key, values) = over
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--over needs KEY=V1,V2,..., got {:?}", over)))?;
    let values: Vec<String> = values
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(CliError::Usage("--over needs at least one value".into()));
    }
    Ok((key.to_string(), values))
}

fn write_report(
    outcome: &ExperimentOutcome,
    path: &Path,
    config: &ExperimentConfig,
) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(&outcome.report)
        .map_err(|e| CliError::Core(Error::Eval(format!("report serialization: {}", e))))?;
    std::fs::write(path, text).map_err(|e| CliError::Core(e.into()))?;
    // An experiment flagged for dumping writes its TSV next to the report.
    if let Some(dump) = &outcome.consistency {
        if config.dump_consistency {
            let dump_path = path.with_extension("consistency.tsv");
            std::fs::write(&dump_path, dump.to_tsv()).map_err(|e| CliError::Core(e.into()))?;
        }
    }
    Ok(())
}

fn summary_line(outcome: &ExperimentOutcome, path: &Path) -> String {
    format!(
        "MA={:.4} ASR={:.4} rounds={} report={}",
        outcome.report.main_accuracy,
        outcome.report.attack_success_rate,
        outcome.report.rounds.len(),
        path.display()
    )
}
