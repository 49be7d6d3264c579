//! `halo` command line: run one query, evaluate a benchmark, inspect or replay traces.
//!
//! Every config field can be overridden with a dotted flag, e.g.
//! `--budgets.max-subtasks 3` or `--ablations.no-refine`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use clap::{Arg, ArgAction, ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde_json::Value;

use halo_core::config::ConfigError;
use halo_core::engine::{replay_trace, run_query};
use halo_core::eval::{load_dataset, run_bench, stratified_sample, BenchOptions, SampleSpec};
use halo_core::gateway::{load_recording, save_recording, ChatBackend, Gateway, OpenAiBackend, ReplayBackend, ScriptedBackend};
use halo_core::{EngineConfig, TaskKind, WorkflowTrace};

const EXIT_ENGINE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

const HTTP_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Parser)]
#[command(name = "halo", version, about = "Hierarchical multi-agent reasoning with workflow search")]
struct Cli {
    /// Engine config file (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// More log output (-v info, -vv debug). RUST_LOG also works.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Answer one query.
    Run(RunArgs),
    /// Evaluate a benchmark dataset.
    Bench(BenchArgs),
    /// Inspect or replay a trace file.
    #[command(subcommand)]
    Trace(TraceCommand),
}

#[derive(Args)]
struct BackendArgs {
    /// Scripted replies: JSON object mapping routing key to a list of replies.
    #[arg(long, conflicts_with = "replay")]
    script: Option<PathBuf>,
    /// Recorded call log to answer from (JSON array of call records).
    #[arg(long)]
    replay: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    query: String,
    #[command(flatten)]
    backend: BackendArgs,
    /// Also write this run's call log as a recording file.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Print the full outcome as JSON instead of just the answer.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Benchmark family.
    #[arg(long)]
    kind: TaskKind,
    /// Dataset file (code) or directory (choice, math).
    #[arg(long)]
    data: PathBuf,
    /// Sample this share of the items per stratum.
    #[arg(long, conflicts_with = "count")]
    fraction: Option<f64>,
    /// Sample exactly this many items.
    #[arg(long)]
    count: Option<usize>,
    /// Sampling seed; defaults to the config seed.
    #[arg(long)]
    sample_seed: Option<u64>,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scripted replies used for every item (testing).
    #[arg(long)]
    script: Option<PathBuf>,
}

#[derive(Subcommand)]
enum TraceCommand {
    /// Summarize a trace.
    Show {
        path: PathBuf,
        /// Print the whole trace as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Re-run a trace against its call log and compare the outcome.
    Replay { path: PathBuf },
}

/// Dotted config paths, e.g. `budgets.max-subtasks`, with whether the field is boolean.
fn config_keys() -> Vec<(String, bool)> {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<(String, bool)>) {
        match v {
            Value::Object(map) => {
                for (k, child) in map {
                    let key = if prefix.is_empty() { k.replace('_', "-") } else { format!("{prefix}.{}", k.replace('_', "-")) };
                    walk(&key, child, out);
                }
            }
            other => out.push((prefix.to_string(), other.is_boolean())),
        }
    }
    let mut keys = Vec::new();
    walk("", &serde_json::to_value(EngineConfig::default()).expect("config serializes"), &mut keys);
    keys.push(("trace-dir".into(), false));
    keys
}

fn command() -> clap::Command {
    let mut cmd = Cli::command();
    for (key, boolean) in config_keys() {
        let name: &'static str = Box::leak(key.into_boxed_str());
        let mut arg = Arg::new(name)
            .long(name)
            .global(true)
            .value_name("VALUE")
            .allow_negative_numbers(true)
            .help_heading("Config overrides");
        if boolean {
            arg = arg.num_args(0..=1).default_missing_value("true");
        }
        cmd = cmd.arg(arg);
    }
    cmd
}

fn apply_overrides(config: &mut EngineConfig, matches: &ArgMatches) -> Result<(), ConfigError> {
    for (key, _) in config_keys() {
        if let Some(value) = leaf_matches(matches).get_one::<String>(&key) {
            config.set_dotted(&key, value)?;
        }
    }
    Ok(())
}

/// Global args are propagated to the innermost subcommand's matches.
fn leaf_matches(matches: &ArgMatches) -> &ArgMatches {
    let mut m = matches;
    while let Some((_, sub)) = m.subcommand() {
        m = sub;
    }
    m
}

fn base_config(path: Option<&Path>) -> Result<EngineConfig, ConfigError> {
    match path {
        Some(p) => EngineConfig::load(p),
        None => Ok(EngineConfig::default()),
    }
}

fn backend(args: &BackendArgs, config: &EngineConfig) -> anyhow::Result<Arc<dyn ChatBackend>> {
    if let Some(path) = &args.script {
        let b = ScriptedBackend::from_file(path).with_context(|| format!("reading script {}", path.display()))?;
        return Ok(Arc::new(b));
    }
    if let Some(path) = &args.replay {
        let records = load_recording(path).with_context(|| format!("reading recording {}", path.display()))?;
        return Ok(Arc::new(ReplayBackend::new(records)));
    }
    Ok(Arc::new(OpenAiBackend::from_env(&config.base_url, &config.model_name, HTTP_TIMEOUT)?))
}

fn cmd_run(config: &EngineConfig, args: &RunArgs) -> anyhow::Result<ExitCode> {
    let gateway = Gateway::new(backend(&args.backend, config)?, config.decoding());
    let result = run_query(config, &gateway, &args.query);
    if let Some(path) = &args.record {
        save_recording(path, &gateway.calls()).with_context(|| format!("writing {}", path.display()))?;
    }
    match result {
        Ok(report) => {
            if args.json {
                println!("{}", serde_json::to_string_pretty(&report.outcome)?);
            } else {
                println!("{}", report.outcome.final_answer);
            }
            if let Some(path) = report.trace_path {
                eprintln!("trace: {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Err(failure) => {
            eprintln!("error: {}", failure.error);
            if let Some(path) = failure.trace_path {
                eprintln!("partial trace: {}", path.display());
            }
            Ok(ExitCode::from(EXIT_ENGINE))
        }
    }
}

fn cmd_bench(config: &EngineConfig, args: &BenchArgs) -> anyhow::Result<ExitCode> {
    let items = load_dataset(args.kind, &args.data)?;
    let spec = match (args.fraction, args.count) {
        (Some(p), _) => Some(SampleSpec::Fraction(p)),
        (None, Some(n)) => Some(SampleSpec::Count(n)),
        (None, None) => None,
    };
    let items = match spec {
        Some(spec) => stratified_sample(&items, spec, args.sample_seed.unwrap_or(config.seed as u64))?,
        None => items,
    };
    eprintln!("evaluating {} items", items.len());
    let script = match &args.script {
        Some(path) => Some(std::fs::read_to_string(path).with_context(|| format!("reading script {}", path.display()))?),
        None => None,
    };
    if let Some(text) = &script {
        ScriptedBackend::from_json(text).context("parsing script")?;
    }
    let live: Option<Arc<dyn ChatBackend>> = match script {
        Some(_) => None,
        None => Some(Arc::new(OpenAiBackend::from_env(&config.base_url, &config.model_name, HTTP_TIMEOUT)?)),
    };
    // Each item gets a fresh copy of the script; live items share one client.
    let make = |_: &halo_core::eval::BenchmarkItem| {
        let backend: Arc<dyn ChatBackend> = match (&live, &script) {
            (Some(b), _) => b.clone(),
            (None, Some(text)) => Arc::new(ScriptedBackend::from_json(text).expect("script parsed above")),
            (None, None) => unreachable!("either a script or a live backend is configured"),
        };
        Gateway::new(backend, config.decoding())
    };
    let report = run_bench(&items, config, make, &BenchOptions::from_config(config))?;
    print!("{}", report.table());
    if let Some(path) = &args.out {
        std::fs::write(path, serde_json::to_string_pretty(&report)?).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn short(text: &str, max: usize) -> String {
    let one_line = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if one_line.chars().count() <= max {
        one_line
    } else {
        format!("{}...", one_line.chars().take(max).collect::<String>())
    }
}

fn cmd_show(path: &Path, json: bool) -> anyhow::Result<ExitCode> {
    let trace = WorkflowTrace::load(path)?;
    if json {
        println!("{}", trace.to_json_pretty());
        return Ok(ExitCode::SUCCESS);
    }
    println!("run       {}", trace.run_id);
    println!("created   {}", trace.created_at);
    println!("backend   {} (prompts {}, schema {})", trace.backend_id, trace.prompt_version, trace.schema_version);
    println!("query     {}", short(&trace.query, 100));
    if let Some(b) = &trace.bundle {
        println!("refined   {}", short(&b.refined_prompt, 100));
    }
    for s in &trace.subtasks {
        let roles: Vec<&str> = s.roles.iter().map(|r| r.role_name.as_str()).collect();
        println!(
            "subtask {} {} | roles [{}] | {} nodes | best {} ({:.3}) {}",
            s.subtask.index,
            short(&s.subtask.description, 50),
            roles.join(", "),
            s.tree.len(),
            s.best.terminal_label,
            s.best.mean_value,
            short(&s.best.answer, 40),
        );
    }
    let mut per_key: std::collections::BTreeMap<&str, usize> = Default::default();
    for c in &trace.calls {
        *per_key.entry(c.routing_key.as_str()).or_default() += 1;
    }
    let counts: Vec<String> = per_key.iter().map(|(k, n)| format!("{k}={n}")).collect();
    println!("calls     {} ({})", trace.calls.len(), counts.join(", "));
    match (&trace.outcome, &trace.error) {
        (Some(o), _) => {
            println!("stop      {:?}", o.stop_reason);
            println!("answer    {}", short(&o.final_answer, 100));
        }
        (None, Some(e)) => println!("error     {e}"),
        (None, None) => {}
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_replay(path: &Path, cli_config: Option<&Path>, matches: &ArgMatches) -> anyhow::Result<ExitCode> {
    let trace = WorkflowTrace::load(path)?;
    // The recorded config is the baseline unless another file is given.
    let mut config = match cli_config {
        Some(p) => EngineConfig::load(p)?,
        None => trace.config.clone(),
    };
    apply_overrides(&mut config, matches)?;
    match replay_trace(&trace, &config) {
        Ok(outcome) => {
            println!("replay matches recorded outcome ({:?})", outcome.stop_reason);
            println!("{}", outcome.final_answer);
            Ok(ExitCode::SUCCESS)
        }
        Err(e) if e.is_divergence() => {
            eprintln!("divergence: {e}");
            Ok(ExitCode::from(EXIT_DIVERGENCE))
        }
        Err(e) => {
            eprintln!("error: {e}");
            Ok(ExitCode::from(EXIT_ENGINE))
        }
    }
}

fn main() -> ExitCode {
    let matches = command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Trace(TraceCommand::Show { path, json }) => cmd_show(path, *json),
        Command::Trace(TraceCommand::Replay { path }) => cmd_replay(path, cli.config.as_deref(), &matches),
        Command::Run(args) => match configured(&cli, &matches) {
            Ok(config) => cmd_run(&config, args),
            Err(e) => return config_error(&e),
        },
        Command::Bench(args) => match configured(&cli, &matches) {
            Ok(config) => {
                if args.fraction.is_none() && args.count.is_none() && args.sample_seed.is_some() {
                    eprintln!("note: --sample-seed has no effect without --fraction or --count");
                }
                cmd_bench(&config, args)
            }
            Err(e) => return config_error(&e),
        },
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            if let Some(ce) = e.downcast_ref::<ConfigError>() {
                return config_error(ce);
            }
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ENGINE)
        }
    }
}

fn configured(cli: &Cli, matches: &ArgMatches) -> Result<EngineConfig, ConfigError> {
    let mut config = base_config(cli.config.as_deref())?;
    apply_overrides(&mut config, matches)?;
    Ok(config)
}

fn config_error(e: &ConfigError) -> ExitCode {
    eprintln!("config error: {e}");
    ExitCode::from(EXIT_CONFIG)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_config_field_has_a_flag() {
        let keys: Vec<String> = config_keys().into_iter().map(|(k, _)| k).collect();
        for expected in ["budgets.max-subtasks", "ablations.no-refine", "lambda-fail", "eval.parallelism", "trace-dir"] {
            assert!(keys.iter().any(|k| k == expected), "{expected}");
        }
        command().debug_assert();
    }

}
