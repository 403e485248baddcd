use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::error::{ContextKind, ContextValue, ErrorKind};
use clap::{Parser, Subcommand};
use crowdcause::expert::{all_queries, KnowledgeSet};
use crowdcause::graph::load_network;
use crowdcause::iv::{iv_replicates, write_csv, IvScenario};
use crowdcause::metrics::{behavior_metrics, edge_metrics, MetricsReport};
use crowdcause::Dag;
use crowdcause_cli::config::set_path;
use crowdcause_cli::error::InModule;
use crowdcause_cli::{
    aggregate, llm_elicit, parse_override, run_experiment, Aggregation, CliError, CliResult,
    ExperimentConfig, LlmExpertConfig,
};
use crowdcause_service::{AppState, SessionStore};
use serde_json::Value;

/// Environment variable with the bearer token required by `serve`.
const TOKEN_ENV: &str = "CROWDCAUSE_TOKEN";

#[derive(Parser, Debug)]
#[command(
    name = "crowdcause",
    version,
    about = "Causal structure from crowds of experts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct ExperimentArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; replicate r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    /// Override a config field, e.g. `--set crowd.0.count=10`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
    /// Output directory (defaults to the config's `output_dir`).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a crowd, elicit, aggregate and score every replicate.
    Simulate(ExperimentArgs),
    /// Like `simulate`, but the config must contain a `design` section.
    Design(ExperimentArgs),
    /// Aggregate a responses CSV into one graph.
    Aggregate {
        #[arg(long)]
        responses: PathBuf,
        /// Fixture name or network file giving the variable set.
        #[arg(long, default_value = "asia")]
        network: String,
        #[arg(long, value_enum, default_value = "query-level")]
        method: Method,
        #[arg(long, default_value_t = crowdcause::aggregate::DEFAULT_RESTARTS)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Graph JSON destination; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Two-stage least squares with all instruments versus the filtered set.
    IvDemo {
        /// `default` or a scenario JSON file.
        #[arg(long, default_value = "default")]
        scenario: String,
        #[arg(long = "set", value_name = "PATH=VALUE")]
        overrides: Vec<String>,
        /// Samples per replicate.
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        replicates: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated validity flags (1/0) from the expert; the
        /// scenario's true flags when absent.
        #[arg(long)]
        flags: Option<String>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score an estimated graph against a reference graph.
    Metrics {
        #[arg(long)]
        estimate: PathBuf,
        /// Fixture name or network file.
        #[arg(long, default_value = "asia")]
        truth: String,
        /// Optional responses CSV for behavioral metrics.
        #[arg(long)]
        responses: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Ask a language model every pair of a network.
    LlmElicit {
        /// LLM expert config (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "asia")]
        network: String,
        #[arg(long, value_enum, default_value = "ordering")]
        protocol: ProtocolArg,
        /// Responses CSV destination; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the elicitation HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Directory for session event logs; in-memory when absent.
        #[arg(long)]
        log_dir: Option<PathBuf>,
    },
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum Method {
    Single,
    ExpertLevel,
    QueryLevel,
}

impl From<Method> for Aggregation {
    fn from(m: Method) -> Self {
        match m {
            Method::Single => Aggregation::Single,
            Method::ExpertLevel => Aggregation::ExpertLevel,
            Method::QueryLevel => Aggregation::QueryLevel,
        }
    }
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum ProtocolArg {
    Edge,
    Ordering,
}

fn overrides(raw: &[String]) -> CliResult<Vec<(String, Value)>> {
    raw.iter().map(|s| parse_override(s)).collect()
}

fn emit(output: Option<&Path>, text: &str) -> CliResult<()> {
    match output {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn experiment(args: ExperimentArgs, need_design: bool) -> CliResult<()> {
    let mut ov = overrides(&args.overrides)?;
    if let Some(seed) = args.seed {
        ov.push(("seed".into(), Value::from(seed)));
    }
    let config = ExperimentConfig::load(&args.config, &ov)?;
    if need_design && config.design.is_none() {
        return Err(CliError::config(
            "design",
            "`design` subcommand needs a design section",
        ));
    }
    let report = run_experiment(&config)?;
    let dir = args.output.unwrap_or_else(|| config.output_dir.clone());
    report.write(&dir)?;
    print!("{}", report.summary_json());
    Ok(())
}

fn read_responses(path: &Path) -> CliResult<KnowledgeSet> {
    let f = fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    KnowledgeSet::read_csv(f).in_module("expert-sim")
}

fn network_dag(source: &str, field: &str) -> CliResult<Dag> {
    load_network(source)
        .and_then(|f| f.to_dag())
        .map_err(|e| CliError::config(field, e))
}

fn iv_demo(
    scenario: &str,
    raw_overrides: &[String],
    n: usize,
    replicates: u64,
    seed: u64,
    flags: Option<&str>,
    output: Option<&Path>,
) -> CliResult<()> {
    let mut doc = if scenario == "default" {
        serde_json::to_value(IvScenario::default()).expect("scenario serializes")
    } else {
        let text = fs::read_to_string(scenario)
            .map_err(|e| CliError::config("scenario", format!("{scenario}: {e}")))?;
        serde_json::from_str(&text).map_err(|e| CliError::config("scenario", e))?
    };
    for (path, value) in overrides(raw_overrides)? {
        set_path(&mut doc, &path, value)?;
    }
    let s: IvScenario = serde_json::from_value(doc).map_err(|e| CliError::config("scenario", e))?;
    s.validate().map_err(|e| CliError::config("scenario", e))?;
    let flags = match flags {
        None => s.true_flags(),
        Some(text) => text
            .split(',')
            .map(|t| match t.trim() {
                "1" | "true" => Ok(true),
                "0" | "false" => Ok(false),
                other => Err(CliError::config(
                    "flags",
                    format!("`{other}` is not 0 or 1"),
                )),
            })
            .collect::<CliResult<_>>()?,
    };
    if flags.len() != s.instruments() {
        return Err(CliError::config(
            "flags",
            format!("{} flags for {} instruments", flags.len(), s.instruments()),
        ));
    }
    let rows = iv_replicates(&s, &flags, n, seed..seed + replicates).in_module("iv-inference")?;
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf).in_module("iv-inference")?;
    emit(output, &String::from_utf8(buf).expect("csv is utf-8"))
}

fn metrics(
    estimate: &Path,
    truth: &str,
    responses: Option<&Path>,
    output: Option<&Path>,
) -> CliResult<()> {
    let est = Dag::load(estimate).map_err(|e| CliError::config("estimate", e))?;
    let truth = network_dag(truth, "truth")?;
    let edge = edge_metrics(&est, &truth).in_module("graph-core")?;
    let behavior = responses
        .map(|p| read_responses(p).map(|d| behavior_metrics(&d)))
        .transpose()?;
    let report = MetricsReport::new(edge, None, behavior);
    emit(
        output,
        &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"),
    )
}

fn llm(
    config: &Path,
    network: &str,
    protocol: ProtocolArg,
    output: Option<&Path>,
) -> CliResult<()> {
    let text = fs::read_to_string(config)
        .map_err(|e| CliError::config("config", format!("{}: {e}", config.display())))?;
    let cfg: LlmExpertConfig =
        serde_json::from_str(&text).map_err(|e| CliError::config("config", e))?;
    let file = load_network(network).map_err(|e| CliError::config("network", e))?;
    let dag = file.to_dag().map_err(|e| CliError::config("network", e))?;
    let descriptions: Vec<(String, String)> = file.descriptions.into_iter().collect();
    let protocol = match protocol {
        ProtocolArg::Edge => crowdcause::expert::Protocol::EdgeWise,
        ProtocolArg::Ordering => crowdcause::expert::Protocol::OrderingWise,
    };
    let out = llm_elicit(&cfg, &descriptions, &all_queries(&dag), protocol)?;
    emit(output, &out.responses.to_csv_string())
}

fn serve(addr: &str, log_dir: Option<PathBuf>) -> CliResult<()> {
    let store = match log_dir {
        Some(d) => SessionStore::open(d).map_err(|e| CliError::Service(e.to_string()))?,
        None => SessionStore::in_memory(),
    };
    let state = AppState {
        store: Arc::new(store),
        token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
    };
    tokio::runtime::Runtime::new()?
        .block_on(crowdcause_service::serve(addr, state))
        .map_err(|e| CliError::Service(format!("{addr}: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(a) => experiment(a, false),
        Command::Design(a) => experiment(a, true),
        Command::Aggregate {
            responses,
            network,
            method,
            restarts,
            seed,
            output,
        } => {
            let d = read_responses(&responses)?;
            let nodes = network_dag(&network, "network")?.nodes().to_vec();
            let g = aggregate(&d, &nodes, method.into(), restarts, seed)
                .in_module("crowd-aggregation")?;
            emit(output.as_deref(), &(g.to_json() + "\n"))
        }
        Command::IvDemo {
            scenario,
            overrides,
            n,
            replicates,
            seed,
            flags,
            output,
        } => iv_demo(
            &scenario,
            &overrides,
            n,
            replicates,
            seed,
            flags.as_deref(),
            output.as_deref(),
        ),
        Command::Metrics {
            estimate,
            truth,
            responses,
            output,
        } => metrics(&estimate, &truth, responses.as_deref(), output.as_deref()),
        Command::LlmElicit {
            config,
            network,
            protocol,
            output,
        } => llm(&config, &network, protocol, output.as_deref()),
        Command::Serve { addr, log_dir } => serve(&addr, log_dir),
    }
}

fn usage_error(e: &clap::Error) -> String {
    let flag = match e.get(ContextKind::InvalidArg) {
        Some(ContextValue::String(s)) => Some(s.clone()),
        _ => None,
    };
    let message = e
        .to_string()
        .lines()
        .next()
        .unwrap_or_default()
        .trim_start_matches("error: ")
        .to_string();
    let mut v = serde_json::json!({ "error": "UsageError", "message": message });
    if let Some(f) = flag {
        v["flag"] = Value::from(f);
    }
    v.to_string()
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            e.exit()
        }
        Err(e) => {
            eprintln!("{}", usage_error(&e));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::FAILURE
        }
    }
}
