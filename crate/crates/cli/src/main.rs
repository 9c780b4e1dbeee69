//! `genrisk` command-line tool.

mod commands;
mod input;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use genrisk::config_search::SearchMethod;
use genrisk::shift_bounds::RadiusVariant;

use crate::report::{Clock, ReportDocument};

#[derive(Debug, Parser)]
#[command(
    name = "genrisk",
    version,
    about = "Certified generation-risk bounds for retrieval-augmented generation"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Print the report as JSON instead of a table.
    #[arg(long, global = true)]
    json: bool,

    /// Master seed for every stochastic step. A random seed is chosen and
    /// printed to stderr when neither this flag nor GENRISK_SEED is set.
    #[arg(long, global = true, env = "GENRISK_SEED")]
    seed: Option<u64>,

    /// Maximum worker threads for simulations.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Ignore unknown fields and extra CSV columns (reported as warnings).
    #[arg(long, global = true)]
    lenient: bool,

    /// Also write the JSON report to this file.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Conformal generation risk of one configuration.
    Bound(BoundArgs),
    /// Conformal generation risk under a bounded Hellinger shift.
    ShiftBound(ShiftBoundArgs),
    /// Configurations whose risk is certified below --alpha.
    ValidConfigs(ValidConfigsArgs),
    /// Closed-form retrieval and RAG-benefit bounds from a JSON spec.
    Theory(SpecArgs),
    /// Monte Carlo coverage or FWER experiment from a JSON spec.
    Simulate(SpecArgs),
    /// Constrained generation with a mock generator over a JSONL knowledge base.
    ProtocolDemo(ProtocolArgs),
}

#[derive(Debug, Args)]
struct BoundArgs {
    /// CSV with header config_id,sample_id,risk.
    risk_table: PathBuf,
    /// Configuration to calibrate.
    #[arg(long)]
    config: String,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
}

#[derive(Debug, Args)]
struct ShiftBoundArgs {
    risk_table: PathBuf,
    #[arg(long)]
    config: String,
    /// Hellinger radius.
    #[arg(long)]
    rho: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Feasible-radius exponent: lemma (−1/2) or theorem (−2).
    #[arg(long, default_value = "lemma")]
    exponent_variant: RadiusVariant,
}

#[derive(Debug, Args)]
struct ValidConfigsArgs {
    risk_table: PathBuf,
    #[arg(long)]
    alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value = "bonferroni")]
    method: SearchMethod,
    /// JSON with ids, optional budgets and a weight matrix (graph method only).
    #[arg(long)]
    graph_spec: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SpecArgs {
    spec: PathBuf,
}

#[derive(Debug, Args)]
struct ProtocolArgs {
    /// Knowledge base, one {embedding, label, payload} object per line.
    #[arg(long)]
    kb: PathBuf,
    /// Mock generator spec: outputs, weights, mode, max_draws.
    #[arg(long)]
    generator: PathBuf,
    /// Query embedding, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    query: Vec<f64>,
    #[arg(long)]
    n_rag: u32,
    #[arg(long)]
    lambda_g: u32,
    #[arg(long)]
    lambda_s: f64,
    /// Similarity between generations: jaccard or rouge-l.
    #[arg(long, default_value = "jaccard")]
    similarity: commands::TextSimilarity,
    /// Reference answer; adds per-item and set-level ROUGE-L risk.
    #[arg(long)]
    reference: Option<String>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Bound(_) => "bound",
            Command::ShiftBound(_) => "shift-bound",
            Command::ValidConfigs(_) => "valid-configs",
            Command::Theory(_) => "theory",
            Command::Simulate(_) => "simulate",
            Command::ProtocolDemo(_) => "protocol-demo",
        }
    }

    fn is_stochastic(&self) -> bool {
        matches!(self, Command::Simulate(_) | Command::ProtocolDemo(_))
    }
}

fn run(cli: Cli) -> anyhow::Result<ReportDocument> {
    let clock = Clock::start();
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let seed = match cli.global.seed {
        Some(s) => Some(s),
        None if cli.command.is_stochastic() => {
            let s: u64 = rand::random();
            eprintln!("seed: {s}");
            Some(s)
        }
        None => None,
    };
    let mut inputs = input::Inputs::new(cli.global.lenient);
    let output = match &cli.command {
        Command::Bound(a) => commands::bound(a, &mut inputs)?,
        Command::ShiftBound(a) => commands::shift_bound(a, &mut inputs)?,
        Command::ValidConfigs(a) => commands::valid_configs(a, &mut inputs)?,
        Command::Theory(a) => commands::theory(a, &mut inputs)?,
        Command::Simulate(a) => commands::simulate(a, &mut inputs, seed.unwrap_or_default())?,
        Command::ProtocolDemo(a) => commands::protocol_demo(a, &mut inputs, seed.unwrap_or_default())?,
    };
    let mut warnings = inputs.warnings;
    warnings.extend(output.warnings);
    Ok(ReportDocument {
        schema_version: report::SCHEMA_VERSION,
        command: cli.command.name().to_string(),
        argv: std::env::args().skip(1).collect(),
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        inputs: inputs.digests,
        parameters: output.parameters,
        results: output.results,
        warnings,
        seed,
        wall_clock: clock.stop(),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.global.json;
    let output = cli.global.output.clone();
    match run(cli) {
        Ok(doc) => {
            let text = doc.to_json();
            if let Some(path) = output {
                if let Err(e) = std::fs::write(&path, &text) {
                    eprintln!("error: writing {}: {e}", path.display());
                    return ExitCode::FAILURE;
                }
            }
            if json {
                print!("{text}");
            } else {
                print!("{}", doc.to_table());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
