use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use rtscope_core::config::{ConfigLayer, RunConfig};
use rtscope_core::error::{Error, Result};
use rtscope_core::metrics::UrlIndex;
use rtscope_core::pipeline::{
    load_cached_graph, load_cached_partition, load_url_records, run_pipeline, select_urls, stage_communities,
    stage_curves, stage_graph, stage_ingest, stage_nulltest, stage_scores, stage_urls,
};
use rtscope_core::synth::{generate_synthetic, SyntheticSpec};

#[derive(Parser)]
#[command(name = "rtscope", version, about = "Retweet-network analysis of unreliable news diffusion")]
struct Cli {
    /// TOML file with run settings; flags override its keys.
    #[arg(long, short = 'c', global = true, env = "RTSCOPE_CONFIG")]
    config: Option<PathBuf>,
    /// Log progress (repeat for more detail).
    #[arg(long, short = 'v', global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse tweets and source catalogs and report counts.
    Ingest(Settings),
    /// Build the retweet graph and cache it.
    Graph(Settings),
    /// Detect communities on the cached graph.
    Communities(Settings),
    /// Score users (tallies, untrustworthiness, bot scores).
    Scores(Settings),
    /// Aggregate per-URL diffusion records.
    Urls(Settings),
    /// Success-probability curves from cached URL records.
    Curves(Settings),
    /// Null-model tests of community score distributions.
    Nulltest(Settings),
    /// Run every stage and write the manifest.
    All(Settings),
    /// Generate a synthetic scenario.
    Synth(SynthArgs),
}

#[derive(Args)]
struct Settings {
    #[command(flatten)]
    layer: ConfigLayer,
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario file (TOML); the built-in demo scenario when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the scenario as TOML and exit.
    #[arg(long)]
    print_spec: bool,
}

fn resolve(cli_config: &Option<PathBuf>, layer: &ConfigLayer) -> Result<RunConfig> {
    let base = match cli_config {
        Some(p) => ConfigLayer::from_file(p)?,
        None => ConfigLayer::default(),
    };
    base.overlay(layer).resolve()
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Input(e.to_string()))?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn synth(args: &SynthArgs) -> Result<()> {
    let spec = match &args.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Input(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", p.display())))?
        }
        None => SyntheticSpec::demo(),
    };
    if args.print_spec {
        print!("{}", toml::to_string(&spec).map_err(|e| Error::Input(e.to_string()))?);
        return Ok(());
    }
    let out = args
        .out
        .as_ref()
        .ok_or_else(|| Error::Validation("--out is required".into()))?;
    let data = generate_synthetic(&spec, args.seed)?;
    data.write_to(out)?;
    #[derive(Serialize)]
    struct Summary {
        records: usize,
        users: usize,
        urls: usize,
    }
    print_json(&Summary {
        records: data.records.len(),
        users: data.users.len(),
        urls: data.urls.len(),
    })
}

fn run(cli: Cli) -> Result<()> {
    let cfg = |s: &Settings| resolve(&cli.config, &s.layer);
    match &cli.command {
        Command::Synth(args) => synth(args),
        Command::All(s) => {
            let m = run_pipeline(&cfg(s)?)?;
            print_json(&m.stages)
        }
        Command::Ingest(s) => print_json(&stage_ingest(&cfg(s)?)?.counts),
        Command::Graph(s) => {
            let c = cfg(s)?;
            let ing = stage_ingest(&c)?;
            print_json(&stage_graph(&c, &ing.records)?.1)
        }
        Command::Communities(s) => {
            let c = cfg(s)?;
            let g = load_cached_graph(&c).map_err(|e| e.at_stage("communities"))?;
            print_json(&stage_communities(&c, &g)?.1)
        }
        Command::Scores(s) | Command::Urls(s) | Command::Nulltest(s) => {
            let c = cfg(s)?;
            let ing = stage_ingest(&c)?;
            let g = load_cached_graph(&c).map_err(|e| e.at_stage("scores"))?;
            let p = load_cached_partition(&c, g.nodes().clone()).map_err(|e| e.at_stage("scores"))?;
            let index = UrlIndex::build(&ing.records);
            let (profiles, counts) = stage_scores(&c, &ing.records, &index, &ing.catalog, &p)?;
            match &cli.command {
                Command::Scores(_) => print_json(&counts),
                Command::Urls(_) => print_json(&stage_urls(&c, &ing.records, &index, &p, &profiles)?.2),
                _ => print_json(&stage_nulltest(&c, &profiles, &p)?),
            }
        }
        Command::Curves(s) => {
            let c = cfg(s)?;
            let all = load_url_records(&c).map_err(|e| e.at_stage("curves"))?;
            let (kept, t) = select_urls(&c, &all).map_err(|e| e.at_stage("curves"))?;
            print_json(&stage_curves(&c, &kept, t)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
