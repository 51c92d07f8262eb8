//! `spillover`: measure, regress, cluster, did, validate and synth
//! subcommands over a document corpus and its embeddings.

mod cluster;
mod config;
mod did;
mod inputs;
mod measure;
mod regress;
mod synth;
mod validate;

use std::io::IsTerminal;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

/// Error caused by invocation or configuration; exits with code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "spillover", version, about = "Embedding-based innovation and knowledge-spillover measurement")]
struct Cli {
    /// JSON run configuration; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for every synthetic generator.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
pub struct InputArgs {
    /// JSON-lines document metadata.
    #[arg(long)]
    metadata: Option<PathBuf>,
    /// EMB1 embedding matrix.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Ids file aligned to the embedding rows (default: embeddings path with `.ids`).
    #[arg(long)]
    ids: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Innovation, received and created spillover indices per document.
    Measure(measure::MeasureArgs),
    /// Spillover regressions, placebo sweeps and Fisher-exact p-values.
    Regress(regress::RegressArgs),
    /// Sub-topic clustering per subject class.
    Cluster(cluster::ClusterArgs),
    /// Event-study difference in differences over sub-topics.
    Did(did::DidArgs),
    /// Embedding diagnostics, binscatter and citation validation.
    Validate(validate::ValidateArgs),
    /// Write synthetic corpora and panels with planted effects.
    Synth(synth::SynthArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Measure(_) => "measure",
            Command::Regress(_) => "regress",
            Command::Cluster(_) => "cluster",
            Command::Did(_) => "did",
            Command::Validate(_) => "validate",
            Command::Synth(_) => "synth",
        }
    }

    fn inputs(&self) -> Option<&InputArgs> {
        match self {
            Command::Measure(a) => Some(&a.inputs),
            Command::Regress(a) => Some(&a.inputs),
            Command::Cluster(a) => Some(&a.inputs),
            Command::Did(a) => Some(&a.inputs),
            Command::Validate(a) => Some(&a.inputs),
            Command::Synth(_) => None,
        }
    }
}

fn resolve(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.subcommand = cli.command.name().to_string();
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(UsageError("--threads must be positive".into()).into());
        }
        cfg.threads = Some(t);
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.synth.corpus.seed = s;
        cfg.synth.panel.seed = s;
        cfg.synth.elasticity.seed = s;
    }
    if let Some(inputs) = cli.command.inputs() {
        if let Some(p) = &inputs.metadata {
            cfg.inputs.metadata = Some(p.clone());
        }
        if let Some(p) = &inputs.embeddings {
            cfg.inputs.embeddings = Some(p.clone());
        }
        if let Some(p) = &inputs.ids {
            cfg.inputs.ids = Some(p.clone());
        }
    }
    match &cli.command {
        Command::Measure(a) => a.apply(&mut cfg),
        Command::Regress(a) => a.apply(&mut cfg),
        Command::Cluster(a) => a.apply(&mut cfg),
        Command::Did(a) => a.apply(&mut cfg),
        Command::Validate(a) => a.apply(&mut cfg),
        Command::Synth(a) => a.apply(&mut cfg),
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = resolve(&cli)?;
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    cfg.write_to(&cfg.out)?;
    match &cli.command {
        Command::Measure(a) => measure::run(a, &cfg),
        Command::Regress(a) => regress::run(a, &cfg),
        Command::Cluster(a) => cluster::run(a, &cfg),
        Command::Did(a) => did::run(a, &cfg),
        Command::Validate(a) => validate::run(a, &cfg),
        Command::Synth(a) => synth::run(a, &cfg),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<spillover::Error>() {
            return if e.is_config() { 2 } else { 1 };
        }
    }
    1
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
