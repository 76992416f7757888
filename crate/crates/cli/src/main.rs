use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use jobscope::inference::BackendKind;
use jobscope::pipeline::{self, InputSpec, Pipeline, PipelineConfig, PipelineError, Stage, StageSummary};
use jobscope::qa::{ReviewTask, Strata};
use jobscope::synth::{self, SynthProfile};

/// Job-posting relevance, specialization and skills pipeline.
#[derive(Debug, Parser)]
#[command(name = "jobscope", version)]
struct Cli {
    /// Pipeline config (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Classifier backend.
    #[arg(long, global = true, value_parser = ["http", "stub"])]
    backend: Option<String>,
    /// Seed for sampling and synthetic data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Recompute stages even when checkpoints exist.
    #[arg(long, global = true)]
    force: bool,
    /// Comma-separated stages for `run`.
    #[arg(long, global = true, value_name = "LIST")]
    stages: Option<String>,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Read input files into the ingested set and quarantine.
    Ingest(Inputs),
    /// Collapse exact and near duplicates into the corpus.
    Dedupe,
    /// Relevance screening.
    Screen,
    /// Specialization classification.
    Classify,
    /// Skill extraction and normalization.
    Extract,
    /// Re-normalize stored skill mentions with the current alias map.
    Normalize,
    /// Compute analytics from the stage files.
    Analyze,
    /// Emit tables, figures and the manifest.
    Report,
    /// Draw a review sheet for expert labeling.
    QaSample {
        #[arg(long, default_value = "relevance")]
        task: ReviewTask,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        strata: Option<Strata>,
    },
    /// Score a completed review sheet.
    QaScore {
        #[arg(long, value_name = "PATH")]
        sheet: PathBuf,
    },
    /// Verify extracted skills with the judge backend.
    QaJudge {
        /// Judge at most this many postings (sorted by id).
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Write a synthetic corpus and its planted truth.
    Synth {
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, value_name = "PATH")]
        profile: Option<PathBuf>,
    },
    /// Run the staged pipeline.
    Run(Inputs),
}

#[derive(Debug, clap::Args)]
struct Inputs {
    /// Input files; replaces the configured list.
    #[arg(long = "input", value_name = "PATH")]
    inputs: Vec<PathBuf>,
    /// Platform tag for rows without one.
    #[arg(long)]
    platform: Option<String>,
}

/// An error with an explicit exit code.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<PipelineError>() {
        return e.exit_code() as u8;
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return 2;
    }
    1
}

/// Config file, then flags, then environment.
fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    if let Some(kind) = &cli.backend {
        config.backend.kind = kind.parse::<BackendKind>().map_err(|e| PipelineError::Config(e.to_string()))?;
    }
    if let Some(seed) = cli.seed {
        config.sampling.seed = seed;
    }
    if let Command::Ingest(inputs) | Command::Run(inputs) = &cli.command {
        if !inputs.inputs.is_empty() {
            config.inputs = inputs
                .inputs
                .iter()
                .map(|p| InputSpec { path: p.clone(), format: None, platform: inputs.platform.clone() })
                .collect();
        } else if let Some(platform) = &inputs.platform {
            for i in &mut config.inputs {
                i.platform = Some(platform.clone());
            }
        }
    }
    config.apply_env();
    Ok(config)
}

fn print(summary: &StageSummary) -> Result<()> {
    pipeline::emit(&mut std::io::stdout().lock(), summary)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if cli.stages.is_some() && !matches!(cli.command, Command::Run(_)) {
        return Err(Usage("--stages only applies to `run`".into()).into());
    }
    let config = load_config(&cli)?;

    if let Command::Synth { n, profile } = &cli.command {
        let profile = match profile {
            Some(p) => SynthProfile::load(p).map_err(PipelineError::from)?,
            None => SynthProfile::bundled(),
        };
        let seed = cli.seed.unwrap_or(config.sampling.seed);
        let corpus = synth::generate_synthetic(*n, seed, &profile).map_err(PipelineError::from)?;
        let (postings, truth) = synth::write_synthetic(&corpus, &config.out_dir).map_err(PipelineError::from)?;
        let mut out = std::io::stdout().lock();
        writeln!(out, "synth: {} posting(s) -> {}", corpus.postings.len(), postings.display())?;
        writeln!(out, "synth: truth -> {}", truth.display())?;
        return Ok(());
    }

    let sampling = config.sampling.clone();
    let p = Pipeline::new(config)?.with_force(cli.force);
    match &cli.command {
        Command::Ingest(_) => print(&p.ingest()?)?,
        Command::Dedupe => print(&p.dedupe()?)?,
        Command::Screen => print(&p.screen()?)?,
        Command::Classify => print(&p.classify()?)?,
        Command::Extract => print(&p.extract()?)?,
        Command::Normalize => print(&p.normalize()?)?,
        Command::Analyze => print(&p.analyze()?)?,
        Command::Report => print(&p.report()?)?,
        Command::QaSample { task, n, strata } => {
            let (summary, _) =
                p.qa_sample(*task, n.unwrap_or(sampling.n), sampling.seed, strata.unwrap_or(sampling.strata))?;
            print(&summary)?;
        }
        Command::QaScore { sheet } => {
            let (summary, stats) = p.qa_score(sheet)?;
            print(&summary)?;
            print!("{}", jobscope::qa::agreement_markdown(&stats));
        }
        Command::QaJudge { limit } => print(&p.qa_judge(*limit)?)?,
        Command::Run(_) => {
            let stages = match &cli.stages {
                Some(list) => pipeline::parse_stages(list)?,
                None => Stage::ALL.to_vec(),
            };
            p.run(&stages, &mut std::io::stdout().lock())?;
        }
        Command::Synth { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
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

    match run(cli).context("jobscope failed") {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code(&err);
            eprintln!("error: {:#}", err);
            ExitCode::from(code)
        }
    }
}
