use std::error::Error;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use trajforge_core::pipeline::{audit, run_synthesis, AgentSource, BackendKind, PipelineConfig};
use trajforge_core::simenv::{EnvSpec, Environment};

#[derive(Parser)]
#[command(name = "trajforge", version, about = "Synthesize verified multi-turn function-calling trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the synthesis pipeline and write training samples as JSONL.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `master_seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `workers` from the config.
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, value_enum)]
        backend: Option<Backend>,
    },
    /// Audit an exported JSONL file.
    Validate {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Load an environment specification and exercise every tool once.
    EnvCheck {
        #[arg(long)]
        env: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Scripted,
    Remote,
}

fn run(
    config: PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
    workers: Option<usize>,
    backend: Option<Backend>,
) -> Result<(), Box<dyn Error>> {
    let mut cfg = PipelineConfig::from_path(&config)?;
    if let Some(seed) = seed {
        cfg.master_seed = seed;
    }
    if let Some(workers) = workers {
        cfg.workers = workers;
    }
    if let Some(backend) = backend {
        cfg.backend = match backend {
            Backend::Scripted => BackendKind::Scripted,
            Backend::Remote => BackendKind::Remote,
        };
    }
    let out = out
        .or_else(|| cfg.output_path.clone())
        .ok_or("no output path: pass --out or set output_path in the config")?;
    cfg.validate()?;
    let source = AgentSource::for_config(&cfg)?;
    let report = run_synthesis(&cfg, &source, &out)?;
    for (id, reason) in &report.failed {
        log::warn!("{id} dropped: {reason}");
    }
    println!(
        "retained {} rejected {} failed {} samples {} in {:.2?}",
        report.retained,
        report.rejected,
        report.failed.len(),
        report.samples_written,
        report.wall_time
    );
    let histogram: Vec<String> = report
        .attempts_histogram
        .iter()
        .map(|(attempts, rounds)| format!("{attempts}:{rounds}"))
        .collect();
    println!("attempts per round (attempts:rounds) {}", histogram.join(" "));
    println!("wrote {}", out.display());
    Ok(())
}

fn validate(input: PathBuf) -> Result<(), Box<dyn Error>> {
    let report = audit(&input)?;
    println!(
        "ok: {} samples over {} trajectories ({} call turns, {} answer turns)",
        report.samples, report.trajectories, report.call_turns, report.answer_turns
    );
    Ok(())
}

fn env_check(path: PathBuf) -> Result<(), Box<dyn Error>> {
    let spec = EnvSpec::from_path(&path)?;
    let env = Environment::from_spec(spec)?;
    let graph = env.graph();
    println!(
        "{}: {} tools, {} dependency edges, golden seed {}",
        env.id(),
        graph.len(),
        graph.edges().len(),
        env.golden_seed()
    );
    let start = env.reset(env.golden_seed());
    let mut unreachable = Vec::new();
    for tool in graph.tool_names() {
        let mut rng = ChaCha8Rng::seed_from_u64(env.golden_seed());
        match env.run_turn(&start, tool, graph.len().max(1) * 2, &mut rng) {
            Ok((trace, _)) if trace.metadata.target_reached => {}
            Ok(_) => unreachable.push(format!("{tool}: not reached")),
            Err(e) => unreachable.push(format!("{tool}: {e}")),
        }
    }
    if unreachable.is_empty() {
        println!("every tool reachable from the golden state");
        Ok(())
    } else {
        for line in &unreachable {
            println!("  {line}");
        }
        Err(format!("{} tool(s) could not be exercised", unreachable.len()).into())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            workers,
            backend,
        } => run(config, out, seed, workers, backend),
        Command::Validate { input } => validate(input),
        Command::EnvCheck { env } => env_check(env),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
