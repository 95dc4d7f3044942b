use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use hcmgnn::cli::{cmd_ablate, cmd_cv, cmd_stratify, cmd_synth, cmd_test, Overrides, RunConfig};
use hcmgnn::model::Variant;

/// Gene-microbe-disease triplet prediction with causal metapath graph networks.
#[derive(Parser)]
#[command(name = "hcmgnn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (JSON). Defaults to the built-in synthetic setup.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Top-level seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Model variant: full, woMP-i, woMP-ii, woMP-iii, woTM, woAF, woBF.
    #[arg(long)]
    variant: Option<Variant>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the planted synthetic dataset and its manifest.
    Synth(Common),
    /// Five-fold cross-validation.
    Cv(Common),
    /// Train on one fold's training part and evaluate on the independent test set.
    Test(Common),
    /// Full model and all ablations on the same split.
    Ablate(Common),
    /// Degree-stratified test Hit@1 for a checkpoint.
    Stratify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn config(c: &Common) -> Result<RunConfig> {
    let base = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Ok(base.resolve(&Overrides { out: c.out.clone(), seed: c.seed, variant: c.variant })?)
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("HCMGNN_THREADS") {
        let n: usize = v.parse().with_context(|| format!("HCMGNN_THREADS={v}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Synth(c) => {
            let m = cmd_synth(&config(&c)?)?;
            println!("sizes {:?} density {:.4} triangles {}", m.sizes, m.density, m.triangles);
        }
        Command::Cv(c) => {
            for r in cmd_cv(&config(&c)?)? {
                println!("{}", serde_json::to_string(&r)?);
            }
        }
        Command::Test(c) => {
            let t = cmd_test(&config(&c)?)?;
            println!("{}", serde_json::to_string(&t.record)?);
            if let Some(s) = t.silhouette {
                println!("silhouette {s:.4}");
            }
        }
        Command::Ablate(c) => {
            let rows = cmd_ablate(&config(&c)?)?;
            println!("{:<10} {:>7} {:>7} {:>7} {:>7}", "variant", "hit1", "hit3", "ndcg3", "mrr");
            for r in rows {
                match (&r.record, &r.error) {
                    (Some(m), _) => println!("{:<10} {:>7.4} {:>7.4} {:>7.4} {:>7.4}", r.variant.name(), m.hit1, m.hit3, m.ndcg3, m.mrr),
                    (None, e) => println!("{:<10} failed: {}", r.variant.name(), e.as_deref().unwrap_or("unknown")),
                }
            }
        }
        Command::Stratify { common, checkpoint } => {
            for s in cmd_stratify(&config(&common)?, &checkpoint)? {
                let hit = s.hit1.map_or_else(|| "NA".to_string(), |h| format!("{h:.4}"));
                println!("{:.4}\t{}\t{}", s.threshold, s.count, hit);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
