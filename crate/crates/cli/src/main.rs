use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use boxseq_cli::{cmd_embed, cmd_eval, cmd_fit, cmd_predict, cmd_synth, cmd_train, PipelineConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "boxseq", version, about = "Box-sequence fitting, forecasting and embedding")]
struct Cli {
    /// JSON pipeline configuration; unspecified fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic point-cloud sequences, labels and parameters.
    Synth,
    /// Fit minimum-volume boxes to every cloud sequence.
    Fit,
    /// Train the configured autoencoder and write a checkpoint.
    Train,
    /// Compare nearest-neighbour baselines with both network types.
    Eval,
    /// Predict future boxes of one simulation with the checkpoint.
    Predict {
        #[arg(long)]
        sim: String,
    },
    /// Embed hidden representations in 2-D and score mode separation.
    Embed {
        /// Comma-separated component ids (default: config, else all).
        #[arg(long, value_delimiter = ',')]
        components: Option<Vec<String>>,
        /// Remove rigid motion before encoding (default: config).
        #[arg(long)]
        rigid: Option<bool>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    cfg.validate()?;
    if let Some(n) = cli.threads {
        #[cfg(feature = "parallel")]
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
        #[cfg(not(feature = "parallel"))]
        let _ = n;
    }
    let written = match cli.command {
        Command::Synth => cmd_synth(&cfg)?,
        Command::Fit => cmd_fit(&cfg)?,
        Command::Train => cmd_train(&cfg)?,
        Command::Eval => cmd_eval(&cfg)?,
        Command::Predict { sim } => cmd_predict(&cfg, &sim)?,
        Command::Embed { components, rigid } => {
            let comps = components.or_else(|| cfg.embed.components.clone());
            cmd_embed(&cfg, comps.as_deref(), rigid.unwrap_or(cfg.embed.rigid_removed))?
        }
    };
    for p in written {
        log::info!("wrote {}", p.display());
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
