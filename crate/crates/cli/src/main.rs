use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use maskrestore::run::{run_command, Command, RunConfig};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Stage {
    /// Generate paired train and test data as P6 pixmaps.
    Synth,
    /// Stage 1: masked pre-training of the restorer and the mask scorer.
    Pretrain,
    /// Rank restorer layers by conductance and write the layer report.
    MacRank,
    /// Stage 2: fine-tune the selected layers with feature fusion.
    Finetune,
    /// Per-kind PSNR/SSIM and the latent CKA matrix.
    Eval,
    /// Restore images with complementary masks and merge the passes.
    TwinInfer,
    /// Train the frozen feature extractor used by fusion.
    Extractor,
}

impl From<Stage> for Command {
    fn from(s: Stage) -> Self {
        match s {
            Stage::Synth => Command::Synth,
            Stage::Pretrain => Command::Pretrain,
            Stage::MacRank => Command::MacRank,
            Stage::Finetune => Command::Finetune,
            Stage::Eval => Command::Eval,
            Stage::TwinInfer => Command::TwinInfer,
            Stage::Extractor => Command::Extractor,
        }
    }
}

/// Masked pre-training, conductance-ranked fine-tuning and feature fusion
/// for all-in-one image restoration.
#[derive(Debug, Parser)]
#[command(name = "maskrestore", version)]
struct Cli {
    #[arg(value_enum)]
    stage: Stage,

    /// Config file (`key = value` lines under `[section]` headers).
    #[arg(short, long)]
    config: Option<PathBuf>,

    /// Override one field, e.g. `--set mac.k_percent=10`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,

    #[arg(long)]
    seed: Option<u64>,

    /// Parent directory for the run directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Dataset root written by `synth`.
    #[arg(long)]
    data: Option<PathBuf>,

    #[arg(long)]
    checkpoint: Option<PathBuf>,

    /// Layer report written by `mac-rank`.
    #[arg(long)]
    report: Option<PathBuf>,

    /// Extractor checkpoint written by `extractor`.
    #[arg(long)]
    extractor: Option<PathBuf>,

    /// Directory of .ppm inputs for `twin-infer`.
    #[arg(long)]
    images: Option<PathBuf>,
}

fn config(cli: &Cli) -> maskrestore::Result<RunConfig> {
    let mut c = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(s) = cli.seed {
        c.run.seed = s;
    }
    if let Some(o) = &cli.out {
        c.run.out_dir = o.clone();
    }
    let p = &mut c.paths;
    for (slot, flag) in [
        (&mut p.data, &cli.data),
        (&mut p.checkpoint, &cli.checkpoint),
        (&mut p.report, &cli.report),
        (&mut p.extractor, &cli.extractor),
        (&mut p.images, &cli.images),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    c.validate()?;
    Ok(c)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = config(&cli).and_then(|c| run_command(cli.stage.into(), &c));
    match outcome {
        Ok(out) => {
            print!("{}", out.summary);
            println!("run directory {}", out.dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
