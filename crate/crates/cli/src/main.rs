use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use fdmask_cli::commands::{
    cmd_augment, cmd_eval, cmd_finetune, cmd_prune, cmd_spectrum, cmd_train, gen_data,
};
use fdmask_cli::sweep::{cmd_sweep, Axis};
use fdmask_cli::{error_kind, error_line, fail, Context};

/// Train and evaluate synthetic-image detectors with transform-domain masking.
#[derive(Debug, Parser)]
#[command(name = "fdmask", version)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    GenData,
    /// Train a detector on the train split.
    Train,
    /// Score the test split.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Remove low-importance channels.
    Prune {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Overrides `prune.prune_ratio`.
        #[arg(long)]
        ratio: Option<f64>,
    },
    /// Fine-tune a pruned model and score it.
    Finetune {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Train and score every value of one axis.
    Sweep {
        #[arg(long)]
        axis: String,
        /// Comma-separated values; the axis defaults when absent.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<String>>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Averaged spectra of real and fake images.
    Spectrum {
        /// Analyse the images in this directory instead of the dataset.
        #[arg(long)]
        images: Option<PathBuf>,
    },
    /// Run the training pipeline on one image.
    Augment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    let path = cli
        .config
        .ok_or_else(|| fail("usage", "--config is required"))?;
    let mut ctx = Context::load(&path, cli.seed, cli.out)?;
    if let Command::Prune { ratio: Some(r), .. } = &cli.command {
        let mut config = ctx.config.clone();
        config.prune.prune_ratio = *r;
        config.prune.validate()?;
        ctx = Context::new(config, ctx.base, Some(ctx.out));
    }
    match cli.command {
        Command::GenData => {
            let data = gen_data(&ctx)?;
            println!("images\t{}", data.samples.len());
            println!("dir\t{}", ctx.dataset_dir().display());
        }
        Command::Train => {
            let (_, history) = cmd_train(&ctx)?;
            if let Some(loss) = history.epoch_loss.last() {
                println!("final_loss\t{loss:.6}");
            }
        }
        Command::Eval { model } => print!("{}", cmd_eval(&ctx, model.as_deref())?.to_tsv(None)?),
        Command::Prune { model, .. } => {
            let a = cmd_prune(&ctx, model.as_deref())?;
            println!("params\t{}\t{}", a.params_before, a.params_after);
            println!("macs\t{}\t{}", a.macs_before, a.macs_after);
        }
        Command::Finetune { model } => {
            print!("{}", cmd_finetune(&ctx, model.as_deref())?.to_tsv(None)?)
        }
        Command::Sweep { axis, values, jobs } => {
            let axis: Axis = axis.parse()?;
            let result = cmd_sweep(&ctx, axis, values, jobs)?;
            print!("{}", result.summary_tsv(&ctx.header()));
        }
        Command::Spectrum { images } => {
            for r in cmd_spectrum(&ctx, images.as_deref())? {
                println!("{}\t{}\t{}\t{}\t{:.4}", r.set, r.probe, r.u, r.v, r.ratio);
            }
        }
        Command::Augment { input, output } => {
            for line in cmd_augment(&ctx, &input, &output)? {
                println!("{line}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error\tusage\t{first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::from(if error_kind(&e) == "usage" { 2 } else { 1 })
        }
    }
}
