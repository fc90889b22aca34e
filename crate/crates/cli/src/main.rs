mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

/// Search, train and analyze networks with max and coincidence neurons.
#[derive(Debug, Parser)]
#[command(name = "neuroforge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    Resnet,
    SpResnet,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Aging-evolution growth search.
    GrowSearch {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a residual network, then prune it neuron by neuron.
    PruneSearch {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one architecture and report accuracy and parameter count.
    Train {
        #[arg(long)]
        arch: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a residual network architecture file.
    Build {
        #[arg(long, value_enum)]
        preset: Preset,
        #[arg(long, default_value_t = 3)]
        nb: usize,
        #[arg(long, default_value_t = 48)]
        nf: usize,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        /// Example shape as C,H,W.
        #[arg(long, default_value = "3,32,32", value_parser = parse_shape)]
        input_shape: [usize; 3],
        #[arg(long)]
        out: PathBuf,
    },
    /// Height/width, op-mix and neural-mix tables from a search output directory.
    Analyze {
        #[arg(long)]
        history: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = neuroforge::analysis::DEFAULT_TOP_N)]
        top: usize,
    },
    /// Base filter count and training steps for a dataset size.
    Scale {
        #[arg(long)]
        n_ds: usize,
        #[arg(long)]
        c_ds: usize,
        /// Drop the channel ratio from the filter-count rule.
        #[arg(long)]
        no_channel_factor: bool,
    },
    /// Itemized parameter ledger of an architecture file.
    Params {
        #[arg(long)]
        arch: PathBuf,
    },
}

fn parse_shape(s: &str) -> Result<[usize; 3], String> {
    let dims: Vec<usize> = s
        .split(',')
        .map(|d| d.trim().parse::<usize>().map_err(|e| format!("`{d}`: {e}")))
        .collect::<Result<_, _>>()?;
    match dims.as_slice() {
        &[c, h, w] if c > 0 && h > 0 && w > 0 => Ok([c, h, w]),
        _ => Err(format!("expected three positive integers C,H,W, got `{s}`")),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code())
        }
    }
}
