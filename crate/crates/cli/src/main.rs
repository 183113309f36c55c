//! `svc`: extract features, train, convert, stream and evaluate.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[cfg(not(feature = "f64"))]
pub(crate) type Sample = f32;
#[cfg(feature = "f64")]
pub(crate) type Sample = f64;

#[derive(Debug, Parser)]
#[command(name = "svc", version, about = "Waveform-to-waveform singing voice conversion")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Flags win over the config file.
#[derive(Debug, Args)]
pub(crate) struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Treat recoverable mismatches as errors.
    #[arg(long, global = true)]
    pub strict: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write loudness, phonetic and F0 SVCF files for every WAV.
    Extract {
        /// Directory of WAVs or of per-speaker WAV subdirectories [default: paths.corpus].
        input: Option<PathBuf>,
        /// Feature tree root [default: features.dir].
        output: Option<PathBuf>,
    },
    /// Train on the configured corpus, writing checkpoints and a step log.
    Train {
        /// Resume from this checkpoint.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Stop after this many steps in this invocation.
        #[arg(long, value_name = "N")]
        steps: Option<u64>,
    },
    /// Convert one WAV file to the target speaker.
    Convert {
        /// Trained checkpoint (`.svck`).
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Target speaker; required for multi-speaker models.
        #[arg(long, value_name = "ID")]
        speaker: Option<String>,
        /// Source WAV.
        input: PathBuf,
        /// Converted WAV, 16-bit PCM at the configured rate.
        output: PathBuf,
    },
    /// Convert raw f32 little-endian mono from stdin to stdout.
    Stream {
        /// Trained checkpoint (`.svck`).
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Target speaker; required for multi-speaker models.
        #[arg(long, value_name = "ID")]
        speaker: Option<String>,
        /// Samples per read [default: stream.chunk].
        #[arg(long, value_name = "N")]
        chunk: Option<usize>,
    },
    /// VDE and FFE of every hypothesis WAV against the reference of the same name.
    Eval {
        /// Directory of reference WAVs, searched recursively.
        reference: PathBuf,
        /// Directory of converted WAVs under the same relative names.
        hypothesis: PathBuf,
        /// Also write the report as JSON.
        #[arg(long, value_name = "PATH")]
        report: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = commands::load_config(&cli.common)?;
    match cli.command {
        Command::Extract { input, output } => commands::extract(&cfg, input, output),
        Command::Train { checkpoint, steps } => commands::train(&cfg, checkpoint.as_deref(), steps),
        Command::Convert {
            checkpoint,
            speaker,
            input,
            output,
        } => commands::convert(&cfg, &checkpoint, speaker.as_deref(), &input, &output),
        Command::Stream {
            checkpoint,
            speaker,
            chunk,
        } => commands::stream(&cfg, &checkpoint, speaker.as_deref(), chunk),
        Command::Eval {
            reference,
            hypothesis,
            report,
        } => commands::eval(&cfg, &reference, &hypothesis, report.as_deref(), cli.common.strict),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code())
        }
    }
}
