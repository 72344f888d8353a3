//! `reencoder`: train, run and evaluate latent-space audio processors.

mod commands;
mod presets;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use reencoder_core::error::Error;

#[derive(Parser, Debug)]
#[command(name = "reencoder", version, about = "Audio processing inside a frozen autoencoder's latent space")]
struct Cli {
    /// Log filter (`error`, `warn`, `info`, `debug`).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

/// Preset, config file and dotted overrides, applied in that order.
#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    #[arg(long)]
    pub preset: Option<String>,
    /// TOML file replacing the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `dotted.key=value` overrides.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Bwe,
    M2s,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ConditionArg {
    /// A standard-normal draw (seeded with `--seed` when given).
    Prior,
    /// A condition vector stored as JSON.
    File,
    /// A standard-normal draw that requires `--seed`.
    Seed,
    /// The posterior mean of a stereo reference (`--reference`).
    Reference,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the stand-in autoencoder.
    TrainVae {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// WAV clips to train on instead of the synthetic corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Waveform to latent file.
    Encode {
        #[arg(long)]
        vae: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Latent file to waveform.
    Decode {
        #[arg(long)]
        vae: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train a bandwidth-extension module.
    TrainBwe(TrainArgs),
    /// Train a mono-to-stereo module with its conditioning encoder.
    TrainM2s(TrainArgs),
    /// Run a trained module on a WAV or latent file.
    Infer {
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vae: PathBuf,
        /// WAV (encoded first) or RELT latent (used directly).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Also write the predicted latent.
        #[arg(long)]
        latent_out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "prior")]
        condition: ConditionArg,
        #[arg(long)]
        condition_file: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Store the condition that was used as JSON.
        #[arg(long)]
        save_condition: Option<PathBuf>,
    },
    /// Compare candidate WAVs against references with the same file names.
    Eval {
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "eval")]
        name: String,
        /// Band-split cutoff in Hz (default: a quarter of the sample rate).
        #[arg(long)]
        cutoff_hz: Option<f64>,
    },
    /// Analytic cost of a model preset per second of audio.
    Flops {
        /// `s`, `m` or `m2s`.
        #[arg(long, default_value = "s")]
        model: String,
        #[arg(long, default_value_t = 64)]
        latent_channels: usize,
        #[arg(long, default_value_t = 44100.0 / 1024.0)]
        frame_rate: f64,
        #[arg(long, default_value_t = 1.0)]
        seconds: f64,
    },
    /// Condition interpolation sweep of a mono-to-stereo checkpoint.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vae: PathBuf,
        /// Stereo WAV clips; without it a synthetic panned corpus is used.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        clips: usize,
        #[arg(long, default_value_t = 12)]
        corpus_seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
        lambdas: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Describe a checkpoint or latent file.
    Inspect { path: PathBuf },
    /// Run a scripted experiment end to end.
    RunExperiment {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Overrides the manifest's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Frozen autoencoder checkpoint (otherwise one is trained).
        #[arg(long)]
        vae: Option<PathBuf>,
    },
    /// Print a resolved configuration as TOML.
    ShowConfig {
        /// `vae`, `train` or `experiment`.
        kind: String,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Frozen autoencoder checkpoint.
    #[arg(long)]
    pub vae: PathBuf,
    /// WAV clips to train on instead of the configured corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a training checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

/// Exit code plus a one-line message.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub const CONFIG: u8 = 2;
    pub const ARTIFACT: u8 = 3;
    pub const DATA: u8 = 4;
    pub const INTERNAL: u8 = 1;

    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn config(key: &str, message: impl Into<String>) -> Self {
        Self::new(Self::CONFIG, format!("key={key} {}", message.into()))
    }

    fn kind(&self) -> &'static str {
        match self.code {
            Self::CONFIG => "config",
            Self::ARTIFACT => "artifact",
            Self::DATA => "data",
            _ => "internal",
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config { key, .. } => return CliError::config(key, e.to_string()),
            Error::Invalid { field, .. } => return CliError::config(field, e.to_string()),
            Error::Mismatch(_) | Error::Format { .. } | Error::Missing(_) => CliError::ARTIFACT,
            Error::EmptyInput(_)
            | Error::TooShort(_)
            | Error::SampleRate { .. }
            | Error::StreamCount(_)
            | Error::Dimension(_)
            | Error::Wav(_)
            | Error::Io { .. } => CliError::DATA,
            Error::NonFinite(_) | Error::NonFiniteLoss(_) | Error::Json(_) => CliError::INTERNAL,
        };
        CliError::new(code, e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::TrainVae { cfg, corpus, out } => commands::train_vae(&cfg, corpus.as_deref(), &out),
        Command::Encode { vae, input, output } => commands::encode(&vae, &input, &output),
        Command::Decode { vae, input, output } => commands::decode(&vae, &input, &output),
        Command::TrainBwe(a) => commands::train(TaskArg::Bwe, &a),
        Command::TrainM2s(a) => commands::train(TaskArg::M2s, &a),
        Command::Infer {
            task,
            checkpoint,
            vae,
            input,
            output,
            latent_out,
            condition,
            condition_file,
            reference,
            seed,
            save_condition,
        } => commands::infer(&commands::InferArgs {
            task,
            checkpoint,
            vae,
            input,
            output,
            latent_out,
            condition,
            condition_file,
            reference,
            seed,
            save_condition,
        }),
        Command::Eval {
            task,
            reference,
            candidate,
            out,
            name,
            cutoff_hz,
        } => commands::eval(task, &reference, &candidate, &out, &name, cutoff_hz),
        Command::Flops {
            model,
            latent_channels,
            frame_rate,
            seconds,
        } => commands::flops(&model, latent_channels, frame_rate, seconds),
        Command::Sweep {
            checkpoint,
            vae,
            corpus,
            clips,
            corpus_seed,
            lambdas,
            seed,
            out,
        } => commands::sweep(&checkpoint, &vae, corpus.as_deref(), clips, corpus_seed, &lambdas, seed, &out),
        Command::Inspect { path } => commands::inspect(&path),
        Command::RunExperiment { cfg, out, vae } => commands::run_experiment(&cfg, out, vae),
        Command::ShowConfig { kind, cfg } => commands::show_config(&kind, &cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}] code={}: {}", e.kind(), e.code, e.message.replace('\n', " "));
            ExitCode::from(e.code)
        }
    }
}
