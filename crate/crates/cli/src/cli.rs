use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands;
use crate::config::RunConfig;
use crate::failure::{Failure, Outcome};

#[derive(Debug, Parser)]
#[command(name = "crnn", version, about = "Train and run a convolutional recurrent sequence recognizer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset (and optionally a lexicon).
    Gen,
    /// Train a model and keep the best-validation checkpoint.
    Train,
    /// Report sequence accuracy and edit distance on a split.
    Eval,
    /// Transcribe one image.
    Decode {
        /// Image file (PGM, PNG).
        image: PathBuf,
    },
    /// Sweep the lexicon search radius from 0 to 5.
    BenchDelta,
}

/// Settings accepted by every subcommand. Values given here override the
/// `--config` file, which overrides the defaults.
#[derive(Debug, Args)]
pub struct Flags {
    /// `key = value` file with any of the settings below
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<String>,
    #[arg(long, global = true, value_name = "DIR")]
    pub dataset: Option<String>,
    #[arg(long, global = true, value_name = "PATH")]
    pub checkpoint: Option<String>,
    /// standard | simplified | toy
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// digits | alnum | a literal symbol list
    #[arg(long, global = true)]
    pub alphabet: Option<String>,
    /// adadelta | momentum
    #[arg(long, global = true)]
    pub optimizer: Option<String>,
    /// ADADELTA decay
    #[arg(long, global = true)]
    pub rho: Option<String>,
    /// ADADELTA conditioning constant
    #[arg(long, global = true)]
    pub eps: Option<String>,
    /// momentum learning rate
    #[arg(long, global = true)]
    pub lr: Option<String>,
    /// momentum coefficient
    #[arg(long, global = true)]
    pub momentum: Option<String>,
    /// max gradient norm (off by default)
    #[arg(long, global = true)]
    pub clip: Option<String>,
    #[arg(long, global = true)]
    pub batch_size: Option<String>,
    #[arg(long, global = true)]
    pub epochs: Option<String>,
    #[arg(long, global = true)]
    pub max_steps: Option<String>,
    /// stop training after this many process CPU seconds
    #[arg(long, global = true, value_name = "SECONDS")]
    pub cpu_budget: Option<String>,
    /// also validate every this many steps
    #[arg(long, global = true, value_name = "STEPS")]
    pub validate_every: Option<String>,
    /// validate on at most this many samples
    #[arg(long, global = true)]
    pub val_limit: Option<String>,
    /// stop once validation accuracy reaches this fraction
    #[arg(long, global = true)]
    pub target_accuracy: Option<String>,
    /// stop once an epoch's training loss is at most this
    #[arg(long, global = true)]
    pub target_loss: Option<String>,
    /// width training images are scaled to
    #[arg(long, global = true)]
    pub train_width: Option<String>,
    /// lexicon file, one entry per line (written by gen)
    #[arg(long, global = true, value_name = "FILE")]
    pub lexicon: Option<String>,
    /// lexicon search radius
    #[arg(long, global = true)]
    pub delta: Option<String>,
    /// auto | tree | exhaustive
    #[arg(long, global = true)]
    pub search: Option<String>,
    /// train | val | test
    #[arg(long, global = true)]
    pub split: Option<String>,
    /// TSV output; standard output when absent
    #[arg(long, global = true, value_name = "FILE")]
    pub report: Option<String>,
    /// number of samples to generate
    #[arg(long, global = true)]
    pub n: Option<String>,
    #[arg(long, global = true)]
    pub min_len: Option<String>,
    #[arg(long, global = true)]
    pub max_len: Option<String>,
    #[arg(long, global = true)]
    pub noise_sigma: Option<String>,
    #[arg(long, global = true)]
    pub max_rotation_deg: Option<String>,
    #[arg(long, global = true)]
    pub scale_jitter: Option<String>,
    #[arg(long, global = true)]
    pub background_shift: Option<String>,
    /// entries in the lexicon written by gen
    #[arg(long, global = true)]
    pub lexicon_size: Option<String>,
}

impl Flags {
    /// Flags given on the command line, as config settings.
    pub fn overrides(&self) -> Vec<(&'static str, String)> {
        let all = [
            ("seed", &self.seed),
            ("dataset", &self.dataset),
            ("checkpoint", &self.checkpoint),
            ("preset", &self.preset),
            ("alphabet", &self.alphabet),
            ("optimizer", &self.optimizer),
            ("rho", &self.rho),
            ("eps", &self.eps),
            ("lr", &self.lr),
            ("momentum", &self.momentum),
            ("clip", &self.clip),
            ("batch_size", &self.batch_size),
            ("epochs", &self.epochs),
            ("max_steps", &self.max_steps),
            ("cpu_budget", &self.cpu_budget),
            ("validate_every", &self.validate_every),
            ("val_limit", &self.val_limit),
            ("target_accuracy", &self.target_accuracy),
            ("target_loss", &self.target_loss),
            ("train_width", &self.train_width),
            ("lexicon", &self.lexicon),
            ("delta", &self.delta),
            ("search", &self.search),
            ("split", &self.split),
            ("report", &self.report),
            ("n", &self.n),
            ("min_len", &self.min_len),
            ("max_len", &self.max_len),
            ("noise_sigma", &self.noise_sigma),
            ("max_rotation_deg", &self.max_rotation_deg),
            ("scale_jitter", &self.scale_jitter),
            ("background_shift", &self.background_shift),
            ("lexicon_size", &self.lexicon_size),
        ];
        all.into_iter()
            .filter_map(|(k, v)| v.clone().map(|v| (k, v)))
            .collect()
    }
}

/// Runs a parsed command line.
pub fn execute(cli: &Cli) -> Outcome {
    let config = RunConfig::resolve(cli.flags.config.as_deref(), &cli.flags.overrides())?;
    match &cli.command {
        Command::Gen => commands::gen(&config),
        Command::Train => commands::train(&config).map(|_| ()),
        Command::Eval => commands::eval(&config),
        Command::Decode { image } => commands::decode(&config, image),
        Command::BenchDelta => commands::bench_delta(&config),
    }
}

/// Parses `args` (program name first), runs the command, reports any
/// failure on standard error, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Failure::usage("").exit_code() } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("crnn: {e}");
            e.exit_code()
        }
    }
}
