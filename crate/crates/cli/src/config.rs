//! Run settings: built-in defaults, overridden by a `key = value` config
//! file, overridden in turn by command-line flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crnn_core::decode::DEFAULT_DELTA;
use crnn_core::model::parse_pairs;
use crnn_core::optim::{OptimizerConfig, OptimizerKind};
use crnn_core::synth::{RenderParams, Split, DEFAULT_MAX_LEN, MIN_INPUT_WIDTH};
use crnn_core::train::DEFAULT_BATCH_SIZE;
use crnn_core::Alphabet;

use crate::failure::{Failure, Outcome};

/// How lexicon-constrained decoding searches the lexicon.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SearchMode {
    /// Exhaustive for small lexicons, BK-tree otherwise.
    Auto,
    Tree,
    Exhaustive,
}

impl FromStr for SearchMode {
    type Err = Failure;

    fn from_str(s: &str) -> Outcome<Self> {
        match s {
            "auto" => Ok(SearchMode::Auto),
            "tree" => Ok(SearchMode::Tree),
            "exhaustive" => Ok(SearchMode::Exhaustive),
            _ => Err(Failure::usage(format!("search: expected auto, tree or exhaustive, got {s:?}"))),
        }
    }
}

/// Every setting a command may consult. See [`KEYS`] for the file and
/// flag spelling of each field.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub preset: String,
    /// When unset, `gen` uses the alphanumeric set and the other commands
    /// take the alphabet from the dataset or checkpoint.
    pub alphabet: Option<Alphabet>,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_steps: Option<u64>,
    /// Process CPU seconds after which training stops.
    pub cpu_budget: Option<f64>,
    /// Validate every this many steps, besides the end of each epoch.
    pub validate_every: Option<u64>,
    /// Use at most this many validation samples.
    pub val_limit: Option<usize>,
    /// Stop once validation accuracy reaches this value.
    pub target_accuracy: Option<f64>,
    /// Stop once an epoch's mean training loss is at or below this value.
    pub target_loss: Option<f64>,
    pub train_width: usize,
    pub lexicon: Option<PathBuf>,
    pub delta: usize,
    pub search: SearchMode,
    pub split: Split,
    pub report: Option<PathBuf>,
    pub n: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub render: RenderParams,
    /// Entries written to `lexicon` by `gen`; 0 writes none.
    pub lexicon_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            dataset: None,
            checkpoint: None,
            preset: "standard".into(),
            alphabet: None,
            optimizer: OptimizerConfig::default(),
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: 10,
            max_steps: None,
            cpu_budget: None,
            validate_every: None,
            val_limit: None,
            target_accuracy: None,
            target_loss: None,
            train_width: MIN_INPUT_WIDTH,
            lexicon: None,
            delta: DEFAULT_DELTA,
            search: SearchMode::Auto,
            split: Split::Test,
            report: None,
            n: 1000,
            min_len: 1,
            max_len: DEFAULT_MAX_LEN,
            render: RenderParams::default(),
            lexicon_size: 0,
        }
    }
}

/// Recognized keys, in file spelling. Flags use the same names with `-`.
pub const KEYS: &[&str] = &[
    "seed",
    "dataset",
    "checkpoint",
    "preset",
    "alphabet",
    "optimizer",
    "rho",
    "eps",
    "lr",
    "momentum",
    "clip",
    "batch_size",
    "epochs",
    "max_steps",
    "cpu_budget",
    "validate_every",
    "val_limit",
    "target_accuracy",
    "target_loss",
    "train_width",
    "lexicon",
    "delta",
    "search",
    "split",
    "report",
    "n",
    "min_len",
    "max_len",
    "noise_sigma",
    "max_rotation_deg",
    "scale_jitter",
    "background_shift",
    "lexicon_size",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Outcome<T> {
    value
        .parse()
        .map_err(|_| Failure::usage(format!("{key}: cannot parse {value:?}")))
}

fn positive<T: FromStr + PartialOrd + Default>(key: &str, value: &str) -> Outcome<T> {
    let v: T = parse(key, value)?;
    if v > T::default() {
        Ok(v)
    } else {
        Err(Failure::usage(format!("{key}: must be positive, got {value}")))
    }
}

impl RunConfig {
    /// Applies one setting. Keys may use `-` or `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Outcome {
        let key = key.replace('-', "_");
        let k = key.as_str();
        let v = value.trim();
        match k {
            "seed" => self.seed = parse(k, v)?,
            "dataset" => self.dataset = Some(v.into()),
            "checkpoint" => self.checkpoint = Some(v.into()),
            "preset" => match v {
                "standard" | "simplified" | "toy" => self.preset = v.into(),
                _ => return Err(Failure::usage(format!("preset: expected standard or simplified, got {v:?}"))),
            },
            "alphabet" => self.alphabet = Some(Alphabet::parse(v)?),
            "optimizer" => self.optimizer.kind = v.parse::<OptimizerKind>()?,
            "rho" => self.optimizer.rho = parse(k, v)?,
            "eps" => self.optimizer.eps = parse(k, v)?,
            "lr" => self.optimizer.lr = parse(k, v)?,
            "momentum" => self.optimizer.momentum = parse(k, v)?,
            "clip" => self.optimizer.clip = Some(parse(k, v)?),
            "batch_size" => self.batch_size = positive(k, v)?,
            "epochs" => self.epochs = positive(k, v)?,
            "max_steps" => self.max_steps = Some(positive(k, v)?),
            "cpu_budget" => self.cpu_budget = Some(positive(k, v)?),
            "validate_every" => self.validate_every = Some(positive(k, v)?),
            "val_limit" => self.val_limit = Some(positive(k, v)?),
            "target_accuracy" => self.target_accuracy = Some(parse(k, v)?),
            "target_loss" => self.target_loss = Some(parse(k, v)?),
            "train_width" => self.train_width = positive(k, v)?,
            "lexicon" => self.lexicon = Some(v.into()),
            "delta" => self.delta = parse(k, v)?,
            "search" => self.search = v.parse()?,
            "split" => self.split = v.parse().map_err(|_| Failure::usage(format!("split: expected train, val or test, got {v:?}")))?,
            "report" => self.report = Some(v.into()),
            "n" => self.n = parse(k, v)?,
            "min_len" => self.min_len = parse(k, v)?,
            "max_len" => {
                self.max_len = parse(k, v)?;
                self.render.max_len = self.render.max_len.max(self.max_len);
            }
            "noise_sigma" => self.render.noise_sigma = parse(k, v)?,
            "max_rotation_deg" => self.render.max_rotation_deg = parse(k, v)?,
            "scale_jitter" => self.render.scale_jitter = parse(k, v)?,
            "background_shift" => self.render.background_shift = parse(k, v)?,
            "lexicon_size" => self.lexicon_size = parse(k, v)?,
            _ => return Err(Failure::usage(format!("unknown setting {key:?}"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of a config file.
    pub fn apply_file(&mut self, path: &Path) -> Outcome {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        let pairs = parse_pairs(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        for (k, v) in pairs {
            self.set(&k, &v)
                .map_err(|e| Failure::usage(format!("{}: {}", path.display(), strip_kind(&e))))?;
        }
        Ok(())
    }

    /// Defaults, then `file`, then `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(&str, String)]) -> Outcome<Self> {
        let mut config = RunConfig::default();
        if let Some(path) = file {
            config.apply_file(path)?;
        }
        for (k, v) in overrides {
            config.set(k, v)?;
        }
        config.optimizer.validate()?;
        if let Some(a) = config.target_accuracy {
            if !(0.0..=1.0).contains(&a) {
                return Err(Failure::usage("target_accuracy must lie in [0, 1]"));
            }
        }
        Ok(config)
    }

    pub fn require_dataset(&self) -> Outcome<&Path> {
        self.dataset.as_deref().ok_or_else(|| Failure::usage("--dataset is required"))
    }

    pub fn require_checkpoint(&self) -> Outcome<&Path> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| Failure::usage("--checkpoint is required"))
    }

    pub fn require_lexicon(&self) -> Outcome<&Path> {
        self.lexicon.as_deref().ok_or_else(|| Failure::usage("--lexicon is required"))
    }

    /// The effective settings as config-file text.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let mut line = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                let _ = writeln!(s, "{k} = {v}");
            }
        };
        let o = &self.optimizer;
        line("seed", Some(self.seed.to_string()));
        line("dataset", path(&self.dataset));
        line("checkpoint", path(&self.checkpoint));
        line("preset", Some(self.preset.clone()));
        line("alphabet", self.alphabet.as_ref().map(alphabet_text));
        line("optimizer", Some(o.kind.to_string()));
        line("rho", Some(o.rho.to_string()));
        line("eps", Some(o.eps.to_string()));
        line("lr", Some(o.lr.to_string()));
        line("momentum", Some(o.momentum.to_string()));
        line("clip", o.clip.map(|c| c.to_string()));
        line("batch_size", Some(self.batch_size.to_string()));
        line("epochs", Some(self.epochs.to_string()));
        line("max_steps", self.max_steps.map(|v| v.to_string()));
        line("cpu_budget", self.cpu_budget.map(|v| v.to_string()));
        line("validate_every", self.validate_every.map(|v| v.to_string()));
        line("val_limit", self.val_limit.map(|v| v.to_string()));
        line("target_accuracy", self.target_accuracy.map(|v| v.to_string()));
        line("target_loss", self.target_loss.map(|v| v.to_string()));
        line("train_width", Some(self.train_width.to_string()));
        line("lexicon", path(&self.lexicon));
        line("delta", Some(self.delta.to_string()));
        line("search", Some(format!("{:?}", self.search).to_lowercase()));
        line("split", Some(self.split.to_string()));
        line("report", path(&self.report));
        line("n", Some(self.n.to_string()));
        line("min_len", Some(self.min_len.to_string()));
        line("max_len", Some(self.max_len.to_string()));
        line("noise_sigma", Some(self.render.noise_sigma.to_string()));
        line("max_rotation_deg", Some(self.render.max_rotation_deg.to_string()));
        line("scale_jitter", Some(self.render.scale_jitter.to_string()));
        line("background_shift", Some(self.render.background_shift.to_string()));
        line("lexicon_size", Some(self.lexicon_size.to_string()));
        s
    }
}

/// Round-trippable text for an alphabet given by `--alphabet`.
fn alphabet_text(a: &Alphabet) -> String {
    if *a == Alphabet::digits() {
        "digits".into()
    } else if *a == Alphabet::alphanumeric() {
        "alnum".into()
    } else {
        a.symbols()
    }
}

fn strip_kind(f: &Failure) -> String {
    match f {
        Failure::Usage(m) | Failure::Data(m) | Failure::Checkpoint(m) | Failure::Internal(m) => m.clone(),
    }
}
