//! One module per subcommand, plus the loading helpers they share.

mod bench;
mod decode;
mod eval;
mod gen;
mod train;

use std::path::Path;

use crnn_core::decode::{Lexicon, LexiconSearch};
use crnn_core::model::{read_checkpoint, Checkpoint};
use crnn_core::synth::{Dataset, Split};
use crnn_core::synth::normalize_input;
use crnn_core::train::TrainSample;
use crnn_core::{Alphabet, Model};

use crate::config::{RunConfig, SearchMode};
use crate::failure::{Failure, Outcome};

pub use bench::{bench_delta, BENCH_DELTAS, BENCH_HEADER, BENCH_REPETITIONS};
pub use decode::{decode, DECODE_HEADER};
pub use eval::{eval, EVAL_HEADER};
pub use gen::{gen, GEN_HEADER};
pub use train::{train, TrainSummary, TRAIN_HEADER};

pub(crate) fn load_dataset(dir: &Path) -> Outcome<Dataset> {
    if !dir.is_dir() {
        return Err(Failure::data(format!("dataset directory {} does not exist", dir.display())));
    }
    Ok(Dataset::load(dir)?)
}

/// Reads a checkpoint. A path that does not exist is a usage error; a file
/// that cannot be decoded is a checkpoint error.
pub(crate) fn load_model(path: &Path) -> Outcome<(Model, Checkpoint)> {
    if !path.is_file() {
        return Err(Failure::usage(format!("checkpoint {} does not exist", path.display())));
    }
    let ckpt = read_checkpoint(path).map_err(Failure::checkpoint)?;
    let model = Model::from_checkpoint(&ckpt).map_err(Failure::checkpoint)?;
    Ok((model, ckpt))
}

/// Refuses to combine artifacts built over different alphabets.
pub(crate) fn same_alphabet(expected: &Alphabet, found: &Alphabet, what: &str) -> Outcome {
    if expected == found {
        Ok(())
    } else {
        Err(Failure::usage(format!(
            "alphabet mismatch: model uses {:?}, {what} uses {:?}",
            expected.symbols(),
            found.symbols()
        )))
    }
}

/// Aspect-preserving normalized samples of one split, in manifest order.
pub(crate) fn eval_samples(dataset: &Dataset, split: Split, limit: Option<usize>) -> Outcome<Vec<TrainSample>> {
    dataset
        .split(split)
        .take(limit.unwrap_or(usize::MAX))
        .map(|s| {
            Ok(TrainSample {
                image: normalize_input(&s.image.to_tensor())?,
                label: s.label.clone(),
            })
        })
        .collect()
}

pub(crate) fn load_lexicon(path: &Path, alphabet: &Alphabet) -> Outcome<Lexicon> {
    if !path.is_file() {
        return Err(Failure::usage(format!("lexicon {} does not exist", path.display())));
    }
    let lexicon = Lexicon::load(path, alphabet)?;
    if lexicon.is_empty() {
        return Err(Failure::usage(format!("lexicon {} is empty", path.display())));
    }
    Ok(lexicon)
}

pub(crate) fn lexicon_search(lexicon: &Lexicon, config: &RunConfig) -> Outcome<LexiconSearch> {
    Ok(match config.search {
        SearchMode::Auto => LexiconSearch::auto(lexicon.clone(), config.delta)?,
        SearchMode::Tree => LexiconSearch::tree(lexicon, config.delta)?,
        SearchMode::Exhaustive => LexiconSearch::Exhaustive(lexicon.clone()),
    })
}

/// Milliseconds with microsecond resolution.
pub(crate) fn millis(d: std::time::Duration) -> String {
    format!("{:.3}", d.as_secs_f64() * 1e3)
}
