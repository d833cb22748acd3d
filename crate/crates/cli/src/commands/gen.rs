use std::collections::BTreeSet;
use std::fs;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crnn_core::decode::Lexicon;
use crnn_core::synth::{write_dataset, DatasetSpec, Split};
use crnn_core::synth::random_label;
use crnn_core::Alphabet;

use crate::config::RunConfig;
use crate::failure::{Failure, Outcome};
use crate::report::Report;

pub const GEN_HEADER: &[&str] = &["split", "samples"];

/// Stream of the generator that fills a lexicon beyond the dataset labels.
const LEXICON_STREAM: u64 = 0x1e71c0;

/// Renders a dataset into `--dataset`, optionally with a lexicon holding
/// every generated label plus random distractors up to `--lexicon-size`.
pub fn gen(config: &RunConfig) -> Outcome {
    let dir = config.require_dataset()?;
    let spec = DatasetSpec {
        n: config.n,
        alphabet: config.alphabet.clone().unwrap_or_else(Alphabet::alphanumeric),
        min_len: config.min_len,
        max_len: config.max_len,
        params: config.render.clone(),
        seed: config.seed,
    };
    spec.validate()?;
    if config.lexicon_size > 0 && config.lexicon.is_none() {
        return Err(Failure::usage("--lexicon-size needs --lexicon for the output path"));
    }
    let space: f64 = (spec.min_len..=spec.max_len)
        .map(|l| (spec.alphabet.len() as f64).powi(l as i32))
        .sum();
    if config.lexicon_size as f64 > space / 2.0 {
        return Err(Failure::usage(format!(
            "lexicon size {} exceeds half of the {space} possible labels",
            config.lexicon_size
        )));
    }
    let mut report = Report::open(config.report.as_deref(), GEN_HEADER)?;

    let plan = write_dataset(dir, &spec)?;
    for split in [Split::Train, Split::Validation, Split::Test] {
        let count = plan.iter().filter(|p| p.split == split).count();
        report.row(&[split.to_string(), count.to_string()])?;
    }
    eprintln!("wrote {} samples to {}", plan.len(), dir.display());

    if let Some(path) = &config.lexicon {
        let mut entries: BTreeSet<_> = plan.iter().map(|p| p.label.clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(LEXICON_STREAM);
        while entries.len() < config.lexicon_size {
            entries.insert(random_label(&spec.alphabet, spec.min_len, spec.max_len, &mut rng));
        }
        let lexicon = Lexicon::new(entries);
        let text: String = lexicon
            .entries()
            .iter()
            .map(|l| spec.alphabet.decode(l) + "\n")
            .collect();
        fs::write(path, text).map_err(|e| Failure::data(format!("lexicon {}: {e}", path.display())))?;
        eprintln!("wrote {} lexicon entries to {}", lexicon.len(), path.display());
    }
    Ok(())
}
