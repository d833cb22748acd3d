use std::path::Path;
use std::time::Instant;

use crnn_core::decode::best_path_decode;
use crnn_core::synth::read_gray;
use crnn_core::synth::normalize_input;

use super::{lexicon_search, load_lexicon, load_model, millis};
use crate::config::RunConfig;
use crate::failure::{Failure, Outcome};
use crate::report::{real, Report};

pub const DECODE_HEADER: &[&str] = &[
    "image",
    "best_path",
    "lexicon_result",
    "probability",
    "candidates",
    "forward_ms",
    "search_ms",
];

/// Transcribes one image; with `--lexicon`, also the lexicon-constrained
/// result. Lexicon columns hold `-` without a lexicon.
pub fn decode(config: &RunConfig, image: &Path) -> Outcome {
    let (model, _) = load_model(config.require_checkpoint()?)?;
    let alphabet = model.config().alphabet.clone();
    let search = match &config.lexicon {
        Some(path) => Some(lexicon_search(&load_lexicon(path, &alphabet)?, config)?),
        None => None,
    };
    let pixels = read_gray(image).map_err(|e| Failure::data(format!("cannot read image: {e}")))?;
    let mut report = Report::open(config.report.as_deref(), DECODE_HEADER)?;

    let start = Instant::now();
    let y = model.forward(&normalize_input(&pixels.to_tensor())?)?;
    let best = best_path_decode(&y);
    let forward = start.elapsed();
    let mut row = vec![
        image.display().to_string(),
        alphabet.decode(&best),
        "-".into(),
        "-".into(),
        "-".into(),
        millis(forward),
        "-".into(),
    ];
    if let Some(search) = &search {
        let start = Instant::now();
        let out = search.decode(&y)?;
        let elapsed = start.elapsed();
        row[2] = alphabet.decode(&out.sequence);
        row[3] = real(out.probability());
        row[4] = out.candidates.to_string();
        row[6] = millis(elapsed);
    }
    report.row(&row)
}
