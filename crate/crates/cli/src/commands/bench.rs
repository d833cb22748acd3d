use std::time::{Duration, Instant};

use crnn_core::decode::{best_path_decode, score_candidates, BkTree};
use crnn_core::train::predict;
use crnn_core::LabelSequence;

use super::{eval_samples, load_dataset, load_lexicon, load_model, same_alphabet};
use crate::config::RunConfig;
use crate::failure::{Failure, Outcome};
use crate::report::{real, Report};

pub const BENCH_HEADER: &[&str] = &[
    "delta",
    "samples",
    "accuracy",
    "mean_candidates",
    "in_lexicon_rate",
    "mean_search_ms",
];

pub const BENCH_DELTAS: std::ops::RangeInclusive<usize> = 0..=5;

/// Timed passes per δ; the median pass is reported.
pub const BENCH_REPETITIONS: usize = 5;

struct Outcomes {
    correct: usize,
    candidates: usize,
    found: usize,
}

/// Tree search plus scoring for every sample, as timed.
fn search_all(tree: &BkTree, ys: &[crnn_core::ctc::FrameDistributions], paths: &[LabelSequence], delta: usize, labels: &[&LabelSequence]) -> Outcome<Outcomes> {
    let mut out = Outcomes {
        correct: 0,
        candidates: 0,
        found: 0,
    };
    for ((y, path), label) in ys.iter().zip(paths).zip(labels) {
        let candidates = tree.query(path, delta);
        let chosen = if candidates.is_empty() {
            path.clone()
        } else {
            out.found += 1;
            out.candidates += candidates.len();
            score_candidates(y, candidates)?.sequence
        };
        out.correct += usize::from(chosen == **label);
    }
    Ok(out)
}

/// Sweeps δ over the BK-tree search of `--lexicon` on one split.
pub fn bench_delta(config: &RunConfig) -> Outcome {
    let (model, _) = load_model(config.require_checkpoint()?)?;
    let alphabet = model.config().alphabet.clone();
    let dataset = load_dataset(config.require_dataset()?)?;
    same_alphabet(&alphabet, &dataset.spec.alphabet, "the dataset")?;
    let lexicon = load_lexicon(config.require_lexicon()?, &alphabet)?;
    let samples = eval_samples(&dataset, config.split, None)?;
    if samples.is_empty() {
        return Err(Failure::usage(format!("the {} split is empty", config.split)));
    }
    let mut report = Report::open(config.report.as_deref(), BENCH_HEADER)?;

    let tree = BkTree::build(&lexicon)?;
    let images: Vec<_> = samples.iter().map(|s| &s.image).collect();
    let ys = predict(&model, &images, config.batch_size)?;
    let paths: Vec<LabelSequence> = ys.iter().map(best_path_decode).collect();
    let labels: Vec<&LabelSequence> = samples.iter().map(|s| &s.label).collect();
    let n = samples.len() as f64;
    for delta in BENCH_DELTAS {
        // the untimed first pass warms caches and yields the counts
        let result = search_all(&tree, &ys, &paths, delta, &labels)?;
        let mut passes: Vec<Duration> = (0..BENCH_REPETITIONS)
            .map(|_| {
                let start = Instant::now();
                search_all(&tree, &ys, &paths, delta, &labels).map(|_| start.elapsed())
            })
            .collect::<Outcome<_>>()?;
        passes.sort();
        let median = passes[BENCH_REPETITIONS / 2];
        report.row(&[
            delta.to_string(),
            samples.len().to_string(),
            real(result.correct as f64 / n),
            real(result.candidates as f64 / n),
            real(result.found as f64 / n),
            format!("{:.6}", median.as_secs_f64() * 1e3 / n),
        ])?;
        eprintln!(
            "delta {delta}: accuracy {:.4}, {:.1} candidates per sample",
            result.correct as f64 / n,
            result.candidates as f64 / n
        );
    }
    Ok(())
}
