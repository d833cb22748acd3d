use crnn_core::decode::{edit_distance, LexiconSearch};
use crnn_core::train::{predict, score_predictions};

use super::{eval_samples, lexicon_search, load_dataset, load_lexicon, load_model, same_alphabet};
use crate::config::RunConfig;
use crate::failure::{Failure, Outcome};
use crate::report::{real, Report};

pub const EVAL_HEADER: &[&str] = &[
    "mode",
    "search",
    "delta",
    "samples",
    "accuracy",
    "mean_edit_distance",
    "candidate_hit_rate",
    "mean_candidates",
];

/// Sequence accuracy and edit distance on one split, lexicon-free and,
/// with `--lexicon`, lexicon-constrained.
pub fn eval(config: &RunConfig) -> Outcome {
    let (model, _) = load_model(config.require_checkpoint()?)?;
    let alphabet = model.config().alphabet.clone();
    let dataset = load_dataset(config.require_dataset()?)?;
    same_alphabet(&alphabet, &dataset.spec.alphabet, "the dataset")?;
    if let Some(a) = &config.alphabet {
        same_alphabet(&alphabet, a, "--alphabet")?;
    }
    let lexicon = match &config.lexicon {
        Some(path) => Some(load_lexicon(path, &alphabet)?),
        None => None,
    };
    let search = lexicon.as_ref().map(|l| lexicon_search(l, config)).transpose()?;
    let samples = eval_samples(&dataset, config.split, None)?;
    if samples.is_empty() {
        return Err(Failure::usage(format!("the {} split is empty", config.split)));
    }
    let mut report = Report::open(config.report.as_deref(), EVAL_HEADER)?;

    let images: Vec<_> = samples.iter().map(|s| &s.image).collect();
    let ys = predict(&model, &images, config.batch_size)?;
    let labels: Vec<_> = samples.iter().map(|s| &s.label).collect();
    let free = score_predictions(&labels, &ys)?;
    let n = samples.len() as f64;
    report.row(&[
        "lexicon-free".into(),
        "-".into(),
        "-".into(),
        samples.len().to_string(),
        real(free.accuracy()),
        real(free.mean_edit_distance()),
        "-".into(),
        "-".into(),
    ])?;
    eprintln!(
        "{} {} samples: lexicon-free accuracy {:.4}, mean edit distance {:.4}",
        config.split,
        samples.len(),
        free.accuracy(),
        free.mean_edit_distance()
    );

    if let (Some(search), Some(lexicon)) = (&search, &lexicon) {
        let (mut correct, mut distance, mut hits, mut candidates) = (0usize, 0usize, 0usize, 0usize);
        for ((s, y), best_path) in samples.iter().zip(&ys).zip(&free.predictions) {
            let out = search.decode(y)?;
            correct += usize::from(out.sequence == s.label);
            distance += edit_distance(out.sequence.as_slice(), s.label.as_slice());
            candidates += out.candidates;
            // whether the truth was among the scored candidates
            let reachable = match search {
                LexiconSearch::Exhaustive(_) => true,
                LexiconSearch::Tree { delta, .. } => edit_distance(best_path.as_slice(), s.label.as_slice()) <= *delta,
            };
            hits += usize::from(reachable && lexicon.contains(&s.label));
        }
        let (mode, delta) = match search {
            LexiconSearch::Exhaustive(_) => ("exhaustive", "-".to_string()),
            LexiconSearch::Tree { delta, .. } => ("tree", delta.to_string()),
        };
        report.row(&[
            "lexicon".into(),
            mode.into(),
            delta,
            samples.len().to_string(),
            real(correct as f64 / n),
            real(distance as f64 / n),
            real(hits as f64 / n),
            real(candidates as f64 / n),
        ])?;
        eprintln!(
            "lexicon ({}): accuracy {:.4}, candidate hit rate {:.4}",
            search.describe(),
            correct as f64 / n,
            hits as f64 / n
        );
    }
    Ok(())
}
