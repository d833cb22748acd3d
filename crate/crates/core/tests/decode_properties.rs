mod common;

use common::rng;
use crnn_core::ctc::{sequence_probability, FrameDistributions};
use crnn_core::decode::{
    best_path_decode, edit_distance, exhaustive_decode, lexicon_decode, score_candidates, BkTree, Lexicon,
};
use crnn_core::LabelSequence;
use proptest::prelude::*;
use rand::Rng;

fn word(r: &mut impl Rng, symbols: u32, max_len: usize) -> LabelSequence {
    let len = r.gen_range(0..=max_len);
    LabelSequence::new((0..len).map(|_| r.gen_range(1..=symbols)).collect()).unwrap()
}

fn random_y(r: &mut impl Rng, frames: usize, classes: usize) -> FrameDistributions {
    let mut probs = Vec::with_capacity(frames * classes);
    for _ in 0..frames {
        let row: Vec<f64> = (0..classes).map(|_| r.gen_range(0.01..1.0f64).powi(3)).collect();
        let sum: f64 = row.iter().sum();
        probs.extend(row.iter().map(|v| v / sum));
    }
    FrameDistributions::new(frames, classes, probs).unwrap()
}

#[test]
fn edit_distance_is_a_metric() {
    let mut r = rng(1);
    for _ in 0..10_000 {
        let (a, b, c) = (word(&mut r, 4, 7), word(&mut r, 4, 7), word(&mut r, 4, 7));
        let (a, b, c) = (a.as_slice(), b.as_slice(), c.as_slice());
        assert_eq!(edit_distance(a, a), 0);
        assert_eq!(edit_distance(a, b) == 0, a == b);
        assert_eq!(edit_distance(a, b), edit_distance(b, a));
        assert!(edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c));
    }
}

proptest! {
    #[test]
    fn edit_distance_bounds(a in proptest::collection::vec(1u32..4, 0..10), b in proptest::collection::vec(1u32..4, 0..10)) {
        let d = edit_distance(&a, &b);
        prop_assert!(d >= a.len().abs_diff(b.len()));
        prop_assert!(d <= a.len().max(b.len()));
    }
}

#[test]
fn bk_tree_matches_linear_scan_and_never_prunes_a_match() {
    for seed in 0..10 {
        let mut r = rng(100 + seed);
        let lexicon = Lexicon::new((0..2000).map(|_| word(&mut r, 6, 8)));
        let tree = BkTree::build(&lexicon).unwrap();
        assert_eq!(tree.len(), lexicon.len());
        assert!(tree.check_invariants());
        for _ in 0..30 {
            let q = word(&mut r, 6, 8);
            for delta in 0..=5 {
                let (found, trace) = tree.query_traced(&q, delta);
                assert_eq!(found, lexicon.linear_query(&q, delta));
                let visited: std::collections::HashSet<usize> = trace.visited.iter().copied().collect();
                for node in 0..tree.len() {
                    if edit_distance(tree.entry(node).as_slice(), q.as_slice()) <= delta {
                        assert!(visited.contains(&node));
                    }
                }
            }
        }
    }
}

#[test]
fn singleton_and_wide_queries() {
    let mut r = rng(3);
    let single = Lexicon::new([word(&mut r, 3, 4)]);
    let tree = BkTree::build(&single).unwrap();
    assert_eq!(tree.len(), 1);
    let lexicon = Lexicon::new((0..300).map(|_| word(&mut r, 3, 5)));
    let tree = BkTree::build(&lexicon).unwrap();
    let q = word(&mut r, 3, 5);
    assert_eq!(tree.query(&q, 5 + q.len()).len(), lexicon.len());
    for w in lexicon.entries().iter().take(20) {
        assert_eq!(tree.query(w, 0), vec![w]);
    }
}

#[test]
fn lexicon_decode_equals_exhaustive_scoring_of_the_neighbourhood() {
    for seed in 0..500 {
        let mut r = rng(1000 + seed);
        let y = random_y(&mut r, 4, 3);
        let lexicon = Lexicon::new((0..3).map(|_| word(&mut r, 2, 3)));
        let tree = BkTree::build(&lexicon).unwrap();
        let out = lexicon_decode(&y, &tree, 2).unwrap();
        let l = best_path_decode(&y);
        let hood: Vec<&LabelSequence> = lexicon
            .entries()
            .iter()
            .filter(|w| edit_distance(w.as_slice(), l.as_slice()) <= 2)
            .collect();
        if hood.is_empty() {
            assert!(!out.in_lexicon());
            assert_eq!(out.sequence, l);
            continue;
        }
        let best = hood
            .iter()
            .map(|w| sequence_probability(w, &y).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(lexicon.contains(&out.sequence));
        assert!(edit_distance(out.sequence.as_slice(), l.as_slice()) <= 2);
        assert!((out.probability() - best).abs() < 1e-12);
    }
}

#[test]
fn chosen_probability_is_monotone_in_delta() {
    for seed in 0..100 {
        let mut r = rng(5000 + seed);
        let y = random_y(&mut r, 8, 4);
        let lexicon = Lexicon::new((0..200).map(|_| word(&mut r, 3, 5)));
        let tree = BkTree::build(&lexicon).unwrap();
        let (mut prev_p, mut prev_n) = (0.0, 0);
        for delta in 0..=6 {
            let out = lexicon_decode(&y, &tree, delta).unwrap();
            assert!(out.probability() >= prev_p);
            assert!(out.candidates >= prev_n);
            (prev_p, prev_n) = (out.probability(), out.candidates);
        }
        let all = exhaustive_decode(&y, &lexicon).unwrap();
        assert!(all.probability() >= prev_p);
    }
}

#[test]
fn superset_never_lowers_the_winner() {
    let mut r = rng(9);
    for _ in 0..200 {
        let y = random_y(&mut r, 5, 3);
        let words: Vec<LabelSequence> = (0..6).map(|_| word(&mut r, 2, 4)).collect();
        let small = score_candidates(&y, &words[..3]).unwrap();
        let large = score_candidates(&y, &words).unwrap();
        assert!(large.log_prob >= small.log_prob);
    }
}
