//! Transcription: lexicon-free best path, and lexicon-constrained search
//! over edit-distance neighbourhoods indexed by a BK-tree.

use std::path::Path;

use crate::alphabet::{Alphabet, LabelSequence};
use crate::ctc::{collapse, log_sequence_probability, FrameDistributions};
use crate::error::{Error, Result};

/// Default search radius for lexicon decoding.
pub const DEFAULT_DELTA: usize = 3;

/// Lexicons up to this size are scored exhaustively by [`LexiconSearch::auto`].
pub const EXHAUSTIVE_LIMIT: usize = 1000;

/// Per-frame argmax, ties going to the lowest class index.
pub fn best_path(y: &FrameDistributions) -> Vec<u32> {
    (0..y.frames())
        .map(|t| {
            let row = y.row(t);
            let mut best = 0;
            for (c, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = c;
                }
            }
            best as u32
        })
        .collect()
}

/// Lexicon-free transcription: the collapsed best path.
pub fn best_path_decode(y: &FrameDistributions) -> LabelSequence {
    collapse(&best_path(y), y.classes()).expect("argmax stays within the classes")
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let next = (diag + usize::from(x != y)).min(row[j] + 1).min(row[j + 1] + 1);
            diag = row[j + 1];
            row[j + 1] = next;
        }
    }
    row[b.len()]
}

/// A deduplicated set of label sequences, kept in canonical (sorted) order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: Vec<LabelSequence>,
}

impl Lexicon {
    pub fn new(entries: impl IntoIterator<Item = LabelSequence>) -> Self {
        let mut entries: Vec<_> = entries.into_iter().collect();
        entries.sort();
        entries.dedup();
        Lexicon { entries }
    }

    /// One entry per non-empty line; every symbol must belong to `alphabet`.
    pub fn parse(text: &str, alphabet: &Alphabet) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let word = line.trim();
            if word.is_empty() {
                continue;
            }
            let labels = alphabet
                .encode(word)
                .map_err(|e| Error::Alphabet(format!("lexicon line {}: {e}", i + 1)))?;
            entries.push(labels);
        }
        Ok(Self::new(entries))
    }

    pub fn load(path: &Path, alphabet: &Alphabet) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::storage(path, e))?;
        Self::parse(&text, alphabet)
    }

    pub fn entries(&self) -> &[LabelSequence] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, l: &LabelSequence) -> bool {
        self.entries.binary_search(l).is_ok()
    }

    /// Every entry within `delta` of `q`, by exhaustive comparison.
    pub fn linear_query(&self, q: &LabelSequence, delta: usize) -> Vec<&LabelSequence> {
        self.entries
            .iter()
            .filter(|w| edit_distance(w.as_slice(), q.as_slice()) <= delta)
            .collect()
    }
}

#[derive(Clone, Debug)]
struct BkNode {
    entry: LabelSequence,
    /// `(distance to this node, child index)`, sorted by distance.
    children: Vec<(usize, usize)>,
}

/// Metric tree over edit distance.
#[derive(Clone, Debug)]
pub struct BkTree {
    nodes: Vec<BkNode>,
}

/// What a query touched, for checking that pruning is sound.
#[derive(Clone, Debug, Default)]
pub struct QueryTrace {
    /// Nodes whose distance to the query was computed, in visit order.
    pub visited: Vec<usize>,
}

impl BkTree {
    /// Inserts the lexicon in canonical order; the first entry is the root.
    pub fn build(lexicon: &Lexicon) -> Result<Self> {
        let mut entries = lexicon.entries.iter();
        let root = entries
            .next()
            .ok_or_else(|| Error::usage("cannot build a BK-tree over an empty lexicon"))?;
        let mut nodes = vec![BkNode {
            entry: root.clone(),
            children: Vec::new(),
        }];
        for entry in entries {
            let mut at = 0;
            loop {
                let d = edit_distance(entry.as_slice(), nodes[at].entry.as_slice());
                debug_assert!(d > 0, "lexicon entries are distinct");
                match nodes[at].children.binary_search_by_key(&d, |&(k, _)| k) {
                    Ok(i) => at = nodes[at].children[i].1,
                    Err(i) => {
                        let child = nodes.len();
                        nodes[at].children.insert(i, (d, child));
                        nodes.push(BkNode {
                            entry: entry.clone(),
                            children: Vec::new(),
                        });
                        break;
                    }
                }
            }
        }
        Ok(BkTree { nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn entry(&self, node: usize) -> &LabelSequence {
        &self.nodes[node].entry
    }

    /// Checks that every child key equals its distance to the parent.
    pub fn check_invariants(&self) -> bool {
        self.nodes.iter().all(|n| {
            n.children
                .iter()
                .all(|&(d, c)| edit_distance(n.entry.as_slice(), self.nodes[c].entry.as_slice()) == d)
        })
    }

    /// All entries within `delta` of `q`, in canonical order.
    pub fn query(&self, q: &LabelSequence, delta: usize) -> Vec<&LabelSequence> {
        self.query_traced(q, delta).0
    }

    pub fn query_traced(&self, q: &LabelSequence, delta: usize) -> (Vec<&LabelSequence>, QueryTrace) {
        let mut found = Vec::new();
        let mut trace = QueryTrace::default();
        let mut stack = vec![0];
        while let Some(at) = stack.pop() {
            trace.visited.push(at);
            let node = &self.nodes[at];
            let d = edit_distance(q.as_slice(), node.entry.as_slice());
            if d <= delta {
                found.push(&node.entry);
            }
            // Triangle inequality: a child at key k can only hold matches
            // when |k - d| <= delta.
            let lo = d.saturating_sub(delta);
            let start = node.children.partition_point(|&(k, _)| k < lo);
            for &(k, child) in &node.children[start..] {
                if k > d + delta {
                    break;
                }
                stack.push(child);
            }
        }
        found.sort();
        (found, trace)
    }
}

/// The winning candidate and its natural-log probability.
#[derive(Clone, Debug, PartialEq)]
pub struct Scored {
    pub sequence: LabelSequence,
    pub log_prob: f64,
}

impl Scored {
    pub fn probability(&self) -> f64 {
        self.log_prob.exp()
    }
}

/// The candidate with the highest sequence probability; ties go to the
/// earliest in canonical order.
pub fn score_candidates<'a>(
    y: &FrameDistributions,
    candidates: impl IntoIterator<Item = &'a LabelSequence>,
) -> Result<Scored> {
    let mut candidates: Vec<&LabelSequence> = candidates.into_iter().collect();
    candidates.sort();
    candidates.dedup();
    let mut best: Option<Scored> = None;
    for l in candidates {
        let lp = log_sequence_probability(l, y)?;
        if best.as_ref().is_none_or(|b| lp > b.log_prob) {
            best = Some(Scored {
                sequence: l.clone(),
                log_prob: lp,
            });
        }
    }
    best.ok_or_else(|| Error::usage("no candidates to score"))
}

/// Outcome of a lexicon-constrained transcription.
#[derive(Clone, Debug, PartialEq)]
pub struct LexiconDecode {
    /// Lexicon-free transcription the search was centred on.
    pub best_path: LabelSequence,
    /// Chosen transcription; equals `best_path` when nothing was found.
    pub sequence: LabelSequence,
    /// Log probability of the chosen entry, `None` on fallback.
    pub log_prob: Option<f64>,
    pub candidates: usize,
}

impl LexiconDecode {
    pub fn in_lexicon(&self) -> bool {
        self.candidates > 0
    }

    /// Probability of the chosen entry, 0 on fallback.
    pub fn probability(&self) -> f64 {
        self.log_prob.map_or(0.0, f64::exp)
    }
}

fn finish(y: &FrameDistributions, best_path: LabelSequence, candidates: &[&LabelSequence]) -> Result<LexiconDecode> {
    if candidates.is_empty() {
        return Ok(LexiconDecode {
            sequence: best_path.clone(),
            best_path,
            log_prob: None,
            candidates: 0,
        });
    }
    let scored = score_candidates(y, candidates.iter().copied())?;
    Ok(LexiconDecode {
        best_path,
        sequence: scored.sequence,
        log_prob: Some(scored.log_prob),
        candidates: candidates.len(),
    })
}

/// Best-scoring entry within `delta` of the lexicon-free transcription,
/// falling back to that transcription when the neighbourhood is empty.
pub fn lexicon_decode(y: &FrameDistributions, tree: &BkTree, delta: usize) -> Result<LexiconDecode> {
    let l = best_path_decode(y);
    let candidates = tree.query(&l, delta);
    finish(y, l, &candidates)
}

/// Best-scoring entry of the whole lexicon.
pub fn exhaustive_decode(y: &FrameDistributions, lexicon: &Lexicon) -> Result<LexiconDecode> {
    let candidates: Vec<&LabelSequence> = lexicon.entries.iter().collect();
    finish(y, best_path_decode(y), &candidates)
}

/// How a lexicon is searched during decoding.
#[derive(Clone, Debug)]
pub enum LexiconSearch {
    /// Score every entry (small lexicons).
    Exhaustive(Lexicon),
    /// Score the BK-tree neighbourhood of the best path.
    Tree { tree: BkTree, delta: usize },
}

impl LexiconSearch {
    /// Exhaustive scoring up to [`EXHAUSTIVE_LIMIT`] entries, BK-tree search beyond.
    pub fn auto(lexicon: Lexicon, delta: usize) -> Result<Self> {
        if lexicon.len() <= EXHAUSTIVE_LIMIT {
            if lexicon.is_empty() {
                return Err(Error::usage("empty lexicon"));
            }
            Ok(LexiconSearch::Exhaustive(lexicon))
        } else {
            Self::tree(&lexicon, delta)
        }
    }

    pub fn tree(lexicon: &Lexicon, delta: usize) -> Result<Self> {
        Ok(LexiconSearch::Tree {
            tree: BkTree::build(lexicon)?,
            delta,
        })
    }

    pub fn decode(&self, y: &FrameDistributions) -> Result<LexiconDecode> {
        match self {
            LexiconSearch::Exhaustive(lexicon) => exhaustive_decode(y, lexicon),
            LexiconSearch::Tree { tree, delta } => lexicon_decode(y, tree, *delta),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            LexiconSearch::Exhaustive(l) => format!("exhaustive over {} entries", l.len()),
            LexiconSearch::Tree { tree, delta } => format!("bk-tree over {} entries, delta {delta}", tree.len()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(v: &[u32]) -> LabelSequence {
        LabelSequence::new(v.to_vec()).unwrap()
    }

    fn one_hot(path: &[u32], classes: usize) -> FrameDistributions {
        let mut probs = vec![0.0; path.len() * classes];
        for (t, &c) in path.iter().enumerate() {
            probs[t * classes + c as usize] = 1.0;
        }
        FrameDistributions::new(path.len(), classes, probs).unwrap()
    }

    #[test]
    fn best_path_collapses_argmax() {
        assert_eq!(best_path_decode(&one_hot(&[0, 1, 1, 0, 2], 3)), seq(&[1, 2]));
        assert_eq!(best_path_decode(&one_hot(&[0, 0, 0], 3)), LabelSequence::empty());
        let a = Alphabet::alphanumeric();
        let path = a.parse_path("hhe-l-lo").unwrap();
        let y = one_hot(&path, a.num_classes());
        assert_eq!(a.decode(&best_path_decode(&y)), "hello");
    }

    #[test]
    fn argmax_ties_go_to_lowest_class() {
        let y = FrameDistributions::new(1, 3, vec![0.2, 0.4, 0.4]).unwrap();
        assert_eq!(best_path(&y), vec![1]);
    }

    #[test]
    fn edit_distance_examples() {
        assert_eq!(edit_distance(b"same", b"same"), 0);
        assert_eq!(edit_distance(b"", b"abc"), 3);
        assert_eq!(edit_distance(b"kitten", b"sitting"), 3);
        assert_eq!(edit_distance(b"sitting", b"kitten"), 3);
    }

    #[test]
    fn small_lexicon_query() {
        let a = Alphabet::new("ehlops", false).unwrap();
        let lex = Lexicon::parse("hell\nhello\nhelp\nshell\nhell\n", &a).unwrap();
        assert_eq!(lex.len(), 4);
        let tree = BkTree::build(&lex).unwrap();
        assert!(tree.check_invariants());
        let q = a.encode("hell").unwrap();
        assert_eq!(tree.query(&q, 1).len(), 4);
        assert_eq!(tree.query(&q, 0), vec![&q]);
        assert_eq!(tree.query(&q, 20).len(), 4);
    }

    #[test]
    fn empty_inputs_are_usage_errors() {
        assert!(matches!(BkTree::build(&Lexicon::default()), Err(Error::Usage(_))));
        let y = one_hot(&[0], 2);
        assert!(matches!(score_candidates(&y, []), Err(Error::Usage(_))));
    }

    #[test]
    fn scoring_on_uniform_two_frames() {
        let y = FrameDistributions::new(2, 2, vec![0.5; 4]).unwrap();
        let (a, e) = (seq(&[1]), LabelSequence::empty());
        let s = score_candidates(&y, [&e, &a]).unwrap();
        assert_eq!(s.sequence, a);
        assert!((s.probability() - 0.75).abs() < 1e-12);
        let s = score_candidates(&y, [&e]).unwrap();
        assert!((s.probability() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn fallback_keeps_best_path() {
        let y = one_hot(&[1, 0, 2], 3);
        let tree = BkTree::build(&Lexicon::new([seq(&[2, 2, 2, 2, 2])])).unwrap();
        let out = lexicon_decode(&y, &tree, 1).unwrap();
        assert!(!out.in_lexicon());
        assert_eq!(out.sequence, seq(&[1, 2]));
        assert_eq!(out.probability(), 0.0);
    }
}
