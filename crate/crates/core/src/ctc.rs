//! Connectionist temporal classification: the collapse mapping, path and
//! label-sequence probabilities, and the negative log-likelihood loss with
//! its gradient.
//!
//! Probabilities of a label sequence `l` are computed by the forward-backward
//! dynamic program over the blank-interleaved sequence `(-, l1, -, l2, ..., -)`
//! of length `S = 2|l| + 1`, entirely in log space.
//!
//! * `alpha[t][s]` is the log-probability of emitting frames `0..=t` and
//!   being at position `s` after frame `t`.
//! * `beta[t][s]` is the log-probability of emitting frames `t+1..T` and
//!   finishing the sequence, given position `s` after frame `t`. It does not
//!   include frame `t` itself, so `Σ_s exp(alpha[t][s] + beta[t][s]) = p(l|y)`
//!   for every `t`.

use crate::alphabet::{LabelSequence, BLANK};
use crate::autodiff::{GradSink, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row sums of [`FrameDistributions`] must be within this of 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Largest path count [`brute_force_sequence_probability`] will enumerate.
pub const BRUTE_FORCE_BUDGET: usize = 10_000_000;

/// `T` per-frame probability distributions over the `K = |L′|` classes.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameDistributions {
    frames: usize,
    classes: usize,
    probs: Vec<f64>,
}

impl FrameDistributions {
    pub fn new(frames: usize, classes: usize, probs: Vec<f64>) -> Result<Self> {
        if classes < 2 || probs.len() != frames * classes {
            return Err(Error::dim(format!(
                "{} probabilities for {frames} frames of {classes} classes",
                probs.len()
            )));
        }
        for (t, row) in probs.chunks(classes).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::usage(format!("frame {t} is not a probability distribution")));
            }
        }
        Ok(FrameDistributions {
            frames,
            classes,
            probs,
        })
    }

    /// Softmax of each row of a `T×K` activation matrix.
    pub fn from_logits(logits: &Tensor) -> Result<Self> {
        let [frames, classes] = *logits.shape() else {
            return Err(Error::dim("logits must be a T×K matrix"));
        };
        let mut probs = logits.data().to_vec();
        probs
            .chunks_mut(classes)
            .for_each(crate::autodiff::softmax_in_place);
        Ok(FrameDistributions {
            frames,
            classes,
            probs,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.probs[t * self.classes..(t + 1) * self.classes]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn log_probs(&self) -> Vec<f64> {
        self.probs.iter().map(|p| p.ln()).collect()
    }
}

/// The mapping B: merge adjacent repeats, then drop blanks.
pub fn collapse(path: &[u32], classes: usize) -> Result<LabelSequence> {
    if let Some(bad) = path.iter().find(|&&c| c as usize >= classes) {
        return Err(Error::Alphabet(format!("class {bad} outside {classes} classes")));
    }
    let mut out = Vec::new();
    let mut prev = None;
    for &c in path {
        if Some(c) != prev && c != BLANK {
            out.push(c);
        }
        prev = Some(c);
    }
    LabelSequence::new(out)
}

/// `Π_t y[t][path[t]]`.
pub fn path_probability(path: &[u32], y: &FrameDistributions) -> Result<f64> {
    if path.len() != y.frames {
        return Err(Error::usage(format!(
            "path of length {} for {} frames",
            path.len(),
            y.frames
        )));
    }
    path.iter()
        .enumerate()
        .map(|(t, &c)| {
            y.row(t)
                .get(c as usize)
                .copied()
                .ok_or_else(|| Error::Alphabet(format!("class {c} outside {} classes", y.classes)))
        })
        .product()
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Forward and backward log-variables of one (label, frames) pair.
#[derive(Clone, Debug)]
pub struct Lattice {
    /// Blank-interleaved label sequence.
    pub extended: Vec<u32>,
    /// `T×S`, row-major.
    pub log_alpha: Vec<f64>,
    /// `T×S`, row-major.
    pub log_beta: Vec<f64>,
    pub log_prob: f64,
}

impl Lattice {
    pub fn states(&self) -> usize {
        self.extended.len()
    }
}

fn check_labels(l: &LabelSequence, classes: usize) -> Result<()> {
    match l.as_slice().iter().find(|&&c| c == BLANK || c as usize >= classes) {
        Some(c) => Err(Error::Alphabet(format!("label class {c} outside {classes} classes"))),
        None => Ok(()),
    }
}

/// Runs forward-backward given a `T×K` matrix of log-probabilities.
fn lattice(l: &[u32], log_y: &[f64], frames: usize, classes: usize) -> Lattice {
    let mut extended = Vec::with_capacity(2 * l.len() + 1);
    extended.push(BLANK);
    for &c in l {
        extended.push(c);
        extended.push(BLANK);
    }
    let s_len = extended.len();
    let ninf = f64::NEG_INFINITY;
    // Skip from s-2 to s is allowed onto a label that differs from the one two back.
    let can_skip: Vec<bool> = (0..s_len)
        .map(|s| s >= 2 && extended[s] != BLANK && extended[s] != extended[s - 2])
        .collect();
    let ly = |t: usize, s: usize| log_y[t * classes + extended[s] as usize];

    let mut alpha = vec![ninf; frames * s_len];
    let mut beta = vec![ninf; frames * s_len];
    if frames == 0 {
        let log_prob = if l.is_empty() { 0.0 } else { ninf };
        return Lattice {
            extended,
            log_alpha: alpha,
            log_beta: beta,
            log_prob,
        };
    }
    alpha[0] = ly(0, 0);
    if s_len > 1 {
        alpha[1] = ly(0, 1);
    }
    for t in 1..frames {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        for s in 0..s_len {
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if can_skip[s] {
                acc = log_add(acc, prev[s - 2]);
            }
            cur[s] = if acc == ninf { ninf } else { acc + ly(t, s) };
        }
    }

    let last = (frames - 1) * s_len;
    beta[last + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[last + s_len - 2] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * s_len);
        let cur = &mut cur[t * s_len..];
        for s in 0..s_len {
            let mut acc = next[s] + ly(t + 1, s);
            if s + 1 < s_len {
                acc = log_add(acc, next[s + 1] + ly(t + 1, s + 1));
            }
            if s + 2 < s_len && can_skip[s + 2] {
                acc = log_add(acc, next[s + 2] + ly(t + 1, s + 2));
            }
            cur[s] = acc;
        }
    }

    let end = &alpha[last..];
    let log_prob = if s_len > 1 {
        log_add(end[s_len - 1], end[s_len - 2])
    } else {
        end[0]
    };
    Lattice {
        extended,
        log_alpha: alpha,
        log_beta: beta,
        log_prob,
    }
}

/// Forward-backward variables of `l` under `y`.
pub fn forward_backward(l: &LabelSequence, y: &FrameDistributions) -> Result<Lattice> {
    check_labels(l, y.classes)?;
    Ok(lattice(l.as_slice(), &y.log_probs(), y.frames, y.classes))
}

/// `ln p(l|y)`; `-inf` when no alignment exists.
pub fn log_sequence_probability(l: &LabelSequence, y: &FrameDistributions) -> Result<f64> {
    Ok(forward_backward(l, y)?.log_prob)
}

/// `p(l|y)`: the total probability of all paths that collapse onto `l`.
pub fn sequence_probability(l: &LabelSequence, y: &FrameDistributions) -> Result<f64> {
    Ok(log_sequence_probability(l, y)?.exp())
}

/// `-ln p(l|y)`.
pub fn ctc_loss(l: &LabelSequence, y: &FrameDistributions) -> Result<f64> {
    let lp = log_sequence_probability(l, y)?;
    if lp == f64::NEG_INFINITY {
        return Err(Error::InfeasibleTarget {
            label: l.as_slice().to_vec(),
            frames: y.frames,
        });
    }
    Ok(-lp)
}

/// Loss and its gradient with respect to the pre-softmax activations given
/// `T×K` log-probabilities.
fn loss_and_grad_from_log(
    l: &[u32],
    log_y: &[f64],
    frames: usize,
    classes: usize,
) -> Option<(f64, Vec<f64>)> {
    let lat = lattice(l, log_y, frames, classes);
    if lat.log_prob == f64::NEG_INFINITY {
        return None;
    }
    let s_len = lat.states();
    // dL/du[t][k] = y[t][k] - Σ_{s: ext[s]=k} exp(alpha + beta - ln p)
    let mut grad: Vec<f64> = log_y.iter().map(|v| v.exp()).collect();
    for t in 0..frames {
        let row = &mut grad[t * classes..(t + 1) * classes];
        for s in 0..s_len {
            let la = lat.log_alpha[t * s_len + s] + lat.log_beta[t * s_len + s];
            if la > f64::NEG_INFINITY {
                row[lat.extended[s] as usize] -= (la - lat.log_prob).exp();
            }
        }
    }
    Some((-lat.log_prob, grad))
}

/// Loss and gradient with respect to the activations `u` with
/// `y = softmax(u)` row-wise. The gradient is `T×K`, row-major.
pub fn ctc_loss_grad(l: &LabelSequence, y: &FrameDistributions) -> Result<(f64, Vec<f64>)> {
    check_labels(l, y.classes)?;
    loss_and_grad_from_log(l.as_slice(), &y.log_probs(), y.frames, y.classes).ok_or_else(|| {
        Error::InfeasibleTarget {
            label: l.as_slice().to_vec(),
            frames: y.frames,
        }
    })
}

/// Sums `p(path|y)` over every path that collapses to `l`. Exponential in
/// `T`; meant as a test oracle for small instances.
pub fn brute_force_sequence_probability(l: &LabelSequence, y: &FrameDistributions) -> Result<f64> {
    check_labels(l, y.classes)?;
    let k = y.classes;
    let total = (0..y.frames).try_fold(1usize, |acc, _| acc.checked_mul(k));
    match total {
        Some(n) if n <= BRUTE_FORCE_BUDGET => {}
        _ => {
            return Err(Error::usage(format!(
                "{k}^{} paths exceed the enumeration budget",
                y.frames
            )))
        }
    }
    let mut path = vec![0u32; y.frames];
    let mut sum = 0.0;
    loop {
        if collapse(&path, k)? == *l {
            sum += path_probability(&path, y)?;
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == path.len() {
                return Ok(sum);
            }
            path[i] += 1;
            if (path[i] as usize) < k {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

/// Mean CTC loss over a batch, recorded on the autodiff graph.
pub struct BatchLoss<'g> {
    /// Scalar mean loss over the feasible samples, if there are any.
    pub loss: Option<Var<'g>>,
    /// Per-sample loss, `None` for skipped samples.
    pub per_sample: Vec<Option<f64>>,
    /// Indices of samples whose targets cannot be aligned to the frames.
    pub skipped: Vec<usize>,
}

/// CTC loss of a `[T·N, K]` activation matrix whose rows `t·N + n` hold
/// frame `t` of sample `n`. Samples with infeasible targets are skipped.
pub fn ctc_loss_batch<'g>(logits: Var<'g>, targets: &[LabelSequence]) -> Result<BatchLoss<'g>> {
    let batch = targets.len();
    let [rows, classes] = *logits.value().shape() else {
        return Err(Error::dim("ctc: logits must be a matrix"));
    };
    if batch == 0 || rows % batch != 0 {
        return Err(Error::dim(format!("ctc: {rows} rows for a batch of {batch}")));
    }
    let frames = rows / batch;
    for l in targets {
        check_labels(l, classes)?;
    }
    let mut log_y = logits.value().data().to_vec();
    for row in log_y.chunks_mut(classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    let mut grad = vec![0.0; rows * classes];
    let mut per_sample = Vec::with_capacity(batch);
    let mut skipped = Vec::new();
    let mut sample = vec![0.0; frames * classes];
    for (n, l) in targets.iter().enumerate() {
        for t in 0..frames {
            let src = (t * batch + n) * classes;
            sample[t * classes..(t + 1) * classes].copy_from_slice(&log_y[src..src + classes]);
        }
        match loss_and_grad_from_log(l.as_slice(), &sample, frames, classes) {
            Some((loss, g)) => {
                for t in 0..frames {
                    let dst = (t * batch + n) * classes;
                    grad[dst..dst + classes].copy_from_slice(&g[t * classes..(t + 1) * classes]);
                }
                per_sample.push(Some(loss));
            }
            None => {
                skipped.push(n);
                per_sample.push(None);
            }
        }
    }
    let feasible = batch - skipped.len();
    if feasible == 0 {
        return Ok(BatchLoss {
            loss: None,
            per_sample,
            skipped,
        });
    }
    let scale = 1.0 / feasible as f64;
    let mean = per_sample.iter().flatten().sum::<f64>() * scale;
    let ix = logits.id();
    let loss = logits.graph().record(
        Tensor::scalar(mean),
        &[logits],
        Box::new(move |g, sink: &mut GradSink| {
            if let Some(d) = sink.grad(ix) {
                let k = g[0] * scale;
                d.iter_mut().zip(&grad).for_each(|(d, v)| *d += k * v);
            }
        }),
    );
    Ok(BatchLoss {
        loss: Some(loss),
        per_sample,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alphabet::Alphabet;

    fn uniform(frames: usize, classes: usize) -> FrameDistributions {
        FrameDistributions::new(frames, classes, vec![1.0 / classes as f64; frames * classes]).unwrap()
    }

    fn seq(v: &[u32]) -> LabelSequence {
        LabelSequence::new(v.to_vec()).unwrap()
    }

    #[test]
    fn collapse_hello_example() {
        let a = Alphabet::alphanumeric();
        let path = a.parse_path("--hh-e-l-ll-oo--").unwrap();
        let l = collapse(&path, a.num_classes()).unwrap();
        assert_eq!(a.decode(&l), "hello");
        assert!(collapse(&[], 3).unwrap().is_empty());
        let path = a.parse_path("aa-a").unwrap();
        assert_eq!(a.decode(&collapse(&path, 37).unwrap()), "aa");
        assert!(matches!(collapse(&[5], 3), Err(Error::Alphabet(_))));
    }

    #[test]
    fn path_probability_examples() {
        let y = uniform(3, 2);
        assert_eq!(path_probability(&[0, 1, 1], &y).unwrap(), 0.125);
        let y = FrameDistributions::new(2, 2, vec![0.4, 0.6, 0.7, 0.3]).unwrap();
        assert!((path_probability(&[1, 0], &y).unwrap() - 0.42).abs() < 1e-15);
        let onehot = FrameDistributions::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(path_probability(&[1, 0], &onehot).unwrap(), 1.0);
        assert!(path_probability(&[1], &y).is_err());
    }

    #[test]
    fn two_frame_uniform_example() {
        let y = uniform(2, 2);
        assert!((sequence_probability(&seq(&[1]), &y).unwrap() - 0.75).abs() < 1e-15);
        assert!((sequence_probability(&seq(&[]), &y).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(sequence_probability(&seq(&[1, 1]), &y).unwrap(), 0.0);
        assert!((ctc_loss(&seq(&[1]), &y).unwrap() + 0.75f64.ln()).abs() < 1e-15);
        assert!(matches!(
            ctc_loss(&seq(&[1, 1]), &y),
            Err(Error::InfeasibleTarget { frames: 2, .. })
        ));
        assert!(matches!(
            sequence_probability(&seq(&[2]), &y),
            Err(Error::Alphabet(_))
        ));
    }

    #[test]
    fn single_path_one_hot_has_zero_loss() {
        // path a - b over 3 frames, classes {-, a, b}
        let probs = vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        let y = FrameDistributions::new(3, 3, probs).unwrap();
        assert_eq!(ctc_loss(&seq(&[1, 2]), &y).unwrap(), 0.0);
    }

    #[test]
    fn brute_force_single_frame_and_budget() {
        let y = FrameDistributions::new(1, 3, vec![0.2, 0.5, 0.3]).unwrap();
        assert_eq!(brute_force_sequence_probability(&seq(&[2]), &y).unwrap(), 0.3);
        let big = uniform(24, 4);
        assert!(matches!(
            brute_force_sequence_probability(&seq(&[1]), &big),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn rejects_non_distributions() {
        assert!(FrameDistributions::new(1, 2, vec![0.5, 0.6]).is_err());
        assert!(FrameDistributions::new(1, 2, vec![1.5, -0.5]).is_err());
        assert!(FrameDistributions::new(1, 2, vec![0.5]).is_err());
    }
}
