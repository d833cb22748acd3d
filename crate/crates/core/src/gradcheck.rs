//! Finite-difference oracles for the analytic gradients.
//!
//! Each check builds one random instance from a seed and returns the worst
//! relative error between analytic and central-difference gradients over
//! every input entry. Shared by the test suites and the acceptance run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::alphabet::LabelSequence;
use crate::autodiff::{BatchNormMode, Conv2dParams, Graph, Pool2dParams, RunningStats, Var};
use crate::ctc::{ctc_loss, ctc_loss_grad, FrameDistributions};
use crate::layers::{bilstm_layer, BoundParams, LstmCell, ParamStore};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-6;

/// Tolerance for single operations.
pub const OP_TOLERANCE: f64 = 1e-6;

/// Tolerance for recurrent layers and the CTC loss, whose longer chains
/// accumulate more rounding in the differences.
pub const CHAIN_TOLERANCE: f64 = 1e-5;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Worst relative error of `analytic` against central differences of `f`
/// at `x`. The denominator is floored at 1e-3 so that tiny gradients are
/// compared absolutely.
pub fn fd_error(x: &Tensor, analytic: &Tensor, f: impl Fn(&Tensor) -> f64) -> f64 {
    assert_eq!(x.shape(), analytic.shape());
    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += FD_STEP;
        let mut minus = x.clone();
        minus.data_mut()[i] -= FD_STEP;
        let numeric = (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3));
    }
    worst
}

/// Runs `op` on leaves built from `inputs`, reduces the output with a
/// random probe and compares every input gradient with differences.
pub fn check_op(inputs: &[Tensor], probe_seed: u64, op: impl for<'g> Fn(&[Var<'g>]) -> Var<'g>) -> f64 {
    let eval = |ts: &[Tensor], probe: Option<&Tensor>| -> (f64, Vec<Tensor>, Vec<usize>) {
        let g = Graph::new();
        let vars: Vec<_> = ts.iter().map(|t| g.leaf(t.clone())).collect();
        let out = op(&vars);
        let shape = out.shape();
        let probe = match probe {
            Some(p) => p.clone(),
            None => random_tensor(&shape, &mut rng(probe_seed)),
        };
        let root = out.weighted_sum(&probe).expect("probe matches output");
        root.backward().expect("scalar root");
        (root.item(), vars.iter().map(|v| g.grad_or_zeros(*v)).collect(), shape)
    };
    let (_, grads, shape) = eval(inputs, None);
    let probe = random_tensor(&shape, &mut rng(probe_seed));
    let mut worst = 0.0f64;
    for (i, grad) in grads.iter().enumerate() {
        let err = fd_error(&inputs[i], grad, |t| {
            let mut ts = inputs.to_vec();
            ts[i] = t.clone();
            eval(&ts, Some(&probe)).0
        });
        worst = worst.max(err);
    }
    worst
}

/// Gradients of a recurrent run with respect to the frames and to every
/// parameter tensor of the store.
pub fn check_recurrent(
    store: &ParamStore,
    frames: &Tensor,
    probe_seed: u64,
    run: impl for<'g> Fn(&BoundParams<'g>, Var<'g>) -> Var<'g>,
) -> f64 {
    let eval = |store: &ParamStore, frames: &Tensor, grads: bool| -> (f64, Vec<Tensor>) {
        let g = Graph::new();
        let bound = store.bind(&g, grads);
        let x = if grads { g.leaf(frames.clone()) } else { g.constant(frames.clone()) };
        let out = run(&bound, x);
        let probe = random_tensor(&out.shape(), &mut rng(probe_seed));
        let root = out.weighted_sum(&probe).expect("probe matches output");
        if grads {
            root.backward().expect("scalar root");
        }
        let mut all = bound.grads();
        all.push(g.grad_or_zeros(x));
        (root.item(), all)
    };
    let (_, grads) = eval(store, frames, true);
    let mut worst = 0.0f64;
    for (i, grad) in grads[..store.len()].iter().enumerate() {
        let err = fd_error(&store.values()[i], grad, |t| {
            let mut s = store.clone();
            s.values_mut()[i] = t.clone();
            eval(&s, frames, false).0
        });
        worst = worst.max(err);
    }
    worst.max(fd_error(frames, &grads[store.len()], |t| eval(store, t, false).0))
}

/// A family of random gradient checks.
#[derive(Clone, Copy)]
pub struct GradCheck {
    pub name: &'static str,
    pub tolerance: f64,
    /// Builds instance `seed` and returns its worst relative error.
    pub instance: fn(u64) -> f64,
}

impl GradCheck {
    /// Worst error over seeds `0..instances`.
    pub fn run(&self, instances: u64) -> f64 {
        (0..instances).map(self.instance).fold(0.0, f64::max)
    }
}

fn matmul(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (m, k, n) = (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..5));
    let inputs = [random_tensor(&[m, k], &mut r), random_tensor(&[k, n], &mut r)];
    check_op(&inputs, seed, |v| v[0].matmul(v[1]).unwrap())
}

/// The class projection: a matmul followed by a per-column bias.
fn projection(seed: u64) -> f64 {
    let mut r = rng(500 + seed);
    let (m, k, n) = (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..5));
    let inputs = [
        random_tensor(&[m, k], &mut r),
        random_tensor(&[k, n], &mut r),
        random_tensor(&[n], &mut r),
    ];
    check_op(&inputs, seed, |v| v[0].matmul(v[1]).unwrap().add_row_bias(v[2]).unwrap())
}

fn relu(seed: u64) -> f64 {
    let mut r = rng(800 + seed);
    let shape = [r.gen_range(1..3), r.gen_range(1..3), r.gen_range(1..4), r.gen_range(1..4)];
    check_op(&[random_tensor(&shape, &mut r)], seed, |v| v[0].relu())
}

fn softmax(seed: u64) -> f64 {
    let mut r = rng(1000 + seed);
    let shape = [r.gen_range(1..4), r.gen_range(1..6)];
    check_op(&[random_tensor(&shape, &mut r)], seed, |v| v[0].softmax_rows().unwrap())
}

fn conv2d(seed: u64) -> f64 {
    let mut r = rng(2000 + seed);
    let (n, c, o) = (r.gen_range(1..3), r.gen_range(1..3), r.gen_range(1..3));
    let (kh, kw) = (r.gen_range(1..4), r.gen_range(1..4));
    let (sh, sw) = (r.gen_range(1..3), r.gen_range(1..3));
    let (ph, pw) = (r.gen_range(0..2), r.gen_range(0..2));
    let (h, w) = (kh + r.gen_range(0..3), kw + r.gen_range(0..3));
    let params = Conv2dParams::new((sh, sw), (ph, pw));
    let inputs = [
        random_tensor(&[n, c, h, w], &mut r),
        random_tensor(&[o, c, kh, kw], &mut r),
        random_tensor(&[o], &mut r),
    ];
    check_op(&inputs, seed, |v| v[0].conv2d(v[1], Some(v[2]), params).unwrap())
}

fn maxpool(seed: u64) -> f64 {
    let mut r = rng(3000 + seed);
    let (wh, ww) = (r.gen_range(1..3), r.gen_range(1..3));
    let (sh, sw) = (r.gen_range(1..3), r.gen_range(1..3));
    let shape = [r.gen_range(1..3), r.gen_range(1..3), wh + r.gen_range(0..4), ww + r.gen_range(0..4)];
    let params = Pool2dParams::new((wh, ww), (sh, sw));
    check_op(&[random_tensor(&shape, &mut r)], seed, |v| v[0].maxpool2d(params).unwrap())
}

fn batchnorm_inputs(seed: u64) -> (ChaCha8Rng, usize, [Tensor; 3]) {
    let mut r = rng(4000 + seed);
    let c = r.gen_range(1..4);
    let shape = [r.gen_range(1..3), c, r.gen_range(1..3), r.gen_range(2..4)];
    let inputs = [
        random_tensor(&shape, &mut r),
        random_tensor(&[c], &mut r),
        random_tensor(&[c], &mut r),
    ];
    (r, c, inputs)
}

fn batchnorm_train(seed: u64) -> f64 {
    let (_, c, inputs) = batchnorm_inputs(seed);
    check_op(&inputs, seed, |v| {
        let mut stats = RunningStats::empty(c);
        v[0].batchnorm(v[1], v[2], BatchNormMode::Train(&mut stats)).unwrap()
    })
}

fn batchnorm_infer(seed: u64) -> f64 {
    let (mut r, c, inputs) = batchnorm_inputs(seed);
    let fixed = RunningStats::from_parts(
        (0..c).map(|_| r.gen_range(-1.0..1.0)).collect(),
        (0..c).map(|_| r.gen_range(0.2..2.0)).collect(),
    );
    check_op(&inputs, seed, |v| v[0].batchnorm(v[1], v[2], BatchNormMode::Infer(&fixed)).unwrap())
}

fn map_to_sequence(seed: u64) -> f64 {
    let mut r = rng(5000 + seed);
    let shape = [r.gen_range(1..3), r.gen_range(1..3), r.gen_range(1..3), r.gen_range(1..4)];
    check_op(&[random_tensor(&shape, &mut r)], seed, |v| v[0].map_to_sequence().unwrap())
}

/// One LSTM direction over up to five steps; odd seeds run in reverse.
fn lstm(seed: u64) -> f64 {
    let mut r = rng(6000 + seed);
    let (input, hidden, batch) = (r.gen_range(1..4), r.gen_range(1..4), r.gen_range(1..3));
    let steps = r.gen_range(1..=5);
    let mut store = ParamStore::new();
    let cell = LstmCell::new(&mut store, "cell", input, hidden, &mut r);
    let frames = random_tensor(&[steps * batch, input], &mut r);
    let reverse = seed % 2 == 1;
    check_recurrent(&store, &frames, seed, |p, x| cell.run(p, x, batch, reverse).unwrap())
}

fn stacked_bilstm(seed: u64) -> f64 {
    let mut r = rng(7000 + seed);
    let (input, hidden, batch) = (r.gen_range(1..3), r.gen_range(1..3), r.gen_range(1..3));
    let steps = r.gen_range(1..=5);
    let mut store = ParamStore::new();
    let (f1, b1) = (
        LstmCell::new(&mut store, "l1.fwd", input, hidden, &mut r),
        LstmCell::new(&mut store, "l1.bwd", input, hidden, &mut r),
    );
    let (f2, b2) = (
        LstmCell::new(&mut store, "l2.fwd", 2 * hidden, hidden, &mut r),
        LstmCell::new(&mut store, "l2.bwd", 2 * hidden, hidden, &mut r),
    );
    let frames = random_tensor(&[steps * batch, input], &mut r);
    check_recurrent(&store, &frames, seed, |p, x| {
        let h = bilstm_layer(&f1, &b1, p, x, batch).unwrap();
        bilstm_layer(&f2, &b2, p, h, batch).unwrap()
    })
}

/// CTC loss gradient with respect to the pre-softmax activations, on
/// `T ≤ 6` frames and labels short enough to always be alignable.
fn ctc(seed: u64) -> f64 {
    let mut r = rng(8000 + seed);
    let frames = r.gen_range(1..=6);
    let labels = r.gen_range(1..=3u32);
    let u = Tensor::from_fn(&[frames, labels as usize + 1], |_| r.gen_range(-2.0..2.0));
    let len = r.gen_range(0..=frames.div_ceil(2));
    let l = LabelSequence::new((0..len).map(|_| r.gen_range(1..=labels)).collect()).expect("non-blank labels");
    let loss = |u: &Tensor| ctc_loss(&l, &FrameDistributions::from_logits(u).unwrap()).unwrap();
    let (_, grad) = ctc_loss_grad(&l, &FrameDistributions::from_logits(&u).unwrap()).expect("alignable label");
    fd_error(&u, &Tensor::new(u.shape(), grad).unwrap(), loss)
}

pub const CTC_CHECK: GradCheck = GradCheck {
    name: "ctc loss",
    tolerance: CHAIN_TOLERANCE,
    instance: ctc,
};

/// One check per differentiable layer of the network.
pub const LAYER_CHECKS: &[GradCheck] = &[
    GradCheck {
        name: "matmul",
        tolerance: OP_TOLERANCE,
        instance: matmul,
    },
    GradCheck {
        name: "projection",
        tolerance: OP_TOLERANCE,
        instance: projection,
    },
    GradCheck {
        name: "relu",
        tolerance: OP_TOLERANCE,
        instance: relu,
    },
    GradCheck {
        name: "softmax",
        tolerance: OP_TOLERANCE,
        instance: softmax,
    },
    GradCheck {
        name: "conv2d",
        tolerance: OP_TOLERANCE,
        instance: conv2d,
    },
    GradCheck {
        name: "maxpool",
        tolerance: OP_TOLERANCE,
        instance: maxpool,
    },
    GradCheck {
        name: "batchnorm (training)",
        tolerance: OP_TOLERANCE,
        instance: batchnorm_train,
    },
    GradCheck {
        name: "batchnorm (inference)",
        tolerance: OP_TOLERANCE,
        instance: batchnorm_infer,
    },
    GradCheck {
        name: "map-to-sequence",
        tolerance: OP_TOLERANCE,
        instance: map_to_sequence,
    },
    GradCheck {
        name: "lstm",
        tolerance: CHAIN_TOLERANCE,
        instance: lstm,
    },
    GradCheck {
        name: "stacked bi-lstm",
        tolerance: CHAIN_TOLERANCE,
        instance: stacked_bilstm,
    },
];
