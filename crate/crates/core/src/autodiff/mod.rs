//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles. Node
//! values live on the graph; a [`Var`] is a cheap copyable index into it.
//! [`Graph::backward`] walks the tape from a scalar root toward the leaves and
//! accumulates `d(root)/d(leaf)` into every leaf created with
//! [`Graph::leaf`]. Leaf gradients persist across calls until
//! [`Graph::zero_grad`], so two backward passes add their contributions.
//!
//! A graph is confined to one thread; independent graphs can run in parallel.

mod conv;
mod norm;
mod ops;
mod seq;

use std::cell::{Ref, RefCell};
use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use conv::{Conv2dParams, Pool2dParams};
pub use ops::{concat_cols, concat_rows};
pub(crate) use ops::softmax_in_place;
pub use norm::{BatchNormMode, RunningStats, BN_EPS, BN_MOMENTUM};
pub use seq::{sequence_to_map, split_frames};

pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &mut GradSink<'_>)>;

struct Node {
    value: Tensor,
    requires_grad: bool,
    is_leaf: bool,
    backward: Option<BackwardFn>,
}

/// Recording context for one differentiable computation.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    leaf_grads: RefCell<Vec<Option<Vec<f64>>>>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gives backward rules read access to recorded values and write access to
/// the gradient buffers of their inputs.
pub(crate) struct GradSink<'a> {
    nodes: &'a [Node],
    grads: &'a mut [Option<Vec<f64>>],
}

impl GradSink<'_> {
    /// Gradient buffer for node `id`, or `None` when it does not need one.
    pub(crate) fn grad(&mut self, id: usize) -> Option<&mut [f64]> {
        let node = &self.nodes[id];
        if !node.requires_grad {
            return None;
        }
        let n = node.value.numel();
        Some(self.grads[id].get_or_insert_with(|| vec![0.0; n]))
    }

    /// Value of `a` together with the gradient buffer of `b`.
    pub(crate) fn value_and_grad(&mut self, a: usize, b: usize) -> (&Tensor, Option<&mut [f64]>) {
        let nodes = self.nodes;
        let node = &nodes[b];
        let grad = if node.requires_grad {
            let n = node.value.numel();
            Some(self.grads[b].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
        } else {
            None
        };
        (&nodes[a].value, grad)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Trainable input whose gradient is kept after [`Graph::backward`].
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_node(Node {
            value,
            requires_grad: true,
            is_leaf: true,
            backward: None,
        })
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_node(Node {
            value,
            requires_grad: false,
            is_leaf: true,
            backward: None,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_node(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        self.leaf_grads.borrow_mut().push(None);
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// Records an operation result. `backward` is dropped when no input
    /// requires a gradient.
    pub(crate) fn record(&self, value: Tensor, inputs: &[Var<'_>], backward: BackwardFn) -> Var<'_> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| {
                debug_assert!(std::ptr::eq(v.graph, self), "mixing graphs");
                nodes[v.id].requires_grad
            })
        };
        self.push_node(Node {
            value,
            requires_grad,
            is_leaf: false,
            backward: requires_grad.then_some(backward),
        })
    }

    pub(crate) fn requires_grad(&self, v: Var<'_>) -> bool {
        self.nodes.borrow()[v.id].requires_grad
    }

    /// Propagates gradients from a scalar `root` into every reachable leaf.
    pub fn backward(&self, root: Var<'_>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root_node = &nodes[root.id];
        if root_node.value.numel() != 1 {
            return Err(Error::usage(format!(
                "backward root must be scalar, got shape {:?}",
                root_node.value.shape()
            )));
        }
        if !root_node.requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(root.id + 1, || None);
        grads[root.id] = Some(vec![1.0]);
        let mut leaf_grads = self.leaf_grads.borrow_mut();
        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.is_leaf {
                match &mut leaf_grads[id] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(g),
                }
            } else if let Some(rule) = &node.backward {
                let mut sink = GradSink {
                    nodes: &nodes,
                    grads: &mut grads[..id],
                };
                rule(&g, &mut sink);
            }
        }
        Ok(())
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var<'_>) -> Option<Tensor> {
        let grads = self.leaf_grads.borrow();
        let shape = self.nodes.borrow()[v.id].value.shape().to_vec();
        grads[v.id]
            .as_ref()
            .map(|g| Tensor::new(&shape, g.clone()).expect("gradient shape"))
    }

    /// Gradient of a leaf, or zeros when it was never reached.
    pub fn grad_or_zeros(&self, v: Var<'_>) -> Tensor {
        self.grad(v).unwrap_or_else(|| Tensor::zeros(&v.shape()))
    }

    pub fn zero_grad(&self) {
        self.leaf_grads.borrow_mut().iter_mut().for_each(|g| *g = None);
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Ref<'g, Tensor> {
        Ref::map(self.graph.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad(*self)
    }

    pub fn backward(&self) -> Result<()> {
        self.graph.backward(*self)
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.graph.grad(*self)
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    pub fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    pub fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    /// Worst relative error between an analytic and a central-difference
    /// gradient of `f` at `x`.
    pub fn check_gradient(x: &Tensor, analytic: &Tensor, f: impl Fn(&Tensor) -> f64) -> f64 {
        const STEP: f64 = 1e-6;
        let mut worst = 0.0f64;
        for i in 0..x.numel() {
            let mut plus = x.clone();
            plus.data_mut()[i] += STEP;
            let mut minus = x.clone();
            minus.data_mut()[i] -= STEP;
            let numeric = (f(&plus) - f(&minus)) / (2.0 * STEP);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(err);
        }
        worst
    }
}
