//! Parameter updates: ADADELTA and SGD with momentum.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ADADELTA_RHO: f64 = 0.9;
pub const ADADELTA_EPS: f64 = 1e-6;
pub const MOMENTUM_LR: f64 = 0.01;
pub const MOMENTUM_MU: f64 = 0.9;

/// An update rule over a fixed list of parameter tensors.
pub trait Optimizer {
    /// Applies one update; `grads[i]` must be shaped like `params[i]`.
    fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()>;

    /// Named state tensors, for checkpointing.
    fn slots(&self) -> Vec<(String, Tensor)>;

    /// Restores state produced by [`Optimizer::slots`].
    fn load_slots(&mut self, slots: &[(String, Tensor)]) -> Result<()>;
}

fn check_shapes(params: &[Tensor], grads: &[Tensor]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::usage(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::usage(format!(
                "gradient {i} has shape {:?}, parameter has {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    Ok(())
}

/// Zero accumulators shaped like `params`, or a check that existing ones match.
fn ensure_slots(slots: &mut Vec<Tensor>, params: &[Tensor]) -> Result<()> {
    if slots.is_empty() {
        *slots = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        return Ok(());
    }
    if slots.len() != params.len() || slots.iter().zip(params).any(|(s, p)| s.shape() != p.shape()) {
        return Err(Error::usage("optimizer state does not match the parameters"));
    }
    Ok(())
}

fn export(prefix: &str, slots: &[Tensor]) -> Vec<(String, Tensor)> {
    slots
        .iter()
        .enumerate()
        .map(|(i, t)| (format!("{prefix}.{i}"), t.clone()))
        .collect()
}

fn import(prefix: &str, slots: &[(String, Tensor)]) -> Vec<Tensor> {
    let mut found: Vec<(usize, Tensor)> = slots
        .iter()
        .filter_map(|(name, t)| {
            let idx = name.strip_prefix(prefix)?.strip_prefix('.')?.parse().ok()?;
            Some((idx, t.clone()))
        })
        .collect();
    found.sort_by_key(|(i, _)| *i);
    found.into_iter().map(|(_, t)| t).collect()
}

/// Per-dimension adaptive steps from running averages of squared
/// gradients and squared updates.
#[derive(Clone, Debug)]
pub struct Adadelta {
    pub rho: f64,
    pub eps: f64,
    sq_grad: Vec<Tensor>,
    sq_update: Vec<Tensor>,
}

impl Adadelta {
    pub fn new(rho: f64, eps: f64) -> Self {
        Adadelta {
            rho,
            eps,
            sq_grad: Vec::new(),
            sq_update: Vec::new(),
        }
    }

    /// `E[g²]` per parameter (empty before the first step).
    pub fn sq_grad(&self) -> &[Tensor] {
        &self.sq_grad
    }

    /// `E[Δx²]` per parameter (empty before the first step).
    pub fn sq_update(&self) -> &[Tensor] {
        &self.sq_update
    }
}

impl Default for Adadelta {
    fn default() -> Self {
        Self::new(ADADELTA_RHO, ADADELTA_EPS)
    }
}

impl Optimizer for Adadelta {
    fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        check_shapes(params, grads)?;
        ensure_slots(&mut self.sq_grad, params)?;
        ensure_slots(&mut self.sq_update, params)?;
        let (rho, eps) = (self.rho, self.eps);
        for (((p, g), eg), ex) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.sq_grad)
            .zip(&mut self.sq_update)
        {
            for (((p, &g), eg), ex) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(eg.data_mut())
                .zip(ex.data_mut())
            {
                *eg = rho * *eg + (1.0 - rho) * g * g;
                let dx = -((*ex + eps).sqrt() / (*eg + eps).sqrt()) * g;
                *ex = rho * *ex + (1.0 - rho) * dx * dx;
                *p += dx;
            }
        }
        Ok(())
    }

    fn slots(&self) -> Vec<(String, Tensor)> {
        let mut out = export("adadelta.sq_grad", &self.sq_grad);
        out.extend(export("adadelta.sq_update", &self.sq_update));
        out
    }

    fn load_slots(&mut self, slots: &[(String, Tensor)]) -> Result<()> {
        let (g, u) = (import("adadelta.sq_grad", slots), import("adadelta.sq_update", slots));
        if g.len() != u.len() {
            return Err(Error::usage("incomplete adadelta state"));
        }
        self.sq_grad = g;
        self.sq_update = u;
        Ok(())
    }
}

/// `v ← μv − η·g; x ← x + v`.
#[derive(Clone, Debug)]
pub struct Momentum {
    pub lr: f64,
    pub mu: f64,
    velocity: Vec<Tensor>,
}

impl Momentum {
    pub fn new(lr: f64, mu: f64) -> Self {
        Momentum {
            lr,
            mu,
            velocity: Vec::new(),
        }
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }
}

impl Default for Momentum {
    fn default() -> Self {
        Self::new(MOMENTUM_LR, MOMENTUM_MU)
    }
}

impl Optimizer for Momentum {
    fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        check_shapes(params, grads)?;
        ensure_slots(&mut self.velocity, params)?;
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((p, &g), v) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *v = self.mu * *v - self.lr * g;
                *p += *v;
            }
        }
        Ok(())
    }

    fn slots(&self) -> Vec<(String, Tensor)> {
        export("momentum.velocity", &self.velocity)
    }

    fn load_slots(&mut self, slots: &[(String, Tensor)]) -> Result<()> {
        self.velocity = import("momentum.velocity", slots);
        Ok(())
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= k));
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adadelta,
    Momentum,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adadelta" => Ok(OptimizerKind::Adadelta),
            "momentum" => Ok(OptimizerKind::Momentum),
            _ => Err(Error::Config(format!("unknown optimizer {s:?} (adadelta|momentum)"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adadelta => "adadelta",
            OptimizerKind::Momentum => "momentum",
        })
    }
}

/// Optimizer choice plus hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub rho: f64,
    pub eps: f64,
    pub lr: f64,
    pub momentum: f64,
    /// Optional max-norm gradient clip.
    pub clip: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adadelta,
            rho: ADADELTA_RHO,
            eps: ADADELTA_EPS,
            lr: MOMENTUM_LR,
            momentum: MOMENTUM_MU,
            clip: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("optimizer: {what}")));
        if !(0.0..1.0).contains(&self.rho) {
            return bad("rho must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if matches!(self.clip, Some(c) if !(c > 0.0)) {
            return bad("clip norm must be positive");
        }
        Ok(())
    }

    pub fn build(&self) -> Box<dyn Optimizer> {
        match self.kind {
            OptimizerKind::Adadelta => Box::new(Adadelta::new(self.rho, self.eps)),
            OptimizerKind::Momentum => Box::new(Momentum::new(self.lr, self.momentum)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Vec<Tensor> {
        vec![Tensor::new(&[1], vec![v]).unwrap()]
    }

    #[test]
    fn zero_gradient_leaves_parameters_alone() {
        let mut p = vec![Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap()];
        let z = vec![Tensor::zeros(&[3])];
        let before = p.clone();
        let mut a = Adadelta::default();
        for _ in 0..5 {
            a.step(&mut p, &z).unwrap();
        }
        assert_eq!(p, before);
        assert!(a.sq_grad()[0].data().iter().all(|&v| v == 0.0));
        let mut m = Momentum::default();
        m.step(&mut p, &z).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adadelta_first_step_closed_form() {
        for g in [0.3, -2.0, 1e-3] {
            let mut p = scalar(0.0);
            Adadelta::default().step(&mut p, &scalar(g)).unwrap();
            let expect = ADADELTA_EPS.sqrt() * g.abs() / ((1.0 - ADADELTA_RHO) * g * g + ADADELTA_EPS).sqrt();
            assert!((p[0].data()[0].abs() - expect).abs() < 1e-15);
            assert_eq!(p[0].data()[0].signum(), -g.signum());
        }
    }

    #[test]
    fn adadelta_is_antisymmetric_in_gradient_sign() {
        let (mut a, mut b) = (Adadelta::default(), Adadelta::default());
        let (mut pa, mut pb) = (scalar(0.0), scalar(0.0));
        for g in [0.5, -0.2, 1.5, 0.1] {
            a.step(&mut pa, &scalar(g)).unwrap();
            b.step(&mut pb, &scalar(-g)).unwrap();
            assert_eq!(pa[0].data()[0], -pb[0].data()[0]);
        }
    }

    #[test]
    fn adadelta_descends_a_quadratic_bowl() {
        let mut p = scalar(1.0);
        let mut opt = Adadelta::default();
        let mut loss = 0.5;
        for _ in 0..50 {
            let w = p[0].data()[0];
            opt.step(&mut p, &scalar(w)).unwrap();
            let w = p[0].data()[0];
            assert!(0.5 * w * w < loss);
            loss = 0.5 * w * w;
        }
    }

    #[test]
    fn momentum_rules() {
        let mut p = scalar(1.0);
        Momentum::new(0.1, 0.0).step(&mut p, &scalar(2.0)).unwrap();
        assert!((p[0].data()[0] - 0.8).abs() < 1e-15);

        let mut m = Momentum::new(0.1, 0.5);
        let mut p = scalar(0.0);
        m.step(&mut p, &scalar(1.0)).unwrap();
        let (w, v) = (p[0].data()[0], m.velocity()[0].data()[0]);
        m.step(&mut p, &scalar(0.0)).unwrap();
        assert!((p[0].data()[0] - (w + 0.5 * v)).abs() < 1e-15);
    }

    #[test]
    fn momentum_converges_on_a_quadratic_bowl() {
        let mut p = scalar(1.0);
        let mut opt = Momentum::new(0.1, 0.9);
        for _ in 0..200 {
            let w = p[0].data()[0];
            opt.step(&mut p, &scalar(w)).unwrap();
        }
        assert!(0.5 * p[0].data()[0].powi(2) < 1e-6);
    }

    #[test]
    fn shape_mismatch_is_usage_error() {
        let mut p = scalar(1.0);
        let g = vec![Tensor::zeros(&[2])];
        assert!(matches!(Adadelta::default().step(&mut p, &g), Err(Error::Usage(_))));
        assert!(matches!(Momentum::default().step(&mut p, &g), Err(Error::Usage(_))));
    }

    #[test]
    fn clipping_caps_the_joint_norm() {
        let mut g = vec![Tensor::new(&[2], vec![3.0, 4.0]).unwrap()];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn slots_round_trip() {
        let mut a = Adadelta::default();
        let mut p = vec![Tensor::zeros(&[2]), Tensor::zeros(&[1])];
        let g = vec![Tensor::full(&[2], 1.0), Tensor::full(&[1], -1.0)];
        a.step(&mut p, &g).unwrap();
        let mut b = Adadelta::default();
        b.load_slots(&a.slots()).unwrap();
        let (mut pa, mut pb) = (p.clone(), p.clone());
        a.step(&mut pa, &g).unwrap();
        b.step(&mut pb, &g).unwrap();
        assert_eq!(pa, pb);
    }
}
