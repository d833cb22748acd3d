use super::{GradSink, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Variance floor added before the square root.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the newest batch in the running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel running mean and variance used at inference time.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    ready: bool,
}

impl RunningStats {
    /// No statistics yet; inference through it fails until a training pass.
    pub fn empty(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            ready: false,
        }
    }

    /// Zero mean, unit variance.
    pub fn standard(channels: usize) -> Self {
        RunningStats {
            ready: true,
            ..Self::empty(channels)
        }
    }

    pub fn from_parts(mean: Vec<f64>, var: Vec<f64>) -> Self {
        RunningStats {
            mean,
            var,
            ready: true,
        }
    }

    pub fn is_ready(&self) -> bool {
        self.ready
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    fn update(&mut self, mean: &[f64], unbiased_var: &[f64]) {
        if self.ready {
            for (r, m) in self.mean.iter_mut().zip(mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
            }
            for (r, v) in self.var.iter_mut().zip(unbiased_var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
            }
        } else {
            self.mean.copy_from_slice(mean);
            self.var.copy_from_slice(unbiased_var);
            self.ready = true;
        }
    }
}

pub enum BatchNormMode<'a> {
    /// Normalize with batch statistics and fold them into the running ones.
    Train(&'a mut RunningStats),
    /// Normalize with the running statistics.
    Infer(&'a RunningStats),
}

/// (batch, channels, spatial) view of a `[N,C,H,W]`, `[C,H,W]` or `[N,C]` tensor.
fn layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [n, c] => Ok((n, c, 1)),
        [c, h, w] => Ok((1, c, h * w)),
        [n, c, h, w] => Ok((n, c, h * w)),
        _ => Err(Error::dim(format!("batchnorm: unsupported shape {shape:?}"))),
    }
}

impl<'g> Var<'g> {
    /// Per-channel batch normalization followed by `gamma·x̂ + beta`.
    pub fn batchnorm(self, gamma: Var<'g>, beta: Var<'g>, mode: BatchNormMode<'_>) -> Result<Var<'g>> {
        let (n, c, s) = layout(&self.shape())?;
        if gamma.value().numel() != c || beta.value().numel() != c {
            return Err(Error::dim(format!("batchnorm: affine parameters must have {c} entries")));
        }
        let count = n * s;
        let (mean, inv_std, train) = {
            let x = self.value();
            match mode {
                BatchNormMode::Train(running) => {
                    if count < 2 {
                        return Err(Error::dim("batchnorm: training needs at least two values per channel"));
                    }
                    if running.channels() != c {
                        return Err(Error::dim("batchnorm: running statistics channel count"));
                    }
                    let mut mean = vec![0.0; c];
                    let mut var = vec![0.0; c];
                    for (i, plane) in x.data().chunks(s).enumerate() {
                        mean[i % c] += plane.iter().sum::<f64>();
                    }
                    mean.iter_mut().for_each(|m| *m /= count as f64);
                    for (i, plane) in x.data().chunks(s).enumerate() {
                        let m = mean[i % c];
                        var[i % c] += plane.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
                    }
                    let biased: Vec<f64> = var.iter().map(|v| v / count as f64).collect();
                    let unbiased: Vec<f64> = var.iter().map(|v| v / (count - 1) as f64).collect();
                    running.update(&mean, &unbiased);
                    let inv_std: Vec<f64> = biased.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                    (mean, inv_std, true)
                }
                BatchNormMode::Infer(running) => {
                    if !running.is_ready() {
                        return Err(Error::State(
                            "batchnorm: inference before any running statistics exist".into(),
                        ));
                    }
                    if running.channels() != c {
                        return Err(Error::dim("batchnorm: running statistics channel count"));
                    }
                    let inv_std = running.var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                    (running.mean.clone(), inv_std, false)
                }
            }
        };
        // x̂ is kept for the backward rule.
        let xhat: Vec<f64> = {
            let x = self.value();
            x.data()
                .chunks(s)
                .enumerate()
                .flat_map(|(i, plane)| {
                    let (m, k) = (mean[i % c], inv_std[i % c]);
                    plane.iter().map(move |v| (v - m) * k)
                })
                .collect()
        };
        let out: Vec<f64> = {
            let (gm, bt) = (gamma.value(), beta.value());
            xhat.chunks(s)
                .enumerate()
                .flat_map(|(i, plane)| {
                    let (gv, bv) = (gm.data()[i % c], bt.data()[i % c]);
                    plane.iter().map(move |v| gv * v + bv)
                })
                .collect()
        };
        let value = Tensor::new(&self.shape(), out)?;
        let (ix, ig, ib) = (self.id, gamma.id, beta.id);
        Ok(self.graph.record(
            value,
            &[self, gamma, beta],
            Box::new(move |g, sink: &mut GradSink| {
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for (i, (gp, xp)) in g.chunks(s).zip(xhat.chunks(s)).enumerate() {
                    sum_g[i % c] += gp.iter().sum::<f64>();
                    sum_gx[i % c] += gp.iter().zip(xp).map(|(a, b)| a * b).sum::<f64>();
                }
                if let Some(d) = sink.grad(ib) {
                    d.iter_mut().zip(&sum_g).for_each(|(d, v)| *d += v);
                }
                if let Some(d) = sink.grad(ig) {
                    d.iter_mut().zip(&sum_gx).for_each(|(d, v)| *d += v);
                }
                let (gm, dx) = sink.value_and_grad(ig, ix);
                if let Some(dx) = dx {
                    let gm = gm.data();
                    let inv_count = 1.0 / count as f64;
                    for (i, ((dp, gp), xp)) in dx.chunks_mut(s).zip(g.chunks(s)).zip(xhat.chunks(s)).enumerate() {
                        let ch = i % c;
                        let scale = gm[ch] * inv_std[ch];
                        if train {
                            let (mg, mgx) = (sum_g[ch] * inv_count, sum_gx[ch] * inv_count);
                            for ((d, gv), xv) in dp.iter_mut().zip(gp).zip(xp) {
                                *d += scale * (gv - mg - xv * mgx);
                            }
                        } else {
                            dp.iter_mut().zip(gp).for_each(|(d, gv)| *d += scale * gv);
                        }
                    }
                }
            }),
        ))
    }
}
