//! Mini-batch training on the CTC objective, and evaluation helpers.

use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::alphabet::LabelSequence;
use crate::autodiff::Graph;
use crate::ctc::{ctc_loss_batch, log_sequence_probability, FrameDistributions};
use crate::decode::{best_path_decode, edit_distance};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::optim::{clip_grad_norm, Optimizer, OptimizerConfig};
use crate::tensor::Tensor;

/// Default mini-batch size.
pub const DEFAULT_BATCH_SIZE: usize = 16;

/// A normalized `[1, H, W]` input with its target.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub image: Tensor,
    pub label: LabelSequence,
}

/// Stacks equally sized `[1,H,W]` images into `[N,1,H,W]`.
pub fn stack_images<'a>(images: impl IntoIterator<Item = &'a Tensor>) -> Result<Tensor> {
    let images: Vec<&Tensor> = images.into_iter().collect();
    let first = images.first().ok_or_else(|| Error::usage("empty batch"))?;
    let [1, h, w] = *first.shape() else {
        return Err(Error::dim(format!("expected [1,H,W] images, got {:?}", first.shape())));
    };
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in &images {
        if img.shape() != first.shape() {
            return Err(Error::dim("batch images differ in size"));
        }
        data.extend_from_slice(img.data());
    }
    Tensor::new(&[images.len(), 1, h, w], data)
}

/// Outcome of one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    /// Mean loss over feasible samples, before the update.
    pub loss: Option<f64>,
    /// Per-sample losses, `None` where the target could not be aligned.
    pub per_sample: Vec<Option<f64>>,
    pub skipped: usize,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// Aggregate over one pass through the training samples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochStats {
    /// Mean per-sample loss over feasible samples.
    pub mean_loss: f64,
    pub feasible: usize,
    pub skipped: usize,
    pub batches: usize,
    /// Set when the callback ended the pass before every sample was seen.
    pub interrupted: bool,
}

/// A model together with its optimizer state and step counter.
pub struct Trainer {
    pub model: Model,
    optimizer: Box<dyn Optimizer>,
    clip: Option<f64>,
    pub step: u64,
}

impl Trainer {
    pub fn new(model: Model, config: &OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            model,
            optimizer: config.build(),
            clip: config.clip,
            step: 0,
        })
    }

    pub fn optimizer_slots(&self) -> Vec<(String, Tensor)> {
        self.optimizer.slots()
    }

    pub fn load_optimizer_slots(&mut self, slots: &[(String, Tensor)]) -> Result<()> {
        self.optimizer.load_slots(slots)
    }

    /// One forward/backward pass and update on a batch of equal-width samples.
    /// A batch whose targets are all infeasible leaves the model unchanged.
    pub fn train_batch(&mut self, batch: &[&TrainSample]) -> Result<BatchStats> {
        let images = stack_images(batch.iter().map(|s| &s.image))?;
        let labels: Vec<LabelSequence> = batch.iter().map(|s| s.label.clone()).collect();
        let mut stats = self.model.running_stats().to_vec();
        let g = Graph::new();
        let (value, mut grads, per_sample, skipped) = {
            let bound = self.model.params().bind(&g, true);
            let logits = self.model.logits(&bound, g.constant(images), Some(&mut stats))?;
            let out = ctc_loss_batch(logits, &labels)?;
            let Some(loss) = out.loss else {
                return Ok(BatchStats {
                    loss: None,
                    skipped: out.skipped.len(),
                    per_sample: out.per_sample,
                    grad_norm: 0.0,
                });
            };
            loss.backward()?;
            (loss.item(), bound.grads(), out.per_sample, out.skipped.len())
        };
        let grad_norm = match self.clip {
            Some(max) => clip_grad_norm(&mut grads, max),
            None => grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt(),
        };
        self.optimizer.step(self.model.params_mut().values_mut(), &grads)?;
        self.model.set_running_stats(stats)?;
        self.step += 1;
        Ok(BatchStats {
            loss: Some(value),
            skipped,
            per_sample,
            grad_norm,
        })
    }

    /// Shuffles with `rng` and trains on consecutive batches. Samples of
    /// differing widths are grouped so each batch has a single width.
    /// `on_batch` may end the pass early by returning `Break`.
    pub fn run_epoch(
        &mut self,
        samples: &[TrainSample],
        batch_size: usize,
        rng: &mut ChaCha8Rng,
        mut on_batch: impl FnMut(&mut Self, &BatchStats) -> ControlFlow<()>,
    ) -> Result<EpochStats> {
        if samples.is_empty() {
            return Err(Error::usage("no training samples"));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(rng);
        // stable grouping by width keeps the shuffled order within a width
        order.sort_by_key(|&i| samples[i].image.shape()[2]);
        let mut epoch = EpochStats::default();
        let mut total = 0.0;
        let mut start = 0;
        while start < order.len() {
            let width = samples[order[start]].image.shape()[2];
            let mut end = start;
            while end < order.len() && end - start < batch_size && samples[order[end]].image.shape()[2] == width {
                end += 1;
            }
            let batch: Vec<&TrainSample> = order[start..end].iter().map(|&i| &samples[i]).collect();
            let stats = self.train_batch(&batch)?;
            total += stats.per_sample.iter().flatten().sum::<f64>();
            epoch.feasible += stats.per_sample.iter().flatten().count();
            epoch.skipped += stats.skipped;
            epoch.batches += 1;
            start = end;
            if on_batch(self, &stats).is_break() {
                epoch.interrupted = start < order.len();
                break;
            }
        }
        epoch.mean_loss = if epoch.feasible > 0 {
            total / epoch.feasible as f64
        } else {
            f64::NAN
        };
        Ok(epoch)
    }
}

/// Seeded generator for the shuffle of epoch `epoch`.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Inference over many images, batching runs of equal width, in input order.
pub fn predict(model: &Model, images: &[&Tensor], batch_size: usize) -> Result<Vec<FrameDistributions>> {
    let batch_size = batch_size.max(1);
    let mut out = Vec::with_capacity(images.len());
    let mut start = 0;
    while start < images.len() {
        let shape = images[start].shape();
        let mut end = start + 1;
        while end < images.len() && end - start < batch_size && images[end].shape() == shape {
            end += 1;
        }
        out.extend(model.forward_batch(&stack_images(images[start..end].iter().copied())?)?);
        start = end;
    }
    Ok(out)
}

/// Lexicon-free accuracy figures over a labelled set.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalStats {
    pub samples: usize,
    pub correct: usize,
    /// Sum of edit distances between prediction and label.
    pub total_edit_distance: usize,
    /// Mean CTC loss over samples whose label is alignable.
    pub mean_loss: f64,
    pub predictions: Vec<LabelSequence>,
}

impl EvalStats {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.samples.max(1) as f64
    }

    pub fn mean_edit_distance(&self) -> f64 {
        self.total_edit_distance as f64 / self.samples.max(1) as f64
    }
}

pub fn evaluate(model: &Model, samples: &[TrainSample], batch_size: usize) -> Result<EvalStats> {
    if samples.is_empty() {
        return Err(Error::usage("nothing to evaluate"));
    }
    let images: Vec<&Tensor> = samples.iter().map(|s| &s.image).collect();
    let ys = predict(model, &images, batch_size)?;
    let labels: Vec<&LabelSequence> = samples.iter().map(|s| &s.label).collect();
    score_predictions(&labels, &ys)
}

/// Lexicon-free figures for already computed frame distributions.
pub fn score_predictions(labels: &[&LabelSequence], ys: &[FrameDistributions]) -> Result<EvalStats> {
    if labels.len() != ys.len() {
        return Err(Error::dim(format!("{} labels for {} outputs", labels.len(), ys.len())));
    }
    if labels.is_empty() {
        return Err(Error::usage("nothing to evaluate"));
    }
    let mut stats = EvalStats {
        samples: labels.len(),
        correct: 0,
        total_edit_distance: 0,
        mean_loss: 0.0,
        predictions: Vec::with_capacity(labels.len()),
    };
    let (mut loss, mut feasible) = (0.0, 0usize);
    for (&label, y) in labels.iter().zip(ys) {
        let pred = best_path_decode(y);
        stats.correct += usize::from(pred == *label);
        stats.total_edit_distance += edit_distance(pred.as_slice(), label.as_slice());
        let lp = log_sequence_probability(label, y)?;
        if lp > f64::NEG_INFINITY {
            loss -= lp;
            feasible += 1;
        }
        stats.predictions.push(pred);
    }
    stats.mean_loss = if feasible > 0 { loss / feasible as f64 } else { f64::NAN };
    Ok(stats)
}
