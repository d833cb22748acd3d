use std::ops::ControlFlow;
use std::path::Path;

use cpu_time::ProcessTime;

use crnn_core::model::write_checkpoint;
use crnn_core::synth::{normalize_to_width, Split};
use crnn_core::train::{epoch_rng, evaluate, BatchStats, EvalStats, TrainSample, Trainer};
use crnn_core::{Model, ModelConfig};

use super::{eval_samples, load_dataset, same_alphabet};
use crate::config::RunConfig;
use crate::failure::{Failure, Outcome};
use crate::report::{real, Report};

pub const TRAIN_HEADER: &[&str] = &[
    "epoch",
    "step",
    "train_loss",
    "skipped",
    "val_accuracy",
    "val_edit_distance",
    "val_loss",
    "saved",
];

/// How a training run ended.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub epochs: usize,
    pub steps: u64,
    pub best_accuracy: f64,
    pub best_loss: f64,
    /// Mean training loss of each completed or interrupted epoch.
    pub epoch_losses: Vec<f64>,
    pub skipped: usize,
    pub cpu_seconds: f64,
    pub stop_reason: String,
}

/// Running state shared between the batch callback and the epoch loop.
struct Session<'a> {
    config: &'a RunConfig,
    checkpoint: &'a Path,
    val: Vec<TrainSample>,
    log: Report,
    best: Option<(f64, f64)>,
    window_loss: f64,
    window_count: usize,
    window_skipped: usize,
    skipped: usize,
    started: ProcessTime,
    stop: Option<String>,
}

impl Session<'_> {
    fn record(&mut self, stats: &BatchStats) {
        self.window_loss += stats.per_sample.iter().flatten().sum::<f64>();
        self.window_count += stats.per_sample.iter().flatten().count();
        self.window_skipped += stats.skipped;
        self.skipped += stats.skipped;
    }

    /// Validates, logs a row and keeps the checkpoint if it is the best so far.
    fn checkpoint_row(&mut self, trainer: &Trainer, epoch: usize) -> Outcome {
        let val = evaluate(&trainer.model, &self.val, self.config.batch_size)?;
        let better = match self.best {
            None => true,
            Some((acc, loss)) => val.accuracy() > acc || (val.accuracy() == acc && val.mean_loss < loss),
        };
        if better {
            self.best = Some((val.accuracy(), val.mean_loss));
            write_checkpoint(self.checkpoint, &trainer.model, trainer.step, &trainer.optimizer_slots())?;
        }
        let train_loss = if self.window_count > 0 {
            self.window_loss / self.window_count as f64
        } else {
            f64::NAN
        };
        self.log.row(&[
            epoch.to_string(),
            trainer.step.to_string(),
            real(train_loss),
            self.window_skipped.to_string(),
            real(val.accuracy()),
            real(val.mean_edit_distance()),
            real(val.mean_loss),
            u8::from(better).to_string(),
        ])?;
        progress(epoch, trainer.step, train_loss, &val);
        (self.window_loss, self.window_count, self.window_skipped) = (0.0, 0, 0);
        if let Some(target) = self.config.target_accuracy {
            if val.accuracy() >= target && self.stop.is_none() {
                self.stop = Some(format!("validation accuracy reached {target}"));
            }
        }
        Ok(())
    }

    fn limits_reached(&mut self, step: u64) -> bool {
        if let Some(max) = self.config.max_steps {
            if step >= max {
                self.stop.get_or_insert_with(|| format!("step limit {max} reached"));
            }
        }
        if let Some(budget) = self.config.cpu_budget {
            if self.started.elapsed().as_secs_f64() >= budget {
                self.stop.get_or_insert_with(|| format!("cpu budget of {budget} s spent"));
            }
        }
        self.stop.is_some()
    }
}

fn progress(epoch: usize, step: u64, loss: f64, val: &EvalStats) {
    eprintln!(
        "epoch {epoch} step {step}: train loss {loss:.4}, val accuracy {:.4}, val loss {:.4}",
        val.accuracy(),
        val.mean_loss
    );
}

/// Trains a fresh model on the training split of `--dataset`, logging one
/// row per validation and keeping the best-validation checkpoint.
pub fn train(config: &RunConfig) -> Outcome<TrainSummary> {
    let dir = config.require_dataset()?;
    let checkpoint = config.require_checkpoint()?;
    let dataset = load_dataset(dir)?;
    let alphabet = dataset.spec.alphabet.clone();
    if let Some(a) = &config.alphabet {
        same_alphabet(a, &alphabet, "the dataset")?;
    }
    let model_config = ModelConfig::preset(&config.preset, alphabet)?;
    model_config.validate()?;
    let frames = model_config.frames_for_width(config.train_width).ok_or_else(|| {
        Failure::usage(format!(
            "training width {} is below the {} pixels the {} preset needs",
            config.train_width,
            model_config.min_width(),
            config.preset
        ))
    })?;
    if dataset.spec.max_len > frames {
        return Err(Failure::usage(format!(
            "labels of up to {} symbols cannot be aligned to the {frames} frames of a {}-pixel input",
            dataset.spec.max_len, config.train_width
        )));
    }
    let train: Vec<TrainSample> = dataset
        .split(Split::Train)
        .map(|s| {
            Ok(TrainSample {
                image: normalize_to_width(&s.image.to_tensor(), config.train_width)?,
                label: s.label.clone(),
            })
        })
        .collect::<Outcome<_>>()?;
    let val = eval_samples(&dataset, Split::Validation, config.val_limit)?;
    if train.is_empty() || val.is_empty() {
        return Err(Failure::usage(format!(
            "dataset {} has {} training and {} validation samples; both must be non-empty",
            dir.display(),
            train.len(),
            val.len()
        )));
    }
    let mut trainer = Trainer::new(Model::build(&model_config, config.seed)?, &config.optimizer)?;
    eprintln!(
        "training {} preset ({} parameters) on {} samples, validating on {}",
        config.preset,
        trainer.model.num_parameters(),
        train.len(),
        val.len()
    );

    let mut session = Session {
        config,
        checkpoint,
        val,
        log: Report::open(config.report.as_deref(), TRAIN_HEADER)?,
        best: None,
        window_loss: 0.0,
        window_count: 0,
        window_skipped: 0,
        skipped: 0,
        started: ProcessTime::now(),
        stop: None,
    };
    let mut epoch_losses = Vec::new();
    let mut epochs = 0;
    for epoch in 1..=config.epochs {
        epochs = epoch;
        let mut failure = None;
        let mut rng = epoch_rng(config.seed, epoch - 1);
        let stats = trainer.run_epoch(&train, config.batch_size, &mut rng, |trainer, stats| {
            session.record(stats);
            if let Some(every) = config.validate_every {
                if trainer.step % every == 0 {
                    if let Err(e) = session.checkpoint_row(trainer, epoch) {
                        failure = Some(e);
                        return ControlFlow::Break(());
                    }
                }
            }
            if session.limits_reached(trainer.step) {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        epoch_losses.push(stats.mean_loss);
        if session.window_count + session.window_skipped > 0 {
            session.checkpoint_row(&trainer, epoch)?;
        }
        if let Some(target) = config.target_loss {
            if stats.mean_loss <= target {
                session.stop.get_or_insert_with(|| format!("training loss reached {target}"));
            }
        }
        if session.stop.is_some() {
            break;
        }
    }
    let (best_accuracy, best_loss) = session.best.expect("at least one validation ran");
    let summary = TrainSummary {
        epochs,
        steps: trainer.step,
        best_accuracy,
        best_loss,
        epoch_losses,
        skipped: session.skipped,
        cpu_seconds: session.started.elapsed().as_secs_f64(),
        stop_reason: session.stop.unwrap_or_else(|| "epoch limit reached".into()),
    };
    eprintln!(
        "stopped after {} epochs, {} steps ({}); best val accuracy {:.4}; {} infeasible targets skipped; {:.1} cpu s",
        summary.epochs,
        summary.steps,
        summary.stop_reason,
        summary.best_accuracy,
        summary.skipped,
        summary.cpu_seconds
    );
    Ok(summary)
}
