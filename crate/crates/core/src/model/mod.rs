//! The assembled network: convolutional feature extractor, Map-to-Sequence
//! bridge, recurrent layers, and the per-frame class projection.

mod checkpoint;
mod config;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{BatchNormMode, Conv2dParams, Graph, Pool2dParams, RunningStats, Var};
use crate::ctc::FrameDistributions;
use crate::error::{Error, Result};
use crate::layers::{xavier_uniform, BiLstm, BoundParams, LstmCell, ParamId, ParamStore};
use crate::tensor::Tensor;

pub use checkpoint::{
    decode as decode_checkpoint, encode as encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{parse_pairs, Geometry, Layer, ModelConfig, DEFAULT_INPUT_HEIGHT};

#[derive(Clone, Debug)]
enum Stage {
    Conv { weight: ParamId, bias: ParamId, params: Conv2dParams },
    BatchNorm { gamma: ParamId, beta: ParamId, slot: usize },
    Relu,
    Pool(Pool2dParams),
    MapToSequence,
    Lstm(LstmCell),
    BiLstm(BiLstm),
    Projection { weight: ParamId, bias: ParamId },
}

/// A runnable network built from a [`ModelConfig`].
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    stages: Vec<Stage>,
    running: Vec<RunningStats>,
    bn_names: Vec<String>,
}

impl Model {
    /// Builds the network with weights drawn from a generator seeded by `seed`.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        let geom = config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut stages = Vec::with_capacity(config.layers.len());
        let mut running = Vec::new();
        let mut bn_names = Vec::new();
        let (mut channels, mut width) = (1usize, geom.frame_width);
        let (mut convs, mut lstms) = (0, 0);
        for layer in &config.layers {
            let stage = match *layer {
                Layer::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    convs += 1;
                    let area = kernel.0 * kernel.1;
                    let weight = params.add(
                        format!("conv{convs}.weight"),
                        xavier_uniform(
                            &[out_channels, channels, kernel.0, kernel.1],
                            channels * area,
                            out_channels * area,
                            &mut rng,
                        ),
                    );
                    let bias = params.add(format!("conv{convs}.bias"), Tensor::zeros(&[out_channels]));
                    channels = out_channels;
                    Stage::Conv {
                        weight,
                        bias,
                        params: Conv2dParams::new(stride, padding),
                    }
                }
                Layer::BatchNorm => {
                    let name = format!("bn{}", running.len() + 1);
                    let gamma = params.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0));
                    let beta = params.add(format!("{name}.beta"), Tensor::zeros(&[channels]));
                    running.push(RunningStats::standard(channels));
                    bn_names.push(name);
                    Stage::BatchNorm {
                        gamma,
                        beta,
                        slot: running.len() - 1,
                    }
                }
                Layer::Relu => Stage::Relu,
                Layer::MaxPool { window, stride } => Stage::Pool(Pool2dParams::new(window, stride)),
                Layer::MapToSequence => Stage::MapToSequence,
                Layer::Lstm { hidden, bidirectional } => {
                    lstms += 1;
                    let prefix = format!("lstm{lstms}");
                    if bidirectional {
                        let bi = BiLstm::new(&mut params, &prefix, width, hidden, &mut rng);
                        width = bi.output_size();
                        Stage::BiLstm(bi)
                    } else {
                        let cell = LstmCell::new(&mut params, &prefix, width, hidden, &mut rng);
                        width = hidden;
                        Stage::Lstm(cell)
                    }
                }
                Layer::Projection => {
                    let k = config.num_classes();
                    let weight = params.add("proj.weight", xavier_uniform(&[width, k], width, k, &mut rng));
                    let bias = params.add("proj.bias", Tensor::zeros(&[k]));
                    Stage::Projection { weight, bias }
                }
            };
            stages.push(stage);
        }
        Ok(Model {
            config: config.clone(),
            params,
            stages,
            running,
            bn_names,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.running
    }

    pub fn set_running_stats(&mut self, stats: Vec<RunningStats>) -> Result<()> {
        if stats.len() != self.running.len()
            || stats.iter().zip(&self.running).any(|(a, b)| a.channels() != b.channels())
        {
            return Err(Error::dim("running statistics do not match the model"));
        }
        self.running = stats;
        Ok(())
    }

    pub(crate) fn bn_names(&self) -> &[String] {
        &self.bn_names
    }

    pub fn frames_for_width(&self, width: usize) -> Option<usize> {
        self.config.frames_for_width(width)
    }

    fn check_images(&self, shape: &[usize]) -> Result<(usize, usize)> {
        let [n, 1, h, w] = *shape else {
            return Err(Error::dim(format!("expected [N,1,H,W] images, got {shape:?}")));
        };
        if h != self.config.input_height {
            return Err(Error::dim(format!(
                "image height {h}, model expects {}",
                self.config.input_height
            )));
        }
        match self.frames_for_width(w) {
            Some(t) if t >= 1 => Ok((n, t)),
            _ => Err(Error::dim(format!(
                "image width {w} is below the minimum {}",
                self.config.min_width()
            ))),
        }
    }

    /// Class scores for `[N,1,H,W]` images as a `[T·N, K]` matrix, rows
    /// `t·N..t·N+N` holding frame `t`. With `train` set, batch norm uses
    /// batch statistics and folds them into the given running statistics;
    /// otherwise the model's running statistics are used.
    pub fn logits<'g>(
        &self,
        params: &BoundParams<'g>,
        images: Var<'g>,
        mut train: Option<&mut [RunningStats]>,
    ) -> Result<Var<'g>> {
        let (batch, _) = self.check_images(&images.shape())?;
        let mut x = images;
        for stage in &self.stages {
            x = match stage {
                Stage::Conv { weight, bias, params: p } => {
                    x.conv2d(params.var(*weight), Some(params.var(*bias)), *p)?
                }
                Stage::BatchNorm { gamma, beta, slot } => {
                    let mode = match train.as_deref_mut() {
                        Some(stats) => BatchNormMode::Train(&mut stats[*slot]),
                        None => BatchNormMode::Infer(&self.running[*slot]),
                    };
                    x.batchnorm(params.var(*gamma), params.var(*beta), mode)?
                }
                Stage::Relu => x.relu(),
                Stage::Pool(p) => x.maxpool2d(*p)?,
                Stage::MapToSequence => x.map_to_sequence()?,
                Stage::Lstm(cell) => cell.run(params, x, batch, false)?,
                Stage::BiLstm(bi) => bi.run(params, x, batch)?,
                Stage::Projection { weight, bias } => {
                    x.matmul(params.var(*weight))?.add_row_bias(params.var(*bias))?
                }
            };
        }
        Ok(x)
    }

    /// Frame sequence entering the recurrent layers, `[T·N, C·H]`, computed
    /// in inference mode.
    pub fn feature_sequence(&self, images: &Tensor) -> Result<Tensor> {
        self.check_images(images.shape())?;
        let g = Graph::new();
        let bound = self.params.bind(&g, false);
        let mut x = g.constant(images.clone());
        for stage in &self.stages {
            x = match stage {
                Stage::Conv { weight, bias, params: p } => {
                    x.conv2d(bound.var(*weight), Some(bound.var(*bias)), *p)?
                }
                Stage::BatchNorm { gamma, beta, slot } => x.batchnorm(
                    bound.var(*gamma),
                    bound.var(*beta),
                    BatchNormMode::Infer(&self.running[*slot]),
                )?,
                Stage::Relu => x.relu(),
                Stage::Pool(p) => x.maxpool2d(*p)?,
                Stage::MapToSequence => return Ok(x.map_to_sequence()?.value().clone()),
                _ => unreachable!("validated stack reaches the bridge first"),
            };
        }
        unreachable!("validated stack contains the bridge")
    }

    /// Inference on `[N,1,H,W]` images.
    pub fn forward_batch(&self, images: &Tensor) -> Result<Vec<FrameDistributions>> {
        let (batch, frames) = self.check_images(images.shape())?;
        let g = Graph::new();
        let bound = self.params.bind(&g, false);
        let logits = self.logits(&bound, g.constant(images.clone()), None)?;
        let logits = logits.value();
        let k = self.config.num_classes();
        (0..batch)
            .map(|n| {
                let sample = Tensor::from_fn(&[frames, k], |i| {
                    let (t, c) = (i / k, i % k);
                    logits.data()[(t * batch + n) * k + c]
                });
                FrameDistributions::from_logits(&sample)
            })
            .collect()
    }

    /// Inference on one `[1,H,W]` image.
    pub fn forward(&self, image: &Tensor) -> Result<FrameDistributions> {
        let shape = image.shape().to_vec();
        let batched = match *shape.as_slice() {
            [1, h, w] => image.clone().reshape(&[1, 1, h, w])?,
            [h, w] => image.clone().reshape(&[1, 1, h, w])?,
            _ => return Err(Error::dim(format!("expected a [1,H,W] image, got {shape:?}"))),
        };
        Ok(self.forward_batch(&batched)?.remove(0))
    }
}
