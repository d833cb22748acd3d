//! Layer-stack descriptions, presets, and their canonical `key = value` text.
//!
//! Spatial pairs are written height first: `pool 2x1 2x1` halves the height
//! and keeps the width.

use std::fmt::{self, Write as _};

use crate::alphabet::Alphabet;
use crate::autodiff::{Conv2dParams, Pool2dParams};
use crate::error::{Error, Result};

pub const DEFAULT_INPUT_HEIGHT: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    Conv {
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    },
    BatchNorm,
    Relu,
    MaxPool {
        window: (usize, usize),
        stride: (usize, usize),
    },
    MapToSequence,
    Lstm {
        hidden: usize,
        bidirectional: bool,
    },
    /// Affine map from the last recurrent output to the |L′| class scores.
    Projection,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub preset: String,
    pub alphabet: Alphabet,
    pub input_height: usize,
    pub layers: Vec<Layer>,
}

/// Shape facts derived from a validated config.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    /// Channels × height of each frame handed to the recurrent layers.
    pub frame_width: usize,
    pub conv_layers: usize,
}

fn conv(out_channels: usize, k: usize, p: usize) -> Layer {
    Layer::Conv {
        out_channels,
        kernel: (k, k),
        stride: (1, 1),
        padding: (p, p),
    }
}

const SQUARE_POOL: Layer = Layer::MaxPool {
    window: (2, 2),
    stride: (2, 2),
};

/// Halves the height, keeps the width.
const TALL_POOL: Layer = Layer::MaxPool {
    window: (2, 1),
    stride: (2, 1),
};

fn stack(channels: [usize; 7], hidden: usize, bidirectional: bool, lstm_layers: usize) -> Vec<Layer> {
    use Layer::*;
    let [c1, c2, c3, c4, c5, c6, c7] = channels;
    let mut layers = vec![
        conv(c1, 3, 1),
        Relu,
        SQUARE_POOL,
        conv(c2, 3, 1),
        Relu,
        SQUARE_POOL,
        conv(c3, 3, 1),
        Relu,
        conv(c4, 3, 1),
        Relu,
        TALL_POOL,
        conv(c5, 3, 1),
        BatchNorm,
        Relu,
        conv(c6, 3, 1),
        BatchNorm,
        Relu,
        TALL_POOL,
        conv(c7, 2, 0),
        Relu,
        MapToSequence,
    ];
    layers.extend((0..lstm_layers).map(|_| Lstm {
        hidden,
        bidirectional,
    }));
    layers.push(Projection);
    layers
}

/// Removes the 4th and 6th convolutions (and the ReLU/batch norm attached
/// to the 6th) from a seven-convolution stack.
fn drop_fourth_and_sixth(layers: Vec<Layer>) -> Vec<Layer> {
    let mut out = Vec::with_capacity(layers.len());
    let mut conv_index = 0;
    let mut skipping = false;
    for layer in layers {
        match layer {
            Layer::Conv { .. } => {
                conv_index += 1;
                skipping = conv_index == 4 || conv_index == 6;
                if !skipping {
                    out.push(layer);
                }
            }
            Layer::BatchNorm | Layer::Relu if skipping => {}
            _ => {
                skipping = false;
                out.push(layer);
            }
        }
    }
    out
}

impl ModelConfig {
    /// The seven-convolution, two bidirectional LSTM layer network.
    pub fn standard(alphabet: Alphabet) -> Self {
        ModelConfig {
            preset: "standard".into(),
            alphabet,
            input_height: DEFAULT_INPUT_HEIGHT,
            layers: stack([64, 128, 256, 256, 512, 512, 512], 256, true, 2),
        }
    }

    /// Five convolutions and two unidirectional LSTM layers.
    pub fn simplified(alphabet: Alphabet) -> Self {
        let mut layers = drop_fourth_and_sixth(stack([64, 128, 256, 256, 512, 512, 512], 256, false, 2));
        layers.iter_mut().for_each(|l| {
            if let Layer::Lstm { bidirectional, .. } = l {
                *bidirectional = false;
            }
        });
        ModelConfig {
            preset: "simplified".into(),
            alphabet,
            input_height: DEFAULT_INPUT_HEIGHT,
            layers,
        }
    }

    /// Standard topology at a fraction of the width, for fast experiments.
    pub fn toy(alphabet: Alphabet) -> Self {
        ModelConfig {
            preset: "toy".into(),
            alphabet,
            input_height: DEFAULT_INPUT_HEIGHT,
            layers: stack([8, 16, 32, 32, 64, 64, 64], 32, true, 2),
        }
    }

    pub fn preset(name: &str, alphabet: Alphabet) -> Result<Self> {
        match name {
            "standard" => Ok(Self::standard(alphabet)),
            "simplified" => Ok(Self::simplified(alphabet)),
            "toy" => Ok(Self::toy(alphabet)),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.alphabet.num_classes()
    }

    pub fn conv_layers(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, Layer::Conv { .. })).count()
    }

    /// Checks layer ordering and that the feature map reaching the
    /// Map-to-Sequence bridge is exactly one row tall.
    pub fn validate(&self) -> Result<Geometry> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.layers.last() != Some(&Layer::Projection) {
            return bad("layer stack must end with the class projection".into());
        }
        let Some(bridge) = self.layers.iter().position(|l| *l == Layer::MapToSequence) else {
            return bad("layer stack has no Map-to-Sequence bridge".into());
        };
        let (mut channels, mut height) = (1usize, self.input_height);
        if height == 0 {
            return bad("input height must be positive".into());
        }
        let mut seen_conv = false;
        for (i, layer) in self.layers[..bridge].iter().enumerate() {
            match *layer {
                Layer::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    if out_channels == 0 || kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
                        return bad(format!("layer {i}: degenerate convolution"));
                    }
                    height = match Conv2dParams::out_extent(height, kernel.0, stride.0, padding.0) {
                        Some(h) => h,
                        None => return bad(format!("layer {i}: convolution taller than its input")),
                    };
                    channels = out_channels;
                    seen_conv = true;
                }
                Layer::MaxPool { window, stride } => {
                    if window.0 == 0 || window.1 == 0 || stride.0 == 0 || stride.1 == 0 {
                        return bad(format!("layer {i}: degenerate pooling"));
                    }
                    height = match Pool2dParams::out_extent(height, window.0, stride.0) {
                        Some(h) => h,
                        None => return bad(format!("layer {i}: pooling window taller than its input")),
                    };
                }
                Layer::BatchNorm if !seen_conv => {
                    return bad(format!("layer {i}: batch norm before any convolution"));
                }
                Layer::BatchNorm | Layer::Relu => {}
                _ => return bad(format!("layer {i}: {layer} not allowed before the bridge")),
            }
        }
        if !seen_conv {
            return bad("no convolution before the bridge".into());
        }
        if height != 1 {
            return bad(format!(
                "feature map height at the bridge is {height}, must be 1 for input height {}",
                self.input_height
            ));
        }
        for (i, layer) in self.layers[bridge + 1..self.layers.len() - 1].iter().enumerate() {
            match layer {
                Layer::Lstm { hidden, .. } if *hidden > 0 => {}
                other => return bad(format!("layer {}: {other} not allowed after the bridge", bridge + 1 + i)),
            }
        }
        Ok(Geometry {
            frame_width: channels * height,
            conv_layers: self.conv_layers(),
        })
    }

    /// Frames produced for an input `width` pixels wide, or `None` when the
    /// image is too narrow.
    pub fn frames_for_width(&self, width: usize) -> Option<usize> {
        let mut w = width;
        for layer in &self.layers {
            match *layer {
                Layer::Conv {
                    kernel,
                    stride,
                    padding,
                    ..
                } => w = Conv2dParams::out_extent(w, kernel.1, stride.1, padding.1)?,
                Layer::MaxPool { window, stride } => w = Pool2dParams::out_extent(w, window.1, stride.1)?,
                Layer::MapToSequence => break,
                _ => {}
            }
        }
        Some(w)
    }

    /// Smallest width that yields at least one frame.
    pub fn min_width(&self) -> usize {
        (1..4096).find(|&w| self.frames_for_width(w).is_some()).unwrap_or(usize::MAX)
    }

    /// Trainable scalar count (running batch-norm statistics excluded).
    pub fn num_parameters(&self) -> Result<usize> {
        let geom = self.validate()?;
        let mut channels = 1;
        let mut width = geom.frame_width;
        let mut total = 0;
        let mut after_bridge = false;
        for layer in &self.layers {
            match *layer {
                Layer::Conv {
                    out_channels, kernel, ..
                } => {
                    total += out_channels * channels * kernel.0 * kernel.1 + out_channels;
                    channels = out_channels;
                }
                Layer::BatchNorm => total += 2 * channels,
                Layer::MapToSequence => after_bridge = true,
                Layer::Lstm { hidden, bidirectional } => {
                    debug_assert!(after_bridge);
                    let dirs = if bidirectional { 2 } else { 1 };
                    total += dirs * 4 * (width * hidden + hidden * hidden + hidden);
                    width = dirs * hidden;
                }
                Layer::Projection => total += width * self.num_classes() + self.num_classes(),
                Layer::Relu | Layer::MaxPool { .. } => {}
            }
        }
        Ok(total)
    }

    /// Canonical text; parsing it back yields an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "preset = {}", self.preset);
        let _ = writeln!(s, "alphabet = {}", self.alphabet.symbols());
        let _ = writeln!(s, "case_insensitive = {}", self.alphabet.is_case_insensitive());
        let _ = writeln!(s, "input_height = {}", self.input_height);
        for layer in &self.layers {
            let _ = writeln!(s, "layer = {layer}");
        }
        s
    }

    /// 64-bit FNV-1a of [`ModelConfig::to_text`].
    pub fn digest(&self) -> u64 {
        fnv1a(self.to_text().as_bytes())
    }

    /// Reads a model description from `key = value` lines.
    ///
    /// Recognized keys: `preset`, `alphabet`, `case_insensitive`,
    /// `input_height`, `hidden`, `bidirectional`, `conv_channels`, and
    /// repeated `layer` lines, which replace the preset's stack. Unknown keys
    /// are returned for the caller to interpret.
    pub fn from_text(text: &str) -> Result<(Self, Vec<(String, String)>)> {
        let mut preset = "standard".to_string();
        let mut alphabet_spec: Option<String> = None;
        let mut case_insensitive: Option<bool> = None;
        let mut input_height = DEFAULT_INPUT_HEIGHT;
        let mut hidden = None;
        let mut bidirectional = None;
        let mut conv_channels: Option<Vec<usize>> = None;
        let mut layers = Vec::new();
        let mut rest = Vec::new();
        for (key, value) in parse_pairs(text)? {
            match key.as_str() {
                "preset" => preset = value,
                "alphabet" => alphabet_spec = Some(value),
                "case_insensitive" => case_insensitive = Some(parse_bool(&key, &value)?),
                "input_height" => input_height = parse_num(&key, &value)?,
                "hidden" => hidden = Some(parse_num(&key, &value)?),
                "bidirectional" => bidirectional = Some(parse_bool(&key, &value)?),
                "conv_channels" => {
                    conv_channels = Some(
                        value
                            .split(',')
                            .map(|v| parse_num(&key, v.trim()))
                            .collect::<Result<_>>()?,
                    )
                }
                "layer" => layers.push(value.parse::<Layer>()?),
                _ => rest.push((key, value)),
            }
        }
        let alphabet = match (alphabet_spec.as_deref(), case_insensitive) {
            (None, None) => Alphabet::alphanumeric(),
            (None, Some(ci)) => Alphabet::new(&Alphabet::alphanumeric().symbols(), ci)?,
            (Some(spec @ ("digits" | "alnum")), None) => Alphabet::parse(spec)?,
            (Some(spec), ci) => Alphabet::new(spec, ci.unwrap_or(false))?,
        };
        let mut config = if layers.is_empty() {
            Self::preset(&preset, alphabet)?
        } else {
            ModelConfig {
                preset,
                alphabet,
                input_height,
                layers,
            }
        };
        config.input_height = input_height;
        if let Some(chans) = conv_channels {
            let convs: Vec<&mut Layer> = config
                .layers
                .iter_mut()
                .filter(|l| matches!(l, Layer::Conv { .. }))
                .collect();
            if convs.len() != chans.len() {
                return Err(Error::Config(format!(
                    "conv_channels lists {} values for {} convolutions",
                    chans.len(),
                    convs.len()
                )));
            }
            for (layer, c) in convs.into_iter().zip(chans) {
                if let Layer::Conv { out_channels, .. } = layer {
                    *out_channels = c;
                }
            }
        }
        for layer in config.layers.iter_mut() {
            if let Layer::Lstm {
                hidden: h,
                bidirectional: b,
            } = layer
            {
                *h = hidden.unwrap_or(*h);
                *b = bidirectional.unwrap_or(*b);
            }
        }
        config.validate()?;
        Ok((config, rest))
    }
}

/// Splits `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected `key = value`", n + 1)));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub(crate) fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn pair(p: (usize, usize)) -> String {
    format!("{}x{}", p.0, p.1)
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Layer::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            } => write!(f, "conv {out_channels} {} {} {}", pair(kernel), pair(stride), pair(padding)),
            Layer::BatchNorm => write!(f, "batchnorm"),
            Layer::Relu => write!(f, "relu"),
            Layer::MaxPool { window, stride } => write!(f, "pool {} {}", pair(window), pair(stride)),
            Layer::MapToSequence => write!(f, "map_to_sequence"),
            Layer::Lstm { hidden, bidirectional } => {
                write!(f, "lstm {hidden} {}", if bidirectional { "bi" } else { "uni" })
            }
            Layer::Projection => write!(f, "projection"),
        }
    }
}

impl std::str::FromStr for Layer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let bad = || Error::Config(format!("cannot parse layer {s:?}"));
        let num = |v: &str| v.parse::<usize>().map_err(|_| bad());
        let pair = |v: &str| -> Result<(usize, usize)> {
            let (a, b) = v.split_once('x').ok_or_else(bad)?;
            Ok((num(a)?, num(b)?))
        };
        match parts.as_slice() {
            ["conv", c, k, st, p] => Ok(Layer::Conv {
                out_channels: num(c)?,
                kernel: pair(k)?,
                stride: pair(st)?,
                padding: pair(p)?,
            }),
            ["batchnorm"] => Ok(Layer::BatchNorm),
            ["relu"] => Ok(Layer::Relu),
            ["pool", w, st] => Ok(Layer::MaxPool {
                window: pair(w)?,
                stride: pair(st)?,
            }),
            ["map_to_sequence"] => Ok(Layer::MapToSequence),
            ["lstm", h, dir @ ("bi" | "uni")] => Ok(Layer::Lstm {
                hidden: num(h)?,
                bidirectional: *dir == "bi",
            }),
            ["projection"] => Ok(Layer::Projection),
            _ => Err(bad()),
        }
    }
}
