//! Datasets of rendered samples: planning, and the on-disk layout of PGM
//! images plus a TSV manifest.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{random_label, render, GlyphAtlas, RenderParams, DEFAULT_MAX_LEN};
use crate::alphabet::{Alphabet, LabelSequence};
use crate::error::{Error, Result};
use crate::model::parse_pairs;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const SPEC_FILE: &str = "dataset.cfg";
const MANIFEST_HEADER: &str = "filename\tlabel\tsplit\tseed";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-sample seed derived from the dataset seed and the sample index.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    splitmix64(seed ^ splitmix64(index as u64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => Err(Error::Data(format!("unknown split {s:?}"))),
        }
    }
}

/// Everything that determines a generated dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub n: usize,
    pub alphabet: Alphabet,
    pub min_len: usize,
    pub max_len: usize,
    pub params: RenderParams,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn new(n: usize, alphabet: Alphabet, seed: u64) -> Self {
        DatasetSpec {
            n,
            alphabet,
            min_len: 1,
            max_len: DEFAULT_MAX_LEN,
            params: RenderParams::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::usage("dataset needs at least one sample"));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "label lengths {}..={} are empty or start at zero",
                self.min_len, self.max_len
            )));
        }
        if self.max_len > self.params.max_len {
            return Err(Error::Config(format!(
                "max_len {} exceeds the renderer limit {}",
                self.max_len, self.params.max_len
            )));
        }
        self.params.validate()?;
        GlyphAtlas::for_alphabet(&self.alphabet)?;
        Ok(())
    }

    /// Canonical `key = value` text.
    pub fn to_text(&self) -> String {
        let p = &self.params;
        format!(
            "n = {}\nseed = {}\nalphabet = {}\ncase_insensitive = {}\nmin_len = {}\nmax_len = {}\n\
             noise_sigma = {}\nmax_rotation_deg = {}\nscale_jitter = {}\nbackground_shift = {}\n\
             spacing_jitter = {}\nvertical_jitter = {}\n",
            self.n,
            self.seed,
            self.alphabet.symbols(),
            self.alphabet.is_case_insensitive(),
            self.min_len,
            self.max_len,
            p.noise_sigma,
            p.max_rotation_deg,
            p.scale_jitter,
            p.background_shift,
            p.spacing_jitter,
            p.vertical_jitter,
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut spec = DatasetSpec::new(1, Alphabet::alphanumeric(), 0);
        let (mut symbols, mut folded) = (None, false);
        let num = |k: &str, v: &str| -> Result<f64> {
            v.parse().map_err(|_| Error::Config(format!("{k}: cannot parse {v:?}")))
        };
        for (k, v) in parse_pairs(text)? {
            match k.as_str() {
                "n" => spec.n = num(&k, &v)? as usize,
                "seed" => spec.seed = v.parse().map_err(|_| Error::Config(format!("seed: {v:?}")))?,
                "alphabet" => symbols = Some(v),
                "case_insensitive" => folded = v == "true",
                "min_len" => spec.min_len = num(&k, &v)? as usize,
                "max_len" => spec.max_len = num(&k, &v)? as usize,
                "noise_sigma" => spec.params.noise_sigma = num(&k, &v)?,
                "max_rotation_deg" => spec.params.max_rotation_deg = num(&k, &v)?,
                "scale_jitter" => spec.params.scale_jitter = num(&k, &v)?,
                "background_shift" => spec.params.background_shift = num(&k, &v)?,
                "spacing_jitter" => spec.params.spacing_jitter = num(&k, &v)? as usize,
                "vertical_jitter" => spec.params.vertical_jitter = num(&k, &v)? as usize,
                _ => return Err(Error::Config(format!("unknown dataset key {k:?}"))),
            }
        }
        if let Some(s) = symbols {
            spec.alphabet = Alphabet::new(&s, folded)?;
        }
        spec.params.max_len = spec.params.max_len.max(spec.max_len);
        Ok(spec)
    }
}

/// Label, seed and split of one sample, before rendering.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplePlan {
    pub index: usize,
    pub label: LabelSequence,
    pub seed: u64,
    pub split: Split,
}

impl SamplePlan {
    pub fn filename(&self) -> String {
        format!("{:06}.pgm", self.index)
    }
}

/// Labels and splits for every sample. The split ranks indices by a
/// seeded hash: the first `⌊0.8n⌋` go to training, the next `⌊0.1n⌋` to
/// validation, the rest to test.
pub fn plan_dataset(spec: &DatasetSpec) -> Result<Vec<SamplePlan>> {
    spec.validate()?;
    let mut order: Vec<usize> = (0..spec.n).collect();
    order.sort_by_key(|&i| (splitmix64(spec.seed.rotate_left(17) ^ i as u64), i));
    let n_train = spec.n * 8 / 10;
    let n_val = spec.n / 10;
    let mut split = vec![Split::Test; spec.n];
    for (rank, &i) in order.iter().enumerate() {
        if rank < n_train {
            split[i] = Split::Train;
        } else if rank < n_train + n_val {
            split[i] = Split::Validation;
        }
    }
    Ok((0..spec.n)
        .map(|index| {
            let seed = sample_seed(spec.seed, index);
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed));
            SamplePlan {
                index,
                label: random_label(&spec.alphabet, spec.min_len, spec.max_len, &mut rng),
                seed,
                split: split[index],
            }
        })
        .collect())
}

/// An 8-bit grayscale image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Quantizes a `[1,H,W]` tensor with values in `[0, 1]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (height, width) = match *t.shape() {
            [1, h, w] | [h, w] => (h, w),
            _ => return Err(Error::dim(format!("expected a [1,H,W] image, got {:?}", t.shape()))),
        };
        let pixels = t
            .data()
            .iter()
            .map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Ok(GrayImage { width, height, pixels })
    }

    /// `[1,H,W]` with values in `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.pixels.iter().map(|&p| p as f64 / 255.0).collect();
        Tensor::new(&[1, self.height, self.width], data).expect("consistent extents")
    }
}

/// Writes a binary PGM.
pub fn write_gray(path: &Path, image: &GrayImage) -> Result<()> {
    use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
    use image::{ColorType, ImageEncoder};
    let file = fs::File::create(path).map_err(|e| Error::storage(path, e))?;
    PnmEncoder::new(BufWriter::new(file))
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&image.pixels, image.width as u32, image.height as u32, ColorType::L8)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Reads any supported image (PGM, PNG) as grayscale.
pub fn read_gray(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::storage(path, e))?;
    let img = image::load_from_memory(&bytes)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .to_luma8();
    Ok(GrayImage {
        width: img.width() as usize,
        height: img.height() as usize,
        pixels: img.into_raw(),
    })
}

/// A rendered sample as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub filename: String,
    pub label: LabelSequence,
    pub split: Split,
    pub seed: u64,
    pub image: GrayImage,
}

/// Samples of one generated dataset.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Renders the dataset in memory.
    pub fn generate(spec: &DatasetSpec) -> Result<Self> {
        let atlas = GlyphAtlas::for_alphabet(&spec.alphabet)?;
        let samples = plan_dataset(spec)?
            .into_iter()
            .map(|p| {
                let rec = render(&atlas, &p.label, p.seed, &spec.params)?;
                Ok(Sample {
                    filename: p.filename(),
                    label: p.label,
                    split: p.split,
                    seed: p.seed,
                    image: GrayImage::from_tensor(&rec.image)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            spec: spec.clone(),
            samples,
        })
    }

    /// Reads a dataset directory written by [`write_dataset`].
    pub fn load(dir: &Path) -> Result<Self> {
        let spec_path = dir.join(SPEC_FILE);
        let text = fs::read_to_string(&spec_path).map_err(|e| Error::storage(&spec_path, e))?;
        let spec = DatasetSpec::from_text(&text).map_err(|e| Error::Data(format!("{}: {e}", spec_path.display())))?;
        let manifest = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest).map_err(|e| Error::storage(&manifest, e))?;
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_HEADER) {
            return Err(Error::Data(format!("{}: missing header row", manifest.display())));
        }
        let bad = |n: usize, what: &str| Error::Data(format!("{} line {}: {what}", manifest.display(), n + 2));
        let mut samples = Vec::new();
        for (n, line) in lines.enumerate() {
            let cols: Vec<&str> = line.split('\t').collect();
            let [filename, label, split, seed] = cols[..] else {
                return Err(bad(n, "expected 4 columns"));
            };
            let label = spec.alphabet.encode(label).map_err(|e| bad(n, &e.to_string()))?;
            let seed = seed.parse().map_err(|_| bad(n, "bad seed"))?;
            samples.push(Sample {
                filename: filename.to_string(),
                label,
                split: split.parse()?,
                seed,
                image: read_gray(&dir.join(filename))?,
            });
        }
        Ok(Dataset { spec, samples })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> + '_ {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }
}

/// Renders `spec` into `dir` (created if needed): one PGM per sample, the
/// manifest, and the generating spec. Returns the plan.
pub fn write_dataset(dir: &Path, spec: &DatasetSpec) -> Result<Vec<SamplePlan>> {
    let plan = plan_dataset(spec)?;
    let atlas = GlyphAtlas::for_alphabet(&spec.alphabet)?;
    fs::create_dir_all(dir).map_err(|e| Error::storage(dir, e))?;
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    for p in &plan {
        let rec = render(&atlas, &p.label, p.seed, &spec.params)?;
        write_gray(&dir.join(p.filename()), &GrayImage::from_tensor(&rec.image)?)?;
        manifest.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            p.filename(),
            spec.alphabet.decode(&p.label),
            p.split,
            p.seed
        ));
    }
    write_text(&dir.join(MANIFEST_FILE), &manifest)?;
    write_text(&dir.join(SPEC_FILE), &spec.to_text())?;
    Ok(plan)
}

fn write_text(path: &PathBuf, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::storage(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::storage(path, e))
}
