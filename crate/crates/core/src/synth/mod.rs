//! Synthetic glyph-string images and input normalization.
//!
//! Strings are drawn from a built-in 5×7 bitmap font, scaled up, spaced with
//! jitter, then perturbed by rotation, horizontal scaling, a background
//! gray-level shift and additive Gaussian noise. Text is dark on a light
//! background and pixel values lie in `[0, 1]`.

mod dataset;
mod glyphs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::alphabet::{Alphabet, LabelSequence};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use dataset::{
    plan_dataset, read_gray, sample_seed, write_dataset, write_gray, Dataset, DatasetSpec, GrayImage, Sample,
    SamplePlan, Split, MANIFEST_FILE, SPEC_FILE,
};
pub use glyphs::{GlyphAtlas, GLYPH_HEIGHT, GLYPH_WIDTH};

/// Height every network input is scaled to.
pub const INPUT_HEIGHT: usize = 32;
/// Minimum network input width.
pub const MIN_INPUT_WIDTH: usize = 100;
/// Default longest label.
pub const DEFAULT_MAX_LEN: usize = 8;

/// Pixels per glyph cell along each axis.
const CELL_SCALE: usize = 3;
/// Blank columns on either side of the string.
const MARGIN: usize = 4;
/// Gap between neighbouring glyphs before jitter.
const SPACING: usize = 3;

/// Distortion settings. [`RenderParams::clean`] disables every perturbation.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderParams {
    /// Standard deviation of the additive pixel noise.
    pub noise_sigma: f64,
    /// Rotation drawn uniformly from ±this many degrees.
    pub max_rotation_deg: f64,
    /// Horizontal scale drawn uniformly from `1 ± scale_jitter`.
    pub scale_jitter: f64,
    /// Background level drawn from `[1 − background_shift, 1]`.
    pub background_shift: f64,
    /// Extra gap drawn from `0..=spacing_jitter` columns per glyph.
    pub spacing_jitter: usize,
    /// Baseline offset drawn from `±vertical_jitter` rows.
    pub vertical_jitter: usize,
    /// Longest label accepted.
    pub max_len: usize,
}

impl Default for RenderParams {
    fn default() -> Self {
        RenderParams {
            noise_sigma: 0.05,
            max_rotation_deg: 3.0,
            scale_jitter: 0.1,
            background_shift: 0.2,
            spacing_jitter: 2,
            vertical_jitter: 2,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

impl RenderParams {
    pub fn clean() -> Self {
        RenderParams {
            noise_sigma: 0.0,
            max_rotation_deg: 0.0,
            scale_jitter: 0.0,
            background_shift: 0.0,
            spacing_jitter: 0,
            vertical_jitter: 0,
            max_len: DEFAULT_MAX_LEN,
        }
    }

    /// The strongest perturbations the generator is tuned for.
    pub fn max_noise() -> Self {
        RenderParams {
            noise_sigma: 0.2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.noise_sigma >= 0.0
            && (0.0..=45.0).contains(&self.max_rotation_deg)
            && (0.0..0.5).contains(&self.scale_jitter)
            && (0.0..=0.5).contains(&self.background_shift)
            && self.vertical_jitter <= (INPUT_HEIGHT - GLYPH_HEIGHT * CELL_SCALE) / 2
            && self.max_len >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("render parameters out of range: {self:?}")))
        }
    }
}

/// A rendered image with its label and the seed that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    /// `[1, 32, W]`, values in `[0, 1]`.
    pub image: Tensor,
    pub label: LabelSequence,
    pub seed: u64,
}

/// Renders `label` deterministically from `(label, seed, params)`.
pub fn render(
    atlas: &GlyphAtlas,
    label: &LabelSequence,
    seed: u64,
    params: &RenderParams,
) -> Result<SampleRecord> {
    if label.is_empty() || label.len() > params.max_len {
        return Err(Error::usage(format!(
            "label length {} outside 1..={}",
            label.len(),
            params.max_len
        )));
    }
    let glyphs = label
        .as_slice()
        .iter()
        .map(|&c| atlas.glyph(c))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaps: Vec<usize> = (1..glyphs.len())
        .map(|_| SPACING + rng.gen_range(0..=params.spacing_jitter))
        .collect();
    let vj = params.vertical_jitter as i64;
    let top = ((INPUT_HEIGHT - GLYPH_HEIGHT * CELL_SCALE) / 2) as i64 + rng.gen_range(-vj..=vj);
    let glyph_w = GLYPH_WIDTH * CELL_SCALE;
    let width = 2 * MARGIN + glyphs.len() * glyph_w + gaps.iter().sum::<usize>();

    // Ink coverage of the undistorted string.
    let mut ink = vec![0.0f64; INPUT_HEIGHT * width];
    let mut left = MARGIN;
    for (i, glyph) in glyphs.iter().enumerate() {
        for gy in 0..GLYPH_HEIGHT {
            for gx in 0..GLYPH_WIDTH {
                if !glyph[gy * GLYPH_WIDTH + gx] {
                    continue;
                }
                for dy in 0..CELL_SCALE {
                    let y = top as usize + gy * CELL_SCALE + dy;
                    let row = y * width + left + gx * CELL_SCALE;
                    ink[row..row + CELL_SCALE].fill(1.0);
                }
            }
        }
        left += glyph_w + gaps.get(i).copied().unwrap_or(0);
    }

    let angle = uniform(&mut rng, params.max_rotation_deg).to_radians();
    let scale = 1.0 + uniform(&mut rng, params.scale_jitter);
    let background = 1.0 - rng.gen_range(0.0..=params.background_shift);
    let out_w = ((width as f64 * scale).round() as usize).max(1);
    let (sin, cos) = angle.sin_cos();
    let (cx_in, cx_out, cy) = (
        (width as f64 - 1.0) / 2.0,
        (out_w as f64 - 1.0) / 2.0,
        (INPUT_HEIGHT as f64 - 1.0) / 2.0,
    );
    let noise = Normal::new(0.0, params.noise_sigma).expect("non-negative sigma");
    let mut pixels = Vec::with_capacity(INPUT_HEIGHT * out_w);
    for y in 0..INPUT_HEIGHT {
        for x in 0..out_w {
            let (u, v) = (x as f64 - cx_out, y as f64 - cy);
            let xs = (cos * u + sin * v) / scale + cx_in;
            let ys = -sin * u + cos * v + cy;
            let coverage = bilinear(&ink, INPUT_HEIGHT, width, ys, xs, 0.0);
            let mut p = background * (1.0 - coverage);
            if params.noise_sigma > 0.0 {
                p += noise.sample(&mut rng);
            }
            pixels.push(p.clamp(0.0, 1.0));
        }
    }
    Ok(SampleRecord {
        image: Tensor::new(&[1, INPUT_HEIGHT, out_w], pixels)?,
        label: label.clone(),
        seed,
    })
}

fn uniform(rng: &mut impl Rng, bound: f64) -> f64 {
    if bound > 0.0 {
        rng.gen_range(-bound..=bound)
    } else {
        0.0
    }
}

/// Samples `data` (`h × w`, row-major) at a fractional position; points
/// outside the grid read `outside`.
fn bilinear(data: &[f64], h: usize, w: usize, y: f64, x: f64, outside: f64) -> f64 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let at = |yy: f64, xx: f64| {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            outside
        } else {
            data[yy as usize * w + xx as usize]
        }
    };
    let top = at(y0, x0) * (1.0 - fx) + if fx > 0.0 { at(y0, x0 + 1.0) * fx } else { 0.0 };
    if fy == 0.0 {
        return top;
    }
    let bottom = at(y0 + 1.0, x0) * (1.0 - fx) + if fx > 0.0 { at(y0 + 1.0, x0 + 1.0) * fx } else { 0.0 };
    top * (1.0 - fy) + bottom * fy
}

/// Bilinear resampling of a `[1,H,W]` or `[H,W]` image to `height × width`,
/// sampling at pixel centres with edge clamping.
pub fn resize(image: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (h, w) = image_dims(image)?;
    if height == 0 || width == 0 {
        return Err(Error::dim("resize: zero target extent"));
    }
    let data = image.data();
    let (ky, kx) = (h as f64 / height as f64, w as f64 / width as f64);
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        let sy = ((y as f64 + 0.5) * ky - 0.5).clamp(0.0, (h - 1) as f64);
        for x in 0..width {
            let sx = ((x as f64 + 0.5) * kx - 0.5).clamp(0.0, (w - 1) as f64);
            out.push(bilinear(data, h, w, sy, sx, 0.0));
        }
    }
    Tensor::new(&[1, height, width], out)
}

fn image_dims(image: &Tensor) -> Result<(usize, usize)> {
    match *image.shape() {
        [1, h, w] | [h, w] if h > 0 && w > 0 => Ok((h, w)),
        _ => Err(Error::dim(format!("expected a [1,H,W] image, got {:?}", image.shape()))),
    }
}

/// Width of an `h × w` image once scaled to the network height: the
/// proportional width rounded to the nearest multiple of 4, at least 100.
pub fn normalized_width(h: usize, w: usize) -> usize {
    let proportional = w as f64 * INPUT_HEIGHT as f64 / h as f64;
    let rounded = ((proportional / 4.0).round() as usize).max(1) * 4;
    rounded.max(MIN_INPUT_WIDTH)
}

/// Evaluation-time normalization: aspect-preserving resize to height 32
/// (see [`normalized_width`]) and a shift of the `[0,1]` range by −0.5.
pub fn normalize_input(image: &Tensor) -> Result<Tensor> {
    let (h, w) = image_dims(image)?;
    normalize_to_width(image, normalized_width(h, w))
}

/// Training-time normalization to a fixed width.
pub fn normalize_to_width(image: &Tensor, width: usize) -> Result<Tensor> {
    let mut out = resize(image, INPUT_HEIGHT, width)?;
    out.data_mut().iter_mut().for_each(|v| *v -= 0.5);
    Ok(out)
}

/// Uniform label of uniform length in `min_len..=max_len`.
pub fn random_label(alphabet: &Alphabet, min_len: usize, max_len: usize, rng: &mut impl Rng) -> LabelSequence {
    let len = rng.gen_range(min_len..=max_len);
    let classes = (0..len).map(|_| rng.gen_range(1..=alphabet.len() as u32)).collect();
    LabelSequence::new(classes).expect("labels start at 1")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atlas() -> GlyphAtlas {
        GlyphAtlas::for_alphabet(&Alphabet::alphanumeric()).unwrap()
    }

    #[test]
    fn clean_render_is_the_glyph_concatenation() {
        let a = Alphabet::alphanumeric();
        let label = a.encode("b7").unwrap();
        let rec = render(&atlas(), &label, 3, &RenderParams::clean()).unwrap();
        let gw = GLYPH_WIDTH * CELL_SCALE;
        let width = 2 * MARGIN + 2 * gw + SPACING;
        assert_eq!(rec.image.shape(), &[1, INPUT_HEIGHT, width]);
        let top = (INPUT_HEIGHT - GLYPH_HEIGHT * CELL_SCALE) / 2;
        for (i, ch) in ['b', '7'].into_iter().enumerate() {
            let atlas = atlas();
            let glyph = atlas.glyph(a.class_of(ch).unwrap()).unwrap();
            let left = MARGIN + i * (gw + SPACING);
            for y in 0..INPUT_HEIGHT {
                for x in 0..gw {
                    let inside = y >= top && y < top + GLYPH_HEIGHT * CELL_SCALE;
                    let on = inside && glyph[(y - top) / CELL_SCALE * GLYPH_WIDTH + x / CELL_SCALE];
                    let p = rec.image.data()[y * width + left + x];
                    assert_eq!(p, if on { 0.0 } else { 1.0 });
                }
            }
        }
    }

    #[test]
    fn rendering_is_deterministic_and_in_range() {
        let label = Alphabet::alphanumeric().encode("hello42").unwrap();
        let params = RenderParams::max_noise();
        let a = render(&atlas(), &label, 11, &params).unwrap();
        let b = render(&atlas(), &label, 11, &params).unwrap();
        assert_eq!(a, b);
        assert!(a.image.data().iter().all(|p| (0.0..=1.0).contains(p)));
        let c = render(&atlas(), &label, 12, &params).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn label_length_is_bounded() {
        let a = Alphabet::digits();
        let atlas = GlyphAtlas::for_alphabet(&a).unwrap();
        assert!(render(&atlas, &LabelSequence::empty(), 0, &RenderParams::default()).is_err());
        let long = a.encode("123456789").unwrap();
        assert!(render(&atlas, &long, 0, &RenderParams::default()).is_err());
    }

    #[test]
    fn normalization_geometry() {
        let shape_after = |h, w| normalize_input(&Tensor::zeros(&[1, h, w])).unwrap().shape().to_vec();
        assert_eq!(shape_after(64, 200), vec![1, 32, 100]);
        assert_eq!(shape_after(32, 40), vec![1, 32, 100]);
        assert_eq!(shape_after(32, 100), vec![1, 32, 100]);
        assert_eq!(shape_after(32, 150), vec![1, 32, 152]);
        assert_eq!(shape_after(1, 1), vec![1, 32, 100]);
        for h in 1..40 {
            for w in (1..400).step_by(7) {
                let nw = normalized_width(h, w);
                assert!(nw >= MIN_INPUT_WIDTH && nw.is_multiple_of(4));
            }
        }
    }

    #[test]
    fn same_size_resize_is_identity_and_range_is_shifted() {
        let img = Tensor::from_fn(&[1, 32, 100], |i| (i % 17) as f64 / 16.0);
        let out = normalize_input(&img).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - (b - 0.5)).abs() < 1e-12);
        }
    }
}
