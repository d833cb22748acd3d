use super::{GradSink, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of element (n, c, h, w) of an `[N,C,H,W]` map inside the frame
/// matrix `[W·N, C·H]`: row `w·N + n`, column `c·H + h`.
fn frame_index(dims: [usize; 4], n: usize, c: usize, h: usize, w: usize) -> usize {
    let [batch, _, height, _] = dims;
    let width = dims[1] * height;
    (w * batch + n) * width + c * height + h
}

fn map_dims(shape: &[usize]) -> Result<[usize; 4]> {
    match *shape {
        [c, h, w] => Ok([1, c, h, w]),
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::dim(format!("map_to_sequence: expected feature maps, got {shape:?}"))),
    }
}

fn permute(dims: [usize; 4], src: &[f64], to_frames: bool) -> Vec<f64> {
    let [batch, chans, height, width] = dims;
    let mut out = vec![0.0; src.len()];
    let mut i = 0;
    for n in 0..batch {
        for c in 0..chans {
            for h in 0..height {
                for w in 0..width {
                    let j = frame_index(dims, n, c, h, w);
                    if to_frames {
                        out[j] = src[i];
                    } else {
                        out[i] = src[j];
                    }
                    i += 1;
                }
            }
        }
    }
    out
}

impl<'g> Var<'g> {
    /// Rearranges `[N,C,H,W]` feature maps into `W` frames per image,
    /// returned as a `[W·N, C·H]` matrix whose rows `t·N .. t·N+N` hold
    /// frame `t` of every image. Within a frame, channel blocks are
    /// contiguous and rows run top to bottom.
    pub fn map_to_sequence(self) -> Result<Var<'g>> {
        let (value, dims) = {
            let x = self.value();
            let dims = map_dims(x.shape())?;
            let [n, c, h, w] = dims;
            let data = permute(dims, x.data(), true);
            (Tensor::new(&[w * n, c * h], data)?, dims)
        };
        let ix = self.id;
        Ok(self.graph.record(
            value,
            &[self],
            Box::new(move |g, sink: &mut GradSink| {
                if let Some(d) = sink.grad(ix) {
                    let back = permute(dims, g, false);
                    d.iter_mut().zip(back).for_each(|(d, v)| *d += v);
                }
            }),
        ))
    }
}

/// Inverse of [`Var::map_to_sequence`] on plain tensors.
pub fn sequence_to_map(frames: &Tensor, batch: usize, channels: usize, height: usize) -> Result<Tensor> {
    let (rows, cols) = match *frames.shape() {
        [r, c] => (r, c),
        _ => return Err(Error::dim("sequence_to_map: expected a frame matrix")),
    };
    if cols != channels * height || batch == 0 || rows % batch != 0 {
        return Err(Error::dim(format!(
            "sequence_to_map: {rows}×{cols} frames do not fit batch {batch}, {channels}×{height} columns"
        )));
    }
    let dims = [batch, channels, height, rows / batch];
    Tensor::new(&dims, permute(dims, frames.data(), false))
}

/// Splits a `[T·N, D]` frame matrix into `T` tensors of shape `[N, D]`.
pub fn split_frames(frames: &Tensor, batch: usize) -> Result<Vec<Tensor>> {
    let cols = match *frames.shape() {
        [_, c] => c,
        _ => return Err(Error::dim("split_frames: expected a frame matrix")),
    };
    frames
        .data()
        .chunks(batch * cols)
        .map(|chunk| Tensor::new(&[batch, cols], chunk.to_vec()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{check_gradient, random, rng};
    use super::super::Graph;
    use super::*;

    #[test]
    fn single_row_maps_to_scalars_in_order() {
        let g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[1, 1, 5], |i| i as f64));
        let s = x.map_to_sequence().unwrap();
        assert_eq!(s.shape(), vec![5, 1]);
        assert_eq!(s.value().data(), &[0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn full_size_maps_give_one_frame_per_column() {
        let g = Graph::new();
        let x = g.constant(Tensor::zeros(&[512, 1, 24]));
        let s = x.map_to_sequence().unwrap();
        let frames = split_frames(&s.value(), 1).unwrap();
        assert_eq!(frames.len(), 24);
        assert!(frames.iter().all(|f| f.shape() == [1, 512]));
    }

    #[test]
    fn frame_is_column_concatenation() {
        let g = Graph::new();
        // 2 channels, 2 rows, 3 columns
        let x = g.constant(Tensor::from_fn(&[2, 2, 3], |i| i as f64));
        let s = x.map_to_sequence().unwrap();
        assert_eq!(s.value().row(1), &[1.0, 4.0, 7.0, 10.0]);
    }

    #[test]
    fn round_trip_is_identity_and_gradient_is_exact() {
        let mut r = rng(2);
        let x = random(&[3, 4, 2, 5], &mut r);
        let g = Graph::new();
        let xv = g.leaf(x.clone());
        let s = xv.map_to_sequence().unwrap();
        let back = sequence_to_map(&s.value(), 3, 4, 2).unwrap();
        assert_eq!(back, x);
        let probe = random(&s.shape(), &mut r);
        s.weighted_sum(&probe).unwrap().backward().unwrap();
        let f = |t: &Tensor| {
            let g = Graph::new();
            g.constant(t.clone()).map_to_sequence().unwrap().weighted_sum(&probe).unwrap().item()
        };
        assert!(check_gradient(&x, &xv.grad().unwrap(), f) < 1e-8);
    }
}
