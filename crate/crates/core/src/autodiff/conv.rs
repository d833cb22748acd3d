use super::ops::gemm;
use super::{GradSink, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stride and zero padding of a 2-D convolution, as (height, width) pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2dParams {
    pub fn new(stride: (usize, usize), padding: (usize, usize)) -> Self {
        Conv2dParams { stride, padding }
    }

    /// Output extent along one axis, or `None` if the kernel does not fit.
    pub fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
        let padded = input + 2 * pad;
        (stride > 0 && padded >= kernel).then(|| (padded - kernel) / stride + 1)
    }
}

/// Pooling window and stride, as (height, width) pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pool2dParams {
    pub window: (usize, usize),
    pub stride: (usize, usize),
}

impl Pool2dParams {
    pub fn new(window: (usize, usize), stride: (usize, usize)) -> Self {
        Pool2dParams { window, stride }
    }

    pub fn out_extent(input: usize, window: usize, stride: usize) -> Option<usize> {
        Conv2dParams::out_extent(input, window, stride, 0)
    }
}

/// Accepts `[C,H,W]` (one image) or `[N,C,H,W]`.
fn as_batch(shape: &[usize], op: &str) -> Result<[usize; 4]> {
    match *shape {
        [c, h, w] => Ok([1, c, h, w]),
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::dim(format!("{op}: expected rank 3 or 4, got {shape:?}"))),
    }
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Unfolds one image `[C,H,W]` into a `[C·kh·kw, oh·ow]` patch matrix.
    fn im2col(&self, img: &[f64], col: &mut [f64]) {
        let ncols = self.cols();
        for c in 0..self.c {
            let plane = &img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut col[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.oh {
                        let y = (oy * self.sh + ki) as isize - self.ph as isize;
                        let out = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if y < 0 || y >= self.h as isize {
                            out.fill(0.0);
                            continue;
                        }
                        let src = &plane[y as usize * self.w..(y as usize + 1) * self.w];
                        for (ox, o) in out.iter_mut().enumerate() {
                            let x = (ox * self.sw + kj) as isize - self.pw as isize;
                            *o = if x < 0 || x >= self.w as isize {
                                0.0
                            } else {
                                src[x as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeom::im2col`]: scatters patch gradients back.
    fn col2im(&self, col: &[f64], img: &mut [f64]) {
        let ncols = self.cols();
        for c in 0..self.c {
            let plane = &mut img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &col[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.oh {
                        let y = (oy * self.sh + ki) as isize - self.ph as isize;
                        if y < 0 || y >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[y as usize * self.w..(y as usize + 1) * self.w];
                        for ox in 0..self.ow {
                            let x = (ox * self.sw + kj) as isize - self.pw as isize;
                            if x >= 0 && x < self.w as isize {
                                dst[x as usize] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<'g> Var<'g> {
    /// 2-D cross-correlation of `[N,C,H,W]` (or `[C,H,W]`) input with
    /// `[O,C,kh,kw]` kernels, zero padding, optional per-channel bias.
    pub fn conv2d(
        self,
        kernels: Var<'g>,
        bias: Option<Var<'g>>,
        params: Conv2dParams,
    ) -> Result<Var<'g>> {
        let (value, geom, n) = {
            let x = self.value();
            let k = kernels.value();
            let [n, c, h, w] = as_batch(x.shape(), "conv2d")?;
            let [o, kc, kh, kw] = match *k.shape() {
                [o, kc, kh, kw] => [o, kc, kh, kw],
                _ => return Err(Error::dim(format!("conv2d: kernel shape {:?}", k.shape()))),
            };
            if kc != c {
                return Err(Error::dim(format!(
                    "conv2d: kernel expects {kc} channels, input has {c}"
                )));
            }
            let (sh, sw) = params.stride;
            let (ph, pw) = params.padding;
            let oh = Conv2dParams::out_extent(h, kh, sh, ph);
            let ow = Conv2dParams::out_extent(w, kw, sw, pw);
            let (Some(oh), Some(ow)) = (oh, ow) else {
                return Err(Error::dim(format!(
                    "conv2d: {kh}×{kw} kernel does not fit {h}×{w} input with padding {ph}×{pw}"
                )));
            };
            let geom = ConvGeom { c, h, w, kh, kw, sh, sw, ph, pw, oh, ow };
            let bias_data = match bias {
                Some(b) => {
                    let b = b.value();
                    if b.numel() != o {
                        return Err(Error::dim(format!("conv2d: bias of {} for {o} maps", b.numel())));
                    }
                    Some(b.data().to_vec())
                }
                None => None,
            };
            let (rows, cols) = (geom.rows(), geom.cols());
            let mut col = vec![0.0; rows * cols];
            let mut out = vec![0.0; n * o * cols];
            for (img, dst) in x.data().chunks(c * h * w).zip(out.chunks_mut(o * cols)) {
                geom.im2col(img, &mut col);
                if let Some(b) = &bias_data {
                    for (plane, &bv) in dst.chunks_mut(cols).zip(b) {
                        plane.fill(bv);
                    }
                }
                gemm(o, rows, cols, k.data(), false, &col, false, dst, if bias.is_some() { 1.0 } else { 0.0 });
            }
            let shape: Vec<usize> = if x.rank() == 3 { vec![o, oh, ow] } else { vec![n, o, oh, ow] };
            (Tensor::new(&shape, out)?, geom, n)
        };
        let (ix, ik, ib) = (self.id, kernels.id, bias.map(|b| b.id));
        let mut inputs = vec![self, kernels];
        inputs.extend(bias);
        Ok(self.graph.record(
            value,
            &inputs,
            Box::new(move |g, sink: &mut GradSink| {
                let (rows, cols) = (geom.rows(), geom.cols());
                let o = g.len() / (n * cols);
                let in_len = geom.c * geom.h * geom.w;
                let mut col = vec![0.0; rows * cols];
                if let Some(db) = ib.and_then(|ib| sink.grad(ib)) {
                    for gs in g.chunks(o * cols) {
                        for (d, plane) in db.iter_mut().zip(gs.chunks(cols)) {
                            *d += plane.iter().sum::<f64>();
                        }
                    }
                }
                let (x, dk) = sink.value_and_grad(ix, ik);
                if let Some(dk) = dk {
                    for (img, gs) in x.data().chunks(in_len).zip(g.chunks(o * cols)) {
                        geom.im2col(img, &mut col);
                        gemm(o, cols, rows, gs, false, &col, true, dk, 1.0);
                    }
                }
                let (k, dx) = sink.value_and_grad(ik, ix);
                if let Some(dx) = dx {
                    for (dimg, gs) in dx.chunks_mut(in_len).zip(g.chunks(o * cols)) {
                        gemm(rows, o, cols, k.data(), true, gs, false, &mut col, 0.0);
                        geom.col2im(&col, dimg);
                    }
                }
            }),
        ))
    }

    /// Max pooling without padding. Gradient flows to the first maximal
    /// element of each window in row-major scan order.
    pub fn maxpool2d(self, params: Pool2dParams) -> Result<Var<'g>> {
        let (value, argmax) = {
            let x = self.value();
            let [n, c, h, w] = as_batch(x.shape(), "maxpool2d")?;
            let (wh, ww) = params.window;
            let (sh, sw) = params.stride;
            let (Some(oh), Some(ow)) = (
                Pool2dParams::out_extent(h, wh, sh),
                Pool2dParams::out_extent(w, ww, sw),
            ) else {
                return Err(Error::dim(format!(
                    "maxpool2d: {wh}×{ww} window larger than {h}×{w} input"
                )));
            };
            let mut out = Vec::with_capacity(n * c * oh * ow);
            let mut argmax = Vec::with_capacity(n * c * oh * ow);
            for (p, plane) in x.data().chunks(h * w).enumerate() {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut at = 0;
                        for dy in 0..wh {
                            let row = (oy * sh + dy) * w;
                            for dx in 0..ww {
                                let i = row + ox * sw + dx;
                                if plane[i] > best || (dy == 0 && dx == 0) {
                                    best = plane[i];
                                    at = i;
                                }
                            }
                        }
                        out.push(best);
                        argmax.push(p * h * w + at);
                    }
                }
            }
            let shape: Vec<usize> = if x.rank() == 3 { vec![c, oh, ow] } else { vec![n, c, oh, ow] };
            (Tensor::new(&shape, out)?, argmax)
        };
        let ix = self.id;
        Ok(self.graph.record(
            value,
            &[self],
            Box::new(move |g, sink: &mut GradSink| {
                if let Some(dx) = sink.grad(ix) {
                    for (&i, g) in argmax.iter().zip(g) {
                        dx[i] += g;
                    }
                }
            }),
        ))
    }
}
