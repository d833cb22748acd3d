use super::{GradSink, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `c (m×n) = alpha·a·b + beta·c` on row-major slices, with optional
/// transposition of either operand.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths are checked above and the strides describe
    // exactly those row-major buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn rank2(op: &str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::dim(format!("{op}: expected a matrix, got {:?}", t.shape()))),
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

impl<'g> Var<'g> {
    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>> {
        let (a, b) = (self.value(), other.value());
        let (m, k) = rank2("matmul", &a)?;
        let (k2, n) = rank2("matmul", &b)?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul: inner extents {k} and {k2} disagree"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), false, &mut out, 0.0);
        drop((a, b));
        let (ia, ib) = (self.id, other.id);
        let value = Tensor::new(&[m, n], out)?;
        Ok(self.graph.record(
            value,
            &[self, other],
            Box::new(move |g, sink: &mut GradSink| {
                // dA = G·Bᵀ, dB = Aᵀ·G
                let (b, ga) = sink.value_and_grad(ib, ia);
                if let Some(ga) = ga {
                    gemm(m, n, k, g, false, b.data(), true, ga, 1.0);
                }
                let (a, gb) = sink.value_and_grad(ia, ib);
                if let Some(gb) = gb {
                    gemm(k, m, n, a.data(), true, g, false, gb, 1.0);
                }
            }),
        ))
    }

    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        let value = {
            let (a, b) = (self.value(), other.value());
            same_shape("add", &a, &b)?;
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
            Tensor::new(a.shape(), data)?
        };
        let (ia, ib) = (self.id, other.id);
        Ok(self.graph.record(
            value,
            &[self, other],
            Box::new(move |g, sink: &mut GradSink| {
                for id in [ia, ib] {
                    if let Some(d) = sink.grad(id) {
                        add_into(d, g);
                    }
                }
            }),
        ))
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        self.add(other.scale(-1.0))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        let value = {
            let (a, b) = (self.value(), other.value());
            same_shape("mul", &a, &b)?;
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
            Tensor::new(a.shape(), data)?
        };
        let (ia, ib) = (self.id, other.id);
        Ok(self.graph.record(
            value,
            &[self, other],
            Box::new(move |g, sink: &mut GradSink| {
                for (me, them) in [(ia, ib), (ib, ia)] {
                    let (other, d) = sink.value_and_grad(them, me);
                    if let Some(d) = d {
                        for ((d, g), o) in d.iter_mut().zip(g).zip(other.data()) {
                            *d += g * o;
                        }
                    }
                }
            }),
        ))
    }

    pub fn scale(self, factor: f64) -> Var<'g> {
        let value = {
            let a = self.value();
            Tensor::new(a.shape(), a.data().iter().map(|x| x * factor).collect())
                .expect("same shape")
        };
        let ia = self.id;
        self.graph.record(
            value,
            &[self],
            Box::new(move |g, sink: &mut GradSink| {
                if let Some(d) = sink.grad(ia) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g * factor);
                }
            }),
        )
    }

    /// Adds `bias` (length n) to every row of an m×n matrix.
    pub fn add_row_bias(self, bias: Var<'g>) -> Result<Var<'g>> {
        let (value, n) = {
            let (a, b) = (self.value(), bias.value());
            let (_, n) = rank2("add_row_bias", &a)?;
            if b.numel() != n {
                return Err(Error::dim(format!(
                    "add_row_bias: bias of {} for {n} columns",
                    b.numel()
                )));
            }
            let mut data = a.data().to_vec();
            data.chunks_mut(n).for_each(|row| add_into(row, b.data()));
            (Tensor::new(a.shape(), data)?, n)
        };
        let (ia, ib) = (self.id, bias.id);
        Ok(self.graph.record(
            value,
            &[self, bias],
            Box::new(move |g, sink: &mut GradSink| {
                if let Some(d) = sink.grad(ia) {
                    add_into(d, g);
                }
                if let Some(d) = sink.grad(ib) {
                    g.chunks(n).for_each(|row| add_into(d, row));
                }
            }),
        ))
    }

    /// Applies `f` elementwise; `df(x, y)` is the derivative given input and output.
    fn unary(self, f: impl Fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Var<'g> {
        let value = {
            let a = self.value();
            Tensor::new(a.shape(), a.data().iter().map(|&x| f(x)).collect()).expect("same shape")
        };
        let ia = self.id;
        let out_id = self.graph.len();
        self.graph.record(
            value,
            &[self],
            Box::new(move |g, sink: &mut GradSink| {
                let nodes = sink.nodes;
                let (x, y) = (&nodes[ia].value, &nodes[out_id].value);
                if let Some(d) = sink.grad(ia) {
                    for (((d, g), x), y) in d.iter_mut().zip(g).zip(x.data()).zip(y.data()) {
                        *d += g * df(*x, *y);
                    }
                }
            }),
        )
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.unary(sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(self) -> Var<'g> {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn relu(self) -> Var<'g> {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// Sum of all elements as a scalar.
    pub fn sum(self) -> Var<'g> {
        let value = Tensor::scalar(self.value().data().iter().sum());
        let ia = self.id;
        self.graph.record(
            value,
            &[self],
            Box::new(move |g, sink: &mut GradSink| {
                if let Some(d) = sink.grad(ia) {
                    d.iter_mut().for_each(|d| *d += g[0]);
                }
            }),
        )
    }

    /// `Σ weights ⊙ self` with constant weights; a scalar probe for gradient checks.
    pub fn weighted_sum(self, weights: &Tensor) -> Result<Var<'g>> {
        let value = {
            let a = self.value();
            same_shape("weighted_sum", &a, weights)?;
            Tensor::scalar(a.data().iter().zip(weights.data()).map(|(x, w)| x * w).sum())
        };
        let w = weights.data().to_vec();
        let ia = self.id;
        Ok(self.graph.record(
            value,
            &[self],
            Box::new(move |g, sink: &mut GradSink| {
                if let Some(d) = sink.grad(ia) {
                    d.iter_mut().zip(&w).for_each(|(d, w)| *d += g[0] * w);
                }
            }),
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        let value = self.value().clone().reshape(shape)?;
        let ia = self.id;
        Ok(self.graph.record(
            value,
            &[self],
            Box::new(move |g, sink: &mut GradSink| {
                if let Some(d) = sink.grad(ia) {
                    add_into(d, g);
                }
            }),
        ))
    }

    /// Rows `start..start+len` of a matrix.
    pub fn narrow_rows(self, start: usize, len: usize) -> Result<Var<'g>> {
        let (value, cols) = {
            let a = self.value();
            let (rows, cols) = rank2("narrow_rows", &a)?;
            if len == 0 || start + len > rows {
                return Err(Error::dim(format!(
                    "narrow_rows: {start}+{len} out of {rows} rows"
                )));
            }
            let data = a.data()[start * cols..(start + len) * cols].to_vec();
            (Tensor::new(&[len, cols], data)?, cols)
        };
        let ia = self.id;
        Ok(self.graph.record(
            value,
            &[self],
            Box::new(move |g, sink: &mut GradSink| {
                if let Some(d) = sink.grad(ia) {
                    add_into(&mut d[start * cols..(start + len) * cols], g);
                }
            }),
        ))
    }

    /// Columns `start..start+len` of a matrix.
    pub fn narrow_cols(self, start: usize, len: usize) -> Result<Var<'g>> {
        let (value, cols) = {
            let a = self.value();
            let (rows, cols) = rank2("narrow_cols", &a)?;
            if len == 0 || start + len > cols {
                return Err(Error::dim(format!(
                    "narrow_cols: {start}+{len} out of {cols} columns"
                )));
            }
            let data = a
                .data()
                .chunks(cols)
                .flat_map(|row| &row[start..start + len])
                .copied()
                .collect();
            (Tensor::new(&[rows, len], data)?, cols)
        };
        let ia = self.id;
        Ok(self.graph.record(
            value,
            &[self],
            Box::new(move |g, sink: &mut GradSink| {
                if let Some(d) = sink.grad(ia) {
                    for (drow, grow) in d.chunks_mut(cols).zip(g.chunks(len)) {
                        add_into(&mut drow[start..start + len], grow);
                    }
                }
            }),
        ))
    }

    /// Row-wise softmax of a T×K matrix, computed with max subtraction.
    pub fn softmax_rows(self) -> Result<Var<'g>> {
        let (value, k) = {
            let a = self.value();
            let (_, k) = rank2("softmax_rows", &a)?;
            let mut data = a.data().to_vec();
            data.chunks_mut(k).for_each(softmax_in_place);
            (Tensor::new(a.shape(), data)?, k)
        };
        let ia = self.id;
        let out_id = self.graph.len();
        Ok(self.graph.record(
            value,
            &[self],
            Box::new(move |g, sink: &mut GradSink| {
                let y = &sink.nodes[out_id].value;
                if let Some(d) = sink.grad(ia) {
                    for ((d, g), y) in d.chunks_mut(k).zip(g.chunks(k)).zip(y.data().chunks(k)) {
                        let dot: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
                        for ((d, g), y) in d.iter_mut().zip(g).zip(y) {
                            *d += y * (g - dot);
                        }
                    }
                }
            }),
        ))
    }
}

/// Concatenates matrices with equal row counts side by side.
pub fn concat_cols<'g>(parts: &[Var<'g>]) -> Result<Var<'g>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::usage("concat_cols of nothing"))?;
    let (value, widths) = {
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let mut widths = Vec::with_capacity(values.len());
        let rows = rank2("concat_cols", &values[0])?.0;
        for v in &values {
            let (r, c) = rank2("concat_cols", v)?;
            if r != rows {
                return Err(Error::dim(format!("concat_cols: {r} rows vs {rows}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (v, &c) in values.iter().zip(&widths) {
                data.extend_from_slice(&v.data()[r * c..(r + 1) * c]);
            }
        }
        (Tensor::new(&[rows, total], data)?, widths)
    };
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    Ok(first.graph.record(
        value,
        parts,
        Box::new(move |g, sink: &mut GradSink| {
            let total: usize = widths.iter().sum();
            let mut offset = 0;
            for (&id, &c) in ids.iter().zip(&widths) {
                if let Some(d) = sink.grad(id) {
                    for (drow, grow) in d.chunks_mut(c).zip(g.chunks(total)) {
                        add_into(drow, &grow[offset..offset + c]);
                    }
                }
                offset += c;
            }
        }),
    ))
}

/// Stacks matrices with equal column counts on top of each other.
pub fn concat_rows<'g>(parts: &[Var<'g>]) -> Result<Var<'g>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::usage("concat_rows of nothing"))?;
    let (value, lens) = {
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let cols = rank2("concat_rows", &values[0])?.1;
        let mut rows = 0;
        let mut lens = Vec::with_capacity(values.len());
        let mut data = Vec::new();
        for v in &values {
            let (r, c) = rank2("concat_rows", v)?;
            if c != cols {
                return Err(Error::dim(format!("concat_rows: {c} columns vs {cols}")));
            }
            rows += r;
            lens.push(v.numel());
            data.extend_from_slice(v.data());
        }
        (Tensor::new(&[rows, cols], data)?, lens)
    };
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    Ok(first.graph.record(
        value,
        parts,
        Box::new(move |g, sink: &mut GradSink| {
            let mut offset = 0;
            for (&id, &len) in ids.iter().zip(&lens) {
                if let Some(d) = sink.grad(id) {
                    add_into(d, &g[offset..offset + len]);
                }
                offset += len;
            }
        }),
    ))
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{check_gradient, random, rng};
    use super::super::Graph;
    use super::*;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::new(&[rows, cols], data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_small_cases() {
        let g = Graph::new();
        let m = g.constant(mat(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let id = g.constant(Tensor::identity(3));
        assert_eq!(id.matmul(m).unwrap().value().data(), m.value().data());

        let a = g.constant(mat(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let ones = g.constant(mat(2, 1, &[1.0, 1.0]));
        let p = a.matmul(ones).unwrap();
        assert_eq!(p.shape(), vec![2, 1]);
        assert_eq!(p.value().data(), &[3.0, 7.0]);

        let z = g.constant(Tensor::zeros(&[2, 3]));
        assert!(z.matmul(m).unwrap().value().data().iter().all(|&v| v == 0.0));
        assert!(matches!(m.matmul(m), Err(Error::Dimension(_))));
    }

    #[test]
    fn softmax_closed_forms() {
        let g = Graph::new();
        let x = g.constant(mat(2, 4, &[1.0, 1.0, 1.0, 1.0, 0.0, 3f64.ln(), -50.0, -50.0]));
        let y = x.softmax_rows().unwrap();
        let y = y.value();
        assert!(y.row(0).iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert!((y.row(1)[0] - 0.25).abs() < 1e-12);
        assert!((y.row(1)[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shift() {
        let mut r = rng(3);
        let g = Graph::new();
        for _ in 0..50 {
            let t = random(&[5, 7], &mut r);
            let mut shifted = t.clone();
            shifted.data_mut().chunks_mut(7).enumerate().for_each(|(i, row)| {
                row.iter_mut().for_each(|v| *v += 10.0 * i as f64 - 17.0)
            });
            let a = g.constant(t).softmax_rows().unwrap();
            let b = g.constant(shifted).softmax_rows().unwrap();
            for i in 0..5 {
                let s: f64 = a.value().row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
            for (x, y) in a.value().data().iter().zip(b.value().data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    fn gradcheck(shapes: &[&[usize]], f: impl for<'g> Fn(&[Var<'g>]) -> Var<'g>) {
        let mut r = rng(11);
        let inputs: Vec<Tensor> = shapes.iter().map(|s| random(s, &mut r)).collect();
        let probe_shape = {
            let g = Graph::new();
            let vars: Vec<_> = inputs.iter().map(|t| g.constant(t.clone())).collect();
            f(&vars).shape()
        };
        let probe = random(&probe_shape, &mut r);
        let eval = |ts: &[Tensor]| {
            let g = Graph::new();
            let vars: Vec<_> = ts.iter().map(|t| g.constant(t.clone())).collect();
            f(&vars).weighted_sum(&probe).unwrap().item()
        };
        let g = Graph::new();
        let vars: Vec<_> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        f(&vars).weighted_sum(&probe).unwrap().backward().unwrap();
        for (i, v) in vars.iter().enumerate() {
            let analytic = g.grad_or_zeros(*v);
            let err = check_gradient(&inputs[i], &analytic, |x| {
                let mut ts = inputs.clone();
                ts[i] = x.clone();
                eval(&ts)
            });
            assert!(err < 1e-6, "input {i}: relative error {err}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        gradcheck(&[&[3, 4], &[4, 2]], |v| v[0].matmul(v[1]).unwrap());
        gradcheck(&[&[3, 4], &[3, 4]], |v| v[0].mul(v[1]).unwrap());
        gradcheck(&[&[3, 4], &[3, 4]], |v| v[0].sub(v[1]).unwrap());
        gradcheck(&[&[3, 4], &[4]], |v| v[0].add_row_bias(v[1]).unwrap());
        gradcheck(&[&[3, 4]], |v| v[0].sigmoid());
        gradcheck(&[&[3, 4]], |v| v[0].tanh());
        gradcheck(&[&[3, 4]], |v| v[0].relu());
        gradcheck(&[&[3, 4]], |v| v[0].softmax_rows().unwrap());
        gradcheck(&[&[3, 4]], |v| v[0].narrow_cols(1, 2).unwrap());
        gradcheck(&[&[3, 4]], |v| v[0].narrow_rows(1, 2).unwrap());
        gradcheck(&[&[3, 4]], |v| v[0].reshape(&[2, 6]).unwrap());
        gradcheck(&[&[3, 4], &[3, 2]], |v| concat_cols(&[v[0], v[1], v[0]]).unwrap());
        gradcheck(&[&[3, 4], &[1, 4]], |v| concat_rows(&[v[0], v[1]]).unwrap());
    }
}
