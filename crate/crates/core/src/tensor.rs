//! Dense rank-4 tensors and 2-D cross-correlation.
//!
//! Correlation is computed by unrolling input patches into a column matrix
//! (im2col) and multiplying with the filter matrix. Samples are processed in
//! fixed-size chunks; chunk results are combined in chunk order so outputs do
//! not depend on how many worker threads run the chunks.

use rayon::prelude::*;

use crate::error::{GcnError, Result};

/// Samples per im2col chunk. Fixed so the floating-point summation order of
/// filter gradients never depends on the thread count.
const CHUNK: usize = 8;

/// `(batch, channels, rows, cols)` array, row-major with batch outermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    shape: [usize; 4],
    data: Vec<f64>,
    orient_groups: Option<usize>,
}

impl Tensor4 {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor4 {
            shape,
            data: vec![0.0; shape.iter().product()],
            orient_groups: None,
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(GcnError::Shape(format!(
                "tensor of shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor4 {
            shape,
            data,
            orient_groups: None,
        })
    }

    /// Declares the channel axis as `c / groups` filters times `groups` orientations.
    pub fn with_orient_groups(mut self, groups: Option<usize>) -> Result<Self> {
        if let Some(g) = groups {
            if g == 0 || !self.shape[1].is_multiple_of(g) {
                return Err(GcnError::Shape(format!(
                    "orientation groups {g} do not divide {} channels",
                    self.shape[1]
                )));
            }
        }
        self.orient_groups = groups;
        Ok(self)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn orient_groups(&self) -> Option<usize> {
        self.orient_groups
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Values per sample (`c * h * w`).
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn sample(&self, n: usize) -> &[f64] {
        let s = self.sample_len();
        &self.data[n * s..(n + 1) * s]
    }

    fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(n, c, y, x)]
    }

    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, value: f64) {
        let i = self.index(n, c, y, x);
        self.data[i] = value;
    }

    /// Copies samples `start..end` into a new tensor, keeping orientation metadata.
    pub fn slice_batch(&self, start: usize, end: usize) -> Tensor4 {
        let s = self.sample_len();
        Tensor4 {
            shape: [end - start, self.shape[1], self.shape[2], self.shape[3]],
            data: self.data[start * s..end * s].to_vec(),
            orient_groups: self.orient_groups,
        }
    }

    /// Reinterprets the data under a new shape of identical length.
    pub fn reshape(mut self, shape: [usize; 4]) -> Result<Tensor4> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(GcnError::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        self.orient_groups = None;
        Ok(self)
    }
}

/// `(out filters, in depth, kernel rows, kernel cols)` filter array.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter4 {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Filter4 {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Filter4 {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(GcnError::Shape(format!(
                "filter of shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Filter4 { shape, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Values in one output filter (`d * kh * kw`).
    pub fn filter_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn get(&self, m: usize, d: usize, y: usize, x: usize) -> f64 {
        self.data[((m * self.shape[1] + d) * self.shape[2] + y) * self.shape[3] + x]
    }
}

/// Output extent of a correlation along one axis.
pub fn output_extent(input: usize, kernel: usize, pad: usize, stride: usize) -> Result<usize> {
    if stride == 0 {
        return Err(GcnError::Shape("stride must be positive".into()));
    }
    let padded = input + 2 * pad;
    if kernel == 0 || kernel > padded {
        return Err(GcnError::Shape(format!(
            "kernel extent {kernel} exceeds padded input extent {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    d: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    pad: usize,
    stride: usize,
}

impl Geometry {
    fn new(input: &Tensor4, filters: &Filter4, pad: usize, stride: usize) -> Result<Self> {
        let [_, c, h, w] = input.shape;
        let [_, d, kh, kw] = filters.shape;
        if c != d {
            return Err(GcnError::Shape(format!(
                "input {:?} has {c} channels but filters {:?} expect depth {d}",
                input.shape, filters.shape
            )));
        }
        Ok(Geometry {
            d,
            h,
            w,
            kh,
            kw,
            oh: output_extent(h, kh, pad, stride)?,
            ow: output_extent(w, kw, pad, stride)?,
            pad,
            stride,
        })
    }

    fn rows(&self) -> usize {
        self.d * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Unrolls `samples` (each `d*h*w` long) into a `rows x (n * positions)` matrix.
    fn im2col(&self, samples: &[f64], n: usize) -> Vec<f64> {
        let p = self.positions();
        let cols = n * p;
        let mut col = vec![0.0; self.rows() * cols];
        let sample_len = self.d * self.h * self.w;
        for s in 0..n {
            let img = &samples[s * sample_len..(s + 1) * sample_len];
            for c in 0..self.d {
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let row = (c * self.kh + ky) * self.kw + kx;
                        let dst = &mut col[row * cols + s * p..row * cols + (s + 1) * p];
                        for oy in 0..self.oh {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= self.h as isize {
                                continue;
                            }
                            let src = &img[(c * self.h + iy as usize) * self.w..][..self.w];
                            for ox in 0..self.ow {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < self.w as isize {
                                    dst[oy * self.ow + ox] = src[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        col
    }

    /// Scatter-adds a column matrix back onto `n` input-shaped samples.
    fn col2im(&self, col: &[f64], n: usize, out: &mut [f64]) {
        let p = self.positions();
        let cols = n * p;
        let sample_len = self.d * self.h * self.w;
        for s in 0..n {
            let img = &mut out[s * sample_len..(s + 1) * sample_len];
            for c in 0..self.d {
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let row = (c * self.kh + ky) * self.kw + kx;
                        let src = &col[row * cols + s * p..row * cols + (s + 1) * p];
                        for oy in 0..self.oh {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= self.h as isize {
                                continue;
                            }
                            let dst = &mut img[(c * self.h + iy as usize) * self.w..][..self.w];
                            for ox in 0..self.ow {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < self.w as isize {
                                    dst[ix as usize] += src[oy * self.ow + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `c = a * b` for row-major `a: m x k`, `b: k x n`, `c: m x n`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c = a * b^T` for row-major `a: m x k`, `b: n x k`.
pub(crate) fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c = a^T * b` for row-major `a: k x m`, `b: k x n`.
pub(crate) fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Valid 2-D cross-correlation (no kernel flip) with zero padding.
///
/// Output shape is `(n, m, (h + 2 pad - kh) / stride + 1, (w + 2 pad - kw) / stride + 1)`.
pub fn correlate2d(input: &Tensor4, filters: &Filter4, pad: usize, stride: usize) -> Result<Tensor4> {
    let g = Geometry::new(input, filters, pad, stride)?;
    let n = input.batch();
    let m = filters.shape[0];
    let p = g.positions();
    let k = g.rows();
    let mut out = Tensor4::zeros([n, m, g.oh, g.ow]);
    let sample_len = input.sample_len();

    out.data
        .par_chunks_mut(CHUNK * m * p)
        .zip(input.data.par_chunks(CHUNK * sample_len))
        .for_each(|(out_chunk, in_chunk)| {
            let nc = in_chunk.len() / sample_len.max(1);
            let col = g.im2col(in_chunk, nc);
            let mut res = vec![0.0; m * nc * p];
            gemm(m, k, nc * p, &filters.data, &col, &mut res);
            for s in 0..nc {
                for f in 0..m {
                    out_chunk[(s * m + f) * p..(s * m + f + 1) * p]
                        .copy_from_slice(&res[f * nc * p + s * p..f * nc * p + (s + 1) * p]);
                }
            }
        });
    Ok(out)
}

/// Gradients of a [`correlate2d`] call with respect to its input (when
/// requested) and its filters, given the gradient of its output.
pub fn correlate2d_backward(
    input: &Tensor4,
    filters: &Filter4,
    grad_out: &Tensor4,
    pad: usize,
    stride: usize,
    want_input_grad: bool,
) -> Result<(Option<Tensor4>, Filter4)> {
    let g = Geometry::new(input, filters, pad, stride)?;
    let n = input.batch();
    let m = filters.shape[0];
    let expected = [n, m, g.oh, g.ow];
    if grad_out.shape != expected {
        return Err(GcnError::Shape(format!(
            "output gradient has shape {:?}, expected {expected:?}",
            grad_out.shape
        )));
    }
    let p = g.positions();
    let k = g.rows();
    let sample_len = input.sample_len();

    let mut grad_input = want_input_grad.then(|| Tensor4::zeros(input.shape));
    let partials: Vec<Vec<f64>> = match grad_input.as_mut() {
        Some(gi) => gi
            .data
            .par_chunks_mut(CHUNK * sample_len)
            .zip(input.data.par_chunks(CHUNK * sample_len))
            .zip(grad_out.data.par_chunks(CHUNK * m * p))
            .map(|((gi_chunk, in_chunk), go_chunk)| {
                backward_chunk(&g, filters, m, p, k, in_chunk, go_chunk, Some(gi_chunk))
            })
            .collect(),
        None => input
            .data
            .par_chunks(CHUNK * sample_len)
            .zip(grad_out.data.par_chunks(CHUNK * m * p))
            .map(|(in_chunk, go_chunk)| backward_chunk(&g, filters, m, p, k, in_chunk, go_chunk, None))
            .collect(),
    };

    let mut grad_filters = Filter4::zeros(filters.shape);
    for part in &partials {
        for (acc, v) in grad_filters.data.iter_mut().zip(part) {
            *acc += v;
        }
    }
    Ok((grad_input, grad_filters))
}

#[allow(clippy::too_many_arguments)]
fn backward_chunk(
    g: &Geometry,
    filters: &Filter4,
    m: usize,
    p: usize,
    k: usize,
    in_chunk: &[f64],
    go_chunk: &[f64],
    gi_chunk: Option<&mut [f64]>,
) -> Vec<f64> {
    let sample_len = g.d * g.h * g.w;
    let nc = in_chunk.len() / sample_len.max(1);
    let cols = nc * p;
    // regroup the output gradient as an m x (nc * p) matrix
    let mut go = vec![0.0; m * cols];
    for s in 0..nc {
        for f in 0..m {
            go[f * cols + s * p..f * cols + (s + 1) * p]
                .copy_from_slice(&go_chunk[(s * m + f) * p..(s * m + f + 1) * p]);
        }
    }
    let col = g.im2col(in_chunk, nc);
    let mut gf = vec![0.0; m * k];
    gemm_nt(m, cols, k, &go, &col, &mut gf);
    if let Some(gi) = gi_chunk {
        let mut gcol = vec![0.0; k * cols];
        gemm_tn(k, m, cols, &filters.data, &go, &mut gcol);
        g.col2im(&gcol, nc, gi);
    }
    gf
}

fn check_same(a: &Tensor4, b: &Tensor4) -> Result<()> {
    if a.shape != b.shape {
        return Err(GcnError::Shape(format!(
            "shape mismatch: {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    Ok(())
}

pub fn add(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    check_same(a, b)?;
    let mut out = a.clone();
    out.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += y);
    Ok(out)
}

pub fn scale(a: &Tensor4, factor: f64) -> Tensor4 {
    let mut out = a.clone();
    out.data.iter_mut().for_each(|x| *x *= factor);
    out
}

/// Element-by-element product.
pub fn hadamard(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    check_same(a, b)?;
    let mut out = a.clone();
    out.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x *= y);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Batch,
    Channel,
    Height,
    Width,
}

/// Maximum over one axis; the reduced axis keeps extent 1.
pub fn max_reduce_over_axis(a: &Tensor4, axis: Axis) -> Result<Tensor4> {
    let ax = axis as usize;
    if a.shape[ax] == 0 {
        return Err(GcnError::Shape(format!("cannot reduce empty axis of {:?}", a.shape)));
    }
    let mut shape = a.shape;
    shape[ax] = 1;
    let mut out = Tensor4::zeros(shape);
    out.data.iter_mut().for_each(|x| *x = f64::NEG_INFINITY);
    let [n, c, h, w] = a.shape;
    for i in 0..n {
        for j in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let mut idx = [i, j, y, x];
                    let v = a.get(i, j, y, x);
                    idx[ax] = 0;
                    let o = out.index(idx[0], idx[1], idx[2], idx[3]);
                    if v > out.data[o] {
                        out.data[o] = v;
                    }
                }
            }
        }
    }
    if axis != Axis::Channel {
        out.orient_groups = a.orient_groups;
    }
    Ok(out)
}
