//! Linear maps used as layer weights: dense matrices, structurally
//! skew-symmetric matrices, same-padding 2-D convolutions and per-pixel
//! channel mixing.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{axpy, dot, Matrix};

pub trait LinearOperator {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    /// `out = A x`
    fn apply(&self, x: &[f64], out: &mut [f64]);
    /// `out = Aᵀ x`
    fn apply_transpose(&self, x: &[f64], out: &mut [f64]);

    /// Materializes the operator column by column.
    fn to_dense(&self) -> Matrix {
        let (m, n) = (self.out_dim(), self.in_dim());
        let mut dense = Matrix::zeros(m, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; m];
        for j in 0..n {
            e[j] = 1.0;
            self.apply(&e, &mut col);
            for i in 0..m {
                dense.set(i, j, col[i]);
            }
            e[j] = 0.0;
        }
        dense
    }
}

impl LinearOperator for Matrix {
    fn in_dim(&self) -> usize {
        self.cols()
    }
    fn out_dim(&self) -> usize {
        self.rows()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.mul_vec_into(x, out)
    }
    fn apply_transpose(&self, x: &[f64], out: &mut [f64]) {
        self.mul_t_vec_into(x, out)
    }
    fn to_dense(&self) -> Matrix {
        self.clone()
    }
}

/// Skew-symmetric `n×n` matrix stored as its strict upper triangle,
/// row-major. `K = −Kᵀ` holds exactly by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewMatrix {
    n: usize,
    upper: Vec<f64>,
}

impl SkewMatrix {
    pub fn zeros(n: usize) -> Self {
        SkewMatrix {
            n,
            upper: vec![0.0; n * n.saturating_sub(1) / 2],
        }
    }

    pub fn from_upper(n: usize, upper: Vec<f64>) -> Option<Self> {
        (upper.len() == n * n.saturating_sub(1) / 2).then_some(SkewMatrix { n, upper })
    }

    /// Keeps the strict upper triangle of `m`.
    pub fn from_matrix_upper(m: &Matrix) -> Self {
        let n = m.rows();
        let mut s = SkewMatrix::zeros(n);
        for i in 0..n {
            for j in i + 1..n {
                let idx = s.index(i, j);
                s.upper[idx] = m.get(i, j);
            }
        }
        s
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j);
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        use core::cmp::Ordering::*;
        match i.cmp(&j) {
            Less => self.upper[self.index(i, j)],
            Greater => -self.upper[self.index(j, i)],
            Equal => 0.0,
        }
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn upper_mut(&mut self) -> &mut [f64] {
        &mut self.upper
    }
}

impl LinearOperator for SkewMatrix {
    fn in_dim(&self) -> usize {
        self.n
    }
    fn out_dim(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut idx = 0;
        for i in 0..self.n {
            for j in i + 1..self.n {
                let u = self.upper[idx];
                out[i] += u * x[j];
                out[j] -= u * x[i];
                idx += 1;
            }
        }
    }
    fn apply_transpose(&self, x: &[f64], out: &mut [f64]) {
        self.apply(x, out);
        out.iter_mut().for_each(|o| *o = -*o);
    }
}

/// Same-padding 2-D convolution (cross-correlation) with an odd square
/// kernel and no bias. Feature maps are laid out channel-major:
/// `x[c * height * width + row * width + col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    out_channels: usize,
    in_channels: usize,
    height: usize,
    width: usize,
    ksize: usize,
    kernel: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(out_channels: usize, in_channels: usize, height: usize, width: usize, ksize: usize) -> Self {
        assert!(ksize % 2 == 1, "kernel size must be odd");
        Conv2d {
            out_channels,
            in_channels,
            height,
            width,
            ksize,
            kernel: vec![0.0; out_channels * in_channels * ksize * ksize],
        }
    }

    pub fn with_kernel(
        out_channels: usize,
        in_channels: usize,
        height: usize,
        width: usize,
        ksize: usize,
        kernel: Vec<f64>,
    ) -> Option<Self> {
        let c = Conv2d::zeros(out_channels, in_channels, height, width, ksize);
        (kernel.len() == c.kernel.len()).then_some(Conv2d { kernel, ..c })
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }
    pub fn in_channels(&self) -> usize {
        self.in_channels
    }
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
    pub fn ksize(&self) -> usize {
        self.ksize
    }
    pub fn image_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }
    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }
    pub fn kernel_mut(&mut self) -> &mut [f64] {
        &mut self.kernel
    }

    #[inline]
    fn tap(&self, o: usize, c: usize, dy: usize, dx: usize) -> usize {
        ((o * self.in_channels + c) * self.ksize + dy) * self.ksize + dx
    }

    /// Valid output rows/cols for a tap offset, as (dst_start, src_start, len).
    #[inline]
    fn span(extent: usize, offset: isize) -> (usize, usize, usize) {
        if offset >= 0 {
            let off = offset as usize;
            (0, off, extent.saturating_sub(off))
        } else {
            let off = (-offset) as usize;
            (off, 0, extent.saturating_sub(off))
        }
    }

    /// Calls `f(tap_index, dst_row_slice_start, src_row_slice_start, len)` for every
    /// overlapping row segment of every tap, for the given channel pair.
    #[inline]
    fn for_each_segment(&self, o: usize, c: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
        let pad = (self.ksize / 2) as isize;
        let (h, w) = (self.height, self.width);
        for dy in 0..self.ksize {
            let (r0, s0, rows) = Self::span(h, dy as isize - pad);
            for dx in 0..self.ksize {
                let (c0, t0, cols) = Self::span(w, dx as isize - pad);
                let tap = self.tap(o, c, dy, dx);
                for r in 0..rows {
                    f(tap, (r0 + r) * w + c0, (s0 + r) * w + t0, cols);
                }
            }
        }
    }

    /// `grad += ∂⟨left, C·right⟩ / ∂kernel`.
    pub fn accumulate_outer(&self, grad: &mut [f64], left: &[f64], right: &[f64]) {
        let p = self.pixels();
        for o in 0..self.out_channels {
            for ch in 0..self.in_channels {
                let (l, r) = (&left[o * p..(o + 1) * p], &right[ch * p..(ch + 1) * p]);
                self.for_each_segment(o, ch, |tap, d, s, len| {
                    grad[tap] += dot(&l[d..d + len], &r[s..s + len]);
                });
            }
        }
    }
}

impl LinearOperator for Conv2d {
    fn in_dim(&self) -> usize {
        self.in_channels * self.pixels()
    }
    fn out_dim(&self) -> usize {
        self.out_channels * self.pixels()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let p = self.pixels();
        out.iter_mut().for_each(|o| *o = 0.0);
        for o in 0..self.out_channels {
            for c in 0..self.in_channels {
                let (dst, src) = (&mut out[o * p..(o + 1) * p], &x[c * p..(c + 1) * p]);
                self.for_each_segment(o, c, |tap, d, s, len| {
                    let wgt = self.kernel[tap];
                    if wgt != 0.0 {
                        axpy(wgt, &src[s..s + len], &mut dst[d..d + len]);
                    }
                });
            }
        }
    }
    fn apply_transpose(&self, x: &[f64], out: &mut [f64]) {
        let p = self.pixels();
        out.iter_mut().for_each(|o| *o = 0.0);
        for o in 0..self.out_channels {
            for c in 0..self.in_channels {
                let (src, dst) = (&x[o * p..(o + 1) * p], &mut out[c * p..(c + 1) * p]);
                self.for_each_segment(o, c, |tap, d, s, len| {
                    let wgt = self.kernel[tap];
                    if wgt != 0.0 {
                        axpy(wgt, &src[d..d + len], &mut dst[s..s + len]);
                    }
                });
            }
        }
    }
}

/// The same `c×c` matrix applied to the channel vector at every pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMix {
    pub mix: Matrix,
    pub pixels: usize,
}

impl LinearOperator for ChannelMix {
    fn in_dim(&self) -> usize {
        self.mix.cols() * self.pixels
    }
    fn out_dim(&self) -> usize {
        self.mix.rows() * self.pixels
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let p = self.pixels;
        out.iter_mut().for_each(|o| *o = 0.0);
        for o in 0..self.mix.rows() {
            for c in 0..self.mix.cols() {
                let m = self.mix.get(o, c);
                if m != 0.0 {
                    axpy(m, &x[c * p..(c + 1) * p], &mut out[o * p..(o + 1) * p]);
                }
            }
        }
    }
    fn apply_transpose(&self, x: &[f64], out: &mut [f64]) {
        let p = self.pixels;
        out.iter_mut().for_each(|o| *o = 0.0);
        for o in 0..self.mix.rows() {
            for c in 0..self.mix.cols() {
                let m = self.mix.get(o, c);
                if m != 0.0 {
                    axpy(m, &x[o * p..(o + 1) * p], &mut out[c * p..(c + 1) * p]);
                }
            }
        }
    }
}

/// A trainable weight operator.
#[derive(Debug, Clone, PartialEq)]
pub enum Weight {
    Full(Matrix),
    Skew(SkewMatrix),
    Conv(Conv2d),
}

impl Weight {
    pub fn params(&self) -> &[f64] {
        match self {
            Weight::Full(m) => m.as_slice(),
            Weight::Skew(s) => s.upper(),
            Weight::Conv(c) => c.kernel(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Weight::Full(m) => m.as_mut_slice(),
            Weight::Skew(s) => s.upper_mut(),
            Weight::Conv(c) => c.kernel_mut(),
        }
    }

    pub fn zeros_like(&self) -> Weight {
        match self {
            Weight::Full(m) => Weight::Full(Matrix::zeros(m.rows(), m.cols())),
            Weight::Skew(s) => Weight::Skew(SkewMatrix::zeros(s.dim())),
            Weight::Conv(c) => Weight::Conv(Conv2d::zeros(c.out_channels, c.in_channels, c.height, c.width, c.ksize)),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().len()
    }

    /// `grad += ∂⟨left, A·right⟩ / ∂θ` where `θ` are this weight's stored
    /// parameters and `grad` is congruent with them.
    pub fn accumulate_outer(&self, grad: &mut [f64], left: &[f64], right: &[f64]) {
        match self {
            Weight::Full(m) => {
                let cols = m.cols();
                for (i, &li) in left.iter().enumerate() {
                    if li != 0.0 {
                        axpy(li, right, &mut grad[i * cols..(i + 1) * cols]);
                    }
                }
            }
            Weight::Skew(s) => {
                let n = s.dim();
                let mut idx = 0;
                for i in 0..n {
                    for j in i + 1..n {
                        grad[idx] += left[i] * right[j] - left[j] * right[i];
                        idx += 1;
                    }
                }
            }
            Weight::Conv(c) => c.accumulate_outer(grad, left, right),
        }
    }
}

impl LinearOperator for Weight {
    fn in_dim(&self) -> usize {
        match self {
            Weight::Full(m) => m.in_dim(),
            Weight::Skew(s) => s.in_dim(),
            Weight::Conv(c) => c.in_dim(),
        }
    }
    fn out_dim(&self) -> usize {
        match self {
            Weight::Full(m) => m.out_dim(),
            Weight::Skew(s) => s.out_dim(),
            Weight::Conv(c) => c.out_dim(),
        }
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Weight::Full(m) => m.apply(x, out),
            Weight::Skew(s) => s.apply(x, out),
            Weight::Conv(c) => c.apply(x, out),
        }
    }
    fn apply_transpose(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Weight::Full(m) => m.apply_transpose(x, out),
            Weight::Skew(s) => s.apply_transpose(x, out),
            Weight::Conv(c) => c.apply_transpose(x, out),
        }
    }
    fn to_dense(&self) -> Matrix {
        match self {
            Weight::Full(m) => m.clone(),
            Weight::Skew(s) => s.to_dense(),
            Weight::Conv(c) => c.to_dense(),
        }
    }
}
