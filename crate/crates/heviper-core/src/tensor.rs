//! Dense f32 tensor primitives the adapter math is built from.
//!
//! All operations are pure and deterministic: dot products accumulate in
//! f64 and round to f32 once per output element, in index order. There is
//! no autodiff and no training here.

use crate::error::{Error, Result};

/// Epsilon added to the variance inside layer normalization.
pub const LN_EPSILON: f64 = 1e-6;

/// A channel-major C x H x W grid of f32 values.
///
/// Index layout: `data[c * h * w + i * w + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FeatureGrid {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values ({channels}x{height}x{width})", channels * height * width),
                got: format!("{}", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature grid input"));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, c: usize, i: usize, j: usize) -> f32 {
        self.data[c * self.height * self.width + i * self.width + j]
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &[f32] {
        let hw = self.height * self.width;
        &self.data[c * hw..(c + 1) * hw]
    }
}

/// A token-major (N+1) x D sequence; token 0 is the class token.
///
/// Index layout: `data[t * dim + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    token_count: usize,
    dim: usize,
    data: Vec<f32>,
}

impl TokenSequence {
    pub fn new(token_count: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if token_count == 0 || dim == 0 || data.len() != token_count * dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values ({token_count} tokens x {dim})", token_count * dim),
                got: format!("{}", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("token sequence input"));
        }
        Ok(Self {
            token_count,
            dim,
            data,
        })
    }

    pub fn zeros(token_count: usize, dim: usize) -> Self {
        Self {
            token_count,
            dim,
            data: vec![0.0; token_count * dim],
        }
    }

    pub fn token_count(&self) -> usize {
        self.token_count
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn token(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// Patch count excluding the class token.
    pub fn patch_count(&self) -> usize {
        self.token_count - 1
    }

    /// Side length of the patch grid; errors when the patch count is not a
    /// perfect square.
    pub fn patch_grid_side(&self) -> Result<usize> {
        let n = self.patch_count();
        let side = (n as f64).sqrt().round() as usize;
        if side * side != n {
            return Err(Error::NonSquarePatchCount(n));
        }
        Ok(side)
    }

    /// Elementwise sum of two sequences of identical shape.
    pub fn add(&self, other: &TokenSequence) -> Result<TokenSequence> {
        if self.token_count != other.token_count || self.dim != other.dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", self.token_count, self.dim),
                got: format!("{}x{}", other.token_count, other.dim),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(TokenSequence {
            token_count: self.token_count,
            dim: self.dim,
            data,
        })
    }
}

/// A dense row-major matrix of weights (rows = output dim, cols = input dim).
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values ({rows}x{cols})", rows * cols),
                got: format!("{}", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("weight matrix"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// y = W x with f64 accumulation.
    pub fn apply(&self, x: &[f32], y: &mut [f32]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (r, out) in y.iter_mut().enumerate() {
            let row = self.row(r);
            let mut acc = 0.0f64;
            for (w, v) in row.iter().zip(x) {
                acc += *w as f64 * *v as f64;
            }
            *out = acc as f32;
        }
    }
}

/// Per-channel 3x3 correlation with the given dilation and zero padding;
/// spatial dimensions are preserved.
pub fn depthwise_conv3x3(
    grid: &FeatureGrid,
    kernels: &[[f32; 9]],
    dilation: usize,
) -> Result<FeatureGrid> {
    if kernels.len() != grid.channels() {
        return Err(Error::KernelCountMismatch {
            kernels: kernels.len(),
            channels: grid.channels(),
        });
    }
    if dilation == 0 || dilation > (isize::MAX as usize) / 2 {
        return Err(Error::DilationOutOfRange(dilation));
    }
    let (h, w) = (grid.height(), grid.width());
    let mut out = FeatureGrid::zeros(grid.channels(), h, w);
    let hw = h * w;
    let d = dilation as isize;
    for (c, kernel) in kernels.iter().enumerate() {
        let src = grid.channel(c);
        let dst = &mut out.data[c * hw..(c + 1) * hw];
        for i in 0..h as isize {
            for j in 0..w as isize {
                let mut acc = 0.0f64;
                for di in -1..=1isize {
                    let si = i + di * d;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    for dj in -1..=1isize {
                        let sj = j + dj * d;
                        if sj < 0 || sj >= w as isize {
                            continue;
                        }
                        let k = kernel[((di + 1) * 3 + (dj + 1)) as usize];
                        acc += k as f64 * src[(si as usize) * w + sj as usize] as f64;
                    }
                }
                dst[(i as usize) * w + j as usize] = acc as f32;
            }
        }
    }
    Ok(out)
}

/// Per-pixel linear map across channels; spatial dimensions are preserved.
pub fn pointwise_conv(grid: &FeatureGrid, weights: &Mat, bias: &[f32]) -> Result<FeatureGrid> {
    if weights.cols() != grid.channels() {
        return Err(Error::DimMismatch {
            context: "pointwise_conv input channels",
            expected: weights.cols(),
            got: grid.channels(),
        });
    }
    if bias.len() != weights.rows() {
        return Err(Error::DimMismatch {
            context: "pointwise_conv bias",
            expected: weights.rows(),
            got: bias.len(),
        });
    }
    let (h, w) = (grid.height(), grid.width());
    let hw = h * w;
    let cout = weights.rows();
    let mut out = FeatureGrid::zeros(cout, h, w);
    for co in 0..cout {
        let row = weights.row(co);
        let dst = &mut out.data[co * hw..(co + 1) * hw];
        for px in 0..hw {
            let mut acc = bias[co] as f64;
            for (ci, wv) in row.iter().enumerate() {
                acc += *wv as f64 * grid.data[ci * hw + px] as f64;
            }
            dst[px] = acc as f32;
        }
    }
    Ok(out)
}

/// Per-token matrix product; the token count is preserved.
pub fn linear_project(tokens: &TokenSequence, weights: &Mat) -> Result<TokenSequence> {
    if weights.cols() != tokens.dim() {
        return Err(Error::DimMismatch {
            context: "linear_project input dim",
            expected: weights.cols(),
            got: tokens.dim(),
        });
    }
    let mut out = TokenSequence::zeros(tokens.token_count(), weights.rows());
    let dout = weights.rows();
    for t in 0..tokens.token_count() {
        let x = tokens.token(t);
        let y = &mut out.data[t * dout..(t + 1) * dout];
        weights.apply(x, y);
    }
    Ok(out)
}

/// GeLU with the exact Gaussian CDF (erf form), evaluated in f64.
#[inline]
pub fn gelu_scalar(x: f32) -> f32 {
    let xf = x as f64;
    (xf * 0.5 * (1.0 + libm::erf(xf / std::f64::consts::SQRT_2))) as f32
}

/// Elementwise GeLU.
pub fn gelu(values: &[f32]) -> Vec<f32> {
    values.iter().map(|&x| gelu_scalar(x)).collect()
}

/// s1 * LN(x) + s2 * x per token, where LN is per-token layer normalization
/// (population statistics over the dim axis, epsilon-stabilized, no affine).
pub fn scaled_norm_input(tokens: &TokenSequence, s1: f32, s2: f32) -> TokenSequence {
    let dim = tokens.dim();
    let mut out = TokenSequence::zeros(tokens.token_count(), dim);
    for t in 0..tokens.token_count() {
        let x = tokens.token(t);
        let mut mean = 0.0f64;
        for &v in x {
            mean += v as f64;
        }
        mean /= dim as f64;
        let mut var = 0.0f64;
        for &v in x {
            let d = v as f64 - mean;
            var += d * d;
        }
        var /= dim as f64;
        let denom = (var + LN_EPSILON).sqrt();
        let dst = &mut out.data[t * dim..(t + 1) * dim];
        for (d, &v) in dst.iter_mut().zip(x) {
            let ln = (v as f64 - mean) / denom;
            *d = (s1 as f64 * ln + s2 as f64 * v as f64) as f32;
        }
    }
    out
}

/// Population variance of each channel's spatial values.
pub fn channel_variance(grid: &FeatureGrid) -> Vec<f32> {
    let hw = grid.height() * grid.width();
    (0..grid.channels())
        .map(|c| {
            let ch = grid.channel(c);
            let mut mean = 0.0f64;
            for &v in ch {
                mean += v as f64;
            }
            mean /= hw as f64;
            let mut var = 0.0f64;
            for &v in ch {
                let d = v as f64 - mean;
                var += d * d;
            }
            (var / hw as f64) as f32
        })
        .collect()
}
