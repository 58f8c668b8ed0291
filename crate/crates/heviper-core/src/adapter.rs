//! Bypass adapter branches.
//!
//! Two isolated chains of per-block adapters (one for height estimation,
//! one for place recognition) run parallel to a frozen backbone. Each block
//! applies `x0 + U(act(M * f_pw(f_dw(D(s1*LN(x0) + s2*x0)))))` where the
//! convolutions carry their own additive shortcuts, and the carried branch
//! output is re-injected into the next block's input.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fileio;
use crate::rng::{hash_chain, SplitMix64};
use crate::tensor::{
    channel_variance, depthwise_conv3x3, gelu_scalar, linear_project, pointwise_conv,
    scaled_norm_input, FeatureGrid, Mat, TokenSequence,
};

pub const WEIGHTS_MAGIC: [u8; 4] = *b"HEVA";
pub const WEIGHTS_VERSION: u32 = 1;

/// Task index of an adapter branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BranchId {
    /// Height estimation branch.
    He,
    /// Place recognition branch.
    Vpr,
}

impl BranchId {
    fn seed_tag(self) -> u64 {
        match self {
            BranchId::He => 0,
            BranchId::Vpr => 1,
        }
    }
}

/// Per-block adapter weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    pub down_proj: Mat,
    pub dw_kernels: Vec<[f32; 9]>,
    pub dw_dilation: usize,
    pub pw_weights: Mat,
    pub pw_bias: Vec<f32>,
    pub up_proj: Mat,
    pub s1: f32,
    pub s2: f32,
    pub mask_enabled: bool,
}

impl AdapterParams {
    pub fn dim(&self) -> usize {
        self.down_proj.cols()
    }

    pub fn bottleneck(&self) -> usize {
        self.down_proj.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let b = self.bottleneck();
        if b >= d {
            return Err(Error::DimMismatch {
                context: "adapter bottleneck must be smaller than the token dim",
                expected: d,
                got: b,
            });
        }
        if self.dw_kernels.len() != b {
            return Err(Error::KernelCountMismatch {
                kernels: self.dw_kernels.len(),
                channels: b,
            });
        }
        if self.pw_weights.rows() != b || self.pw_weights.cols() != b {
            return Err(Error::DimMismatch {
                context: "pointwise weights must be bottleneck x bottleneck",
                expected: b,
                got: self.pw_weights.rows(),
            });
        }
        if self.pw_bias.len() != b {
            return Err(Error::DimMismatch {
                context: "pointwise bias",
                expected: b,
                got: self.pw_bias.len(),
            });
        }
        if self.up_proj.rows() != d || self.up_proj.cols() != b {
            return Err(Error::DimMismatch {
                context: "up projection must be dim x bottleneck",
                expected: d,
                got: self.up_proj.rows(),
            });
        }
        if self.dw_dilation == 0 {
            return Err(Error::DilationOutOfRange(0));
        }
        if !self.s1.is_finite() || !self.s2.is_finite() {
            return Err(Error::NonFinite("adapter scale weights"));
        }
        Ok(())
    }

    /// Seeded synthetic weights: uniform(-0.02, 0.02) for every matrix,
    /// s1 = s2 = 1. `block` is the 1-based block index.
    pub fn synthesize(
        seed: u64,
        branch: BranchId,
        block: usize,
        dim: usize,
        bottleneck: usize,
        dilation: usize,
        mask_enabled: bool,
    ) -> Result<Self> {
        let mut rng = SplitMix64::new(hash_chain(&[
            seed,
            0xADA7,
            branch.seed_tag(),
            block as u64,
        ]));
        let lim = 0.02f32;
        let down = Mat::new(bottleneck, dim, rng.fill_uniform(bottleneck * dim, -lim, lim))?;
        let dw: Vec<[f32; 9]> = (0..bottleneck)
            .map(|_| {
                let v = rng.fill_uniform(9, -lim, lim);
                let mut k = [0.0f32; 9];
                k.copy_from_slice(&v);
                k
            })
            .collect();
        let pw = Mat::new(
            bottleneck,
            bottleneck,
            rng.fill_uniform(bottleneck * bottleneck, -lim, lim),
        )?;
        let pwb = rng.fill_uniform(bottleneck, -lim, lim);
        let up = Mat::new(dim, bottleneck, rng.fill_uniform(dim * bottleneck, -lim, lim))?;
        let params = AdapterParams {
            down_proj: down,
            dw_kernels: dw,
            dw_dilation: dilation,
            pw_weights: pw,
            pw_bias: pwb,
            up_proj: up,
            s1: 1.0,
            s2: 1.0,
            mask_enabled,
        };
        params.validate()?;
        Ok(params)
    }
}

/// Synthesizes a whole branch (`blocks` adapters) from one seed.
pub fn synthesize_branch(
    seed: u64,
    branch: BranchId,
    blocks: usize,
    dim: usize,
    bottleneck: usize,
    dilation: usize,
    mask_enabled: bool,
) -> Result<Vec<AdapterParams>> {
    (1..=blocks)
        .map(|l| AdapterParams::synthesize(seed, branch, l, dim, bottleneck, dilation, mask_enabled))
        .collect()
}

/// The carried output of one branch while folding over the backbone stream.
#[derive(Debug, Clone)]
pub struct BranchState {
    pub carried: TokenSequence,
    pub block_index: usize,
}

impl BranchState {
    /// Initial state: the carried sequence is zero.
    pub fn initial(token_count: usize, dim: usize) -> Self {
        Self {
            carried: TokenSequence::zeros(token_count, dim),
            block_index: 0,
        }
    }
}

/// Center-weighted per-channel mask over an H x W grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterMask {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl CenterMask {
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.values.len() / (self.height * self.width)
    }
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn at(&self, c: usize, i: usize, j: usize) -> f32 {
        self.values[c * self.height * self.width + i * self.width + j]
    }
}

/// Gaussian-radial mask scaled by per-channel variance:
/// `M[c,i,j] = exp(-((j - W/2)^2 + (i - H/2)^2) / (2 (max(H,W)/2)^2) * var[c])`.
pub fn center_mask(height: usize, width: usize, variances: &[f32]) -> Result<CenterMask> {
    if let Some(&v) = variances.iter().find(|v| **v < 0.0) {
        return Err(Error::NegativeVariance(v));
    }
    let hc = height as f64 / 2.0;
    let wc = width as f64 / 2.0;
    let half_max = (height.max(width) as f64) / 2.0;
    let denom = 2.0 * half_max * half_max;
    let mut values = Vec::with_capacity(variances.len() * height * width);
    for &var in variances {
        for i in 0..height {
            for j in 0..width {
                let dj = j as f64 - wc;
                let di = i as f64 - hc;
                let r2 = dj * dj + di * di;
                values.push((-(r2 / denom) * var as f64).exp() as f32);
            }
        }
    }
    Ok(CenterMask {
        height,
        width,
        values,
    })
}

fn grid_add(a: &FeatureGrid, b: &FeatureGrid) -> FeatureGrid {
    debug_assert_eq!(a.data().len(), b.data().len());
    let mut out = a.clone();
    for (o, v) in out.data_mut().iter_mut().zip(b.data()) {
        *o += v;
    }
    out
}

/// Reshapes the patch tokens (token 0 excluded) into a bottleneck-channel
/// square grid. Token `1 + i*side + j` maps to grid position (i, j).
fn patch_tokens_to_grid(tokens: &TokenSequence, side: usize) -> FeatureGrid {
    let ch = tokens.dim();
    let mut grid = FeatureGrid::zeros(ch, side, side);
    let hw = side * side;
    for i in 0..side {
        for j in 0..side {
            let tok = tokens.token(1 + i * side + j);
            let px = i * side + j;
            for (c, &v) in tok.iter().enumerate() {
                grid.data_mut()[c * hw + px] = v;
            }
        }
    }
    grid
}

fn grid_to_tokens(class_token: &[f32], grid: &FeatureGrid) -> TokenSequence {
    let ch = grid.channels();
    let hw = grid.height() * grid.width();
    let mut data = vec![0.0f32; (1 + hw) * ch];
    data[..ch].copy_from_slice(class_token);
    for px in 0..hw {
        for c in 0..ch {
            data[(1 + px) * ch + c] = grid.data()[c * hw + px];
        }
    }
    TokenSequence::new(1 + hw, ch, data).expect("grid tokens are finite by construction")
}

/// Single-block adapter forward pass.
///
/// The class token bypasses both convolutions and receives mask value 1;
/// patch tokens are reshaped to a square grid for the depthwise and
/// pointwise convolutions (each with an additive shortcut).
pub fn adapter_forward(x0: &TokenSequence, params: &AdapterParams) -> Result<TokenSequence> {
    params.validate()?;
    if params.dim() != x0.dim() {
        return Err(Error::DimMismatch {
            context: "adapter_forward token dim",
            expected: params.dim(),
            got: x0.dim(),
        });
    }
    let side = x0.patch_grid_side()?;

    let z = scaled_norm_input(x0, params.s1, params.s2);
    let down = linear_project(&z, &params.down_proj)?;

    let class_down = down.token(0).to_vec();
    let grid = patch_tokens_to_grid(&down, side);

    // f_dw and f_pw both carry an additive shortcut: f(x) = x + conv(x)
    let conv = depthwise_conv3x3(&grid, &params.dw_kernels, params.dw_dilation)?;
    let g1 = grid_add(&grid, &conv);
    let pw = pointwise_conv(&g1, &params.pw_weights, &params.pw_bias)?;
    let mut g2 = grid_add(&g1, &pw);

    if params.mask_enabled {
        let variances = channel_variance(&g2);
        let mask = center_mask(side, side, &variances)?;
        for (v, m) in g2.data_mut().iter_mut().zip(mask.values()) {
            *v *= m;
        }
    }

    for v in g2.data_mut() {
        *v = gelu_scalar(*v);
    }
    let class_act: Vec<f32> = class_down.iter().map(|&v| gelu_scalar(v)).collect();

    let act_tokens = grid_to_tokens(&class_act, &g2);
    let up = linear_project(&act_tokens, &params.up_proj)?;
    x0.add(&up)
}

/// One recurrence step: feed the frozen feature plus the carried branch
/// output through this block's adapter.
pub fn branch_step(
    state: &BranchState,
    backbone_out: &TokenSequence,
    params: &AdapterParams,
) -> Result<BranchState> {
    let input = backbone_out.add(&state.carried)?;
    let carried = adapter_forward(&input, params)?;
    Ok(BranchState {
        carried,
        block_index: state.block_index + 1,
    })
}

/// Folds `branch_step` over a backbone stream and returns the final carried
/// output.
pub fn run_branch(stream: &[TokenSequence], params: &[AdapterParams]) -> Result<TokenSequence> {
    if stream.is_empty() || stream.len() != params.len() {
        return Err(Error::DimMismatch {
            context: "run_branch stream length must equal params length (and be >= 1)",
            expected: params.len(),
            got: stream.len(),
        });
    }
    let first = &stream[0];
    let mut state = BranchState::initial(first.token_count(), first.dim());
    for (x, p) in stream.iter().zip(params) {
        state = branch_step(&state, x, p)?;
    }
    Ok(state.carried)
}

/// Writes one branch's adapter weights (HEVA container).
pub fn save_branch_params(path: &Path, params: &[AdapterParams]) -> Result<()> {
    if params.is_empty() {
        return Err(Error::DimMismatch {
            context: "cannot save an empty branch",
            expected: 1,
            got: 0,
        });
    }
    let d = params[0].dim();
    let b = params[0].bottleneck();
    let dilation = params[0].dw_dilation;
    for p in params {
        p.validate()?;
        if p.dim() != d || p.bottleneck() != b || p.dw_dilation != dilation {
            return Err(Error::DimMismatch {
                context: "all blocks in a branch must share dims and dilation",
                expected: d,
                got: p.dim(),
            });
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    use std::io::Write;
    w.write_all(&WEIGHTS_MAGIC)?;
    fileio::write_u32(&mut w, WEIGHTS_VERSION)?;
    fileio::write_u32(&mut w, params.len() as u32)?;
    fileio::write_u32(&mut w, d as u32)?;
    fileio::write_u32(&mut w, b as u32)?;
    fileio::write_u32(&mut w, dilation as u32)?;
    for p in params {
        fileio::write_f32_slice(&mut w, p.down_proj.data())?;
        for k in &p.dw_kernels {
            fileio::write_f32_slice(&mut w, k)?;
        }
        fileio::write_f32_slice(&mut w, p.pw_weights.data())?;
        fileio::write_f32_slice(&mut w, &p.pw_bias)?;
        fileio::write_f32_slice(&mut w, p.up_proj.data())?;
        fileio::write_f32(&mut w, p.s1)?;
        fileio::write_f32(&mut w, p.s2)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))?.sync_all()?;
    Ok(())
}

/// Reads a branch weight file. The mask flag is a branch role, not part of
/// the container, so the caller supplies it.
pub fn load_branch_params(path: &Path, mask_enabled: bool) -> Result<Vec<AdapterParams>> {
    let mut r = BufReader::new(File::open(path)?);
    fileio::read_magic(&mut r, WEIGHTS_MAGIC, path)?;
    fileio::read_version(&mut r, WEIGHTS_VERSION, path)?;
    let blocks = fileio::read_u32(&mut r, path, "block count")? as usize;
    let d = fileio::read_u32(&mut r, path, "token dim")? as usize;
    let b = fileio::read_u32(&mut r, path, "bottleneck")? as usize;
    let dilation = fileio::read_u32(&mut r, path, "dilation")? as usize;
    let mut out = Vec::with_capacity(blocks);
    for _ in 0..blocks {
        let down = Mat::new(b, d, fileio::read_f32_vec(&mut r, b * d, path, "down projection")?)?;
        let mut kernels = Vec::with_capacity(b);
        for _ in 0..b {
            let v = fileio::read_f32_vec(&mut r, 9, path, "depthwise kernel")?;
            let mut k = [0.0f32; 9];
            k.copy_from_slice(&v);
            kernels.push(k);
        }
        let pw = Mat::new(b, b, fileio::read_f32_vec(&mut r, b * b, path, "pointwise weights")?)?;
        let pwb = fileio::read_f32_vec(&mut r, b, path, "pointwise bias")?;
        let up = Mat::new(d, b, fileio::read_f32_vec(&mut r, d * b, path, "up projection")?)?;
        let s1 = fileio::read_f32(&mut r, path, "s1")?;
        let s2 = fileio::read_f32(&mut r, path, "s2")?;
        let p = AdapterParams {
            down_proj: down,
            dw_kernels: kernels,
            dw_dilation: dilation,
            pw_weights: pw,
            pw_bias: pwb,
            up_proj: up,
            s1,
            s2,
            mask_enabled,
        };
        p.validate()?;
        out.push(p);
    }
    Ok(out)
}
