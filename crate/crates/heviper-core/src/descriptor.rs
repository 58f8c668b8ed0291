//! Descriptor extraction: backbone stub -> branch output -> pooling ->
//! normalized descriptor.
//!
//! The stub stands in for a frozen foundation model: patches are centered,
//! linearly embedded with seeded tables and pushed through L seeded linear
//! block maps, emitting one token sequence per block. It is deterministic
//! given (seed, image) and counts its forward passes so the
//! one-forward-pass-per-query contract is testable.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::adapter::{run_branch, AdapterParams};
use crate::error::{Error, Result};
use crate::fileio;
use crate::raster::ImageSource;
use crate::rng::{hash_chain, SplitMix64};
use crate::tensor::{Mat, TokenSequence};

pub const DESCRIPTOR_MAGIC: [u8; 4] = *b"HEVD";
pub const DESCRIPTOR_VERSION: u32 = 1;

/// Clamp floor applied before the GeM power.
pub const GEM_EPSILON: f32 = 1e-6;

const PATCH_PROJ_TAG: u64 = 0x9A7C;
const BLOCK_TAG: u64 = 0xB10C;

/// A dense retrieval vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    values: Vec<f32>,
    normalized: bool,
}

impl Descriptor {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::ShapeMismatch {
                expected: "nonempty descriptor".into(),
                got: "0 values".into(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("descriptor"));
        }
        Ok(Self {
            values,
            normalized: false,
        })
    }

    /// Wraps values that are already unit length (as validated by the caller
    /// or read back from a descriptor file).
    pub fn new_normalized(values: Vec<f32>) -> Result<Self> {
        let mut d = Self::new(values)?;
        d.normalized = true;
        Ok(d)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
    pub fn values(&self) -> &[f32] {
        &self.values
    }
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| v as f64 * v as f64)
            .sum::<f64>()
            .sqrt()
    }

    /// Cosine similarity assuming unit-norm inputs (dot product), f64
    /// accumulation in index order.
    pub fn dot(&self, other: &Descriptor) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum()
    }
}

/// Scales a descriptor to unit L2 norm.
pub fn l2_normalize(d: &Descriptor) -> Result<Descriptor> {
    let norm = d.norm();
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    let values = d.values.iter().map(|&v| (v as f64 / norm) as f32).collect();
    Ok(Descriptor {
        values,
        normalized: true,
    })
}

/// Generalized-mean pooling over patch tokens (class token excluded):
/// `d_k = (mean_i max(x_ik, eps)^p)^(1/p)`.
///
/// Computed in max-factored form so large powers neither overflow nor lose
/// the max-pool limit.
pub fn gem_pool(tokens: &TokenSequence, p: f32) -> Result<Descriptor> {
    if p.is_nan() || p < 1.0 || !p.is_finite() {
        return Err(Error::InvalidGemPower(p));
    }
    if tokens.token_count() < 2 {
        return Err(Error::ShapeMismatch {
            expected: "at least one patch token".into(),
            got: format!("{} tokens", tokens.token_count()),
        });
    }
    let dim = tokens.dim();
    let n = tokens.patch_count();
    let pf = p as f64;
    let mut values = Vec::with_capacity(dim);
    for k in 0..dim {
        let mut maxv = f64::MIN;
        for t in 1..=n {
            let v = tokens.token(t)[k].max(GEM_EPSILON) as f64;
            if v > maxv {
                maxv = v;
            }
        }
        let mut acc = 0.0f64;
        for t in 1..=n {
            let v = tokens.token(t)[k].max(GEM_EPSILON) as f64;
            acc += (v / maxv).powf(pf);
        }
        let mean = acc / n as f64;
        values.push((maxv * mean.powf(1.0 / pf)) as f32);
    }
    Descriptor::new(values)
}

/// Plain mean over patch tokens.
pub fn mean_pool(tokens: &TokenSequence) -> Result<Descriptor> {
    if tokens.token_count() < 2 {
        return Err(Error::ShapeMismatch {
            expected: "at least one patch token".into(),
            got: format!("{} tokens", tokens.token_count()),
        });
    }
    let dim = tokens.dim();
    let n = tokens.patch_count();
    let mut values = Vec::with_capacity(dim);
    for k in 0..dim {
        let mut acc = 0.0f64;
        for t in 1..=n {
            acc += tokens.token(t)[k] as f64;
        }
        values.push((acc / n as f64) as f32);
    }
    Descriptor::new(values)
}

/// Aggregation applied to the place branch output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Aggregator {
    Gem { p: f32 },
    Mean,
}

impl Aggregator {
    pub fn parse(name: &str, gem_p: f32) -> Result<Self> {
        match name {
            "gem" => Ok(Aggregator::Gem { p: gem_p }),
            "mean" => Ok(Aggregator::Mean),
            other => Err(Error::UnknownAggregator(other.to_string())),
        }
    }

    pub fn pool(&self, tokens: &TokenSequence) -> Result<Descriptor> {
        match self {
            Aggregator::Gem { p } => gem_pool(tokens, *p),
            Aggregator::Mean => mean_pool(tokens),
        }
    }
}

/// Deterministic stand-in for a frozen ViT backbone.
#[derive(Debug)]
pub struct BackboneStub {
    seed: u64,
    dim: usize,
    patch_grid: usize,
    block_maps: Vec<Mat>,
    forward_calls: AtomicU64,
}

impl BackboneStub {
    pub fn new(seed: u64, blocks: usize, dim: usize, patch_grid: usize) -> Result<Self> {
        if blocks == 0 || dim == 0 || patch_grid == 0 {
            return Err(Error::ShapeMismatch {
                expected: "nonzero blocks, dim and patch grid".into(),
                got: format!("L={blocks} D={dim} grid={patch_grid}"),
            });
        }
        let lim = (3.0 / dim as f64).sqrt() as f32;
        let block_maps = (1..=blocks)
            .map(|l| {
                let mut rng = SplitMix64::new(hash_chain(&[seed, BLOCK_TAG, l as u64]));
                Mat::new(dim, dim, rng.fill_uniform(dim * dim, -lim, lim))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            seed,
            dim,
            patch_grid,
            block_maps,
            forward_calls: AtomicU64::new(0),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn blocks(&self) -> usize {
        self.block_maps.len()
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn patch_grid(&self) -> usize {
        self.patch_grid
    }

    /// Number of forward passes since construction (or the last reset).
    pub fn forward_count(&self) -> u64 {
        self.forward_calls.load(Ordering::Relaxed)
    }

    pub fn reset_forward_count(&self) {
        self.forward_calls.store(0, Ordering::Relaxed);
    }

    fn patch_projection(&self, patch_len: usize) -> Mat {
        let mut rng = SplitMix64::new(hash_chain(&[self.seed, PATCH_PROJ_TAG, patch_len as u64]));
        let lim = (3.0 / patch_len as f64).sqrt() as f32;
        Mat::new(self.dim, patch_len, rng.fill_uniform(self.dim * patch_len, -lim, lim))
            .expect("finite seeded weights")
    }

    /// Emits one token sequence per block: patchify, center each patch,
    /// embed, then apply the seeded block maps cumulatively.
    pub fn forward(&self, image: &ImageSource) -> Result<Vec<TokenSequence>> {
        self.forward_calls.fetch_add(1, Ordering::Relaxed);
        let g = self.patch_grid;
        let (w, h) = (image.width(), image.height());
        if w % g != 0 || h % g != 0 {
            return Err(Error::PatchGridMismatch {
                width: w,
                height: h,
                grid: g,
            });
        }
        let (pw, ph) = (w / g, h / g);
        let patch_len = pw * ph;
        let proj = self.patch_projection(patch_len);
        let n = g * g;
        let d = self.dim;

        // tokens in f64 until the first rounding point
        let mut tokens = vec![0.0f64; (n + 1) * d];
        let mut patch = vec![0.0f64; patch_len];
        for gi in 0..g {
            for gj in 0..g {
                let mut mean = 0.0f64;
                for r in 0..ph {
                    for c in 0..pw {
                        let v = image.luminance(gi * ph + r, gj * pw + c);
                        patch[r * pw + c] = v;
                        mean += v;
                    }
                }
                mean /= patch_len as f64;
                for v in patch.iter_mut() {
                    *v -= mean;
                }
                let tok = &mut tokens[(1 + gi * g + gj) * d..(2 + gi * g + gj) * d];
                for (k, out) in tok.iter_mut().enumerate() {
                    let row = proj.row(k);
                    let mut acc = 0.0f64;
                    for (wv, pv) in row.iter().zip(&patch) {
                        acc += *wv as f64 * pv;
                    }
                    *out = acc;
                }
            }
        }
        // class token = mean of patch tokens
        for k in 0..d {
            let mut acc = 0.0f64;
            for t in 1..=n {
                acc += tokens[t * d + k];
            }
            tokens[k] = acc / n as f64;
        }
        let mut current =
            TokenSequence::new(n + 1, d, tokens.iter().map(|&v| v as f32).collect())?;

        let mut stream = Vec::with_capacity(self.block_maps.len());
        for map in &self.block_maps {
            current = crate::tensor::linear_project(&current, map)?;
            stream.push(current.clone());
        }
        Ok(stream)
    }
}

/// Height descriptor: GeM-pooled, L2-normalized output of the HE branch.
pub fn extract_height_descriptor(
    image: &ImageSource,
    stub: &BackboneStub,
    he_params: &[AdapterParams],
    gem_p: f32,
) -> Result<Descriptor> {
    let stream = stub.forward(image)?;
    let out = run_branch(&stream, he_params)?;
    l2_normalize(&gem_pool(&out, gem_p)?)
}

/// Place descriptor: aggregated, L2-normalized output of the VPR branch.
pub fn extract_place_descriptor(
    image: &ImageSource,
    stub: &BackboneStub,
    vpr_params: &[AdapterParams],
    aggregator: Aggregator,
) -> Result<Descriptor> {
    let stream = stub.forward(image)?;
    let out = run_branch(&stream, vpr_params)?;
    l2_normalize(&aggregator.pool(&out)?)
}

/// Extracts both descriptors from a single backbone forward pass.
pub fn extract_descriptor_pair(
    image: &ImageSource,
    stub: &BackboneStub,
    he_params: &[AdapterParams],
    vpr_params: &[AdapterParams],
    gem_p: f32,
    aggregator: Aggregator,
) -> Result<(Descriptor, Descriptor)> {
    let stream = stub.forward(image)?;
    let he_out = run_branch(&stream, he_params)?;
    let vpr_out = run_branch(&stream, vpr_params)?;
    let height = l2_normalize(&gem_pool(&he_out, gem_p)?)?;
    let place = l2_normalize(&aggregator.pool(&vpr_out)?)?;
    Ok((height, place))
}

/// Writes descriptors with their record ids (HEVD container).
pub fn save_descriptors(path: &Path, ids: &[u64], descriptors: &[Descriptor]) -> Result<()> {
    if ids.len() != descriptors.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} ids", descriptors.len()),
            got: format!("{}", ids.len()),
        });
    }
    let dim = descriptors.first().map(|d| d.dim()).unwrap_or(0);
    for d in descriptors {
        if d.dim() != dim {
            return Err(Error::DimMismatch {
                context: "descriptor file requires a uniform dim",
                expected: dim,
                got: d.dim(),
            });
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&DESCRIPTOR_MAGIC)?;
    fileio::write_u32(&mut w, DESCRIPTOR_VERSION)?;
    fileio::write_u64(&mut w, descriptors.len() as u64)?;
    fileio::write_u32(&mut w, dim as u32)?;
    for d in descriptors {
        fileio::write_f32_slice(&mut w, d.values())?;
    }
    for &id in ids {
        fileio::write_u64(&mut w, id)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a descriptor file back as (ids, descriptors).
pub fn load_descriptors(path: &Path) -> Result<(Vec<u64>, Vec<Descriptor>)> {
    let mut r = BufReader::new(File::open(path)?);
    fileio::read_magic(&mut r, DESCRIPTOR_MAGIC, path)?;
    fileio::read_version(&mut r, DESCRIPTOR_VERSION, path)?;
    let count = fileio::read_u64(&mut r, path, "descriptor count")? as usize;
    let dim = fileio::read_u32(&mut r, path, "descriptor dim")? as usize;
    let mut descriptors = Vec::with_capacity(count);
    for _ in 0..count {
        let values = fileio::read_f32_vec(&mut r, dim, path, "descriptor values")?;
        descriptors.push(Descriptor::new(values)?);
    }
    let mut ids = Vec::with_capacity(count);
    for _ in 0..count {
        ids.push(fileio::read_u64(&mut r, path, "record id")?);
    }
    Ok((ids, descriptors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::{synthesize_branch, BranchId};
    use crate::raster::Raster;
    use proptest::prelude::*;

    fn tokens_with_patch_values(per_dim: &[Vec<f32>]) -> TokenSequence {
        // one dim per inner slice, patches share index
        let dim = per_dim.len();
        let n = per_dim[0].len();
        let mut data = vec![0.0f32; (n + 1) * dim];
        for (k, col) in per_dim.iter().enumerate() {
            for (t, &v) in col.iter().enumerate() {
                data[(t + 1) * dim + k] = v;
            }
        }
        TokenSequence::new(n + 1, dim, data).unwrap()
    }

    fn test_image(seed: u64, side: usize) -> ImageSource {
        let mut rng = SplitMix64::new(seed);
        let data: Vec<u8> = (0..side * side).map(|_| (rng.next_u64() & 0xFF) as u8).collect();
        ImageSource::Raster(Raster::new(side, side, 1, data).unwrap())
    }

    #[test]
    fn gem_p1_is_mean() {
        let t = tokens_with_patch_values(&[vec![1.0, 2.0, 3.0]]);
        let d = gem_pool(&t, 1.0).unwrap();
        assert!((d.values()[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn gem_p3_hand_value() {
        let t = tokens_with_patch_values(&[vec![1.0, 2.0]]);
        let d = gem_pool(&t, 3.0).unwrap();
        // ((1 + 8) / 2)^(1/3)
        assert!((d.values()[0] - 4.5f32.powf(1.0 / 3.0)).abs() < 1e-5);
    }

    #[test]
    fn gem_large_p_approaches_max() {
        let t = tokens_with_patch_values(&[vec![1.0, 5.0]]);
        let d = gem_pool(&t, 10_000.0).unwrap();
        assert!((d.values()[0] - 5.0).abs() < 1e-3);
    }

    #[test]
    fn gem_rejects_small_p() {
        let t = tokens_with_patch_values(&[vec![1.0, 2.0]]);
        assert!(matches!(gem_pool(&t, 0.5), Err(Error::InvalidGemPower(_))));
    }

    #[test]
    fn l2_normalize_cases() {
        let d = Descriptor::new(vec![3.0, 4.0]).unwrap();
        let n = l2_normalize(&d).unwrap();
        assert!((n.values()[0] - 0.6).abs() < 1e-7);
        assert!((n.values()[1] - 0.8).abs() < 1e-7);
        assert!(n.is_normalized());

        let unit = l2_normalize(&n).unwrap();
        for (a, b) in unit.values().iter().zip(n.values()) {
            assert!((a - b).abs() < 1e-7);
        }

        let zero = Descriptor::new(vec![0.0, 0.0]).unwrap();
        assert!(matches!(l2_normalize(&zero), Err(Error::ZeroVector)));
    }

    #[test]
    fn normalize_is_scale_invariant() {
        let d = Descriptor::new(vec![0.4, -1.2, 2.5]).unwrap();
        let scaled = Descriptor::new(d.values().iter().map(|v| v * 37.5).collect()).unwrap();
        let a = l2_normalize(&d).unwrap();
        let b = l2_normalize(&scaled).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn stub_constant_image_gives_identical_patch_tokens() {
        let img = ImageSource::Raster(Raster::new(12, 12, 1, vec![77; 144]).unwrap());
        let stub = BackboneStub::new(5, 3, 8, 4).unwrap();
        let stream = stub.forward(&img).unwrap();
        for seq in &stream {
            let first = seq.token(1).to_vec();
            for t in 2..seq.token_count() {
                assert_eq!(seq.token(t), &first[..]);
            }
        }
    }

    #[test]
    fn stub_is_deterministic_and_seed_sensitive() {
        let img = test_image(3, 12);
        let a = BackboneStub::new(42, 2, 8, 4).unwrap().forward(&img).unwrap();
        let b = BackboneStub::new(42, 2, 8, 4).unwrap().forward(&img).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.data(), y.data());
        }
        let c = BackboneStub::new(43, 2, 8, 4).unwrap().forward(&img).unwrap();
        assert!(a.iter().zip(&c).any(|(x, y)| x.data() != y.data()));
    }

    #[test]
    fn stub_rejects_non_divisible_dims() {
        let img = test_image(3, 13);
        let stub = BackboneStub::new(42, 2, 8, 4).unwrap();
        assert!(matches!(
            stub.forward(&img),
            Err(Error::PatchGridMismatch { .. })
        ));
    }

    #[test]
    fn identical_images_give_identical_descriptors() {
        let img = test_image(9, 12);
        let stub = BackboneStub::new(1, 2, 8, 4).unwrap();
        let he = synthesize_branch(1, BranchId::He, 2, 8, 4, 1, false).unwrap();
        let a = extract_height_descriptor(&img, &stub, &he, 3.0).unwrap();
        let b = extract_height_descriptor(&img, &stub, &he, 3.0).unwrap();
        assert_eq!(a.values(), b.values());
        assert!((a.norm() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn place_descriptor_is_unit_norm_and_aggregator_checked() {
        let img = test_image(9, 12);
        let stub = BackboneStub::new(1, 2, 8, 4).unwrap();
        let vpr = synthesize_branch(2, BranchId::Vpr, 2, 8, 4, 1, true).unwrap();
        let d = extract_place_descriptor(&img, &stub, &vpr, Aggregator::Gem { p: 3.0 }).unwrap();
        assert!((d.norm() - 1.0).abs() < 1e-5);
        assert!(matches!(
            Aggregator::parse("optimal-transport", 3.0),
            Err(Error::UnknownAggregator(_))
        ));
    }

    #[test]
    fn gem1_equals_mean_on_positive_tokens() {
        let t = tokens_with_patch_values(&[
            vec![0.5, 1.5, 2.5, 0.25],
            vec![3.0, 1.0, 2.0, 4.0],
        ]);
        let g = gem_pool(&t, 1.0).unwrap();
        let m = mean_pool(&t).unwrap();
        for (a, b) in g.values().iter().zip(m.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn pair_extraction_uses_one_forward_pass() {
        let img = test_image(4, 12);
        let stub = BackboneStub::new(7, 2, 8, 4).unwrap();
        let he = synthesize_branch(1, BranchId::He, 2, 8, 4, 1, false).unwrap();
        let vpr = synthesize_branch(1, BranchId::Vpr, 2, 8, 4, 1, true).unwrap();
        stub.reset_forward_count();
        let _ = extract_descriptor_pair(&img, &stub, &he, &vpr, 3.0, Aggregator::Gem { p: 3.0 })
            .unwrap();
        assert_eq!(stub.forward_count(), 1);
    }

    #[test]
    fn branch_outputs_are_isolated() {
        let img = test_image(4, 12);
        let stub = BackboneStub::new(7, 2, 8, 4).unwrap();
        let he = synthesize_branch(1, BranchId::He, 2, 8, 4, 1, false).unwrap();
        let vpr_a = synthesize_branch(10, BranchId::Vpr, 2, 8, 4, 1, true).unwrap();
        let vpr_b = synthesize_branch(11, BranchId::Vpr, 2, 8, 4, 1, true).unwrap();
        let agg = Aggregator::Gem { p: 3.0 };
        let (h1, p1) = extract_descriptor_pair(&img, &stub, &he, &vpr_a, 3.0, agg).unwrap();
        let (h2, p2) = extract_descriptor_pair(&img, &stub, &he, &vpr_b, 3.0, agg).unwrap();
        assert_eq!(h1.values(), h2.values());
        assert_ne!(p1.values(), p2.values());
    }

    #[test]
    fn descriptor_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("descr.hevd");
        let ds: Vec<Descriptor> = (0..4)
            .map(|i| {
                let mut rng = SplitMix64::new(i);
                l2_normalize(&Descriptor::new(rng.fill_uniform(6, -1.0, 1.0)).unwrap()).unwrap()
            })
            .collect();
        let ids = vec![10, 20, 30, 40];
        save_descriptors(&path, &ids, &ds).unwrap();
        let (got_ids, got_ds) = load_descriptors(&path).unwrap();
        assert_eq!(got_ids, ids);
        for (a, b) in got_ds.iter().zip(&ds) {
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn descriptor_file_error_taxonomy() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("descr.hevd");
        let d = Descriptor::new(vec![1.0, 0.0]).unwrap();
        save_descriptors(&path, &[1], &[d]).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let mut bad = bytes.clone();
        bad[1] ^= 0x55;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_descriptors(&path), Err(Error::BadMagic { .. })));

        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_descriptors(&path), Err(Error::Truncated { .. })));
    }

    proptest! {
        #[test]
        fn gem_monotone_in_p(values in proptest::collection::vec(0.01f32..10.0, 2..24),
                             p1 in 1.0f32..8.0, dp in 0.0f32..8.0) {
            let t = tokens_with_patch_values(&[values]);
            let a = gem_pool(&t, p1).unwrap().values()[0];
            let b = gem_pool(&t, p1 + dp).unwrap().values()[0];
            prop_assert!(b >= a - 1e-5 * a.abs().max(1.0));
        }
    }
}
