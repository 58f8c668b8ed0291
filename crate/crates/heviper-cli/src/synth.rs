//! Seeded synthetic dataset generation.
//!
//! Each place is a deterministic value-noise base raster at 1 m/px; a view
//! from height h is the center crop of the ground footprint width, area-
//! resampled to the output size. Wide (high) views therefore average away
//! fine texture while narrow (low) views magnify the center, and crops at
//! different heights stay correlated at the center.
//!
//! The noise spectrum mixes isotropic coarse/mid bands with two fine bands
//! stretched along a place-specific orientation: the fine-band energy slides
//! with the footprint (the height cue) while the orientation survives
//! rescaling (the place cue).

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use heviper_core::heightdb::{height_to_ground_width, CameraIntrinsics, HeightPartition};
use heviper_core::raster::{write_pgm, Raster};
use heviper_core::rng::{hash_chain, SplitMix64};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{write_manifest, ManifestRow};

const PLACE_TAG: u64 = 0x51;
const ORIENT_TAG: u64 = 0x0A15;
const LATTICE_TAG: u64 = 0xA11CE;
const QUERY_TAG: u64 = 0xC0FE;

/// (wavelength m, amplitude, anisotropic stretch along the place axis)
const BANDS: [(f64, f64, f64); 4] = [
    (256.0, 0.5, 1.0),
    (64.0, 1.0, 1.0),
    (8.0, 1.0, 2.0),
    (5.0, 0.8, 2.0),
];

fn lattice_value(place_seed: u64, octave: u64, ix: i64, iy: i64) -> f64 {
    let h = hash_chain(&[place_seed, LATTICE_TAG, octave, ix as u64, iy as u64]);
    h as f64 / 18_446_744_073_709_551_616.0
}

#[inline]
fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Renders one place's base raster (size x size at 1 m/px, world origin at
/// the center).
pub fn base_raster(place_seed: u64, size_px: usize) -> Raster {
    let mut orient_rng = SplitMix64::new(hash_chain(&[place_seed, ORIENT_TAG]));
    let theta = orient_rng.next_f64() * PI;
    let (ct, st) = (theta.cos(), theta.sin());
    let weight_sum: f64 = BANDS.iter().map(|b| b.1).sum();

    let mut data = vec![0u8; size_px * size_px];
    for row in 0..size_px {
        let v_world = row as f64 + 0.5 - size_px as f64 / 2.0;
        for col in 0..size_px {
            let u_world = col as f64 + 0.5 - size_px as f64 / 2.0;
            let ur = u_world * ct - v_world * st;
            let vr = u_world * st + v_world * ct;
            let mut total = 0.0f64;
            for (octave, &(lambda, amp, aniso)) in BANDS.iter().enumerate() {
                let x = ur * aniso / lambda;
                let y = vr / (aniso * lambda);
                let ix = x.floor();
                let iy = y.floor();
                let sx = smoothstep(x - ix);
                let sy = smoothstep(y - iy);
                let (ix, iy) = (ix as i64, iy as i64);
                let v00 = lattice_value(place_seed, octave as u64, ix, iy);
                let v10 = lattice_value(place_seed, octave as u64, ix + 1, iy);
                let v01 = lattice_value(place_seed, octave as u64, ix, iy + 1);
                let v11 = lattice_value(place_seed, octave as u64, ix + 1, iy + 1);
                total += amp
                    * ((v00 * (1.0 - sx) + v10 * sx) * (1.0 - sy)
                        + (v01 * (1.0 - sx) + v11 * sx) * sy);
            }
            let value = (total / weight_sum * 256.0).floor().clamp(0.0, 255.0);
            data[row * size_px + col] = value as u8;
        }
    }
    Raster::new(size_px, size_px, 1, data).expect("raster dims are consistent")
}

/// The crop's world-coordinate span (lo, hi) on both axes, relative to the
/// place center.
pub fn crop_span(ground_width: f64) -> (f64, f64) {
    (-ground_width / 2.0, ground_width / 2.0)
}

/// Fractional box-filter weights mapping a source window onto `dst` pixels.
/// Returns (first source index, per-destination weight runs).
fn resample_weights(lo: f64, hi: f64, dst: usize) -> (i64, Vec<(usize, Vec<f64>)>) {
    let span = (hi - lo) / dst as f64;
    let i0 = lo.floor() as i64;
    let mut rows = Vec::with_capacity(dst);
    for d in 0..dst {
        let a = lo + d as f64 * span;
        let b = a + span;
        let ja = a.floor() as i64;
        let jb = b.ceil() as i64;
        let mut weights = Vec::with_capacity((jb - ja) as usize);
        let mut sum = 0.0f64;
        for j in ja..jb {
            let overlap = (b.min(j as f64 + 1.0) - a.max(j as f64)).max(0.0);
            weights.push(overlap);
            sum += overlap;
        }
        for w in &mut weights {
            *w /= sum;
        }
        rows.push(((ja - i0) as usize, weights));
    }
    (i0, rows)
}

/// Center crop of `ground_width` meters, area-resampled to `out_px`.
pub fn crop_resample(raster: &Raster, ground_width: f64, out_px: usize) -> CliResult<Raster> {
    let size = raster.width as f64;
    let lo = size / 2.0 - ground_width / 2.0;
    let hi = size / 2.0 + ground_width / 2.0;
    if lo < 0.0 || hi > size || ground_width <= 0.0 {
        return Err(CliError::Config(format!(
            "crop of {ground_width:.1} m exceeds the {size} px base raster"
        )));
    }
    let (i0, rows) = resample_weights(lo, hi, out_px);
    let win = (hi.ceil() as i64 - i0) as usize;

    // vertical pass: tmp[d][c] over the source window columns
    let mut tmp = vec![0.0f64; out_px * win];
    for (d, (off, ws)) in rows.iter().enumerate() {
        for (k, &w) in ws.iter().enumerate() {
            let src_row = (i0 as usize) + off + k;
            let src = &raster.data[src_row * raster.width..(src_row + 1) * raster.width];
            let dst = &mut tmp[d * win..(d + 1) * win];
            for (c, out) in dst.iter_mut().enumerate() {
                *out += w * src[i0 as usize + c] as f64;
            }
        }
    }
    // horizontal pass
    let mut data = vec![0u8; out_px * out_px];
    for d in 0..out_px {
        let src = &tmp[d * win..(d + 1) * win];
        for (e, (off, ws)) in rows.iter().enumerate() {
            let mut acc = 0.0f64;
            for (k, &w) in ws.iter().enumerate() {
                acc += w * src[off + k];
            }
            data[d * out_px + e] = acc.floor().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(Raster::new(out_px, out_px, 1, data).expect("raster dims are consistent"))
}

pub struct SynthOutcome {
    pub out_dir: PathBuf,
    pub db_rows: usize,
    pub query_rows: usize,
    pub levels: usize,
}

/// Generates the corpus: P places x L levels of database images plus one
/// jittered-height query per (place, level), with manifests and the
/// effective config.
pub fn generate(config: &RunConfig, seed: u64, out_dir: &Path) -> CliResult<SynthOutcome> {
    let camera = CameraIntrinsics::new(config.camera.focal_px, config.camera.image_width_px)
        .map_err(CliError::from)?;
    let partition = HeightPartition::new(
        config.partition.range_min_m,
        config.partition.range_max_m,
        config.partition.interval_m,
        &camera,
    )
    .map_err(CliError::from)?;
    let s = &config.synthetic;
    let levels = partition.level_count();

    // tallest query view must fit the base raster
    let max_h = config.partition.range_max_m - config.partition.interval_m / 2.0 + s.jitter_m;
    let max_g = height_to_ground_width(max_h, &camera).map_err(CliError::from)? as f64;
    if max_g.ceil() + 2.0 > s.base_raster_px as f64 {
        return Err(CliError::Config(format!(
            "base_raster_px {} too small for the widest footprint {:.0} m",
            s.base_raster_px, max_g
        )));
    }

    let image_dir = out_dir.join("images");
    std::fs::create_dir_all(&image_dir)?;

    let grid_side = (s.places as f64).sqrt().ceil() as usize;
    let mut db_rows = Vec::new();
    let mut query_rows = Vec::new();

    for place in 0..s.places {
        let place_seed = hash_chain(&[seed, PLACE_TAG, place as u64]);
        let raster = base_raster(place_seed, s.base_raster_px);
        let east = (place % grid_side) as f32 * s.place_spacing_m;
        let north = (place / grid_side) as f32 * s.place_spacing_m;

        for level in 1..=levels {
            let center = partition.level_center(level);
            let g_db = height_to_ground_width(center, &camera).map_err(CliError::from)? as f64;
            let db_img = crop_resample(&raster, g_db, s.image_px)?;
            let db_name = format!("images/db_p{place:03}_l{level:02}.pgm");
            write_pgm(&out_dir.join(&db_name), &db_img).map_err(CliError::from)?;
            db_rows.push(ManifestRow {
                id: place as u64 * 1000 + level as u64,
                path: db_name,
                height_m: center,
                east_m: east,
                north_m: north,
            });

            let mut q_rng = SplitMix64::new(hash_chain(&[
                seed,
                QUERY_TAG,
                place as u64,
                (level - 1) as u64,
            ]));
            let h_query = center + q_rng.uniform_f32(-s.jitter_m, s.jitter_m);
            let g_q = height_to_ground_width(h_query, &camera).map_err(CliError::from)? as f64;
            let q_img = crop_resample(&raster, g_q, s.image_px)?;
            let q_name = format!("images/q_p{place:03}_l{level:02}.pgm");
            write_pgm(&out_dir.join(&q_name), &q_img).map_err(CliError::from)?;
            query_rows.push(ManifestRow {
                id: place as u64 * 1000 + level as u64,
                path: q_name,
                height_m: h_query,
                east_m: east,
                north_m: north,
            });
        }
    }

    write_manifest(&out_dir.join("db_manifest.csv"), &db_rows)?;
    write_manifest(&out_dir.join("query_manifest.csv"), &query_rows)?;
    std::fs::write(out_dir.join("config.toml"), config.to_toml())?;

    Ok(SynthOutcome {
        out_dir: out_dir.to_path_buf(),
        db_rows: db_rows.len(),
        query_rows: query_rows.len(),
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_raster_is_deterministic() {
        let a = base_raster(99, 64);
        let b = base_raster(99, 64);
        assert_eq!(a.data, b.data);
        let c = base_raster(100, 64);
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn crop_preserves_mean_roughly() {
        let r = base_raster(7, 128);
        let crop = crop_resample(&r, 100.0, 32).unwrap();
        let full_mean: f64 =
            r.data.iter().map(|&v| v as f64).sum::<f64>() / r.data.len() as f64;
        let crop_mean: f64 =
            crop.data.iter().map(|&v| v as f64).sum::<f64>() / crop.data.len() as f64;
        assert!((full_mean - crop_mean).abs() < 40.0);
    }

    #[test]
    fn oversized_crop_rejected() {
        let r = base_raster(7, 64);
        assert!(crop_resample(&r, 70.0, 32).is_err());
    }

    #[test]
    fn query_overlaps_own_level_most() {
        // IoU of concentric square crops: (min/max)^2; the jittered query
        // footprint must be closest in ratio to its own level's footprint
        let config = RunConfig::default();
        let camera = CameraIntrinsics::new(1000.0, 1000).unwrap();
        let partition = HeightPartition::new(100.0, 500.0, 50.0, &camera).unwrap();
        for level in 1..=partition.level_count() {
            let center = partition.level_center(level);
            for jitter in [-config.synthetic.jitter_m, 0.0, config.synthetic.jitter_m] {
                let gq = height_to_ground_width(center + jitter, &camera).unwrap() as f64;
                let mut best = (0usize, 0.0f64);
                for other in 1..=partition.level_count() {
                    let gd = height_to_ground_width(partition.level_center(other), &camera)
                        .unwrap() as f64;
                    let (lo_q, hi_q) = crop_span(gq);
                    let (lo_d, hi_d) = crop_span(gd);
                    let inter = (hi_q.min(hi_d) - lo_q.max(lo_d)).max(0.0).powi(2);
                    let union = (hi_q - lo_q).powi(2) + (hi_d - lo_d).powi(2) - inter;
                    let iou = inter / union;
                    if iou > best.1 {
                        best = (other, iou);
                    }
                }
                assert_eq!(best.0, level, "jitter {jitter}");
            }
        }
    }

    #[test]
    fn small_corpus_generates_expected_counts() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = RunConfig::default();
        config.synthetic.places = 2;
        config.synthetic.image_px = 48;
        config.synthetic.base_raster_px = 512;
        config.adapter.patch_grid = 8;
        config.partition.range_max_m = 300.0; // 4 levels
        let out = generate(&config, 7, dir.path()).unwrap();
        assert_eq!(out.levels, 4);
        assert_eq!(out.db_rows, 8);
        assert_eq!(out.query_rows, 8);
        assert!(dir.path().join("db_manifest.csv").exists());
        assert!(dir.path().join("query_manifest.csv").exists());
        assert!(dir.path().join("config.toml").exists());
        assert!(dir.path().join("images/db_p001_l04.pgm").exists());
    }
}
