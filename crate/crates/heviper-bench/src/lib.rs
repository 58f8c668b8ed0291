//! Shared fixtures for the criterion benchmarks.

use heviper_core::adapter::{synthesize_branch, AdapterParams, BranchId};
use heviper_core::descriptor::{Aggregator, BackboneStub, Descriptor};
use heviper_core::heightdb::{
    build_partitioned_db, CameraIntrinsics, HeightDatabase, HeightEntry, HeightPartition,
    HeightPartitionedDatabase, PlaceRecord,
};
use heviper_core::raster::{ImageSource, Raster};
use heviper_core::retrieval::System;
use heviper_core::rng::SplitMix64;
use heviper_core::tensor::TokenSequence;

pub fn random_unit_descriptor(rng: &mut SplitMix64, dim: usize) -> Descriptor {
    let mut values = rng.fill_uniform(dim, -1.0, 1.0);
    let norm: f64 = values
        .iter()
        .map(|&v| (v as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 {
        values[0] = 1.0;
    } else {
        for v in &mut values {
            *v = (*v as f64 / norm) as f32;
        }
    }
    Descriptor::new_normalized(values).unwrap()
}

pub fn random_pool(seed: u64, size: usize, dim: usize) -> Vec<heviper_core::heightdb::PlaceEntry> {
    let mut rng = SplitMix64::new(seed);
    (0..size)
        .map(|i| heviper_core::heightdb::PlaceEntry {
            id: i as u64,
            east: 0.0,
            north: 0.0,
            descriptor: random_unit_descriptor(&mut rng, dim),
            level: 1,
        })
        .collect()
}

pub fn random_image(seed: u64, side: usize) -> ImageSource {
    let mut rng = SplitMix64::new(seed);
    let data: Vec<u8> = (0..side * side)
        .map(|_| (rng.next_u64() & 0xFF) as u8)
        .collect();
    ImageSource::Raster(Raster::new(side, side, 1, data).unwrap())
}

pub fn random_tokens(seed: u64, tokens: usize, dim: usize) -> TokenSequence {
    let mut rng = SplitMix64::new(seed);
    TokenSequence::new(tokens, dim, rng.fill_uniform(tokens * dim, -1.0, 1.0)).unwrap()
}

pub fn paper_scale_adapter(seed: u64) -> (TokenSequence, AdapterParams) {
    // 24x24 patch grid at the spec's 64-wide bottleneck
    let tokens = random_tokens(seed, 577, 192);
    let params = AdapterParams::synthesize(seed, BranchId::Vpr, 1, 192, 64, 2, true).unwrap();
    (tokens, params)
}

/// A compact in-memory system for whole-query benchmarks (descriptors are
/// synthetic; only the pipeline cost matters here).
pub fn bench_system(seed: u64, levels: usize, per_level: usize, dim: usize) -> System {
    let mut rng = SplitMix64::new(seed);
    let camera = CameraIntrinsics::new(1000.0, 1000).unwrap();
    let partition = HeightPartition::new(
        100.0,
        100.0 + 50.0 * levels as f32,
        50.0,
        &camera,
    )
    .unwrap();
    let mut records = Vec::new();
    let mut hdb = Vec::new();
    for level in 1..=levels {
        let center = partition.level_center(level);
        for i in 0..per_level {
            let id = (level * 10_000 + i) as u64;
            let descriptor = random_unit_descriptor(&mut rng, dim);
            if i < 5 {
                hdb.push(HeightEntry {
                    id,
                    east: i as f32,
                    north: level as f32,
                    descriptor: descriptor.clone(),
                    height_label: center,
                });
            }
            records.push(PlaceRecord {
                id,
                east: i as f32,
                north: level as f32,
                height_m: center,
                descriptor,
            });
        }
    }
    let db: HeightPartitionedDatabase = build_partitioned_db(records, partition).db;
    System {
        stub: BackboneStub::new(seed, 4, dim, 24).unwrap(),
        he_params: synthesize_branch(seed, BranchId::He, 4, dim, 64, 2, false).unwrap(),
        vpr_params: synthesize_branch(seed, BranchId::Vpr, 4, dim, 64, 2, true).unwrap(),
        place_db: db,
        height_db: HeightDatabase { entries: hdb },
        gem_p: 3.0,
        aggregator: Aggregator::Gem { p: 3.0 },
    }
}
