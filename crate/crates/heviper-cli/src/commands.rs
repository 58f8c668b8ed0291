//! Command implementations behind the CLI verbs.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use heviper_core::adapter::{load_branch_params, synthesize_branch, AdapterParams, BranchId};
use heviper_core::descriptor::{
    extract_descriptor_pair, extract_height_descriptor, extract_place_descriptor,
    load_descriptors, Aggregator, BackboneStub, Descriptor,
};
use heviper_core::eval::{
    avg_height_error, height_recall, memory_usage_pct, performance_ratio_pct, recall_at_n,
    round2, EvalReport, GroundTruth, HeightReport, MethodReport, RecallCell, RecallTriple,
    RetrievedPlace,
};
use heviper_core::heightdb::{
    build_partitioned_db, load_db_with_camera, load_height_db, sample_rows_per_level, save_db,
    save_height_db, CameraIntrinsics, HeightDatabase, HeightEntry, HeightPartition, PlaceRecord,
};
use heviper_core::raster::ImageSource;
use heviper_core::retrieval::{
    estimate_height, full_query_with_descriptor, he_vpr_query, full_query, query_stage2,
    select_subdatabases, QueryResult, System,
};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;
use crate::synth::{self, SynthOutcome};

fn camera(config: &RunConfig) -> CliResult<CameraIntrinsics> {
    Ok(CameraIntrinsics::new(
        config.camera.focal_px,
        config.camera.image_width_px,
    )?)
}

fn partition(config: &RunConfig) -> CliResult<HeightPartition> {
    Ok(HeightPartition::new(
        config.partition.range_min_m,
        config.partition.range_max_m,
        config.partition.interval_m,
        &camera(config)?,
    )?)
}

fn build_stub(config: &RunConfig) -> CliResult<BackboneStub> {
    Ok(BackboneStub::new(
        config.adapter.seed,
        config.adapter.blocks,
        config.adapter.dim,
        config.adapter.patch_grid,
    )?)
}

fn branch_params(config: &RunConfig, branch: BranchId) -> CliResult<Vec<AdapterParams>> {
    let a = &config.adapter;
    let (path, mask) = match branch {
        BranchId::He => (&a.he_weights, false),
        BranchId::Vpr => (&a.vpr_weights, true),
    };
    match path {
        Some(p) => Ok(load_branch_params(p, mask)?),
        None => Ok(synthesize_branch(
            a.seed,
            branch,
            a.blocks,
            a.dim,
            a.bottleneck,
            a.dilation,
            mask,
        )?),
    }
}

fn aggregator(config: &RunConfig) -> CliResult<Aggregator> {
    Ok(Aggregator::parse(
        &config.retrieval.aggregator,
        config.retrieval.gem_p,
    )?)
}

/// Loads the full query system from the config plus both database files.
pub fn load_system(config: &RunConfig, db: &Path, height_db: &Path) -> CliResult<System> {
    let place_db = load_db_with_camera(db, &camera(config)?)?;
    let (hdb, hdb_partition) = load_height_db(height_db)?;
    let p = place_db.partition();
    if hdb_partition.level_count() != p.level_count()
        || hdb_partition.interval() != p.interval()
        || hdb_partition.range_min() != p.range_min()
        || hdb_partition.range_max() != p.range_max()
    {
        return Err(CliError::Data(format!(
            "height database partition ({} levels, [{}, {}) / {}) does not match the place database",
            hdb_partition.level_count(),
            hdb_partition.range_min(),
            hdb_partition.range_max(),
            hdb_partition.interval(),
        )));
    }
    Ok(System {
        stub: build_stub(config)?,
        he_params: branch_params(config, BranchId::He)?,
        vpr_params: branch_params(config, BranchId::Vpr)?,
        place_db,
        height_db: hdb,
        gem_p: config.retrieval.gem_p,
        aggregator: aggregator(config)?,
    })
}

fn injected_descriptors(path: &Path) -> CliResult<HashMap<u64, Descriptor>> {
    let (ids, descriptors) = load_descriptors(path)?;
    Ok(ids.into_iter().zip(descriptors).collect())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BuildSummary {
    pub out_path: PathBuf,
    pub total: usize,
    pub per_level: Vec<usize>,
    pub rejected_ids: Vec<u64>,
}

/// Builds the partitioned place database from a manifest: extract place
/// descriptors (or take injected ones by id), route by height, persist.
pub fn cmd_build_db(
    manifest_path: &Path,
    config: &RunConfig,
    out_path: &Path,
    descriptors: Option<&Path>,
) -> CliResult<BuildSummary> {
    let manifest = Manifest::load(manifest_path)?;
    if manifest.is_empty() {
        return Err(CliError::Data(format!(
            "{}: empty manifest",
            manifest_path.display()
        )));
    }
    let partition = partition(config)?;
    let injected = descriptors.map(injected_descriptors).transpose()?;
    let stub_and_params = if injected.is_none() {
        Some((build_stub(config)?, branch_params(config, BranchId::Vpr)?))
    } else {
        None
    };
    let agg = aggregator(config)?;

    let mut records = Vec::with_capacity(manifest.len());
    for row in &manifest.rows {
        let descriptor = match (&injected, &stub_and_params) {
            (Some(map), _) => map
                .get(&row.id)
                .cloned()
                .ok_or_else(|| {
                    CliError::Data(format!("descriptor file has no record for id {}", row.id))
                })?,
            (None, Some((stub, vpr))) => {
                let image = ImageSource::load(&manifest.image_path(row))?;
                extract_place_descriptor(&image, stub, vpr, agg)?
            }
            _ => unreachable!(),
        };
        records.push(PlaceRecord {
            id: row.id,
            east: row.east_m,
            north: row.north_m,
            height_m: row.height_m,
            descriptor,
        });
    }

    let outcome = build_partitioned_db(records, partition);
    if !outcome.rejected_ids.is_empty() {
        log::warn!(
            "rejected {} out-of-range rows: {:?}",
            outcome.rejected_ids.len(),
            outcome.rejected_ids
        );
    }
    if outcome.db.total_count() == 0 {
        return Err(CliError::Data(
            "every manifest row was rejected; nothing to write".into(),
        ));
    }
    save_db(out_path, &outcome.db)?;
    Ok(BuildSummary {
        out_path: out_path.to_path_buf(),
        total: outcome.db.total_count(),
        per_level: outcome.db.level_sizes(),
        rejected_ids: outcome.rejected_ids,
    })
}

/// Builds the compact height database: sample up to `per_level_cap` rows per
/// level, extract height descriptors, persist with height labels.
pub fn cmd_build_height_db(
    manifest_path: &Path,
    config: &RunConfig,
    out_path: &Path,
    descriptors: Option<&Path>,
) -> CliResult<BuildSummary> {
    let manifest = Manifest::load(manifest_path)?;
    if manifest.is_empty() {
        return Err(CliError::Data(format!(
            "{}: empty manifest",
            manifest_path.display()
        )));
    }
    let partition = partition(config)?;

    let mut rejected = Vec::new();
    let mut valid_rows = Vec::new();
    let mut levels = Vec::new();
    for row in &manifest.rows {
        match partition.height_to_level(row.height_m) {
            Ok(level) => {
                valid_rows.push(row);
                levels.push(level);
            }
            Err(_) => rejected.push(row.id),
        }
    }
    if !rejected.is_empty() {
        log::warn!("rejected {} out-of-range rows: {rejected:?}", rejected.len());
    }
    if valid_rows.is_empty() {
        return Err(CliError::Data(
            "every manifest row was rejected; nothing to write".into(),
        ));
    }

    let selected = sample_rows_per_level(
        &levels,
        partition.level_count(),
        config.height_db.per_level_cap,
        config.adapter.seed,
    );

    let injected = descriptors.map(injected_descriptors).transpose()?;
    let stub_and_params = if injected.is_none() {
        Some((build_stub(config)?, branch_params(config, BranchId::He)?))
    } else {
        None
    };

    let mut entries = Vec::with_capacity(selected.len());
    for &idx in &selected {
        let row = valid_rows[idx];
        let descriptor = match (&injected, &stub_and_params) {
            (Some(map), _) => map
                .get(&row.id)
                .cloned()
                .ok_or_else(|| {
                    CliError::Data(format!("descriptor file has no record for id {}", row.id))
                })?,
            (None, Some((stub, he))) => {
                let image = ImageSource::load(&manifest.image_path(row))?;
                extract_height_descriptor(&image, stub, he, config.retrieval.gem_p)?
            }
            _ => unreachable!(),
        };
        entries.push(HeightEntry {
            id: row.id,
            east: row.east_m,
            north: row.north_m,
            descriptor,
            height_label: row.height_m,
        });
    }

    if entries.len() * 2 > manifest.len() {
        log::warn!(
            "height database is not compact: {} entries vs {} source rows",
            entries.len(),
            manifest.len()
        );
    }

    let hdb = HeightDatabase { entries };
    let mut per_level = vec![0usize; partition.level_count()];
    for e in &hdb.entries {
        per_level[partition.height_to_level(e.height_label)? - 1] += 1;
    }
    save_height_db(out_path, &hdb, &partition)?;
    Ok(BuildSummary {
        out_path: out_path.to_path_buf(),
        total: hdb.len(),
        per_level,
        rejected_ids: rejected,
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueryOutput {
    pub image: PathBuf,
    pub mode: String,
    pub k_height: usize,
    pub k_place: usize,
    pub result: QueryResult,
}

/// Runs one query image through the two-stage pipeline (or the full
/// baseline under `full`).
pub fn cmd_query(
    image_path: &Path,
    db: &Path,
    height_db: &Path,
    config: &RunConfig,
    k_height: usize,
    k_place: usize,
    full: bool,
) -> CliResult<QueryOutput> {
    let system = load_system(config, db, height_db)?;
    let image = ImageSource::load(image_path)?;
    let result = if full {
        full_query(&image, &system, k_place)?
    } else {
        he_vpr_query(&image, &system, k_height, k_place)?
    };
    Ok(QueryOutput {
        image: image_path.to_path_buf(),
        mode: if full { "full".into() } else { "he-vpr".into() },
        k_height,
        k_place,
        result,
    })
}

struct QueryEval {
    labels: Vec<f32>,
    truth: GroundTruth,
    per_k: Vec<(Vec<RetrievedPlace>, usize)>,
    full: (Vec<RetrievedPlace>, usize),
}

fn resolve(
    ranking: &heviper_core::retrieval::RankedList,
    positions: &HashMap<u64, (f32, f32)>,
) -> Vec<RetrievedPlace> {
    ranking
        .entries
        .iter()
        .map(|s| {
            let (east, north) = positions[&s.id];
            RetrievedPlace {
                id: s.id,
                east,
                north,
            }
        })
        .collect()
}

fn evaluate_one(
    row: &crate::manifest::ManifestRow,
    manifest: &Manifest,
    system: &System,
    positions: &HashMap<u64, (f32, f32)>,
    ks: &[usize],
    k_ret: usize,
    k_place: usize,
) -> CliResult<QueryEval> {
    let image = ImageSource::load(&manifest.image_path(row))?;
    let (hd, pd) = extract_descriptor_pair(
        &image,
        &system.stub,
        &system.he_params,
        &system.vpr_params,
        system.gem_p,
        system.aggregator,
    )?;
    let ranking = estimate_height(&hd, &system.height_db, k_ret)?;
    let labels: Vec<f32> = ranking.candidates.iter().map(|c| c.label_m).collect();
    let mut per_k = Vec::with_capacity(ks.len());
    for &k in ks {
        let levels = select_subdatabases(&ranking, k, system.place_db.partition())?;
        let (place_ranking, searched) = query_stage2(system, &pd, &levels, k_place)?;
        per_k.push((resolve(&place_ranking, positions), searched));
    }
    let full = full_query_with_descriptor(system, &pd, k_place)?;
    Ok(QueryEval {
        labels,
        truth: GroundTruth {
            east: row.east_m,
            north: row.north_m,
            height_m: row.height_m,
        },
        per_k,
        full: (resolve(&full.place_ranking, positions), full.searched_count),
    })
}

/// Runs the full evaluation protocol: every configured HE-VPR(k) plus the
/// full-database baseline, aggregated into an `EvalReport`.
pub fn cmd_evaluate(
    manifest_path: &Path,
    db: &Path,
    height_db: &Path,
    config: &RunConfig,
    threads: usize,
) -> CliResult<EvalReport> {
    let system = load_system(config, db, height_db)?;
    let manifest = Manifest::load(manifest_path)?;
    if manifest.is_empty() {
        return Err(CliError::Data(format!(
            "{}: empty query manifest",
            manifest_path.display()
        )));
    }
    let ks = config.eval_k_sweep();
    let k_ret = 10usize.max(ks.iter().copied().max().unwrap_or(1));
    let k_place = config.retrieval.k_place.max(10);
    let positions: HashMap<u64, (f32, f32)> = system
        .place_db
        .iter_all()
        .map(|e| (e.id, (e.east, e.north)))
        .collect();

    let evals: Vec<QueryEval> = if threads > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
        let results: Vec<CliResult<QueryEval>> = pool.install(|| {
            manifest
                .rows
                .par_iter()
                .map(|row| evaluate_one(row, &manifest, &system, &positions, &ks, k_ret, k_place))
                .collect()
        });
        results.into_iter().collect::<CliResult<Vec<_>>>()?
    } else {
        manifest
            .rows
            .iter()
            .map(|row| evaluate_one(row, &manifest, &system, &positions, &ks, k_ret, k_place))
            .collect::<CliResult<Vec<_>>>()?
    };

    let truths: Vec<GroundTruth> = evals.iter().map(|e| e.truth).collect();
    let labels: Vec<Vec<f32>> = evals.iter().map(|e| e.labels.clone()).collect();

    let mut height_cells = Vec::new();
    for &t in &config.eval.height_thresholds_m {
        for n in [1usize, 5, 10] {
            height_cells.push(RecallCell {
                n,
                threshold_m: t,
                pct: round2(height_recall(&labels, &truths, n, t)?),
            });
        }
    }
    let height_report = HeightReport {
        recall: height_cells,
        e_avg_m: round2(avg_height_error(&labels, &truths)?),
    };

    let total = system.place_db.total_count();
    let primary_threshold = config.eval.thresholds_m[0];

    let method_metrics = |rankings: &[Vec<RetrievedPlace>],
                          searched: &[usize]|
     -> CliResult<(Vec<RecallCell>, RecallTriple, f64)> {
        let mut cells = Vec::new();
        let mut primary = RecallTriple {
            r1: 0.0,
            r5: 0.0,
            r10: 0.0,
        };
        for &t in &config.eval.thresholds_m {
            for n in [1usize, 5, 10] {
                let pct = recall_at_n(rankings, &truths, n, t)?;
                if t == primary_threshold {
                    match n {
                        1 => primary.r1 = pct,
                        5 => primary.r5 = pct,
                        _ => primary.r10 = pct,
                    }
                }
                cells.push(RecallCell {
                    n,
                    threshold_m: t,
                    pct: round2(pct),
                });
            }
        }
        let memory = memory_usage_pct(searched, total)?;
        Ok((cells, primary, memory))
    };

    let full_rankings: Vec<Vec<RetrievedPlace>> =
        evals.iter().map(|e| e.full.0.clone()).collect();
    let full_searched: Vec<usize> = evals.iter().map(|e| e.full.1).collect();
    let (full_cells, full_primary, full_memory) = method_metrics(&full_rankings, &full_searched)?;

    let mut methods = vec![MethodReport {
        name: "Full".into(),
        k_height: None,
        recall: full_cells,
        memory_usage_pct: round2(full_memory),
        performance_ratio_pct: 100.0,
        performance_delta: 0.0,
    }];

    for (ki, &k) in ks.iter().enumerate() {
        let rankings: Vec<Vec<RetrievedPlace>> =
            evals.iter().map(|e| e.per_k[ki].0.clone()).collect();
        let searched: Vec<usize> = evals.iter().map(|e| e.per_k[ki].1).collect();
        let (cells, primary, memory) = method_metrics(&rankings, &searched)?;
        let ratio = performance_ratio_pct(&primary, &full_primary)?;
        methods.push(MethodReport {
            name: format!("HE-VPR({k})"),
            k_height: Some(k),
            recall: cells,
            memory_usage_pct: round2(memory),
            performance_ratio_pct: round2(ratio.pct),
            performance_delta: round2(ratio.delta),
        });
    }

    let report = EvalReport {
        query_count: evals.len(),
        db_total_count: total,
        height: height_report,
        methods,
    };
    report.validate()?;
    Ok(report)
}

/// Renders the report as a plain-text table (rows mirror the published
/// layout: recall per threshold, then memory usage and performance ratio).
pub fn report_text(report: &EvalReport) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    let _ = writeln!(s, "queries: {}   database entries: {}", report.query_count, report.db_total_count);
    let _ = writeln!(s);
    let _ = writeln!(s, "Height estimation (R@N at height thresholds, %):");
    let mut thresholds: Vec<f32> = report.height.recall.iter().map(|c| c.threshold_m).collect();
    thresholds.dedup();
    let _ = writeln!(s, "  {:<12} {:>8} {:>8} {:>8}", "threshold", "R@1", "R@5", "R@10");
    for t in &thresholds {
        let cell = |n: usize| {
            report
                .height
                .recall
                .iter()
                .find(|c| c.n == n && c.threshold_m == *t)
                .map(|c| c.pct)
                .unwrap_or(f64::NAN)
        };
        let _ = writeln!(s, "  {:<12} {:>8.2} {:>8.2} {:>8.2}", format!("{t} m"), cell(1), cell(5), cell(10));
    }
    let _ = writeln!(s, "  E_avg: {:.2} m", report.height.e_avg_m);
    let _ = writeln!(s);
    let mut place_thresholds: Vec<f32> = report
        .methods
        .first()
        .map(|m| m.recall.iter().map(|c| c.threshold_m).collect())
        .unwrap_or_default();
    place_thresholds.dedup();
    for t in &place_thresholds {
        let _ = writeln!(s, "Place retrieval at {t} m (%):");
        let _ = writeln!(
            s,
            "  {:<12} {:>8} {:>8} {:>8} {:>10} {:>12}",
            "method", "R@1", "R@5", "R@10", "memory", "perf-ratio"
        );
        for m in &report.methods {
            let cell = |n: usize| {
                m.recall
                    .iter()
                    .find(|c| c.n == n && c.threshold_m == *t)
                    .map(|c| c.pct)
                    .unwrap_or(f64::NAN)
            };
            let _ = writeln!(
                s,
                "  {:<12} {:>8.2} {:>8.2} {:>8.2} {:>10.2} {:>9.2} ({:+.2})",
                m.name,
                cell(1),
                cell(5),
                cell(10),
                m.memory_usage_pct,
                m.performance_ratio_pct,
                m.performance_delta,
            );
        }
        let _ = writeln!(s);
    }
    s
}

/// One CSV row per (section, N, threshold) recall cell.
pub fn report_csv(report: &EvalReport) -> String {
    let mut s = String::from("section,n,threshold_m,recall_pct\n");
    for c in &report.height.recall {
        s.push_str(&format!("height,{},{},{}\n", c.n, c.threshold_m, c.pct));
    }
    for m in &report.methods {
        for c in &m.recall {
            s.push_str(&format!("{},{},{},{}\n", m.name, c.n, c.threshold_m, c.pct));
        }
    }
    s
}

/// Writes report.json, report.txt and optionally report.csv into `out_dir`.
pub fn write_report(report: &EvalReport, out_dir: &Path, csv: bool) -> CliResult<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let json_path = out_dir.join("report.json");
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| CliError::Data(format!("report serialization: {e}")))?;
    std::fs::write(&json_path, json + "\n")?;
    std::fs::write(out_dir.join("report.txt"), report_text(report))?;
    if csv {
        std::fs::write(out_dir.join("report.csv"), report_csv(report))?;
    }
    Ok(json_path)
}

/// Generates the synthetic corpus.
pub fn cmd_gen_synthetic(config: &RunConfig, seed: u64, out_dir: &Path) -> CliResult<SynthOutcome> {
    synth::generate(config, seed, out_dir)
}
