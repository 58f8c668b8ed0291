//! Evaluation metrics: Recall@N at metric thresholds, height-threshold
//! recall, average height error, memory-usage ratio and performance ratio.
//!
//! All aggregation is full precision; report assembly rounds half-up to two
//! decimals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-query ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub east: f32,
    pub north: f32,
    pub height_m: f32,
}

/// A retrieved place with its resolved position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievedPlace {
    pub id: u64,
    pub east: f32,
    pub north: f32,
}

fn planar_distance(a: (f32, f32), b: (f32, f32)) -> f64 {
    let de = a.0 as f64 - b.0 as f64;
    let dn = a.1 as f64 - b.1 as f64;
    (de * de + dn * dn).sqrt()
}

/// Half-up rounding to two decimals (used for every reported percentage).
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Percentage of queries with a top-n result within `threshold` meters of
/// the true position.
pub fn recall_at_n(
    rankings: &[Vec<RetrievedPlace>],
    truths: &[GroundTruth],
    n: usize,
    threshold_m: f32,
) -> Result<f64> {
    if rankings.is_empty() || rankings.len() != truths.len() {
        return Err(Error::EmptyQuerySet);
    }
    if threshold_m.is_nan() || threshold_m <= 0.0 {
        return Err(Error::NonPositiveThreshold(threshold_m));
    }
    let mut correct = 0usize;
    for (ranking, gt) in rankings.iter().zip(truths) {
        let hit = ranking.iter().take(n).any(|r| {
            planar_distance((r.east, r.north), (gt.east, gt.north)) <= threshold_m as f64
        });
        if hit {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / rankings.len() as f64)
}

/// Recall over height labels: a hit is `|label - true_height| <= threshold`.
pub fn height_recall(
    label_rankings: &[Vec<f32>],
    truths: &[GroundTruth],
    n: usize,
    threshold_m: f32,
) -> Result<f64> {
    if label_rankings.is_empty() || label_rankings.len() != truths.len() {
        return Err(Error::EmptyQuerySet);
    }
    if threshold_m.is_nan() || threshold_m <= 0.0 {
        return Err(Error::NonPositiveThreshold(threshold_m));
    }
    let mut correct = 0usize;
    for (labels, gt) in label_rankings.iter().zip(truths) {
        let hit = labels
            .iter()
            .take(n)
            .any(|&l| (l as f64 - gt.height_m as f64).abs() <= threshold_m as f64);
        if hit {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / label_rankings.len() as f64)
}

/// Mean absolute error between the top-1 label and the true height.
pub fn avg_height_error(label_rankings: &[Vec<f32>], truths: &[GroundTruth]) -> Result<f64> {
    if label_rankings.is_empty() || label_rankings.len() != truths.len() {
        return Err(Error::EmptyQuerySet);
    }
    let mut total = 0.0f64;
    for (labels, gt) in label_rankings.iter().zip(truths) {
        let top1 = labels.first().ok_or(Error::EmptyPool)?;
        total += (*top1 as f64 - gt.height_m as f64).abs();
    }
    Ok(total / label_rankings.len() as f64)
}

/// Mean scanned fraction of the database, as a percentage.
pub fn memory_usage_pct(searched_counts: &[usize], total_count: usize) -> Result<f64> {
    if searched_counts.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    if total_count == 0 {
        return Err(Error::EmptyPool);
    }
    let mean: f64 = searched_counts
        .iter()
        .map(|&c| c as f64 / total_count as f64)
        .sum::<f64>()
        / searched_counts.len() as f64;
    Ok(100.0 * mean)
}

/// An (R@1, R@5, R@10) triple in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallTriple {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
}

impl RecallTriple {
    pub fn sum(&self) -> f64 {
        self.r1 + self.r5 + self.r10
    }
}

/// Performance ratio with its signed delta against 100%.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRatio {
    pub pct: f64,
    pub delta: f64,
}

/// `100 * sum(method) / sum(baseline)`.
pub fn performance_ratio_pct(
    method: &RecallTriple,
    baseline: &RecallTriple,
) -> Result<PerformanceRatio> {
    let denom = baseline.sum();
    if denom.is_nan() || denom <= 0.0 {
        return Err(Error::ZeroBaseline);
    }
    let pct = 100.0 * method.sum() / denom;
    Ok(PerformanceRatio {
        pct,
        delta: pct - 100.0,
    })
}

// ---------------------------------------------------------------------------
// Report document
// ---------------------------------------------------------------------------

/// One (N, threshold) recall cell, rounded for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallCell {
    pub n: usize,
    pub threshold_m: f32,
    pub pct: f64,
}

/// Height-estimation metrics (method independent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightReport {
    pub recall: Vec<RecallCell>,
    pub e_avg_m: f64,
}

/// Metrics of one retrieval method (HE-VPR(k) or the full baseline).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub name: String,
    pub k_height: Option<usize>,
    pub recall: Vec<RecallCell>,
    pub memory_usage_pct: f64,
    pub performance_ratio_pct: f64,
    pub performance_delta: f64,
}

/// The full machine-readable evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub query_count: usize,
    pub db_total_count: usize,
    pub height: HeightReport,
    pub methods: Vec<MethodReport>,
}

impl EvalReport {
    /// Structural invariants every generated report must satisfy: recall
    /// percentages within [0, 100], non-decreasing in N for a fixed
    /// threshold and in threshold for a fixed N, memory usage in (0, 100].
    pub fn validate(&self) -> Result<()> {
        let check_cells = |cells: &[RecallCell], what: &str| -> Result<()> {
            for c in cells {
                if !(0.0..=100.0).contains(&c.pct) {
                    return Err(Error::InvalidPartition(format!(
                        "{what}: recall {} out of [0, 100]",
                        c.pct
                    )));
                }
            }
            for a in cells {
                for b in cells {
                    let fixed_threshold = a.threshold_m == b.threshold_m && a.n < b.n;
                    let fixed_n = a.n == b.n && a.threshold_m < b.threshold_m;
                    if (fixed_threshold || fixed_n) && a.pct > b.pct {
                        return Err(Error::InvalidPartition(format!(
                            "{what}: recall not monotone (N={} t={} -> {} vs N={} t={} -> {})",
                            a.n, a.threshold_m, a.pct, b.n, b.threshold_m, b.pct
                        )));
                    }
                }
            }
            Ok(())
        };
        check_cells(&self.height.recall, "height recall")?;
        for m in &self.methods {
            check_cells(&m.recall, &m.name)?;
            if !(m.memory_usage_pct > 0.0 && m.memory_usage_pct <= 100.0) {
                return Err(Error::InvalidPartition(format!(
                    "{}: memory usage {} out of (0, 100]",
                    m.name, m.memory_usage_pct
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(east: f32, north: f32, h: f32) -> GroundTruth {
        GroundTruth {
            east,
            north,
            height_m: h,
        }
    }

    fn place(id: u64, east: f32, north: f32) -> RetrievedPlace {
        RetrievedPlace { id, east, north }
    }

    #[test]
    fn recall_all_top1_hits() {
        let rankings = vec![vec![place(1, 0.0, 0.0)], vec![place(2, 5.0, 5.0)]];
        let truths = vec![gt(1.0, 0.0, 100.0), gt(5.0, 6.0, 100.0)];
        assert_eq!(recall_at_n(&rankings, &truths, 1, 10.0).unwrap(), 100.0);
    }

    #[test]
    fn recall_rank_positions_matter() {
        // query 1 hits at rank 1, query 2 only at rank 3
        let rankings = vec![
            vec![place(1, 0.0, 0.0), place(2, 900.0, 0.0)],
            vec![place(3, 900.0, 0.0), place(4, 800.0, 0.0), place(5, 1.0, 1.0)],
        ];
        let truths = vec![gt(0.0, 0.0, 100.0), gt(0.0, 0.0, 100.0)];
        assert_eq!(recall_at_n(&rankings, &truths, 1, 25.0).unwrap(), 50.0);
        assert_eq!(recall_at_n(&rankings, &truths, 5, 25.0).unwrap(), 100.0);
    }

    #[test]
    fn recall_rejects_bad_inputs() {
        let rankings = vec![vec![place(1, 0.0, 0.0)]];
        let truths = vec![gt(0.0, 0.0, 100.0)];
        assert!(matches!(
            recall_at_n(&rankings, &truths, 1, 0.0),
            Err(Error::NonPositiveThreshold(_))
        ));
        assert!(matches!(
            recall_at_n(&[], &[], 1, 10.0),
            Err(Error::EmptyQuerySet)
        ));
    }

    #[test]
    fn height_recall_thresholds() {
        let rankings = vec![vec![500.0f32]];
        let truths = vec![gt(0.0, 0.0, 430.0)];
        assert_eq!(height_recall(&rankings, &truths, 1, 50.0).unwrap(), 0.0);
        assert_eq!(height_recall(&rankings, &truths, 1, 100.0).unwrap(), 100.0);

        let exact = vec![vec![430.0f32]];
        assert_eq!(height_recall(&exact, &truths, 1, 50.0).unwrap(), 100.0);
        assert_eq!(height_recall(&exact, &truths, 1, 100.0).unwrap(), 100.0);
    }

    #[test]
    fn height_recall_monotone_in_threshold() {
        let rankings = vec![vec![500.0f32], vec![130.0], vec![260.0]];
        let truths = vec![gt(0.0, 0.0, 430.0), gt(0.0, 0.0, 120.0), gt(0.0, 0.0, 200.0)];
        let a = height_recall(&rankings, &truths, 1, 50.0).unwrap();
        let b = height_recall(&rankings, &truths, 1, 100.0).unwrap();
        assert!(b >= a);
    }

    #[test]
    fn avg_height_error_cases() {
        let truths = vec![gt(0.0, 0.0, 100.0), gt(0.0, 0.0, 300.0)];
        let exact = vec![vec![100.0f32], vec![300.0]];
        assert_eq!(avg_height_error(&exact, &truths).unwrap(), 0.0);
        let off = vec![vec![100.0f32], vec![400.0]];
        assert_eq!(avg_height_error(&off, &truths).unwrap(), 50.0);
        let single = vec![vec![130.0f32]];
        assert_eq!(
            avg_height_error(&single, &truths[..1]).unwrap(),
            30.0
        );
        assert!(avg_height_error(&[], &[]).is_err());
    }

    #[test]
    fn memory_usage_cases() {
        assert_eq!(memory_usage_pct(&[1000, 1000], 1000).unwrap(), 100.0);
        // sizes {100, 300, 600}: every query selects the 300-entry level
        assert!((memory_usage_pct(&[300, 300, 300], 1000).unwrap() - 30.0).abs() < 1e-12);
        assert!(matches!(
            memory_usage_pct(&[], 100),
            Err(Error::EmptyQuerySet)
        ));
    }

    #[test]
    fn performance_ratio_reproduces_published_tables() {
        let ge_base = RecallTriple { r1: 69.50, r5: 76.42, r10: 79.08 };
        let cases = [
            (RecallTriple { r1: 57.25, r5: 66.50, r10: 70.00 }, 86.11),
            (RecallTriple { r1: 69.92, r5: 76.17, r10: 78.67 }, 99.89),
            (RecallTriple { r1: 70.42, r5: 76.83, r10: 79.00 }, 100.56),
        ];
        for (m, want) in cases {
            let r = performance_ratio_pct(&m, &ge_base).unwrap();
            assert_eq!(round2(r.pct), want);
        }
        let mh_base = RecallTriple { r1: 57.61, r5: 72.49, r10: 77.82 };
        let cases = [
            (RecallTriple { r1: 49.14, r5: 68.07, r10: 74.06 }, 91.99),
            (RecallTriple { r1: 56.80, r5: 72.94, r10: 77.72 }, 99.78),
            (RecallTriple { r1: 57.41, r5: 71.93, r10: 77.46 }, 99.46),
        ];
        for (m, want) in cases {
            let r = performance_ratio_pct(&m, &mh_base).unwrap();
            assert_eq!(round2(r.pct), want);
        }
    }

    #[test]
    fn performance_ratio_identity_and_errors() {
        let t = RecallTriple { r1: 50.0, r5: 60.0, r10: 70.0 };
        let r = performance_ratio_pct(&t, &t).unwrap();
        assert_eq!(round2(r.pct), 100.0);
        assert_eq!(round2(r.delta), 0.0);
        let zero = RecallTriple { r1: 0.0, r5: 0.0, r10: 0.0 };
        assert!(matches!(
            performance_ratio_pct(&t, &zero),
            Err(Error::ZeroBaseline)
        ));
    }

    #[test]
    fn report_validation_catches_violations() {
        let good = EvalReport {
            query_count: 2,
            db_total_count: 10,
            height: HeightReport {
                recall: vec![
                    RecallCell { n: 1, threshold_m: 50.0, pct: 40.0 },
                    RecallCell { n: 5, threshold_m: 50.0, pct: 60.0 },
                ],
                e_avg_m: 12.0,
            },
            methods: vec![MethodReport {
                name: "full".into(),
                k_height: None,
                recall: vec![
                    RecallCell { n: 1, threshold_m: 100.0, pct: 50.0 },
                    RecallCell { n: 1, threshold_m: 200.0, pct: 75.0 },
                ],
                memory_usage_pct: 100.0,
                performance_ratio_pct: 100.0,
                performance_delta: 0.0,
            }],
        };
        good.validate().unwrap();

        let mut bad = good.clone();
        bad.height.recall[1].pct = 10.0; // R@5 below R@1
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        bad.methods[0].recall[1].pct = 20.0; // larger threshold, lower recall
        assert!(bad.validate().is_err());

        let mut bad = good;
        bad.methods[0].memory_usage_pct = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn round2_is_half_up() {
        assert_eq!(round2(86.111), 86.11);
        assert_eq!(round2(86.115), 86.12);
        assert_eq!(round2(100.555), 100.56);
        assert_eq!(round2(99.994), 99.99);
    }
}
