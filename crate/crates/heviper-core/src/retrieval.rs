//! Exact nearest-neighbor search and the two-stage query pipeline:
//! height estimation by retrieval, top-k sub-database selection, and place
//! retrieval inside the selected union. Scores are cosine similarities over
//! unit descriptors (f64 accumulation, rounded to f32); ties break by
//! ascending id so rankings are fully deterministic.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::adapter::AdapterParams;
use crate::descriptor::{
    extract_descriptor_pair, extract_place_descriptor, Aggregator, BackboneStub, Descriptor,
};
use crate::error::{Error, Result};
use crate::heightdb::{HeightDatabase, HeightPartition, HeightPartitionedDatabase, PlaceEntry};
use crate::raster::ImageSource;

/// One scored retrieval hit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredId {
    pub id: u64,
    pub score: f32,
}

/// Best-first ranking with deterministic tie-breaks.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RankedList {
    pub entries: Vec<ScoredId>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.iter().map(|e| e.id)
    }

    /// Checks the ordering invariants (used by tests).
    pub fn check_invariants(&self) -> bool {
        let sorted = self.entries.windows(2).all(|w| {
            w[0].score > w[1].score || (w[0].score == w[1].score && w[0].id < w[1].id)
        });
        let mut ids: Vec<u64> = self.entries.iter().map(|e| e.id).collect();
        ids.sort_unstable();
        ids.dedup();
        sorted && ids.len() == self.entries.len()
    }
}

#[inline]
fn rank_order(a: &ScoredId, b: &ScoredId) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id))
}

/// Exact top-k by cosine similarity over a place-entry pool (full scan).
pub fn knn<'a, I>(query: &Descriptor, pool: I, k: usize) -> Result<RankedList>
where
    I: IntoIterator<Item = &'a PlaceEntry>,
{
    if k == 0 {
        return Err(Error::DimMismatch {
            context: "knn requires k >= 1",
            expected: 1,
            got: 0,
        });
    }
    let mut scored: Vec<ScoredId> = pool
        .into_iter()
        .map(|e| ScoredId {
            id: e.id,
            score: query.dot(&e.descriptor) as f32,
        })
        .collect();
    if scored.is_empty() {
        return Err(Error::EmptyPool);
    }
    scored.sort_unstable_by(rank_order);
    scored.truncate(k);
    Ok(RankedList { entries: scored })
}

/// A height-retrieval candidate: the entry's label rides along.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeightCandidate {
    pub entry_id: u64,
    pub label_m: f32,
    pub score: f32,
}

/// Ranked height candidates; the top-1 label is the point estimate.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HeightRanking {
    pub candidates: Vec<HeightCandidate>,
}

impl HeightRanking {
    pub fn point_estimate(&self) -> Option<f32> {
        self.candidates.first().map(|c| c.label_m)
    }
}

/// Retrieval-based height estimation: exact top-k over the height database.
pub fn estimate_height(
    query_hd: &Descriptor,
    hdb: &HeightDatabase,
    k: usize,
) -> Result<HeightRanking> {
    if hdb.is_empty() {
        return Err(Error::EmptyHeightDatabase);
    }
    if k == 0 {
        return Err(Error::DimMismatch {
            context: "estimate_height requires k >= 1",
            expected: 1,
            got: 0,
        });
    }
    let mut scored: Vec<(ScoredId, f32)> = hdb
        .entries
        .iter()
        .map(|e| {
            (
                ScoredId {
                    id: e.id,
                    score: query_hd.dot(&e.descriptor) as f32,
                },
                e.height_label,
            )
        })
        .collect();
    scored.sort_unstable_by(|a, b| rank_order(&a.0, &b.0));
    scored.truncate(k);
    Ok(HeightRanking {
        candidates: scored
            .into_iter()
            .map(|(s, label)| HeightCandidate {
                entry_id: s.id,
                label_m: label,
                score: s.score,
            })
            .collect(),
    })
}

/// Maps the top-k candidate labels to levels and deduplicates.
pub fn select_subdatabases(
    ranking: &HeightRanking,
    k: usize,
    partition: &HeightPartition,
) -> Result<BTreeSet<usize>> {
    if k == 0 {
        return Err(Error::DimMismatch {
            context: "select_subdatabases requires k >= 1",
            expected: 1,
            got: 0,
        });
    }
    let mut levels = BTreeSet::new();
    for c in ranking.candidates.iter().take(k) {
        levels.insert(partition.height_to_level(c.label_m)?);
    }
    Ok(levels)
}

/// Everything a query needs: the stub, both branch parameter stacks, both
/// databases, and the aggregation settings.
#[derive(Debug)]
pub struct System {
    pub stub: BackboneStub,
    pub he_params: Vec<AdapterParams>,
    pub vpr_params: Vec<AdapterParams>,
    pub place_db: HeightPartitionedDatabase,
    pub height_db: HeightDatabase,
    pub gem_p: f32,
    pub aggregator: Aggregator,
}

/// Outcome of one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub height_candidates: HeightRanking,
    pub selected_levels: BTreeSet<usize>,
    pub place_ranking: RankedList,
    pub searched_count: usize,
}

/// Stage 2 alone: exact search over an explicit level set. Exposed so the
/// true level can be injected for oracle comparisons.
pub fn query_stage2(
    system: &System,
    place_descriptor: &Descriptor,
    levels: &BTreeSet<usize>,
    k_place: usize,
) -> Result<(RankedList, usize)> {
    let searched: usize = levels
        .iter()
        .map(|&l| system.place_db.sub_db(l).len())
        .sum();
    if searched == 0 {
        return Err(Error::EmptySearchSpace);
    }
    let pool = levels.iter().flat_map(|&l| system.place_db.sub_db(l).iter());
    let ranking = knn(place_descriptor, pool, k_place)?;
    Ok((ranking, searched))
}

/// Two-stage query: estimate the height partition, then search the union of
/// the selected sub-databases. Both descriptors come from one backbone
/// forward pass. `height_candidates` keeps at least 10 entries (when the
/// height database has them) so reports can score R@5/R@10; level selection
/// uses only the top `k_height`.
pub fn he_vpr_query(
    image: &ImageSource,
    system: &System,
    k_height: usize,
    k_place: usize,
) -> Result<QueryResult> {
    let (height_d, place_d) = extract_descriptor_pair(
        image,
        &system.stub,
        &system.he_params,
        &system.vpr_params,
        system.gem_p,
        system.aggregator,
    )?;
    let ranking = estimate_height(&height_d, &system.height_db, k_height.max(10))?;
    let selected = select_subdatabases(&ranking, k_height, system.place_db.partition())?;
    let (place_ranking, searched_count) = query_stage2(system, &place_d, &selected, k_place)?;
    Ok(QueryResult {
        height_candidates: ranking,
        selected_levels: selected,
        place_ranking,
        searched_count,
    })
}

/// Full-database baseline: the place branch searches every level.
pub fn full_query(image: &ImageSource, system: &System, k_place: usize) -> Result<QueryResult> {
    let place_d = extract_place_descriptor(
        image,
        &system.stub,
        &system.vpr_params,
        system.aggregator,
    )?;
    full_query_with_descriptor(system, &place_d, k_place)
}

/// Full-database baseline on an already-extracted place descriptor.
pub fn full_query_with_descriptor(
    system: &System,
    place_d: &Descriptor,
    k_place: usize,
) -> Result<QueryResult> {
    let all: BTreeSet<usize> = (1..=system.place_db.partition().level_count()).collect();
    let (place_ranking, searched_count) = query_stage2(system, place_d, &all, k_place)?;
    Ok(QueryResult {
        height_candidates: HeightRanking::default(),
        selected_levels: all,
        place_ranking,
        searched_count,
    })
}
