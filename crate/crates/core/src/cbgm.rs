//! Context bipartite graph matching.
//!
//! For a query person `q` the gallery images are first scored with the
//! single-point baseline (best cosine similarity of `q` against any person in
//! the image). The top-`k1` images are then re-examined jointly: `q` and up
//! to `k2 - 1` of the most confident other people in the query image form
//! one side of a complete bipartite graph, every person of the gallery image
//! forms the other, edges are weighted by cosine similarity, and a
//! maximum-weight matching is solved. `q`'s partner in that matching becomes
//! the result for the image and the matching confidence (its largest single
//! edge weight) becomes the reported similarity. That edge may belong to a
//! context pair rather than to `q` itself; this is intentional.
//!
//! Images outside the top-`k1` keep their baseline result so that a full
//! ranking over the gallery is always produced.

use std::cmp::Ordering;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::assignment::{km_max_weight, WeightMatrix};
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{self, EvalConfig};
use crate::geometry::{descending_order, BBox};
use crate::par::{ordered_map, Parallelism};
use crate::similarity::{argmax, cosine_sim, effective_score, Detection, GalleryImage, Query};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CbgmParams {
    /// Gallery images re-ranked per query.
    pub k1: usize,
    /// Maximum number of query-image people (including the query) used.
    pub k2: usize,
}

impl CbgmParams {
    /// Best setting for small galleries (about 100 images).
    pub const SMALL_GALLERY: CbgmParams = CbgmParams { k1: 10, k2: 3 };
    /// Best setting for large galleries (thousands of images).
    pub const LARGE_GALLERY: CbgmParams = CbgmParams { k1: 30, k2: 4 };

    pub fn new(k1: usize, k2: usize) -> Result<Self> {
        if k2 == 0 {
            return Err(Error::InvalidParam("k2 must be at least 1".into()));
        }
        Ok(Self { k1, k2 })
    }

    pub fn preset_name(&self) -> Option<&'static str> {
        match *self {
            Self::SMALL_GALLERY => Some("small-gallery"),
            Self::LARGE_GALLERY => Some("large-gallery"),
            _ => None,
        }
    }
}

impl Default for CbgmParams {
    fn default() -> Self {
        Self::SMALL_GALLERY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SearchMode {
    Baseline,
    Cbgm(CbgmParams),
}

impl SearchMode {
    fn params(self) -> CbgmParams {
        match self {
            SearchMode::Baseline => CbgmParams { k1: 0, k2: 1 },
            SearchMode::Cbgm(p) => p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPerson {
    /// Index of the matched detection within its gallery image.
    pub detection: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub similarity: f64,
}

/// Outcome for one gallery image. `matched` is `None` when the image has no
/// detections; such results never take part in ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub image_id: String,
    pub matched: Option<MatchedPerson>,
    /// Whether context matching picked a different person than the baseline.
    pub revised: bool,
}

impl SearchResult {
    pub fn similarity(&self) -> Option<f64> {
        self.matched.as_ref().map(|m| m.similarity)
    }
}

/// Wall time spent in each stage of one search.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    /// Single-point matching against every gallery plus top-`k1` selection.
    pub baseline: Duration,
    /// Building and solving the bipartite graphs.
    pub context: Duration,
}

/// Runs the search for detection `q_index` of `query_image` against
/// `galleries`. Results are returned in gallery order.
pub fn cbgm_search(
    query_image: &GalleryImage,
    q_index: usize,
    galleries: &[&GalleryImage],
    params: CbgmParams,
) -> Result<Vec<SearchResult>> {
    search_impl(query_image, q_index, galleries, params, None)
}

/// [`cbgm_search`] that also reports how long each stage took.
pub fn cbgm_search_timed(
    query_image: &GalleryImage,
    q_index: usize,
    galleries: &[&GalleryImage],
    params: CbgmParams,
) -> Result<(Vec<SearchResult>, StageTimings)> {
    let mut timings = StageTimings::default();
    let results = search_impl(query_image, q_index, galleries, params, Some(&mut timings))?;
    Ok((results, timings))
}

fn search_impl(
    query_image: &GalleryImage,
    q_index: usize,
    galleries: &[&GalleryImage],
    params: CbgmParams,
    mut timings: Option<&mut StageTimings>,
) -> Result<Vec<SearchResult>> {
    if params.k2 == 0 {
        return Err(Error::InvalidParam("k2 must be at least 1".into()));
    }
    let q = query_image.detections.get(q_index).ok_or_else(|| {
        Error::InvalidParam(format!(
            "query index {q_index} out of range for image `{}` with {} detections",
            query_image.image_id,
            query_image.detections.len()
        ))
    })?;

    // Ranking the gallery is part of the baseline's own output, so picking
    // the top-k1 images is timed with it.
    let start = Instant::now();
    let mut results = galleries
        .iter()
        .map(|g| baseline_result(q, g))
        .collect::<Result<Vec<_>>>()?;
    let context = context_people(query_image, q_index, params.k2);
    // A single-vertex query side is solved by the argmax, i.e. the baseline.
    let selected = if context.len() > 1 {
        top_k_images(&results, params.k1)
    } else {
        Vec::new()
    };
    if let Some(t) = timings.as_deref_mut() {
        t.baseline = start.elapsed();
    }

    let start = Instant::now();
    if !selected.is_empty() {
        let people: Vec<&Detection> = context.iter().map(|&i| &query_image.detections[i]).collect();
        for gi in selected {
            let revised = rematch(&people, galleries[gi])?;
            if let Some(m) = revised {
                let baseline = results[gi].matched.as_ref().map(|b| b.detection);
                results[gi].revised = baseline != Some(m.detection);
                results[gi].matched = Some(m);
            }
        }
    }
    if let Some(t) = timings {
        t.context = start.elapsed();
    }
    Ok(results)
}

fn baseline_result(q: &Detection, g: &GalleryImage) -> Result<SearchResult> {
    let sims = g.similarities(q)?;
    let matched = argmax(&sims).map(|i| MatchedPerson {
        detection: i,
        bbox: g.detections[i].bbox,
        similarity: sims[i],
    });
    Ok(SearchResult {
        image_id: g.image_id.clone(),
        matched,
        revised: false,
    })
}

/// The query person followed by the `k2 - 1` most confident other people of
/// the query image (ties keep detection order).
pub fn context_people(query_image: &GalleryImage, q_index: usize, k2: usize) -> Vec<usize> {
    let order = descending_order(query_image.detections.iter().map(effective_score));
    std::iter::once(q_index)
        .chain(order.into_iter().filter(|&i| i != q_index))
        .take(k2)
        .collect()
}

/// Positions of the `k1` best-scoring images (descending similarity, ties in
/// gallery order). Images without candidates are never selected.
fn top_k_images(results: &[SearchResult], k1: usize) -> Vec<usize> {
    if k1 == 0 {
        return Vec::new();
    }
    let mut scored: Vec<(f64, usize)> = results
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.similarity().map(|s| (s, i)))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
    };
    if scored.len() > k1 {
        scored.select_nth_unstable_by(k1 - 1, cmp);
        scored.truncate(k1);
    }
    scored.sort_unstable_by(cmp);
    scored.into_iter().map(|(_, i)| i).collect()
}

/// Matches the query side against one gallery image. Row 0 is the query
/// person. `None` when the query person is left unmatched or the image is
/// empty.
fn rematch(people: &[&Detection], g: &GalleryImage) -> Result<Option<MatchedPerson>> {
    if g.detections.is_empty() {
        return Ok(None);
    }
    let mut weights = Vec::with_capacity(people.len() * g.detections.len());
    for p in people {
        for d in &g.detections {
            weights.push(cosine_sim(&p.embedding, &d.embedding)?);
        }
    }
    let w = WeightMatrix::new(people.len(), g.detections.len(), weights)?;
    let matching = km_max_weight(&w);
    Ok(matching.partner_of_row(0).map(|col| MatchedPerson {
        detection: col,
        bbox: g.detections[col].bbox,
        similarity: matching.confidence,
    }))
}

/// Sorts results by descending similarity; ties keep their current (gallery)
/// order and images without candidates go last.
pub fn rank_results(results: &mut [SearchResult]) {
    results.sort_by(|a, b| match (a.similarity(), b.similarity()) {
        (Some(x), Some(y)) => y.partial_cmp(&x).unwrap_or(Ordering::Equal),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    });
}

/// Ranked results of one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResults {
    pub query: Query,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<String>,
    pub results: Vec<SearchResult>,
}

/// Galleries of a query: every dataset image except the query's own.
fn galleries_for(dataset: &Dataset, query_image: usize) -> Vec<&GalleryImage> {
    dataset
        .images
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != query_image)
        .map(|(_, g)| g)
        .collect()
}

/// Runs every dataset query and returns ranked results in query order.
pub fn search_dataset(
    dataset: &Dataset,
    mode: SearchMode,
    degree: Parallelism,
) -> Result<Vec<QueryResults>> {
    let params = mode.params();
    ordered_map(&dataset.queries, degree, |_, query| {
        let image_idx = dataset.image_index(&query.image_id)?;
        let image = &dataset.images[image_idx];
        let galleries = galleries_for(dataset, image_idx);
        let mut results = cbgm_search(image, query.person_index, &galleries, params)?;
        rank_results(&mut results);
        Ok(QueryResults {
            query: query.clone(),
            identity: image.detections[query.person_index].identity.clone(),
            results,
        })
    })
}

/// Per-query timing of one search, used by the benchmark harness.
pub fn time_query(
    dataset: &Dataset,
    query: &Query,
    galleries_limit: usize,
    params: CbgmParams,
) -> Result<(Duration, StageTimings)> {
    let image_idx = dataset.image_index(&query.image_id)?;
    let image = &dataset.images[image_idx];
    let mut galleries = galleries_for(dataset, image_idx);
    galleries.truncate(galleries_limit);

    let start = Instant::now();
    let baseline = cbgm_search(image, query.person_index, &galleries, CbgmParams { k1: 0, k2: 1 })?;
    let baseline_time = start.elapsed();
    std::hint::black_box(baseline);

    let (results, stages) = cbgm_search_timed(image, query.person_index, &galleries, params)?;
    std::hint::black_box(results);
    Ok((baseline_time, stages))
}

/// One cell of a `(k1, k2)` sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub k1: usize,
    pub k2: usize,
    pub map: f64,
    pub top1: f64,
    /// `(mAP + top-1) / 2`.
    pub metric: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
}

/// Evaluates every `(k1, k2)` combination; records are sorted by descending
/// metric, ties in grid order (k1 outer, k2 inner).
pub fn sweep(
    dataset: &Dataset,
    k1_values: &[usize],
    k2_values: &[usize],
    config: &EvalConfig,
    degree: Parallelism,
) -> Result<Vec<SweepRecord>> {
    if k1_values.is_empty() || k2_values.is_empty() {
        return Err(Error::InvalidParam("sweep grid is empty".into()));
    }
    let mut records = Vec::with_capacity(k1_values.len() * k2_values.len());
    for &k1 in k1_values {
        for &k2 in k2_values {
            let params = CbgmParams::new(k1, k2)?;
            let results = search_dataset(dataset, SearchMode::Cbgm(params), degree)?;
            let (_, map) = evaluation::search_map(&results, &dataset.ground_truth, config)?;
            let top1 = evaluation::cmc_topk(&results, &dataset.ground_truth, &[1], config)?[0];
            records.push(SweepRecord {
                k1,
                k2,
                map,
                top1,
                metric: (map + top1) / 2.0,
                preset: params.preset_name().map(str::to_owned),
            });
        }
    }
    records.sort_by(|a, b| b.metric.partial_cmp(&a.metric).unwrap_or(Ordering::Equal));
    Ok(records)
}
