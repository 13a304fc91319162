//! Person-search metrics (mAP, CMC) and detection metrics (recall, AP).
//!
//! Conventions:
//! - a search result is a true positive iff its matched box has IoU >= the
//!   configured threshold (0.5 by default) with a ground-truth box of the
//!   query identity in that gallery image; each gallery image contributes one
//!   result, so each ground-truth occurrence is credited at most once;
//! - per-query AP is the sum of precision at each true positive's rank,
//!   divided by the number of gallery images containing the identity;
//! - detection AP is the all-points interpolated area under the
//!   precision-recall curve, with detections greedily matched to the
//!   unmatched ground-truth box of highest IoU in descending score order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cbgm::{rank_results, QueryResults, SearchResult};
use crate::error::{Error, Result};
use crate::geometry::{descending_order, iou, BBox};
use crate::similarity::{effective_score, GalleryImage};

/// Identifier recorded in reports for the metric conventions above.
pub const AP_CONVENTION: &str = "reid-ap/tp-iou>=thr,ap=sum(precision@tp)/occurrences;det-ap=all-points";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    #[serde(rename = "box")]
    pub bbox: BBox,
    #[serde(default)]
    pub identity: Option<String>,
}

/// Labeled person boxes per image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    images: BTreeMap<String, Vec<GtBox>>,
}

impl GroundTruth {
    pub fn new(images: impl IntoIterator<Item = (String, Vec<GtBox>)>) -> Self {
        Self {
            images: images.into_iter().collect(),
        }
    }

    pub fn boxes(&self, image_id: &str) -> Option<&[GtBox]> {
        self.images.get(image_id).map(Vec::as_slice)
    }

    pub fn total_boxes(&self) -> usize {
        self.images.values().map(Vec::len).sum()
    }

    /// Images other than `exclude` that contain `identity`.
    pub fn occurrences(&self, identity: &str, exclude: &str) -> usize {
        self.images
            .iter()
            .filter(|(id, boxes)| {
                id.as_str() != exclude
                    && boxes.iter().any(|b| b.identity.as_deref() == Some(identity))
            })
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub cmc_ks: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            cmc_ks: vec![1, 5, 10],
        }
    }
}

impl EvalConfig {
    fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "IoU threshold {} outside (0, 1]",
                self.iou_threshold
            )));
        }
        if self.cmc_ks.contains(&0) {
            return Err(Error::InvalidParam("CMC ranks start at 1".into()));
        }
        Ok(())
    }

    /// CMC ranks, sorted, deduplicated and always including 1.
    fn ranks(&self) -> Vec<usize> {
        let mut ks = self.cmc_ks.clone();
        ks.push(1);
        ks.sort_unstable();
        ks.dedup();
        ks
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CmcPoint {
    pub k: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub convention: String,
    pub iou_threshold: f64,
    pub queries: usize,
    pub map: f64,
    pub top1: f64,
    pub cmc: Vec<CmcPoint>,
    pub detection_recall: f64,
    pub detection_ap: f64,
    #[serde(skip)]
    pub per_query_ap: Vec<f64>,
}

struct QueryOutcome {
    /// True-positive flag per ranked result with candidates.
    hits: Vec<bool>,
    occurrences: usize,
}

fn judge(query: &QueryResults, gt: &GroundTruth, config: &EvalConfig) -> Result<QueryOutcome> {
    let identity = query.identity.as_deref().ok_or_else(|| {
        Error::Protocol(format!(
            "query on image `{}` person {} has no identity label",
            query.query.image_id, query.query.person_index
        ))
    })?;
    let occurrences = gt.occurrences(identity, &query.query.image_id);
    if occurrences == 0 {
        return Err(Error::Protocol(format!(
            "identity `{identity}` of query on image `{}` appears in no gallery image",
            query.query.image_id
        )));
    }

    let mut ranked: Vec<SearchResult> = query
        .results
        .iter()
        .filter(|r| r.matched.is_some())
        .cloned()
        .collect();
    rank_results(&mut ranked);
    let hits = ranked
        .iter()
        .map(|r| {
            if r.image_id == query.query.image_id {
                return Err(Error::Protocol(format!(
                    "query image `{}` appears in its own gallery",
                    r.image_id
                )));
            }
            let matched = r.matched.as_ref().expect("filtered");
            let boxes = gt.boxes(&r.image_id).ok_or_else(|| {
                Error::Protocol(format!("gallery image `{}` has no ground truth", r.image_id))
            })?;
            Ok(boxes.iter().any(|b| {
                b.identity.as_deref() == Some(identity)
                    && iou(&b.bbox, &matched.bbox) >= config.iou_threshold
            }))
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(QueryOutcome { hits, occurrences })
}

fn average_precision(outcome: &QueryOutcome) -> f64 {
    let mut found = 0usize;
    let mut sum = 0.0;
    for (rank, &hit) in outcome.hits.iter().enumerate() {
        if hit {
            found += 1;
            sum += found as f64 / (rank + 1) as f64;
        }
    }
    sum / outcome.occurrences as f64
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Per-query AP and their mean.
pub fn search_map(
    results: &[QueryResults],
    gt: &GroundTruth,
    config: &EvalConfig,
) -> Result<(Vec<f64>, f64)> {
    config.validate()?;
    let aps = results
        .iter()
        .map(|q| judge(q, gt, config).map(|o| average_precision(&o)))
        .collect::<Result<Vec<_>>>()?;
    let map = mean(&aps);
    Ok((aps, map))
}

/// Fraction of queries with a true positive within the top `k`, for each `k`.
pub fn cmc_topk(
    results: &[QueryResults],
    gt: &GroundTruth,
    ks: &[usize],
    config: &EvalConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    if ks.contains(&0) {
        return Err(Error::InvalidParam("CMC ranks start at 1".into()));
    }
    let first_hits = results
        .iter()
        .map(|q| judge(q, gt, config).map(|o| o.hits.iter().position(|&h| h)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ks
        .iter()
        .map(|&k| {
            let hit = first_hits.iter().filter(|f| matches!(f, Some(r) if *r < k)).count();
            if first_hits.is_empty() {
                0.0
            } else {
                hit as f64 / first_hits.len() as f64
            }
        })
        .collect())
}

/// Detection recall and AP over all images at `iou_threshold`.
pub fn detection_metrics(
    images: &[GalleryImage],
    gt: &GroundTruth,
    iou_threshold: f64,
) -> Result<(f64, f64)> {
    let mut flat: Vec<(usize, usize, f64)> = Vec::new();
    for (ii, image) in images.iter().enumerate() {
        if gt.boxes(&image.image_id).is_none() {
            return Err(Error::Protocol(format!(
                "image `{}` has detections but no ground truth",
                image.image_id
            )));
        }
        flat.extend(
            image
                .detections
                .iter()
                .enumerate()
                .map(|(di, d)| (ii, di, effective_score(d))),
        );
    }
    let total_gt = gt.total_boxes();
    if total_gt == 0 || flat.is_empty() {
        return Ok((0.0, 0.0));
    }

    let mut taken: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
    let mut tp_flags = Vec::with_capacity(flat.len());
    for idx in descending_order(flat.iter().map(|f| f.2)) {
        let (ii, di, _) = flat[idx];
        let image = &images[ii];
        let boxes = gt.boxes(&image.image_id).expect("checked above");
        let used = taken
            .entry(image.image_id.as_str())
            .or_insert_with(|| vec![false; boxes.len()]);
        let det_box = &image.detections[di].bbox;
        let best = boxes
            .iter()
            .enumerate()
            .filter(|(gi, _)| !used[*gi])
            .map(|(gi, b)| (gi, iou(&b.bbox, det_box)))
            .fold(None, |acc: Option<(usize, f64)>, (gi, v)| match acc {
                Some((_, bv)) if bv >= v => acc,
                _ => Some((gi, v)),
            });
        match best {
            Some((gi, v)) if v >= iou_threshold => {
                used[gi] = true;
                tp_flags.push(true);
            }
            _ => tp_flags.push(false),
        }
    }

    let mut recall = Vec::with_capacity(tp_flags.len());
    let mut precision = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (i, &hit) in tp_flags.iter().enumerate() {
        tp += hit as usize;
        recall.push(tp as f64 / total_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    let final_recall = tp as f64 / total_gt as f64;
    Ok((final_recall, interpolated_ap(&recall, &precision)))
}

/// All-points interpolated area under a precision-recall curve.
fn interpolated_ap(recall: &[f64], precision: &[f64]) -> f64 {
    let mut mrec = Vec::with_capacity(recall.len() + 2);
    mrec.push(0.0);
    mrec.extend_from_slice(recall);
    mrec.push(1.0);
    let mut mpre = Vec::with_capacity(precision.len() + 2);
    mpre.push(0.0);
    mpre.extend_from_slice(precision);
    mpre.push(0.0);
    for i in (0..mpre.len() - 1).rev() {
        mpre[i] = mpre[i].max(mpre[i + 1]);
    }
    (1..mrec.len())
        .filter(|&i| mrec[i] != mrec[i - 1])
        .map(|i| (mrec[i] - mrec[i - 1]) * mpre[i])
        .sum()
}

/// Full report: mAP, CMC and detection metrics over `images`.
pub fn evaluate(
    results: &[QueryResults],
    images: &[GalleryImage],
    gt: &GroundTruth,
    config: &EvalConfig,
) -> Result<EvalReport> {
    let (per_query_ap, map) = search_map(results, gt, config)?;
    let ks = config.ranks();
    let accuracies = cmc_topk(results, gt, &ks, config)?;
    let (detection_recall, detection_ap) = detection_metrics(images, gt, config.iou_threshold)?;
    let cmc: Vec<CmcPoint> = ks
        .iter()
        .zip(accuracies)
        .map(|(&k, accuracy)| CmcPoint { k, accuracy })
        .collect();
    Ok(EvalReport {
        convention: AP_CONVENTION.to_owned(),
        iou_threshold: config.iou_threshold,
        queries: results.len(),
        map,
        top1: cmc[0].accuracy,
        cmc,
        detection_recall,
        detection_ap,
        per_query_ap,
    })
}
