//! Helpers shared by the integration tests, including a deliberately naive
//! reference evaluator that shares no code with the library's metrics.

#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use cbgm::cbgm::QueryResults;
use cbgm::dataio::save_dataset;
use cbgm::{Dataset, GalleryImage, GroundTruth};

pub fn write_dataset(dir: &tempfile::TempDir, name: &str, dataset: &Dataset) -> PathBuf {
    let path = dir.path().join(name);
    save_dataset(dataset, &path).expect("dataset written");
    path
}

/// Intersection over union from raw corner coordinates.
pub fn ref_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let ix = a[2].min(b[2]) - a[0].max(b[0]);
    let iy = a[3].min(b[3]) - a[1].max(b[1]);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    let area = |r: [f64; 4]| (r[2] - r[0]) * (r[3] - r[1]);
    inter / (area(a) + area(b) - inter)
}

/// Ground truth as `image -> [(box, identity)]`.
pub type RefGt = HashMap<String, Vec<([f64; 4], Option<String>)>>;

pub fn ref_gt(gt: &GroundTruth, image_ids: &[&str]) -> RefGt {
    image_ids
        .iter()
        .filter_map(|id| {
            gt.boxes(id).map(|boxes| {
                let v = boxes
                    .iter()
                    .map(|b| (b.bbox.to_array(), b.identity.clone()))
                    .collect();
                (id.to_string(), v)
            })
        })
        .collect()
}

pub struct RefSearchMetrics {
    pub aps: Vec<f64>,
    pub map: f64,
    /// Accuracy at each requested rank.
    pub cmc: Vec<f64>,
}

/// Re-ID metrics by direct enumeration: rank the results (ties keep list
/// order), flag true positives, then average `k / position_of_kth_hit`.
pub fn ref_search_metrics(
    results: &[QueryResults],
    gt: &RefGt,
    threshold: f64,
    ks: &[usize],
) -> RefSearchMetrics {
    let mut aps = Vec::new();
    let mut first_hit = Vec::new();
    for q in results {
        let identity = q.identity.clone().unwrap();
        let occurrences = gt
            .iter()
            .filter(|(img, boxes)| {
                **img != q.query.image_id
                    && boxes.iter().any(|(_, who)| who.as_deref() == Some(identity.as_str()))
            })
            .count();
        assert!(occurrences > 0);

        // selection sort by similarity, stable on ties
        let mut pending: Vec<(usize, f64, [f64; 4], String)> = q
            .results
            .iter()
            .enumerate()
            .filter_map(|(i, r)| {
                r.matched
                    .as_ref()
                    .map(|m| (i, m.similarity, m.bbox.to_array(), r.image_id.clone()))
            })
            .collect();
        let mut ranked = Vec::new();
        while !pending.is_empty() {
            let mut best = 0;
            for j in 1..pending.len() {
                if pending[j].1 > pending[best].1 {
                    best = j;
                }
            }
            ranked.push(pending.remove(best));
        }

        let mut positions = Vec::new();
        for (pos, (_, _, bbox, image)) in ranked.iter().enumerate() {
            let hit = gt[image].iter().any(|(g, who)| {
                who.as_deref() == Some(identity.as_str()) && ref_iou(*g, *bbox) >= threshold
            });
            if hit {
                positions.push(pos + 1);
            }
        }
        let ap: f64 = positions
            .iter()
            .enumerate()
            .map(|(k, &p)| (k + 1) as f64 / p as f64)
            .sum::<f64>()
            / occurrences as f64;
        aps.push(ap);
        first_hit.push(positions.first().copied());
    }
    let n = results.len().max(1) as f64;
    let map = aps.iter().sum::<f64>() / n;
    let cmc = ks
        .iter()
        .map(|&k| first_hit.iter().filter(|f| matches!(f, Some(p) if *p <= k)).count() as f64 / n)
        .collect();
    RefSearchMetrics { aps, map, cmc }
}

/// Detection recall and AP. Each true positive adds `1 / total_gt` recall
/// at the best precision reachable from its rank onwards.
pub fn ref_detection(images: &[GalleryImage], gt: &RefGt, threshold: f64) -> (f64, f64) {
    let total_gt: usize = images.iter().map(|im| gt[&im.image_id].len()).sum();
    let mut dets: Vec<(f64, usize, usize)> = Vec::new();
    for (ii, im) in images.iter().enumerate() {
        for (di, d) in im.detections.iter().enumerate() {
            dets.push((d.score_first, ii, di));
        }
    }
    if total_gt == 0 || dets.is_empty() {
        return (0.0, 0.0);
    }
    // insertion sort, descending score, stable
    for i in 1..dets.len() {
        let mut j = i;
        while j > 0 && dets[j - 1].0 < dets[j].0 {
            dets.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut used: HashMap<usize, Vec<bool>> = HashMap::new();
    let mut hits = Vec::new();
    for &(_, ii, di) in &dets {
        let im = &images[ii];
        let boxes = &gt[&im.image_id];
        let taken = used.entry(ii).or_insert_with(|| vec![false; boxes.len()]);
        let det = im.detections[di].bbox.to_array();
        let mut best: Option<(usize, f64)> = None;
        for (gi, (g, _)) in boxes.iter().enumerate() {
            if taken[gi] {
                continue;
            }
            let v = ref_iou(*g, det);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        match best {
            Some((gi, v)) if v >= threshold => {
                taken[gi] = true;
                hits.push(true);
            }
            _ => hits.push(false),
        }
    }
    let mut tp = 0;
    let precision: Vec<f64> = hits
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            tp += h as usize;
            tp as f64 / (i + 1) as f64
        })
        .collect();
    let mut ap = 0.0;
    for (i, &h) in hits.iter().enumerate() {
        if h {
            let best_after = precision[i..].iter().cloned().fold(0.0, f64::max);
            ap += best_after / total_gt as f64;
        }
    }
    (tp as f64 / total_gt as f64, ap)
}
