//! Per-query timing of the baseline search against the context stage.
//!
//! For every measured query the baseline search (no re-ranking) and the full
//! search are timed separately. The full search also reports its own stage
//! split, and the overhead is the full time minus its baseline stage, i.e.
//! the time spent solving the matchings of the top-`k1` images. Picking
//! those images is ranking, which the baseline stage already covers. Each
//! query is repeated and the fastest repetition kept.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::cbgm::{time_query, CbgmParams};
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::synth::SynthParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub gallery_size: usize,
    pub queries: usize,
    /// Mean time of the baseline-only search.
    pub baseline_ms: f64,
    /// Mean time of the full search.
    pub cbgm_ms: f64,
    /// Mean of (full search - its baseline stage).
    pub overhead_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub k1: usize,
    pub k2: usize,
    pub repeats: usize,
    pub rows: Vec<BenchRow>,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub params: CbgmParams,
    pub max_queries: usize,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![100, 500, 1000, 2000, 4000],
            params: CbgmParams::SMALL_GALLERY,
            max_queries: 50,
            repeats: 3,
        }
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Synthetic scene set large enough for every requested gallery size, with
/// at most ten people per image.
pub fn bench_dataset(max_gallery: usize, seed: u64) -> Result<Dataset> {
    crate::synth::generate(&SynthParams {
        n_identities: (max_gallery / 2).max(40),
        n_images: max_gallery + 1,
        detections_per_image_range: (1, 9),
        seed,
        ..SynthParams::default()
    })
}

pub fn run_bench(dataset: &Dataset, config: &BenchConfig) -> Result<BenchReport> {
    if config.sizes.is_empty() || config.max_queries == 0 || config.repeats == 0 {
        return Err(Error::InvalidParam(
            "bench needs gallery sizes, queries and repeats".into(),
        ));
    }
    let available = dataset.images.len().saturating_sub(1);
    if let Some(&too_big) = config.sizes.iter().find(|&&s| s == 0 || s > available) {
        return Err(Error::InvalidParam(format!(
            "gallery size {too_big} unavailable: dataset offers 1..={available}"
        )));
    }
    if dataset.queries.is_empty() {
        return Err(Error::InvalidParam("dataset has no queries".into()));
    }
    // spread measured queries over the whole query list
    let step = (dataset.queries.len() / config.max_queries).max(1);
    let queries: Vec<_> = dataset
        .queries
        .iter()
        .step_by(step)
        .take(config.max_queries)
        .collect();

    // warm caches and code paths once
    for q in queries.iter().take(3) {
        time_query(dataset, q, config.sizes[0], config.params)?;
    }

    let mut rows = Vec::with_capacity(config.sizes.len());
    for &size in &config.sizes {
        let (mut base_sum, mut full_sum, mut over_sum) = (0.0, 0.0, 0.0);
        for q in &queries {
            let mut best: Option<(Duration, Duration, Duration)> = None;
            for _ in 0..config.repeats {
                let (base, stages) = time_query(dataset, q, size, config.params)?;
                let full = stages.baseline + stages.context;
                let sample = (base, full, stages.context);
                best = Some(match best {
                    None => sample,
                    Some(b) => (b.0.min(sample.0), b.1.min(sample.1), b.2.min(sample.2)),
                });
            }
            let (b, f, o) = best.expect("repeats >= 1");
            base_sum += ms(b);
            full_sum += ms(f);
            over_sum += ms(o);
        }
        let n = queries.len() as f64;
        rows.push(BenchRow {
            gallery_size: size,
            queries: queries.len(),
            baseline_ms: base_sum / n,
            cbgm_ms: full_sum / n,
            overhead_ms: over_sum / n,
        });
    }
    Ok(BenchReport {
        k1: config.params.k1,
        k2: config.params.k2,
        repeats: config.repeats,
        rows,
    })
}
