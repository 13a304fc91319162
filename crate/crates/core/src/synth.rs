//! Synthetic person-search scenes.
//!
//! Identities get random unit prototypes and are partitioned into groups of
//! co-walkers. Every image hosts one group (all members with probability
//! `persistence`, otherwise a single member) plus fillers and optional
//! low-confidence background detections. A filler is a known identity with
//! probability `recurring_fill`, otherwise a stranger seen only once. Confusable pairs are two
//! members of the same group whose prototypes differ by a small rotation, so
//! single-point matching tends to pick the wrong one of the two while the
//! rest of the group still identifies the pairing. Observed embeddings are
//! `prototype + N(0, noise_sigma^2)` per component.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, ImageInput};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::similarity::{Detection, Embedding, GalleryImage, Query};

const MIN_SLOT_WIDTH: f64 = 24.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub n_identities: usize,
    pub n_images: usize,
    pub group_size_range: (usize, usize),
    pub embedding_dim: usize,
    pub noise_sigma: f64,
    pub confusable_pairs: usize,
    /// Angle in radians between the prototypes of a confusable pair.
    pub confusable_angle: f64,
    /// People per image, including the host group (background excluded).
    pub detections_per_image_range: (usize, usize),
    /// Probability that a group appears complete rather than as one member.
    pub persistence: f64,
    /// Probability that a filler is a known identity rather than a one-off
    /// stranger.
    pub recurring_fill: f64,
    /// Probability of one extra low-confidence background detection per image.
    pub background_prob: f64,
    pub canvas: (f64, f64),
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_identities: 120,
            n_images: 200,
            group_size_range: (2, 4),
            embedding_dim: 256,
            noise_sigma: 0.03,
            confusable_pairs: 0,
            confusable_angle: 0.2,
            detections_per_image_range: (3, 8),
            persistence: 0.8,
            recurring_fill: 1.0,
            background_prob: 0.3,
            canvas: (1500.0, 900.0),
            seed: 0,
        }
    }
}

impl SynthParams {
    /// Scenes with look-alike co-walkers where the single-point baseline
    /// reaches roughly 0.8 top-1. Every group has one look-alike pair,
    /// groups always walk together and fillers are strangers.
    pub fn confusable(seed: u64) -> Self {
        Self {
            n_identities: 120,
            n_images: 240,
            group_size_range: (2, 3),
            noise_sigma: 0.03,
            confusable_pairs: 40,
            confusable_angle: 0.15,
            detections_per_image_range: (2, 4),
            persistence: 1.0,
            recurring_fill: 0.0,
            seed,
            ..Self::default()
        }
    }

    /// Exact prototypes, no look-alikes, complete groups.
    pub fn clean(seed: u64) -> Self {
        Self {
            noise_sigma: 0.0,
            confusable_pairs: 0,
            persistence: 1.0,
            recurring_fill: 0.0,
            seed,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        let (gmin, gmax) = self.group_size_range;
        let (dmin, dmax) = self.detections_per_image_range;
        if gmin == 0 || gmin > gmax {
            return bad(format!("group_size_range {gmin}..={gmax} is invalid"));
        }
        if dmin == 0 || dmin > dmax {
            return bad(format!("detections_per_image_range {dmin}..={dmax} is invalid"));
        }
        if self.n_identities == 0 || self.embedding_dim < 2 {
            return bad("need identities and an embedding dimension of at least 2".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be finite and >= 0", self.noise_sigma));
        }
        for (name, p) in [
            ("persistence", self.persistence),
            ("recurring_fill", self.recurring_fill),
            ("background_prob", self.background_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1]"));
            }
        }
        if !(self.canvas.0 > 0.0 && self.canvas.1 > 0.0) {
            return bad("canvas must have positive size".into());
        }
        let slot = self.canvas.0 / (dmax + 1) as f64;
        if slot < MIN_SLOT_WIDTH {
            return Err(Error::InfeasibleLayout(format!(
                "{} detections do not fit a {}px wide canvas",
                dmax + 1,
                self.canvas.0
            )));
        }
        Ok(())
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// `base` rotated by `angle` towards a random orthogonal direction.
fn rotated(rng: &mut ChaCha8Rng, base: &[f64], angle: f64) -> Vec<f64> {
    let r = random_unit(rng, base.len());
    let along: f64 = r.iter().zip(base).map(|(a, b)| a * b).sum();
    let mut ortho: Vec<f64> = r.iter().zip(base).map(|(a, b)| a - along * b).collect();
    let n = ortho.iter().map(|x| x * x).sum::<f64>().sqrt();
    ortho.iter_mut().for_each(|x| *x /= n);
    base.iter()
        .zip(&ortho)
        .map(|(b, o)| angle.cos() * b + angle.sin() * o)
        .collect()
}

struct Observation {
    embedding: Vec<f64>,
    identity: Option<usize>,
    score_first: f64,
    score_second: f64,
}

/// Generates a dataset; identical parameters give identical output.
pub fn generate(params: &SynthParams) -> Result<Dataset> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let dim = params.embedding_dim;

    let mut prototypes: Vec<Vec<f64>> = (0..params.n_identities)
        .map(|_| random_unit(&mut rng, dim))
        .collect();

    let mut ids: Vec<usize> = (0..params.n_identities).collect();
    ids.shuffle(&mut rng);
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut rest = ids.as_slice();
    while !rest.is_empty() {
        let size = rng
            .random_range(params.group_size_range.0..=params.group_size_range.1)
            .min(rest.len());
        groups.push(rest[..size].to_vec());
        rest = &rest[size..];
    }

    let mut pairable: Vec<usize> = (0..groups.len()).filter(|&g| groups[g].len() >= 2).collect();
    if pairable.len() < params.confusable_pairs {
        return Err(Error::InvalidParam(format!(
            "{} confusable pairs requested but only {} groups have two members",
            params.confusable_pairs,
            pairable.len()
        )));
    }
    pairable.shuffle(&mut rng);
    for &g in &pairable[..params.confusable_pairs] {
        let (a, b) = (groups[g][0], groups[g][1]);
        prototypes[b] = rotated(&mut rng, &prototypes[a], params.confusable_angle);
    }

    // every group hosts at least two images when the budget allows it
    let mut hosts: Vec<usize> = (0..groups.len())
        .cycle()
        .take((2 * groups.len()).min(params.n_images))
        .collect();
    while hosts.len() < params.n_images {
        hosts.push(rng.random_range(0..groups.len()));
    }
    hosts.shuffle(&mut rng);

    let noise = Normal::new(0.0, params.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidParam(e.to_string()))?;
    let (dmin, dmax) = params.detections_per_image_range;
    let mut images = Vec::with_capacity(params.n_images);
    for (n, &host) in hosts.iter().enumerate() {
        let target = rng.random_range(dmin..=dmax);
        let mut present: Vec<usize> = if rng.random_bool(params.persistence) {
            groups[host].clone()
        } else {
            vec![groups[host][rng.random_range(0..groups[host].len())]]
        };
        present.truncate(dmax);
        let mut seen: BTreeSet<usize> = present.iter().copied().collect();
        let mut guard = 0;
        while present.len() < target && guard < 10_000 {
            guard += 1;
            if !rng.random_bool(params.recurring_fill) {
                present.push(prototypes.len());
                prototypes.push(random_unit(&mut rng, dim));
                continue;
            }
            let id = rng.random_range(0..params.n_identities);
            if seen.insert(id) {
                present.push(id);
            }
        }

        let mut observations: Vec<Observation> = present
            .iter()
            .map(|&id| {
                let embedding = prototypes[id]
                    .iter()
                    .map(|p| p + sample_noise(&mut rng, &noise, params.noise_sigma))
                    .collect();
                let jitter: f64 = sample_noise(&mut rng, &Normal::new(0.0, 0.03).unwrap(), 0.03);
                Observation {
                    embedding,
                    identity: Some(id),
                    score_first: (1.0 - jitter.abs()).clamp(0.0, 1.0),
                    score_second: rng.random_range(0.5..1.0),
                }
            })
            .collect();
        if rng.random_bool(params.background_prob) {
            observations.push(Observation {
                embedding: random_unit(&mut rng, dim),
                identity: None,
                score_first: rng.random_range(0.05..0.4),
                score_second: rng.random_range(0.0..0.5),
            });
        }
        observations.shuffle(&mut rng);

        let slots = dmax + 1;
        let slot_w = params.canvas.0 / slots as f64;
        let mut slot_ids: Vec<usize> = (0..slots).collect();
        slot_ids.shuffle(&mut rng);
        let detections = observations
            .into_iter()
            .zip(slot_ids)
            .map(|(obs, slot)| {
                let w = slot_w * rng.random_range(0.6..0.9);
                let h = (w * rng.random_range(2.0..2.8)).min(params.canvas.1 * 0.95);
                let x1 = slot as f64 * slot_w + rng.random_range(0.0..(slot_w - w));
                let y1 = rng.random_range(0.0..(params.canvas.1 - h));
                let bbox = BBox::new(x1, y1, x1 + w, y1 + h)?;
                let embedding = Embedding::new(obs.embedding)?;
                Detection::new(
                    bbox,
                    obs.score_first,
                    obs.score_second,
                    embedding,
                    obs.identity.map(identity_label),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        images.push(GalleryImage::new(format!("img-{n:05}"), detections));
    }

    let mut appearances: BTreeMap<&str, usize> = BTreeMap::new();
    for image in &images {
        let ids: BTreeSet<&str> = image
            .detections
            .iter()
            .filter_map(|d| d.identity.as_deref())
            .collect();
        for id in ids {
            *appearances.entry(id).or_default() += 1;
        }
    }
    let queries: Vec<Query> = images
        .iter()
        .flat_map(|image| {
            image
                .detections
                .iter()
                .enumerate()
                .filter(|(_, d)| {
                    d.identity
                        .as_deref()
                        .is_some_and(|id| appearances[id] >= 2)
                })
                .map(|(i, _)| Query {
                    image_id: image.image_id.clone(),
                    person_index: i,
                })
        })
        .collect();

    let mut metadata = BTreeMap::new();
    metadata.insert("generator".into(), "synth".into());
    metadata.insert("seed".into(), params.seed.to_string());
    metadata.insert("noise_sigma".into(), params.noise_sigma.to_string());
    metadata.insert("confusable_pairs".into(), params.confusable_pairs.to_string());
    Dataset::new(
        Some(format!("synth-{}", params.seed)),
        Some(dim),
        metadata,
        images.into_iter().map(|image| ImageInput { image, gt: None }).collect(),
        queries,
    )
}

fn sample_noise(rng: &mut ChaCha8Rng, dist: &Normal<f64>, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        dist.sample(rng)
    }
}

fn identity_label(id: usize) -> String {
    format!("p{id:04}")
}

/// Two-image scene in which the query's look-alike companion fools the
/// single-point baseline.
///
/// The query image holds `a` (the query) and its companion `b`; the gallery
/// image holds `c` (same person as `a`) and `d` (same person as `b`), with
/// `sim(a,c)=0.5`, `sim(a,d)=0.6`, `sim(b,c)=0.1`, `sim(b,d)=0.9`. The
/// baseline returns `d`; the joint matching `a-c, b-d` (weight 1.4 against
/// 0.7) returns `c` with confidence 0.9.
pub fn fig2_fixture() -> Dataset {
    let bx = |x: f64| BBox::new(x, 100.0, x + 80.0, 300.0).expect("static box");
    let person = |x: f64, score: f64, e: Vec<f64>, who: &str| {
        Detection::new(bx(x), score, score, Embedding::new(e).expect("static"), Some(who.into()))
            .expect("static detection")
    };
    let a = vec![0.5, 0.6, 0.39f64.sqrt(), 0.0];
    let b = vec![0.1, 0.9, 0.0, 0.18f64.sqrt()];
    let query_image = GalleryImage::new(
        "query",
        vec![person(100.0, 0.99, a, "A"), person(300.0, 0.97, b, "B")],
    );
    let gallery = GalleryImage::new(
        "gallery",
        vec![
            person(120.0, 0.98, vec![1.0, 0.0, 0.0, 0.0], "A"),
            person(320.0, 0.96, vec![0.0, 1.0, 0.0, 0.0], "B"),
        ],
    );
    Dataset::new(
        Some("fig2".into()),
        Some(4),
        BTreeMap::new(),
        vec![
            ImageInput { image: query_image, gt: None },
            ImageInput { image: gallery, gt: None },
        ],
        vec![Query {
            image_id: "query".into(),
            person_index: 0,
        }],
    )
    .expect("fixture is valid")
}
