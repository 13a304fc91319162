//! Embeddings, detections and the single-point matching baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub const DEFAULT_EMBEDDING_DIM: usize = 256;

/// Raw appearance feature. Values are kept as ingested; the Euclidean norm is
/// cached so cosine similarity normalizes on the fly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding {
    values: Vec<f64>,
    norm: f64,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidEmbedding("empty vector".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidEmbedding(format!(
                "component {i} is not finite"
            )));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidEmbedding(format!("norm {norm} is unusable")));
        }
        Ok(Self { values, norm })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }
}

impl PartialEq for Embedding {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Embedding::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.values
    }
}

/// Cosine similarity clamped into `[-1, 1]`.
pub fn cosine_sim(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (a.norm * b.norm)).clamp(-1.0, 1.0))
}

/// One detected person.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score_first: f64,
    pub score_second: f64,
    pub embedding: Embedding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<String>,
}

impl Detection {
    pub fn new(
        bbox: BBox,
        score_first: f64,
        score_second: f64,
        embedding: Embedding,
        identity: Option<String>,
    ) -> Result<Self> {
        let d = Self {
            bbox,
            score_first,
            score_second,
            embedding,
            identity,
        };
        d.validate()?;
        Ok(d)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        for (field, value) in [
            ("score_first", self.score_first),
            ("score_second", self.score_second),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidScore { field, value });
            }
        }
        Ok(())
    }
}

/// Detection confidence used downstream: the first head's classification
/// score. The second head's score is carried but never consulted.
pub fn effective_score(d: &Detection) -> f64 {
    d.score_first
}

/// All detections of one scene image.
#[derive(Debug, Clone, PartialEq)]
pub struct GalleryImage {
    pub image_id: String,
    pub detections: Vec<Detection>,
}

impl GalleryImage {
    pub fn new(image_id: impl Into<String>, detections: Vec<Detection>) -> Self {
        Self {
            image_id: image_id.into(),
            detections,
        }
    }

    /// Cosine similarity of `query` against every detection, in detection order.
    pub fn similarities(&self, query: &Detection) -> Result<Vec<f64>> {
        self.detections
            .iter()
            .map(|p| cosine_sim(&query.embedding, &p.embedding))
            .collect()
    }
}

/// A query person: detection `person_index` of image `image_id`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub image_id: String,
    pub person_index: usize,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if values[b] >= v => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Image-level similarity: the best similarity between `q` and any person in `g`.
pub fn image_similarity(q: &Detection, g: &GalleryImage) -> Result<f64> {
    single_point_top1(q, g).map(|(_, s)| s)
}

/// The single-point baseline: the detection in `g` most similar to `q`.
pub fn single_point_top1(q: &Detection, g: &GalleryImage) -> Result<(usize, f64)> {
    let sims = g.similarities(q)?;
    let best = argmax(&sims).ok_or_else(|| Error::NoCandidates(g.image_id.clone()))?;
    Ok((best, sims[best]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn emb(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn det(v: &[f64]) -> Detection {
        Detection::new(
            BBox::new(0.0, 0.0, 1.0, 2.0).unwrap(),
            0.9,
            0.5,
            emb(v),
            None,
        )
        .unwrap()
    }

    #[test]
    fn cosine_examples() {
        let v = emb(&[0.3, -1.2, 4.0]);
        assert!((cosine_sim(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&emb(&[1.0, 0.0]), &emb(&[0.0, 1.0])).unwrap(), 0.0);
        let s = cosine_sim(&emb(&[1.0, 0.0]), &emb(&[1.0, 1.0])).unwrap();
        assert!((s - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn cosine_rejects_mismatch() {
        assert!(matches!(
            cosine_sim(&emb(&[1.0, 0.0]), &emb(&[1.0, 0.0, 0.0])),
            Err(Error::DimensionMismatch { left: 2, right: 3 })
        ));
    }

    #[test]
    fn embedding_rejects_zero_and_nonfinite() {
        assert!(Embedding::new(vec![0.0, 0.0]).is_err());
        assert!(Embedding::new(vec![]).is_err());
        assert!(Embedding::new(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn detection_rejects_out_of_range_scores() {
        let e = emb(&[1.0]);
        let bx = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(Detection::new(bx, 1.2, 0.5, e.clone(), None).is_err());
        assert!(Detection::new(bx, 0.5, -0.1, e, None).is_err());
    }

    #[test]
    fn effective_score_is_first_head() {
        let mut d = det(&[1.0]);
        for (first, second, want) in [(0.9, 0.3, 0.9), (0.0, 1.0, 0.0), (0.7, 0.7, 0.7)] {
            d.score_first = first;
            d.score_second = second;
            assert_eq!(effective_score(&d), want);
        }
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[]), None);
        assert_eq!(argmax(&[0.2, 0.7, 0.7, 0.1]), Some(1));
        assert_eq!(argmax(&[-0.5]), Some(0));
    }

    #[test]
    fn single_point_examples() {
        let q = det(&[1.0, 0.0]);
        let one = GalleryImage::new("g", vec![det(&[1.0, 0.0])]);
        assert_eq!(single_point_top1(&q, &one).unwrap(), (0, 1.0));
        assert_eq!(image_similarity(&q, &one).unwrap(), 1.0);

        // two people at similarity 0.5 and 0.6 to the query
        let c = det(&[0.5, 0.75f64.sqrt()]);
        let d = det(&[0.6, 0.64f64.sqrt()]);
        let g = GalleryImage::new("g", vec![c, d]);
        let (idx, s) = single_point_top1(&q, &g).unwrap();
        assert_eq!(idx, 1);
        assert!((s - 0.6).abs() < 1e-12);
        assert!((image_similarity(&q, &g).unwrap() - 0.6).abs() < 1e-12);

        let empty = GalleryImage::new("empty", vec![]);
        assert!(matches!(
            single_point_top1(&q, &empty),
            Err(Error::NoCandidates(id)) if id == "empty"
        ));
    }

    #[test]
    fn single_point_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut random = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
        for _ in 0..50 {
            let q = det(&random(16));
            let people: Vec<_> = (0..8).map(|_| det(&random(16))).collect();
            let g = GalleryImage::new("g", people.clone());

            let mut best = (usize::MAX, f64::NEG_INFINITY);
            for (i, p) in people.iter().enumerate() {
                let dot: f64 = q.embedding.values().iter().zip(p.embedding.values()).map(|(a, b)| a * b).sum();
                let na = q.embedding.values().iter().map(|a| a * a).sum::<f64>().sqrt();
                let nb = p.embedding.values().iter().map(|a| a * a).sum::<f64>().sqrt();
                let s = dot / (na * nb);
                if s > best.1 {
                    best = (i, s);
                }
            }
            let (idx, s) = single_point_top1(&q, &g).unwrap();
            assert_eq!(idx, best.0);
            assert!((s - best.1).abs() < 1e-12);
            assert_eq!(image_similarity(&q, &g).unwrap(), s);
        }
    }

    #[test]
    fn cosine_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let u: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (alpha, beta) = (rng.random_range(0.01..50.0), rng.random_range(0.01..50.0));
            let su: Vec<f64> = u.iter().map(|x| x * alpha).collect();
            let sv: Vec<f64> = v.iter().map(|x| x * beta).collect();
            let base = cosine_sim(&emb(&u), &emb(&v)).unwrap();
            assert!((cosine_sim(&emb(&su), &emb(&sv)).unwrap() - base).abs() < 1e-12);
            assert_eq!(base, cosine_sim(&emb(&v), &emb(&u)).unwrap());
        }
    }
}
