//! Person-search matching and evaluation engine.
//!
//! The crate re-ranks gallery images for a query person with context
//! bipartite graph matching: the query person and its highest-confidence
//! companions in the query image are jointly matched against every person in
//! a candidate gallery image using a maximum-weight assignment, and the
//! query's partner in that assignment becomes the search result.
//!
//! Supporting machinery covers box geometry and NMS ([`geometry`]), cosine
//! similarity and the single-point baseline ([`similarity`]), the
//! Kuhn-Munkres solver ([`assignment`]), the re-ranking procedure ([`cbgm`]),
//! retrieval and detection metrics ([`evaluation`]), the JSON-lines dataset
//! format ([`dataio`]), a synthetic scene generator ([`synth`]) and timing
//! harness ([`bench`]).

pub mod assignment;
pub mod bench;
pub mod cbgm;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod par;
pub mod similarity;
pub mod synth;

pub use assignment::{brute_force_matching, km_max_weight, Matching, WeightMatrix};
pub use cbgm::{cbgm_search, CbgmParams, MatchedPerson, SearchMode, SearchResult};
pub use dataio::Dataset;
pub use error::{Error, Result};
pub use evaluation::{EvalReport, GroundTruth};
pub use geometry::{iou, nms, BBox};
pub use similarity::{cosine_sim, Detection, Embedding, GalleryImage, Query};
