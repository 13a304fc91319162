//! Dataset and results files.
//!
//! Both use JSON lines: one object per line, discriminated by `"kind"`.
//! Blank lines are ignored. Dataset records:
//!
//! ```text
//! {"kind":"meta","embedding_dim":256,"name":"demo","attributes":{"seed":"7"}}
//! {"kind":"image","id":"img-0","detections":[{"box":[x1,y1,x2,y2],"score_first":0.98,
//!   "score_second":0.91,"embedding":[...],"identity":"p3"}],"gt":[{"box":[...],"identity":"p3"}]}
//! {"kind":"query","image_id":"img-0","person_index":0}
//! ```
//!
//! `gt` is optional; without it the ground truth of an image is the boxes of
//! its labeled detections. Results files start with a `header` record,
//! optionally followed by a `metrics` record, then one `ranking` record per
//! query. See `docs/FORMAT.md` for the field tables.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cbgm::{CbgmParams, QueryResults, SearchMode, SearchResult};
use crate::error::{Error, Result};
use crate::evaluation::{EvalReport, GroundTruth, GtBox};
use crate::geometry::nms;
use crate::similarity::{Detection, GalleryImage, Query, DEFAULT_EMBEDDING_DIM};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: Option<String>,
    pub embedding_dim: usize,
    pub metadata: BTreeMap<String, String>,
    pub images: Vec<GalleryImage>,
    pub queries: Vec<Query>,
    pub ground_truth: GroundTruth,
    /// Images whose ground truth was given explicitly rather than derived
    /// from labeled detections.
    explicit_gt: Vec<bool>,
    index: HashMap<String, usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum DatasetRecord {
    Meta {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        embedding_dim: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        attributes: BTreeMap<String, String>,
    },
    Image {
        id: String,
        detections: Vec<Detection>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gt: Option<Vec<GtBox>>,
    },
    Query(Query),
}

fn derived_gt(detections: &[Detection]) -> Vec<GtBox> {
    detections
        .iter()
        .filter(|d| d.identity.is_some())
        .map(|d| GtBox {
            bbox: d.bbox,
            identity: d.identity.clone(),
        })
        .collect()
}

/// An image record as assembled in memory, before validation.
pub struct ImageInput {
    pub image: GalleryImage,
    /// Explicit ground truth; `None` derives it from labeled detections.
    pub gt: Option<Vec<GtBox>>,
}

impl Dataset {
    /// Builds and validates a dataset. `embedding_dim` of `None` takes the
    /// dimension of the first embedding, or the default when there is none.
    pub fn new(
        name: Option<String>,
        embedding_dim: Option<usize>,
        metadata: BTreeMap<String, String>,
        images: Vec<ImageInput>,
        queries: Vec<Query>,
    ) -> Result<Self> {
        Self::build(
            name,
            embedding_dim,
            metadata,
            images.into_iter().map(|i| (i, 0)).collect(),
            queries.into_iter().map(|q| (q, 0)).collect(),
        )
    }

    fn build(
        name: Option<String>,
        embedding_dim: Option<usize>,
        metadata: BTreeMap<String, String>,
        images: Vec<(ImageInput, usize)>,
        queries: Vec<(Query, usize)>,
    ) -> Result<Self> {
        let at = |line: usize| {
            if line == 0 {
                String::new()
            } else {
                format!("line {line}: ")
            }
        };
        let embedding_dim = embedding_dim
            .or_else(|| {
                images
                    .iter()
                    .flat_map(|(i, _)| i.image.detections.first())
                    .map(|d| d.embedding.dim())
                    .next()
            })
            .unwrap_or(DEFAULT_EMBEDDING_DIM);
        if embedding_dim == 0 {
            return Err(Error::Validation("embedding_dim must be positive".into()));
        }

        let mut index = HashMap::with_capacity(images.len());
        let mut gt = Vec::with_capacity(images.len());
        let mut explicit_gt = Vec::with_capacity(images.len());
        let mut out_images = Vec::with_capacity(images.len());
        for (n, (input, line)) in images.into_iter().enumerate() {
            let image = input.image;
            if image.image_id.is_empty() {
                return Err(Error::Validation(format!("{}empty image id", at(line))));
            }
            if index.insert(image.image_id.clone(), n).is_some() {
                return Err(Error::Validation(format!(
                    "{}duplicate image id `{}`",
                    at(line),
                    image.image_id
                )));
            }
            for (di, d) in image.detections.iter().enumerate() {
                d.validate().map_err(|e| {
                    Error::Validation(format!("{}detection {di}: {e}", at(line)))
                })?;
                if d.embedding.dim() != embedding_dim {
                    return Err(Error::Validation(format!(
                        "{}detection {di} of `{}`: embedding dimension {} != dataset dimension {embedding_dim}",
                        at(line),
                        image.image_id,
                        d.embedding.dim()
                    )));
                }
            }
            explicit_gt.push(input.gt.is_some());
            let boxes = input.gt.unwrap_or_else(|| derived_gt(&image.detections));
            gt.push((image.image_id.clone(), boxes));
            out_images.push(image);
        }

        for (q, line) in &queries {
            let Some(&i) = index.get(&q.image_id) else {
                return Err(Error::Validation(format!(
                    "{}query references unknown image `{}`",
                    at(*line),
                    q.image_id
                )));
            };
            let count = out_images[i].detections.len();
            if q.person_index >= count {
                return Err(Error::Validation(format!(
                    "{}query person_index {} out of range for `{}` with {count} detections",
                    at(*line),
                    q.person_index,
                    q.image_id
                )));
            }
        }

        Ok(Self {
            name,
            embedding_dim,
            metadata,
            images: out_images,
            queries: queries.into_iter().map(|(q, _)| q).collect(),
            ground_truth: GroundTruth::new(gt),
            explicit_gt,
            index,
        })
    }

    pub fn image_index(&self, image_id: &str) -> Result<usize> {
        self.index
            .get(image_id)
            .copied()
            .ok_or_else(|| Error::Validation(format!("unknown image `{image_id}`")))
    }

    pub fn image(&self, image_id: &str) -> Option<&GalleryImage> {
        self.index.get(image_id).map(|&i| &self.images[i])
    }

    /// Ingestion-time NMS for raw detections: suppress on the first-head score
    /// at `first_threshold`, then on the second-head score at
    /// `second_threshold`. Surviving detections keep their relative order and
    /// queries are re-indexed; a query whose detection is suppressed is an
    /// error.
    pub fn with_nms(&self, first_threshold: f64, second_threshold: f64) -> Result<Dataset> {
        let mut remap: Vec<Vec<Option<usize>>> = Vec::with_capacity(self.images.len());
        let mut images = Vec::with_capacity(self.images.len());
        for image in &self.images {
            let first: Vec<_> = image
                .detections
                .iter()
                .map(|d| (d.bbox, d.score_first))
                .collect();
            let mut kept = nms(&first, first_threshold)?;
            kept.sort_unstable();
            let second: Vec<_> = kept
                .iter()
                .map(|&i| (image.detections[i].bbox, image.detections[i].score_second))
                .collect();
            let mut kept2: Vec<usize> = nms(&second, second_threshold)?
                .into_iter()
                .map(|k| kept[k])
                .collect();
            kept2.sort_unstable();

            let mut map = vec![None; image.detections.len()];
            for (new, &old) in kept2.iter().enumerate() {
                map[old] = Some(new);
            }
            remap.push(map);
            images.push(ImageInput {
                image: GalleryImage::new(
                    image.image_id.clone(),
                    kept2.iter().map(|&i| image.detections[i].clone()).collect(),
                ),
                // pinned so suppressed labeled detections keep their ground truth
                gt: Some(
                    self.ground_truth
                        .boxes(&image.image_id)
                        .unwrap_or_default()
                        .to_vec(),
                ),
            });
        }
        let queries = self
            .queries
            .iter()
            .map(|q| {
                let i = self.index[&q.image_id];
                let person_index = remap[i][q.person_index].ok_or_else(|| {
                    Error::Validation(format!(
                        "query detection {} of `{}` removed by NMS",
                        q.person_index, q.image_id
                    ))
                })?;
                Ok(Query {
                    image_id: q.image_id.clone(),
                    person_index,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(
            self.name.clone(),
            Some(self.embedding_dim),
            self.metadata.clone(),
            images,
            queries,
        )
    }

    /// Serializes in canonical order: meta, images, queries.
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        let io = |e: std::io::Error| Error::Io {
            context: "writing dataset".into(),
            source: e,
        };
        let line = |rec: &DatasetRecord, out: &mut dyn Write| -> Result<()> {
            serde_json::to_writer(&mut *out, rec).map_err(|e| Error::Io {
                context: "serializing dataset".into(),
                source: e.into(),
            })?;
            out.write_all(b"\n").map_err(io)
        };
        line(
            &DatasetRecord::Meta {
                embedding_dim: Some(self.embedding_dim),
                name: self.name.clone(),
                attributes: self.metadata.clone(),
            },
            &mut out,
        )?;
        for (n, image) in self.images.iter().enumerate() {
            let gt = self.explicit_gt[n].then(|| {
                self.ground_truth
                    .boxes(&image.image_id)
                    .unwrap_or_default()
                    .to_vec()
            });
            line(
                &DatasetRecord::Image {
                    id: image.image_id.clone(),
                    detections: image.detections.clone(),
                    gt,
                },
                &mut out,
            )?;
        }
        for q in &self.queries {
            line(&DatasetRecord::Query(q.clone()), &mut out)?;
        }
        out.flush().map_err(io)
    }

    pub fn read_from(input: impl BufRead) -> Result<Dataset> {
        let mut meta_seen = false;
        let mut name = None;
        let mut dim = None;
        let mut attributes = BTreeMap::new();
        let mut images = Vec::new();
        let mut queries = Vec::new();
        for (i, raw) in input.lines().enumerate() {
            let line = i + 1;
            let raw = raw.map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
            if raw.trim().is_empty() {
                continue;
            }
            let record: DatasetRecord = serde_json::from_str(&raw).map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
            match record {
                DatasetRecord::Meta {
                    embedding_dim,
                    name: n,
                    attributes: a,
                } => {
                    if meta_seen {
                        return Err(Error::Parse {
                            line,
                            message: "duplicate meta record".into(),
                        });
                    }
                    meta_seen = true;
                    dim = embedding_dim;
                    name = n;
                    attributes = a;
                }
                DatasetRecord::Image { id, detections, gt } => images.push((
                    ImageInput {
                        image: GalleryImage::new(id, detections),
                        gt,
                    },
                    line,
                )),
                DatasetRecord::Query(q) => queries.push((q, line)),
            }
        }
        Dataset::build(name, dim, attributes, images, queries)
    }
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, "opening", e))?;
    Dataset::read_from(BufReader::new(file))
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, "creating", e))?;
    dataset.write_to(BufWriter::new(file))
}

pub const RESULTS_FORMAT: &str = "cbgm-results";
pub const RESULTS_VERSION: u32 = 1;

/// How a results file was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub format: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(flatten)]
    pub mode: SearchMode,
}

impl RunHeader {
    pub fn new(dataset: Option<String>, mode: SearchMode) -> Self {
        Self {
            format: RESULTS_FORMAT.into(),
            version: RESULTS_VERSION,
            dataset,
            mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultsFile {
    pub header: RunHeader,
    pub report: Option<EvalReport>,
    pub queries: Vec<QueryResults>,
}

#[derive(Serialize, Deserialize)]
struct RankingRecord {
    query_index: usize,
    #[serde(flatten)]
    query: Query,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    identity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ap: Option<f64>,
    results: Vec<SearchResult>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ResultsRecord {
    Header(RunHeader),
    Metrics(EvalReport),
    Ranking(RankingRecord),
}

impl ResultsFile {
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        if let Some(r) = &self.report {
            if r.per_query_ap.len() != self.queries.len() {
                return Err(Error::Validation(format!(
                    "report covers {} queries but {} rankings are present",
                    r.per_query_ap.len(),
                    self.queries.len()
                )));
            }
        }
        let mut emit = |rec: &ResultsRecord| -> Result<()> {
            let mut s = serde_json::to_string(rec).map_err(|e| Error::Io {
                context: "serializing results".into(),
                source: e.into(),
            })?;
            s.push('\n');
            out.write_all(s.as_bytes()).map_err(|e| Error::Io {
                context: "writing results".into(),
                source: e,
            })
        };
        emit(&ResultsRecord::Header(self.header.clone()))?;
        if let Some(r) = &self.report {
            emit(&ResultsRecord::Metrics(r.clone()))?;
        }
        for (i, q) in self.queries.iter().enumerate() {
            emit(&ResultsRecord::Ranking(RankingRecord {
                query_index: i,
                query: q.query.clone(),
                identity: q.identity.clone(),
                ap: self.report.as_ref().map(|r| r.per_query_ap[i]),
                results: q.results.clone(),
            }))?;
        }
        Ok(())
    }

    pub fn read_from(input: impl BufRead) -> Result<ResultsFile> {
        let mut header = None;
        let mut report: Option<EvalReport> = None;
        let mut queries = Vec::new();
        let mut aps = Vec::new();
        for (i, raw) in input.lines().enumerate() {
            let line = i + 1;
            let parse_err = |message: String| Error::Parse { line, message };
            let raw = raw.map_err(|e| parse_err(e.to_string()))?;
            if raw.trim().is_empty() {
                continue;
            }
            let rec: ResultsRecord =
                serde_json::from_str(&raw).map_err(|e| parse_err(e.to_string()))?;
            match rec {
                ResultsRecord::Header(h) => {
                    if header.is_some() {
                        return Err(parse_err("duplicate header".into()));
                    }
                    if h.format != RESULTS_FORMAT || h.version != RESULTS_VERSION {
                        return Err(parse_err(format!(
                            "unsupported results format {} v{}",
                            h.format, h.version
                        )));
                    }
                    header = Some(h);
                }
                ResultsRecord::Metrics(m) => {
                    if header.is_none() || report.is_some() || !queries.is_empty() {
                        return Err(parse_err("metrics record out of place".into()));
                    }
                    report = Some(m);
                }
                ResultsRecord::Ranking(r) => {
                    if header.is_none() {
                        return Err(parse_err("ranking before header".into()));
                    }
                    if r.query_index != queries.len() {
                        return Err(parse_err(format!(
                            "expected query_index {}, found {}",
                            queries.len(),
                            r.query_index
                        )));
                    }
                    match (&report, r.ap) {
                        (Some(_), Some(ap)) => aps.push(ap),
                        (None, None) => {}
                        _ => return Err(parse_err("ap present iff metrics record present".into())),
                    }
                    queries.push(QueryResults {
                        query: r.query,
                        identity: r.identity,
                        results: r.results,
                    });
                }
            }
        }
        let header = header.ok_or(Error::Parse {
            line: 1,
            message: "missing header record".into(),
        })?;
        if let Some(r) = report.as_mut() {
            r.per_query_ap = aps;
        }
        Ok(ResultsFile {
            header,
            report,
            queries,
        })
    }
}

/// Writes a results file: header, optional metrics block, then per-query
/// rankings. Output is byte-stable for identical inputs.
pub fn save_results(results: &ResultsFile, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, "creating", e))?;
    let mut w = BufWriter::new(file);
    results.write_to(&mut w)?;
    w.flush().map_err(|e| Error::io(path, "writing", e))
}

pub fn load_results(path: &Path) -> Result<ResultsFile> {
    let file = File::open(path).map_err(|e| Error::io(path, "opening", e))?;
    ResultsFile::read_from(BufReader::new(file))
}

impl SearchMode {
    pub fn label(&self) -> &'static str {
        match self {
            SearchMode::Baseline => "baseline",
            SearchMode::Cbgm(_) => "cbgm",
        }
    }

    pub fn cbgm(k1: usize, k2: usize) -> Result<SearchMode> {
        CbgmParams::new(k1, k2).map(SearchMode::Cbgm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"{"kind":"meta","embedding_dim":2,"name":"tiny"}
{"kind":"image","id":"a","detections":[{"box":[0,0,10,20],"score_first":0.9,"score_second":0.8,"embedding":[1,0],"identity":"p1"},{"box":[20,0,30,20],"score_first":0.6,"score_second":0.7,"embedding":[0,1]}]}

{"kind":"image","id":"b","detections":[{"box":[0,0,10,20],"score_first":0.9,"score_second":0.8,"embedding":[0.9,0.1],"identity":"p1"}],"gt":[{"box":[0,0,10,20],"identity":"p1"},{"box":[40,0,50,20],"identity":null}]}
{"kind":"query","image_id":"a","person_index":0}
"#;

    fn load(s: &str) -> Result<Dataset> {
        Dataset::read_from(s.as_bytes())
    }

    #[test]
    fn loads_small_file() {
        let d = load(SMALL).unwrap();
        assert_eq!(d.name.as_deref(), Some("tiny"));
        assert_eq!(d.embedding_dim, 2);
        assert_eq!(d.images.len(), 2);
        assert_eq!(d.queries.len(), 1);
        assert_eq!(d.ground_truth.boxes("a").unwrap().len(), 1);
        assert_eq!(d.ground_truth.boxes("b").unwrap().len(), 2);
        assert_eq!(d.image("b").unwrap().detections.len(), 1);
    }

    #[test]
    fn empty_file_is_valid() {
        let d = load("").unwrap();
        assert!(d.images.is_empty() && d.queries.is_empty());
        assert_eq!(d.embedding_dim, DEFAULT_EMBEDDING_DIM);
    }

    #[test]
    fn self_query_loads() {
        let d = load(
            r#"{"kind":"image","id":"x","detections":[{"box":[0,0,1,1],"score_first":1,"score_second":1,"embedding":[1],"identity":"p"}]}
{"kind":"query","image_id":"x","person_index":0}"#,
        )
        .unwrap();
        assert_eq!(d.queries.len(), 1);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("{\"kind\":\"meta\"}\n{not json", "line 2"),
            (
                "{\"kind\":\"image\",\"id\":\"a\",\"detections\":[{\"box\":[5,0,1,1],\"score_first\":1,\"score_second\":1,\"embedding\":[1]}]}",
                "line 1",
            ),
            (
                "{\"kind\":\"image\",\"id\":\"a\",\"detections\":[]}\n{\"kind\":\"image\",\"id\":\"a\",\"detections\":[]}",
                "line 2: duplicate image id",
            ),
            (
                "{\"kind\":\"image\",\"id\":\"a\",\"detections\":[]}\n\n{\"kind\":\"query\",\"image_id\":\"a\",\"person_index\":0}",
                "line 3: query person_index 0 out of range",
            ),
            ("{\"kind\":\"query\",\"image_id\":\"zz\",\"person_index\":0}", "line 1: query references unknown"),
            (
                "{\"kind\":\"meta\",\"embedding_dim\":3}\n{\"kind\":\"image\",\"id\":\"a\",\"detections\":[{\"box\":[0,0,1,1],\"score_first\":1,\"score_second\":1,\"embedding\":[1,2]}]}",
                "line 2: detection 0 of `a`: embedding dimension 2",
            ),
            (
                "{\"kind\":\"image\",\"id\":\"a\",\"detections\":[{\"box\":[0,0,1,1],\"score_first\":1.5,\"score_second\":1,\"embedding\":[1]}]}",
                "line 1: detection 0",
            ),
            ("{\"kind\":\"meta\"}\n{\"kind\":\"meta\"}", "line 2: duplicate meta"),
            ("{\"kind\":\"banana\"}", "line 1"),
        ];
        for (input, want) in cases {
            let err = load(input).unwrap_err().to_string();
            assert!(err.contains(want), "{err:?} should contain {want:?}");
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let d = load(SMALL).unwrap();
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        let again = load(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(again, d);
        let mut buf2 = Vec::new();
        again.write_to(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn nms_reindexes_queries() {
        let raw = r#"{"kind":"image","id":"a","detections":[
{"box":[0,0,10,10],"score_first":0.5,"score_second":0.5,"embedding":[1],"identity":"p"},
{"box":[1,0,11,10],"score_first":0.9,"score_second":0.9,"embedding":[1]},
{"box":[50,0,60,10],"score_first":0.7,"score_second":0.7,"embedding":[1],"identity":"q"}]}
{"kind":"query","image_id":"a","person_index":2}"#
            .replace('\n', "")
            .replace("]}{", "]}\n{");
        let d = load(&raw).unwrap();
        let filtered = d.with_nms(0.4, 0.5).unwrap();
        let a = filtered.image("a").unwrap();
        assert_eq!(a.detections.len(), 2);
        assert_eq!(filtered.queries[0].person_index, 1);
        // ground truth is not altered by suppression
        assert_eq!(filtered.ground_truth.boxes("a").unwrap().len(), 2);

        let suppressed = raw.replace("\"person_index\":2", "\"person_index\":0");
        assert!(load(&suppressed).unwrap().with_nms(0.4, 0.5).is_err());
    }

    #[test]
    fn results_round_trip_and_order_checks() {
        let file = ResultsFile {
            header: RunHeader::new(Some("tiny".into()), SearchMode::Baseline),
            report: None,
            queries: vec![],
        };
        let mut buf = Vec::new();
        file.write_to(&mut buf).unwrap();
        assert_eq!(
            std::str::from_utf8(&buf).unwrap(),
            "{\"kind\":\"header\",\"format\":\"cbgm-results\",\"version\":1,\"dataset\":\"tiny\",\"mode\":\"baseline\"}\n"
        );
        assert_eq!(ResultsFile::read_from(buf.as_slice()).unwrap(), file);

        let cbgm = RunHeader::new(None, SearchMode::cbgm(10, 3).unwrap());
        let s = serde_json::to_string(&cbgm).unwrap();
        assert!(s.contains("\"mode\":\"cbgm\",\"k1\":10,\"k2\":3"), "{s}");

        assert!(ResultsFile::read_from("".as_bytes()).is_err());
        let bad = "{\"kind\":\"ranking\",\"query_index\":0,\"image_id\":\"a\",\"person_index\":0,\"results\":[]}";
        assert!(ResultsFile::read_from(bad.as_bytes()).is_err());
    }
}
