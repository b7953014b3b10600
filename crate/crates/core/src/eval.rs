//! Open-set retrieval: cosine ranking of a gallery for every query and the
//! Rank-k / mAP / mINP metrics.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::manifest::Split;
use crate::model::{Mode, SmplGait};
use crate::nn::ParamStore;
use crate::preprocess::{limit_frames, subsample_fraction};
use crate::types::{GaitSample, PartEmbedding};

/// Gallery ids listed per query in the CSV report.
pub const TOP_K: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Drop gallery sequences recorded by the query's camera.
    pub exclude_same_camera: bool,
    /// Fraction of each test sequence's frames kept before embedding.
    pub test_frac: f64,
    /// At most this many leading frames are embedded per sequence.
    pub frame_cap: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            exclude_same_camera: false,
            test_frac: 1.0,
            frame_cap: 500,
            seed: 0,
        }
    }
}

/// Mean over parts of the cosine between matching part vectors; a part with
/// zero norm on either side contributes 0.
pub fn similarity(a: &PartEmbedding, b: &PartEmbedding) -> Result<f64> {
    if a.parts != b.parts || a.dim != b.dim {
        return Err(GaitError::Shape(format!(
            "comparing {}x{} with {}x{} embeddings",
            a.parts, a.dim, b.parts, b.dim
        )));
    }
    let mut total = 0.0;
    for p in 0..a.parts {
        let (x, y) = (a.part(p), b.part(p));
        let dot: f64 = x.iter().zip(y).map(|(u, v)| u * v).sum();
        let nx = x.iter().map(|u| u * u).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nx > 0.0 && ny > 0.0 {
            total += dot / (nx * ny);
        }
    }
    Ok(total / a.parts as f64)
}

/// Gallery indices by descending similarity; ties keep gallery order.
pub fn rank_gallery(query: &PartEmbedding, gallery: &[&PartEmbedding]) -> Result<Vec<(usize, f64)>> {
    if gallery.is_empty() {
        return Err(GaitError::Empty("empty gallery".into()));
    }
    let mut sims = gallery
        .iter()
        .enumerate()
        .map(|(i, g)| Ok((i, similarity(query, g)?)))
        .collect::<Result<Vec<_>>>()?;
    sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(sims)
}

/// AP and INP of one ranked relevance list, `None` without positives.
pub fn query_metrics(relevance: &[bool]) -> Option<(f64, f64)> {
    let mut hits = 0usize;
    let mut precision_sum = 0.0;
    let mut last = 0usize;
    for (i, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            precision_sum += hits as f64 / (i + 1) as f64;
            last = i + 1;
        }
    }
    (hits > 0).then(|| (precision_sum / hits as f64, hits as f64 / last as f64))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rank1: f64,
    pub rank5: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(rename = "mINP")]
    pub minp: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

/// Aggregates ranked relevance lists; lists without a positive are skipped.
pub fn compute_metrics(rankings: &[Vec<bool>]) -> Metrics {
    let mut m = Metrics::default();
    for rel in rankings {
        let Some((ap, inp)) = query_metrics(rel) else {
            m.skipped += 1;
            continue;
        };
        m.evaluated += 1;
        m.map += ap;
        m.minp += inp;
        m.rank1 += rel.iter().take(1).any(|&r| r) as u8 as f64;
        m.rank5 += rel.iter().take(5).any(|&r| r) as u8 as f64;
    }
    if m.evaluated > 0 {
        let n = m.evaluated as f64;
        m.rank1 /= n;
        m.rank5 /= n;
        m.map /= n;
        m.minp /= n;
    }
    m
}

/// One embedded sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub sequence_id: String,
    pub subject_id: u32,
    pub camera_id: u32,
    pub split: Split,
    pub embedding: PartEmbedding,
}

fn sequence_seed(seed: u64, id: &str) -> u64 {
    // FNV-1a keeps the per-sequence seed independent of sequence order
    id.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
        ^ seed
}

/// Eval-mode embeddings of `samples`, after the frame cap and fraction.
pub fn embed_samples(
    model: &SmplGait,
    store: &ParamStore,
    samples: &[GaitSample],
    split: Split,
    cfg: &EvalConfig,
) -> Result<Vec<EmbeddingRecord>> {
    samples
        .par_iter()
        .map(|s| {
            let capped = limit_frames(s, cfg.frame_cap)?;
            let cut = subsample_fraction(&capped, cfg.test_frac, sequence_seed(cfg.seed, &s.sequence_id))?;
            Ok(EmbeddingRecord {
                sequence_id: s.sequence_id.clone(),
                subject_id: s.subject_id,
                camera_id: s.camera_id,
                split,
                embedding: model.embed_sequence(store, &cut, Mode::Eval)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query_id: String,
    pub subject_id: u32,
    /// Up to [`TOP_K`] best gallery sequence ids with their similarity.
    pub top: Vec<(String, f64)>,
    pub ap: Option<f64>,
    pub inp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub queries: usize,
    pub evaluated: usize,
    pub skipped: usize,
    pub gallery: usize,
}

/// JSON summary; field order is `rank1, rank5, mAP, mINP, counts`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rank1: f64,
    pub rank5: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(rename = "mINP")]
    pub minp: f64,
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    pub metrics: Metrics,
    pub gallery_size: usize,
    pub per_query: Vec<QueryResult>,
}

impl RetrievalReport {
    pub fn summary(&self) -> Summary {
        Summary {
            rank1: self.metrics.rank1,
            rank5: self.metrics.rank5,
            map: self.metrics.map,
            minp: self.metrics.minp,
            counts: Counts {
                queries: self.per_query.len(),
                evaluated: self.metrics.evaluated,
                skipped: self.metrics.skipped,
                gallery: self.gallery_size,
            },
        }
    }

    /// `query_id,rank_01,...,rank_20,ap,inp`; missing entries are empty and
    /// skipped queries have empty `ap` and `inp`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("query_id");
        for k in 1..=TOP_K {
            out.push_str(&format!(",rank_{k:02}"));
        }
        out.push_str(",ap,inp\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for q in &self.per_query {
            out.push_str(&q.query_id);
            for k in 0..TOP_K {
                out.push(',');
                if let Some((id, _)) = q.top.get(k) {
                    out.push_str(id);
                }
            }
            out.push_str(&format!(",{},{}\n", opt(q.ap), opt(q.inp)));
        }
        out
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary()).expect("summary serializes")
    }

    /// Writes `per_query.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| GaitError::io(dir, e))?;
        for (name, text) in [(REPORT_CSV, self.to_csv()), (REPORT_JSON, self.summary_json() + "\n")] {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| GaitError::io(&path, e))?;
        }
        Ok(())
    }
}

pub const REPORT_CSV: &str = "per_query.csv";
pub const REPORT_JSON: &str = "summary.json";

/// Ranks the gallery for every query and aggregates the metrics.
pub fn evaluate_embeddings(
    query: &[EmbeddingRecord],
    gallery: &[EmbeddingRecord],
    cfg: &EvalConfig,
) -> Result<RetrievalReport> {
    if query.is_empty() {
        return Err(GaitError::Empty("no query sequences".into()));
    }
    if gallery.is_empty() {
        return Err(GaitError::Empty("no gallery sequences".into()));
    }
    let results: Vec<(QueryResult, Vec<bool>)> = query
        .par_iter()
        .map(|q| {
            let pool: Vec<&EmbeddingRecord> = gallery
                .iter()
                .filter(|g| !(cfg.exclude_same_camera && g.camera_id == q.camera_id))
                .collect();
            if pool.is_empty() {
                let r = QueryResult {
                    query_id: q.sequence_id.clone(),
                    subject_id: q.subject_id,
                    top: Vec::new(),
                    ap: None,
                    inp: None,
                };
                return Ok((r, Vec::new()));
            }
            let embs: Vec<&PartEmbedding> = pool.iter().map(|g| &g.embedding).collect();
            let ranked = rank_gallery(&q.embedding, &embs)?;
            let rel: Vec<bool> = ranked.iter().map(|&(i, _)| pool[i].subject_id == q.subject_id).collect();
            let m = query_metrics(&rel);
            let r = QueryResult {
                query_id: q.sequence_id.clone(),
                subject_id: q.subject_id,
                top: ranked
                    .iter()
                    .take(TOP_K)
                    .map(|&(i, s)| (pool[i].sequence_id.clone(), s))
                    .collect(),
                ap: m.map(|x| x.0),
                inp: m.map(|x| x.1),
            };
            Ok((r, rel))
        })
        .collect::<Result<_>>()?;
    let (per_query, rankings): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let metrics = compute_metrics(&rankings);
    if metrics.skipped > 0 {
        log::warn!("{} queries have no gallery positive and were skipped", metrics.skipped);
    }
    Ok(RetrievalReport {
        metrics,
        gallery_size: gallery.len(),
        per_query,
    })
}

pub const EMBEDDINGS_MAGIC: &[u8; 8] = b"SGEMB001";

#[derive(Serialize, Deserialize)]
struct EmbeddingHeader {
    parts: usize,
    dim: usize,
    records: Vec<RecordMeta>,
}

#[derive(Serialize, Deserialize)]
struct RecordMeta {
    sequence_id: String,
    subject_id: u32,
    camera_id: u32,
    split: Split,
}

/// Embedding file: `"SGEMB001"`, u64 LE header length, JSON header (parts,
/// dim, per-record metadata), then every record's values as f64 LE.
pub fn embeddings_to_bytes(records: &[EmbeddingRecord]) -> Result<Vec<u8>> {
    let (parts, dim) = records
        .first()
        .map(|r| (r.embedding.parts, r.embedding.dim))
        .ok_or_else(|| GaitError::Empty("no embeddings to write".into()))?;
    if records.iter().any(|r| r.embedding.parts != parts || r.embedding.dim != dim) {
        return Err(GaitError::Shape("embeddings of mixed shapes".into()));
    }
    let header = EmbeddingHeader {
        parts,
        dim,
        records: records
            .iter()
            .map(|r| RecordMeta {
                sequence_id: r.sequence_id.clone(),
                subject_id: r.subject_id,
                camera_id: r.camera_id,
                split: r.split,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("embedding header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + records.len() * parts * dim * 8);
    out.extend_from_slice(EMBEDDINGS_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for r in records {
        for v in &r.embedding.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn embeddings_from_bytes(bytes: &[u8]) -> Result<Vec<EmbeddingRecord>> {
    let bad = |m: &str| GaitError::Data(format!("embedding file: {m}"));
    if bytes.len() < 16 || &bytes[..8] != EMBEDDINGS_MAGIC {
        return Err(bad("bad magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16usize.saturating_add(hlen)).ok_or_else(|| bad("truncated header"))?;
    let header: EmbeddingHeader =
        serde_json::from_slice(body).map_err(|e| GaitError::Data(format!("embedding file: {e}")))?;
    let len = header.parts * header.dim;
    let data = &bytes[16 + hlen..];
    if data.len() != header.records.len() * len * 8 {
        return Err(bad("value block does not match header"));
    }
    header
        .records
        .into_iter()
        .zip(data.chunks_exact((len * 8).max(1)))
        .map(|(m, chunk)| {
            let values = chunk
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(EmbeddingRecord {
                sequence_id: m.sequence_id,
                subject_id: m.subject_id,
                camera_id: m.camera_id,
                split: m.split,
                embedding: PartEmbedding::new(header.parts, header.dim, values)?,
            })
        })
        .collect()
}

pub fn save_embeddings(path: &Path, records: &[EmbeddingRecord]) -> Result<()> {
    let bytes = embeddings_to_bytes(records)?;
    let mut f = fs::File::create(path).map_err(|e| GaitError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| GaitError::io(path, e))
}

pub fn load_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let bytes = fs::read(path).map_err(|e| GaitError::io(path, e))?;
    embeddings_from_bytes(&bytes)
}

/// Splits records into (query, gallery) by their split tag.
pub fn partition(records: Vec<EmbeddingRecord>) -> (Vec<EmbeddingRecord>, Vec<EmbeddingRecord>) {
    let (q, rest): (Vec<_>, Vec<_>) = records.into_iter().partition(|r| r.split == Split::Query);
    (q, rest.into_iter().filter(|r| r.split == Split::Gallery).collect())
}
