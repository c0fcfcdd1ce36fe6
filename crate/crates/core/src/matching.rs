//! Correspondence data model, confidence thresholding, the matcher
//! abstraction over external feature pipelines, and file-based ingestion of
//! externally computed matches.
//!
//! Feature extraction and matching networks live behind the [`Matcher`]
//! trait; only thresholded correspondences with confidences cross the
//! boundary. Descriptors never do.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{Intrinsics, PixelPoint};
use crate::scalar::{cast, to_f64, Scalar};

/// Identifier of a rendered view: the reference or a candidate index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ViewId {
    Reference,
    Candidate(u32),
}

impl fmt::Display for ViewId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViewId::Reference => write!(f, "ref"),
            ViewId::Candidate(i) => write!(f, "c{i}"),
        }
    }
}

impl FromStr for ViewId {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        if s == "ref" {
            return Ok(ViewId::Reference);
        }
        if let Some(idx) = s.strip_prefix('c') {
            if !idx.is_empty() && idx.bytes().all(|b| b.is_ascii_digit()) {
                return Ok(ViewId::Candidate(idx.parse().map_err(|_| ())?));
            }
        }
        Err(())
    }
}

/// A weighted 2D-2D pixel match between the query view and one rendered view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchRecord<S: Scalar> {
    /// Matched point in the query image.
    pub query_point: PixelPoint<S>,
    /// Matched point in the rendered view.
    pub view_point: PixelPoint<S>,
    /// Assignment confidence in `[0, 1]`.
    pub confidence: S,
}

/// All matches between the query view and one rendered view.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet<S: Scalar> {
    pub view_id: ViewId,
    records: Vec<MatchRecord<S>>,
}

impl<S: Scalar> CorrespondenceSet<S> {
    /// Builds a set, dropping duplicate `(query_point, view_point)` pairs and
    /// keeping the highest-confidence record at the position of its first
    /// occurrence.
    pub fn new(view_id: ViewId, records: Vec<MatchRecord<S>>) -> Self {
        let mut seen: std::collections::HashMap<[u64; 4], usize> = std::collections::HashMap::new();
        let mut kept: Vec<MatchRecord<S>> = Vec::with_capacity(records.len());
        for rec in records {
            let key = [
                to_f64(rec.query_point.u).to_bits(),
                to_f64(rec.query_point.v).to_bits(),
                to_f64(rec.view_point.u).to_bits(),
                to_f64(rec.view_point.v).to_bits(),
            ];
            match seen.entry(key) {
                std::collections::hash_map::Entry::Occupied(e) => {
                    let at = *e.get();
                    if rec.confidence > kept[at].confidence {
                        kept[at] = rec;
                    }
                }
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(kept.len());
                    kept.push(rec);
                }
            }
        }
        CorrespondenceSet {
            view_id,
            records: kept,
        }
    }

    pub fn records(&self) -> &[MatchRecord<S>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of records whose points fall outside the image bounds of the
    /// query or the rendered view. Out-of-bounds points are a data-quality
    /// warning on ingest, not an error.
    pub fn out_of_bounds(&self, query: &Intrinsics<S>, view: &Intrinsics<S>) -> usize {
        self.records
            .iter()
            .filter(|r| !query.contains(&r.query_point) || !view.contains(&r.view_point))
            .count()
    }
}

/// Detection and matching thresholds of the external feature pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatcherConfig<S: Scalar> {
    /// Interest-point score threshold of the extractor.
    pub tau_detection: S,
    /// Confidence threshold applied to assignment scores.
    pub tau_matching: S,
}

impl<S: Scalar> Default for MatcherConfig<S> {
    fn default() -> Self {
        MatcherConfig {
            tau_detection: cast(0.005),
            tau_matching: cast(0.1),
        }
    }
}

/// Keeps exactly the records with confidence strictly greater than
/// `tau_matching`; order is preserved.
pub fn filter_matches<S: Scalar>(
    raw: &CorrespondenceSet<S>,
    cfg: &MatcherConfig<S>,
) -> CorrespondenceSet<S> {
    CorrespondenceSet {
        view_id: raw.view_id,
        records: raw
            .records
            .iter()
            .filter(|r| r.confidence > cfg.tau_matching)
            .copied()
            .collect(),
    }
}

/// Signal that a matcher implementation could not produce correspondences.
#[derive(Debug, Error)]
#[error("matching failed: {reason}")]
pub struct MatchFailure {
    pub reason: String,
}

impl MatchFailure {
    pub fn new(reason: impl Into<String>) -> Self {
        MatchFailure {
            reason: reason.into(),
        }
    }
}

/// Produces correspondences between the query view and a rendered view.
///
/// Implementations must satisfy the [`MatchRecord`] invariants and be safe to
/// call from concurrent benchmark workers.
pub trait Matcher<S: Scalar> {
    type View;
    fn match_views(
        &self,
        query: &Self::View,
        rendered: &Self::View,
    ) -> Result<CorrespondenceSet<S>, MatchFailure>;
}

#[derive(Debug, Error)]
pub enum MatchFileError {
    #[error("cannot read match file: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed match record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown view id {id:?} (expected \"ref\" or \"c<index>\")")]
    UnknownView { line: usize, id: String },
    #[error("line {line}: confidence {value} outside [0, 1]")]
    InvalidConfidence { line: usize, value: f64 },
}

/// One match per line; field order is fixed for byte-stable round trips.
#[derive(Debug, Serialize, Deserialize)]
struct MatchLine {
    view: String,
    qu: f64,
    qv: f64,
    ru: f64,
    rv: f64,
    conf: f64,
}

/// Loads externally computed matches from a JSON Lines file: one
/// correspondence set per distinct view id, records in file order.
pub fn load_matches<S: Scalar>(path: &Path) -> Result<Vec<CorrespondenceSet<S>>, MatchFileError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut order: Vec<ViewId> = Vec::new();
    let mut by_view: std::collections::HashMap<ViewId, Vec<MatchRecord<S>>> =
        std::collections::HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: MatchLine = serde_json::from_str(&line).map_err(|e| MatchFileError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let view_id: ViewId = parsed.view.parse().map_err(|_| MatchFileError::UnknownView {
            line: line_no,
            id: parsed.view.clone(),
        })?;
        if !(0.0..=1.0).contains(&parsed.conf) {
            return Err(MatchFileError::InvalidConfidence {
                line: line_no,
                value: parsed.conf,
            });
        }
        let rec = MatchRecord {
            query_point: PixelPoint::new(cast(parsed.qu), cast(parsed.qv)),
            view_point: PixelPoint::new(cast(parsed.ru), cast(parsed.rv)),
            confidence: cast(parsed.conf),
        };
        if !by_view.contains_key(&view_id) {
            order.push(view_id);
        }
        by_view.entry(view_id).or_default().push(rec);
    }
    Ok(order
        .into_iter()
        .map(|id| CorrespondenceSet::new(id, by_view.remove(&id).unwrap()))
        .collect())
}

/// Writes correspondence sets in the JSON Lines match-file format (UTF-8,
/// LF line endings). Inverse of [`load_matches`] for duplicate-free input.
pub fn save_matches<S: Scalar>(
    sets: &[CorrespondenceSet<S>],
    path: &Path,
) -> Result<(), MatchFileError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for set in sets {
        for rec in &set.records {
            let line = MatchLine {
                view: set.view_id.to_string(),
                qu: to_f64(rec.query_point.u),
                qv: to_f64(rec.query_point.v),
                ru: to_f64(rec.view_point.u),
                rv: to_f64(rec.view_point.v),
                conf: to_f64(rec.confidence),
            };
            let json = serde_json::to_string(&line).expect("match line serializes");
            out.write_all(json.as_bytes())?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}
