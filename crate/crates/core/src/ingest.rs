//! Event series parsing, validation and dataset catalogs.
//!
//! An event file is a UTF-8 CSV with the header `time,energy` followed by one
//! `timestamp,modality` pair per line. A catalog is a JSON-lines file where each
//! line names a series id, the event file (relative to the catalog) and optional
//! labels.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: missing `time,energy` header")]
    MissingHeader { path: PathBuf },
    #[error("{path}: malformed row at line {line}")]
    MalformedRow { path: PathBuf, line: usize },
    #[error("{path}: no data rows")]
    EmptyFile { path: PathBuf },
    #[error("{path}: non-finite value at line {line}")]
    NonFiniteValue { path: PathBuf, line: usize },
    #[error("series {series_id}: modality value {value} at row {index} is not positive")]
    NonPositiveModality {
        series_id: String,
        index: usize,
        value: f64,
    },
    #[error("series {series_id}: {count} events, at least {min} required")]
    TooFewEvents {
        series_id: String,
        count: usize,
        min: usize,
    },
    #[error("series {series_id}: timestamps and modality lengths differ ({t} vs {e})")]
    LengthMismatch { series_id: String, t: usize, e: usize },
    #[error("catalog line {line}: duplicate series id {series_id}")]
    DuplicateSeriesId { series_id: String, line: usize },
    #[error("catalog line {line}: cannot resolve {path}")]
    UnresolvablePath { path: PathBuf, line: usize },
    #[error("catalog line {line}: {reason}")]
    MalformedEntry { line: usize, reason: String },
    #[error("catalog has {size} entries, at least 10 are needed to split")]
    TooSmall { size: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl IngestError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Externally supplied per-series labels.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Labels {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variability_index: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hardness_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_tag: Option<String>,
}

impl Labels {
    pub fn is_empty(&self) -> bool {
        self.variability_index.is_none() && self.hardness_ratio.is_none() && self.class_tag.is_none()
    }
}

/// One irregular sequence of `(timestamp, modality)` events.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSeries {
    pub series_id: String,
    pub timestamps: Vec<f64>,
    pub modality: Vec<f64>,
    pub labels: Labels,
}

impl EventSeries {
    pub fn new(series_id: impl Into<String>, timestamps: Vec<f64>, modality: Vec<f64>) -> Self {
        EventSeries {
            series_id: series_id.into(),
            timestamps,
            modality,
            labels: Labels::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// `t_N - t_1`; only meaningful on a validated (sorted) series.
    pub fn duration(&self) -> f64 {
        match (self.timestamps.first(), self.timestamps.last()) {
            (Some(first), Some(last)) => last - first,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationPolicy {
    pub min_events: usize,
    /// Reject non-positive modality values (required when a log transform is used).
    pub require_positive_modality: bool,
}

impl Default for ValidationPolicy {
    fn default() -> Self {
        ValidationPolicy {
            min_events: 2,
            require_positive_modality: true,
        }
    }
}

fn parse_field(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok()
}

/// Parse an event CSV from its textual contents. `path` is only used in errors.
pub fn parse_event_str(text: &str, path: &Path, series_id: &str) -> Result<EventSeries, IngestError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "time,energy" => {}
        _ => {
            return Err(IngestError::MissingHeader {
                path: path.to_path_buf(),
            })
        }
    }
    let mut timestamps = Vec::new();
    let mut modality = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (t, e) = match (fields.next(), fields.next(), fields.next()) {
            (Some(t), Some(e), None) => (parse_field(t), parse_field(e)),
            _ => (None, None),
        };
        let (t, e) = match (t, e) {
            (Some(t), Some(e)) => (t, e),
            _ => {
                return Err(IngestError::MalformedRow {
                    path: path.to_path_buf(),
                    line: line_no,
                })
            }
        };
        if !t.is_finite() || !e.is_finite() {
            return Err(IngestError::NonFiniteValue {
                path: path.to_path_buf(),
                line: line_no,
            });
        }
        timestamps.push(t);
        modality.push(e);
    }
    if timestamps.is_empty() {
        return Err(IngestError::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    Ok(EventSeries::new(series_id, timestamps, modality))
}

/// Read an event CSV. Rows are kept in file order; the series id is the file stem.
pub fn parse_event_csv(path: &Path) -> Result<EventSeries, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_event_str(&text, path, &id)
}

/// Render a series in the event CSV format. Floats use the shortest representation
/// that parses back to the same value.
pub fn format_event_csv(series: &EventSeries) -> String {
    let mut out = String::with_capacity(16 + series.len() * 24);
    out.push_str("time,energy\n");
    for (t, e) in series.timestamps.iter().zip(&series.modality) {
        let _ = writeln!(out, "{t:?},{e:?}");
    }
    out
}

pub fn write_event_csv(series: &EventSeries, path: &Path) -> Result<(), IngestError> {
    fs::write(path, format_event_csv(series)).map_err(|e| IngestError::io(path, e))
}

/// Sort by timestamp (stable, modality carried along) and check the policy.
/// Duplicate timestamps are kept.
pub fn validate_series(raw: EventSeries, policy: &ValidationPolicy) -> Result<EventSeries, IngestError> {
    if raw.timestamps.len() != raw.modality.len() {
        return Err(IngestError::LengthMismatch {
            series_id: raw.series_id,
            t: raw.timestamps.len(),
            e: raw.modality.len(),
        });
    }
    if raw.len() < policy.min_events.max(1) {
        return Err(IngestError::TooFewEvents {
            count: raw.len(),
            min: policy.min_events.max(1),
            series_id: raw.series_id,
        });
    }
    if policy.require_positive_modality {
        if let Some((index, &value)) = raw.modality.iter().enumerate().find(|(_, &e)| !(e > 0.0)) {
            return Err(IngestError::NonPositiveModality {
                series_id: raw.series_id,
                index,
                value,
            });
        }
    }
    let EventSeries {
        series_id,
        timestamps,
        modality,
        labels,
    } = raw;
    let mut pairs: Vec<(f64, f64)> = timestamps.into_iter().zip(modality).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (timestamps, modality) = pairs.into_iter().unzip();
    Ok(EventSeries {
        series_id,
        timestamps,
        modality,
        labels,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatalogEntry {
    pub series_id: String,
    pub file_path: PathBuf,
    pub labels: Labels,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Catalog {
    pub entries: Vec<CatalogEntry>,
    pub dataset_root: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogLine {
    series_id: String,
    file: String,
    #[serde(default, skip_serializing_if = "Labels::is_empty")]
    labels: Labels,
}

impl Catalog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.series_id.as_str())
    }

    fn subset(&self, entries: Vec<CatalogEntry>) -> Catalog {
        Catalog {
            entries,
            dataset_root: self.dataset_root.clone(),
        }
    }

    /// Load and validate every series in catalog order, in parallel. Labels from the
    /// catalog are attached to each series.
    pub fn load_series(&self, policy: &ValidationPolicy) -> Result<Vec<EventSeries>, IngestError> {
        use rayon::prelude::*;
        self.entries
            .par_iter()
            .map(|entry| {
                let mut s = parse_event_csv(&entry.file_path)?;
                s.series_id = entry.series_id.clone();
                s.labels = entry.labels.clone();
                validate_series(s, policy)
            })
            .collect()
    }
}

/// Parse a catalog from JSONL text; relative file paths resolve against `root`.
pub fn parse_catalog_str(text: &str, root: &Path) -> Result<Catalog, IngestError> {
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CatalogLine = serde_json::from_str(line).map_err(|e| IngestError::MalformedEntry {
            line: line_no,
            reason: e.to_string(),
        })?;
        if !seen.insert(parsed.series_id.clone()) {
            return Err(IngestError::DuplicateSeriesId {
                series_id: parsed.series_id,
                line: line_no,
            });
        }
        let candidate = root.join(&parsed.file);
        let file_path = candidate.canonicalize().map_err(|_| IngestError::UnresolvablePath {
            path: candidate.clone(),
            line: line_no,
        })?;
        entries.push(CatalogEntry {
            series_id: parsed.series_id,
            file_path,
            labels: parsed.labels,
        });
    }
    Ok(Catalog {
        entries,
        dataset_root: root.to_path_buf(),
    })
}

pub fn load_catalog(path: &Path) -> Result<Catalog, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let root = root.canonicalize().map_err(|e| IngestError::io(&root, e))?;
    parse_catalog_str(&text, &root)
}

/// Write a catalog as JSONL. File paths are written relative to the catalog's
/// directory when possible.
pub fn write_catalog(catalog: &Catalog, path: &Path) -> Result<(), IngestError> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let base = base.canonicalize().unwrap_or_else(|_| base.to_path_buf());
    let mut out = String::new();
    for entry in &catalog.entries {
        let file = entry
            .file_path
            .strip_prefix(&base)
            .unwrap_or(&entry.file_path)
            .to_string_lossy()
            .into_owned();
        let line = CatalogLine {
            series_id: entry.series_id.clone(),
            file,
            labels: entry.labels.clone(),
        };
        out.push_str(&serde_json::to_string(&line).expect("catalog line serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| IngestError::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatalogSplit {
    pub train: Catalog,
    pub val: Catalog,
    pub test: Catalog,
}

/// Sizes of the 90/10 then 80/20 split of `n` items, as `(train, val, test)`.
/// The fractional remainder goes to the larger side.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train_val = n * 9 / 10;
    let test = n - train_val;
    let train = train_val * 4 / 5;
    (train, train_val - train, test)
}

/// Seeded shuffle of `0..n` cut by [`split_sizes`] into `(train, val, test)`.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train_n, val_n, _) = split_sizes(n);
    let test = order.split_off(train_n + val_n);
    let val = order.split_off(train_n);
    (order, val, test)
}

/// Deterministic seeded shuffle, then 90/10 into train+val / test and 80/20 into
/// train / val.
pub fn split_catalog(cat: &Catalog, seed: u64) -> Result<CatalogSplit, IngestError> {
    if cat.len() < 10 {
        return Err(IngestError::TooSmall { size: cat.len() });
    }
    let (train, val, test) = split_indices(cat.len(), seed);
    let pick = |idx: &[usize]| idx.iter().map(|&i| cat.entries[i].clone()).collect::<Vec<_>>();
    Ok(CatalogSplit {
        train: cat.subset(pick(&train)),
        val: cat.subset(pick(&val)),
        test: cat.subset(pick(&test)),
    })
}
