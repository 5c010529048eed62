//! CSV exports keyed by series id.

use std::path::Path;

use super::{AnalyzeError, ClusterLabels, NeighborList};

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<(), AnalyzeError> {
    w.flush().map_err(|e| AnalyzeError::Io(path.to_path_buf(), e))
}

/// `series_id,cluster`
pub fn write_clusters_csv(ids: &[String], c: &ClusterLabels, path: &Path) -> Result<(), AnalyzeError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["series_id", "cluster"])?;
    for (id, l) in ids.iter().zip(&c.labels) {
        w.write_record([id.as_str(), &l.to_string()])?;
    }
    finish(w, path)
}

/// `query_id,rank,neighbor_id,distance`; vector queries get an empty query id.
pub fn write_neighbors_csv(lists: &[NeighborList], path: &Path) -> Result<(), AnalyzeError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["query_id", "rank", "neighbor_id", "distance"])?;
    for list in lists {
        for (rank, n) in list.neighbors.iter().enumerate() {
            w.write_record([
                list.query_id.as_deref().unwrap_or(""),
                &(rank + 1).to_string(),
                &n.id,
                &format!("{:?}", n.distance),
            ])?;
        }
    }
    finish(w, path)
}

/// `series_id,<column>` for one real value per row.
pub fn write_values_csv(ids: &[String], column: &str, values: &[f64], path: &Path) -> Result<(), AnalyzeError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["series_id", column])?;
    for (id, v) in ids.iter().zip(values) {
        w.write_record([id.as_str(), &format!("{v:?}")])?;
    }
    finish(w, path)
}
