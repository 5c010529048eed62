use serde::{Deserialize, Serialize};

use super::{sq_dist, AnalyzeError};
use crate::embed::LatentMatrix;

#[derive(Debug, Clone, Copy)]
pub enum Query<'a> {
    /// A row of the matrix; that row is excluded from the answer.
    Id(&'a str),
    Vector(&'a [f64]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub index: usize,
    pub id: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborList {
    pub query_id: Option<String>,
    pub neighbors: Vec<Neighbor>,
}

fn nearest(m: &LatentMatrix, q: &[f64], skip: Option<usize>, k: usize) -> Vec<(f64, usize)> {
    let mut d: Vec<(f64, usize)> = (0..m.n)
        .filter(|&j| Some(j) != skip)
        .map(|j| (sq_dist(q, m.row(j)), j))
        .collect();
    let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < d.len() {
        d.select_nth_unstable_by(k, by);
        d.truncate(k);
    }
    d.sort_by(by);
    d
}

/// Exact Euclidean k nearest rows; ties go to the lower row index.
pub fn knn_query(m: &LatentMatrix, query: Query<'_>, k: usize) -> Result<NeighborList, AnalyzeError> {
    let (vector, skip, query_id) = match query {
        Query::Id(id) => {
            let i = m.index_of(id).ok_or_else(|| AnalyzeError::UnknownId(id.to_string()))?;
            (m.row(i), Some(i), Some(id.to_string()))
        }
        Query::Vector(v) => {
            if v.len() != m.d {
                return Err(AnalyzeError::DimMismatch {
                    expected: m.d,
                    found: v.len(),
                });
            }
            (v, None, None)
        }
    };
    let available = m.n - usize::from(skip.is_some());
    if k == 0 || k > available {
        return Err(AnalyzeError::KTooLarge { k, available });
    }
    let neighbors = nearest(m, vector, skip, k)
        .into_iter()
        .map(|(d2, j)| Neighbor {
            index: j,
            id: m.ids[j].clone(),
            distance: d2.sqrt(),
        })
        .collect();
    Ok(NeighborList { query_id, neighbors })
}

/// Mean distance to the k nearest other rows; larger is more isolated.
pub fn anomaly_scores(m: &LatentMatrix, k: usize) -> Result<Vec<f64>, AnalyzeError> {
    use rayon::prelude::*;
    let available = m.n.saturating_sub(1);
    if k == 0 || k > available {
        return Err(AnalyzeError::KTooLarge { k, available });
    }
    Ok((0..m.n)
        .into_par_iter()
        .map(|i| nearest(m, m.row(i), Some(i), k).iter().map(|(d2, _)| d2.sqrt()).sum::<f64>() / k as f64)
        .collect())
}
