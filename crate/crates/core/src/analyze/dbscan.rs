use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{sq_dist, AnalyzeError};
use crate::embed::LatentMatrix;

pub const NOISE: i64 = -1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabels {
    /// `-1` marks noise, clusters are numbered from 0 in discovery order.
    pub labels: Vec<i64>,
    pub eps: f64,
    pub min_pts: usize,
}

impl ClusterLabels {
    pub fn n_clusters(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize)
    }

    /// Row indices per cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_clusters()];
        for (i, &l) in self.labels.iter().enumerate() {
            if l >= 0 {
                out[l as usize].push(i);
            }
        }
        out
    }
}

/// Rows within `eps` of row `i` (inclusive, and including `i` itself), ascending.
fn region(m: &LatentMatrix, i: usize, eps2: f64) -> Vec<usize> {
    (0..m.n).filter(|&j| sq_dist(m.row(i), m.row(j)) <= eps2).collect()
}

/// Textbook DBSCAN. Points are visited in ascending row order and each
/// cluster grows breadth-first, so the partition is fully deterministic.
pub fn dbscan(m: &LatentMatrix, eps: f64, min_pts: usize) -> Result<ClusterLabels, AnalyzeError> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(AnalyzeError::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    if min_pts == 0 {
        return Err(AnalyzeError::InvalidParameter("min_pts must be at least 1".into()));
    }
    const UNSEEN: i64 = i64::MIN;
    let eps2 = eps * eps;
    let mut labels = vec![UNSEEN; m.n];
    let mut cluster = 0i64;
    for i in 0..m.n {
        if labels[i] != UNSEEN {
            continue;
        }
        let seeds = region(m, i, eps2);
        if seeds.len() < min_pts {
            labels[i] = NOISE;
            continue;
        }
        labels[i] = cluster;
        let mut queue: VecDeque<usize> = seeds.into();
        while let Some(q) = queue.pop_front() {
            if labels[q] == NOISE {
                labels[q] = cluster;
            }
            if labels[q] != UNSEEN {
                continue;
            }
            labels[q] = cluster;
            let next = region(m, q, eps2);
            if next.len() >= min_pts {
                queue.extend(next);
            }
        }
        cluster += 1;
    }
    Ok(ClusterLabels { labels, eps, min_pts })
}

/// Distance from every row to its k-th nearest other row, sorted ascending.
pub fn k_distances(m: &LatentMatrix, k: usize) -> Result<Vec<f64>, AnalyzeError> {
    use rayon::prelude::*;
    if k == 0 || k >= m.n {
        return Err(AnalyzeError::KTooLarge {
            k,
            available: m.n.saturating_sub(1),
        });
    }
    let mut out: Vec<f64> = (0..m.n)
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<f64> = (0..m.n).filter(|&j| j != i).map(|j| sq_dist(m.row(i), m.row(j))).collect();
            d.select_nth_unstable_by(k - 1, f64::total_cmp);
            d[k - 1].sqrt()
        })
        .collect();
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Knee of a sorted k-distance curve: the point farthest from the chord joining
/// its end points, both axes rescaled to [0, 1].
pub fn suggest_eps(sorted_k_dist: &[f64]) -> Option<f64> {
    let n = sorted_k_dist.len();
    let (first, last) = (*sorted_k_dist.first()?, *sorted_k_dist.last()?);
    if n < 3 || last <= first {
        return (last > 0.0).then_some(last);
    }
    let span = last - first;
    let best = (0..n)
        .map(|i| {
            let x = i as f64 / (n - 1) as f64;
            let y = (sorted_k_dist[i] - first) / span;
            (i, x - y)
        })
        .fold((0, f64::NEG_INFINITY), |acc, c| if c.1 > acc.1 { c } else { acc });
    Some(sorted_k_dist[best.0]).filter(|&e| e > 0.0).or(Some(last))
}
