use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{sq_dist, AnalyzeError};

/// Sources with a variability index above this are treated as variable.
pub const VARIABILITY_THRESHOLD: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    /// `(class, F1)` for every class seen in either array, ascending.
    pub f1_per_class: Vec<(i64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub r2: f64,
    pub mse: f64,
}

fn check(pred_len: usize, truth_len: usize) -> Result<(), AnalyzeError> {
    if truth_len == 0 {
        return Err(AnalyzeError::EmptyInput);
    }
    if pred_len != truth_len {
        return Err(AnalyzeError::LengthMismatch(pred_len, truth_len));
    }
    Ok(())
}

pub fn classification_metrics(pred: &[i64], truth: &[i64]) -> Result<ClassificationMetrics, AnalyzeError> {
    check(pred.len(), truth.len())?;
    let correct = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    let classes: BTreeSet<i64> = pred.iter().chain(truth).copied().collect();
    let f1_per_class = classes
        .into_iter()
        .map(|c| {
            let tp = pred.iter().zip(truth).filter(|&(&p, &t)| p == c && t == c).count() as f64;
            let fp = pred.iter().zip(truth).filter(|&(&p, &t)| p == c && t != c).count() as f64;
            let fn_ = pred.iter().zip(truth).filter(|&(&p, &t)| p != c && t == c).count() as f64;
            (c, 2.0 * tp / (2.0 * tp + fp + fn_))
        })
        .collect();
    Ok(ClassificationMetrics {
        accuracy: correct as f64 / truth.len() as f64,
        f1_per_class,
    })
}

pub fn regression_metrics(pred: &[f64], truth: &[f64]) -> Result<RegressionMetrics, AnalyzeError> {
    check(pred.len(), truth.len())?;
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    if ss_tot == 0.0 {
        return Err(AnalyzeError::ConstantTruth);
    }
    Ok(RegressionMetrics {
        r2: 1.0 - ss_res / ss_tot,
        mse: ss_res / n,
    })
}

/// Mean silhouette over row-major `points` (n × d). Points in singleton
/// clusters contribute 0. Needs at least two clusters.
pub fn silhouette_score(points: &[f64], d: usize, labels: &[i64]) -> Result<f64, AnalyzeError> {
    let n = labels.len();
    check(points.len() / d.max(1), n)?;
    let clusters: Vec<i64> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if clusters.len() < 2 {
        return Err(AnalyzeError::DegenerateLabels("silhouette needs at least two clusters".into()));
    }
    let row = |i: usize| &points[i * d..(i + 1) * d];
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; clusters.len()];
        let mut counts = vec![0usize; clusters.len()];
        for j in 0..n {
            if i != j {
                let c = clusters.binary_search(&labels[j]).unwrap();
                sums[c] += sq_dist(row(i), row(j)).sqrt();
                counts[c] += 1;
            }
        }
        let own = clusters.binary_search(&labels[i]).unwrap();
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..clusters.len())
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let s = if a.max(b) > 0.0 { (b - a) / a.max(b) } else { 0.0 };
        total += s;
    }
    Ok(total / n as f64)
}

/// 1 for variability index strictly above the threshold, else 0.
pub fn threshold_variability(index: &[f64]) -> Result<Vec<u8>, AnalyzeError> {
    index
        .iter()
        .map(|&v| {
            if !(0.0..=10.0).contains(&v) {
                return Err(AnalyzeError::OutOfRange(v));
            }
            Ok(u8::from(v > VARIABILITY_THRESHOLD))
        })
        .collect()
}
