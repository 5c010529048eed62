//! Exact t-SNE: perplexity-calibrated Gaussian affinities in latent space,
//! Student-t affinities in the plane, gradient descent on KL(P || Q) with
//! momentum, per-coordinate gains and early exaggeration.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::latents::LatentMatrix;
use super::EmbedError;
use crate::ingest::Labels;

const ENTROPY_TOLERANCE_BITS: f64 = 1e-5;
const MAX_SEARCH_STEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch_iter: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub init_sigma: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch_iter: 250,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            init_sigma: 1e-4,
            seed: 0,
        }
    }
}

/// Conditional distribution of one row after the precision search.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub probabilities: Vec<f64>,
    pub beta: f64,
    /// `2^H` of the returned distribution.
    pub perplexity: f64,
    /// False when the search hit its step limit; the best precision found is kept.
    pub converged: bool,
}

fn row_distribution(sq_dist: &[f64], self_index: usize, beta: f64, shift: f64) -> (Vec<f64>, f64) {
    let mut p: Vec<f64> = sq_dist
        .iter()
        .enumerate()
        .map(|(j, &d)| if j == self_index { 0.0 } else { (-beta * (d - shift)).exp() })
        .collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    let entropy_nats: f64 = -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>();
    (p, entropy_nats / std::f64::consts::LN_2)
}

/// Binary search on the Gaussian precision so that the row's perplexity matches
/// `target`. `sq_dist` holds squared distances from point `self_index` to every point.
pub fn perplexity_calibration(sq_dist: &[f64], self_index: usize, target: f64) -> Result<Calibration, EmbedError> {
    if !(target > 0.0) {
        return Err(EmbedError::InvalidPerplexity(target));
    }
    let n = sq_dist.len();
    if n < 2 || self_index >= n {
        return Err(EmbedError::TooFewPoints { n, min: 2 });
    }
    if n == 2 {
        let mut probabilities = vec![0.0; 2];
        probabilities[1 - self_index] = 1.0;
        return Ok(Calibration {
            probabilities,
            beta: 1.0,
            perplexity: 1.0,
            converged: true,
        });
    }
    let others = || sq_dist.iter().enumerate().filter(|&(j, _)| j != self_index).map(|(_, &d)| d);
    // Shifting by the nearest distance leaves the distribution unchanged and
    // keeps the largest weight at exp(0).
    let shift = others().fold(f64::INFINITY, f64::min);
    let mean = others().map(|d| d - shift).sum::<f64>() / (n - 1) as f64;
    let target_bits = target.log2();
    let mut beta = if mean > 0.0 { 1.0 / mean } else { 1.0 };
    let (mut lo, mut hi) = (None::<f64>, None::<f64>);
    let mut best: Option<(f64, f64, Vec<f64>, f64)> = None;
    for _ in 0..MAX_SEARCH_STEPS {
        let (p, h_bits) = row_distribution(sq_dist, self_index, beta, shift);
        let diff = h_bits - target_bits;
        if best.as_ref().map_or(true, |b| diff.abs() < b.0) {
            best = Some((diff.abs(), beta, p, h_bits));
        }
        if diff.abs() < ENTROPY_TOLERANCE_BITS {
            break;
        }
        if diff > 0.0 {
            lo = Some(beta);
            beta = hi.map_or(beta * 2.0, |h| (beta + h) / 2.0);
        } else {
            hi = Some(beta);
            beta = lo.map_or(beta / 2.0, |l| (beta + l) / 2.0);
        }
    }
    let (err, beta, probabilities, h_bits) = best.expect("at least one search step");
    Ok(Calibration {
        probabilities,
        beta,
        perplexity: h_bits.exp2(),
        converged: err < ENTROPY_TOLERANCE_BITS,
    })
}

pub fn squared_distances(m: &LatentMatrix) -> Vec<f64> {
    let n = m.n;
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = m.row(i).iter().zip(m.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            out[i * n + j] = d;
            out[j * n + i] = d;
        }
    }
    out
}

/// Symmetrized joint affinities `(P_{j|i} + P_{i|j}) / 2n`, renormalized to sum
/// to one. Returns the matrix and the number of rows whose search did not converge.
pub fn joint_probabilities(m: &LatentMatrix, perplexity: f64) -> Result<(Vec<f64>, usize), EmbedError> {
    use rayon::prelude::*;
    let n = m.n;
    let dist = squared_distances(m);
    let rows = (0..n)
        .into_par_iter()
        .map(|i| perplexity_calibration(&dist[i * n..(i + 1) * n], i, perplexity))
        .collect::<Result<Vec<_>, _>>()?;
    let unconverged = rows.iter().filter(|c| !c.converged).count();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = (rows[i].probabilities[j] + rows[j].probabilities[i]) / (2.0 * n as f64);
            }
        }
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    Ok((p, unconverged))
}

/// Student-t affinities of 2D points, normalized to sum to one, with the
/// unnormalized kernel values `1 / (1 + |y_i - y_j|^2)`.
pub fn student_t_affinities(points: &[[f64; 2]]) -> (Vec<f64>, Vec<f64>) {
    let n = points.len();
    let mut num = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let dx = points[i][0] - points[j][0];
            let dy = points[i][1] - points[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
        }
    }
    let total: f64 = num.iter().sum();
    let q = num.iter().map(|v| v / total).collect();
    (q, num)
}

/// `KL(P || Q)`, skipping zero entries of `P`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pv, _)| pv > 0.0)
        .map(|(&pv, &qv)| pv * (pv / qv.max(f64::MIN_POSITIVE)).ln())
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding2D {
    pub points: Vec<[f64; 2]>,
    pub ids: Vec<String>,
    pub labels: Vec<Labels>,
    /// KL(P || Q) after every iteration, without exaggeration.
    pub kl_history: Vec<f64>,
    pub unconverged_rows: usize,
}

pub fn tsne_project(m: &LatentMatrix, cfg: &TsneConfig) -> Result<Embedding2D, EmbedError> {
    let n = m.n;
    if n < 5 {
        return Err(EmbedError::TooFewPoints { n, min: 5 });
    }
    if cfg.perplexity >= (n as f64 - 1.0) / 3.0 {
        log::warn!(
            "perplexity {} is large for {n} points; (n - 1) / 3 = {:.1}",
            cfg.perplexity,
            (n as f64 - 1.0) / 3.0
        );
    }
    let (p, unconverged_rows) = joint_probabilities(m, cfg.perplexity)?;
    if unconverged_rows > 0 {
        log::warn!("perplexity search did not converge for {unconverged_rows} of {n} rows");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, cfg.init_sigma).map_err(|e| EmbedError::InvalidConfig(e.to_string()))?;
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut kl_history = Vec::with_capacity(cfg.iterations);

    for iter in 0..cfg.iterations {
        let exaggeration = if iter < cfg.exaggeration_iters {
            cfg.early_exaggeration
        } else {
            1.0
        };
        let momentum = if iter < cfg.momentum_switch_iter {
            cfg.initial_momentum
        } else {
            cfg.final_momentum
        };
        let (q, num) = student_t_affinities(&y);
        for i in 0..n {
            let mut grad = [0.0; 2];
            for j in 0..n {
                let k = i * n + j;
                let coeff = 4.0 * (exaggeration * p[k] - q[k]) * num[k];
                grad[0] += coeff * (y[i][0] - y[j][0]);
                grad[1] += coeff * (y[i][1] - y[j][1]);
            }
            for a in 0..2 {
                gains[i][a] = if (grad[a] > 0.0) != (update[i][a] > 0.0) {
                    gains[i][a] + 0.2
                } else {
                    (gains[i][a] * 0.8).max(0.01)
                };
                update[i][a] = momentum * update[i][a] - cfg.learning_rate * gains[i][a] * grad[a];
            }
        }
        for (yi, u) in y.iter_mut().zip(&update) {
            yi[0] += u[0];
            yi[1] += u[1];
        }
        let mean = y.iter().fold([0.0; 2], |acc, v| [acc[0] + v[0], acc[1] + v[1]]);
        for yi in &mut y {
            yi[0] -= mean[0] / n as f64;
            yi[1] -= mean[1] / n as f64;
        }
        let (q, _) = student_t_affinities(&y);
        let kl = kl_divergence(&p, &q);
        if !kl.is_finite() || y.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        kl_history.push(kl);
    }
    Ok(Embedding2D {
        points: y,
        ids: m.ids.clone(),
        labels: m.labels.clone(),
        kl_history,
        unconverged_rows,
    })
}

/// `series_id,x,y,variability_index,hardness_ratio,class_tag`, plus an
/// optional extra integer column such as cluster labels.
pub fn write_embedding_csv(e: &Embedding2D, extra: Option<(&str, &[i64])>, path: &Path) -> Result<(), EmbedError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["series_id", "x", "y", "variability_index", "hardness_ratio", "class_tag"];
    if let Some((name, _)) = extra {
        header.push(name);
    }
    w.write_record(&header)?;
    for (i, p) in e.points.iter().enumerate() {
        let l = &e.labels[i];
        let mut rec = vec![
            e.ids[i].clone(),
            format!("{:?}", p[0]),
            format!("{:?}", p[1]),
            l.variability_index.map(|v| format!("{v:?}")).unwrap_or_default(),
            l.hardness_ratio.map(|v| format!("{v:?}")).unwrap_or_default(),
            l.class_tag.clone().unwrap_or_default(),
        ];
        if let Some((_, values)) = extra {
            rec.push(values[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|err| EmbedError::Io(path.to_path_buf(), err))?;
    Ok(())
}

/// Read an embedding CSV written by [`write_embedding_csv`]. Extra integer
/// columns are ignored; the KL history is not stored and comes back empty.
pub fn read_embedding_csv(path: &Path) -> Result<Embedding2D, EmbedError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (Some(id_col), Some(x_col), Some(y_col)) = (col("series_id"), col("x"), col("y")) else {
        return Err(EmbedError::Malformed("embedding needs series_id, x and y columns".into()));
    };
    let mut e = Embedding2D {
        points: Vec::new(),
        ids: Vec::new(),
        labels: Vec::new(),
        kl_history: Vec::new(),
        unconverged_rows: 0,
    };
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let num = |c: usize| -> Result<f64, EmbedError> {
            let cell = rec.get(c).unwrap_or_default();
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| EmbedError::Malformed(format!("line {line}: bad number {cell:?}")))
        };
        let opt = |name: &str| -> Result<Option<f64>, EmbedError> {
            match col(name).and_then(|c| rec.get(c)).filter(|c| !c.is_empty()) {
                None => Ok(None),
                Some(cell) => cell
                    .parse()
                    .map(Some)
                    .map_err(|_| EmbedError::Malformed(format!("line {line}: bad {name} {cell:?}"))),
            }
        };
        e.points.push([num(x_col)?, num(y_col)?]);
        e.ids.push(rec.get(id_col).unwrap_or_default().to_string());
        e.labels.push(Labels {
            variability_index: opt("variability_index")?,
            hardness_ratio: opt("hardness_ratio")?,
            class_tag: col("class_tag")
                .and_then(|c| rec.get(c))
                .filter(|c| !c.is_empty())
                .map(str::to_string),
        });
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn embedding_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        let e = Embedding2D {
            points: vec![[0.5, -1.25], [3.0, 1e-7]],
            ids: vec!["a".into(), "b".into()],
            labels: vec![
                Labels {
                    variability_index: Some(8.0),
                    hardness_ratio: None,
                    class_tag: Some("dip".into()),
                },
                Labels::default(),
            ],
            kl_history: vec![],
            unconverged_rows: 0,
        };
        write_embedding_csv(&e, Some(("cluster", &[0, -1])), &path).unwrap();
        assert_eq!(read_embedding_csv(&path).unwrap(), e);
    }

    #[test]
    fn two_points_need_no_search() {
        let c = perplexity_calibration(&[0.0, 4.0], 0, 30.0).unwrap();
        assert_eq!(c.probabilities, vec![0.0, 1.0]);
    }

    #[test]
    fn equidistant_rows_are_uniform() {
        let row = [0.0, 2.0, 2.0, 2.0, 2.0];
        let c = perplexity_calibration(&row, 0, 4.0).unwrap();
        assert!(c.converged);
        assert!(c.probabilities[1..].iter().all(|&p| (p - 0.25).abs() < 1e-15));
        let off = perplexity_calibration(&row, 0, 2.0).unwrap();
        assert!(!off.converged);
        assert!(off.probabilities[1..].iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn random_row_hits_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let row: Vec<f64> = (0..10).map(|i| if i == 3 { 0.0 } else { rng.gen_range(0.1..20.0) }).collect();
        let c = perplexity_calibration(&row, 3, 5.0).unwrap();
        assert!(c.converged);
        assert_eq!(c.probabilities[3], 0.0);
        // Independent entropy evaluation of the returned distribution.
        let h: f64 = -c.probabilities.iter().filter(|&&p| p > 0.0).map(|p| p * p.log2()).sum::<f64>();
        assert!((h.exp2() - 5.0).abs() < 1e-4);
        assert!((c.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_perplexity() {
        assert!(matches!(
            perplexity_calibration(&[0.0, 1.0, 2.0], 0, 0.0),
            Err(EmbedError::InvalidPerplexity(_))
        ));
    }

    #[test]
    fn identical_rows_stay_finite() {
        let m = LatentMatrix::from_rows(vec![1.0; 5 * 3], 3).unwrap();
        let cfg = TsneConfig {
            perplexity: 2.0,
            iterations: 100,
            ..Default::default()
        };
        let e = tsne_project(&m, &cfg).unwrap();
        assert!(e.points.iter().all(|p| p[0].is_finite() && p[1].is_finite()));
        assert!(matches!(
            tsne_project(&LatentMatrix::from_rows(vec![0.0; 4], 1).unwrap(), &cfg),
            Err(EmbedError::TooFewPoints { n: 4, .. })
        ));
    }
}
