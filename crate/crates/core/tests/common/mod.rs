//! Independent oracles shared by the integration and acceptance suites.
#![allow(dead_code)]

use eventcube::sae::{loss, loss_gradients, ArchSpec, LayerSpec, Mode, SaeModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Objective evaluated with a train-mode (batch statistics) forward pass.
pub fn objective(model: &SaeModel, x: &[f64], batch: usize, lambda: f64) -> f64 {
    let pass = model.forward(x, batch, Mode::Train).unwrap();
    loss(x, &pass.recon, &pass.latent, batch, lambda).total
}

/// Gradient magnitudes below `GRAD_FLOOR * max(1, |loss|)` are compared
/// absolutely. Central differences carry about eps * |loss| / h of round-off,
/// which is all a structurally zero gradient (a bias feeding batch norm) measures.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Distance of the nearest non-differentiable point from the current parameters:
/// the smallest |pre-activation| of any leaky ReLU and, when the L1 term is on,
/// the smallest |latent|.
pub fn kink_margin(model: &SaeModel, x: &[f64], batch: usize, lambda: f64) -> f64 {
    let pass = model.forward(x, batch, Mode::Train).unwrap();
    let slope = model.arch.leaky_slope;
    let mut margin = f64::INFINITY;
    for out in pass.cache.as_ref().unwrap().activations() {
        for &v in out {
            margin = margin.min(if v < 0.0 { -v / slope } else { v });
        }
    }
    if lambda > 0.0 {
        margin = pass.latent.iter().fold(margin, |m, z| m.min(z.abs()));
    }
    margin
}

/// Finite differences straddling a kink measure an average of two slopes, not
/// the gradient. Cases closer than this to a kink are redrawn.
pub const KINK_MARGIN: f64 = 1e-3;

/// A jittered model and inputs whose forward pass stays `KINK_MARGIN` away from
/// every kink; returns the number of redraws needed.
pub fn smooth_case(rng: &mut ChaCha8Rng, arch: &ArchSpec, seed: u64, batch: usize, lambda: f64) -> (SaeModel, Vec<f64>, usize) {
    for redraws in 0.. {
        let mut model = eventcube::sae::init_model(arch, seed).unwrap();
        jitter(&mut model, rng);
        let x = random_inputs(rng, batch * arch.input_size());
        if kink_margin(&model, &x, batch, lambda) >= KINK_MARGIN {
            return (model, x, redraws);
        }
    }
    unreachable!()
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Compare analytic gradients against central finite differences over every
/// parameter of `model`.
pub fn gradient_check(model: &SaeModel, x: &[f64], batch: usize, lambda: f64, h: f64) -> GradCheck {
    let pass = model.forward(x, batch, Mode::Train).unwrap();
    let (dr, dz) = loss_gradients(x, &pass.recon, &pass.latent, batch, lambda);
    let analytic = model.backward(pass.cache.as_ref().unwrap(), dr, &dz);
    let floor = GRAD_FLOOR * objective(model, x, batch, lambda).abs().max(1.0);
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    let mut checked = 0;
    let n_tensors = model.params().len();
    for t in 0..n_tensors {
        let len = model.params()[t].len();
        for i in 0..len {
            let orig = probe.params()[t][i];
            probe.params_mut()[t][i] = orig + h;
            let up = objective(&probe, x, batch, lambda);
            probe.params_mut()[t][i] = orig - h;
            let down = objective(&probe, x, batch, lambda);
            probe.params_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.0[t][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    GradCheck {
        max_rel_error: worst,
        checked,
    }
}

/// Random small architecture: dense (map or cube input) or convolutional.
pub fn random_arch(rng: &mut ChaCha8Rng, conv: bool, batchnorm: bool) -> ArchSpec {
    if conv {
        let h = rng.gen_range(4..=6);
        let w = rng.gen_range(4..=6);
        let mut layers = vec![LayerSpec::Conv2d {
            filters: rng.gen_range(1..=3),
            kernel: (rng.gen_range(1..=3), rng.gen_range(1..=3)),
            stride: 1,
        }];
        if rng.gen_bool(0.5) {
            layers.push(LayerSpec::Conv2d {
                filters: rng.gen_range(1..=3),
                kernel: (2, 2),
                stride: 2,
            });
        }
        let d = rng.gen_range(1..=3);
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::Dense { units: d });
        ArchSpec {
            input_dims: vec![h, w],
            layers,
            bottleneck_dim: d,
            leaky_slope: 0.01,
            batchnorm_momentum: 0.9,
            batchnorm,
        }
    } else {
        let input_dims = if rng.gen_bool(0.5) {
            vec![rng.gen_range(2..=4), rng.gen_range(2..=3)]
        } else {
            vec![2, rng.gen_range(2..=3), 2]
        };
        let mut layers = vec![LayerSpec::Flatten];
        for _ in 0..rng.gen_range(1..=2) {
            layers.push(LayerSpec::Dense {
                units: rng.gen_range(2..=6),
            });
        }
        let d = rng.gen_range(1..=4);
        layers.push(LayerSpec::Dense { units: d });
        ArchSpec {
            input_dims,
            layers,
            bottleneck_dim: d,
            leaky_slope: 0.01,
            batchnorm_momentum: 0.9,
            batchnorm,
        }
    }
}

pub fn random_inputs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Move every parameter off its initial value. Freshly initialized biases are
/// exactly zero, which puts units that see only a bias (e.g. grid cells a
/// strided transposed convolution never covers) on the leaky-ReLU kink, where
/// central differences average the two slopes.
pub fn jitter(model: &mut SaeModel, rng: &mut ChaCha8Rng) {
    for p in model.params_mut() {
        for v in p.iter_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
}

/// Per-event (tau, eps, dtau) coordinates on the unit axes, written straight
/// from the binning definitions. `bounds` is `None` for per-series bounds.
pub fn brute_coordinates(t: &[f64], e: &[f64], log10: bool, bounds: Option<(f64, f64)>) -> Vec<[f64; 3]> {
    let n = t.len();
    let big_t = t[n - 1] - t[0];
    let f: Vec<f64> = e.iter().map(|&v| if log10 { v.log10() } else { v }).collect();
    let (lo, hi) = bounds.unwrap_or_else(|| {
        (
            f.iter().copied().fold(f64::INFINITY, f64::min),
            f.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    });
    let gaps: Vec<f64> = (1..n).map(|k| t[k] - t[k - 1]).collect();
    let gmin = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    let gmax = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let gap_coord = |g: f64| if gmax > gmin { (g - gmin) / (gmax - gmin) } else { 0.0 };
    (0..n)
        .map(|k| {
            let tau = if big_t > 0.0 { (t[k] - t[0]) / big_t } else { 0.0 };
            let eps = if hi > lo { ((f[k] - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
            let dtau = match n {
                1 => 0.0,
                _ => gap_coord(gaps[k.saturating_sub(1)]),
            };
            [tau, eps, dtau]
        })
        .collect()
}

fn brute_bin(x: f64, n: usize) -> usize {
    ((x * n as f64).floor() as usize).min(n - 1)
}

/// Raw counts by looping over every cell and every event.
pub fn brute_counts(coords: &[[f64; 3]], dims: [usize; 3]) -> Vec<u32> {
    let mut out = Vec::with_capacity(dims.iter().product());
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for l in 0..dims[2] {
                let c = coords
                    .iter()
                    .filter(|p| brute_bin(p[0], dims[0]) == i && brute_bin(p[1], dims[1]) == j && brute_bin(p[2], dims[2]) == l)
                    .count();
                out.push(c as u32);
            }
        }
    }
    out
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// DBSCAN from its graph characterization: clusters are connected components of
/// core points, numbered by their smallest core index; a border point joins the
/// lowest-numbered cluster holding a core point within `eps`; the rest is noise.
pub fn brute_dbscan(rows: &[f64], d: usize, eps: f64, min_pts: usize) -> Vec<i64> {
    let n = rows.len() / d;
    let row = |i: usize| &rows[i * d..(i + 1) * d];
    let near = |i: usize, j: usize| dist2(row(i), row(j)) <= eps * eps;
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
    let mut comp = vec![usize::MAX; n];
    for i in 0..n {
        if !core[i] || comp[i] != usize::MAX {
            continue;
        }
        let mut stack = vec![i];
        comp[i] = i;
        while let Some(p) = stack.pop() {
            for q in 0..n {
                if core[q] && comp[q] == usize::MAX && near(p, q) {
                    comp[q] = i;
                    stack.push(q);
                }
            }
        }
    }
    let mut roots: Vec<usize> = comp.iter().copied().filter(|&c| c != usize::MAX).collect();
    roots.sort_unstable();
    roots.dedup();
    let number = |root: usize| roots.binary_search(&root).unwrap() as i64;
    (0..n)
        .map(|i| {
            if core[i] {
                number(comp[i])
            } else {
                (0..n)
                    .filter(|&j| core[j] && near(i, j))
                    .map(|j| number(comp[j]))
                    .min()
                    .unwrap_or(-1)
            }
        })
        .collect()
}

/// Exhaustive k nearest rows as (index, distance), ties to the lower index.
pub fn brute_knn(rows: &[f64], d: usize, query: &[f64], skip: Option<usize>, k: usize) -> Vec<(usize, f64)> {
    let n = rows.len() / d;
    let mut all: Vec<(f64, usize)> = (0..n)
        .filter(|&j| Some(j) != skip)
        .map(|j| (dist2(query, &rows[j * d..(j + 1) * d]), j))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.truncate(k);
    all.into_iter().map(|(d2, j)| (j, d2.sqrt())).collect()
}

/// Mean silhouette of 2D points under integer labels.
pub fn brute_silhouette(points: &[[f64; 2]], labels: &[i64]) -> f64 {
    let n = points.len();
    let dist = |i: usize, j: usize| ((points[i][0] - points[j][0]).powi(2) + (points[i][1] - points[j][1]).powi(2)).sqrt();
    let mean_to = |i: usize, c: i64| {
        let others: Vec<f64> = (0..n).filter(|&j| j != i && labels[j] == c).map(|j| dist(i, j)).collect();
        others.iter().sum::<f64>() / others.len() as f64
    };
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let total: f64 = (0..n)
        .map(|i| {
            let a = mean_to(i, labels[i]);
            let b = classes
                .iter()
                .filter(|&&c| c != labels[i])
                .map(|&c| mean_to(i, c))
                .fold(f64::INFINITY, f64::min);
            (b - a) / a.max(b)
        })
        .sum();
    total / n as f64
}

/// Two isotropic Gaussian blobs in `d` dimensions, centers `sep` apart on every axis.
pub fn two_blobs(rng: &mut ChaCha8Rng, per_blob: usize, d: usize, sep: f64) -> (Vec<f64>, Vec<i64>) {
    let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for blob in 0..2 {
        for _ in 0..per_blob {
            rows.extend((0..d).map(|_| rng.sample(normal) + blob as f64 * sep));
            labels.push(blob as i64);
        }
    }
    (rows, labels)
}
