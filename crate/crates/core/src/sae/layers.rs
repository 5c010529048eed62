//! Layer kernels: forward passes with caches and exact backward passes.
//!
//! Activations are flat row-major `[batch, features]` buffers. Grid activations
//! store each sample as height x width x channels with channels fastest, so a
//! flatten is a no-op on memory.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arch::{PlannedLayer, Shape};
use super::linalg::{add_row_bias, column_sums, gemm};

pub const BN_EPSILON: f64 = 1e-5;

/// Geometry of a convolution from a large grid (`h x w x c`) to a small grid
/// (`oh x ow`), shared by convolutions and their transposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub oh: usize,
    pub ow: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_t: usize,
    pub pad_l: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.kh * self.kw * self.c
    }

    fn source(&self, o: usize, k: usize, pad: usize, limit: usize) -> Option<usize> {
        (o * self.stride + k).checked_sub(pad).filter(|&i| i < limit)
    }

    /// Unfold `[batch, h, w, c]` into `[batch * oh * ow, kh * kw * c]` patches.
    pub fn im2col(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let patch = self.patch();
        let mut cols = vec![0.0; batch * self.oh * self.ow * patch];
        let sample = self.h * self.w * self.c;
        for b in 0..batch {
            let xs = &x[b * sample..(b + 1) * sample];
            for oy in 0..self.oh {
                for ox in 0..self.ow {
                    let row = ((b * self.oh + oy) * self.ow + ox) * patch;
                    for ky in 0..self.kh {
                        let Some(iy) = self.source(oy, ky, self.pad_t, self.h) else { continue };
                        for kx in 0..self.kw {
                            let Some(ix) = self.source(ox, kx, self.pad_l, self.w) else { continue };
                            let src = (iy * self.w + ix) * self.c;
                            let dst = row + (ky * self.kw + kx) * self.c;
                            cols[dst..dst + self.c].copy_from_slice(&xs[src..src + self.c]);
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`im2col`](Self::im2col): scatter-add patches back onto the grid.
    pub fn col2im(&self, cols: &[f64], batch: usize) -> Vec<f64> {
        let patch = self.patch();
        let sample = self.h * self.w * self.c;
        let mut x = vec![0.0; batch * sample];
        for b in 0..batch {
            let xs = &mut x[b * sample..(b + 1) * sample];
            for oy in 0..self.oh {
                for ox in 0..self.ow {
                    let row = ((b * self.oh + oy) * self.ow + ox) * patch;
                    for ky in 0..self.kh {
                        let Some(iy) = self.source(oy, ky, self.pad_t, self.h) else { continue };
                        for kx in 0..self.kw {
                            let Some(ix) = self.source(ox, kx, self.pad_l, self.w) else { continue };
                            let dst = (iy * self.w + ix) * self.c;
                            let src = row + (ky * self.kw + kx) * self.c;
                            xs[dst..dst + self.c]
                                .iter_mut()
                                .zip(&cols[src..src + self.c])
                                .for_each(|(d, s)| *d += s);
                        }
                    }
                }
            }
        }
        x
    }
}

fn grid(shape: Shape) -> (usize, usize, usize) {
    match shape {
        Shape::Grid { h, w, c } => (h, w, c),
        other => panic!("expected grid shape, got {other:?}"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinearKind {
    Dense,
    Conv,
    ConvTranspose,
}

/// Dense, convolution or transposed-convolution layer.
///
/// Weight layouts: dense `[n_in, n_out]`; conv `[kh * kw * c_in, c_out]`;
/// transposed conv `[c_in, kh * kw * c_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub kind: LinearKind,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub n_in: usize,
    pub n_out: usize,
    pub geom: Option<ConvGeom>,
}

impl Linear {
    pub fn from_plan(planned: &PlannedLayer) -> Self {
        let (w, b) = planned.param_counts();
        let (kind, geom) = match *planned {
            PlannedLayer::Dense { .. } => (LinearKind::Dense, None),
            PlannedLayer::Conv {
                input,
                output,
                kernel,
                stride,
                pad,
            } => {
                let (h, wd, c) = grid(input);
                let (oh, ow, _) = grid(output);
                let geom = ConvGeom {
                    h,
                    w: wd,
                    c,
                    oh,
                    ow,
                    kh: kernel.0,
                    kw: kernel.1,
                    stride,
                    pad_t: pad.0,
                    pad_l: pad.1,
                };
                (LinearKind::Conv, Some(geom))
            }
            PlannedLayer::ConvTranspose {
                input,
                output,
                kernel,
                stride,
                pad,
            } => {
                let (h, wd, c) = grid(output);
                let (oh, ow, _) = grid(input);
                let geom = ConvGeom {
                    h,
                    w: wd,
                    c,
                    oh,
                    ow,
                    kh: kernel.0,
                    kw: kernel.1,
                    stride,
                    pad_t: pad.0,
                    pad_l: pad.1,
                };
                (LinearKind::ConvTranspose, Some(geom))
            }
        };
        Linear {
            kind,
            weight: vec![0.0; w],
            bias: vec![0.0; b],
            n_in: planned.input().size(),
            n_out: planned.output().size(),
            geom,
        }
    }

    /// Inputs feeding each output unit, used to scale initialization.
    pub fn fan_in(&self) -> usize {
        match (self.kind, self.geom) {
            (LinearKind::Dense, _) => self.n_in,
            (LinearKind::Conv, Some(g)) => g.kh * g.kw * g.c,
            (LinearKind::ConvTranspose, Some(g)) => {
                let c_in = self.weight.len() / (g.kh * g.kw * g.c);
                c_in * g.kh.div_ceil(g.stride) * g.kw.div_ceil(g.stride)
            }
            _ => unreachable!("conv layers carry geometry"),
        }
    }

    /// Uniform in `±sqrt(6 / fan_in)`, drawn in single precision; zero biases.
    pub fn init(&mut self, rng: &mut ChaCha8Rng) {
        let bound = (6.0 / self.fan_in().max(1) as f64).sqrt() as f32;
        for w in &mut self.weight {
            *w = rng.gen_range(-bound..bound) as f64;
        }
        self.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    fn out_channels(&self) -> usize {
        self.bias.len()
    }

    /// Returns the output and whatever the backward pass needs (input or patches).
    pub fn forward(&self, x: &[f64], batch: usize) -> (Vec<f64>, Vec<f64>) {
        match self.kind {
            LinearKind::Dense => {
                let mut y = vec![0.0; batch * self.n_out];
                gemm(batch, self.n_in, self.n_out, x, false, &self.weight, false, 0.0, &mut y);
                add_row_bias(&mut y, &self.bias);
                (y, x.to_vec())
            }
            LinearKind::Conv => {
                let g = self.geom.unwrap();
                let cols = g.im2col(x, batch);
                let rows = batch * g.oh * g.ow;
                let co = self.out_channels();
                let mut y = vec![0.0; rows * co];
                gemm(rows, g.patch(), co, &cols, false, &self.weight, false, 0.0, &mut y);
                add_row_bias(&mut y, &self.bias);
                (y, cols)
            }
            LinearKind::ConvTranspose => {
                let g = self.geom.unwrap();
                let rows = batch * g.oh * g.ow;
                let ci = x.len() / rows;
                let mut cols = vec![0.0; rows * g.patch()];
                gemm(rows, ci, g.patch(), x, false, &self.weight, false, 0.0, &mut cols);
                let mut y = g.col2im(&cols, batch);
                add_row_bias(&mut y, &self.bias);
                (y, x.to_vec())
            }
        }
    }

    /// Gradients `(d_input, d_weight, d_bias)`; `d_input` is skipped when not needed.
    pub fn backward(&self, saved: &[f64], dy: &[f64], batch: usize, need_dx: bool) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let co = self.out_channels();
        let mut dw = vec![0.0; self.weight.len()];
        let db = column_sums(dy, co);
        match self.kind {
            LinearKind::Dense => {
                gemm(self.n_in, batch, self.n_out, saved, true, dy, false, 0.0, &mut dw);
                let dx = need_dx.then(|| {
                    let mut dx = vec![0.0; batch * self.n_in];
                    gemm(batch, self.n_out, self.n_in, dy, false, &self.weight, true, 0.0, &mut dx);
                    dx
                });
                (dx, dw, db)
            }
            LinearKind::Conv => {
                let g = self.geom.unwrap();
                let rows = batch * g.oh * g.ow;
                gemm(g.patch(), rows, co, saved, true, dy, false, 0.0, &mut dw);
                let dx = need_dx.then(|| {
                    let mut dcols = vec![0.0; rows * g.patch()];
                    gemm(rows, co, g.patch(), dy, false, &self.weight, true, 0.0, &mut dcols);
                    g.col2im(&dcols, batch)
                });
                (dx, dw, db)
            }
            LinearKind::ConvTranspose => {
                let g = self.geom.unwrap();
                let rows = batch * g.oh * g.ow;
                let ci = saved.len() / rows;
                let dcols = g.im2col(dy, batch);
                gemm(ci, rows, g.patch(), saved, true, &dcols, false, 0.0, &mut dw);
                let dx = need_dx.then(|| {
                    let mut dx = vec![0.0; rows * ci];
                    gemm(rows, g.patch(), ci, &dcols, false, &self.weight, true, 0.0, &mut dx);
                    dx
                });
                (dx, dw, db)
            }
        }
    }
}

pub fn leaky_relu(x: &mut [f64], slope: f64) {
    for v in x {
        if *v < 0.0 {
            *v *= slope;
        }
    }
}

/// Backward of leaky ReLU given its output (same sign as its input for slope > 0).
pub fn leaky_relu_backward(output: &[f64], dy: &mut [f64], slope: f64) {
    for (g, &y) in dy.iter_mut().zip(output) {
        if y < 0.0 || (y == 0.0 && slope == 0.0) {
            *g *= slope;
        }
    }
}

/// Per-channel batch normalization with learned scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
}

/// Saved state of a train-mode batch-norm forward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize, momentum: f64) -> Self {
        BatchNorm {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum,
        }
    }

    fn affine(&self, xhat: &[f64]) -> Vec<f64> {
        let mut y = xhat.to_vec();
        for row in y.chunks_exact_mut(self.channels) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.gamma[j] * *v + self.beta[j];
            }
        }
        y
    }

    /// Normalize with batch statistics (biased variance).
    pub fn forward_train(&self, x: &[f64]) -> (Vec<f64>, BnCache) {
        let c = self.channels;
        let m = (x.len() / c) as f64;
        let mut mean = column_sums(x, c);
        mean.iter_mut().for_each(|v| *v /= m);
        let mut var = vec![0.0; c];
        for row in x.chunks_exact(c) {
            for j in 0..c {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= m);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
        let mut xhat = x.to_vec();
        for row in xhat.chunks_exact_mut(c) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean[j]) * inv_std[j];
            }
        }
        let y = self.affine(&xhat);
        (
            y,
            BnCache {
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
            },
        )
    }

    /// Normalize with running statistics.
    pub fn forward_infer(&self, x: &[f64]) -> Vec<f64> {
        let c = self.channels;
        let inv_std: Vec<f64> = self.running_var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
        let mut y = x.to_vec();
        for row in y.chunks_exact_mut(c) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.gamma[j] * (*v - self.running_mean[j]) * inv_std[j] + self.beta[j];
            }
        }
        y
    }

    pub fn update_running(&mut self, cache: &BnCache) {
        let mom = self.momentum;
        for j in 0..self.channels {
            self.running_mean[j] = mom * self.running_mean[j] + (1.0 - mom) * cache.batch_mean[j];
            self.running_var[j] = mom * self.running_var[j] + (1.0 - mom) * cache.batch_var[j];
        }
    }

    /// Returns `(d_input, d_gamma, d_beta)`.
    pub fn backward(&self, cache: &BnCache, dy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let c = self.channels;
        let m = (dy.len() / c) as f64;
        let mut dgamma = vec![0.0; c];
        let dbeta = column_sums(dy, c);
        for (row, xrow) in dy.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
            for j in 0..c {
                dgamma[j] += row[j] * xrow[j];
            }
        }
        // With dxhat = dy * gamma: sum(dxhat) = gamma * dbeta and
        // sum(dxhat * xhat) = gamma * dgamma.
        let mut dx = vec![0.0; dy.len()];
        for ((out, row), xrow) in dx.chunks_exact_mut(c).zip(dy.chunks_exact(c)).zip(cache.xhat.chunks_exact(c)) {
            for j in 0..c {
                let g = self.gamma[j];
                out[j] = g * cache.inv_std[j] / m * (m * row[j] - dbeta[j] - xrow[j] * dgamma[j]);
            }
        }
        (dx, dgamma, dbeta)
    }
}
