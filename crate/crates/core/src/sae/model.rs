use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::arch::{ArchSpec, PlannedLayer};
use super::layers::{leaky_relu, leaky_relu_backward, BatchNorm, BnCache, Linear};
use super::SaeError;
use crate::tensorize::{EventTensor, TensorKind};

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Linear(Linear),
    LeakyRelu,
    BatchNorm(BatchNorm),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch normalization; caches kept for backward.
    Train,
    /// Running statistics; no caches.
    Infer,
}

#[derive(Debug)]
enum OpCache {
    Linear(Vec<f64>),
    Leaky(Vec<f64>),
    Norm(BnCache),
}

/// Everything a train-mode forward pass saves for [`SaeModel::backward`].
#[derive(Debug)]
pub struct ForwardCache {
    batch: usize,
    encoder: Vec<OpCache>,
    decoder: Vec<OpCache>,
}

impl ForwardCache {
    /// Leaky-ReLU outputs in forward order (encoder, then decoder).
    pub fn activations(&self) -> impl Iterator<Item = &[f64]> {
        self.encoder.iter().chain(&self.decoder).filter_map(|c| match c {
            OpCache::Leaky(out) => Some(out.as_slice()),
            _ => None,
        })
    }
}

#[derive(Debug)]
pub struct ForwardPass {
    /// `[batch, bottleneck_dim]`.
    pub latent: Vec<f64>,
    /// `[batch, input_size]`.
    pub recon: Vec<f64>,
    pub cache: Option<ForwardCache>,
}

/// Parameter gradients in [`SaeModel::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// A latent code `z = encoder(X)` for one series.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector {
    pub series_id: String,
    pub z: Vec<f64>,
}

/// Encoder and mirrored decoder. Encoder: every layer is followed by leaky ReLU,
/// and every layer but the bottleneck additionally by batch normalization.
/// Decoder: the same for every layer except the linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel {
    pub arch: ArchSpec,
    pub encoder: Vec<Op>,
    pub decoder: Vec<Op>,
    pub seed: u64,
}

fn build_ops(layers: &[PlannedLayer], arch: &ArchSpec, activate_last: bool, normalize_last: bool) -> Vec<Op> {
    let mut ops = Vec::new();
    for (i, planned) in layers.iter().enumerate() {
        let last = i + 1 == layers.len();
        ops.push(Op::Linear(Linear::from_plan(planned)));
        if !last || activate_last {
            ops.push(Op::LeakyRelu);
        }
        if arch.batchnorm && (!last || normalize_last) {
            ops.push(Op::BatchNorm(BatchNorm::new(
                planned.output().channels(),
                arch.batchnorm_momentum,
            )));
        }
    }
    ops
}

fn ops_params(ops: &[Op]) -> impl Iterator<Item = &Vec<f64>> {
    ops.iter().flat_map(|op| match op {
        Op::Linear(l) => vec![&l.weight, &l.bias],
        Op::BatchNorm(bn) => vec![&bn.gamma, &bn.beta],
        Op::LeakyRelu => vec![],
    })
}

fn ops_params_mut(ops: &mut [Op]) -> impl Iterator<Item = &mut Vec<f64>> {
    ops.iter_mut().flat_map(|op| match op {
        Op::Linear(l) => vec![&mut l.weight, &mut l.bias],
        Op::BatchNorm(bn) => vec![&mut bn.gamma, &mut bn.beta],
        Op::LeakyRelu => vec![],
    })
}

impl SaeModel {
    /// Untrained model with zero weights; see [`init_model`] for random initialization.
    pub fn zeroed(arch: &ArchSpec) -> Result<Self, SaeError> {
        let plan = arch.plan()?;
        Ok(SaeModel {
            arch: arch.clone(),
            encoder: build_ops(&plan.encoder, arch, true, false),
            decoder: build_ops(&plan.decoder, arch, false, false),
            seed: 0,
        })
    }

    pub fn input_size(&self) -> usize {
        self.arch.input_size()
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.bottleneck_dim
    }

    /// Learnable tensors in declaration order: encoder then decoder, each layer's
    /// weight then bias, each batch norm's scale then shift.
    pub fn params(&self) -> Vec<&Vec<f64>> {
        ops_params(&self.encoder).chain(ops_params(&self.decoder)).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let SaeModel { encoder, decoder, .. } = self;
        ops_params_mut(encoder).chain(ops_params_mut(decoder)).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn batchnorms(&self) -> impl Iterator<Item = &BatchNorm> {
        self.encoder.iter().chain(&self.decoder).filter_map(|op| match op {
            Op::BatchNorm(bn) => Some(bn),
            _ => None,
        })
    }

    pub fn batchnorms_mut(&mut self) -> impl Iterator<Item = &mut BatchNorm> {
        self.encoder.iter_mut().chain(self.decoder.iter_mut()).filter_map(|op| match op {
            Op::BatchNorm(bn) => Some(bn),
            _ => None,
        })
    }

    /// Round parameters and running statistics to `f32`, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        for p in self.params_mut() {
            p.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        for bn in self.batchnorms_mut() {
            for v in bn.running_mean.iter_mut().chain(bn.running_var.iter_mut()) {
                *v = *v as f32 as f64;
            }
        }
    }

    fn run(ops: &[Op], mut x: Vec<f64>, batch: usize, mode: Mode, slope: f64, caches: &mut Vec<OpCache>) -> Vec<f64> {
        for op in ops {
            x = match op {
                Op::Linear(l) => {
                    let (y, saved) = l.forward(&x, batch);
                    if mode == Mode::Train {
                        caches.push(OpCache::Linear(saved));
                    }
                    y
                }
                Op::LeakyRelu => {
                    leaky_relu(&mut x, slope);
                    if mode == Mode::Train {
                        caches.push(OpCache::Leaky(x.clone()));
                    }
                    x
                }
                Op::BatchNorm(bn) => match mode {
                    Mode::Train => {
                        let (y, cache) = bn.forward_train(&x);
                        caches.push(OpCache::Norm(cache));
                        y
                    }
                    Mode::Infer => bn.forward_infer(&x),
                },
            };
        }
        x
    }

    /// Encode and reconstruct a `[batch, input_size]` buffer.
    pub fn forward(&self, x: &[f64], batch: usize, mode: Mode) -> Result<ForwardPass, SaeError> {
        if batch == 0 {
            return Err(SaeError::EmptyBatch);
        }
        if x.len() != batch * self.input_size() {
            return Err(SaeError::DimMismatch {
                expected: batch * self.input_size(),
                found: x.len(),
            });
        }
        let slope = self.arch.leaky_slope;
        let mut enc = Vec::new();
        let mut dec = Vec::new();
        let latent = Self::run(&self.encoder, x.to_vec(), batch, mode, slope, &mut enc);
        let recon = Self::run(&self.decoder, latent.clone(), batch, mode, slope, &mut dec);
        Ok(ForwardPass {
            latent,
            recon,
            cache: (mode == Mode::Train).then_some(ForwardCache {
                batch,
                encoder: enc,
                decoder: dec,
            }),
        })
    }

    /// Train-mode forward that also folds the batch statistics into the running
    /// statistics with the configured momentum.
    pub fn forward_train(&mut self, x: &[f64], batch: usize) -> Result<ForwardPass, SaeError> {
        let pass = self.forward(x, batch, Mode::Train)?;
        self.update_running_stats(pass.cache.as_ref().expect("train mode keeps caches"));
        Ok(pass)
    }

    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        let stats = cache.encoder.iter().chain(&cache.decoder).filter_map(|c| match c {
            OpCache::Norm(n) => Some(n),
            _ => None,
        });
        let bns: Vec<&mut BatchNorm> = self.batchnorms_mut().collect();
        for (bn, s) in bns.into_iter().zip(stats) {
            bn.update_running(s);
        }
    }

    /// Encoder only, infer mode, on a `[batch, input_size]` buffer.
    pub fn encode_batch(&self, x: &[f64], batch: usize) -> Result<Vec<f64>, SaeError> {
        if x.len() != batch * self.input_size() {
            return Err(SaeError::DimMismatch {
                expected: batch * self.input_size(),
                found: x.len(),
            });
        }
        Ok(Self::run(&self.encoder, x.to_vec(), batch, Mode::Infer, self.arch.leaky_slope, &mut Vec::new()))
    }

    /// Check that a tensor matches the model's input kind and dimensions.
    pub fn check_tensor(&self, t: &EventTensor) -> Result<(), SaeError> {
        let expected_kind = if self.arch.input_dims.len() == 2 {
            TensorKind::Map
        } else {
            TensorKind::Cube
        };
        if t.kind != expected_kind {
            return Err(SaeError::ArchMismatch(format!(
                "model expects {expected_kind:?} input, tensor {} is a {:?}",
                t.series_id, t.kind
            )));
        }
        if t.dims != self.arch.input_dims {
            return Err(SaeError::DimMismatch {
                expected: self.input_size(),
                found: t.values.len(),
            });
        }
        Ok(())
    }

    /// Latent code of one tensor (infer mode; the decoder is not run).
    pub fn encode(&self, t: &EventTensor) -> Result<LatentVector, SaeError> {
        self.check_tensor(t)?;
        Ok(LatentVector {
            series_id: t.series_id.clone(),
            z: self.encode_batch(&t.values, 1)?,
        })
    }

    /// Exact gradients given the loss gradients with respect to the
    /// reconstruction and the latent code.
    pub fn backward(&self, cache: &ForwardCache, d_recon: Vec<f64>, d_latent: &[f64]) -> Gradients {
        let batch = cache.batch;
        let slope = self.arch.leaky_slope;
        let mut grads: Vec<Vec<Vec<f64>>> = Vec::new();
        let mut dy = d_recon;
        let stages = [(&self.decoder, &cache.decoder, false), (&self.encoder, &cache.encoder, true)];
        for (ops, caches, is_encoder) in stages {
            if is_encoder {
                dy.iter_mut().zip(d_latent).for_each(|(g, d)| *g += d);
            }
            let first_linear = ops.iter().position(|op| matches!(op, Op::Linear(_)));
            for (idx, (op, c)) in ops.iter().zip(caches).enumerate().rev() {
                match (op, c) {
                    (Op::Linear(l), OpCache::Linear(saved)) => {
                        let need_dx = !(is_encoder && Some(idx) == first_linear);
                        let (dx, dw, db) = l.backward(saved, &dy, batch, need_dx);
                        grads.push(vec![dw, db]);
                        dy = dx.unwrap_or_default();
                    }
                    (Op::LeakyRelu, OpCache::Leaky(out)) => leaky_relu_backward(out, &mut dy, slope),
                    (Op::BatchNorm(bn), OpCache::Norm(bc)) => {
                        let (dx, dg, dbeta) = bn.backward(bc, &dy);
                        grads.push(vec![dg, dbeta]);
                        dy = dx;
                    }
                    _ => unreachable!("cache does not match op sequence"),
                }
            }
        }
        // Collected decoder-last-first then encoder-last-first; restore declaration order.
        let n_dec = self.decoder.iter().filter(|op| !matches!(op, Op::LeakyRelu)).count();
        let mut dec: Vec<Vec<Vec<f64>>> = grads.drain(..n_dec).collect();
        dec.reverse();
        grads.reverse();
        Gradients(grads.into_iter().chain(dec).flatten().collect())
    }
}

/// Random initialization, deterministic under `seed`: fan-in scaled uniform
/// weights, zero biases, unit BN scale, zero shift, running statistics (0, 1).
pub fn init_model(arch: &ArchSpec, seed: u64) -> Result<SaeModel, SaeError> {
    let mut model = SaeModel::zeroed(arch)?;
    model.seed = seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for op in model.encoder.iter_mut().chain(model.decoder.iter_mut()) {
        if let Op::Linear(l) = op {
            l.init(&mut rng);
        }
    }
    Ok(model)
}
