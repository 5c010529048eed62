//! Minibatch training loop with validation monitoring, learning-rate reduction
//! on plateau, early stopping and best-weight restoration.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arch::ArchSpec;
use super::loss::{loss, loss_gradients, LossValue};
use super::model::{init_model, Mode, SaeModel};
use super::optim::{adam_step, AdamState};
use super::schedule::{EarlyStopping, PlateauScheduler, StopSignal};
use super::SaeError;
use crate::tensorize::EventTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.1,
            batch_size: 1024,
            max_epochs: 200,
            lr: 0.01,
            plateau_factor: 10.0,
            plateau_patience: 10,
            early_stop_patience: 25,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SaeError> {
        let bad = |m: &str| Err(SaeError::InvalidConfig(m.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and >= 0");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be >= 1");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and >= 0");
        }
        if !(self.plateau_factor >= 1.0) {
            return bad("plateau_factor must be >= 1");
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return bad("patience values must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_recon: f64,
    pub val_loss: f64,
    pub val_recon: f64,
    pub val_l1: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the lowest validation loss.
    pub model: SaeModel,
    pub optimizer: AdamState,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Row-stacked tensors, `n x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorMatrix {
    pub data: Vec<f64>,
    pub n: usize,
    pub dim: usize,
}

impl TensorMatrix {
    pub fn from_tensors(model: &SaeModel, tensors: &[EventTensor]) -> Result<Self, SaeError> {
        let dim = model.input_size();
        let mut data = Vec::with_capacity(tensors.len() * dim);
        for t in tensors {
            model.check_tensor(t)?;
            data.extend_from_slice(&t.values);
        }
        Ok(TensorMatrix {
            data,
            n: tensors.len(),
            dim,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn gather(&self, idx: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            out.extend_from_slice(self.row(i));
        }
        out
    }
}

/// Infer-mode loss averaged over all rows.
pub fn evaluate(model: &SaeModel, data: &TensorMatrix, batch_size: usize, lambda: f64) -> Result<LossValue, SaeError> {
    let mut recon = 0.0;
    let mut l1 = 0.0;
    let idx: Vec<usize> = (0..data.n).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let x = data.gather(chunk);
        let pass = model.forward(&x, chunk.len(), Mode::Infer)?;
        let v = loss(&x, &pass.recon, &pass.latent, chunk.len(), lambda);
        recon += v.recon_mse * chunk.len() as f64;
        l1 += v.l1_term * chunk.len() as f64;
    }
    let n = data.n.max(1) as f64;
    let (recon_mse, l1_term) = (recon / n, l1 / n);
    Ok(LossValue {
        total: recon_mse + lambda * l1_term,
        recon_mse,
        l1_term,
    })
}

/// Train from a fresh initialization seeded by `cfg.seed`.
pub fn train(train: &[EventTensor], val: &[EventTensor], arch: &ArchSpec, cfg: &TrainConfig) -> Result<TrainOutcome, SaeError> {
    let model = init_model(arch, cfg.seed)?;
    train_model(model, train, val, cfg)
}

/// Train an existing model. Parameters are kept at `f32` precision after every
/// update so the best weights can be checkpointed without loss.
pub fn train_model(
    mut model: SaeModel,
    train: &[EventTensor],
    val: &[EventTensor],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, SaeError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(SaeError::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(SaeError::EmptySplit("validation"));
    }
    let train_data = TensorMatrix::from_tensors(&model, train)?;
    let val_data = TensorMatrix::from_tensors(&model, val)?;
    model.round_to_f32();

    let mut opt = AdamState::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5348_5546_464C_4521);
    let mut scheduler = PlateauScheduler::new(cfg.plateau_factor, cfg.plateau_patience);
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let mut lr = cfg.lr;
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train_data.n).collect();

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut train_total = 0.0;
        let mut train_recon = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = train_data.gather(chunk);
            let b = chunk.len();
            let pass = model.forward_train(&x, b)?;
            let v = loss(&x, &pass.recon, &pass.latent, b, cfg.lambda);
            if !v.total.is_finite() {
                return Err(SaeError::DivergedLoss { epoch });
            }
            train_total += v.total * b as f64;
            train_recon += v.recon_mse * b as f64;
            let (d_recon, d_latent) = loss_gradients(&x, &pass.recon, &pass.latent, b, cfg.lambda);
            let grads = model.backward(pass.cache.as_ref().expect("train mode keeps caches"), d_recon, &d_latent);
            adam_step(&mut model, &grads, &mut opt, lr);
            model.round_to_f32();
        }
        let val_loss = evaluate(&model, &val_data, cfg.batch_size, cfg.lambda)?;
        if !val_loss.total.is_finite() {
            return Err(SaeError::DivergedLoss { epoch });
        }
        let n = train_data.n as f64;
        history.push(EpochRecord {
            epoch,
            train_loss: train_total / n,
            train_recon: train_recon / n,
            val_loss: val_loss.total,
            val_recon: val_loss.recon_mse,
            val_l1: val_loss.l1_term,
            lr,
        });
        log::info!(
            "epoch {epoch}: train {:.6e} val {:.6e} (recon {:.6e}, l1 {:.4e}) lr {lr:.1e}",
            train_total / n,
            val_loss.total,
            val_loss.recon_mse,
            val_loss.l1_term
        );
        let signal = stopper.observe(epoch, val_loss.total);
        if signal == StopSignal::Improved {
            best = model.clone();
            best_epoch = epoch;
        }
        lr = scheduler.observe(val_loss.total, lr);
        if signal == StopSignal::Stop {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome {
        model: best,
        optimizer: opt,
        history,
        best_epoch,
        stopped_early,
    })
}
