//! Reconstruction plus L1 sparsity objective.

/// Batch-averaged objective: `total = recon_mse + lambda * l1_term`, where
/// `recon_mse` is the mean per-sample sum of squared errors and `l1_term` the
/// mean per-sample L1 norm of the latent code.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub recon_mse: f64,
    pub l1_term: f64,
}

pub fn loss(x: &[f64], recon: &[f64], latent: &[f64], batch: usize, lambda: f64) -> LossValue {
    assert_eq!(x.len(), recon.len(), "input and reconstruction sizes differ");
    let b = batch.max(1) as f64;
    let sse: f64 = x.iter().zip(recon).map(|(a, r)| (a - r) * (a - r)).sum();
    let l1: f64 = latent.iter().map(|z| z.abs()).sum();
    let recon_mse = sse / b;
    let l1_term = l1 / b;
    LossValue {
        total: recon_mse + lambda * l1_term,
        recon_mse,
        l1_term,
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradients of [`loss`] with respect to the reconstruction and the latent code.
/// The L1 subgradient at zero is zero.
pub fn loss_gradients(x: &[f64], recon: &[f64], latent: &[f64], batch: usize, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let b = batch.max(1) as f64;
    let d_recon = x.iter().zip(recon).map(|(a, r)| 2.0 * (r - a) / b).collect();
    let d_latent = latent.iter().map(|&z| lambda * sign(z) / b).collect();
    (d_recon, d_latent)
}
