//! Mixture-of-transformers over interleaved text and video latents.
//!
//! Each modality owns its input projector, norms, Q/K/V/O, SwiGLU FFN and
//! output head; attention runs once over the whole sequence under the
//! hybrid mask. Video tokens carry a sinusoidal embedding of their noise
//! level and a learned per-patch position embedding.
//!
//! Forward and backward passes are written by hand over flat row-major
//! buffers and are generic over [`Float`](crate::kernels::Float) so the
//! same code runs in `f64` for gradient checks.

mod backward;
mod checkpoint;
mod forward;
mod input;
mod ops;
mod params;

pub use backward::backward;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainState, CHECKPOINT_VERSION};
pub use forward::{forward, Forward, KvCache};
pub use input::{Batch, SeqInput};
pub use ops::{sinusoidal_features, softmax_in_place};
pub use params::{param_count, ParamEntry, ParamIndex, Params, Tower};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Float;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub d_ffn: usize,
    pub vocab_size: usize,
    pub tokens_per_chunk: usize,
    pub d_latent: usize,
    pub lambda_txt: f64,
    pub lambda_vid: f64,
    /// Width of the sinusoidal noise-level features.
    pub time_dim: usize,
    /// Hidden width of the velocity head.
    pub up_hidden: usize,
    pub rope_base: f64,
    pub norm_eps: f64,
    /// Keeps the velocity head finite as `t → 1`.
    pub velocity_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 4,
            d_model: 128,
            n_heads: 4,
            n_kv_heads: 2,
            d_ffn: 344,
            vocab_size: crate::codec::Vocab::default().size(),
            tokens_per_chunk: 16,
            d_latent: 768,
            lambda_txt: 1.0,
            lambda_vid: 1.0,
            time_dim: 64,
            up_hidden: 256,
            rope_base: 10_000.0,
            norm_eps: 1e-5,
            velocity_eps: 0.005,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.layers == 0 || self.d_model == 0 || self.n_heads == 0 || self.n_kv_heads == 0 {
            return bad("layers, d_model and head counts must be positive");
        }
        if self.d_model % self.n_heads != 0 {
            return bad("d_model must be divisible by n_heads");
        }
        if self.n_heads % self.n_kv_heads != 0 {
            return bad("n_heads must be divisible by n_kv_heads");
        }
        if self.head_dim() % 2 != 0 || self.time_dim % 2 != 0 {
            return bad("head_dim and time_dim must be even");
        }
        if self.vocab_size <= crate::codec::N_SPECIALS as usize || self.d_latent == 0 || self.d_ffn == 0 || self.up_hidden == 0 {
            return bad("vocab, latent, ffn and head widths must be positive");
        }
        if !(self.velocity_eps > 0.0) || !(self.norm_eps > 0.0) {
            return bad("velocity_eps and norm_eps must be positive");
        }
        Ok(())
    }
}

/// Per-batch losses. `None` when the batch has no targets of that kind.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Losses {
    pub total: f64,
    pub txt: f64,
    pub vid: f64,
    pub n_txt: usize,
    pub n_vid: usize,
}

/// Joint loss and its gradients with respect to the model outputs.
///
/// Text: mean cross-entropy over positions with a target. Video: mean
/// squared error over noisy tokens × channels against `x − ε`.
pub fn loss<F: Float>(cfg: &ModelConfig, batch: &Batch<F>, out: &Forward<F>) -> (Losses, Vec<F>, Vec<F>) {
    let v = cfg.vocab_size;
    let mut dlogits = vec![F::zero(); out.logits.len()];
    let n_tgt = batch.txt_targets.iter().filter(|t| t.is_some()).count();
    let mut txt = 0.0;
    if n_tgt > 0 {
        let scale = cfg.lambda_txt / n_tgt as f64;
        for (r, tgt) in batch.txt_targets.iter().enumerate() {
            let Some(tgt) = *tgt else { continue };
            let row = &out.logits[r * v..(r + 1) * v];
            let max = row.iter().fold(F::neg_infinity(), |m, &x| m.max(x));
            let sum: f64 = row.iter().map(|&x| (x - max).f64().exp()).sum();
            let lse = max.f64() + sum.ln();
            txt += lse - row[tgt as usize].f64();
            let d = &mut dlogits[r * v..(r + 1) * v];
            for (j, dj) in d.iter_mut().enumerate() {
                let p = (row[j].f64() - lse).exp();
                *dj = F::of(scale * (p - if j == tgt as usize { 1.0 } else { 0.0 }));
            }
        }
        txt /= n_tgt as f64;
    }
    let n_el = out.velocity.len();
    let mut dvel = vec![F::zero(); n_el];
    let mut vid = 0.0;
    if n_el > 0 {
        let scale = 2.0 * cfg.lambda_vid / n_el as f64;
        for ((d, &p), &y) in dvel.iter_mut().zip(&out.velocity).zip(&batch.flow_target) {
            let e = (p - y).f64();
            vid += e * e;
            *d = F::of(scale * e);
        }
        vid /= n_el as f64;
    }
    let losses = Losses {
        total: cfg.lambda_txt * txt + cfg.lambda_vid * vid,
        txt,
        vid,
        n_txt: n_tgt,
        n_vid: batch.n_noisy,
    };
    (losses, dlogits, dvel)
}
