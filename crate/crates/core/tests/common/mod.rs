#![allow(dead_code)]

pub mod layouts;
pub mod probes;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tv2tv::masking::{LayoutDescriptor, Modality, Role};
use tv2tv::model::{ModelConfig, SeqInput};

/// A model small enough for finite-difference checks (under 5k weights).
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        layers: 1,
        d_model: 8,
        n_heads: 2,
        n_kv_heads: 1,
        d_ffn: 16,
        tokens_per_chunk: 4,
        d_latent: 12,
        time_dim: 8,
        up_hidden: 16,
        ..ModelConfig::default()
    }
}

/// Random well-formed layout: text runs, noisy/clean twin pairs, lone
/// clean chunks and optionally a trailing noisy chunk.
pub fn random_layout(rng: &mut ChaCha8Rng, max_tokens: usize, chunk_max: usize) -> LayoutDescriptor {
    let mut l = LayoutDescriptor::default();
    let mut chunk = 0;
    loop {
        let room = max_tokens - l.len();
        match rng.gen_range(0..10) {
            0..=3 if room >= 1 => {
                let n = rng.gen_range(1..=room.min(5));
                let roles: Vec<Role> = (0..n)
                    .map(|_| [Role::PlainText, Role::PlainText, Role::Bof, Role::Eof, Role::Eos][rng.gen_range(0..5)])
                    .collect();
                l.push_text(&roles);
            }
            4..=6 if room >= 2 => {
                let n = rng.gen_range(1..=(room / 2).min(chunk_max));
                chunk += 1;
                l.push_chunk(Role::NoisyVid, chunk, n);
                l.push_chunk(Role::CleanVid, chunk, n);
            }
            7 if room >= 1 => {
                chunk += 1;
                l.push_chunk(Role::CleanVid, chunk, rng.gen_range(1..=room.min(chunk_max)));
            }
            8 if room >= 1 => {
                chunk += 1;
                l.push_chunk(Role::NoisyVid, chunk, rng.gen_range(1..=room.min(chunk_max)));
                return l;
            }
            _ => {
                if room == 0 || rng.gen_bool(0.15) {
                    return l;
                }
            }
        }
    }
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Random payloads for `layout`: token ids, latents, a noise level per chunk
/// and flow targets.
pub fn random_input(rng: &mut ChaCha8Rng, cfg: &ModelConfig, layout: LayoutDescriptor) -> SeqInput {
    let ids: Vec<u32> = layout
        .tokens
        .iter()
        .map(|t| {
            if t.modality == Modality::Text {
                rng.gen_range(0..cfg.vocab_size as u32)
            } else {
                0
            }
        })
        .collect();
    let n_vid = layout.tokens.iter().filter(|t| t.modality == Modality::Video).count();
    let n_noisy = layout.tokens.iter().filter(|t| t.role == Role::NoisyVid).count();
    let latents = gaussian(rng, n_vid * cfg.d_latent);
    let mut t = Vec::with_capacity(n_vid);
    let mut last: Option<(usize, Role)> = None;
    let mut level = 0.5f32;
    for tok in layout.tokens.iter().filter(|t| t.modality == Modality::Video) {
        let key = (tok.element_index, tok.role);
        if last != Some(key) {
            level = if tok.role == Role::CleanVid { 1.0 } else { rng.gen_range(0.05..0.95) };
            last = Some(key);
        }
        t.push(level);
    }
    let targets = gaussian(rng, n_noisy * cfg.d_latent);
    SeqInput::from_layout(layout, ids, latents, t, targets).unwrap()
}

/// Small model at the production codec size, with perturbed weights (so
/// velocities are non-trivial) and one residual channel held constant on
/// text tokens so that `bof_bias`/`eos_bias` act as logit offsets.
pub fn test_engine(variant: tv2tv::sequence::Variant, seed: u64, bof_bias: f32, eos_bias: f32) -> tv2tv::inference::Engine {
    use rand::SeedableRng;
    use tv2tv::codec::{BOF, EOS};
    use tv2tv::model::Params;
    let cfg = ModelConfig {
        layers: 2,
        d_model: 32,
        n_heads: 2,
        n_kv_heads: 1,
        d_ffn: 64,
        time_dim: 16,
        up_hidden: 32,
        ..ModelConfig::default()
    };
    let mut p = Params::<f32>::init(&cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let index = p.index.clone();
    for e in &index.entries {
        if e.shape.len() == 2 {
            for x in &mut p.data[e.range()] {
                *x += 0.05 * <StandardNormal as Distribution<f32>>::sample(&StandardNormal, &mut rng);
            }
        }
    }
    p.data[index.up_gate.start] = 1.0;
    let (d, v) = (cfg.d_model, cfg.vocab_size);
    for tok in 0..v {
        p.data[index.embed.start + tok * d] = 1.0;
    }
    for l in &index.layers {
        for r in 0..cfg.n_heads * cfg.head_dim() {
            p.data[l.txt.wo.start + r * d] = 0.0;
        }
        for r in 0..cfg.d_ffn {
            p.data[l.txt.w2.start + r * d] = 0.0;
        }
    }
    for tok in 0..v {
        p.data[index.lm_head.start + tok] = 0.0;
    }
    p.data[index.lm_head.start + BOF as usize] = bof_bias;
    p.data[index.lm_head.start + EOS as usize] = eos_bias;
    tv2tv::inference::Engine::new(p, variant).unwrap()
}
