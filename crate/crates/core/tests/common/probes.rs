use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tv2tv::masking::{Modality, Role};
use tv2tv::model::{forward, Batch, ModelConfig, Params, SeqInput};

/// Output vector of every position that has one (logits for text, velocity
/// for noisy video); `None` for clean video.
pub fn outputs(p: &Params<f64>, s: &SeqInput) -> Vec<Option<Vec<f64>>> {
    let batch = Batch::<f64>::new(&p.cfg, &[s]).unwrap();
    let out = forward(p, &batch, None).unwrap();
    let (v, dl) = (p.cfg.vocab_size, p.cfg.d_latent);
    let (mut ti, mut ni) = (0, 0);
    s.layout
        .tokens
        .iter()
        .map(|t| match (t.modality, t.role) {
            (Modality::Text, _) => {
                ti += 1;
                Some(out.logits[(ti - 1) * v..ti * v].to_vec())
            }
            (_, Role::NoisyVid) => {
                ni += 1;
                Some(out.velocity[(ni - 1) * dl..ni * dl].to_vec())
            }
            _ => None,
        })
        .collect()
}

/// Replace the payload of element `e`: fresh token ids, latents and noise level.
pub fn perturb(rng: &mut ChaCha8Rng, cfg: &ModelConfig, s: &SeqInput, e: usize) -> SeqInput {
    let mut ids = s.text_ids.clone();
    let mut latents = s.latents.clone();
    let mut t = s.t.clone();
    let level: f32 = rng.gen_range(0.05..0.95);
    let mut v = 0;
    for (p, tok) in s.layout.tokens.iter().enumerate() {
        if tok.modality == Modality::Video {
            if tok.element_index == e {
                for x in &mut latents[v * cfg.d_latent..(v + 1) * cfg.d_latent] {
                    *x += <StandardNormal as Distribution<f32>>::sample(&StandardNormal, rng);
                }
                if tok.role == Role::NoisyVid {
                    t[v] = level;
                }
            }
            v += 1;
        } else if tok.element_index == e {
            ids[p] = (ids[p] + rng.gen_range(1..cfg.vocab_size as u32)) % cfg.vocab_size as u32;
        }
    }
    let n_noisy = s.layout.tokens.iter().filter(|t| t.role == Role::NoisyVid).count();
    SeqInput::from_layout(s.layout.clone(), ids, latents, t, vec![0.0; n_noisy * cfg.d_latent]).unwrap()
}
