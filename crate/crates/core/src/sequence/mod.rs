//! Interleaved training sequences: layout of text segments and noisy/clean
//! chunk twins, rectified-flow noising, and the two dropout schemes.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::codec::{ChunkKind, LatentChunk, LatentCodec, Vocab, BOF, BOS, EOF, EOS};
use crate::error::{Error, Result};
use crate::masking::{LayoutDescriptor, Role};
use crate::toyworld::{chunk_timestamp, Episode, FPS, FRAMES_PER_CHUNK};

/// Sequence layout variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Plan text interleaved before every chunk.
    Tv2tv,
    /// Meta prompt only.
    T2v,
    /// All plan text up front, then all chunks.
    Think2v,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Tv2tv, Variant::T2v, Variant::Think2v];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Tv2tv => "tv2tv",
            Variant::T2v => "t2v",
            Variant::Think2v => "think2v",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentRole {
    MetaPrompt,
    Plan,
}

/// Single-token text-stream markers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Marker {
    Bos,
    Eos,
    Bof,
    Eof,
}

impl Marker {
    pub fn token(self) -> u32 {
        match self {
            Marker::Bos => BOS,
            Marker::Eos => EOS,
            Marker::Bof => BOF,
            Marker::Eof => EOF,
        }
    }

    pub fn role(self) -> Role {
        match self {
            Marker::Bos => Role::PlainText,
            Marker::Eos => Role::Eos,
            Marker::Bof => Role::Bof,
            Marker::Eof => Role::Eof,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextSegment {
    pub token_ids: Vec<u32>,
    pub timestamp_s: f64,
    pub role: SegmentRole,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyChunk {
    /// `t·x + (1−t)·ε`, with `t` recorded on the chunk.
    pub latent: LatentChunk,
    /// Flow target `x − ε`.
    pub target: Vec<f32>,
    pub timestamp_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanChunk {
    pub latent: LatentChunk,
    /// The payload was replaced by the noisy twin's.
    pub flipped: bool,
    pub timestamp_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Element {
    Marker { marker: Marker, timestamp_s: f64 },
    Text(TextSegment),
    Noisy(NoisyChunk),
    Clean(CleanChunk),
}

impl Element {
    pub fn timestamp_s(&self) -> f64 {
        match self {
            Element::Marker { timestamp_s, .. } => *timestamp_s,
            Element::Text(s) => s.timestamp_s,
            Element::Noisy(c) => c.timestamp_s,
            Element::Clean(c) => c.timestamp_s,
        }
    }

    pub fn marker(marker: Marker, timestamp_s: f64) -> Element {
        Element::Marker { marker, timestamp_s }
    }

    pub fn is_text_stream(&self) -> bool {
        matches!(self, Element::Marker { .. } | Element::Text(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterleavedSequence {
    pub elements: Vec<Element>,
    pub variant: Variant,
    /// Latent chunks after the first frame.
    pub n_latent_frames: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub mu: f64,
    pub sigma: f64,
    pub p_txt_drop: f64,
    pub p_clean_vid_flip: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            mu: 0.0,
            sigma: 1.4,
            p_txt_drop: 0.0,
            p_clean_vid_flip: 0.5,
        }
    }
}

impl NoiseConfig {
    /// Deterministic sequences: no dropout, no flips.
    pub fn clean() -> Self {
        NoiseConfig {
            p_clean_vid_flip: 0.0,
            ..NoiseConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !(self.sigma > 0.0) || !self.mu.is_finite() {
            return Err(Error::Config("noise sigma must be positive and mu finite".into()));
        }
        if !prob(self.p_txt_drop) || !prob(self.p_clean_vid_flip) {
            return Err(Error::Config("dropout probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

pub fn logistic(g: f64) -> f64 {
    1.0 / (1.0 + (-g).exp())
}

/// `t = logistic(g)`, `g ~ N(mu, sigma²)`.
pub fn sample_timestep<R: Rng + ?Sized>(rng: &mut R, cfg: &NoiseConfig) -> f64 {
    let g: f64 = StandardNormal.sample(rng);
    logistic(cfg.mu + cfg.sigma * g)
}

/// `t·x + (1−t)·ε`. The returned chunk is marked noisy and records `t`.
pub fn interpolate_noise(x_clean: &LatentChunk, t: f64, eps: &[f32]) -> Result<LatentChunk> {
    if eps.len() != x_clean.data.len() {
        return Err(Error::Shape(format!("noise has {} values, latent has {}", eps.len(), x_clean.data.len())));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Config(format!("noise level {t} outside [0, 1]")));
    }
    let tf = t as f32;
    let data = if t == 1.0 {
        x_clean.data.clone()
    } else if t == 0.0 {
        eps.to_vec()
    } else {
        x_clean.data.iter().zip(eps).map(|(&x, &e)| tf * x + (1.0 - tf) * e).collect()
    };
    Ok(LatentChunk {
        data,
        kind: ChunkKind::Noisy,
        t: tf,
        ..x_clean.clone()
    })
}

pub fn gaussian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f32> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Pre-encoded clean latents of an episode: the first frame, then one per chunk.
pub fn encode_episode(ep: &Episode, codec: &LatentCodec) -> Result<Vec<LatentChunk>> {
    (0..=ep.n_chunks()).map(|i| codec.encode_chunk(ep.chunk_frames(i), i)).collect()
}

/// Start time of the element following the last chunk.
pub fn end_timestamp(n_chunks: usize) -> f64 {
    chunk_timestamp(n_chunks) + FRAMES_PER_CHUNK as f64 / FPS
}

/// Build a training sequence for `ep`.
///
/// The first frame becomes a clean conditioning chunk framed by BOF/EOF.
/// Every later chunk is a noisy/clean twin pair with its own `t` and `ε`.
pub fn assemble<R: Rng + ?Sized>(
    ep: &Episode,
    variant: Variant,
    codec: &LatentCodec,
    vocab: &Vocab,
    rng: &mut R,
    cfg: &NoiseConfig,
) -> Result<InterleavedSequence> {
    let latents = encode_episode(ep, codec)?;
    assemble_encoded(ep, &latents, variant, vocab, rng, cfg)
}

/// [`assemble`] with the clean latents already computed.
pub fn assemble_encoded<R: Rng + ?Sized>(
    ep: &Episode,
    latents: &[LatentChunk],
    variant: Variant,
    vocab: &Vocab,
    rng: &mut R,
    cfg: &NoiseConfig,
) -> Result<InterleavedSequence> {
    cfg.validate()?;
    let n = ep.n_chunks();
    if latents.len() != n + 1 {
        return Err(Error::Shape(format!("expected {} latent chunks, got {}", n + 1, latents.len())));
    }
    let keep = |rng: &mut R| cfg.p_txt_drop == 0.0 || rng.gen::<f64>() >= cfg.p_txt_drop;
    let plan = |i: usize| vocab.encode(&ep.actions[i - 1].to_string());

    let mut els = vec![Element::marker(Marker::Bos, 0.0)];
    let meta = vocab.encode(&ep.meta_prompt)?;
    if keep(rng) && !meta.is_empty() {
        els.push(Element::Text(TextSegment {
            token_ids: meta,
            timestamp_s: 0.0,
            role: SegmentRole::MetaPrompt,
        }));
    }
    if variant == Variant::Think2v {
        for i in 1..=n {
            let ids = plan(i)?;
            if keep(rng) {
                els.push(Element::Text(TextSegment {
                    token_ids: ids,
                    timestamp_s: 0.0,
                    role: SegmentRole::Plan,
                }));
            }
        }
    }
    els.push(Element::marker(Marker::Bof, 0.0));
    els.push(Element::Clean(CleanChunk {
        latent: latents[0].clone(),
        flipped: false,
        timestamp_s: 0.0,
    }));
    els.push(Element::marker(Marker::Eof, 0.0));

    for i in 1..=n {
        let ts = chunk_timestamp(i);
        if variant == Variant::Tv2tv {
            let ids = plan(i)?;
            if keep(rng) {
                els.push(Element::Text(TextSegment {
                    token_ids: ids,
                    timestamp_s: ts,
                    role: SegmentRole::Plan,
                }));
            }
        }
        let x = &latents[i];
        let t = sample_timestep(rng, cfg);
        let eps = gaussian(rng, x.data.len());
        let noisy = interpolate_noise(x, t, &eps)?;
        let target = x.data.iter().zip(&eps).map(|(&a, &e)| a - e).collect();
        let flip = cfg.p_clean_vid_flip > 0.0 && rng.gen::<f64>() < cfg.p_clean_vid_flip;
        let clean = if flip {
            LatentChunk {
                kind: ChunkKind::Clean,
                ..noisy.clone()
            }
        } else {
            x.clone()
        };
        els.push(Element::marker(Marker::Bof, ts));
        els.push(Element::Noisy(NoisyChunk {
            latent: noisy,
            target,
            timestamp_s: ts,
        }));
        els.push(Element::Clean(CleanChunk {
            latent: clean,
            flipped: flip,
            timestamp_s: ts,
        }));
        els.push(Element::marker(Marker::Eof, ts));
    }
    els.push(Element::marker(Marker::Eos, end_timestamp(n)));
    Ok(InterleavedSequence {
        elements: els,
        variant,
        n_latent_frames: n,
    })
}

impl InterleavedSequence {
    pub fn layout(&self) -> LayoutDescriptor {
        let mut l = LayoutDescriptor::default();
        for el in &self.elements {
            match el {
                Element::Marker { marker, .. } => l.push_text(&[marker.role()]),
                Element::Text(s) => l.push_text(&vec![Role::PlainText; s.token_ids.len()]),
                Element::Noisy(c) => l.push_chunk(Role::NoisyVid, c.latent.chunk_index, c.latent.tokens),
                Element::Clean(c) => l.push_chunk(Role::CleanVid, c.latent.chunk_index, c.latent.tokens),
            }
        }
        l
    }

    /// Token ids of the text stream, in order.
    pub fn text_stream(&self) -> Vec<u32> {
        let mut out = Vec::new();
        for el in &self.elements {
            match el {
                Element::Marker { marker, .. } => out.push(marker.token()),
                Element::Text(s) => out.extend_from_slice(&s.token_ids),
                _ => {}
            }
        }
        out
    }

    pub fn plan_segments(&self) -> impl Iterator<Item = &TextSegment> {
        self.elements.iter().filter_map(|e| match e {
            Element::Text(s) if s.role == SegmentRole::Plan => Some(s),
            _ => None,
        })
    }

    pub fn n_chunks(&self) -> usize {
        self.elements.iter().filter(|e| matches!(e, Element::Noisy(_))).count()
    }

    /// One JSON object per element.
    pub fn debug_lines(&self) -> Vec<serde_json::Value> {
        self.elements
            .iter()
            .map(|el| match el {
                Element::Marker { marker, timestamp_s } => json!({
                    "role": marker, "timestamp_s": timestamp_s, "token_ids": [marker.token()],
                }),
                Element::Text(s) => json!({
                    "role": s.role, "timestamp_s": s.timestamp_s, "token_ids": s.token_ids,
                }),
                Element::Noisy(c) => json!({
                    "role": "noisy_vid", "timestamp_s": c.timestamp_s, "chunk_index": c.latent.chunk_index,
                    "checksum": c.latent.checksum(), "t": c.latent.t,
                }),
                Element::Clean(c) => json!({
                    "role": "clean_vid", "timestamp_s": c.timestamp_s, "chunk_index": c.latent.chunk_index,
                    "checksum": c.latent.checksum(), "t": c.latent.t, "flipped": c.flipped,
                }),
            })
            .collect()
    }

    pub fn write_debug(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for line in self.debug_lines() {
            writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::LatentCodec;
    use crate::toyworld::{gen_episode, Policy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(variant: Variant, cfg: NoiseConfig, seed: u64) -> InterleavedSequence {
        let ep = gen_episode(4, 3, Policy::Random).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        assemble(&ep, variant, &LatentCodec::shared_default(), &Vocab::default(), &mut rng, &cfg).unwrap()
    }

    #[test]
    fn logistic_midpoint() {
        assert_eq!(logistic(0.0), 0.5);
    }

    #[test]
    fn interpolation_endpoints() {
        let x = LatentChunk {
            tokens: 1,
            dim: 3,
            data: vec![2.0; 3],
            kind: ChunkKind::Clean,
            span: crate::codec::ChunkSpan::Group,
            chunk_index: 1,
            t: 1.0,
        };
        let eps = vec![0.0, -1.5, 3.0];
        assert_eq!(interpolate_noise(&x, 1.0, &eps).unwrap().data, x.data);
        assert_eq!(interpolate_noise(&x, 0.0, &eps).unwrap().data, eps);
        assert_eq!(interpolate_noise(&x, 0.5, &[0.0; 3]).unwrap().data, vec![1.0; 3]);
        assert!(interpolate_noise(&x, 0.5, &[0.0; 2]).is_err());
    }

    #[test]
    fn variants_place_text_as_specified() {
        let t2v = build(Variant::T2v, NoiseConfig::clean(), 1);
        assert_eq!(t2v.plan_segments().count(), 0);

        let think = build(Variant::Think2v, NoiseConfig::clean(), 1);
        let first_bof = think
            .elements
            .iter()
            .position(|e| matches!(e, Element::Marker { marker: Marker::Bof, .. }))
            .unwrap();
        assert!(think.elements[first_bof..].iter().all(|e| !matches!(e, Element::Text(_))));
        assert_eq!(think.plan_segments().count(), 3);

        let tv = build(Variant::Tv2tv, NoiseConfig::clean(), 1);
        assert_eq!(tv.n_chunks(), 3);
        assert_eq!(tv, build(Variant::Tv2tv, NoiseConfig::clean(), 1));
    }

    #[test]
    fn twins_and_timestamps() {
        for variant in Variant::ALL {
            let s = build(variant, NoiseConfig::default(), 9);
            let ts: Vec<f64> = s.elements.iter().map(Element::timestamp_s).collect();
            assert!(ts.windows(2).all(|w| w[0] <= w[1]));
            for (i, e) in s.elements.iter().enumerate() {
                if let Element::Noisy(n) = e {
                    match &s.elements[i + 1] {
                        Element::Clean(c) => assert_eq!(c.latent.chunk_index, n.latent.chunk_index),
                        other => panic!("noisy chunk followed by {other:?}"),
                    }
                }
            }
            s.layout().elements().unwrap();
        }
    }

    #[test]
    fn full_flip_copies_twin_payload() {
        let cfg = NoiseConfig {
            p_clean_vid_flip: 1.0,
            ..NoiseConfig::default()
        };
        let s = build(Variant::Tv2tv, cfg, 3);
        for w in s.elements.windows(2) {
            if let (Element::Noisy(n), Element::Clean(c)) = (&w[0], &w[1]) {
                assert!(c.flipped);
                assert_eq!(c.latent.data, n.latent.data);
                assert_eq!(c.latent.t, n.latent.t);
            }
        }
    }

    #[test]
    fn full_text_drop_leaves_markers_only() {
        let cfg = NoiseConfig {
            p_txt_drop: 1.0,
            ..NoiseConfig::clean()
        };
        let s = build(Variant::Tv2tv, cfg, 3);
        assert!(s.elements.iter().all(|e| !matches!(e, Element::Text(_))));
        assert_eq!(s.n_chunks(), 3);
    }

    #[test]
    fn debug_dump_has_one_line_per_element() {
        let s = build(Variant::Tv2tv, NoiseConfig::default(), 2);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("seq.jsonl");
        s.write_debug(&p).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text.lines().count(), s.elements.len());
    }
}
