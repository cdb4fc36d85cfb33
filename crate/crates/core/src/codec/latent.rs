use std::fs;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{gemm, View};
use crate::npy;
use crate::toyworld::{Frame, FRAMES_PER_CHUNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChunkKind {
    Clean,
    Noisy,
}

/// Which frame group a latent chunk encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkSpan {
    /// The lone first frame of a clip.
    FirstFrame,
    /// A group of four frames.
    Group,
}

/// Latent tensor `[tokens, dim]` for one frame chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentChunk {
    pub tokens: usize,
    pub dim: usize,
    pub data: Vec<f32>,
    pub kind: ChunkKind,
    pub span: ChunkSpan,
    pub chunk_index: usize,
    /// Noise level; 1.0 for clean chunks.
    pub t: f32,
}

impl LatentChunk {
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn l2(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    /// Short content hash used in debug dumps and transcripts.
    pub fn checksum(&self) -> String {
        checksum_f32(&self.data)
    }
}

pub fn checksum_f32(data: &[f32]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for v in data {
        h.update(v.to_le_bytes());
    }
    let d = h.finalize();
    d[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub tokens_per_chunk: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    pub seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            tokens_per_chunk: 16,
            frame_height: 32,
            frame_width: 32,
            seed: 0xC0DEC,
        }
    }
}

impl CodecConfig {
    /// Patches per side of the token grid.
    pub fn grid_side(&self) -> usize {
        (self.tokens_per_chunk as f64).sqrt().round() as usize
    }

    pub fn patch_px(&self) -> usize {
        self.frame_height / self.grid_side()
    }

    /// Values of one patch across a 4-frame group.
    pub fn d_latent(&self) -> usize {
        FRAMES_PER_CHUNK * self.patch_px() * self.patch_px() * 3
    }

    fn validate(&self) -> Result<()> {
        let g = self.grid_side();
        if g * g != self.tokens_per_chunk || g == 0 {
            return Err(Error::Config("tokens_per_chunk must be a perfect square".into()));
        }
        if self.frame_height != self.frame_width || self.frame_height % g != 0 {
            return Err(Error::Config("frames must be square and divisible by the token grid".into()));
        }
        Ok(())
    }
}

/// Exact linear frame codec.
///
/// Frames are cut into a `g×g` grid of square patches, one token per patch.
/// A 4-frame group flattens each patch to `d = 4·p²·3` values and rotates
/// them by a seeded orthonormal `d×d` matrix; the lone first frame uses a
/// seeded `d×(d/4)` matrix with orthonormal columns. Both maps are
/// isometries, so decoding is the transpose.
#[derive(Debug, Clone)]
pub struct LatentCodec {
    config: CodecConfig,
    /// `d×d`, row-major.
    q_group: Vec<f64>,
    /// `d×(d/4)`, row-major.
    q_first: Vec<f64>,
}

fn orthonormal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    g.qr().q()
}

fn to_row_major(m: &DMatrix<f64>, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; m.nrows() * cols];
    for r in 0..m.nrows() {
        for c in 0..cols {
            out[r * cols + c] = m[(r, c)];
        }
    }
    out
}

impl LatentCodec {
    pub fn new(config: CodecConfig) -> Result<LatentCodec> {
        config.validate()?;
        let d = config.d_latent();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let q_group = to_row_major(&orthonormal(d, &mut rng), d);
        let q_first = to_row_major(&orthonormal(d, &mut rng), d / FRAMES_PER_CHUNK);
        Ok(LatentCodec { config, q_group, q_first })
    }

    /// Process-wide instance for the default configuration.
    pub fn shared_default() -> Arc<LatentCodec> {
        static CODEC: OnceLock<Arc<LatentCodec>> = OnceLock::new();
        CODEC
            .get_or_init(|| Arc::new(LatentCodec::new(CodecConfig::default()).expect("default codec")))
            .clone()
    }

    pub fn config(&self) -> &CodecConfig {
        &self.config
    }

    pub fn tokens(&self) -> usize {
        self.config.tokens_per_chunk
    }

    pub fn dim(&self) -> usize {
        self.config.d_latent()
    }

    fn check_frame(&self, f: &Frame) -> Result<()> {
        if f.height != self.config.frame_height || f.width != self.config.frame_width || f.len() != f.height * f.width * 3 {
            return Err(Error::Shape(format!(
                "frame is {}x{} ({} values), codec expects {}x{}x3",
                f.height,
                f.width,
                f.len(),
                self.config.frame_height,
                self.config.frame_width
            )));
        }
        Ok(())
    }

    /// Gather frames into `[tokens, n_frames·p²·3]`, patch-major.
    fn patchify(&self, frames: &[Frame]) -> Vec<f64> {
        let g = self.config.grid_side();
        let p = self.config.patch_px();
        let per = frames.len() * p * p * 3;
        let mut out = vec![0.0; self.tokens() * per];
        for pr in 0..g {
            for pc in 0..g {
                let base = (pr * g + pc) * per;
                let mut i = 0;
                for f in frames {
                    for r in 0..p {
                        for c in 0..p {
                            let src = f.index(pr * p + r, pc * p + c, 0);
                            for ch in 0..3 {
                                out[base + i] = f.data[src + ch] as f64;
                                i += 1;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn unpatchify(&self, values: &[f64], n_frames: usize) -> Vec<Frame> {
        let g = self.config.grid_side();
        let p = self.config.patch_px();
        let (h, w) = (self.config.frame_height, self.config.frame_width);
        let per = n_frames * p * p * 3;
        let mut frames = vec![Frame::zeros(h, w); n_frames];
        for pr in 0..g {
            for pc in 0..g {
                let base = (pr * g + pc) * per;
                let mut i = 0;
                for f in frames.iter_mut() {
                    for r in 0..p {
                        for c in 0..p {
                            let dst = f.index(pr * p + r, pc * p + c, 0);
                            for ch in 0..3 {
                                f.data[dst + ch] = values[base + i] as f32;
                                i += 1;
                            }
                        }
                    }
                }
            }
        }
        frames
    }

    /// Encode a clean chunk: either exactly 4 frames or the lone first frame.
    pub fn encode_chunk(&self, frames: &[Frame], chunk_index: usize) -> Result<LatentChunk> {
        let span = match frames.len() {
            1 => ChunkSpan::FirstFrame,
            FRAMES_PER_CHUNK => ChunkSpan::Group,
            n => return Err(Error::Shape(format!("a chunk holds 1 or 4 frames, got {n}"))),
        };
        for f in frames {
            self.check_frame(f)?;
        }
        let d = self.dim();
        let t = self.tokens();
        let x = self.patchify(frames);
        let cols = x.len() / t;
        let q = match span {
            ChunkSpan::Group => &self.q_group,
            ChunkSpan::FirstFrame => &self.q_first,
        };
        // z[t×d] = x[t×cols] · Qᵀ, Q is d×cols
        let mut z = vec![0.0f64; t * d];
        gemm(t, cols, d, 1.0, &x, View::rows(cols), q, View::transposed(cols), 0.0, &mut z, View::rows(d));
        Ok(LatentChunk {
            tokens: t,
            dim: d,
            data: z.into_iter().map(|v| v as f32).collect(),
            kind: ChunkKind::Clean,
            span,
            chunk_index,
            t: 1.0,
        })
    }

    /// Inverse of [`encode_chunk`](Self::encode_chunk). Noisy chunks decode
    /// too; the result is only meaningful for visualisation.
    pub fn decode_chunk(&self, z: &LatentChunk) -> Result<Vec<Frame>> {
        if z.tokens != self.tokens() || z.dim != self.dim() || z.data.len() != z.tokens * z.dim {
            return Err(Error::Shape(format!(
                "latent is [{}, {}] with {} values, codec expects [{}, {}]",
                z.tokens,
                z.dim,
                z.data.len(),
                self.tokens(),
                self.dim()
            )));
        }
        let d = self.dim();
        let t = self.tokens();
        let (q, cols, n_frames) = match z.span {
            ChunkSpan::Group => (&self.q_group, d, FRAMES_PER_CHUNK),
            ChunkSpan::FirstFrame => (&self.q_first, d / FRAMES_PER_CHUNK, 1),
        };
        let zd: Vec<f64> = z.data.iter().map(|&v| v as f64).collect();
        // x[t×cols] = z[t×d] · Q
        let mut x = vec![0.0f64; t * cols];
        gemm(t, d, cols, 1.0, &zd, View::rows(d), q, View::rows(cols), 0.0, &mut x, View::rows(cols));
        Ok(self.unpatchify(&x, n_frames))
    }

    /// Write `codec.json` plus the two matrices as tensor files.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let d = self.dim();
        npy::write_f64(&dir.join("codec_group.npy"), &[d, d], &self.q_group)?;
        npy::write_f64(&dir.join("codec_first.npy"), &[d, d / FRAMES_PER_CHUNK], &self.q_first)?;
        let p = dir.join("codec.json");
        fs::write(&p, serde_json::to_vec_pretty(&self.config).expect("config serializes")).map_err(|e| Error::io(&p, e))
    }

    /// Load matrices written by [`save`](Self::save).
    pub fn load(dir: &Path) -> Result<LatentCodec> {
        let p = dir.join("codec.json");
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        let config: CodecConfig = serde_json::from_slice(&bytes).map_err(|e| Error::format(&p, e.to_string()))?;
        config.validate()?;
        let d = config.d_latent();
        let g = npy::read(&dir.join("codec_group.npy"))?;
        let f = npy::read(&dir.join("codec_first.npy"))?;
        if g.shape != [d, d] || f.shape != [d, d / FRAMES_PER_CHUNK] {
            return Err(Error::format(dir, "codec matrix shapes do not match codec.json"));
        }
        Ok(LatentCodec {
            config,
            q_group: g.data,
            q_first: f.data,
        })
    }
}
