//! Text tokenizer and the exact frame codec.

mod latent;
mod vocab;

pub use latent::{checksum_f32, ChunkKind, ChunkSpan, CodecConfig, LatentChunk, LatentCodec};
pub use vocab::{Vocab, BOF, BOS, EOF, EOS, N_SPECIALS, PAD, SPECIAL_NAMES};
