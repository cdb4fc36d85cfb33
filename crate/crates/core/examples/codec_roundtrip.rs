//! Encode a 4-frame chunk into latent tokens and decode it back.
//!
//! ```text
//! cargo run --release --example codec_roundtrip
//! ```

use anyhow::Result;
use tv2tv::codec::LatentCodec;
use tv2tv::toyworld::{gen_episode, Policy};

fn main() -> Result<()> {
    let codec = LatentCodec::shared_default();
    let ep = gen_episode(7, 3, Policy::Random)?;
    println!("{} tokens × {} dims per chunk", codec.tokens(), codec.dim());
    for k in 1..=ep.n_chunks() {
        let frames = ep.chunk_frames(k);
        let z = codec.encode_chunk(frames, k)?;
        let back = codec.decode_chunk(&z)?;
        let err = frames
            .iter()
            .zip(&back)
            .flat_map(|(a, b)| a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()))
            .fold(0.0f32, f32::max);
        println!(
            "chunk {k}: ‖z‖ = {:.3}, checksum {}, max |decode(encode(x)) − x| = {err:.2e}",
            z.l2(),
            z.checksum()
        );
    }
    Ok(())
}
