use std::path::Path;

use super::Frame;
use crate::error::{Error, Result};

/// 8-bit RGB PNG bytes of a frame.
pub fn encode_png(frame: &Frame) -> Vec<u8> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, frame.width as u32, frame.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().expect("in-memory PNG header");
    w.write_image_data(&frame.to_rgb8()).expect("in-memory PNG data");
    drop(w);
    out
}

/// Decode an 8-bit RGB or RGBA PNG (alpha is dropped).
pub fn decode_png(bytes: &[u8]) -> Result<Frame> {
    let bad = |e: png::DecodingError| Error::Image(e.to_string());
    let mut reader = png::Decoder::new(bytes).read_info().map_err(bad)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Image(format!("expected 8-bit channels, got {:?}", info.bit_depth)));
    }
    let data = &buf[..info.buffer_size()];
    let rgb: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => data.to_vec(),
        png::ColorType::Rgba => data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        c => return Err(Error::Image(format!("expected RGB or RGBA, got {c:?}"))),
    };
    Frame::from_rgb8(info.height as usize, info.width as usize, &rgb)
}

pub fn write_png(path: &Path, frame: &Frame) -> Result<()> {
    std::fs::write(path, encode_png(frame)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toyworld::{render, WorldConfig, WorldState};

    #[test]
    fn png_roundtrip_is_exact_at_8_bits() {
        let cfg = WorldConfig::default();
        let f = render(&WorldState::new((4, 9), 3, 2, &cfg), &cfg);
        let back = decode_png(&encode_png(&f)).unwrap();
        assert_eq!((back.height, back.width), (32, 32));
        assert_eq!(back.to_rgb8(), f.to_rgb8());
        assert!(decode_png(b"not a png").is_err());
    }
}
