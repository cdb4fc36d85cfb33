//! Minimal reader/writer for raw tensor files in the NPY v1.0 layout.
//!
//! File layout:
//!
//! ```text
//! "\x93NUMPY" | major=1 | minor=0 | u16 LE header length | header | data
//! ```
//!
//! The header is an ASCII dict such as
//! `{'descr': '<f4', 'fortran_order': False, 'shape': (13, 32, 32, 3), }`
//! padded with spaces and terminated by `\n` so that the data starts on a
//! 64-byte boundary. Data is little-endian, C-order. Only `<f4` and `<f8`
//! are supported.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8] = b"\x93NUMPY";

/// Element type stored in a tensor file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
        }
    }
}

/// A dense tensor read from disk, always widened to f64 for the caller to narrow.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl RawTensor {
    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }
}

fn header(dtype: Dtype, shape: &[usize]) -> Vec<u8> {
    let dims = match shape.len() {
        0 => String::new(),
        1 => format!("{},", shape[0]),
        _ => shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", "),
    };
    let mut dict = format!("{{'descr': '{}', 'fortran_order': False, 'shape': ({}), }}", dtype.descr(), dims);
    // magic(6) + version(2) + len(2) + dict + '\n' must be a multiple of 64
    let unpadded = MAGIC.len() + 4 + dict.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    dict.push_str(&" ".repeat(pad));
    dict.push('\n');

    let mut out = Vec::with_capacity(unpadded + pad);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out
}

/// Serialize f32 data with the given shape.
pub fn encode_f32(shape: &[usize], data: &[f32]) -> Vec<u8> {
    debug_assert_eq!(shape.iter().product::<usize>(), data.len());
    let mut out = header(Dtype::F32, shape);
    out.reserve(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Serialize f64 data with the given shape.
pub fn encode_f64(shape: &[usize], data: &[f64]) -> Vec<u8> {
    debug_assert_eq!(shape.iter().product::<usize>(), data.len());
    let mut out = header(Dtype::F64, shape);
    out.reserve(data.len() * 8);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_f32(path: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    fs::write(path, encode_f32(shape, data)).map_err(|e| Error::io(path, e))
}

pub fn write_f64(path: &Path, shape: &[usize], data: &[f64]) -> Result<()> {
    fs::write(path, encode_f64(shape, data)).map_err(|e| Error::io(path, e))
}

fn dict_value<'a>(dict: &'a str, key: &str) -> Option<&'a str> {
    let needle = format!("'{key}':");
    let start = dict.find(&needle)? + needle.len();
    Some(dict[start..].trim_start())
}

/// Parse a tensor file from bytes. `origin` is only used in error messages.
pub fn decode(bytes: &[u8], origin: &Path) -> Result<RawTensor> {
    let bad = |m: &str| Error::format(origin, m.to_string());
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(bad("missing tensor magic"));
    }
    if bytes[6] != 1 {
        return Err(bad("unsupported tensor file version"));
    }
    let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let body = 10 + hlen;
    if bytes.len() < body {
        return Err(bad("truncated header"));
    }
    let dict = std::str::from_utf8(&bytes[10..body]).map_err(|_| bad("header is not ASCII"))?;

    let descr = dict_value(dict, "descr").ok_or_else(|| bad("header lacks descr"))?;
    let dtype = if descr.starts_with("'<f4'") {
        Dtype::F32
    } else if descr.starts_with("'<f8'") {
        Dtype::F64
    } else {
        return Err(bad("only <f4 and <f8 tensors are supported"));
    };
    let fortran = dict_value(dict, "fortran_order").ok_or_else(|| bad("header lacks fortran_order"))?;
    if !fortran.starts_with("False") {
        return Err(bad("fortran-order tensors are not supported"));
    }
    let shape_str = dict_value(dict, "shape").ok_or_else(|| bad("header lacks shape"))?;
    let close = shape_str.find(')').ok_or_else(|| bad("unterminated shape"))?;
    let shape = shape_str[1..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| bad("bad shape entry")))
        .collect::<Result<Vec<_>>>()?;

    let n: usize = shape.iter().product();
    let width = match dtype {
        Dtype::F32 => 4,
        Dtype::F64 => 8,
    };
    let payload = &bytes[body..];
    if payload.len() != n * width {
        return Err(bad(&format!(
            "expected {} data bytes for shape {:?}, found {}",
            n * width,
            shape,
            payload.len()
        )));
    }
    let data = match dtype {
        Dtype::F32 => payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
    };
    Ok(RawTensor { dtype, shape, data })
}

pub fn read(path: &Path) -> Result<RawTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_64_byte_aligned() {
        for shape in [vec![], vec![3], vec![13, 32, 32, 3]] {
            let n = shape.iter().product::<usize>();
            let bytes = encode_f32(&shape, &vec![0.0; n]);
            assert_eq!((bytes.len() - 4 * n) % 64, 0);
        }
    }

    #[test]
    fn roundtrip_f32_and_f64() {
        let data = [1.5f32, -2.0, 3.25, 0.0, 7.0, -0.5];
        let t = decode(&encode_f32(&[2, 3], &data), Path::new("mem")).unwrap();
        assert_eq!(t.dtype, Dtype::F32);
        assert_eq!(t.shape, vec![2, 3]);
        assert_eq!(t.to_f32(), data);

        let d64 = [1.0f64 / 3.0, 2.0];
        let t = decode(&encode_f64(&[2], &d64), Path::new("mem")).unwrap();
        assert_eq!(t.data, d64);
    }

    #[test]
    fn rejects_truncated_payload() {
        let mut bytes = encode_f32(&[4], &[1.0, 2.0, 3.0, 4.0]);
        bytes.pop();
        assert!(decode(&bytes, Path::new("mem")).is_err());
    }
}
