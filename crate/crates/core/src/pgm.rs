//! Binary (P5) 8-bit PGM reading and writing.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Quantizes an intensity in `[0, 1]` to a byte.
pub fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn from_byte(b: u8) -> f32 {
    b as f32 / 255.0
}

pub fn encode(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn write(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    debug_assert_eq!(pixels.len(), width * height);
    fs::write(path, encode(width, height, pixels)).map_err(|e| Error::io(path, e))
}

/// Reads a P5 file, returning `(width, height, pixels)`.
pub fn read(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|reason| Error::CorruptImage {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn decode(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<u8>), String> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() {
            if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(format!("unsupported magic {:?}", fields[0]));
    }
    let parse = |s: &str, what: &str| s.parse::<usize>().map_err(|_| format!("bad {what} {s:?}"));
    let width = parse(&fields[1], "width")?;
    let height = parse(&fields[2], "height")?;
    let maxval = parse(&fields[3], "maxval")?;
    if maxval != 255 {
        return Err(format!("only 8-bit PGM is supported, maxval {maxval}"));
    }
    if width == 0 || height == 0 {
        return Err("zero-sized image".into());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = width * height;
    if bytes.len() < pos + need {
        return Err(format!("raster has {} bytes, expected {need}", bytes.len().saturating_sub(pos)));
    }
    if bytes.len() > pos + need {
        return Err("trailing bytes after raster".into());
    }
    Ok((width, height, bytes[pos..pos + need].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_handles_comments() {
        let mut b = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        b.extend_from_slice(&[7, 9]);
        assert_eq!(decode(&b).unwrap(), (2, 1, vec![7, 9]));
    }

    #[test]
    fn decode_rejects_short_raster_and_bad_magic() {
        let b = encode(3, 2, &[1, 2, 3, 4, 5, 6]);
        assert!(decode(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[1] = b'2';
        assert!(decode(&bad).is_err());
    }

    #[test]
    fn byte_quantization_round_trips() {
        for b in 0..=255u8 {
            assert_eq!(to_byte(from_byte(b)), b);
        }
    }
}
