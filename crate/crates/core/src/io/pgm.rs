//! Binary PGM (P5, maxval 255) frame dumps.

use std::path::Path;

use crate::error::{check_dim, CvfError, Result};
use crate::io::container::write_atomic;

/// Encodes a single-channel frame with values in `[0, 1]`.
pub fn encode_pgm(frame: &[f32], height: usize, width: usize) -> Result<Vec<u8>> {
    check_dim(height * width, frame.len())?;
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(frame.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn write_pgm(path: &Path, frame: &[f32], height: usize, width: usize) -> Result<()> {
    write_atomic(path, &encode_pgm(frame, height, width)?)
}

/// Decodes a P5 image with maxval 255 into `(pixels / 255, height, width)`.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<(Vec<f32>, usize, usize)> {
    let bad = |detail: &str| CvfError::Malformed {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("header ends early"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    if fields[0] != "P5" {
        return Err(CvfError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("non-numeric header field"));
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    let data = &bytes[pos + 1..];
    if data.len() < width * height {
        return Err(CvfError::Truncated {
            path: path.to_path_buf(),
            detail: format!("{} of {} pixels present", data.len(), width * height),
        });
    }
    let pixels = data[..width * height].iter().map(|&b| b as f32 / 255.0).collect();
    Ok((pixels, height, width))
}
