//! Binary PGM (P5, maxval 255) reader/writer used as the carrier for
//! receptive-field heatmaps. Pixel bytes map linearly to [0, 1].

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<Vec<u8>> {
    // skip whitespace and '#' comments
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::BadPgm("unexpected end of header".into()));
    }
    Ok(bytes[start..*pos].to_vec())
}

fn parse_usize(tok: &[u8]) -> Result<usize> {
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::BadPgm("bad header number".into()))
}

/// Read a binary P5 PGM into a Tensor(1, H, W) with values in [0, 1].
pub fn pgm_read(path: impl AsRef<Path>) -> Result<Tensor> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let magic = next_token(&bytes, &mut pos)?;
    if magic != b"P5" {
        return Err(Error::BadPgm("not a binary P5 file".into()));
    }
    let w = parse_usize(&next_token(&bytes, &mut pos)?)?;
    let h = parse_usize(&next_token(&bytes, &mut pos)?)?;
    let maxval = parse_usize(&next_token(&bytes, &mut pos)?)?;
    if maxval != 255 {
        return Err(Error::BadPgm(format!("maxval {} != 255", maxval)));
    }
    pos += 1; // single whitespace after maxval
    if bytes.len() < pos + w * h {
        return Err(Error::BadPgm("truncated pixel data".into()));
    }
    let data = bytes[pos..pos + w * h]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    Tensor::new(vec![1, h, w], data)
}

/// Write a Tensor(1, H, W) or Tensor(H, W) with values in [0, 1] as a
/// binary P5 PGM. Values map to bytes by x * 255 rounded half-up.
pub fn pgm_write(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let (h, w) = match t.dims() {
        [1, h, w] => (*h, *w),
        [h, w] => (*h, *w),
        other => {
            return Err(Error::ShapeMismatch(format!(
                "pgm_write expects (1,H,W) or (H,W), got {:?}",
                other
            )))
        }
    };
    let mut f = File::create(path)?;
    write!(f, "P5\n{} {}\n255\n", w, h)?;
    let pixels: Vec<u8> = t
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    f.write_all(&pixels)?;
    Ok(())
}
