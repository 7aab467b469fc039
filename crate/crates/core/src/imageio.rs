//! 8-bit netpbm images: P6 colour pixmaps and P5 greymaps.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a `[3,H,W]` image in `[0,1]` as P6 bytes.
pub fn encode_ppm<T: Real>(image: &Tensor<T>) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::shape("encode_ppm", &[3, 0, 0], s));
    }
    let (h, w) = (s[1], s[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = image.data();
    out.reserve(3 * h * w);
    for p in 0..h * w {
        for c in 0..3 {
            out.push(quantize(d[c * h * w + p].as_f64()));
        }
    }
    Ok(out)
}

/// Encodes a 0/1 (or `[0,1]`) single-channel map as P5 bytes.
pub fn encode_pgm(values: &[f64], height: usize, width: usize) -> Result<Vec<u8>> {
    if values.len() != height * width {
        return Err(Error::shape("encode_pgm", &[height, width], &[values.len()]));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| quantize(v)));
    Ok(out)
}

fn header(bytes: &[u8], magic: &str, path: &Path) -> Result<(usize, usize, usize)> {
    let bad = |reason: &str| Error::invalid("netpbm", format!("{}: {reason}", path.display()));
    let mut fields = Vec::with_capacity(4);
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..i]).map_err(|_| bad("bad header"))?);
    }
    if fields[0] != magic {
        return Err(bad(&format!("expected {magic}, found {}", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if max != 255 || w == 0 || h == 0 {
        return Err(bad("only non-empty 8-bit images are supported"));
    }
    Ok((w, h, i + 1))
}

/// Decodes P6 bytes into a `[3,H,W]` image in `[0,1]`.
pub fn decode_ppm<T: Real>(bytes: &[u8], path: &Path) -> Result<Tensor<T>> {
    let (w, h, off) = header(bytes, "P6", path)?;
    let body = &bytes[off.min(bytes.len())..];
    if body.len() < 3 * w * h {
        return Err(Error::invalid(
            "netpbm",
            format!("{}: pixel data truncated", path.display()),
        ));
    }
    let mut data = vec![T::zero(); 3 * h * w];
    for p in 0..h * w {
        for c in 0..3 {
            data[c * h * w + p] = T::of(body[3 * p + c] as f64 / 255.0);
        }
    }
    Tensor::new(&[3, h, w], data)
}

pub fn write_ppm<T: Real>(path: &Path, image: &Tensor<T>) -> Result<()> {
    fs::write(path, encode_ppm(image)?).map_err(|e| Error::io(path, e))
}

pub fn read_ppm<T: Real>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes, path)
}

pub fn write_pgm(path: &Path, values: &[f64], height: usize, width: usize) -> Result<()> {
    fs::write(path, encode_pgm(values, height, width)?).map_err(|e| Error::io(path, e))
}
