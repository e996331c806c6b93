//! Image files: binary PPM (P6), PGM (P5) and little-endian PFM.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::diffcore::{Real, Tensor};
use crate::error::{Error, Result};

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes` to `path` through a temporary file and rename.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// `[3, H, W]` in `[0, 1]` to P6.
pub fn encode_ppm<T: Real>(image: &Tensor<T>) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::dim(format!("PPM needs a [3, H, W] image, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = image.data();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push(to_u8(d[c * h * w + y * w + x].f64()));
            }
        }
    }
    Ok(out)
}

/// `[H, W]` in `[0, 1]` to P5.
pub fn encode_pgm<T: Real>(image: &Tensor<T>) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.len() != 2 {
        return Err(Error::dim(format!("PGM needs an [H, W] image, got {s:?}")));
    }
    let mut out = format!("P5\n{} {}\n255\n", s[1], s[0]).into_bytes();
    out.extend(image.data().iter().map(|v| to_u8(v.f64())));
    Ok(out)
}

/// `[H, W]` to a grayscale PFM: scale `-1.0` (little-endian), rows stored
/// bottom to top.
pub fn encode_pfm<T: Real>(map: &Tensor<T>) -> Result<Vec<u8>> {
    let s = map.shape();
    if s.len() != 2 {
        return Err(Error::dim(format!("PFM needs an [H, W] map, got {s:?}")));
    }
    let (h, w) = (s[0], s[1]);
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&(map.data()[y * w + x].f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_ppm<T: Real>(path: &Path, image: &Tensor<T>) -> Result<()> {
    write_atomic(path, &encode_ppm(image)?)
}

pub fn write_pgm<T: Real>(path: &Path, image: &Tensor<T>) -> Result<()> {
    write_atomic(path, &encode_pgm(image)?)
}

pub fn write_pfm<T: Real>(path: &Path, map: &Tensor<T>) -> Result<()> {
    write_atomic(path, &encode_pfm(map)?)
}

/// Splits a Netpbm-style header of `fields` whitespace-separated tokens,
/// returning them and the offset of the payload (after one whitespace byte).
fn header(bytes: &[u8], fields: usize) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < fields {
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
            return Err(Error::Format { field: "header", detail: "truncated header".into() });
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if i >= bytes.len() {
        return Err(Error::Format { field: "header", detail: "missing payload".into() });
    }
    Ok((tokens, i + 1))
}

fn parse_dim(s: &str, field: &'static str) -> Result<usize> {
    match s.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(Error::Format { field, detail: format!("bad dimension `{s}`") }),
    }
}

fn netpbm(bytes: &[u8], magic: &str, channels: usize) -> Result<Tensor<f32>> {
    let (tok, off) = header(bytes, 4)?;
    if tok[0] != magic {
        return Err(Error::Format { field: "magic", detail: format!("expected {magic}, found {}", tok[0]) });
    }
    let w = parse_dim(&tok[1], "width")?;
    let h = parse_dim(&tok[2], "height")?;
    if tok[3] != "255" {
        return Err(Error::Format { field: "maxval", detail: format!("only 255 supported, found {}", tok[3]) });
    }
    let n = w * h * channels;
    let payload = &bytes[off..];
    if payload.len() < n {
        return Err(Error::Format { field: "payload", detail: format!("{} bytes, need {n}", payload.len()) });
    }
    let shape: Vec<usize> = if channels == 1 { vec![h, w] } else { vec![channels, h, w] };
    let mut out = Tensor::zeros(&shape);
    let d = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            for c in 0..channels {
                d[c * h * w + y * w + x] = payload[(y * w + x) * channels + c] as f32 / 255.0;
            }
        }
    }
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    netpbm(bytes, "P6", 3)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor<f32>> {
    netpbm(bytes, "P5", 1)
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let (tok, off) = header(bytes, 4)?;
    if tok[0] != "Pf" {
        return Err(Error::Format { field: "magic", detail: format!("expected Pf, found {}", tok[0]) });
    }
    let w = parse_dim(&tok[1], "width")?;
    let h = parse_dim(&tok[2], "height")?;
    let scale: f64 = tok[3].parse().map_err(|_| Error::Format { field: "scale", detail: tok[3].clone() })?;
    if scale == 0.0 {
        return Err(Error::Format { field: "scale", detail: "zero scale".into() });
    }
    let little = scale < 0.0;
    let payload = &bytes[off..];
    if payload.len() < 4 * w * h {
        return Err(Error::Format { field: "payload", detail: format!("{} bytes, need {}", payload.len(), 4 * w * h) });
    }
    let mut out = Tensor::zeros(&[h, w]);
    for (i, chunk) in payload[..4 * w * h].chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (row, x) = (i / w, i % w);
        out.data_mut()[(h - 1 - row) * w + x] = v;
    }
    Ok(out)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Tensor<f32>> {
    decode_ppm(&read(path)?)
}

pub fn read_pgm(path: &Path) -> Result<Tensor<f32>> {
    decode_pgm(&read(path)?)
}

pub fn read_pfm(path: &Path) -> Result<Tensor<f32>> {
    decode_pfm(&read(path)?)
}

/// Color visualization of inverse depth: `1/d` normalized to `[0, 1]` by
/// its min and max, mapped through a piecewise-linear ramp
/// black → purple → orange → pale yellow.
pub fn colorize_inverse_depth<T: Real>(depth: &Tensor<T>) -> Result<Tensor<f32>> {
    const STOPS: [(f64, [f64; 3]); 4] = [
        (0.0, [0.0, 0.0, 0.02]),
        (0.35, [0.45, 0.07, 0.50]),
        (0.7, [0.95, 0.45, 0.15]),
        (1.0, [0.99, 0.99, 0.75]),
    ];
    let s = depth.shape();
    if s.len() != 2 {
        return Err(Error::dim(format!("depth must be [H, W], got {s:?}")));
    }
    let inv: Vec<f64> = depth.data().iter().map(|d| 1.0 / d.f64().max(1e-12)).collect();
    let lo = inv.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = inv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = inv.len();
    let mut out = Tensor::zeros(&[3, s[0], s[1]]);
    for (i, v) in inv.iter().enumerate() {
        let t = (v - lo) / span;
        let k = STOPS.iter().rposition(|(p, _)| *p <= t).unwrap_or(0).min(STOPS.len() - 2);
        let (p0, c0) = STOPS[k];
        let (p1, c1) = STOPS[k + 1];
        let f = ((t - p0) / (p1 - p0)).clamp(0.0, 1.0);
        for c in 0..3 {
            out.data_mut()[c * n + i] = (c0[c] + f * (c1[c] - c0[c])) as f32;
        }
    }
    Ok(out)
}
