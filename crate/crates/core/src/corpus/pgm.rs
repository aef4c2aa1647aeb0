//! Binary 8-bit PGM (P5).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Grayscale in `[0, 1]` to the nearest 8-bit level.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn level(b: u8) -> f32 {
    b as f32 / 255.0
}

pub fn encode(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let (c, h, w) = image.dims3()?;
    if c != 1 {
        return Err(Error::dim("channels", 1, c));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn write(path: &Path, image: &Tensor<f32>) -> Result<()> {
    fs::write(path, encode(image)?).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|msg| Error::Parse {
        path: path.to_path_buf(),
        msg,
    })
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Tensor<f32>, String> {
    let mut pos = 0;
    let mut fields = [0usize; 3];
    let magic = token(bytes, &mut pos).ok_or("missing header")?;
    if magic != b"P5" {
        return Err(format!("unsupported magic {:?}", String::from_utf8_lossy(magic)));
    }
    for (i, name) in ["width", "height", "maxval"].iter().enumerate() {
        let t = token(bytes, &mut pos).ok_or_else(|| format!("truncated header: missing {name}"))?;
        fields[i] = std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("bad {name} {:?}", String::from_utf8_lossy(t)))?;
    }
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let n = w * h;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() < n {
        return Err(format!("truncated raster: expected {n} bytes, found {}", raster.len()));
    }
    if raster.len() > n {
        return Err(format!("{} trailing bytes after raster", raster.len() - n));
    }
    let scale = maxval as f32;
    let data = if maxval == 255 {
        raster.iter().map(|&b| level(b)).collect()
    } else {
        raster.iter().map(|&b| (b as f32 / scale).min(1.0)).collect()
    };
    Tensor::new(vec![1, h, w], data).map_err(|e| e.to_string())
}

fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if bytes.get(*pos) == Some(&b'#') {
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
    (*pos > start).then(|| &bytes[start..*pos])
}
