//! Binary (P5) PGM. Depth follows maxval: up to 255 is one byte per pixel,
//! otherwise two bytes, most significant first.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgmDepth {
    Eight,
    Sixteen,
}

impl PgmDepth {
    fn maxval(self) -> u32 {
        match self {
            PgmDepth::Eight => 255,
            PgmDepth::Sixteen => 65535,
        }
    }
}

pub fn read_pgm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|msg| Error::format(path, msg))
}

pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<&[u8], String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PGM header".into());
        }
        Ok(&bytes[start..pos])
    };
    if token()? != b"P5" {
        return Err("not a binary PGM (missing P5 magic)".into());
    }
    let mut number = |what: &str| -> std::result::Result<usize, String> {
        let t = token()?;
        std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("bad {what} in PGM header"))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if width == 0 || height == 0 {
        return Err("PGM has an empty raster".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("PGM maxval {maxval} outside 1..=65535"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing separator after PGM header".into());
    }
    let raster = &bytes[pos + 1..];
    let bpp = if maxval < 256 { 1 } else { 2 };
    let expected = width * height * bpp;
    if raster.len() != expected {
        return Err(format!("PGM raster holds {} bytes, expected {expected}", raster.len()));
    }
    let scale = maxval as f32;
    let data = if bpp == 1 {
        raster.iter().map(|&v| (f32::from(v) / scale).min(1.0)).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| (f32::from(u16::from_be_bytes([c[0], c[1]])) / scale).min(1.0))
            .collect()
    };
    Image::new(width, height, data).map_err(|e| e.to_string())
}

/// Quantizes `round(clamp(v,0,1) * maxval)`.
pub fn encode_pgm(image: &Image, depth: PgmDepth) -> Vec<u8> {
    let maxval = depth.maxval();
    let mut out = format!("P5\n{} {}\n{maxval}\n", image.width(), image.height()).into_bytes();
    for &v in image.data() {
        let q = (v.clamp(0.0, 1.0) * maxval as f32).round() as u32;
        match depth {
            PgmDepth::Eight => out.push(q as u8),
            PgmDepth::Sixteen => out.extend_from_slice(&(q as u16).to_be_bytes()),
        }
    }
    out
}

pub fn write_pgm(path: &Path, image: &Image, depth: PgmDepth) -> Result<()> {
    fs::write(path, encode_pgm(image, depth)).map_err(|e| Error::io(path, e))
}

/// Masks are stored as 8-bit PGM with values {0,255}.
pub fn write_mask_pgm(path: &Path, mask: &Mask) -> Result<()> {
    write_pgm(path, &mask.to_image(), PgmDepth::Eight)
}
