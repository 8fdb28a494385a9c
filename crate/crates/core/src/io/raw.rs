//! Headerless raw rasters with user-supplied geometry.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ByteOrder {
    Big,
    Little,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawLoaderConfig {
    pub width: usize,
    pub height: usize,
    pub bytes_per_pixel: usize,
    pub byte_order: ByteOrder,
    /// Sample value that maps to 1.0.
    pub max_value: u32,
    #[serde(default)]
    pub invert: bool,
}

impl RawLoaderConfig {
    pub fn expected_bytes(&self) -> usize {
        self.width * self.height * self.bytes_per_pixel
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("raw width and height must be positive"));
        }
        if !matches!(self.bytes_per_pixel, 1 | 2) {
            return Err(Error::config("raw bytes_per_pixel must be 1 or 2"));
        }
        if self.max_value == 0 {
            return Err(Error::config("raw max_value must be positive"));
        }
        Ok(())
    }
}

pub fn load_raw(path: &Path, cfg: &RawLoaderConfig) -> Result<Image> {
    cfg.validate()?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raw(&bytes, cfg).map_err(|msg| Error::format(path, msg))
}

pub fn decode_raw(bytes: &[u8], cfg: &RawLoaderConfig) -> std::result::Result<Image, String> {
    cfg.validate().map_err(|e| e.to_string())?;
    let expected = cfg.expected_bytes();
    if bytes.len() != expected {
        return Err(format!(
            "raw file has {} bytes, expected {expected} ({}x{}x{})",
            bytes.len(),
            cfg.width,
            cfg.height,
            cfg.bytes_per_pixel
        ));
    }
    let scale = cfg.max_value as f32;
    let norm = |v: u16| {
        let x = (f32::from(v) / scale).clamp(0.0, 1.0);
        if cfg.invert {
            1.0 - x
        } else {
            x
        }
    };
    let data = match (cfg.bytes_per_pixel, cfg.byte_order) {
        (1, _) => bytes.iter().map(|&b| norm(u16::from(b))).collect(),
        (_, ByteOrder::Big) => bytes
            .chunks_exact(2)
            .map(|c| norm(u16::from_be_bytes([c[0], c[1]])))
            .collect(),
        (_, ByteOrder::Little) => bytes
            .chunks_exact(2)
            .map(|c| norm(u16::from_le_bytes([c[0], c[1]])))
            .collect(),
    };
    Image::new(cfg.width, cfg.height, data).map_err(|e| e.to_string())
}
