//! Image files, real-dataset pairing and run manifests.

mod dataset;
mod manifest;
mod pairs;
mod pgm;
mod raw;

pub use dataset::{
    export_phantoms, export_variants, image_to_mask, load_phantom_dir, load_variant, phantom_id, StoredPhantom,
    VariantEntry, VariantIndex, VARIANTS_INDEX,
};
pub use manifest::{sha256_file, RunManifest};
pub use pairs::{pair_datasets, ImagePair, Pairing};
pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_mask_pgm, write_pgm, PgmDepth};
pub use raw::{decode_raw, load_raw, ByteOrder, RawLoaderConfig};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::Image;

/// How to decode an image file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case")]
pub enum ImageFormat {
    Pgm {
        #[serde(default)]
        invert: bool,
    },
    Raw(RawLoaderConfig),
}

impl Default for ImageFormat {
    fn default() -> Self {
        ImageFormat::Pgm { invert: false }
    }
}

/// Loads a grayscale image scaled to [0,1].
pub fn load_image(path: &Path, format: &ImageFormat) -> Result<Image> {
    match format {
        ImageFormat::Pgm { invert } => {
            let im = read_pgm(path)?;
            Ok(if *invert { im.inverted() } else { im })
        }
        ImageFormat::Raw(cfg) => load_raw(path, cfg),
    }
}
