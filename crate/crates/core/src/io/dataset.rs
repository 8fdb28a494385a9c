//! On-disk layouts for phantom and variant datasets.
//!
//! Phantom directory: `<id>_bones.pgm`, `<id>_nobones.pgm`, `<id>_mask.pgm`
//! and a `<id>.json` sidecar per sample. Variant directory: `<id>_v01.pgm`
//! … `<id>_v04.pgm`, `<id>_mask01.pgm`, `<id>_mask02.pgm` and
//! `variants.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pgm::{read_pgm, write_mask_pgm, write_pgm, PgmDepth};
use crate::error::{Error, Result};
use crate::image::{dice, Image, Mask};
use crate::phantom::{PhantomSample, Sidecar};
use crate::variants::{MaskParams, Variant, VariantSet};

pub const VARIANTS_INDEX: &str = "variants.json";

pub fn phantom_id(i: usize) -> String {
    format!("ph{i:04}")
}

/// Writes every sample and returns the files written.
pub fn export_phantoms(dir: &Path, samples: &[PhantomSample]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(samples.len() * 4);
    for (i, p) in samples.iter().enumerate() {
        let id = phantom_id(i);
        let bones = dir.join(format!("{id}_bones.pgm"));
        let nobones = dir.join(format!("{id}_nobones.pgm"));
        let mask = dir.join(format!("{id}_mask.pgm"));
        let side = dir.join(format!("{id}.json"));
        write_pgm(&bones, &p.image_bones, PgmDepth::Sixteen)?;
        write_pgm(&nobones, &p.image_nobones, PgmDepth::Sixteen)?;
        write_mask_pgm(&mask, &p.lung_mask)?;
        let sidecar = Sidecar {
            id,
            label: p.label,
            nodule: p.nodule.clone(),
        };
        fs::write(&side, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&side, e))?;
        written.extend([bones, nobones, mask, side]);
    }
    Ok(written)
}

/// A subject read back from a phantom directory.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredPhantom {
    pub sidecar: Sidecar,
    pub bones: Image,
    pub nobones: Image,
    pub mask: Mask,
    pub files: Vec<PathBuf>,
}

/// Reads every sidecar in `dir` (sorted by id) together with its images.
pub fn load_phantom_dir(dir: &Path) -> Result<Vec<StoredPhantom>> {
    let mut sidecars = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_sidecar = path.extension().is_some_and(|e| e == "json")
            && path
                .file_stem()
                .and_then(|s| s.to_str())
                .is_some_and(|s| dir.join(format!("{s}_bones.pgm")).is_file());
        if is_sidecar {
            sidecars.push(path);
        }
    }
    sidecars.sort();
    if sidecars.is_empty() {
        return Err(Error::usage(format!("no phantom samples found in {}", dir.display())));
    }
    sidecars
        .into_iter()
        .map(|side| {
            let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::format(&side, e.to_string()))?;
            let id = sidecar.id.clone();
            let bones_p = dir.join(format!("{id}_bones.pgm"));
            let nobones_p = dir.join(format!("{id}_nobones.pgm"));
            let mask_p = dir.join(format!("{id}_mask.pgm"));
            let mask = image_to_mask(&read_pgm(&mask_p)?, &mask_p)?;
            Ok(StoredPhantom {
                bones: read_pgm(&bones_p)?,
                nobones: read_pgm(&nobones_p)?,
                mask,
                files: vec![bones_p, nobones_p, mask_p, side],
                sidecar,
            })
        })
        .collect()
}

/// Mask PGMs store {0, maxval}; anything at or above half scale is foreground.
pub fn image_to_mask(im: &Image, origin: &Path) -> Result<Mask> {
    let data = im.data().iter().map(|&v| u8::from(v >= 0.5)).collect();
    Mask::new(im.width(), im.height(), data).map_err(|e| Error::format(origin, e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantEntry {
    pub id: String,
    pub label: Option<u8>,
    pub dice_mask01: Option<f64>,
    pub dice_mask02: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantIndex {
    pub mask_params: MaskParams,
    pub entries: Vec<VariantEntry>,
}

/// Writes the variant images and masks plus `variants.json`.
pub fn export_variants(
    dir: &Path,
    items: &[(String, Option<u8>, Option<&Mask>, &VariantSet)],
    mask_params: MaskParams,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut entries = Vec::with_capacity(items.len());
    for (id, label, truth, set) in items {
        for v in Variant::ALL {
            let p = dir.join(format!("{id}_{}.pgm", v.tag()));
            write_pgm(&p, set.get(v), PgmDepth::Sixteen)?;
            written.push(p);
        }
        for (name, m) in [("mask01", &set.mask01), ("mask02", &set.mask02)] {
            let p = dir.join(format!("{id}_{name}.pgm"));
            write_mask_pgm(&p, m)?;
            written.push(p);
        }
        let (d1, d2) = match truth {
            Some(t) => (Some(dice(&set.mask01, t)?), Some(dice(&set.mask02, t)?)),
            None => (None, None),
        };
        entries.push(VariantEntry {
            id: id.clone(),
            label: *label,
            dice_mask01: d1,
            dice_mask02: d2,
        });
    }
    let index = dir.join(VARIANTS_INDEX);
    let text = serde_json::to_string_pretty(&VariantIndex { mask_params, entries })?;
    fs::write(&index, text).map_err(|e| Error::io(&index, e))?;
    written.push(index);
    Ok(written)
}

/// (id, image, label)
pub type LabelledImage = (String, Image, Option<u8>);

/// Reads one variant of a variant directory. Also returns the files read.
pub fn load_variant(dir: &Path, variant: Variant) -> Result<(VariantIndex, Vec<LabelledImage>, Vec<PathBuf>)> {
    let index_path = dir.join(VARIANTS_INDEX);
    let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let index: VariantIndex = serde_json::from_str(&text).map_err(|e| Error::format(&index_path, e.to_string()))?;
    let mut files = vec![index_path];
    let mut out = Vec::with_capacity(index.entries.len());
    for e in &index.entries {
        let p = dir.join(format!("{}_{}.pgm", e.id, variant.tag()));
        out.push((e.id.clone(), read_pgm(&p)?, e.label));
        files.push(p);
    }
    Ok((index, out, files))
}
