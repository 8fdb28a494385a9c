//! Mask prediction and the four preprocessing variants: raw (#01), bone-free
//! (#02), raw masked to the predicted lungs (#03) and bone-free masked (#04).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{apply_mask, binarize_mask, Image, Mask};
use crate::model::Model;
use crate::tensor::{Exec, Tensor};

pub const DEFAULT_THRESHOLD: f32 = 0.5;
pub const DEFAULT_KEEP_COMPONENTS: usize = 2;

const PREDICT_BATCH: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "v01")]
    Raw,
    #[serde(rename = "v02")]
    BoneFree,
    #[serde(rename = "v03")]
    Segmented,
    #[serde(rename = "v04")]
    SegmentedBoneFree,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Raw,
        Variant::BoneFree,
        Variant::Segmented,
        Variant::SegmentedBoneFree,
    ];

    /// `v01` … `v04`, as used in file names.
    pub fn tag(self) -> &'static str {
        match self {
            Variant::Raw => "v01",
            Variant::BoneFree => "v02",
            Variant::Segmented => "v03",
            Variant::SegmentedBoneFree => "v04",
        }
    }

    /// `#01` … `#04`.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Raw => "#01",
            Variant::BoneFree => "#02",
            Variant::Segmented => "#03",
            Variant::SegmentedBoneFree => "#04",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariantSet {
    pub v01: Image,
    pub v02: Image,
    pub v03: Image,
    pub v04: Image,
    pub mask01: Mask,
    pub mask02: Mask,
}

impl VariantSet {
    pub fn get(&self, v: Variant) -> &Image {
        match v {
            Variant::Raw => &self.v01,
            Variant::BoneFree => &self.v02,
            Variant::Segmented => &self.v03,
            Variant::SegmentedBoneFree => &self.v04,
        }
    }
}

/// Mask-building settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskParams {
    pub threshold: f32,
    pub keep_components: usize,
}

impl MaskParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::usage(format!("threshold {} outside (0,1)", self.threshold)));
        }
        Ok(())
    }
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            keep_components: DEFAULT_KEEP_COMPONENTS,
        }
    }
}

/// Per-pixel lung probabilities for one image at the segmenter's resolution.
pub fn predict_mask(segmenter: &Model, exec: &Exec, image: &Image) -> Result<Image> {
    Ok(predict_masks(segmenter, exec, &[image])?.remove(0))
}

/// Batched [`predict_mask`].
pub fn predict_masks(segmenter: &Model, exec: &Exec, images: &[&Image]) -> Result<Vec<Image>> {
    let s = segmenter.input_size();
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(PREDICT_BATCH) {
        if let Some(bad) = chunk.iter().find(|im| im.dims() != (s, s)) {
            return Err(Error::shape(format!(
                "segmenter expects {s}x{s} images, got {:?}",
                bad.dims()
            )));
        }
        let parts: Vec<Tensor> = chunk.iter().map(|im| im.to_tensor()).collect();
        let refs: Vec<&Tensor> = parts.iter().collect();
        let probs = segmenter.predict(exec, &Tensor::stack_outer(&refs)?)?;
        for plane in probs.data().chunks_exact(s * s) {
            out.push(Image::from_plane(s, s, plane)?);
        }
    }
    Ok(out)
}

/// Builds the variant set for one bones / bone-free pair. Each source image
/// gets its own predicted mask.
pub fn build_variants(
    bones: &Image,
    nobones: &Image,
    segmenter: &Model,
    exec: &Exec,
    params: MaskParams,
) -> Result<VariantSet> {
    Ok(build_variant_sets(&[(bones, nobones)], segmenter, exec, params)?.remove(0))
}

/// Batched [`build_variants`].
pub fn build_variant_sets(
    pairs: &[(&Image, &Image)],
    segmenter: &Model,
    exec: &Exec,
    params: MaskParams,
) -> Result<Vec<VariantSet>> {
    if let Some((a, b)) = pairs.iter().find(|(a, b)| a.dims() != b.dims()) {
        return Err(Error::shape(format!(
            "paired images differ in size: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let bones: Vec<&Image> = pairs.iter().map(|p| p.0).collect();
    let nobones: Vec<&Image> = pairs.iter().map(|p| p.1).collect();
    let p01 = predict_masks(segmenter, exec, &bones)?;
    let p02 = predict_masks(segmenter, exec, &nobones)?;
    pairs
        .iter()
        .zip(p01.iter().zip(&p02))
        .map(|((b, nb), (q1, q2))| {
            let mask01 = binarize_mask(q1, params.threshold, params.keep_components)?;
            let mask02 = binarize_mask(q2, params.threshold, params.keep_components)?;
            Ok(VariantSet {
                v03: apply_mask(b, &mask01)?,
                v04: apply_mask(nb, &mask02)?,
                v01: (*b).clone(),
                v02: (*nb).clone(),
                mask01,
                mask02,
            })
        })
        .collect()
}
