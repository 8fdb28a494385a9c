//! Grayscale images, binary masks and the mask algebra used by the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-major grayscale image, nominally in [0,1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::shape(format!(
                "{width}x{height} image cannot hold {} pixels",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn clamp01(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    pub fn inverted(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| 1.0 - v).collect(),
        }
    }

    /// Area-weighted resampling to `width × height`. Each output pixel is the
    /// mean of the source area it covers, so downscaling by an integer factor
    /// is plain block averaging.
    pub fn resize(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::shape("cannot resize to an empty image"));
        }
        if (width, height) == self.dims() {
            return Ok(self.clone());
        }
        let xs = spans(self.width, width);
        let ys = spans(self.height, height);
        let mut data = Vec::with_capacity(width * height);
        for ycov in &ys {
            for xcov in &xs {
                let mut acc = 0f64;
                let mut area = 0f64;
                for &(sy, wy) in ycov {
                    for &(sx, wx) in xcov {
                        acc += f64::from(self.data[sy * self.width + sx]) * wy * wx;
                        area += wy * wx;
                    }
                }
                data.push((acc / area) as f32);
            }
        }
        Image::new(width, height, data)
    }

    /// `[1,1,H,W]` tensor view for the networks.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, 1, self.height, self.width], self.data.clone()).expect("consistent dims")
    }

    pub fn from_plane(width: usize, height: usize, plane: &[f32]) -> Result<Self> {
        Self::new(width, height, plane.to_vec())
    }
}

/// For each destination cell, the source indices it overlaps and the overlap
/// length in source units.
fn spans(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let lo = i as f64 * scale;
            let hi = lo + scale;
            let mut out = Vec::new();
            let mut s = lo.floor() as usize;
            while (s as f64) < hi && s < src {
                let w = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                if w > 0.0 {
                    out.push((s, w));
                }
                s += 1;
            }
            out
        })
        .collect()
}

/// Binary mask with values in {0,1}.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::shape(format!(
                "{width}x{height} mask cannot hold {} pixels",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::shape("mask values must be 0 or 1"));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![1; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] == 1
    }

    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.data[row * self.width + col] = u8::from(on);
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn to_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f32::from(v)).collect(),
        }
    }

    /// Sizes of the 4-connected foreground components together with a label
    /// plane (0 = background, k = component k-1).
    pub fn components(&self) -> (Vec<usize>, Vec<u32>) {
        let (w, h) = self.dims();
        let mut labels = vec![0u32; w * h];
        let mut sizes = Vec::new();
        let mut stack = Vec::new();
        for start in 0..w * h {
            if self.data[start] == 0 || labels[start] != 0 {
                continue;
            }
            sizes.push(0);
            let id = sizes.len() as u32;
            labels[start] = id;
            stack.push(start);
            while let Some(p) = stack.pop() {
                sizes[id as usize - 1] += 1;
                let (r, c) = (p / w, p % w);
                let mut visit = |q: usize| {
                    if self.data[q] == 1 && labels[q] == 0 {
                        labels[q] = id;
                        stack.push(q);
                    }
                };
                if r > 0 {
                    visit(p - w);
                }
                if r + 1 < h {
                    visit(p + w);
                }
                if c > 0 {
                    visit(p - 1);
                }
                if c + 1 < w {
                    visit(p + 1);
                }
            }
        }
        (sizes, labels)
    }
}

/// Dice overlap `2|a∩b| / (|a|+|b|)`, with two empty masks scoring 1.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("dice of {:?} and {:?} masks", a.dims(), b.dims())));
    }
    let mut both = 0usize;
    let mut total = 0usize;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        both += usize::from(x & y);
        total += usize::from(x) + usize::from(y);
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / total as f64)
}

/// Pixels at or above `threshold` become foreground; with `keep > 0` only the
/// `keep` largest 4-connected components survive (ties go to the component
/// found first in row-major order).
pub fn binarize_mask(prob: &Image, threshold: f32, keep: usize) -> Result<Mask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::usage(format!("threshold {threshold} outside (0,1)")));
    }
    let data = prob.data.iter().map(|&p| u8::from(p >= threshold)).collect();
    let mask = Mask {
        width: prob.width,
        height: prob.height,
        data,
    };
    Ok(keep_largest(mask, keep))
}

pub fn keep_largest(mut mask: Mask, keep: usize) -> Mask {
    if keep == 0 {
        return mask;
    }
    let (sizes, labels) = mask.components();
    if sizes.len() <= keep {
        return mask;
    }
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let mut kept = vec![false; sizes.len()];
    for &i in &order[..keep] {
        kept[i] = true;
    }
    for (v, &l) in mask.data.iter_mut().zip(&labels) {
        if l != 0 && !kept[l as usize - 1] {
            *v = 0;
        }
    }
    mask
}

/// Zeroes every pixel outside the mask.
pub fn apply_mask(image: &Image, mask: &Mask) -> Result<Image> {
    if image.dims() != mask.dims() {
        return Err(Error::shape(format!(
            "image {:?} and mask {:?} differ",
            image.dims(),
            mask.dims()
        )));
    }
    let data = image
        .data
        .iter()
        .zip(&mask.data)
        .map(|(&v, &m)| if m == 1 { v } else { 0.0 })
        .collect();
    Ok(Image {
        width: image.width,
        height: image.height,
        data,
    })
}
