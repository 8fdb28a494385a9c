//! Seeded synthetic chest phantoms: a thorax with two lung fields, an
//! optional nodule, and a rib/clavicle overlay that exists only in the
//! "with bones" image.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

/// Fraction of nodule cases in the reference radiograph collection (154 of 247).
pub const DEFAULT_NODULE_FRACTION: f64 = 154.0 / 247.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub size: usize,
    pub nodule_fraction: f64,
    /// Nodule radius bounds in pixels.
    pub nodule_radius_range: (f64, f64),
    pub nodule_contrast_range: (f64, f64),
    pub rib_count: usize,
    pub rib_contrast: f64,
    pub clavicle_contrast: f64,
    /// Small round bone spots (rib ends, vertebral processes) scattered
    /// outside the lung fields; their brightness is `rib_contrast * spot_gain`.
    pub bone_spots: usize,
    pub spot_gain: f64,
    pub noise_sigma: f64,
    /// Lung centre jitter as a fraction of the image side.
    pub lung_jitter: f64,
    /// Lung axis scale jitter (relative).
    pub lung_scale_jitter: f64,
    /// Lung tilt jitter in radians.
    pub lung_tilt_jitter: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            size: 64,
            nodule_fraction: DEFAULT_NODULE_FRACTION,
            nodule_radius_range: (2.0, 4.0),
            nodule_contrast_range: (0.2, 0.4),
            rib_count: 7,
            rib_contrast: 0.15,
            clavicle_contrast: 0.2,
            bone_spots: 16,
            spot_gain: 3.0,
            noise_sigma: 0.02,
            lung_jitter: 0.02,
            lung_scale_jitter: 0.06,
            lung_tilt_jitter: 0.12,
        }
    }
}

impl PhantomConfig {
    pub fn with_size(size: usize) -> Self {
        let scale = size as f64 / 64.0;
        Self {
            size,
            nodule_radius_range: (2.0 * scale, 4.0 * scale),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (rmin, rmax) = self.nodule_radius_range;
        let (cmin, cmax) = self.nodule_contrast_range;
        let checks = [
            (self.size >= 16, "size must be at least 16"),
            (
                (0.0..=1.0).contains(&self.nodule_fraction),
                "nodule_fraction must lie in [0,1]",
            ),
            (rmin > 0.0 && rmin <= rmax, "nodule radii must be positive and ordered"),
            (
                cmin > 0.0 && cmin <= cmax && cmax <= 1.0,
                "nodule contrast must lie in (0,1] and be ordered",
            ),
            (self.rib_contrast >= 0.0, "rib_contrast must be non-negative"),
            (self.clavicle_contrast >= 0.0, "clavicle_contrast must be non-negative"),
            (self.spot_gain >= 0.0, "spot_gain must be non-negative"),
            (self.noise_sigma >= 0.0, "noise_sigma must be non-negative"),
            (
                self.lung_jitter >= 0.0 && self.lung_jitter <= 0.05,
                "lung_jitter must lie in [0,0.05]",
            ),
            (
                self.lung_scale_jitter >= 0.0 && self.lung_scale_jitter <= 0.2,
                "lung_scale_jitter must lie in [0,0.2]",
            ),
            (
                self.lung_tilt_jitter >= 0.0 && self.lung_tilt_jitter <= 0.3,
                "lung_tilt_jitter must lie in [0,0.3]",
            ),
        ];
        if let Some((_, msg)) = checks.iter().find(|(ok, _)| !ok) {
            return Err(Error::config(*msg));
        }
        let minor = LUNG_SEMI_X * (1.0 - self.lung_scale_jitter) * self.size as f64;
        if rmax >= minor {
            return Err(Error::config(format!(
                "nodule radius {rmax} does not fit the lung minor semi-axis {minor:.2}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoduleMeta {
    /// (row, col) in pixels.
    pub center: (f64, f64),
    pub radius: f64,
    pub contrast: f64,
}

impl NoduleMeta {
    /// Pixels whose centres lie within the nodule disc.
    pub fn disc_pixels(&self, size: usize) -> Vec<(usize, usize)> {
        let (cr, cc) = self.center;
        let r = self.radius;
        let lo = |v: f64| (v - r).floor().max(0.0) as usize;
        let hi = |v: f64| ((v + r).ceil() as usize).min(size - 1);
        let mut out = Vec::new();
        for row in lo(cr)..=hi(cr) {
            for col in lo(cc)..=hi(cc) {
                let d2 = (row as f64 - cr).powi(2) + (col as f64 - cc).powi(2);
                if d2 <= r * r {
                    out.push((row, col));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSample {
    pub image_bones: Image,
    pub image_nobones: Image,
    pub lung_mask: Mask,
    /// Pixels touched by the rib, clavicle or spot overlay.
    pub bone_mask: Mask,
    pub nodule: Option<NoduleMeta>,
    pub label: u8,
}

/// Sidecar metadata written next to exported phantom images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub id: String,
    pub label: u8,
    pub nodule: Option<NoduleMeta>,
}

const LUNG_SEMI_X: f64 = 0.12;
const LUNG_SEMI_Y: f64 = 0.27;
const LUNG_OFFSET_X: f64 = 0.19;
const LUNG_CENTER_Y: f64 = 0.47;
const LUNG_BRIGHTNESS: f32 = 0.25;

#[derive(Clone, Copy)]
struct Ellipse {
    cy: f64,
    cx: f64,
    ay: f64,
    ax: f64,
    tilt: f64,
}

impl Ellipse {
    fn inside(&self, row: f64, col: f64) -> bool {
        let (dy, dx) = (row - self.cy, col - self.cx);
        let (s, c) = self.tilt.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.ax).powi(2) + (v / self.ay).powi(2) <= 1.0
    }
}

/// One phantom whose label is drawn with probability `nodule_fraction`.
pub fn generate_phantom(cfg: &PhantomConfig, seed: u64) -> Result<PhantomSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let has_nodule = rng.gen::<f64>() < cfg.nodule_fraction;
    render(cfg, &mut rng, has_nodule)
}

/// `n` phantoms with exactly `round(n * nodule_fraction)` positives. Which
/// indices are positive is a seeded shuffle; sample `i` is rendered from seed
/// `seed + i`.
pub fn generate_dataset(cfg: &PhantomConfig, n: usize, seed: u64) -> Result<Vec<PhantomSample>> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::usage("dataset size must be at least 1"));
    }
    let positives = (n as f64 * cfg.nodule_fraction).round() as usize;
    let mut labels: Vec<bool> = (0..n).map(|i| i < positives).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    labels
        .iter()
        .enumerate()
        .map(|(i, &has)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            // Keep the per-sample stream aligned with generate_phantom.
            let _: f64 = rng.gen();
            render(cfg, &mut rng, has)
        })
        .collect()
}

fn render(cfg: &PhantomConfig, rng: &mut ChaCha8Rng, has_nodule: bool) -> Result<PhantomSample> {
    let s = cfg.size;
    let sf = s as f64;
    let mut base = vec![0f32; s * s];

    // Thorax with a vertical gradient.
    let body = Ellipse {
        cy: 0.51 * sf,
        cx: 0.5 * sf,
        ay: 0.5 * sf,
        ax: 0.46 * sf,
        tilt: 0.0,
    };
    for row in 0..s {
        for col in 0..s {
            base[row * s + col] = if body.inside(row as f64, col as f64) {
                0.25 + 0.1 * row as f32 / s as f32
            } else {
                0.05
            };
        }
    }

    // Lung fields.
    let mut jit = |amp: f64| if amp > 0.0 { rng.gen_range(-amp..=amp) } else { 0.0 };
    let mut lungs = [Ellipse {
        cy: 0.0,
        cx: 0.0,
        ay: 0.0,
        ax: 0.0,
        tilt: 0.0,
    }; 2];
    for (k, side) in [-1.0, 1.0].into_iter().enumerate() {
        let scale = 1.0 + jit(cfg.lung_scale_jitter);
        lungs[k] = Ellipse {
            cy: (LUNG_CENTER_Y + jit(cfg.lung_jitter)) * sf,
            cx: (0.5 + side * LUNG_OFFSET_X + jit(cfg.lung_jitter)) * sf,
            ay: LUNG_SEMI_Y * scale * sf,
            ax: LUNG_SEMI_X * scale * sf,
            tilt: side * (-0.08 + jit(cfg.lung_tilt_jitter)),
        };
    }
    let mut lung_mask = Mask::zeros(s, s);
    for row in 0..s {
        for col in 0..s {
            if lungs.iter().any(|e| e.inside(row as f64, col as f64)) {
                lung_mask.set(row, col, true);
                base[row * s + col] += LUNG_BRIGHTNESS;
            }
        }
    }

    let nodule = if has_nodule {
        let n = place_nodule(cfg, rng, &lung_mask)?;
        let sigma2 = (n.radius * 0.6).powi(2);
        for (row, col) in n.disc_pixels(s) {
            let d2 = (row as f64 - n.center.0).powi(2) + (col as f64 - n.center.1).powi(2);
            base[row * s + col] += (n.contrast * (-d2 / (2.0 * sigma2)).exp()) as f32;
        }
        Some(n)
    } else {
        None
    };

    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::config(e.to_string()))?;
        for v in base.iter_mut() {
            *v += normal.sample(rng) as f32;
        }
    }
    let mut image_nobones = Image::new(s, s, base)?;
    image_nobones.clamp01();

    let bones = bone_overlay(cfg, rng, &body, &lung_mask);
    let mut bone_mask = Mask::zeros(s, s);
    let mut with = image_nobones.clone();
    for (i, (&b, v)) in bones.iter().zip(with.data_mut()).enumerate() {
        if b > 0.0 {
            *v = (*v + b).clamp(0.0, 1.0);
            bone_mask.set(i / s, i % s, true);
        }
    }

    Ok(PhantomSample {
        image_bones: with,
        image_nobones,
        lung_mask,
        bone_mask,
        label: u8::from(nodule.is_some()),
        nodule,
    })
}

fn place_nodule(cfg: &PhantomConfig, rng: &mut ChaCha8Rng, lung: &Mask) -> Result<NoduleMeta> {
    let s = cfg.size;
    let (rmin, rmax) = cfg.nodule_radius_range;
    let (cmin, cmax) = cfg.nodule_contrast_range;
    let inside: Vec<usize> = (0..s * s).filter(|&i| lung.data()[i] == 1).collect();
    if inside.is_empty() {
        return Err(Error::config("no lung field to host a nodule"));
    }
    for _ in 0..1000 {
        let radius = if rmax > rmin { rng.gen_range(rmin..=rmax) } else { rmin };
        let contrast = if cmax > cmin { rng.gen_range(cmin..=cmax) } else { cmin };
        let p = inside[rng.gen_range(0..inside.len())];
        let n = NoduleMeta {
            center: (
                (p / s) as f64 + rng.gen_range(-0.5..0.5),
                (p % s) as f64 + rng.gen_range(-0.5..0.5),
            ),
            radius,
            contrast,
        };
        let (r, c) = n.center;
        let fits = r - radius >= 0.0
            && c - radius >= 0.0
            && r + radius <= (s - 1) as f64
            && c + radius <= (s - 1) as f64
            && lung.get(r.round() as usize, c.round() as usize)
            && n.disc_pixels(s).iter().all(|&(y, x)| lung.get(y, x));
        if fits {
            return Ok(n);
        }
    }
    Err(Error::config(format!(
        "could not fit a nodule of radius up to {rmax} inside the lung fields"
    )))
}

/// Additive bone intensities: curved rib bands, two clavicles and round
/// spots outside the lungs. All randomness is drawn even when contrasts are
/// zero so that the nodule-free part of the stream does not depend on them.
fn bone_overlay(cfg: &PhantomConfig, rng: &mut ChaCha8Rng, body: &Ellipse, lung: &Mask) -> Vec<f32> {
    let s = cfg.size;
    let sf = s as f64;
    let mut out = vec![0f64; s * s];
    let add = |out: &mut Vec<f64>, row: usize, col: usize, v: f64| {
        if v > 0.0 && body.inside(row as f64, col as f64) {
            let o = &mut out[row * s + col];
            *o = o.max(v);
        }
    };

    // Ribs: bands that sag towards the flanks, with a random vertical phase.
    let spacing = 0.62 * sf / cfg.rib_count.max(1) as f64;
    let phase = rng.gen_range(0.0..spacing.max(1e-9));
    let wobble = rng.gen_range(0.0..std::f64::consts::TAU);
    let half_width = 0.022 * sf;
    for k in 0..cfg.rib_count {
        let base = 0.16 * sf + k as f64 * spacing + phase;
        for col in 0..s {
            let x = (col as f64 - 0.5 * sf) / (0.45 * sf);
            let centre =
                base + 0.09 * sf * x * x + 0.01 * sf * (std::f64::consts::TAU * col as f64 / sf + wobble).sin();
            let lo = (centre - half_width - 1.0).floor().max(0.0) as usize;
            let hi = ((centre + half_width + 1.0).ceil() as usize).min(s - 1);
            for row in lo..=hi {
                let d = (row as f64 - centre) / half_width;
                if d.abs() < 1.0 {
                    add(&mut out, row, col, cfg.rib_contrast * (1.0 - d * d).sqrt());
                }
            }
        }
    }

    // Clavicles: straight bands rising from the midline towards the shoulders.
    let lift = rng.gen_range(-0.02..0.02) * sf;
    let clav_half = 0.018 * sf;
    for side in [-1.0, 1.0] {
        let (r0, c0) = (0.15 * sf + lift, 0.5 * sf + side * 0.05 * sf);
        let (r1, c1) = (0.07 * sf + lift, 0.5 * sf + side * 0.42 * sf);
        let (dr, dc) = (r1 - r0, c1 - c0);
        let len2 = dr * dr + dc * dc;
        for row in 0..s {
            for col in 0..s {
                let (pr, pc) = (row as f64 - r0, col as f64 - c0);
                let t = ((pr * dr + pc * dc) / len2).clamp(0.0, 1.0);
                let d = ((pr - t * dr).powi(2) + (pc - t * dc).powi(2)).sqrt() / clav_half;
                if d < 1.0 {
                    add(&mut out, row, col, cfg.clavicle_contrast * (1.0 - d * d).sqrt());
                }
            }
        }
    }

    // Bone spots outside the lung fields, sized like nodules.
    let (rmin, rmax) = cfg.nodule_radius_range;
    let amp = cfg.rib_contrast * cfg.spot_gain;
    let mut placed = 0;
    let mut tries = 0;
    while placed < cfg.bone_spots && tries < 200 * cfg.bone_spots {
        tries += 1;
        let radius = if rmax > rmin { rng.gen_range(rmin..=rmax) } else { rmin };
        let contrast = rng.gen_range(0.75..=1.25) * amp;
        let center = (rng.gen_range(0.0..sf), rng.gen_range(0.0..sf));
        let spot = NoduleMeta {
            center,
            radius,
            contrast,
        };
        let pix = spot.disc_pixels(s);
        let clear = body.inside(center.0, center.1)
            && pix
                .iter()
                .all(|&(y, x)| body.inside(y as f64, x as f64) && !neighbourhood_hits(lung, y, x, 1));
        if !clear || pix.is_empty() {
            continue;
        }
        let sigma2 = (radius * 0.6).powi(2);
        for (row, col) in pix {
            let d2 = (row as f64 - center.0).powi(2) + (col as f64 - center.1).powi(2);
            add(&mut out, row, col, contrast * (-d2 / (2.0 * sigma2)).exp());
        }
        placed += 1;
    }
    out.into_iter().map(|v| v as f32).collect()
}

fn neighbourhood_hits(m: &Mask, row: usize, col: usize, r: usize) -> bool {
    let (w, h) = m.dims();
    (row.saturating_sub(r)..=(row + r).min(h - 1))
        .any(|y| (col.saturating_sub(r)..=(col + r).min(w - 1)).any(|x| m.get(y, x)))
}
