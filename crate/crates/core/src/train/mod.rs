//! Training loops, the four-variant experiment and its report artifacts.

mod experiment;
mod fit;
mod plot;

pub use experiment::{
    run_experiment, train_phantom_segmenter, write_curves, ExperimentReport, MaskQuality, Subject, VariantResult,
    FINAL_TAIL, SEGMENTER_SEED_OFFSET,
};
pub use fit::{train_classifier, train_classifier_model, train_segmenter, train_segmenter_model, SegmenterFit};
pub use plot::render_svg;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default classifier learning rate. At 0.01 the first momentum step through
/// the 1024-wide dense head saturates the sigmoid and every ReLU dies.
pub const CLASSIFIER_LR: f32 = 0.0005;
/// Default segmenter learning rate. Bright bone spots push 0.01 into divergence.
pub const SEGMENTER_LR: f32 = 0.003;

/// Training settings. `Default` is the classifier's; see [`Hyper::segmenter`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub momentum: f32,
    pub val_fraction: f64,
    pub seed: u64,
    pub image_size: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            lr: CLASSIFIER_LR,
            momentum: 0.9,
            val_fraction: 0.2,
            seed: 0,
            image_size: 64,
        }
    }
}

impl Hyper {
    /// Segmenter defaults: 300 epochs at lr 0.01 with a third of the pairs
    /// held out (32 / 16 for 48 pairs).
    pub fn segmenter() -> Self {
        Self {
            epochs: 300,
            lr: SEGMENTER_LR,
            val_fraction: 1.0 / 3.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0,1)"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::config("val_fraction must lie in (0,1)"));
        }
        if self.image_size == 0 {
            return Err(Error::config("image_size must be positive"));
        }
        Ok(())
    }
}

/// Stratified, seeded train/validation split over sample indices. The
/// validation size is `round(n * val_fraction)`, shared between classes by
/// largest remainder so each class is within one sample of proportional.
/// Both returned index lists are sorted.
pub fn split(labels: &[u8], val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::config("val_fraction must lie in (0,1)"));
    }
    let n = labels.len();
    let total = (n as f64 * val_fraction).round() as usize;
    if total == 0 || total >= n {
        return Err(Error::config(format!(
            "val_fraction {val_fraction} leaves an empty side when splitting {n} samples"
        )));
    }
    let mut classes: Vec<u8> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let members: Vec<Vec<usize>> = classes
        .iter()
        .map(|&c| {
            let mut m: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            m.shuffle(&mut rng);
            m
        })
        .collect();
    let exact: Vec<f64> = members
        .iter()
        .map(|m| m.len() as f64 * total as f64 / n as f64)
        .collect();
    let mut quota: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..classes.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.partial_cmp(&fa).expect("finite").then(a.cmp(&b))
    });
    let short = total - quota.iter().sum::<usize>();
    for &k in order.iter().take(short) {
        quota[k] += 1;
    }
    let mut val = Vec::with_capacity(total);
    let mut train = Vec::with_capacity(n - total);
    for (m, q) in members.iter().zip(&quota) {
        val.extend_from_slice(&m[..*q]);
        train.extend_from_slice(&m[*q..]);
    }
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

/// Per-epoch metrics. For the segmenter the accuracy slots hold mean Dice.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub records: Vec<EpochRecord>,
}

pub const CURVE_HEADER: &str = "epoch,train_acc,val_acc,train_loss,val_loss";

impl TrainingCurve {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CURVE_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch, r.train_acc, r.val_acc, r.train_loss, r.val_loss
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some(CURVE_HEADER) {
            return Err(Error::usage(format!("curve CSV must start with `{CURVE_HEADER}`")));
        }
        let mut records = Vec::new();
        for line in lines {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let num = |i: usize| -> Result<f64> {
                f.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::usage(format!("bad curve row `{line}`")))
            };
            if f.len() != 5 {
                return Err(Error::usage(format!("bad curve row `{line}`")));
            }
            records.push(EpochRecord {
                epoch: num(0)? as usize,
                train_acc: num(1)?,
                val_acc: num(2)?,
                train_loss: num(3)?,
                val_loss: num(4)?,
                seconds: 0.0,
            });
        }
        Ok(Self { records })
    }

    /// Mean validation accuracy over the last `tail` epochs.
    pub fn tail_val_acc(&self, tail: usize) -> Result<f64> {
        self.tail_mean(tail, |r| r.val_acc)
    }

    pub fn tail_train_acc(&self, tail: usize) -> Result<f64> {
        self.tail_mean(tail, |r| r.train_acc)
    }

    fn tail_mean(&self, tail: usize, f: impl Fn(&EpochRecord) -> f64) -> Result<f64> {
        if tail == 0 || tail > self.records.len() {
            return Err(Error::usage(format!(
                "tail {tail} needs between 1 and {} epochs",
                self.records.len()
            )));
        }
        let rs = &self.records[self.records.len() - tail..];
        Ok(rs.iter().map(f).sum::<f64>() / tail as f64)
    }
}

/// Mean of `train_acc - val_acc` over the last `tail` epochs.
pub fn overtraining_gap(curve: &TrainingCurve, tail: usize) -> Result<f64> {
    curve.tail_mean(tail, |r| r.train_acc - r.val_acc)
}
