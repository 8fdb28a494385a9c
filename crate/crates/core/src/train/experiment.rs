use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{overtraining_gap, split, train_classifier_model, train_segmenter, Hyper, SegmenterFit, TrainingCurve};
use crate::error::{Error, Result};
use crate::image::{dice, Image, Mask};
use crate::model::{build_classifier, ClassifierConfig, Model};
use crate::phantom::{generate_dataset, PhantomConfig, PhantomSample};
use crate::tensor::Exec;
use crate::variants::{build_variant_sets, MaskParams, Variant, VariantSet};

/// Tail length used for the final metrics and the overtraining gap.
pub const FINAL_TAIL: usize = 10;

/// One subject of the experiment: a bones / bone-free pair and its label.
#[derive(Clone, Debug, PartialEq)]
pub struct Subject {
    pub id: String,
    pub bones: Image,
    pub nobones: Image,
    pub label: u8,
    pub truth_mask: Option<Mask>,
}

impl Subject {
    pub fn from_phantom(id: impl Into<String>, p: &PhantomSample) -> Self {
        Self {
            id: id.into(),
            bones: p.image_bones.clone(),
            nobones: p.image_nobones.clone(),
            label: p.label,
            truth_mask: Some(p.lung_mask.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub curve: TrainingCurve,
    /// Mean over the last `min(10, epochs)` epochs; absent for zero epochs.
    pub final_val_acc: Option<f64>,
    pub final_train_acc: Option<f64>,
    pub final_val_loss: Option<f64>,
    pub overtraining_gap: Option<f64>,
    pub seconds_per_epoch: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskQuality {
    pub mean_dice_mask01: Option<f64>,
    pub mean_dice_mask02: Option<f64>,
    pub per_subject: Vec<(String, Option<f64>, Option<f64>)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub hyper: Hyper,
    pub classifier: ClassifierConfig,
    pub mask_params: MaskParams,
    /// Keyed `#01` … `#04`.
    pub variants: BTreeMap<String, VariantResult>,
    /// Validation accuracy of always predicting the training majority class.
    pub majority_baseline: f64,
    /// `final_val_acc(#02) - final_val_acc(#01)`.
    pub margin_02_over_01: Option<f64>,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub masks: MaskQuality,
}

impl ExperimentReport {
    pub fn variant(&self, v: Variant) -> &VariantResult {
        &self.variants[v.label()]
    }
}

/// Default seed offset for the segmenter's phantoms, keeping them disjoint
/// from the classifier's.
pub const SEGMENTER_SEED_OFFSET: u64 = 1_000_000;

/// Trains the lung segmenter on `n` fresh phantoms seeded at
/// `seed + SEGMENTER_SEED_OFFSET`. Even-indexed phantoms contribute their bones
/// image, odd ones the bone-free image, so the model sees both kinds of
/// input the variants will feed it.
pub fn train_phantom_segmenter(
    pcfg: &PhantomConfig,
    n: usize,
    hyper: &Hyper,
    stop_at_dice: Option<f64>,
    exec: &Exec,
) -> Result<SegmenterFit> {
    let data = generate_dataset(pcfg, n, hyper.seed.wrapping_add(SEGMENTER_SEED_OFFSET))?;
    let pairs: Vec<(&Image, &Mask)> = data
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let img = if i % 2 == 0 { &p.image_bones } else { &p.image_nobones };
            (img, &p.lung_mask)
        })
        .collect();
    train_segmenter(&pairs, hyper, exec, stop_at_dice)
}

/// Builds the four variants for every subject with `segmenter`, then trains
/// one classifier per variant from the same initialization seed on the same
/// (stratified, seeded) split of subjects.
pub fn run_experiment(
    subjects: &[Subject],
    segmenter: &Model,
    hyper: &Hyper,
    mask_params: MaskParams,
    exec: &Exec,
) -> Result<ExperimentReport> {
    hyper.validate()?;
    if subjects.is_empty() {
        return Err(Error::usage("experiment needs at least one subject"));
    }
    let pairs: Vec<(&Image, &Image)> = subjects.iter().map(|s| (&s.bones, &s.nobones)).collect();
    let sets = build_variant_sets(&pairs, segmenter, exec, mask_params)?;
    let masks = mask_quality(subjects, &sets)?;

    let labels: Vec<u8> = subjects.iter().map(|s| s.label).collect();
    let (train, val) = split(&labels, hyper.val_fraction, hyper.seed)?;
    let positives = train.iter().filter(|&&i| labels[i] == 1).count();
    let majority = u8::from(2 * positives >= train.len());
    let majority_baseline = val.iter().filter(|&&i| labels[i] == majority).count() as f64 / val.len() as f64;

    let cfg = ClassifierConfig::new(hyper.image_size);
    let initial = build_classifier(&cfg, hyper.seed)?;
    let mut variants = BTreeMap::new();
    for v in Variant::ALL {
        let data: Vec<(&Image, u8)> = sets.iter().zip(&labels).map(|(s, &l)| (s.get(v), l)).collect();
        let curve = if hyper.epochs == 0 {
            TrainingCurve::default()
        } else {
            train_classifier_model(initial.clone(), &data, &train, &val, hyper, exec)?.1
        };
        variants.insert(v.label().to_string(), summarize(curve)?);
    }
    let final_of = |v: Variant| variants[v.label()].final_val_acc;
    let margin = match (final_of(Variant::BoneFree), final_of(Variant::Raw)) {
        (Some(a), Some(b)) => Some(a - b),
        _ => None,
    };
    let ids = |idx: &[usize]| idx.iter().map(|&i| subjects[i].id.clone()).collect();
    Ok(ExperimentReport {
        hyper: hyper.clone(),
        classifier: cfg,
        mask_params,
        margin_02_over_01: margin,
        variants,
        majority_baseline,
        train_ids: ids(&train),
        val_ids: ids(&val),
        masks,
    })
}

fn summarize(curve: TrainingCurve) -> Result<VariantResult> {
    let tail = FINAL_TAIL.min(curve.len());
    let some = |f: Result<f64>| -> Result<Option<f64>> {
        if tail == 0 {
            Ok(None)
        } else {
            f.map(Some)
        }
    };
    let final_val_acc = some(curve.tail_val_acc(tail.max(1)))?;
    let final_train_acc = some(curve.tail_train_acc(tail.max(1)))?;
    let final_val_loss = some(curve.tail_mean(tail.max(1), |r| r.val_loss))?;
    let overtraining_gap = some(overtraining_gap(&curve, tail.max(1)))?;
    let seconds_per_epoch =
        (!curve.is_empty()).then(|| curve.records.iter().map(|r| r.seconds).sum::<f64>() / curve.len() as f64);
    Ok(VariantResult {
        curve,
        final_val_acc,
        final_train_acc,
        final_val_loss,
        overtraining_gap,
        seconds_per_epoch,
    })
}

fn mask_quality(subjects: &[Subject], sets: &[VariantSet]) -> Result<MaskQuality> {
    let mut per_subject = Vec::with_capacity(subjects.len());
    let (mut s1, mut s2, mut n) = (0.0, 0.0, 0usize);
    for (s, set) in subjects.iter().zip(sets) {
        match &s.truth_mask {
            Some(truth) => {
                let d1 = dice(&set.mask01, truth)?;
                let d2 = dice(&set.mask02, truth)?;
                s1 += d1;
                s2 += d2;
                n += 1;
                per_subject.push((s.id.clone(), Some(d1), Some(d2)));
            }
            None => per_subject.push((s.id.clone(), None, None)),
        }
    }
    let mean = |v: f64| (n > 0).then(|| v / n as f64);
    Ok(MaskQuality {
        mean_dice_mask01: mean(s1),
        mean_dice_mask02: mean(s2),
        per_subject,
    })
}

/// Writes `curve_v01.csv` … `curve_v04.csv` into `dir` and returns the paths.
pub fn write_curves(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Variant::ALL
        .iter()
        .map(|v| {
            let path = dir.join(format!("curve_{}.csv", v.tag()));
            fs::write(&path, report.variant(*v).curve.to_csv()).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}
