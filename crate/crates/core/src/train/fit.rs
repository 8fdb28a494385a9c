use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{split, EpochRecord, Hyper, TrainingCurve};
use crate::error::{Error, Result};
use crate::image::{dice, Image, Mask};
use crate::model::{build_classifier, build_segmenter, ClassifierConfig, Model, SegmenterConfig};
use crate::tensor::kernels::bce_forward;
use crate::tensor::{Exec, Graph, Sgd, Tensor};

/// Offsets the batch-order stream from the initialization stream.
const SHUFFLE_SALT: u64 = 0x005e_ed0f_ba7c;

#[derive(Clone, Copy)]
enum Targets<'a> {
    Labels(&'a [u8]),
    Masks(&'a [&'a Mask]),
}

impl Targets<'_> {
    fn tensor(&self, idx: &[usize]) -> Result<Tensor> {
        match self {
            Targets::Labels(l) => Tensor::new(vec![idx.len(), 1], idx.iter().map(|&i| f32::from(l[i])).collect()),
            Targets::Masks(m) => {
                let (w, h) = m[idx[0]].dims();
                let mut data = Vec::with_capacity(idx.len() * w * h);
                for &i in idx {
                    data.extend(m[i].data().iter().map(|&v| f32::from(v)));
                }
                Tensor::new(vec![idx.len(), 1, h, w], data)
            }
        }
    }

    /// Accuracy (classifier) or Dice at 0.5 (segmenter) of one sample.
    fn score(&self, i: usize, pred: &[f32]) -> Result<f64> {
        match self {
            Targets::Labels(l) => Ok(f64::from(u8::from(pred[0] >= 0.5) == l[i])),
            Targets::Masks(m) => {
                let (w, h) = m[i].dims();
                let bin = pred.iter().map(|&p| u8::from(p >= 0.5)).collect();
                dice(&Mask::new(w, h, bin)?, m[i])
            }
        }
    }
}

fn batch_input(images: &[&Image], idx: &[usize]) -> Result<Tensor> {
    let (w, h) = images[idx[0]].dims();
    let mut data = Vec::with_capacity(idx.len() * w * h);
    for &i in idx {
        data.extend_from_slice(images[i].data());
    }
    Tensor::new(vec![idx.len(), 1, h, w], data)
}

struct Pass {
    loss: f64,
    score: f64,
}

/// Loss and score summed over samples (not yet averaged).
fn accumulate(targets: Targets, idx: &[usize], pred: &Tensor, target: &Tensor) -> Result<Pass> {
    let per = pred.numel() / idx.len();
    let mut score = 0.0;
    for (k, &i) in idx.iter().enumerate() {
        score += targets.score(i, &pred.data()[k * per..][..per])?;
    }
    Ok(Pass {
        loss: bce_forward(pred.data(), target.data()) * idx.len() as f64,
        score,
    })
}

fn evaluate(
    model: &Model,
    exec: &Exec,
    images: &[&Image],
    targets: Targets,
    idx: &[usize],
    batch: usize,
) -> Result<Pass> {
    let mut total = Pass { loss: 0.0, score: 0.0 };
    for chunk in idx.chunks(batch.max(1)) {
        let pred = model.predict(exec, &batch_input(images, chunk)?)?;
        let p = accumulate(targets, chunk, &pred, &targets.tensor(chunk)?)?;
        total.loss += p.loss;
        total.score += p.score;
    }
    let n = idx.len().max(1) as f64;
    Ok(Pass {
        loss: total.loss / n,
        score: total.score / n,
    })
}

struct FitOutcome {
    curve: TrainingCurve,
    best: Option<Model>,
}

#[allow(clippy::too_many_arguments)]
fn fit(
    model: &mut Model,
    images: &[&Image],
    targets: Targets,
    train: &[usize],
    val: &[usize],
    hyper: &Hyper,
    exec: &Exec,
    stop_at: Option<f64>,
    keep_best: bool,
) -> Result<FitOutcome> {
    hyper.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::config("training and validation sets must both be non-empty"));
    }
    if hyper.batch_size > train.len() {
        return Err(Error::config(format!(
            "batch_size {} exceeds the {} training samples",
            hyper.batch_size,
            train.len()
        )));
    }
    let mut opt = Sgd::new(hyper.lr, hyper.momentum)?;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ SHUFFLE_SALT);
    let mut order = train.to_vec();
    let mut curve = TrainingCurve::default();
    let mut best: Option<(f64, Model)> = None;
    for epoch in 1..=hyper.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut seen = Pass { loss: 0.0, score: 0.0 };
        for chunk in order.chunks(hyper.batch_size) {
            let mut g = Graph::new(exec.clone());
            let x = g.constant(batch_input(images, chunk)?)?;
            let target = targets.tensor(chunk)?;
            let (pred, bindings) = model.forward(&mut g, x)?;
            let t = g.constant(target.clone())?;
            let loss = g.bce_loss(pred, t)?;
            let p = accumulate(targets, chunk, g.value(pred), &target)?;
            seen.loss += p.loss;
            seen.score += p.score;
            let grads = g.backward(loss)?;
            model.accumulate_grads(&grads, &bindings)?;
            model.step(&mut opt)?;
        }
        let v = evaluate(model, exec, images, targets, val, hyper.batch_size.max(16))?;
        let n = train.len() as f64;
        curve.records.push(EpochRecord {
            epoch,
            train_acc: seen.score / n,
            val_acc: v.score,
            train_loss: seen.loss / n,
            val_loss: v.loss,
            seconds: started.elapsed().as_secs_f64(),
        });
        if keep_best && best.as_ref().is_none_or(|(s, _)| v.score > *s) {
            best = Some((v.score, model.clone()));
        }
        if stop_at.is_some_and(|target| v.score >= target) {
            break;
        }
    }
    Ok(FitOutcome {
        curve,
        best: best.map(|(_, m)| m),
    })
}

/// Result of segmenter training: the best-validation-Dice model and the curve
/// (mean Dice in the accuracy slots).
#[derive(Clone, Debug)]
pub struct SegmenterFit {
    pub model: Model,
    pub curve: TrainingCurve,
    pub best_val_dice: Option<f64>,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
}

/// Trains a fresh segmenter (depth 3, base 8, seeded by `hyper.seed`) on
/// (image, lung mask) pairs with a seeded split.
pub fn train_segmenter(
    pairs: &[(&Image, &Mask)],
    hyper: &Hyper,
    exec: &Exec,
    stop_at_dice: Option<f64>,
) -> Result<SegmenterFit> {
    if pairs.is_empty() {
        return Err(Error::usage("no training pairs"));
    }
    let (train, val) = split(&vec![0; pairs.len()], hyper.val_fraction, hyper.seed)?;
    let model = build_segmenter(&SegmenterConfig::new(hyper.image_size), hyper.seed)?;
    train_segmenter_model(model, pairs, &train, &val, hyper, exec, stop_at_dice)
}

/// Trains `model` on the given split. With `stop_at_dice`, training ends after
/// the first epoch whose validation Dice reaches it.
pub fn train_segmenter_model(
    mut model: Model,
    pairs: &[(&Image, &Mask)],
    train: &[usize],
    val: &[usize],
    hyper: &Hyper,
    exec: &Exec,
    stop_at_dice: Option<f64>,
) -> Result<SegmenterFit> {
    check_sizes(pairs.iter().map(|p| p.0), model.input_size())?;
    if let Some((im, m)) = pairs.iter().find(|(im, m)| im.dims() != m.dims()) {
        return Err(Error::shape(format!(
            "image {:?} paired with mask {:?}",
            im.dims(),
            m.dims()
        )));
    }
    let images: Vec<&Image> = pairs.iter().map(|p| p.0).collect();
    let masks: Vec<&Mask> = pairs.iter().map(|p| p.1).collect();
    let out = fit(
        &mut model,
        &images,
        Targets::Masks(&masks),
        train,
        val,
        hyper,
        exec,
        stop_at_dice,
        true,
    )?;
    let best_val_dice = out
        .curve
        .records
        .iter()
        .map(|r| r.val_acc)
        .fold(None, |a: Option<f64>, v| Some(a.map_or(v, |a| a.max(v))));
    Ok(SegmenterFit {
        model: out.best.unwrap_or(model),
        curve: out.curve,
        best_val_dice,
        train_idx: train.to_vec(),
        val_idx: val.to_vec(),
    })
}

/// Trains a fresh default classifier on (image, label) data with a seeded
/// stratified split. Returns the final-epoch model.
pub fn train_classifier(data: &[(&Image, u8)], hyper: &Hyper, exec: &Exec) -> Result<(Model, TrainingCurve)> {
    let labels: Vec<u8> = data.iter().map(|d| d.1).collect();
    let (train, val) = split(&labels, hyper.val_fraction, hyper.seed)?;
    let model = build_classifier(&ClassifierConfig::new(hyper.image_size), hyper.seed)?;
    train_classifier_model(model, data, &train, &val, hyper, exec)
}

pub fn train_classifier_model(
    mut model: Model,
    data: &[(&Image, u8)],
    train: &[usize],
    val: &[usize],
    hyper: &Hyper,
    exec: &Exec,
) -> Result<(Model, TrainingCurve)> {
    check_sizes(data.iter().map(|d| d.0), model.input_size())?;
    let labels: Vec<u8> = data.iter().map(|d| d.1).collect();
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::config("labels must be 0 or 1"));
    }
    let first = train.first().map(|&i| labels[i]);
    if train.iter().all(|&i| Some(labels[i]) == first) {
        return Err(Error::config("training split contains a single class"));
    }
    let images: Vec<&Image> = data.iter().map(|d| d.0).collect();
    let out = fit(
        &mut model,
        &images,
        Targets::Labels(&labels),
        train,
        val,
        hyper,
        exec,
        None,
        false,
    )?;
    Ok((model, out.curve))
}

fn check_sizes<'a>(mut images: impl Iterator<Item = &'a Image>, s: usize) -> Result<()> {
    match images.find(|im| im.dims() != (s, s)) {
        Some(im) => Err(Error::shape(format!(
            "model expects {s}x{s} images, got {:?}",
            im.dims()
        ))),
        None => Ok(()),
    }
}
