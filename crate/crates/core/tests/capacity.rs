//! Each model can memorize a 16-sample batch within 500 full-batch steps at
//! its default learning rate.

use cxrb::image::{dice, Mask};
use cxrb::model::{build_classifier, build_segmenter, ClassifierConfig, Model, SegmenterConfig};
use cxrb::phantom::{generate_dataset, PhantomConfig};
use cxrb::tensor::{Exec, Graph, Sgd, Tensor};
use cxrb::train::{CLASSIFIER_LR, SEGMENTER_LR};

/// Full-batch SGD until `good(pred)` holds; returns the step count.
fn overfit(
    model: &mut Model,
    lr: f32,
    input: &Tensor,
    target: &Tensor,
    good: impl Fn(&Tensor) -> bool,
) -> Option<usize> {
    let mut opt = Sgd::new(lr, 0.9).unwrap();
    for step in 1..=500 {
        let mut g = Graph::new(Exec::single());
        let x = g.constant(input.clone()).unwrap();
        let (pred, bindings) = model.forward(&mut g, x).unwrap();
        let t = g.constant(target.clone()).unwrap();
        let loss = g.bce_loss(pred, t).unwrap();
        let grads = g.backward(loss).unwrap();
        model.accumulate_grads(&grads, &bindings).unwrap();
        model.step(&mut opt).unwrap();
        if good(&model.predict(&Exec::single(), input).unwrap()) {
            return Some(step);
        }
    }
    None
}

fn stack(images: Vec<Tensor>) -> Tensor {
    let refs: Vec<&Tensor> = images.iter().collect();
    Tensor::stack_outer(&refs).unwrap()
}

#[test]
fn classifier_memorizes_sixteen_samples() {
    let data = generate_dataset(&PhantomConfig::with_size(64), 16, 40).unwrap();
    let input = stack(data.iter().map(|p| p.image_bones.to_tensor()).collect());
    let labels: Vec<f32> = data.iter().map(|p| f32::from(p.label)).collect();
    let target = Tensor::new(vec![16, 1], labels.clone()).unwrap();
    let mut model = build_classifier(&ClassifierConfig::new(64), 40).unwrap();
    let steps = overfit(&mut model, CLASSIFIER_LR, &input, &target, |pred| {
        let right = pred
            .data()
            .iter()
            .zip(&labels)
            .filter(|(&p, &l)| (p >= 0.5) == (l == 1.0))
            .count();
        right as f64 / 16.0 >= 0.95
    });
    assert!(
        steps.is_some(),
        "classifier did not reach 95% training accuracy in 500 steps"
    );
}

#[test]
fn segmenter_memorizes_sixteen_samples() {
    let data = generate_dataset(&PhantomConfig::with_size(32), 16, 41).unwrap();
    let input = stack(data.iter().map(|p| p.image_bones.to_tensor()).collect());
    let masks: Vec<Mask> = data.iter().map(|p| p.lung_mask.clone()).collect();
    let target = stack(masks.iter().map(|m| m.to_image().to_tensor()).collect());
    let mut model = build_segmenter(&SegmenterConfig::new(32), 41).unwrap();
    let steps = overfit(&mut model, SEGMENTER_LR, &input, &target, |pred| {
        let per = 32 * 32;
        let mean: f64 = masks
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let bin = pred.data()[i * per..][..per]
                    .iter()
                    .map(|&p| u8::from(p >= 0.5))
                    .collect();
                dice(&Mask::new(32, 32, bin).unwrap(), m).unwrap()
            })
            .sum::<f64>()
            / 16.0;
        mean >= 0.95
    });
    assert!(steps.is_some(), "segmenter did not reach Dice 0.95 in 500 steps");
}
