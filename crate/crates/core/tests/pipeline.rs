use std::collections::BTreeSet;

use cxrb::bench::time_step;
use cxrb::image::{apply_mask, Image};
use cxrb::model::{
    build_classifier, build_segmenter, load_checkpoint, save_checkpoint, ClassifierConfig, Model, SegmenterConfig,
};
use cxrb::phantom::{generate_dataset, generate_phantom, PhantomConfig};
use cxrb::tensor::{Exec, Graph, Tensor};
use cxrb::train::{split, TrainingCurve};
use cxrb::variants::{build_variants, MaskParams, Variant};
use proptest::prelude::*;

fn constant_segmenter(size: usize, bias: f32) -> Model {
    let mut m = build_segmenter(&SegmenterConfig::new(size), 1).unwrap();
    for p in m.params_mut() {
        if p.name.starts_with("head") {
            let fill = if p.name.ends_with("bias") { bias } else { 0.0 };
            p.tensor.data_mut().iter_mut().for_each(|v| *v = fill);
        }
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn phantom_invariants(seed in any::<u64>()) {
        let cfg = PhantomConfig::with_size(64);
        let p = generate_phantom(&cfg, seed).unwrap();
        prop_assert!(p.image_bones.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(p.image_nobones.data().iter().all(|v| (0.0..=1.0).contains(v)));
        // outside the bone overlay the two images agree
        for (i, (&a, &b)) in p.image_bones.data().iter().zip(p.image_nobones.data()).enumerate() {
            if p.bone_mask.data()[i] == 0 {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }
        prop_assert_eq!(p.lung_mask.components().0.len(), 2);
        match &p.nodule {
            Some(n) => {
                prop_assert_eq!(p.label, 1);
                for (r, c) in n.disc_pixels(64) {
                    prop_assert!(p.lung_mask.get(r, c));
                }
            }
            None => prop_assert_eq!(p.label, 0),
        }
        prop_assert_eq!(generate_phantom(&cfg, seed).unwrap(), p);
    }

    #[test]
    fn split_is_stratified_disjoint_and_deterministic(
        labels in proptest::collection::vec(0u8..=1, 10..120),
        frac in 0.1f64..0.5,
        seed in any::<u64>(),
    ) {
        let pos = labels.iter().filter(|&&l| l == 1).count();
        prop_assume!(pos >= 2 && labels.len() - pos >= 2);
        let Ok((train, val)) = split(&labels, frac, seed) else { return Ok(()); };
        let all: BTreeSet<usize> = train.iter().chain(&val).copied().collect();
        prop_assert_eq!(all.len(), labels.len());
        prop_assert_eq!(train.len() + val.len(), labels.len());
        prop_assert_eq!(split(&labels, frac, seed).unwrap(), (train.clone(), val.clone()));
        let val_pos = val.iter().filter(|&&i| labels[i] == 1).count() as f64;
        let want = pos as f64 * val.len() as f64 / labels.len() as f64;
        prop_assert!((val_pos - want).abs() <= 1.0);
    }

    #[test]
    fn curve_csv_round_trips(rows in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..5.0, 0.0f64..5.0), 0..20)) {
        let mut csv = String::from("epoch,train_acc,val_acc,train_loss,val_loss\n");
        for (i, r) in rows.iter().enumerate() {
            csv.push_str(&format!("{},{},{},{},{}\n", i + 1, r.0, r.1, r.2, r.3));
        }
        let curve = TrainingCurve::from_csv(&csv).unwrap();
        prop_assert_eq!(curve.len(), rows.len());
        prop_assert_eq!(TrainingCurve::from_csv(&curve.to_csv()).unwrap(), curve);
    }
}

#[test]
fn dataset_has_requested_positive_count() {
    let cfg = PhantomConfig::with_size(32);
    let data = generate_dataset(&cfg, 40, 3).unwrap();
    let pos = data.iter().filter(|p| p.label == 1).count();
    assert_eq!(pos, (40.0 * cfg.nodule_fraction).round() as usize);
    assert_eq!(data, generate_dataset(&cfg, 40, 3).unwrap());
}

#[test]
fn variant_algebra_holds() {
    let p = generate_phantom(&PhantomConfig::with_size(16), 4).unwrap();
    for bias in [-40.0, 40.0] {
        let seg = constant_segmenter(16, bias);
        let set = build_variants(
            &p.image_bones,
            &p.image_nobones,
            &seg,
            &Exec::single(),
            MaskParams::default(),
        )
        .unwrap();
        assert_eq!(set.get(Variant::Raw), &p.image_bones);
        assert_eq!(set.get(Variant::BoneFree), &p.image_nobones);
        assert_eq!(set.v03, apply_mask(&set.v01, &set.mask01).unwrap());
        assert_eq!(set.v04, apply_mask(&set.v02, &set.mask02).unwrap());
        let expect_on = bias > 0.0;
        assert_eq!(set.mask01.count(), if expect_on { 256 } else { 0 });
    }
}

#[test]
fn checkpoints_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for model in [
        build_classifier(&ClassifierConfig::new(32), 5).unwrap(),
        build_segmenter(&SegmenterConfig::new(16), 5).unwrap(),
    ] {
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.config(), model.config());
        for (a, b) in back.params().iter().zip(model.params()) {
            assert_eq!(a.name, b.name);
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.tensor), bits(&b.tensor));
        }
    }
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let model = build_classifier(&ClassifierConfig::new(32), 9).unwrap();
    let a = time_step(&model, 2, &Exec::single(), 3, 0, 1, u64::MAX).unwrap();
    let b = time_step(&model, 2, &Exec::new(3).unwrap(), 3, 0, 1, u64::MAX).unwrap();
    assert_eq!(a.checksum, b.checksum);

    let seg = build_segmenter(&SegmenterConfig::new(16), 2).unwrap();
    let img = Image::new(16, 16, (0..256).map(|i| (i % 13) as f32 / 13.0).collect()).unwrap();
    let run = |workers| {
        let exec = Exec::new(workers).unwrap();
        let mut g = Graph::new(exec);
        let x = g.constant(img.to_tensor()).unwrap();
        let (y, b) = seg.forward(&mut g, x).unwrap();
        let loss = g.sum(y).unwrap();
        let grads = g.backward(loss).unwrap();
        b.vars()
            .iter()
            .flat_map(|&v| grads.get(v).unwrap().to_vec())
            .map(f32::to_bits)
            .collect::<Vec<_>>()
    };
    assert_eq!(run(1), run(4));
}

fn cli(args: &[&str]) -> i32 {
    cxrb::cli::main(std::iter::once("cxrb").chain(args.iter().copied()))
}

#[test]
fn cli_exit_codes_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ph");
    let out_s = out.to_str().unwrap();
    assert_eq!(
        cli(&["phantom", "--n", "6", "--size", "16", "--seed", "2", "--out", out_s]),
        0
    );
    assert!(out.join("ph0000_bones.pgm").exists());
    assert!(out.join("ph0005.json").exists());
    assert!(out.join("manifest.json").exists());

    assert_eq!(cli(&["--help"]), 0);
    assert_eq!(cli(&["no-such-command"]), 1);
    // threshold outside (0,1) is a usage error
    assert_eq!(
        cli(&[
            "segment",
            "--model",
            "x.ckpt",
            "--input",
            out_s,
            "--threshold",
            "1.5",
            "--out",
            out_s
        ]),
        1
    );
    // a missing checkpoint is an I/O failure
    let missing = dir.path().join("none.ckpt");
    assert_eq!(
        cli(&[
            "segment",
            "--model",
            missing.to_str().unwrap(),
            "--input",
            out_s,
            "--out",
            out_s
        ]),
        2
    );
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"nope": 1}"#).unwrap();
    assert_eq!(
        cli(&["--config", bad.to_str().unwrap(), "phantom", "--n", "2", "--out", out_s]),
        1
    );
}
