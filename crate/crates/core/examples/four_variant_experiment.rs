//! The full ablation: one segmenter, four variants, four classifiers trained
//! from the same initialization on the same split. Writes curves, a JSON
//! report and an SVG overlay.
//!
//! cargo run --release --example four_variant_experiment -- [n] [epochs] [out_dir]
//!
//! The defaults (400 phantoms, 100 epochs) take about 15 minutes on one core.

use std::path::PathBuf;

use cxrb::phantom::{generate_dataset, PhantomConfig};
use cxrb::tensor::Exec;
use cxrb::train::{render_svg, run_experiment, train_phantom_segmenter, write_curves, Hyper, Subject};
use cxrb::variants::{MaskParams, Variant};

fn main() -> cxrb::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().map_or(400, |s| s.parse().expect("n"));
    let epochs: usize = args.get(1).map_or(100, |s| s.parse().expect("epochs"));
    let out = args
        .get(2)
        .map_or_else(|| std::env::temp_dir().join("cxrb_experiment"), PathBuf::from);
    let exec = Exec::single();
    let pcfg = PhantomConfig::with_size(64);

    let seg_hyper = Hyper { ..Hyper::segmenter() };
    let seg = train_phantom_segmenter(&pcfg, 48, &seg_hyper, Some(0.95), &exec)?;
    println!("segmenter: validation Dice {:.3}", seg.best_val_dice.unwrap_or(0.0));

    let data = generate_dataset(&pcfg, n, 0)?;
    let subjects: Vec<Subject> = data
        .iter()
        .enumerate()
        .map(|(i, p)| Subject::from_phantom(format!("ph{i:04}"), p))
        .collect();
    let hyper = Hyper {
        epochs,
        ..Hyper::default()
    };
    let report = run_experiment(&subjects, &seg.model, &hyper, MaskParams::default(), &exec)?;
    println!("majority baseline {:.3}", report.majority_baseline);
    for v in Variant::ALL {
        let r = report.variant(v);
        println!(
            "{} {:<22} final val acc {:.3}  final train acc {:.3}  gap {:.3}",
            v.label(),
            format!("{v:?}"),
            r.final_val_acc.unwrap_or(f64::NAN),
            r.final_train_acc.unwrap_or(f64::NAN),
            r.overtraining_gap.unwrap_or(f64::NAN)
        );
    }
    write_curves(&report, &out)?;
    let curves: Vec<_> = Variant::ALL
        .iter()
        .map(|v| (v.label().to_string(), report.variant(*v).curve.clone()))
        .collect();
    let write = |name: &str, text: String| {
        let path = out.join(name);
        std::fs::write(&path, text).map_err(|e| cxrb::Error::io(&path, e))
    };
    write("curves.svg", render_svg(&curves))?;
    write("report.json", serde_json::to_string_pretty(&report)?)?;
    println!("results in {}", out.display());
    Ok(())
}
