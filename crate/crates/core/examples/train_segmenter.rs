//! Trains the lung-field UNet on phantom (image, lung mask) pairs and saves
//! the checkpoint and its Dice curve.
//!
//! cargo run --release --example train_segmenter -- [pairs] [max_epochs] [out_dir]

use std::path::PathBuf;

use cxrb::image::{Image, Mask};
use cxrb::model::save_checkpoint;
use cxrb::phantom::{generate_dataset, PhantomConfig};
use cxrb::tensor::Exec;
use cxrb::train::{train_segmenter, Hyper};

fn main() -> cxrb::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().map_or(48, |s| s.parse().expect("pairs"));
    let epochs: usize = args.get(1).map_or(300, |s| s.parse().expect("epochs"));
    let out = args
        .get(2)
        .map_or_else(|| std::env::temp_dir().join("cxrb_segmenter"), PathBuf::from);
    std::fs::create_dir_all(&out).map_err(|e| cxrb::Error::io(&out, e))?;

    let data = generate_dataset(&PhantomConfig::with_size(64), n, 11)?;
    let pairs: Vec<(&Image, &Mask)> = data.iter().map(|p| (&p.image_bones, &p.lung_mask)).collect();
    let hyper = Hyper {
        epochs,
        ..Hyper::segmenter()
    };
    let fit = train_segmenter(&pairs, &hyper, &Exec::single(), Some(0.95))?;
    for r in fit.curve.records.iter().step_by(5) {
        println!(
            "epoch {:3}  train Dice {:.3}  val Dice {:.3}",
            r.epoch, r.train_acc, r.val_acc
        );
    }
    println!("best validation Dice {:.4}", fit.best_val_dice.unwrap_or(0.0));
    save_checkpoint(&fit.model, &out.join("segmenter.ckpt"))?;
    std::fs::write(out.join("curve_seg.csv"), fit.curve.to_csv()).map_err(|e| cxrb::Error::io(&out, e))?;
    println!("saved to {}", out.display());
    Ok(())
}
