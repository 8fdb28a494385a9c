//! Trains the seven-convolution nodule classifier on one image variant and
//! prints its accuracy curve.
//!
//! cargo run --release --example train_classifier -- [bones|nobones] [n] [epochs]

use cxrb::image::Image;
use cxrb::phantom::{generate_dataset, PhantomConfig};
use cxrb::tensor::Exec;
use cxrb::train::{overtraining_gap, train_classifier, Hyper};

fn main() -> cxrb::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let bones = args.first().is_some_and(|s| s == "bones");
    let n: usize = args.get(1).map_or(200, |s| s.parse().expect("n"));
    let epochs: usize = args.get(2).map_or(30, |s| s.parse().expect("epochs"));

    let data = generate_dataset(&PhantomConfig::with_size(64), n, 5)?;
    let items: Vec<(&Image, u8)> = data
        .iter()
        .map(|p| (if bones { &p.image_bones } else { &p.image_nobones }, p.label))
        .collect();
    let hyper = Hyper {
        epochs,
        ..Hyper::default()
    };
    let (_, curve) = train_classifier(&items, &hyper, &Exec::single())?;
    for r in &curve.records {
        println!(
            "epoch {:3}  train acc {:.3} loss {:.3}  val acc {:.3} loss {:.3}",
            r.epoch, r.train_acc, r.train_loss, r.val_acc, r.val_loss
        );
    }
    let tail = 10.min(curve.len());
    println!(
        "overtraining gap over the last {tail} epochs: {:.3}",
        overtraining_gap(&curve, tail)?
    );
    Ok(())
}
