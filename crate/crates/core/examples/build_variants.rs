//! Builds the four preprocessing variants (raw, bone-free, lung-masked,
//! lung-masked bone-free) for a few phantoms and exports them.
//!
//! cargo run --release --example build_variants -- [segmenter.ckpt] [out_dir]
//!
//! Without a checkpoint a segmenter is trained first (about a minute).

use std::path::PathBuf;

use cxrb::image::dice;
use cxrb::io::{export_variants, phantom_id};
use cxrb::model::load_checkpoint;
use cxrb::phantom::{generate_dataset, PhantomConfig};
use cxrb::tensor::Exec;
use cxrb::train::{train_phantom_segmenter, Hyper};
use cxrb::variants::{build_variant_sets, MaskParams};

fn main() -> cxrb::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let exec = Exec::single();
    let pcfg = PhantomConfig::with_size(64);
    let segmenter = match args.first() {
        Some(path) => load_checkpoint(path.as_ref())?,
        None => {
            let hyper = Hyper { ..Hyper::segmenter() };
            train_phantom_segmenter(&pcfg, 48, &hyper, Some(0.95), &exec)?.model
        }
    };
    let out = args
        .get(1)
        .map_or_else(|| std::env::temp_dir().join("cxrb_variants"), PathBuf::from);

    let data = generate_dataset(&pcfg, 8, 99)?;
    let pairs: Vec<_> = data.iter().map(|p| (&p.image_bones, &p.image_nobones)).collect();
    let params = MaskParams::default();
    let sets = build_variant_sets(&pairs, &segmenter, &exec, params)?;
    let mut items = Vec::new();
    for (i, (p, set)) in data.iter().zip(&sets).enumerate() {
        println!(
            "{}: label {} mask Dice bones {:.3} bone-free {:.3}",
            phantom_id(i),
            p.label,
            dice(&set.mask01, &p.lung_mask)?,
            dice(&set.mask02, &p.lung_mask)?
        );
        items.push((phantom_id(i), Some(p.label), Some(&p.lung_mask), set));
    }
    let files = export_variants(&out, &items, params)?;
    println!("{} files in {}", files.len(), out.display());
    Ok(())
}
