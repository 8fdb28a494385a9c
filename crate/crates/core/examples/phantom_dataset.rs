//! Generates a small phantom dataset and writes it as PGM files plus JSON
//! sidecars.
//!
//! cargo run --release --example phantom_dataset -- [n] [size] [out_dir]

use std::path::PathBuf;

use cxrb::io::export_phantoms;
use cxrb::phantom::{generate_dataset, PhantomConfig};

fn main() -> cxrb::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n = args
        .first()
        .map_or(Ok(12), |s| s.parse())
        .expect("n must be an integer");
    let size = args
        .get(1)
        .map_or(Ok(64), |s| s.parse())
        .expect("size must be an integer");
    let out = args
        .get(2)
        .map_or_else(|| std::env::temp_dir().join("cxrb_phantoms"), PathBuf::from);

    let cfg = PhantomConfig::with_size(size);
    let samples = generate_dataset(&cfg, n, 0)?;
    let files = export_phantoms(&out, &samples)?;
    for (i, s) in samples.iter().enumerate() {
        match &s.nodule {
            Some(nod) => println!(
                "ph{i:04}: nodule at {:?}, radius {:.1}, contrast {:.2}",
                nod.center, nod.radius, nod.contrast
            ),
            None => println!("ph{i:04}: no nodule"),
        }
    }
    println!("{} files in {}", files.len(), out.display());
    Ok(())
}
