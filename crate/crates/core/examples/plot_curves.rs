//! Reads `curve_v0X.csv` files from a directory (as written by the experiment)
//! and renders the four-panel SVG overlay.
//!
//! cargo run --release --example plot_curves -- <dir>

use std::path::PathBuf;

use cxrb::train::{render_svg, TrainingCurve};
use cxrb::variants::Variant;

fn main() -> cxrb::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("cxrb_experiment"), PathBuf::from);
    let mut curves = Vec::new();
    for v in Variant::ALL {
        let path = dir.join(format!("curve_{}.csv", v.tag()));
        match std::fs::read_to_string(&path) {
            Ok(text) => curves.push((v.label().to_string(), TrainingCurve::from_csv(&text)?)),
            Err(_) => println!("skipping missing {}", path.display()),
        }
    }
    let out = dir.join("curves.svg");
    std::fs::write(&out, render_svg(&curves)).map_err(|e| cxrb::Error::io(&out, e))?;
    println!("wrote {}", out.display());
    Ok(())
}
