//! Writes and reloads images as 16-bit PGM and raw big-endian 12-bit files,
//! then pairs a bones directory with a bone-free one by file stem.
//!
//! cargo run --release --example image_io

use cxrb::io::{load_image, pair_datasets, write_pgm, ByteOrder, ImageFormat, PgmDepth, RawLoaderConfig};
use cxrb::phantom::{generate_phantom, PhantomConfig};

fn main() -> cxrb::Result<()> {
    let dir = std::env::temp_dir().join("cxrb_image_io");
    let (bones, nobones) = (dir.join("bones"), dir.join("nobones"));
    for d in [&bones, &nobones] {
        std::fs::create_dir_all(d).map_err(|e| cxrb::Error::io(d, e))?;
    }
    let p = generate_phantom(&PhantomConfig::with_size(128), 3)?;
    write_pgm(&bones.join("case01.pgm"), &p.image_bones, PgmDepth::Sixteen)?;
    write_pgm(&nobones.join("case01.pgm"), &p.image_nobones, PgmDepth::Sixteen)?;
    write_pgm(&bones.join("case02.pgm"), &p.image_bones, PgmDepth::Eight)?;

    let back = load_image(&bones.join("case01.pgm"), &ImageFormat::default())?;
    let err = back
        .data()
        .iter()
        .zip(p.image_bones.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    println!("16-bit PGM round trip max error {err:.2e}");

    // 12-bit big-endian raw, the layout of scanner dumps
    let cfg = RawLoaderConfig {
        width: 128,
        height: 128,
        bytes_per_pixel: 2,
        byte_order: ByteOrder::Big,
        max_value: 4095,
        invert: false,
    };
    let raw: Vec<u8> = p
        .image_nobones
        .data()
        .iter()
        .flat_map(|&v| ((v * 4095.0).round() as u16).to_be_bytes())
        .collect();
    let raw_path = dir.join("case01.raw");
    std::fs::write(&raw_path, raw).map_err(|e| cxrb::Error::io(&raw_path, e))?;
    let loaded = load_image(&raw_path, &ImageFormat::Raw(cfg))?;
    println!(
        "raw image {}x{}, first pixel {:.4}",
        loaded.width(),
        loaded.height(),
        loaded.data()[0]
    );

    let pairing = pair_datasets(&bones, &nobones)?;
    for pair in &pairing.pairs {
        println!("paired {}", pair.stem);
    }
    println!("unpaired: {:?}", pairing.unpaired);
    Ok(())
}
