//! Saves a classifier and a segmenter, reloads them and checks that the
//! predictions are bit-identical.
//!
//! cargo run --release --example checkpoints

use cxrb::model::{
    build_classifier, build_segmenter, load_checkpoint, save_checkpoint, ClassifierConfig, SegmenterConfig,
};
use cxrb::phantom::{generate_phantom, PhantomConfig};
use cxrb::tensor::Exec;

fn main() -> cxrb::Result<()> {
    let dir = std::env::temp_dir().join("cxrb_checkpoints");
    std::fs::create_dir_all(&dir).map_err(|e| cxrb::Error::io(&dir, e))?;
    let input = generate_phantom(&PhantomConfig::with_size(64), 1)?
        .image_bones
        .to_tensor();
    let exec = Exec::single();
    for (name, model) in [
        ("classifier", build_classifier(&ClassifierConfig::new(64), 1)?),
        ("segmenter", build_segmenter(&SegmenterConfig::new(64), 1)?),
    ] {
        let path = dir.join(format!("{name}.ckpt"));
        save_checkpoint(&model, &path)?;
        let back = load_checkpoint(&path)?;
        let a = model.predict(&exec, &input)?;
        let b = back.predict(&exec, &input)?;
        let params: usize = model.params().iter().map(|p| p.tensor.numel()).sum();
        println!(
            "{name}: {params} parameters, {} bytes on disk, identical output: {}",
            std::fs::metadata(&path).map_err(|e| cxrb::Error::io(&path, e))?.len(),
            a.data() == b.data()
        );
    }
    Ok(())
}
