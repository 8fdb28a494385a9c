//! Checkpoint file: `CXRB0001`, a little-endian u64 manifest length, the JSON
//! manifest (config plus parameter names and shapes), then every parameter
//! as raw little-endian f32 in manifest order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, NamedParam};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CXRB0001";

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn write_checkpoint<W: Write>(model: &Model, mut out: W) -> std::io::Result<()> {
    let manifest = Manifest {
        config: model.config().clone(),
        params: model
            .params()
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest)?;
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for p in model.params() {
        let mut buf = Vec::with_capacity(p.tensor.numel() * 4);
        for v in p.tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()
}

pub fn read_checkpoint<R: Read>(mut input: R, origin: &Path) -> Result<Model> {
    let bad = |msg: &str| Error::format(origin, msg);
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| Error::io(origin, e))?;
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("missing CXRB0001 checkpoint header"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(16..16usize.saturating_add(len))
        .ok_or_else(|| bad("truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(body).map_err(|e| bad(&format!("bad manifest: {e}")))?;
    let mut blob = &bytes[16 + len..];
    let mut params = Vec::with_capacity(manifest.params.len());
    for entry in manifest.params {
        let numel: usize = entry.shape.iter().product();
        if blob.len() < numel * 4 {
            return Err(bad(&format!("truncated data for {}", entry.name)));
        }
        let (head, rest) = blob.split_at(numel * 4);
        let data = head
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        params.push(NamedParam {
            name: entry.name,
            tensor: Tensor::new(entry.shape, data)?,
        });
        blob = rest;
    }
    if !blob.is_empty() {
        return Err(bad(&format!("{} trailing bytes after parameters", blob.len())));
    }
    Model::from_parts(manifest.config, params)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(model, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_classifier, ClassifierConfig};

    #[test]
    fn rejects_bad_magic_and_trailing_bytes() {
        let m = build_classifier(&ClassifierConfig::new(16), 5).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        let origin = Path::new("mem");
        assert_eq!(read_checkpoint(&buf[..], origin).unwrap(), m);

        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(read_checkpoint(&extra[..], origin), Err(Error::Format { .. })));

        let mut wrong = buf.clone();
        wrong[7] = b'2';
        assert!(matches!(read_checkpoint(&wrong[..], origin), Err(Error::Format { .. })));

        assert!(read_checkpoint(&buf[..buf.len() - 4], origin).is_err());
    }
}
