use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ImagePair {
    pub stem: String,
    pub bones: PathBuf,
    pub nobones: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Pairing {
    /// Lexicographic by stem.
    pub pairs: Vec<ImagePair>,
    /// Stems present in only one directory.
    pub unpaired: Vec<String>,
}

/// Pairs regular files of two directories by file stem.
pub fn pair_datasets(dir_bones: &Path, dir_nobones: &Path) -> Result<Pairing> {
    let a = stems(dir_bones)?;
    let b = stems(dir_nobones)?;
    let pairs: Vec<ImagePair> = a
        .iter()
        .filter_map(|(stem, pa)| {
            b.get(stem).map(|pb| ImagePair {
                stem: stem.clone(),
                bones: pa.clone(),
                nobones: pb.clone(),
            })
        })
        .collect();
    let mut unpaired: Vec<String> = a
        .keys()
        .filter(|s| !b.contains_key(*s))
        .chain(b.keys().filter(|s| !a.contains_key(*s)))
        .cloned()
        .collect();
    unpaired.sort();
    if pairs.is_empty() {
        return Err(Error::usage(format!(
            "no file stems shared by {} and {}",
            dir_bones.display(),
            dir_nobones.display()
        )));
    }
    Ok(Pairing { pairs, unpaired })
}

fn stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path.clone());
        }
    }
    Ok(out)
}
