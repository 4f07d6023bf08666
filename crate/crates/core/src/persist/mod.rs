//! On-disk formats: checkpoints, corpora, experiment config, embedding dumps.
//!
//! Multi-byte integers and reals are little-endian. Every file is written to
//! a temporary sibling and renamed into place.

mod binary;
mod ini;
mod tsv;

pub use binary::*;
pub use ini::*;
pub use tsv::*;

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::encoders::ModelParams;
use crate::error::Result;
use crate::synthcorpus::Corpus;

/// Writes `bytes` to a temporary file beside `path`, then renames it over `path`.
pub fn atomic_write(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    atomic_write(path, &encode_checkpoint(params))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    decode_checkpoint(&fs::read(path)?)
}

pub fn save_corpus(path: impl AsRef<Path>, corpus: &Corpus) -> Result<()> {
    atomic_write(path, &encode_corpus(corpus))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    decode_corpus(&fs::read(path)?)
}

#[cfg(test)]
mod tests;
