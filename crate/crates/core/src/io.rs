//! Atomic-ish output handling shared by file-level stage runners.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{PathContext, Result};

pub fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    path.with_file_name(name)
}

/// Runs `work` against `.partial` siblings of `outputs`, renaming them into
/// place on success and deleting them on failure.
pub fn commit_outputs<T>(outputs: &[&Path], work: impl FnOnce(&[PathBuf]) -> Result<T>) -> Result<T> {
    let partials: Vec<PathBuf> = outputs.iter().map(|p| partial_path(p)).collect();
    match work(&partials) {
        Ok(v) => {
            for (tmp, dst) in partials.iter().zip(outputs) {
                if tmp.exists() {
                    fs::rename(tmp, dst).at_path(*dst)?;
                }
            }
            Ok(v)
        }
        Err(e) => {
            for tmp in &partials {
                let _ = fs::remove_file(tmp);
            }
            Err(e)
        }
    }
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    Ok(sha256_hex(&fs::read(path).at_path(path)?))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
