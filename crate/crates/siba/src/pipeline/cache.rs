//! Content-addressed stage caching. A stage's directory name embeds a hash
//! of everything that determines its output (config subtree, seeds, input
//! stage keys), so identical re-runs are recognized and skipped, and any
//! input change naturally lands in a fresh directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Result, SibaError};
use crate::types::LabeledImageSet;

pub const DONE_MARKER: &str = "done.key";
pub const FAILED_MARKER: &str = "FAILED";

/// Hex SHA-256 of the given parts, length-delimited so concatenation cannot
/// collide.
pub fn stage_key(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update((p.len() as u64).to_le_bytes());
        hasher.update(p.as_bytes());
    }
    let mut out = String::new();
    for b in hasher.finalize() {
        write!(out, "{b:02x}").expect("infallible");
    }
    out
}

/// Stable fingerprint of a dataset's contents.
pub fn dataset_fingerprint(data: &LabeledImageSet) -> String {
    let mut hasher = Sha256::new();
    hasher.update((data.len() as u64).to_le_bytes());
    hasher.update((data.num_classes() as u64).to_le_bytes());
    for i in 0..data.len() {
        hasher.update((data.label(i) as u64).to_le_bytes());
        for v in data.image(i) {
            hasher.update(v.to_le_bytes());
        }
    }
    let mut out = String::new();
    for b in hasher.finalize() {
        write!(out, "{b:02x}").expect("infallible");
    }
    out
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub name: String,
    pub dir: PathBuf,
    pub key: String,
    pub cache_hit: bool,
}

/// Run `build` inside the stage's content-addressed directory unless a
/// completed run with the same key already exists. A failing build leaves a
/// FAILED marker with the error text and keeps partial artifacts.
pub fn run_stage<F>(
    out_dir: &Path,
    name: &str,
    key: &str,
    build: F,
) -> Result<StageOutcome>
where
    F: FnOnce(&Path) -> Result<()>,
{
    let dir = out_dir.join("stages").join(format!("{name}-{}", &key[..12]));
    let marker = dir.join(DONE_MARKER);
    if marker.is_file() && fs::read_to_string(&marker)?.trim() == key {
        log::info!("stage {name}: cache hit ({})", &key[..12]);
        return Ok(StageOutcome { name: name.into(), dir, key: key.into(), cache_hit: true });
    }
    fs::create_dir_all(&dir)?;
    let _ = fs::remove_file(dir.join(FAILED_MARKER));
    log::info!("stage {name}: running into {}", dir.display());
    match build(&dir) {
        Ok(()) => {
            fs::write(&marker, format!("{key}\n"))?;
            Ok(StageOutcome { name: name.into(), dir, key: key.into(), cache_hit: false })
        }
        Err(e) => {
            let _ = fs::write(dir.join(FAILED_MARKER), format!("stage {name} failed: {e}\n"));
            Err(SibaError::Training(format!("stage {name} failed: {e}")))
        }
    }
}
