//! Small filesystem and clock helpers shared by the storage-facing modules.

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::Result;

/// Milliseconds since the Unix epoch.
pub fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

static STAGE_SEQ: AtomicU64 = AtomicU64::new(0);

fn stage_name(tag: &str) -> String {
    let seq = STAGE_SEQ.fetch_add(1, Ordering::Relaxed);
    format!(".tmp-{}-{}-{}", tag, std::process::id(), seq)
}

/// Writes `bytes` to `path` via a staged temp file in `staging_dir`, then an
/// atomic rename. Replaces any existing file at `path`.
pub fn write_atomic(staging_dir: &Path, path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::create_dir_all(staging_dir)?;
    let tmp = staging_dir.join(stage_name("w"));
    let res = (|| -> Result<()> {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    res
}

/// Like [`write_atomic`] but never replaces: fails with `AlreadyExists` when
/// `path` is occupied. Hard-link out of staging gives the no-clobber rename.
pub fn write_atomic_new(staging_dir: &Path, path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::create_dir_all(staging_dir)?;
    let tmp = staging_dir.join(stage_name("n"));
    let res = (|| -> Result<()> {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::hard_link(&tmp, path)?;
        Ok(())
    })();
    let _ = fs::remove_file(&tmp);
    res
}

/// Deletes leftover staged temp files. Called once when a lake is opened.
pub fn clean_staging(staging_dir: &Path) -> Result<()> {
    if !staging_dir.exists() {
        return Ok(());
    }
    for entry in fs::read_dir(staging_dir)? {
        let entry = entry?;
        if entry.file_name().to_string_lossy().starts_with(".tmp-") {
            let _ = fs::remove_file(entry.path());
        }
    }
    Ok(())
}
