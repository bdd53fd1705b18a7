//! Content addressing of stage outputs.
//!
//! Each stage directory holds a `stamp` file with the hash of everything
//! its outputs were computed from. A stage whose stamp matches is skipped.

use std::path::Path;

use gwhi_core::dataset::write_atomic;
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const STAMP_FILE: &str = "stamp";

/// Hash of length-prefixed parts, so `["ab", "c"]` and `["a", "bc"]` differ.
pub fn digest<I, P>(parts: I) -> String
where
    I: IntoIterator<Item = P>,
    P: AsRef<[u8]>,
{
    let mut h = Sha256::new();
    for p in parts {
        let p = p.as_ref();
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

pub fn read(dir: &Path) -> Option<String> {
    std::fs::read_to_string(dir.join(STAMP_FILE))
        .ok()
        .map(|s| s.trim().to_string())
}

pub fn is_current(dir: &Path, hash: &str) -> bool {
    read(dir).as_deref() == Some(hash)
}

/// Written last, after every output of the stage is in place.
pub fn write(dir: &Path, hash: &str) -> Result<()> {
    write_atomic(&dir.join(STAMP_FILE), format!("{hash}\n").as_bytes())?;
    Ok(())
}
