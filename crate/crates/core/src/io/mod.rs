//! Dataset files: YOLO annotations, PPM/PGM and PNG images, the JSON
//! manifest and the append-only verdict log.

mod annotation;
mod image;
mod manifest;
mod verdicts;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use annotation::{format_annotation, parse_annotation, read_annotation, write_annotation, Label};
pub use image::{decode_image, decode_pnm, encode_pnm, encode_png, read_image, write_image};
pub use manifest::{class_map, resolve, write_rendered_dataset, Manifest, ManifestItem, Provenance, MANIFEST_FILE};
pub use verdicts::{append_verdict, read_verdicts, VerdictRecord};

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
