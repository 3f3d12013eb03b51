//! Images, masks, augmentation, dataset manifests and checkpoints.

pub mod augment;
pub mod checkpoint;
pub mod image_io;
pub mod manifest;
pub mod synthetic;

pub use augment::{augment, AugmentParams};
pub use checkpoint::{load_checkpoint, save_checkpoint, LoadedCheckpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use image_io::{load_image, load_mask, resize, resize_to, write_image_png, write_mask_png, Interpolation};
pub use manifest::{load_samples, Manifest, ManifestEntry, Sample};
pub use synthetic::{synthetic_sample, synthetic_set};

use std::path::Path;

use crate::error::{LfaError, Result};

/// Writes through a temporary file in the destination directory and renames
/// it into place, so a failed write never leaves a partial file.
pub(crate) fn write_atomically(path: &Path, write: impl FnOnce(&mut std::fs::File) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| LfaError::io(path, e))?;
    write(tmp.as_file_mut())?;
    tmp.as_file().sync_all().map_err(|e| LfaError::io(path, e))?;
    tmp.persist(path).map_err(|e| LfaError::io(path, e.error))?;
    Ok(())
}
