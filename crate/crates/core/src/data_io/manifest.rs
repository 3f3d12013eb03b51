use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::image_io::{load_image, load_mask, resize, Interpolation};
use crate::error::{LfaError, Result};
use crate::tensor::Tensor;

pub const DEFAULT_SPLIT_FRACTION: f64 = 0.8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask: PathBuf,
}

/// Image/mask pairs, one `image<TAB>mask` per line. Relative paths are
/// resolved against the manifest's directory; `#` starts a comment.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub split_seed: u64,
    /// Fraction of entries used for training, rounded down.
    pub split_fraction: f64,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).filter(|f| !f.is_empty()).collect();
            if fields.len() != 2 {
                return Err(LfaError::Data(format!(
                    "manifest line {}: expected `image<TAB>mask`, found {} field(s)",
                    i + 1,
                    fields.len()
                )));
            }
            let resolve = |f: &str| {
                let p = Path::new(f);
                if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base.join(p)
                }
            };
            entries.push(ManifestEntry {
                image: resolve(fields[0]),
                mask: resolve(fields[1]),
            });
        }
        if entries.is_empty() {
            return Err(LfaError::Data("manifest has no entries".into()));
        }
        Ok(Manifest {
            entries,
            split_seed: 0,
            split_fraction: DEFAULT_SPLIT_FRACTION,
        })
    }

    /// Reads and parses a manifest, checking that every listed file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| LfaError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let m = Self::parse(&text, base)?;
        for e in &m.entries {
            for p in [&e.image, &e.mask] {
                if !p.is_file() {
                    return Err(LfaError::io(
                        p,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "listed in manifest but missing"),
                    ));
                }
            }
        }
        Ok(m)
    }

    pub fn with_split(mut self, seed: u64, fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(LfaError::config(format!("split fraction {fraction} outside [0, 1]")));
        }
        self.split_seed = seed;
        self.split_fraction = fraction;
        Ok(self)
    }

    /// Seeded shuffle, then the first ⌊fraction·n⌋ entries train and the
    /// rest validate.
    pub fn split(&self) -> (Vec<ManifestEntry>, Vec<ManifestEntry>) {
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.split_seed));
        let n_train = (self.split_fraction * self.entries.len() as f64).floor() as usize;
        let pick = |ix: &[usize]| ix.iter().map(|&i| self.entries[i].clone()).collect();
        (pick(&order[..n_train]), pick(&order[n_train..]))
    }
}

/// One image (1, 3, H, W) and its binary mask (1, 1, H, W).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub name: String,
    pub image: Tensor,
    pub mask: Tensor,
}

impl Sample {
    /// Loads the pair, resizing both to `size`×`size` when given.
    pub fn load(entry: &ManifestEntry, size: Option<usize>) -> Result<Self> {
        let mut image = load_image(&entry.image)?;
        let mut mask = load_mask(&entry.mask)?;
        if let Some(s) = size {
            image = resize(&image, s, Interpolation::Bilinear)?;
            mask = resize(&mask, s, Interpolation::Nearest)?;
        }
        let (si, sm) = (image.shape(), mask.shape());
        if (si.h, si.w) != (sm.h, sm.w) {
            return Err(LfaError::Data(format!(
                "{}: image {}x{} and mask {}x{} differ",
                entry.image.display(),
                si.h,
                si.w,
                sm.h,
                sm.w
            )));
        }
        let name = entry
            .image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(Sample { name, image, mask })
    }
}

pub fn load_samples(entries: &[ManifestEntry], size: Option<usize>) -> Result<Vec<Sample>> {
    entries.iter().map(|e| Sample::load(e, size)).collect()
}
