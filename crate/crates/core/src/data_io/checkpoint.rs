//! Binary checkpoint container, little-endian throughout:
//!
//! ```text
//! magic "LFANETCK" | version u32 | payload length u64 | payload | crc32 u32
//! payload := seed u64
//!            config   (u32 length, UTF-8 TOML)
//!            tensors  (u32 count, each: name, 4 × u32 extents, f32 values)
//!            buffers  (u32 count, each: name, u32 channels, means, variances)
//!            optimizer flag u8, then optionally: step u64,
//!                      settings (u32 length, UTF-8 TOML), first and second moments
//! name := u16 length, UTF-8 bytes
//! ```
//!
//! The checksum covers every byte before it.

use std::io::Write;
use std::path::Path;

use super::write_atomically;
use crate::error::{LfaError, Result};
use crate::layers::ChannelStats;
use crate::model::{build_model, Model, ModelConfig};
use crate::params::{NamedStats, NamedTensor};
use crate::tensor::{Shape, Tensor};
use crate::training::{AdamConfig, AdamState};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LFANETCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;

#[derive(Debug)]
pub struct LoadedCheckpoint {
    pub model: Model,
    pub optimizer: Option<AdamState>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn text(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn name(&mut self, s: &str) {
        self.u16(s.len() as u16);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn tensor(&mut self, t: &Tensor) {
        for d in t.shape().dims() {
            self.u32(d as u32);
        }
        self.f32s(t.data());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn truncated(&self, what: &str) -> LfaError {
        LfaError::Truncated {
            path: self.path.to_path_buf(),
            detail: format!("{what} at byte {}", self.at),
        }
    }
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.at < n {
            return Err(self.truncated(what));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1, "u8")?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, "u16")?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, "u32")?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, "u64")?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| self.truncated("length"))?, "values")?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn utf8(&mut self, n: usize) -> Result<String> {
        let bytes = self.take(n, "text")?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.truncated("invalid UTF-8"))
    }
    fn text(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        self.utf8(n)
    }
    fn name(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        self.utf8(n)
    }
    fn tensor(&mut self) -> Result<Tensor> {
        let d = [self.u32()?, self.u32()?, self.u32()?, self.u32()?].map(|x| x as usize);
        let shape = Shape::from(d);
        let data = self.f32s(shape.numel())?;
        Tensor::from_vec(shape, data)
    }
}

fn encode(model: &Model, optimizer: Option<&AdamState>) -> Vec<u8> {
    let mut p = Writer(Vec::new());
    p.u64(model.seed);
    p.text(&model.config.to_toml());
    p.u32(model.params.params().len() as u32);
    for t in model.params.params() {
        p.name(&t.name);
        p.tensor(&t.value);
    }
    p.u32(model.params.buffers().len() as u32);
    for b in model.params.buffers() {
        p.name(&b.name);
        p.u32(b.stats.channels() as u32);
        p.f32s(&b.stats.mean);
        p.f32s(&b.stats.var);
    }
    match optimizer {
        None => p.u8(0),
        Some(st) => {
            p.u8(1);
            p.u64(st.step);
            p.text(&toml::to_string(&st.config).expect("optimizer settings serialize"));
            for t in st.m.iter().chain(&st.v) {
                p.tensor(t);
            }
        }
    }
    let payload = p.0;

    let mut out = Writer(Vec::with_capacity(payload.len() + HEADER_LEN + 4));
    out.0.extend_from_slice(CHECKPOINT_MAGIC);
    out.u32(CHECKPOINT_VERSION);
    out.u64(payload.len() as u64);
    out.0.extend_from_slice(&payload);
    let crc = crc32fast::hash(&out.0);
    out.u32(crc);
    out.0
}

/// Writes the model (and optionally optimizer state) atomically.
pub fn save_checkpoint(model: &Model, optimizer: Option<&AdamState>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(model, optimizer);
    write_atomically(path, |f| f.write_all(&bytes).map_err(|e| LfaError::io(path, e)))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<LoadedCheckpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| LfaError::io(path, e))?;
    decode(&bytes, path)
}

fn decode(bytes: &[u8], path: &Path) -> Result<LoadedCheckpoint> {
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(LfaError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let mut r = Reader { buf: bytes, at: 8, path };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(LfaError::Version {
            path: path.to_path_buf(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let payload_len = r.u64()? as usize;
    let expected_len = HEADER_LEN.checked_add(payload_len).and_then(|n| n.checked_add(4));
    if expected_len != Some(bytes.len()) {
        return Err(LfaError::Truncated {
            path: path.to_path_buf(),
            detail: format!("header declares {payload_len} payload bytes, file has {}", bytes.len()),
        });
    }
    let body_end = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(LfaError::Checksum {
            path: path.to_path_buf(),
            stored,
            computed,
        });
    }

    let mut r = Reader {
        buf: &bytes[..body_end],
        at: HEADER_LEN,
        path,
    };
    let seed = r.u64()?;
    let config = ModelConfig::from_toml(&r.text()?)?;
    let n = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(n);
    for _ in 0..n {
        let name = r.name()?;
        tensors.push(NamedTensor {
            name,
            value: r.tensor()?,
        });
    }
    let n = r.u32()? as usize;
    let mut buffers = Vec::with_capacity(n);
    for _ in 0..n {
        let name = r.name()?;
        let c = r.u32()? as usize;
        let mean = r.f32s(c)?;
        let var = r.f32s(c)?;
        buffers.push(NamedStats {
            name,
            stats: ChannelStats { mean, var },
        });
    }
    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let cfg: AdamConfig = toml::from_str(&r.text()?).map_err(|e| LfaError::config(e.to_string()))?;
            let mut moments = Vec::with_capacity(2 * tensors.len());
            for _ in 0..2 * tensors.len() {
                moments.push(r.tensor()?);
            }
            let v = moments.split_off(tensors.len());
            Some(AdamState {
                config: cfg,
                step,
                m: moments,
                v,
            })
        }
        other => return Err(r.truncated(&format!("optimizer flag {other}"))),
    };
    if r.at != r.buf.len() {
        return Err(r.truncated("trailing bytes"));
    }

    let mut model = build_model(&config, seed)?;
    model.params.load_named(&tensors, &buffers)?;
    if let Some(st) = &optimizer {
        for (t, m) in tensors.iter().zip(&st.m) {
            if t.value.shape() != m.shape() {
                return Err(r.truncated(&format!("optimizer moment shape for `{}`", t.name)));
            }
        }
    }
    Ok(LoadedCheckpoint { model, optimizer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ablation_config;

    fn saved(dir: &Path, with_opt: bool) -> (Model, std::path::PathBuf) {
        let mut model = build_model(&ablation_config("MLU+LF-Bottleneck").unwrap(), 11).unwrap();
        model.params.stats_mut(model.encoder[0].bn.stats).mean[0] = 0.125;
        let opt = AdamState::new(&model.params, AdamConfig::default()).unwrap();
        let p = dir.join("m.ckpt");
        save_checkpoint(&model, with_opt.then_some(&opt), &p).unwrap();
        (model, p)
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        for with_opt in [false, true] {
            let (model, p) = saved(dir.path(), with_opt);
            let back = load_checkpoint(&p).unwrap();
            assert_eq!(back.model.config, model.config);
            assert_eq!(back.model.seed, model.seed);
            for (a, b) in back.model.params.params().iter().zip(model.params.params()) {
                let ab: Vec<u32> = a.value.data().iter().map(|x| x.to_bits()).collect();
                let bb: Vec<u32> = b.value.data().iter().map(|x| x.to_bits()).collect();
                assert_eq!(ab, bb, "{}", a.name);
            }
            assert_eq!(back.model.params.buffers(), model.params.buffers());
            assert_eq!(back.optimizer.is_some(), with_opt);
        }
    }

    #[test]
    fn corruption_kinds_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let (_, p) = saved(dir.path(), false);
        let good = std::fs::read(&p).unwrap();

        let mut flipped = good.clone();
        let mid = good.len() / 2;
        flipped[mid] ^= 0x40;
        assert!(matches!(decode(&flipped, &p), Err(LfaError::Checksum { .. })));

        let mut bumped = good.clone();
        bumped[8] = 2;
        assert!(matches!(decode(&bumped, &p), Err(LfaError::Version { found: 2, .. })));

        assert!(matches!(decode(&good[..good.len() - 10], &p), Err(LfaError::Truncated { .. })));
        assert!(matches!(decode(b"PNG....", &p), Err(LfaError::BadMagic { .. })));
        assert!(matches!(decode(&good[..10], &p), Err(LfaError::Truncated { .. })));
    }
}
