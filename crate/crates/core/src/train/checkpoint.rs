//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//! `"UPAC"`, version `u32`, entry count `u32`, then per entry a `u16` name
//! length, the UTF-8 name, dtype `u8` (0 = `f32`), rank `u8`, one `u32` per
//! extent and the raw `f32` values. Parameters come first in declaration
//! order, then batch-norm buffers, then `meta.*` configuration and progress.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::arch::{BlockOverrides, ExcMode, Model, UpaNetsConfig};
use crate::dataio::NormStats;
use crate::error::{Error, Result};
use crate::tensor::{RunningStats, Tensor};

pub const MAGIC: &[u8; 4] = b"UPAC";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Training progress stored alongside the weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointMeta {
    pub epoch: usize,
    /// Best test top-1 seen so far, as a fraction.
    pub best_top1: f64,
    /// Input normalization the weights were trained with.
    pub norm: NormStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub meta: CheckpointMeta,
}

struct Entry {
    shape: Vec<usize>,
    values: Vec<f32>,
}

fn config_entries(cfg: &UpaNetsConfig, meta: &CheckpointMeta) -> Vec<(&'static str, f32)> {
    vec![
        ("meta.base_width", cfg.base_width as f32),
        ("meta.depth", cfg.depth as f32),
        ("meta.classes", cfg.classes as f32),
        ("meta.exc_mode", f32::from(cfg.exc_mode.code())),
        ("meta.use_cpa", f32::from(u8::from(cfg.ablation.use_cpa))),
        ("meta.groups", cfg.ablation.groups as f32),
        ("meta.shuffle", f32::from(u8::from(cfg.ablation.shuffle))),
        ("meta.spa_bias", f32::from(u8::from(cfg.spa_bias))),
        ("meta.image_size", cfg.image_size as f32),
        ("meta.epoch", meta.epoch as f32),
        ("meta.best_top1", meta.best_top1 as f32),
    ]
}

fn put_entry(out: &mut Vec<u8>, name: &str, shape: &[usize], values: impl Iterator<Item = f32>) -> Result<()> {
    let len = u16::try_from(name.len())
        .map_err(|_| Error::Checkpoint(format!("entry name of {} bytes is too long", name.len())))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(DTYPE_F32);
    let rank = u8::try_from(shape.len()).map_err(|_| Error::Checkpoint(format!("{name}: rank too large")))?;
    out.push(rank);
    for &d in shape {
        let d = u32::try_from(d).map_err(|_| Error::Checkpoint(format!("{name}: extent {d} too large")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

pub fn encode_checkpoint(model: &Model<f32>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let cfg_entries = config_entries(model.config(), meta);
    let count = model.params.len() + 3 * model.buffers.len() + cfg_entries.len() + 2;
    let mut out = Vec::with_capacity(12 + 4 * model.param_count() + 64 * count);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for (name, t) in model.params.iter() {
        put_entry(&mut out, name, t.shape(), t.data().iter().copied())?;
    }
    for (path, stats) in model.buffers.iter() {
        let c = stats.channels();
        put_entry(
            &mut out,
            &format!("{path}.running_mean"),
            &[c],
            stats.mean.iter().map(|&v| v as f32),
        )?;
        put_entry(
            &mut out,
            &format!("{path}.running_var"),
            &[c],
            stats.var.iter().map(|&v| v as f32),
        )?;
        put_entry(
            &mut out,
            &format!("{path}.num_batches_tracked"),
            &[1],
            std::iter::once(stats.batches_tracked as f32),
        )?;
    }
    for (name, v) in cfg_entries {
        put_entry(&mut out, name, &[1], std::iter::once(v))?;
    }
    put_entry(&mut out, "meta.norm_mean", &[3], meta.norm.mean.into_iter())?;
    put_entry(&mut out, "meta.norm_std", &[3], meta.norm.std.into_iter())?;
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} reading {what} ({n} bytes needed, {} left)",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

fn read_entries(bytes: &[u8]) -> Result<IndexMap<String, Entry>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("missing UPAC magic bytes".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let count = r.u32("entry count")?;
    let mut entries = IndexMap::new();
    for i in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Checkpoint(format!("entry {i} name is not UTF-8")))?
            .to_string();
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(Error::Checkpoint(format!("{name}: unknown dtype tag {dtype}")));
        }
        let rank = r.u8("rank")? as usize;
        let shape = (0..rank)
            .map(|_| r.u32("extent").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: extents {shape:?} overflow")))?;
        let values = r
            .take(n, &name)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        if entries.insert(name.clone(), Entry { shape, values }).is_some() {
            return Err(Error::Checkpoint(format!("duplicate entry {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after {count} entries",
            bytes.len() - r.pos
        )));
    }
    Ok(entries)
}

fn take_scalar(entries: &mut IndexMap<String, Entry>, name: &str) -> Result<f32> {
    match entries.shift_remove(name) {
        Some(Entry { values, .. }) if values.len() == 1 => Ok(values[0]),
        Some(_) => Err(Error::Checkpoint(format!("{name} must hold one value"))),
        None => Err(Error::Checkpoint(format!("missing {name}"))),
    }
}

fn take_count(entries: &mut IndexMap<String, Entry>, name: &str) -> Result<usize> {
    let v = take_scalar(entries, name)?;
    if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
        return Err(Error::Checkpoint(format!("{name} = {v} is not a count")));
    }
    Ok(v as usize)
}

fn take_flag(entries: &mut IndexMap<String, Entry>, name: &str) -> Result<bool> {
    match take_count(entries, name)? {
        0 => Ok(false),
        1 => Ok(true),
        v => Err(Error::Checkpoint(format!("{name} = {v} is not a flag"))),
    }
}

fn take_vector(entries: &mut IndexMap<String, Entry>, name: &str, len: usize) -> Result<Vec<f64>> {
    match entries.shift_remove(name) {
        Some(Entry { shape, values }) if shape == [len] => Ok(values.into_iter().map(f64::from).collect()),
        Some(Entry { shape, .. }) => Err(Error::Checkpoint(format!(
            "{name} has extents {shape:?}, expected [{len}]"
        ))),
        None => Err(Error::Checkpoint(format!("missing {name}"))),
    }
}

fn take_norm(entries: &mut IndexMap<String, Entry>) -> Result<NormStats> {
    let mean = take_vector(entries, "meta.norm_mean", 3)?;
    let std = take_vector(entries, "meta.norm_std", 3)?;
    let norm = NormStats {
        mean: [mean[0] as f32, mean[1] as f32, mean[2] as f32],
        std: [std[0] as f32, std[1] as f32, std[2] as f32],
    };
    norm.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(norm)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut entries = read_entries(bytes)?;
    let mut cfg = UpaNetsConfig::new(
        take_count(&mut entries, "meta.base_width")?,
        take_count(&mut entries, "meta.classes")?,
    );
    cfg.depth = take_count(&mut entries, "meta.depth")?;
    let code = u8::try_from(take_count(&mut entries, "meta.exc_mode")?)
        .map_err(|_| Error::Checkpoint("meta.exc_mode out of range".into()))?;
    cfg.exc_mode = ExcMode::from_code(code).map_err(|e| Error::Checkpoint(e.to_string()))?;
    cfg.ablation = BlockOverrides {
        use_cpa: take_flag(&mut entries, "meta.use_cpa")?,
        groups: take_count(&mut entries, "meta.groups")?,
        shuffle: take_flag(&mut entries, "meta.shuffle")?,
    };
    cfg.spa_bias = take_flag(&mut entries, "meta.spa_bias")?;
    cfg.image_size = take_count(&mut entries, "meta.image_size")?;
    let meta = CheckpointMeta {
        epoch: take_count(&mut entries, "meta.epoch")?,
        best_top1: f64::from(take_scalar(&mut entries, "meta.best_top1")?),
        norm: take_norm(&mut entries)?,
    };

    let mut model = Model::<f32>::new(cfg, 0).map_err(|e| Error::Checkpoint(format!("stored configuration: {e}")))?;
    for (name, t) in model.params.iter_mut() {
        let Entry { shape, values } = entries
            .shift_remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        if shape != t.shape() {
            return Err(Error::Checkpoint(format!(
                "{name} has extents {shape:?}, model expects {:?}",
                t.shape()
            )));
        }
        *t = Tensor::new(shape, values)?;
    }
    let paths: Vec<String> = model.buffers.iter().map(|(p, _)| p.to_string()).collect();
    for path in paths {
        let stats = model.buffers.get_mut(&path)?;
        let c = stats.channels();
        *stats = RunningStats {
            mean: take_vector(&mut entries, &format!("{path}.running_mean"), c)?,
            var: take_vector(&mut entries, &format!("{path}.running_var"), c)?,
            batches_tracked: take_count(&mut entries, &format!("{path}.num_batches_tracked"))? as u64,
        };
    }
    if let Some(extra) = entries.keys().next() {
        return Err(Error::Checkpoint(format!(
            "{} entries unknown to the stored configuration, first {extra}",
            entries.len()
        )));
    }
    Ok(Checkpoint { model, meta })
}

/// Write through a sibling temporary file so a crash never leaves a torn checkpoint.
pub fn save_checkpoint(path: &Path, model: &Model<f32>, meta: &CheckpointMeta) -> Result<()> {
    let bytes = encode_checkpoint(model, meta)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Checkpoint(d) => Error::Checkpoint(format!("{}: {d}", path.display())),
        other => other,
    })
}
