use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, Splits, PIXELS};
use crate::error::{Error, Result};

/// Binary layout of one CIFAR record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarKind {
    /// One label byte, then 3072 pixel bytes.
    Cifar10,
    /// Coarse and fine label bytes, then 3072 pixel bytes; the fine label is used.
    Cifar100,
}

impl CifarKind {
    pub fn label_bytes(self) -> usize {
        match self {
            CifarKind::Cifar10 => 1,
            CifarKind::Cifar100 => 2,
        }
    }

    pub fn record_len(self) -> usize {
        self.label_bytes() + PIXELS
    }

    pub fn classes(self) -> usize {
        match self {
            CifarKind::Cifar10 => 10,
            CifarKind::Cifar100 => 100,
        }
    }

    pub fn train_files(self) -> Vec<&'static str> {
        match self {
            CifarKind::Cifar10 => vec![
                "data_batch_1.bin",
                "data_batch_2.bin",
                "data_batch_3.bin",
                "data_batch_4.bin",
                "data_batch_5.bin",
            ],
            CifarKind::Cifar100 => vec!["train.bin"],
        }
    }

    pub fn test_file(self) -> &'static str {
        match self {
            CifarKind::Cifar10 => "test_batch.bin",
            CifarKind::Cifar100 => "test.bin",
        }
    }
}

/// One image: label plus planar RGB scaled by 1/255.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub label: usize,
    pub pixels: Vec<f32>,
}

/// Parse exactly one record.
pub fn load_cifar_record(bytes: &[u8], kind: CifarKind) -> Result<LabeledImage> {
    parse_at(bytes, kind, 0)
}

fn parse_at(bytes: &[u8], kind: CifarKind, offset: u64) -> Result<LabeledImage> {
    if bytes.len() != kind.record_len() {
        return Err(Error::Format {
            offset,
            detail: format!("record is {} bytes, expected {}", bytes.len(), kind.record_len()),
        });
    }
    let label = bytes[kind.label_bytes() - 1] as usize;
    if label >= kind.classes() {
        return Err(Error::Format {
            offset,
            detail: format!("label {label} outside [0, {})", kind.classes()),
        });
    }
    let pixels = bytes[kind.label_bytes()..]
        .iter()
        .map(|&b| f32::from(b) / 255.0)
        .collect();
    Ok(LabeledImage { label, pixels })
}

/// Parse a whole batch file; a trailing partial record is a format error at its offset.
pub fn parse_cifar_batch(bytes: &[u8], kind: CifarKind) -> Result<Dataset> {
    let len = kind.record_len();
    if !bytes.len().is_multiple_of(len) {
        let whole = bytes.len() / len;
        return Err(Error::Format {
            offset: (whole * len) as u64,
            detail: format!(
                "{} trailing bytes after {whole} records of {len} bytes",
                bytes.len() % len
            ),
        });
    }
    let mut data = Dataset::with_capacity(kind.classes(), bytes.len() / len);
    for (i, rec) in bytes.chunks_exact(len).enumerate() {
        let img = parse_at(rec, kind, (i * len) as u64)?;
        data.push(img.label, &img.pixels)?;
    }
    Ok(data)
}

fn read_file(path: &Path, kind: CifarKind) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::MissingData {
        path: path.to_path_buf(),
        detail: format!("cannot read CIFAR batch: {e}"),
    })?;
    parse_cifar_batch(&bytes, kind).map_err(|e| match e {
        Error::Format { offset, detail } => Error::Format {
            offset,
            detail: format!("{}: {detail}", path.display()),
        },
        other => other,
    })
}

/// Expected batch files of `kind` under `dir`.
pub fn cifar_files(dir: &Path, kind: CifarKind) -> Vec<PathBuf> {
    kind.train_files()
        .into_iter()
        .chain(std::iter::once(kind.test_file()))
        .map(|f| dir.join(f))
        .collect()
}

/// Train and test splits from the standard binary distribution layout.
pub fn load_cifar_dir(dir: &Path, kind: CifarKind) -> Result<Splits> {
    if let Some(missing) = cifar_files(dir, kind).into_iter().find(|p| !p.is_file()) {
        return Err(Error::MissingData {
            path: missing,
            detail: format!(
                "expected {:?} binary batches ({} and {}) in {}",
                kind,
                kind.train_files().join(", "),
                kind.test_file(),
                dir.display()
            ),
        });
    }
    let mut train = Dataset::with_capacity(kind.classes(), 0);
    for f in kind.train_files() {
        train.extend(&read_file(&dir.join(f), kind)?)?;
    }
    let test = read_file(&dir.join(kind.test_file()), kind)?;
    Ok(Splits { train, test })
}
