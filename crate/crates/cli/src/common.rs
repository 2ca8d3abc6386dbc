use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use upanets::arch::{BlockOverrides, UpaNetsConfig};
use upanets::dataio::{load_cifar_dir, synth_blobs, CifarKind, NormStats, Splits};
use upanets::{Error, Result};

use crate::args::{DataArgs, ModelArgs};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_CHECKPOINT: u8 = 3;
pub const EXIT_USAGE: u8 = 4;

/// Default number of generated images per split.
const SYNTH_TRAIN: usize = 1000;
const SYNTH_TEST: usize = 200;
/// Offset separating the synthetic test seed from the training seed.
const SYNTH_TEST_SEED_OFFSET: u64 = 1_000_003;

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MissingData { .. } | Error::Format { .. } => EXIT_DATA,
        Error::Checkpoint(_) => EXIT_CHECKPOINT,
        Error::Config(_) | Error::Input(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

pub fn model_config(args: &ModelArgs) -> Result<UpaNetsConfig> {
    let width = args
        .model
        .strip_prefix("upa")
        .and_then(|w| w.parse::<usize>().ok())
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown model {:?}; use upa16, upa32, upa64 or upaN",
                args.model
            ))
        })?;
    let mut cfg = match width {
        16 | 32 | 64 => UpaNetsConfig::preset(&args.model, args.classes)?,
        _ => UpaNetsConfig::new(width, args.classes),
    };
    cfg.depth = args.depth;
    cfg.exc_mode = args.exc_mode;
    cfg.ablation = BlockOverrides {
        use_cpa: !args.no_cpa,
        groups: args.groups,
        shuffle: args.shuffle,
    };
    cfg.spa_bias = !args.no_spa_bias;
    cfg.validate()?;
    Ok(cfg)
}

pub fn describe_model(m: &mut Manifest, cfg: &UpaNetsConfig) {
    m.set("base_width", cfg.base_width);
    m.set("depth", cfg.depth);
    m.set("classes", cfg.classes);
    m.set("exc_mode", cfg.exc_mode);
    m.set("use_cpa", cfg.ablation.use_cpa);
    m.set("groups", cfg.ablation.groups);
    m.set("shuffle", cfg.ablation.shuffle);
    m.set("spa_bias", cfg.spa_bias);
    m.set("image_size", cfg.image_size);
}

pub fn describe_norm(m: &mut Manifest, norm: &NormStats) {
    let join = |v: &[f32; 3]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    m.set("norm_mean", join(&norm.mean));
    m.set("norm_std", join(&norm.std));
}

pub struct Loaded {
    pub splits: Splits,
    /// Statistics of the full training split.
    pub norm: NormStats,
}

fn cifar_kind(classes: usize) -> Result<CifarKind> {
    match classes {
        10 => Ok(CifarKind::Cifar10),
        100 => Ok(CifarKind::Cifar100),
        c => Err(Error::Config(format!(
            "CIFAR data has 10 or 100 classes, not {c}; use --synthetic for other class counts"
        ))),
    }
}

pub fn default_data_dir(classes: usize) -> PathBuf {
    PathBuf::from(if classes == 100 {
        "data/cifar-100-binary"
    } else {
        "data/cifar-10-batches-bin"
    })
}

/// Load the requested splits and record where they came from.
pub fn load_data(args: &DataArgs, classes: usize, seed: u64, m: &mut Manifest) -> Result<Loaded> {
    let loaded = if args.synthetic {
        let n_train = args.train_size.unwrap_or(SYNTH_TRAIN);
        let n_test = args.test_size.unwrap_or(SYNTH_TEST);
        let train = synth_blobs(classes, n_train, seed)?;
        let test = synth_blobs(classes, n_test, seed.wrapping_add(SYNTH_TEST_SEED_OFFSET))?;
        let norm = NormStats::compute(&train)?;
        m.set("data", "synthetic");
        m.set("data_seed", seed);
        Loaded {
            splits: Splits { train, test },
            norm,
        }
    } else {
        let kind = cifar_kind(classes)?;
        let dir = args.data_dir.clone().unwrap_or_else(|| default_data_dir(classes));
        let full = load_cifar_dir(&dir, kind)?;
        let norm = NormStats::load_or_compute(&dir, &full.train)?;
        m.set("data", format!("{kind:?}").to_lowercase());
        m.set("data_dir", dir.display());
        let train = match args.train_size {
            Some(n) => full.train.head(n),
            None => full.train,
        };
        let test = match args.test_size {
            Some(n) => full.test.head(n),
            None => full.test,
        };
        Loaded {
            splits: Splits { train, test },
            norm,
        }
    };
    m.set("train_size", loaded.splits.train.len());
    m.set("test_size", loaded.splits.test.len());
    Ok(loaded)
}

/// Resolved configuration of one run as `key=value` lines.
pub struct Manifest {
    path: PathBuf,
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(out: &Path, command: &str) -> Result<Self> {
        fs::create_dir_all(out)?;
        let mut m = Manifest {
            path: out.join("manifest.txt"),
            entries: Vec::new(),
        };
        m.set("command", command);
        m.set("version", env!("CARGO_PKG_VERSION"));
        Ok(m)
    }

    /// Replaces an existing key in place.
    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn write(&self) -> Result<()> {
        let text: String = self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        fs::write(&self.path, text)?;
        Ok(())
    }
}
