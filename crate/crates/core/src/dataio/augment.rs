use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, CHANNELS, PIXELS, PLANE, SIDE};
use crate::error::{Error, Result};

/// File name of the cached statistics inside a data directory.
pub const NORM_STATS_FILE: &str = "upanets_norm_stats.txt";

/// Per-channel mean and standard deviation; `std` is positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mean: [f32; CHANNELS],
    pub std: [f32; CHANNELS],
}

impl NormStats {
    pub const IDENTITY: NormStats = NormStats {
        mean: [0.0; CHANNELS],
        std: [1.0; CHANNELS],
    };

    /// Population statistics over every pixel of `data`.
    pub fn compute(data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Input("cannot compute normalization of an empty split".into()));
        }
        let mut sum = [0f64; CHANNELS];
        let mut sq = [0f64; CHANNELS];
        for i in 0..data.len() {
            for (c, plane) in data.image(i).chunks_exact(PLANE).enumerate() {
                for &p in plane {
                    sum[c] += f64::from(p);
                    sq[c] += f64::from(p) * f64::from(p);
                }
            }
        }
        let count = (data.len() * PLANE) as f64;
        let mut stats = NormStats::IDENTITY;
        for c in 0..CHANNELS {
            let mean = sum[c] / count;
            let var = (sq[c] / count - mean * mean).max(0.0);
            stats.mean[c] = mean as f32;
            // A constant channel keeps unit scale instead of dividing by zero.
            stats.std[c] = if var > 0.0 { var.sqrt() as f32 } else { 1.0 };
        }
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::config(format!(
                "normalization mean {:?} is not finite",
                self.mean
            )));
        }
        if self.std.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::config(format!(
                "normalization std {:?} must be positive",
                self.std
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let row = |v: &[f32; CHANNELS]| v.iter().map(|x| format!("{x:.9}")).collect::<Vec<_>>().join(" ");
        format!("mean {}\nstd {}\n", row(&self.mean), row(&self.std))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut stats = NormStats::IDENTITY;
        let mut seen = [false; 2];
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let mut words = line.split_whitespace();
            let key = words.next().unwrap_or_default();
            let (slot, target) = match key {
                "mean" => (0, &mut stats.mean),
                "std" => (1, &mut stats.std),
                other => return Err(Error::Input(format!("unknown normalization key {other:?}"))),
            };
            let values: Vec<f32> = words
                .map(|w| {
                    w.parse()
                        .map_err(|_| Error::Input(format!("bad number {w:?} in {key} line")))
                })
                .collect::<Result<_>>()?;
            if values.len() != CHANNELS {
                return Err(Error::Input(format!(
                    "{key} line has {} values, expected {CHANNELS}",
                    values.len()
                )));
            }
            target.copy_from_slice(&values);
            seen[slot] = true;
        }
        if seen != [true, true] {
            return Err(Error::Input("normalization file needs a mean and a std line".into()));
        }
        stats.validate().map_err(|e| Error::Input(e.to_string()))?;
        Ok(stats)
    }

    /// Read the cache in `dir`, or compute from `train` and try to write it.
    pub fn load_or_compute(dir: &Path, train: &Dataset) -> Result<Self> {
        let path = dir.join(NORM_STATS_FILE);
        if let Ok(text) = fs::read_to_string(&path) {
            match NormStats::parse(&text) {
                Ok(stats) => return Ok(stats),
                Err(e) => log::warn!("ignoring cached statistics {}: {e}", path.display()),
            }
        }
        let stats = NormStats::compute(train)?;
        if let Err(e) = fs::write(&path, stats.to_text()) {
            log::warn!("cannot cache normalization at {}: {e}", path.display());
        }
        Ok(stats)
    }
}

/// Training-time augmentation: zero pad, random crop, random horizontal flip, normalize.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentSpec {
    pub pad: usize,
    pub crop: usize,
    pub hflip_prob: f64,
    pub norm: NormStats,
}

impl AugmentSpec {
    pub fn standard(norm: NormStats) -> Self {
        AugmentSpec {
            pad: 4,
            crop: SIDE,
            hflip_prob: 0.5,
            norm,
        }
    }

    /// No geometric change and no normalization.
    pub fn identity() -> Self {
        AugmentSpec {
            pad: 0,
            crop: SIDE,
            hflip_prob: 0.0,
            norm: NormStats::IDENTITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop != SIDE {
            return Err(Error::config(format!("crop must be {SIDE}, got {}", self.crop)));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::config(format!("hflip_prob {} outside [0, 1]", self.hflip_prob)));
        }
        self.norm.validate()
    }

    /// Largest crop offset along either axis.
    pub fn max_offset(&self) -> usize {
        2 * self.pad
    }
}

/// Per-sample generator derived from `(seed, epoch, index)`.
pub fn sample_rng(seed: u64, epoch: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch.wrapping_shl(32) ^ index);
    rng
}

/// Random crop and flip drawn from `rng`, then normalization.
pub fn augment<R: Rng + ?Sized>(img: &[f32], spec: &AugmentSpec, rng: &mut R) -> Result<Vec<f32>> {
    spec.validate()?;
    let dy = rng.random_range(0..=spec.max_offset());
    let dx = rng.random_range(0..=spec.max_offset());
    let flip = rng.random_bool(spec.hflip_prob);
    augment_with(img, spec, (dy, dx), flip)
}

/// Deterministic augmentation with crop window at `offset` (row, column) of the padded image.
pub fn augment_with(img: &[f32], spec: &AugmentSpec, offset: (usize, usize), flip: bool) -> Result<Vec<f32>> {
    spec.validate()?;
    if img.len() != PIXELS {
        return Err(Error::Input(format!(
            "image has {} values, expected {PIXELS}",
            img.len()
        )));
    }
    let (dy, dx) = offset;
    if dy > spec.max_offset() || dx > spec.max_offset() {
        return Err(Error::Input(format!(
            "crop offset {offset:?} exceeds {} for pad {}",
            spec.max_offset(),
            spec.pad
        )));
    }
    let mut out = vec![0f32; PIXELS];
    for c in 0..CHANNELS {
        let (mean, std) = (spec.norm.mean[c], spec.norm.std[c]);
        let src = &img[c * PLANE..(c + 1) * PLANE];
        let dst = &mut out[c * PLANE..(c + 1) * PLANE];
        for y in 0..SIDE {
            // Padded coordinate (y + dy) maps to source row (y + dy - pad).
            let sy = (y + dy).checked_sub(spec.pad).filter(|&r| r < SIDE);
            for x in 0..SIDE {
                let cx = if flip { SIDE - 1 - x } else { x };
                let sx = (cx + dx).checked_sub(spec.pad).filter(|&r| r < SIDE);
                let v = match (sy, sx) {
                    (Some(r), Some(q)) => src[r * SIDE + q],
                    _ => 0.0,
                };
                dst[y * SIDE + x] = (v - mean) / std;
            }
        }
    }
    Ok(out)
}

/// Evaluation pipeline: normalization only.
pub fn normalize(img: &[f32], stats: &NormStats) -> Vec<f32> {
    img.chunks_exact(PLANE)
        .enumerate()
        .flat_map(|(c, plane)| plane.iter().map(move |&v| (v - stats.mean[c]) / stats.std[c]))
        .collect()
}
