//! CIFAR ingestion, augmentation and synthetic datasets.
//!
//! Images are planar RGB `3×32×32` with values in `[0, 1]` until normalized.

mod augment;
mod cifar;
mod synth;

pub use augment::{augment, augment_with, normalize, sample_rng, AugmentSpec, NormStats, NORM_STATS_FILE};
pub use cifar::{cifar_files, load_cifar_dir, load_cifar_record, parse_cifar_batch, CifarKind, LabeledImage};
pub use synth::synth_blobs;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHANNELS: usize = 3;
pub const SIDE: usize = 32;
pub const PLANE: usize = SIDE * SIDE;
pub const PIXELS: usize = CHANNELS * PLANE;

/// Images stored contiguously with one label each; every label is below `classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    classes: usize,
    pixels: Vec<f32>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn with_capacity(classes: usize, n: usize) -> Self {
        Dataset {
            classes,
            pixels: Vec::with_capacity(n * PIXELS),
            labels: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, label: usize, pixels: &[f32]) -> Result<()> {
        if label >= self.classes {
            return Err(Error::Input(format!("label {label} outside [0, {})", self.classes)));
        }
        if pixels.len() != PIXELS {
            return Err(Error::Input(format!(
                "image has {} values, expected {PIXELS}",
                pixels.len()
            )));
        }
        self.pixels.extend_from_slice(pixels);
        self.labels.push(label);
        Ok(())
    }

    pub fn extend(&mut self, other: &Dataset) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Input(format!(
                "cannot merge datasets with {} and {} classes",
                self.classes, other.classes
            )));
        }
        self.pixels.extend_from_slice(&other.pixels);
        self.labels.extend_from_slice(&other.labels);
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[f32] {
        &self.pixels[i * PIXELS..(i + 1) * PIXELS]
    }

    pub fn get(&self, i: usize) -> LabeledImage {
        LabeledImage {
            label: self.labels[i],
            pixels: self.image(i).to_vec(),
        }
    }

    /// The first `n` images, or all of them if fewer.
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            classes: self.classes,
            pixels: self.pixels[..n * PIXELS].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    /// Stack `indices` into an `N×3×32×32` batch, transforming each image.
    pub fn batch<F>(&self, indices: &[usize], mut transform: F) -> Result<(Tensor<f32>, Vec<usize>)>
    where
        F: FnMut(usize, &[f32]) -> Result<Vec<f32>>,
    {
        let mut data = Vec::with_capacity(indices.len() * PIXELS);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Input(format!(
                    "image index {i} outside dataset of {}",
                    self.len()
                )));
            }
            let img = transform(i, self.image(i))?;
            if img.len() != PIXELS {
                return Err(Error::Input(format!(
                    "transform produced {} values, expected {PIXELS}",
                    img.len()
                )));
            }
            data.extend_from_slice(&img);
            labels.push(self.labels[i]);
        }
        Ok((Tensor::new(vec![indices.len(), CHANNELS, SIDE, SIDE], data)?, labels))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}
