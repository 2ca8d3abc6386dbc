use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, CHANNELS, PIXELS, PLANE, SIDE};
use crate::error::{Error, Result};

const BASE: f32 = 0.5;
const NOISE: f32 = 0.05;

/// Unit colour direction of class `k` among `classes`, spread over the sphere.
fn class_color(k: usize, classes: usize) -> [f32; CHANNELS] {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let z = 1.0 - 2.0 * (k as f64 + 0.5) / classes as f64;
    let r = (1.0 - z * z).sqrt();
    let theta = golden * k as f64;
    [(r * theta.cos()) as f32, (r * theta.sin()) as f32, z as f32]
}

/// Class-conditional coloured Gaussian blobs on a grey background.
///
/// Image `i` has label `i mod classes`. Its pixels are
/// `0.5 + a·color[label]·bump(y, x) + noise`, where the noise has zero mean
/// per channel. Each channel sum therefore equals `512 + a·Σbump·color`, so the
/// linear score `Σ pixel·color[k]` is maximal exactly at the true class.
/// All values stay inside `[0, 1]` without clipping.
pub fn synth_blobs(classes: usize, n: usize, seed: u64) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::config(format!(
            "synthetic blobs need at least 2 classes, got {classes}"
        )));
    }
    let colors: Vec<_> = (0..classes).map(|k| class_color(k, classes)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Dataset::with_capacity(classes, n);
    let mut img = vec![0f32; PIXELS];
    for i in 0..n {
        let label = i % classes;
        let amp: f32 = rng.random_range(0.25..0.35);
        let sigma: f32 = rng.random_range(4.0..7.0);
        let cy: f32 = 15.5 + rng.random_range(-4.0..4.0);
        let cx: f32 = 15.5 + rng.random_range(-4.0..4.0);
        for (c, plane) in img.chunks_exact_mut(PLANE).enumerate() {
            let mut mean = 0f32;
            for v in plane.iter_mut() {
                *v = rng.random_range(-NOISE..NOISE);
                mean += *v;
            }
            mean /= PLANE as f32;
            for (p, v) in plane.iter_mut().enumerate() {
                let (y, x) = ((p / SIDE) as f32, (p % SIDE) as f32);
                let d2 = (y - cy).powi(2) + (x - cx).powi(2);
                let bump = (-d2 / (2.0 * sigma * sigma)).exp();
                *v = BASE + amp * colors[label][c] * bump + (*v - mean);
            }
        }
        data.push(label, &img)?;
    }
    Ok(data)
}
