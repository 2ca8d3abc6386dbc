//! Loss and error surfaces on a plane through parameter space.
//!
//! The plane is spanned by two random filter-normalized directions around a
//! fixed base point; the base parameters are never mutated.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{Model, ParamStore};
use crate::dataio::{Dataset, NormStats};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};
use crate::train::evaluate;

pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_RANGE: f64 = 1.0;
/// Narrow range used when comparing variants side by side.
pub const COMPARISON_PRESET_RANGE: f64 = 0.0375;
pub const DEFAULT_SUBSET: usize = 1000;
/// Resolution of the coarse probe used by [`find_visualizable_range`].
pub const PROBE_STEPS: usize = 5;
pub const CSV_HEADER: &str = "alpha,beta,loss,top1_error,scaled_loss,scaled_top1";

/// A perturbation with one tensor per model parameter, in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction<T> {
    pub seed: u64,
    pub tensors: ParamStore<T>,
}

/// Rescale `dir` so each slice has the norm of the matching `param` slice.
///
/// Rank-4 tensors are sliced per output filter, everything else is one slice.
/// A zero-norm parameter slice gives a zero direction slice.
pub fn filter_normalize<T: Element>(dir: &mut Tensor<T>, param: &Tensor<T>) -> Result<()> {
    if dir.shape() != param.shape() {
        return Err(Error::dim(
            "filter_normalize",
            format!("direction {:?} against parameter {:?}", dir.shape(), param.shape()),
        ));
    }
    let slice = match param.shape() {
        [filters, ..] if param.rank() == 4 && *filters > 0 => param.len() / filters,
        _ => param.len().max(1),
    };
    for (d, p) in dir.data_mut().chunks_mut(slice).zip(param.data().chunks(slice)) {
        let norm = |s: &[T]| s.iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>().sqrt();
        let (pn, dn) = (norm(p), norm(d));
        let scale = if pn == 0.0 || dn == 0.0 { 0.0 } else { pn / dn };
        let scale = T::from_f64_lossy(scale);
        for v in d.iter_mut() {
            *v = *v * scale;
        }
    }
    Ok(())
}

fn random_direction<T: Element>(params: &ParamStore<T>, seed: u64, stream: u64) -> Result<Direction<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut tensors = ParamStore::new();
    for (name, p) in params.iter() {
        let mut d = Tensor::randn(p.shape().to_vec(), 1.0, &mut rng);
        filter_normalize(&mut d, p)?;
        tensors.insert(name, d)?;
    }
    Ok(Direction { seed, tensors })
}

/// Two independent standard-normal directions, filter-normalized against `params`.
pub fn make_directions<T: Element>(params: &ParamStore<T>, seed: u64) -> Result<(Direction<T>, Direction<T>)> {
    Ok((random_direction(params, seed, 0)?, random_direction(params, seed, 1)?))
}

/// One evaluated point of the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub loss: f64,
    pub top1_error: f64,
}

/// Anything that can score a parameter point; the model objective is the usual one.
pub trait Objective<T: Element> {
    fn evaluate(&mut self, params: &ParamStore<T>) -> Result<Sample>;
}

/// Eval-mode cross-entropy and top-1 error of a network on a fixed set.
///
/// Batch-norm running statistics stay frozen at their trained values.
pub struct ModelObjective<'a> {
    scratch: Model<f32>,
    data: &'a Dataset,
    norm: NormStats,
    batch_size: usize,
}

impl<'a> ModelObjective<'a> {
    pub fn new(model: &Model<f32>, data: &'a Dataset, norm: NormStats, batch_size: usize) -> Self {
        ModelObjective {
            scratch: model.clone(),
            data,
            norm,
            batch_size,
        }
    }
}

impl Objective<f32> for ModelObjective<'_> {
    fn evaluate(&mut self, params: &ParamStore<f32>) -> Result<Sample> {
        copy_params(&mut self.scratch.params, params)?;
        let report = evaluate(&self.scratch, self.data, &self.norm, self.batch_size)?;
        Ok(Sample {
            loss: report.loss,
            top1_error: 1.0 - report.top1,
        })
    }
}

/// Same names, order and extents.
fn check_aligned<T: Element>(a: &ParamStore<T>, b: &ParamStore<T>) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dim(
            "landscape",
            format!("{} tensors against {}", a.len(), b.len()),
        ));
    }
    for ((an, at), (bn, bt)) in a.iter().zip(b.iter()) {
        if an != bn || at.shape() != bt.shape() {
            return Err(Error::dim(
                "landscape",
                format!("{an} {:?} against {bn} {:?}", at.shape(), bt.shape()),
            ));
        }
    }
    Ok(())
}

fn copy_params<T: Element>(dst: &mut ParamStore<T>, src: &ParamStore<T>) -> Result<()> {
    check_aligned(dst, src)?;
    for ((_, d), (_, s)) in dst.iter_mut().zip(src.iter()) {
        d.data_mut().copy_from_slice(s.data());
    }
    Ok(())
}

/// `steps` evenly spaced points over `[-r, r]`; an odd count puts exactly 0 in the middle.
pub fn linspace(r: f64, steps: usize) -> Result<Vec<f64>> {
    if steps < 2 {
        return Err(Error::config(format!(
            "a grid needs at least 2 steps per axis, got {steps}"
        )));
    }
    if !(r.is_finite() && r >= 0.0) {
        return Err(Error::config(format!("range {r} must be finite and non-negative")));
    }
    let last = (steps - 1) as f64;
    Ok((0..steps).map(|i| r * (2.0 * i as f64 / last - 1.0)).collect())
}

/// Sampled surfaces; cell `(i, j)` sits at `(alphas[i], betas[j])` and is
/// stored at `i * steps + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeGrid {
    pub range: f64,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub loss: Vec<f64>,
    pub top1_error: Vec<f64>,
    /// Cells whose loss is NaN or infinite.
    pub nonfinite_count: usize,
}

impl LandscapeGrid {
    pub fn steps(&self) -> usize {
        self.alphas.len()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.betas.len() + j
    }

    /// Cell at the origin, present when the step count is odd.
    pub fn center(&self) -> Option<usize> {
        let s = self.steps();
        (s % 2 == 1).then(|| self.index(s / 2, s / 2))
    }

    pub fn scaled_loss(&self) -> Result<Vec<f64>> {
        minmax_scale(&self.loss)
    }

    pub fn scaled_top1(&self) -> Result<Vec<f64>> {
        minmax_scale(&self.top1_error)
    }

    pub fn to_csv(&self) -> Result<String> {
        let (sl, st) = (self.scaled_loss()?, self.scaled_top1()?);
        let mut out = format!("{CSV_HEADER}\n");
        for (i, a) in self.alphas.iter().enumerate() {
            for (j, b) in self.betas.iter().enumerate() {
                let k = self.index(i, j);
                let _ = writeln!(
                    out,
                    "{a},{b},{},{},{},{}",
                    self.loss[k], self.top1_error[k], sl[k], st[k]
                );
            }
        }
        Ok(out)
    }
}

/// Evaluate `objective` at `base + α·δ + β·η` over the `steps × steps` grid on `[-r, r]²`.
pub fn sample_grid<T: Element, O: Objective<T>>(
    base: &ParamStore<T>,
    objective: &mut O,
    delta: &Direction<T>,
    eta: &Direction<T>,
    r: f64,
    steps: usize,
) -> Result<LandscapeGrid> {
    let coords = linspace(r, steps)?;
    check_aligned(&delta.tensors, base)?;
    check_aligned(&eta.tensors, base)?;
    let mut point = base.clone();
    let (mut loss, mut top1_error) = (Vec::with_capacity(steps * steps), Vec::with_capacity(steps * steps));
    for &a in &coords {
        for &b in &coords {
            perturb(&mut point, base, delta, eta, a, b);
            let s = objective.evaluate(&point)?;
            loss.push(s.loss);
            top1_error.push(s.top1_error);
        }
    }
    let nonfinite_count = loss.iter().filter(|v| !v.is_finite()).count();
    if nonfinite_count > 0 {
        log::warn!(
            "{nonfinite_count} of {} landscape cells have a non-finite loss",
            loss.len()
        );
    }
    Ok(LandscapeGrid {
        range: r,
        alphas: coords.clone(),
        betas: coords,
        loss,
        top1_error,
        nonfinite_count,
    })
}

fn perturb<T: Element>(
    point: &mut ParamStore<T>,
    base: &ParamStore<T>,
    delta: &Direction<T>,
    eta: &Direction<T>,
    a: f64,
    b: f64,
) {
    let (a, b) = (T::from_f64_lossy(a), T::from_f64_lossy(b));
    let parts = base.iter().zip(delta.tensors.iter()).zip(eta.tensors.iter());
    for ((_, p), (((_, t), (_, d)), (_, e))) in point.iter_mut().zip(parts) {
        for (((o, &t), &d), &e) in p.data_mut().iter_mut().zip(t.data()).zip(d.data()).zip(e.data()) {
            *o = t + a * d + b * e;
        }
    }
}

/// Map values onto `[0, 1]`; non-finite cells first take the finite maximum.
pub fn minmax_scale(values: &[f64]) -> Result<Vec<f64>> {
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > hi {
        return Err(Error::Numeric {
            op: "minmax_scale".into(),
            detail: format!("all {} values are non-finite", values.len()),
        });
    }
    let span = hi - lo;
    Ok(values
        .iter()
        .map(|&v| {
            let v = if v.is_finite() { v } else { hi };
            if span > 0.0 {
                (v - lo) / span
            } else {
                0.0
            }
        })
        .collect())
}

/// Largest candidate whose coarse probe grid is entirely finite.
///
/// Candidates must be sorted in descending order; when none qualifies the
/// smallest is returned with a warning.
pub fn find_visualizable_range<T: Element, O: Objective<T>>(
    base: &ParamStore<T>,
    objective: &mut O,
    delta: &Direction<T>,
    eta: &Direction<T>,
    candidates: &[f64],
) -> Result<f64> {
    let Some(&smallest) = candidates.last() else {
        return Err(Error::config("range search needs at least one candidate"));
    };
    if candidates.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::config(format!(
            "candidate ranges {candidates:?} are not sorted descending"
        )));
    }
    if candidates.len() == 1 {
        return Ok(smallest);
    }
    for &r in candidates {
        let probe = sample_grid(base, objective, delta, eta, r, PROBE_STEPS)?;
        if probe.nonfinite_count == 0 {
            return Ok(r);
        }
    }
    log::warn!("no candidate range gave a finite probe grid; using {smallest}");
    Ok(smallest)
}

/// Binary 8-bit graymap with one pixel per cell; rows follow beta, columns alpha.
pub fn to_pgm(scaled: &[f64], steps: usize) -> Result<Vec<u8>> {
    if scaled.len() != steps * steps {
        return Err(Error::dim(
            "to_pgm",
            format!("{} values for a {steps}×{steps} grid", scaled.len()),
        ));
    }
    let mut out = format!("P5\n{steps} {steps}\n255\n").into_bytes();
    for j in 0..steps {
        for i in 0..steps {
            out.push((scaled[i * steps + j].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_slices_take_parameter_norms() {
        // One 1×1×2×2 filter of norm 4 and one zero filter.
        let p = Tensor::new(vec![2, 1, 2, 2], vec![2.0f64, 2.0, 2.0, 2.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let mut d = Tensor::new(vec![2, 1, 2, 2], vec![1.0f64, 1.0, 1.0, 1.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
        filter_normalize(&mut d, &p).unwrap();
        let n0: f64 = d.data()[..4].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n0 - 4.0).abs() < 1e-12);
        assert!(d.data()[4..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_conv_tensors_normalize_whole() {
        let p = Tensor::new(vec![2, 2], vec![3.0f64, 0.0, 0.0, 4.0]).unwrap();
        let mut d = Tensor::new(vec![2, 2], vec![1.0f64, 1.0, 1.0, 1.0]).unwrap();
        filter_normalize(&mut d, &p).unwrap();
        assert!((d.norm() - 5.0).abs() < 1e-12);
        assert!(d.data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn linspace_is_symmetric_with_exact_center() {
        let c = linspace(1.0, 5).unwrap();
        assert_eq!(c, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(linspace(0.0375, 51).unwrap()[25], 0.0);
        assert_eq!(linspace(2.0, 2).unwrap(), vec![-2.0, 2.0]);
        assert!(linspace(1.0, 1).is_err());
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(minmax_scale(&[1.0, 3.0, 2.0, 5.0]).unwrap(), vec![0.0, 0.5, 0.25, 1.0]);
        assert_eq!(minmax_scale(&[7.0; 4]).unwrap(), vec![0.0; 4]);
        assert_eq!(minmax_scale(&[1.0, f64::INFINITY, 3.0]).unwrap(), vec![0.0, 1.0, 1.0]);
        assert_eq!(minmax_scale(&[f64::NAN, 1.0, 2.0]).unwrap(), vec![1.0, 0.0, 1.0]);
        assert!(matches!(
            minmax_scale(&[f64::NAN, f64::INFINITY]),
            Err(Error::Numeric { .. })
        ));
    }

    #[test]
    fn pgm_layout() {
        let img = to_pgm(&[0.0, 1.0, 0.5, 0.25], 2).unwrap();
        assert!(img.starts_with(b"P5\n2 2\n255\n"));
        // Row 0 is beta index 0: cells (0,0) and (1,0).
        assert_eq!(&img[img.len() - 4..], &[0, 128, 255, 64]);
    }
}
