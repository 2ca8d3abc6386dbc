//! Optimizer, schedule, metrics, the training loop and checkpoints.

mod checkpoint;
mod run;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, MAGIC, VERSION,
};
pub use run::{evaluate, history_csv, train, EpochRecord, EvalReport, TrainOutcome, HISTORY_HEADER};

use crate::dataio::AugmentSpec;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Stochastic gradient descent with momentum, weight decay and a half-cycle cosine schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Training pipeline; evaluation applies only its normalization.
    pub augment: AugmentSpec,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64, augment: AugmentSpec) -> Self {
        TrainConfig {
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs,
            batch_size: 100,
            seed,
            augment,
        }
    }

    /// `lr0 == 0` is accepted as a frozen run.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0.is_finite() && self.lr0 >= 0.0) {
            return Err(Error::config(format!(
                "lr0 must be a finite non-negative number, got {}",
                self.lr0
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config(format!(
                "weight decay {} must be non-negative",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        self.augment.validate()
    }
}

/// `0.5·lr0·(1 + cos(π·step/total))` for `0 ≤ step ≤ total`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::config("cosine schedule needs at least one step"));
    }
    if step > total_steps {
        return Err(Error::config(format!(
            "step {step} beyond schedule length {total_steps}"
        )));
    }
    let phase = std::f64::consts::PI * step as f64 / total_steps as f64;
    Ok(0.5 * lr0 * (1.0 + phase.cos()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdHyper {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// One update of `theta` in place: `g' = g + wd·θ`, `v ← m·v + g'`, `θ ← θ − lr·v`.
pub fn sgd_step<T: Element>(
    name: &str,
    theta: &mut Tensor<T>,
    grad: &Tensor<T>,
    velocity: &mut Tensor<T>,
    hp: SgdHyper,
) -> Result<()> {
    if theta.shape() != grad.shape() || theta.shape() != velocity.shape() {
        return Err(Error::dim(
            "sgd_step",
            format!(
                "{name}: parameter {:?}, gradient {:?}, velocity {:?}",
                theta.shape(),
                grad.shape(),
                velocity.shape()
            ),
        ));
    }
    if let Some(i) = grad.first_non_finite() {
        return Err(Error::Numeric {
            op: "sgd_step".into(),
            detail: format!("gradient of {name} is {} at index {i}", grad.data()[i].to_f64_lossy()),
        });
    }
    let (lr, m, wd) = (
        T::from_f64_lossy(hp.lr),
        T::from_f64_lossy(hp.momentum),
        T::from_f64_lossy(hp.weight_decay),
    );
    for ((p, &g), v) in theta.data_mut().iter_mut().zip(grad.data()).zip(velocity.data_mut()) {
        let g = g + wd * *p;
        *v = m * *v + g;
        *p = *p - lr * *v;
    }
    Ok(())
}

/// Fraction of rows whose first maximal logit sits at the label.
///
/// An empty batch scores 0.
pub fn top1_accuracy<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let correct = top1_hits(logits, labels)?;
    Ok(if labels.is_empty() {
        0.0
    } else {
        correct as f64 / labels.len() as f64
    })
}

pub(crate) fn top1_hits<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<usize> {
    let k = match logits.shape() {
        [n, k] if *n == labels.len() => *k,
        s => {
            return Err(Error::dim(
                "top1_accuracy",
                format!("logits {s:?} against {} labels", labels.len()),
            ))
        }
    };
    if k == 0 {
        return Ok(0);
    }
    Ok(logits
        .data()
        .chunks_exact(k)
        .zip(labels)
        .filter(|(row, &label)| argmax(row) == label)
        .count())
}

/// Lowest index of the maximum; NaN entries never win.
pub(crate) fn argmax<T: Element>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] || (row[best].is_nan() && !v.is_nan()) {
            best = j;
        }
    }
    best
}

/// Accuracy per million parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyReport {
    pub accuracy_percent: f64,
    pub params_millions: f64,
    pub efficiency: f64,
}

pub fn efficiency(accuracy_percent: f64, params_millions: f64) -> Result<EfficiencyReport> {
    if !(params_millions.is_finite() && params_millions > 0.0) {
        return Err(Error::Input(format!(
            "parameter count must be positive, got {params_millions} million"
        )));
    }
    if !accuracy_percent.is_finite() {
        return Err(Error::Input(format!("accuracy {accuracy_percent} is not finite")));
    }
    Ok(EfficiencyReport {
        accuracy_percent,
        params_millions,
        efficiency: accuracy_percent / params_millions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_examples() {
        assert!((cosine_lr(0, 100, 0.1).unwrap() - 0.1).abs() < 1e-15);
        assert!(cosine_lr(100, 100, 0.1).unwrap().abs() < 1e-15);
        assert!((cosine_lr(50, 100, 0.1).unwrap() - 0.05).abs() < 1e-15);
        assert!(matches!(cosine_lr(0, 0, 0.1), Err(Error::Config(_))));
        assert!(cosine_lr(101, 100, 0.1).is_err());
    }

    #[test]
    fn plain_descent_without_momentum_or_decay() {
        let mut theta = Tensor::new(vec![3], vec![1.0f64, -2.0, 0.5]).unwrap();
        let grad = Tensor::new(vec![3], vec![0.5f64, 0.25, -1.0]).unwrap();
        let mut v = Tensor::zeros(vec![3]);
        let hp = SgdHyper {
            lr: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
        };
        sgd_step("w", &mut theta, &grad, &mut v, hp).unwrap();
        assert_eq!(theta.data(), &[1.0 - 0.05, -2.0 - 0.025, 0.5 + 0.1]);
    }

    #[test]
    fn velocity_decays_geometrically() {
        let mut theta = Tensor::new(vec![1], vec![0.0f64]).unwrap();
        let grad = Tensor::zeros(vec![1]);
        let mut v = Tensor::new(vec![1], vec![1.0f64]).unwrap();
        let hp = SgdHyper {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        for k in 1..=5 {
            sgd_step("w", &mut theta, &grad, &mut v, hp).unwrap();
            assert!((v.data()[0] - 0.9f64.powi(k)).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut theta = Tensor::zeros(vec![2]);
        let grad = Tensor::new(vec![2], vec![0.0f32, f32::NAN]).unwrap();
        let mut v = Tensor::zeros(vec![2]);
        let hp = SgdHyper {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        match sgd_step("layer1.block0.conv1.weight", &mut theta, &grad, &mut v, hp) {
            Err(Error::Numeric { detail, .. }) => assert!(detail.contains("layer1.block0.conv1.weight")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(argmax(&[1.0f32, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0f32, 2.0]), 0);
        assert_eq!(argmax(&[f32::NAN, 1.0]), 1);
        let logits = Tensor::new(vec![2, 2], vec![0.0f32, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(top1_accuracy(&logits, &[0, 1]).unwrap(), 0.5);
    }
}
