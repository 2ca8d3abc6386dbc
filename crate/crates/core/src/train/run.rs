use std::fmt::Write as _;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, CheckpointMeta};
use super::{cosine_lr, sgd_step, top1_hits, SgdHyper, TrainConfig};
use crate::arch::{Mode, Model};
use crate::dataio::{augment, normalize, sample_rng, Dataset, NormStats, Splits};
use crate::error::{Error, Result};
use crate::tensor::{FlushDenormals, Graph, Tensor};

pub const HISTORY_HEADER: &str = "epoch,train_loss,test_top1,lr";

/// Summary of one epoch; accuracies are fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// Counted from 1.
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy of the train-mode logits on augmented batches.
    pub train_top1: f64,
    pub test_top1: f64,
    /// Rate used by the last step of the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Snapshot from the epoch with the highest test accuracy; earliest wins ties.
    pub best: Option<Checkpoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    /// Mean cross-entropy; may be non-finite for diverged weights.
    pub loss: f64,
    pub top1: f64,
    pub count: usize,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in history {
        let _ = writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.test_top1, r.lr);
    }
    out
}

/// Eval-mode loss and accuracy over `data` after normalization only.
pub fn evaluate(model: &Model<f32>, data: &Dataset, norm: &NormStats, batch_size: usize) -> Result<EvalReport> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    let _flush = FlushDenormals::new();
    let order: Vec<usize> = (0..data.len()).collect();
    let (mut loss, mut hits) = (0f64, 0usize);
    for chunk in order.chunks(batch_size) {
        let (x, labels) = data.batch(chunk, |_, img| Ok(normalize(img, norm)))?;
        let graph = Graph::with_finite_checks(false);
        let xv = graph.constant(x);
        let pass = model.forward(&graph, xv, Mode::Eval, false)?;
        let ce = graph.softmax_cross_entropy(pass.logits, &labels)?;
        loss += f64::from(graph.value(ce).data()[0]) * chunk.len() as f64;
        hits += top1_hits(&graph.value(pass.logits), &labels)?;
    }
    let n = data.len();
    Ok(EvalReport {
        loss: if n == 0 { 0.0 } else { loss / n as f64 },
        top1: if n == 0 { 0.0 } else { hits as f64 / n as f64 },
        count: n,
    })
}

fn shuffle_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5348_5546_464c_4521);
    rng.set_stream(epoch as u64);
    rng
}

/// Index batches of one epoch; a trailing batch of one image is dropped since
/// batch statistics need two samples.
fn epoch_batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut batches: Vec<&[usize]> = order.chunks(batch_size).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        batches.pop();
    }
    batches
}

fn with_step(step: usize, e: Error) -> Error {
    match e {
        Error::Numeric { op, detail } => Error::Numeric {
            op,
            detail: format!("{detail} (training step {step})"),
        },
        other => other,
    }
}

/// Train `model` in place.
///
/// `on_epoch` sees every record and, when the epoch set a new best test
/// accuracy, the snapshot taken at that point.
pub fn train(
    model: &mut Model<f32>,
    splits: &Splits,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, Option<&Checkpoint>) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let _flush = FlushDenormals::new();
    let n = splits.train.len();
    if n < 2 {
        return Err(Error::Input(format!("training split needs at least 2 images, got {n}")));
    }
    if splits.train.classes() != model.config().classes {
        return Err(Error::Input(format!(
            "dataset has {} classes, model predicts {}",
            splits.train.classes(),
            model.config().classes
        )));
    }
    let steps_per_epoch = epoch_batches(&(0..n).collect::<Vec<_>>(), cfg.batch_size).len();
    let total = steps_per_epoch * cfg.epochs;
    let mut velocity: IndexMap<String, Tensor<f32>> = model
        .params
        .iter()
        .map(|(name, t)| (name.to_string(), Tensor::zeros(t.shape().to_vec())))
        .collect();

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<Checkpoint> = None;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut shuffle_rng(cfg.seed, epoch));
        let (mut loss_sum, mut hits, mut seen, mut lr) = (0f64, 0usize, 0usize, 0f64);
        for chunk in epoch_batches(&order, cfg.batch_size) {
            lr = cosine_lr(step, total, cfg.lr0)?;
            let (x, labels) = splits.train.batch(chunk, |i, img| {
                augment(img, &cfg.augment, &mut sample_rng(cfg.seed, epoch as u64, i as u64))
            })?;
            let graph = Graph::new();
            let xv = graph.constant(x);
            let pass = model
                .forward(&graph, xv, Mode::Train, true)
                .map_err(|e| with_step(step, e))?;
            let loss = graph
                .softmax_cross_entropy(pass.logits, &labels)
                .map_err(|e| with_step(step, e))?;
            let value = f64::from(graph.value(loss).data()[0]);
            if !value.is_finite() {
                return Err(Error::Numeric {
                    op: "train".into(),
                    detail: format!("loss is {value} at training step {step}"),
                });
            }
            let grads = graph.backward(loss).map_err(|e| with_step(step, e))?;
            let hp = SgdHyper {
                lr,
                momentum: cfg.momentum,
                weight_decay: cfg.weight_decay,
            };
            for (name, var) in &pass.params {
                let theta = model.params.get_mut(name)?;
                let zero;
                let grad = match grads.get(*var) {
                    Some(g) => g,
                    None => {
                        zero = Tensor::zeros(theta.shape().to_vec());
                        &zero
                    }
                };
                let v = velocity.get_mut(name).expect("velocity per parameter");
                sgd_step(name, theta, grad, v, hp).map_err(|e| with_step(step, e))?;
            }
            model.apply_updates(&pass.updates)?;
            loss_sum += value * chunk.len() as f64;
            hits += top1_hits(&graph.value(pass.logits), &labels)?;
            seen += chunk.len();
            step += 1;
        }
        let test = evaluate(model, &splits.test, &cfg.augment.norm, cfg.batch_size)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / seen.max(1) as f64,
            train_top1: hits as f64 / seen.max(1) as f64,
            test_top1: test.top1,
            lr,
        };
        log::info!(
            "epoch {} loss {:.4} train {:.4} test {:.4} lr {:.5}",
            record.epoch,
            record.train_loss,
            record.train_top1,
            record.test_top1,
            record.lr
        );
        let improved = best.as_ref().is_none_or(|b| test.top1 > b.meta.best_top1);
        if improved {
            best = Some(Checkpoint {
                model: model.clone(),
                meta: CheckpointMeta {
                    epoch: epoch + 1,
                    best_top1: test.top1,
                    norm: cfg.augment.norm,
                },
            });
        }
        on_epoch(&record, if improved { best.as_ref() } else { None })?;
        history.push(record);
    }
    Ok(TrainOutcome { history, best })
}
