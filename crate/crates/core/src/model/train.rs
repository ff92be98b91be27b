//! Mini-batch momentum SGD over (optionally augmented) labelled images.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::network::dropout_rng;
use super::{ModelError, Network, TrainConfig};
use crate::data::{augment, eval_transform, GrayImage};
use crate::seed::derive_seed;
use crate::tensor::{Real, Tensor};

/// Batch elements are grouped into fixed-size chunks whose gradients are
/// summed sequentially; chunk sums are then added in chunk order. The result
/// does not depend on how many threads process the chunks.
const GRADIENT_CHUNK: usize = 8;

#[derive(Clone, Debug)]
pub struct LabelledImage {
    pub id: usize,
    pub image: GrayImage,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training-mode loss over the epoch's samples.
    pub train_loss: f64,
    /// Inference-mode accuracy on the (untransformed) training images.
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    pub wallclock_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    TargetAccuracy,
    EpochCap,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub stop: StopReason,
}

impl TrainReport {
    pub fn last(&self) -> &EpochMetrics {
        self.epochs.last().expect("at least one epoch")
    }
}

/// Deterministic accuracy of `net` on pre-transformed inputs.
pub fn accuracy(net: &Network, inputs: &[(Tensor, usize)]) -> Result<f64, ModelError> {
    if inputs.is_empty() {
        return Ok(0.0);
    }
    let correct = inputs
        .par_iter()
        .map(|(x, label)| net.predict(x).map(|p| (p == *label) as usize))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / inputs.len() as f64)
}

fn eval_inputs(set: &[LabelledImage], size: usize) -> Result<Vec<(Tensor, usize)>, ModelError> {
    set.par_iter()
        .map(|s| Ok((eval_transform(&s.image, size)?, s.label)))
        .collect()
}

pub fn train(
    net: &mut Network,
    train_set: &[LabelledImage],
    test_set: &[LabelledImage],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainReport, ModelError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let classes = net
        .num_classes()
        .ok_or_else(|| ModelError::Config("network has no classifier".into()))?;
    if let Some(bad) = train_set
        .iter()
        .chain(test_set)
        .find(|s| s.label >= classes)
    {
        return Err(ModelError::Label {
            id: bad.id,
            label: bad.label,
            classes,
        });
    }
    let size = net.input_shape()[1];
    let train_eval = eval_inputs(train_set, size)?;
    let test_eval = eval_inputs(test_set, size)?;

    let start = Instant::now();
    let mut velocity = net.zero_gradients();
    let mut epochs = Vec::new();
    let mut stale = 0;
    let mut prev_loss = f64::INFINITY;
    let mut stop = StopReason::EpochCap;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            cfg.seed,
            &[0x0de7, epoch as u64],
        )));
        let mut loss_sum = 0.0;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let net_ref: &Network = net;
            let partials = batch
                .par_chunks(GRADIENT_CHUNK)
                .map(|chunk| {
                    let mut grads = net_ref.zero_gradients();
                    let mut loss = 0.0;
                    for &i in chunk {
                        let sample = &train_set[i];
                        let input = if cfg.augment {
                            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                                cfg.seed,
                                &[0xa6, epoch as u64, sample.id as u64],
                            ));
                            augment(&sample.image, size, &mut rng)?
                        } else {
                            train_eval[i].0.clone()
                        };
                        let mut rng = dropout_rng(cfg.seed, epoch, sample.id);
                        let (l, _) = net_ref.loss_and_gradients(
                            &input,
                            sample.label,
                            cfg.dropout_p,
                            &mut rng,
                            &mut grads,
                        )?;
                        loss += l;
                    }
                    Ok((grads, loss))
                })
                .collect::<Result<Vec<_>, ModelError>>()?;
            let mut iter = partials.into_iter();
            let (mut grads, mut batch_loss) = iter.next().expect("nonempty batch");
            for (g, l) in iter {
                grads.accumulate(&g);
                batch_loss += l;
            }
            if !batch_loss.is_finite() {
                return Err(ModelError::NonFinite {
                    epoch,
                    batch: batch_no,
                });
            }
            let inv = 1.0 / batch.len() as Real;
            for t in grads.tensors_mut() {
                t.data_mut().iter_mut().for_each(|v| *v *= inv);
            }
            net.sgd_step(
                &grads,
                &mut velocity,
                cfg.learning_rate,
                cfg.momentum,
                cfg.weight_decay,
            );
            loss_sum += batch_loss;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let metrics = EpochMetrics {
            epoch: epoch + 1,
            train_loss,
            train_acc: accuracy(net, &train_eval)?,
            test_acc: if test_eval.is_empty() {
                None
            } else {
                Some(accuracy(net, &test_eval)?)
            },
            wallclock_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&metrics);
        let reached = cfg
            .target_train_acc
            .is_some_and(|target| metrics.train_acc >= target);
        epochs.push(metrics);
        if reached {
            stop = StopReason::TargetAccuracy;
            break;
        }
        if prev_loss - train_loss < cfg.min_improvement {
            stale += 1;
        } else {
            stale = 0;
        }
        prev_loss = train_loss;
        if stale >= cfg.patience {
            stop = StopReason::Converged;
            break;
        }
    }
    Ok(TrainReport { epochs, stop })
}

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,test_acc,wallclock_s";

pub fn metrics_csv(epochs: &[EpochMetrics]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for m in epochs {
        let test = m.test_acc.map_or(String::new(), |v| v.to_string());
        writeln!(
            out,
            "{},{},{},{},{:.3}",
            m.epoch, m.train_loss, m.train_acc, test, m.wallclock_s
        )
        .expect("string write");
    }
    out
}

pub fn write_metrics(path: &Path, epochs: &[EpochMetrics]) -> Result<(), ModelError> {
    std::fs::write(path, metrics_csv(epochs)).map_err(|e| ModelError::io(path, e))
}
