use std::io::Write;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::{adam_step, lr_schedule, AdamState, Parameterized, TrainConfig};
use crate::rng::{stream, stream_rng};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub lr: f64,
    /// Sample-weighted mean of the batch losses.
    pub mean_loss: f64,
}

/// Epoch order: blocks of `block` consecutive sample indices are shuffled
/// as units, so neighbouring sequences (which share frames) tend to land in
/// the same batch. `block = 1` is a plain shuffle.
pub fn epoch_order(n_samples: usize, block: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let block = block.max(1);
    let mut starts: Vec<usize> = (0..n_samples).step_by(block).collect();
    starts.shuffle(&mut stream_rng(seed, stream::SHUFFLE, epoch as u64));
    starts
        .into_iter()
        .flat_map(|s| s..(s + block).min(n_samples))
        .collect()
}

/// Mini-batch Adam with the step-decay schedule. `loss_grad(model, epoch,
/// batch, grad)` must return the mean loss of `batch` and add its gradient
/// to `grad`; keeping sample construction with the caller lets inputs borrow
/// from caller-owned data.
pub fn train<T, M, F>(
    model: &mut M,
    n_samples: usize,
    cfg: &TrainConfig,
    block: usize,
    mut loss_grad: F,
) -> Result<Vec<EpochLoss>>
where
    T: Scalar,
    M: Parameterized<T> + Clone,
    F: FnMut(&M, usize, &[usize], &mut M) -> Result<T>,
{
    cfg.validate()?;
    if n_samples == 0 {
        return Err(Error::Degenerate("no training samples".into()));
    }
    let mut adam = AdamState::new(&model.params(), cfg.lr);
    let mut grad = model.zeros_like();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        adam.lr = lr_schedule(epoch, cfg);
        let order = epoch_order(n_samples, block, cfg.seed, epoch);
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.zero_params();
            let loss = loss_grad(model, epoch, batch, &mut grad)?.as_f64();
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            sum += loss * batch.len() as f64;
            let grads = grad.params();
            adam_step(&mut model.params_mut(), &grads, &mut adam)?;
        }
        history.push(EpochLoss {
            epoch,
            lr: adam.lr,
            mean_loss: sum / n_samples as f64,
        });
    }
    Ok(history)
}

pub fn write_loss_csv<W: Write>(mut w: W, history: &[EpochLoss]) -> std::io::Result<()> {
    writeln!(w, "epoch,lr,mean_loss")?;
    for h in history {
        writeln!(w, "{},{},{}", h.epoch, h.lr, h.mean_loss)?;
    }
    Ok(())
}
