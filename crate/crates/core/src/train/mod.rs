//! Soft Dice training with AdamW and Dice / NSD evaluation.

mod loss;
mod metrics;
mod optim;

use std::fmt::Write as _;

use crate::data::{gen_dataset, DatasetSpec, Sample};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{stream_id, SplitMix64};
use crate::scalar::Scalar;
use crate::segnet::{build_unet, unet_backward, unet_forward, unet_forward_traced, UNetConfig, UNetParams};
use crate::tensor::Tensor;

pub use loss::{soft_dice_loss, DICE_EPS};
pub use metrics::{boundary, dice_score, nsd_score, MetricResult};
pub use optim::{AdamWConfig, AdamWState};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOptions {
    pub iters: usize,
    pub batch: usize,
    /// Validation interval; the final iteration is always evaluated.
    pub eval_every: usize,
    pub seed: u64,
    pub optim: AdamWConfig,
    pub nsd_tau: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            iters: 2000,
            batch: 4,
            eval_every: 250,
            seed: 0,
            optim: AdamWConfig::default(),
            nsd_tau: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryRow {
    pub iter: usize,
    /// Mean training loss since the previous row.
    pub loss: f64,
    pub val_dice: f64,
    pub val_nsd: f64,
}

pub const HISTORY_HEADER: &str = "iter,loss,val_dice,val_nsd";

/// `iter,loss,val_dice,val_nsd` lines with a header.
pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut s = format!("{HISTORY_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.6},{:.6},{:.6}", r.iter, r.loss, r.val_dice, r.val_nsd);
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub params: UNetParams<T>,
    pub history: Vec<HistoryRow>,
    pub metrics: MetricResult,
}

/// Stack `[1, S...]` tensors into `[B, 1, S...]`.
pub fn stack<T: Scalar>(items: &[&Tensor<f32>]) -> Result<Tensor<T>> {
    let mut dims = vec![items.len()];
    dims.extend_from_slice(items[0].dims());
    let data = items.iter().flat_map(|t| t.data().iter().map(|&v| T::of(v as f64))).collect();
    Tensor::from_vec(&dims, data)
}

/// Threshold logits at 0 and score each item against its mask.
pub fn evaluate<T: Scalar>(
    params: &UNetParams<T>,
    cfg: &UNetConfig,
    samples: &[Sample],
    nsd_tau: f64,
) -> Result<MetricResult> {
    const EVAL_BATCH: usize = 8;
    let mut per_sample = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let images: Vec<&Tensor<f32>> = chunk.iter().map(|s| &s.image).collect();
        let logits = unet_forward(params, cfg, &stack::<T>(&images)?)?;
        let plane = logits.numel() / chunk.len();
        let spatial = chunk[0].mask.dims()[1..].to_vec();
        let scores = par::map_range(chunk.len(), |i| -> Result<(f64, f64)> {
            let pred = Tensor::<f32>::from_vec(
                &spatial,
                logits.data()[i * plane..(i + 1) * plane]
                    .iter()
                    .map(|&v| (v.as_f64() > 0.0) as u8 as f32)
                    .collect(),
            )?;
            let gt = chunk[i].mask.clone().reshape(&spatial)?;
            Ok((dice_score(&pred, &gt)?, nsd_score(&pred, &gt, nsd_tau)?))
        });
        for s in scores {
            per_sample.push(s?);
        }
    }
    Ok(MetricResult::from_samples(per_sample))
}

/// Batch order: one seeded permutation of the training split per epoch.
struct Batches {
    seed: u64,
    n: usize,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl Batches {
    fn new(seed: u64, n: usize) -> Self {
        Self {
            seed,
            n,
            epoch: 0,
            order: Vec::new(),
            pos: n,
        }
    }

    fn next(&mut self) -> usize {
        if self.pos == self.n {
            let mut rng = SplitMix64::keyed(self.seed, self.epoch, stream_id("train.order"));
            self.order = (0..self.n).collect();
            for i in (1..self.n).rev() {
                self.order.swap(i, rng.below(i + 1));
            }
            self.epoch += 1;
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// One optimizer step on a batch; returns the loss.
pub fn train_step<T: Scalar>(
    params: &mut UNetParams<T>,
    cfg: &UNetConfig,
    state: &mut AdamWState<T>,
    images: &Tensor<T>,
    masks: &Tensor<T>,
) -> Result<f64> {
    let (logits, trace) = unet_forward_traced(params, cfg, images)?;
    let (loss, grad) = soft_dice_loss(&logits, masks)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    let (grads, _) = unet_backward(params, &trace, &grad)?;
    let g = grads.named();
    let gs: Vec<&Tensor<T>> = g.iter().map(|(_, t)| *t).collect();
    let mut ps: Vec<&mut Tensor<T>> = params.named_mut().into_iter().map(|(_, t)| t).collect();
    state.step(&mut ps, &gs)?;
    Ok(loss)
}

/// Deterministic training run given `opts.seed` (initialization and batch
/// order) and `data` (samples).
pub fn train_loop<T: Scalar>(cfg: &UNetConfig, data: &DatasetSpec, opts: &TrainOptions) -> Result<TrainOutcome<T>> {
    train_loop_with(cfg, data, opts, |_| {})
}

/// [`train_loop`] with a callback invoked on every history row.
pub fn train_loop_with<T: Scalar>(
    cfg: &UNetConfig,
    data: &DatasetSpec,
    opts: &TrainOptions,
    mut on_row: impl FnMut(&HistoryRow),
) -> Result<TrainOutcome<T>> {
    data.validate()?;
    cfg.validate()?;
    if data.rank != cfg.spatial_rank {
        return Err(Error::Config(format!(
            "dataset rank {} does not match model rank {}",
            data.rank, cfg.spatial_rank
        )));
    }
    cfg.validate_input(&data.spatial())?;
    if opts.batch == 0 || opts.eval_every == 0 {
        return Err(Error::Config("train.batch and train.eval_every must be >= 1".into()));
    }
    let samples = gen_dataset(data);
    let (train, val) = samples.split_at(data.n_train);
    let mut params = build_unet::<T>(cfg, opts.seed)?;
    let mut state = AdamWState::new(opts.optim);
    let mut batches = Batches::new(opts.seed, train.len());
    let mut history = Vec::new();
    let (mut loss_sum, mut loss_n) = (0.0, 0usize);
    for it in 1..=opts.iters {
        let idx: Vec<usize> = (0..opts.batch).map(|_| batches.next()).collect();
        let images: Vec<&Tensor<f32>> = idx.iter().map(|&i| &train[i].image).collect();
        let masks: Vec<&Tensor<f32>> = idx.iter().map(|&i| &train[i].mask).collect();
        loss_sum += train_step(&mut params, cfg, &mut state, &stack(&images)?, &stack(&masks)?)?;
        loss_n += 1;
        if it % opts.eval_every == 0 || it == opts.iters {
            let m = evaluate(&params, cfg, val, opts.nsd_tau)?;
            let row = HistoryRow {
                iter: it,
                loss: loss_sum / loss_n as f64,
                val_dice: m.dice,
                val_nsd: m.nsd,
            };
            on_row(&row);
            history.push(row);
            loss_sum = 0.0;
            loss_n = 0;
        }
    }
    let metrics = evaluate(&params, cfg, val, opts.nsd_tau)?;
    Ok(TrainOutcome {
        params,
        history,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segnet::Upsampler;

    fn tiny() -> (UNetConfig, DatasetSpec) {
        let mut cfg = UNetConfig::new(2, Upsampler::LinearInterp);
        cfg.base_channels = 2;
        cfg.depth = 2;
        let data = DatasetSpec {
            extent: 16,
            n_train: 4,
            n_val: 2,
            ..DatasetSpec::default_for(2)
        };
        (cfg, data)
    }

    #[test]
    fn zero_iterations_keep_initialization() {
        let (cfg, data) = tiny();
        let opts = TrainOptions {
            iters: 0,
            ..TrainOptions::default()
        };
        let out = train_loop::<f32>(&cfg, &data, &opts).unwrap();
        assert_eq!(out.params, build_unet(&cfg, 0).unwrap());
        assert!(out.history.is_empty());
    }

    #[test]
    fn repeatable_histories() {
        let (cfg, data) = tiny();
        let opts = TrainOptions {
            iters: 6,
            batch: 2,
            eval_every: 3,
            ..TrainOptions::default()
        };
        let a = train_loop::<f32>(&cfg, &data, &opts).unwrap();
        let b = train_loop::<f32>(&cfg, &data, &opts).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.len(), 2);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn batches_cover_each_epoch() {
        let mut b = Batches::new(3, 5);
        let mut seen: Vec<usize> = (0..5).map(|_| b.next()).collect();
        seen.sort();
        assert_eq!(seen, [0, 1, 2, 3, 4]);
    }
}
