//! Mini-batch training and the rolling fine-tune/evaluate protocol.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{DayBucket, Money, Sample, SampleId};
use crate::error::{Error, Result};
use crate::model::LtvModel;
use crate::nn::{Method, ModelParams, Optimizer};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Method,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 256,
            learning_rate: 1e-3,
            optimizer: Method::Adam,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(
                "learning_rate",
                "must be positive and finite",
            ));
        }
        Ok(())
    }
}

/// Mean per-sample loss before training, after each epoch (running average
/// over the epoch's batches) and after training (full pass).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
}

fn require_finite(loss: f64, context: impl FnOnce() -> String) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite(format!("loss {loss} at {}", context())))
    }
}

/// Runs `config.epochs` epochs of mini-batch optimization of the model's
/// summed loss (gradients are averaged over each batch). Shuffling is keyed
/// by `(seed, epoch)`, so identical inputs give identical parameters.
pub fn fit(
    model: &LtvModel,
    params: &ModelParams,
    samples: &[Sample],
    config: &TrainConfig,
) -> Result<(ModelParams, TrainLog)> {
    config.validate()?;
    let refs: Vec<&Sample> = samples.iter().collect();
    let n = refs.len().max(1) as f64;
    let initial_loss = require_finite(model.loss(params, &refs)? / n, || "initialization".into())?;
    let mut params = params.clone();
    let mut log = TrainLog {
        initial_loss,
        epoch_losses: Vec::with_capacity(config.epochs),
        final_loss: initial_loss,
    };
    if config.epochs == 0 || samples.is_empty() {
        return Ok((params, log));
    }

    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate)?;
    let shuffle_seed = seed::mix(config.seed, seed::TAG_SHUFFLE);
    let mut order: Vec<usize> = (0..refs.len()).collect();
    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut seed::stream_rng(shuffle_seed, epoch as u64));
        let mut epoch_total = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| refs[i]).collect();
            let (loss, mut grad) = model.loss_and_grad(&params, &batch)?;
            require_finite(loss, || format!("epoch {epoch}, batch {b}"))?;
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            optimizer
                .step(params.values_mut(), &grad)
                .map_err(|e| match e {
                    Error::NonFinite(what) => {
                        Error::NonFinite(format!("{what} at epoch {epoch}, batch {b}"))
                    }
                    other => other,
                })?;
            epoch_total += loss;
        }
        let mean = epoch_total / n;
        log::debug!("{} epoch {epoch}: loss {mean:.6}", model.kind());
        log.epoch_losses.push(mean);
    }
    log.final_loss = require_finite(model.loss(&params, &refs)? / n, || "end of training".into())?;
    Ok((params, log))
}

/// Per-day fine-tuning defaults: one epoch at a tenth of the base rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub learning_rate_scale: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 1,
            learning_rate_scale: 0.1,
        }
    }
}

/// One scored sample from the rolling protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub sample_id: SampleId,
    pub day: u32,
    pub predicted: Money,
    pub actual: Money,
    pub expected_counts: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayPredictions {
    pub day: u32,
    pub rows: Vec<PredictionRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollingOutcome {
    pub days: Vec<DayPredictions>,
    /// Checkpoint after fine-tuning on the last bucket that was used.
    pub params: ModelParams,
}

pub fn score_samples(
    model: &LtvModel,
    params: &ModelParams,
    samples: &[Sample],
) -> Result<Vec<PredictionRow>> {
    let refs: Vec<&Sample> = samples.iter().collect();
    let preds = model.predict(params, &refs)?;
    samples
        .iter()
        .zip(preds)
        .map(|(s, p)| {
            let actual = s
                .ltv_label()
                .ok_or_else(|| Error::InvalidArgument(format!("sample {} is unlabeled", s.id)))?;
            if !p.ltv.is_finite() {
                return Err(Error::NonFinite(format!("prediction for sample {}", s.id)));
            }
            Ok(PredictionRow {
                sample_id: s.id,
                day: s.day,
                predicted: p.ltv,
                actual,
                expected_counts: p.expected_counts,
            })
        })
        .collect()
}

/// For each consecutive pair `(D, D+1)` of buckets: fine-tune the current
/// checkpoint on day `D`, then score day `D+1` with it. Day `D+1` is
/// therefore always scored by a checkpoint that has not seen it, and its
/// scores do not depend on any later bucket.
///
/// Empty buckets are skipped with a warning: an empty `D` leaves the
/// checkpoint unchanged, an empty `D+1` produces no evaluated day.
pub fn finetune_rolling(
    model: &LtvModel,
    params: &ModelParams,
    buckets: &[DayBucket],
    base: &TrainConfig,
    finetune: &FinetuneConfig,
) -> Result<RollingOutcome> {
    if buckets.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "the rolling protocol needs at least 2 day buckets, got {}",
            buckets.len()
        )));
    }
    let mut current = params.clone();
    let mut days = Vec::with_capacity(buckets.len() - 1);
    for pair in buckets.windows(2) {
        let (train_day, eval_day) = (&pair[0], &pair[1]);
        if train_day.samples.is_empty() {
            log::warn!(
                "day {} has no samples; checkpoint carried over",
                train_day.day
            );
        } else if finetune.epochs > 0 {
            let cfg = TrainConfig {
                epochs: finetune.epochs,
                learning_rate: base.learning_rate * finetune.learning_rate_scale,
                seed: seed::mix(
                    base.seed,
                    seed::TAG_FINETUNE ^ (u64::from(train_day.day) << 8),
                ),
                ..base.clone()
            };
            current = fit(model, &current, &train_day.samples, &cfg)?.0;
        }
        if eval_day.samples.is_empty() {
            log::warn!("day {} has no samples; skipped", eval_day.day);
            continue;
        }
        days.push(DayPredictions {
            day: eval_day.day,
            rows: score_samples(model, &current, &eval_day.samples)?,
        });
    }
    Ok(RollingOutcome {
        days,
        params: current,
    })
}
