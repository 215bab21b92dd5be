use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::config::{derive_seed, TrainConfig};
use super::optim::RmsProp;
use crate::data::{batch, batch_sequential, LabeledSample, PaddedBatch};
use crate::error::{Error, Result};
use crate::metrics::{mean_precision_at_k, pr_auc, MetricReport};
use crate::model::{forward, init_params, predict, DiagnosisHead, ModelConfig, Params, Task};
use crate::nn::{Dropout, Graph, ParamTree, Scalar, Var};

/// Cut-off used for diagnosis model selection.
pub const SELECTION_K: usize = 20;

// Seed streams derived from the run seed.
const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1 << 32;
const STREAM_DROPOUT: u64 = 2 << 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    /// Mean of the per-batch losses.
    pub train_loss: f64,
    pub metric: String,
    /// `None` when the validation split cannot score the metric.
    pub valid_metric: Option<f64>,
    pub best: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation metric, or the
    /// last epoch when no epoch could be scored.
    pub params: Params<f32>,
    pub log: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
}

pub fn selection_metric_name(config: &ModelConfig) -> String {
    match config.task {
        Task::Readmission => "pr_auc".into(),
        Task::Diagnosis => format!("precision@{SELECTION_K}"),
    }
}

/// Loss of a batch given its logits node.
pub fn batch_loss<T: Scalar>(g: &mut Graph<T>, logits: Var, batch: &PaddedBatch, config: &ModelConfig) -> Result<Var> {
    let width = config.output_width();
    let mut targets = vec![T::zero(); batch.size * width];
    for s in 0..batch.size {
        match config.task {
            Task::Readmission => {
                let y = batch.readmission[s].ok_or_else(|| {
                    Error::Data(format!("sample of {} has no readmission label", batch.patient_ids[s]))
                })?;
                targets[s] = if y { T::one() } else { T::zero() };
            }
            Task::Diagnosis => {
                let cats = batch.diagnoses[s].as_ref().ok_or_else(|| {
                    Error::Data(format!("sample of {} has no diagnosis label", batch.patient_ids[s]))
                })?;
                if cats.is_empty() {
                    return Err(Error::Data("empty diagnosis label".into()));
                }
                let mass = match config.diagnosis_head {
                    DiagnosisHead::Sigmoid => T::one(),
                    DiagnosisHead::Softmax => T::lit(1.0 / cats.len() as f64),
                };
                for &c in cats {
                    let c = c as usize;
                    if c >= width {
                        return Err(Error::Data(format!("category {c} outside {width} outputs")));
                    }
                    targets[s * width + c] = mass;
                }
            }
        }
    }
    match (config.task, config.diagnosis_head) {
        (Task::Diagnosis, DiagnosisHead::Softmax) => g.softmax_cross_entropy(logits, &targets),
        _ => {
            let weights = vec![T::one(); targets.len()];
            g.bce_with_logits(logits, &targets, &weights)
        }
    }
}

/// Probabilities per sample, in input order.
pub fn predict_samples(
    params: &Params<f32>,
    config: &ModelConfig,
    samples: &[LabeledSample],
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(samples.len());
    for b in batch_sequential(samples, batch_size)? {
        out.extend(predict(params, config, &b)?.probabilities);
    }
    Ok(out)
}

/// Supervised metrics of `probabilities` against the samples' labels.
pub fn score(
    config: &ModelConfig,
    samples: &[LabeledSample],
    probabilities: &[Vec<f64>],
    ks: &[usize],
) -> Result<MetricReport> {
    let mut report = MetricReport::new(config.task, samples.len());
    match config.task {
        Task::Readmission => {
            let labels: Vec<bool> = samples
                .iter()
                .map(|s| s.readmission.ok_or_else(|| Error::Data("missing readmission label".into())))
                .collect::<Result<_>>()?;
            let scores: Vec<f64> = probabilities.iter().map(|p| p[0]).collect();
            report.pr_auc = Some(pr_auc(&scores, &labels)?);
        }
        Task::Diagnosis => {
            let truths = diagnosis_truths(samples)?;
            for &k in ks {
                report
                    .precision_at_k
                    .insert(k, mean_precision_at_k(probabilities, &truths, k)?);
            }
        }
    }
    Ok(report)
}

pub fn diagnosis_truths(samples: &[LabeledSample]) -> Result<Vec<BTreeSet<u32>>> {
    samples
        .iter()
        .map(|s| {
            s.diagnoses
                .as_ref()
                .map(|d| d.iter().copied().collect())
                .ok_or_else(|| Error::Data("missing diagnosis label".into()))
        })
        .collect()
}

pub fn evaluate(
    params: &Params<f32>,
    config: &ModelConfig,
    samples: &[LabeledSample],
    batch_size: usize,
    ks: &[usize],
) -> Result<MetricReport> {
    let probs = predict_samples(params, config, samples, batch_size)?;
    score(config, samples, &probs, ks)
}

fn validation_metric(
    params: &Params<f32>,
    config: &ModelConfig,
    valid: &[LabeledSample],
    batch_size: usize,
) -> Result<Option<f64>> {
    if valid.is_empty() {
        return Ok(None);
    }
    let report = match evaluate(params, config, valid, batch_size, &[SELECTION_K]) {
        Ok(r) => r,
        Err(Error::Degenerate(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    Ok(match config.task {
        Task::Readmission => report.pr_auc,
        Task::Diagnosis => report.precision_at_k.get(&SELECTION_K).copied(),
    })
}

/// Trains from a seeded initialisation.
pub fn train(
    train_set: &[LabeledSample],
    valid: &[LabeledSample],
    id_space: usize,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let init = init_params(model, id_space, derive_seed(cfg.seed, STREAM_INIT))?;
    train_from(init, train_set, valid, model, cfg)
}

/// Runs `cfg.epochs` epochs of seeded minibatch RMSprop from `init`.
pub fn train_from(
    init: Params<f32>,
    train_set: &[LabeledSample],
    valid: &[LabeledSample],
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    model.validate()?;
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("empty training split".into()));
    }
    let mut params = init;
    let mut opt = RmsProp::new(&params, cfg.learning_rate, cfg.rmsprop_decay, cfg.rmsprop_eps);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Params<f32>)> = None;
    let mut step = 0u64;
    let metric = selection_metric_name(model);

    for epoch in 1..=cfg.epochs {
        let batches = batch(train_set, cfg.batch_size, derive_seed(cfg.seed, STREAM_SHUFFLE + epoch as u64))?;
        let mut total = 0.0;
        for (i, b) in batches.iter().enumerate() {
            let mut g = Graph::<f32>::new();
            let vars = params.bind(&mut g, true);
            let mut dropout = Dropout::new(model.dropout, true, derive_seed(cfg.seed, STREAM_DROPOUT + step))?;
            let out = forward(&mut g, &vars, model, b, &mut dropout)?;
            let loss = batch_loss(&mut g, out.logits, b, model)?;
            let value = f64::from(g.data(loss)[0]);
            if !value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step: i,
                    loss: value,
                });
            }
            g.backward(loss)?;
            let mut grads = Vec::new();
            vars.visit("", &mut |_, v| grads.push(g.grad(*v).map(<[f32]>::to_vec)));
            opt.step(&mut params, &grads)?;
            total += value;
            step += 1;
        }
        let valid_metric = validation_metric(&params, model, valid, cfg.batch_size)?;
        let improved = match (valid_metric, &best) {
            (Some(v), Some((b, _, _))) => v > *b,
            (Some(_), None) => true,
            (None, _) => false,
        };
        if improved {
            best = Some((valid_metric.unwrap_or_default(), epoch, params.clone()));
        }
        log.push(EpochLog {
            epoch,
            steps: batches.len(),
            train_loss: total / batches.len() as f64,
            metric: metric.clone(),
            valid_metric,
            best: improved,
        });
    }
    Ok(match best {
        Some((_, epoch, p)) => TrainOutcome {
            params: p,
            log,
            best_epoch: Some(epoch),
        },
        None => TrainOutcome {
            params,
            log,
            best_epoch: None,
        },
    })
}
