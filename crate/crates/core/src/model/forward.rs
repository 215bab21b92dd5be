use serde::{Deserialize, Serialize};

use super::config::{DiagnosisHead, ModelConfig, Task};
use super::params::{BiteNetParams, Params};
use crate::data::PaddedBatch;
use crate::error::{Error, Result};
use crate::nn::graph::sigmoid;
use crate::nn::{
    group_attention_pooling, group_masenc_block, group_sum_pooling, AttentionMask, Dropout, Graph, MaskKind,
    MasEncParams, PoolingParams, Scalar, Var,
};

/// Graph handles produced by one forward pass over a batch.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `B × output`
    pub logits: Var,
    /// `B × 2d` concatenation of the forward and backward journey vectors.
    pub journey: Var,
    /// One row per real visit, weights over that visit's code slots.
    pub code_weights: Var,
    /// `(sample, visit)` for each row of `code_weights`.
    pub visit_slots: Vec<(usize, usize)>,
    /// `B × max_visits`
    pub visit_weights_fw: Var,
    pub visit_weights_bw: Var,
}

/// Attention weights and outputs for one sample, restricted to real
/// positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    pub patient_id: String,
    /// Per visit, weights over its codes in stored order.
    pub code_weights: Vec<Vec<f64>>,
    pub visit_weights_fw: Vec<f64>,
    pub visit_weights_bw: Vec<f64>,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

/// Additive masks for consecutive groups of `len` positions: the temporal
/// kind combined with a key-padding mask from `valid`.
pub fn group_masks(kind: MaskKind, len: usize, valid: &[bool]) -> Result<Vec<f64>> {
    if len == 0 || valid.len() % len != 0 {
        return Err(Error::Shape(format!(
            "{} validity flags in groups of {len}",
            valid.len()
        )));
    }
    let temporal = AttentionMask::build(kind, len)?;
    let mut out = Vec::with_capacity(valid.len() * len);
    for chunk in valid.chunks(len) {
        let combined = temporal.combine(&AttentionMask::padding(chunk)?)?;
        out.extend_from_slice(combined.matrix());
    }
    Ok(out)
}

fn pool<T: Scalar>(
    g: &mut Graph<T>,
    seq: Var,
    len: usize,
    valid: &[bool],
    p: Option<&PoolingParams<Var>>,
) -> Result<(Var, Var)> {
    match p {
        Some(p) => group_attention_pooling(g, seq, len, valid, p),
        None => group_sum_pooling(g, seq, len, valid),
    }
}

fn stack<T: Scalar>(
    g: &mut Graph<T>,
    mut x: Var,
    len: usize,
    masks: &[f64],
    blocks: &[MasEncParams<Var>],
    dropout: &mut Dropout,
) -> Result<Var> {
    for block in blocks {
        x = group_masenc_block(g, x, len, masks, block, dropout)?;
    }
    Ok(x)
}

/// Mask kinds of the forward and backward visit stacks.
pub fn visit_mask_kinds(config: &ModelConfig) -> (MaskKind, MaskKind) {
    if !config.uses_masks() {
        (MaskKind::None, MaskKind::None)
    } else if config.direction_swap {
        (MaskKind::Backward, MaskKind::Forward)
    } else {
        (MaskKind::Forward, MaskKind::Backward)
    }
}

/// Runs the network over a padded batch.
///
/// Each real visit is encoded from its codes, the interval encodings are
/// added, and the forward and backward visit stacks are pooled into the two
/// halves of the journey vector that feeds the output head.
pub fn forward<T: Scalar>(
    g: &mut Graph<T>,
    params: &BiteNetParams<Var>,
    config: &ModelConfig,
    batch: &PaddedBatch,
    dropout: &mut Dropout,
) -> Result<ForwardOutput> {
    let (table_rows, d) = g.shape(params.code_embedding);
    if d != config.dim {
        return Err(Error::Shape(format!(
            "embedding width {d} but config dim {}",
            config.dim
        )));
    }
    let (b, m, k) = (batch.size, batch.max_visits, batch.max_codes);

    // Code level: every real visit becomes one group of `k` code slots.
    let mut visit_slots = Vec::new();
    let mut ids = Vec::new();
    let mut code_valid = Vec::new();
    for s in 0..b {
        for v in 0..m {
            if !batch.visit_valid[batch.visit_slot(s, v)] {
                continue;
            }
            let (codes, ok) = batch.visit_codes(s, v);
            if !ok.iter().any(|&o| o) {
                return Err(Error::Data(format!(
                    "visit {v} of sample {s} has no codes"
                )));
            }
            for &c in codes {
                if c as usize >= table_rows {
                    return Err(Error::Shape(format!(
                        "code id {c} out of range for {table_rows} embedding rows"
                    )));
                }
                ids.push(c as usize);
            }
            code_valid.extend_from_slice(ok);
            visit_slots.push((s, v));
        }
    }
    let codes = g.gather(params.code_embedding, &ids)?;
    let (visits, code_weights) = if config.uses_pooling() {
        let kind = if config.uses_masks() {
            MaskKind::Diagonal
        } else {
            MaskKind::None
        };
        let masks = group_masks(kind, k, &code_valid)?;
        let encoded = stack(g, codes, k, &masks, &params.code_stack, dropout)?;
        pool(g, encoded, k, &code_valid, params.code_pool.as_ref())?
    } else {
        // Summation of the raw code embeddings.
        pool(g, codes, k, &code_valid, None)?
    };

    // Scatter the visit vectors into `b × m` slots; padded slots read an
    // appended zero row.
    let zero = g.zeros(1, d);
    let with_zero = g.concat_rows(&[visits, zero])?;
    let pad_row = visit_slots.len();
    let mut slot_rows = vec![pad_row; b * m];
    for (row, &(s, v)) in visit_slots.iter().enumerate() {
        slot_rows[s * m + v] = row;
    }
    let mut x = g.gather(with_zero, &slot_rows)?;

    if let Some(table) = params.interval_table {
        let last = g.shape(table).0.saturating_sub(1);
        let rows: Vec<usize> = batch
            .intervals
            .iter()
            .map(|&p| (p as usize).min(last))
            .collect();
        let enc = g.gather(table, &rows)?;
        x = g.add(x, enc)?;
    }

    let (fw_kind, bw_kind) = visit_mask_kinds(config);
    let fw_masks = group_masks(fw_kind, m, &batch.visit_valid)?;
    let bw_masks = group_masks(bw_kind, m, &batch.visit_valid)?;
    let fw = stack(g, x, m, &fw_masks, &params.fw_stack, dropout)?;
    let bw = stack(g, x, m, &bw_masks, &params.bw_stack, dropout)?;
    let (u_fw, visit_weights_fw) = pool(g, fw, m, &batch.visit_valid, params.fw_pool.as_ref())?;
    let (u_bw, visit_weights_bw) = pool(g, bw, m, &batch.visit_valid, params.bw_pool.as_ref())?;
    let journey = g.concat_cols(&[u_fw, u_bw])?;

    let logits = g.matmul(journey, params.head_w)?;
    let logits = g.add_broadcast(logits, params.head_b)?;
    Ok(ForwardOutput {
        logits,
        journey,
        code_weights,
        visit_slots,
        visit_weights_fw,
        visit_weights_bw,
    })
}

/// Probabilities for one row of logits.
pub fn predict_proba(logits: &[f64], config: &ModelConfig) -> Vec<f64> {
    match (config.task, config.diagnosis_head) {
        (Task::Diagnosis, DiagnosisHead::Softmax) => softmax(logits),
        _ => logits.iter().map(|&z| sigmoid(z)).collect(),
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Evaluation-mode outputs for every sample of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchPrediction {
    pub logits: Vec<Vec<f64>>,
    pub probabilities: Vec<Vec<f64>>,
    /// Journey vectors, `2d` wide.
    pub journeys: Vec<Vec<f64>>,
    pub traces: Vec<ForwardTrace>,
}

/// Forward pass without dropout or gradients.
pub fn predict<T: Scalar>(params: &Params<T>, config: &ModelConfig, batch: &PaddedBatch) -> Result<BatchPrediction> {
    let mut g = Graph::<T>::new();
    let vars = params.bind(&mut g, false);
    let out = forward(&mut g, &vars, config, batch, &mut Dropout::disabled())?;
    let to_f64 = |v: Var, g: &Graph<T>| -> Vec<f64> {
        g.data(v).iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect()
    };
    let width = g.shape(out.logits).1;
    let logits_flat = to_f64(out.logits, &g);
    let journeys_flat = to_f64(out.journey, &g);
    let jw = g.shape(out.journey).1;
    let code_w = to_f64(out.code_weights, &g);
    let fw_w = to_f64(out.visit_weights_fw, &g);
    let bw_w = to_f64(out.visit_weights_bw, &g);
    let (m, k) = (batch.max_visits, batch.max_codes);

    let mut result = BatchPrediction {
        logits: Vec::with_capacity(batch.size),
        probabilities: Vec::with_capacity(batch.size),
        journeys: Vec::with_capacity(batch.size),
        traces: Vec::with_capacity(batch.size),
    };
    let mut per_sample_codes: Vec<Vec<Vec<f64>>> = vec![Vec::new(); batch.size];
    for (row, &(s, v)) in out.visit_slots.iter().enumerate() {
        let (_, ok) = batch.visit_codes(s, v);
        let weights = (0..k)
            .filter(|&c| ok[c])
            .map(|c| code_w[row * k + c])
            .collect();
        per_sample_codes[s].push(weights);
    }
    for (s, code_weights) in per_sample_codes.into_iter().enumerate() {
        let logits = logits_flat[s * width..(s + 1) * width].to_vec();
        let probabilities = predict_proba(&logits, config);
        let valid = batch.visits_valid(s);
        let pick = |w: &[f64]| (0..m).filter(|&v| valid[v]).map(|v| w[s * m + v]).collect();
        result.traces.push(ForwardTrace {
            patient_id: batch.patient_ids[s].clone(),
            code_weights,
            visit_weights_fw: pick(&fw_w),
            visit_weights_bw: pick(&bw_w),
            logits: logits.clone(),
            probabilities: probabilities.clone(),
        });
        result.journeys.push(journeys_flat[s * jw..(s + 1) * jw].to_vec());
        result.logits.push(logits);
        result.probabilities.push(probabilities);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{batch_sequential, LabeledSample, PatientJourney, Visit};
    use crate::model::config::Variant;
    use crate::model::params::init_params;

    fn config() -> ModelConfig {
        ModelConfig {
            dim: 8,
            depth: 1,
            heads: 2,
            dropout: 0.1,
            interval_days: 50,
            ..ModelConfig::default()
        }
    }

    fn sample(visits: &[(&[u32], i64)]) -> LabeledSample {
        LabeledSample {
            patient_id: "p".into(),
            prefix: PatientJourney {
                patient_id: "p".into(),
                visits: visits
                    .iter()
                    .map(|&(c, day)| Visit {
                        codes: c.to_vec(),
                        admission_day: day,
                        discharge_day: day,
                    })
                    .collect(),
            },
            readmission: Some(true),
            diagnoses: None,
        }
    }

    #[test]
    fn output_shapes() {
        let cfg = config();
        let p = init_params::<f64>(&cfg, 11, 1).unwrap();
        let s = vec![
            sample(&[(&[1, 2, 3, 4], 0), (&[2], 5), (&[5, 6], 9)]),
            sample(&[(&[7], 0), (&[8, 9, 10], 100)]),
        ];
        let batch = batch_sequential(&s, 2).unwrap().remove(0);
        assert_eq!((batch.max_visits, batch.max_codes), (3, 4));
        let mut g = Graph::new();
        let vars = p.bind(&mut g, false);
        let out = forward(&mut g, &vars, &cfg, &batch, &mut Dropout::disabled()).unwrap();
        assert_eq!(g.shape(out.logits), (2, 1));
        assert_eq!(g.shape(out.journey), (2, 16));

        let dx = ModelConfig {
            task: Task::Diagnosis,
            num_categories: 5,
            ..cfg
        };
        let p = init_params::<f64>(&dx, 11, 1).unwrap();
        let pred = predict(&p, &dx, &batch).unwrap();
        assert_eq!(pred.logits.iter().map(Vec::len).collect::<Vec<_>>(), vec![5, 5]);
    }

    #[test]
    fn single_visit_prefix_is_finite() {
        for variant in [Variant::Full, Variant::Attention, Variant::DireMask, Variant::Interval] {
            let cfg = ModelConfig { variant, ..config() };
            let p = init_params::<f64>(&cfg, 11, 2).unwrap();
            let batch = batch_sequential(&[sample(&[(&[3], 0)])], 1).unwrap().remove(0);
            let pred = predict(&p, &cfg, &batch).unwrap();
            assert!(pred.logits[0][0].is_finite());
            assert_eq!(pred.traces[0].visit_weights_fw, vec![1.0]);
            assert_eq!(pred.traces[0].code_weights, vec![vec![1.0]]);
        }
    }

    #[test]
    fn evaluation_is_deterministic() {
        let cfg = config();
        let p = init_params::<f32>(&cfg, 11, 3).unwrap();
        let batch = batch_sequential(&[sample(&[(&[1, 2], 0), (&[3], 4)])], 1)
            .unwrap()
            .remove(0);
        assert_eq!(predict(&p, &cfg, &batch).unwrap(), predict(&p, &cfg, &batch).unwrap());
    }

    #[test]
    fn attention_variant_sums_raw_embeddings() {
        let cfg = ModelConfig {
            variant: Variant::Attention,
            ..config()
        };
        let p = init_params::<f64>(&cfg, 11, 4).unwrap();
        let batch = batch_sequential(&[sample(&[(&[2, 5], 0)])], 1).unwrap().remove(0);
        let mut g = Graph::new();
        let vars = p.bind(&mut g, false);
        // Rebuild the code-level stage alone.
        let codes = g.gather(vars.code_embedding, &[2, 5]).unwrap();
        let (visit, _) = group_sum_pooling(&mut g, codes, 2, &[true, true]).unwrap();
        let expected: Vec<f64> = p
            .code_embedding
            .row(2)
            .iter()
            .zip(p.code_embedding.row(5))
            .map(|(a, b)| a + b)
            .collect();
        for (a, e) in g.data(visit).iter().zip(&expected) {
            assert!((a - e).abs() < 1e-15);
        }
        let out = forward(&mut g, &vars, &cfg, &batch, &mut Dropout::disabled()).unwrap();
        assert_eq!(g.data(out.code_weights), &[0.5, 0.5]);
    }

    #[test]
    fn interval_overflow_clamps_to_last_row() {
        let cfg = config();
        let mut p = init_params::<f64>(&cfg, 11, 5).unwrap();
        let table = p.interval_table.as_mut().unwrap();
        for (i, v) in table.data_mut().iter_mut().enumerate() {
            *v = (i / 8) as f64 * 0.01;
        }
        let far = sample(&[(&[1], 0), (&[2], 49)]);
        let beyond = sample(&[(&[1], 0), (&[2], 99)]);
        let nearer = sample(&[(&[1], 0), (&[2], 48)]);
        let run = |s: &LabeledSample| {
            let b = batch_sequential(std::slice::from_ref(s), 1).unwrap().remove(0);
            predict(&p, &cfg, &b).unwrap().logits[0][0]
        };
        assert_eq!(run(&far), run(&beyond));
        assert_ne!(run(&far), run(&nearer));
    }

    #[test]
    fn group_masks_combine_padding() {
        let m = group_masks(MaskKind::Forward, 2, &[true, true, true, false]).unwrap();
        let n = crate::nn::NEG;
        assert_eq!(m, vec![n, 0.0, n, n, n, n, n, n]);
    }

    #[test]
    fn proba_heads() {
        let cfg = config();
        assert_eq!(predict_proba(&[0.0], &cfg), vec![0.5]);
        let p = predict_proba(&[20.0, -20.0], &cfg);
        assert!(p[0] > 1.0 - 1e-8 && p[1] < 1e-8);
        let soft = ModelConfig {
            task: Task::Diagnosis,
            num_categories: 3,
            diagnosis_head: DiagnosisHead::Softmax,
            ..cfg
        };
        let p = predict_proba(&[1.0, 2.0, 3.0], &soft);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
