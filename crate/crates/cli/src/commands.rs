use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use bitenet::data::{batch_sequential, LabeledSample};
use bitenet::metrics::{extract_code_embeddings, format_embeddings, score_embeddings, MetricReport};
use bitenet::model::{encode_params, load_params, predict, ModelConfig, Task, Variant};
use bitenet::synth::{generate, PlantedTruth};
use bitenet::train::{evaluate, train, EpochLog, TrainConfig};
use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset::Dataset;
use crate::output::{check_free, json, write, OUTPUT_VERSION};

pub const PARAMS_FILE: &str = "params.bitenet";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const EVALUATION_FILE: &str = "evaluation.json";
pub const EMBEDDING_FILE: &str = "embeddings.tsv";
pub const EXPLANATION_FILE: &str = "explanations.json";

pub fn synth(cfg: &RunConfig, force: bool) -> Result<()> {
    let out = generate(&cfg.synth)?;
    let paths = out.write(&cfg.output, force)?;
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct SplitSizes {
    train: usize,
    valid: usize,
    test: usize,
}

#[derive(Serialize)]
struct RunReport {
    seed: u64,
    best_epoch: Option<usize>,
    params: String,
    test: MetricReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; zero for a single seed.
    pub std: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Summary { mean, std }
}

#[derive(Serialize)]
struct TrainReport {
    version: u32,
    command: &'static str,
    task: Task,
    variant: Variant,
    num_parameters: usize,
    samples: SplitSizes,
    seeds: Vec<u64>,
    runs: Vec<RunReport>,
    summary: BTreeMap<String, Summary>,
}

fn model_config(cfg: &RunConfig, ds: &Dataset) -> ModelConfig {
    let mut model = cfg.model.clone();
    model.num_categories = match model.task {
        Task::Readmission => 0,
        Task::Diagnosis => ds.num_categories(),
    };
    model
}

pub fn train_cmd(cfg: &RunConfig, force: bool) -> Result<()> {
    if cfg.seeds.is_empty() {
        bail!("`seeds` is empty");
    }
    let ds = Dataset::load(cfg, cfg.model.task)?;
    let model = model_config(cfg, &ds);
    model.validate()?;
    let parts = ds.split(cfg)?;
    let seed_dir = |seed: u64| {
        if cfg.seeds.len() > 1 {
            cfg.output.join(format!("seed-{seed}"))
        } else {
            cfg.output.clone()
        }
    };
    let mut planned = vec![cfg.output.join(REPORT_FILE)];
    for &seed in &cfg.seeds {
        planned.push(seed_dir(seed).join(PARAMS_FILE));
        planned.push(seed_dir(seed).join(LOG_FILE));
    }
    check_free(&planned, force)?;
    let mut runs = Vec::new();
    let mut num_parameters = 0;
    for &seed in &cfg.seeds {
        let dir = seed_dir(seed);
        let tc = TrainConfig { seed, ..cfg.train.clone() };
        let outcome = train(&parts.train, &parts.valid, ds.vocab.id_space(), &model, &tc)
            .with_context(|| format!("training with seed {seed}"))?;
        num_parameters = outcome.params.num_parameters();
        let test = evaluate(&outcome.params, &model, &parts.test, tc.batch_size, &cfg.precision_ks)
            .with_context(|| format!("scoring the test split for seed {seed}"))?;

        let params_path = dir.join(PARAMS_FILE);
        write(&params_path, &encode_params(&outcome.params, &model, &ds.vocab)?, force)?;
        write(&dir.join(LOG_FILE), &log_lines(&outcome.log)?, force)?;
        for l in &outcome.log {
            let metric = l.valid_metric.map_or("n/a".to_string(), |v| format!("{v:.4}"));
            println!(
                "seed {seed} epoch {:>3} loss {:.4} valid {} {metric}{}",
                l.epoch,
                l.train_loss,
                l.metric,
                if l.best { " *" } else { "" }
            );
        }
        runs.push(RunReport {
            seed,
            best_epoch: outcome.best_epoch,
            params: params_path.display().to_string(),
            test,
        });
    }

    let mut by_metric: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &runs {
        for (k, v) in r.test.values() {
            by_metric.entry(k).or_default().push(v);
        }
    }
    let summary: BTreeMap<String, Summary> = by_metric.iter().map(|(k, v)| (k.clone(), summarize(v))).collect();
    for (k, s) in &summary {
        println!("test {k}: {:.4} ± {:.4}", s.mean, s.std);
    }
    let report = TrainReport {
        version: OUTPUT_VERSION,
        command: "train",
        task: model.task,
        variant: model.variant,
        num_parameters,
        samples: SplitSizes {
            train: parts.train.len(),
            valid: parts.valid.len(),
            test: parts.test.len(),
        },
        seeds: cfg.seeds.clone(),
        runs,
        summary,
    };
    write(&cfg.output.join(REPORT_FILE), &json(&report)?, force)
}

fn log_lines(log: &[EpochLog]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for l in log {
        out.extend(serde_json::to_vec(l)?);
        out.push(b'\n');
    }
    Ok(out)
}

#[derive(Serialize)]
struct EvaluationReport {
    version: u32,
    command: &'static str,
    report: MetricReport,
}

pub fn evaluate_cmd(cfg: &RunConfig, force: bool) -> Result<()> {
    let file = load_params::<f32>(&cfg.params)?;
    let ds = Dataset::load(cfg, file.config.task)?;
    file.check_vocabulary(&ds.vocab)
        .with_context(|| format!("{} does not fit {}", cfg.params.display(), cfg.journeys.display()))?;
    if file.config.task == Task::Diagnosis && ds.num_categories() != file.config.num_categories {
        bail!(
            "{} predicts {} categories but the category map has {}",
            cfg.params.display(),
            file.config.num_categories,
            ds.num_categories()
        );
    }
    let parts = ds.split(cfg)?;
    let mut report = evaluate(&file.params, &file.config, &parts.test, cfg.train.batch_size, &cfg.precision_ks)?;
    if let Some(path) = &cfg.truth {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let truth = PlantedTruth::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
        let emb = extract_code_embeddings(&file.params, &file.vocabulary)?;
        let seed = cfg.seeds.first().copied().unwrap_or(1);
        let scores = score_embeddings(&emb, &truth.cluster_labels(), &truth.pairs, &cfg.nns_ks, cfg.distance, seed)?;
        report.nns_accuracy_at_k = scores.nns_accuracy_at_k;
        report.nmi = Some(scores.nmi);
    }
    for (k, v) in report.values() {
        println!("{k}: {v:.4}");
    }
    let doc = EvaluationReport {
        version: OUTPUT_VERSION,
        command: "evaluate",
        report,
    };
    write(&cfg.output.join(EVALUATION_FILE), &json(&doc)?, force)
}

pub fn embed_cmd(cfg: &RunConfig, force: bool) -> Result<()> {
    let file = load_params::<f32>(&cfg.params)?;
    let emb = extract_code_embeddings(&file.params, &file.vocabulary)?;
    let path = cfg.output.join(EMBEDDING_FILE);
    write(&path, format_embeddings(&emb).as_bytes(), force)?;
    println!("wrote {} codes to {}", emb.codes.len(), path.display());
    Ok(())
}

#[derive(Serialize)]
struct CodeImportance {
    code: String,
    weight: f64,
}

#[derive(Serialize)]
struct VisitExplanation {
    /// Days since the journey's first admission.
    interval_days: u32,
    /// Mean of the forward and backward pooling weights.
    importance: f64,
    forward_weight: f64,
    backward_weight: f64,
    codes: Vec<CodeImportance>,
}

#[derive(Serialize)]
struct PatientExplanation {
    patient_id: String,
    logits: Vec<f64>,
    probabilities: Vec<f64>,
    visits: Vec<VisitExplanation>,
}

#[derive(Serialize)]
struct ExplanationReport {
    version: u32,
    command: &'static str,
    task: Task,
    /// Category names for diagnosis outputs, in output order.
    categories: Vec<String>,
    patients: Vec<PatientExplanation>,
}

pub fn explain_cmd(cfg: &RunConfig, force: bool) -> Result<()> {
    if cfg.patients.is_empty() {
        bail!("explain needs at least one id in `patients`");
    }
    let file = load_params::<f32>(&cfg.params)?;
    let ds = Dataset::load(cfg, file.config.task)?;
    file.check_vocabulary(&ds.vocab)
        .with_context(|| format!("{} does not fit {}", cfg.params.display(), cfg.journeys.display()))?;
    let mut samples = Vec::new();
    for id in &cfg.patients {
        let journey = ds
            .journeys
            .iter()
            .find(|j| &j.patient_id == id)
            .with_context(|| format!("unknown patient id `{id}` in {}", cfg.journeys.display()))?;
        samples.push(LabeledSample {
            patient_id: id.clone(),
            prefix: journey.clone(),
            readmission: None,
            diagnoses: None,
        });
    }
    let mut patients = Vec::new();
    for batch in batch_sequential(&samples, cfg.train.batch_size)? {
        let pred = predict(&file.params, &file.config, &batch)?;
        for (row, trace) in pred.traces.into_iter().enumerate() {
            let sample = &samples[batch.sample_index[row]];
            let first = sample.prefix.visits[0].admission_day;
            let visits = sample
                .prefix
                .visits
                .iter()
                .enumerate()
                .map(|(v, visit)| {
                    let (fw, bw) = (trace.visit_weights_fw[v], trace.visit_weights_bw[v]);
                    VisitExplanation {
                        interval_days: (visit.admission_day - first).unsigned_abs() as u32,
                        importance: (fw + bw) / 2.0,
                        forward_weight: fw,
                        backward_weight: bw,
                        codes: visit
                            .codes
                            .iter()
                            .zip(&trace.code_weights[v])
                            .map(|(&id, &weight)| CodeImportance {
                                code: file.vocabulary.code(id).unwrap_or("?").to_string(),
                                weight,
                            })
                            .collect(),
                    }
                })
                .collect();
            patients.push(PatientExplanation {
                patient_id: trace.patient_id,
                logits: trace.logits,
                probabilities: trace.probabilities,
                visits,
            });
        }
    }
    let doc = ExplanationReport {
        version: OUTPUT_VERSION,
        command: "explain",
        task: file.config.task,
        categories: ds
            .categories
            .as_ref()
            .filter(|_| file.config.task == Task::Diagnosis)
            .map(|m| m.categories().to_vec())
            .unwrap_or_default(),
        patients,
    };
    let path: PathBuf = cfg.output.join(EXPLANATION_FILE);
    write(&path, &json(&doc)?, force)?;
    println!("wrote {}", path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_seeds() {
        let s = summarize(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        assert_eq!(summarize(&[0.4]).std, 0.0);
    }
}
