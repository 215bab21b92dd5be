//! Flat `key=value` run configuration.
//!
//! Files hold one `key = value` per line; blank lines and lines starting with
//! `#` are skipped. Command-line `--set` pairs are applied afterwards and win.
//! Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bitenet::data::{DatasetMode, PreprocessConfig};
use bitenet::metrics::{Distance, NNS_KS, PRECISION_KS};
use bitenet::model::ModelConfig;
use bitenet::synth::{SynthConfig, READMISSION_WINDOW_DAYS};
use bitenet::train::TrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{origin}: unknown key `{key}`")]
    UnknownKey { origin: String, key: String },
    #[error("{origin}: `{key}`: {message}")]
    BadValue {
        origin: String,
        key: String,
        message: String,
    },
    #[error("{origin}: expected `key = value`")]
    Syntax { origin: String },
    #[error("cannot read {}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Everything a command may read. Defaults are listed in the README.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Journey file read by train, evaluate and explain.
    pub journeys: PathBuf,
    /// Category map; required for the diagnosis task.
    pub categories: Option<PathBuf>,
    /// Planted-truth file enabling NNS and NMI in evaluate.
    pub truth: Option<PathBuf>,
    /// Directory every command writes into.
    pub output: PathBuf,
    /// Parameter file read by evaluate, embed and explain.
    pub params: PathBuf,
    /// Patient ids for explain.
    pub patients: Vec<String>,
    pub mode: DatasetMode,
    pub preprocess: PreprocessConfig,
    pub readmission_window: i64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Seed of the patient-level split, shared by every training seed.
    pub split_seed: u64,
    pub seeds: Vec<u64>,
    pub precision_ks: Vec<usize>,
    pub nns_ks: Vec<usize>,
    pub distance: Distance,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            journeys: PathBuf::from("data/journeys.jsonl"),
            categories: None,
            truth: None,
            output: PathBuf::from("out"),
            params: PathBuf::from("out/params.bitenet"),
            patients: Vec::new(),
            mode: DatasetMode::DxTx,
            preprocess: PreprocessConfig::default(),
            readmission_window: READMISSION_WINDOW_DAYS,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            split_seed: 1,
            seeds: vec![1],
            precision_ks: PRECISION_KS.to_vec(),
            nns_ks: NNS_KS.to_vec(),
            distance: Distance::Euclidean,
            synth: SynthConfig::default(),
        }
    }
}

fn parse<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("cannot parse `{value}`: {e}"))
}

fn list<T: FromStr>(value: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse)
        .collect()
}

fn bounds(value: &str) -> Result<[usize; 2], String> {
    match list::<usize>(value)?.as_slice() {
        &[lo, hi] => Ok([lo, hi]),
        _ => Err(format!("expected `min,max`, got `{value}`")),
    }
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    /// Sets one key. `origin` names the file and line or the flag in errors.
    pub fn set(&mut self, key: &str, value: &str, origin: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let result: Result<(), String> = (|| {
            match key {
                "journeys" => self.journeys = PathBuf::from(v),
                "categories" => self.categories = optional_path(v),
                "truth" => self.truth = optional_path(v),
                "output" => self.output = PathBuf::from(v),
                "params" => self.params = PathBuf::from(v),
                "patients" => self.patients = list(v)?,
                "mode" => self.mode = parse(v)?,
                "min_visits" => self.preprocess.min_visits = parse(v)?,
                "min_code_freq" => self.preprocess.min_code_freq = parse(v)?,
                "readmission_window" => self.readmission_window = parse(v)?,
                "task" => self.model.task = parse(v)?,
                "variant" => self.model.variant = parse(v)?,
                "dim" => self.model.dim = parse(v)?,
                "depth" => self.model.depth = parse(v)?,
                "heads" => self.model.heads = parse(v)?,
                "dropout" => self.model.dropout = parse(v)?,
                "interval_days" => self.model.interval_days = parse(v)?,
                "direction_swap" => self.model.direction_swap = parse(v)?,
                "diagnosis_head" => self.model.diagnosis_head = parse(v)?,
                "batch_size" => self.train.batch_size = parse(v)?,
                "epochs" => self.train.epochs = parse(v)?,
                "learning_rate" => self.train.learning_rate = parse(v)?,
                "rmsprop_decay" => self.train.rmsprop_decay = parse(v)?,
                "rmsprop_eps" => self.train.rmsprop_eps = parse(v)?,
                "split" => {
                    self.train.split_ratios = match list::<f64>(v)?.as_slice() {
                        &[a, b, c] => [a, b, c],
                        _ => return Err(format!("expected three ratios, got `{v}`")),
                    }
                }
                "split_seed" => self.split_seed = parse(v)?,
                "seeds" => self.seeds = list(v)?,
                "precision_ks" => self.precision_ks = list(v)?,
                "nns_ks" => self.nns_ks = list(v)?,
                "distance" => self.distance = parse(v)?,
                "synth.num_patients" => self.synth.num_patients = parse(v)?,
                "synth.vocab_dx" => self.synth.vocab_dx = parse(v)?,
                "synth.vocab_px" => self.synth.vocab_px = parse(v)?,
                "synth.num_categories" => self.synth.num_categories = parse(v)?,
                "synth.cluster_count" => self.synth.cluster_count = parse(v)?,
                "synth.visits_per_patient" => self.synth.visits_per_patient = bounds(v)?,
                "synth.codes_per_visit" => self.synth.codes_per_visit = bounds(v)?,
                "synth.procedures_per_visit" => self.synth.procedures_per_visit = bounds(v)?,
                "synth.trigger_codes" => self.synth.trigger_codes = parse(v)?,
                "synth.trigger_rate" => self.synth.trigger_rate = parse(v)?,
                "synth.readm_base_rate" => self.synth.readm_base_rate = parse(v)?,
                "synth.max_gap_days" => self.synth.max_gap_days = parse(v)?,
                "synth.interval_effect" => self.synth.interval_effect = parse(v)?,
                "synth.transition_keep" => self.synth.transition_keep = parse(v)?,
                "synth.transition_new" => self.synth.transition_new = parse(v)?,
                "synth.seed" => self.synth.seed = parse(v)?,
                _ => return Err(String::new()),
            }
            Ok(())
        })();
        result.map_err(|message| {
            if message.is_empty() {
                ConfigError::UnknownKey {
                    origin: origin.into(),
                    key: key.into(),
                }
            } else {
                ConfigError::BadValue {
                    origin: origin.into(),
                    key: key.into(),
                    message,
                }
            }
        })
    }

    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let origin = format!("{source}:{}", i + 1);
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { origin: origin.clone() })?;
            self.set(key.trim(), value, &origin)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies one `key=value` override from the command line.
    pub fn apply_override(&mut self, pair: &str) -> Result<(), ConfigError> {
        let origin = format!("--set {pair}");
        let (key, value) = pair.split_once('=').ok_or(ConfigError::Syntax { origin: origin.clone() })?;
        self.set(key.trim(), value, &origin)
    }
}
