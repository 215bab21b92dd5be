use anyhow::{bail, Context, Result};
use bitenet::data::{
    apply_mode, ingest_journeys, make_diagnosis_samples, make_readmission_samples, preprocess, read_category_map,
    CategoryMap, LabeledSample, PatientJourney, Vocabulary,
};
use bitenet::model::Task;
use bitenet::train::{split, Split};

use crate::config::RunConfig;

/// A preprocessed journey file with its samples for one task.
pub struct Dataset {
    pub journeys: Vec<PatientJourney>,
    pub vocab: Vocabulary,
    pub categories: Option<CategoryMap>,
    pub samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn load(cfg: &RunConfig, task: Task) -> Result<Self> {
        let categories = match (&cfg.categories, task) {
            (Some(path), _) => Some(
                read_category_map(path).with_context(|| format!("reading category map {}", path.display()))?,
            ),
            (None, Task::Diagnosis) => bail!("task = diagnosis needs a category map; set `categories`"),
            (None, Task::Readmission) => None,
        };
        let raw = ingest_journeys(&cfg.journeys)
            .with_context(|| format!("reading journeys {}", cfg.journeys.display()))?;
        let raw = apply_mode(&raw, cfg.mode);
        let (journeys, vocab) = preprocess(&raw, cfg.preprocess)
            .with_context(|| format!("preprocessing {}", cfg.journeys.display()))?;
        let samples = match task {
            Task::Readmission => make_readmission_samples(&journeys, cfg.readmission_window),
            Task::Diagnosis => {
                let map = categories.as_ref().expect("checked above");
                make_diagnosis_samples(&journeys, &vocab, map).context("building diagnosis samples")?
            }
        };
        if samples.is_empty() {
            bail!("{} yields no samples", cfg.journeys.display());
        }
        Ok(Self {
            journeys,
            vocab,
            categories,
            samples,
        })
    }

    pub fn num_categories(&self) -> usize {
        self.categories.as_ref().map_or(0, CategoryMap::num_categories)
    }

    pub fn split(&self, cfg: &RunConfig) -> Result<Split> {
        Ok(split(&self.samples, &cfg.train.split_ratios, cfg.split_seed)?)
    }
}
