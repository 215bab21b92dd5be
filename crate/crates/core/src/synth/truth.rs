use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::config::{SynthConfig, INTERVAL_THRESHOLD_DAYS, TRIGGER_FORCE};
use crate::data::CategoryMap;
use crate::error::{Error, Result};

pub const TRUTH_VERSION: u32 = 1;

/// The structure the generator planted, written next to the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedTruth {
    pub version: u32,
    pub trigger_codes: Vec<String>,
    /// Diagnosis codes per cluster, trigger codes included.
    pub clusters: Vec<Vec<String>>,
    pub cluster_categories: Vec<String>,
    /// Successor of each cluster.
    pub transition: Vec<usize>,
    /// Every unordered pair of codes sharing a cluster.
    pub pairs: Vec<(String, String)>,
    pub config: SynthConfig,
}

impl PlantedTruth {
    pub fn from_json(text: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(text).map_err(|e| Error::Format(format!("truth file: {e}")))?;
        if t.version != TRUTH_VERSION {
            return Err(Error::Format(format!("truth file version {} unsupported", t.version)));
        }
        Ok(t)
    }

    pub fn within_cluster_pairs(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for members in &self.clusters {
            for (i, a) in members.iter().enumerate() {
                for b in &members[i + 1..] {
                    out.push((a.clone(), b.clone()));
                }
            }
        }
        out.sort();
        out
    }

    /// Cluster index of every diagnosis code.
    pub fn cluster_labels(&self) -> BTreeMap<String, usize> {
        self.clusters
            .iter()
            .enumerate()
            .flat_map(|(c, ms)| ms.iter().map(move |m| (m.clone(), c)))
            .collect()
    }

    /// Clusters active in a visit, recovered from its diagnosis codes.
    pub fn active_clusters<S: AsRef<str>>(&self, codes: &[S]) -> BTreeSet<usize> {
        let labels = self.cluster_labels();
        codes.iter().filter_map(|c| labels.get(c.as_ref()).copied()).collect()
    }

    /// Probability that the visit is followed by a readmission inside the
    /// window, under the generating process.
    pub fn readmission_probability<S: AsRef<str>>(&self, codes: &[S], interval_days: u32) -> f64 {
        let triggered = codes
            .iter()
            .any(|c| self.trigger_codes.binary_search_by(|t| t.as_str().cmp(c.as_ref())).is_ok());
        let fires = triggered && (!self.config.interval_effect || interval_days >= INTERVAL_THRESHOLD_DAYS);
        let base = self.config.readm_base_rate;
        if fires {
            TRIGGER_FORCE + (1.0 - TRIGGER_FORCE) * base
        } else {
            base
        }
    }

    /// Probability of each category (indexed as in `map`) appearing in the
    /// visit after one holding `codes`.
    pub fn next_category_probabilities<S: AsRef<str>>(&self, codes: &[S], map: &CategoryMap) -> Result<Vec<f64>> {
        let active = self.active_clusters(codes);
        let successors: BTreeSet<usize> = active.iter().map(|&c| self.transition[c]).collect();
        let total = self.clusters.len() as f64;
        let keep = self.config.transition_keep;
        let extra = self.config.transition_new;
        let s = active.len() as i32;

        let mut by_category: Vec<Vec<usize>> = vec![Vec::new(); map.num_categories()];
        for (c, name) in self.cluster_categories.iter().enumerate() {
            let id = map
                .categories()
                .iter()
                .position(|k| k == name)
                .ok_or_else(|| Error::Data(format!("category `{name}` absent from map")))?;
            by_category[id].push(c);
        }
        Ok(by_category
            .iter()
            .map(|clusters| {
                let share = clusters.len() as f64 / total;
                let m = clusters.iter().filter(|c| successors.contains(c)).count() as i32;
                let none_kept = (1.0 - keep).powi(m);
                let absent = none_kept * extra * (1.0 - share)
                    + (1.0 - extra) * (none_kept - (1.0 - keep).powi(s) * share);
                1.0 - absent
            })
            .collect())
    }
}
