use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::Task;

pub const REPORT_VERSION: u32 = 1;

/// Default cut-offs for diagnosis precision@k.
pub const PRECISION_KS: [usize; 6] = [5, 10, 15, 20, 25, 30];

/// Default cut-offs for NNS accuracy@k.
pub const NNS_KS: [usize; 3] = [1, 5, 10];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub version: u32,
    pub task: Task,
    pub num_samples: usize,
    pub pr_auc: Option<f64>,
    pub precision_at_k: BTreeMap<usize, f64>,
    pub nns_accuracy_at_k: BTreeMap<usize, f64>,
    pub nmi: Option<f64>,
}

impl MetricReport {
    pub fn new(task: Task, num_samples: usize) -> Self {
        Self {
            version: REPORT_VERSION,
            task,
            num_samples,
            pr_auc: None,
            precision_at_k: BTreeMap::new(),
            nns_accuracy_at_k: BTreeMap::new(),
            nmi: None,
        }
    }

    /// Every reported value, keyed by a flat name such as `precision@5`.
    pub fn values(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        if let Some(v) = self.pr_auc {
            out.insert("pr_auc".to_string(), v);
        }
        for (k, v) in &self.precision_at_k {
            out.insert(format!("precision@{k}"), *v);
        }
        for (k, v) in &self.nns_accuracy_at_k {
            out.insert(format!("nns_accuracy@{k}"), *v);
        }
        if let Some(v) = self.nmi {
            out.insert("nmi".to_string(), v);
        }
        out
    }
}
