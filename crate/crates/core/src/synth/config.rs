use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability that a trigger-bearing indexed visit is followed by a
/// readmission inside the window.
pub const TRIGGER_FORCE: f64 = 0.9;

/// With the interval effect planted, a trigger only counts from this many
/// days after the first admission.
pub const INTERVAL_THRESHOLD_DAYS: u32 = 60;

pub const READMISSION_WINDOW_DAYS: i64 = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub num_patients: usize,
    pub vocab_dx: usize,
    pub vocab_px: usize,
    pub num_categories: usize,
    /// Planted co-occurrence clusters over diagnosis codes. Cluster `c`
    /// belongs to category `c % num_categories`.
    pub cluster_count: usize,
    /// Inclusive bounds.
    pub visits_per_patient: [usize; 2],
    /// Inclusive bounds on diagnosis codes per visit.
    pub codes_per_visit: [usize; 2],
    /// Inclusive bounds on procedure codes per visit.
    pub procedures_per_visit: [usize; 2],
    pub trigger_codes: usize,
    /// Chance that a visit whose active clusters hold a trigger code
    /// records one.
    pub trigger_rate: f64,
    pub readm_base_rate: f64,
    /// Gaps that are not readmissions are drawn from the window's end up to
    /// this many days.
    pub max_gap_days: i64,
    pub interval_effect: bool,
    /// Chance that each active cluster's successor is active next visit.
    pub transition_keep: f64,
    /// Chance of one extra uniformly drawn active cluster next visit.
    pub transition_new: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_patients: 5000,
            vocab_dx: 400,
            vocab_px: 60,
            num_categories: 40,
            cluster_count: 40,
            visits_per_patient: [2, 3],
            codes_per_visit: [2, 6],
            procedures_per_visit: [0, 2],
            trigger_codes: 16,
            trigger_rate: 0.6,
            readm_base_rate: 0.05,
            max_gap_days: 90,
            interval_effect: false,
            transition_keep: 0.85,
            transition_new: 0.3,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, [lo, hi]) in [
            ("visits_per_patient", self.visits_per_patient),
            ("codes_per_visit", self.codes_per_visit),
            ("procedures_per_visit", self.procedures_per_visit),
        ] {
            if lo > hi {
                return bad(format!("{name} bounds {lo} > {hi}"));
            }
        }
        if self.visits_per_patient[0] < 1 || self.codes_per_visit[0] < 1 {
            return bad("every patient needs a visit and every visit a diagnosis code".into());
        }
        if self.num_patients < 1 {
            return bad("num_patients must be at least 1".into());
        }
        if self.num_categories < 1 || self.cluster_count < self.num_categories {
            return bad(format!(
                "need 1 <= num_categories ({}) <= cluster_count ({})",
                self.num_categories, self.cluster_count
            ));
        }
        if self.trigger_codes >= self.vocab_dx
            || self.vocab_dx < self.cluster_count + self.trigger_codes
        {
            return bad(format!(
                "vocab_dx {} too small for {} clusters with {} trigger codes",
                self.vocab_dx, self.cluster_count, self.trigger_codes
            ));
        }
        if self.max_gap_days <= READMISSION_WINDOW_DAYS {
            return bad(format!(
                "max_gap_days {} must exceed the {READMISSION_WINDOW_DAYS}-day window",
                self.max_gap_days
            ));
        }
        if self.procedures_per_visit[1] > 0 && self.vocab_px == 0 {
            return bad("procedures requested but vocab_px is 0".into());
        }
        for (name, r) in [
            ("trigger_rate", self.trigger_rate),
            ("readm_base_rate", self.readm_base_rate),
            ("transition_keep", self.transition_keep),
            ("transition_new", self.transition_new),
        ] {
            if !(r > 0.0 && r < 1.0) {
                return bad(format!("{name} {r} outside (0, 1)"));
            }
        }
        Ok(())
    }
}
