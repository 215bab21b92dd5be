use std::collections::BTreeSet;

use super::{CategoryMap, IntervalVector, LabeledSample, PatientJourney, Vocabulary, DX_PREFIX};
use crate::error::{Error, Result};

pub fn compute_intervals(journey: &PatientJourney) -> IntervalVector {
    let first = journey.visits.first().map_or(0, |v| v.admission_day);
    IntervalVector {
        days: journey
            .visits
            .iter()
            .map(|v| (v.admission_day - first).unsigned_abs() as u32)
            .collect(),
    }
}

fn prefix(journey: &PatientJourney, len: usize) -> PatientJourney {
    PatientJourney {
        patient_id: journey.patient_id.clone(),
        visits: journey.visits[..len].to_vec(),
    }
}

/// One sample per visit that has a successor; the label is 1 when the next
/// admission falls within `window_days` of this visit's discharge (inclusive).
pub fn make_readmission_samples(journeys: &[PatientJourney], window_days: i64) -> Vec<LabeledSample> {
    let mut out = Vec::new();
    for j in journeys {
        for t in 0..j.visits.len().saturating_sub(1) {
            let gap = j.visits[t + 1].admission_day - j.visits[t].discharge_day;
            out.push(LabeledSample {
                patient_id: j.patient_id.clone(),
                prefix: prefix(j, t + 1),
                readmission: Some(gap <= window_days),
                diagnoses: None,
            });
        }
    }
    out
}

/// One sample per visit that has a successor; the target is the set of
/// categories of the successor's diagnosis codes.
pub fn make_diagnosis_samples(
    journeys: &[PatientJourney],
    vocab: &Vocabulary,
    map: &CategoryMap,
) -> Result<Vec<LabeledSample>> {
    let mut out = Vec::new();
    for j in journeys {
        for t in 0..j.visits.len().saturating_sub(1) {
            let mut cats = BTreeSet::new();
            for &id in &j.visits[t + 1].codes {
                let code = vocab
                    .code(id)
                    .ok_or_else(|| Error::Data(format!("code id {id} not in vocabulary")))?;
                if !code.starts_with(DX_PREFIX) {
                    continue;
                }
                let cat = map.category_of(code).ok_or_else(|| {
                    Error::Data(format!(
                        "diagnosis code `{code}` (patient {}) has no category",
                        j.patient_id
                    ))
                })?;
                cats.insert(cat);
            }
            if cats.is_empty() {
                // A procedure-only target visit carries no diagnosis label.
                continue;
            }
            out.push(LabeledSample {
                patient_id: j.patient_id.clone(),
                prefix: prefix(j, t + 1),
                readmission: None,
                diagnoses: Some(cats.into_iter().collect()),
            });
        }
    }
    Ok(out)
}
