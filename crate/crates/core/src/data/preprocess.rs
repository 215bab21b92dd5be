use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{DatasetMode, PatientJourney, RawJourney, RawVisit, Visit, Vocabulary};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub min_visits: usize,
    pub min_code_freq: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            min_visits: 2,
            min_code_freq: 5,
        }
    }
}

/// Drops codes outside the dataset mode, then visits left without codes.
pub fn apply_mode(journeys: &[RawJourney], mode: DatasetMode) -> Vec<RawJourney> {
    journeys
        .iter()
        .map(|j| RawJourney {
            patient_id: j.patient_id.clone(),
            visits: j
                .visits
                .iter()
                .filter_map(|v| {
                    let codes: Vec<String> =
                        v.codes.iter().filter(|c| mode.admits(c)).cloned().collect();
                    (!codes.is_empty()).then(|| RawVisit { codes, ..v.clone() })
                })
                .collect(),
        })
        .collect()
}

/// Frequency filter, then visit-count filter, each applied once.
///
/// Code frequency counts the visits a code appears in across the whole input.
/// Visits emptied by the frequency filter are dropped before patients are
/// counted against `min_visits`.
pub fn preprocess(
    journeys: &[RawJourney],
    config: PreprocessConfig,
) -> Result<(Vec<PatientJourney>, Vocabulary)> {
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for j in journeys {
        for v in &j.visits {
            for c in &v.codes {
                *freq.entry(c.as_str()).or_default() += 1;
            }
        }
    }
    let keep = |c: &str| freq.get(c).copied().unwrap_or(0) >= config.min_code_freq;

    let mut surviving: Vec<RawJourney> = Vec::new();
    for j in journeys {
        let visits: Vec<RawVisit> = j
            .visits
            .iter()
            .filter_map(|v| {
                let codes: Vec<String> = v.codes.iter().filter(|c| keep(c)).cloned().collect();
                (!codes.is_empty()).then(|| RawVisit { codes, ..v.clone() })
            })
            .collect();
        if visits.len() >= config.min_visits && !visits.is_empty() {
            surviving.push(RawJourney {
                patient_id: j.patient_id.clone(),
                visits,
            });
        }
    }
    if surviving.is_empty() {
        return Err(Error::Data(format!(
            "no patients survive preprocessing (min_visits = {}, min_code_freq = {})",
            config.min_visits, config.min_code_freq
        )));
    }

    let vocab = Vocabulary::new(
        surviving
            .iter()
            .flat_map(|j| j.visits.iter().flat_map(|v| v.codes.iter().cloned())),
    )?;
    let journeys = surviving
        .into_iter()
        .map(|j| PatientJourney {
            patient_id: j.patient_id,
            visits: j
                .visits
                .into_iter()
                .map(|v| {
                    let mut codes: Vec<u32> = v
                        .codes
                        .iter()
                        .map(|c| vocab.id(c).expect("surviving code is in vocabulary"))
                        .collect();
                    codes.sort_unstable();
                    codes.dedup();
                    Visit {
                        codes,
                        admission_day: v.admission_day,
                        discharge_day: v.discharge_day,
                    }
                })
                .collect(),
        })
        .collect();
    Ok((journeys, vocab))
}

/// Maps processed journeys back to code strings.
#[cfg(test)]
pub(crate) fn to_raw(journeys: &[PatientJourney], vocab: &Vocabulary) -> Vec<RawJourney> {
    journeys
        .iter()
        .map(|j| RawJourney {
            patient_id: j.patient_id.clone(),
            visits: j
                .visits
                .iter()
                .map(|v| RawVisit {
                    codes: v
                        .codes
                        .iter()
                        .map(|&id| vocab.code(id).expect("id in vocabulary").to_string())
                        .collect(),
                    admission_day: v.admission_day,
                    discharge_day: v.discharge_day,
                })
                .collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn visit(day: i64, codes: &[&str]) -> RawVisit {
        RawVisit {
            codes: codes.iter().map(|c| c.to_string()).collect(),
            admission_day: day,
            discharge_day: day + 1,
        }
    }

    fn journey(id: &str, visits: Vec<RawVisit>) -> RawJourney {
        RawJourney {
            patient_id: id.into(),
            visits,
        }
    }

    #[test]
    fn rare_code_removed() {
        // dx:rare appears 4 times, dx:common 10 times.
        let mut js = Vec::new();
        for p in 0..5 {
            let rare: &[&str] = if p < 4 { &["dx:common", "dx:rare"] } else { &["dx:common"] };
            js.push(journey(&format!("p{p}"), vec![visit(0, rare), visit(10, &["dx:common"])]));
        }
        let (out, vocab) = preprocess(&js, PreprocessConfig::default()).unwrap();
        assert_eq!(vocab.codes(), &["dx:common".to_string()]);
        assert_eq!(out.len(), 5);
        // Exactly two surviving visits is enough.
        assert!(out.iter().all(|j| j.visits.len() == 2));
    }

    #[test]
    fn emptied_visits_and_short_journeys_dropped() {
        let mut js: Vec<RawJourney> = (0..5)
            .map(|p| journey(&format!("p{p}"), vec![visit(0, &["dx:a"]), visit(5, &["dx:a"])]))
            .collect();
        js.push(journey("short", vec![visit(0, &["dx:a"]), visit(3, &["dx:once"])]));
        let (out, _) = preprocess(&js, PreprocessConfig::default()).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|j| j.patient_id != "short"));
    }

    #[test]
    fn identity_thresholds() {
        let js = vec![
            journey("a", vec![visit(0, &["dx:1", "px:9"])]),
            journey("b", vec![visit(2, &["dx:2"]), visit(4, &["dx:1"])]),
        ];
        let cfg = PreprocessConfig {
            min_visits: 1,
            min_code_freq: 1,
        };
        let (out, vocab) = preprocess(&js, cfg).unwrap();
        assert_eq!(vocab.len(), 3);
        assert_eq!(to_raw(&out, &vocab), js);
    }

    #[test]
    fn empty_result_is_error() {
        let js = vec![journey("a", vec![visit(0, &["dx:1"])])];
        assert!(preprocess(&js, PreprocessConfig::default()).is_err());
    }

    #[test]
    fn single_pass_is_not_a_fixpoint() {
        // Dropping patient `c` for having one visit lowers dx:x below the
        // threshold, which only a second pass notices.
        let cfg = PreprocessConfig {
            min_visits: 2,
            min_code_freq: 3,
        };
        let js = vec![
            journey("a", vec![visit(0, &["dx:x", "dx:y"]), visit(1, &["dx:y"])]),
            journey("b", vec![visit(0, &["dx:x", "dx:y"]), visit(1, &["dx:y"])]),
            journey("c", vec![visit(0, &["dx:x"])]),
        ];
        let (once, v1) = preprocess(&js, cfg).unwrap();
        assert!(v1.id("dx:x").is_some());
        let (twice, v2) = preprocess(&to_raw(&once, &v1), cfg).unwrap();
        assert!(v2.id("dx:x").is_none());
        assert_eq!(twice.len(), 2);
    }

    #[test]
    fn mode_drops_procedures() {
        let js = vec![journey("a", vec![visit(0, &["px:1"]), visit(1, &["dx:1", "px:2"])])];
        let out = apply_mode(&js, DatasetMode::Dx);
        assert_eq!(out[0].visits.len(), 1);
        assert_eq!(out[0].visits[0].codes, vec!["dx:1".to_string()]);
    }

    fn arb_journeys() -> impl Strategy<Value = Vec<RawJourney>> {
        let code = (0u8..8).prop_map(|c| format!("dx:{c}"));
        let visit = prop::collection::vec(code, 1..4).prop_map(|mut cs| {
            cs.sort();
            cs.dedup();
            cs
        });
        let journey = prop::collection::vec(visit, 1..5);
        prop::collection::vec(journey, 1..12).prop_map(|js| {
            js.into_iter()
                .enumerate()
                .map(|(p, vs)| RawJourney {
                    patient_id: format!("p{p}"),
                    visits: vs
                        .into_iter()
                        .enumerate()
                        .map(|(i, codes)| RawVisit {
                            codes,
                            admission_day: 10 * i as i64,
                            discharge_day: 10 * i as i64 + 2,
                        })
                        .collect(),
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn idempotent_when_no_patient_dropped(js in arb_journeys()) {
            let cfg = PreprocessConfig { min_visits: 2, min_code_freq: 3 };
            if let Ok((once, vocab)) = preprocess(&js, cfg) {
                // Every id is a real vocabulary id.
                for j in &once {
                    for v in &j.visits {
                        prop_assert!(v.codes.iter().all(|&c| c >= 1 && (c as usize) <= vocab.len()));
                    }
                }
                let dropped_patient = once.len() < js.len();
                let second = preprocess(&to_raw(&once, &vocab), cfg);
                prop_assert!(second.is_ok() || dropped_patient);
                let Ok((twice, vocab2)) = second else { return Ok(()) };
                if !dropped_patient {
                    prop_assert_eq!(&twice, &once);
                    prop_assert_eq!(vocab2, vocab);
                } else {
                    prop_assert!(twice.len() <= once.len());
                }
            }
        }
    }
}
