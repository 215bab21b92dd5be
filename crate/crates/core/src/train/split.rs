use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::validate_ratios;
use crate::data::LabeledSample;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<LabeledSample>,
    pub valid: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

/// Patient counts per split: rounded shares, with at least one patient in
/// each of validation and test.
pub fn split_counts(patients: usize, ratios: &[f64; 3]) -> Result<[usize; 3]> {
    validate_ratios(ratios)?;
    if patients < 3 {
        return Err(Error::Data(format!("splitting needs at least 3 patients, got {patients}")));
    }
    let valid = ((patients as f64 * ratios[1]).round() as usize).max(1);
    let test = ((patients as f64 * ratios[2]).round() as usize).max(1);
    let train = patients.saturating_sub(valid + test).max(1);
    let valid = patients - train - test;
    Ok([train, valid, test])
}

/// Seeded patient-level split: all samples of one patient land together.
pub fn split(samples: &[LabeledSample], ratios: &[f64; 3], seed: u64) -> Result<Split> {
    let ids: BTreeSet<&str> = samples.iter().map(|s| s.patient_id.as_str()).collect();
    let mut ids: Vec<&str> = ids.into_iter().collect();
    let [n_train, n_valid, _] = split_counts(ids.len(), ratios)?;
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let part: HashMap<&str, usize> = ids
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let p = if i < n_train {
                0
            } else if i < n_train + n_valid {
                1
            } else {
                2
            };
            (id, p)
        })
        .collect();
    let mut out = Split {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    for s in samples {
        match part[s.patient_id.as_str()] {
            0 => out.train.push(s.clone()),
            1 => out.valid.push(s.clone()),
            _ => out.test.push(s.clone()),
        }
    }
    Ok(out)
}
