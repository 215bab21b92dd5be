use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{compute_intervals, LabeledSample, PAD_ID};
use crate::error::{Error, Result};

/// Samples padded to a common `visits × codes` layout.
///
/// Flat arrays are row-major: `codes[(b * max_visits + v) * max_codes + c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedBatch {
    pub size: usize,
    pub max_visits: usize,
    pub max_codes: usize,
    pub codes: Vec<u32>,
    pub code_valid: Vec<bool>,
    pub visit_valid: Vec<bool>,
    /// Days since the sample's first admission, per visit slot.
    pub intervals: Vec<u32>,
    pub readmission: Vec<Option<bool>>,
    pub diagnoses: Vec<Option<Vec<u32>>>,
    pub patient_ids: Vec<String>,
    /// Position of each row in the sample list the batch was cut from.
    pub sample_index: Vec<usize>,
}

impl PaddedBatch {
    pub fn from_samples(samples: &[LabeledSample], indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let chosen: Vec<&LabeledSample> = indices.iter().map(|&i| &samples[i]).collect();
        let max_visits = chosen.iter().map(|s| s.prefix.visits.len()).max().unwrap_or(0);
        let max_codes = chosen
            .iter()
            .flat_map(|s| s.prefix.visits.iter().map(|v| v.codes.len()))
            .max()
            .unwrap_or(0);
        if max_visits == 0 || max_codes == 0 {
            return Err(Error::Data("batch contains a sample without visits".into()));
        }
        let size = chosen.len();
        let mut codes = vec![PAD_ID; size * max_visits * max_codes];
        let mut code_valid = vec![false; codes.len()];
        let mut visit_valid = vec![false; size * max_visits];
        let mut intervals = vec![0u32; size * max_visits];
        for (b, s) in chosen.iter().enumerate() {
            let iv = compute_intervals(&s.prefix);
            for (v, visit) in s.prefix.visits.iter().enumerate() {
                let slot = b * max_visits + v;
                visit_valid[slot] = true;
                intervals[slot] = iv.days[v];
                for (c, &id) in visit.codes.iter().enumerate() {
                    codes[slot * max_codes + c] = id;
                    code_valid[slot * max_codes + c] = true;
                }
            }
        }
        Ok(Self {
            size,
            max_visits,
            max_codes,
            codes,
            code_valid,
            visit_valid,
            intervals,
            readmission: chosen.iter().map(|s| s.readmission).collect(),
            diagnoses: chosen.iter().map(|s| s.diagnoses.clone()).collect(),
            patient_ids: chosen.iter().map(|s| s.patient_id.clone()).collect(),
            sample_index: indices.to_vec(),
        })
    }

    pub fn visit_slot(&self, b: usize, v: usize) -> usize {
        b * self.max_visits + v
    }

    pub fn visit_codes(&self, b: usize, v: usize) -> (&[u32], &[bool]) {
        let start = self.visit_slot(b, v) * self.max_codes;
        (
            &self.codes[start..start + self.max_codes],
            &self.code_valid[start..start + self.max_codes],
        )
    }

    pub fn visits_valid(&self, b: usize) -> &[bool] {
        &self.visit_valid[b * self.max_visits..(b + 1) * self.max_visits]
    }

    pub fn sample_intervals(&self, b: usize) -> &[u32] {
        &self.intervals[b * self.max_visits..(b + 1) * self.max_visits]
    }

    /// Widens the layout with extra padded visit and code slots.
    pub fn padded_to(&self, max_visits: usize, max_codes: usize) -> Result<Self> {
        if max_visits < self.max_visits || max_codes < self.max_codes {
            return Err(Error::Shape("padding can only grow a batch".into()));
        }
        let mut codes = vec![PAD_ID; self.size * max_visits * max_codes];
        let mut code_valid = vec![false; codes.len()];
        let mut visit_valid = vec![false; self.size * max_visits];
        let mut intervals = vec![0u32; self.size * max_visits];
        for b in 0..self.size {
            for v in 0..self.max_visits {
                let old = self.visit_slot(b, v);
                let new = b * max_visits + v;
                visit_valid[new] = self.visit_valid[old];
                intervals[new] = self.intervals[old];
                let (ids, ok) = self.visit_codes(b, v);
                codes[new * max_codes..new * max_codes + self.max_codes].copy_from_slice(ids);
                code_valid[new * max_codes..new * max_codes + self.max_codes].copy_from_slice(ok);
            }
        }
        Ok(Self {
            max_visits,
            max_codes,
            codes,
            code_valid,
            visit_valid,
            intervals,
            ..self.clone()
        })
    }
}

fn cut(samples: &[LabeledSample], order: &[usize], batch_size: usize) -> Result<Vec<PaddedBatch>> {
    if batch_size < 1 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if samples.is_empty() {
        return Err(Error::Data("no samples to batch".into()));
    }
    order
        .chunks(batch_size)
        .map(|chunk| PaddedBatch::from_samples(samples, chunk))
        .collect()
}

/// Seeded shuffle, then consecutive batches of `batch_size`.
pub fn batch(samples: &[LabeledSample], batch_size: usize, shuffle_seed: u64) -> Result<Vec<PaddedBatch>> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
    cut(samples, &order, batch_size)
}

/// Batches in input order.
pub fn batch_sequential(samples: &[LabeledSample], batch_size: usize) -> Result<Vec<PaddedBatch>> {
    let order: Vec<usize> = (0..samples.len()).collect();
    cut(samples, &order, batch_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{PatientJourney, Visit};

    fn sample(id: usize, visits: usize) -> LabeledSample {
        LabeledSample {
            patient_id: format!("p{id}"),
            prefix: PatientJourney {
                patient_id: format!("p{id}"),
                visits: (0..visits)
                    .map(|v| Visit {
                        codes: (1..=(v as u32 % 3 + 1)).collect(),
                        admission_day: 40 * v as i64 + 5,
                        discharge_day: 40 * v as i64 + 6,
                    })
                    .collect(),
            },
            readmission: Some(id % 2 == 0),
            diagnoses: None,
        }
    }

    #[test]
    fn batch_sizes() {
        let s: Vec<_> = (0..5).map(|i| sample(i, 2)).collect();
        let b = batch(&s, 2, 1).unwrap();
        assert_eq!(b.iter().map(|x| x.size).collect::<Vec<_>>(), vec![2, 2, 1]);
        assert!(batch(&s, 0, 1).is_err());
        assert!(batch(&[], 2, 1).is_err());
    }

    #[test]
    fn seeded_composition() {
        let s: Vec<_> = (0..20).map(|i| sample(i, 1 + i % 4)).collect();
        let a = batch(&s, 6, 42).unwrap();
        let b = batch(&s, 6, 42).unwrap();
        assert_eq!(a, b);
        let c = batch(&s, 6, 43).unwrap();
        assert_ne!(
            a.iter().map(|x| x.sample_index.clone()).collect::<Vec<_>>(),
            c.iter().map(|x| x.sample_index.clone()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn padding_layout() {
        let s = vec![sample(0, 3), sample(1, 5)];
        let b = batch_sequential(&s, 2).unwrap();
        let b = &b[0];
        assert_eq!(b.max_visits, 5);
        assert_eq!(b.max_codes, 3);
        assert_eq!(b.visits_valid(0).iter().filter(|&&v| v).count(), 3);
        assert_eq!(b.visits_valid(1).iter().filter(|&&v| v).count(), 5);
        assert_eq!(b.sample_intervals(1), &[0, 40, 80, 120, 160]);
        let (ids, ok) = b.visit_codes(0, 0);
        assert_eq!(ids, &[1, PAD_ID, PAD_ID]);
        assert_eq!(ok, &[true, false, false]);
        let (ids, _) = b.visit_codes(0, 4);
        assert!(ids.iter().all(|&i| i == PAD_ID));
    }

    #[test]
    fn widening_keeps_real_slots() {
        let s = vec![sample(0, 2), sample(1, 3)];
        let b = batch_sequential(&s, 2).unwrap().remove(0);
        let w = b.padded_to(6, 5).unwrap();
        for bi in 0..2 {
            for v in 0..b.max_visits {
                let (ids, ok) = b.visit_codes(bi, v);
                let (wids, wok) = w.visit_codes(bi, v);
                assert_eq!(&wids[..b.max_codes], ids);
                assert_eq!(&wok[..b.max_codes], ok);
            }
        }
        assert!(b.padded_to(1, 5).is_err());
    }
}
