use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{SynthConfig, INTERVAL_THRESHOLD_DAYS, READMISSION_WINDOW_DAYS, TRIGGER_FORCE};
use super::truth::{PlantedTruth, TRUTH_VERSION};
use crate::error::{Error, Result};
use crate::train::derive_seed;

pub const JOURNEY_FILE: &str = "journeys.jsonl";
pub const CATEGORY_FILE: &str = "categories.tsv";
pub const TRUTH_FILE: &str = "truth.json";

const MAX_STAY_DAYS: i64 = 7;
const FIRST_ADMISSION_SPREAD: i64 = 180;

#[derive(Serialize)]
struct VisitLine<'a> {
    admission_date: String,
    discharge_date: String,
    codes: &'a [String],
}

#[derive(Serialize)]
struct JourneyLine<'a> {
    patient_id: &'a str,
    visits: Vec<VisitLine<'a>>,
}

/// The three generated files, in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub journeys: String,
    pub categories: String,
    pub truth: PlantedTruth,
}

impl SynthOutput {
    pub fn truth_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.truth).expect("truth serialises");
        s.push('\n');
        s
    }

    /// Writes the files into `dir`, creating it if needed. Existing files are
    /// only replaced when `force` is set.
    pub fn write(&self, dir: &Path, force: bool) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            (JOURNEY_FILE, self.journeys.clone()),
            (CATEGORY_FILE, self.categories.clone()),
            (TRUTH_FILE, self.truth_json()),
        ];
        let paths: Vec<PathBuf> = files.iter().map(|(n, _)| dir.join(n)).collect();
        if !force {
            if let Some(p) = paths.iter().find(|p| p.exists()) {
                return Err(Error::Config(format!(
                    "{} exists; pass the force flag to overwrite",
                    p.display()
                )));
            }
        }
        for (path, (_, body)) in paths.iter().zip(&files) {
            fs::write(path, body).map_err(|e| Error::io(path, e))?;
        }
        Ok(paths)
    }
}

struct Structure {
    dx_names: Vec<String>,
    px_names: Vec<String>,
    /// Non-trigger members per cluster, as structural code indices.
    members: Vec<Vec<usize>>,
    /// Trigger codes per cluster.
    triggers: Vec<Vec<usize>>,
    transition: Vec<usize>,
}

fn structure(cfg: &SynthConfig) -> Structure {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0));
    let mut dx_perm: Vec<usize> = (0..cfg.vocab_dx).collect();
    dx_perm.shuffle(&mut rng);
    let mut px_perm: Vec<usize> = (0..cfg.vocab_px).collect();
    px_perm.shuffle(&mut rng);
    let mut transition: Vec<usize> = (0..cfg.cluster_count).collect();
    transition.shuffle(&mut rng);

    let c = cfg.cluster_count;
    let mut members = vec![Vec::new(); c];
    let mut triggers = vec![Vec::new(); c];
    for i in 0..cfg.vocab_dx {
        if i < cfg.trigger_codes {
            triggers[i % c].push(i);
        } else {
            members[i % c].push(i);
        }
    }
    Structure {
        dx_names: dx_perm.iter().map(|p| format!("dx:D{p:04}")).collect(),
        px_names: px_perm.iter().map(|p| format!("px:P{p:04}")).collect(),
        members,
        triggers,
        transition,
    }
}

pub fn category_name(category: usize) -> String {
    format!("CAT{category:03}")
}

fn next_active(rng: &mut ChaCha8Rng, active: &BTreeSet<usize>, cfg: &SynthConfig, s: &Structure) -> BTreeSet<usize> {
    let mut next = BTreeSet::new();
    for &c in active {
        if rng.gen::<f64>() < cfg.transition_keep {
            next.insert(s.transition[c]);
        }
    }
    if rng.gen::<f64>() < cfg.transition_new {
        next.insert(rng.gen_range(0..cfg.cluster_count));
    }
    if next.is_empty() {
        next.insert(rng.gen_range(0..cfg.cluster_count));
    }
    next
}

fn visit_codes(
    rng: &mut ChaCha8Rng,
    active: &BTreeSet<usize>,
    cfg: &SynthConfig,
    s: &Structure,
) -> (Vec<String>, bool) {
    let clusters: Vec<usize> = active.iter().copied().collect();
    let k = rng
        .gen_range(cfg.codes_per_visit[0]..=cfg.codes_per_visit[1])
        .max(clusters.len());
    let mut dx = BTreeSet::new();
    for slot in 0..k {
        let c = if slot < clusters.len() {
            clusters[slot]
        } else {
            clusters[rng.gen_range(0..clusters.len())]
        };
        dx.insert(*s.members[c].choose(rng).expect("cluster has members"));
    }
    let available: Vec<usize> = clusters.iter().flat_map(|&c| s.triggers[c].iter().copied()).collect();
    let mut has_trigger = false;
    if !available.is_empty() && rng.gen::<f64>() < cfg.trigger_rate {
        dx.insert(*available.choose(rng).expect("non-empty"));
        has_trigger = true;
    }
    let mut codes: Vec<String> = dx.iter().map(|&i| s.dx_names[i].clone()).collect();
    let np = rng.gen_range(cfg.procedures_per_visit[0]..=cfg.procedures_per_visit[1]);
    let mut px = BTreeSet::new();
    for _ in 0..np {
        px.insert(rng.gen_range(0..cfg.vocab_px));
    }
    codes.extend(px.iter().map(|&i| s.px_names[i].clone()));
    codes.sort();
    (codes, has_trigger)
}

/// Generates a journey file, a category map and the planted truth. The output
/// is a pure function of `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let s = structure(cfg);
    let epoch = NaiveDate::from_ymd_opt(2010, 1, 1).expect("valid date");
    let date = |day: i64| -> String {
        epoch
            .checked_add_days(Days::new(day as u64))
            .expect("date in range")
            .format("%Y-%m-%d")
            .to_string()
    };

    let mut journeys = String::new();
    for p in 0..cfg.num_patients {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1 + p as u64));
        let n = rng.gen_range(cfg.visits_per_patient[0]..=cfg.visits_per_patient[1]);
        let first = rng.gen_range(1..=2.min(cfg.cluster_count));
        let mut active = BTreeSet::new();
        while active.len() < first {
            active.insert(rng.gen_range(0..cfg.cluster_count));
        }
        let mut day = rng.gen_range(0..=FIRST_ADMISSION_SPREAD);
        let first_day = day;
        let mut visits = Vec::with_capacity(n);
        for t in 0..n {
            let stay = rng.gen_range(0..=MAX_STAY_DAYS);
            let (codes, has_trigger) = visit_codes(&mut rng, &active, cfg, &s);
            visits.push((day, day + stay, codes));
            if t + 1 == n {
                break;
            }
            let interval = (day - first_day) as u32;
            let fires = has_trigger && (!cfg.interval_effect || interval >= INTERVAL_THRESHOLD_DAYS);
            let readmit = (fires && rng.gen::<f64>() < TRIGGER_FORCE) || rng.gen::<f64>() < cfg.readm_base_rate;
            let gap = if readmit {
                rng.gen_range(0..=READMISSION_WINDOW_DAYS)
            } else {
                rng.gen_range(READMISSION_WINDOW_DAYS + 1..=cfg.max_gap_days)
            };
            day += stay + gap;
            active = next_active(&mut rng, &active, cfg, &s);
        }
        let id = format!("P{p:06}");
        let line = JourneyLine {
            patient_id: &id,
            visits: visits
                .iter()
                .map(|(a, d, codes)| VisitLine {
                    admission_date: date(*a),
                    discharge_date: date(*d),
                    codes,
                })
                .collect(),
        };
        journeys.push_str(&serde_json::to_string(&line).map_err(|e| Error::Format(e.to_string()))?);
        journeys.push('\n');
    }

    let category_of_cluster: Vec<String> = (0..cfg.cluster_count)
        .map(|c| category_name(c % cfg.num_categories))
        .collect();
    let mut cat_lines: Vec<(String, String)> = Vec::with_capacity(cfg.vocab_dx);
    for i in 0..cfg.vocab_dx {
        cat_lines.push((s.dx_names[i].clone(), category_of_cluster[i % cfg.cluster_count].clone()));
    }
    cat_lines.sort();
    let categories: String = cat_lines.iter().map(|(c, k)| format!("{c}\t{k}\n")).collect();

    let clusters: Vec<Vec<String>> = (0..cfg.cluster_count)
        .map(|c| {
            let mut v: Vec<String> = s.members[c]
                .iter()
                .chain(&s.triggers[c])
                .map(|&i| s.dx_names[i].clone())
                .collect();
            v.sort();
            v
        })
        .collect();
    let mut trigger_codes: Vec<String> = (0..cfg.trigger_codes).map(|i| s.dx_names[i].clone()).collect();
    trigger_codes.sort();
    let mut truth = PlantedTruth {
        version: TRUTH_VERSION,
        trigger_codes,
        clusters,
        cluster_categories: category_of_cluster,
        transition: s.transition.clone(),
        pairs: Vec::new(),
        config: cfg.clone(),
    };
    truth.pairs = truth.within_cluster_pairs();
    Ok(SynthOutput {
        journeys,
        categories,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{
        compute_intervals, make_diagnosis_samples, make_readmission_samples, parse_category_map, parse_journeys,
        preprocess, PreprocessConfig, DX_PREFIX,
    };

    fn small() -> SynthConfig {
        SynthConfig {
            num_patients: 1500,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn output_is_a_function_of_the_config() {
        let a = generate(&small()).unwrap();
        assert_eq!(a, generate(&small()).unwrap());
        let b = generate(&SynthConfig { seed: 2, ..small() }).unwrap();
        assert_ne!(a.journeys, b.journeys);
    }

    #[test]
    fn truth_round_trips() {
        let out = generate(&small()).unwrap();
        assert_eq!(PlantedTruth::from_json(&out.truth_json()).unwrap(), out.truth);
    }

    #[test]
    fn every_diagnosis_code_is_mapped_once() {
        let cfg = small();
        let out = generate(&cfg).unwrap();
        let map = parse_category_map(&out.categories).unwrap();
        assert_eq!(map.entries().count(), cfg.vocab_dx);
        assert_eq!(map.num_categories(), cfg.num_categories);
        let journeys = parse_journeys(&out.journeys).unwrap();
        for j in &journeys {
            for v in &j.visits {
                for c in v.codes.iter().filter(|c| c.starts_with(DX_PREFIX)) {
                    assert!(map.category_of(c).is_some(), "{c}");
                }
            }
        }
    }

    #[test]
    fn pair_count_matches_cluster_sizes() {
        let out = generate(&small()).unwrap();
        let expected: usize = out.truth.clusters.iter().map(|m| m.len() * (m.len() - 1) / 2).sum();
        assert_eq!(out.truth.pairs.len(), expected);
        let members: usize = out.truth.clusters.iter().map(Vec::len).sum();
        assert_eq!(members, small().vocab_dx);
    }

    #[test]
    fn survives_preprocessing_intact() {
        let out = generate(&small()).unwrap();
        let raw = parse_journeys(&out.journeys).unwrap();
        let (journeys, vocab) = preprocess(&raw, PreprocessConfig::default()).unwrap();
        assert_eq!(journeys.len(), raw.len());
        assert_eq!(vocab.len(), small().vocab_dx + small().vocab_px);
    }

    #[test]
    fn readmission_rates_follow_the_rule() {
        let cfg = small();
        let out = generate(&cfg).unwrap();
        let raw = parse_journeys(&out.journeys).unwrap();
        let (journeys, vocab) = preprocess(&raw, PreprocessConfig::default()).unwrap();
        let samples = make_readmission_samples(&journeys, READMISSION_WINDOW_DAYS);
        let (mut hit, mut n_hit, mut miss, mut n_miss) = (0, 0, 0, 0);
        for s in &samples {
            let last = s.prefix.visits.last().unwrap();
            let codes: Vec<&str> = last.codes.iter().map(|&id| vocab.code(id).unwrap()).collect();
            let days = *compute_intervals(&s.prefix).days.last().unwrap();
            let p = out.truth.readmission_probability(&codes, days);
            let y = s.readmission.unwrap() as usize;
            if p > 0.5 {
                hit += y;
                n_hit += 1;
            } else {
                miss += y;
                n_miss += 1;
            }
        }
        let rate = hit as f64 / n_hit as f64;
        let expected = TRIGGER_FORCE + (1.0 - TRIGGER_FORCE) * cfg.readm_base_rate;
        assert!((rate - expected).abs() < 0.03, "trigger rate {rate}");
        let base = miss as f64 / n_miss as f64;
        assert!((base - cfg.readm_base_rate).abs() < 0.02, "base rate {base}");
    }

    #[test]
    fn interval_effect_suppresses_early_triggers() {
        let cfg = SynthConfig {
            interval_effect: true,
            ..small()
        };
        let truth = generate(&cfg).unwrap().truth;
        let trigger = [truth.trigger_codes[0].as_str()];
        assert_eq!(truth.readmission_probability(&trigger, 10), cfg.readm_base_rate);
        assert!(truth.readmission_probability(&trigger, 60) > 0.9);
    }

    #[test]
    fn category_probabilities_are_calibrated() {
        let cfg = small();
        let out = generate(&cfg).unwrap();
        let map = parse_category_map(&out.categories).unwrap();
        let raw = parse_journeys(&out.journeys).unwrap();
        let (journeys, vocab) = preprocess(&raw, PreprocessConfig::default()).unwrap();
        let samples = make_diagnosis_samples(&journeys, &vocab, &map).unwrap();
        let (mut predicted, mut observed) = (0.0, 0.0);
        let mut buckets = [(0.0, 0.0, 0usize); 5];
        for s in &samples {
            let last = s.prefix.visits.last().unwrap();
            let codes: Vec<&str> = last.codes.iter().map(|&id| vocab.code(id).unwrap()).collect();
            let probs = out.truth.next_category_probabilities(&codes, &map).unwrap();
            let truth = s.diagnoses.as_ref().unwrap();
            for (j, &p) in probs.iter().enumerate() {
                let y = truth.binary_search(&(j as u32)).is_ok() as u8 as f64;
                predicted += p;
                observed += y;
                let b = ((p * 5.0) as usize).min(4);
                buckets[b].0 += p;
                buckets[b].1 += y;
                buckets[b].2 += 1;
            }
        }
        assert!((predicted - observed).abs() / observed < 0.03);
        for (p, y, n) in buckets.iter().filter(|b| b.2 > 500) {
            let (p, y) = (p / *n as f64, y / *n as f64);
            assert!((p - y).abs() < 0.03, "bucket mean {p} observed {y}");
        }
    }

    #[test]
    fn refuses_to_overwrite_without_force() {
        let dir = tempfile::tempdir().unwrap();
        let out = generate(&SynthConfig {
            num_patients: 20,
            ..SynthConfig::default()
        })
        .unwrap();
        out.write(dir.path(), false).unwrap();
        assert!(out.write(dir.path(), false).is_err());
        out.write(dir.path(), true).unwrap();
        assert_eq!(
            fs::read_to_string(dir.path().join(TRUTH_FILE)).unwrap(),
            out.truth_json()
        );
    }
}
