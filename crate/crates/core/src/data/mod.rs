//! EHR domain model: journeys of timestamped code sets, vocabularies,
//! prediction samples and padded batches.

mod batch;
mod ingest;
mod preprocess;
mod samples;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use batch::{batch, batch_sequential, PaddedBatch};
pub use ingest::{ingest_journeys, parse_category_map, parse_journeys, read_category_map};
pub use preprocess::{apply_mode, preprocess, PreprocessConfig};
pub use samples::{compute_intervals, make_diagnosis_samples, make_readmission_samples};

pub const DX_PREFIX: &str = "dx:";
pub const PX_PREFIX: &str = "px:";

/// Reserved code id for padded positions.
pub const PAD_ID: u32 = 0;

/// Which code namespaces feed the model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetMode {
    /// Diagnosis codes only.
    #[default]
    Dx,
    /// Diagnosis and procedure codes.
    DxTx,
}

impl DatasetMode {
    pub fn admits(self, code: &str) -> bool {
        match self {
            Self::Dx => code.starts_with(DX_PREFIX),
            Self::DxTx => true,
        }
    }
}

impl FromStr for DatasetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dx" => Ok(Self::Dx),
            "dxtx" | "dx&tx" => Ok(Self::DxTx),
            other => Err(Error::Config(format!("unknown dataset mode `{other}`"))),
        }
    }
}

impl fmt::Display for DatasetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Dx => "dx",
            Self::DxTx => "dxtx",
        })
    }
}

pub(crate) fn has_namespace(code: &str) -> bool {
    (code.starts_with(DX_PREFIX) || code.starts_with(PX_PREFIX)) && code.len() > DX_PREFIX.len()
}

/// Visit as read from a journey file, before vocabulary mapping.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawVisit {
    pub codes: Vec<String>,
    pub admission_day: i64,
    pub discharge_day: i64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawJourney {
    pub patient_id: String,
    pub visits: Vec<RawVisit>,
}

/// Code strings mapped to dense ids `1..=len()`; id 0 is padding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    codes: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary over the given codes, sorted lexicographically.
    pub fn new<I, S>(codes: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = codes.into_iter().map(Into::into).collect();
        for c in &set {
            if !has_namespace(c) {
                return Err(Error::Data(format!(
                    "code `{c}` lacks a dx:/px: namespace prefix"
                )));
            }
        }
        Ok(Self::from_sorted(set.into_iter().collect()))
    }

    fn from_sorted(codes: Vec<String>) -> Self {
        let index = codes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i as u32 + 1))
            .collect();
        Self { codes, index }
    }

    /// Number of real codes.
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Rows needed in an embedding table: real codes plus the padding row.
    pub fn id_space(&self) -> usize {
        self.codes.len() + 1
    }

    pub fn id(&self, code: &str) -> Option<u32> {
        self.index.get(code).copied()
    }

    pub fn code(&self, id: u32) -> Option<&str> {
        if id == PAD_ID {
            return None;
        }
        self.codes.get(id as usize - 1).map(String::as_str)
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    /// Hex SHA-256 over the ordered code list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.codes {
            h.update(c.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Restores a vocabulary from a stored code list, which must already be
    /// sorted and unique.
    pub fn from_codes(codes: Vec<String>) -> Result<Self> {
        if codes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("stored vocabulary is not sorted and unique".into()));
        }
        Ok(Self::from_sorted(codes))
    }
}

/// One hospital stay after vocabulary mapping.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Visit {
    /// Sorted, unique code ids.
    pub codes: Vec<u32>,
    pub admission_day: i64,
    pub discharge_day: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientJourney {
    pub patient_id: String,
    pub visits: Vec<Visit>,
}

/// Days elapsed between each admission and the journey's first admission.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntervalVector {
    pub days: Vec<u32>,
}

/// A journey prefix with the outcome attached to its final visit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledSample {
    pub patient_id: String,
    pub prefix: PatientJourney,
    pub readmission: Option<bool>,
    /// Sorted category ids present in the following visit.
    pub diagnoses: Option<Vec<u32>>,
}

/// Grouping of diagnosis codes into categories.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CategoryMap {
    entries: BTreeMap<String, u32>,
    categories: Vec<String>,
}

impl CategoryMap {
    pub fn new<I, A, B>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let pairs: Vec<(String, String)> = pairs
            .into_iter()
            .map(|(a, b)| (a.into(), b.into()))
            .collect();
        let categories: Vec<String> = pairs
            .iter()
            .map(|(_, c)| c.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let cat_index: HashMap<&str, u32> = categories
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i as u32))
            .collect();
        let mut entries = BTreeMap::new();
        for (code, cat) in &pairs {
            let id = cat_index[cat.as_str()];
            if let Some(prev) = entries.insert(code.clone(), id) {
                if prev != id {
                    return Err(Error::Data(format!(
                        "code `{code}` mapped to two categories"
                    )));
                }
            }
        }
        Ok(Self {
            entries,
            categories,
        })
    }

    pub fn category_of(&self, code: &str) -> Option<u32> {
        self.entries.get(code).copied()
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, u32)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }
}
