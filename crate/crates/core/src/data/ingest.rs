use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::Deserialize;

use super::{has_namespace, CategoryMap, RawJourney, RawVisit};
use crate::error::{Error, Result};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JourneyRecord {
    patient_id: String,
    visits: Vec<VisitRecord>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VisitRecord {
    admission_date: String,
    discharge_date: String,
    codes: Vec<String>,
}

struct DatedVisit {
    codes: Vec<String>,
    admission: NaiveDate,
    discharge: NaiveDate,
}

fn parse_date(s: &str, line: usize) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| Error::Parse {
        line,
        message: format!("unparseable date `{s}`: {e}"),
    })
}

/// Reads a journey file: one JSON patient record per line.
pub fn ingest_journeys(path: impl AsRef<Path>) -> Result<Vec<RawJourney>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_journeys(&text)
}

/// Parses journey lines. Day indices are relative to the earliest admission
/// anywhere in the input; visits are sorted by admission day.
pub fn parse_journeys(text: &str) -> Result<Vec<RawJourney>> {
    let mut parsed = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record: JourneyRecord = serde_json::from_str(raw).map_err(|e| Error::Parse {
            line,
            message: format!("malformed journey record: {e}"),
        })?;
        if record.patient_id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty patient_id".into(),
            });
        }
        let mut visits = Vec::with_capacity(record.visits.len());
        for v in record.visits {
            if v.codes.is_empty() {
                return Err(Error::Parse {
                    line,
                    message: "visit with zero codes".into(),
                });
            }
            if let Some(bad) = v.codes.iter().find(|c| !has_namespace(c)) {
                return Err(Error::Parse {
                    line,
                    message: format!("code `{bad}` lacks a dx:/px: namespace prefix"),
                });
            }
            let admission = parse_date(&v.admission_date, line)?;
            let discharge = parse_date(&v.discharge_date, line)?;
            if discharge < admission {
                return Err(Error::Parse {
                    line,
                    message: format!(
                        "discharge {} precedes admission {}",
                        v.discharge_date, v.admission_date
                    ),
                });
            }
            let mut codes = v.codes;
            codes.sort();
            codes.dedup();
            visits.push(DatedVisit {
                codes,
                admission,
                discharge,
            });
        }
        visits.sort_by_key(|v| v.admission);
        parsed.push((record.patient_id, visits));
    }

    let Some(epoch) = parsed
        .iter()
        .flat_map(|(_, vs)| vs.iter().map(|v| v.admission))
        .min()
    else {
        return Ok(parsed
            .into_iter()
            .map(|(patient_id, _)| RawJourney {
                patient_id,
                visits: Vec::new(),
            })
            .collect());
    };

    Ok(parsed
        .into_iter()
        .map(|(patient_id, visits)| RawJourney {
            patient_id,
            visits: visits
                .into_iter()
                .map(|v| RawVisit {
                    codes: v.codes,
                    admission_day: (v.admission - epoch).num_days(),
                    discharge_day: (v.discharge - epoch).num_days(),
                })
                .collect(),
        })
        .collect())
}

/// Reads `code<TAB>category` lines.
pub fn read_category_map(path: impl AsRef<Path>) -> Result<CategoryMap> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_category_map(&text)
}

pub fn parse_category_map(text: &str) -> Result<CategoryMap> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let Some((code, cat)) = raw.split_once('\t') else {
            return Err(Error::Parse {
                line: i + 1,
                message: "expected `code<TAB>category`".into(),
            });
        };
        if code.is_empty() || cat.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                message: "empty code or category".into(),
            });
        }
        pairs.push((code.to_string(), cat.to_string()));
    }
    CategoryMap::new(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, visits: &[(&str, &str, &[&str])]) -> String {
        let vs: Vec<String> = visits
            .iter()
            .map(|(a, d, c)| {
                format!(
                    r#"{{"admission_date":"{a}","discharge_date":"{d}","codes":{}}}"#,
                    serde_json::to_string(c).unwrap()
                )
            })
            .collect();
        format!(r#"{{"patient_id":"{id}","visits":[{}]}}"#, vs.join(","))
    }

    #[test]
    fn day_indices_relative_to_earliest_admission() {
        let text = line(
            "p1",
            &[
                ("2010-01-04", "2010-01-05", &["dx:2"]),
                ("2010-01-01", "2010-01-02", &["dx:1"]),
            ],
        );
        let js = parse_journeys(&text).unwrap();
        let days: Vec<i64> = js[0].visits.iter().map(|v| v.admission_day).collect();
        assert_eq!(days, vec![0, 3]);
        assert_eq!(js[0].visits[0].codes, vec!["dx:1".to_string()]);
    }

    #[test]
    fn empty_input() {
        assert!(parse_journeys("").unwrap().is_empty());
    }

    #[test]
    fn empty_code_list_names_the_line() {
        let text = format!(
            "{}\n{}",
            line("p1", &[("2010-01-01", "2010-01-01", &["dx:1"])]),
            line("p2", &[("2010-01-01", "2010-01-01", &[])])
        );
        match parse_journeys(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_date_and_bad_json() {
        let text = line("p1", &[("2010-13-01", "2010-01-01", &["dx:1"])]);
        assert!(matches!(parse_journeys(&text), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            parse_journeys("{not json"),
            Err(Error::Parse { line: 1, .. })
        ));
        let text = line("p1", &[("2010-01-05", "2010-01-01", &["dx:1"])]);
        assert!(parse_journeys(&text).is_err());
        let text = line("p1", &[("2010-01-01", "2010-01-01", &["4019"])]);
        assert!(parse_journeys(&text).is_err());
    }

    #[test]
    fn category_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cats.tsv");
        fs::write(&p, "dx:1\tA\ndx:2\tB\n\ndx:3\tA\n").unwrap();
        let m = read_category_map(&p).unwrap();
        assert_eq!(m.num_categories(), 2);
        assert_eq!(m.category_of("dx:3"), Some(0));
        fs::write(&p, "dx:1 A\n").unwrap();
        assert!(matches!(read_category_map(&p), Err(Error::Parse { line: 1, .. })));
    }
}
