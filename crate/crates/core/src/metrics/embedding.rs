use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::model::Params;
use crate::nn::Scalar;

/// Code strings with their embedding rows, in vocabulary order.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeEmbeddings {
    pub codes: Vec<String>,
    pub vectors: Vec<Vec<f32>>,
}

impl CodeEmbeddings {
    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn as_f64(&self) -> Vec<Vec<f64>> {
        self.vectors
            .iter()
            .map(|v| v.iter().map(|&x| f64::from(x)).collect())
            .collect()
    }

    /// Subset of codes, in the given order.
    pub fn select(&self, codes: &[String]) -> Result<Self> {
        let mut vectors = Vec::with_capacity(codes.len());
        for c in codes {
            let i = self
                .codes
                .binary_search(c)
                .map_err(|_| Error::Data(format!("no embedding for code `{c}`")))?;
            vectors.push(self.vectors[i].clone());
        }
        Ok(Self {
            codes: codes.to_vec(),
            vectors,
        })
    }
}

/// Rows `1..=|X|` of the embedding matrix; the padding row is left out.
pub fn extract_code_embeddings<T: Scalar>(params: &Params<T>, vocab: &Vocabulary) -> Result<CodeEmbeddings> {
    let table = &params.code_embedding;
    if table.rows() != vocab.id_space() {
        return Err(Error::Shape(format!(
            "{} embedding rows for a vocabulary of {}",
            table.rows(),
            vocab.len()
        )));
    }
    Ok(CodeEmbeddings {
        codes: vocab.codes().to_vec(),
        vectors: (1..table.rows())
            .map(|r| table.row(r).iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect())
            .collect(),
    })
}

/// `code<TAB>d` header, then `code<TAB>v1,...,vd` per code. Values use the
/// shortest decimal form that reads back to the same `f32`.
pub fn format_embeddings(e: &CodeEmbeddings) -> String {
    let mut out = format!("code\t{}\n", e.dim());
    for (code, v) in e.codes.iter().zip(&e.vectors) {
        out.push_str(code);
        out.push('\t');
        for (i, x) in v.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{x}").expect("writing to a string");
        }
        out.push('\n');
    }
    out
}

pub fn parse_embeddings(text: &str) -> Result<CodeEmbeddings> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or(Error::Parse { line: 1, message: "empty embedding file".into() })?;
    let dim: usize = header
        .strip_prefix("code\t")
        .and_then(|d| d.parse().ok())
        .ok_or(Error::Parse { line: 1, message: format!("bad header `{header}`") })?;
    let mut codes = Vec::new();
    let mut vectors = Vec::new();
    for (i, line) in lines {
        let bad = |message: String| Error::Parse { line: i + 1, message };
        let (code, values) = line
            .split_once('\t')
            .ok_or_else(|| bad("missing tab".into()))?;
        let v: Vec<f32> = values
            .split(',')
            .map(|x| x.parse::<f32>().map_err(|e| bad(format!("`{x}`: {e}"))))
            .collect::<Result<_>>()?;
        if v.len() != dim {
            return Err(bad(format!("{} values, header says {dim}", v.len())));
        }
        codes.push(code.to_string());
        vectors.push(v);
    }
    Ok(CodeEmbeddings { codes, vectors })
}

pub fn write_embeddings(path: &Path, e: &CodeEmbeddings) -> Result<()> {
    fs::write(path, format_embeddings(e)).map_err(|err| Error::io(path, err))
}

pub fn read_embeddings(path: &Path) -> Result<CodeEmbeddings> {
    let text = fs::read_to_string(path).map_err(|err| Error::io(path, err))?;
    parse_embeddings(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};

    #[test]
    fn export_round_trip() {
        let cfg = ModelConfig {
            dim: 4,
            heads: 2,
            interval_days: 10,
            ..ModelConfig::default()
        };
        let vocab = Vocabulary::new(["dx:b", "dx:a", "px:c"]).unwrap();
        let p = init_params::<f32>(&cfg, vocab.id_space(), 1).unwrap();
        let e = extract_code_embeddings(&p, &vocab).unwrap();
        assert_eq!(e.vectors.len(), 3);
        assert_eq!(e.dim(), 4);
        assert_eq!(e.vectors[0], p.code_embedding.row(1));
        let text = format_embeddings(&e);
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("code\t4\ndx:a\t"));
        assert_eq!(parse_embeddings(&text).unwrap(), e);
    }

    #[test]
    fn malformed_rows_name_the_line() {
        let err = parse_embeddings("code\t2\ndx:a\t1,2\ndx:b\t1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }
}
