//! Datasets, JSONL ingestion, deterministic splitting, text featurization and
//! the synthetic shifted-domain generator.

mod synth;
mod text;

pub use synth::{encode_vector, gen_synthetic, SynthConfig, SynthOutput, VocabMode};
pub use text::{featurize, preprocess, SparseVec, DEFAULT_HASH_DIM};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Binary class label. Class 0 is misinformation, class 1 is non-misleading
/// (the positive class for metrics).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Misinformation,
    NonMisleading,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Misinformation, Label::NonMisleading];

    pub fn index(self) -> usize {
        match self {
            Label::Misinformation => 0,
            Label::NonMisleading => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Misinformation),
            1 => Some(Label::NonMisleading),
            _ => None,
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.index() as u8)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = u64::deserialize(d)?;
        Label::from_index(v as usize).ok_or_else(|| serde::de::Error::custom(format!("label must be 0 or 1, got {v}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub text: String,
    pub label: Option<Label>,
}

impl Example {
    pub fn new(text: impl Into<String>, label: Option<Label>) -> Self {
        Example {
            text: text.into(),
            label,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub domain: Domain,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, domain: Domain, examples: Vec<Example>) -> Self {
        Dataset {
            name: name.into(),
            domain,
            examples,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// All labels, or `None` if any example is unlabeled.
    pub fn labels(&self) -> Option<Vec<Label>> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.examples.iter().all(|e| e.label.is_some())
    }

    /// Fraction of class 1. Only defined for non-empty, fully labeled data.
    pub fn class_prior(&self) -> Option<f64> {
        let labels = self.labels()?;
        if labels.is_empty() {
            return None;
        }
        let ones = labels.iter().filter(|&&l| l == Label::NonMisleading).count();
        Some(ones as f64 / labels.len() as f64)
    }

    /// Copy with every label removed.
    pub fn without_labels(&self) -> Dataset {
        Dataset {
            name: self.name.clone(),
            domain: self.domain,
            examples: self
                .examples
                .iter()
                .map(|e| Example::new(e.text.clone(), None))
                .collect(),
        }
    }

    /// Fails with a validation error naming the first unlabeled line.
    pub fn require_labels(&self) -> Result<Vec<Label>> {
        self.examples
            .iter()
            .enumerate()
            .map(|(i, e)| {
                e.label.ok_or_else(|| Error::Validation {
                    line: i + 1,
                    message: format!("dataset '{}' requires labels", self.name),
                })
            })
            .collect()
    }

    /// Feature vectors for every example, in order.
    pub fn featurize(&self, dim: usize) -> Vec<SparseVec> {
        self.examples
            .iter()
            .map(|e| featurize(&preprocess(&e.text), dim))
            .collect()
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for ex in &self.examples {
            let line = serde_json::to_string(ex).expect("example serializes");
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLine {
    text: String,
    #[serde(default)]
    label: Option<serde_json::Value>,
}

/// Reads one example per line: `{"text": ..., "label": 0 | 1 | null}`.
/// Blank lines are skipped; line numbers in errors are 1-based file lines.
pub fn load_jsonl(path: impl AsRef<Path>, domain: Domain) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut examples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawLine = serde_json::from_str(&line).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        let label = match raw.label {
            None | Some(serde_json::Value::Null) => None,
            Some(v) => {
                let idx = v.as_u64().and_then(|n| Label::from_index(n as usize));
                Some(idx.ok_or_else(|| Error::Validation {
                    line: line_no,
                    message: format!("label must be 0, 1 or null, got {v}"),
                })?)
            }
        };
        if preprocess(&raw.text).is_empty() {
            return Err(Error::Validation {
                line: line_no,
                message: "text is empty after preprocessing".into(),
            });
        }
        examples.push(Example::new(raw.text, label));
    }
    Ok(Dataset::new(name, domain, examples))
}

/// Split sizes for `n` items: validation and test sizes are `n * ratio`
/// rounded to nearest, and train takes whatever remains.
pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !r.is_finite() || *r <= 0.0) {
        return Err(Error::config(format!("split ratios must be positive, got {ratios:?}")));
    }
    if ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "split ratios must sum to 1, got {}",
            tr + va + te
        )));
    }
    let n_val = (n as f64 * va).round() as usize;
    let n_test = (n as f64 * te).round() as usize;
    let n_train = n - n_val - n_test;
    Ok((n_train, n_val, n_test))
}

/// Deterministic shuffled partition into (train, val, test). Each part keeps
/// the input's relative order.
pub fn split(ds: &Dataset, ratios: (f64, f64, f64), seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    if ds.is_empty() {
        return Err(Error::config(format!("cannot split empty dataset '{}'", ds.name)));
    }
    let (n_train, n_val, _) = split_sizes(ds.len(), ratios)?;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut crate::rng_from_seed(seed));

    let part = |idx: &[usize], suffix: &str| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        Dataset::new(
            format!("{}_{suffix}", ds.name),
            ds.domain,
            idx.into_iter().map(|i| ds.examples[i].clone()).collect(),
        )
    };
    Ok((
        part(&order[..n_train], "train"),
        part(&order[n_train..n_train + n_val], "val"),
        part(&order[n_train + n_val..], "test"),
    ))
}
