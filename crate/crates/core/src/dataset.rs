//! Corpus and label files, and deterministic hash splits.
//!
//! A corpus file holds one SMILES per line (anything after the first
//! whitespace is ignored). A label file is tab separated: SMILES followed by
//! one column per task, with empty fields for missing labels. A first line
//! whose label fields are not all numeric is treated as a header. Lines whose
//! SMILES fail to parse are skipped and reported with their line numbers.

use thiserror::Error;

use crate::chem::{parse_smiles, ChemError, MolGraph};
use crate::tensor::Tensor;
use crate::wlhash::digest64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("line {line}: {source}")]
    Parse { line: usize, source: ChemError },
    #[error("line {line}: expected {expected} label columns, found {found}")]
    Columns { line: usize, expected: usize, found: usize },
    #[error("line {line}: bad label `{value}`")]
    BadLabel { line: usize, value: String },
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    BadFractions([f64; 3]),
    #[error("no records")]
    Empty,
}

/// A parsed molecule with its source line.
#[derive(Debug, Clone)]
pub struct Record {
    pub line: usize,
    pub smiles: String,
    pub mol: MolGraph,
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

/// A line dropped because its SMILES did not parse.
#[derive(Debug, Clone, PartialEq)]
pub struct Skipped {
    pub line: usize,
    pub error: ChemError,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub records: Vec<Record>,
    pub skipped: Vec<Skipped>,
}

impl Corpus {
    pub fn mols(&self) -> Vec<MolGraph> {
        self.records.iter().map(|r| r.mol.clone()).collect()
    }
}

/// Reads a SMILES corpus; fails only when no line parses.
pub fn read_corpus(text: &str) -> Result<Corpus, DatasetError> {
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (line, l) in content_lines(text) {
        let smiles = l.split_whitespace().next().unwrap_or("").to_string();
        match parse_smiles(&smiles) {
            Ok(mol) => records.push(Record { line, smiles, mol }),
            Err(error) => skipped.push(Skipped { line, error }),
        }
    }
    if records.is_empty() {
        return Err(match skipped.first() {
            Some(s) => DatasetError::Parse {
                line: s.line,
                source: s.error.clone(),
            },
            None => DatasetError::Empty,
        });
    }
    Ok(Corpus { records, skipped })
}

/// Molecules with a label matrix; `valid` flags present labels.
#[derive(Debug, Clone)]
pub struct Labeled {
    pub task_names: Vec<String>,
    pub records: Vec<Record>,
    pub labels: Tensor,
    pub valid: Vec<bool>,
    pub skipped: Vec<Skipped>,
}

/// Reads a tab-separated label file. Column and label errors are fatal;
/// unparsable SMILES are skipped.
pub fn read_labeled(text: &str) -> Result<Labeled, DatasetError> {
    let mut lines = content_lines(text).peekable();
    let mut task_names = Vec::new();
    if let Some(&(_, first)) = lines.peek() {
        let fields: Vec<&str> = first.split('\t').collect();
        let numeric = fields[1..]
            .iter()
            .all(|f| f.trim().is_empty() || f.trim().parse::<f64>().is_ok());
        if !numeric || fields.len() == 1 {
            task_names = fields[1..].iter().map(|s| s.trim().to_string()).collect();
            lines.next();
        }
    }
    let mut records = Vec::new();
    let mut values = Vec::new();
    let mut valid = Vec::new();
    let mut skipped = Vec::new();
    for (line, l) in lines {
        let fields: Vec<&str> = l.split('\t').collect();
        if task_names.is_empty() {
            task_names = (0..fields.len() - 1).map(|i| format!("task{i}")).collect();
        }
        let expected = task_names.len();
        if fields.len() - 1 != expected || expected == 0 {
            return Err(DatasetError::Columns {
                line,
                expected,
                found: fields.len() - 1,
            });
        }
        let smiles = fields[0].trim().to_string();
        let mol = match parse_smiles(&smiles) {
            Ok(mol) => mol,
            Err(error) => {
                skipped.push(Skipped { line, error });
                continue;
            }
        };
        for f in &fields[1..] {
            let f = f.trim();
            if f.is_empty() {
                values.push(0.0);
                valid.push(false);
            } else {
                let v = f.parse::<f64>().map_err(|_| DatasetError::BadLabel {
                    line,
                    value: f.to_string(),
                })?;
                values.push(v);
                valid.push(true);
            }
        }
        records.push(Record { line, smiles, mol });
    }
    if records.is_empty() {
        return Err(match skipped.first() {
            Some(s) => DatasetError::Parse {
                line: s.line,
                source: s.error.clone(),
            },
            None => DatasetError::Empty,
        });
    }
    let labels = Tensor {
        rows: records.len(),
        cols: task_names.len(),
        data: values,
    };
    Ok(Labeled {
        task_names,
        records,
        labels,
        valid,
        skipped,
    })
}

/// Train/valid/test index sets.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Assigns each record index to a split by hashing (index, seed) into the
/// unit interval and comparing against the cumulative fractions.
pub fn split_dataset(n: usize, fractions: [f64; 3], seed: u64) -> Result<Split, DatasetError> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| f.is_nan() || *f < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(DatasetError::BadFractions(fractions));
    }
    let mut split = Split::default();
    for i in 0..n {
        let mut bytes = [0u8; 16];
        bytes[..8].copy_from_slice(&(i as u64).to_le_bytes());
        bytes[8..].copy_from_slice(&seed.to_le_bytes());
        let u = (digest64(&bytes) >> 11) as f64 / (1u64 << 53) as f64;
        if u < fractions[0] {
            split.train.push(i);
        } else if u < fractions[0] + fractions[1] {
            split.valid.push(i);
        } else {
            split.test.push(i);
        }
    }
    Ok(split)
}
