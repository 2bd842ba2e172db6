//! Feature-by-sample count tables.

use std::collections::HashMap;
use std::io::BufRead;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate sample id '{id}'")]
    DuplicateSample { id: String, line: usize },
    #[error("line {line}: duplicate feature id '{id}'")]
    DuplicateFeature { id: String, line: usize },
    #[error("line {line}: duplicate entry for feature '{feature}' in sample '{sample}'")]
    DuplicateEntry {
        feature: String,
        sample: String,
        line: usize,
    },
    #[error("line {line}: invalid count '{text}'")]
    InvalidCount { text: String, line: usize },
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("empty sample {0}")]
    EmptySample(String),
    #[error("table has no samples")]
    NoSamples,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    TsvDense,
    TsvSparse,
}

impl FromStr for TableFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tsv-dense" => Ok(Self::TsvDense),
            "tsv-sparse" => Ok(Self::TsvSparse),
            other => Err(format!("unknown table format '{other}'")),
        }
    }
}

/// Sparse feature-by-sample table. Only positive counts are stored, one
/// row per feature sorted by sample index.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    sample_ids: Vec<String>,
    feature_ids: Vec<String>,
    rows: Vec<Vec<(usize, f64)>>,
    sample_totals: Vec<f64>,
}

impl SampleTable {
    /// Builds a table from per-feature rows of `(sample index, count)`.
    /// Zero counts are dropped; all other counts must be finite and positive.
    pub fn from_rows(
        sample_ids: Vec<String>,
        feature_ids: Vec<String>,
        rows: Vec<Vec<(usize, f64)>>,
    ) -> Result<Self, TableError> {
        if sample_ids.is_empty() {
            return Err(TableError::NoSamples);
        }
        check_unique(&sample_ids, |id| TableError::DuplicateSample {
            id,
            line: 0,
        })?;
        check_unique(&feature_ids, |id| TableError::DuplicateFeature {
            id,
            line: 0,
        })?;
        if rows.len() != feature_ids.len() {
            return Err(TableError::Malformed {
                line: 0,
                message: format!("{} rows for {} features", rows.len(), feature_ids.len()),
            });
        }
        let n = sample_ids.len();
        let mut sample_totals = vec![0.0; n];
        let mut clean = Vec::with_capacity(rows.len());
        for (f, mut row) in rows.into_iter().enumerate() {
            row.retain(|&(_, v)| v != 0.0);
            row.sort_by_key(|&(s, _)| s);
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(TableError::DuplicateEntry {
                        feature: feature_ids[f].clone(),
                        sample: sample_ids[w[0].0].clone(),
                        line: 0,
                    });
                }
            }
            for &(s, v) in &row {
                if s >= n {
                    return Err(TableError::Malformed {
                        line: 0,
                        message: format!("sample index {s} out of range"),
                    });
                }
                if !(v.is_finite() && v > 0.0) {
                    return Err(TableError::InvalidCount {
                        text: v.to_string(),
                        line: 0,
                    });
                }
                sample_totals[s] += v;
            }
            clean.push(row);
        }
        if let Some(s) = sample_totals.iter().position(|&t| t <= 0.0) {
            return Err(TableError::EmptySample(sample_ids[s].clone()));
        }
        Ok(Self {
            sample_ids,
            feature_ids,
            rows: clean,
            sample_totals,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_ids.len()
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn feature_ids(&self) -> &[String] {
        &self.feature_ids
    }

    pub fn sample_totals(&self) -> &[f64] {
        &self.sample_totals
    }

    /// Positive entries of one feature as `(sample index, count)`.
    pub fn row(&self, feature: usize) -> &[(usize, f64)] {
        &self.rows[feature]
    }

    pub fn get(&self, feature: usize, sample: usize) -> f64 {
        let row = &self.rows[feature];
        row.binary_search_by_key(&sample, |&(s, _)| s)
            .map(|i| row[i].1)
            .unwrap_or(0.0)
    }

    /// Per-sample proportions; every sample column sums to one.
    pub fn relative_abundance(&self) -> SampleTable {
        let rows = self
            .rows
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&(s, v)| (s, v / self.sample_totals[s]))
                    .collect()
            })
            .collect();
        self.with_rows(rows)
    }

    /// Presence/absence: every stored entry becomes one.
    pub fn presence(&self) -> SampleTable {
        let rows = self
            .rows
            .iter()
            .map(|row| row.iter().map(|&(s, _)| (s, 1.0)).collect())
            .collect();
        self.with_rows(rows)
    }

    fn with_rows(&self, rows: Vec<Vec<(usize, f64)>>) -> SampleTable {
        let mut sample_totals = vec![0.0; self.n_samples()];
        for row in &rows {
            for &(s, v) in row {
                sample_totals[s] += v;
            }
        }
        SampleTable {
            sample_ids: self.sample_ids.clone(),
            feature_ids: self.feature_ids.clone(),
            rows,
            sample_totals,
        }
    }

    /// Writes the dense TSV form.
    pub fn to_dense_tsv(&self) -> String {
        let mut out = String::from("#id");
        for s in &self.sample_ids {
            out.push('\t');
            out.push_str(s);
        }
        out.push('\n');
        for (f, id) in self.feature_ids.iter().enumerate() {
            out.push_str(id);
            for s in 0..self.n_samples() {
                out.push('\t');
                out.push_str(&self.get(f, s).to_string());
            }
            out.push('\n');
        }
        out
    }
}

fn check_unique(ids: &[String], err: impl Fn(String) -> TableError) -> Result<(), TableError> {
    let mut seen = HashMap::with_capacity(ids.len());
    for id in ids {
        if seen.insert(id.as_str(), ()).is_some() {
            return Err(err(id.clone()));
        }
    }
    Ok(())
}

fn parse_count(text: &str, line: usize) -> Result<f64, TableError> {
    match text.trim().parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        _ => Err(TableError::InvalidCount {
            text: text.to_string(),
            line,
        }),
    }
}

pub fn load_table<R: BufRead>(source: R, format: TableFormat) -> Result<SampleTable, TableError> {
    match format {
        TableFormat::TsvDense => load_dense(source),
        TableFormat::TsvSparse => load_sparse(source),
    }
}

fn load_dense<R: BufRead>(source: R) -> Result<SampleTable, TableError> {
    let mut sample_ids: Option<Vec<String>> = None;
    let mut sample_index: HashMap<String, usize> = HashMap::new();
    let mut feature_ids = Vec::new();
    let mut feature_index: HashMap<String, usize> = HashMap::new();
    let mut rows = Vec::new();

    for (i, line) in source.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let Some(samples) = &sample_ids else {
            if !line.starts_with('#') {
                return Err(TableError::Malformed {
                    line: lineno,
                    message: "expected a '#id' header line".into(),
                });
            }
            // BIOM-style preamble comment without columns
            if fields.len() == 1 {
                continue;
            }
            let ids: Vec<String> = fields[1..].iter().map(|s| s.to_string()).collect();
            for (k, id) in ids.iter().enumerate() {
                if sample_index.insert(id.clone(), k).is_some() {
                    return Err(TableError::DuplicateSample {
                        id: id.clone(),
                        line: lineno,
                    });
                }
            }
            sample_ids = Some(ids);
            continue;
        };
        if fields.len() != samples.len() + 1 {
            return Err(TableError::RaggedRow {
                line: lineno,
                expected: samples.len() + 1,
                found: fields.len(),
            });
        }
        let id = fields[0].to_string();
        if feature_index
            .insert(id.clone(), feature_ids.len())
            .is_some()
        {
            return Err(TableError::DuplicateFeature { id, line: lineno });
        }
        let mut row = Vec::new();
        for (k, text) in fields[1..].iter().enumerate() {
            let v = parse_count(text, lineno)?;
            if v > 0.0 {
                row.push((k, v));
            }
        }
        feature_ids.push(id);
        rows.push(row);
    }

    let sample_ids = sample_ids.ok_or(TableError::NoSamples)?;
    SampleTable::from_rows(sample_ids, feature_ids, rows)
}

fn load_sparse<R: BufRead>(source: R) -> Result<SampleTable, TableError> {
    let mut sample_ids: Vec<String> = Vec::new();
    let mut sample_index: HashMap<String, usize> = HashMap::new();
    let mut declared = false;
    let mut feature_ids: Vec<String> = Vec::new();
    let mut feature_index: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut seen: HashMap<(usize, usize), ()> = HashMap::new();

    for (i, line) in source.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields[0] == "#samples" {
            if declared || !feature_ids.is_empty() {
                return Err(TableError::Malformed {
                    line: lineno,
                    message: "'#samples' header must come first and only once".into(),
                });
            }
            declared = true;
            for id in &fields[1..] {
                if sample_index
                    .insert(id.to_string(), sample_ids.len())
                    .is_some()
                {
                    return Err(TableError::DuplicateSample {
                        id: id.to_string(),
                        line: lineno,
                    });
                }
                sample_ids.push(id.to_string());
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        if fields.len() != 3 {
            return Err(TableError::RaggedRow {
                line: lineno,
                expected: 3,
                found: fields.len(),
            });
        }
        let value = parse_count(fields[2], lineno)?;
        let sample = match sample_index.get(fields[1]) {
            Some(&s) => s,
            None if declared => {
                return Err(TableError::Malformed {
                    line: lineno,
                    message: format!("sample '{}' is not listed in '#samples'", fields[1]),
                })
            }
            None => {
                sample_index.insert(fields[1].to_string(), sample_ids.len());
                sample_ids.push(fields[1].to_string());
                sample_ids.len() - 1
            }
        };
        let feature = *feature_index
            .entry(fields[0].to_string())
            .or_insert_with(|| {
                feature_ids.push(fields[0].to_string());
                rows.push(Vec::new());
                feature_ids.len() - 1
            });
        if seen.insert((feature, sample), ()).is_some() {
            return Err(TableError::DuplicateEntry {
                feature: fields[0].to_string(),
                sample: fields[1].to_string(),
                line: lineno,
            });
        }
        if value > 0.0 {
            rows[feature].push((sample, value));
        }
    }

    SampleTable::from_rows(sample_ids, feature_ids, rows)
}
