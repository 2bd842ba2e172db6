use std::collections::HashMap;
use std::io::BufRead;

use thiserror::Error;

use crate::precision::Precision;

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("matrix is not square: {ids} ids, {values} values")]
    Shape { ids: usize, values: usize },
    #[error("matrix is not symmetric at ({i}, {j}): {a} vs {b}")]
    Asymmetric { i: usize, j: usize, a: f64, b: f64 },
    #[error("nonzero diagonal at {0}")]
    Diagonal(usize),
    #[error("invalid distance {value} at ({i}, {j})")]
    InvalidValue { i: usize, j: usize, value: f64 },
    #[error("duplicate sample id '{0}'")]
    DuplicateId(String),
    #[error("sample ids differ: '{0}' not found")]
    IdMismatch(String),
}

/// Full `n x n` symmetric distance matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    sample_ids: Vec<String>,
    values: Vec<f64>,
    precision: Precision,
}

impl DistanceMatrix {
    /// Validates symmetry (exact), zero diagonal and finite non-negative values.
    pub fn new(
        sample_ids: Vec<String>,
        values: Vec<f64>,
        precision: Precision,
    ) -> Result<Self, MatrixError> {
        let n = sample_ids.len();
        if values.len() != n * n {
            return Err(MatrixError::Shape {
                ids: n,
                values: values.len(),
            });
        }
        let mut seen = HashMap::new();
        for id in &sample_ids {
            if seen.insert(id.as_str(), ()).is_some() {
                return Err(MatrixError::DuplicateId(id.clone()));
            }
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(MatrixError::Diagonal(i));
            }
            for j in 0..n {
                let v = values[i * n + j];
                if !(v.is_finite() && v >= 0.0) {
                    return Err(MatrixError::InvalidValue { i, j, value: v });
                }
                if v != values[j * n + i] {
                    return Err(MatrixError::Asymmetric {
                        i,
                        j,
                        a: v,
                        b: values[j * n + i],
                    });
                }
            }
        }
        Ok(Self::from_values_unchecked(sample_ids, values, precision))
    }

    pub(crate) fn from_values_unchecked(
        sample_ids: Vec<String>,
        values: Vec<f64>,
        precision: Precision,
    ) -> Self {
        Self {
            sample_ids,
            values,
            precision,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    /// Row-major `n x n` values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_samples() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n_samples();
        &self.values[i * n..(i + 1) * n]
    }

    /// The same matrix with samples in the order of `ids`.
    pub fn reordered<S: AsRef<str>>(&self, ids: &[S]) -> Result<DistanceMatrix, MatrixError> {
        let index: HashMap<&str, usize> = self
            .sample_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        if ids.len() != self.n_samples() {
            return Err(MatrixError::IdMismatch(format!(
                "{} ids vs {}",
                ids.len(),
                self.n_samples()
            )));
        }
        let order: Vec<usize> = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_ref())
                    .copied()
                    .ok_or_else(|| MatrixError::IdMismatch(id.as_ref().to_string()))
            })
            .collect::<Result<_, _>>()?;
        let n = order.len();
        let mut values = Vec::with_capacity(n * n);
        for &i in &order {
            for &j in &order {
                values.push(self.get(i, j));
            }
        }
        DistanceMatrix::new(
            ids.iter().map(|s| s.as_ref().to_string()).collect(),
            values,
            self.precision,
        )
    }

    /// Tab-separated matrix: a header row with an empty corner cell and the
    /// sample ids, then one row per sample. Values carry 17 significant
    /// digits for fp64 results and 9 for fp32.
    pub fn to_tsv(&self) -> String {
        let digits = self.precision.significant_digits();
        let n = self.n_samples();
        let mut out = String::with_capacity(n * n * (digits + 4));
        for id in &self.sample_ids {
            out.push('\t');
            out.push_str(id);
        }
        out.push('\n');
        for (i, id) in self.sample_ids.iter().enumerate() {
            out.push_str(id);
            for &v in self.row(i) {
                out.push('\t');
                out.push_str(&format_significant(v, digits));
            }
            out.push('\n');
        }
        out
    }

    /// Parses the TSV written by [`to_tsv`](Self::to_tsv). Values are read
    /// as-is; `precision` only controls how the matrix is written back.
    pub fn from_tsv<R: BufRead>(source: R, precision: Precision) -> Result<Self, MatrixError> {
        let mut lines = source
            .lines()
            .enumerate()
            .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
        let Some((_, header)) = lines.next() else {
            return Err(MatrixError::Parse {
                line: 1,
                message: "empty matrix file".into(),
            });
        };
        let header = header?;
        let ids: Vec<String> = header
            .trim_end_matches('\r')
            .split('\t')
            .skip(1)
            .map(str::to_string)
            .collect();
        let n = ids.len();
        let mut values = Vec::with_capacity(n * n);
        for (row, (i, line)) in lines.enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
            let lineno = i + 1;
            if row >= n {
                return Err(MatrixError::Parse {
                    line: lineno,
                    message: "more rows than header ids".into(),
                });
            }
            if fields.len() != n + 1 {
                return Err(MatrixError::Parse {
                    line: lineno,
                    message: format!("expected {} fields, found {}", n + 1, fields.len()),
                });
            }
            if fields[0] != ids[row] {
                return Err(MatrixError::Parse {
                    line: lineno,
                    message: format!(
                        "row id '{}' does not match column '{}'",
                        fields[0], ids[row]
                    ),
                });
            }
            for f in &fields[1..] {
                values.push(f.parse::<f64>().map_err(|_| MatrixError::Parse {
                    line: lineno,
                    message: format!("invalid value '{f}'"),
                })?);
            }
        }
        DistanceMatrix::new(ids, values, precision)
    }
}

/// Formats like C's `%.{digits}g`.
pub fn format_significant(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let mantissa = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_fraction(&format!("{:.*}", decimals, v)).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_formatting() {
        assert_eq!(format_significant(2.0 / 3.0, 17), "0.66666666666666663");
        assert_eq!(format_significant(2.0 / 3.0, 9), "0.666666667");
        assert_eq!(format_significant(1.0, 17), "1");
        assert_eq!(format_significant(0.0, 17), "0");
        assert_eq!(format_significant(1.5e-7, 9), "1.5e-07");
        assert_eq!(format_significant(123456.0, 3), "1.23e+05");
        assert_eq!(format_significant(0.0001, 5), "0.0001");
    }

    #[test]
    fn tsv_roundtrip_is_exact_for_fp64() {
        let ids = vec!["a".to_string(), "b".into(), "c".into()];
        let x = 0.1 + 0.2;
        let vals = vec![0.0, x, 1.0 / 3.0, x, 0.0, 2.5, 1.0 / 3.0, 2.5, 0.0];
        let m = DistanceMatrix::new(ids, vals, Precision::Fp64).unwrap();
        let text = m.to_tsv();
        assert!(text.starts_with("\ta\tb\tc\na\t0\t"));
        let back = DistanceMatrix::from_tsv(text.as_bytes(), Precision::Fp64).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn validation_errors() {
        let ids = vec!["a".to_string(), "b".into()];
        assert!(matches!(
            DistanceMatrix::new(ids.clone(), vec![0.0, 1.0, 2.0, 0.0], Precision::Fp64),
            Err(MatrixError::Asymmetric { .. })
        ));
        assert!(matches!(
            DistanceMatrix::new(ids.clone(), vec![1.0, 1.0, 1.0, 0.0], Precision::Fp64),
            Err(MatrixError::Diagonal(0))
        ));
        assert!(matches!(
            DistanceMatrix::new(ids, vec![0.0; 3], Precision::Fp64),
            Err(MatrixError::Shape { .. })
        ));
    }

    #[test]
    fn reorder_by_ids() {
        let ids = vec!["a".to_string(), "b".into(), "c".into()];
        let vals = vec![0.0, 1.0, 2.0, 1.0, 0.0, 3.0, 2.0, 3.0, 0.0];
        let m = DistanceMatrix::new(ids, vals, Precision::Fp64).unwrap();
        let r = m.reordered(&["c", "a", "b"]).unwrap();
        assert_eq!(r.get(0, 1), 2.0);
        assert_eq!(r.get(0, 2), 3.0);
        assert!(m.reordered(&["a", "b", "z"]).is_err());
    }
}
