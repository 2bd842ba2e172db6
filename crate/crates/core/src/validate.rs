//! Brute-force reference distances and the Mantel permutation test.
//!
//! The oracle here shares no code with the embedding or kernel paths: node
//! values are aggregated directly from descendant leaves and every pair is
//! summed over every non-root node.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::newick::PhyloTree;
use crate::precision::Precision;
use crate::stripes::DistanceMatrix;
use crate::table::SampleTable;
use crate::Metric;

pub const DEFAULT_PERMUTATIONS: usize = 999;
pub const MANTEL_RNG: &str = "ChaCha8Rng (rand_chacha), stream = permutation index";
pub const MANTEL_CORRELATION: &str = "pearson";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidateError {
    #[error("feature '{0}' is not a leaf of the tree")]
    FeatureNotInTree(String),
    #[error("matrix is asymmetric at ({i}, {j})")]
    Asymmetric { i: usize, j: usize },
    #[error("matrices differ in size: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("matrices list different sample ids")]
    SampleMismatch,
    #[error("at least one permutation is required")]
    NoPermutations,
    #[error("condensed distances have zero variance")]
    Degenerate,
    #[error("at least 2 samples are required")]
    TooFewSamples,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MantelResult {
    pub r: f64,
    pub r_squared: f64,
    pub p_value: f64,
    pub permutations: usize,
    pub seed: u64,
}

/// Pairwise distances computed directly from the definition.
pub fn brute_force_unifrac(
    tree: &PhyloTree,
    table: &SampleTable,
    metric: Metric,
) -> Result<DistanceMatrix, ValidateError> {
    let n = table.n_samples();
    let nodes = tree.nodes();
    let leaf_of: HashMap<&str, usize> = tree
        .leaf_names()
        .iter()
        .map(String::as_str)
        .zip(tree.leaf_nodes().iter().copied())
        .collect();
    // feature carried by each tree leaf
    let mut leaf_feature: Vec<Option<usize>> = vec![None; nodes.len()];
    for (f, id) in table.feature_ids().iter().enumerate() {
        let &leaf = leaf_of
            .get(id.as_str())
            .ok_or_else(|| ValidateError::FeatureNotInTree(id.clone()))?;
        leaf_feature[leaf] = Some(f);
    }

    let mut children: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, node) in nodes.iter().enumerate() {
        if let Some(p) = node.parent {
            children[p].push(i);
        }
    }

    // x[i][s]: relative abundance (or presence) of node i's clade in sample s
    let totals = table.sample_totals();
    let mut values: Vec<(f64, Vec<f64>)> = Vec::new();
    for (i, node) in nodes.iter().enumerate() {
        if node.parent.is_none() {
            continue;
        }
        let mut x = vec![0.0; n];
        let mut stack = vec![i];
        while let Some(cur) = stack.pop() {
            if children[cur].is_empty() {
                if let Some(f) = leaf_feature[cur] {
                    for s in 0..n {
                        let c = table.get(f, s);
                        if metric.is_weighted() {
                            x[s] += c / totals[s];
                        } else if c > 0.0 {
                            x[s] = 1.0;
                        }
                    }
                }
            } else {
                stack.extend(&children[cur]);
            }
        }
        values.push((node.branch_length, x));
    }

    let mut out = vec![0.0; n * n];
    for j in 0..n {
        for k in j + 1..n {
            let mut num = 0.0;
            let mut den = 0.0;
            for (length, x) in &values {
                let (a, b) = (x[j], x[k]);
                match metric {
                    Metric::Unweighted => {
                        let (pa, pb) = (a > 0.0, b > 0.0);
                        if pa != pb {
                            num += length;
                        }
                        if pa || pb {
                            den += length;
                        }
                    }
                    Metric::WeightedUnnormalized | Metric::WeightedNormalized => {
                        num += length * (a - b).abs();
                        den += length * (a + b);
                    }
                }
            }
            let d = match metric {
                Metric::WeightedUnnormalized => num,
                _ if den == 0.0 => 0.0,
                _ => num / den,
            };
            out[j * n + k] = d;
            out[k * n + j] = d;
        }
    }
    Ok(
        DistanceMatrix::new(table.sample_ids().to_vec(), out, Precision::Fp64)
            .expect("oracle output is symmetric"),
    )
}

/// Row-major upper triangle (`i < j`).
pub fn condensed_upper(m: &DistanceMatrix) -> Result<Vec<f64>, ValidateError> {
    let n = m.n_samples();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            if (m.get(i, j) - m.get(j, i)).abs() > 1e-12 {
                return Err(ValidateError::Asymmetric { i, j });
            }
            out.push(m.get(i, j));
        }
    }
    Ok(out)
}

/// Centered upper triangle of a matrix and its norm.
struct Centered {
    n: usize,
    values: Vec<f64>,
    norm: f64,
}

impl Centered {
    fn new(m: &DistanceMatrix) -> Result<Self, ValidateError> {
        let n = m.n_samples();
        let mean = condensed_upper(m)?.iter().sum::<f64>() / (n * (n - 1) / 2) as f64;
        let mut values = vec![0.0; n * n];
        let mut ss = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let c = m.get(i, j) - mean;
                values[i * n + j] = c;
                values[j * n + i] = c;
                ss += c * c;
            }
        }
        if ss == 0.0 {
            return Err(ValidateError::Degenerate);
        }
        Ok(Self {
            n,
            values,
            norm: ss.sqrt(),
        })
    }

    /// Pearson r against `other` with `other`'s samples relabeled by `perm`.
    fn correlation(&self, other: &Centered, perm: &[usize]) -> f64 {
        let n = self.n;
        let mut sum = 0.0;
        for (i, &pi) in perm.iter().enumerate() {
            let row = &self.values[i * n..(i + 1) * n];
            let theirs = &other.values[pi * n..(pi + 1) * n];
            for (&x, &pj) in row[i + 1..].iter().zip(&perm[i + 1..]) {
                sum += x * theirs[pj];
            }
        }
        (sum / (self.norm * other.norm)).clamp(-1.0, 1.0)
    }
}

/// One-sided Mantel test of positive association between `m1` and `m2`.
///
/// Permutation `i` draws a uniform relabeling of `m2`'s samples from its
/// own ChaCha8 stream `i` under `seed`, so results do not depend on how
/// the permutations are scheduled across threads.
pub fn mantel(
    m1: &DistanceMatrix,
    m2: &DistanceMatrix,
    permutations: usize,
    seed: u64,
) -> Result<MantelResult, ValidateError> {
    if m1.n_samples() != m2.n_samples() {
        return Err(ValidateError::DimensionMismatch(
            m1.n_samples(),
            m2.n_samples(),
        ));
    }
    if m1.sample_ids() != m2.sample_ids() {
        return Err(ValidateError::SampleMismatch);
    }
    if permutations == 0 {
        return Err(ValidateError::NoPermutations);
    }
    let n = m1.n_samples();
    if n < 2 {
        return Err(ValidateError::TooFewSamples);
    }
    let x = Centered::new(m1)?;
    let y = Centered::new(m2)?;
    let identity: Vec<usize> = (0..n).collect();
    let r = x.correlation(&y, &identity);

    let at_least: usize = (0..permutations)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut perm = identity.clone();
            perm.shuffle(&mut rng);
            usize::from(x.correlation(&y, &perm) >= r)
        })
        .sum();

    Ok(MantelResult {
        r,
        r_squared: r * r,
        p_value: (1 + at_least) as f64 / (1 + permutations) as f64,
        permutations,
        seed,
    })
}
