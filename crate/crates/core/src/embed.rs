//! Per-node embedding rows over samples, produced in postorder batches.
//!
//! A leaf row holds the feature's relative abundance (weighted) or
//! presence (unweighted) in every sample. An internal row is the sum
//! (weighted) or OR (unweighted) of its children's rows. Rows are emitted
//! in tree postorder; the root never produces a row.

use std::collections::HashMap;

use thiserror::Error;

use crate::newick::PhyloTree;
use crate::precision::Real;
use crate::table::SampleTable;
use crate::Metric;

pub const DEFAULT_BATCH_CAPACITY: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("tree leaves and table features differ: {missing_from_tree} feature(s) not in tree (e.g. {example_feature:?}), {missing_from_table} leaf/leaves not in table (e.g. {example_leaf:?})")]
    Mismatch {
        missing_from_tree: usize,
        example_feature: Option<String>,
        missing_from_table: usize,
        example_leaf: Option<String>,
    },
    #[error("alignment width must be at least 1")]
    ZeroAlignment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingMode {
    Unweighted,
    Weighted,
}

impl From<Metric> for EmbeddingMode {
    fn from(metric: Metric) -> Self {
        if metric.is_weighted() {
            EmbeddingMode::Weighted
        } else {
            EmbeddingMode::Unweighted
        }
    }
}

/// Up to `capacity` embedding rows with their branch lengths.
///
/// Rows are `n_samples_padded` wide; columns past `n_samples` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch<T> {
    emb: Vec<T>,
    lengths: Vec<T>,
    n_samples: usize,
    n_samples_padded: usize,
}

impl<T: Real> EmbeddingBatch<T> {
    pub fn new(n_samples: usize, n_samples_padded: usize) -> Self {
        assert!(n_samples_padded >= n_samples);
        Self {
            emb: Vec::new(),
            lengths: Vec::new(),
            n_samples,
            n_samples_padded,
        }
    }

    /// Builds a batch from explicit unpadded rows.
    pub fn from_rows(rows: &[Vec<T>], lengths: &[T], n_samples_padded: usize) -> Self {
        assert_eq!(rows.len(), lengths.len());
        let n_samples = rows.first().map_or(0, Vec::len);
        let mut batch = Self::new(n_samples, n_samples_padded);
        for (row, &len) in rows.iter().zip(lengths) {
            assert_eq!(row.len(), n_samples);
            batch.emb.extend_from_slice(row);
            batch
                .emb
                .resize(batch.emb.len() + n_samples_padded - n_samples, T::zero());
            batch.lengths.push(len);
        }
        batch
    }

    pub fn filled_embs(&self) -> usize {
        self.lengths.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_samples_padded(&self) -> usize {
        self.n_samples_padded
    }

    pub fn lengths(&self) -> &[T] {
        &self.lengths
    }

    pub fn emb(&self) -> &[T] {
        &self.emb
    }

    /// Padded row `e`.
    #[inline]
    pub fn row(&self, e: usize) -> &[T] {
        let w = self.n_samples_padded;
        &self.emb[e * w..(e + 1) * w]
    }

    pub fn clear(&mut self) {
        self.emb.clear();
        self.lengths.clear();
    }

    fn push_row(&mut self, row: &[f64], length: f64) {
        debug_assert_eq!(row.len(), self.n_samples_padded);
        self.emb.extend(row.iter().map(|&v| T::cast_from(v)));
        self.lengths.push(T::cast_from(length));
    }

    /// Converts to another precision, reusing `out`'s allocation.
    pub fn cast_into<U: Real>(&self, out: &mut EmbeddingBatch<U>) {
        out.n_samples = self.n_samples;
        out.n_samples_padded = self.n_samples_padded;
        out.emb.clear();
        out.emb
            .extend(self.emb.iter().map(|v| U::cast_from(v.as_f64())));
        out.lengths.clear();
        out.lengths
            .extend(self.lengths.iter().map(|v| U::cast_from(v.as_f64())));
    }

    pub fn cast<U: Real>(&self) -> EmbeddingBatch<U> {
        let mut out = EmbeddingBatch::new(self.n_samples, self.n_samples_padded);
        self.cast_into(&mut out);
        out
    }
}

/// Sequential postorder cursor that yields embedding batches.
///
/// Only the vectors of nodes whose parent has not been emitted yet are
/// kept alive; finished vectors are recycled.
pub struct Embedder<'a> {
    tree: &'a PhyloTree,
    view: SampleTable,
    leaf_feature: Vec<Option<usize>>,
    mode: EmbeddingMode,
    n_samples_padded: usize,
    cursor: usize,
    pending: Vec<Option<Vec<f64>>>,
    spare: Vec<Vec<f64>>,
    peak_pending: usize,
    live: usize,
}

impl<'a> Embedder<'a> {
    /// `tree` must have exactly the table's features as leaves.
    pub fn new(
        tree: &'a PhyloTree,
        table: &SampleTable,
        mode: EmbeddingMode,
    ) -> Result<Self, EmbedError> {
        let feature_index: HashMap<&str, usize> = table
            .feature_ids()
            .iter()
            .enumerate()
            .map(|(i, f)| (f.as_str(), i))
            .collect();
        let mut leaf_feature = vec![None; tree.len()];
        let mut matched = 0;
        let mut missing_leaf = Vec::new();
        for (name, &node) in tree.leaf_names().iter().zip(tree.leaf_nodes()) {
            match feature_index.get(name.as_str()) {
                Some(&f) => {
                    leaf_feature[node] = Some(f);
                    matched += 1;
                }
                None => missing_leaf.push(name.clone()),
            }
        }
        if matched != table.n_features() || !missing_leaf.is_empty() {
            let leaves: std::collections::HashSet<&str> =
                tree.leaf_names().iter().map(String::as_str).collect();
            let missing_feature: Vec<&String> = table
                .feature_ids()
                .iter()
                .filter(|f| !leaves.contains(f.as_str()))
                .collect();
            return Err(EmbedError::Mismatch {
                missing_from_tree: missing_feature.len(),
                example_feature: missing_feature.first().map(|s| s.to_string()),
                missing_from_table: missing_leaf.len(),
                example_leaf: missing_leaf.first().cloned(),
            });
        }
        let view = match mode {
            EmbeddingMode::Weighted => table.relative_abundance(),
            EmbeddingMode::Unweighted => table.presence(),
        };
        Ok(Self {
            tree,
            view,
            leaf_feature,
            mode,
            n_samples_padded: table.n_samples(),
            cursor: 0,
            pending: vec![None; tree.len()],
            spare: Vec::new(),
            peak_pending: 0,
            live: 0,
        })
    }

    /// Pads rows to a multiple of `width` columns.
    pub fn with_alignment(mut self, width: usize) -> Result<Self, EmbedError> {
        if width == 0 {
            return Err(EmbedError::ZeroAlignment);
        }
        self.n_samples_padded = self.n_samples().div_ceil(width) * width;
        Ok(self)
    }

    pub fn n_samples(&self) -> usize {
        self.view.n_samples()
    }

    pub fn n_samples_padded(&self) -> usize {
        self.n_samples_padded
    }

    pub fn mode(&self) -> EmbeddingMode {
        self.mode
    }

    /// Rows this embedder yields in total.
    pub fn total_rows(&self) -> usize {
        self.tree.postorder().len()
    }

    pub fn remaining_rows(&self) -> usize {
        self.total_rows() - self.cursor
    }

    /// Largest number of node vectors held at once so far.
    pub fn peak_pending(&self) -> usize {
        self.peak_pending
    }

    pub fn empty_batch(&self) -> EmbeddingBatch<f64> {
        EmbeddingBatch::new(self.n_samples(), self.n_samples_padded)
    }

    /// Next batch of at most `capacity` rows, or `None` once exhausted.
    pub fn next_batch(&mut self, capacity: usize) -> Option<EmbeddingBatch<f64>> {
        let mut batch = self.empty_batch();
        self.fill_batch(&mut batch, capacity).then_some(batch)
    }

    /// Refills `batch` in place. Returns false once exhausted.
    pub fn fill_batch(&mut self, batch: &mut EmbeddingBatch<f64>, capacity: usize) -> bool {
        assert!(capacity >= 1, "batch capacity must be at least 1");
        batch.clear();
        batch.n_samples = self.n_samples();
        batch.n_samples_padded = self.n_samples_padded;
        let postorder = self.tree.postorder();
        while batch.filled_embs() < capacity && self.cursor < postorder.len() {
            let node = postorder[self.cursor];
            self.cursor += 1;
            let vector = self.node_vector(node);
            batch.push_row(&vector, self.tree.node(node).branch_length);
            if self.tree.node(node).parent == Some(self.tree.root()) {
                self.spare.push(vector);
            } else {
                self.pending[node] = Some(vector);
                self.live += 1;
                self.peak_pending = self.peak_pending.max(self.live);
            }
        }
        batch.filled_embs() > 0
    }

    fn fresh(&mut self) -> Vec<f64> {
        match self.spare.pop() {
            Some(mut v) => {
                v.iter_mut().for_each(|x| *x = 0.0);
                v
            }
            None => vec![0.0; self.n_samples_padded],
        }
    }

    fn node_vector(&mut self, node: usize) -> Vec<f64> {
        let tree = self.tree;
        let children = &tree.node(node).children;
        if children.is_empty() {
            let mut v = self.fresh();
            let feature = self.leaf_feature[node].expect("leaf mapped to a feature");
            for &(s, value) in self.view.row(feature) {
                v[s] = value;
            }
            return v;
        }
        let mut acc = self.take_pending(children[0]);
        for &child in &children[1..] {
            let other = self.take_pending(child);
            match self.mode {
                EmbeddingMode::Weighted => {
                    acc.iter_mut().zip(&other).for_each(|(a, b)| *a += b);
                }
                EmbeddingMode::Unweighted => {
                    acc.iter_mut().zip(&other).for_each(|(a, b)| *a = a.max(*b));
                }
            }
            self.spare.push(other);
        }
        acc
    }

    fn take_pending(&mut self, node: usize) -> Vec<f64> {
        self.live -= 1;
        self.pending[node]
            .take()
            .expect("child emitted before parent")
    }
}
