//! Accumulation kernels.
//!
//! For stripe `s` and entry `k` the pair is `(k, (k + s + 1) mod n)`; each
//! embedding row `e` adds `f(u, v) * length[e]` to the entry, where `u` and
//! `v` are the row values at the two samples. Three loop structures are
//! provided:
//!
//! * `Naive`: one pass per embedding row, committing to the accumulator
//!   buffer for every row.
//! * `Batched`: entry-major, with a register-local running sum over all
//!   rows of the batch and one commit per entry per batch.
//! * `Tiled`: batched, reordered as sample tile / stripe / intra-tile so a
//!   tile of embedding columns is reused across every stripe while it is
//!   still in cache.
//!
//! All three add the per-row terms of an entry in the same order (rows
//! ascending, batches in order), so their results are bit-identical.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::embed::{Embedder, EmbeddingBatch, EmbeddingMode, DEFAULT_BATCH_CAPACITY};
use crate::newick::PhyloTree;
use crate::precision::{Precision, Real};
use crate::stripes::{condense, total_stripes, DistanceMatrix, StripeBlock, StripeSet};
use crate::table::SampleTable;
use crate::{Metric, UnifracError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("batch has {batch} samples but stripes have {stripes}")]
    SampleMismatch { batch: usize, stripes: usize },
    #[error("kernel configured for {config} but buffers are {buffers}")]
    PrecisionMismatch {
        config: Precision,
        buffers: Precision,
    },
    #[error("kernel configured for {config} but stripes hold {stripes}")]
    MetricMismatch { config: Metric, stripes: Metric },
    #[error("stripe set is already finalized")]
    AlreadyFinalized,
    #[error("batch capacity must be at least 1")]
    ZeroBatchCapacity,
    #[error("step size must be at least 1")]
    ZeroStepSize,
    #[error("step size {step} does not divide padded width {padded}")]
    StepSizeAlignment { step: usize, padded: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelVariant {
    Naive,
    Batched,
    Tiled,
}

impl KernelVariant {
    pub const ALL: [KernelVariant; 3] = [
        KernelVariant::Naive,
        KernelVariant::Batched,
        KernelVariant::Tiled,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            KernelVariant::Naive => "naive",
            KernelVariant::Batched => "batched",
            KernelVariant::Tiled => "tiled",
        }
    }
}

impl fmt::Display for KernelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown kernel variant '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelConfig {
    pub variant: KernelVariant,
    pub metric: Metric,
    pub precision: Precision,
    pub batch_capacity: usize,
    /// Tile width in samples.
    pub step_size: usize,
}

impl KernelConfig {
    pub fn new(variant: KernelVariant, metric: Metric, precision: Precision) -> Self {
        Self {
            variant,
            metric,
            precision,
            batch_capacity: DEFAULT_BATCH_CAPACITY,
            step_size: precision.default_step_size(),
        }
    }

    pub fn with_batch_capacity(mut self, capacity: usize) -> Self {
        self.batch_capacity = capacity;
        self
    }

    pub fn with_step_size(mut self, step: usize) -> Self {
        self.step_size = step;
        self
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if self.batch_capacity == 0 {
            return Err(KernelError::ZeroBatchCapacity);
        }
        if self.step_size == 0 {
            return Err(KernelError::ZeroStepSize);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KernelCounters {
    /// Read-modify-write commits to the distances buffer.
    pub accumulator_writes: u64,
    /// Embedding element loads.
    pub embedding_reads: u64,
    /// Batches accumulated.
    pub kernel_passes: u64,
}

impl KernelCounters {
    pub fn merge(&mut self, other: &KernelCounters) {
        self.accumulator_writes += other.accumulator_writes;
        self.embedding_reads += other.embedding_reads;
        self.kernel_passes += other.kernel_passes;
    }
}

/// Per-metric pair terms.
trait PairTerms<T: Real> {
    const TOTALS: bool;
    fn distance(u: T, v: T) -> T;
    fn total(u: T, v: T) -> T;
}

/// Presence values are 0/1, so XOR is `|u - v|` and OR is `max(u, v)`.
struct UnweightedTerms;
struct WeightedTerms;
struct NormalizedWeightedTerms;

impl<T: Real> PairTerms<T> for UnweightedTerms {
    const TOTALS: bool = true;
    #[inline(always)]
    fn distance(u: T, v: T) -> T {
        (u - v).abs()
    }
    #[inline(always)]
    fn total(u: T, v: T) -> T {
        u.max(v)
    }
}

impl<T: Real> PairTerms<T> for WeightedTerms {
    const TOTALS: bool = false;
    #[inline(always)]
    fn distance(u: T, v: T) -> T {
        (u - v).abs()
    }
    #[inline(always)]
    fn total(_: T, _: T) -> T {
        T::zero()
    }
}

impl<T: Real> PairTerms<T> for NormalizedWeightedTerms {
    const TOTALS: bool = true;
    #[inline(always)]
    fn distance(u: T, v: T) -> T {
        (u - v).abs()
    }
    #[inline(always)]
    fn total(u: T, v: T) -> T {
        u + v
    }
}

/// Contiguous runs of entries `[lo, hi)` whose partner index
/// `(k + offset) mod n` does not wrap, as `(start, end, partner_start)`.
#[inline]
fn runs(lo: usize, hi: usize, n: usize, offset: usize) -> [(usize, usize, usize); 2] {
    let split = (n - offset).clamp(lo, hi);
    [
        (lo, split, lo + offset),
        (split, hi, (split + offset).saturating_sub(n)),
    ]
}

fn check_inputs<T: Real>(
    n_samples: usize,
    metric: Metric,
    batch: &EmbeddingBatch<T>,
    config: &KernelConfig,
) -> Result<(), KernelError> {
    config.validate()?;
    if config.precision != T::PRECISION {
        return Err(KernelError::PrecisionMismatch {
            config: config.precision,
            buffers: T::PRECISION,
        });
    }
    if config.metric != metric {
        return Err(KernelError::MetricMismatch {
            config: config.metric,
            stripes: metric,
        });
    }
    if batch.n_samples() != n_samples {
        return Err(KernelError::SampleMismatch {
            batch: batch.n_samples(),
            stripes: n_samples,
        });
    }
    if !batch.n_samples_padded().is_multiple_of(config.step_size) {
        return Err(KernelError::StepSizeAlignment {
            step: config.step_size,
            padded: batch.n_samples_padded(),
        });
    }
    Ok(())
}

/// Adds one batch into `stripes`.
pub fn accumulate<T: Real>(
    stripes: &mut StripeSet<T>,
    batch: &EmbeddingBatch<T>,
    config: &KernelConfig,
    counters: &mut KernelCounters,
) -> Result<(), KernelError> {
    accumulate_parallel(stripes, batch, config, 1, counters)
}

/// Adds one batch into `stripes`, splitting its stripe range across
/// `workers` disjoint blocks run on the current rayon pool.
pub fn accumulate_parallel<T: Real>(
    stripes: &mut StripeSet<T>,
    batch: &EmbeddingBatch<T>,
    config: &KernelConfig,
    workers: usize,
    counters: &mut KernelCounters,
) -> Result<(), KernelError> {
    if stripes.is_finalized() {
        return Err(KernelError::AlreadyFinalized);
    }
    check_inputs(stripes.n_samples(), stripes.metric(), batch, config)?;
    let mut blocks = stripes.blocks_mut(workers);
    if blocks.len() == 1 {
        accumulate_block_unchecked(&mut blocks[0], batch, config, counters);
    } else {
        let partial: Vec<KernelCounters> = blocks
            .par_iter_mut()
            .map(|block| {
                let mut local = KernelCounters::default();
                accumulate_block_unchecked(block, batch, config, &mut local);
                local
            })
            .collect();
        for c in &partial {
            counters.merge(c);
        }
    }
    counters.kernel_passes += 1;
    Ok(())
}

/// Adds one batch into a worker-owned block. Does not count a kernel pass;
/// the caller dispatching the blocks does.
pub fn accumulate_block<T: Real>(
    block: &mut StripeBlock<'_, T>,
    batch: &EmbeddingBatch<T>,
    config: &KernelConfig,
    counters: &mut KernelCounters,
) -> Result<(), KernelError> {
    check_inputs(block.n_samples, config.metric, batch, config)?;
    if config.metric.is_normalized() != block.totals.is_some() {
        return Err(KernelError::MetricMismatch {
            config: config.metric,
            stripes: config.metric,
        });
    }
    accumulate_block_unchecked(block, batch, config, counters);
    Ok(())
}

fn accumulate_block_unchecked<T: Real>(
    block: &mut StripeBlock<'_, T>,
    batch: &EmbeddingBatch<T>,
    config: &KernelConfig,
    counters: &mut KernelCounters,
) {
    match config.metric {
        Metric::Unweighted => dispatch::<T, UnweightedTerms>(block, batch, config, counters),
        Metric::WeightedUnnormalized => {
            dispatch::<T, WeightedTerms>(block, batch, config, counters)
        }
        Metric::WeightedNormalized => {
            dispatch::<T, NormalizedWeightedTerms>(block, batch, config, counters)
        }
    }
}

fn dispatch<T: Real, M: PairTerms<T>>(
    block: &mut StripeBlock<'_, T>,
    batch: &EmbeddingBatch<T>,
    config: &KernelConfig,
    counters: &mut KernelCounters,
) {
    if batch.filled_embs() == 0 {
        return;
    }
    match config.variant {
        KernelVariant::Naive => naive::<T, M>(block, batch, counters),
        KernelVariant::Batched => batched::<T, M>(block, batch, counters),
        KernelVariant::Tiled => tiled::<T, M>(block, batch, config.step_size, counters),
    }
}

fn naive<T: Real, M: PairTerms<T>>(
    block: &mut StripeBlock<'_, T>,
    batch: &EmbeddingBatch<T>,
    counters: &mut KernelCounters,
) {
    let n = block.n_samples;
    let rows = block.stop - block.start;
    for e in 0..batch.filled_embs() {
        let emb = batch.row(e);
        let length = batch.lengths()[e];
        for r in 0..rows {
            let offset = block.start + r + 1;
            let dist = &mut block.distances[r * n..(r + 1) * n];
            for (lo, hi, partner) in runs(0, n, n, offset) {
                if lo == hi {
                    continue;
                }
                let us = &emb[lo..hi];
                let vs = &emb[partner..partner + (hi - lo)];
                for ((d, &u), &v) in dist[lo..hi].iter_mut().zip(us).zip(vs) {
                    *d = *d + M::distance(u, v) * length;
                }
            }
            if M::TOTALS {
                let totals = block.totals.as_deref_mut().expect("totals buffer");
                let tot = &mut totals[r * n..(r + 1) * n];
                for (lo, hi, partner) in runs(0, n, n, offset) {
                    if lo == hi {
                        continue;
                    }
                    let us = &emb[lo..hi];
                    let vs = &emb[partner..partner + (hi - lo)];
                    for ((t, &u), &v) in tot[lo..hi].iter_mut().zip(us).zip(vs) {
                        *t = *t + M::total(u, v) * length;
                    }
                }
            }
        }
        counters.accumulator_writes += (rows * n) as u64;
        counters.embedding_reads += (2 * rows * n) as u64;
    }
}

fn batched<T: Real, M: PairTerms<T>>(
    block: &mut StripeBlock<'_, T>,
    batch: &EmbeddingBatch<T>,
    counters: &mut KernelCounters,
) {
    let n = block.n_samples;
    let width = batch.n_samples_padded();
    let rows = block.stop - block.start;
    let filled = batch.filled_embs();
    let emb = batch.emb();
    let lengths = batch.lengths();
    for r in 0..rows {
        let offset = block.start + r + 1;
        for (lo, hi, partner) in runs(0, n, n, offset) {
            for (i, k) in (lo..hi).enumerate() {
                let b = partner + i;
                let idx = r * n + k;
                let mut my_stripe = block.distances[idx];
                let mut my_total = T::zero();
                if M::TOTALS {
                    my_total = block.totals.as_deref().expect("totals buffer")[idx];
                }
                for e in 0..filled {
                    let u = emb[e * width + k];
                    let v = emb[e * width + b];
                    my_stripe = my_stripe + M::distance(u, v) * lengths[e];
                    if M::TOTALS {
                        my_total = my_total + M::total(u, v) * lengths[e];
                    }
                }
                block.distances[idx] = my_stripe;
                if M::TOTALS {
                    block.totals.as_deref_mut().expect("totals buffer")[idx] = my_total;
                }
            }
        }
    }
    counters.accumulator_writes += (rows * n) as u64;
    counters.embedding_reads += (2 * rows * n * filled) as u64;
}

/// Stripes per row block in the tiled kernel; bounds the partner panel.
const TILE_ROWS: usize = 32;

fn tiled<T: Real, M: PairTerms<T>>(
    block: &mut StripeBlock<'_, T>,
    batch: &EmbeddingBatch<T>,
    step_size: usize,
    counters: &mut KernelCounters,
) {
    match step_size {
        16 => tiled_impl::<T, M, 16>(block, batch, step_size, counters),
        32 => tiled_impl::<T, M, 32>(block, batch, step_size, counters),
        _ => tiled_impl::<T, M, 0>(block, batch, step_size, counters),
    }
}

/// Copies `row[(from + j) % n]` for `j in 0..out.len()`.
#[inline]
fn copy_cyclic<T: Copy>(row: &[T], n: usize, from: usize, out: &mut [T]) {
    let from = from % n;
    let first = (n - from).min(out.len());
    out[..first].copy_from_slice(&row[from..from + first]);
    let mut at = first;
    while at < out.len() {
        let take = (out.len() - at).min(n);
        out[at..at + take].copy_from_slice(&row[..take]);
        at += take;
    }
}

/// For each tile of sample columns and block of stripes, the tile's own
/// columns and the partner window of every batch row are packed into
/// contiguous panels (resolving the cyclic wrap), so the inner loops run
/// on cache-resident data. `W` is the tile width when known at compile
/// time (0 otherwise); full tiles then accumulate in fixed-size arrays.
fn tiled_impl<T: Real, M: PairTerms<T>, const W: usize>(
    block: &mut StripeBlock<'_, T>,
    batch: &EmbeddingBatch<T>,
    step_size: usize,
    counters: &mut KernelCounters,
) {
    let n = block.n_samples;
    let rows = block.stop - block.start;
    let filled = batch.filled_embs();
    let lengths = &batch.lengths()[..filled];
    let width = batch.n_samples_padded();
    let emb = &batch.emb()[..filled * width];
    let row_block = TILE_ROWS.min(rows);
    let pitch = row_block + step_size;
    let mut own = vec![T::zero(); filled * step_size];
    let mut partners = vec![T::zero(); filled * pitch];
    let mut acc = vec![T::zero(); step_size];
    let mut acc_total = vec![T::zero(); if M::TOTALS { step_size } else { 0 }];

    for lo in (0..n).step_by(step_size) {
        let hi = (lo + step_size).min(n);
        let w = hi - lo;
        for (e, row) in emb.chunks_exact(width).enumerate() {
            own[e * step_size..e * step_size + w].copy_from_slice(&row[lo..hi]);
        }
        for r0 in (0..rows).step_by(row_block) {
            let r1 = (r0 + row_block).min(rows);
            // Partner of column lo + i in stripe row r is window slot (r - r0) + i.
            let window = r1 - r0 + w - 1;
            let from = lo + block.start + r0 + 1;
            for (e, row) in emb.chunks_exact(width).enumerate() {
                copy_cyclic(
                    &row[..n],
                    n,
                    from,
                    &mut partners[e * pitch..e * pitch + window],
                );
            }
            for r in r0..r1 {
                let shift = r - r0;
                let base = r * n;
                if W != 0 && w == W {
                    let mut a: [T; W] = block.distances[base + lo..base + hi]
                        .try_into()
                        .expect("tile width");
                    let mut t = [T::zero(); W];
                    if M::TOTALS {
                        let totals = block.totals.as_deref().expect("totals buffer");
                        t = totals[base + lo..base + hi].try_into().expect("tile width");
                    }
                    for e in 0..filled {
                        let length = lengths[e];
                        let us: &[T; W] = own[e * step_size..e * step_size + W]
                            .try_into()
                            .expect("tile width");
                        let at = e * pitch + shift;
                        let vs: &[T; W] = partners[at..at + W].try_into().expect("tile width");
                        for i in 0..W {
                            a[i] = a[i] + M::distance(us[i], vs[i]) * length;
                        }
                        if M::TOTALS {
                            for i in 0..W {
                                t[i] = t[i] + M::total(us[i], vs[i]) * length;
                            }
                        }
                    }
                    block.distances[base + lo..base + hi].copy_from_slice(&a);
                    if M::TOTALS {
                        let totals = block.totals.as_deref_mut().expect("totals buffer");
                        totals[base + lo..base + hi].copy_from_slice(&t);
                    }
                } else {
                    acc[..w].copy_from_slice(&block.distances[base + lo..base + hi]);
                    if M::TOTALS {
                        let totals = block.totals.as_deref().expect("totals buffer");
                        acc_total[..w].copy_from_slice(&totals[base + lo..base + hi]);
                    }
                    for e in 0..filled {
                        let length = lengths[e];
                        let us = &own[e * step_size..e * step_size + w];
                        let at = e * pitch + shift;
                        let vs = &partners[at..at + w];
                        for ((a, &u), &v) in acc[..w].iter_mut().zip(us).zip(vs) {
                            *a = *a + M::distance(u, v) * length;
                        }
                        if M::TOTALS {
                            for ((a, &u), &v) in acc_total[..w].iter_mut().zip(us).zip(vs) {
                                *a = *a + M::total(u, v) * length;
                            }
                        }
                    }
                    block.distances[base + lo..base + hi].copy_from_slice(&acc[..w]);
                    if M::TOTALS {
                        let totals = block.totals.as_deref_mut().expect("totals buffer");
                        totals[base + lo..base + hi].copy_from_slice(&acc_total[..w]);
                    }
                }
                counters.accumulator_writes += w as u64;
                counters.embedding_reads += (2 * w * filled) as u64;
            }
        }
    }
}

/// Divides distances by totals for normalized metrics (0/0 is 0).
pub fn finalize<T: Real>(stripes: &mut StripeSet<T>) -> Result<(), KernelError> {
    if stripes.is_finalized() {
        return Err(KernelError::AlreadyFinalized);
    }
    if let (distances, Some(totals)) = stripes.buffers_mut() {
        for (d, &t) in distances.iter_mut().zip(totals.iter()) {
            *d = if t == T::zero() { T::zero() } else { *d / t };
        }
    }
    stripes.set_finalized();
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComputeOptions {
    pub config: KernelConfig,
    /// Stripe range `[start, stop)`; the full range when `None`.
    pub range: Option<(usize, usize)>,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
}

impl ComputeOptions {
    pub fn new(config: KernelConfig) -> Self {
        Self {
            config,
            range: None,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ComputeOutput<T> {
    pub stripes: StripeSet<T>,
    pub counters: KernelCounters,
    pub sample_ids: Vec<String>,
    /// Embedding rows consumed (non-root nodes of the sheared tree).
    pub embedding_rows: usize,
}

impl<T: Real> ComputeOutput<T> {
    /// Condenses a full-range result into a matrix.
    pub fn to_matrix(&self) -> Result<DistanceMatrix, UnifracError> {
        Ok(condense(&[&self.stripes], self.sample_ids.clone())?)
    }
}

/// Restricts `tree` to the table's features. Every feature must be a leaf.
pub fn align_tree<'t>(
    tree: &'t PhyloTree,
    table: &SampleTable,
) -> Result<Cow<'t, PhyloTree>, UnifracError> {
    let leaves: std::collections::HashSet<&str> =
        tree.leaf_names().iter().map(String::as_str).collect();
    let missing: Vec<&String> = table
        .feature_ids()
        .iter()
        .filter(|f| !leaves.contains(f.as_str()))
        .collect();
    if let Some(first) = missing.first() {
        return Err(UnifracError::FeatureNotInTree {
            count: missing.len(),
            example: first.to_string(),
        });
    }
    if leaves.len() == table.n_features() {
        Ok(Cow::Borrowed(tree))
    } else {
        Ok(Cow::Owned(tree.shear(table.feature_ids())?))
    }
}

/// End-to-end: align, embed, accumulate every batch and finalize.
pub fn compute_unifrac<T: Real>(
    tree: &PhyloTree,
    table: &SampleTable,
    options: &ComputeOptions,
) -> Result<ComputeOutput<T>, UnifracError> {
    let config = &options.config;
    config.validate()?;
    if config.precision != T::PRECISION {
        return Err(KernelError::PrecisionMismatch {
            config: config.precision,
            buffers: T::PRECISION,
        }
        .into());
    }
    let n = table.n_samples();
    let (start, stop) = match options.range {
        Some(r) => r,
        None => (0, total_stripes(n)?),
    };
    let tree = align_tree(tree, table)?;
    let mut embedder = Embedder::new(&tree, table, EmbeddingMode::from(config.metric))?
        .with_alignment(config.step_size)?;
    let embedding_rows = embedder.total_rows();
    let mut stripes = StripeSet::<T>::allocate(n, start, stop, config.metric)?;
    let mut counters = KernelCounters::default();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.threads)
        .build()
        .map_err(|e| UnifracError::ThreadPool(e.to_string()))?;
    let workers = pool.current_num_threads();

    let mut raw = embedder.empty_batch();
    let mut batch = EmbeddingBatch::<T>::new(n, embedder.n_samples_padded());
    pool.install(|| -> Result<(), UnifracError> {
        while embedder.fill_batch(&mut raw, config.batch_capacity) {
            raw.cast_into(&mut batch);
            accumulate_parallel(&mut stripes, &batch, config, workers, &mut counters)?;
        }
        Ok(())
    })?;
    finalize(&mut stripes)?;

    Ok(ComputeOutput {
        stripes,
        counters,
        sample_ids: table.sample_ids().to_vec(),
        embedding_rows,
    })
}

/// Full matrix at the configured precision.
pub fn compute_matrix(
    tree: &PhyloTree,
    table: &SampleTable,
    config: KernelConfig,
    threads: usize,
) -> Result<DistanceMatrix, UnifracError> {
    let options = ComputeOptions {
        config,
        range: None,
        threads,
    };
    match config.precision {
        Precision::Fp32 => compute_unifrac::<f32>(tree, table, &options)?.to_matrix(),
        Precision::Fp64 => compute_unifrac::<f64>(tree, table, &options)?.to_matrix(),
    }
}
