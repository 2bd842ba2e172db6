//! Stripe address space and the unified accumulator buffers.
//!
//! Stripe `s` of an `n`-sample matrix holds one entry per sample `k`, the
//! distance between `k` and `(k + s + 1) mod n`. With `floor(n/2)` stripes
//! every unordered pair is covered exactly once for odd `n`; for even `n`
//! the second half of the last stripe repeats its first half.

mod file;
mod matrix;

pub use file::{
    read_stripe_file, write_stripe_file, AnyStripeSet, StripeFileError, STRIPE_MAGIC,
    STRIPE_VERSION,
};
pub use matrix::{format_significant, DistanceMatrix, MatrixError};

use thiserror::Error;

use crate::precision::{Precision, Real};
use crate::Metric;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StripeError {
    #[error("at least 2 samples are required, got {0}")]
    TooFewSamples(usize),
    #[error("stripe {stripe} out of range for {n} samples ({total} stripes)")]
    StripeOutOfRange {
        stripe: usize,
        n: usize,
        total: usize,
    },
    #[error("sample index {k} out of range for {n} samples")]
    SampleOutOfRange { k: usize, n: usize },
    #[error("invalid stripe range {start}:{stop} (total {total})")]
    InvalidRange {
        start: usize,
        stop: usize,
        total: usize,
    },
    #[error("cannot allocate {bytes} bytes for stripe buffers")]
    Allocation { bytes: usize },
    #[error("no stripe parts to condense")]
    NoParts,
    #[error("stripe parts disagree on {0}")]
    MetadataMismatch(&'static str),
    #[error("stripe part {start}:{stop} is not finalized")]
    NotFinalized { start: usize, stop: usize },
    #[error("stripe ranges leave a gap at {start}:{stop}")]
    Gap { start: usize, stop: usize },
    #[error("stripe ranges overlap at {start}:{stop}")]
    Overlap { start: usize, stop: usize },
    #[error("duplicated slot for pair ({a}, {b}) disagrees: {x} vs {y}")]
    DuplicateMismatch { a: usize, b: usize, x: f64, y: f64 },
    #[error("expected {expected} sample ids, got {got}")]
    SampleIds { expected: usize, got: usize },
}

pub fn total_stripes(n: usize) -> Result<usize, StripeError> {
    if n < 2 {
        return Err(StripeError::TooFewSamples(n));
    }
    Ok(n / 2)
}

/// The pair of samples held at entry `k` of `stripe`.
pub fn stripe_pair(n: usize, stripe: usize, k: usize) -> Result<(usize, usize), StripeError> {
    let total = total_stripes(n)?;
    if stripe >= total {
        return Err(StripeError::StripeOutOfRange { stripe, n, total });
    }
    if k >= n {
        return Err(StripeError::SampleOutOfRange { k, n });
    }
    Ok((k, (k + stripe + 1) % n))
}

/// Accumulators for stripes `[start, stop)`, stored contiguously as
/// `(stripe - start) * n_samples + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct StripeSet<T> {
    n_samples: usize,
    start: usize,
    stop: usize,
    metric: Metric,
    distances: Vec<T>,
    totals: Option<Vec<T>>,
    finalized: bool,
}

fn zeroed<T: Real>(len: usize) -> Result<Vec<T>, StripeError> {
    let mut v = Vec::new();
    v.try_reserve_exact(len)
        .map_err(|_| StripeError::Allocation {
            bytes: len.saturating_mul(std::mem::size_of::<T>()),
        })?;
    v.resize(len, T::zero());
    Ok(v)
}

impl<T: Real> StripeSet<T> {
    /// Zero-initialized buffers; `totals` exists only for normalized metrics.
    pub fn allocate(
        n_samples: usize,
        start: usize,
        stop: usize,
        metric: Metric,
    ) -> Result<Self, StripeError> {
        let total = total_stripes(n_samples)?;
        if start >= stop || stop > total {
            return Err(StripeError::InvalidRange { start, stop, total });
        }
        let len = (stop - start)
            .checked_mul(n_samples)
            .ok_or(StripeError::Allocation { bytes: usize::MAX })?;
        let distances = zeroed(len)?;
        let totals = if metric.is_normalized() {
            Some(zeroed(len)?)
        } else {
            None
        };
        Ok(Self {
            n_samples,
            start,
            stop,
            metric,
            distances,
            totals,
            finalized: false,
        })
    }

    pub(crate) fn from_parts(
        n_samples: usize,
        start: usize,
        stop: usize,
        metric: Metric,
        distances: Vec<T>,
        totals: Option<Vec<T>>,
        finalized: bool,
    ) -> Self {
        Self {
            n_samples,
            start,
            stop,
            metric,
            distances,
            totals,
            finalized,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn stop(&self) -> usize {
        self.stop
    }

    pub fn n_stripes(&self) -> usize {
        self.stop - self.start
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    pub(crate) fn set_finalized(&mut self) {
        self.finalized = true;
    }

    pub fn distances(&self) -> &[T] {
        &self.distances
    }

    pub fn totals(&self) -> Option<&[T]> {
        self.totals.as_deref()
    }

    pub(crate) fn buffers_mut(&mut self) -> (&mut [T], Option<&mut [T]>) {
        (&mut self.distances, self.totals.as_deref_mut())
    }

    /// Value at global stripe index `stripe`, entry `k`.
    pub fn get(&self, stripe: usize, k: usize) -> T {
        assert!(stripe >= self.start && stripe < self.stop && k < self.n_samples);
        self.distances[(stripe - self.start) * self.n_samples + k]
    }

    /// Splits the stripe rows into up to `parts` contiguous blocks that can
    /// be written by different workers.
    pub fn blocks_mut(&mut self, parts: usize) -> Vec<StripeBlock<'_, T>> {
        let n = self.n_samples;
        let rows = self.stop - self.start;
        let parts = parts.clamp(1, rows);
        let per = rows.div_ceil(parts);
        let start = self.start;
        let mut out = Vec::with_capacity(parts);
        let mut totals = self.totals.as_deref_mut().map(|t| t.chunks_mut(per * n));
        for (i, distances) in self.distances.chunks_mut(per * n).enumerate() {
            let block_start = start + i * per;
            let rows_here = distances.len() / n;
            out.push(StripeBlock {
                n_samples: n,
                start: block_start,
                stop: block_start + rows_here,
                distances,
                totals: totals.as_mut().and_then(|it| it.next()),
            });
        }
        out
    }
}

/// Mutable view over a contiguous sub-range of a [`StripeSet`].
pub struct StripeBlock<'a, T> {
    pub n_samples: usize,
    pub start: usize,
    pub stop: usize,
    pub distances: &'a mut [T],
    pub totals: Option<&'a mut [T]>,
}

fn duplicates_agree<T: Real>(x: T, y: T) -> bool {
    match T::PRECISION {
        Precision::Fp64 => x == y,
        Precision::Fp32 => {
            let (x, y) = (x.as_f64(), y.as_f64());
            (x - y).abs() <= 1e-6 * x.abs().max(y.abs())
        }
    }
}

/// Reassembles finalized parts that exactly tile `[0, total_stripes(n))`
/// into the full symmetric matrix.
pub fn condense<T: Real>(
    parts: &[&StripeSet<T>],
    sample_ids: Vec<String>,
) -> Result<DistanceMatrix, StripeError> {
    let first = parts.first().ok_or(StripeError::NoParts)?;
    let n = first.n_samples;
    let metric = first.metric;
    for p in parts {
        if p.n_samples != n {
            return Err(StripeError::MetadataMismatch("n_samples"));
        }
        if p.metric != metric {
            return Err(StripeError::MetadataMismatch("metric"));
        }
        if !p.finalized {
            return Err(StripeError::NotFinalized {
                start: p.start,
                stop: p.stop,
            });
        }
    }
    if sample_ids.len() != n {
        return Err(StripeError::SampleIds {
            expected: n,
            got: sample_ids.len(),
        });
    }
    let total = total_stripes(n)?;
    let mut sorted: Vec<&StripeSet<T>> = parts.to_vec();
    sorted.sort_by_key(|p| (p.start, p.stop));
    let mut covered = 0;
    for p in &sorted {
        if p.start > covered {
            return Err(StripeError::Gap {
                start: covered,
                stop: p.start,
            });
        }
        if p.start < covered {
            return Err(StripeError::Overlap {
                start: p.start,
                stop: covered.min(p.stop),
            });
        }
        covered = p.stop;
    }
    if covered < total {
        return Err(StripeError::Gap {
            start: covered,
            stop: total,
        });
    }

    let mut values = vec![0.0; n * n];
    let half = n / 2;
    for p in &sorted {
        for stripe in p.start..p.stop {
            let row = &p.distances[(stripe - p.start) * n..(stripe - p.start + 1) * n];
            let duplicated = n % 2 == 0 && stripe == total - 1;
            for (k, &v) in row.iter().enumerate() {
                let (a, b) = (k, (k + stripe + 1) % n);
                if duplicated && k >= half {
                    let twin = row[k - half];
                    if !duplicates_agree(v, twin) {
                        return Err(StripeError::DuplicateMismatch {
                            a,
                            b,
                            x: twin.as_f64(),
                            y: v.as_f64(),
                        });
                    }
                    continue;
                }
                let v = v.as_f64();
                values[a * n + b] = v;
                values[b * n + a] = v;
            }
        }
    }
    Ok(DistanceMatrix::from_values_unchecked(
        sample_ids,
        values,
        T::PRECISION,
    ))
}
