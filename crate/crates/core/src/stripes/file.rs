//! Binary partial-stripe files.
//!
//! Layout (little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "STRF"
//!      4     1  version (1)
//!      5     1  precision: bytes per value (4 | 8)
//!      6     1  metric code (0 unweighted, 1 weighted-unnormalized, 2 weighted-normalized)
//!      7     1  reserved (0)
//!      8     8  n_samples
//!     16     8  start stripe
//!     24     8  stop stripe
//!     32     -  distances, (stop - start) * n_samples values, row-major by stripe
//!      -     -  totals, same shape, normalized metrics only
//!      -     8  FNV-1a 64 checksum of the value bytes
//! ```

use thiserror::Error;

use super::StripeSet;
use crate::precision::{Precision, Real};
use crate::Metric;

pub const STRIPE_MAGIC: &[u8; 4] = b"STRF";
pub const STRIPE_VERSION: u8 = 1;
const HEADER_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum StripeFileError {
    #[error("stripe set must be finalized before it is written")]
    NotFinalized,
    #[error("file is too short ({0} bytes)")]
    Truncated(usize),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported stripe file version {0}")]
    Version(u8),
    #[error("invalid precision code {0}")]
    PrecisionCode(u8),
    #[error("invalid metric code {0}")]
    MetricCode(u8),
    #[error("payload size {got} does not match header ({expected} expected)")]
    PayloadSize { expected: usize, got: usize },
    #[error("checksum mismatch")]
    Checksum,
    #[error(transparent)]
    Range(#[from] super::StripeError),
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

/// A stripe set of either precision, as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyStripeSet {
    F32(StripeSet<f32>),
    F64(StripeSet<f64>),
}

impl AnyStripeSet {
    pub fn precision(&self) -> Precision {
        match self {
            AnyStripeSet::F32(_) => Precision::Fp32,
            AnyStripeSet::F64(_) => Precision::Fp64,
        }
    }

    pub fn range(&self) -> (usize, usize) {
        match self {
            AnyStripeSet::F32(s) => (s.start(), s.stop()),
            AnyStripeSet::F64(s) => (s.start(), s.stop()),
        }
    }

    pub fn n_samples(&self) -> usize {
        match self {
            AnyStripeSet::F32(s) => s.n_samples(),
            AnyStripeSet::F64(s) => s.n_samples(),
        }
    }

    pub fn metric(&self) -> Metric {
        match self {
            AnyStripeSet::F32(s) => s.metric(),
            AnyStripeSet::F64(s) => s.metric(),
        }
    }
}

impl From<StripeSet<f32>> for AnyStripeSet {
    fn from(s: StripeSet<f32>) -> Self {
        AnyStripeSet::F32(s)
    }
}

impl From<StripeSet<f64>> for AnyStripeSet {
    fn from(s: StripeSet<f64>) -> Self {
        AnyStripeSet::F64(s)
    }
}

pub fn write_stripe_file<T: Real>(set: &StripeSet<T>) -> Result<Vec<u8>, StripeFileError> {
    if !set.is_finalized() {
        return Err(StripeFileError::NotFinalized);
    }
    let width = T::PRECISION.width() as usize;
    let values = set.distances().len() + set.totals().map_or(0, <[T]>::len);
    let mut out = Vec::with_capacity(HEADER_LEN + values * width + 8);
    out.extend_from_slice(STRIPE_MAGIC);
    out.push(STRIPE_VERSION);
    out.push(T::PRECISION.width());
    out.push(set.metric().code());
    out.push(0);
    for v in [set.n_samples(), set.start(), set.stop()] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for &v in set.distances() {
        v.write_le(&mut out);
    }
    if let Some(totals) = set.totals() {
        for &v in totals {
            v.write_le(&mut out);
        }
    }
    let checksum = fnv1a64(&out[HEADER_LEN..]);
    out.extend_from_slice(&checksum.to_le_bytes());
    Ok(out)
}

fn read_u64(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"))
}

pub fn read_stripe_file(bytes: &[u8]) -> Result<AnyStripeSet, StripeFileError> {
    if bytes.len() < HEADER_LEN + 8 {
        return Err(StripeFileError::Truncated(bytes.len()));
    }
    if &bytes[..4] != STRIPE_MAGIC {
        return Err(StripeFileError::BadMagic);
    }
    if bytes[4] != STRIPE_VERSION {
        return Err(StripeFileError::Version(bytes[4]));
    }
    let precision =
        Precision::from_width(bytes[5]).ok_or(StripeFileError::PrecisionCode(bytes[5]))?;
    let metric = Metric::from_code(bytes[6]).ok_or(StripeFileError::MetricCode(bytes[6]))?;
    let n = read_u64(bytes, 8) as usize;
    let start = read_u64(bytes, 16) as usize;
    let stop = read_u64(bytes, 24) as usize;
    let total = super::total_stripes(n)?;
    if start >= stop || stop > total {
        return Err(super::StripeError::InvalidRange { start, stop, total }.into());
    }
    let payload = &bytes[HEADER_LEN..bytes.len() - 8];
    let checksum = read_u64(bytes, bytes.len() - 8);
    let per_buffer = (stop - start) * n;
    let buffers = if metric.is_normalized() { 2 } else { 1 };
    let expected = per_buffer * buffers * precision.width() as usize;
    if payload.len() != expected {
        return Err(StripeFileError::PayloadSize {
            expected,
            got: payload.len(),
        });
    }
    if fnv1a64(payload) != checksum {
        return Err(StripeFileError::Checksum);
    }
    Ok(match precision {
        Precision::Fp32 => decode::<f32>(payload, n, start, stop, metric, per_buffer).into(),
        Precision::Fp64 => decode::<f64>(payload, n, start, stop, metric, per_buffer).into(),
    })
}

fn decode<T: Real>(
    payload: &[u8],
    n: usize,
    start: usize,
    stop: usize,
    metric: Metric,
    per_buffer: usize,
) -> StripeSet<T> {
    let width = T::PRECISION.width() as usize;
    let mut values = payload.chunks_exact(width).map(T::read_le);
    let distances: Vec<T> = values.by_ref().take(per_buffer).collect();
    let totals = metric.is_normalized().then(|| values.collect());
    StripeSet::from_parts(n, start, stop, metric, distances, totals, true)
}
