use std::fmt;
use std::str::FromStr;

use num_traits::Float;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precision {
    Fp32,
    Fp64,
}

impl Precision {
    /// Bytes per value; also the precision code in stripe files.
    pub fn width(self) -> u8 {
        match self {
            Precision::Fp32 => 4,
            Precision::Fp64 => 8,
        }
    }

    pub fn from_width(width: u8) -> Option<Self> {
        match width {
            4 => Some(Precision::Fp32),
            8 => Some(Precision::Fp64),
            _ => None,
        }
    }

    /// Significant digits written to distance-matrix TSV.
    pub fn significant_digits(self) -> usize {
        match self {
            Precision::Fp32 => 9,
            Precision::Fp64 => 17,
        }
    }

    pub fn default_step_size(self) -> usize {
        match self {
            Precision::Fp32 => 32,
            Precision::Fp64 => 16,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Precision::Fp32 => "fp32",
            Precision::Fp64 => "fp64",
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fp32" => Ok(Precision::Fp32),
            "fp64" => Ok(Precision::Fp64),
            other => Err(format!("unknown precision '{other}'")),
        }
    }
}

/// Floating-point element type of the accumulation buffers.
pub trait Real: Float + Default + Send + Sync + fmt::Debug + 'static {
    const PRECISION: Precision;

    fn cast_from(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const PRECISION: Precision = Precision::Fp32;

    #[inline]
    fn cast_from(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::Fp64;

    #[inline]
    fn cast_from(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}
