use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Unweighted,
    WeightedUnnormalized,
    WeightedNormalized,
}

impl Metric {
    pub const ALL: [Metric; 3] = [
        Metric::Unweighted,
        Metric::WeightedUnnormalized,
        Metric::WeightedNormalized,
    ];

    /// Whether the metric keeps a totals accumulator and divides by it.
    pub fn is_normalized(self) -> bool {
        !matches!(self, Metric::WeightedUnnormalized)
    }

    pub fn is_weighted(self) -> bool {
        !matches!(self, Metric::Unweighted)
    }

    /// Metric code stored in stripe files.
    pub fn code(self) -> u8 {
        match self {
            Metric::Unweighted => 0,
            Metric::WeightedUnnormalized => 1,
            Metric::WeightedNormalized => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.code() == code)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Unweighted => "unweighted",
            Metric::WeightedUnnormalized => "weighted-unnormalized",
            Metric::WeightedNormalized => "weighted-normalized",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown metric '{s}'"))
    }
}
