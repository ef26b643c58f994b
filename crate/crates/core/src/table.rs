//! The K-anonymous summary table and its wire forms (JSON and CSV).

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{FedError, Result};
use crate::num::Real;

/// Minimum nonzero cell count `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct PrivacyParam(u32);

impl PrivacyParam {
    pub fn new(k: u32) -> Result<Self> {
        if k == 0 {
            return Err(FedError::InvalidInput("k must be at least 1".into()));
        }
        Ok(Self(k))
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// True when `count` may be released: zero or at least `k`.
    pub fn admits(self, count: usize) -> bool {
        count == 0 || count >= self.0 as usize
    }

    /// Same test for a fractional released quantity.
    pub fn admits_real<T: Real>(self, value: T) -> bool {
        value == T::zero() || value >= T::from_count(self.0 as usize)
    }
}

impl Default for PrivacyParam {
    fn default() -> Self {
        Self(10)
    }
}

impl TryFrom<u32> for PrivacyParam {
    type Error = FedError;
    fn try_from(k: u32) -> Result<Self> {
        Self::new(k)
    }
}

impl From<PrivacyParam> for u32 {
    fn from(k: PrivacyParam) -> u32 {
        k.0
    }
}

/// How the outermost limits `c_0` and `c_B` are released.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ExtremePolicy {
    /// `c_0 = -inf`, `c_B = +inf`.
    Infinite,
    /// Caller-supplied domain limits; data outside them is rejected.
    Natural { low: f64, high: f64 },
    /// Extend the extreme data values by the mean gap inside the extreme bin.
    #[default]
    Buffer,
}

/// Bins `(c_{b-1}, c_b]` with per-group, possibly fractional, frequencies.
///
/// The first bin also contains `c_0` itself, so a block of tied minimum
/// values released with a zero buffer stays inside the table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable<T> {
    pub boundaries: Vec<T>,
    pub fx: Vec<T>,
    pub fy: Vec<T>,
    pub k: PrivacyParam,
}

impl<T: Real> SummaryTable<T> {
    pub fn new(boundaries: Vec<T>, fx: Vec<T>, fy: Vec<T>, k: PrivacyParam) -> Result<Self> {
        let table = Self {
            boundaries,
            fx,
            fy,
            k,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn bins(&self) -> usize {
        self.fx.len()
    }

    pub fn total_x(&self) -> T {
        self.fx.iter().copied().sum()
    }

    pub fn total_y(&self) -> T {
        self.fy.iter().copied().sum()
    }

    pub fn lower(&self) -> T {
        self.boundaries[0]
    }

    pub fn upper(&self) -> T {
        self.boundaries[self.boundaries.len() - 1]
    }

    /// Interior limits `c_1 .. c_{B-1}`.
    pub fn interior(&self) -> &[T] {
        &self.boundaries[1..self.boundaries.len() - 1]
    }

    /// Zero-based bin holding `value`. Values beyond the outer limits clamp
    /// to the extreme bins.
    pub fn bin_index(&self, value: T) -> usize {
        self.interior().partition_point(|&c| c < value)
    }

    /// Frequencies of one group.
    pub fn freqs(&self, group: crate::error::Group) -> &[T] {
        match group {
            crate::error::Group::X => &self.fx,
            crate::error::Group::Y => &self.fy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.fx.len();
        if b == 0 {
            return Err(FedError::InvalidInput("table has no bins".into()));
        }
        if self.fy.len() != b || self.boundaries.len() != b + 1 {
            return Err(FedError::InvalidInput(format!(
                "table shape mismatch: {} boundaries, {} fx, {} fy",
                self.boundaries.len(),
                b,
                self.fy.len()
            )));
        }
        if self.boundaries.iter().any(|c| c.is_nan()) {
            return Err(FedError::InvalidInput("NaN boundary".into()));
        }
        // A single bin made of one tied value may have c_0 == c_1.
        let strict_from = if b == 1 { 1 } else { 0 };
        for (i, w) in self.boundaries.windows(2).enumerate() {
            let ok = if i < strict_from {
                w[0] <= w[1]
            } else {
                w[0] < w[1]
            };
            if !ok {
                return Err(FedError::InvalidInput(format!(
                    "boundaries not increasing at index {i}: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if self
            .fx
            .iter()
            .chain(self.fy.iter())
            .any(|f| !f.is_finite() || *f < T::zero())
        {
            return Err(FedError::InvalidInput(
                "frequencies must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Converts the scalar type, e.g. to `f64` for the wire.
    pub fn cast<U: Real>(&self) -> SummaryTable<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::lit(x.as_f64())).collect();
        SummaryTable {
            boundaries: conv(&self.boundaries),
            fx: conv(&self.fx),
            fy: conv(&self.fy),
            k: self.k,
        }
    }

    /// CSV with header `bin_low,bin_high,fx,fy`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_low,bin_high,fx,fy\n");
        for b in 0..self.bins() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                fmt_bound(self.boundaries[b].as_f64()),
                fmt_bound(self.boundaries[b + 1].as_f64()),
                self.fx[b].as_f64(),
                self.fy[b].as_f64()
            ));
        }
        out
    }
}

fn fmt_bound(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

/// A boundary on the wire: a number, or the strings `"-inf"` / `"+inf"`.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum WireBound {
    Num(f64),
    Text(String),
}

impl WireBound {
    fn from_f64(v: f64) -> Self {
        if v.is_infinite() {
            WireBound::Text(fmt_bound(v))
        } else {
            WireBound::Num(v)
        }
    }

    fn to_f64(&self) -> std::result::Result<f64, String> {
        match self {
            WireBound::Num(v) => Ok(*v),
            WireBound::Text(s) => match s.as_str() {
                "-inf" => Ok(f64::NEG_INFINITY),
                "+inf" | "inf" => Ok(f64::INFINITY),
                other => Err(format!("invalid boundary {other:?}")),
            },
        }
    }
}

#[derive(Serialize, Deserialize)]
struct WireTable {
    k: u32,
    boundaries: Vec<WireBound>,
    fx: Vec<f64>,
    fy: Vec<f64>,
}

impl<T: Real> Serialize for SummaryTable<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        WireTable {
            k: self.k.get(),
            boundaries: self
                .boundaries
                .iter()
                .map(|c| WireBound::from_f64(c.as_f64()))
                .collect(),
            fx: self.fx.iter().map(|f| f.as_f64()).collect(),
            fy: self.fy.iter().map(|f| f.as_f64()).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de, T: Real> Deserialize<'de> for SummaryTable<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let wire = WireTable::deserialize(deserializer)?;
        let boundaries = wire
            .boundaries
            .iter()
            .map(|b| b.to_f64().map(T::lit))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(D::Error::custom)?;
        let k = PrivacyParam::new(wire.k).map_err(D::Error::custom)?;
        SummaryTable::new(
            boundaries,
            wire.fx.into_iter().map(T::lit).collect(),
            wire.fy.into_iter().map(T::lit).collect(),
            k,
        )
        .map_err(D::Error::custom)
    }
}
