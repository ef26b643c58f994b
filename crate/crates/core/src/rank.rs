//! Mann-Whitney U statistics and the federated ways of combining them.
//!
//! `U` here is the signed pair count `Σ_i Σ_j S(X_i, Y_j)` with `S = +1`
//! when `Y_j > X_i`, so `E[U] = 0` under the null and its tie-corrected null
//! variance is `mn(N+1)/3 · [1 − Σ(t³−t) / (N(N²−1))]`.

use serde::{Deserialize, Serialize};

use crate::binning::GroupedSample;
use crate::error::{FedError, Result};
use crate::num::Real;
use crate::special::{chi_square_sf, normal_cdf_pair};
use crate::table::SummaryTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sidedness {
    #[default]
    Two,
    /// Alternative: `y` tends to exceed `x`.
    Greater,
    /// Alternative: `y` tends to fall below `x`.
    Less,
}

impl std::str::FromStr for Sidedness {
    type Err = FedError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two" | "two-sided" => Ok(Sidedness::Two),
            "greater" => Ok(Sidedness::Greater),
            "less" => Ok(Sidedness::Less),
            other => Err(FedError::InvalidInput(format!(
                "unknown sidedness {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Sum,
    Weighted,
    Fisher,
    FederatedTable,
    Combined,
}

impl TestMethod {
    pub const ALL: [TestMethod; 5] = [
        TestMethod::Combined,
        TestMethod::FederatedTable,
        TestMethod::Fisher,
        TestMethod::Sum,
        TestMethod::Weighted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TestMethod::Sum => "sum",
            TestMethod::Weighted => "weighted",
            TestMethod::Fisher => "fisher",
            TestMethod::FederatedTable => "federated_table",
            TestMethod::Combined => "combined",
        }
    }
}

impl std::str::FromStr for TestMethod {
    type Err = FedError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(TestMethod::Sum),
            "weighted" => Ok(TestMethod::Weighted),
            "fisher" => Ok(TestMethod::Fisher),
            "fedtable" | "federated_table" | "federated" => Ok(TestMethod::FederatedTable),
            "combined" => Ok(TestMethod::Combined),
            other => Err(FedError::InvalidInput(format!(
                "unknown test method {other:?}"
            ))),
        }
    }
}

/// Per-center statistic bundle released to the coordinator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterTestStat<T> {
    pub n: usize,
    pub m: usize,
    pub u: T,
    pub v: T,
    pub z: T,
    pub p: T,
}

impl<T: Real> CenterTestStat<T> {
    /// Derives `Z` and `p`; a zero variance yields `Z = 0`, `p = 1`.
    pub fn from_parts(n: usize, m: usize, u: T, v: T, sided: Sidedness) -> Self {
        let (z, p) = if v > T::zero() {
            let z = u / v.sqrt();
            (z, p_value(z, sided))
        } else {
            (T::zero(), T::one())
        };
        Self { n, m, u, v, z, p }
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.v > T::zero())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedTestResult<T> {
    pub method: TestMethod,
    pub statistic: T,
    pub p_value: T,
    pub sidedness: Sidedness,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Normal-approximation p-value of a standardized statistic.
pub fn p_value<T: Real>(z: T, sided: Sidedness) -> T {
    let (cdf, sf) = normal_cdf_pair(z);
    let p = match sided {
        Sidedness::Two => {
            let (_, tail) = normal_cdf_pair(z.abs());
            tail + tail
        }
        Sidedness::Greater => sf,
        Sidedness::Less => cdf,
    };
    p.min(T::one()).max(T::zero())
}

fn sorted<T: Real>(v: &[T]) -> Vec<T> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("NaN in sample"));
    s
}

/// Signed pair count, `O(N log N)` via sorting and a merge scan.
pub fn mwu_u<T: Real>(x: &[T], y: &[T]) -> Result<T> {
    if x.is_empty() || y.is_empty() {
        return Err(FedError::EmptyGroup);
    }
    let xs = sorted(x);
    let ys = sorted(y);
    let n = xs.len() as i64;
    let (mut lt, mut le) = (0usize, 0usize);
    let mut acc: i64 = 0;
    for &yv in &ys {
        while lt < xs.len() && xs[lt] < yv {
            lt += 1;
        }
        if le < lt {
            le = lt;
        }
        while le < xs.len() && xs[le] <= yv {
            le += 1;
        }
        // (#x < y) − (#x > y)
        acc += lt as i64 - (n - le as i64);
    }
    Ok(T::lit(acc as f64))
}

/// Tie-corrected null variance of [`mwu_u`] from group sizes and tie counts.
pub fn null_variance_from_ties<T: Real>(n: T, m: T, ties: impl Iterator<Item = T>) -> T {
    let big_n = n + m;
    let three = T::lit(3.0);
    let base = m * n * (big_n + T::one()) / three;
    let denom = big_n * (big_n * big_n - T::one());
    if !(denom > T::zero()) {
        return T::zero();
    }
    let tie_term: T = ties.map(|t| t * t * t - t).sum();
    (base * (T::one() - tie_term / denom)).max(T::zero())
}

/// Tie-corrected null variance of `U` for raw samples.
pub fn mwu_var_h0<T: Real>(x: &[T], y: &[T]) -> Result<T> {
    if x.is_empty() || y.is_empty() {
        return Err(FedError::EmptyGroup);
    }
    let mut pooled: Vec<T> = x.iter().chain(y).copied().collect();
    pooled.sort_by(|a, b| a.partial_cmp(b).expect("NaN in sample"));
    let mut ties = Vec::new();
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i + 1;
        while j < pooled.len() && pooled[j] == pooled[i] {
            j += 1;
        }
        if j - i > 1 {
            ties.push(T::from_count(j - i));
        }
        i = j;
    }
    Ok(null_variance_from_ties(
        T::from_count(x.len()),
        T::from_count(y.len()),
        ties.into_iter(),
    ))
}

/// Per-center test statistic. Fails with `ZeroVariance` when every pooled value is tied.
pub fn center_stat<T: Real>(
    sample: &GroupedSample<T>,
    sided: Sidedness,
) -> Result<CenterTestStat<T>> {
    let stat = center_stat_lenient(sample, sided)?;
    if stat.is_degenerate() {
        return Err(FedError::ZeroVariance);
    }
    Ok(stat)
}

/// Like [`center_stat`] but reports a degenerate center as `Z = 0`, `p = 1`.
pub fn center_stat_lenient<T: Real>(
    sample: &GroupedSample<T>,
    sided: Sidedness,
) -> Result<CenterTestStat<T>> {
    let u = mwu_u(&sample.x, &sample.y)?;
    let v = mwu_var_h0(&sample.x, &sample.y)?;
    Ok(CenterTestStat::from_parts(
        sample.x.len(),
        sample.y.len(),
        u,
        v,
        sided,
    ))
}

fn usable<T: Real>(stats: &[CenterTestStat<T>]) -> Result<(Vec<&CenterTestStat<T>>, Vec<String>)> {
    if stats.is_empty() {
        return Err(FedError::InvalidInput("no centers".into()));
    }
    let mut warnings = Vec::new();
    let kept: Vec<_> = stats
        .iter()
        .enumerate()
        .filter(|(i, s)| {
            if s.is_degenerate() {
                warnings.push(format!(
                    "center {i} has zero null variance and was excluded"
                ));
                log::warn!("center {i} has zero null variance and was excluded");
                false
            } else {
                true
            }
        })
        .map(|(_, s)| s)
        .collect();
    if kept.is_empty() {
        return Err(FedError::AllZeroVariance);
    }
    Ok((kept, warnings))
}

/// `ΣU_l / √(ΣV_l)`, referred to the standard normal.
pub fn t_sum<T: Real>(
    stats: &[CenterTestStat<T>],
    sided: Sidedness,
) -> Result<CombinedTestResult<T>> {
    let (kept, warnings) = usable(stats)?;
    let u: T = kept.iter().map(|s| s.u).sum();
    let v: T = kept.iter().map(|s| s.v).sum();
    let t = u / v.sqrt();
    Ok(CombinedTestResult {
        method: TestMethod::Sum,
        statistic: t,
        p_value: p_value(t, sided),
        sidedness: sided,
        warnings,
    })
}

/// Weighted sum of per-center `Z_l` with `a_l = m_l n_l / √V_l`.
pub fn t_weighted<T: Real>(
    stats: &[CenterTestStat<T>],
    sided: Sidedness,
) -> Result<CombinedTestResult<T>> {
    let (kept, warnings) = usable(stats)?;
    let weights: Vec<T> = kept
        .iter()
        .map(|s| T::from_count(s.m) * T::from_count(s.n) / s.v.sqrt())
        .collect();
    let num: T = kept.iter().zip(&weights).map(|(s, &a)| a * s.z).sum();
    let den: T = weights.iter().map(|&a| a * a).sum::<T>().sqrt();
    let t = num / den;
    Ok(CombinedTestResult {
        method: TestMethod::Weighted,
        statistic: t,
        p_value: p_value(t, sided),
        sidedness: sided,
        warnings,
    })
}

/// Floor applied to zero p-values before taking logs.
pub const FISHER_P_FLOOR: f64 = 1e-300;

/// `−2 Σ log p_l` referred to χ² with `2L` degrees of freedom.
pub fn fisher_combine<T: Real>(p: &[T], sided: Sidedness) -> Result<CombinedTestResult<T>> {
    if p.is_empty() {
        return Err(FedError::InvalidInput("no p-values".into()));
    }
    let mut warnings = Vec::new();
    let mut stat = T::zero();
    for (i, &pl) in p.iter().enumerate() {
        if !(pl >= T::zero() && pl <= T::one()) {
            return Err(FedError::InvalidInput(format!(
                "p-value {pl} outside [0, 1]"
            )));
        }
        let pl = if pl == T::zero() {
            warnings.push(format!(
                "p-value of center {i} is 0; clamped to {FISHER_P_FLOOR:e}"
            ));
            T::lit(FISHER_P_FLOOR).max(T::min_positive_value())
        } else {
            pl
        };
        stat = stat - T::lit(2.0) * pl.ln();
    }
    let df = T::from_count(2 * p.len());
    Ok(CombinedTestResult {
        method: TestMethod::Fisher,
        statistic: stat,
        p_value: chi_square_sf(stat, df).min(T::one()).max(T::zero()),
        sidedness: sided,
        warnings,
    })
}

/// Signed pair count and null variance on table frequencies, treating all
/// observations inside one bin as tied.
pub fn table_u_and_variance<T: Real>(table: &SummaryTable<T>) -> Result<(T, T)> {
    let n = table.total_x();
    let m = table.total_y();
    if !(n > T::zero()) || !(m > T::zero()) {
        return Err(FedError::EmptyGroup);
    }
    let mut below = T::zero();
    let mut u = T::zero();
    for (&fx, &fy) in table.fx.iter().zip(&table.fy) {
        let above = n - below - fx;
        u = u + fy * (below - above);
        below = below + fx;
    }
    let ties = table.fx.iter().zip(&table.fy).map(|(&a, &b)| a + b);
    Ok((u, null_variance_from_ties(n, m, ties)))
}

/// Mann-Whitney test computed from a federated summary table.
pub fn mwu_federated_table<T: Real>(
    table: &SummaryTable<T>,
    sided: Sidedness,
) -> Result<CombinedTestResult<T>> {
    let (u, v) = table_u_and_variance(table)?;
    let mut warnings = Vec::new();
    let (stat, p) = if v > T::zero() {
        let z = u / v.sqrt();
        (z, p_value(z, sided))
    } else {
        warnings.push("all observations tied in one bin; p set to 1".into());
        (T::zero(), T::one())
    };
    Ok(CombinedTestResult {
        method: TestMethod::FederatedTable,
        statistic: stat,
        p_value: p,
        sidedness: sided,
        warnings,
    })
}

/// Non-federated benchmark: pools every center's raw data.
pub fn mwu_combined<T: Real>(
    centers: &[GroupedSample<T>],
    sided: Sidedness,
) -> Result<CombinedTestResult<T>> {
    let x: Vec<T> = centers.iter().flat_map(|c| c.x.iter().copied()).collect();
    let y: Vec<T> = centers.iter().flat_map(|c| c.y.iter().copied()).collect();
    let pooled = GroupedSample::new("pooled", x, y)?;
    let stat = center_stat_lenient(&pooled, sided)?;
    let mut warnings = Vec::new();
    if stat.is_degenerate() {
        warnings.push("all pooled values tied; p set to 1".into());
    }
    Ok(CombinedTestResult {
        method: TestMethod::Combined,
        statistic: stat.z,
        p_value: stat.p,
        sidedness: sided,
        warnings,
    })
}
