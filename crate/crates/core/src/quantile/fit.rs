//! Yeo-Johnson fits: correlation fit on table limits and the federated MLE.

use serde::{Deserialize, Serialize};

use super::yj::{sign_log, yj_inverse, yj_range, yj_transform};
use super::{PrivacyFlag, QuantileEstimate, QuantileMethod};
use crate::error::{FedError, Group, Result};
use crate::num::Real;
use crate::special::normal_quantile;
use crate::table::SummaryTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YjMethod {
    Table,
    Mle,
    MleGrid,
}

/// Fitted transform: `h_λ(X) ≈ N(location, scale²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YjFit<T> {
    pub lambda: T,
    pub location: T,
    pub scale: T,
    pub method: YjMethod,
    pub communication_rounds: usize,
    /// λ̂ landed on the edge of its search interval.
    #[serde(default)]
    pub at_search_boundary: bool,
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Golden-section maximization of `f` on `[a, b]` down to width `tol`.
/// Returns the best abscissa seen and its value.
fn golden_max<T: Real>(
    mut a: T,
    mut b: T,
    tol: T,
    mut f: impl FnMut(T) -> Result<T>,
) -> Result<(T, T)> {
    let g = T::lit(GOLDEN);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc >= fd { (c, fc) } else { (d, fd) })
}

fn pearson<T: Real>(a: &[T], b: &[T]) -> T {
    let n = T::from_count(a.len());
    let ma = a.iter().copied().sum::<T>() / n;
    let mb = b.iter().copied().sum::<T>() / n;
    let (mut sab, mut saa, mut sbb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab = sab + dx * dy;
        saa = saa + dx * dx;
        sbb = sbb + dy * dy;
    }
    let r = sab / (saa * sbb).sqrt();
    if r.is_finite() {
        r
    } else {
        T::neg_infinity()
    }
}

/// Interior limits with `0 < F̂ < 1` and their normal scores `Φ⁻¹(F̂)`.
pub fn table_points<T: Real>(table: &SummaryTable<T>, group: Group) -> Result<(Vec<T>, Vec<T>)> {
    let f = table.freqs(group);
    let total: T = f.iter().copied().sum();
    if !(total > T::zero()) {
        return Err(FedError::EmptyGroup);
    }
    let mut limits = Vec::new();
    let mut scores = Vec::new();
    let mut cum = T::zero();
    for (k, &b) in table.interior().iter().enumerate() {
        cum = cum + f[k];
        let fhat = cum / total;
        if fhat > T::zero() && fhat < T::one() {
            limits.push(b);
            scores.push(normal_quantile(fhat));
        }
    }
    Ok((limits, scores))
}

/// Grid points scanned before golden-section refinement.
pub const TABLE_GRID: usize = 21;
pub const TABLE_TOL: f64 = 1e-4;

/// Correlation fit of the transform to the table's interior limits.
pub fn fit_yj_table<T: Real>(table: &SummaryTable<T>, group: Group) -> Result<YjFit<T>> {
    let (limits, scores) = table_points(table, group)?;
    if limits.len() < 3 {
        return Err(FedError::TooFewBins {
            usable: limits.len(),
        });
    }
    let corr = |l: T| -> Result<T> {
        let h: Vec<T> = limits.iter().map(|&b| yj_transform(b, l)).collect();
        Ok(pearson(&h, &scores))
    };
    let two = T::lit(2.0);
    let step = two / T::from_count(TABLE_GRID - 1);
    let grid: Vec<T> = (0..TABLE_GRID).map(|i| T::from_count(i) * step).collect();
    let mut best = (grid[0], T::neg_infinity());
    for &l in &grid {
        let c = corr(l)?;
        if c > best.1 {
            best = (l, c);
        }
    }
    let lo = (best.0 - step).max(T::zero());
    let hi = (best.0 + step).min(two);
    let refined = golden_max(lo, hi, T::lit(TABLE_TOL), corr)?;
    if refined.1 > best.1 {
        best = refined;
    }
    let lambda = best.0;
    let h: Vec<T> = limits.iter().map(|&b| yj_transform(b, lambda)).collect();
    let n = T::from_count(h.len());
    let mz = scores.iter().copied().sum::<T>() / n;
    let mh = h.iter().copied().sum::<T>() / n;
    let (mut szh, mut szz) = (T::zero(), T::zero());
    for (&z, &hv) in scores.iter().zip(&h) {
        szh = szh + (z - mz) * (hv - mh);
        szz = szz + (z - mz) * (z - mz);
    }
    let a1 = szh / szz;
    if !(a1 > T::zero() && a1.is_finite()) {
        return Err(FedError::DegenerateVariance);
    }
    Ok(YjFit {
        lambda,
        location: mh - a1 * mz,
        scale: a1,
        method: YjMethod::Table,
        communication_rounds: 1,
        at_search_boundary: lambda <= T::zero() || lambda >= two,
    })
}

/// Inverse transform of `location + scale·Φ⁻¹(p)`, clamped into the
/// transform's image when necessary.
fn fitted_quantile<T: Real>(fit: &YjFit<T>, p: T) -> Result<(T, bool)> {
    if !(p > T::zero() && p < T::one()) {
        return Err(FedError::InvalidInput(format!(
            "probability {p} outside (0, 1)"
        )));
    }
    let z = fit.location + fit.scale * normal_quantile(p);
    match yj_inverse(z, fit.lambda) {
        Ok(x) => Ok((x, false)),
        Err(FedError::OutOfRange { .. }) => {
            let (lo, hi) = yj_range(fit.lambda);
            // Nudge just inside the open image so the inverse stays finite.
            let edge = if z >= hi { hi } else { lo };
            let inside = edge - edge.signum() * edge.abs() * T::epsilon() * T::lit(4.0);
            let x = yj_inverse(inside, fit.lambda)?;
            log::warn!("fitted quantile at p = {p} fell outside the transform range; clamped");
            Ok((x, true))
        }
        Err(e) => Err(e),
    }
}

fn estimate<T: Real>(
    fit: &YjFit<T>,
    p: T,
    privacy_flag: PrivacyFlag,
) -> Result<QuantileEstimate<T>> {
    let (value, clamped) = fitted_quantile(fit, p)?;
    let method = match fit.method {
        YjMethod::Table => QuantileMethod::YjTable,
        YjMethod::Mle => QuantileMethod::YjMle,
        YjMethod::MleGrid => QuantileMethod::YjMleGrid,
    };
    let mut flags = Vec::new();
    if clamped {
        flags.push("clamped_to_range".to_string());
    }
    if fit.at_search_boundary {
        flags.push("lambda_at_search_boundary".to_string());
    }
    Ok(QuantileEstimate {
        p,
        value,
        method,
        communication_rounds: fit.communication_rounds,
        privacy_flag,
        flags,
    })
}

pub fn estimate_quantile_yj_table<T: Real>(fit: &YjFit<T>, p: T) -> Result<QuantileEstimate<T>> {
    estimate(fit, p, PrivacyFlag::KAnonymous)
}

pub fn estimate_quantile_yj_data<T: Real>(fit: &YjFit<T>, p: T) -> Result<QuantileEstimate<T>> {
    estimate(fit, p, PrivacyFlag::AggregateOnly)
}

/// Unevaluated sum `hi + lo` kept by error-free transformations, so that
/// pooled sums do not depend on how the data are split across centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", from = "[T; 2]", into = "[T; 2]")]
pub struct CompensatedSum<T: Real> {
    pub hi: T,
    pub lo: T,
}

impl<T: Real> From<[T; 2]> for CompensatedSum<T> {
    fn from([hi, lo]: [T; 2]) -> Self {
        Self { hi, lo }
    }
}

impl<T: Real> From<CompensatedSum<T>> for [T; 2] {
    fn from(s: CompensatedSum<T>) -> Self {
        [s.hi, s.lo]
    }
}

fn two_sum<T: Real>(a: T, b: T) -> (T, T) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

impl<T: Real> CompensatedSum<T> {
    pub fn zero() -> Self {
        Self {
            hi: T::zero(),
            lo: T::zero(),
        }
    }

    fn normalized(s: T, e: T) -> Self {
        let hi = s + e;
        Self {
            hi,
            lo: e - (hi - s),
        }
    }

    pub fn add_value(self, x: T) -> Self {
        let (s, e) = two_sum(self.hi, x);
        Self::normalized(s, e + self.lo)
    }

    pub fn merge(self, other: Self) -> Self {
        let (s, e) = two_sum(self.hi, other.hi);
        Self::normalized(s, e + (self.lo + other.lo))
    }

    pub fn value(self) -> T {
        self.hi + self.lo
    }
}

/// Additive per-center aggregates at one λ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct YjMoments<T: Real> {
    pub lambda: T,
    pub n: u64,
    pub sum_h: CompensatedSum<T>,
    pub sum_h2: CompensatedSum<T>,
    /// `Σ sign(x)·log(|x|+1)`; does not depend on λ.
    pub sum_sign_log: CompensatedSum<T>,
}

impl<T: Real> YjMoments<T> {
    pub fn compute(values: &[T], lambda: T) -> Self {
        let (mut s, mut s2, mut sl) = (
            CompensatedSum::zero(),
            CompensatedSum::zero(),
            CompensatedSum::zero(),
        );
        for &x in values {
            let h = yj_transform(x, lambda);
            s = s.add_value(h);
            s2 = s2.add_value(h * h);
            sl = sl.add_value(sign_log(x));
        }
        Self {
            lambda,
            n: values.len() as u64,
            sum_h: s,
            sum_h2: s2,
            sum_sign_log: sl,
        }
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            lambda: self.lambda,
            n: self.n + other.n,
            sum_h: self.sum_h.merge(other.sum_h),
            sum_h2: self.sum_h2.merge(other.sum_h2),
            sum_sign_log: self.sum_sign_log.merge(other.sum_sign_log),
        }
    }

    pub fn mean(&self) -> T {
        self.sum_h.value() / T::lit(self.n as f64)
    }

    /// Maximum-likelihood variance `Σ(h−μ̂)²/N`; `DegenerateVariance` when
    /// it vanishes relative to the second moment.
    pub fn variance(&self) -> Result<T> {
        if self.n < 2 {
            return Err(FedError::DegenerateVariance);
        }
        let n = T::lit(self.n as f64);
        let m2 = self.sum_h2.value() / n;
        let mu = self.mean();
        let var = m2 - mu * mu;
        if !(var > m2.abs() * T::epsilon() * T::lit(64.0)) || !var.is_finite() {
            return Err(FedError::DegenerateVariance);
        }
        Ok(var)
    }
}

/// Sums per-center moments for the same λ, in center order.
pub fn pool_moments<T: Real>(parts: &[YjMoments<T>]) -> Option<YjMoments<T>> {
    let mut it = parts.iter().copied();
    let first = it.next()?;
    Some(it.fold(first, YjMoments::merge))
}

/// Profile log-likelihood `−N/2·log σ̂² + (λ−1)·Σ sign(x)·log(|x|+1)`.
pub fn yj_loglik<T: Real>(m: &YjMoments<T>) -> Result<T> {
    let var = m.variance()?;
    let n = T::lit(m.n as f64);
    Ok(-n / T::lit(2.0) * var.ln() + (m.lambda - T::one()) * m.sum_sign_log.value())
}

/// Source of pooled moments; each call is one communication round.
pub trait MomentOracle<T: Real> {
    fn moments(&mut self, lambdas: &[T]) -> Result<Vec<YjMoments<T>>>;
}

pub struct LocalMomentOracle<'a, T> {
    centers: &'a [Vec<T>],
}

impl<'a, T: Real> LocalMomentOracle<'a, T> {
    pub fn new(centers: &'a [Vec<T>]) -> Self {
        Self { centers }
    }
}

/// Per-center reply to a moment request.
pub fn center_moments<T: Real>(values: &[T], lambdas: &[T]) -> Vec<YjMoments<T>> {
    lambdas
        .iter()
        .map(|&l| YjMoments::compute(values, l))
        .collect()
}

/// Pools per-center replies λ by λ.
pub fn pool_moment_responses<T: Real>(
    responses: &[Vec<YjMoments<T>>],
    lambdas: &[T],
) -> Result<Vec<YjMoments<T>>> {
    lambdas
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let parts: Vec<YjMoments<T>> = responses
                .iter()
                .map(|r| {
                    r.get(i).copied().filter(|m| m.lambda == l).ok_or_else(|| {
                        FedError::Protocol(format!("moment response missing λ = {l}"))
                    })
                })
                .collect::<Result<_>>()?;
            pool_moments(&parts).ok_or_else(|| FedError::InvalidInput("no centers".into()))
        })
        .collect()
}

impl<T: Real> MomentOracle<T> for LocalMomentOracle<'_, T> {
    fn moments(&mut self, lambdas: &[T]) -> Result<Vec<YjMoments<T>>> {
        let responses: Vec<_> = self
            .centers
            .iter()
            .map(|c| center_moments(c, lambdas))
            .collect();
        pool_moment_responses(&responses, lambdas)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MleMode {
    #[default]
    Iterative,
    Grid,
}

pub const MLE_LAMBDA_MIN: f64 = -2.0;
pub const MLE_LAMBDA_MAX: f64 = 4.0;
pub const MLE_TOL: f64 = 1e-6;
pub const MLE_GRID: usize = 25;

fn loglik_or_neg_inf<T: Real>(m: &YjMoments<T>) -> T {
    yj_loglik(m).unwrap_or(T::neg_infinity())
}

/// Federated maximum-likelihood fit of the transform.
pub fn fit_yj_mle<T: Real, O: MomentOracle<T> + ?Sized>(
    oracle: &mut O,
    mode: MleMode,
) -> Result<YjFit<T>> {
    let (lmin, lmax) = (T::lit(MLE_LAMBDA_MIN), T::lit(MLE_LAMBDA_MAX));
    let mut rounds = 0usize;
    let lambda = match mode {
        MleMode::Iterative => {
            let (l, ll) = golden_max(lmin, lmax, T::lit(MLE_TOL), |l| {
                rounds += 1;
                let m = oracle.moments(&[l])?;
                let m = m
                    .first()
                    .ok_or_else(|| FedError::Protocol("empty moment response".into()))?;
                Ok(loglik_or_neg_inf(m))
            })?;
            if ll == T::neg_infinity() {
                return Err(FedError::DegenerateVariance);
            }
            l
        }
        MleMode::Grid => {
            let step = (lmax - lmin) / T::from_count(MLE_GRID - 1);
            let grid: Vec<T> = (0..MLE_GRID)
                .map(|i| lmin + T::from_count(i) * step)
                .collect();
            rounds += 1;
            let ms = oracle.moments(&grid)?;
            if ms.len() != grid.len() {
                return Err(FedError::Protocol("moment response length mismatch".into()));
            }
            let ll: Vec<T> = ms.iter().map(loglik_or_neg_inf).collect();
            let (i, &best) = ll
                .iter()
                .enumerate()
                .fold((0, &T::neg_infinity()), |acc, (i, v)| {
                    if *v > *acc.1 {
                        (i, v)
                    } else {
                        acc
                    }
                });
            if best == T::neg_infinity() {
                return Err(FedError::DegenerateVariance);
            }
            if i == 0 || i + 1 == grid.len() || !ll[i - 1].is_finite() || !ll[i + 1].is_finite() {
                grid[i]
            } else {
                // Vertex of the parabola through the three grid points.
                let (a, b, c) = (ll[i - 1], ll[i], ll[i + 1]);
                let denom = a - T::lit(2.0) * b + c;
                let shift = if denom < T::zero() {
                    (a - c) / (T::lit(2.0) * denom)
                } else {
                    T::zero()
                };
                grid[i] + step * shift.max(-T::one()).min(T::one())
            }
        }
    };
    rounds += 1;
    let m = oracle.moments(&[lambda])?;
    let m = m
        .first()
        .ok_or_else(|| FedError::Protocol("empty moment response".into()))?;
    let var = m.variance()?;
    let edge = T::lit(1e-3);
    Ok(YjFit {
        lambda,
        location: m.mean(),
        scale: var.sqrt(),
        method: match mode {
            MleMode::Iterative => YjMethod::Mle,
            MleMode::Grid => YjMethod::MleGrid,
        },
        communication_rounds: rounds,
        at_search_boundary: lambda - lmin < edge || lmax - lambda < edge,
    })
}
