//! Quantile-loss minimization by federated bisection on the subgradient.
//!
//! Each round queries every center for `(loss, subgradient)` at a batch of
//! `(q, p)` points. This leaks information about individual values (two
//! bisections converge onto data points), so results are always flagged
//! privacy-violating.

use serde::{Deserialize, Serialize};

use super::{PrivacyFlag, QuantileEstimate, QuantileMethod};
use crate::error::{FedError, Result};
use crate::num::Real;

/// Upper bound on bisection rounds; the range query adds one more.
pub const MAX_BISECTION_ROUNDS: usize = 63;

/// Brackets stop once narrower than this fraction of the data range. Query
/// points then stay on a coarse dyadic grid over `[min, max]`, millions of
/// ulps apart, so they essentially never coincide with a data value; the
/// final answer is sharpened from the loss values instead (see
/// [`estimate_quantile_loss`]).
pub const RELATIVE_WIDTH: f64 = 1.0 / (1u64 << 30) as f64;

/// One evaluation point of the summed loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint<T> {
    pub q: T,
    pub p: T,
}

/// Loss and subgradient at one point. The two counts behind the
/// subgradient travel along so pooled sign decisions are exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue<T> {
    pub loss: T,
    pub subgradient: T,
    pub below: u64,
    pub at_or_above: u64,
}

impl<T: Real> LossValue<T> {
    fn zero() -> Self {
        Self {
            loss: T::zero(),
            subgradient: T::zero(),
            below: 0,
            at_or_above: 0,
        }
    }
}

fn subgradient<T: Real>(p: T, below: u64, at_or_above: u64) -> T {
    (T::one() - p) * T::lit(below as f64) - p * T::lit(at_or_above as f64)
}

/// `(p−1)Σ_{y<q}(y−q) + pΣ_{y≥q}(y−q)` and the matching subgradient
/// `(1−p)#{y<q} − p#{y≥q}`.
pub fn quantile_loss<T: Real>(q: T, values: &[T], p: T) -> LossValue<T> {
    let mut below = T::zero();
    let mut above = T::zero();
    let (mut n_below, mut n_above) = (0usize, 0usize);
    for &y in values {
        if y < q {
            below = below + (y - q);
            n_below += 1;
        } else {
            above = above + (y - q);
            n_above += 1;
        }
    }
    LossValue {
        loss: (p - T::one()) * below + p * above,
        subgradient: subgradient(p, n_below as u64, n_above as u64),
        below: n_below as u64,
        at_or_above: n_above as u64,
    }
}

/// Source of summed loss evaluations, one call per communication round.
pub trait LossOracle<T: Real> {
    /// Global `(min, max)` of the pooled data.
    fn range(&mut self) -> Result<(T, T)>;
    /// Summed loss values at each point, in order.
    fn query(&mut self, points: &[LossPoint<T>]) -> Result<Vec<LossValue<T>>>;
}

/// In-process oracle over raw per-center values.
pub struct LocalLossOracle<'a, T> {
    centers: &'a [Vec<T>],
}

impl<'a, T: Real> LocalLossOracle<'a, T> {
    pub fn new(centers: &'a [Vec<T>]) -> Self {
        Self { centers }
    }
}

/// Per-center answer to a batch of loss points.
pub fn center_loss_response<T: Real>(values: &[T], points: &[LossPoint<T>]) -> Vec<LossValue<T>> {
    points
        .iter()
        .map(|pt| quantile_loss(pt.q, values, pt.p))
        .collect()
}

/// Element-wise sum of per-center responses, in center order. The pooled
/// subgradient is recomputed from the pooled counts.
pub fn sum_loss_responses<T: Real>(
    responses: &[Vec<LossValue<T>>],
    points: &[LossPoint<T>],
) -> Result<Vec<LossValue<T>>> {
    let mut out = vec![LossValue::zero(); points.len()];
    for r in responses {
        if r.len() != points.len() {
            return Err(FedError::Protocol(format!(
                "loss response has {} entries, expected {}",
                r.len(),
                points.len()
            )));
        }
        for (acc, v) in out.iter_mut().zip(r) {
            acc.loss = acc.loss + v.loss;
            acc.below += v.below;
            acc.at_or_above += v.at_or_above;
        }
    }
    for (acc, pt) in out.iter_mut().zip(points) {
        acc.subgradient = subgradient(pt.p, acc.below, acc.at_or_above);
    }
    Ok(out)
}

/// Global extremes from per-center `(min, max)` pairs; empty centers are skipped.
pub fn combine_ranges<T: Real>(ranges: impl IntoIterator<Item = Option<(T, T)>>) -> Result<(T, T)> {
    let mut acc: Option<(T, T)> = None;
    for (lo, hi) in ranges.into_iter().flatten() {
        acc = Some(match acc {
            None => (lo, hi),
            Some((a, b)) => (a.min(lo), b.max(hi)),
        });
    }
    acc.ok_or_else(|| FedError::InvalidInput("no data in any center".into()))
}

pub fn local_range<T: Real>(values: &[T]) -> Option<(T, T)> {
    let mut it = values.iter().copied();
    let first = it.next()?;
    Some(it.fold((first, first), |(a, b), v| (a.min(v), b.max(v))))
}

impl<T: Real> LossOracle<T> for LocalLossOracle<'_, T> {
    fn range(&mut self) -> Result<(T, T)> {
        combine_ranges(self.centers.iter().map(|c| local_range(c)))
    }

    fn query(&mut self, points: &[LossPoint<T>]) -> Result<Vec<LossValue<T>>> {
        let responses: Vec<_> = self
            .centers
            .iter()
            .map(|c| center_loss_response(c, points))
            .collect();
        sum_loss_responses(&responses, points)
    }
}

/// Bisection bracket for the first `q` at which a monotone predicate holds,
/// with the pooled responses seen at each end.
#[derive(Debug, Clone, Copy)]
struct Bracket<T> {
    lo: T,
    hi: T,
    at_lo: Option<LossValue<T>>,
    at_hi: Option<LossValue<T>>,
}

impl<T: Real> Bracket<T> {
    fn new(lo: T, hi: T) -> Self {
        Self {
            lo,
            hi,
            at_lo: None,
            at_hi: None,
        }
    }

    /// Where the supporting lines at both ends meet. The subgradient is the
    /// left derivative, so with a single kink inside the bracket this is the
    /// kink itself; otherwise it still lies inside the bracket. An end never
    /// queried is still the global min or max, itself a data value.
    fn kink(&self) -> T {
        match (self.at_lo, self.at_hi) {
            (Some(a), Some(b)) => {
                let dg = b.subgradient - a.subgradient;
                let q = (a.loss - b.loss + b.subgradient * self.hi - a.subgradient * self.lo) / dg;
                if dg > T::zero() && q.is_finite() {
                    q.max(self.lo).min(self.hi)
                } else {
                    self.mid()
                }
            }
            (None, Some(_)) => self.lo,
            (Some(_), None) => self.hi,
            (None, None) => self.mid(),
        }
    }

    fn mid(&self) -> T {
        self.lo + (self.hi - self.lo) / T::lit(2.0)
    }

    fn done(&self, width: T) -> bool {
        let m = self.mid();
        !(m > self.lo && m < self.hi) || self.hi - self.lo <= width
    }
}

/// Minimizes the pooled loss for every probability in `probs`, sharing rounds.
///
/// Two bisections run per probability: one for where the summed subgradient
/// becomes `≥ 0` and one for where it becomes `> 0`. The minimizer set lies
/// between them and its midpoint is returned. Each end is located from the
/// piecewise-linear loss inside its final bracket, which is exact when the
/// bracket holds one distinct value and never worse than the bracket width.
pub fn estimate_quantile_loss<T: Real, O: LossOracle<T> + ?Sized>(
    oracle: &mut O,
    probs: &[T],
) -> Result<Vec<QuantileEstimate<T>>> {
    for &p in probs {
        if !(p > T::zero() && p < T::one()) {
            return Err(FedError::InvalidInput(format!(
                "probability {p} outside (0, 1)"
            )));
        }
    }
    let (min, max) = oracle.range()?;
    let mut rounds = 1usize;
    let width = (max - min) * T::lit(RELATIVE_WIDTH);
    // brackets[2i] tracks g ≥ 0, brackets[2i+1] tracks g > 0.
    let mut brackets = vec![Bracket::new(min, max); 2 * probs.len()];
    for _ in 0..MAX_BISECTION_ROUNDS {
        let active: Vec<usize> = (0..brackets.len())
            .filter(|&i| !brackets[i].done(width))
            .collect();
        if active.is_empty() {
            break;
        }
        let points: Vec<LossPoint<T>> = active
            .iter()
            .map(|&i| LossPoint {
                q: brackets[i].mid(),
                p: probs[i / 2],
            })
            .collect();
        let values = oracle.query(&points)?;
        if values.len() != points.len() {
            return Err(FedError::Protocol("loss response length mismatch".into()));
        }
        rounds += 1;
        for (&i, v) in active.iter().zip(&values) {
            let g = v.subgradient;
            let hit = if i % 2 == 0 {
                g >= T::zero()
            } else {
                g > T::zero()
            };
            let b = &mut brackets[i];
            if hit {
                b.hi = b.mid();
                b.at_hi = Some(*v);
            } else {
                b.lo = b.mid();
                b.at_lo = Some(*v);
            }
        }
    }
    Ok(probs
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            let (a, b) = (brackets[2 * j].kink(), brackets[2 * j + 1].kink());
            QuantileEstimate {
                p,
                value: a + (b - a) / T::lit(2.0),
                method: QuantileMethod::Loss,
                communication_rounds: rounds,
                privacy_flag: PrivacyFlag::PrivacyViolating,
                flags: Vec::new(),
            }
        })
        .collect())
}
