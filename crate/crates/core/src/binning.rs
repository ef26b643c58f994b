//! K-anonymous binning of a single center's data.
//!
//! Bins are built left to right. A cut at data value `q` sends every value
//! strictly below `q` to the current bin; a cut is accepted only when, for
//! both groups, the count on each side is 0 or at least `k`. When no cut
//! remains the rest of the data forms the final bin, which is private by the
//! same invariant. Raw cut points are real data values and are replaced by a
//! random convex combination of the neighbouring values before release.

use rand::distributions::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Group, Result};
use crate::num::Real;
use crate::table::{ExtremePolicy, PrivacyParam, SummaryTable};

/// One center's observations, both groups sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedSample<T> {
    pub center_id: String,
    pub x: Vec<T>,
    pub y: Vec<T>,
}

impl<T: Real> GroupedSample<T> {
    /// Sorts both groups and rejects non-finite values.
    pub fn new(center_id: impl Into<String>, mut x: Vec<T>, mut y: Vec<T>) -> Result<Self> {
        let center_id = center_id.into();
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(FedError::InvalidInput(format!(
                "center {center_id}: non-finite observation"
            )));
        }
        x.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        y.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        Ok(Self { center_id, x, y })
    }

    /// One-group sample (used for quantile estimation).
    pub fn single(center_id: impl Into<String>, x: Vec<T>) -> Result<Self> {
        Self::new(center_id, x, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.x.len() + self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn group(&self, group: Group) -> &[T] {
        match group {
            Group::X => &self.x,
            Group::Y => &self.y,
        }
    }

    /// Checks the center can release a private table: nonempty, and each
    /// group either empty or holding at least `k` values.
    pub fn check_private(&self, k: PrivacyParam) -> Result<()> {
        if self.is_empty() {
            return Err(FedError::EmptyCenter(self.center_id.clone()));
        }
        for group in [Group::X, Group::Y] {
            let count = self.group(group).len();
            if !k.admits(count) {
                return Err(FedError::InsufficientData {
                    center: self.center_id.clone(),
                    group,
                    count,
                    k: k.get(),
                });
            }
        }
        Ok(())
    }
}

/// Bins whose limits are still actual data values.
#[derive(Debug, Clone, PartialEq)]
pub struct RawBinnedTable<T> {
    /// `a_0` (minimum), then `a_j` = largest value in bin `j`.
    pub raw_boundaries: Vec<T>,
    /// Smallest value of bins `2..=B` (the accepted cut points).
    pub next_mins: Vec<T>,
    pub fx: Vec<usize>,
    pub fy: Vec<usize>,
    /// Mean consecutive gap in the first and last bins.
    pub low_buffer: T,
    pub high_buffer: T,
}

impl<T: Real> RawBinnedTable<T> {
    pub fn bins(&self) -> usize {
        self.fx.len()
    }
}

/// Result of the one-group boundary search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OneDimPoint<T> {
    /// Empty group: imposes no constraint on the other group.
    Unconstrained,
    /// Between 1 and k−1 values left; no private bin can be formed.
    Exhausted,
    /// Candidate limit.
    At(T),
}

/// One-group candidate limit.
///
/// Returns the zero-based `k`-th value, so exactly `k` values lie strictly
/// below it, unless taking `k` values would leave a non-private tail, in
/// which case the maximum is returned and the tail joins the last bin.
pub fn next_1d_point<T: Real>(x: &[T], k: PrivacyParam) -> OneDimPoint<T> {
    let k = k.get() as usize;
    let n = x.len();
    if n == 0 {
        OneDimPoint::Unconstrained
    } else if n < k {
        OneDimPoint::Exhausted
    } else if n - k < k {
        OneDimPoint::At(x[n - 1])
    } else {
        OneDimPoint::At(x[k])
    }
}

/// True iff the counts strictly below `q` and at-or-above `q` are each 0 or ≥ k.
pub fn valid_point<T: Real>(x: &[T], q: T, k: PrivacyParam) -> bool {
    let below = x.partition_point(|&v| v < q);
    k.admits(below) && k.admits(x.len() - below)
}

/// Outcome of the two-group boundary search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cut<T> {
    /// Values strictly below the cut form the next bin.
    Split(T),
    /// No further cut; everything left forms one private bin ending at this maximum.
    Tail(T),
}

impl<T: Copy> Cut<T> {
    pub fn value(self) -> T {
        match self {
            Cut::Split(q) | Cut::Tail(q) => q,
        }
    }
}

/// Smallest data value that is a valid limit for both groups at once.
///
/// `None` means the remaining data cannot form even one private bin.
pub fn next_2d_point<T: Real>(x: &[T], y: &[T], k: PrivacyParam) -> Option<Cut<T>> {
    let (nx, ny) = (x.len(), y.len());
    if nx + ny == 0 || !k.admits(nx) || !k.admits(ny) {
        return None;
    }
    let (mut ix, mut iy) = (0usize, 0usize);
    loop {
        // Next distinct candidate in the merged order.
        let q = match (x.get(ix), y.get(iy)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => break,
        };
        if ix + iy > 0 && k.admits(ix) && k.admits(iy) && k.admits(nx - ix) && k.admits(ny - iy) {
            return Some(Cut::Split(q));
        }
        while ix < nx && x[ix] == q {
            ix += 1;
        }
        while iy < ny && y[iy] == q {
            iy += 1;
        }
    }
    let max = match (x.last(), y.last()) {
        (Some(&a), Some(&b)) => a.max(b),
        (Some(&a), None) => a,
        (None, Some(&b)) => b,
        (None, None) => unreachable!("nonempty checked above"),
    };
    Some(Cut::Tail(max))
}

/// Mean gap between consecutive sorted values; 0 for one value or a tied block.
pub fn extreme_buffer<T: Real>(sorted: &[T]) -> T {
    match sorted.len() {
        0 | 1 => T::zero(),
        n => (sorted[n - 1] - sorted[0]) / T::from_count(n - 1),
    }
}

/// Releases a limit between the largest value of one bin and the smallest of
/// the next: `w·a + (1−w)·next_min` with `w` uniform on (0, 1).
pub fn anonymize_boundary<T: Real, R: Rng + ?Sized>(a: T, next_min: T, rng: &mut R) -> T {
    let w = T::lit(rng.sample::<f64, _>(Open01));
    mix_boundary(a, next_min, w)
}

/// Deterministic core of [`anonymize_boundary`] for a given weight.
pub fn mix_boundary<T: Real>(a: T, next_min: T, w: T) -> T {
    if !(a < next_min) {
        return a;
    }
    let c = w * a + (T::one() - w) * next_min;
    // Guard against rounding onto an endpoint for adjacent floats.
    if c <= a || c >= next_min {
        let mid = a + (next_min - a) * T::lit(0.5);
        if mid > a && mid < next_min {
            return mid;
        }
    }
    c
}

fn merged_extremes<T: Real>(x: &[T], y: &[T]) -> Vec<T> {
    let mut v: Vec<T> = x.iter().chain(y.iter()).copied().collect();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    v
}

/// Runs the cut search to completion on raw data. Never fails: data that
/// cannot be split privately comes back as a single bin.
pub fn raw_binning<T: Real>(x: &[T], y: &[T], k: PrivacyParam) -> RawBinnedTable<T> {
    let mut fx = Vec::new();
    let mut fy = Vec::new();
    let mut raw_boundaries = Vec::new();
    let mut next_mins = Vec::new();
    let (mut rx, mut ry) = (x, y);
    let mut first_bin: Option<Vec<T>> = None;
    let last_bin: Vec<T>;

    let min = match (x.first(), y.first()) {
        (Some(&a), Some(&b)) => a.min(b),
        (Some(&a), None) => a,
        (None, Some(&b)) => b,
        (None, None) => {
            return RawBinnedTable {
                raw_boundaries: Vec::new(),
                next_mins: Vec::new(),
                fx,
                fy,
                low_buffer: T::zero(),
                high_buffer: T::zero(),
            }
        }
    };
    raw_boundaries.push(min);

    loop {
        match next_2d_point(rx, ry, k) {
            Some(Cut::Split(q)) => {
                let cx = rx.partition_point(|&v| v < q);
                let cy = ry.partition_point(|&v| v < q);
                let (bx, by) = (&rx[..cx], &ry[..cy]);
                let bin_max = match (bx.last(), by.last()) {
                    (Some(&a), Some(&b)) => a.max(b),
                    (Some(&a), None) => a,
                    (None, Some(&b)) => b,
                    (None, None) => unreachable!("cut leaves a nonempty bin"),
                };
                if first_bin.is_none() {
                    first_bin = Some(merged_extremes(bx, by));
                }
                raw_boundaries.push(bin_max);
                next_mins.push(q);
                fx.push(cx);
                fy.push(cy);
                rx = &rx[cx..];
                ry = &ry[cy..];
            }
            Some(Cut::Tail(max)) => {
                last_bin = merged_extremes(rx, ry);
                raw_boundaries.push(max);
                fx.push(rx.len());
                fy.push(ry.len());
                break;
            }
            None => {
                // Only reachable before any cut, for non-private input.
                last_bin = merged_extremes(rx, ry);
                raw_boundaries.push(*last_bin.last().expect("nonempty"));
                fx.push(rx.len());
                fy.push(ry.len());
                break;
            }
        }
    }
    let first_bin = first_bin.unwrap_or_else(|| last_bin.clone());
    RawBinnedTable {
        raw_boundaries,
        next_mins,
        fx,
        fy,
        low_buffer: extreme_buffer(&first_bin),
        high_buffer: extreme_buffer(&last_bin),
    }
}

/// Outer limits of a freshly binned center under the given policy.
pub(crate) fn outer_limits<T: Real>(
    policy: ExtremePolicy,
    min: T,
    max: T,
    low_buffer: T,
    high_buffer: T,
) -> Result<(T, T)> {
    match policy {
        ExtremePolicy::Infinite => Ok((T::neg_infinity(), T::infinity())),
        ExtremePolicy::Buffer => Ok((min - low_buffer, max + high_buffer)),
        ExtremePolicy::Natural { low, high } => {
            let (lo, hi) = (T::lit(low), T::lit(high));
            for v in [min, max] {
                if v < lo || v > hi {
                    return Err(FedError::OutsideDomain {
                        value: v.as_f64(),
                        low,
                        high,
                    });
                }
            }
            Ok((lo, hi))
        }
    }
}

/// Builds the released summary table of one center.
pub fn bin_single_center<T: Real, R: Rng + ?Sized>(
    sample: &GroupedSample<T>,
    k: PrivacyParam,
    policy: ExtremePolicy,
    rng: &mut R,
) -> Result<SummaryTable<T>> {
    bin_with_raw(sample, k, policy, rng).map(|(table, _)| table)
}

/// [`bin_single_center`] that also returns the raw (unreleased) binning.
pub fn bin_with_raw<T: Real, R: Rng + ?Sized>(
    sample: &GroupedSample<T>,
    k: PrivacyParam,
    policy: ExtremePolicy,
    rng: &mut R,
) -> Result<(SummaryTable<T>, RawBinnedTable<T>)> {
    sample.check_private(k)?;
    let raw = raw_binning(&sample.x, &sample.y, k);
    let nb = raw.bins();
    let (low, high) = outer_limits(
        policy,
        raw.raw_boundaries[0],
        raw.raw_boundaries[nb],
        raw.low_buffer,
        raw.high_buffer,
    )?;
    let mut boundaries = Vec::with_capacity(nb + 1);
    boundaries.push(low);
    for j in 1..nb {
        boundaries.push(anonymize_boundary(
            raw.raw_boundaries[j],
            raw.next_mins[j - 1],
            rng,
        ));
    }
    boundaries.push(high);
    let to_t = |v: &Vec<usize>| v.iter().map(|&c| T::from_count(c)).collect();
    let table = SummaryTable::new(boundaries, to_t(&raw.fx), to_t(&raw.fy), k)?;
    Ok((table, raw))
}
