//! Sequential merging of centers into a shared summary table, with a
//! transcript of every value a center releases.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binning::{
    anonymize_boundary, bin_with_raw, extreme_buffer, raw_binning, GroupedSample,
};
use crate::error::{FedError, Group, Result};
use crate::num::Real;
use crate::table::{ExtremePolicy, PrivacyParam, SummaryTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReleaseKind {
    NewSubbinCount,
    MergedBinSum,
    Boundary,
    ExtremeBuffer,
}

impl ReleaseKind {
    pub fn is_count(self) -> bool {
        matches!(
            self,
            ReleaseKind::NewSubbinCount | ReleaseKind::MergedBinSum
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordGroup {
    X,
    Y,
    #[serde(rename = "n/a")]
    NotApplicable,
}

impl From<Group> for RecordGroup {
    fn from(g: Group) -> Self {
        match g {
            Group::X => RecordGroup::X,
            Group::Y => RecordGroup::Y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseRecord {
    pub center_id: String,
    pub kind: ReleaseKind,
    pub group: RecordGroup,
    pub value: f64,
}

/// Ordered log of everything centers have released.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReleaseTranscript {
    pub records: Vec<ReleaseRecord>,
}

impl ReleaseTranscript {
    pub fn push<T: Real>(&mut self, center: &str, kind: ReleaseKind, group: RecordGroup, value: T) {
        self.records.push(ReleaseRecord {
            center_id: center.to_string(),
            kind,
            group,
            value: value.as_f64(),
        });
    }

    pub fn extend(&mut self, other: ReleaseTranscript) {
        self.records.extend(other.records);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoinResult<T> {
    pub table: SummaryTable<T>,
    pub transcript: ReleaseTranscript,
}

/// Wire form: the table JSON with an extra `transcript` array.
#[derive(Deserialize)]
struct WireJoin<T: Real> {
    #[serde(flatten, bound = "")]
    table: SummaryTable<T>,
    transcript: ReleaseTranscript,
}

impl<T: Real> Serialize for JoinResult<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        #[serde(bound = "")]
        struct Borrowed<'a, T: Real> {
            #[serde(flatten)]
            table: &'a SummaryTable<T>,
            transcript: &'a ReleaseTranscript,
        }
        Borrowed {
            table: &self.table,
            transcript: &self.transcript,
        }
        .serialize(s)
    }
}

impl<'de, T: Real> Deserialize<'de> for JoinResult<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let wire = WireJoin::<T>::deserialize(d)?;
        Ok(JoinResult {
            table: wire.table,
            transcript: wire.transcript,
        })
    }
}

/// Splits `total` proportionally to `weights`; the last share absorbs the
/// rounding residue so the shares sum back to `total`.
pub fn reallocate<T: Real>(total: T, weights: &[T]) -> Result<Vec<T>> {
    if weights.is_empty() {
        return Err(FedError::InvalidInput(
            "reallocate over an empty span".into(),
        ));
    }
    let sum: T = weights.iter().copied().sum();
    if total == T::zero() {
        return Ok(vec![T::zero(); weights.len()]);
    }
    if !(sum > T::zero()) {
        return Err(FedError::DegenerateWeights);
    }
    let mut shares: Vec<T> = weights.iter().map(|&w| total * w / sum).collect();
    let last = shares.len() - 1;
    let head: T = shares[..last].iter().copied().sum();
    shares[last] = (total - head).max(T::zero());
    Ok(shares)
}

/// [`reallocate`], falling back to an even split when every weight is zero.
pub fn reallocate_or_uniform<T: Real>(total: T, weights: &[T]) -> Result<Vec<T>> {
    match reallocate(total, weights) {
        Err(FedError::DegenerateWeights) => reallocate(total, &vec![T::one(); weights.len()]),
        other => other,
    }
}

/// Length of the next run of bins whose summed count may be released.
///
/// Takes the shortest prefix whose sum is 0 or ≥ k. If the bins after that
/// prefix hold a non-private total, they are absorbed as well, so a
/// sequence with a private grand total always splits into private runs.
pub fn next_private_subset<T: Real>(freqs: &[T], k: PrivacyParam) -> usize {
    let n = freqs.len();
    if n == 0 {
        return 0;
    }
    let mut sum = T::zero();
    let mut len = n;
    for (i, &f) in freqs.iter().enumerate() {
        sum = sum + f;
        if k.admits_real(sum) {
            len = i + 1;
            break;
        }
    }
    let rest: T = freqs[len..].iter().copied().sum();
    if !k.admits_real(rest) {
        n
    } else {
        len
    }
}

/// Student counts after merging non-private runs and spreading each run's
/// total over its bins in proportion to the teacher frequencies.
/// Returns the fixed counts and the released run totals.
pub fn fix_student_frequencies<T: Real>(
    teacher: &[T],
    student: &[T],
    k: PrivacyParam,
) -> Result<(Vec<T>, Vec<T>)> {
    if teacher.len() != student.len() {
        return Err(FedError::InvalidInput(format!(
            "teacher has {} bins, student {}",
            teacher.len(),
            student.len()
        )));
    }
    let mut fixed = Vec::with_capacity(student.len());
    let mut sums = Vec::new();
    let mut start = 0;
    while start < student.len() {
        let len = next_private_subset(&student[start..], k);
        let span = start..start + len;
        let total: T = student[span.clone()].iter().copied().sum();
        fixed.extend(reallocate_or_uniform(total, &teacher[span])?);
        sums.push(total);
        start += len;
    }
    Ok((fixed, sums))
}

/// Records for the first center's table.
fn first_center_records<T: Real>(
    center: &str,
    table: &SummaryTable<T>,
    policy: ExtremePolicy,
) -> ReleaseTranscript {
    let mut t = ReleaseTranscript::default();
    for b in 0..table.bins() {
        t.push(
            center,
            ReleaseKind::NewSubbinCount,
            RecordGroup::X,
            table.fx[b],
        );
        t.push(
            center,
            ReleaseKind::NewSubbinCount,
            RecordGroup::Y,
            table.fy[b],
        );
    }
    for &c in table.interior() {
        t.push(center, ReleaseKind::Boundary, RecordGroup::NotApplicable, c);
    }
    if policy == ExtremePolicy::Buffer {
        t.push(
            center,
            ReleaseKind::ExtremeBuffer,
            RecordGroup::NotApplicable,
            table.lower(),
        );
        t.push(
            center,
            ReleaseKind::ExtremeBuffer,
            RecordGroup::NotApplicable,
            table.upper(),
        );
    }
    t
}

/// Bins the first (largest) center and records what it releases.
pub fn init_table<T: Real, R: Rng + ?Sized>(
    sample: &GroupedSample<T>,
    k: PrivacyParam,
    policy: ExtremePolicy,
    rng: &mut R,
) -> Result<JoinResult<T>> {
    let (table, _) = bin_with_raw(sample, k, policy, rng)?;
    let transcript = first_center_records(&sample.center_id, &table, policy);
    Ok(JoinResult { table, transcript })
}

/// Adds one center to an existing table.
pub fn join_center<T: Real, R: Rng + ?Sized>(
    table: &SummaryTable<T>,
    sample: &GroupedSample<T>,
    k: PrivacyParam,
    policy: ExtremePolicy,
    rng: &mut R,
) -> Result<JoinResult<T>> {
    table.validate()?;
    sample.check_private(k)?;
    let id = sample.center_id.as_str();
    let mut transcript = ReleaseTranscript::default();

    if let ExtremePolicy::Natural { low, high } = policy {
        for &v in sample.x.iter().chain(sample.y.iter()) {
            if v < T::lit(low) || v > T::lit(high) {
                return Err(FedError::OutsideDomain {
                    value: v.as_f64(),
                    low,
                    high,
                });
            }
        }
    }

    // Ranges of the (sorted) new data per existing bin.
    let split_points = |data: &[T]| -> Vec<usize> {
        let mut cuts = Vec::with_capacity(table.bins() + 1);
        cuts.push(0);
        for &c in table.interior() {
            cuts.push(data.partition_point(|&v| v <= c));
        }
        cuts.push(data.len());
        cuts
    };
    let xcuts = split_points(&sample.x);
    let ycuts = split_points(&sample.y);

    let mut bounds: Vec<T> = vec![table.lower()];
    let mut tx = Vec::new();
    let mut ty = Vec::new();
    let mut sx = Vec::new();
    let mut sy = Vec::new();
    // New-center values inside the first and last output bins.
    let mut first_bin_vals: Option<Vec<T>> = None;
    let mut last_bin_vals: Vec<T> = Vec::new();

    for b in 0..table.bins() {
        let bx = &sample.x[xcuts[b]..xcuts[b + 1]];
        let by = &sample.y[ycuts[b]..ycuts[b + 1]];
        let raw = raw_binning(bx, by, k);
        if raw.bins() >= 2 {
            let mut ox = 0;
            let mut oy = 0;
            for j in 0..raw.bins() {
                let (cx, cy) = (raw.fx[j], raw.fy[j]);
                let vals = pooled(&bx[ox..ox + cx], &by[oy..oy + cy]);
                if b == 0 && j == 0 {
                    first_bin_vals = Some(vals.clone());
                }
                last_bin_vals = vals;
                ox += cx;
                oy += cy;
                if j + 1 < raw.bins() {
                    let c = anonymize_boundary(raw.raw_boundaries[j + 1], raw.next_mins[j], rng);
                    transcript.push(id, ReleaseKind::Boundary, RecordGroup::NotApplicable, c);
                    bounds.push(c);
                }
                transcript.push(
                    id,
                    ReleaseKind::NewSubbinCount,
                    RecordGroup::X,
                    T::from_count(cx),
                );
                transcript.push(
                    id,
                    ReleaseKind::NewSubbinCount,
                    RecordGroup::Y,
                    T::from_count(cy),
                );
            }
            bounds.push(table.boundaries[b + 1]);
            let wx: Vec<T> = raw.fx.iter().map(|&c| T::from_count(c)).collect();
            let wy: Vec<T> = raw.fy.iter().map(|&c| T::from_count(c)).collect();
            tx.extend(reallocate_or_uniform(table.fx[b], &wx)?);
            ty.extend(reallocate_or_uniform(table.fy[b], &wy)?);
            sx.extend(wx);
            sy.extend(wy);
        } else {
            let vals = pooled(bx, by);
            if b == 0 {
                first_bin_vals = Some(vals.clone());
            }
            last_bin_vals = vals;
            bounds.push(table.boundaries[b + 1]);
            tx.push(table.fx[b]);
            ty.push(table.fy[b]);
            sx.push(T::from_count(bx.len()));
            sy.push(T::from_count(by.len()));
        }
    }

    let (fixed_x, sums_x) = fix_student_frequencies(&tx, &sx, k)?;
    let (fixed_y, sums_y) = fix_student_frequencies(&ty, &sy, k)?;
    for s in sums_x {
        transcript.push(id, ReleaseKind::MergedBinSum, RecordGroup::X, s);
    }
    for s in sums_y {
        transcript.push(id, ReleaseKind::MergedBinSum, RecordGroup::Y, s);
    }

    if policy == ExtremePolicy::Buffer {
        // The buffer comes from the new center's values in the extreme bin,
        // widened to its k most extreme values when that bin holds fewer, so
        // a lone outlying value is never released as the limit itself.
        let all = pooled(&sample.x, &sample.y);
        let kk = (k.get() as usize).min(all.len());
        let last = bounds.len() - 1;
        if let Some(&min) = all.first() {
            if min < bounds[0] {
                let vals = first_bin_vals.unwrap_or_default();
                let vals = if vals.len() >= kk {
                    &vals[..]
                } else {
                    &all[..kk]
                };
                bounds[0] = min - extreme_buffer(vals);
                transcript.push(
                    id,
                    ReleaseKind::ExtremeBuffer,
                    RecordGroup::NotApplicable,
                    bounds[0],
                );
            }
        }
        if let Some(&max) = all.last() {
            if max > bounds[last] {
                let vals = if last_bin_vals.len() >= kk {
                    &last_bin_vals[..]
                } else {
                    &all[all.len() - kk..]
                };
                bounds[last] = max + extreme_buffer(vals);
                transcript.push(
                    id,
                    ReleaseKind::ExtremeBuffer,
                    RecordGroup::NotApplicable,
                    bounds[last],
                );
            }
        }
    }

    let fx = tx.iter().zip(&fixed_x).map(|(&t, &s)| t + s).collect();
    let fy = ty.iter().zip(&fixed_y).map(|(&t, &s)| t + s).collect();
    let table = SummaryTable::new(bounds, fx, fy, k)?;
    Ok(JoinResult { table, transcript })
}

fn pooled<T: Real>(x: &[T], y: &[T]) -> Vec<T> {
    let mut v: Vec<T> = x.iter().chain(y.iter()).copied().collect();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    v
}

/// Join order: decreasing total size, ties broken by center id.
pub fn join_order<T: Real>(centers: &[GroupedSample<T>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..centers.len()).collect();
    order.sort_by(|&a, &b| {
        centers[b]
            .len()
            .cmp(&centers[a].len())
            .then_with(|| centers[a].center_id.cmp(&centers[b].center_id))
    });
    order
}

/// Random stream used by the `position`-th center in the join order.
pub fn center_rng(seed: u64, position: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(position as u64);
    rng
}

/// Bins the largest center and joins the rest in decreasing size order.
pub fn build_federated_table<T: Real>(
    centers: &[GroupedSample<T>],
    k: PrivacyParam,
    policy: ExtremePolicy,
    seed: u64,
) -> Result<JoinResult<T>> {
    if centers.is_empty() {
        return Err(FedError::InvalidInput("no centers".into()));
    }
    let order = join_order(centers);
    build_in_order(centers, &order, k, policy, seed)
}

/// Same as [`build_federated_table`] with an explicit join order.
pub fn build_in_order<T: Real>(
    centers: &[GroupedSample<T>],
    order: &[usize],
    k: PrivacyParam,
    policy: ExtremePolicy,
    seed: u64,
) -> Result<JoinResult<T>> {
    let (&first, rest) = order
        .split_first()
        .ok_or_else(|| FedError::InvalidInput("no centers".into()))?;
    let mut result = init_table(&centers[first], k, policy, &mut center_rng(seed, 0))?;
    for (pos, &idx) in rest.iter().enumerate() {
        let step = join_center(
            &result.table,
            &centers[idx],
            k,
            policy,
            &mut center_rng(seed, pos + 1),
        )?;
        result.table = step.table;
        result.transcript.extend(step.transcript);
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub passed: bool,
    pub checked: usize,
    pub offending: Vec<ReleaseRecord>,
}

/// Passes iff every released count is 0 or at least `k`.
pub fn audit_transcript(transcript: &ReleaseTranscript, k: PrivacyParam) -> AuditReport {
    let mut checked = 0;
    let mut offending = Vec::new();
    for r in &transcript.records {
        if r.kind.is_count() {
            checked += 1;
            if !k.admits_real(r.value) {
                offending.push(r.clone());
            }
        }
    }
    AuditReport {
        passed: offending.is_empty(),
        checked,
        offending,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn near(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() < tol
    }

    fn k10() -> PrivacyParam {
        PrivacyParam::new(10).unwrap()
    }

    #[test]
    fn reallocate_cases() {
        let s = reallocate(10.0, &[12.0, 10.0]).unwrap();
        assert!(near(s[0], 120.0 / 22.0, 1e-12));
        assert!(near(s[1], 100.0 / 22.0, 1e-12));
        assert_eq!(reallocate(27.0, &[10.0, 10.0]).unwrap(), vec![13.5, 13.5]);
        assert_eq!(reallocate(0.0, &[3.0, 7.0]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(
            reallocate(5.0, &[0.0, 0.0]),
            Err(FedError::DegenerateWeights)
        ));
        assert_eq!(
            reallocate_or_uniform(5.0, &[0.0, 0.0]).unwrap(),
            vec![2.5, 2.5]
        );
    }

    #[test]
    fn reallocate_conserves_total() {
        let w = [0.1, 0.7, 3.3, 1e-3, 9.0];
        let s = reallocate(17.3, &w).unwrap();
        assert!(near(s.iter().sum::<f64>(), 17.3, 1e-12));
    }

    #[test]
    fn next_private_subset_cases() {
        assert_eq!(next_private_subset(&[3.0, 7.0, 10.0], k10()), 2);
        assert_eq!(next_private_subset(&[0.0, 5.0, 5.0], k10()), 1);
        assert_eq!(next_private_subset(&[1.0, 2.0, 3.0], k10()), 3);
        // A non-private remainder is absorbed.
        assert_eq!(next_private_subset(&[10.0, 3.0], k10()), 2);
        assert_eq!(next_private_subset(&[3.0, 7.0, 2.0], k10()), 3);
    }

    #[test]
    fn fix_student_cases() {
        let (f, sums) = fix_student_frequencies(&[12.0, 10.0], &[3.0, 7.0], k10()).unwrap();
        assert!(near(f[0], 5.454545454545454, 1e-12));
        assert!(near(f[1], 4.545454545454546, 1e-12));
        assert_eq!(sums, vec![10.0]);
        let (f, _) = fix_student_frequencies(&[5.0, 5.0], &[10.0, 20.0], k10()).unwrap();
        assert_eq!(f, vec![10.0, 20.0]);
        let (f, sums) =
            fix_student_frequencies(&[10.0, 10.0, 14.0], &[4.0, 10.0, 20.0], k10()).unwrap();
        assert_eq!(&f[..2], &[7.0, 7.0]);
        assert_eq!(sums, vec![14.0, 20.0]);
    }

    #[test]
    fn audit_flags_small_counts() {
        let mut t = ReleaseTranscript::default();
        assert!(audit_transcript(&t, k10()).passed);
        t.push("a", ReleaseKind::MergedBinSum, RecordGroup::X, 5.0);
        t.push("a", ReleaseKind::Boundary, RecordGroup::NotApplicable, 5.0);
        t.push("a", ReleaseKind::NewSubbinCount, RecordGroup::Y, 0.0);
        let r = audit_transcript(&t, k10());
        assert!(!r.passed);
        assert_eq!(r.checked, 2);
        assert_eq!(r.offending.len(), 1);
        assert_eq!(r.offending[0].value, 5.0);
    }

    #[test]
    fn join_order_is_size_desc_then_id() {
        let c = |id: &str, n: usize| GroupedSample::single(id, vec![1.0; n]).unwrap();
        let centers = vec![c("b", 20), c("a", 20), c("z", 50)];
        assert_eq!(join_order(&centers), vec![2, 1, 0]);
    }

    #[test]
    fn transcript_json_shape() {
        let mut t = ReleaseTranscript::default();
        t.push(
            "c1",
            ReleaseKind::ExtremeBuffer,
            RecordGroup::NotApplicable,
            1.5,
        );
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(
            json,
            r#"[{"center_id":"c1","kind":"extreme_buffer","group":"n/a","value":1.5}]"#
        );
    }
}
