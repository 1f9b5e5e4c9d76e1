//! Rater reliability screening, clip-level label aggregation, and the
//! statistical tests used on the aggregated ratings.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::session::{BinaryLabel, CoreEvent, EventKind, RatingRecord};
use crate::special::{chi2_sf, student_t_two_sided};

pub const RELIABILITY_MIN_R: f64 = 0.2;
pub const LIKERT_THRESHOLD: f64 = 2.5;
pub const MIN_RATERS: usize = 4;
pub const EVENT_MIN_SHARE: f64 = 0.4;
/// A rater must have rated at least this share of the reliability clips.
pub const RELIABILITY_MIN_COVERAGE: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterReliability<T> {
    pub rater_id: String,
    pub r: Option<T>,
    pub included: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipLabels<T> {
    pub clip_id: String,
    pub n_raters: usize,
    pub mean_fluidity: T,
    pub mean_enjoyment: T,
    pub fluidity_label: BinaryLabel,
    pub enjoyment_label: BinaryLabel,
    pub event_label: Option<CoreEvent>,
}

/// Product-moment correlation; `None` for mismatched or short (< 3) inputs
/// and for constant vectors.
pub fn pearson_r<T: Scalar>(x: &[T], y: &[T]) -> Option<T> {
    if x.len() != y.len() || x.len() < 3 {
        return None;
    }
    let n = T::from_usize_lossy(x.len());
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == T::zero() || syy == T::zero() {
        return None;
    }
    let r = sxy / (sxx * syy).sqrt();
    Some(r.max(-T::one()).min(T::one()))
}

/// Per-rater correlation between their fluidity ratings on the reliability
/// clips and the leave-one-out mean of all other raters on the same clips.
/// Sorted by rater id.
pub fn filter_reliable_raters<T: Scalar>(
    ratings: &[RatingRecord],
    reliability_clip_ids: &BTreeSet<String>,
) -> Vec<RaterReliability<T>> {
    let rel: Vec<&RatingRecord> = ratings
        .iter()
        .filter(|r| reliability_clip_ids.contains(&r.clip_id))
        .collect();
    let mut clip_sum: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    let mut rater_clip: BTreeMap<(&str, &str), (f64, usize)> = BTreeMap::new();
    for r in &rel {
        let e = clip_sum.entry(&r.clip_id).or_default();
        e.0 += r.fluidity as f64;
        e.1 += 1;
        let e = rater_clip.entry((&r.rater_id, &r.clip_id)).or_default();
        e.0 += r.fluidity as f64;
        e.1 += 1;
    }
    let raters: BTreeSet<&str> = ratings.iter().map(|r| r.rater_id.as_str()).collect();
    let need = RELIABILITY_MIN_COVERAGE * reliability_clip_ids.len() as f64;

    raters
        .into_iter()
        .map(|rater| {
            let mine: Vec<&&RatingRecord> = rel.iter().filter(|r| r.rater_id == rater).collect();
            let covered = mine
                .iter()
                .map(|r| r.clip_id.as_str())
                .collect::<BTreeSet<_>>()
                .len();
            let r = if reliability_clip_ids.is_empty() || (covered as f64) < need {
                None
            } else {
                let mut own = Vec::with_capacity(mine.len());
                let mut others = Vec::with_capacity(mine.len());
                for rec in &mine {
                    let (sum, count) = clip_sum[rec.clip_id.as_str()];
                    let (my_sum, my_count) = rater_clip[&(rater, rec.clip_id.as_str())];
                    if count > my_count {
                        own.push(T::of(rec.fluidity as f64));
                        others.push(T::of((sum - my_sum) / (count - my_count) as f64));
                    }
                }
                pearson_r(&own, &others)
            };
            RaterReliability {
                rater_id: rater.to_string(),
                included: passes_reliability(r),
                r,
            }
        })
        .collect()
}

/// Inclusion rule: correlation defined and strictly above 0.2.
pub fn passes_reliability<T: Scalar>(r: Option<T>) -> bool {
    r.is_some_and(|v| v > T::of(RELIABILITY_MIN_R))
}

/// Ratings of the raters marked as included.
pub fn retain_included(
    ratings: &[RatingRecord],
    reliability: &[RaterReliability<impl Scalar>],
) -> Vec<RatingRecord> {
    let keep: BTreeSet<&str> = reliability
        .iter()
        .filter(|r| r.included)
        .map(|r| r.rater_id.as_str())
        .collect();
    ratings
        .iter()
        .filter(|r| keep.contains(r.rater_id.as_str()))
        .cloned()
        .collect()
}

/// The unique modal event if it is one of the three core events and its
/// share strictly exceeds 40%.
pub fn majority_event<'a>(
    ratings: impl IntoIterator<Item = &'a RatingRecord>,
) -> Option<CoreEvent> {
    let mut counts: BTreeMap<EventKind, usize> = BTreeMap::new();
    let mut total = 0usize;
    for r in ratings {
        *counts.entry(r.event).or_default() += 1;
        total += 1;
    }
    let top = *counts.values().max()?;
    let mut modal = counts.iter().filter(|(_, &c)| c == top).map(|(e, _)| *e);
    let event = modal.next()?;
    if modal.next().is_some() {
        return None;
    }
    if top as f64 <= EVENT_MIN_SHARE * total as f64 {
        return None;
    }
    event.core()
}

/// Mean rating per clip across raters (repeat presentations by one rater are
/// averaged first), binarised at `threshold`; clips with fewer than
/// `min_raters` raters are omitted. Sorted by clip id.
pub fn aggregate_and_binarize<T: Scalar>(
    ratings: &[RatingRecord],
    threshold: f64,
    min_raters: usize,
) -> Vec<ClipLabels<T>> {
    let mut by_clip: BTreeMap<&str, Vec<&RatingRecord>> = BTreeMap::new();
    for r in ratings {
        by_clip.entry(&r.clip_id).or_default().push(r);
    }
    let threshold = T::of(threshold);
    let label = |m: T| {
        if m < threshold {
            BinaryLabel::Low
        } else {
            BinaryLabel::High
        }
    };
    by_clip
        .into_iter()
        .filter_map(|(clip, recs)| {
            let mut per_rater: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
            for r in &recs {
                let e = per_rater.entry(&r.rater_id).or_default();
                e.0 += r.fluidity as f64;
                e.1 += r.enjoyment as f64;
                e.2 += 1;
            }
            let n = per_rater.len();
            if n < min_raters {
                return None;
            }
            let (mut f, mut e) = (T::zero(), T::zero());
            for (fs, es, c) in per_rater.values() {
                f += T::of(fs / *c as f64);
                e += T::of(es / *c as f64);
            }
            let mean_fluidity = f / T::from_usize_lossy(n);
            let mean_enjoyment = e / T::from_usize_lossy(n);
            Some(ClipLabels {
                clip_id: clip.to_string(),
                n_raters: n,
                mean_fluidity,
                mean_enjoyment,
                fluidity_label: label(mean_fluidity),
                enjoyment_label: label(mean_enjoyment),
                event_label: majority_event(recs.iter().copied()),
            })
        })
        .collect()
}

/// Fluidity × enjoyment counts: rows fluidity (high, low), columns enjoyment (high, low).
pub fn label_contingency<T>(labels: &[ClipLabels<T>]) -> [[u64; 2]; 2] {
    let mut table = [[0u64; 2]; 2];
    for l in labels {
        let row = (l.fluidity_label == BinaryLabel::Low) as usize;
        let col = (l.enjoyment_label == BinaryLabel::Low) as usize;
        table[row][col] += 1;
    }
    table
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest<T> {
    pub t: T,
    pub df: usize,
    pub p: T,
    /// Zero pooled variance with unequal means: `t` is infinite.
    pub overflow: bool,
}

/// Two-sample Student's t with pooled variance.
pub fn student_t<T: Scalar>(a: &[T], b: &[T]) -> Result<TTest<T>> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid(
            "student_t needs at least two values per sample",
        ));
    }
    let (na, nb) = (T::from_usize_lossy(a.len()), T::from_usize_lossy(b.len()));
    let ma = a.iter().copied().sum::<T>() / na;
    let mb = b.iter().copied().sum::<T>() / nb;
    let ss = |xs: &[T], m: T| xs.iter().map(|&x| (x - m) * (x - m)).sum::<T>();
    let df = a.len() + b.len() - 2;
    let pooled = (ss(a, ma) + ss(b, mb)) / T::from_usize_lossy(df);
    let diff = ma - mb;
    if pooled == T::zero() {
        return Ok(if diff == T::zero() {
            TTest {
                t: T::zero(),
                df,
                p: T::one(),
                overflow: false,
            }
        } else {
            TTest {
                t: T::infinity() * diff.signum(),
                df,
                p: T::zero(),
                overflow: true,
            }
        });
    }
    let t = diff / (pooled * (T::one() / na + T::one() / nb)).sqrt();
    Ok(TTest {
        t,
        df,
        p: student_t_two_sided(t, T::from_usize_lossy(df)),
        overflow: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chi2Test<T> {
    pub chi2: T,
    pub p: T,
}

/// 2×2 χ² test with Yates continuity correction; `None` if any marginal is zero.
pub fn chi2_yates<T: Scalar>(table: [[T; 2]; 2]) -> Option<Chi2Test<T>> {
    let rows = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
    let cols = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
    let total = rows[0] + rows[1];
    if rows.iter().chain(cols.iter()).any(|m| !(*m > T::zero())) {
        return None;
    }
    let half = T::of(0.5);
    let mut chi2 = T::zero();
    for i in 0..2 {
        for j in 0..2 {
            let expected = rows[i] * cols[j] / total;
            let dev = ((table[i][j] - expected).abs() - half).max(T::zero());
            chi2 += dev * dev / expected;
        }
    }
    Some(Chi2Test {
        chi2,
        p: chi2_sf(chi2, T::one()),
    })
}
