//! Silence / overlap turn-taking detection from per-speaker RMS activity.

use std::collections::BTreeMap;

use log::warn;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::session::{ClipWindow, Session, Trigger, CLIP_POST_S, CLIP_PRE_S};

pub const DEFAULT_RMS_THRESHOLD: f64 = 0.05;
pub const DEFAULT_MIN_SILENCE_S: f64 = 0.75;
pub const DEFAULT_FRAME_LEN_S: f64 = 0.05;
pub const DEFAULT_FRAME_HOP_S: f64 = 0.025;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub frame_len_s: f64,
    pub frame_hop_s: f64,
    pub rms_threshold: f64,
    pub min_silence_s: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            frame_len_s: DEFAULT_FRAME_LEN_S,
            frame_hop_s: DEFAULT_FRAME_HOP_S,
            rms_threshold: DEFAULT_RMS_THRESHOLD,
            min_silence_s: DEFAULT_MIN_SILENCE_S,
        }
    }
}

/// Frame-by-speaker voice activity.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityMatrix {
    pub session_id: String,
    pub frame_hop_s: f64,
    pub rms_threshold: f64,
    /// `active[frame][speaker]`.
    pub active: Vec<Vec<bool>>,
}

impl ActivityMatrix {
    pub fn from_rows(
        session_id: impl Into<String>,
        frame_hop_s: f64,
        active: Vec<Vec<bool>>,
    ) -> Result<Self> {
        if !(frame_hop_s > 0.0) {
            return Err(Error::invalid("frame_hop_s must be positive"));
        }
        if let Some(first) = active.first() {
            if active.iter().any(|r| r.len() != first.len()) {
                return Err(Error::invalid(
                    "activity rows have differing speaker counts",
                ));
            }
        }
        Ok(ActivityMatrix {
            session_id: session_id.into(),
            frame_hop_s,
            rms_threshold: DEFAULT_RMS_THRESHOLD,
            active,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.active.len()
    }

    pub fn active_count(&self, frame: usize) -> usize {
        self.active[frame].iter().filter(|a| **a).count()
    }

    /// Frames in which no speaker is above threshold.
    pub fn silent_frames(&self) -> usize {
        (0..self.n_frames())
            .filter(|&f| self.active_count(f) == 0)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMark {
    pub session_id: String,
    pub t_mark: f64,
    pub kind: Trigger,
}

/// Thresholds the RMS of each speaker over `[f·hop, f·hop + len)`; the
/// partial trailing frame is dropped.
pub fn compute_activity<T: Scalar>(
    session: &Session<T>,
    frame_len_s: f64,
    frame_hop_s: f64,
    rms_threshold: f64,
) -> Result<ActivityMatrix> {
    if !(frame_hop_s > 0.0 && frame_len_s >= frame_hop_s) {
        return Err(Error::invalid(format!(
            "need frame_len_s >= frame_hop_s > 0, got len {frame_len_s}, hop {frame_hop_s}"
        )));
    }
    let sr = session.sample_rate() as f64;
    let len = ((frame_len_s * sr).round() as usize).max(1);
    let hop = ((frame_hop_s * sr).round() as usize).max(1);
    let n = session.n_samples();
    let n_frames = if n >= len { (n - len) / hop + 1 } else { 0 };
    let threshold = T::of(rms_threshold);
    let inv_len = T::one() / T::from_usize_lossy(len);

    let mut active = vec![vec![false; session.tracks.len()]; n_frames];
    for (s, track) in session.tracks.iter().enumerate() {
        for (f, row) in active.iter_mut().enumerate() {
            let frame = &track.samples[f * hop..f * hop + len];
            let energy: T = frame.iter().map(|&x| x * x).sum();
            row[s] = (energy * inv_len).sqrt() >= threshold;
        }
    }
    Ok(ActivityMatrix {
        session_id: session.session_id.clone(),
        frame_hop_s: hop as f64 / sr,
        rms_threshold,
        active,
    })
}

/// Silence marks at the start of every maximal all-inactive run lasting at
/// least `min_silence_s`; overlap marks where the active count rises from
/// at most one to two or more. Sorted by time.
pub fn detect_marks(activity: &ActivityMatrix, min_silence_s: f64) -> Vec<EventMark> {
    let hop = activity.frame_hop_s;
    let min_frames = (min_silence_s / hop - TIME_EPS).ceil().max(1.0) as usize;
    let mut marks = Vec::new();
    let mut run_start: Option<usize> = None;
    let mut prev_count = usize::MAX;

    let mark = |frame: usize, kind| EventMark {
        session_id: activity.session_id.clone(),
        t_mark: frame as f64 * hop,
        kind,
    };

    for f in 0..activity.n_frames() {
        let count = activity.active_count(f);
        if count == 0 {
            run_start.get_or_insert(f);
        } else if let Some(start) = run_start.take() {
            if f - start >= min_frames {
                marks.push(mark(start, Trigger::Silence));
            }
        }
        if f > 0 && prev_count <= 1 && count >= 2 {
            marks.push(mark(f, Trigger::Overlap));
        }
        prev_count = count;
    }
    if let Some(start) = run_start {
        if activity.n_frames() - start >= min_frames {
            marks.push(mark(start, Trigger::Silence));
        }
    }
    marks.sort_by(|a, b| a.t_mark.total_cmp(&b.t_mark));
    marks
}

/// Result of per-kind sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledWindows {
    pub windows: Vec<ClipWindow>,
    /// Set when some kind had fewer eligible marks than requested.
    pub insufficient: bool,
}

/// Drops marks whose window leaves the session, then samples up to
/// `n_per_kind` marks of each kind without replacement.
///
/// Output is ordered by session, kind and time; clip ids are
/// `{session_id}_{kind}_{index}` with the index counted per session and kind.
pub fn sample_and_window(
    marks: &[EventMark],
    n_per_kind: usize,
    durations: &BTreeMap<String, f64>,
    seed: u64,
) -> Result<SampledWindows> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<&EventMark> = Vec::new();
    let mut insufficient = false;
    for kind in [Trigger::Silence, Trigger::Overlap] {
        let mut eligible = Vec::new();
        for m in marks.iter().filter(|m| m.kind == kind) {
            let duration = *durations.get(&m.session_id).ok_or_else(|| {
                Error::invalid(format!("no duration for session {}", m.session_id))
            })?;
            if m.t_mark >= CLIP_PRE_S - TIME_EPS && m.t_mark <= duration - CLIP_POST_S + TIME_EPS {
                eligible.push(m);
            }
        }
        eligible.sort_by(|a, b| {
            a.session_id
                .cmp(&b.session_id)
                .then(a.t_mark.total_cmp(&b.t_mark))
        });
        if eligible.len() < n_per_kind {
            warn!(
                "only {} eligible {kind} marks, {n_per_kind} requested",
                eligible.len()
            );
            insufficient = true;
            chosen.extend(eligible);
        } else {
            let picked = sample(&mut rng, eligible.len(), n_per_kind);
            chosen.extend(picked.into_iter().map(|i| eligible[i]));
        }
    }
    chosen.sort_by(|a, b| {
        a.session_id
            .cmp(&b.session_id)
            .then(a.kind.cmp(&b.kind))
            .then(a.t_mark.total_cmp(&b.t_mark))
    });

    let mut counters: BTreeMap<(&str, Trigger), usize> = BTreeMap::new();
    let windows = chosen
        .into_iter()
        .map(|m| {
            let idx = counters.entry((m.session_id.as_str(), m.kind)).or_insert(0);
            let clip_id = format!("{}_{}_{}", m.session_id, m.kind, idx);
            *idx += 1;
            ClipWindow {
                clip_id,
                session_id: m.session_id.clone(),
                t_mark: m.t_mark,
                trigger: m.kind,
            }
        })
        .collect();
    Ok(SampledWindows {
        windows,
        insufficient,
    })
}
