//! Per-clip feature fusion: turns per-domain frame matrices into one
//! fixed-length vector with a recorded layout.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::warn;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::session::{Domain, FeatureFrameMatrix, LabeledClip, CLIP_LEN_S};

const SLOT_EPS: f64 = 1e-9;

/// A block of the fused vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    Vggish,
    Yamnet,
    Wav2vec2,
    FaceAu,
    Gc,
}

impl SlotKind {
    pub fn domain(self) -> Option<Domain> {
        match self {
            SlotKind::Vggish => Some(Domain::Vggish),
            SlotKind::Yamnet => Some(Domain::Yamnet),
            SlotKind::Wav2vec2 => Some(Domain::Wav2vec2),
            SlotKind::FaceAu => Some(Domain::FaceAu),
            SlotKind::Gc => None,
        }
    }

    pub fn from_domain(d: Domain) -> Option<Self> {
        match d {
            Domain::Vggish => Some(SlotKind::Vggish),
            Domain::Yamnet => Some(SlotKind::Yamnet),
            Domain::Wav2vec2 => Some(SlotKind::Wav2vec2),
            Domain::FaceAu => Some(SlotKind::FaceAu),
            Domain::MotionDistance => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SlotKind::Gc => "gc",
            other => other.domain().map(Domain::as_str).unwrap_or("gc"),
        }
    }
}

impl fmt::Display for SlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SlotKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "gc" {
            return Ok(SlotKind::Gc);
        }
        let d: Domain = s.parse()?;
        SlotKind::from_domain(d)
            .ok_or_else(|| Error::parse("fusion domain", format!("`{s}` cannot be fused directly")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Horizon {
    #[serde(rename = "full_7s")]
    Full7s,
    #[serde(rename = "pre_3s")]
    Pre3s,
}

impl Horizon {
    pub fn seconds(self) -> f64 {
        match self {
            Horizon::Full7s => CLIP_LEN_S,
            Horizon::Pre3s => 3.0,
        }
    }
}

/// How frames are reduced to a segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Time-major concatenation of fixed frame slots.
    #[default]
    Flatten,
    /// Per-dimension mean over the kept frames.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionSpec {
    pub domains: Vec<SlotKind>,
    pub horizon: Horizon,
    #[serde(default)]
    pub pooling: Pooling,
}

impl FusionSpec {
    pub fn new(domains: Vec<SlotKind>, horizon: Horizon) -> Result<Self> {
        let spec = FusionSpec {
            domains,
            horizon,
            pooling: Pooling::Flatten,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.domains.is_empty() {
            return Err(Error::invalid("fusion spec needs at least one domain"));
        }
        let mut seen = self.domains.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.domains.len() {
            return Err(Error::invalid("fusion spec lists a domain twice"));
        }
        if self.horizon == Horizon::Pre3s && self.domains.contains(&SlotKind::Gc) {
            return Err(Error::invalid(
                "gc coupling is not defined on the pre-event horizon",
            ));
        }
        Ok(())
    }

    pub fn includes(&self, kind: SlotKind) -> bool {
        self.domains.contains(&kind)
    }

    /// Number of frame slots kept for a domain: frames that end inside the horizon.
    pub fn expected_frames(&self, domain: Domain) -> usize {
        expected_frames(domain, self.horizon)
    }

    pub fn layout(&self) -> Result<Layout> {
        Layout::new(self.clone())
    }
}

pub fn expected_frames(domain: Domain, horizon: Horizon) -> usize {
    match domain.frame_duration_s() {
        Some(dur) => (horizon.seconds() / dur + SLOT_EPS).floor() as usize,
        None => 0,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SlotKind,
    pub offset: usize,
    pub len: usize,
    pub frames: usize,
    pub dims: usize,
}

/// Offsets of every domain block inside the fused vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub spec: FusionSpec,
    pub segments: Vec<Segment>,
    pub total_len: usize,
}

impl Layout {
    pub fn new(spec: FusionSpec) -> Result<Self> {
        spec.validate()?;
        let mut segments = Vec::new();
        let mut offset = 0;
        for &kind in spec.domains.iter().filter(|k| **k != SlotKind::Gc) {
            let domain = kind.domain().expect("non-gc slot has a domain");
            let dims = domain.n_dims();
            let frames = match spec.pooling {
                Pooling::Flatten => spec.expected_frames(domain),
                Pooling::Mean => 1,
            };
            segments.push(Segment {
                kind,
                offset,
                len: frames * dims,
                frames,
                dims,
            });
            offset += frames * dims;
        }
        if spec.includes(SlotKind::Gc) {
            segments.push(Segment {
                kind: SlotKind::Gc,
                offset,
                len: 1,
                frames: 1,
                dims: 1,
            });
            offset += 1;
        }
        Ok(Layout {
            spec,
            segments,
            total_len: offset,
        })
    }

    pub fn segment(&self, kind: SlotKind) -> Option<&Segment> {
        self.segments.iter().find(|s| s.kind == kind)
    }

    /// Stable identifier of the layout (FNV-1a over its canonical description).
    pub fn id(&self) -> String {
        let mut desc = format!("{:?}|{:?}", self.spec.horizon, self.spec.pooling);
        for s in &self.segments {
            desc.push_str(&format!("|{}:{}:{}:{}", s.kind, s.offset, s.frames, s.dims));
        }
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in desc.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    /// Column indices of `target` inside vectors laid out by `self`.
    ///
    /// Works for domain subsets and for shorter horizons: a pre-event layout
    /// is the leading frame slots of each full-horizon segment.
    pub fn select(&self, target: &FusionSpec) -> Result<Vec<usize>> {
        target.validate()?;
        if target.pooling != self.spec.pooling {
            return Err(Error::LayoutMismatch(
                "pooling differs between layouts".into(),
            ));
        }
        let target_layout = Layout::new(target.clone())?;
        let mut cols = Vec::with_capacity(target_layout.total_len);
        for seg in &target_layout.segments {
            let src = self.segment(seg.kind).ok_or_else(|| {
                Error::LayoutMismatch(format!("source layout has no `{}` segment", seg.kind))
            })?;
            if seg.frames > src.frames || seg.dims != src.dims {
                return Err(Error::LayoutMismatch(format!(
                    "`{}` needs {} frames, source has {}",
                    seg.kind, seg.frames, src.frames
                )));
            }
            cols.extend(src.offset..src.offset + seg.len);
        }
        Ok(cols)
    }
}

/// Window-averages each participant's 17 action-unit series to 0.98 s frames,
/// then averages across participants per frame and unit.
///
/// Rows are bucketed by their start time, so both source-rate (60 Hz) and
/// pre-framed inputs work. The trailing partial window is dropped.
pub fn average_face_aus<T: Scalar>(
    clip_id: &str,
    participants: &[FeatureFrameMatrix<T>],
    clip_duration_s: f64,
) -> Result<FeatureFrameMatrix<T>> {
    let dur = Domain::FaceAu
        .frame_duration_s()
        .expect("face frames have a duration");
    let n_dims = Domain::FaceAu.n_dims();
    let n_windows = (clip_duration_s / dur + SLOT_EPS).floor() as usize;
    let mut sum = Array2::<T>::zeros((n_windows, n_dims));
    let mut count = Array2::<usize>::zeros((n_windows, n_dims));

    for p in participants {
        if p.domain != Domain::FaceAu || p.n_dims() != n_dims {
            return Err(Error::DimensionMismatch {
                context: format!("face action units for clip {clip_id}"),
                expected: n_dims,
                found: p.n_dims(),
            });
        }
        let mut psum = Array2::<T>::zeros((n_windows, n_dims));
        let mut pcount = Array2::<usize>::zeros((n_windows, n_dims));
        for (row, &t) in p.times.iter().enumerate() {
            if t < -SLOT_EPS {
                continue;
            }
            let w = (t / dur + SLOT_EPS).floor() as usize;
            if w >= n_windows {
                continue;
            }
            for j in 0..n_dims {
                if let Some(v) = p.get(row, j) {
                    psum[[w, j]] += v;
                    pcount[[w, j]] += 1;
                }
            }
        }
        for w in 0..n_windows {
            for j in 0..n_dims {
                if pcount[[w, j]] > 0 {
                    sum[[w, j]] += psum[[w, j]] / T::from_usize_lossy(pcount[[w, j]]);
                    count[[w, j]] += 1;
                }
            }
        }
    }

    let rows = (0..n_windows)
        .map(|w| {
            let vals = (0..n_dims)
                .map(|j| {
                    (count[[w, j]] > 0).then(|| sum[[w, j]] / T::from_usize_lossy(count[[w, j]]))
                })
                .collect();
            (w as f64 * dur, vals)
        })
        .collect();
    FeatureFrameMatrix::new(clip_id, Domain::FaceAu, rows, dur)
}

/// A pooled domain segment plus the number of frames dropped past the clip end.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledSegment<T> {
    pub values: Vec<Option<T>>,
    pub truncated: usize,
}

/// Reduces one domain's frames to its fixed-length segment under `spec`.
pub fn pool_embeddings<T: Scalar>(
    frames: &FeatureFrameMatrix<T>,
    spec: &FusionSpec,
) -> Result<PooledSegment<T>> {
    let kind = SlotKind::from_domain(frames.domain).ok_or_else(|| {
        Error::invalid(format!("{} frames are not pooled directly", frames.domain))
    })?;
    if !spec.includes(kind) {
        return Err(Error::invalid(format!(
            "domain {kind} is not part of the fusion spec"
        )));
    }
    let domain = frames.domain;
    let dur = domain
        .frame_duration_s()
        .expect("pooled domains have a frame duration");
    let dims = domain.n_dims();
    let kept = spec.expected_frames(domain);
    let clip_slots = expected_frames(domain, Horizon::Full7s);

    let mut slots: Vec<Option<usize>> = vec![None; kept];
    let mut truncated = 0;
    for (row, &t) in frames.times.iter().enumerate() {
        let slot_f = (t / dur).round();
        if slot_f < 0.0 || slot_f as usize >= clip_slots {
            truncated += 1;
            continue;
        }
        let slot = slot_f as usize;
        if slot >= kept {
            continue;
        }
        if slots[slot].is_some() {
            return Err(Error::invalid(format!(
                "clip {}: two {domain} frames start at slot {slot}",
                frames.clip_id
            )));
        }
        slots[slot] = Some(row);
    }
    if truncated > 0 {
        warn!(
            "clip {}: dropped {truncated} {domain} frame(s) beyond the clip",
            frames.clip_id
        );
    }

    let values = match spec.pooling {
        Pooling::Flatten => {
            let mut out = vec![None; kept * dims];
            for (slot, row) in slots.iter().enumerate() {
                if let Some(row) = *row {
                    for j in 0..dims {
                        out[slot * dims + j] = frames.get(row, j);
                    }
                }
            }
            out
        }
        Pooling::Mean => (0..dims)
            .map(|j| {
                let obs: Vec<T> = slots
                    .iter()
                    .flatten()
                    .filter_map(|&r| frames.get(r, j))
                    .collect();
                (!obs.is_empty()).then(|| crate::scalar::mean(&obs))
            })
            .collect(),
    };
    Ok(PooledSegment { values, truncated })
}

/// Concatenates domain segments in layout order, appending the gc scalar last.
pub fn assemble<T: Scalar>(
    clip_id: &str,
    segments: &BTreeMap<SlotKind, Vec<Option<T>>>,
    gc: Option<T>,
    layout: &Layout,
) -> Result<Vec<Option<T>>> {
    let mut out = Vec::with_capacity(layout.total_len);
    for seg in &layout.segments {
        if seg.kind == SlotKind::Gc {
            out.push(gc.filter(|v| v.is_finite()));
            continue;
        }
        let values = segments.get(&seg.kind).ok_or_else(|| {
            Error::LayoutMismatch(format!("clip {clip_id} has no `{}` segment", seg.kind))
        })?;
        if values.len() != seg.len {
            return Err(Error::LayoutMismatch(format!(
                "clip {clip_id}: `{}` segment has {} values, layout expects {}",
                seg.kind,
                values.len(),
                seg.len
            )));
        }
        out.extend_from_slice(values);
    }
    Ok(out)
}

/// Pools every available domain matrix for one clip and assembles the vector.
/// Domains absent from `frames` yield an all-missing segment.
pub fn fuse_clip<T: Scalar>(
    clip_id: &str,
    frames: &[FeatureFrameMatrix<T>],
    gc: Option<T>,
    layout: &Layout,
) -> Result<Vec<Option<T>>> {
    let mut segments = BTreeMap::new();
    for seg in layout.segments.iter().filter(|s| s.kind != SlotKind::Gc) {
        let domain = seg.kind.domain().expect("non-gc slot");
        let pooled = match frames.iter().find(|f| f.domain == domain) {
            Some(m) => pool_embeddings(m, &layout.spec)?.values,
            None => vec![None; seg.len],
        };
        segments.insert(seg.kind, pooled);
    }
    assemble(clip_id, &segments, gc, layout)
}

/// Every clip of a dataset, sharing one layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedDataset<T> {
    pub layout: Layout,
    pub clips: Vec<LabeledClip<T>>,
}

impl<T: Scalar> FusedDataset<T> {
    pub fn new(layout: Layout, clips: Vec<LabeledClip<T>>) -> Result<Self> {
        for c in &clips {
            if c.features.len() != layout.total_len {
                return Err(Error::LayoutMismatch(format!(
                    "clip {} has {} features, layout expects {}",
                    c.clip_id,
                    c.features.len(),
                    layout.total_len
                )));
            }
        }
        Ok(FusedDataset { layout, clips })
    }

    /// Restricts every clip to the columns of a narrower spec.
    pub fn project(&self, target: &FusionSpec) -> Result<FusedDataset<T>> {
        let cols = self.layout.select(target)?;
        let layout = Layout::new(target.clone())?;
        let clips = self
            .clips
            .iter()
            .map(|c| LabeledClip {
                features: cols.iter().map(|&i| c.features[i]).collect(),
                ..c.clone()
            })
            .collect();
        Ok(FusedDataset { layout, clips })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(domain: Domain, n: usize, start_val: f64) -> FeatureFrameMatrix<f64> {
        let dur = domain.frame_duration_s().unwrap();
        let rows = (0..n)
            .map(|i| {
                (
                    i as f64 * dur,
                    vec![Some(start_val + i as f64); domain.n_dims()],
                )
            })
            .collect();
        FeatureFrameMatrix::new("c", domain, rows, dur).unwrap()
    }

    #[test]
    fn expected_frame_counts() {
        let counts = |h| {
            [
                Domain::Vggish,
                Domain::Yamnet,
                Domain::Wav2vec2,
                Domain::FaceAu,
            ]
            .map(|d| expected_frames(d, h))
        };
        assert_eq!(counts(Horizon::Full7s), [7, 14, 7, 7]);
        assert_eq!(counts(Horizon::Pre3s), [3, 6, 3, 3]);
    }

    #[test]
    fn vggish_segment_lengths() {
        let full = FusionSpec::new(vec![SlotKind::Vggish], Horizon::Full7s).unwrap();
        let pre = FusionSpec::new(vec![SlotKind::Vggish], Horizon::Pre3s).unwrap();
        let f = frames(Domain::Vggish, 7, 0.0);
        assert_eq!(pool_embeddings(&f, &full).unwrap().values.len(), 896);
        let p = pool_embeddings(&f, &pre).unwrap().values;
        assert_eq!(p.len(), 384);
        assert_eq!(p[256], Some(2.0));
    }

    #[test]
    fn missing_trailing_frame_is_padded() {
        let full = FusionSpec::new(vec![SlotKind::Vggish], Horizon::Full7s).unwrap();
        let seg = pool_embeddings(&frames(Domain::Vggish, 6, 0.0), &full)
            .unwrap()
            .values;
        assert_eq!(seg.len(), 896);
        assert!(seg[768..].iter().all(Option::is_none));
        assert!(seg[..768].iter().all(Option::is_some));
    }

    #[test]
    fn extra_frames_are_truncated() {
        let full = FusionSpec::new(vec![SlotKind::Vggish], Horizon::Full7s).unwrap();
        let seg = pool_embeddings(&frames(Domain::Vggish, 9, 0.0), &full).unwrap();
        assert_eq!(seg.values.len(), 896);
        assert_eq!(seg.truncated, 2);
    }

    #[test]
    fn layout_lengths() {
        let spec = FusionSpec::new(
            vec![SlotKind::Vggish, SlotKind::FaceAu, SlotKind::Gc],
            Horizon::Full7s,
        )
        .unwrap();
        assert_eq!(spec.layout().unwrap().total_len, 1016);
        let spec = FusionSpec::new(vec![SlotKind::FaceAu], Horizon::Pre3s).unwrap();
        assert_eq!(spec.layout().unwrap().total_len, 51);
        assert!(FusionSpec::new(vec![SlotKind::Gc], Horizon::Pre3s).is_err());
    }

    #[test]
    fn gc_slot_goes_last_and_may_be_missing() {
        let spec = FusionSpec::new(vec![SlotKind::Gc, SlotKind::FaceAu], Horizon::Full7s).unwrap();
        let layout = spec.layout().unwrap();
        assert_eq!(layout.segments.last().unwrap().kind, SlotKind::Gc);
        let face = frames(Domain::FaceAu, 7, 1.0);
        let v = fuse_clip("c", &[face], None, &layout).unwrap();
        assert_eq!(v.len(), 120);
        assert_eq!(v[119], None);
        assert_eq!(v[0], Some(1.0));
    }

    #[test]
    fn face_average_of_constants() {
        let mk = |v: f64| {
            let rows = (0..420)
                .map(|i| (i as f64 / 60.0, vec![Some(v); 17]))
                .collect();
            FeatureFrameMatrix::new("c", Domain::FaceAu, rows, 1.0 / 60.0).unwrap()
        };
        let out = average_face_aus("c", &[mk(1.0), mk(3.0)], 7.0).unwrap();
        assert_eq!(out.n_frames(), 7);
        for i in 0..7 {
            for j in 0..17 {
                assert!((out.get(i, j).unwrap() - 2.0).abs() < 1e-12);
            }
        }
        let single = average_face_aus("c", &[mk(1.5)], 7.0).unwrap();
        assert!((single.get(3, 4).unwrap() - 1.5).abs() < 1e-12);
        let empty = average_face_aus::<f64>("c", &[], 7.0).unwrap();
        assert_eq!(empty.n_frames(), 7);
        assert!(empty.observed.iter().all(|o| !o));
    }

    #[test]
    fn face_windows_average_ramp() {
        // 60 Hz ramp: window w holds samples with t in [0.98w, 0.98(w+1))
        let rows = (0..420)
            .map(|i| (i as f64 / 60.0, vec![Some(i as f64); 17]))
            .collect();
        let m = FeatureFrameMatrix::new("c", Domain::FaceAu, rows, 1.0 / 60.0).unwrap();
        let out = average_face_aus("c", &[m], 7.0).unwrap();
        // brute force window 0: i/60 < 0.98 -> i <= 58
        let want: f64 = (0..=58).map(|i| i as f64).sum::<f64>() / 59.0;
        assert!((out.get(0, 0).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn select_pre_from_full() {
        let full = FusionSpec::new(
            vec![SlotKind::Vggish, SlotKind::FaceAu, SlotKind::Gc],
            Horizon::Full7s,
        )
        .unwrap()
        .layout()
        .unwrap();
        let pre = FusionSpec::new(vec![SlotKind::FaceAu], Horizon::Pre3s).unwrap();
        let cols = full.select(&pre).unwrap();
        assert_eq!(cols, (896..896 + 51).collect::<Vec<_>>());
        let missing = FusionSpec::new(vec![SlotKind::Yamnet], Horizon::Full7s).unwrap();
        assert!(full.select(&missing).is_err());
    }

    #[test]
    fn mean_pooling_flag() {
        let spec = FusionSpec {
            domains: vec![SlotKind::Vggish],
            horizon: Horizon::Full7s,
            pooling: Pooling::Mean,
        };
        let seg = pool_embeddings(&frames(Domain::Vggish, 7, 0.0), &spec)
            .unwrap()
            .values;
        assert_eq!(seg.len(), 128);
        assert_eq!(seg[0], Some(3.0));
    }
}
