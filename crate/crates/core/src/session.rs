//! Canonical session, clip and rating types plus audio ingestion.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Seconds before the marked time point that a clip starts.
pub const CLIP_PRE_S: f64 = 3.0;
/// Seconds after the marked time point that a clip ends.
pub const CLIP_POST_S: f64 = 4.0;
/// Total clip length.
pub const CLIP_LEN_S: f64 = CLIP_PRE_S + CLIP_POST_S;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerTrack<T> {
    pub speaker_id: String,
    /// Amplitudes normalised to [-1, 1].
    pub samples: Vec<T>,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session<T> {
    pub session_id: String,
    pub tracks: Vec<SpeakerTrack<T>>,
    pub duration_s: f64,
}

impl<T: Scalar> Session<T> {
    /// Builds a session from in-memory tracks, truncating to the shortest one.
    pub fn from_tracks(
        session_id: impl Into<String>,
        mut tracks: Vec<SpeakerTrack<T>>,
    ) -> Result<Self> {
        let session_id = session_id.into();
        if tracks.len() < 2 {
            return Err(Error::invalid(format!(
                "session {session_id} needs at least 2 speaker tracks, found {}",
                tracks.len()
            )));
        }
        let rate = tracks[0].sample_rate;
        if rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        for t in &tracks {
            if t.sample_rate != rate {
                return Err(Error::SampleRateMismatch {
                    path: t.speaker_id.clone(),
                    expected: rate,
                    found: t.sample_rate,
                });
            }
            if t.samples.is_empty() {
                return Err(Error::EmptyAudio(t.speaker_id.clone()));
            }
            if t.samples.iter().any(|s| !s.is_finite()) {
                return Err(Error::invalid(format!(
                    "non-finite sample in track {}",
                    t.speaker_id
                )));
            }
        }
        let min_len = tracks.iter().map(|t| t.samples.len()).min().unwrap_or(0);
        let max_len = tracks.iter().map(|t| t.samples.len()).max().unwrap_or(0);
        if min_len != max_len {
            warn!(
                "session {session_id}: track lengths differ ({min_len}..{max_len} samples), truncating to {min_len}"
            );
            for t in &mut tracks {
                t.samples.truncate(min_len);
            }
        }
        Ok(Session {
            session_id,
            duration_s: min_len as f64 / rate as f64,
            tracks,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.tracks[0].sample_rate
    }

    pub fn n_samples(&self) -> usize {
        self.tracks[0].samples.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    Silence,
    Overlap,
}

impl Trigger {
    pub fn as_str(self) -> &'static str {
        match self {
            Trigger::Silence => "silence",
            Trigger::Overlap => "overlap",
        }
    }
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Trigger {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "silence" => Ok(Trigger::Silence),
            "overlap" => Ok(Trigger::Overlap),
            other => Err(Error::parse(
                "trigger",
                format!("unknown trigger `{other}`"),
            )),
        }
    }
}

/// A marked time point and its `[t_mark - 3, t_mark + 4)` extraction window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipWindow {
    pub clip_id: String,
    pub session_id: String,
    pub t_mark: f64,
    pub trigger: Trigger,
}

impl ClipWindow {
    pub fn t_start(&self) -> f64 {
        self.t_mark - CLIP_PRE_S
    }

    pub fn t_end(&self) -> f64 {
        self.t_mark + CLIP_POST_S
    }

    pub fn fits_within(&self, duration_s: f64) -> bool {
        self.t_start() >= -TIME_EPS && self.t_end() <= duration_s + TIME_EPS
    }
}

/// Feature domains produced upstream; dimensions and frame durations are fixed per domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Vggish,
    Yamnet,
    Wav2vec2,
    FaceAu,
    MotionDistance,
}

impl Domain {
    pub const ALL: [Domain; 5] = [
        Domain::Vggish,
        Domain::Yamnet,
        Domain::Wav2vec2,
        Domain::FaceAu,
        Domain::MotionDistance,
    ];

    pub fn n_dims(self) -> usize {
        match self {
            Domain::Vggish => 128,
            Domain::Yamnet => 1024,
            Domain::Wav2vec2 => 768,
            Domain::FaceAu => 17,
            Domain::MotionDistance => 1,
        }
    }

    /// Frame duration of the pooled representation. Motion distance has no
    /// fixed framing (59-60 Hz source) and reports `None`.
    pub fn frame_duration_s(self) -> Option<f64> {
        match self {
            Domain::Vggish => Some(0.96),
            Domain::Yamnet => Some(0.48),
            Domain::Wav2vec2 => Some(1.0),
            Domain::FaceAu => Some(0.98),
            Domain::MotionDistance => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Vggish => "vggish",
            Domain::Yamnet => "yamnet",
            Domain::Wav2vec2 => "wav2vec2",
            Domain::FaceAu => "face_au",
            Domain::MotionDistance => "motion_distance",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Domain::ALL
            .into_iter()
            .find(|d| d.as_str() == s.trim())
            .ok_or_else(|| Error::parse("domain", format!("unknown domain `{s}`")))
    }
}

/// Per-clip time × dimension matrix for a single domain (and, for per-participant
/// domains, a single participant stream).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrameMatrix<T> {
    pub clip_id: String,
    pub domain: Domain,
    /// `n_frames × n_dims`; entries where `observed` is false are meaningless.
    pub values: Array2<T>,
    pub observed: Array2<bool>,
    /// Clip-relative start time of every frame, in seconds.
    pub times: Vec<f64>,
    pub frame_duration_s: f64,
}

impl<T: Scalar> FeatureFrameMatrix<T> {
    pub fn new(
        clip_id: impl Into<String>,
        domain: Domain,
        rows: Vec<(f64, Vec<Option<T>>)>,
        frame_duration_s: f64,
    ) -> Result<Self> {
        let clip_id = clip_id.into();
        if !(frame_duration_s > 0.0) {
            return Err(Error::invalid("frame_duration_s must be positive"));
        }
        let d = domain.n_dims();
        let n = rows.len();
        let mut values = Array2::<T>::zeros((n, d));
        let mut observed = Array2::from_elem((n, d), false);
        let mut times = Vec::with_capacity(n);
        for (i, (t, row)) in rows.into_iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    context: format!("{domain} frame {i} of clip {clip_id}"),
                    expected: d,
                    found: row.len(),
                });
            }
            for (j, v) in row.into_iter().enumerate() {
                if let Some(v) = v {
                    if !v.is_finite() {
                        return Err(Error::invalid(format!(
                            "non-finite value in clip {clip_id}"
                        )));
                    }
                    values[[i, j]] = v;
                    observed[[i, j]] = true;
                }
            }
            times.push(t);
        }
        Ok(FeatureFrameMatrix {
            clip_id,
            domain,
            values,
            observed,
            times,
            frame_duration_s,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_dims(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, frame: usize, dim: usize) -> Option<T> {
        self.observed[[frame, dim]].then(|| self.values[[frame, dim]])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Interrupt,
    Backchannel,
    Gap,
    UnrelatedSound,
    None,
}

impl EventKind {
    pub const ALL: [EventKind; 5] = [
        EventKind::Interrupt,
        EventKind::Backchannel,
        EventKind::Gap,
        EventKind::UnrelatedSound,
        EventKind::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Interrupt => "interrupt",
            EventKind::Backchannel => "backchannel",
            EventKind::Gap => "gap",
            EventKind::UnrelatedSound => "unrelated_sound",
            EventKind::None => "none",
        }
    }

    /// The three turn-taking events that are used as classification targets.
    pub fn core(self) -> Option<CoreEvent> {
        match self {
            EventKind::Interrupt => Some(CoreEvent::Interrupt),
            EventKind::Backchannel => Some(CoreEvent::Backchannel),
            EventKind::Gap => Some(CoreEvent::Gap),
            _ => None,
        }
    }
}

impl FromStr for EventKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EventKind::ALL
            .into_iter()
            .find(|e| e.as_str() == s.trim())
            .ok_or_else(|| Error::parse("event", format!("unknown event `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoreEvent {
    Interrupt,
    Backchannel,
    Gap,
}

impl CoreEvent {
    pub const ALL: [CoreEvent; 3] = [CoreEvent::Interrupt, CoreEvent::Backchannel, CoreEvent::Gap];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CoreEvent::Interrupt => "interrupt",
            CoreEvent::Backchannel => "backchannel",
            CoreEvent::Gap => "gap",
        }
    }
}

impl FromStr for CoreEvent {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CoreEvent::ALL
            .into_iter()
            .find(|e| e.as_str() == s.trim())
            .ok_or_else(|| Error::parse("event label", format!("unknown core event `{s}`")))
    }
}

/// Binarised Likert outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryLabel {
    Low,
    High,
}

impl BinaryLabel {
    /// Class index used by the classifiers: low = 0, high = 1.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BinaryLabel::Low => "low",
            BinaryLabel::High => "high",
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            BinaryLabel::Low => BinaryLabel::High,
            BinaryLabel::High => BinaryLabel::Low,
        }
    }
}

impl FromStr for BinaryLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "low" | "0" => Ok(BinaryLabel::Low),
            "high" | "1" => Ok(BinaryLabel::High),
            other => Err(Error::parse(
                "binary label",
                format!("unknown label `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub rater_id: String,
    pub clip_id: String,
    pub fluidity: u8,
    pub enjoyment: u8,
    pub event: EventKind,
    pub is_reliability_block: bool,
}

impl RatingRecord {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("fluidity", self.fluidity), ("enjoyment", self.enjoyment)] {
            if !(1..=5).contains(&v) {
                return Err(Error::invalid(format!(
                    "{name} rating {v} outside 1..5 (rater {}, clip {})",
                    self.rater_id, self.clip_id
                )));
            }
        }
        Ok(())
    }
}

/// Fused fixed-length feature vector with its labels and CV group.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClip<T> {
    pub clip_id: String,
    pub session_id: String,
    /// `None` marks a missing value.
    pub features: Vec<Option<T>>,
    pub fluidity: Option<BinaryLabel>,
    pub enjoyment: Option<BinaryLabel>,
    pub event: Option<CoreEvent>,
}

fn read_wav<T: Scalar>(path: &Path) -> Result<(u32, Vec<Vec<T>>)> {
    let name = path.display().to_string();
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::UnsupportedAudio {
            path: name,
            reason: "zero channels".into(),
        });
    }
    let interleaved: Vec<T> = match spec.sample_format {
        hound::SampleFormat::Int => {
            if spec.bits_per_sample > 32 {
                return Err(Error::UnsupportedAudio {
                    path: name,
                    reason: format!("{}-bit PCM", spec.bits_per_sample),
                });
            }
            let full_scale = T::of((1u64 << (spec.bits_per_sample - 1)) as f64);
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| T::of(v as f64) / full_scale))
                .collect::<std::result::Result<_, _>>()?
        }
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(|v| T::of(v as f64)))
            .collect::<std::result::Result<_, _>>()?,
    };
    if interleaved.is_empty() {
        return Err(Error::EmptyAudio(name));
    }
    let mut per_channel = vec![Vec::with_capacity(interleaved.len() / channels); channels];
    for (i, s) in interleaved.into_iter().enumerate() {
        per_channel[i % channels].push(s);
    }
    Ok((spec.sample_rate, per_channel))
}

/// Loads one session from per-speaker WAV files.
///
/// Mono files contribute one track each; multichannel files contribute one
/// track per channel (`<stem>_ch<n>`). Tracks are truncated to the shortest.
pub fn load_session<T: Scalar, P: AsRef<Path>>(
    audio_paths: &[P],
    session_id: &str,
) -> Result<Session<T>> {
    let mut tracks = Vec::new();
    let mut rate: Option<(u32, String)> = None;
    for path in audio_paths {
        let path = path.as_ref();
        let name = path.display().to_string();
        let (sr, channels) = read_wav::<T>(path)?;
        match &rate {
            None => rate = Some((sr, name.clone())),
            Some((expected, _)) if *expected != sr => {
                return Err(Error::SampleRateMismatch {
                    path: name,
                    expected: *expected,
                    found: sr,
                })
            }
            Some(_) => {}
        }
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("track{}", tracks.len()));
        let multi = channels.len() > 1;
        for (c, samples) in channels.into_iter().enumerate() {
            let speaker_id = if multi {
                format!("{stem}_ch{c}")
            } else {
                stem.clone()
            };
            tracks.push(SpeakerTrack {
                speaker_id,
                samples,
                sample_rate: sr,
            });
        }
    }
    Session::from_tracks(session_id, tracks)
}

/// Writes a track as mono 16-bit PCM.
pub fn write_track_wav<T: Scalar>(track: &SpeakerTrack<T>, path: impl AsRef<Path>) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: track.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in &track.samples {
        let v = (s.as_f64() * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Per-speaker, time-aligned sample slices covering `[t_mark - 3, t_mark + 4)`.
pub fn slice_clip<'a, T: Scalar>(
    session: &'a Session<T>,
    window: &ClipWindow,
) -> Result<Vec<&'a [T]>> {
    let out_of_bounds = || Error::WindowOutOfBounds {
        start: window.t_start(),
        end: window.t_end(),
        duration: session.duration_s,
    };
    if !window.fits_within(session.duration_s) {
        return Err(out_of_bounds());
    }
    let sr = session.sample_rate() as f64;
    let start = (window.t_start().max(0.0) * sr).round() as usize;
    let len = (CLIP_LEN_S * sr).round() as usize;
    if start + len > session.n_samples() {
        return Err(out_of_bounds());
    }
    Ok(session
        .tracks
        .iter()
        .map(|t| &t.samples[start..start + len])
        .collect())
}
