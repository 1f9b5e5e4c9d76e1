//! Synthetic multiparty sessions with planted label structure.
#![allow(dead_code)]

use std::collections::BTreeMap;

use convo_core::events::{
    compute_activity, detect_marks, sample_and_window, DetectorConfig, EventMark,
};
use convo_core::fuse::{
    average_face_aus, fuse_clip, FusedDataset, FusionSpec, Horizon, Layout, SlotKind,
};
use convo_core::gc::{clip_gc, GcConfig, MotionSeries};
use convo_core::session::{
    BinaryLabel, ClipWindow, Domain, EventKind, FeatureFrameMatrix, LabeledClip, RatingRecord,
    Session, SpeakerTrack, CLIP_LEN_S,
};
use convo_core::survey::aggregate_and_binarize;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const AUDIO_RATE: u32 = 2000;
pub const SPEAKERS: usize = 4;
pub const SIGNAL_DIMS: usize = 16;

pub struct CorpusParams {
    pub n_sessions: usize,
    pub session_s: f64,
    pub n_per_kind: usize,
    /// Shift applied to the signal dimensions, ± by label.
    pub signal: f64,
    /// Fraction of clips whose features are drawn from the opposite label.
    pub flip_rate: f64,
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            n_sessions: 40,
            session_s: 150.0,
            n_per_kind: 400,
            signal: 0.3,
            flip_rate: 0.05,
            missing_rate: 0.02,
            seed: 17,
        }
    }
}

pub struct Corpus {
    pub sessions: Vec<Session<f64>>,
    pub windows: Vec<ClipWindow>,
    pub ratings: Vec<RatingRecord>,
    pub dataset: FusedDataset<f64>,
}

/// Turn-taking audio: alternating talk spurts with gaps, overlaps and backchannels.
pub fn synthetic_session(id: &str, duration_s: f64, rng: &mut ChaCha8Rng) -> Session<f64> {
    let n = (duration_s * AUDIO_RATE as f64) as usize;
    let mut active = vec![vec![false; n]; SPEAKERS];
    let mut mark = |s: usize, a: f64, b: f64| {
        let lo = ((a.max(0.0)) * AUDIO_RATE as f64) as usize;
        let hi = ((b * AUDIO_RATE as f64) as usize).min(n);
        for v in active[s].iter_mut().take(hi).skip(lo) {
            *v = true;
        }
    };
    let mut t = 0.5;
    let mut speaker = rng.random_range(0..SPEAKERS);
    while t < duration_s {
        let seg = rng.random_range(1.5..5.0);
        mark(speaker, t, t + seg);
        let next = (speaker + rng.random_range(1..SPEAKERS)) % SPEAKERS;
        let u: f64 = rng.random();
        t = if u < 0.3 {
            t + seg + rng.random_range(0.8..1.6)
        } else if u < 0.6 {
            t + seg - rng.random_range(0.3..1.0)
        } else if u < 0.8 {
            let bc = (speaker + rng.random_range(1..SPEAKERS)) % SPEAKERS;
            mark(bc, t + seg / 2.0, t + seg / 2.0 + 0.4);
            t + seg + rng.random_range(0.0..0.3)
        } else {
            t + seg + rng.random_range(0.05..0.4)
        };
        speaker = next;
    }
    let tracks = active
        .into_iter()
        .enumerate()
        .map(|(s, act)| {
            let phase: f64 = rng.random_range(0.0..6.28);
            let samples = act
                .iter()
                .enumerate()
                .map(|(i, &on)| {
                    if on {
                        0.2 * (2.0 * std::f64::consts::PI * 150.0 * i as f64 / AUDIO_RATE as f64
                            + phase)
                            .sin()
                    } else {
                        rng.random_range(-0.01..0.01)
                    }
                })
                .collect();
            SpeakerTrack {
                speaker_id: format!("spk{s}"),
                samples,
                sample_rate: AUDIO_RATE,
            }
        })
        .collect();
    Session::from_tracks(id, tracks).unwrap()
}

fn vggish_frames(
    clip: &str,
    high: bool,
    p: &CorpusParams,
    rng: &mut ChaCha8Rng,
) -> FeatureFrameMatrix<f64> {
    let noise = Normal::new(0.0, 1.0).unwrap();
    let dur = Domain::Vggish.frame_duration_s().unwrap();
    let n_frames = if rng.random::<f64>() < 0.05 { 6 } else { 7 };
    let shift = if high { p.signal } else { -p.signal };
    let rows = (0..n_frames)
        .map(|f| {
            let row = (0..Domain::Vggish.n_dims())
                .map(|d| {
                    if rng.random::<f64>() < p.missing_rate {
                        return None;
                    }
                    let base: f64 = noise.sample(rng);
                    Some(if d < SIGNAL_DIMS { base + shift } else { base })
                })
                .collect();
            (f as f64 * dur, row)
        })
        .collect();
    FeatureFrameMatrix::new(clip, Domain::Vggish, rows, dur).unwrap()
}

fn face_frames(clip: &str, rng: &mut ChaCha8Rng) -> FeatureFrameMatrix<f64> {
    let noise = Normal::new(1.0, 0.3).unwrap();
    let participants: Vec<FeatureFrameMatrix<f64>> = (0..SPEAKERS)
        .map(|_| {
            let rows = (0..420)
                .map(|i| {
                    let row = (0..17).map(|_| Some(noise.sample(rng))).collect();
                    (i as f64 / 60.0, row)
                })
                .collect();
            FeatureFrameMatrix::new(clip, Domain::FaceAu, rows, 1.0 / 60.0).unwrap()
        })
        .collect();
    average_face_aus(clip, &participants, CLIP_LEN_S).unwrap()
}

fn motion_gc(clip: &str, rng: &mut ChaCha8Rng) -> Option<f64> {
    let noise = Normal::new(0.0, 1.0).unwrap();
    let series: Vec<MotionSeries<f64>> = (0..SPEAKERS)
        .map(|p| {
            let mut level = 50.0;
            let samples = (0..420)
                .map(|_| {
                    level += noise.sample(rng);
                    level
                })
                .collect();
            MotionSeries {
                clip_id: clip.into(),
                participant_id: format!("p{p}"),
                samples,
                timestamps: (0..420).map(|i| i as f64 / 60.0).collect(),
            }
        })
        .collect();
    clip_gc(&series, &GcConfig::default())
        .ok()
        .and_then(|r| r.mean_coupling)
}

pub fn corpus_spec() -> FusionSpec {
    FusionSpec::new(
        vec![SlotKind::Vggish, SlotKind::FaceAu, SlotKind::Gc],
        Horizon::Full7s,
    )
    .unwrap()
}

/// Sessions → detected clips → simulated ratings → labels → fused features.
pub fn build_corpus(p: &CorpusParams) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let det = DetectorConfig::default();
    let mut sessions = Vec::new();
    let mut marks: Vec<EventMark> = Vec::new();
    let mut durations = BTreeMap::new();
    for s in 0..p.n_sessions {
        let session = synthetic_session(&format!("sess{s:02}"), p.session_s, &mut rng);
        let act = compute_activity(
            &session,
            det.frame_len_s,
            det.frame_hop_s,
            det.rms_threshold,
        )
        .unwrap();
        marks.extend(detect_marks(&act, det.min_silence_s));
        durations.insert(session.session_id.clone(), session.duration_s);
        sessions.push(session);
    }
    let windows = sample_and_window(&marks, p.n_per_kind, &durations, p.seed)
        .unwrap()
        .windows;

    // Raters see each clip's latent quality through Likert noise.
    let rating_noise = Normal::new(0.0, 0.6).unwrap();
    let raters: Vec<String> = (0..30).map(|r| format!("rater{r:02}")).collect();
    let mut ratings = Vec::new();
    for w in &windows {
        let high = rng.random::<f64>() < 0.5;
        let enjoy_high = if rng.random::<f64>() < 0.85 {
            high
        } else {
            !high
        };
        let event =
            [EventKind::Interrupt, EventKind::Backchannel, EventKind::Gap][rng.random_range(0..3)];
        let mut pool = raters.clone();
        pool.shuffle(&mut rng);
        for rater in pool.into_iter().take(6) {
            let likert = |centre: f64, rng: &mut ChaCha8Rng| {
                (centre + rating_noise.sample(rng)).round().clamp(1.0, 5.0) as u8
            };
            ratings.push(RatingRecord {
                rater_id: rater,
                clip_id: w.clip_id.clone(),
                fluidity: likert(if high { 3.7 } else { 1.5 }, &mut rng),
                enjoyment: likert(if enjoy_high { 3.7 } else { 1.5 }, &mut rng),
                event: if rng.random::<f64>() < 0.7 {
                    event
                } else {
                    EventKind::None
                },
                is_reliability_block: false,
            });
        }
    }
    let labels: BTreeMap<String, _> = aggregate_and_binarize::<f64>(&ratings, 2.5, 4)
        .into_iter()
        .map(|l| (l.clip_id.clone(), l))
        .collect();

    let layout = Layout::new(corpus_spec()).unwrap();
    let clips = windows
        .iter()
        .filter_map(|w| {
            let l = labels.get(&w.clip_id)?;
            let high = l.fluidity_label == BinaryLabel::High;
            let planted = if rng.random::<f64>() < p.flip_rate {
                !high
            } else {
                high
            };
            let frames = [
                vggish_frames(&w.clip_id, planted, p, &mut rng),
                face_frames(&w.clip_id, &mut rng),
            ];
            let gc = motion_gc(&w.clip_id, &mut rng);
            Some(LabeledClip {
                clip_id: w.clip_id.clone(),
                session_id: w.session_id.clone(),
                features: fuse_clip(&w.clip_id, &frames, gc, &layout).unwrap(),
                fluidity: Some(l.fluidity_label),
                enjoyment: Some(l.enjoyment_label),
                event: l.event_label,
            })
        })
        .collect();
    Corpus {
        sessions,
        windows,
        ratings,
        dataset: FusedDataset::new(layout, clips).unwrap(),
    }
}

/// Same features, fluidity labels permuted across clips.
pub fn shuffle_fluidity(ds: &FusedDataset<f64>, seed: u64) -> FusedDataset<f64> {
    let mut labels: Vec<_> = ds.clips.iter().map(|c| c.fluidity).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let clips = ds
        .clips
        .iter()
        .zip(labels)
        .map(|(c, f)| LabeledClip {
            fluidity: f,
            ..c.clone()
        })
        .collect();
    FusedDataset::new(ds.layout.clone(), clips).unwrap()
}
