//! Fixture corpus written to disk for driving the binary.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use convo_core::formats;
use convo_core::session::{
    write_track_wav, ClipWindow, Domain, EventKind, FeatureFrameMatrix, RatingRecord, SpeakerTrack,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SAMPLE_RATE: u32 = 8000;

pub fn convo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convo"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn convo")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn write_json(path: &Path, value: &serde_json::Value) {
    std::fs::write(path, serde_json::to_vec_pretty(value).unwrap()).unwrap();
}

/// A 300 Hz tone at amplitude 0.5 inside each `(start, end)` span, silence elsewhere.
pub fn tone_track(id: &str, duration_s: f64, spans: &[(f64, f64)]) -> SpeakerTrack<f64> {
    let n = (duration_s * SAMPLE_RATE as f64) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            if spans.iter().any(|&(a, b)| t >= a && t < b) {
                0.5 * (2.0 * std::f64::consts::PI * 300.0 * t).sin()
            } else {
                0.0
            }
        })
        .collect();
    SpeakerTrack {
        speaker_id: id.into(),
        samples,
        sample_rate: SAMPLE_RATE,
    }
}

/// Writes one WAV per track and returns the paths.
pub fn write_session(
    dir: &Path,
    session: &str,
    duration_s: f64,
    spans: &[Vec<(f64, f64)>],
) -> Vec<PathBuf> {
    spans
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let path = dir.join(format!("{session}_spk{i}.wav"));
            write_track_wav(&tone_track(&format!("spk{i}"), duration_s, s), &path).unwrap();
            path
        })
        .collect()
}

/// Alternating turns with random gaps (silence marks) and overlaps (overlap marks).
pub fn random_turns(
    n_speakers: usize,
    duration_s: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<(f64, f64)>> {
    let mut spans = vec![Vec::new(); n_speakers];
    let mut t = 0.5;
    let mut speaker = 0;
    while t < duration_s - 1.0 {
        let end = (t + rng.random_range(1.5..4.0)).min(duration_s);
        spans[speaker].push((t, end));
        let next = (speaker + rng.random_range(1..n_speakers)) % n_speakers;
        t = match rng.random_range(0..3) {
            0 => end + rng.random_range(0.9..1.6),
            1 => end - rng.random_range(0.3..0.8),
            _ => end + 0.1,
        };
        speaker = next;
    }
    spans
}

/// Latent quality of a clip, fixed by its id.
pub fn latent_high(clip_id: &str) -> bool {
    clip_id
        .bytes()
        .fold(7u32, |h, b| h.wrapping_mul(31).wrapping_add(b as u32))
        % 2
        == 0
}

/// Ratings from 12 honest raters (6 per clip) and one constant rater,
/// plus a reliability block over the first 8 clips rated by everyone twice.
pub fn ratings(windows: &[ClipWindow], seed: u64) -> Vec<RatingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let likert = |high: bool, rng: &mut ChaCha8Rng| -> u8 {
        let centre = if high { 3.8 } else { 1.6 };
        (centre + rng.random_range(-1.0..1.0f64))
            .round()
            .clamp(1.0, 5.0) as u8
    };
    let events = [EventKind::Interrupt, EventKind::Backchannel, EventKind::Gap];
    for (i, w) in windows.iter().enumerate() {
        let high = latent_high(&w.clip_id);
        let enjoy = if i % 7 == 0 { !high } else { high };
        let event = events[i % 3];
        let reliability = i < 8;
        let raters: Vec<usize> = if reliability {
            (0..13).collect()
        } else {
            (0..6).map(|k| (i + k) % 12).collect()
        };
        for rep in 0..(if reliability { 2 } else { 1 }) {
            for &r in &raters {
                let constant = r == 12;
                out.push(RatingRecord {
                    rater_id: format!("r{r:02}"),
                    clip_id: w.clip_id.clone(),
                    fluidity: if constant { 3 } else { likert(high, &mut rng) },
                    enjoyment: if constant { 3 } else { likert(enjoy, &mut rng) },
                    event: if rep == 0 && rng.random::<f64>() < 0.8 {
                        event
                    } else {
                        EventKind::None
                    },
                    is_reliability_block: reliability,
                });
            }
        }
    }
    out
}

fn frames(
    clip: &str,
    domain: Domain,
    n: usize,
    dur: f64,
    row: impl Fn(usize) -> Vec<Option<f64>>,
) -> FeatureFrameMatrix<f64> {
    FeatureFrameMatrix::new(
        clip,
        domain,
        (0..n).map(|f| (f as f64 * dur, row(f))).collect(),
        dur,
    )
    .unwrap()
}

/// Per-domain feature files for every clip: vggish carries the planted signal,
/// face AUs (two participants) and motion (three participants) are noise.
pub struct FeatureFiles {
    pub vggish: PathBuf,
    pub face: Vec<PathBuf>,
    pub motion: Vec<PathBuf>,
}

pub fn write_features(dir: &Path, windows: &[ClipWindow], seed: u64) -> FeatureFiles {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vggish = Vec::new();
    let mut face = vec![Vec::new(); 2];
    let mut motion = vec![Vec::new(); 3];
    for w in windows {
        let shift = if latent_high(&w.clip_id) { 1.0 } else { -1.0 };
        let noise: Vec<f64> = (0..7 * 128).map(|_| rng.random_range(-1.0..1.0)).collect();
        vggish.push(frames(&w.clip_id, Domain::Vggish, 7, 0.96, |f| {
            (0..128)
                .map(|d| Some(noise[f * 128 + d] + if d < 8 { shift } else { 0.0 }))
                .collect()
        }));
        for p in &mut face {
            let noise: Vec<f64> = (0..7 * 17).map(|_| rng.random_range(0.0..1.0)).collect();
            p.push(frames(&w.clip_id, Domain::FaceAu, 7, 0.98, |f| {
                (0..17).map(|d| Some(noise[f * 17 + d])).collect()
            }));
        }
        for p in &mut motion {
            let mut level = 50.0;
            let walk: Vec<f64> = (0..420)
                .map(|_| {
                    level += rng.random_range(-0.5..0.5);
                    level
                })
                .collect();
            p.push(frames(
                &w.clip_id,
                Domain::MotionDistance,
                420,
                1.0 / 60.0,
                |f| vec![Some(walk[f])],
            ));
        }
    }
    let write = |name: String, m: &[FeatureFrameMatrix<f64>]| {
        let path = dir.join(name);
        formats::write_feature_csv(std::fs::File::create(&path).unwrap(), m).unwrap();
        path
    };
    FeatureFiles {
        vggish: write("vggish.csv".into(), &vggish),
        face: face
            .iter()
            .enumerate()
            .map(|(i, m)| write(format!("face_p{i}.csv"), m))
            .collect(),
        motion: motion
            .iter()
            .enumerate()
            .map(|(i, m)| write(format!("motion_p{i}.csv"), m))
            .collect(),
    }
}

pub fn read_manifest(path: &Path) -> Vec<ClipWindow> {
    formats::read_manifest(std::fs::File::open(path).unwrap()).unwrap()
}

pub fn write_ratings(path: &Path, ratings: &[RatingRecord]) {
    formats::write_ratings(std::fs::File::create(path).unwrap(), ratings).unwrap();
}
