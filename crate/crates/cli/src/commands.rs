//! One function per subcommand. Each reads through [`Run`] and stages its outputs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use convo_core::events::{compute_activity, detect_marks, sample_and_window, EventMark};
use convo_core::formats::{self, LayoutSidecar};
use convo_core::fuse::{average_face_aus, fuse_clip, FusedDataset, Layout, SlotKind};
use convo_core::gc::{clip_gc, MotionSeries};
use convo_core::ml::experiment::{cross_predict, run_cv_experiment, CvOutcome, ExperimentReport};
use convo_core::ml::metrics::MetricsReport;
use convo_core::session::{
    load_session, BinaryLabel, CoreEvent, Domain, FeatureFrameMatrix, LabeledClip, CLIP_LEN_S,
};
use convo_core::survey::{
    aggregate_and_binarize, chi2_yates, filter_reliable_raters, label_contingency, retain_included,
    student_t, ClipLabels, TTest,
};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{experiment_name, Config};
use crate::manifest::{derive_seed, Run};

pub const MANIFEST_CSV: &str = "manifest.csv";
pub const MARKS_JSON: &str = "marks.json";
pub const GC_CSV: &str = "gc.csv";
pub const GC_PAIRWISE_JSON: &str = "gc_pairwise.json";
pub const LABELS_CSV: &str = "labels.csv";
pub const RATERS_JSON: &str = "raters.json";
pub const FUSED_CSV: &str = "fused.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const SUMMARY_CSV: &str = "summary.csv";

/// Detector flags given on the command line; they win over the config.
#[derive(Debug, Default, Clone)]
pub struct DetectOverrides {
    pub rms_threshold: Option<f64>,
    pub min_silence_s: Option<f64>,
    pub frame_len_s: Option<f64>,
    pub frame_hop_s: Option<f64>,
    pub per_kind: Option<usize>,
}

fn section<'a, S>(s: &'a Option<S>, name: &str) -> anyhow::Result<&'a S> {
    s.as_ref()
        .ok_or_else(|| anyhow!("config has no `{name}` section"))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> convo_core::Result<()>) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Layout sidecar of a fused dataset file: `fused.csv` → `fused.layout.json`.
pub fn sidecar_path(dataset: &Path) -> PathBuf {
    dataset.with_extension("layout.json")
}

pub fn detect(cfg: &Config, run: &mut Run, over: &DetectOverrides) -> anyhow::Result<()> {
    let sec = section(&cfg.detect, "detect")?;
    let mut det = sec.detector();
    det.rms_threshold = over.rms_threshold.unwrap_or(det.rms_threshold);
    det.min_silence_s = over.min_silence_s.unwrap_or(det.min_silence_s);
    det.frame_len_s = over.frame_len_s.unwrap_or(det.frame_len_s);
    det.frame_hop_s = over.frame_hop_s.unwrap_or(det.frame_hop_s);
    let per_kind = over.per_kind.unwrap_or(sec.per_kind);

    for path in sec.sessions.iter().flat_map(|s| &s.audio) {
        run.note_input(path)?;
    }
    let detected: Vec<(String, f64, Vec<EventMark>)> = sec
        .sessions
        .par_iter()
        .map(|s| -> anyhow::Result<_> {
            let session = load_session::<f64, _>(&s.audio, &s.id)
                .with_context(|| format!("session {}", s.id))?;
            let act = compute_activity(
                &session,
                det.frame_len_s,
                det.frame_hop_s,
                det.rms_threshold,
            )?;
            Ok((
                s.id.clone(),
                session.duration_s,
                detect_marks(&act, det.min_silence_s),
            ))
        })
        .collect::<anyhow::Result<_>>()?;

    let mut durations = BTreeMap::new();
    let mut marks = Vec::new();
    for (id, duration, m) in detected {
        info!("session {id}: {:.1} s, {} marks", duration, m.len());
        durations.insert(id, duration);
        marks.extend(m);
    }
    let sampled = sample_and_window(
        &marks,
        per_kind,
        &durations,
        derive_seed(run.seed, "detect"),
    )?;
    if sampled.insufficient {
        warn!("fewer eligible marks than --per-kind {per_kind} for some trigger kind");
    }
    info!(
        "{} marks, {} clip windows",
        marks.len(),
        sampled.windows.len()
    );
    run.stage_json(MARKS_JSON, &marks)?;
    run.stage(
        MANIFEST_CSV,
        csv_bytes(|b| formats::write_manifest(b, &sampled.windows))?,
    );
    Ok(())
}

pub fn gc(cfg: &Config, run: &mut Run) -> anyhow::Result<()> {
    let sec = section(&cfg.gc, "gc")?;
    let mut by_clip: BTreeMap<String, Vec<MotionSeries<f64>>> = BTreeMap::new();
    for (i, path) in sec.motion.iter().enumerate() {
        let bytes = run.read(path)?;
        let frames = formats::read_feature_csv::<f64, _>(bytes.as_slice(), Domain::MotionDistance)
            .with_context(|| format!("motion file {}", path.display()))?;
        let stem = path
            .file_stem()
            .map_or_else(|| format!("p{i}"), |s| s.to_string_lossy().into_owned());
        let participant = format!("{i}:{stem}");
        for m in frames {
            let (samples, timestamps) = (0..m.n_frames())
                .filter_map(|f| m.get(f, 0).map(|v| (v, m.times[f])))
                .unzip();
            by_clip
                .entry(m.clip_id.clone())
                .or_default()
                .push(MotionSeries {
                    clip_id: m.clip_id,
                    participant_id: participant.clone(),
                    samples,
                    timestamps,
                });
        }
    }
    let results = by_clip
        .par_iter()
        .map(|(clip, series)| clip_gc(series, &sec.params).with_context(|| format!("clip {clip}")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let undefined = results.iter().filter(|r| r.mean_coupling.is_none()).count();
    info!(
        "{} clips, {undefined} without a defined coupling",
        results.len()
    );
    let rows: Vec<(String, Option<f64>)> = results
        .iter()
        .map(|r| (r.clip_id.clone(), r.mean_coupling))
        .collect();
    run.stage(GC_CSV, csv_bytes(|b| formats::write_gc(b, &rows))?);
    run.stage_json(GC_PAIRWISE_JSON, &results)?;
    Ok(())
}

pub fn labels(cfg: &Config, run: &mut Run) -> anyhow::Result<()> {
    let sec = section(&cfg.labels, "labels")?;
    let bytes = run.read(&sec.ratings)?;
    let ratings = formats::read_ratings(bytes.as_slice())
        .with_context(|| format!("ratings {}", sec.ratings.display()))?;
    let reliability_clips: BTreeSet<String> = match &sec.reliability_clips {
        Some(ids) => ids.iter().cloned().collect(),
        None => ratings
            .iter()
            .filter(|r| r.is_reliability_block)
            .map(|r| r.clip_id.clone())
            .collect(),
    };
    let (reliability, kept) = if reliability_clips.is_empty() {
        warn!("no reliability clips; every rater is included");
        (Vec::new(), ratings)
    } else {
        let rel = filter_reliable_raters::<f64>(&ratings, &reliability_clips);
        let kept = retain_included(&ratings, &rel);
        (rel, kept)
    };
    let included = reliability.iter().filter(|r| r.included).count();
    info!("{included}/{} raters pass reliability", reliability.len());
    let labels = aggregate_and_binarize::<f64>(&kept, sec.threshold, sec.min_raters);
    info!("{} clips labelled", labels.len());
    run.stage(
        LABELS_CSV,
        csv_bytes(|b| formats::write_labels(b, &labels))?,
    );
    run.stage_json(RATERS_JSON, &reliability)?;
    Ok(())
}

/// Configured path if given, otherwise `name` in the output directory when it exists.
fn input_or_default(run: &Run, configured: &Option<PathBuf>, name: &str) -> Option<PathBuf> {
    match configured {
        Some(p) => Some(p.clone()),
        None => Some(run.output_path(name)).filter(|p| p.exists()),
    }
}

pub fn fuse(cfg: &Config, run: &mut Run) -> anyhow::Result<()> {
    let sec = section(&cfg.fuse, "fuse")?;
    let layout = Layout::new(sec.spec())?;

    let manifest_path = sec
        .manifest
        .clone()
        .unwrap_or_else(|| run.output_path(MANIFEST_CSV));
    let windows = formats::read_manifest(run.read(&manifest_path)?.as_slice())
        .with_context(|| format!("manifest {}", manifest_path.display()))?;

    let labels: BTreeMap<String, ClipLabels<f64>> =
        match input_or_default(run, &sec.labels, LABELS_CSV) {
            Some(p) => formats::read_labels::<f64, _>(run.read(&p)?.as_slice())
                .with_context(|| format!("labels {}", p.display()))?
                .into_iter()
                .map(|l| (l.clip_id.clone(), l))
                .collect(),
            None => {
                warn!("no labels file; clips are fused unlabelled");
                BTreeMap::new()
            }
        };

    let gc: BTreeMap<String, Option<f64>> = if sec.spec().includes(SlotKind::Gc) {
        let p = input_or_default(run, &sec.gc, GC_CSV)
            .ok_or_else(|| anyhow!("gc slot requested but no {GC_CSV}"))?;
        formats::read_gc::<f64, _>(run.read(&p)?.as_slice())
            .with_context(|| format!("gc {}", p.display()))?
    } else {
        BTreeMap::new()
    };

    // Per clip, one matrix per domain; face_au participants are averaged first.
    let mut frames: BTreeMap<String, Vec<FeatureFrameMatrix<f64>>> = BTreeMap::new();
    for kind in &sec.domains {
        let Some(domain) = kind.domain() else {
            continue;
        };
        let paths = sec
            .features
            .get(&domain)
            .map(Vec::as_slice)
            .unwrap_or_default();
        if paths.is_empty() {
            warn!("no {domain} feature files; segment left missing");
        }
        let mut per_clip: BTreeMap<String, Vec<FeatureFrameMatrix<f64>>> = BTreeMap::new();
        for path in paths {
            let bytes = run.read(path)?;
            for m in formats::read_feature_csv::<f64, _>(bytes.as_slice(), domain)
                .with_context(|| format!("feature file {}", path.display()))?
            {
                per_clip.entry(m.clip_id.clone()).or_default().push(m);
            }
        }
        for (clip, mut ms) in per_clip {
            let m = if domain == Domain::FaceAu {
                average_face_aus(&clip, &ms, CLIP_LEN_S)?
            } else if ms.len() == 1 {
                ms.pop().expect("one matrix")
            } else {
                bail!("clip {clip} appears in {} {domain} feature files", ms.len());
            };
            frames.entry(clip).or_default().push(m);
        }
    }

    let clips = windows
        .par_iter()
        .map(|w| -> anyhow::Result<LabeledClip<f64>> {
            let f = frames
                .get(&w.clip_id)
                .map(Vec::as_slice)
                .unwrap_or_default();
            let g = gc.get(&w.clip_id).copied().flatten();
            let features = fuse_clip(&w.clip_id, f, g, &layout)?;
            let l = labels.get(&w.clip_id);
            Ok(LabeledClip {
                clip_id: w.clip_id.clone(),
                session_id: w.session_id.clone(),
                features,
                fluidity: l.map(|l| l.fluidity_label),
                enjoyment: l.map(|l| l.enjoyment_label),
                event: l.and_then(|l| l.event_label),
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let dataset = FusedDataset::new(layout, clips)?;
    info!(
        "{} clips, {} features, layout {}",
        dataset.clips.len(),
        dataset.layout.total_len,
        dataset.layout.id()
    );
    run.stage(FUSED_CSV, csv_bytes(|b| formats::write_fused(b, &dataset))?);
    run.stage_json(
        sidecar_path(Path::new(FUSED_CSV)).display().to_string(),
        &LayoutSidecar::new(&dataset.layout),
    )?;
    Ok(())
}

fn load_dataset(cfg: &Config, run: &mut Run) -> anyhow::Result<FusedDataset<f64>> {
    let path = cfg
        .train
        .as_ref()
        .and_then(|t| t.dataset.clone())
        .unwrap_or_else(|| run.output_path(FUSED_CSV));
    let side = sidecar_path(&path);
    let sidecar: LayoutSidecar = serde_json::from_slice(&run.read(&side)?)
        .with_context(|| format!("layout sidecar {}", side.display()))?;
    let layout = sidecar.verify()?;
    let bytes = run.read(&path)?;
    formats::read_fused(bytes.as_slice(), layout)
        .with_context(|| format!("dataset {}", path.display()))
}

fn outcome_name(name: &str) -> String {
    format!("train_{name}.outcome.json")
}

pub fn train(cfg: &Config, run: &mut Run) -> anyhow::Result<()> {
    let sec = section(&cfg.train, "train")?;
    let dataset = load_dataset(cfg, run)?;
    let base = derive_seed(run.seed, "train");
    for exp in &sec.experiments {
        let name = experiment_name(exp);
        let mut exp = exp.clone();
        exp.seed ^= base;
        info!("training {name} ({} iterations)", exp.iterations);
        let outcome =
            run_cv_experiment(&dataset, &exp).with_context(|| format!("experiment {name}"))?;
        let m = &outcome.report.metrics.mean;
        info!(
            "{name}: ROC-AUC {:?}, F1 {:.4}",
            m.roc_auc_macro, m.f1_macro
        );
        run.stage_json(format!("train_{name}.json"), &outcome.report)?;
        run.stage(
            format!("train_{name}.confusion.csv"),
            outcome.report.metrics.confusion_csv().into_bytes(),
        );
        run.stage_json(outcome_name(&name), &outcome)?;
    }
    Ok(())
}

fn cross_name(source: &str, target: impl std::fmt::Display) -> String {
    format!("cross_{source}_to_{target}")
}

pub fn cross(cfg: &Config, run: &mut Run) -> anyhow::Result<()> {
    if cfg.cross.is_empty() {
        bail!("config has no `cross` entries");
    }
    let dataset = load_dataset(cfg, run)?;
    for c in &cfg.cross {
        let path = run.output_path(&outcome_name(&c.source));
        let outcome: CvOutcome<f64> = serde_json::from_slice(&run.read(&path)?)
            .with_context(|| format!("outcome {}", path.display()))?;
        let report = cross_predict(&outcome, &dataset, c.target)
            .with_context(|| format!("cross {}", c.source))?;
        let name = cross_name(&c.source, c.target);
        info!("{name}: ROC-AUC {:?}", report.mean.roc_auc_macro);
        run.stage_json(format!("{name}.json"), &report)?;
        run.stage(
            format!("{name}.confusion.csv"),
            report.confusion_csv().into_bytes(),
        );
    }
    Ok(())
}

type Scale<L> = (&'static str, fn(&ClipLabels<f64>) -> L);

#[derive(Debug, Serialize)]
struct TestRow {
    name: String,
    n_a: usize,
    n_b: usize,
    test: TTest<f64>,
}

#[derive(Debug, Serialize)]
struct LabelSummary {
    n_clips: usize,
    /// Rows fluidity (high, low), columns enjoyment (high, low).
    contingency: [[u64; 2]; 2],
    chi2: Option<f64>,
    chi2_p: Option<f64>,
    event_counts: BTreeMap<String, usize>,
    event_tests: Vec<TestRow>,
}

#[derive(Debug, Serialize)]
struct ScoreRow {
    name: String,
    task: String,
    roc_auc: Option<f64>,
    average_precision: Option<f64>,
    f1_macro: f64,
    balanced_accuracy: f64,
}

impl ScoreRow {
    fn new(name: String, m: &MetricsReport) -> Self {
        ScoreRow {
            name,
            task: m.task.to_string(),
            roc_auc: m.mean.roc_auc_macro,
            average_precision: m.mean.average_precision_macro,
            f1_macro: m.mean.f1_macro,
            balanced_accuracy: m.mean.balanced_accuracy,
        }
    }
}

#[derive(Debug, Serialize)]
struct Summary {
    labels: Option<LabelSummary>,
    gc_tests: Vec<TestRow>,
    experiments: Vec<ScoreRow>,
    cross: Vec<ScoreRow>,
}

fn t_row(name: &str, a: &[f64], b: &[f64]) -> Option<TestRow> {
    match student_t(a, b) {
        Ok(test) => Some(TestRow {
            name: name.into(),
            n_a: a.len(),
            n_b: b.len(),
            test,
        }),
        Err(e) => {
            warn!("{name}: {e}");
            None
        }
    }
}

fn label_summary(labels: &[ClipLabels<f64>]) -> LabelSummary {
    let contingency = label_contingency(labels);
    let chi = chi2_yates(contingency.map(|r| r.map(|v| v as f64)));
    let by_event = |e: CoreEvent, f: fn(&ClipLabels<f64>) -> f64| -> Vec<f64> {
        labels
            .iter()
            .filter(|l| l.event_label == Some(e))
            .map(f)
            .collect()
    };
    let mut event_counts = BTreeMap::new();
    for e in [CoreEvent::Interrupt, CoreEvent::Backchannel, CoreEvent::Gap] {
        event_counts.insert(
            e.as_str().to_string(),
            by_event(e, |l| l.mean_fluidity).len(),
        );
    }
    let pairs = [
        (CoreEvent::Backchannel, CoreEvent::Interrupt),
        (CoreEvent::Backchannel, CoreEvent::Gap),
        (CoreEvent::Interrupt, CoreEvent::Gap),
    ];
    let scales: [Scale<f64>; 2] = [
        ("fluidity", |l| l.mean_fluidity),
        ("enjoyment", |l| l.mean_enjoyment),
    ];
    let mut event_tests = Vec::new();
    for (scale, f) in scales {
        for (a, b) in pairs {
            let name = format!("{scale}:{}_vs_{}", a.as_str(), b.as_str());
            event_tests.extend(t_row(&name, &by_event(a, f), &by_event(b, f)));
        }
    }
    LabelSummary {
        n_clips: labels.len(),
        contingency,
        chi2: chi.map(|c| c.chi2),
        chi2_p: chi.map(|c| c.p),
        event_counts,
        event_tests,
    }
}

fn gc_tests(labels: &[ClipLabels<f64>], gc: &BTreeMap<String, Option<f64>>) -> Vec<TestRow> {
    let scales: [Scale<BinaryLabel>; 2] = [
        ("fluidity", |l| l.fluidity_label),
        ("enjoyment", |l| l.enjoyment_label),
    ];
    let mut rows = Vec::new();
    for (scale, f) in scales {
        let (mut high, mut low) = (Vec::new(), Vec::new());
        for l in labels {
            if let Some(Some(v)) = gc.get(&l.clip_id) {
                match f(l) {
                    BinaryLabel::High => high.push(*v),
                    BinaryLabel::Low => low.push(*v),
                }
            }
        }
        rows.extend(t_row(&format!("gc:{scale}_high_vs_low"), &high, &low));
    }
    rows
}

fn summary_csv(s: &Summary) -> String {
    let mut out = String::from("section,name,statistic,value\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    let mut line = |section: &str, name: &str, stat: &str, value: String| {
        out.push_str(&format!("{section},{name},{stat},{value}\n"));
    };
    if let Some(l) = &s.labels {
        line("labels", "all", "n_clips", l.n_clips.to_string());
        line("labels", "fluidity_x_enjoyment", "chi2", opt(l.chi2));
        line("labels", "fluidity_x_enjoyment", "p", opt(l.chi2_p));
        for (e, n) in &l.event_counts {
            line("labels", e, "n_clips", n.to_string());
        }
    }
    let tests = s
        .labels
        .iter()
        .flat_map(|l| &l.event_tests)
        .map(|t| ("event_tests", t));
    for (section, t) in tests.chain(s.gc_tests.iter().map(|t| ("gc_tests", t))) {
        line(section, &t.name, "t", t.test.t.to_string());
        line(section, &t.name, "df", t.test.df.to_string());
        line(section, &t.name, "p", t.test.p.to_string());
    }
    for (section, rows) in [("experiments", &s.experiments), ("cross", &s.cross)] {
        for r in rows {
            line(section, &r.name, "roc_auc", opt(r.roc_auc));
            line(
                section,
                &r.name,
                "average_precision",
                opt(r.average_precision),
            );
            line(section, &r.name, "f1_macro", r.f1_macro.to_string());
            line(
                section,
                &r.name,
                "balanced_accuracy",
                r.balanced_accuracy.to_string(),
            );
        }
    }
    out
}

pub fn report(cfg: &Config, run: &mut Run) -> anyhow::Result<()> {
    let labels_path = run.output_path(LABELS_CSV);
    let labels = if labels_path.exists() {
        Some(formats::read_labels::<f64, _>(
            run.read(&labels_path)?.as_slice(),
        )?)
    } else {
        None
    };
    let gc_path = run.output_path(GC_CSV);
    let gc = match &labels {
        Some(l) if gc_path.exists() => gc_tests(
            l,
            &formats::read_gc::<f64, _>(run.read(&gc_path)?.as_slice())?,
        ),
        _ => Vec::new(),
    };

    let mut experiments = Vec::new();
    for exp in cfg.train.iter().flat_map(|t| &t.experiments) {
        let name = experiment_name(exp);
        let path = run.output_path(&format!("train_{name}.json"));
        if !path.exists() {
            warn!("{name} has not been trained");
            continue;
        }
        let r: ExperimentReport = serde_json::from_slice(&run.read(&path)?)?;
        experiments.push(ScoreRow::new(name, &r.metrics));
    }
    let mut cross = Vec::new();
    for c in &cfg.cross {
        let name = cross_name(&c.source, c.target);
        let path = run.output_path(&format!("{name}.json"));
        if !path.exists() {
            warn!("{name} has not been run");
            continue;
        }
        let r: MetricsReport = serde_json::from_slice(&run.read(&path)?)?;
        cross.push(ScoreRow::new(name, &r));
    }
    if labels.is_none() && experiments.is_empty() && cross.is_empty() {
        bail!("nothing to report in {}", run.out_dir.display());
    }
    let summary = Summary {
        labels: labels.as_deref().map(label_summary),
        gc_tests: gc,
        experiments,
        cross,
    };
    run.stage(SUMMARY_CSV, summary_csv(&summary).into_bytes());
    run.stage_json(SUMMARY_JSON, &summary)?;
    Ok(())
}
