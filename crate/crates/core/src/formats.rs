//! CSV and JSON file formats exchanged between pipeline stages.
//!
//! Missing numeric values are empty cells. Writers use the shortest
//! round-tripping decimal form so repeated runs produce identical bytes.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use csv::{ReaderBuilder, StringRecord, Writer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fuse::{FusedDataset, Layout};
use crate::scalar::Scalar;
use crate::session::{
    BinaryLabel, ClipWindow, CoreEvent, Domain, EventKind, FeatureFrameMatrix, LabeledClip,
    RatingRecord, Trigger,
};
use crate::survey::ClipLabels;

pub const MANIFEST_HEADER: [&str; 4] = ["clip_id", "session_id", "t_mark", "trigger"];
pub const RATINGS_HEADER: [&str; 6] = [
    "rater_id",
    "clip_id",
    "fluidity",
    "enjoyment",
    "event",
    "is_reliability_block",
];
pub const LABELS_HEADER: [&str; 7] = [
    "clip_id",
    "n_raters",
    "mean_fluidity",
    "mean_enjoyment",
    "label_fluidity",
    "label_enjoyment",
    "label_event",
];
pub const GC_HEADER: [&str; 2] = ["clip_id", "mean_gc"];
const FUSED_FIXED: [&str; 5] = [
    "clip_id",
    "session_id",
    "label_fluidity",
    "label_enjoyment",
    "label_event",
];

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(r)
}

fn check_header(context: &str, found: &StringRecord, expected: &[String]) -> Result<()> {
    if found.len() != expected.len() || found.iter().zip(expected).any(|(a, b)| a.trim() != b) {
        return Err(Error::parse(
            context,
            format!(
                "header must be `{}`, found `{}`",
                expected.join(","),
                found.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    Ok(())
}

fn owned(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

fn check_width(context: &str, line: usize, rec: &StringRecord, width: usize) -> Result<()> {
    if rec.len() != width {
        return Err(Error::parse(
            context,
            format!("line {line}: expected {width} fields, found {}", rec.len()),
        ));
    }
    Ok(())
}

fn parse_num<T: Scalar>(context: &str, line: usize, cell: &str) -> Result<Option<T>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    let v: f64 = cell
        .parse()
        .map_err(|_| Error::parse(context, format!("line {line}: `{cell}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(
            context,
            format!("line {line}: non-finite value `{cell}`"),
        ));
    }
    Ok(Some(T::of(v)))
}

fn required<T: Scalar>(context: &str, line: usize, cell: &str) -> Result<T> {
    parse_num(context, line, cell)?
        .ok_or_else(|| Error::parse(context, format!("line {line}: empty required field")))
}

fn fmt_opt<T: Scalar>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_with<V, F>(context: &str, line: usize, cell: &str, f: F) -> Result<V>
where
    F: FnOnce(&str) -> Result<V>,
{
    f(cell.trim()).map_err(|e| Error::parse(context, format!("line {line}: {e}")))
}

/// Header of a feature file for `domain`.
pub fn feature_header(domain: Domain) -> Vec<String> {
    let mut h = owned(&["clip_id", "frame_index", "t0"]);
    h.extend((0..domain.n_dims()).map(|i| format!("f{i}")));
    h
}

/// What a conforming feature file contains.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureFileSummary {
    pub domain: Domain,
    pub n_rows: usize,
    pub n_dims: usize,
    /// Frame count per clip.
    pub frames: BTreeMap<String, usize>,
    pub missing_cells: usize,
}

struct FeatureRow<T> {
    clip_id: String,
    frame_index: u64,
    t0: f64,
    values: Vec<Option<T>>,
}

fn scan_features<T: Scalar, R: Read>(r: R, domain: Domain) -> Result<Vec<FeatureRow<T>>> {
    let ctx = format!("{domain} feature file");
    let mut rdr = reader(r);
    check_header(&ctx, rdr.headers()?, &feature_header(domain))?;
    let width = domain.n_dims() + 3;
    let mut rows = Vec::new();
    let mut seen: BTreeMap<(String, u64), usize> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        check_width(&ctx, line, &rec, width)?;
        let clip_id = rec[0].trim().to_string();
        if clip_id.is_empty() {
            return Err(Error::parse(&ctx, format!("line {line}: empty clip_id")));
        }
        let frame_index: u64 = rec[1].trim().parse().map_err(|_| {
            Error::parse(
                &ctx,
                format!("line {line}: frame_index `{}` is not an integer", &rec[1]),
            )
        })?;
        if let Some(prev) = seen.insert((clip_id.clone(), frame_index), line) {
            return Err(Error::parse(
                &ctx,
                format!("line {line}: frame {frame_index} of {clip_id} repeats line {prev}"),
            ));
        }
        let t0: f64 = required(&ctx, line, &rec[2])?;
        let values = (3..width)
            .map(|j| parse_num(&ctx, line, &rec[j]))
            .collect::<Result<Vec<_>>>()?;
        rows.push(FeatureRow {
            clip_id,
            frame_index,
            t0,
            values,
        });
    }
    Ok(rows)
}

/// Checks a feature file against the schema for `domain` without keeping its values.
pub fn validate_feature_csv<R: Read>(r: R, domain: Domain) -> Result<FeatureFileSummary> {
    let rows = scan_features::<f64, _>(r, domain)?;
    let mut frames = BTreeMap::new();
    let mut missing_cells = 0;
    for row in &rows {
        *frames.entry(row.clip_id.clone()).or_insert(0) += 1;
        missing_cells += row.values.iter().filter(|v| v.is_none()).count();
    }
    Ok(FeatureFileSummary {
        domain,
        n_rows: rows.len(),
        n_dims: domain.n_dims(),
        frames,
        missing_cells,
    })
}

fn frame_duration(domain: Domain, times: &[f64]) -> f64 {
    let mut diffs: Vec<f64> = times
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| *d > 0.0)
        .collect();
    diffs.sort_by(f64::total_cmp);
    let inferred = diffs.get(diffs.len() / 2).copied();
    match (domain.frame_duration_s(), inferred) {
        (Some(declared), Some(d)) if (d - declared).abs() <= 1e-3 => declared,
        (_, Some(d)) => d,
        (Some(declared), None) => declared,
        (None, None) => 1.0,
    }
}

/// Parses a feature file into one matrix per clip, frames ordered by `frame_index`.
///
/// Frame duration is the domain's declared value when the timestamps agree with
/// it, otherwise the median timestamp spacing (source-rate streams).
pub fn read_feature_csv<T: Scalar, R: Read>(
    r: R,
    domain: Domain,
) -> Result<Vec<FeatureFrameMatrix<T>>> {
    let mut by_clip: BTreeMap<String, Vec<FeatureRow<T>>> = BTreeMap::new();
    for row in scan_features(r, domain)? {
        by_clip.entry(row.clip_id.clone()).or_default().push(row);
    }
    by_clip
        .into_iter()
        .map(|(clip, mut rows)| {
            rows.sort_by_key(|r| r.frame_index);
            let times: Vec<f64> = rows.iter().map(|r| r.t0).collect();
            let dur = frame_duration(domain, &times);
            FeatureFrameMatrix::new(
                clip,
                domain,
                rows.into_iter().map(|r| (r.t0, r.values)).collect(),
                dur,
            )
        })
        .collect()
}

pub fn write_feature_csv<T: Scalar, W: Write>(
    w: W,
    frames: &[FeatureFrameMatrix<T>],
) -> Result<()> {
    let Some(first) = frames.first() else {
        return Err(Error::invalid("no feature frames to write"));
    };
    let domain = first.domain;
    let mut wtr = Writer::from_writer(w);
    wtr.write_record(feature_header(domain))?;
    for m in frames {
        if m.domain != domain {
            return Err(Error::invalid(format!(
                "mixed domains {domain} and {} in one feature file",
                m.domain
            )));
        }
        for f in 0..m.n_frames() {
            let mut rec = vec![m.clip_id.clone(), f.to_string(), m.times[f].to_string()];
            rec.extend((0..m.n_dims()).map(|d| fmt_opt(m.get(f, d))));
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

fn parse_bool(s: &str) -> Result<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::parse("boolean", format!("`{other}`"))),
    }
}

pub fn read_ratings<R: Read>(r: R) -> Result<Vec<RatingRecord>> {
    let ctx = "ratings file";
    let mut rdr = reader(r);
    check_header(ctx, rdr.headers()?, &owned(&RATINGS_HEADER))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        check_width(ctx, line, &rec, RATINGS_HEADER.len())?;
        let score = |cell: &str| -> Result<u8> {
            cell.trim().parse().map_err(|_| {
                Error::parse(
                    ctx,
                    format!("line {line}: rating `{cell}` is not an integer"),
                )
            })
        };
        let record = RatingRecord {
            rater_id: rec[0].trim().to_string(),
            clip_id: rec[1].trim().to_string(),
            fluidity: score(&rec[2])?,
            enjoyment: score(&rec[3])?,
            event: parse_with(ctx, line, &rec[4], |s| s.parse::<EventKind>())?,
            is_reliability_block: parse_with(ctx, line, &rec[5], parse_bool)?,
        };
        record
            .validate()
            .map_err(|e| Error::parse(ctx, format!("line {line}: {e}")))?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_ratings<W: Write>(w: W, ratings: &[RatingRecord]) -> Result<()> {
    let mut wtr = Writer::from_writer(w);
    wtr.write_record(RATINGS_HEADER)?;
    for r in ratings {
        wtr.write_record([
            r.rater_id.as_str(),
            r.clip_id.as_str(),
            &r.fluidity.to_string(),
            &r.enjoyment.to_string(),
            r.event.as_str(),
            if r.is_reliability_block {
                "true"
            } else {
                "false"
            },
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_manifest<R: Read>(r: R) -> Result<Vec<ClipWindow>> {
    let ctx = "clip manifest";
    let mut rdr = reader(r);
    check_header(ctx, rdr.headers()?, &owned(&MANIFEST_HEADER))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        check_width(ctx, line, &rec, MANIFEST_HEADER.len())?;
        out.push(ClipWindow {
            clip_id: rec[0].trim().to_string(),
            session_id: rec[1].trim().to_string(),
            t_mark: required(ctx, line, &rec[2])?,
            trigger: parse_with(ctx, line, &rec[3], |s| s.parse::<Trigger>())?,
        });
    }
    Ok(out)
}

pub fn write_manifest<W: Write>(w: W, windows: &[ClipWindow]) -> Result<()> {
    let mut wtr = Writer::from_writer(w);
    wtr.write_record(MANIFEST_HEADER)?;
    for c in windows {
        wtr.write_record([
            c.clip_id.as_str(),
            c.session_id.as_str(),
            &c.t_mark.to_string(),
            c.trigger.as_str(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_labels<T: Scalar, W: Write>(w: W, labels: &[ClipLabels<T>]) -> Result<()> {
    let mut wtr = Writer::from_writer(w);
    wtr.write_record(LABELS_HEADER)?;
    for l in labels {
        wtr.write_record([
            l.clip_id.as_str(),
            &l.n_raters.to_string(),
            &l.mean_fluidity.to_string(),
            &l.mean_enjoyment.to_string(),
            l.fluidity_label.as_str(),
            l.enjoyment_label.as_str(),
            l.event_label.map_or("", |e| e.as_str()),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_labels<T: Scalar, R: Read>(r: R) -> Result<Vec<ClipLabels<T>>> {
    let ctx = "labels file";
    let mut rdr = reader(r);
    check_header(ctx, rdr.headers()?, &owned(&LABELS_HEADER))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        check_width(ctx, line, &rec, LABELS_HEADER.len())?;
        let event = rec[6].trim();
        out.push(ClipLabels {
            clip_id: rec[0].trim().to_string(),
            n_raters: parse_with(ctx, line, &rec[1], |s| {
                s.parse()
                    .map_err(|_| Error::parse("n_raters", format!("`{s}`")))
            })?,
            mean_fluidity: required(ctx, line, &rec[2])?,
            mean_enjoyment: required(ctx, line, &rec[3])?,
            fluidity_label: parse_with(ctx, line, &rec[4], |s| s.parse::<BinaryLabel>())?,
            enjoyment_label: parse_with(ctx, line, &rec[5], |s| s.parse::<BinaryLabel>())?,
            event_label: if event.is_empty() {
                None
            } else {
                Some(parse_with(ctx, line, event, |s| s.parse::<CoreEvent>())?)
            },
        });
    }
    Ok(out)
}

pub fn write_gc<T: Scalar, W: Write>(w: W, rows: &[(String, Option<T>)]) -> Result<()> {
    let mut wtr = Writer::from_writer(w);
    wtr.write_record(GC_HEADER)?;
    for (clip, v) in rows {
        wtr.write_record([clip.as_str(), &fmt_opt(*v)])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_gc<T: Scalar, R: Read>(r: R) -> Result<BTreeMap<String, Option<T>>> {
    let ctx = "gc file";
    let mut rdr = reader(r);
    check_header(ctx, rdr.headers()?, &owned(&GC_HEADER))?;
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        check_width(ctx, line, &rec, GC_HEADER.len())?;
        out.insert(rec[0].trim().to_string(), parse_num(ctx, line, &rec[1])?);
    }
    Ok(out)
}

/// Layout sidecar written next to a fused dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutSidecar {
    pub layout_id: String,
    #[serde(flatten)]
    pub layout: Layout,
}

impl LayoutSidecar {
    pub fn new(layout: &Layout) -> Self {
        LayoutSidecar {
            layout_id: layout.id(),
            layout: layout.clone(),
        }
    }

    /// Rebuilds the layout from its spec and checks the recorded offsets and id.
    pub fn verify(&self) -> Result<Layout> {
        let rebuilt = Layout::new(self.layout.spec.clone())?;
        if rebuilt != self.layout || rebuilt.id() != self.layout_id {
            return Err(Error::LayoutMismatch(format!(
                "sidecar layout {} does not match its fusion spec (expected {})",
                self.layout_id,
                rebuilt.id()
            )));
        }
        Ok(rebuilt)
    }
}

fn fused_header(layout: &Layout) -> Vec<String> {
    let mut h = owned(&FUSED_FIXED);
    h.extend((0..layout.total_len).map(|i| format!("f{i}")));
    h
}

pub fn write_fused<T: Scalar, W: Write>(w: W, dataset: &FusedDataset<T>) -> Result<()> {
    let mut wtr = Writer::from_writer(w);
    wtr.write_record(fused_header(&dataset.layout))?;
    for c in &dataset.clips {
        let mut rec = vec![
            c.clip_id.clone(),
            c.session_id.clone(),
            c.fluidity.map_or("", |l| l.as_str()).to_string(),
            c.enjoyment.map_or("", |l| l.as_str()).to_string(),
            c.event.map_or("", |e| e.as_str()).to_string(),
        ];
        rec.extend(c.features.iter().map(|v| fmt_opt(*v)));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_fused<T: Scalar, R: Read>(r: R, layout: Layout) -> Result<FusedDataset<T>> {
    let ctx = "fused dataset";
    let mut rdr = reader(r);
    check_header(ctx, rdr.headers()?, &fused_header(&layout))?;
    let width = FUSED_FIXED.len() + layout.total_len;
    let mut clips = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        check_width(ctx, line, &rec, width)?;
        let opt_label = |cell: &str| -> Result<Option<BinaryLabel>> {
            let cell = cell.trim();
            if cell.is_empty() {
                Ok(None)
            } else {
                parse_with(ctx, line, cell, |s| s.parse::<BinaryLabel>()).map(Some)
            }
        };
        let event = rec[4].trim();
        clips.push(LabeledClip {
            clip_id: rec[0].trim().to_string(),
            session_id: rec[1].trim().to_string(),
            fluidity: opt_label(&rec[2])?,
            enjoyment: opt_label(&rec[3])?,
            event: if event.is_empty() {
                None
            } else {
                Some(parse_with(ctx, line, event, |s| s.parse::<CoreEvent>())?)
            },
            features: (FUSED_FIXED.len()..width)
                .map(|j| parse_num(ctx, line, &rec[j]))
                .collect::<Result<Vec<_>>>()?,
        });
    }
    FusedDataset::new(layout, clips)
}
