//! Run configuration. Relative paths resolve against the config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use convo_core::events::DetectorConfig;
use convo_core::fuse::{FusionSpec, Horizon, Pooling, SlotKind};
use convo_core::gc::GcConfig;
use convo_core::ml::experiment::ExperimentConfig;
use convo_core::ml::Task;
use convo_core::session::Domain;
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub detect: Option<DetectSection>,
    pub gc: Option<GcSection>,
    pub fuse: Option<FuseSection>,
    pub labels: Option<LabelsSection>,
    pub train: Option<TrainSection>,
    #[serde(default)]
    pub cross: Vec<CrossSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionInput {
    pub id: String,
    /// Per-speaker WAV files.
    pub audio: Vec<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectSection {
    pub sessions: Vec<SessionInput>,
    pub per_kind: usize,
    #[serde(default)]
    pub rms_threshold: Option<f64>,
    #[serde(default)]
    pub min_silence_s: Option<f64>,
    #[serde(default)]
    pub frame_len_s: Option<f64>,
    #[serde(default)]
    pub frame_hop_s: Option<f64>,
}

impl DetectSection {
    pub fn detector(&self) -> DetectorConfig {
        let d = DetectorConfig::default();
        DetectorConfig {
            frame_len_s: self.frame_len_s.unwrap_or(d.frame_len_s),
            frame_hop_s: self.frame_hop_s.unwrap_or(d.frame_hop_s),
            rms_threshold: self.rms_threshold.unwrap_or(d.rms_threshold),
            min_silence_s: self.min_silence_s.unwrap_or(d.min_silence_s),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GcSection {
    /// One `motion_distance` feature file per participant stream.
    pub motion: Vec<PathBuf>,
    #[serde(default)]
    pub params: GcConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuseSection {
    pub domains: Vec<SlotKind>,
    pub horizon: Horizon,
    #[serde(default)]
    pub pooling: Pooling,
    /// Feature files per domain. `face_au` files are per participant and averaged.
    #[serde(default)]
    pub features: BTreeMap<Domain, Vec<PathBuf>>,
    pub manifest: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub gc: Option<PathBuf>,
}

impl FuseSection {
    pub fn spec(&self) -> FusionSpec {
        FusionSpec {
            domains: self.domains.clone(),
            horizon: self.horizon,
            pooling: self.pooling,
        }
    }
}

fn default_threshold() -> f64 {
    2.5
}

fn default_min_raters() -> usize {
    convo_core::survey::MIN_RATERS
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelsSection {
    pub ratings: PathBuf,
    /// Defaults to the clips of records flagged `is_reliability_block`.
    pub reliability_clips: Option<Vec<String>>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_min_raters")]
    pub min_raters: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    /// Fused dataset; its layout sidecar sits next to it.
    pub dataset: Option<PathBuf>,
    pub experiments: Vec<ExperimentConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossSpec {
    /// Name of a trained experiment.
    pub source: String,
    pub target: Task,
}

/// Output stem of an experiment: `<task>_<horizon>_<domains joined by +>`.
pub fn experiment_name(e: &ExperimentConfig) -> String {
    let horizon = match e.horizon {
        Horizon::Full7s => "full_7s",
        Horizon::Pre3s => "pre_3s",
    };
    let domains: Vec<&str> = e.domains.iter().map(|d| d.as_str()).collect();
    let mut name = format!("{}_{horizon}_{}", e.task, domains.join("+"));
    if e.pooling == Pooling::Mean {
        name.push_str("_mean");
    }
    name
}

impl Config {
    pub fn load(path: &Path) -> Result<(Config, PathBuf), Failure> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))
            .map_err(Failure::input)?;
        let mut cfg: Config = serde_json::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))
            .map_err(Failure::input)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve(&base);
        cfg.check().map_err(Failure::input)?;
        Ok((cfg, base))
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(o) = &mut self.out_dir {
            fix(o);
        }
        if let Some(d) = &mut self.detect {
            d.sessions
                .iter_mut()
                .flat_map(|s| s.audio.iter_mut())
                .for_each(fix);
        }
        if let Some(g) = &mut self.gc {
            g.motion.iter_mut().for_each(fix);
        }
        if let Some(f) = &mut self.fuse {
            f.features
                .values_mut()
                .flat_map(|v| v.iter_mut())
                .for_each(fix);
            f.manifest
                .iter_mut()
                .chain(f.labels.iter_mut())
                .chain(f.gc.iter_mut())
                .for_each(fix);
        }
        if let Some(l) = &mut self.labels {
            fix(&mut l.ratings);
        }
        if let Some(t) = &mut self.train {
            t.dataset.iter_mut().for_each(fix);
        }
    }

    fn check(&self) -> anyhow::Result<()> {
        if let Some(d) = &self.detect {
            let mut ids = std::collections::BTreeSet::new();
            for s in &d.sessions {
                if !ids.insert(&s.id) {
                    bail!("detect: session `{}` listed twice", s.id);
                }
            }
        }
        if let Some(f) = &self.fuse {
            f.spec().validate()?;
            for domain in f.features.keys() {
                if SlotKind::from_domain(*domain).is_none() {
                    bail!("fuse: `{domain}` features cannot be fused directly");
                }
            }
        }
        if let Some(t) = &self.train {
            let mut names = std::collections::BTreeSet::new();
            for e in &t.experiments {
                e.validate()?;
                let name = experiment_name(e);
                if !names.insert(name.clone()) {
                    bail!("train: experiment `{name}` listed twice");
                }
            }
        }
        for c in &self.cross {
            let known = self
                .train
                .as_ref()
                .is_some_and(|t| t.experiments.iter().any(|e| experiment_name(e) == c.source));
            if !known {
                bail!(
                    "cross: source `{}` is not a configured experiment",
                    c.source
                );
            }
            if !c.target.is_binary() {
                bail!("cross: target task must be binary, got `{}`", c.target);
            }
        }
        Ok(())
    }
}
