//! Classifier training and evaluation under session-grouped cross-validation.

pub mod bayes;
pub mod experiment;
pub mod folds;
pub mod metrics;
pub mod preprocess;
pub mod sgd;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fuse::FusedDataset;
use crate::scalar::Scalar;
use crate::session::LabeledClip;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Fluidity,
    Enjoyment,
    Event,
}

impl Task {
    pub fn n_classes(self) -> usize {
        match self {
            Task::Fluidity | Task::Enjoyment => 2,
            Task::Event => 3,
        }
    }

    pub fn is_binary(self) -> bool {
        self.n_classes() == 2
    }

    /// Class index of a clip for this task, if labelled.
    pub fn label_of<T>(self, clip: &LabeledClip<T>) -> Option<usize> {
        match self {
            Task::Fluidity => clip.fluidity.map(|l| l.index()),
            Task::Enjoyment => clip.enjoyment.map(|l| l.index()),
            Task::Event => clip.event.map(|e| e.index()),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Fluidity => "fluidity",
            Task::Enjoyment => "enjoyment",
            Task::Event => "event",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "fluidity" => Ok(Task::Fluidity),
            "enjoyment" => Ok(Task::Enjoyment),
            "event" => Ok(Task::Event),
            other => Err(Error::parse("task", format!("unknown task `{other}`"))),
        }
    }
}

/// Hyperparameters searched by the optimiser plus the run's identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub pca_explained_variance: f64,
    pub alpha: f64,
    pub l1_ratio: f64,
    pub seed: u64,
    pub task: Task,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.5..=0.99).contains(&self.pca_explained_variance) {
            return Err(Error::invalid(format!(
                "pca_explained_variance {} outside [0.5, 0.99]",
                self.pca_explained_variance
            )));
        }
        if !(1e-10..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!(
                "alpha {} outside [1e-10, 1]",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.l1_ratio) {
            return Err(Error::invalid(format!(
                "l1_ratio {} outside [0, 1]",
                self.l1_ratio
            )));
        }
        Ok(())
    }
}

/// Dense samples × features matrix with an observation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    pub values: Array2<T>,
    pub observed: Array2<bool>,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn from_rows(rows: &[&[Option<T>]]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        let mut values = Array2::zeros((n, d));
        let mut observed = Array2::from_elem((n, d), false);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    context: format!("feature row {i}"),
                    expected: d,
                    found: row.len(),
                });
            }
            for (j, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    values[[i, j]] = *v;
                    observed[[i, j]] = true;
                }
            }
        }
        Ok(FeatureMatrix { values, observed })
    }

    /// Fully observed matrix.
    pub fn dense(values: Array2<T>) -> Self {
        let observed = Array2::from_elem(values.raw_dim(), true);
        FeatureMatrix { values, observed }
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        FeatureMatrix {
            values: self.values.select(ndarray::Axis(0), rows),
            observed: self.observed.select(ndarray::Axis(0), rows),
        }
    }
}

/// The labelled subset of a dataset for one task.
#[derive(Debug, Clone)]
pub struct TaskData<T> {
    pub task: Task,
    pub clip_ids: Vec<String>,
    pub groups: Vec<String>,
    pub x: FeatureMatrix<T>,
    pub y: Vec<usize>,
    pub layout_id: String,
}

impl<T: Scalar> TaskData<T> {
    pub fn from_dataset(dataset: &FusedDataset<T>, task: Task) -> Result<Self> {
        let labelled: Vec<(&LabeledClip<T>, usize)> = dataset
            .clips
            .iter()
            .filter_map(|c| task.label_of(c).map(|y| (c, y)))
            .collect();
        let rows: Vec<&[Option<T>]> = labelled
            .iter()
            .map(|(c, _)| c.features.as_slice())
            .collect();
        Ok(TaskData {
            task,
            clip_ids: labelled.iter().map(|(c, _)| c.clip_id.clone()).collect(),
            groups: labelled.iter().map(|(c, _)| c.session_id.clone()).collect(),
            x: FeatureMatrix::from_rows(&rows)?,
            y: labelled.iter().map(|(_, y)| *y).collect(),
            layout_id: dataset.layout.id(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}
