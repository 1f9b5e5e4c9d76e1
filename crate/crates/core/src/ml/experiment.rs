//! Cross-validated training with hyperparameter search.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{s, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bayes::{bayes_optimize, Bounds, TraceEntry, DEFAULT_ITERATIONS};
use super::folds::{stratified_group_kfold, FoldPlan};
use super::metrics::{evaluate, MetricsReport};
use super::preprocess::{PcaBasis, Preprocessor, Standardizer};
use super::sgd::{train_sgd_logistic, LinearClassifier, SgdParams};
use super::{FeatureMatrix, PipelineConfig, Task, TaskData};
use crate::error::{Error, Result};
use crate::fuse::{FusedDataset, FusionSpec, Horizon, Pooling, SlotKind};
use crate::scalar::Scalar;
use crate::session::LabeledClip;

pub const DEFAULT_FOLDS: usize = 5;

fn default_iterations() -> usize {
    DEFAULT_ITERATIONS
}

fn default_folds() -> usize {
    DEFAULT_FOLDS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub domains: Vec<SlotKind>,
    pub horizon: Horizon,
    #[serde(default)]
    pub pooling: Pooling,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_folds")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub bounds: Bounds,
}

impl ExperimentConfig {
    pub fn new(task: Task, domains: Vec<SlotKind>, horizon: Horizon) -> Self {
        ExperimentConfig {
            task,
            domains,
            horizon,
            pooling: Pooling::Flatten,
            iterations: DEFAULT_ITERATIONS,
            k: DEFAULT_FOLDS,
            seed: 0,
            bounds: Bounds::default(),
        }
    }

    pub fn fusion_spec(&self) -> FusionSpec {
        FusionSpec {
            domains: self.domains.clone(),
            horizon: self.horizon,
            pooling: self.pooling,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.fusion_spec().validate()?;
        self.bounds.validate()?;
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be positive"));
        }
        if self.k < 2 {
            return Err(Error::invalid("k must be at least 2"));
        }
        Ok(())
    }
}

/// Imputation, standardisation, PCA and linear weights for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel<T> {
    pub preprocessor: Preprocessor<T>,
    pub classifier: LinearClassifier<T>,
    pub config: PipelineConfig,
    pub layout_id: String,
}

impl<T: Scalar> TrainedModel<T> {
    pub fn fit(
        x: &FeatureMatrix<T>,
        y: &[usize],
        layout_id: &str,
        config: PipelineConfig,
    ) -> Result<Self> {
        config.validate()?;
        let standardizer = Standardizer::fit(x, config.task)?;
        let z = standardizer.transform(x)?;
        let basis = PcaBasis::fit(z.view());
        let preprocessor =
            Preprocessor::from_parts(standardizer, &basis, config.pca_explained_variance);
        let zp = preprocessor.transform(x)?;
        let params = SgdParams::new(config.alpha, config.l1_ratio, config.seed);
        let classifier = train_sgd_logistic(zp.view(), y, config.task.n_classes(), &params)?;
        Ok(TrainedModel {
            preprocessor,
            classifier,
            config,
            layout_id: layout_id.to_string(),
        })
    }

    /// samples × classes probabilities.
    pub fn predict_scores(&self, x: &FeatureMatrix<T>, layout_id: &str) -> Result<Array2<T>> {
        if layout_id != self.layout_id {
            return Err(Error::LayoutMismatch(format!(
                "model trained on layout {}, input has {}",
                self.layout_id, layout_id
            )));
        }
        let z = self.preprocessor.transform(x)?;
        self.classifier.predict_proba(z.view())
    }
}

/// Preprocessing fitted on one fold's training rows, with the full principal basis kept
/// so that any explained-variance target can be served without refitting.
#[derive(Debug, Clone)]
pub struct FoldCache<T> {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub standardizer: Standardizer<T>,
    pub basis: PcaBasis<T>,
    train_scores: Array2<T>,
    test_scores: Array2<T>,
}

impl<T: Scalar> FoldCache<T> {
    pub fn fit(data: &TaskData<T>, train: Vec<usize>, test: Vec<usize>) -> Result<Self> {
        let xtr = data.x.select_rows(&train);
        let xte = data.x.select_rows(&test);
        let standardizer = Standardizer::fit(&xtr, data.task)?;
        let ztr = standardizer.transform(&xtr)?;
        let basis = PcaBasis::fit(ztr.view());
        let train_scores = ztr.dot(&basis.components.t());
        let test_scores = standardizer.transform(&xte)?.dot(&basis.components.t());
        Ok(FoldCache {
            train,
            test,
            standardizer,
            basis,
            train_scores,
            test_scores,
        })
    }

    fn train_classifier(
        &self,
        data: &TaskData<T>,
        params: &SgdParams,
        pca: f64,
    ) -> Result<(LinearClassifier<T>, usize)> {
        let m = self.basis.retained_for(pca);
        let y: Vec<usize> = self.train.iter().map(|&i| data.y[i]).collect();
        let z = self.train_scores.slice(s![.., ..m]);
        Ok((train_sgd_logistic(z, &y, data.task.n_classes(), params)?, m))
    }

    /// Macro ROC-AUC on the held-out rows.
    fn score(&self, data: &TaskData<T>, params: &SgdParams, pca: f64) -> Result<Option<f64>> {
        let (clf, m) = self.train_classifier(data, params, pca)?;
        let proba = clf.predict_proba(self.test_scores.slice(s![.., ..m]))?;
        let y: Vec<usize> = self.test.iter().map(|&i| data.y[i]).collect();
        Ok(evaluate(proba.view(), &y, data.task)?.roc_auc_macro)
    }

    fn model(
        &self,
        data: &TaskData<T>,
        config: PipelineConfig,
        fold: usize,
    ) -> Result<TrainedModel<T>> {
        let params = SgdParams::new(config.alpha, config.l1_ratio, fold_seed(config.seed, fold));
        let (classifier, _) =
            self.train_classifier(data, &params, config.pca_explained_variance)?;
        Ok(TrainedModel {
            preprocessor: Preprocessor::from_parts(
                self.standardizer.clone(),
                &self.basis,
                config.pca_explained_variance,
            ),
            classifier,
            config,
            layout_id: data.layout_id.clone(),
        })
    }
}

fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed ^ ((fold as u64 + 1) << 48)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub groups: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub n_components: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub task: Task,
    pub domains: Vec<SlotKind>,
    pub horizon: Horizon,
    pub pooling: Pooling,
    pub layout_id: String,
    pub n_clips: usize,
    pub n_groups: usize,
    pub k: usize,
    pub iterations: usize,
    pub seed: u64,
    pub best_config: PipelineConfig,
    pub best_objective: f64,
    pub metrics: MetricsReport,
    pub folds: Vec<FoldSummary>,
    pub trace: Vec<TraceEntry>,
}

/// Everything a finished experiment leaves behind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome<T> {
    pub report: ExperimentReport,
    pub plan: FoldPlan,
    pub models: Vec<TrainedModel<T>>,
    /// Held-out clip ids per fold.
    pub held_out: Vec<Vec<String>>,
}

pub fn fit_fold_caches<T: Scalar>(
    data: &TaskData<T>,
    plan: &FoldPlan,
) -> Result<Vec<FoldCache<T>>> {
    (0..plan.k)
        .into_par_iter()
        .map(|f| {
            let (train, test) = plan.split(&data.groups, f)?;
            FoldCache::fit(data, train, test).map_err(|e| Error::Fold {
                fold: f,
                source: Box::new(e),
            })
        })
        .collect()
}

pub fn run_cv_experiment<T: Scalar>(
    dataset: &FusedDataset<T>,
    cfg: &ExperimentConfig,
) -> Result<CvOutcome<T>> {
    cfg.validate()?;
    let projected = dataset.project(&cfg.fusion_spec())?;
    let data = TaskData::from_dataset(&projected, cfg.task)?;
    if data.is_empty() {
        return Err(Error::invalid(format!(
            "no clips carry a {} label",
            cfg.task
        )));
    }
    let plan = stratified_group_kfold(&data.groups, &data.y, cfg.k, cfg.seed)?;
    let caches = fit_fold_caches(&data, &plan)?;

    let objective = |p: &super::bayes::HyperParams, eval_seed: u64| -> Result<f64> {
        let scores: Vec<Option<f64>> = caches
            .par_iter()
            .enumerate()
            .map(|(f, c)| {
                let params = SgdParams::new(p.alpha, p.l1_ratio, fold_seed(eval_seed, f));
                c.score(&data, &params, p.pca_explained_variance)
                    .map_err(|e| Error::Fold {
                        fold: f,
                        source: Box::new(e),
                    })
            })
            .collect::<Result<_>>()?;
        let defined: Vec<f64> = scores.into_iter().flatten().collect();
        if defined.is_empty() {
            return Err(Error::Numerical("ROC-AUC undefined on every fold".into()));
        }
        Ok(defined.iter().sum::<f64>() / defined.len() as f64)
    };
    let search = bayes_optimize(objective, &cfg.bounds, cfg.iterations, cfg.seed)?;
    let best = &search.best;
    let config = PipelineConfig {
        pca_explained_variance: best.params.pca_explained_variance,
        alpha: best.params.alpha,
        l1_ratio: best.params.l1_ratio,
        seed: best.seed,
        task: cfg.task,
    };

    let models: Vec<TrainedModel<T>> = caches
        .par_iter()
        .enumerate()
        .map(|(f, c)| {
            c.model(&data, config, f).map_err(|e| Error::Fold {
                fold: f,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let held_out: Vec<Vec<String>> = caches
        .iter()
        .map(|c| c.test.iter().map(|&i| data.clip_ids[i].clone()).collect())
        .collect();
    let fold_metrics = caches
        .iter()
        .zip(&models)
        .map(|(c, m)| {
            let x = data.x.select_rows(&c.test);
            let y: Vec<usize> = c.test.iter().map(|&i| data.y[i]).collect();
            evaluate(m.predict_scores(&x, &data.layout_id)?.view(), &y, cfg.task)
        })
        .collect::<Result<Vec<_>>>()?;
    let folds = caches
        .iter()
        .zip(&models)
        .enumerate()
        .map(|(f, (c, m))| FoldSummary {
            fold: f,
            groups: plan.groups_in(f).into_iter().map(String::from).collect(),
            n_train: c.train.len(),
            n_test: c.test.len(),
            n_components: m.preprocessor.n_components(),
        })
        .collect();
    let report = ExperimentReport {
        task: cfg.task,
        domains: cfg.domains.clone(),
        horizon: cfg.horizon,
        pooling: cfg.pooling,
        layout_id: data.layout_id.clone(),
        n_clips: data.len(),
        n_groups: data.groups.iter().collect::<BTreeSet<_>>().len(),
        k: cfg.k,
        iterations: cfg.iterations,
        seed: cfg.seed,
        best_config: config,
        best_objective: best.value.expect("best entry has a value"),
        metrics: MetricsReport::from_folds(cfg.task, fold_metrics),
        folds,
        trace: search.trace,
    };
    Ok(CvOutcome {
        report,
        plan,
        models,
        held_out,
    })
}

/// Scores each fold's held-out clips with that fold's model and grades them against `target` labels.
pub fn cross_predict<T: Scalar>(
    outcome: &CvOutcome<T>,
    dataset: &FusedDataset<T>,
    target: Task,
) -> Result<MetricsReport> {
    let source = outcome.report.task;
    if !source.is_binary() || !target.is_binary() {
        return Err(Error::invalid(
            "cross prediction needs binary source and target tasks",
        ));
    }
    let spec = FusionSpec {
        domains: outcome.report.domains.clone(),
        horizon: outcome.report.horizon,
        pooling: outcome.report.pooling,
    };
    let projected = dataset.project(&spec)?;
    let layout_id = projected.layout.id();
    let by_id: BTreeMap<&str, &LabeledClip<T>> = projected
        .clips
        .iter()
        .map(|c| (c.clip_id.as_str(), c))
        .collect();
    let mut folds = Vec::with_capacity(outcome.models.len());
    for (model, clips) in outcome.models.iter().zip(&outcome.held_out) {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for id in clips {
            let clip = by_id.get(id.as_str()).ok_or_else(|| {
                Error::invalid(format!("held-out clip {id} missing from dataset"))
            })?;
            if let Some(label) = target.label_of(clip) {
                rows.push(clip.features.as_slice());
                y.push(label);
            }
        }
        let x = FeatureMatrix::from_rows(&rows)?;
        let scores = if rows.is_empty() {
            Array2::zeros((0, 2))
        } else {
            model.predict_scores(&x, &layout_id)?
        };
        folds.push(evaluate(scores.view(), &y, target)?);
    }
    Ok(MetricsReport::from_folds(target, folds))
}
