//! Classification metrics with fixed tie conventions.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::Task;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Indices sorted by descending score, grouped into runs of equal score.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in idx {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Mann–Whitney ROC-AUC; tied pairs count one half. `None` without both classes.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // Walk from the top; each positive beats every negative ranked strictly below.
    let mut neg_above = 0usize;
    let mut concordant = 0.0;
    for g in tie_groups(scores) {
        let p = g.iter().filter(|&&i| positive[i]).count();
        let q = g.len() - p;
        concordant += p as f64 * (n_neg - neg_above - q) as f64 + 0.5 * (p * q) as f64;
        neg_above += q;
    }
    Some(concordant / (n_pos * n_neg) as f64)
}

/// Step-interpolated area under the precision–recall curve. `None` without positives.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for g in tie_groups(scores) {
        let p = g.iter().filter(|&&i| positive[i]).count();
        tp += p;
        fp += g.len() - p;
        let recall = tp as f64 / n_pos as f64;
        ap += (recall - prev_recall) * tp as f64 / (tp + fp) as f64;
        prev_recall = recall;
    }
    Some(ap)
}

/// Rows are true classes, columns predictions.
pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Vec<Vec<u64>> {
    let mut cm = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        cm[t][p] += 1;
    }
    cm
}

/// Mean F1 over classes appearing in either the truth or the predictions.
pub fn f1_macro(cm: &[Vec<u64>]) -> f64 {
    let k = cm.len();
    let mut total = 0.0;
    let mut used = 0usize;
    for c in 0..k {
        let tp = cm[c][c];
        let support: u64 = cm[c].iter().sum();
        let predicted: u64 = (0..k).map(|r| cm[r][c]).sum();
        let denom = support + predicted;
        if denom == 0 {
            continue;
        }
        total += 2.0 * tp as f64 / denom as f64;
        used += 1;
    }
    if used == 0 {
        0.0
    } else {
        total / used as f64
    }
}

/// Mean recall over classes with nonzero support.
pub fn balanced_accuracy(cm: &[Vec<u64>]) -> f64 {
    let recalls: Vec<f64> = cm
        .iter()
        .enumerate()
        .filter_map(|(c, row)| {
            let support: u64 = row.iter().sum();
            (support > 0).then(|| row[c] as f64 / support as f64)
        })
        .collect();
    if recalls.is_empty() {
        0.0
    } else {
        recalls.iter().sum::<f64>() / recalls.len() as f64
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub roc_auc_macro: Option<f64>,
    pub average_precision_macro: Option<f64>,
    pub f1_macro: f64,
    pub balanced_accuracy: f64,
    pub confusion_matrix: Vec<Vec<u64>>,
    pub n_samples: usize,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Scores each class column; binary tasks use the positive column only.
pub fn evaluate<T: Scalar>(
    proba: ArrayView2<'_, T>,
    y_true: &[usize],
    task: Task,
) -> Result<FoldMetrics> {
    let k = task.n_classes();
    if proba.ncols() != k || proba.nrows() != y_true.len() {
        return Err(Error::DimensionMismatch {
            context: "evaluation scores".into(),
            expected: y_true.len() * k,
            found: proba.len(),
        });
    }
    if let Some(&bad) = y_true.iter().find(|&&c| c >= k) {
        return Err(Error::invalid(format!(
            "class index {bad} out of range for task {task}"
        )));
    }
    let rows: Vec<Vec<f64>> = proba
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.as_f64()).collect())
        .collect();
    let column = |c: usize| -> (Vec<f64>, Vec<bool>) {
        (
            rows.iter().map(|r| r[c]).collect(),
            y_true.iter().map(|&y| y == c).collect(),
        )
    };
    let classes: Vec<usize> = if task.is_binary() {
        vec![1]
    } else {
        (0..k).collect()
    };
    let auc = mean_defined(classes.iter().map(|&c| {
        let (s, p) = column(c);
        roc_auc(&s, &p)
    }));
    let ap = mean_defined(classes.iter().map(|&c| {
        let (s, p) = column(c);
        average_precision(&s, &p)
    }));
    let y_pred: Vec<usize> = rows.iter().map(|r| argmax(r)).collect();
    let cm = confusion_matrix(y_true, &y_pred, k);
    Ok(FoldMetrics {
        roc_auc_macro: auc,
        average_precision_macro: ap,
        f1_macro: f1_macro(&cm),
        balanced_accuracy: balanced_accuracy(&cm),
        confusion_matrix: cm,
        n_samples: y_true.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub roc_auc_macro: Option<f64>,
    pub average_precision_macro: Option<f64>,
    pub f1_macro: f64,
    pub balanced_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub folds: Vec<FoldMetrics>,
    pub mean: MeanMetrics,
    /// Summed over folds.
    pub confusion_matrix: Vec<Vec<u64>>,
}

impl MetricsReport {
    pub fn from_folds(task: Task, folds: Vec<FoldMetrics>) -> Self {
        let k = task.n_classes();
        let mut cm = vec![vec![0u64; k]; k];
        for f in &folds {
            for (r, row) in f.confusion_matrix.iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    cm[r][c] += v;
                }
            }
        }
        let n = folds.len().max(1) as f64;
        let mean = MeanMetrics {
            roc_auc_macro: mean_defined(folds.iter().map(|f| f.roc_auc_macro)),
            average_precision_macro: mean_defined(folds.iter().map(|f| f.average_precision_macro)),
            f1_macro: folds.iter().map(|f| f.f1_macro).sum::<f64>() / n,
            balanced_accuracy: folds.iter().map(|f| f.balanced_accuracy).sum::<f64>() / n,
        };
        MetricsReport {
            task,
            folds,
            mean,
            confusion_matrix: cm,
        }
    }

    /// Confusion matrix as CSV with class names on both axes.
    pub fn confusion_csv(&self) -> String {
        let names = class_names(self.task);
        let mut out = String::from("true\\predicted");
        for n in names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (name, row) in names.iter().zip(&self.confusion_matrix) {
            out.push_str(name);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn class_names(task: Task) -> &'static [&'static str] {
    match task {
        Task::Event => &["interrupt", "backchannel", "gap"],
        _ => &["low", "high"],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;

    fn binary_proba(p: &[f64]) -> Array2<f64> {
        Array2::from_shape_fn(
            (p.len(), 2),
            |(i, c)| if c == 1 { p[i] } else { 1.0 - p[i] },
        )
    }

    #[test]
    fn auc_worked_example() {
        let pos = [false, false, true, true];
        assert_abs_diff_eq!(
            roc_auc(&[0.1, 0.4, 0.35, 0.8], &pos).unwrap(),
            0.75,
            epsilon = 1e-15
        );
    }

    #[test]
    fn constant_scores_give_half() {
        let pos = [false, true, true, false, true];
        assert_eq!(roc_auc(&[0.3; 5], &pos), Some(0.5));
    }

    #[test]
    fn auc_undefined_for_single_class() {
        assert_eq!(roc_auc(&[0.1, 0.2], &[true, true]), None);
    }

    #[test]
    fn average_precision_hand_case() {
        // Ranking: P N P N; precision at the two hits is 1 and 2/3.
        let ap = average_precision(&[0.9, 0.8, 0.7, 0.1], &[true, false, true, false]).unwrap();
        assert_abs_diff_eq!(ap, 0.5 * 1.0 + 0.5 * 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 1, 0, 1];
        let proba = binary_proba(&[0.1, 0.9, 0.8, 0.2, 0.7]);
        let m = evaluate(proba.view(), &y, Task::Fluidity).unwrap();
        assert_eq!(m.roc_auc_macro, Some(1.0));
        assert_eq!(m.average_precision_macro, Some(1.0));
        assert_eq!(m.f1_macro, 1.0);
        assert_eq!(m.balanced_accuracy, 1.0);
        assert_eq!(m.confusion_matrix, vec![vec![2, 0], vec![0, 3]]);
    }

    #[test]
    fn majority_constant_predictor_balanced_accuracy() {
        let y = [0, 0, 0, 0, 1, 2, 2];
        let mut proba = Array2::<f64>::zeros((7, 3));
        proba.column_mut(0).fill(1.0);
        let m = evaluate(proba.view(), &y, Task::Event).unwrap();
        assert_abs_diff_eq!(m.balanced_accuracy, 1.0 / 3.0, epsilon = 1e-15);
        for (c, row) in m.confusion_matrix.iter().enumerate() {
            assert_eq!(
                row.iter().sum::<u64>() as usize,
                y.iter().filter(|&&v| v == c).count()
            );
        }
    }

    #[test]
    fn report_means_skip_undefined() {
        let a = evaluate(binary_proba(&[0.2, 0.8]).view(), &[0, 1], Task::Enjoyment).unwrap();
        let b = evaluate(binary_proba(&[0.2, 0.8]).view(), &[1, 1], Task::Enjoyment).unwrap();
        let r = MetricsReport::from_folds(Task::Enjoyment, vec![a, b]);
        assert_eq!(r.mean.roc_auc_macro, Some(1.0));
        assert_eq!(r.confusion_matrix, vec![vec![1, 0], vec![1, 2]]);
        assert!(r
            .confusion_csv()
            .starts_with("true\\predicted,low,high\nlow,1,0\n"));
    }
}
