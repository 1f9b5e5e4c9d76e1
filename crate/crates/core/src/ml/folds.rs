//! Stratified group k-fold assignment.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, group: &str) -> Option<usize> {
        self.assignments.get(group).copied()
    }

    /// Training and held-out sample indices for `fold`.
    pub fn split(&self, groups: &[String], fold: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, g) in groups.iter().enumerate() {
            match self.fold_of(g) {
                Some(f) if f == fold => test.push(i),
                Some(_) => train.push(i),
                None => {
                    return Err(Error::invalid(format!(
                        "group `{g}` missing from fold plan"
                    )))
                }
            }
        }
        Ok((train, test))
    }

    pub fn groups_in(&self, fold: usize) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(g, _)| g.as_str())
            .collect()
    }
}

/// Per-fold class counts implied by a plan.
pub fn fold_class_counts(
    plan: &FoldPlan,
    groups: &[String],
    labels: &[usize],
    n_classes: usize,
) -> Vec<Vec<usize>> {
    let mut counts = vec![vec![0usize; n_classes]; plan.k];
    for (g, &y) in groups.iter().zip(labels) {
        if let Some(f) = plan.fold_of(g) {
            counts[f][y] += 1;
        }
    }
    counts
}

/// Sum over folds and classes of |n_fc - n_c / k|.
pub fn l1_deviation(fold_counts: &[Vec<usize>]) -> f64 {
    let k = fold_counts.len() as f64;
    let n_classes = fold_counts.first().map_or(0, |c| c.len());
    let totals: Vec<f64> = (0..n_classes)
        .map(|c| fold_counts.iter().map(|f| f[c] as f64).sum())
        .collect();
    fold_counts
        .iter()
        .map(|f| {
            f.iter()
                .zip(&totals)
                .map(|(&n, &t)| (n as f64 - t / k).abs())
                .sum::<f64>()
        })
        .sum()
}

pub fn stratified_group_kfold(
    groups: &[String],
    labels: &[usize],
    k: usize,
    seed: u64,
) -> Result<FoldPlan> {
    if groups.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "fold labels".into(),
            expected: groups.len(),
            found: labels.len(),
        });
    }
    if k < 2 {
        return Err(Error::invalid("k must be at least 2"));
    }
    let n_classes = labels.iter().max().map_or(1, |m| m + 1);
    let mut per_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (g, &y) in groups.iter().zip(labels) {
        per_group
            .entry(g.as_str())
            .or_insert_with(|| vec![0; n_classes])[y] += 1;
    }
    if per_group.len() < k {
        return Err(Error::InsufficientGroups {
            needed: k,
            k,
            found: per_group.len(),
        });
    }

    let mut order: Vec<(&str, Vec<usize>)> = per_group.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // Most class-skewed groups first; they are the hardest to place.
    let spread = |counts: &[usize]| {
        let m = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
        counts.iter().map(|&c| (c as f64 - m).powi(2)).sum::<f64>() / counts.len() as f64
    };
    order.sort_by(|a, b| spread(&b.1).total_cmp(&spread(&a.1)));

    let totals: Vec<f64> = (0..n_classes)
        .map(|c| order.iter().map(|(_, v)| v[c] as f64).sum())
        .collect();
    let n_total: f64 = totals.iter().sum();
    let target: Vec<f64> = totals.iter().map(|t| t / k as f64).collect();

    let mut fold_counts = vec![vec![0usize; n_classes]; k];
    let mut fold_groups = vec![0usize; k];
    let mut assignments = BTreeMap::new();
    for (idx, (group, counts)) in order.iter().enumerate() {
        let remaining = order.len() - idx;
        let empty = fold_groups.iter().filter(|&&n| n == 0).count();
        let mut best: Option<(f64, f64, usize, usize)> = None;
        for f in 0..k {
            if remaining <= empty && fold_groups[f] > 0 {
                continue;
            }
            let cur = &fold_counts[f];
            let delta: f64 = (0..n_classes)
                .map(|c| {
                    let after = (cur[c] + counts[c]) as f64;
                    (after - target[c]).abs() - (cur[c] as f64 - target[c]).abs()
                })
                .sum();
            let size: usize = cur.iter().sum::<usize>() + counts.iter().sum::<usize>();
            let frac_dev: f64 = (0..n_classes)
                .map(|c| ((cur[c] + counts[c]) as f64 / size as f64 - totals[c] / n_total).abs())
                .sum();
            let cand = (delta, frac_dev, cur.iter().sum::<usize>(), f);
            let better = match best {
                None => true,
                Some(b) => {
                    const EPS: f64 = 1e-12;
                    if cand.0 < b.0 - EPS {
                        true
                    } else if cand.0 > b.0 + EPS {
                        false
                    } else if cand.1 < b.1 - EPS {
                        true
                    } else if cand.1 > b.1 + EPS {
                        false
                    } else {
                        cand.2 < b.2
                    }
                }
            };
            if better {
                best = Some(cand);
            }
        }
        let f = best.expect("at least one candidate fold").3;
        for c in 0..n_classes {
            fold_counts[f][c] += counts[c];
        }
        fold_groups[f] += 1;
        assignments.insert((*group).to_string(), f);
    }
    Ok(FoldPlan {
        k,
        seed,
        assignments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expand(spec: &[(usize, usize)]) -> (Vec<String>, Vec<usize>) {
        let mut groups = Vec::new();
        let mut labels = Vec::new();
        for (g, &(n0, n1)) in spec.iter().enumerate() {
            for _ in 0..n0 {
                groups.push(format!("g{g}"));
                labels.push(0);
            }
            for _ in 0..n1 {
                groups.push(format!("g{g}"));
                labels.push(1);
            }
        }
        (groups, labels)
    }

    #[test]
    fn ten_balanced_groups_split_evenly() {
        let (groups, labels) = expand(&[(5, 5); 10]);
        let plan = stratified_group_kfold(&groups, &labels, 5, 7).unwrap();
        for f in 0..5 {
            assert_eq!(plan.groups_in(f).len(), 2);
        }
    }

    #[test]
    fn single_class_still_valid() {
        let (groups, labels) = expand(&[(4, 0); 6]);
        let plan = stratified_group_kfold(&groups, &labels, 5, 1).unwrap();
        assert_eq!(plan.assignments.len(), 6);
        for f in 0..5 {
            assert!(!plan.groups_in(f).is_empty());
        }
    }

    #[test]
    fn too_few_groups_rejected() {
        let (groups, labels) = expand(&[(3, 3); 4]);
        assert!(matches!(
            stratified_group_kfold(&groups, &labels, 5, 0),
            Err(Error::InsufficientGroups { found: 4, .. })
        ));
    }

    #[test]
    fn greedy_matches_exhaustive_optimum() {
        let spec = [(90, 10), (10, 90), (50, 50), (50, 50), (50, 50), (50, 50)];
        let (groups, labels) = expand(&spec);
        let k = 3;
        // Exhaustive search over all assignments with nonempty folds.
        let mut best = f64::INFINITY;
        for code in 0..3usize.pow(6) {
            let mut a = [0usize; 6];
            let mut c = code;
            for slot in a.iter_mut() {
                *slot = c % 3;
                c /= 3;
            }
            if (0..k).any(|f| !a.contains(&f)) {
                continue;
            }
            let mut counts = vec![vec![0usize; 2]; k];
            for (g, &(n0, n1)) in spec.iter().enumerate() {
                counts[a[g]][0] += n0;
                counts[a[g]][1] += n1;
            }
            best = best.min(l1_deviation(&counts));
        }
        for seed in 0..20 {
            let plan = stratified_group_kfold(&groups, &labels, k, seed).unwrap();
            let got = l1_deviation(&fold_class_counts(&plan, &groups, &labels, 2));
            assert!(
                (got - best).abs() < 1e-9,
                "seed {seed}: {got} vs optimum {best}"
            );
        }
    }

    #[test]
    fn splits_never_share_groups() {
        let (groups, labels) = expand(&[(3, 1), (2, 2), (0, 4), (1, 1), (5, 0), (2, 3), (1, 0)]);
        let plan = stratified_group_kfold(&groups, &labels, 3, 11).unwrap();
        for f in 0..3 {
            let (train, test) = plan.split(&groups, f).unwrap();
            assert_eq!(train.len() + test.len(), groups.len());
            for &i in &test {
                assert!(train.iter().all(|&j| groups[j] != groups[i]));
            }
        }
    }
}
