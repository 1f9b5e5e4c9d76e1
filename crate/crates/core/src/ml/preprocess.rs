//! Training-fold imputation, standardisation and PCA.

use ndarray::{s, Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, Task};
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;
use crate::scalar::Scalar;

/// Per-feature fill values and z-score parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer<T> {
    pub impute: Array1<T>,
    /// Features never observed in training; imputed with 0.
    pub unobserved: Vec<bool>,
    pub mean: Array1<T>,
    pub scale: Array1<T>,
}

fn median<T: Scalar>(v: &mut [T]) -> T {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite features"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / T::of(2.0)
    }
}

/// Most frequent value, smallest on ties.
fn mode<T: Scalar>(v: &mut [T]) -> T {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite features"));
    let (mut best, mut best_n) = (v[0], 0usize);
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j < v.len() && v[j] == v[i] {
            j += 1;
        }
        if j - i > best_n {
            best = v[i];
            best_n = j - i;
        }
        i = j;
    }
    best
}

impl<T: Scalar> Standardizer<T> {
    pub fn fit(x: &FeatureMatrix<T>, task: Task) -> Result<Self> {
        let (n, d) = x.values.dim();
        if n < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 training samples, got {n}"
            )));
        }
        let mut impute = Array1::zeros(d);
        let mut unobserved = vec![false; d];
        let mut column = Vec::with_capacity(n);
        for j in 0..d {
            column.clear();
            column.extend(
                (0..n)
                    .filter(|&i| x.observed[[i, j]])
                    .map(|i| x.values[[i, j]]),
            );
            if column.is_empty() {
                unobserved[j] = true;
                continue;
            }
            impute[j] = match task {
                Task::Event => mode(&mut column),
                _ => median(&mut column),
            };
        }
        let mut s = Standardizer {
            impute,
            unobserved,
            mean: Array1::zeros(d),
            scale: Array1::ones(d),
        };
        let filled = s.impute(x);
        let nf = T::from_usize_lossy(n);
        for j in 0..d {
            let col = filled.column(j);
            let m = col.sum() / nf;
            let var = col.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / nf;
            s.mean[j] = m;
            let sd = var.sqrt();
            s.scale[j] = if sd > T::zero() && sd.is_finite() {
                sd
            } else {
                T::one()
            };
        }
        Ok(s)
    }

    pub fn impute(&self, x: &FeatureMatrix<T>) -> Array2<T> {
        let mut out = x.values.clone();
        for ((i, j), v) in out.indexed_iter_mut() {
            if !x.observed[[i, j]] {
                *v = self.impute[j];
            }
        }
        out
    }

    pub fn transform(&self, x: &FeatureMatrix<T>) -> Result<Array2<T>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                context: "standardizer input".into(),
                expected: self.mean.len(),
                found: x.ncols(),
            });
        }
        let mut z = self.impute(x);
        for mut row in z.rows_mut() {
            row -= &self.mean;
            row /= &self.scale;
        }
        Ok(z)
    }
}

/// Full principal basis of a centred matrix, largest variance first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis<T> {
    /// components × features, unit rows.
    pub components: Array2<T>,
    /// Squared singular values.
    pub eigenvalues: Vec<T>,
    /// Sum of squares of the fitted matrix.
    pub total: T,
}

impl<T: Scalar> PcaBasis<T> {
    pub fn fit(z: ArrayView2<'_, T>) -> Self {
        let (n, d) = z.dim();
        let total = z.iter().map(|&v| v * v).sum::<T>();
        let (values, vectors) = if n <= d {
            let gram = z.dot(&z.t());
            let eig = symmetric_eigen(gram.view());
            let mut comps = Array2::zeros((n, d));
            for (i, &lam) in eig.values.iter().enumerate() {
                if lam > T::zero() {
                    let v = z.t().dot(&eig.vectors.column(i));
                    comps.row_mut(i).assign(&v);
                }
            }
            (eig.values, comps)
        } else {
            let cov = z.t().dot(&z);
            let eig = symmetric_eigen(cov.view());
            (eig.values, eig.vectors.t().to_owned())
        };
        let lam_max = values.first().copied().unwrap_or(T::zero());
        let floor = lam_max * T::epsilon() * T::from_usize_lossy(n.max(d));
        let keep = values
            .iter()
            .take_while(|&&l| l > floor && l > T::zero())
            .count();
        let mut components = vectors.slice(s![..keep, ..]).to_owned();
        for mut row in components.rows_mut() {
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            row /= norm;
            let pivot = row
                .iter()
                .copied()
                .fold(T::zero(), |a, v| if v.abs() > a.abs() { v } else { a });
            if pivot < T::zero() {
                row.mapv_inplace(|v| -v);
            }
        }
        PcaBasis {
            components,
            eigenvalues: values.iter().take(keep).copied().collect(),
            total,
        }
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Smallest component count whose cumulative explained variance reaches `target`.
    pub fn retained_for(&self, target: f64) -> usize {
        if self.total <= T::zero() {
            return 0;
        }
        let total = self.total.as_f64();
        let mut acc = 0.0;
        for (i, l) in self.eigenvalues.iter().enumerate() {
            acc += l.as_f64() / total;
            if acc >= target - 1e-12 {
                return i + 1;
            }
        }
        self.rank()
    }

    pub fn explained_ratio(&self) -> Vec<T> {
        self.eigenvalues.iter().map(|&l| l / self.total).collect()
    }
}

/// Fitted imputation, standardisation and truncated PCA projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor<T> {
    pub standardizer: Standardizer<T>,
    /// Retained components × features.
    pub components: Array2<T>,
    pub explained_variance_ratio: Vec<T>,
}

impl<T: Scalar> Preprocessor<T> {
    pub fn from_parts(standardizer: Standardizer<T>, basis: &PcaBasis<T>, pca_target: f64) -> Self {
        let m = basis.retained_for(pca_target);
        Preprocessor {
            standardizer,
            components: basis.components.slice(s![..m, ..]).to_owned(),
            explained_variance_ratio: basis.explained_ratio()[..m].to_vec(),
        }
    }

    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn transform(&self, x: &FeatureMatrix<T>) -> Result<Array2<T>> {
        let z = self.standardizer.transform(x)?;
        Ok(z.dot(&self.components.t()))
    }
}

pub fn fit_preprocessor<T: Scalar>(
    x: &FeatureMatrix<T>,
    task: Task,
    pca_target: f64,
) -> Result<Preprocessor<T>> {
    let standardizer = Standardizer::fit(x, task)?;
    let z = standardizer.transform(x)?;
    let basis = PcaBasis::fit(z.view());
    Ok(Preprocessor::from_parts(standardizer, &basis, pca_target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn median_imputation_ignores_missing() {
        let rows: Vec<Vec<Option<f64>>> = vec![
            vec![Some(1.0)],
            vec![Some(2.0)],
            vec![None],
            vec![Some(4.0)],
        ];
        let refs: Vec<&[Option<f64>]> = rows.iter().map(|r| r.as_slice()).collect();
        let x = FeatureMatrix::from_rows(&refs).unwrap();
        let s = Standardizer::fit(&x, Task::Fluidity).unwrap();
        assert_eq!(s.impute[0], 2.0);
    }

    #[test]
    fn mode_imputation_for_event_task() {
        let rows: Vec<Vec<Option<f64>>> = vec![
            vec![Some(3.0)],
            vec![Some(1.0)],
            vec![Some(3.0)],
            vec![None],
            vec![Some(1.0)],
            vec![Some(7.0)],
        ];
        let refs: Vec<&[Option<f64>]> = rows.iter().map(|r| r.as_slice()).collect();
        let x = FeatureMatrix::from_rows(&refs).unwrap();
        // 1 and 3 tie; the smaller wins.
        assert_eq!(Standardizer::fit(&x, Task::Event).unwrap().impute[0], 1.0);
    }

    #[test]
    fn never_observed_feature_flagged() {
        let rows: Vec<Vec<Option<f64>>> = vec![vec![Some(1.0), None], vec![Some(2.0), None]];
        let refs: Vec<&[Option<f64>]> = rows.iter().map(|r| r.as_slice()).collect();
        let x = FeatureMatrix::from_rows(&refs).unwrap();
        let s = Standardizer::fit(&x, Task::Fluidity).unwrap();
        assert_eq!(s.unobserved, vec![false, true]);
        assert_eq!(s.impute[1], 0.0);
        assert_eq!(s.scale[1], 1.0);
    }

    #[test]
    fn single_sample_rejected() {
        let x = FeatureMatrix::dense(array![[1.0f64, 2.0]]);
        assert!(Standardizer::fit(&x, Task::Fluidity).is_err());
    }

    #[test]
    fn rank_two_split_keeps_both() {
        // Four copies of a and one of b, orthogonal: variance splits 80/20.
        let a = [1.0, -1.0, 1.0, -1.0];
        let b = [1.0, 1.0, -1.0, -1.0];
        let mut z = Array2::<f64>::zeros((4, 5));
        for i in 0..4 {
            for j in 0..4 {
                z[[i, j]] = a[i];
            }
            z[[i, 4]] = b[i];
        }
        let basis = PcaBasis::fit(z.view());
        assert_eq!(basis.rank(), 2);
        let r = basis.explained_ratio();
        assert_abs_diff_eq!(r[0], 0.8, epsilon = 1e-12);
        assert_eq!(basis.retained_for(0.99), 2);
        assert_eq!(basis.retained_for(0.8), 1);
    }

    #[test]
    fn reconstruction_error_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let raw = Array2::from_shape_fn((100, 10), |(_, j)| rng.random::<f64>() * (j as f64 + 1.0));
        let x = FeatureMatrix::dense(raw);
        for target in [0.5, 0.7, 0.9, 0.99] {
            let p = fit_preprocessor(&x, Task::Fluidity, target).unwrap();
            let z = p.standardizer.transform(&x).unwrap();
            let recon = p.transform(&x).unwrap().dot(&p.components);
            let err: f64 = (&z - &recon).iter().map(|v| v * v).sum();
            let total: f64 = z.iter().map(|v| v * v).sum();
            assert!(
                err <= (1.0 - target) * total + 1e-9,
                "target {target}: {err} vs {total}"
            );
        }
    }

    #[test]
    fn gram_and_covariance_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let wide = Array2::from_shape_fn((6, 9), |_| rng.random::<f64>() - 0.5);
        // Zero rows leave ZᵀZ unchanged but push the fit onto the covariance path.
        let mut tall = Array2::<f64>::zeros((10, 9));
        tall.slice_mut(s![..6, ..]).assign(&wide);
        let a = PcaBasis::fit(wide.view());
        let b = PcaBasis::fit(tall.view());
        assert_eq!(a.rank(), 6);
        assert_eq!(b.rank(), 6);
        for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-10);
        }
        for (x, y) in a.components.iter().zip(b.components.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-8);
        }
    }
}
