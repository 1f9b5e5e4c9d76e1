//! Granger-causality coupling of participants' body-motion series.
//!
//! Each clip's face-to-camera distance streams are window-averaged to 8 Hz,
//! differenced and z-normalised; directed coupling `F(j -> i)` is the log
//! ratio of target `i`'s residual variance without and with `j`'s lags.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve_many};
use crate::scalar::Scalar;
use crate::session::CLIP_LEN_S;

pub const DEFAULT_ORDER: usize = 12;
pub const DEFAULT_RIDGE: f64 = 1e-4;
pub const DEFAULT_TARGET_RATE_HZ: f64 = 8.0;
pub const MIN_COVERAGE: f64 = 0.8;

const BIN_EPS: f64 = 1e-9;
const CHOL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MotionSeries<T> {
    pub clip_id: String,
    pub participant_id: String,
    pub samples: Vec<T>,
    /// Clip-relative seconds, strictly increasing.
    pub timestamps: Vec<f64>,
}

/// Differenced, z-normalised `T × P` panel.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPanel<T> {
    pub clip_id: String,
    pub participant_ids: Vec<String>,
    /// Columns of invalid participants are zero.
    pub matrix: Array2<T>,
    pub valid: Vec<bool>,
}

impl<T: Scalar> PreparedPanel<T> {
    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Panel whose columns are all valid (tests and direct use).
    pub fn from_matrix(clip_id: impl Into<String>, matrix: Array2<T>) -> Self {
        let p = matrix.ncols();
        PreparedPanel {
            clip_id: clip_id.into(),
            participant_ids: (0..p).map(|i| format!("p{i}")).collect(),
            matrix,
            valid: vec![true; p],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GcMode {
    /// Only the target and source enter each model.
    #[default]
    Bivariate,
    /// All valid participants enter both models; requires ridge when the
    /// design has more regressors than observations.
    Conditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GcConfig {
    pub order: usize,
    pub mode: GcMode,
    pub ridge: f64,
    pub target_rate_hz: f64,
    pub clip_duration_s: f64,
}

impl Default for GcConfig {
    fn default() -> Self {
        GcConfig {
            order: DEFAULT_ORDER,
            mode: GcMode::Bivariate,
            ridge: DEFAULT_RIDGE,
            target_rate_hz: DEFAULT_TARGET_RATE_HZ,
            clip_duration_s: CLIP_LEN_S,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcResult<T> {
    pub clip_id: String,
    /// `pairwise[target][source]`, `None` on the diagonal and for invalid participants.
    pub pairwise: Vec<Vec<Option<T>>>,
    /// Mean over defined ordered pairs; `None` when fewer than two participants are valid.
    pub mean_coupling: Option<T>,
    pub order: usize,
    pub mode: GcMode,
}

/// Window-averages each series to `target_rate` Hz over the clip, takes the
/// first difference and z-normalises. Series that cover fewer than 80% of
/// the windows, or are constant after differencing, are masked invalid.
pub fn preprocess_motion<T: Scalar>(
    series: &[MotionSeries<T>],
    target_rate_hz: f64,
    clip_duration_s: f64,
) -> Result<PreparedPanel<T>> {
    if !(target_rate_hz > 0.0 && clip_duration_s > 0.0) {
        return Err(Error::invalid(
            "target rate and clip duration must be positive",
        ));
    }
    let clip_id = series
        .first()
        .map(|s| s.clip_id.clone())
        .unwrap_or_default();
    let n_windows = (clip_duration_s * target_rate_hz + BIN_EPS).floor() as usize;
    if n_windows < 3 {
        return Err(Error::invalid("clip too short for motion preprocessing"));
    }
    let n_rows = n_windows - 1;
    let mut matrix = Array2::<T>::zeros((n_rows, series.len()));
    let mut valid = vec![false; series.len()];

    for (col, s) in series.iter().enumerate() {
        if s.samples.len() != s.timestamps.len() {
            return Err(Error::DimensionMismatch {
                context: format!("motion series {} of clip {}", s.participant_id, s.clip_id),
                expected: s.timestamps.len(),
                found: s.samples.len(),
            });
        }
        if s.timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(format!(
                "timestamps of {} in clip {} are not strictly increasing",
                s.participant_id, s.clip_id
            )));
        }
        if s.samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite motion sample for {} in clip {}",
                s.participant_id, s.clip_id
            )));
        }
        let Some(windowed) = window_average(s, target_rate_hz, n_windows) else {
            continue;
        };
        let diff: Vec<T> = windowed.windows(2).map(|w| w[1] - w[0]).collect();
        if let Some(z) = z_normalize(&diff) {
            matrix.column_mut(col).assign(&Array1::from(z));
            valid[col] = true;
        }
    }
    Ok(PreparedPanel {
        clip_id,
        participant_ids: series.iter().map(|s| s.participant_id.clone()).collect(),
        matrix,
        valid,
    })
}

/// Mean per window with linear interpolation over empty windows; `None` if
/// coverage is below [`MIN_COVERAGE`].
fn window_average<T: Scalar>(s: &MotionSeries<T>, rate: f64, n_windows: usize) -> Option<Vec<T>> {
    let mut sum = vec![T::zero(); n_windows];
    let mut count = vec![0usize; n_windows];
    for (&t, &v) in s.timestamps.iter().zip(&s.samples) {
        if t < -BIN_EPS {
            continue;
        }
        let w = (t * rate + BIN_EPS).floor() as usize;
        if w < n_windows {
            sum[w] += v;
            count[w] += 1;
        }
    }
    let filled: Vec<usize> = (0..n_windows).filter(|&w| count[w] > 0).collect();
    if (filled.len() as f64) < MIN_COVERAGE * n_windows as f64 {
        return None;
    }
    let mut out: Vec<Option<T>> = (0..n_windows)
        .map(|w| (count[w] > 0).then(|| sum[w] / T::from_usize_lossy(count[w])))
        .collect();
    for w in 0..n_windows {
        if out[w].is_some() {
            continue;
        }
        let prev = filled.iter().rev().find(|&&f| f < w).copied();
        let next = filled.iter().find(|&&f| f > w).copied();
        out[w] = match (prev, next) {
            (Some(a), Some(b)) => {
                let (va, vb) = (
                    sum[a] / T::from_usize_lossy(count[a]),
                    sum[b] / T::from_usize_lossy(count[b]),
                );
                let frac = T::of((w - a) as f64 / (b - a) as f64);
                Some(va + (vb - va) * frac)
            }
            (Some(a), None) => Some(sum[a] / T::from_usize_lossy(count[a])),
            (None, Some(b)) => Some(sum[b] / T::from_usize_lossy(count[b])),
            (None, None) => None,
        };
    }
    out.into_iter().collect()
}

fn z_normalize<T: Scalar>(x: &[T]) -> Option<Vec<T>> {
    let n = T::from_usize_lossy(x.len());
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let scale = x.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let sd = var.sqrt();
    if !(sd > T::of(1e-9) * scale) || sd == T::zero() {
        return None;
    }
    Some(x.iter().map(|&v| (v - mean) / sd).collect())
}

/// Cross-products of the current values and lags `1..=order` of every column,
/// accumulated over `t = order..T`. Column `(lag, k)` sits at `lag * K + k`.
struct LagGram<T> {
    gram: Array2<T>,
    k: usize,
    n_obs: usize,
}

impl<T: Scalar> LagGram<T> {
    fn new(panel: ArrayView2<'_, T>, order: usize) -> Self {
        let (t_len, k) = panel.dim();
        let m = k * (order + 1);
        let mut gram = Array2::<T>::zeros((m, m));
        let mut z = vec![T::zero(); m];
        for t in order..t_len {
            for lag in 0..=order {
                for c in 0..k {
                    z[lag * k + c] = panel[[t - lag, c]];
                }
            }
            for a in 0..m {
                let za = z[a];
                if za == T::zero() {
                    continue;
                }
                let row = gram.row_mut(a);
                for (g, &zb) in row.into_iter().zip(z.iter()).skip(a) {
                    *g += za * zb;
                }
            }
        }
        for a in 0..m {
            for b in 0..a {
                gram[[a, b]] = gram[[b, a]];
            }
        }
        LagGram {
            gram,
            k,
            n_obs: t_len.saturating_sub(order),
        }
    }

    fn col(&self, lag: usize, series: usize) -> usize {
        lag * self.k + series
    }

    fn lag_columns(&self, series: &[usize], order: usize) -> Vec<usize> {
        (1..=order)
            .flat_map(|lag| series.iter().map(move |&s| (lag, s)))
            .map(|(lag, s)| self.col(lag, s))
            .collect()
    }

    /// Ridge regression of `targets` on `regressors`; returns coefficients
    /// (`regressors × targets`) and the residual cross-product over `n_obs`.
    fn regress(
        &self,
        regressors: &[usize],
        targets: &[usize],
        ridge: f64,
    ) -> Option<(Array2<T>, Array2<T>)> {
        let p = regressors.len();
        let q = targets.len();
        let n = T::from_usize_lossy(self.n_obs);
        let sub = |rows: &[usize], cols: &[usize]| {
            Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| {
                self.gram[[rows[i], cols[j]]]
            })
        };
        let gyy = sub(targets, targets);
        if p == 0 {
            return Some((Array2::zeros((0, q)), gyy / n));
        }
        let gxx = sub(regressors, regressors);
        let gxy = sub(regressors, targets);
        let mut a = gxx.clone();
        let lambda = T::of(ridge) * n;
        for i in 0..p {
            a[[i, i]] += lambda;
        }
        let l = cholesky(a.view(), T::of(CHOL_TOL))?;
        let b = cholesky_solve_many(l.view(), gxy.view());
        let bt_gxy = b.t().dot(&gxy);
        let resid = &gyy - &bt_gxy - bt_gxy.t() + &b.t().dot(&gxx.dot(&b));
        Some((b, resid / n))
    }
}

/// Least-squares VAR coefficients and residual covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct VarFit<T> {
    /// `coefficients[lag - 1][[target, source]]`.
    pub coefficients: Vec<Array2<T>>,
    /// Residual covariance with denominator `T - order`.
    pub residual_cov: Array2<T>,
}

/// Fits `x_t = Σ_l A_l x_{t-l} + e_t` by per-equation (ridge) least squares.
pub fn fit_var<T: Scalar>(panel: ArrayView2<'_, T>, order: usize, ridge: f64) -> Result<VarFit<T>> {
    let (t_len, k) = panel.dim();
    check_var_shape(t_len, k, order, ridge, "<panel>")?;
    let gram = LagGram::new(panel, order);
    let all: Vec<usize> = (0..k).collect();
    let regressors = gram.lag_columns(&all, order);
    let targets: Vec<usize> = (0..k).map(|c| gram.col(0, c)).collect();
    let (b, cov) =
        gram.regress(&regressors, &targets, ridge)
            .ok_or_else(|| Error::RankDeficientVar {
                clip: "<panel>".into(),
            })?;
    let coefficients = (0..order)
        .map(|lag| Array2::from_shape_fn((k, k), |(target, source)| b[[lag * k + source, target]]))
        .collect();
    Ok(VarFit {
        coefficients,
        residual_cov: cov,
    })
}

fn check_var_shape(t_len: usize, k: usize, order: usize, ridge: f64, clip: &str) -> Result<()> {
    if order == 0 || t_len <= order {
        return Err(Error::invalid(format!(
            "clip {clip}: VAR order {order} needs more than {order} observations, got {t_len}"
        )));
    }
    if !(ridge >= 0.0) {
        return Err(Error::invalid("ridge must be nonnegative"));
    }
    if ridge == 0.0 && t_len - order < k * order {
        return Err(Error::RankDeficientVar { clip: clip.into() });
    }
    Ok(())
}

/// Directed pairwise Granger causality over the valid participants of a panel.
pub fn pairwise_gc<T: Scalar>(
    panel: &PreparedPanel<T>,
    order: usize,
    mode: GcMode,
    ridge: f64,
) -> Result<GcResult<T>> {
    let p = panel.matrix.ncols();
    let mut pairwise = vec![vec![None; p]; p];
    let valid: Vec<usize> = (0..p).filter(|&i| panel.valid[i]).collect();
    let missing = |pairwise| GcResult {
        clip_id: panel.clip_id.clone(),
        pairwise,
        mean_coupling: None,
        order,
        mode,
    };
    if valid.len() < 2 {
        return Ok(missing(pairwise));
    }
    let t_len = panel.matrix.nrows();
    if t_len <= order + 1 {
        return Err(Error::invalid(format!(
            "clip {}: {t_len} samples is too short for order {order}",
            panel.clip_id
        )));
    }
    let widest = match mode {
        GcMode::Bivariate => 2,
        GcMode::Conditional => valid.len(),
    };
    check_var_shape(t_len, widest, order, ridge, &panel.clip_id)?;

    let gram = LagGram::new(panel.matrix.view(), order);
    let rank_err = || Error::RankDeficientVar {
        clip: panel.clip_id.clone(),
    };
    let resid_var = |regs: &[usize], target: usize| -> Result<T> {
        let cols = gram.lag_columns(regs, order);
        let (_, cov) = gram
            .regress(&cols, &[gram.col(0, target)], ridge)
            .ok_or_else(rank_err)?;
        Ok(cov[[0, 0]])
    };

    let mut total = T::zero();
    let mut n_defined = 0usize;
    for &target in &valid {
        let conditional_full = match mode {
            GcMode::Conditional => Some(resid_var(&valid, target)?),
            GcMode::Bivariate => None,
        };
        let own_only = match mode {
            GcMode::Bivariate => Some(resid_var(&[target], target)?),
            GcMode::Conditional => None,
        };
        for &source in valid.iter().filter(|&&s| s != target) {
            let (reduced, full) = match mode {
                GcMode::Bivariate => (
                    own_only.expect("bivariate"),
                    resid_var(&[target, source], target)?,
                ),
                GcMode::Conditional => {
                    let others: Vec<usize> =
                        valid.iter().copied().filter(|&s| s != source).collect();
                    (
                        resid_var(&others, target)?,
                        conditional_full.expect("conditional"),
                    )
                }
            };
            if !(full > T::zero()) {
                return Err(rank_err());
            }
            // nested OLS keeps reduced >= full; ridge can dip marginally below
            let f = (reduced / full).ln().max(T::zero());
            pairwise[target][source] = Some(f);
            total += f;
            n_defined += 1;
        }
    }
    Ok(GcResult {
        clip_id: panel.clip_id.clone(),
        pairwise,
        mean_coupling: Some(total / T::from_usize_lossy(n_defined)),
        order,
        mode,
    })
}

/// Motion series of one clip straight to its coupling result.
pub fn clip_gc<T: Scalar>(series: &[MotionSeries<T>], cfg: &GcConfig) -> Result<GcResult<T>> {
    let mut panel = preprocess_motion(series, cfg.target_rate_hz, cfg.clip_duration_s)?;
    if panel.clip_id.is_empty() {
        panel.clip_id = "<unknown>".into();
    }
    pairwise_gc(&panel, cfg.order, cfg.mode, cfg.ridge)
}
