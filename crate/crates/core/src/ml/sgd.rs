//! Elastic-net logistic regression fitted by stochastic gradient descent.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdParams {
    pub alpha: f64,
    pub l1_ratio: f64,
    pub eta0: f64,
    pub power_t: f64,
    pub max_epochs: usize,
    pub tol: f64,
    pub n_iter_no_change: usize,
    pub seed: u64,
}

impl SgdParams {
    pub fn new(alpha: f64, l1_ratio: f64, seed: u64) -> Self {
        SgdParams {
            alpha,
            l1_ratio,
            eta0: 0.01,
            power_t: 0.25,
            max_epochs: 1000,
            tol: 1e-4,
            n_iter_no_change: 5,
            seed,
        }
    }
}

/// One linear model per class (a single model for binary tasks).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier<T> {
    pub n_classes: usize,
    /// models × features
    pub weights: Array2<T>,
    pub intercepts: Array1<T>,
    pub epochs: Vec<usize>,
}

/// `w_c = N / (K · N_c)` over the classes present.
pub fn balanced_class_weights(y: &[usize], n_classes: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; n_classes];
    for &c in y {
        if c >= n_classes {
            return Err(Error::invalid(format!(
                "class index {c} out of range for {n_classes} classes"
            )));
        }
        counts[c] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::SingleClass);
    }
    let n = y.len() as f64;
    Ok(counts
        .iter()
        .map(|&c| {
            if c == 0 {
                0.0
            } else {
                n / (present as f64 * c as f64)
            }
        })
        .collect())
}

fn log_loss(margin: f64) -> f64 {
    if margin > 18.0 {
        (-margin).exp()
    } else if margin < -18.0 {
        -margin
    } else {
        (-margin).exp().ln_1p()
    }
}

/// d loss / d margin for the logistic loss.
fn log_dloss(margin: f64) -> f64 {
    if margin > 18.0 {
        -(-margin).exp()
    } else if margin < -18.0 {
        -1.0
    } else {
        -1.0 / (1.0 + margin.exp())
    }
}

struct BinaryFit<T> {
    w: Array1<T>,
    b: T,
    epochs: usize,
}

fn fit_binary<T: Scalar>(
    z: ArrayView2<'_, T>,
    target: &[f64],
    sample_weight: &[f64],
    params: &SgdParams,
    stream: u64,
) -> BinaryFit<T> {
    let (n, d) = z.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(stream);
    let mut order: Vec<usize> = (0..n).collect();
    let mut w = Array1::<T>::zeros(d);
    let mut b = T::zero();
    let mut q = vec![T::zero(); d];
    let mut u = 0.0f64;
    let l1 = params.l1_ratio;
    let mut t = 1.0f64;
    let mut best_loss = f64::INFINITY;
    let mut stale = 0usize;
    let mut epochs = 0usize;
    for _ in 0..params.max_epochs {
        epochs += 1;
        order.shuffle(&mut rng);
        let mut sum_loss = 0.0;
        for &i in &order {
            let x = z.row(i);
            let eta = params.eta0 / t.powf(params.power_t);
            let y = target[i];
            let p = (w.dot(&x) + b).as_f64();
            sum_loss += sample_weight[i] * log_loss(y * p);
            let g = y * log_dloss(y * p) * sample_weight[i];
            if l1 < 1.0 {
                let shrink = (1.0 - (1.0 - l1) * eta * params.alpha).max(0.0);
                w.mapv_inplace(|v| v * T::of(shrink));
            }
            let step = T::of(-eta * g);
            w.scaled_add(step, &x);
            b += step;
            if l1 > 0.0 {
                u += l1 * eta * params.alpha;
                let ut = T::of(u);
                for (wj, qj) in w.iter_mut().zip(q.iter_mut()) {
                    let before = *wj;
                    if before > T::zero() {
                        *wj = (before - (ut + *qj)).max(T::zero());
                    } else if before < T::zero() {
                        *wj = (before + (ut - *qj)).min(T::zero());
                    }
                    *qj += *wj - before;
                }
            }
            t += 1.0;
        }
        let mean_loss = sum_loss / n as f64;
        if !mean_loss.is_finite() {
            break;
        }
        if mean_loss > best_loss - params.tol {
            stale += 1;
        } else {
            stale = 0;
        }
        best_loss = best_loss.min(mean_loss);
        if stale >= params.n_iter_no_change {
            break;
        }
    }
    BinaryFit { w, b, epochs }
}

/// Fits a balanced-weight logistic model; one-vs-rest when `n_classes > 2`.
pub fn train_sgd_logistic<T: Scalar>(
    z: ArrayView2<'_, T>,
    y: &[usize],
    n_classes: usize,
    params: &SgdParams,
) -> Result<LinearClassifier<T>> {
    if z.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "training labels".into(),
            expected: z.nrows(),
            found: y.len(),
        });
    }
    if !(params.alpha >= 0.0 && (0.0..=1.0).contains(&params.l1_ratio)) {
        return Err(Error::invalid(
            "alpha must be non-negative and l1_ratio within [0, 1]",
        ));
    }
    let class_w = balanced_class_weights(y, n_classes)?;
    let sample_weight: Vec<f64> = y.iter().map(|&c| class_w[c]).collect();
    let positives: Vec<usize> = if n_classes == 2 {
        vec![1]
    } else {
        (0..n_classes).collect()
    };
    let d = z.ncols();
    let mut weights = Array2::zeros((positives.len(), d));
    let mut intercepts = Array1::zeros(positives.len());
    let mut epochs = Vec::with_capacity(positives.len());
    for (m, &pos) in positives.iter().enumerate() {
        let target: Vec<f64> = y
            .iter()
            .map(|&c| if c == pos { 1.0 } else { -1.0 })
            .collect();
        let fit = fit_binary(z, &target, &sample_weight, params, m as u64);
        weights.row_mut(m).assign(&fit.w);
        intercepts[m] = fit.b;
        epochs.push(fit.epochs);
    }
    Ok(LinearClassifier {
        n_classes,
        weights,
        intercepts,
        epochs,
    })
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl<T: Scalar> LinearClassifier<T> {
    /// samples × models raw margins.
    pub fn decision(&self, z: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if z.ncols() != self.weights.ncols() {
            return Err(Error::DimensionMismatch {
                context: "classifier input".into(),
                expected: self.weights.ncols(),
                found: z.ncols(),
            });
        }
        let mut out = z.dot(&self.weights.t());
        for mut row in out.rows_mut() {
            row += &self.intercepts;
        }
        Ok(out)
    }

    /// samples × classes probabilities; rows sum to 1.
    pub fn predict_proba(&self, z: ArrayView2<'_, T>) -> Result<Array2<T>> {
        let dec = self.decision(z)?;
        let n = dec.nrows();
        let mut out = Array2::zeros((n, self.n_classes));
        for (i, row) in dec.rows().into_iter().enumerate() {
            if self.n_classes == 2 {
                let p = sigmoid(row[0].as_f64());
                out[[i, 0]] = T::of(1.0 - p);
                out[[i, 1]] = T::of(p);
            } else {
                softmax_into(row, out.row_mut(i));
            }
        }
        Ok(out)
    }
}

fn softmax_into<T: Scalar>(row: ArrayView1<'_, T>, mut out: ndarray::ArrayViewMut1<'_, T>) {
    let m = row
        .iter()
        .map(|v| v.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    for (o, e) in out.iter_mut().zip(exps) {
        *o = T::of(e / total);
    }
}
