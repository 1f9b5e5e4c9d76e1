//! Dense kernels used by the VAR fits, PCA and the Gaussian-process surrogate.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::scalar::Scalar;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
///
/// Returns `None` when a pivot falls below `rel_tol * max(diag)`, which is
/// how callers detect numerically singular Gram matrices.
pub fn cholesky<T: Scalar>(a: ArrayView2<'_, T>, rel_tol: T) -> Option<Array2<T>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "cholesky needs a square matrix");
    let max_diag = a.diag().iter().fold(T::zero(), |m, &v| m.max(v.abs()));
    let floor = rel_tol * max_diag.max(T::min_positive_value());
    let mut l = Array2::<T>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > floor) {
            return None;
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / djj;
        }
    }
    Some(l)
}

/// Solves `L y = b` in place.
pub fn forward_substitute<T: Scalar>(l: ArrayView2<'_, T>, b: &mut Array1<T>) {
    let n = l.nrows();
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * b[k];
        }
        b[i] = s / l[[i, i]];
    }
}

/// Solves `Lᵀ x = y` in place.
pub fn backward_substitute<T: Scalar>(l: ArrayView2<'_, T>, b: &mut Array1<T>) {
    let n = l.nrows();
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * b[k];
        }
        b[i] = s / l[[i, i]];
    }
}

/// Solves `A x = b` given the Cholesky factor of `A`.
pub fn cholesky_solve<T: Scalar>(l: ArrayView2<'_, T>, b: ArrayView1<'_, T>) -> Array1<T> {
    let mut x = b.to_owned();
    forward_substitute(l, &mut x);
    backward_substitute(l, &mut x);
    x
}

/// Solves `A X = B` column by column.
pub fn cholesky_solve_many<T: Scalar>(l: ArrayView2<'_, T>, b: ArrayView2<'_, T>) -> Array2<T> {
    let mut out = Array2::<T>::zeros(b.raw_dim());
    for (j, col) in b.axis_iter(Axis(1)).enumerate() {
        out.column_mut(j).assign(&cholesky_solve(l, col));
    }
    out
}

/// `log det A` from its Cholesky factor.
pub fn cholesky_log_det<T: Scalar>(l: ArrayView2<'_, T>) -> T {
    l.diag().iter().map(|d| d.ln()).sum::<T>() * T::of(2.0)
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<T> {
    /// Eigenvalues sorted in descending order.
    pub values: Array1<T>,
    /// Unit eigenvectors stored as columns, matching `values`.
    pub vectors: Array2<T>,
}

/// Householder tridiagonalisation followed by implicit QL iterations.
///
/// Each eigenvector's largest-magnitude entry is made positive so that the
/// result is reproducible across runs and platforms.
pub fn symmetric_eigen<T: Scalar>(a: ArrayView2<'_, T>) -> SymmetricEigen<T> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "symmetric_eigen needs a square matrix");
    if n == 0 {
        return SymmetricEigen {
            values: Array1::zeros(0),
            vectors: Array2::zeros((0, 0)),
        };
    }
    let mut v = a.to_owned();
    let mut d = Array1::<T>::zeros(n);
    let mut e = Array1::<T>::zeros(n);
    tridiagonalize(&mut v, &mut d, &mut e);
    ql_implicit(&mut v, &mut d, &mut e);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].partial_cmp(&d[i]).unwrap_or(std::cmp::Ordering::Equal));
    let values = Array1::from_iter(order.iter().map(|&i| d[i]));
    let mut vectors = Array2::<T>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        let col = v.column(src);
        let pivot = col.iter().fold(
            T::zero(),
            |best, &x| if x.abs() > best.abs() { x } else { best },
        );
        let sign = if pivot < T::zero() {
            -T::one()
        } else {
            T::one()
        };
        vectors.column_mut(dst).assign(&col.mapv(|x| x * sign));
    }
    SymmetricEigen { values, vectors }
}

fn tridiagonalize<T: Scalar>(v: &mut Array2<T>, d: &mut Array1<T>, e: &mut Array1<T>) {
    let n = d.len();
    for j in 0..n {
        d[j] = v[[n - 1, j]];
    }
    for i in (1..n).rev() {
        let mut scale = T::zero();
        let mut h = T::zero();
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == T::zero() {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[[i - 1, j]];
                v[[i, j]] = T::zero();
                v[[j, i]] = T::zero();
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > T::zero() {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for j in 0..i {
                e[j] = T::zero();
            }
            for j in 0..i {
                f = d[j];
                v[[j, i]] = f;
                g = e[j] + v[[j, j]] * f;
                for k in (j + 1)..i {
                    g += v[[k, j]] * d[k];
                    e[k] += v[[k, j]] * f;
                }
                e[j] = g;
            }
            f = T::zero();
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    let upd = f * e[k] + g * d[k];
                    v[[k, j]] -= upd;
                }
                d[j] = v[[i - 1, j]];
                v[[i, j]] = T::zero();
            }
        }
        d[i] = h;
    }
    for i in 0..n - 1 {
        v[[n - 1, i]] = v[[i, i]];
        v[[i, i]] = T::one();
        let h = d[i + 1];
        if h != T::zero() {
            for k in 0..=i {
                d[k] = v[[k, i + 1]] / h;
            }
            for j in 0..=i {
                let mut g = T::zero();
                for k in 0..=i {
                    g += v[[k, i + 1]] * v[[k, j]];
                }
                for k in 0..=i {
                    let upd = g * d[k];
                    v[[k, j]] -= upd;
                }
            }
        }
        for k in 0..=i {
            v[[k, i + 1]] = T::zero();
        }
    }
    for j in 0..n {
        d[j] = v[[n - 1, j]];
        v[[n - 1, j]] = T::zero();
    }
    v[[n - 1, n - 1]] = T::one();
    e[0] = T::zero();
}

fn ql_implicit<T: Scalar>(v: &mut Array2<T>, d: &mut Array1<T>, e: &mut Array1<T>) {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = T::zero();
    let two = T::of(2.0);
    let eps = T::epsilon();
    let mut f = T::zero();
    let mut tst1 = T::zero();
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (two * e[l]);
                let mut r = p.hypot(T::one());
                if p < T::zero() {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for i in (l + 2)..n {
                    d[i] -= h;
                }
                f += h;

                p = d[m];
                let mut c = T::one();
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = T::zero();
                let mut s2 = T::zero();
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        let vk1 = v[[k, i + 1]];
                        let vk = v[[k, i]];
                        v[[k, i + 1]] = s * vk + c * vk1;
                        v[[k, i]] = c * vk - s * vk1;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 || iter > 60 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = T::zero();
    }
}

/// Column means of a matrix.
pub fn column_means<T: Scalar>(x: ArrayView2<'_, T>) -> Array1<T> {
    let n = T::from_usize_lossy(x.nrows().max(1));
    x.sum_axis(Axis(0)).mapv(|s| s / n)
}
