//! Gaussian-process Bayesian optimisation over the three pipeline hyperparameters.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, forward_substitute};
use crate::special::{normal_cdf, normal_pdf};

pub const DEFAULT_ITERATIONS: usize = 600;
pub const INITIAL_PROBES: usize = 10;
const SCAN_POINTS: usize = 1024;
const BASE_NOISE: f64 = 1e-6;
const EI_XI: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub pca_explained_variance: [f64; 2],
    pub log10_alpha: [f64; 2],
    pub l1_ratio: [f64; 2],
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            pca_explained_variance: [0.5, 0.99],
            log10_alpha: [-10.0, 0.0],
            l1_ratio: [0.0, 1.0],
        }
    }
}

impl Bounds {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, b: [f64; 2], lo: f64, hi: f64| {
            if b[0] < lo || b[1] > hi || b[0] > b[1] || !b[0].is_finite() || !b[1].is_finite() {
                Err(Error::invalid(format!(
                    "bounds.{name} {b:?} must lie within [{lo}, {hi}]"
                )))
            } else {
                Ok(())
            }
        };
        check(
            "pca_explained_variance",
            self.pca_explained_variance,
            0.5,
            0.99,
        )?;
        check("log10_alpha", self.log10_alpha, -10.0, 0.0)?;
        check("l1_ratio", self.l1_ratio, 0.0, 1.0)
    }

    fn ranges(&self) -> [[f64; 2]; 3] {
        [self.pca_explained_variance, self.log10_alpha, self.l1_ratio]
    }

    pub fn from_unit(&self, u: [f64; 3]) -> HyperParams {
        let r = self.ranges();
        let at = |d: usize| r[d][0] + u[d].clamp(0.0, 1.0) * (r[d][1] - r[d][0]);
        HyperParams {
            pca_explained_variance: at(0),
            alpha: 10f64.powf(at(1)),
            l1_ratio: at(2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub pca_explained_variance: f64,
    pub alpha: f64,
    pub l1_ratio: f64,
}

impl HyperParams {
    pub fn log10_alpha(&self) -> f64 {
        self.alpha.log10()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub seed: u64,
    pub params: HyperParams,
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub best: TraceEntry,
    pub trace: Vec<TraceEntry>,
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Shifted Halton points in the unit cube.
fn halton(count: usize, start: u64, shift: [f64; 3]) -> Vec<[f64; 3]> {
    const BASES: [u64; 3] = [2, 3, 5];
    (0..count as u64)
        .map(|i| {
            let mut p = [0.0; 3];
            for d in 0..3 {
                p[d] = (radical_inverse(start + i, BASES[d]) + shift[d]).fract();
            }
            p
        })
        .collect()
}

fn matern52(a: &[f64; 3], b: &[f64; 3], ls: &[f64; 3]) -> f64 {
    let r2: f64 = (0..3).map(|d| ((a[d] - b[d]) / ls[d]).powi(2)).sum();
    let r = (5.0 * r2).sqrt();
    (1.0 + r + r * r / 3.0) * (-r).exp()
}

struct Gp {
    x: Vec<[f64; 3]>,
    ls: [f64; 3],
    chol: Array2<f64>,
    alpha: Array1<f64>,
    lml: f64,
}

impl Gp {
    fn fit(x: &[[f64; 3]], y: &Array1<f64>, ls: [f64; 3], noise: f64) -> Option<Gp> {
        let n = x.len();
        let mut k = Array2::from_shape_fn((n, n), |(i, j)| matern52(&x[i], &x[j], &ls));
        let mut jitter = noise;
        let chol = loop {
            for i in 0..n {
                k[[i, i]] = 1.0 + jitter;
            }
            if let Some(l) = cholesky(k.view(), 1e-12) {
                break l;
            }
            jitter *= 10.0;
            if jitter > 1.0 {
                return None;
            }
        };
        let alpha = cholesky_solve(chol.view(), y.view());
        let log_det: f64 = chol.diag().iter().map(|v| v.ln()).sum();
        let lml =
            -0.5 * y.dot(&alpha) - log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        Some(Gp {
            x: x.to_vec(),
            ls,
            chol,
            alpha,
            lml,
        })
    }

    fn predict(&self, p: &[f64; 3]) -> (f64, f64) {
        let mut kv = Array1::from_iter(self.x.iter().map(|xi| matern52(xi, p, &self.ls)));
        let mean = kv.dot(&self.alpha);
        forward_substitute(self.chol.view(), &mut kv);
        let var = (1.0 - kv.dot(&kv)).max(0.0);
        (mean, var.sqrt())
    }

    fn expected_improvement(&self, p: &[f64; 3], best: f64) -> f64 {
        let (mu, sd) = self.predict(p);
        let imp = mu - best - EI_XI;
        if sd < 1e-12 {
            return imp.max(0.0);
        }
        let z = imp / sd;
        imp * normal_cdf(z) + sd * normal_pdf(z)
    }
}

/// Lengthscales and noise by marginal likelihood: isotropic grid, then per-dimension ascent.
fn fit_hyper(x: &[[f64; 3]], y: &Array1<f64>) -> Option<Gp> {
    const ISO: [f64; 8] = [0.05, 0.1, 0.2, 0.3, 0.5, 0.8, 1.2, 2.0];
    const NOISE: [f64; 4] = [0.0, 1e-3, 1e-2, 1e-1];
    let mut best: Option<(Gp, f64)> = None;
    for &l in &ISO {
        for &extra in &NOISE {
            let noise = BASE_NOISE + extra;
            if let Some(gp) = Gp::fit(x, y, [l; 3], noise) {
                if best.as_ref().is_none_or(|(b, _)| gp.lml > b.lml) {
                    best = Some((gp, noise));
                }
            }
        }
    }
    let (mut gp, noise) = best?;
    let mut step = 2f64.sqrt();
    while step > 1.1 {
        let mut improved = true;
        while improved {
            improved = false;
            for d in 0..3 {
                for factor in [step, 1.0 / step] {
                    let mut ls = gp.ls;
                    ls[d] = (ls[d] * factor).clamp(0.01, 10.0);
                    if ls[d] == gp.ls[d] {
                        continue;
                    }
                    if let Some(cand) = Gp::fit(x, y, ls, noise) {
                        if cand.lml > gp.lml + 1e-9 {
                            gp = cand;
                            improved = true;
                        }
                    }
                }
            }
        }
        step = step.sqrt();
    }
    Some(gp)
}

/// Compass search on the acquisition from `start`.
fn refine(gp: &Gp, start: [f64; 3], best: f64) -> ([f64; 3], f64) {
    let mut p = start;
    let mut val = gp.expected_improvement(&p, best);
    let mut step = 0.05;
    let mut evals = 0;
    while step > 1e-4 && evals < 400 {
        let mut moved = false;
        'dims: for d in 0..3 {
            for sign in [1.0, -1.0] {
                let mut q = p;
                q[d] = (q[d] + sign * step).clamp(0.0, 1.0);
                if q[d] == p[d] {
                    continue;
                }
                evals += 1;
                let v = gp.expected_improvement(&q, best);
                if v > val {
                    p = q;
                    val = v;
                    moved = true;
                    break 'dims;
                }
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    (p, val)
}

fn standardize(values: &[f64]) -> Array1<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let sd = if sd > 1e-12 { sd } else { 1.0 };
    Array1::from_iter(values.iter().map(|v| (v - mean) / sd))
}

/// Maximises `objective(params, eval_seed)`; evaluation `i` receives seed `seed ^ i`.
pub fn bayes_optimize<F>(
    mut objective: F,
    bounds: &Bounds,
    iterations: usize,
    seed: u64,
) -> Result<OptimizationResult>
where
    F: FnMut(&HyperParams, u64) -> Result<f64>,
{
    bounds.validate()?;
    if iterations == 0 {
        return Err(Error::invalid("iterations must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let initial = halton(INITIAL_PROBES.min(iterations), 1, shift);

    let mut points: Vec<[f64; 3]> = Vec::with_capacity(iterations);
    let mut trace: Vec<TraceEntry> = Vec::with_capacity(iterations);
    for it in 0..iterations {
        let u = if it < initial.len() {
            initial[it]
        } else {
            next_probe(&points, &trace, &mut rng)
        };
        let params = bounds.from_unit(u);
        let eval_seed = seed ^ it as u64;
        let (value, error) = match objective(&params, eval_seed) {
            Ok(v) if v.is_finite() => (Some(v), None),
            Ok(v) => (None, Some(format!("objective returned {v}"))),
            Err(e) => (None, Some(e.to_string())),
        };
        if let Some(msg) = &error {
            log::warn!("optimisation step {it} failed: {msg}");
        }
        points.push(u);
        trace.push(TraceEntry {
            iteration: it,
            seed: eval_seed,
            params,
            value,
            error,
        });
    }
    let best = trace
        .iter()
        .filter(|t| t.value.is_some())
        .fold(None::<&TraceEntry>, |acc, t| match acc {
            Some(a) if a.value >= t.value => Some(a),
            _ => Some(t),
        })
        .cloned()
        .ok_or_else(|| Error::Numerical("every objective evaluation failed".into()))?;
    Ok(OptimizationResult { best, trace })
}

fn next_probe(points: &[[f64; 3]], trace: &[TraceEntry], rng: &mut ChaCha8Rng) -> [f64; 3] {
    let shift: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let scan = halton(SCAN_POINTS, 1, shift);
    let worst = trace
        .iter()
        .filter_map(|t| t.value)
        .fold(f64::INFINITY, f64::min);
    let worst = if worst.is_finite() { worst } else { 0.0 };
    let raw: Vec<f64> = trace.iter().map(|t| t.value.unwrap_or(worst)).collect();
    let y = standardize(&raw);
    let Some(gp) = fit_hyper(points, &y) else {
        return scan[0];
    };
    let best_y = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut scored: Vec<(f64, usize)> = scan
        .iter()
        .enumerate()
        .map(|(i, p)| (gp.expected_improvement(p, best_y), i))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let incumbent = points[y
        .iter()
        .enumerate()
        .fold(0, |b, (i, &v)| if v > y[b] { i } else { b })];
    let starts = scored
        .iter()
        .take(5)
        .map(|&(_, i)| scan[i])
        .chain(std::iter::once(incumbent));
    let mut choice = (scan[scored[0].1], scored[0].0);
    for s in starts {
        let cand = refine(&gp, s, best_y);
        if cand.1 > choice.1 {
            choice = cand;
        }
    }
    choice.0
}
