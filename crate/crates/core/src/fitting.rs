//! Least-squares fit of `rho(n) = a * exp(-b * n) + c` to correlation curves.

use serde::{Deserialize, Serialize};

use crate::cpa::SuccessPoint;
use crate::error::FitError;

/// Most iterations of the damped Gauss-Newton loop.
pub const MAX_ITERATIONS: usize = 1000;
/// Convergence threshold on the parameter step (max norm).
pub const STEP_TOLERANCE: f64 = 1e-10;
pub const MIN_POINTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Largest per-abscissa standard deviation of the observations around
    /// the fitted curve.
    pub residual_sigma: f64,
    pub iterations: usize,
    /// Whether the fitted curve stays inside `[0, 1]` on the data range.
    pub in_unit_range: bool,
}

impl DecayFit {
    pub fn eval(&self, n: f64) -> f64 {
        evaluate_decay(self.a, self.b, self.c, n)
    }
}

#[inline]
pub fn evaluate_decay(a: f64, b: f64, c: f64, n: f64) -> f64 {
    a * (-b * n).exp() + c
}

/// Fits the decay law to mean correlations `rho` observed at strictly
/// increasing abscissae `n`. `residual_sigma` is the largest absolute
/// residual.
pub fn fit_decay(n: &[f64], rho: &[f64]) -> Result<DecayFit, FitError> {
    fit_inner(n, rho, None)
}

/// Like [`fit_decay`] but fits the per-abscissa means of `samples` and
/// measures `residual_sigma` against the individual samples.
pub fn fit_decay_samples(n: &[f64], samples: &[Vec<f64>]) -> Result<DecayFit, FitError> {
    if samples.iter().any(Vec::is_empty) {
        return Err(FitError::Degenerate("an abscissa has no samples".into()));
    }
    let means: Vec<f64> = samples
        .iter()
        .map(|s| s.iter().sum::<f64>() / s.len() as f64)
        .collect();
    fit_inner(n, &means, Some(samples))
}

fn fit_inner(n: &[f64], rho: &[f64], samples: Option<&[Vec<f64>]>) -> Result<DecayFit, FitError> {
    if n.len() != rho.len() || samples.is_some_and(|s| s.len() != n.len()) {
        return Err(FitError::Degenerate(format!(
            "{} abscissae for {} ordinates",
            n.len(),
            rho.len()
        )));
    }
    if n.len() < MIN_POINTS {
        return Err(FitError::TooFewPoints {
            required: MIN_POINTS,
            got: n.len(),
        });
    }
    if n.iter().chain(rho).any(|v| !v.is_finite()) {
        return Err(FitError::Degenerate("non-finite input".into()));
    }
    if n.windows(2).any(|w| w[0] >= w[1]) {
        return Err(FitError::UnorderedAbscissae);
    }
    let lo = rho.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = rho.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
        return Err(FitError::Degenerate("all ordinates are equal".into()));
    }

    let mut theta = initial_guess(n, rho, lo, hi);
    let sse = |t: &[f64; 3]| -> f64 {
        n.iter()
            .zip(rho)
            .map(|(&x, &y)| (y - evaluate_decay(t[0], t[1], t[2], x)).powi(2))
            .sum()
    };
    let mut current = sse(&theta);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let mut last_step = f64::INFINITY;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (jtj, jtr) = normal_equations(n, rho, &theta);
        let mut damped = jtj;
        for i in 0..3 {
            damped[i][i] += lambda * jtj[i][i].max(1e-12);
        }
        let Some(step) = solve3(damped, jtr) else {
            lambda *= 10.0;
            continue;
        };
        last_step = step.iter().fold(0.0, |m: f64, s| m.max(s.abs()));
        let candidate = [theta[0] + step[0], theta[1] + step[1], theta[2] + step[2]];
        let trial = sse(&candidate);
        if trial <= current {
            theta = candidate;
            current = trial;
            lambda = (lambda / 10.0).max(1e-12);
        } else {
            lambda *= 10.0;
        }
        if last_step < STEP_TOLERANCE {
            converged = true;
            break;
        }
    }
    let [a, b, c] = theta;
    if !converged {
        return Err(FitError::NoConvergence {
            iterations,
            a,
            b,
            c,
            step: last_step,
        });
    }
    if !(a.is_finite() && b.is_finite() && c.is_finite()) || b <= 0.0 {
        return Err(FitError::Degenerate(format!(
            "fit does not decay (a={a}, b={b}, c={c})"
        )));
    }

    let residual_sigma = match samples {
        Some(samples) => n
            .iter()
            .zip(samples)
            .map(|(&x, s)| {
                let f = evaluate_decay(a, b, c, x);
                (s.iter().map(|v| (v - f).powi(2)).sum::<f64>() / s.len() as f64).sqrt()
            })
            .fold(0.0, f64::max),
        None => n
            .iter()
            .zip(rho)
            .map(|(&x, &y)| (y - evaluate_decay(a, b, c, x)).abs())
            .fold(0.0, f64::max),
    };
    let in_unit_range = n.iter().all(|&x| {
        let f = evaluate_decay(a, b, c, x);
        (-1e-6..=1.0 + 1e-6).contains(&f)
    });
    Ok(DecayFit {
        a,
        b,
        c,
        residual_sigma,
        iterations,
        in_unit_range,
    })
}

/// `c` at the minimum, `a` spanning the data and `b` from a log-linear
/// regression of the excess over `c`.
fn initial_guess(n: &[f64], rho: &[f64], lo: f64, hi: f64) -> [f64; 3] {
    let c0 = lo;
    let a0 = hi - lo;
    let pts: Vec<(f64, f64)> = n
        .iter()
        .zip(rho)
        .filter(|(_, &y)| y - c0 > 0.0)
        .map(|(&x, &y)| (x, (y - c0).ln()))
        .collect();
    let span = n[n.len() - 1] - n[0];
    let mut b0 = 1.0 / span;
    if pts.len() >= 2 {
        let m = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        if sxx > 0.0 && -sxy / sxx > 0.0 {
            b0 = -sxy / sxx;
        }
    }
    [a0, b0, c0]
}

fn normal_equations(n: &[f64], rho: &[f64], t: &[f64; 3]) -> ([[f64; 3]; 3], [f64; 3]) {
    let mut jtj = [[0.0; 3]; 3];
    let mut jtr = [0.0; 3];
    for (&x, &y) in n.iter().zip(rho) {
        let e = (-t[1] * x).exp();
        let j = [e, -t[0] * x * e, 1.0];
        let r = y - (t[0] * e + t[2]);
        for i in 0..3 {
            jtr[i] += j[i] * r;
            for k in 0..3 {
                jtj[i][k] += j[i] * j[k];
            }
        }
    }
    (jtj, jtr)
}

/// Gaussian elimination with partial pivoting.
fn solve3(mut m: [[f64; 3]; 3], mut v: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        v.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            v[row] -= f * v[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| m[row][k] * x[k]).sum();
        x[row] = (v[row] - s) / m[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Fit of one step's success curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFit {
    pub tau: usize,
    pub fit: DecayFit,
}

/// Fits the correct-hypothesis curve of every step present in `points`,
/// using the per-run samples for `residual_sigma` when available.
pub fn fit_all_taus(points: &[SuccessPoint]) -> Result<Vec<StepFit>, FitError> {
    let mut taus: Vec<usize> = points.iter().map(|p| p.tau).collect();
    taus.sort_unstable();
    taus.dedup();
    taus.into_iter()
        .map(|tau| {
            let mut curve: Vec<&SuccessPoint> = points.iter().filter(|p| p.tau == tau).collect();
            curve.sort_by_key(|p| p.n_pe);
            let n: Vec<f64> = curve.iter().map(|p| p.n_pe as f64).collect();
            let fit = if curve.iter().all(|p| !p.correct_samples.is_empty()) {
                let s: Vec<Vec<f64>> = curve.iter().map(|p| p.correct_samples.clone()).collect();
                fit_decay_samples(&n, &s)?
            } else {
                let m: Vec<f64> = curve.iter().map(|p| p.mean_correct).collect();
                fit_decay(&n, &m)?
            };
            Ok(StepFit { tau, fit })
        })
        .collect()
}
