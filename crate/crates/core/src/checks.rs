//! Pass/fail comparisons of simulated results against [`crate::reference`].
//!
//! Each function turns one family of results into [`Check`]s; the
//! reproduction command and the acceptance tests share them so both apply
//! the same tolerances.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cpa::SuccessPoint;
use crate::error::Result;
use crate::fitting::StepFit;
use crate::metrics::{crossing_point, Dependence, SnrCorrelation, SnrPoint};
use crate::reference::{self, ReferenceFit};

/// Campaign size of a reproduction, and the tolerances that go with it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Desk,
    Full,
}

impl Scale {
    pub fn n_runs(self) -> usize {
        match self {
            Scale::Desk => 1_000,
            Scale::Full => 10_000,
        }
    }

    /// Allowed deviation of each headline decay coefficient.
    pub fn coefficient_tolerance(self) -> f64 {
        match self {
            Scale::Desk => 0.05,
            Scale::Full => 0.03,
        }
    }

    pub fn max_residual_sigma(self) -> f64 {
        match self {
            Scale::Desk => 0.035,
            Scale::Full => reference::MAX_FIT_SIGMA + 0.005,
        }
    }
}

/// Allowed deviation of every per-step decay coefficient.
pub const STEP_FIT_TOLERANCE: f64 = 0.05;
/// Tolerance on values that are exact by construction.
pub const EXACT_TOLERANCE: f64 = 1e-9;
pub const CROSSING_FIRST_TOLERANCE: usize = 2;
pub const CROSSING_LATER_TOLERANCE: usize = 3;
pub const SNR_THRESHOLD_TOLERANCE: f64 = 0.015;
pub const SNR_WORST_RANGE: (f64, f64) = (0.07, 0.15);
/// SNR bound at the first array size past 16.
pub const SNR_BOUND_N_PE: usize = 17;
pub const SNR_BOUND: f64 = 0.05;
pub const SATURATION_TOLERANCE: f64 = 0.02;
pub const DISTRIBUTION_TOLERANCE: f64 = 0.05;
/// Spread allowed between the dependence values of steps 8 to 10.
pub const DEPENDENCE_PLATEAU_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: String,
    pub expected: String,
    pub passed: bool,
}

impl Check {
    fn new(name: impl Into<String>, measured: impl Into<String>, expected: impl Into<String>, passed: bool) -> Self {
        Self {
            name: name.into(),
            measured: measured.into(),
            expected: expected.into(),
            passed,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: {} (expected {})", self.name, self.measured, self.expected)
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}

/// Every run of a single-PE noiseless curve must correlate perfectly.
pub fn single_pe(points: &[SuccessPoint]) -> Vec<Check> {
    points
        .iter()
        .filter(|p| p.n_pe == 1)
        .map(|p| {
            let worst = p
                .correct_samples
                .iter()
                .map(|r| (r - 1.0).abs())
                .fold(0.0, f64::max);
            let ok = !p.correct_samples.is_empty() && worst <= EXACT_TOLERANCE;
            Check::new(
                format!("single PE rho, tau={}", p.tau),
                format!("max |rho - 1| = {worst:.3e} over {} runs", p.correct_samples.len()),
                format!("<= {EXACT_TOLERANCE:e}"),
                ok,
            )
        })
        .collect()
}

pub fn first_step_dependence(dep: &Dependence) -> Check {
    let dev = (dep.max_abs_rho - 1.0).abs();
    Check::new(
        format!("cross-PE dependence, tau={}", dep.tau),
        format!(
            "{:.12} for weights {:?} / {:?}",
            dep.max_abs_rho, dep.weights_a, dep.weights_b
        ),
        format!("1 within {EXACT_TOLERANCE:e}"),
        dep.tau == 0 && dev <= EXACT_TOLERANCE,
    )
}

/// Shape of the dependence curve: the last attacked step stays below the
/// first, and steps 8 to 10 level off.
pub fn dependence_shape(deps: &[Dependence]) -> Vec<Check> {
    let at = |t: usize| deps.iter().find(|d| d.tau == t).map(|d| d.max_abs_rho);
    let mut out = Vec::new();
    if let (Some(d0), Some(d7)) = (at(0), at(7)) {
        out.push(Check::new(
            "dependence decreases from tau=0 to tau=7",
            format!("{d7:.4} vs {d0:.4}"),
            "tau=7 below tau=0",
            d7 < d0,
        ));
    }
    let plateau: Vec<f64> = (8..=10).filter_map(at).collect();
    if plateau.len() == 3 {
        let lo = plateau.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = plateau.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.push(Check::new(
            "dependence levels off for tau=8..10",
            format!("spread {:.4}", hi - lo),
            format!("<= {DEPENDENCE_PLATEAU_TOLERANCE}"),
            hi - lo <= DEPENDENCE_PLATEAU_TOLERANCE,
        ));
    }
    out
}

fn coefficient_check(fit: Option<&StepFit>, reference: &ReferenceFit, tol: f64, max_sigma: Option<f64>) -> Check {
    let name = format!("decay fit, tau={}", reference.tau);
    let expected = format!(
        "a={:.3} b={:.3} c={:.3} each within {tol}{}",
        reference.a,
        reference.b,
        reference.c,
        max_sigma.map_or(String::new(), |s| format!(", sigma <= {s}"))
    );
    let Some(f) = fit.map(|f| &f.fit) else {
        return Check::new(name, "no fit", expected, false);
    };
    let ok = (f.a - reference.a).abs() <= tol
        && (f.b - reference.b).abs() <= tol
        && (f.c - reference.c).abs() <= tol
        && max_sigma.is_none_or(|s| f.residual_sigma <= s);
    Check::new(
        name,
        format!("a={:.4} b={:.4} c={:.4} sigma={:.4}", f.a, f.b, f.c, f.residual_sigma),
        expected,
        ok,
    )
}

/// Headline fits for the first, a middle and the last step.
pub fn headline_fits(fits: &[StepFit], scale: Scale) -> Vec<Check> {
    reference::HEADLINE_FITS
        .iter()
        .map(|r| {
            let fit = fits.iter().find(|f| f.tau == r.tau);
            coefficient_check(fit, r, scale.coefficient_tolerance(), Some(scale.max_residual_sigma()))
        })
        .collect()
}

/// Fits for all eight steps.
pub fn step_fits(fits: &[StepFit]) -> Vec<Check> {
    reference::STEP_FITS
        .iter()
        .map(|r| coefficient_check(fits.iter().find(|f| f.tau == r.tau), r, STEP_FIT_TOLERANCE, None))
        .collect()
}

/// Crossing points at the first, a middle and the last step.
pub fn crossings(points: &[SuccessPoint]) -> Result<Vec<Check>> {
    let targets = [
        (0, reference::CROSSING_FIRST_STEP, CROSSING_FIRST_TOLERANCE),
        (3, reference::CROSSING_LATER_STEPS, CROSSING_LATER_TOLERANCE),
        (7, reference::CROSSING_LATER_STEPS, CROSSING_LATER_TOLERANCE),
    ];
    let mut out = Vec::new();
    for (tau, want, tol) in targets {
        let curve: Vec<SuccessPoint> = points.iter().filter(|p| p.tau == tau).cloned().collect();
        if curve.is_empty() {
            continue;
        }
        let c = crossing_point(&curve)?;
        let ok = c.n_pe.is_some_and(|n| n.abs_diff(want) <= tol);
        let measured = match c.n_pe {
            Some(n) => format!("n_pe={n} (+/- {:.1})", c.half_width),
            None => "no crossing".to_owned(),
        };
        out.push(Check::new(format!("crossing point, tau={tau}"), measured, format!("{want} +/- {tol}"), ok));
    }
    Ok(out)
}

pub fn snr_thresholds(c: &SnrCorrelation) -> Vec<Check> {
    let show = |t: Option<f64>| t.map_or("none".to_owned(), |v| format!("{v:.4}"));
    let (lo, hi) = SNR_WORST_RANGE;
    vec![
        Check::new(
            "SNR threshold, mean curve",
            show(c.threshold),
            format!("{} +/- {SNR_THRESHOLD_TOLERANCE}", reference::SNR_THRESHOLD),
            c.threshold
                .is_some_and(|t| (t - reference::SNR_THRESHOLD).abs() <= SNR_THRESHOLD_TOLERANCE),
        ),
        Check::new(
            "SNR threshold, worst case",
            show(c.worst_case_threshold),
            format!("in [{lo}, {hi}]"),
            c.worst_case_threshold.is_some_and(|t| (lo..=hi).contains(&t)),
        ),
    ]
}

/// SNR never grows with the array size at the first and last step, and is
/// small past 16 PEs.
pub fn snr_decay(points: &[SnrPoint]) -> Vec<Check> {
    let mut out = Vec::new();
    for tau in [0, 7] {
        let mut curve: Vec<&SnrPoint> = points.iter().filter(|p| p.tau == tau).collect();
        if curve.is_empty() {
            continue;
        }
        curve.sort_by_key(|p| p.n_pe);
        let rise = curve
            .windows(2)
            .find(|w| w[1].snr > w[0].snr)
            .map(|w| (w[0].n_pe, w[1].n_pe, w[0].snr, w[1].snr));
        out.push(Check::new(
            format!("SNR non-increasing, tau={tau}"),
            match rise {
                Some((a, b, sa, sb)) => format!("rises from {sa:.5} at n_pe={a} to {sb:.5} at n_pe={b}"),
                None => format!("non-increasing over {} sizes", curve.len()),
            },
            "non-increasing in n_pe",
            rise.is_none(),
        ));
        let at = curve.iter().find(|p| p.n_pe == SNR_BOUND_N_PE);
        out.push(Check::new(
            format!("SNR at n_pe={SNR_BOUND_N_PE}, tau={tau}"),
            at.map_or("not simulated".to_owned(), |p| format!("{:.5}", p.snr)),
            format!("< {SNR_BOUND}"),
            at.is_some_and(|p| p.snr < SNR_BOUND),
        ));
    }
    out
}

/// Correct-hypothesis correlation stops decreasing past 30 PEs.
pub fn saturation(points: &[SuccessPoint]) -> Vec<Check> {
    let mut taus: Vec<usize> = points.iter().map(|p| p.tau).collect();
    taus.sort_unstable();
    taus.dedup();
    taus.into_iter()
        .filter_map(|tau| {
            let at = |n: usize| points.iter().find(|p| p.tau == tau && p.n_pe == n).map(|p| p.mean_correct);
            let (a, b) = (at(reference::SATURATION_N_PE)?, at(reference::MAX_N_PE)?);
            Some(Check::new(
                format!(
                    "saturation n_pe={} vs {}, tau={tau}",
                    reference::SATURATION_N_PE,
                    reference::MAX_N_PE
                ),
                format!("{a:.4} vs {b:.4}"),
                format!("differ by < {SATURATION_TOLERANCE}"),
                (a - b).abs() < SATURATION_TOLERANCE,
            ))
        })
        .collect()
}

/// Two campaign families give the same curves point by point.
pub fn distribution_equivalence(uniform: &[SuccessPoint], other: &[SuccessPoint]) -> Vec<Check> {
    let mut taus: Vec<usize> = uniform.iter().map(|p| p.tau).collect();
    taus.sort_unstable();
    taus.dedup();
    taus.into_iter()
        .map(|tau| {
            let mut worst: f64 = 0.0;
            let mut compared = 0;
            for u in uniform.iter().filter(|p| p.tau == tau) {
                if let Some(o) = other.iter().find(|p| p.tau == tau && p.n_pe == u.n_pe) {
                    worst = worst
                        .max((u.mean_correct - o.mean_correct).abs())
                        .max((u.mean_best_incorrect - o.mean_best_incorrect).abs());
                    compared += 1;
                }
            }
            Check::new(
                format!("normal vs uniform weights, tau={tau}"),
                format!("max pointwise difference {worst:.4} over {compared} sizes"),
                format!("<= {DISTRIBUTION_TOLERANCE}"),
                compared > 0 && worst <= DISTRIBUTION_TOLERANCE,
            )
        })
        .collect()
}
