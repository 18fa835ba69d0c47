//! Published reference values the simulation is checked against.
//!
//! Decay coefficients describe the mean correct-hypothesis correlation as a
//! function of array size, `rho(n) = a * exp(-b * n) + c`, averaged over
//! 10,000 simulated runs of 2,000 traces with uniform 8-bit weights.
//! Version of this table: 1.

/// Published decay coefficients for one attacked step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceFit {
    pub tau: usize,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Largest standard deviation reported for the fit.
    pub sigma: f64,
}

const fn fit(tau: usize, a: f64, b: f64, c: f64, sigma: f64) -> ReferenceFit {
    ReferenceFit { tau, a, b, c, sigma }
}

/// Headline fits for the first, a middle and the last step.
pub const HEADLINE_FITS: [ReferenceFit; 3] = [
    fit(0, 0.369, 0.637, 0.534, 0.011762),
    fit(3, 0.439, 0.456, 0.431, 0.024154),
    fit(7, 0.482, 0.507, 0.393, 0.026230),
];

/// Fits for every step `tau = 0..=7`.
pub const STEP_FITS: [ReferenceFit; 8] = [
    fit(0, 0.369, 0.637, 0.534, 0.011762),
    fit(1, 0.392, 0.450, 0.465, 0.029043),
    fit(2, 0.441, 0.532, 0.449, 0.022669),
    fit(3, 0.439, 0.456, 0.431, 0.024154),
    fit(4, 0.468, 0.473, 0.419, 0.022269),
    fit(5, 0.494, 0.511, 0.413, 0.019673),
    fit(6, 0.457, 0.470, 0.407, 0.026922),
    fit(7, 0.482, 0.507, 0.393, 0.026230),
];

/// Upper bound on the standard deviation of every published fit.
pub const MAX_FIT_SIGMA: f64 = 0.0263;

/// SNR above which the mean correct correlation exceeds the best incorrect.
pub const SNR_THRESHOLD: f64 = 0.045;
/// Same threshold for the least favourable step.
pub const SNR_THRESHOLD_WORST: f64 = 0.1;

/// Array size where the attack on the first multiplication stops working.
pub const CROSSING_FIRST_STEP: usize = 10;
/// Array size where attacks on later steps stop working.
pub const CROSSING_LATER_STEPS: usize = 15;

/// Array size beyond which the correct correlation no longer decreases.
pub const SATURATION_N_PE: usize = 30;
/// Largest array size simulated.
pub const MAX_N_PE: usize = 32;

/// Standard deviation of the alternative normal weight distribution.
pub const NORMAL_WEIGHT_SIGMA: f64 = 20.0;

pub fn step_fit(tau: usize) -> Option<ReferenceFit> {
    STEP_FITS.iter().copied().find(|f| f.tau == tau)
}
