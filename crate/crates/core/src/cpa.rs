//! Correlation power analysis on the PE accumulator.
//!
//! A hypothesis is a full weight tuple `(w_0, ..., w_tau)` for one PE. Its
//! hypothetical leakage at step `tau` is produced by the same HW/HD register
//! model that generates the traces, and candidates are ranked by the absolute
//! Pearson coefficient against the sample column of step `tau`.

use rayon::prelude::*;

use crate::error::{CorrelationError, Error, Result};
use crate::leakage::{ArrayConfig, LeakageModel};
use crate::matrix::Matrix;
use crate::tracegen::{SimulationRun, TraceCampaign};

/// Largest hypothesis space enumerated by default (2^24 candidates).
pub const DEFAULT_HYPOTHESIS_CAP: u128 = 1 << 24;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HypothesisMode {
    /// Every weight `w_0..=w_tau` unknown.
    FullEnumeration { k_weights: usize },
    /// `w_0..w_tau` known, only `w_tau` enumerated.
    KnownPrefix { prefix: Vec<i32> },
}

/// Candidate weight tuples for one targeted step.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisSpace {
    tau: usize,
    mode: HypothesisMode,
    weight_min: i32,
    radix: usize,
    model: LeakageModel,
}

impl HypothesisSpace {
    /// Enumerates all `tau + 1` weights of the chain.
    pub fn full_enumeration(tau: usize, config: &ArrayConfig) -> Result<Self> {
        Self::full_enumeration_with_cap(tau, config, DEFAULT_HYPOTHESIS_CAP)
    }

    pub fn full_enumeration_with_cap(tau: usize, config: &ArrayConfig, cap: u128) -> Result<Self> {
        let (lo, hi) = config.weight_range();
        let radix = (hi as i64 - lo as i64 + 1) as u128;
        let k = tau + 1;
        let size = (0..k).try_fold(1u128, |acc, _| acc.checked_mul(radix)).unwrap_or(u128::MAX);
        if size > cap {
            return Err(Error::Capacity { size, cap });
        }
        Ok(Self {
            tau,
            mode: HypothesisMode::FullEnumeration { k_weights: k },
            weight_min: lo,
            radix: radix as usize,
            model: config.leakage_model(),
        })
    }

    /// Fixes the first `prefix.len()` weights and targets the next one.
    pub fn known_prefix(prefix: Vec<i32>, config: &ArrayConfig) -> Result<Self> {
        for &w in &prefix {
            config.check_weight(w)?;
        }
        let (lo, hi) = config.weight_range();
        Ok(Self {
            tau: prefix.len(),
            mode: HypothesisMode::KnownPrefix { prefix },
            weight_min: lo,
            radix: (hi as i64 - lo as i64 + 1) as usize,
            model: config.leakage_model(),
        })
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn mode(&self) -> &HypothesisMode {
        &self.mode
    }

    /// Number of unknown weights per candidate.
    pub fn k_unknown(&self) -> usize {
        match &self.mode {
            HypothesisMode::FullEnumeration { k_weights } => *k_weights,
            HypothesisMode::KnownPrefix { .. } => 1,
        }
    }

    pub fn len(&self) -> usize {
        self.radix.pow(self.k_unknown() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Full weight tuple `(w_0, ..., w_tau)` of candidate `index`.
    pub fn candidate(&self, index: usize) -> Vec<i32> {
        let mut tuple = match &self.mode {
            HypothesisMode::KnownPrefix { prefix } => prefix.clone(),
            HypothesisMode::FullEnumeration { .. } => Vec::with_capacity(self.tau + 1),
        };
        let k = self.k_unknown();
        let mut digits = vec![0i32; k];
        let mut rest = index;
        for d in digits.iter_mut().rev() {
            *d = self.weight_min + (rest % self.radix) as i32;
            rest /= self.radix;
        }
        tuple.extend(digits);
        tuple
    }

    /// Inverse of [`candidate`](Self::candidate).
    pub fn index_of(&self, tuple: &[i32]) -> Option<usize> {
        if tuple.len() != self.tau + 1 {
            return None;
        }
        let unknown = match &self.mode {
            HypothesisMode::KnownPrefix { prefix } => {
                if tuple[..self.tau] != prefix[..] {
                    return None;
                }
                &tuple[self.tau..]
            }
            HypothesisMode::FullEnumeration { .. } => tuple,
        };
        unknown.iter().try_fold(0usize, |acc, &w| {
            let d = (w as i64 - self.weight_min as i64) as usize;
            (d < self.radix).then_some(acc * self.radix + d)
        })
    }

    /// Number of candidates sharing one value of the chain prefix
    /// `w_0..w_{tau-1}`; candidates are laid out prefix-major.
    fn group_len(&self) -> usize {
        self.radix
    }

    fn n_groups(&self) -> usize {
        self.len() / self.radix
    }

    /// Accumulator values `z_{tau-1}` for every trace under prefix group `g`.
    fn prefix_accumulators(&self, group: usize, inputs: &Matrix<i32>, out: &mut [i32]) {
        let prefix = match &self.mode {
            HypothesisMode::KnownPrefix { prefix } => prefix.clone(),
            HypothesisMode::FullEnumeration { .. } => {
                let mut t = self.candidate(group * self.radix);
                t.pop();
                t
            }
        };
        for (t, z) in out.iter_mut().enumerate() {
            let x = inputs.row(t);
            *z = prefix
                .iter()
                .zip(x)
                .fold(0i32, |acc, (&w, &xi)| acc.wrapping_add(w.wrapping_mul(xi)));
        }
    }

    /// Hypothetical leakage of candidate `d` within a prefix group.
    #[inline]
    fn fill_leakage(&self, digit: usize, prev: &[i32], inputs: &Matrix<i32>, out: &mut [u8]) {
        let w = self.weight_min + digit as i32;
        let tau = self.tau;
        for ((h, &z), t) in out.iter_mut().zip(prev).zip(0..) {
            let next = z.wrapping_add(w.wrapping_mul(inputs.get(t, tau)));
            *h = self.model.store(tau, z, next);
        }
    }

    fn check_inputs(&self, inputs: &Matrix<i32>) -> Result<()> {
        if inputs.cols() <= self.tau {
            return Err(Error::Dimension(format!(
                "inputs cover {} steps, tau={} needs {}",
                inputs.cols(),
                self.tau,
                self.tau + 1
            )));
        }
        Ok(())
    }
}

/// Hypothetical leakage, `n_candidates x n_traces`.
pub fn hypothesize_leakage(space: &HypothesisSpace, inputs: &Matrix<i32>) -> Result<Matrix<u8>> {
    space.check_inputs(inputs)?;
    let n = inputs.rows();
    let mut out = Matrix::filled(space.len(), n, 0u8);
    let group_len = space.group_len();
    out.as_mut_slice()
        .par_chunks_mut(group_len * n)
        .enumerate()
        .for_each(|(g, block)| {
            let mut prev = vec![0i32; n];
            space.prefix_accumulators(g, inputs, &mut prev);
            for (d, row) in block.chunks_mut(n).enumerate() {
                space.fill_leakage(d, &prev, inputs, row);
            }
        });
    Ok(out)
}

/// Pearson correlation coefficient of two equally long vectors, accumulated in
/// a single pass with running means and co-moments.
pub fn pearson(h: &[f64], p: &[f64]) -> Result<f64, CorrelationError> {
    if h.len() != p.len() {
        return Err(CorrelationError::LengthMismatch(h.len(), p.len()));
    }
    if h.len() < 2 {
        return Err(CorrelationError::TooShort(h.len()));
    }
    let (mut mh, mut mp) = (0.0, 0.0);
    let (mut shh, mut spp, mut shp) = (0.0, 0.0, 0.0);
    for (i, (&a, &b)) in h.iter().zip(p).enumerate() {
        let n = (i + 1) as f64;
        let dh = a - mh;
        let dp = b - mp;
        mh += dh / n;
        mp += dp / n;
        shh += dh * (a - mh);
        spp += dp * (b - mp);
        shp += dh * (b - mp);
    }
    if shh <= 0.0 || spp <= 0.0 {
        return Err(CorrelationError::ZeroVariance);
    }
    Ok((shp / (shh.sqrt() * spp.sqrt())).clamp(-1.0, 1.0))
}

/// Sums `(sum h, sum h^2, sum h*p)` of the hypothetical leakage
/// `h = HD(z, z + w*x)` over all traces. `HD(0, v) = HW(v)` covers the first
/// step.
macro_rules! scan_body {
    ($prev:expr, $x:expr, $p:expr, $w:expr, $mask:expr, $zero:expr, $conv:expr) => {{
        let (mut sh, mut shh, mut shp) = (0i64, 0i64, $zero);
        for ((&z, &xi), &pi) in $prev.iter().zip($x).zip($p) {
            let next = z.wrapping_add($w.wrapping_mul(xi));
            let h = (((z ^ next) as u32) & $mask).count_ones() as i64;
            sh += h;
            shh += h * h;
            shp += $conv(h) * pi;
        }
        (sh, shh, shp)
    }};
}

fn scan_int_generic(prev: &[i32], x: &[i32], p: &[i64], w: i32, mask: u32) -> (i64, i64, i64) {
    scan_body!(prev, x, p, w, mask, 0i64, |h: i64| h)
}

fn scan_real_generic(prev: &[i32], x: &[i32], p: &[f64], w: i32, mask: u32) -> (i64, i64, f64) {
    scan_body!(prev, x, p, w, mask, 0f64, |h: i64| h as f64)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
fn scan_int_popcnt(prev: &[i32], x: &[i32], p: &[i64], w: i32, mask: u32) -> (i64, i64, i64) {
    scan_body!(prev, x, p, w, mask, 0i64, |h: i64| h)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
fn scan_real_popcnt(prev: &[i32], x: &[i32], p: &[f64], w: i32, mask: u32) -> (i64, i64, f64) {
    scan_body!(prev, x, p, w, mask, 0f64, |h: i64| h as f64)
}

fn scan_int(prev: &[i32], x: &[i32], p: &[i64], w: i32, mask: u32) -> (i64, i64, i64) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("popcnt") {
        // SAFETY: the required CPU feature was detected at runtime.
        return unsafe { scan_int_popcnt(prev, x, p, w, mask) };
    }
    scan_int_generic(prev, x, p, w, mask)
}

fn scan_real(prev: &[i32], x: &[i32], p: &[f64], w: i32, mask: u32) -> (i64, i64, f64) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("popcnt") {
        // SAFETY: the required CPU feature was detected at runtime.
        return unsafe { scan_real_popcnt(prev, x, p, w, mask) };
    }
    scan_real_generic(prev, x, p, w, mask)
}

/// A trace column prepared for correlation against many hypotheses.
pub(crate) enum PreparedColumn {
    /// All samples are integers: every sum is exact.
    Integer { p: Vec<i64>, sum: i128, n_var: i128 },
    Real { centered: Vec<f64>, sum_centered: f64, ss: f64 },
}

impl PreparedColumn {
    pub(crate) fn new(column: &[f64]) -> Self {
        let integral = column
            .iter()
            .all(|v| v.fract() == 0.0 && v.abs() < (1u64 << 40) as f64);
        if integral {
            let p: Vec<i64> = column.iter().map(|&v| v as i64).collect();
            let n = p.len() as i128;
            let sum: i128 = p.iter().map(|&v| v as i128).sum();
            let sum_sq: i128 = p.iter().map(|&v| (v as i128) * (v as i128)).sum();
            PreparedColumn::Integer {
                p,
                sum,
                n_var: n * sum_sq - sum * sum,
            }
        } else {
            let mean = column.iter().sum::<f64>() / column.len() as f64;
            let centered: Vec<f64> = column.iter().map(|v| v - mean).collect();
            let sum_centered = centered.iter().sum();
            let ss = centered.iter().map(|v| v * v).sum();
            PreparedColumn::Real {
                centered,
                sum_centered,
                ss,
            }
        }
    }

    /// Signed Pearson coefficient of candidate weight `w` given the previous
    /// accumulator `prev` and inputs `x` of every trace; `None` when
    /// undefined.
    pub(crate) fn correlate(&self, prev: &[i32], x: &[i32], w: i32, mask: u32) -> Option<f64> {
        let n = prev.len() as i128;
        let r = match self {
            PreparedColumn::Integer { p, sum, n_var } => {
                let (sh, shh, shp) = scan_int(prev, x, p, w, mask);
                let (sh, shh) = (sh as i128, shh as i128);
                let h_var = n * shh - sh * sh;
                if h_var <= 0 || *n_var <= 0 {
                    return None;
                }
                let cov = n * shp as i128 - sh * sum;
                cov as f64 / ((h_var as f64).sqrt() * (*n_var as f64).sqrt())
            }
            PreparedColumn::Real {
                centered,
                sum_centered,
                ss,
            } => {
                let (sh, shh, shp) = scan_real(prev, x, centered, w, mask);
                let (sh, shh) = (sh as i128, shh as i128);
                let h_var = n * shh - sh * sh;
                if h_var <= 0 || *ss <= 0.0 {
                    return None;
                }
                // sum (h - mean_h) * pc, keeping the rounding residue of sum pc.
                let cov = shp - (sh as f64 / n as f64) * sum_centered;
                cov / ((h_var as f64 / n as f64).sqrt() * ss.sqrt())
            }
        };
        Some(r.clamp(-1.0, 1.0))
    }
}

/// Ranking of all candidates of one attack.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationResult {
    pub tau: usize,
    /// `|rho|` per candidate; undefined correlations are stored as 0.
    pub coefficients: Vec<f64>,
    /// Candidates whose correlation is undefined (constant hypothesis column).
    pub undefined: Vec<usize>,
    /// Candidates equal to the true tuple of some PE, ascending.
    pub correct: Vec<usize>,
    /// Candidate matching the targeted PE (PE 0), when present.
    pub target: Option<usize>,
    /// At `tau = 0`, candidates in the doubling class of a correct weight.
    pub aliases: Vec<usize>,
    /// All candidates sharing the maximal defined coefficient.
    pub argmax: Vec<usize>,
    pub best_incorrect: Option<(usize, f64)>,
    pub n_traces_used: usize,
}

impl CorrelationResult {
    pub fn max(&self) -> f64 {
        self.argmax.first().map_or(0.0, |&i| self.coefficients[i])
    }

    pub fn target_rho(&self) -> Option<f64> {
        self.target.map(|i| self.coefficients[i])
    }

    pub fn best_correct(&self) -> Option<(usize, f64)> {
        self.correct
            .iter()
            .map(|&i| (i, self.coefficients[i]))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn is_undefined(&self, index: usize) -> bool {
        self.undefined.binary_search(&index).is_ok()
    }

    pub fn is_alias(&self, index: usize) -> bool {
        self.aliases.binary_search(&index).is_ok()
    }

    pub fn is_correct(&self, index: usize) -> bool {
        self.correct.binary_search(&index).is_ok()
    }
}

/// Weights `c != w` with `c = w * 2^k` or `w = c * 2^k`, `k >= 1`, inside
/// `[lo, hi]`. At `tau = 0` these produce the same register weight as `w`
/// whenever the product is non-negative.
pub fn doubling_class(w: i32, (lo, hi): (i32, i32)) -> Vec<i32> {
    if w == 0 {
        return Vec::new();
    }
    let odd = w >> w.trailing_zeros();
    let mut out = Vec::new();
    let mut c = odd as i64;
    while (lo as i64..=hi as i64).contains(&c) || c.abs() <= w.unsigned_abs() as i64 {
        if c != w as i64 && (lo as i64..=hi as i64).contains(&c) {
            out.push(c as i32);
        }
        c *= 2;
    }
    out
}

/// Mounts a CPA on `run` at `sample_column` against every candidate of
/// `space`. When the run carries true weights, candidates matching any PE's
/// true tuple are flagged.
pub fn attack(run: &SimulationRun, space: &HypothesisSpace, sample_column: usize) -> Result<CorrelationResult> {
    space.check_inputs(&run.inputs)?;
    if sample_column >= run.n_samples() {
        return Err(Error::Range(format!(
            "sample column {sample_column} of {}",
            run.n_samples()
        )));
    }
    let column: Vec<f64> = run.traces.column(sample_column).map(f64::from).collect();
    attack_column(&run.inputs, &column, run.weights.as_ref(), space)
}

pub(crate) fn attack_column(
    inputs: &Matrix<i32>,
    column: &[f64],
    weights: Option<&Matrix<i32>>,
    space: &HypothesisSpace,
) -> Result<CorrelationResult> {
    let n = inputs.rows();
    if column.len() != n {
        return Err(Error::Dimension(format!("{} samples for {n} input rows", column.len())));
    }
    if n < 2 {
        return Err(CorrelationError::TooShort(n).into());
    }
    let prepared = PreparedColumn::new(column);
    let x: Vec<i32> = inputs.column(space.tau).collect();
    let mask = space.model.mask();
    let group_len = space.group_len();
    let signed: Vec<Option<f64>> = (0..space.n_groups())
        .into_par_iter()
        .flat_map_iter(|g| {
            let mut prev = vec![0i32; n];
            space.prefix_accumulators(g, inputs, &mut prev);
            (0..group_len)
                .map(|d| prepared.correlate(&prev, &x, space.weight_min + d as i32, mask))
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(rank(space, signed, weights, n))
}

fn rank(space: &HypothesisSpace, signed: Vec<Option<f64>>, weights: Option<&Matrix<i32>>, n_traces: usize) -> CorrelationResult {
    let tau = space.tau();
    let undefined: Vec<usize> = signed
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.is_none().then_some(i))
        .collect();
    let coefficients: Vec<f64> = signed.iter().map(|r| r.map_or(0.0, f64::abs)).collect();

    let mut correct = Vec::new();
    let mut target = None;
    let mut aliases = Vec::new();
    if let Some(w) = weights {
        for pe in 0..w.rows() {
            if w.cols() <= tau {
                break;
            }
            let tuple = &w.row(pe)[..=tau];
            if let Some(i) = space.index_of(tuple) {
                correct.push(i);
                if pe == 0 {
                    target = Some(i);
                }
            }
            if tau == 0 {
                let range = (space.weight_min, space.weight_min + space.radix as i32 - 1);
                aliases.extend(doubling_class(tuple[0], range).into_iter().filter_map(|c| space.index_of(&[c])));
            }
        }
    }
    correct.sort_unstable();
    correct.dedup();
    aliases.sort_unstable();
    aliases.dedup();
    aliases.retain(|a| correct.binary_search(a).is_err());

    let defined = || {
        coefficients
            .iter()
            .enumerate()
            .filter(|(i, _)| signed[*i].is_some())
    };
    let max = defined().map(|(_, &r)| r).fold(f64::NEG_INFINITY, f64::max);
    let argmax = defined().filter(|(_, &r)| r == max).map(|(i, _)| i).collect();
    let best_incorrect = defined()
        .filter(|(i, _)| correct.binary_search(i).is_err() && aliases.binary_search(i).is_err())
        .map(|(i, &r)| (i, r))
        .fold(None, |best: Option<(usize, f64)>, cur| match best {
            Some(b) if b.1 >= cur.1 => Some(b),
            _ => Some(cur),
        });

    CorrelationResult {
        tau,
        coefficients,
        undefined,
        correct,
        target,
        aliases,
        argmax,
        best_incorrect,
        n_traces_used: n_traces,
    }
}

/// How the space for each targeted step is built from a run's true weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpaceStrategy {
    /// `tau = 0`: all weights; `tau > 0`: PE 0's first `tau` weights known.
    #[default]
    KnownPrefix,
    /// Every weight up to `tau` unknown (capped).
    FullEnumeration,
}

impl SpaceStrategy {
    pub fn build(self, weights: &Matrix<i32>, tau: usize, config: &ArrayConfig) -> Result<HypothesisSpace> {
        match self {
            SpaceStrategy::FullEnumeration => HypothesisSpace::full_enumeration(tau, config),
            SpaceStrategy::KnownPrefix if tau == 0 => HypothesisSpace::full_enumeration(0, config),
            SpaceStrategy::KnownPrefix => HypothesisSpace::known_prefix(weights.row(0)[..tau].to_vec(), config),
        }
    }
}

/// How best-incorrect coefficients are aggregated across runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IncorrectAggregation {
    /// Maximum over incorrect candidates in each run, then the mean over runs.
    #[default]
    MaxThenMean,
    /// Mean of each candidate's coefficient over the runs where it is
    /// incorrect, then the maximum over candidates.
    MeanThenMax,
}

/// Outcome of attacking one run at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOutcome {
    pub rho_correct: f64,
    pub best_incorrect: f64,
}

/// Attacks one simulated run with the strategy's space; also returns the full
/// result for callers that aggregate per candidate.
pub fn attack_run(
    run: &SimulationRun,
    config: &ArrayConfig,
    tau: usize,
    strategy: SpaceStrategy,
) -> Result<CorrelationResult> {
    let weights = run
        .weights
        .as_ref()
        .ok_or_else(|| Error::UnusableForCpa("success curves need known weights".into()))?;
    let space = strategy.build(weights, tau, config)?;
    attack(run, &space, run.sample_column(tau)?)
}

impl RunOutcome {
    pub fn from_result(r: &CorrelationResult) -> Self {
        Self {
            rho_correct: r.target_rho().unwrap_or(0.0),
            best_incorrect: r.best_incorrect.map_or(0.0, |b| b.1),
        }
    }
}

/// Mean correct and best-incorrect correlation for one `(n_pe, tau)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuccessPoint {
    pub n_pe: usize,
    pub tau: usize,
    pub mean_correct: f64,
    pub mean_best_incorrect: f64,
    /// Standard error of `mean_correct` over runs.
    pub se_correct: f64,
    pub se_best_incorrect: f64,
    /// Standard error of the per-run difference `correct - best_incorrect`.
    pub se_difference: f64,
    /// Per-run `|rho(H_cw)|`.
    pub correct_samples: Vec<f64>,
    pub incorrect_samples: Vec<f64>,
    /// Runs left out because the correct hypothesis was constant (a zero
    /// weight) or absent.
    pub n_skipped: usize,
}

pub(crate) fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Accumulates per-run attack results into a [`SuccessPoint`].
#[derive(Debug, Clone)]
pub struct SuccessAccumulator {
    n_pe: usize,
    tau: usize,
    aggregation: IncorrectAggregation,
    correct: Vec<f64>,
    incorrect: Vec<f64>,
    candidate_sum: Vec<f64>,
    candidate_count: Vec<u32>,
    skipped: usize,
}

impl SuccessAccumulator {
    pub fn new(n_pe: usize, tau: usize, aggregation: IncorrectAggregation) -> Self {
        Self {
            n_pe,
            tau,
            aggregation,
            correct: Vec::new(),
            incorrect: Vec::new(),
            candidate_sum: Vec::new(),
            candidate_count: Vec::new(),
            skipped: 0,
        }
    }

    pub fn push(&mut self, result: &CorrelationResult) {
        if result.target.is_none_or(|t| result.is_undefined(t)) {
            self.skipped += 1;
            return;
        }
        let o = RunOutcome::from_result(result);
        self.correct.push(o.rho_correct);
        self.incorrect.push(o.best_incorrect);
        if self.aggregation == IncorrectAggregation::MeanThenMax {
            let n = result.coefficients.len();
            if self.candidate_sum.len() < n {
                self.candidate_sum.resize(n, 0.0);
                self.candidate_count.resize(n, 0);
            }
            for (i, &r) in result.coefficients.iter().enumerate() {
                if !result.is_correct(i) && !result.is_alias(i) && !result.is_undefined(i) {
                    self.candidate_sum[i] += r;
                    self.candidate_count[i] += 1;
                }
            }
        }
    }

    pub fn finish(self) -> SuccessPoint {
        let (mean_correct, se_correct) = mean_se(&self.correct);
        let (mut mean_best_incorrect, se_best_incorrect) = mean_se(&self.incorrect);
        if self.aggregation == IncorrectAggregation::MeanThenMax {
            mean_best_incorrect = self
                .candidate_sum
                .iter()
                .zip(&self.candidate_count)
                .filter(|(_, &c)| c > 0)
                .map(|(s, &c)| s / c as f64)
                .fold(0.0, f64::max);
        }
        let diff: Vec<f64> = self.correct.iter().zip(&self.incorrect).map(|(a, b)| a - b).collect();
        let (_, se_difference) = mean_se(&diff);
        SuccessPoint {
            n_pe: self.n_pe,
            tau: self.tau,
            mean_correct,
            mean_best_incorrect,
            se_correct,
            se_best_incorrect,
            se_difference,
            correct_samples: self.correct,
            incorrect_samples: self.incorrect,
            n_skipped: self.skipped,
        }
    }
}

/// Attacks every run of every campaign at every requested step and averages
/// `|rho(H_cw)|` and the best incorrect coefficient per `(n_pe, tau)`.
/// Output is ordered by campaign, then by `taus`.
pub fn success_curve(
    campaigns: &[TraceCampaign],
    taus: &[usize],
    strategy: SpaceStrategy,
    aggregation: IncorrectAggregation,
) -> Result<Vec<SuccessPoint>> {
    let mut out = Vec::new();
    for c in campaigns {
        for &tau in taus {
            if tau >= c.n_tau {
                return Err(Error::Range(format!("tau={tau} but campaign has {} steps", c.n_tau)));
            }
            let results = c
                .runs
                .par_iter()
                .map(|run| attack_run(run, &c.config, tau, strategy))
                .collect::<Result<Vec<_>>>()?;
            let mut acc = SuccessAccumulator::new(c.config.n_pe, tau, aggregation);
            for r in &results {
                acc.push(r);
            }
            out.push(acc.finish());
        }
    }
    Ok(out)
}

/// Correct-hypothesis correlation recomputed on growing trace prefixes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgressionPoint {
    pub n_traces: usize,
    /// `None` when the correlation is undefined on this prefix.
    pub rho_correct: Option<f64>,
    pub best_incorrect: Option<f64>,
}

pub fn trace_count_progression(
    run: &SimulationRun,
    space: &HypothesisSpace,
    sample_column: usize,
    checkpoints: &[usize],
) -> Result<Vec<ProgressionPoint>> {
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param("checkpoints", "must be strictly increasing"));
    }
    if let Some(&last) = checkpoints.last() {
        if last > run.n_traces() {
            return Err(Error::Range(format!(
                "checkpoint {last} exceeds the {} available traces",
                run.n_traces()
            )));
        }
    }
    if sample_column >= run.n_samples() {
        return Err(Error::Range(format!("sample column {sample_column} of {}", run.n_samples())));
    }
    let full: Vec<f64> = run.traces.column(sample_column).map(f64::from).collect();
    checkpoints
        .iter()
        .map(|&n| {
            let inputs = run.inputs.head(n);
            let r = attack_column(&inputs, &full[..n], run.weights.as_ref(), space)?;
            Ok(ProgressionPoint {
                n_traces: n,
                rho_correct: r.target.filter(|&i| !r.is_undefined(i)).map(|i| r.coefficients[i]),
                best_incorrect: r.best_incorrect.map(|b| b.1),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leakage::{replay_chain, OperandEncoding};
    use crate::tracegen::{generate_run, WeightDistribution};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Textbook two-pass Pearson.
    fn two_pass(h: &[f64], p: &[f64]) -> f64 {
        let n = h.len() as f64;
        let mh = h.iter().sum::<f64>() / n;
        let mp = p.iter().sum::<f64>() / n;
        let cov: f64 = h.iter().zip(p).map(|(a, b)| (a - mh) * (b - mp)).sum();
        let vh: f64 = h.iter().map(|a| (a - mh).powi(2)).sum();
        let vp: f64 = p.iter().map(|b| (b - mp).powi(2)).sum();
        cov / (vh * vp).sqrt()
    }

    fn run(n_pe: usize, n_traces: usize, seed: u64) -> (ArrayConfig, SimulationRun) {
        let cfg = ArrayConfig::with_pes(n_pe);
        let r = generate_run(&cfg, &WeightDistribution::Uniform, 8, n_traces, seed).unwrap();
        (cfg, r)
    }

    #[test]
    fn pearson_examples() {
        let h: Vec<f64> = (0..20).map(|i| ((i * 7) % 11) as f64).collect();
        assert!((pearson(&h, &h).unwrap() - 1.0).abs() < 1e-15);
        let p: Vec<f64> = h.iter().map(|v| -2.0 * v + 7.0).collect();
        assert!((pearson(&h, &p).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn pearson_matches_two_pass_on_random_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let h: Vec<f64> = (0..64).map(|_| rng.random_range(-5.0..5.0)).collect();
        let p: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..100.0)).collect();
        assert!((pearson(&h, &p).unwrap() - two_pass(&h, &p)).abs() < 1e-12);
    }

    #[test]
    fn pearson_errors() {
        assert_eq!(pearson(&[1.0, 2.0], &[1.0]), Err(CorrelationError::LengthMismatch(2, 1)));
        assert_eq!(pearson(&[1.0], &[1.0]), Err(CorrelationError::TooShort(1)));
        assert_eq!(pearson(&[3.0, 3.0, 3.0], &[1.0, 2.0, 3.0]), Err(CorrelationError::ZeroVariance));
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[0.0; 3]), Err(CorrelationError::ZeroVariance));
    }

    #[test]
    fn candidate_indexing_round_trips() {
        let cfg = ArrayConfig::default();
        let full = HypothesisSpace::full_enumeration(1, &cfg).unwrap();
        assert_eq!(full.len(), 1 << 16);
        assert_eq!(full.candidate(0), vec![-128, -128]);
        assert_eq!(full.candidate(257), vec![-127, -127]);
        for i in [0, 1, 255, 256, 40_000, 65_535] {
            assert_eq!(full.index_of(&full.candidate(i)), Some(i));
        }
        let kp = HypothesisSpace::known_prefix(vec![5, -3], &cfg).unwrap();
        assert_eq!(kp.tau(), 2);
        assert_eq!(kp.len(), 256);
        assert_eq!(kp.candidate(130), vec![5, -3, 2]);
        assert_eq!(kp.index_of(&[5, -3, 2]), Some(130));
        assert_eq!(kp.index_of(&[4, -3, 2]), None);
    }

    #[test]
    fn space_cap_is_enforced() {
        let cfg = ArrayConfig::default();
        assert!(HypothesisSpace::full_enumeration(2, &cfg).is_ok());
        match HypothesisSpace::full_enumeration(3, &cfg) {
            Err(Error::Capacity { size, cap }) => {
                assert_eq!(size, 1 << 32);
                assert_eq!(cap, DEFAULT_HYPOTHESIS_CAP);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(HypothesisSpace::full_enumeration(7, &cfg).is_err());
    }

    #[test]
    fn hypothesis_at_tau0_mirrors_pe_step() {
        let cfg = ArrayConfig::default();
        let space = HypothesisSpace::full_enumeration(0, &cfg).unwrap();
        let inputs = Matrix::from_rows(&[[3], [-5], [0], [127]]).unwrap();
        let h = hypothesize_leakage(&space, &inputs).unwrap();
        let two = space.index_of(&[2]).unwrap();
        assert_eq!(h.get(two, 0), 2);
        let zero = space.index_of(&[0]).unwrap();
        assert!(h.row(zero).iter().all(|&v| v == 0));
    }

    #[test]
    fn hypothesis_at_tau1_matches_replay() {
        let cfg = ArrayConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<[i32; 2]> = (0..50)
            .map(|_| [rng.random_range(-128..=127), rng.random_range(-128..=127)])
            .collect();
        let inputs = Matrix::from_rows(&rows).unwrap();
        let w0 = -77;
        let space = HypothesisSpace::known_prefix(vec![w0], &cfg).unwrap();
        let h = hypothesize_leakage(&space, &inputs).unwrap();
        for idx in [0, 17, 128, 255] {
            let w1 = space.candidate(idx)[1];
            for (t, x) in rows.iter().enumerate() {
                let replay = replay_chain(&[w0, w1], x, &cfg).unwrap();
                assert_eq!(h.get(idx, t), replay[1].value());
            }
        }
    }

    #[test]
    fn hypothesize_rejects_short_inputs() {
        let cfg = ArrayConfig::default();
        let space = HypothesisSpace::known_prefix(vec![1, 2], &cfg).unwrap();
        let inputs = Matrix::from_rows(&[[1, 2], [3, 4]]).unwrap();
        assert!(matches!(hypothesize_leakage(&space, &inputs), Err(Error::Dimension(_))));
    }

    #[test]
    fn single_pe_noiseless_correct_hypothesis_is_perfect() {
        let (cfg, r) = run(1, 500, 3);
        let w = r.weights.clone().unwrap();
        let space = HypothesisSpace::full_enumeration(0, &cfg).unwrap();
        let res = attack(&r, &space, 0).unwrap();
        assert_eq!(res.target, space.index_of(&[w.get(0, 0)]));
        assert!((res.target_rho().unwrap() - 1.0).abs() < 1e-12);
        assert!(res.argmax.contains(&res.target.unwrap()));
    }

    #[test]
    fn attack_coefficients_match_pearson_oracle() {
        let (cfg, r) = run(4, 300, 12);
        let w = r.weights.clone().unwrap();
        let space = HypothesisSpace::known_prefix(w.row(0)[..3].to_vec(), &cfg).unwrap();
        let res = attack(&r, &space, 3).unwrap();
        let h = hypothesize_leakage(&space, &r.inputs).unwrap();
        let col = r.column(3).unwrap();
        for i in 0..space.len() {
            let hv: Vec<f64> = h.row(i).iter().map(|&v| v as f64).collect();
            match pearson(&hv, &col) {
                Ok(rho) => assert!((res.coefficients[i] - rho.abs()).abs() < 1e-12),
                Err(_) => assert!(res.is_undefined(i)),
            }
        }
    }

    #[test]
    fn real_valued_column_path_matches_pearson() {
        let cfg = ArrayConfig {
            noise_sigma: 1.5,
            ..ArrayConfig::with_pes(2)
        };
        let r = generate_run(&cfg, &WeightDistribution::Uniform, 4, 200, 1).unwrap();
        let space = HypothesisSpace::full_enumeration(0, &cfg).unwrap();
        let res = attack(&r, &space, 0).unwrap();
        let h = hypothesize_leakage(&space, &r.inputs).unwrap();
        let col = r.column(0).unwrap();
        for i in (0..256).step_by(7) {
            let hv: Vec<f64> = h.row(i).iter().map(|&v| v as f64).collect();
            if let Ok(rho) = pearson(&hv, &col) {
                assert!((res.coefficients[i] - rho.abs()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn full_two_weight_enumeration_recovers_both_weights() {
        let (cfg, r) = run(1, 2000, 77);
        let w = r.weights.clone().unwrap();
        let space = HypothesisSpace::full_enumeration(1, &cfg).unwrap();
        let res = attack(&r, &space, 1).unwrap();
        let truth = space.index_of(&w.row(0)[..2]).unwrap();
        assert_eq!(res.argmax, vec![truth]);
        assert_eq!(res.correct, vec![truth]);
    }

    #[test]
    fn doubling_aliases_are_indistinguishable_for_unsigned_operands() {
        let cfg = ArrayConfig {
            encoding: OperandEncoding::Unsigned,
            ..ArrayConfig::default()
        };
        let r = generate_run(&cfg, &WeightDistribution::Uniform, 1, 300, 5).unwrap();
        let space = HypothesisSpace::full_enumeration(0, &cfg).unwrap();
        let res = attack(&r, &space, 0).unwrap();
        for w in [3, 5, 21, 60] {
            let a = res.coefficients[space.index_of(&[w]).unwrap()];
            let b = res.coefficients[space.index_of(&[2 * w]).unwrap()];
            assert_eq!(a, b);
        }
    }

    #[test]
    fn doubling_aliases_have_identical_leakage_for_nonnegative_products() {
        let cfg = ArrayConfig::default();
        let space = HypothesisSpace::full_enumeration(0, &cfg).unwrap();
        let rows: Vec<[i32; 1]> = (0..=127).map(|x| [x]).collect();
        let inputs = Matrix::from_rows(&rows).unwrap();
        let h = hypothesize_leakage(&space, &inputs).unwrap();
        for w in [1, 3, 7, 30, 63] {
            assert_eq!(h.row(space.index_of(&[w]).unwrap()), h.row(space.index_of(&[2 * w]).unwrap()));
        }
    }

    #[test]
    fn doubling_class_examples() {
        let r = (-128, 127);
        assert_eq!(doubling_class(3, r), vec![6, 12, 24, 48, 96]);
        assert_eq!(doubling_class(12, r), vec![3, 6, 24, 48, 96]);
        assert_eq!(doubling_class(-5, r), vec![-10, -20, -40, -80]);
        assert_eq!(doubling_class(-128, r), vec![-1, -2, -4, -8, -16, -32, -64]);
        assert!(doubling_class(0, r).is_empty());
        assert_eq!(doubling_class(1, (0, 255)), vec![2, 4, 8, 16, 32, 64, 128]);
    }

    #[test]
    fn tau0_ties_report_the_alias_set() {
        let cfg = ArrayConfig {
            encoding: OperandEncoding::Unsigned,
            ..ArrayConfig::default()
        };
        for seed in 0..20 {
            let r = generate_run(&cfg, &WeightDistribution::Uniform, 1, 400, seed).unwrap();
            let w0 = r.weights.as_ref().unwrap().get(0, 0);
            if w0 == 0 {
                continue;
            }
            let space = HypothesisSpace::full_enumeration(0, &cfg).unwrap();
            let res = attack(&r, &space, 0).unwrap();
            let mut class: Vec<usize> = doubling_class(w0, (0, 255))
                .into_iter()
                .chain([w0])
                .map(|c| space.index_of(&[c]).unwrap())
                .collect();
            class.sort_unstable();
            assert_eq!(res.argmax, class, "seed {seed} w0 {w0}");
            if let Some((i, _)) = res.best_incorrect {
                assert!(!class.contains(&i));
            }
        }
    }

    #[test]
    fn every_pe_tuple_is_flagged() {
        let (cfg, r) = run(5, 200, 31);
        let space = HypothesisSpace::full_enumeration(0, &cfg).unwrap();
        let res = attack(&r, &space, 0).unwrap();
        let mut expected: Vec<usize> = r
            .weights
            .as_ref()
            .unwrap()
            .column(0)
            .map(|w| space.index_of(&[w]).unwrap())
            .collect();
        expected.sort_unstable();
        expected.dedup();
        assert_eq!(res.correct, expected);
        let best = res.best_incorrect.unwrap();
        assert!(best.1 <= res.max());
        assert!(!res.is_correct(best.0) && !res.is_alias(best.0));
    }

    #[test]
    fn zero_weight_candidate_is_undefined_and_ranks_last() {
        let (cfg, r) = run(2, 100, 2);
        let space = HypothesisSpace::full_enumeration(0, &cfg).unwrap();
        let res = attack(&r, &space, 0).unwrap();
        let zero = space.index_of(&[0]).unwrap();
        assert!(res.is_undefined(zero));
        assert_eq!(res.coefficients[zero], 0.0);
        assert!(!res.argmax.contains(&zero));
    }

    #[test]
    fn progression_full_length_equals_attack() {
        let (cfg, r) = run(2, 600, 4);
        let w = r.weights.clone().unwrap();
        let space = HypothesisSpace::known_prefix(vec![w.get(0, 0)], &cfg).unwrap();
        let res = attack(&r, &space, 1).unwrap();
        let prog = trace_count_progression(&r, &space, 1, &[100, 300, 600]).unwrap();
        let last = prog.last().unwrap();
        assert_eq!(last.rho_correct, res.target_rho());
        assert_eq!(last.best_incorrect, res.best_incorrect.map(|b| b.1));
    }

    #[test]
    fn progression_converges_without_noise() {
        let (cfg, r) = run(1, 2000, 8);
        let w = r.weights.clone().unwrap();
        let space = HypothesisSpace::known_prefix(vec![w.get(0, 0)], &cfg).unwrap();
        let prog = trace_count_progression(&r, &space, 1, &[500, 1000, 2000]).unwrap();
        for p in prog {
            assert!(p.rho_correct.unwrap() >= 0.99, "{p:?}");
        }
    }

    #[test]
    fn progression_flags_degenerate_prefix() {
        let cfg = ArrayConfig::default();
        let inputs = Matrix::from_rows(&[[0], [0], [5], [9]]).unwrap();
        let traces = Matrix::from_rows(&[[0.0f32], [0.0], [2.0], [2.0]]).unwrap();
        let r = SimulationRun {
            weights: Some(Matrix::from_rows(&[[1]]).unwrap()),
            inputs,
            traces,
            seed: 0,
            window: Default::default(),
        };
        let space = HypothesisSpace::full_enumeration(0, &cfg).unwrap();
        let prog = trace_count_progression(&r, &space, 0, &[2, 4]).unwrap();
        assert_eq!(prog[0].rho_correct, None);
        assert!(prog[1].rho_correct.is_some());
        assert!(matches!(
            trace_count_progression(&r, &space, 0, &[2, 5]),
            Err(Error::Range(_))
        ));
        assert!(trace_count_progression(&r, &space, 0, &[3, 2]).is_err());
    }

    #[test]
    fn success_curve_single_pe_is_one() {
        let spec = crate::tracegen::CampaignSpec {
            n_traces: 300,
            ..crate::tracegen::CampaignSpec::new(ArrayConfig::with_pes(1), 6, 5)
        };
        let c = crate::tracegen::generate_campaign(&spec).unwrap();
        let pts = success_curve(&[c], &[1, 4], SpaceStrategy::KnownPrefix, IncorrectAggregation::MaxThenMean).unwrap();
        for p in pts {
            assert!((p.mean_correct - 1.0).abs() < 1e-9, "{p:?}");
            assert!(p.mean_best_incorrect < 1.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pearson_affine_invariance(
            h in proptest::collection::vec(-100.0f64..100.0, 3..50),
            noise in proptest::collection::vec(-100.0f64..100.0, 50),
            alpha in prop_oneof![-10.0f64..-0.1, 0.1f64..10.0],
            beta in -50.0f64..50.0,
        ) {
            let p: Vec<f64> = noise[..h.len()].to_vec();
            if let Ok(base) = pearson(&h, &p) {
                let q: Vec<f64> = p.iter().map(|v| alpha * v + beta).collect();
                let r = pearson(&h, &q).unwrap();
                prop_assert!((r - alpha.signum() * base).abs() < 1e-12);
            }
        }

        #[test]
        fn ranking_survives_positive_rescaling(seed in 0u64..1000, scale in 0.01f64..100.0) {
            let (cfg, mut r) = run(3, 200, seed);
            let space = HypothesisSpace::known_prefix(r.weights.as_ref().unwrap().row(0)[..2].to_vec(), &cfg).unwrap();
            let base = attack(&r, &space, 2).unwrap();
            for v in r.traces.as_mut_slice() {
                *v = (*v as f64 * scale) as f32;
            }
            let scaled = attack(&r, &space, 2).unwrap();
            let order = |res: &CorrelationResult| {
                let mut idx: Vec<usize> = (0..res.coefficients.len()).collect();
                idx.sort_by(|&a, &b| res.coefficients[b].total_cmp(&res.coefficients[a]).then(a.cmp(&b)));
                idx.truncate(5);
                idx
            };
            prop_assert_eq!(order(&base)[0], order(&scaled)[0]);
            for (a, b) in base.coefficients.iter().zip(&scaled.coefficients) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
