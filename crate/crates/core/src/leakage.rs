//! Processing-element accumulator model and register leakage.
//!
//! Each PE owns a 32-bit accumulator `z` that starts at zero. Step `tau`
//! computes `z_tau = z_{tau-1} + w_tau * x_tau` with wrapping two's-complement
//! arithmetic. The first store leaks the Hamming weight of the new value; every
//! later store leaks the Hamming distance between the old and new register
//! contents. The array's idealized power at step `tau` is the sum over all PEs.
//!
//! Leakage is evaluated on the raw register bit pattern, so negative
//! accumulators contribute their sign-extension bits.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hamming weight or distance of a register of at most 32 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct LeakageSample(u8);

impl LeakageSample {
    pub const MAX: u8 = 32;

    pub fn new(value: u8) -> Option<Self> {
        (value <= Self::MAX).then_some(Self(value))
    }

    #[inline]
    pub fn value(self) -> u8 {
        self.0
    }
}

impl From<LeakageSample> for f64 {
    fn from(s: LeakageSample) -> f64 {
        s.0 as f64
    }
}

/// Number of set bits in the 32-bit two's-complement pattern of `v`.
#[inline]
pub fn hamming_weight(v: i32) -> LeakageSample {
    LeakageSample(v.count_ones() as u8)
}

/// Number of bit positions in which `prev` and `next` differ.
#[inline]
pub fn hamming_distance(prev: i32, next: i32) -> LeakageSample {
    hamming_weight(prev ^ next)
}

/// How weight and input integers are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperandEncoding {
    #[default]
    Signed,
    Unsigned,
}

impl OperandEncoding {
    /// Inclusive value range of a `bits`-wide operand.
    pub fn range(self, bits: u32) -> (i32, i32) {
        match self {
            OperandEncoding::Signed => (-(1 << (bits - 1)), (1 << (bits - 1)) - 1),
            OperandEncoding::Unsigned => (0, ((1i64 << bits) - 1) as i32),
        }
    }
}

/// Geometry and numeric widths of the PE array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArrayConfig {
    pub n_pe: usize,
    pub weight_bits: u32,
    pub input_bits: u32,
    pub register_bits: u32,
    /// Standard deviation of additive Gaussian noise per array sample.
    pub noise_sigma: f64,
    pub encoding: OperandEncoding,
    /// Encoding of the inputs when it differs from `encoding`.
    pub input_encoding: Option<OperandEncoding>,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            n_pe: 1,
            weight_bits: 8,
            input_bits: 8,
            register_bits: 32,
            noise_sigma: 0.0,
            encoding: OperandEncoding::Signed,
            input_encoding: None,
        }
    }
}

impl ArrayConfig {
    pub fn with_pes(n_pe: usize) -> Self {
        Self {
            n_pe,
            ..Self::default()
        }
    }

    /// Collects every invalid field instead of stopping at the first one.
    pub fn validation_errors(&self) -> Vec<Error> {
        let mut errs = Vec::new();
        if self.n_pe == 0 {
            errs.push(Error::param("n_pe", "must be at least 1"));
        }
        if !(1..=16).contains(&self.weight_bits) {
            errs.push(Error::param("weight_bits", "must be in 1..=16"));
        }
        if !(1..=16).contains(&self.input_bits) {
            errs.push(Error::param("input_bits", "must be in 1..=16"));
        }
        if !(1..=32).contains(&self.register_bits) {
            errs.push(Error::param("register_bits", "must be in 1..=32"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            errs.push(Error::param(
                "noise_sigma",
                "must be a finite non-negative number",
            ));
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        match self.validation_errors().into_iter().next() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    pub fn weight_range(&self) -> (i32, i32) {
        self.encoding.range(self.weight_bits)
    }

    pub fn input_range(&self) -> (i32, i32) {
        self.input_encoding.unwrap_or(self.encoding).range(self.input_bits)
    }

    pub fn leakage_model(&self) -> LeakageModel {
        LeakageModel::new(self.register_bits)
    }

    pub fn check_weight(&self, w: i32) -> Result<()> {
        check_operand("w", w, self.weight_range())
    }

    pub fn check_input(&self, x: i32) -> Result<()> {
        check_operand("x", x, self.input_range())
    }
}

fn check_operand(operand: &'static str, value: i32, (min, max): (i32, i32)) -> Result<()> {
    if (min..=max).contains(&value) {
        Ok(())
    } else {
        Err(Error::OperandRange {
            operand,
            value: value as i64,
            min: min as i64,
            max: max as i64,
        })
    }
}

/// HW/HD evaluation on a register of `register_bits` bits (the low bits of the
/// 32-bit accumulator).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LeakageModel {
    mask: u32,
}

impl Default for LeakageModel {
    fn default() -> Self {
        Self::new(32)
    }
}

impl LeakageModel {
    pub fn new(register_bits: u32) -> Self {
        let mask = if register_bits >= 32 {
            u32::MAX
        } else {
            (1u32 << register_bits) - 1
        };
        Self { mask }
    }

    pub fn mask(&self) -> u32 {
        self.mask
    }

    #[inline]
    pub fn weight(&self, v: i32) -> u8 {
        ((v as u32) & self.mask).count_ones() as u8
    }

    #[inline]
    pub fn distance(&self, prev: i32, next: i32) -> u8 {
        self.weight(prev ^ next)
    }

    /// Leakage of storing `next` into a register that held `prev`; the first
    /// store (`tau == 0`) leaks HW because the register starts cleared.
    #[inline]
    pub fn store(&self, tau: usize, prev: i32, next: i32) -> u8 {
        if tau == 0 {
            self.weight(next)
        } else {
            self.distance(prev, next)
        }
    }
}

/// Accumulator register of one PE plus the number of results already stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PeState {
    pub accumulator: i32,
    pub tau: u32,
}

impl PeState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One MAC step: `acc += w * x`, returning the new state and the leakage of the
/// register write.
pub fn pe_step(
    state: PeState,
    w: i32,
    x: i32,
    config: &ArrayConfig,
) -> Result<(PeState, LeakageSample)> {
    config.check_weight(w)?;
    config.check_input(x)?;
    let next = state.accumulator.wrapping_add(w.wrapping_mul(x));
    let leak = config
        .leakage_model()
        .store(state.tau as usize, state.accumulator, next);
    Ok((
        PeState {
            accumulator: next,
            tau: state.tau + 1,
        },
        LeakageSample(leak),
    ))
}

/// Replays a whole MAC chain for one PE, returning the leakage of every step.
pub fn replay_chain(weights: &[i32], inputs: &[i32], config: &ArrayConfig) -> Result<Vec<LeakageSample>> {
    if weights.len() != inputs.len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} inputs",
            weights.len(),
            inputs.len()
        )));
    }
    let mut state = PeState::new();
    weights
        .iter()
        .zip(inputs)
        .map(|(&w, &x)| {
            let (next, leak) = pe_step(state, w, x, config)?;
            state = next;
            Ok(leak)
        })
        .collect()
}

/// Idealized array power at one step: the sum of per-PE leakage plus, when
/// `noise_sigma > 0`, one Gaussian draw. The constant power term is zero.
pub fn array_power<R: Rng + ?Sized>(leaks: &[LeakageSample], noise_sigma: f64, rng: &mut R) -> f64 {
    let signal: u32 = leaks.iter().map(|l| l.0 as u32).sum();
    signal as f64 + noise_draw(noise_sigma, rng)
}

pub(crate) fn noise_draw<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma)
            .expect("sigma validated as finite and positive")
            .sample(rng)
    } else {
        0.0
    }
}
