//! Reproducible trace campaigns for the PE array.
//!
//! A run fixes one weight matrix (`n_pe x n_tau`) and records `n_traces`
//! traces, each driven by a fresh random input vector shared by all PEs. Sample
//! `tau` of a trace is the array power when the `tau`-th MAC result is stored.
//!
//! Randomness is split per run and per trace (see [`crate::seed`]), so a run is
//! a pure function of its seed and can be regenerated in isolation.

mod format;
mod import;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::leakage::{noise_draw, ArrayConfig};
use crate::matrix::Matrix;
use crate::seed::{self, Domain};

pub use format::{load_campaign, save_campaign, sidecar_path, CampaignMetadata, FORMAT_VERSION, MAGIC};
pub use import::{import_external_traces, ExternalMetadata, InputsSpec};

pub const DEFAULT_N_TAU: usize = 8;
pub const DEFAULT_N_TRACES: usize = 2_000;

/// Where weights come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightDistribution {
    #[default]
    Uniform,
    /// Zero-mean Gaussian, rounded to the nearest integer and clamped to the
    /// weight range.
    Normal { sigma: f64 },
    /// Whitespace or comma separated integers, read row-major (`#` starts a
    /// comment).
    File { path: PathBuf },
}

impl WeightDistribution {
    pub fn validate(&self) -> Result<()> {
        match self {
            WeightDistribution::Normal { sigma } if !(sigma.is_finite() && *sigma > 0.0) => {
                Err(Error::param("sigma", "normal weight sigma must be positive"))
            }
            _ => Ok(()),
        }
    }

    /// Loads file contents once so that many runs can share them.
    pub(crate) fn sampler(&self) -> Result<WeightSampler> {
        self.validate()?;
        Ok(match self {
            WeightDistribution::Uniform => WeightSampler::Uniform,
            WeightDistribution::Normal { sigma } => WeightSampler::Normal(*sigma),
            WeightDistribution::File { path } => WeightSampler::Fixed(read_weight_file(path)?),
        })
    }
}

pub(crate) enum WeightSampler {
    Uniform,
    Normal(f64),
    Fixed(Vec<i64>),
}

impl WeightSampler {
    fn sample<R: Rng + ?Sized>(
        &self,
        config: &ArrayConfig,
        n_pe: usize,
        n_tau: usize,
        rng: &mut R,
    ) -> Result<Matrix<i32>> {
        let (lo, hi) = config.weight_range();
        let n = n_pe * n_tau;
        let data = match self {
            WeightSampler::Uniform => (0..n).map(|_| rng.random_range(lo..=hi)).collect(),
            WeightSampler::Normal(sigma) => {
                let normal = Normal::new(0.0, *sigma).expect("sigma validated");
                (0..n)
                    .map(|_| (normal.sample(rng).round() as i64).clamp(lo as i64, hi as i64) as i32)
                    .collect()
            }
            WeightSampler::Fixed(values) => {
                if values.len() < n {
                    return Err(Error::Dimension(format!(
                        "weight file holds {} values, {n_pe} x {n_tau} = {n} required",
                        values.len()
                    )));
                }
                values[..n]
                    .iter()
                    .map(|&v| {
                        if (lo as i64..=hi as i64).contains(&v) {
                            Ok(v as i32)
                        } else {
                            Err(Error::OperandRange {
                                operand: "w",
                                value: v,
                                min: lo as i64,
                                max: hi as i64,
                            })
                        }
                    })
                    .collect::<Result<_>>()?
            }
        };
        Ok(Matrix::from_vec(n_pe, n_tau, data).expect("length is n_pe * n_tau"))
    }
}

fn read_weight_file(path: &Path) -> Result<Vec<i64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split(|c: char| c.is_whitespace() || c == ',') {
            if tok.is_empty() {
                continue;
            }
            let v = tok.parse::<i64>().map_err(|e| Error::WeightFile {
                path: path.to_owned(),
                reason: format!("line {}: `{tok}`: {e}", lineno + 1),
            })?;
            values.push(v);
        }
    }
    Ok(values)
}

/// Draws an `n_pe x n_tau` weight matrix.
pub fn sample_weights<R: Rng + ?Sized>(
    dist: &WeightDistribution,
    config: &ArrayConfig,
    n_pe: usize,
    n_tau: usize,
    rng: &mut R,
) -> Result<Matrix<i32>> {
    dist.sampler()?.sample(config, n_pe, n_tau, rng)
}

/// Fixed weights plus many traces recorded under random inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    /// `n_pe x n_tau`; `None` for imported measurements.
    pub weights: Option<Matrix<i32>>,
    /// `n_traces x n_tau`, the input applied at each step of each trace.
    pub inputs: Matrix<i32>,
    /// `n_traces x n_samples` power samples.
    pub traces: Matrix<f32>,
    pub seed: u64,
    /// Explicit tau -> sample column map; identity when empty.
    pub window: BTreeMap<usize, usize>,
}

impl SimulationRun {
    pub fn n_traces(&self) -> usize {
        self.traces.rows()
    }

    pub fn n_samples(&self) -> usize {
        self.traces.cols()
    }

    pub fn n_tau(&self) -> usize {
        self.inputs.cols()
    }

    pub fn n_pe(&self) -> Option<usize> {
        self.weights.as_ref().map(Matrix::rows)
    }

    /// Sample column holding the leakage of step `tau`.
    pub fn sample_column(&self, tau: usize) -> Result<usize> {
        let col = match self.window.get(&tau) {
            Some(&c) => c,
            None if self.window.is_empty() && self.n_samples() == self.n_tau() => tau,
            None => {
                return Err(Error::Range(format!(
                    "no sample window is mapped to tau={tau}"
                )))
            }
        };
        if col >= self.n_samples() {
            return Err(Error::Range(format!(
                "sample column {col} for tau={tau} exceeds {} samples",
                self.n_samples()
            )));
        }
        Ok(col)
    }

    pub fn column(&self, tau: usize) -> Result<Vec<f64>> {
        let c = self.sample_column(tau)?;
        Ok(self.traces.column(c).map(f64::from).collect())
    }

    /// Noise-free leakage of a single PE, `n_traces x n_tau`, recomputed from
    /// the stored weights and inputs.
    pub fn pe_leakage(&self, pe: usize, config: &ArrayConfig) -> Result<Matrix<u8>> {
        let weights = self
            .weights
            .as_ref()
            .ok_or_else(|| Error::UnusableForCpa("weights are unknown".into()))?;
        if pe >= weights.rows() {
            return Err(Error::Range(format!("PE {pe} of {}", weights.rows())));
        }
        let model = config.leakage_model();
        let w = weights.row(pe);
        let mut out = Matrix::filled(self.n_traces(), self.n_tau(), 0u8);
        for t in 0..self.n_traces() {
            let x = self.inputs.row(t);
            let row = out.row_mut(t);
            let mut acc = 0i32;
            for tau in 0..x.len() {
                let next = acc.wrapping_add(w[tau].wrapping_mul(x[tau]));
                row[tau] = model.store(tau, acc, next);
                acc = next;
            }
        }
        Ok(out)
    }
}

/// Many runs sharing one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceCampaign {
    pub config: ArrayConfig,
    pub distribution: WeightDistribution,
    pub n_tau: usize,
    pub n_traces: usize,
    pub master_seed: u64,
    pub runs: Vec<SimulationRun>,
}

impl TraceCampaign {
    pub fn n_runs(&self) -> usize {
        self.runs.len()
    }
}

/// Parameters of [`generate_campaign`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSpec {
    pub config: ArrayConfig,
    pub distribution: WeightDistribution,
    pub n_tau: usize,
    pub n_traces: usize,
    pub n_runs: usize,
    pub master_seed: u64,
}

impl CampaignSpec {
    pub fn new(config: ArrayConfig, n_runs: usize, master_seed: u64) -> Self {
        Self {
            config,
            distribution: WeightDistribution::Uniform,
            n_tau: DEFAULT_N_TAU,
            n_traces: DEFAULT_N_TRACES,
            n_runs,
            master_seed,
        }
    }

    pub fn validation_errors(&self) -> Vec<Error> {
        let mut errs = self.config.validation_errors();
        if let Err(e) = self.distribution.validate() {
            errs.push(e);
        }
        if self.n_tau == 0 {
            errs.push(Error::param("n_tau", "must be at least 1"));
        }
        if self.n_traces < 2 {
            errs.push(Error::param("n_traces", "at least 2 traces are required"));
        }
        if self.n_runs == 0 {
            errs.push(Error::param("n_runs", "must be at least 1"));
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        match self.validation_errors().into_iter().next() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Generates run `index` alone; identical to the campaign's run `index`.
    pub fn run(&self, index: usize) -> Result<SimulationRun> {
        self.validate()?;
        let sampler = self.distribution.sampler()?;
        self.run_with(&sampler, index)
    }

    pub(crate) fn run_with(&self, sampler: &WeightSampler, index: usize) -> Result<SimulationRun> {
        generate_run_with(
            &self.config,
            sampler,
            self.n_tau,
            self.n_traces,
            seed::run_seed(self.master_seed, index as u64),
        )
    }
}

/// Generates one run. Deterministic in all arguments.
pub fn generate_run(
    config: &ArrayConfig,
    dist: &WeightDistribution,
    n_tau: usize,
    n_traces: usize,
    seed: u64,
) -> Result<SimulationRun> {
    config.validate()?;
    if n_tau == 0 {
        return Err(Error::param("n_tau", "must be at least 1"));
    }
    if n_traces < 2 {
        return Err(Error::param("n_traces", "at least 2 traces are required"));
    }
    generate_run_with(config, &dist.sampler()?, n_tau, n_traces, seed)
}

fn generate_run_with(
    config: &ArrayConfig,
    sampler: &WeightSampler,
    n_tau: usize,
    n_traces: usize,
    seed: u64,
) -> Result<SimulationRun> {
    let n_pe = config.n_pe;
    let weights = sampler.sample(
        config,
        n_pe,
        n_tau,
        &mut seed::stream(seed, Domain::Weights, 0),
    )?;
    let (xlo, xhi) = config.input_range();
    let model = config.leakage_model();

    let mut inputs = Matrix::filled(n_traces, n_tau, 0i32);
    let mut traces = Matrix::filled(n_traces, n_tau, 0f32);
    inputs
        .as_mut_slice()
        .par_chunks_mut(n_tau)
        .zip(traces.as_mut_slice().par_chunks_mut(n_tau))
        .enumerate()
        .for_each_init(
            || vec![0i32; n_pe],
            |acc, (t, (x, power))| {
                let mut rng = seed::stream(seed, Domain::Trace, t as u64);
                for xi in x.iter_mut() {
                    *xi = rng.random_range(xlo..=xhi);
                }
                acc.fill(0);
                for tau in 0..n_tau {
                    let mut sum = 0u32;
                    for (pe, a) in acc.iter_mut().enumerate() {
                        let next = a.wrapping_add(weights.get(pe, tau).wrapping_mul(x[tau]));
                        sum += model.store(tau, *a, next) as u32;
                        *a = next;
                    }
                    power[tau] = (sum as f64 + noise_draw(config.noise_sigma, &mut rng)) as f32;
                }
            },
        );

    Ok(SimulationRun {
        weights: Some(weights),
        inputs,
        traces,
        seed,
        window: BTreeMap::new(),
    })
}

/// Generates `spec.n_runs` runs with per-run seeds derived from the master
/// seed. Runs are produced in parallel; the result does not depend on it.
pub fn generate_campaign(spec: &CampaignSpec) -> Result<TraceCampaign> {
    spec.validate()?;
    let sampler = spec.distribution.sampler()?;
    let runs = (0..spec.n_runs)
        .into_par_iter()
        .map(|i| spec.run_with(&sampler, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(TraceCampaign {
        config: spec.config.clone(),
        distribution: spec.distribution.clone(),
        n_tau: spec.n_tau,
        n_traces: spec.n_traces,
        master_seed: spec.master_seed,
        runs,
    })
}
