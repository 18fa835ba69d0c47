//! Streaming sweeps over array sizes.
//!
//! A sweep attacks every `(n_pe, run, tau)` combination of a simulated
//! campaign family without keeping traces in memory: each run is generated,
//! attacked at every requested step and dropped. Runs for array size `n` are
//! those of the campaign returned by [`SweepSpec::campaign_spec`], so a sweep
//! and an explicit [`success_curve`](crate::cpa::success_curve) on the same
//! campaigns agree exactly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cpa::{attack_run, IncorrectAggregation, RunOutcome, SpaceStrategy, SuccessAccumulator, SuccessPoint};
use crate::error::{Error, Result};
use crate::leakage::ArrayConfig;
use crate::metrics::{run_snr_steps, SnrObservation, SnrPoint};
use crate::seed::{self, Domain};
use crate::tracegen::{CampaignSpec, WeightDistribution, DEFAULT_N_TAU, DEFAULT_N_TRACES};

/// Runs attacked concurrently before their results are folded in order.
const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// Array template; `n_pe` is replaced by each entry of `n_pes`.
    pub config: ArrayConfig,
    pub distribution: WeightDistribution,
    pub n_pes: Vec<usize>,
    pub taus: Vec<usize>,
    pub n_runs: usize,
    pub n_traces: usize,
    pub master_seed: u64,
    #[serde(skip)]
    pub strategy: SpaceStrategy,
    #[serde(skip)]
    pub aggregation: IncorrectAggregation,
    /// Also compute per-run SNR.
    pub with_snr: bool,
}

impl SweepSpec {
    pub fn new(n_pes: Vec<usize>, taus: Vec<usize>, n_runs: usize, master_seed: u64) -> Self {
        Self {
            config: ArrayConfig::default(),
            distribution: WeightDistribution::Uniform,
            n_pes,
            taus,
            n_runs,
            n_traces: DEFAULT_N_TRACES,
            master_seed,
            strategy: SpaceStrategy::default(),
            aggregation: IncorrectAggregation::default(),
            with_snr: true,
        }
    }

    pub fn n_tau(&self) -> usize {
        self.taus.iter().map(|t| t + 1).max().unwrap_or(0).max(DEFAULT_N_TAU)
    }

    /// The campaign whose runs the sweep attacks at array size `n_pe`.
    pub fn campaign_spec(&self, n_pe: usize) -> CampaignSpec {
        CampaignSpec {
            config: ArrayConfig {
                n_pe,
                ..self.config.clone()
            },
            distribution: self.distribution.clone(),
            n_tau: self.n_tau(),
            n_traces: self.n_traces,
            n_runs: self.n_runs,
            master_seed: seed::derive_seed(self.master_seed, Domain::ArraySize, n_pe as u64),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pes.is_empty() || self.taus.is_empty() {
            return Err(Error::param("sweep", "needs at least one array size and one step"));
        }
        if self.n_pes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("n_pes", "must be strictly increasing"));
        }
        for &n in &self.n_pes {
            self.campaign_spec(n).validate()?;
        }
        Ok(())
    }
}

/// Everything a sweep measures. Points are ordered by array size, then by
/// step in the order requested.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub success: Vec<SuccessPoint>,
    pub snr: Vec<SnrPoint>,
    pub observations: Vec<SnrObservation>,
}

impl SweepResult {
    /// Success curve of one step, ascending in `n_pe`.
    pub fn curve(&self, tau: usize) -> Vec<SuccessPoint> {
        self.success.iter().filter(|p| p.tau == tau).cloned().collect()
    }

    pub fn snr_curve(&self, tau: usize) -> Vec<SnrPoint> {
        self.snr.iter().filter(|p| p.tau == tau).cloned().collect()
    }
}

/// Runs the sweep. `progress` is called after each array size with the
/// number of sizes completed.
pub fn run_sweep(spec: &SweepSpec, progress: impl Fn(usize, usize)) -> Result<SweepResult> {
    spec.validate()?;
    let mut success = Vec::new();
    let mut snr = Vec::new();
    let mut observations = Vec::new();
    for (done, &n_pe) in spec.n_pes.iter().enumerate() {
        let campaign = spec.campaign_spec(n_pe);
        let sampler = campaign.distribution.sampler()?;
        let mut acc: Vec<SuccessAccumulator> = spec
            .taus
            .iter()
            .map(|&t| SuccessAccumulator::new(n_pe, t, spec.aggregation))
            .collect();
        let mut ratios: Vec<Vec<f64>> = vec![Vec::with_capacity(spec.n_runs); spec.taus.len()];
        let indices: Vec<usize> = (0..spec.n_runs).collect();
        for chunk in indices.chunks(CHUNK) {
            let per_run = chunk
                .par_iter()
                .map(|&i| {
                    let run = campaign.run_with(&sampler, i)?;
                    let snr = if spec.with_snr {
                        run_snr_steps(&run, &campaign.config, &spec.taus)?
                    } else {
                        vec![f64::NAN; spec.taus.len()]
                    };
                    spec.taus
                        .iter()
                        .zip(snr)
                        .map(|(&tau, s)| Ok((attack_run(&run, &campaign.config, tau, spec.strategy)?, s)))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            for run in per_run {
                for (k, (result, s)) in run.into_iter().enumerate() {
                    acc[k].push(&result);
                    if spec.with_snr {
                        ratios[k].push(s);
                        let o = RunOutcome::from_result(&result);
                        observations.push(SnrObservation {
                            n_pe,
                            tau: spec.taus[k],
                            snr: s,
                            rho_correct: o.rho_correct,
                            best_incorrect: o.best_incorrect,
                        });
                    }
                }
            }
        }
        success.extend(acc.into_iter().map(SuccessAccumulator::finish));
        if spec.with_snr {
            snr.extend(
                spec.taus
                    .iter()
                    .zip(&ratios)
                    .map(|(&tau, r)| SnrPoint::from_runs(n_pe, tau, r)),
            );
        }
        progress(done + 1, spec.n_pes.len());
    }
    Ok(SweepResult {
        success,
        snr,
        observations,
    })
}
