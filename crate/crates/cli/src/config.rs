use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use parallab::checks::Scale;
use parallab::sweep::SweepSpec;
use parallab::tracegen::{CampaignSpec, WeightDistribution, DEFAULT_N_TAU, DEFAULT_N_TRACES};
use parallab::ArrayConfig;
use serde::{Deserialize, Serialize};

/// One experiment, as read from `--config`. Missing fields take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub array: ArrayConfig,
    pub distribution: WeightDistribution,
    pub n_tau: usize,
    pub n_traces: usize,
    /// Runs per array size; the scale decides when absent.
    pub n_runs: Option<usize>,
    pub seed: u64,
    pub taus: Vec<usize>,
    pub n_pes: Vec<usize>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            array: ArrayConfig::default(),
            distribution: WeightDistribution::Uniform,
            n_tau: DEFAULT_N_TAU,
            n_traces: DEFAULT_N_TRACES,
            n_runs: None,
            seed: 1,
            taus: (0..DEFAULT_N_TAU).collect(),
            n_pes: (1..=parallab::reference::MAX_N_PE).collect(),
            out: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn n_runs(&self, scale: Scale) -> usize {
        self.n_runs.unwrap_or(scale.n_runs())
    }

    pub fn campaign(&self, scale: Scale) -> CampaignSpec {
        CampaignSpec {
            config: self.array.clone(),
            distribution: self.distribution.clone(),
            n_tau: self.n_tau,
            n_traces: self.n_traces,
            n_runs: self.n_runs(scale),
            master_seed: self.seed,
        }
    }

    pub fn sweep(&self, scale: Scale, taus: &[usize]) -> SweepSpec {
        SweepSpec {
            config: self.array.clone(),
            distribution: self.distribution.clone(),
            n_traces: self.n_traces,
            ..SweepSpec::new(self.n_pes.clone(), taus.to_vec(), self.n_runs(scale), self.seed)
        }
    }

    /// Every problem with the configuration, one message each.
    pub fn validation_errors(&self, scale: Scale) -> Vec<String> {
        let mut errs: Vec<String> = self
            .campaign(scale)
            .validation_errors()
            .iter()
            .map(ToString::to_string)
            .collect();
        if self.taus.is_empty() {
            errs.push("invalid parameter `taus`: at least one step is required".into());
        }
        if let Some(t) = self.taus.iter().find(|&&t| t >= self.n_tau) {
            errs.push(format!("invalid parameter `taus`: step {t} is not below n_tau = {}", self.n_tau));
        }
        if self.n_pes.is_empty() || self.n_pes.contains(&0) {
            errs.push("invalid parameter `n_pes`: sizes must be at least 1 and the list non-empty".into());
        }
        if self.n_pes.windows(2).any(|w| w[0] >= w[1]) {
            errs.push("invalid parameter `n_pes`: sizes must be strictly increasing".into());
        }
        errs
    }

    pub fn validate(&self, scale: Scale) -> Result<()> {
        let errs = self.validation_errors(scale);
        if errs.is_empty() {
            return Ok(());
        }
        let mut msg = String::from("invalid configuration:");
        for e in errs {
            msg.push_str("\n  - ");
            msg.push_str(&e);
        }
        anyhow::bail!(msg)
    }
}
