use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::format::{decode_run, read_body, read_metadata};
use super::SimulationRun;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Where the per-trace inputs of an imported trace set come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputsSpec {
    /// One row of `n_tau` inputs per trace.
    Inline(Vec<Vec<i32>>),
    /// `"embedded"`: use the inputs block of the trace file.
    Embedded(String),
}

/// Metadata accompanying measured traces.
///
/// ```json
/// { "n_traces": 100000, "n_tau": 8, "n_pe": 1, "run": 0,
///   "inputs": [[12, -3, ...], ...],
///   "window": { "1": 437, "7": 1180 } }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalMetadata {
    pub n_traces: usize,
    pub n_tau: usize,
    /// Width of the weights block in the trace file (zeros when unknown).
    #[serde(default = "one")]
    pub n_pe: usize,
    /// Which run of a multi-run file to import.
    #[serde(default)]
    pub run: usize,
    #[serde(default)]
    pub inputs: Option<InputsSpec>,
    #[serde(default)]
    pub window: BTreeMap<usize, usize>,
}

fn one() -> usize {
    1
}

impl ExternalMetadata {
    /// Metadata that re-imports `run` with its inputs inlined.
    pub fn for_run(run: &SimulationRun, n_pe: usize) -> Self {
        Self {
            n_traces: run.n_traces(),
            n_tau: run.n_tau(),
            n_pe,
            run: 0,
            inputs: Some(InputsSpec::Inline(run.inputs.iter_rows().map(<[i32]>::to_vec).collect())),
            window: run.window.clone(),
        }
    }
}

/// Loads measured traces for offline CPA. Weights are left unknown.
pub fn import_external_traces(trace_path: &Path, meta_path: &Path) -> Result<SimulationRun> {
    let meta: ExternalMetadata = read_metadata(meta_path)?;
    let (header, bytes) = read_body(trace_path, meta.n_pe, meta.n_tau)?;
    if header.n_traces as usize != meta.n_traces {
        return Err(Error::Dimension(format!(
            "metadata lists {} traces, trace file holds {}",
            meta.n_traces, header.n_traces
        )));
    }
    if meta.run >= header.n_runs as usize {
        return Err(Error::Range(format!(
            "run {} requested, trace file holds {}",
            meta.run, header.n_runs
        )));
    }
    let raw = decode_run(&bytes, &header, meta.n_pe, meta.n_tau, meta.run);
    let inputs = match meta.inputs {
        None => {
            return Err(Error::UnusableForCpa(
                "metadata carries no per-trace inputs".into(),
            ))
        }
        Some(InputsSpec::Embedded(ref s)) if s == "embedded" => {
            Matrix::from_vec(meta.n_traces, meta.n_tau, raw.inputs).expect("layout checked")
        }
        Some(InputsSpec::Embedded(s)) => {
            return Err(Error::param(
                "inputs",
                format!("expected an array of rows or \"embedded\", got \"{s}\""),
            ))
        }
        Some(InputsSpec::Inline(rows)) => {
            if rows.len() != meta.n_traces {
                return Err(Error::Dimension(format!(
                    "{} input rows for {} traces",
                    rows.len(),
                    meta.n_traces
                )));
            }
            Matrix::from_rows(&rows).filter(|m| m.cols() == meta.n_tau).ok_or_else(|| {
                Error::Dimension(format!("every input row must hold {} values", meta.n_tau))
            })?
        }
    };
    let n_samples = header.n_samples as usize;
    if let Some((&tau, &col)) = meta.window.iter().find(|(_, &c)| c >= n_samples) {
        return Err(Error::Range(format!(
            "window maps tau={tau} to sample {col}, traces have {n_samples} samples"
        )));
    }
    Ok(SimulationRun {
        weights: None,
        inputs,
        traces: Matrix::from_vec(meta.n_traces, n_samples, raw.samples).expect("layout checked"),
        seed: 0,
        window: meta.window,
    })
}
