//! Binary trace file plus JSON sidecar.
//!
//! Layout (little-endian):
//!
//! ```text
//! offset size field
//!      0    4 magic "CPAT"
//!      4    2 version (u16) = 1
//!      6    2 flags (u16), bit 0 set when weights are unknown
//!      8    4 n_runs (u32)
//!     12    4 n_traces (u32)
//!     16    4 n_samples (u32)
//!     20    1 sample dtype code (u8), 0 = f32
//!     21    7 reserved, zero
//!     28      per run: weights  n_pe * n_tau      x i32
//!                      inputs   n_traces * n_tau  x i32
//!                      samples  n_traces * n_samples x f32
//! ```
//!
//! `n_pe` and `n_tau` live in the sidecar (`<file>.json`), together with the
//! array configuration, the weight distribution and the seeds.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{SimulationRun, TraceCampaign, WeightDistribution};
use crate::error::{Error, FormatError, Result};
use crate::leakage::ArrayConfig;
use crate::matrix::Matrix;

pub const MAGIC: [u8; 4] = *b"CPAT";
pub const FORMAT_VERSION: u16 = 1;
pub(crate) const HEADER_LEN: u64 = 28;
pub(crate) const FLAG_WEIGHTS_UNKNOWN: u16 = 1;
const DTYPE_F32: u8 = 0;

/// Sidecar contents written next to every trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignMetadata {
    pub format_version: u16,
    pub config: ArrayConfig,
    pub distribution: WeightDistribution,
    pub n_tau: usize,
    pub n_traces: usize,
    pub n_runs: usize,
    pub master_seed: u64,
    pub run_seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub window: BTreeMap<usize, usize>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Header {
    pub flags: u16,
    pub n_runs: u32,
    pub n_traces: u32,
    pub n_samples: u32,
}

impl Header {
    fn encode(&self) -> [u8; HEADER_LEN as usize] {
        let mut b = [0u8; HEADER_LEN as usize];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..6].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
        b[6..8].copy_from_slice(&self.flags.to_le_bytes());
        b[8..12].copy_from_slice(&self.n_runs.to_le_bytes());
        b[12..16].copy_from_slice(&self.n_traces.to_le_bytes());
        b[16..20].copy_from_slice(&self.n_samples.to_le_bytes());
        b[20] = DTYPE_F32;
        b
    }

    pub(crate) fn decode(b: &[u8]) -> std::result::Result<Self, FormatError> {
        if b.len() < HEADER_LEN as usize {
            return Err(FormatError::Truncated {
                expected: HEADER_LEN,
                actual: b.len() as u64,
            });
        }
        let magic: [u8; 4] = b[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(FormatError::BadMagic(magic));
        }
        let u16_at = |o: usize| u16::from_le_bytes(b[o..o + 2].try_into().unwrap());
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let version = u16_at(4);
        if version != FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        if b[20] != DTYPE_F32 {
            return Err(FormatError::UnsupportedDtype(b[20]));
        }
        Ok(Header {
            flags: u16_at(6),
            n_runs: u32_at(8),
            n_traces: u32_at(12),
            n_samples: u32_at(16),
        })
    }

    pub(crate) fn run_bytes(&self, n_pe: usize, n_tau: usize) -> u64 {
        4 * (n_pe as u64 * n_tau as u64
            + self.n_traces as u64 * n_tau as u64
            + self.n_traces as u64 * self.n_samples as u64)
    }

    pub(crate) fn expected_len(&self, n_pe: usize, n_tau: usize) -> u64 {
        HEADER_LEN + self.n_runs as u64 * self.run_bytes(n_pe, n_tau)
    }
}

fn to_u32(name: &str, v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| FormatError::Inconsistent(format!("{name}={v} exceeds u32")).into())
}

/// Writes the trace file at `path` and its sidecar at [`sidecar_path`].
pub fn save_campaign(campaign: &TraceCampaign, path: &Path) -> Result<()> {
    let n_pe = campaign.config.n_pe;
    let n_tau = campaign.n_tau;
    let n_samples = campaign.runs.first().map_or(n_tau, SimulationRun::n_samples);
    let weights_unknown = campaign.runs.iter().any(|r| r.weights.is_none());
    for (i, run) in campaign.runs.iter().enumerate() {
        let dims_ok = run.n_traces() == campaign.n_traces
            && run.n_tau() == n_tau
            && run.n_samples() == n_samples
            && run
                .weights
                .as_ref()
                .is_none_or(|w| w.rows() == n_pe && w.cols() == n_tau);
        if !dims_ok {
            return Err(FormatError::Inconsistent(format!("run {i} dimensions differ from the campaign")).into());
        }
    }
    let header = Header {
        flags: if weights_unknown { FLAG_WEIGHTS_UNKNOWN } else { 0 },
        n_runs: to_u32("n_runs", campaign.n_runs())?,
        n_traces: to_u32("n_traces", campaign.n_traces)?,
        n_samples: to_u32("n_samples", n_samples)?,
    };

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    out.write_all(&header.encode()).map_err(io)?;
    let zero_weights = vec![0i32; n_pe * n_tau];
    for run in &campaign.runs {
        let w = run.weights.as_ref().map_or(&zero_weights[..], Matrix::as_slice);
        for v in w.iter().chain(run.inputs.as_slice()) {
            out.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        for v in run.traces.as_slice() {
            out.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    out.flush().map_err(io)?;

    let meta = CampaignMetadata {
        format_version: FORMAT_VERSION,
        config: campaign.config.clone(),
        distribution: campaign.distribution.clone(),
        n_tau,
        n_traces: campaign.n_traces,
        n_runs: campaign.n_runs(),
        master_seed: campaign.master_seed,
        run_seeds: campaign.runs.iter().map(|r| r.seed).collect(),
        window: campaign.runs.first().map(|r| r.window.clone()).unwrap_or_default(),
    };
    let side = sidecar_path(path);
    let json = serde_json::to_vec_pretty(&meta).expect("metadata serializes");
    std::fs::write(&side, json).map_err(|e| Error::io(side, e))
}

pub(crate) fn read_metadata<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&text).map_err(|source| Error::Metadata {
        path: path.to_owned(),
        source,
    })
}

/// Reads the raw file and checks it against the expected per-run layout.
pub(crate) fn read_body(path: &Path, n_pe: usize, n_tau: usize) -> Result<(Header, Vec<u8>)> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let header = Header::decode(&bytes)?;
    let expected = header.expected_len(n_pe, n_tau);
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(FormatError::Truncated { expected, actual }.into());
    }
    if actual > expected {
        return Err(FormatError::Inconsistent(format!(
            "{} trailing bytes after the last run",
            actual - expected
        ))
        .into());
    }
    Ok((header, bytes))
}

pub(crate) struct RawRun {
    pub weights: Vec<i32>,
    pub inputs: Vec<i32>,
    pub samples: Vec<f32>,
}

pub(crate) fn decode_run(bytes: &[u8], header: &Header, n_pe: usize, n_tau: usize, index: usize) -> RawRun {
    let run_len = header.run_bytes(n_pe, n_tau) as usize;
    let start = HEADER_LEN as usize + index * run_len;
    let mut chunks = bytes[start..start + run_len].chunks_exact(4);
    let mut take_i32 = |n: usize| -> Vec<i32> {
        (&mut chunks)
            .take(n)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let weights = take_i32(n_pe * n_tau);
    let inputs = take_i32(header.n_traces as usize * n_tau);
    let samples = chunks
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    RawRun {
        weights,
        inputs,
        samples,
    }
}

/// Loads a campaign written by [`save_campaign`].
pub fn load_campaign(path: &Path) -> Result<TraceCampaign> {
    let meta: CampaignMetadata = read_metadata(&sidecar_path(path))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(meta.format_version).into());
    }
    let n_pe = meta.config.n_pe;
    let n_tau = meta.n_tau;
    let (header, bytes) = read_body(path, n_pe, n_tau)?;

    let mismatch = |what: &str, file: u32, side: usize| {
        Error::from(FormatError::Inconsistent(format!(
            "{what}: trace file says {file}, sidecar says {side}"
        )))
    };
    if header.n_runs as usize != meta.n_runs {
        return Err(mismatch("n_runs", header.n_runs, meta.n_runs));
    }
    if header.n_traces as usize != meta.n_traces {
        return Err(mismatch("n_traces", header.n_traces, meta.n_traces));
    }
    if meta.run_seeds.len() != meta.n_runs {
        return Err(FormatError::Inconsistent(format!(
            "{} run seeds for {} runs",
            meta.run_seeds.len(),
            meta.n_runs
        ))
        .into());
    }
    let n_samples = header.n_samples as usize;
    if meta.window.is_empty() && n_samples != n_tau {
        return Err(mismatch("n_samples without a window map", header.n_samples, n_tau));
    }
    let weights_known = header.flags & FLAG_WEIGHTS_UNKNOWN == 0;
    let n_traces = meta.n_traces;

    let runs = (0..meta.n_runs)
        .map(|i| {
            let raw = decode_run(&bytes, &header, n_pe, n_tau, i);
            SimulationRun {
                weights: weights_known.then(|| Matrix::from_vec(n_pe, n_tau, raw.weights).unwrap()),
                inputs: Matrix::from_vec(n_traces, n_tau, raw.inputs).unwrap(),
                traces: Matrix::from_vec(n_traces, n_samples, raw.samples).unwrap(),
                seed: meta.run_seeds[i],
                window: meta.window.clone(),
            }
        })
        .collect();

    Ok(TraceCampaign {
        config: meta.config,
        distribution: meta.distribution,
        n_tau,
        n_traces,
        master_seed: meta.master_seed,
        runs,
    })
}
