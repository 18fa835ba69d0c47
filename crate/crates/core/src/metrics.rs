//! Array-level leakage metrics: signal-to-noise ratio, statistical dependence
//! between PEs, attack crossing points and correlation as a function of SNR.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cpa::{mean_se, pearson, SuccessPoint};
use crate::error::{Error, Result};
use crate::leakage::ArrayConfig;
use crate::seed::{self, Domain};
use crate::tracegen::{SimulationRun, TraceCampaign};

fn variance(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for x in xs {
        n += 1.0;
        let d = x - mean;
        mean += d / n;
        m2 += d * (x - mean);
    }
    if n < 2.0 {
        0.0
    } else {
        m2 / (n - 1.0)
    }
}

/// SNR of PE 0 at step `tau` in one run: variance of its own leakage over the
/// variance of everything else in the sample (other PEs and noise).
/// `+inf` when nothing else varies, as for a single noiseless PE.
pub fn run_snr(run: &SimulationRun, config: &ArrayConfig, tau: usize) -> Result<f64> {
    Ok(run_snr_steps(run, config, &[tau])?[0])
}

/// [`run_snr`] for several steps, sharing one leakage evaluation.
pub fn run_snr_steps(run: &SimulationRun, config: &ArrayConfig, taus: &[usize]) -> Result<Vec<f64>> {
    let own = run.pe_leakage(0, config)?;
    taus.iter()
        .map(|&tau| {
            if tau >= own.cols() {
                return Err(Error::Range(format!("tau={tau} of {} steps", own.cols())));
            }
            let column = run.column(tau)?;
            let signal = variance(own.column(tau).map(f64::from));
            let noise = variance(column.iter().zip(own.column(tau)).map(|(p, l)| p - l as f64));
            Ok(if noise > 0.0 { signal / noise } else { f64::INFINITY })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrPoint {
    pub n_pe: usize,
    pub tau: usize,
    /// Mean of the finite per-run ratios; `+inf` when none is finite.
    pub snr: f64,
    pub n_runs: usize,
    /// Runs whose ratio was infinite and therefore left out of the mean.
    pub n_infinite: usize,
}

impl SnrPoint {
    pub fn from_runs(n_pe: usize, tau: usize, ratios: &[f64]) -> Self {
        let finite: Vec<f64> = ratios.iter().copied().filter(|r| r.is_finite()).collect();
        let snr = if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        Self {
            n_pe,
            tau,
            snr,
            n_runs: ratios.len(),
            n_infinite: ratios.len() - finite.len(),
        }
    }
}

/// Average SNR per campaign (array size) and step.
pub fn snr_curve(campaigns: &[TraceCampaign], taus: &[usize]) -> Result<Vec<SnrPoint>> {
    use rayon::prelude::*;
    let mut out = Vec::new();
    for c in campaigns {
        for &tau in taus {
            let ratios = c
                .runs
                .par_iter()
                .map(|r| run_snr(r, &c.config, tau))
                .collect::<Result<Vec<_>>>()?;
            out.push(SnrPoint::from_runs(c.config.n_pe, tau, &ratios));
        }
    }
    Ok(out)
}

/// Largest absolute correlation found between the leakages of two PEs with
/// different weights that share the same inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dependence {
    pub tau: usize,
    pub max_abs_rho: f64,
    pub weights_a: Vec<i32>,
    pub weights_b: Vec<i32>,
    /// Whether the maximum came from the exhaustive doubling sweep rather
    /// than from random pairs.
    pub from_sweep: bool,
}

fn chain_leakage(weights: &[i32], inputs: &[i32], config: &ArrayConfig) -> u8 {
    let model = config.leakage_model();
    let mut acc = 0i32;
    let mut last = 0;
    for (tau, (&w, &x)) in weights.iter().zip(inputs).enumerate() {
        let next = acc.wrapping_add(w.wrapping_mul(x));
        last = model.store(tau, acc, next);
        acc = next;
    }
    last
}

/// Maximum `|rho|` between the step-`tau` leakage of two PEs.
///
/// Random distinct weight vectors are drawn `n_pairs` times, each pair
/// observed on `n_traces` shared random inputs. At `tau = 0` the pairs
/// `(w, 2^k w)` are also swept exhaustively over the full input range.
pub fn cross_pe_dependence(
    config: &ArrayConfig,
    tau: usize,
    n_pairs: usize,
    n_traces: usize,
    master_seed: u64,
) -> Result<Dependence> {
    config.validate()?;
    if n_traces < 2 {
        return Err(Error::param("n_traces", "at least 2 traces are required"));
    }
    let (wlo, whi) = config.weight_range();
    let (xlo, xhi) = config.input_range();
    let mut best = Dependence {
        tau,
        max_abs_rho: 0.0,
        weights_a: Vec::new(),
        weights_b: Vec::new(),
        from_sweep: false,
    };
    let consider = |rho: f64, a: &[i32], b: &[i32], sweep: bool, best: &mut Dependence| {
        if rho > best.max_abs_rho {
            *best = Dependence {
                tau,
                max_abs_rho: rho,
                weights_a: a.to_vec(),
                weights_b: b.to_vec(),
                from_sweep: sweep,
            };
        }
    };

    let mut ha = vec![0.0; n_traces];
    let mut hb = vec![0.0; n_traces];
    let mut x = vec![0i32; tau + 1];
    for i in 0..n_pairs {
        let mut rng = seed::stream(master_seed, Domain::Dependence, i as u64);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<i32> {
            (0..=tau).map(|_| rng.random_range(wlo..=whi)).collect()
        };
        let a = draw(&mut rng);
        let mut b = draw(&mut rng);
        while b == a {
            b = draw(&mut rng);
        }
        for t in 0..n_traces {
            for xi in x.iter_mut() {
                *xi = rng.random_range(xlo..=xhi);
            }
            ha[t] = chain_leakage(&a, &x, config) as f64;
            hb[t] = chain_leakage(&b, &x, config) as f64;
        }
        if let Ok(r) = pearson(&ha, &hb) {
            consider(r.abs(), &a, &b, false, &mut best);
        }
    }

    if tau == 0 {
        let model = config.leakage_model();
        let xs: Vec<i32> = (xlo..=xhi).collect();
        let leak = |w: i32| -> Vec<f64> { xs.iter().map(|&x| model.weight(w.wrapping_mul(x)) as f64).collect() };
        for w in wlo..=whi {
            if w == 0 {
                continue;
            }
            let base = leak(w);
            let mut c = w as i64 * 2;
            while (wlo as i64..=whi as i64).contains(&c) {
                if let Ok(r) = pearson(&base, &leak(c as i32)) {
                    consider(r.abs(), &[w], &[c as i32], true, &mut best);
                }
                c *= 2;
            }
        }
    }
    Ok(best)
}

/// Smallest array size at which the best incorrect hypothesis overtakes the
/// correct one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingPoint {
    pub tau: usize,
    /// `None` when the correct hypothesis stays ahead on the whole curve.
    pub n_pe: Option<usize>,
    /// Half-width of the array-size interval over which the order of the two
    /// means is not resolved at two standard errors.
    pub half_width: f64,
}

/// Finds the crossing point of one step's success curve. The points must
/// share `tau` and be strictly increasing in `n_pe`.
pub fn crossing_point(curve: &[SuccessPoint]) -> Result<CrossingPoint> {
    let first = curve
        .first()
        .ok_or_else(|| Error::Range("empty success curve".into()))?;
    if curve.iter().any(|p| p.tau != first.tau) {
        return Err(Error::Range("success curve mixes several steps".into()));
    }
    if curve.windows(2).any(|w| w[0].n_pe >= w[1].n_pe) {
        return Err(Error::Range(
            "success curve must be strictly increasing in n_pe".into(),
        ));
    }
    let diff = |p: &SuccessPoint| p.mean_correct - p.mean_best_incorrect;
    let n_pe = curve.iter().find(|p| diff(p) < 0.0).map(|p| p.n_pe);
    // First size where a crossing is plausible, first where it is certain.
    let plausible = curve
        .iter()
        .find(|p| diff(p) - 2.0 * p.se_difference < 0.0)
        .map(|p| p.n_pe);
    let certain = curve
        .iter()
        .find(|p| diff(p) + 2.0 * p.se_difference < 0.0)
        .map(|p| p.n_pe)
        .or(curve.last().map(|p| p.n_pe));
    let half_width = match (plausible, certain) {
        (Some(lo), Some(hi)) if hi >= lo => (hi - lo) as f64 / 2.0,
        _ => 0.0,
    };
    Ok(CrossingPoint {
        tau: first.tau,
        n_pe,
        half_width,
    })
}

/// One `(run, n_pe, tau)` observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrObservation {
    pub n_pe: usize,
    pub tau: usize,
    pub snr: f64,
    pub rho_correct: f64,
    pub best_incorrect: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrBinning {
    pub n_bins: usize,
    pub snr_min: f64,
    pub snr_max: f64,
    /// Per-step bins with fewer observations are left out of the envelope.
    pub min_envelope_count: usize,
}

impl Default for SnrBinning {
    fn default() -> Self {
        Self {
            n_bins: 40,
            snr_min: 1e-3,
            snr_max: 10.0,
            min_envelope_count: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrBin {
    pub lo: f64,
    pub hi: f64,
    /// Geometric centre.
    pub center: f64,
    pub count: usize,
    pub mean_correct: f64,
    pub mean_best_incorrect: f64,
    pub se_correct: f64,
    /// Lowest per-step mean of the correct correlation in this bin.
    pub envelope_correct: Option<f64>,
    /// Highest per-step mean of the best incorrect correlation in this bin.
    pub envelope_incorrect: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrCorrelation {
    pub bins: Vec<SnrBin>,
    /// SNR above which the mean correct correlation stays ahead.
    pub threshold: Option<f64>,
    /// Same, comparing the worst step against the best incorrect step.
    pub worst_case_threshold: Option<f64>,
}

/// Bins observations by SNR on a log scale and locates the SNR above which
/// the correct hypothesis wins.
pub fn correlation_vs_snr(observations: &[SnrObservation], binning: SnrBinning) -> Result<SnrCorrelation> {
    if binning.n_bins == 0 || !(binning.snr_min > 0.0 && binning.snr_max > binning.snr_min) {
        return Err(Error::param("binning", "need n_bins > 0 and 0 < snr_min < snr_max"));
    }
    let (l0, l1) = (binning.snr_min.ln(), binning.snr_max.ln());
    let width = (l1 - l0) / binning.n_bins as f64;
    let mut members: Vec<Vec<&SnrObservation>> = vec![Vec::new(); binning.n_bins];
    for o in observations {
        if !(o.snr.is_finite() && o.snr >= binning.snr_min && o.snr < binning.snr_max) {
            continue;
        }
        let i = (((o.snr.ln() - l0) / width) as usize).min(binning.n_bins - 1);
        members[i].push(o);
    }

    let bins: Vec<SnrBin> = members
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let lo = (l0 + i as f64 * width).exp();
            let hi = (l0 + (i + 1) as f64 * width).exp();
            let cw: Vec<f64> = m.iter().map(|o| o.rho_correct).collect();
            let inc: Vec<f64> = m.iter().map(|o| o.best_incorrect).collect();
            let (mean_correct, se_correct) = mean_se(&cw);
            let (mean_best_incorrect, _) = mean_se(&inc);
            let mut taus: Vec<usize> = m.iter().map(|o| o.tau).collect();
            taus.sort_unstable();
            taus.dedup();
            let mut envelope_correct: Option<f64> = None;
            let mut envelope_incorrect: Option<f64> = None;
            for tau in taus {
                let group: Vec<_> = m.iter().filter(|o| o.tau == tau).collect();
                if group.len() < binning.min_envelope_count {
                    continue;
                }
                let n = group.len() as f64;
                let c = group.iter().map(|o| o.rho_correct).sum::<f64>() / n;
                let b = group.iter().map(|o| o.best_incorrect).sum::<f64>() / n;
                envelope_correct = Some(envelope_correct.map_or(c, |e| e.min(c)));
                envelope_incorrect = Some(envelope_incorrect.map_or(b, |e| e.max(b)));
            }
            SnrBin {
                lo,
                hi,
                center: (lo * hi).sqrt(),
                count: m.len(),
                mean_correct,
                mean_best_incorrect,
                se_correct,
                envelope_correct,
                envelope_incorrect,
            }
        })
        .collect();

    let mean: Vec<(f64, Option<f64>)> = bins
        .iter()
        .map(|b| (b.center, (b.count > 0).then(|| b.mean_correct - b.mean_best_incorrect)))
        .collect();
    let worst: Vec<(f64, Option<f64>)> = bins
        .iter()
        .map(|b| (b.center, b.envelope_correct.zip(b.envelope_incorrect).map(|(c, i)| c - i)))
        .collect();
    Ok(SnrCorrelation {
        threshold: threshold(&mean),
        worst_case_threshold: threshold(&worst),
        bins,
    })
}

/// SNR where the margin last turns from negative to non-negative, by linear
/// interpolation in log SNR between the adjacent populated bins.
fn threshold(margin: &[(f64, Option<f64>)]) -> Option<f64> {
    let populated: Vec<(f64, f64)> = margin.iter().filter_map(|&(s, d)| d.map(|d| (s, d))).collect();
    let last_negative = populated.iter().rposition(|&(_, d)| d < 0.0)?;
    let (s0, d0) = populated[last_negative];
    let &(s1, d1) = populated.get(last_negative + 1)?;
    let t = d0 / (d0 - d1);
    Some((s0.ln() + t * (s1.ln() - s0.ln())).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leakage::OperandEncoding;
    use crate::tracegen::{generate_campaign, CampaignSpec};

    fn point(n_pe: usize, tau: usize, cw: f64, inc: f64) -> SuccessPoint {
        SuccessPoint {
            n_pe,
            tau,
            mean_correct: cw,
            mean_best_incorrect: inc,
            se_correct: 0.0,
            se_best_incorrect: 0.0,
            se_difference: 0.0,
            correct_samples: Vec::new(),
            incorrect_samples: Vec::new(),
            n_skipped: 0,
        }
    }

    #[test]
    fn crossing_examples() {
        let curve = [point(1, 0, 0.9, 0.3), point(2, 0, 0.7, 0.5), point(4, 0, 0.45, 0.5)];
        let c = crossing_point(&curve).unwrap();
        assert_eq!(c.n_pe, Some(4));
        assert_eq!(c.half_width, 0.0);

        let ahead = [point(1, 3, 0.9, 0.3), point(2, 3, 0.8, 0.4)];
        assert_eq!(crossing_point(&ahead).unwrap().n_pe, None);

        let unordered = [point(2, 0, 0.9, 0.3), point(1, 0, 0.8, 0.4)];
        assert!(matches!(crossing_point(&unordered), Err(Error::Range(_))));
        let mixed = [point(1, 0, 0.9, 0.3), point(2, 1, 0.8, 0.4)];
        assert!(matches!(crossing_point(&mixed), Err(Error::Range(_))));
        assert!(crossing_point(&[]).is_err());
    }

    #[test]
    fn crossing_uncertainty_spans_ambiguous_sizes() {
        let mut curve: Vec<SuccessPoint> = (1..=6)
            .map(|n| point(n, 0, 0.8 - 0.1 * n as f64, 0.35))
            .collect();
        for p in &mut curve {
            p.se_difference = 0.05;
        }
        // margins 0.35, 0.25, 0.15, 0.05, -0.05, -0.15; two SE = 0.1
        let c = crossing_point(&curve).unwrap();
        assert_eq!(c.n_pe, Some(5));
        assert_eq!(c.half_width, 1.0);
    }

    #[test]
    fn crossing_is_invariant_under_monotone_transform() {
        let curve: Vec<SuccessPoint> = (1..=12)
            .map(|n| point(n, 7, 1.0 / n as f64, 0.15 + 0.01 * n as f64))
            .collect();
        let warped: Vec<SuccessPoint> = curve
            .iter()
            .map(|p| point(p.n_pe, p.tau, p.mean_correct.powi(3) + 2.0, p.mean_best_incorrect.powi(3) + 2.0))
            .collect();
        assert_eq!(crossing_point(&curve).unwrap().n_pe, crossing_point(&warped).unwrap().n_pe);
    }

    #[test]
    fn single_pe_snr_is_infinite() {
        let spec = CampaignSpec {
            n_traces: 100,
            ..CampaignSpec::new(ArrayConfig::with_pes(1), 3, 1)
        };
        let c = generate_campaign(&spec).unwrap();
        let pts = snr_curve(&[c], &[0, 5]).unwrap();
        for p in pts {
            assert_eq!(p.snr, f64::INFINITY);
            assert_eq!(p.n_infinite, 3);
        }
    }

    #[test]
    fn snr_counts_noise_as_noise() {
        let cfg = ArrayConfig {
            noise_sigma: 3.0,
            ..ArrayConfig::with_pes(1)
        };
        let spec = CampaignSpec {
            n_traces: 4000,
            ..CampaignSpec::new(cfg, 1, 5)
        };
        let c = generate_campaign(&spec).unwrap();
        let r = &c.runs[0];
        let own = r.pe_leakage(0, &c.config).unwrap();
        let signal = variance(own.column(4).map(f64::from));
        let snr = run_snr(r, &c.config, 4).unwrap();
        assert!((snr - signal / 9.0).abs() / snr < 0.1, "{snr} vs {}", signal / 9.0);
    }

    #[test]
    fn snr_shrinks_with_array_size() {
        let campaigns: Vec<_> = [2, 8, 24]
            .iter()
            .map(|&n| {
                let spec = CampaignSpec {
                    n_traces: 500,
                    ..CampaignSpec::new(ArrayConfig::with_pes(n), 20, 11)
                };
                generate_campaign(&spec).unwrap()
            })
            .collect();
        let pts = snr_curve(&campaigns, &[7]).unwrap();
        assert!(pts[0].snr > pts[1].snr && pts[1].snr > pts[2].snr, "{pts:?}");
    }

    #[test]
    fn doubling_sweep_reaches_one_for_unsigned_operands() {
        let cfg = ArrayConfig {
            encoding: OperandEncoding::Unsigned,
            ..ArrayConfig::default()
        };
        let d = cross_pe_dependence(&cfg, 0, 10, 200, 3).unwrap();
        assert!(d.from_sweep);
        assert_eq!(d.max_abs_rho, 1.0);
    }

    #[test]
    fn dependence_is_bounded_and_reproducible() {
        let cfg = ArrayConfig::default();
        let a = cross_pe_dependence(&cfg, 3, 50, 300, 9).unwrap();
        let b = cross_pe_dependence(&cfg, 3, 50, 300, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.max_abs_rho > 0.0 && a.max_abs_rho <= 1.0);
        assert_ne!(a.weights_a, a.weights_b);
        assert!(!a.from_sweep);
    }

    fn obs(snr: f64, cw: f64, inc: f64, tau: usize) -> SnrObservation {
        SnrObservation {
            n_pe: 2,
            tau,
            snr,
            rho_correct: cw,
            best_incorrect: inc,
        }
    }

    #[test]
    fn threshold_from_synthetic_sigmoid() {
        // margin = log10(snr / 0.05): negative below 0.05, positive above.
        let mut o = Vec::new();
        for i in 0..400 {
            let snr = 10f64.powf(-3.0 + 4.0 * i as f64 / 400.0);
            let m = (snr / 0.05).log10() * 0.1;
            o.push(obs(snr, 0.5 + m, 0.5, 0));
        }
        let r = correlation_vs_snr(&o, SnrBinning::default()).unwrap();
        let t = r.threshold.unwrap();
        assert!((t / 0.05).ln().abs() < 0.05, "{t}");
        assert_eq!(r.bins.len(), 40);
        assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), 400);
    }

    #[test]
    fn worst_case_threshold_follows_weakest_step() {
        let mut o = Vec::new();
        for i in 0..800 {
            let snr = 10f64.powf(-3.0 + 4.0 * i as f64 / 800.0);
            let (tau, pivot) = if i % 2 == 0 { (0, 0.05) } else { (7, 0.1) };
            o.push(obs(snr, 0.5 + (snr / pivot).log10() * 0.1, 0.5, tau));
        }
        let r = correlation_vs_snr(&o, SnrBinning::default()).unwrap();
        let worst = r.worst_case_threshold.unwrap();
        assert!((worst / 0.1).ln().abs() < 0.1, "{worst}");
        assert!(r.threshold.unwrap() < worst);
    }

    #[test]
    fn out_of_range_snr_is_ignored() {
        let o = [obs(f64::INFINITY, 1.0, 0.1, 0), obs(1e-5, 0.1, 0.3, 0), obs(0.5, 0.9, 0.2, 0)];
        let r = correlation_vs_snr(&o, SnrBinning::default()).unwrap();
        assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), 1);
        assert_eq!(r.threshold, None);
        assert!(correlation_vs_snr(&o, SnrBinning { n_bins: 0, ..Default::default() }).is_err());
    }
}
