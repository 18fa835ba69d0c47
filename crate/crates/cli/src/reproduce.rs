//! Regenerates the data behind each published figure and checks it.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Result};
use parallab::checks::{self, Check};
use parallab::cpa::SuccessPoint;
use parallab::fitting::{fit_all_taus, StepFit};
use parallab::metrics::{correlation_vs_snr, cross_pe_dependence, SnrBinning};
use parallab::reference::NORMAL_WEIGHT_SIGMA;
use parallab::sweep::{run_sweep, SweepResult};
use parallab::tracegen::WeightDistribution;

use crate::commands::{crossings_by_tau, progress, sweep_snr, Session};
use crate::config::ExperimentConfig;
use crate::output::{num, OutputDir};
use crate::tables;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Figure {
    /// SNR against array size.
    Fig2,
    /// Cross-PE dependence against step.
    Fig3,
    /// Correlation against array size with decay fits.
    Fig4,
    /// Correlation against SNR.
    Fig5,
    /// Normally distributed weights.
    #[value(name = "appendixA")]
    AppendixA,
    /// Decay fits for all eight steps.
    #[value(name = "appendixB")]
    AppendixB,
    /// Weights read from a file.
    #[value(name = "appendixC")]
    AppendixC,
}

impl Figure {
    pub fn name(self) -> &'static str {
        match self {
            Figure::Fig2 => "fig2",
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
            Figure::Fig5 => "fig5",
            Figure::AppendixA => "appendixA",
            Figure::AppendixB => "appendixB",
            Figure::AppendixC => "appendixC",
        }
    }
}

/// Steps shown in the headline correlation plots.
const HEADLINE_TAUS: [usize; 3] = [0, 3, 7];
/// Steps of the dependence plot, including three past the last multiplication.
const DEPENDENCE_TAUS: std::ops::RangeInclusive<usize> = 0..=10;

#[derive(Default)]
struct Report {
    info: Vec<String>,
    checks: Vec<Check>,
}

impl Report {
    fn info(&mut self, line: impl Into<String>) {
        self.info.push(line.into());
    }
}

/// Runs one reproduction; returns whether every check passed.
pub fn reproduce(ctx: &Session, figure: Figure, weights: Option<PathBuf>) -> Result<bool> {
    let mut config = ctx.config.clone();
    if let Some(path) = weights {
        config.distribution = WeightDistribution::File { path };
    }
    config.validate(ctx.scale)?;
    let out = OutputDir::acquire(&config.out.join(figure.name()), ctx.force)?;
    let n_runs = config.n_runs(ctx.scale);
    eprintln!("{}: {} runs x {} traces per array size", figure.name(), n_runs, config.n_traces);

    let mut report = Report::default();
    match figure {
        Figure::Fig2 => {
            let snr = sweep_snr(&config, ctx.scale, &config.taus)?;
            let (_, mut w) = out.csv("snr.csv")?;
            tables::write_snr(&mut w, &snr)?;
            report.checks.extend(checks::snr_decay(&snr));
        }
        Figure::Fig3 => {
            let deps = DEPENDENCE_TAUS
                .map(|tau| cross_pe_dependence(&config.array, tau, n_runs, config.n_traces, config.seed))
                .collect::<parallab::Result<Vec<_>>>()?;
            let (_, mut w) = out.csv("dependence.csv")?;
            tables::write_dependence(&mut w, &deps)?;
            for d in &deps {
                report.info(format!("tau={} max |rho| = {}", d.tau, num(d.max_abs_rho)));
            }
            report.checks.push(checks::first_step_dependence(&deps[0]));
            report.checks.extend(checks::dependence_shape(&deps));
        }
        Figure::Fig4 => {
            let result = sweep(&config, ctx.scale, &HEADLINE_TAUS, false)?;
            write_curves(&out, "", &result.success, &HEADLINE_TAUS)?;
            let fits = fits(&out, &result.success, &mut report)?;
            crossings(&out, &result.success, &mut report)?;
            single_pe(&config, &result.success, &mut report);
            report.checks.extend(checks::headline_fits(&fits, ctx.scale));
            report.checks.extend(checks::crossings(&result.success)?);
            report.checks.extend(checks::saturation(&result.success));
        }
        Figure::Fig5 => {
            let result = sweep(&config, ctx.scale, &config.taus, true)?;
            let c = correlation_vs_snr(&result.observations, SnrBinning::default())?;
            let (_, mut w) = out.csv("snr_bins.csv")?;
            tables::write_snr_bins(&mut w, &c.bins)?;
            report.checks.extend(checks::snr_thresholds(&c));
        }
        Figure::AppendixA => {
            let uniform = sweep(&config, ctx.scale, &HEADLINE_TAUS, false)?;
            let normal_config = ExperimentConfig {
                distribution: WeightDistribution::Normal {
                    sigma: NORMAL_WEIGHT_SIGMA,
                },
                ..config.clone()
            };
            let normal = sweep(&normal_config, ctx.scale, &HEADLINE_TAUS, false)?;
            write_curves(&out, "uniform_", &uniform.success, &HEADLINE_TAUS)?;
            write_curves(&out, "normal_", &normal.success, &HEADLINE_TAUS)?;
            report
                .checks
                .extend(checks::distribution_equivalence(&uniform.success, &normal.success));
        }
        Figure::AppendixB => {
            let result = sweep(&config, ctx.scale, &config.taus, false)?;
            write_curves(&out, "", &result.success, &config.taus)?;
            let fits = fits(&out, &result.success, &mut report)?;
            single_pe(&config, &result.success, &mut report);
            report.checks.extend(checks::step_fits(&fits));
        }
        Figure::AppendixC => {
            if !matches!(config.distribution, WeightDistribution::File { .. }) {
                bail!("appendixC attacks stored weights: pass --weights PATH or set distribution to {{\"kind\": \"file\", \"path\": ...}}");
            }
            let result = sweep(&config, ctx.scale, &config.taus, false)?;
            write_curves(&out, "", &result.success, &config.taus)?;
            fits(&out, &result.success, &mut report)?;
            crossings(&out, &result.success, &mut report)?;
            single_pe(&config, &result.success, &mut report);
        }
    }

    let passed = checks::all_passed(&report.checks);
    let mut text = String::new();
    writeln!(
        text,
        "{} at {:?} scale: {} runs x {} traces, seed {}",
        figure.name(),
        ctx.scale,
        n_runs,
        config.n_traces,
        config.seed
    )?;
    for line in &report.info {
        writeln!(text, "INFO {line}")?;
    }
    for c in &report.checks {
        writeln!(text, "{c}")?;
    }
    let n_pass = report.checks.iter().filter(|c| c.passed).count();
    writeln!(
        text,
        "result: {} ({n_pass}/{} checks passed)",
        if passed { "PASS" } else { "FAIL" },
        report.checks.len()
    )?;
    let path = out.write("report.txt", &text)?;
    print!("{text}");
    println!("wrote {}", path.display());
    Ok(passed)
}

fn sweep(config: &ExperimentConfig, scale: parallab::checks::Scale, taus: &[usize], with_snr: bool) -> Result<SweepResult> {
    let mut spec = config.sweep(scale, taus);
    spec.with_snr = with_snr;
    Ok(run_sweep(&spec, progress)?)
}

fn write_curves(out: &OutputDir, prefix: &str, points: &[SuccessPoint], taus: &[usize]) -> Result<()> {
    for &tau in taus {
        let curve: Vec<SuccessPoint> = points.iter().filter(|p| p.tau == tau).cloned().collect();
        let (_, mut w) = out.csv(&format!("curve_{prefix}tau{tau}.csv"))?;
        tables::write_curve(&mut w, &curve)?;
    }
    Ok(())
}

/// Fits every step; a step whose fit fails is reported and left out, so the
/// checks that need it fail.
fn fits(out: &OutputDir, points: &[SuccessPoint], report: &mut Report) -> Result<Vec<StepFit>> {
    let mut taus: Vec<usize> = points.iter().map(|p| p.tau).collect();
    taus.sort_unstable();
    taus.dedup();
    let mut fits = Vec::new();
    for tau in taus {
        let curve: Vec<SuccessPoint> = points.iter().filter(|p| p.tau == tau).cloned().collect();
        match fit_all_taus(&curve) {
            Ok(f) => {
                let f = &f[0];
                report.info(format!(
                    "tau={tau} fit a={:.4} b={:.4} c={:.4} residual sigma={:.4}",
                    f.fit.a, f.fit.b, f.fit.c, f.fit.residual_sigma
                ));
                fits.push(f.clone());
            }
            Err(e) => report.info(format!("tau={tau} fit failed: {e}")),
        }
    }
    let (_, mut w) = out.csv("fits.csv")?;
    tables::write_fits(&mut w, &fits)?;
    Ok(fits)
}

fn crossings(out: &OutputDir, points: &[SuccessPoint], report: &mut Report) -> Result<()> {
    let (_, mut w) = out.csv("crossing.csv")?;
    w.write_record(["tau", "n_pe_star", "half_width"])?;
    for c in crossings_by_tau(points)? {
        w.write_record([c.tau.to_string(), c.n_pe.map_or(String::new(), |n| n.to_string()), num(c.half_width)])?;
        report.info(match c.n_pe {
            Some(n) => format!("tau={} crossing at n_pe={n}", c.tau),
            None => format!("tau={} no crossing", c.tau),
        });
    }
    w.flush()?;
    Ok(())
}

/// Perfect single-PE correlation only holds without measurement noise.
fn single_pe(config: &ExperimentConfig, points: &[SuccessPoint], report: &mut Report) {
    if config.array.noise_sigma == 0.0 {
        report.checks.extend(checks::single_pe(points));
    }
}
