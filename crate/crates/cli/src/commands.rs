use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use parallab::checks::Scale;
use parallab::cpa::{attack, CorrelationResult, HypothesisSpace};
use parallab::fitting::fit_decay;
use parallab::metrics::{crossing_point, run_snr_steps, snr_curve, CrossingPoint, SnrPoint};
use parallab::sweep::run_sweep;
use parallab::tracegen::{
    generate_campaign, import_external_traces, load_campaign, save_campaign, ExternalMetadata,
    SimulationRun, TraceCampaign,
};
use parallab::ArrayConfig;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::output::{num, tuple, OutputDir};
use crate::tables;

pub struct Session {
    pub config: ExperimentConfig,
    pub scale: Scale,
    pub force: bool,
}

impl Session {
    pub fn out(&self) -> Result<OutputDir> {
        OutputDir::acquire(&self.config.out, self.force)
    }
}

pub fn progress(done: usize, total: usize) {
    eprintln!("  {done}/{total} array sizes");
}

pub fn simulate(ctx: &Session) -> Result<()> {
    ctx.config.validate(ctx.scale)?;
    let spec = ctx.config.campaign(ctx.scale);
    let out = ctx.out()?;
    let path = out.file("campaign.cpat")?;
    out.file("campaign.cpat.json")?;
    let campaign = generate_campaign(&spec)?;
    save_campaign(&campaign, &path)?;
    println!(
        "wrote {}: {} runs x {} traces x {} samples, n_pe={}, seed={}",
        path.display(),
        campaign.n_runs(),
        campaign.n_traces,
        campaign.runs[0].n_samples(),
        campaign.config.n_pe,
        campaign.master_seed
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AttackMode {
    /// Earlier weights of PE 0 known; one weight enumerated.
    Prefix,
    /// Every weight up to the targeted step enumerated.
    Full,
}

pub struct AttackArgs {
    pub campaign: PathBuf,
    pub meta: Option<PathBuf>,
    pub tau: usize,
    pub run: usize,
    pub mode: AttackMode,
    pub prefix: Option<Vec<i32>>,
    pub cap: u128,
}

fn load_run(args: &AttackArgs, config: &ArrayConfig) -> Result<(SimulationRun, ArrayConfig)> {
    if let Some(meta) = &args.meta {
        let run = import_external_traces(&args.campaign, meta)?;
        return Ok((run, config.clone()));
    }
    let mut c = load_campaign(&args.campaign)?;
    if args.run >= c.n_runs() {
        bail!("run {} requested, campaign holds {}", args.run, c.n_runs());
    }
    Ok((c.runs.swap_remove(args.run), c.config))
}

fn space_for(args: &AttackArgs, run: &SimulationRun, config: &ArrayConfig) -> Result<HypothesisSpace> {
    Ok(match args.mode {
        AttackMode::Full => HypothesisSpace::full_enumeration_with_cap(args.tau, config, args.cap)?,
        AttackMode::Prefix if args.tau == 0 => HypothesisSpace::full_enumeration(0, config)?,
        AttackMode::Prefix => {
            let prefix = match (&args.prefix, &run.weights) {
                (Some(p), _) => p.clone(),
                (None, Some(w)) => w.row(0)[..args.tau].to_vec(),
                (None, None) => bail!(
                    "weights of this trace set are unknown; pass --prefix with the {} known weights",
                    args.tau
                ),
            };
            if prefix.len() != args.tau {
                bail!("--prefix needs {} weights for tau={}, got {}", args.tau, args.tau, prefix.len());
            }
            HypothesisSpace::known_prefix(prefix, config)?
        }
    })
}

fn describe(space: &HypothesisSpace, r: &CorrelationResult, idx: usize) -> String {
    format!("({}) |rho|={}", tuple(&space.candidate(idx)), num(r.coefficients[idx]))
}

pub fn attack_cmd(ctx: &Session, args: &AttackArgs) -> Result<()> {
    let (run, config) = load_run(args, &ctx.config.array)?;
    let space = space_for(args, &run, &config)?;
    let result = attack(&run, &space, run.sample_column(args.tau)?)?;
    let out = ctx.out()?;
    let (path, mut w) = out.csv(&format!("attack_run{}_tau{}.csv", args.run, args.tau))?;
    w.write_record(["hypothesis", "weights", "abs_rho", "is_correct", "is_alias"])?;
    for i in 0..space.len() {
        let rho = if result.is_undefined(i) { String::new() } else { num(result.coefficients[i]) };
        w.write_record([
            i.to_string(),
            tuple(&space.candidate(i)),
            rho,
            result.is_correct(i).to_string(),
            result.is_alias(i).to_string(),
        ])?;
    }
    w.flush()?;

    const SHOWN: usize = 8;
    let argmax: Vec<String> = result
        .argmax
        .iter()
        .take(SHOWN)
        .map(|&i| format!("({})", tuple(&space.candidate(i))))
        .collect();
    let more = result.argmax.len().saturating_sub(SHOWN);
    println!(
        "tau={} candidates={} argmax=[{}{}]",
        args.tau,
        space.len(),
        argmax.join(", "),
        if more > 0 { format!(", +{more} more") } else { String::new() }
    );
    match result.best_correct() {
        Some((i, _)) => println!("best correct: {}", describe(&space, &result, i)),
        None => println!("best correct: unknown"),
    }
    match result.best_incorrect {
        Some((i, _)) => println!("best incorrect: {}", describe(&space, &result, i)),
        None => println!("best incorrect: none"),
    }
    if let Some(t) = result.target {
        let hit = result.argmax.contains(&t) || result.argmax.iter().any(|&i| result.is_alias(i));
        println!(
            "target ({}) {}",
            tuple(&space.candidate(t)),
            if hit { "recovered" } else { "not recovered" }
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

pub fn snr_cmd(ctx: &Session, campaign: Option<&Path>) -> Result<()> {
    let taus = ctx.config.taus.clone();
    let out = ctx.out()?;
    let points = match campaign {
        Some(p) => snr_curve(&[load_campaign(p)?], &taus)?,
        None => {
            ctx.config.validate(ctx.scale)?;
            sweep_snr(&ctx.config, ctx.scale, &taus)?
        }
    };
    let (path, mut w) = out.csv("snr.csv")?;
    tables::write_snr(&mut w, &points)?;
    for p in &points {
        println!("n_pe={:>2} tau={} snr={}", p.n_pe, p.tau, num(p.snr));
    }
    println!("wrote {}", path.display());
    Ok(())
}

/// SNR of the sweep's runs without attacking them.
pub fn sweep_snr(config: &ExperimentConfig, scale: Scale, taus: &[usize]) -> Result<Vec<SnrPoint>> {
    let spec = config.sweep(scale, taus);
    spec.validate()?;
    let mut out = Vec::new();
    for (done, &n_pe) in spec.n_pes.iter().enumerate() {
        let campaign = spec.campaign_spec(n_pe);
        let per_run = (0..spec.n_runs)
            .into_par_iter()
            .map(|i| run_snr_steps(&campaign.run(i)?, &campaign.config, taus))
            .collect::<parallab::Result<Vec<_>>>()?;
        for (k, &tau) in taus.iter().enumerate() {
            let ratios: Vec<f64> = per_run.iter().map(|r| r[k]).collect();
            out.push(SnrPoint::from_runs(n_pe, tau, &ratios));
        }
        progress(done + 1, spec.n_pes.len());
    }
    Ok(out)
}

pub fn crossing_cmd(ctx: &Session, curves: &[PathBuf]) -> Result<()> {
    let out = ctx.out()?;
    let mut points = Vec::new();
    if curves.is_empty() {
        ctx.config.validate(ctx.scale)?;
        let mut spec = ctx.config.sweep(ctx.scale, &ctx.config.taus);
        spec.with_snr = false;
        let result = run_sweep(&spec, progress)?;
        for &tau in &ctx.config.taus {
            let (_, mut w) = out.csv(&format!("curve_tau{tau}.csv"))?;
            tables::write_curve(&mut w, &result.curve(tau))?;
        }
        points = result.success;
    } else {
        for p in curves {
            points.extend(tables::read_curve(p)?);
        }
    }
    let crossings = crossings_by_tau(&points)?;
    let (path, mut w) = out.csv("crossing.csv")?;
    w.write_record(["tau", "n_pe_star", "half_width"])?;
    for c in &crossings {
        w.write_record([c.tau.to_string(), c.n_pe.map_or(String::new(), |n| n.to_string()), num(c.half_width)])?;
        match c.n_pe {
            Some(n) => println!("tau={} crossing at n_pe={n} (+/- {})", c.tau, num(c.half_width)),
            None => println!("tau={} no crossing in range", c.tau),
        }
    }
    w.flush()?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn crossings_by_tau(points: &[parallab::cpa::SuccessPoint]) -> Result<Vec<CrossingPoint>> {
    let mut taus: Vec<usize> = points.iter().map(|p| p.tau).collect();
    taus.sort_unstable();
    taus.dedup();
    taus.into_iter()
        .map(|tau| {
            let mut curve: Vec<_> = points.iter().filter(|p| p.tau == tau).cloned().collect();
            curve.sort_by_key(|p| p.n_pe);
            Ok(crossing_point(&curve)?)
        })
        .collect()
}

pub fn fit_cmd(csv: &Path) -> Result<()> {
    let (n, rho) = tables::read_xy(csv)?;
    let fit = fit_decay(&n, &rho).with_context(|| format!("cannot fit {}", csv.display()))?;
    println!("{}", serde_json::to_string_pretty(&fit)?);
    Ok(())
}

pub fn import_cmd(ctx: &Session, traces: &Path, meta: &Path) -> Result<()> {
    let run = import_external_traces(traces, meta)?;
    let info: ExternalMetadata = serde_json::from_slice(
        &std::fs::read(meta).with_context(|| format!("cannot read {}", meta.display()))?,
    )?;
    let config = ArrayConfig {
        n_pe: info.n_pe,
        ..ctx.config.array.clone()
    };
    let out = ctx.out()?;
    let path = out.file("imported.cpat")?;
    out.file("imported.cpat.json")?;
    let campaign = TraceCampaign {
        config,
        distribution: ctx.config.distribution.clone(),
        n_tau: run.n_tau(),
        n_traces: run.n_traces(),
        master_seed: 0,
        runs: vec![run],
    };
    save_campaign(&campaign, &path)?;
    let run = &campaign.runs[0];
    println!(
        "imported {} traces x {} samples, n_tau={}, weights {}",
        run.n_traces(),
        run.n_samples(),
        run.n_tau(),
        if run.weights.is_some() { "known" } else { "unknown" }
    );
    println!("wrote {}", path.display());
    Ok(())
}
