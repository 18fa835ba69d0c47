//! CSV tables written and read by the commands.

use std::fs::File;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use parallab::cpa::SuccessPoint;
use parallab::fitting::StepFit;
use parallab::metrics::{Dependence, SnrBin, SnrPoint};
use parallab::reference;

use crate::output::{num, opt, tuple};

pub const CURVE_HEADER: [&str; 9] = [
    "tau",
    "n_pe",
    "rho",
    "best_incorrect",
    "se_rho",
    "se_best_incorrect",
    "se_difference",
    "n_runs",
    "n_skipped",
];

pub fn write_curve(w: &mut csv::Writer<File>, points: &[SuccessPoint]) -> Result<()> {
    w.write_record(CURVE_HEADER)?;
    for p in points {
        w.write_record([
            p.tau.to_string(),
            p.n_pe.to_string(),
            num(p.mean_correct),
            num(p.mean_best_incorrect),
            num(p.se_correct),
            num(p.se_best_incorrect),
            num(p.se_difference),
            p.correct_samples.len().to_string(),
            p.n_skipped.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_fits(w: &mut csv::Writer<File>, fits: &[StepFit]) -> Result<()> {
    w.write_record([
        "tau",
        "a",
        "b",
        "c",
        "residual_sigma",
        "iterations",
        "reference_a",
        "reference_b",
        "reference_c",
        "reference_sigma",
    ])?;
    for f in fits {
        let r = reference::step_fit(f.tau);
        w.write_record([
            f.tau.to_string(),
            num(f.fit.a),
            num(f.fit.b),
            num(f.fit.c),
            num(f.fit.residual_sigma),
            f.fit.iterations.to_string(),
            opt(r.map(|r| r.a)),
            opt(r.map(|r| r.b)),
            opt(r.map(|r| r.c)),
            opt(r.map(|r| r.sigma)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_snr(w: &mut csv::Writer<File>, points: &[SnrPoint]) -> Result<()> {
    w.write_record(["tau", "n_pe", "snr", "n_runs", "n_infinite"])?;
    for p in points {
        w.write_record([
            p.tau.to_string(),
            p.n_pe.to_string(),
            num(p.snr),
            p.n_runs.to_string(),
            p.n_infinite.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dependence(w: &mut csv::Writer<File>, deps: &[Dependence]) -> Result<()> {
    w.write_record(["tau", "max_abs_rho", "weights_a", "weights_b", "from_sweep"])?;
    for d in deps {
        w.write_record([
            d.tau.to_string(),
            num(d.max_abs_rho),
            tuple(&d.weights_a),
            tuple(&d.weights_b),
            d.from_sweep.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_snr_bins(w: &mut csv::Writer<File>, bins: &[SnrBin]) -> Result<()> {
    w.write_record([
        "lo",
        "hi",
        "center",
        "count",
        "rho",
        "best_incorrect",
        "se_rho",
        "envelope_rho",
        "envelope_best_incorrect",
    ])?;
    for b in bins {
        w.write_record([
            num(b.lo),
            num(b.hi),
            num(b.center),
            b.count.to_string(),
            num(b.mean_correct),
            num(b.mean_best_incorrect),
            num(b.se_correct),
            opt(b.envelope_correct),
            opt(b.envelope_incorrect),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Rows of a CSV file with named columns, each tagged with its line number.
struct Table {
    header: csv::StringRecord,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        let header = r.headers().with_context(|| format!("{}: bad header", path.display()))?.clone();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, csv::Position::line);
                anyhow!("{}: line {line}: {e}", path.display())
            })?;
            let line = rec.position().map_or(0, csv::Position::line);
            rows.push((line, rec));
        }
        Ok(Self { header, rows })
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn require(&self, path: &Path, name: &str) -> Result<usize> {
        self.column(name)
            .ok_or_else(|| anyhow!("{}: missing column `{name}`", path.display()))
    }
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, rec: &csv::StringRecord, col: usize, name: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = rec.get(col).unwrap_or("");
    raw.parse()
        .map_err(|e| anyhow!("{}: line {line}: column `{name}`: cannot parse `{raw}`: {e}", path.display()))
}

/// `(n_pe, rho)` pairs for a decay fit.
pub fn read_xy(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let t = Table::read(path)?;
    let (cn, cr) = (t.require(path, "n_pe")?, t.require(path, "rho")?);
    if t.rows.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    let mut n = Vec::with_capacity(t.rows.len());
    let mut rho = Vec::with_capacity(t.rows.len());
    for (line, rec) in &t.rows {
        n.push(field::<f64>(path, *line, rec, cn, "n_pe")?);
        rho.push(field::<f64>(path, *line, rec, cr, "rho")?);
    }
    Ok((n, rho))
}

/// Success curves written by [`write_curve`]; per-run samples are not kept.
pub fn read_curve(path: &Path) -> Result<Vec<SuccessPoint>> {
    let t = Table::read(path)?;
    let cols = [
        t.require(path, "tau")?,
        t.require(path, "n_pe")?,
        t.require(path, "rho")?,
        t.require(path, "best_incorrect")?,
    ];
    let se = t.column("se_difference");
    if t.rows.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    t.rows
        .iter()
        .map(|(line, rec)| {
            Ok(SuccessPoint {
                tau: field(path, *line, rec, cols[0], "tau")?,
                n_pe: field(path, *line, rec, cols[1], "n_pe")?,
                mean_correct: field(path, *line, rec, cols[2], "rho")?,
                mean_best_incorrect: field(path, *line, rec, cols[3], "best_incorrect")?,
                se_correct: 0.0,
                se_best_incorrect: 0.0,
                se_difference: match se {
                    Some(c) => field(path, *line, rec, c, "se_difference")?,
                    None => 0.0,
                },
                correct_samples: Vec::new(),
                incorrect_samples: Vec::new(),
                n_skipped: 0,
            })
        })
        .collect()
}
