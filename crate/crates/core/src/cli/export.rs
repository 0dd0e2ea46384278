//! Plot-ready CSV exports from a run report or a binary path ensemble.
//!
//! Selectors and their columns:
//!
//! | input    | selector                | columns                                          |
//! |----------|-------------------------|--------------------------------------------------|
//! | report   | `summary`               | check, name, estimate, target, standard_error, tolerance, verdict |
//! | report   | `clark_ocone_integrand` | t, x_bin, fitted, oracle                         |
//! | report   | `covariance_heatmap`    | s, t, empirical, theoretical, std_error          |
//! | ensemble | `paths`                 | path_id, then one column per node time           |
//! | ensemble | `covariance_heatmap`    | s, t, empirical, theoretical, std_error          |
//!
//! Report exports regenerate their data from the config echo, so they are
//! deterministic. Output is assembled in memory and only written once
//! complete, so a failing export leaves no file behind.

use std::io::Write;
use std::path::Path;

use crate::cli::config::DriverConfig;
use crate::cli::report::RunReport;
use crate::cli::suite::{covariance_cells, sub_seed, FBM_PATHS, FBM_STEPS};
use crate::error::{Error, Result};
use crate::integration::{EnergySpec, RandomVariableSample};
use crate::adjoint::covariant_derivative;
use crate::paths::io::{read_binary, write_csv, MAGIC};
use crate::paths::{simulate_brownian, simulate_fbm, HurstParameter, PathEnsemble, ProcessLabel, TimeGrid};

pub const REPORT_SELECTORS: [&str; 3] = ["summary", "clark_ocone_integrand", "covariance_heatmap"];
pub const ENSEMBLE_SELECTORS: [&str; 2] = ["paths", "covariance_heatmap"];

/// Hurst index of the covariance heatmap when the driver is not an fBM.
pub const HEATMAP_HURST: f64 = 0.75;
/// Time slices and state bins of the integrand export.
const INTEGRAND_SLICES: usize = 8;
const INTEGRAND_BINS: usize = 24;

/// Either a run report or an ensemble, detected from the file contents.
pub enum ExportSource {
    Report(Box<RunReport>),
    Ensemble(Box<PathEnsemble>),
}

impl ExportSource {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(&MAGIC) {
            Ok(ExportSource::Ensemble(Box::new(read_binary(&bytes[..])?.0)))
        } else {
            let text = String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))?;
            Ok(ExportSource::Report(Box::new(RunReport::from_json(&text)?)))
        }
    }
}

/// Renders `selector` of `source` as CSV bytes.
pub fn export(source: &ExportSource, selector: &str) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    match (source, selector) {
        (ExportSource::Report(r), "summary") => r.write_summary_csv(&mut out)?,
        (ExportSource::Report(r), "clark_ocone_integrand") => clark_ocone_integrand(r, &mut out)?,
        (ExportSource::Report(r), "covariance_heatmap") => {
            let cfg = &r.config;
            let h = match cfg.driver {
                DriverConfig::Fbm { hurst } => hurst,
                _ => HEATMAP_HURST,
            };
            let grid = TimeGrid::new(cfg.grid.horizon, FBM_STEPS)?;
            let x = simulate_fbm(&grid, HurstParameter::new(h)?, FBM_PATHS, sub_seed(cfg.master_seed, 4))?;
            covariance_heatmap(&x, h, &mut out)?;
        }
        (ExportSource::Ensemble(x), "paths") => write_csv(x, &mut out)?,
        (ExportSource::Ensemble(x), "covariance_heatmap") => {
            let h = match x.label() {
                ProcessLabel::Fbm { hurst } => *hurst,
                other => {
                    return Err(Error::IncompatibleSpec(format!("covariance heatmap needs an fBM ensemble, got {other}")))
                }
            };
            covariance_heatmap(x, h, &mut out)?;
        }
        _ => return Err(Error::UnknownSelector(selector.to_string())),
    }
    Ok(out)
}

/// Exports to `out`, writing the file only after the CSV is complete.
pub fn export_to_file(source: &ExportSource, selector: &str, out: &Path) -> Result<()> {
    let bytes = export(source, selector)?;
    std::fs::write(out, bytes)?;
    Ok(())
}

fn covariance_heatmap<W: Write>(x: &PathEnsemble, hurst: f64, mut w: W) -> Result<()> {
    if x.num_paths() == 0 {
        return Err(Error::EmptyEnsemble);
    }
    writeln!(w, "s,t,empirical,theoretical,std_error")?;
    for c in covariance_cells(x, hurst) {
        writeln!(w, "{},{},{},{},{}", c.s, c.t, c.empirical, c.theoretical, c.std_error)?;
    }
    Ok(())
}

/// Fitted integrand of `F = B_T^2` against the oracle `2 x`, averaged over
/// the paths falling in each state bin of `[-3 sqrt(t), 3 sqrt(t)]` at
/// eight time slices. Empty bins are skipped.
fn clark_ocone_integrand<W: Write>(report: &RunReport, mut w: W) -> Result<()> {
    let cfg = &report.config;
    if cfg.driver != (DriverConfig::Brownian {}) {
        return Err(Error::IncompatibleSpec("the integrand export needs a Brownian driver".into()));
    }
    let grid = TimeGrid::new(cfg.grid.horizon, cfg.grid.steps)?;
    let x = simulate_brownian(&grid, cfg.paths, cfg.master_seed)?;
    let f = RandomVariableSample::from_paths(&x, "B_T^2", |p| p[p.len() - 1].powi(2));
    let (_, rep) = covariant_derivative(&f, &cfg.basis.basis()?, &x, &EnergySpec::BrownianLebesgue, cfg.basis.ridge)?;
    let phi = rep.evaluate(&x)?;
    writeln!(w, "t,x_bin,fitted,oracle")?;
    let n = grid.steps();
    for s in 1..=INTEGRAND_SLICES {
        let k = (s * n / (INTEGRAND_SLICES + 1)).clamp(1, n - 1);
        let t = grid.node(k);
        let half = 3.0 * t.sqrt();
        let width = 2.0 * half / INTEGRAND_BINS as f64;
        let mut acc = vec![(0usize, 0.0, 0.0); INTEGRAND_BINS];
        for r in 0..x.num_paths() {
            let b = x.paths()[(r, k)];
            let j = ((b + half) / width).floor();
            if j < 0.0 || j >= INTEGRAND_BINS as f64 {
                continue;
            }
            let cell = &mut acc[j as usize];
            cell.0 += 1;
            cell.1 += phi.values()[(r, k)];
            cell.2 += 2.0 * b;
        }
        for (j, (count, fitted, oracle)) in acc.iter().enumerate() {
            if *count > 0 {
                let center = -half + (j as f64 + 0.5) * width;
                let c = *count as f64;
                writeln!(w, "{t},{center},{},{}", fitted / c, oracle / c)?;
            }
        }
    }
    Ok(())
}
