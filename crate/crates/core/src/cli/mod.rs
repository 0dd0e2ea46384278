//! Batch experiment harness behind the `factorlab` binary.
//!
//! Exit status: 0 when every check passes, 1 when a check fails, 2 for
//! configuration or usage errors, 3 for numerical failures during a run.

pub mod config;
pub mod export;
pub mod report;
pub mod suite;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};
use config::ExperimentConfig;
use report::{CheckOutcome, RunMetadata, RunReport};
use suite::Suite;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "FACTORLAB_THREADS";

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Runs every selected check in order on the current rayon pool.
pub fn run_suite(cfg: &ExperimentConfig) -> Result<(RunReport, BTreeMap<String, f64>)> {
    let suite = Suite::new(cfg);
    let mut outcomes = Vec::with_capacity(cfg.suite.len());
    let mut times = BTreeMap::new();
    for &check in &cfg.suite {
        let start = Instant::now();
        log::info!("running {}", check.as_str());
        let reports = suite.run(check)?;
        let outcome = CheckOutcome::new(check, cfg, reports);
        let secs = start.elapsed().as_secs_f64();
        log::info!("{} {:?} in {secs:.2}s", check.as_str(), outcome.verdict);
        times.insert(check.as_str().to_string(), secs);
        outcomes.push(outcome);
    }
    Ok((RunReport::new(cfg.clone(), outcomes), times))
}

/// Runs `cfg` on a pool of `threads` workers.
pub fn run_with_threads(cfg: &ExperimentConfig, threads: usize) -> Result<(RunReport, BTreeMap<String, f64>)> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::param("threads", e.to_string()))?;
    pool.install(|| run_suite(cfg))
}

/// Thread cap from [`THREADS_ENV`]; `None` when unset.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::param("FACTORLAB_THREADS", format!("`{v}` is not a positive integer"))),
        },
        Err(_) => Ok(None),
    }
}

/// `run <config>`: returns the exit status after writing the report,
/// metadata and optional summary.
pub fn run_command(config_path: &Path) -> i32 {
    let cfg = match ExperimentConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let threads = match thread_cap() {
        Ok(t) => t.unwrap_or_else(rayon::current_num_threads),
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let (report, times) = match run_with_threads(&cfg, threads) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("numerical error: {e}");
            return EXIT_NUMERICAL;
        }
    };
    let meta = RunMetadata {
        threads,
        started_unix_seconds: started,
        wall_clock_seconds: times,
        total_seconds: clock.elapsed().as_secs_f64(),
    };
    if let Err(e) = write_outputs(&cfg, &report, &meta) {
        eprintln!("output error: {e}");
        return EXIT_CONFIG;
    }
    for c in &report.checks {
        for r in &c.reports {
            let v = if r.passed() { "PASS" } else { "FAIL" };
            println!("{v} {} estimate={} target={} tolerance={}", r.name, r.estimate, r.target, r.tolerance);
        }
    }
    if report.passed() {
        EXIT_PASS
    } else {
        EXIT_FAIL
    }
}

fn write_outputs(cfg: &ExperimentConfig, report: &RunReport, meta: &RunMetadata) -> Result<()> {
    std::fs::write(&cfg.output.report, report.to_json()?)?;
    std::fs::write(cfg.output.metadata_path(), serde_json::to_string_pretty(meta)? + "\n")?;
    if let Some(p) = &cfg.output.summary_csv {
        let mut buf = Vec::new();
        report.write_summary_csv(&mut buf)?;
        std::fs::write(p, buf)?;
    }
    Ok(())
}

/// `export <input> <selector> [out]`.
pub fn export_command(input: &Path, selector: &str, out: &Path) -> i32 {
    let result = export::ExportSource::load(input).and_then(|src| {
        let cap = thread_cap()?;
        match cap {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::param("threads", e.to_string()))?
                .install(|| export::export_to_file(&src, selector, out)),
            None => export::export_to_file(&src, selector, out),
        }
    });
    match result {
        Ok(()) => EXIT_PASS,
        Err(e) => {
            eprintln!("export error: {e}");
            exit_code_for(&e)
        }
    }
}

/// Numerical failures map to 3, everything else to 2.
pub fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::NonFinite(_)
        | Error::Diverged { .. }
        | Error::Factorization(_)
        | Error::SingularGram { .. }
        | Error::Quadrature(_)
        | Error::Unstable(_) => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}
