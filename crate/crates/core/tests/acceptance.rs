//! Acceptance criteria 1-13 at the default scale (M = 100000, N = 256,
//! T = 1, seed 7). Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Tolerances are recomputed here from the report
//! fields rather than taken from the reports.

use std::f64::consts::PI;
use std::process::ExitCode;

use factorlab::adjoint::IdentityReport;
use factorlab::cli::config::{CheckName, ExperimentConfig};
use factorlab::cli::report::RunReport;
use factorlab::cli::run_with_threads;
use factorlab::cli::suite::functional_variance;

struct Criterion {
    id: u32,
    title: &'static str,
    ok: bool,
    detail: String,
}

fn reports(report: &RunReport, check: CheckName) -> &[IdentityReport] {
    report.find(check).map(|c| c.reports.as_slice()).unwrap_or(&[])
}

/// Every report satisfies `|estimate - target| <= tol(report)`; the detail
/// names the worst one.
fn all_within(rs: &[IdentityReport], tol: impl Fn(&IdentityReport) -> f64) -> (bool, String) {
    if rs.is_empty() {
        return (false, "no reports".into());
    }
    let mut worst = (f64::NEG_INFINITY, String::new());
    let mut ok = true;
    for r in rs {
        let t = tol(r);
        let gap = (r.estimate - r.target).abs();
        ok &= gap <= t;
        let ratio = if t > 0.0 { gap / t } else if gap == 0.0 { 0.0 } else { f64::INFINITY };
        if ratio > worst.0 {
            worst = (ratio, format!("{} |{:.4e} - {:.4e}| vs {:.3e}", r.name, r.estimate, r.target, t));
        }
    }
    (ok, format!("{} reports, worst {}", rs.len(), worst.1))
}

fn evaluate(report: &RunReport, serial: &str, parallel: &str) -> Vec<Criterion> {
    let n = report.config.grid.steps as f64;
    let mut out = Vec::new();
    let mut push = |id, title, (ok, detail): (bool, String)| out.push(Criterion { id, title, ok, detail });

    push(1, "Ito isometry", all_within(reports(report, CheckName::ItoIsometry), |r| 4.0 * r.standard_error + 5.0 / n));

    let centering = reports(report, CheckName::Centering);
    let (ok, detail) = all_within(centering, |r| 4.0 * r.standard_error);
    let has_poisson = centering.iter().any(|r| r.name.contains("poisson"));
    push(2, "centering", (ok && has_poisson, detail));

    let basis_ok = report.config.basis.bins == 16 && report.config.basis.degree == 3;
    let (ok, detail) = all_within(reports(report, CheckName::ClarkOcone), |r| {
        if r.name.contains("max(B_T,0)") {
            0.02
        } else {
            0.01
        }
    });
    push(3, "Clark-Ocone factorization", (ok && basis_ok && reports(report, CheckName::ClarkOcone).len() == 4, detail));

    let var = reports(report, CheckName::VarianceIdentity);
    let closed: Vec<IdentityReport> = var.iter().filter(|r| r.name.starts_with("variance_closed_form")).cloned().collect();
    let identity: Vec<IdentityReport> = var.iter().filter(|r| r.name.starts_with("variance_identity")).cloned().collect();
    let (ok_a, da) = all_within(&closed, |r| 4.0 * r.standard_error);
    let (ok_b, db) = all_within(&identity, |r| r.tolerance);
    let half = functional_variance("max(B_T,0)", 1.0).unwrap_or(f64::NAN);
    let oracle_ok = (half - (0.5 - 1.0 / (2.0 * PI))).abs() < 1e-10;
    let targets_ok = closed.iter().any(|r| (r.target - (1f64.exp() - 1.0)).abs() < 1e-12)
        && closed.iter().any(|r| (r.target - 2.0).abs() < 1e-12);
    push(
        4,
        "variance / energy identity",
        (ok_a && ok_b && oracle_ok && targets_ok && identity.len() == 4, format!("{da}; {db}; half-Gaussian var {half:.12}")),
    );

    let adj = reports(report, CheckName::Adjointness);
    let (ok, detail) = all_within(adj, |r| 4.0 * r.standard_error);
    push(5, "adjointness", (ok && adj.len() == 40, detail));

    push(6, "Malliavin comparison", all_within(reports(report, CheckName::Malliavin), |_| 0.05));
    push(7, "fBM covariance", all_within(reports(report, CheckName::FbmCovariance), |r| 4.0 * r.standard_error));
    push(8, "stable characteristic function", all_within(reports(report, CheckName::StableCharfn), |r| 4.0 * r.standard_error));
    let gen = reports(report, CheckName::MixedGenerator);
    let (ok, detail) = all_within(gen, |r| r.tolerance);
    let floor_ok = gen.iter().all(|r| r.tolerance >= 4.0 * r.standard_error + 1e-4 - 1e-15);
    push(9, "mixed generator", (ok && floor_ok && gen.len() == 3, detail));

    let kol = reports(report, CheckName::Kolmogorov);
    let (ok, detail) = all_within(kol, |r| if r.name.starts_with("kolmogorov[") { 1e-3 } else { r.tolerance });
    push(10, "backward Kolmogorov / Feynman-Kac", (ok && kol.len() == 5, detail));

    let dup = reports(report, CheckName::Dupire);
    let (ok, detail) = all_within(dup, |r| r.tolerance);
    push(11, "Dupire derivatives", (ok && dup.len() == 7, detail));

    push(
        12,
        "determinism across thread counts",
        (serial == parallel, format!("{} bytes at 1 thread vs {} bytes at 4 threads", serial.len(), parallel.len())),
    );

    let refine = reports(report, CheckName::GridRefinement);
    let (ok, detail) = all_within(refine, |r| 4.0 * r.standard_error);
    push(13, "grid refinement", (ok && refine.len() == 14, detail));
    out
}

fn main() -> ExitCode {
    let cfg = ExperimentConfig::default();
    let (parallel, _) = match run_with_threads(&cfg, 4) {
        Ok(r) => r,
        Err(e) => {
            println!("FAIL all criteria: run error {e}");
            return ExitCode::FAILURE;
        }
    };
    let (serial, _) = match run_with_threads(&cfg, 1) {
        Ok(r) => r,
        Err(e) => {
            println!("FAIL all criteria: single-thread run error {e}");
            return ExitCode::FAILURE;
        }
    };
    let (sj, pj) = (serial.to_json().unwrap_or_default(), parallel.to_json().unwrap_or_default());
    let criteria = evaluate(&parallel, &sj, &pj);
    let mut failed = 0;
    for c in &criteria {
        let tag = if c.ok { "PASS" } else { "FAIL" };
        println!("{tag} criterion {:>2} ({}): {}", c.id, c.title, c.detail);
        failed += usize::from(!c.ok);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
