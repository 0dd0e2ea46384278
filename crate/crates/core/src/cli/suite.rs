//! The registry of identity checks a run can select. Every check returns
//! its [`IdentityReport`]s with the default tolerance already multiplied by
//! the configured factor.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use crate::adjoint::{
    adjointness_check, build_gram, clark_ocone_reconstruct, malliavin_crosscheck, random_span_integrands,
    variance_identity_check, GramSystem, IdentityReport, IntegrandBasis, ReportMetadata, RieszRepresenter,
};
use crate::cli::config::{CheckName, DriverConfig, ExperimentConfig};
use crate::error::{Error, Result};
use crate::functional_calc::{horizontal_derivative, vertical_derivative, PathFunctional};
use crate::generators::{
    feynman_kac_check, generator_consistency_check, kolmogorov_solve, GeneratorParams, KolmogorovGrid,
};
use crate::integration::{
    compensated_poisson_integral, energy_density, ito_integral, jump_energy_norm, AdaptedProcessSample, EnergySpec,
    JumpIntegrand, RandomVariableSample,
};
use crate::levy::LevyMeasure;
use crate::numerics::quad::integrate_to_infinity;
use crate::numerics::stats::{self, Estimate};
use crate::numerics::normal_pdf;
use crate::paths::{
    fbm_covariance, simulate_brownian, simulate_compound_poisson, simulate_fbm, simulate_stable_levy, HurstParameter,
    JumpThreshold, PathEnsemble, TimeGrid,
};

/// Paths and steps of the fBM covariance check.
pub const FBM_PATHS: usize = 10_000;
pub const FBM_STEPS: usize = 128;
pub const FBM_HURST: [f64; 3] = [0.25, 0.5, 0.75];
pub const STABLE_GAMMAS: [f64; 4] = [0.8, 1.0, 1.5, 1.9];
/// Polynomial degree of the basis used by the Malliavin comparison.
pub const MALLIAVIN_DEGREE: usize = 5;
/// Expected number of recorded jumps per path for stable drivers.
const STABLE_RECORDED_JUMPS: f64 = 50.0;
/// Coarsening factors of the grid-refinement check, coarsest first.
pub const REFINEMENT_FACTORS: [usize; 3] = [4, 2, 1];

/// Sub-seed of a check so that checks draw from disjoint streams.
pub fn sub_seed(master: u64, tag: u64) -> u64 {
    master.wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

const TAG_POISSON: u64 = 1;
const TAG_STABLE: u64 = 2;
const TAG_ADJOINT: u64 = 3;
const TAG_FBM: u64 = 4;
const TAG_CHARFN: u64 = 5;
const TAG_GENERATOR: u64 = 6;
const TAG_FEYNMAN_KAC: u64 = 7;
const TAG_DUPIRE: u64 = 8;
const TAG_DRIVER: u64 = 9;

pub type TerminalFn = fn(f64, f64) -> f64;

/// The terminal functionals `F = g(B_T)` of the factorization checks, with
/// their reconstruction tolerance.
pub const FUNCTIONALS: [(&str, TerminalFn, f64); 4] = [
    ("B_T", |b, _| b, 0.01),
    ("B_T^2", |b, _| b * b, 0.01),
    ("exp(B_T-T/2)", |b, t| (b - t / 2.0).exp(), 0.01),
    ("max(B_T,0)", |b, _| b.max(0.0), 0.02),
];

/// Closed-form `Var(F)` of the entries of [`FUNCTIONALS`]; the half-Gaussian
/// second moment and mean come from quadrature.
pub fn functional_variance(name: &str, horizon: f64) -> Result<f64> {
    Ok(match name {
        "B_T" => horizon,
        "B_T^2" => 2.0 * horizon * horizon,
        "exp(B_T-T/2)" => horizon.exp() - 1.0,
        "max(B_T,0)" => {
            let s = horizon.sqrt();
            let m1 = integrate_to_infinity(|x| x * normal_pdf(x / s) / s, 0.0, 1e-12, 1e-14)?;
            let m2 = integrate_to_infinity(|x| x * x * normal_pdf(x / s) / s, 0.0, 1e-12, 1e-14)?;
            m2 - m1 * m1
        }
        other => return Err(Error::param("functional", format!("unknown functional {other}"))),
    })
}

pub struct Fit {
    pub name: &'static str,
    pub tolerance: f64,
    pub f: RandomVariableSample,
    pub rep: RieszRepresenter,
}

/// Shared state of one run: the Brownian ensemble and the fitted
/// representers are built on first use.
pub struct Suite<'c> {
    cfg: &'c ExperimentConfig,
    brownian: OnceLock<PathEnsemble>,
    fits: OnceLock<Vec<Fit>>,
}

fn terminal(x: &PathEnsemble, name: &str, g: TerminalFn) -> RandomVariableSample {
    let t = x.grid().horizon();
    RandomVariableSample::from_paths(x, name, |p| g(p[p.len() - 1], t))
}

fn fit_all(x: &PathEnsemble, basis: &IntegrandBasis, cfg: &ExperimentConfig) -> Result<(GramSystem, Vec<Fit>)> {
    let gram = build_gram(basis, x, &EnergySpec::BrownianLebesgue)?;
    let fits = FUNCTIONALS
        .iter()
        .map(|&(name, g, tolerance)| {
            let f = terminal(x, name, g);
            let rep = gram.covariant_derivative(&f, cfg.basis.ridge)?;
            Ok(Fit { name, tolerance, f, rep })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((gram, fits))
}

fn brownian_integrands(x: &PathEnsemble) -> Vec<(&'static str, AdaptedProcessSample)> {
    vec![
        ("1", AdaptedProcessSample::constant(*x.grid(), x.num_paths(), 1.0)),
        ("B_t", AdaptedProcessSample::from_fn(x, |_, _, p| p[p.len() - 1])),
        ("B_t^2", AdaptedProcessSample::from_fn(x, |_, _, p| p[p.len() - 1].powi(2))),
    ]
}

/// A jump ensemble with its truncated energy spec and jump integrands.
struct JumpCase {
    label: String,
    x: PathEnsemble,
    spec: EnergySpec,
    integrands: Vec<(&'static str, JumpIntegrand)>,
}

fn poisson_case(grid: &TimeGrid, rate: f64, size: f64, m: usize, seed: u64) -> Result<JumpCase> {
    let nu = LevyMeasure::poisson(rate, size);
    let x = simulate_compound_poisson(grid, &nu, m, seed)?;
    Ok(JumpCase {
        label: format!("poisson({rate},{size})"),
        x,
        spec: EnergySpec::PoissonMeasure { truncation: 0.0, measure: nu },
        integrands: vec![
            ("1", JumpIntegrand::Constant(1.0)),
            ("z", JumpIntegrand::Linear { coef: 1.0, cap: None }),
        ],
    })
}

/// Stable driver with jumps recorded above the level giving
/// [`STABLE_RECORDED_JUMPS`] per path; `z` is windowed to `|z| <= max(1, 2 eps)`
/// because the untruncated second moment is infinite.
fn stable_case(grid: &TimeGrid, gamma: f64, c_gamma: f64, m: usize, seed: u64) -> Result<JumpCase> {
    let x = simulate_stable_levy(grid, gamma, c_gamma, JumpThreshold::ExpectedCount(STABLE_RECORDED_JUMPS), m, seed)?;
    let eps = x.jump_threshold().ok_or(Error::MissingJumpRecords)?;
    let cap = (2.0 * eps).max(1.0);
    Ok(JumpCase {
        label: format!("stable({gamma},{c_gamma})"),
        x,
        spec: EnergySpec::PoissonMeasure { truncation: eps, measure: LevyMeasure::stable(gamma, c_gamma)? },
        integrands: vec![
            ("1", JumpIntegrand::Constant(1.0)),
            ("z_windowed", JumpIntegrand::Linear { coef: 1.0, cap: Some(cap) }),
        ],
    })
}

fn max_abs(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |m: f64, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) })
}

impl<'c> Suite<'c> {
    pub fn new(cfg: &'c ExperimentConfig) -> Self {
        Self { cfg, brownian: OnceLock::new(), fits: OnceLock::new() }
    }

    fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.cfg.grid.horizon, self.cfg.grid.steps)
    }

    pub fn brownian(&self) -> Result<&PathEnsemble> {
        if let Some(x) = self.brownian.get() {
            return Ok(x);
        }
        let x = simulate_brownian(&self.grid()?, self.cfg.paths, self.cfg.master_seed)?;
        Ok(self.brownian.get_or_init(|| x))
    }

    pub fn fits(&self) -> Result<&[Fit]> {
        if let Some(f) = self.fits.get() {
            return Ok(f);
        }
        let x = self.brownian()?;
        let (gram, fits) = fit_all(x, &self.cfg.basis.basis()?, self.cfg)?;
        log::info!(
            "gram: {} columns, {} dropped, max discrepancy {:e}",
            gram.basis().len(),
            gram.dropped_columns().len(),
            gram.discrepancy().max_abs
        );
        Ok(self.fits.get_or_init(|| fits))
    }

    fn driver_jump_case(&self) -> Result<Option<JumpCase>> {
        let seed = sub_seed(self.cfg.master_seed, TAG_DRIVER);
        let (grid, m) = (self.grid()?, self.cfg.paths);
        Ok(match self.cfg.driver {
            DriverConfig::Poisson { rate, jump_size } => Some(poisson_case(&grid, rate, jump_size, m, seed)?),
            DriverConfig::Stable { gamma, c_gamma } => Some(stable_case(&grid, gamma, c_gamma, m, seed)?),
            _ => None,
        })
    }

    pub fn run(&self, check: CheckName) -> Result<Vec<IdentityReport>> {
        let mut reports = match check {
            CheckName::ItoIsometry => self.ito_isometry()?,
            CheckName::Centering => self.centering()?,
            CheckName::ClarkOcone => self.clark_ocone()?,
            CheckName::VarianceIdentity => self.variance_identity()?,
            CheckName::Adjointness => self.adjointness()?,
            CheckName::Malliavin => self.malliavin()?,
            CheckName::FbmCovariance => self.fbm_covariance()?,
            CheckName::StableCharfn => self.stable_charfn()?,
            CheckName::MixedGenerator => self.mixed_generator()?,
            CheckName::Kolmogorov => self.kolmogorov()?,
            CheckName::Dupire => self.dupire()?,
            CheckName::GridRefinement => self.grid_refinement()?,
        };
        let factor = self.cfg.tolerance_factor(check);
        if factor != 1.0 {
            for r in reports.iter_mut() {
                *r = IdentityReport::new(
                    r.name.clone(),
                    r.estimate,
                    r.target,
                    r.standard_error,
                    r.tolerance * factor,
                    r.metadata,
                );
            }
        }
        Ok(reports)
    }

    /// `E[delta(u)^2]` against the energy norm, `4 SE + 5/N`.
    fn ito_isometry(&self) -> Result<Vec<IdentityReport>> {
        let n = self.cfg.grid.steps as f64;
        if let Some(case) = self.driver_jump_case()? {
            let meta = ReportMetadata::of(&case.x, 0);
            return case
                .integrands
                .iter()
                .map(|(name, v)| {
                    let d = compensated_poisson_integral(v, &case.x, &case.spec)?;
                    let sq = stats::second_moment(&d.values);
                    let target = jump_energy_norm(v, &case.spec, case.x.grid().horizon())?;
                    Ok(IdentityReport::new(
                        format!("ito_isometry[{}][{name}]", case.label),
                        sq.value,
                        target,
                        sq.std_error,
                        4.0 * sq.std_error + 5.0 / n,
                        meta,
                    ))
                })
                .collect();
        }
        let x = self.brownian()?;
        brownian_integrands(x)
            .iter()
            .map(|(name, u)| {
                let d = ito_integral(u, x)?;
                let dens = energy_density(u, &EnergySpec::BrownianLebesgue, x)?;
                let lhs: Vec<f64> = d.values.iter().map(|v| v * v).collect();
                let paired: Vec<f64> = lhs.iter().zip(&dens).map(|(a, b)| a - b).collect();
                let se = Estimate::of_mean(&paired).std_error;
                Ok(IdentityReport::new(
                    format!("ito_isometry[{name}]"),
                    stats::mean(&lhs),
                    stats::mean(&dens),
                    se,
                    4.0 * se + 5.0 / n,
                    ReportMetadata::of(x, 0),
                ))
            })
            .collect()
    }

    /// `E[delta(u)] = 0` within `4 SE`, for the driver's integrands and the
    /// compensated Poisson integrals of a finite and an infinite activity
    /// measure.
    fn centering(&self) -> Result<Vec<IdentityReport>> {
        let mut out = Vec::new();
        let mut cases = Vec::new();
        match self.driver_jump_case()? {
            Some(case) => cases.push(case),
            None => {
                let x = self.brownian()?;
                for (name, u) in brownian_integrands(x) {
                    let d = ito_integral(&u, x)?.mean();
                    out.push(IdentityReport::new(
                        format!("centering[{name}]"),
                        d.value,
                        0.0,
                        d.std_error,
                        4.0 * d.std_error,
                        ReportMetadata::of(x, 0),
                    ));
                }
            }
        }
        let grid = self.grid()?;
        let m = self.cfg.paths;
        cases.push(poisson_case(&grid, 3.0, 1.0, m, sub_seed(self.cfg.master_seed, TAG_POISSON))?);
        cases.push(stable_case(&grid, 1.5, 1.0, m, sub_seed(self.cfg.master_seed, TAG_STABLE))?);
        for case in &cases {
            for (name, v) in &case.integrands {
                let d = compensated_poisson_integral(v, &case.x, &case.spec)?.mean();
                out.push(IdentityReport::new(
                    format!("centering[{}][{name}]", case.label),
                    d.value,
                    0.0,
                    d.std_error,
                    4.0 * d.std_error,
                    ReportMetadata::of(&case.x, 0),
                ));
            }
        }
        Ok(out)
    }

    fn clark_ocone(&self) -> Result<Vec<IdentityReport>> {
        let x = self.brownian()?;
        self.fits()?
            .iter()
            .map(|fit| Ok(clark_ocone_reconstruct(&fit.f, &fit.rep, x, fit.tolerance)?.1))
            .collect()
    }

    /// The sample variance against its closed form, and against the energy
    /// of the fitted integrand.
    fn variance_identity(&self) -> Result<Vec<IdentityReport>> {
        let x = self.brownian()?;
        let mut out = Vec::new();
        for fit in self.fits()? {
            let v = stats::variance_estimate(&fit.f.values);
            out.push(IdentityReport::new(
                format!("variance_closed_form[{}]", fit.name),
                v.value,
                functional_variance(fit.name, x.grid().horizon())?,
                v.std_error,
                4.0 * v.std_error,
                ReportMetadata::of(x, 0),
            ));
            out.push(variance_identity_check(&fit.f, &fit.rep, &EnergySpec::BrownianLebesgue, x)?);
        }
        Ok(out)
    }

    fn adjointness(&self) -> Result<Vec<IdentityReport>> {
        let x = self.brownian()?;
        let basis = self.cfg.basis.basis()?;
        let tests = random_span_integrands(&basis, x, 10, sub_seed(self.cfg.master_seed, TAG_ADJOINT))?;
        let mut out = Vec::new();
        for fit in self.fits()? {
            out.extend(adjointness_check(&fit.f, &fit.rep, &tests, &EnergySpec::BrownianLebesgue, x)?);
        }
        Ok(out)
    }

    /// Fitted integrand of `f(B_T)` against the Gauss-Hermite projection of
    /// `f'(B_T)`, relative `L^2` error at most `0.05`.
    fn malliavin(&self) -> Result<Vec<IdentityReport>> {
        let x = self.brownian()?;
        let basis = IntegrandBasis::new(self.cfg.basis.bins, MALLIAVIN_DEGREE)?;
        let gram = build_gram(&basis, x, &EnergySpec::BrownianLebesgue)?;
        let cases: [(&str, fn(f64) -> f64, fn(f64) -> f64); 3] =
            [("x", |b| b, |_| 1.0), ("x^2", |b| b * b, |b| 2.0 * b), ("sin", f64::sin, f64::cos)];
        cases
            .iter()
            .map(|&(name, f, df)| {
                let fv = RandomVariableSample::from_paths(x, name, |p| f(p[p.len() - 1]));
                let rep = gram.covariant_derivative(&fv, self.cfg.basis.ridge)?;
                malliavin_crosscheck(name, df, x, &rep, 20, 0.05)
            })
            .collect()
    }

    /// Every entry `i <= j` of the sample covariance (mean known to be zero)
    /// against `R_H`; the report carries the entry with the largest
    /// discrepancy-to-tolerance ratio.
    fn fbm_covariance(&self) -> Result<Vec<IdentityReport>> {
        let mut hursts = FBM_HURST.to_vec();
        if let DriverConfig::Fbm { hurst } = self.cfg.driver {
            if !hursts.contains(&hurst) {
                hursts.push(hurst);
            }
        }
        let grid = TimeGrid::new(self.cfg.grid.horizon, FBM_STEPS)?;
        let seed = sub_seed(self.cfg.master_seed, TAG_FBM);
        hursts
            .iter()
            .map(|&h| {
                let x = simulate_fbm(&grid, HurstParameter::new(h)?, FBM_PATHS, seed)?;
                let cells = covariance_cells(&x, h);
                let worst = cells
                    .iter()
                    .max_by(|a, b| a.ratio().total_cmp(&b.ratio()))
                    .ok_or(Error::EmptyEnsemble)?;
                Ok(IdentityReport::new(
                    format!("fbm_covariance[H={h}]"),
                    worst.empirical,
                    worst.theoretical,
                    worst.std_error,
                    4.0 * worst.std_error,
                    ReportMetadata::of(&x, 0),
                ))
            })
            .collect()
    }

    /// Empirical `E cos(xi L_T)` and `E sin(xi L_T)` of simulated stable
    /// paths on `xi = 0.25, 0.5, ..., 2.5` against `exp(-T c |xi|^gamma)` and
    /// 0; the report carries the worst of the 20 comparisons.
    fn stable_charfn(&self) -> Result<Vec<IdentityReport>> {
        let mut cases: Vec<(f64, f64)> = STABLE_GAMMAS.iter().map(|&g| (g, 1.0)).collect();
        if let DriverConfig::Stable { gamma, c_gamma } = self.cfg.driver {
            if !cases.contains(&(gamma, c_gamma)) {
                cases.push((gamma, c_gamma));
            }
        }
        let grid = self.grid()?;
        let seed = sub_seed(self.cfg.master_seed, TAG_CHARFN);
        cases
            .iter()
            .map(|&(gamma, c)| {
                let x = simulate_stable_levy(&grid, gamma, c, JumpThreshold::Disabled, self.cfg.paths, seed)?;
                let lt = x.terminal();
                let mut worst: Option<(f64, f64, f64, f64)> = None;
                for k in 1..=10 {
                    let xi = 0.25 * k as f64;
                    let target = (-grid.horizon() * c * xi.powf(gamma)).exp();
                    let re = Estimate::of_mean(&lt.iter().map(|v| (xi * v).cos()).collect::<Vec<_>>());
                    let im = Estimate::of_mean(&lt.iter().map(|v| (xi * v).sin()).collect::<Vec<_>>());
                    for (e, t) in [(re, target), (im, 0.0)] {
                        let ratio = (e.value - t).abs() / (4.0 * e.std_error);
                        if worst.map_or(true, |w| ratio > w.0) {
                            worst = Some((ratio, e.value, t, e.std_error));
                        }
                    }
                }
                let (_, est, target, se) = worst.expect("ten frequencies");
                Ok(IdentityReport::new(
                    format!("stable_charfn[gamma={gamma},c={c}]"),
                    est,
                    target,
                    se,
                    4.0 * se,
                    ReportMetadata::of(&x, 0),
                ))
            })
            .collect()
    }

    fn mixed_generator(&self) -> Result<Vec<IdentityReport>> {
        let bump = |x: f64| (-x * x / 0.5).exp();
        let probes: Vec<f64> = (-4..=4).map(|k| k as f64 * 0.5).collect();
        let seed = sub_seed(self.cfg.master_seed, TAG_GENERATOR);
        [(1.0, 1.0), (1.0, 0.0), (0.0, 1.0)]
            .iter()
            .map(|&(a, b)| {
                let p = GeneratorParams::new(a, b, 1.5, 1.0)?;
                generator_consistency_check(
                    &format!("mixed_generator[alpha={a},beta={b},gamma=1.5]"),
                    bump,
                    6.0,
                    &p,
                    0.5,
                    512.0,
                    1 << 14,
                    &probes,
                    self.cfg.paths,
                    seed,
                )
            })
            .collect()
    }

    /// Crank-Nicolson against closed forms (interior `|x| <= 5` sup-norm over
    /// all time levels, `1e-3`) and Feynman-Kac cross-checks.
    fn kolmogorov(&self) -> Result<Vec<IdentityReport>> {
        let zero = |_: f64| 0.0;
        let one = |_: f64| 1.0;
        let horizon = self.cfg.grid.horizon;
        let g = KolmogorovGrid::new(-10.0, 10.0, 401, 101, horizon)?;
        let meta = ReportMetadata { num_paths: 0, steps: g.nt - 1, basis_size: 0, seed: 0 };
        type Exact = Box<dyn Fn(f64, f64) -> f64>;
        let cases: Vec<(&str, Box<dyn Fn(f64) -> f64 + Sync>, Exact)> = vec![
            ("linear", Box::new(|x| x), Box::new(|_, x| x)),
            ("quadratic", Box::new(|x| x * x), Box::new(move |t, x| x * x + (horizon - t))),
            ("sin", Box::new(f64::sin), Box::new(move |t, x| x.sin() * (-(horizon - t) / 2.0).exp())),
        ];
        let mut out = Vec::new();
        for (name, f, exact) in &cases {
            let table = kolmogorov_solve(&zero, &one, f.as_ref(), &g)?;
            let mut err = 0.0f64;
            for n in 0..g.nt {
                for j in 0..g.nx {
                    let x = g.x(j);
                    if x.abs() <= 5.0 {
                        err = err.max((table.values[(n, j)] - exact(g.t(n), x)).abs());
                    }
                }
            }
            out.push(IdentityReport::new(format!("kolmogorov[{name}]"), err, 0.0, 0.0, 1e-3, meta));
        }
        let seed = sub_seed(self.cfg.master_seed, TAG_FEYNMAN_KAC);
        let m = self.cfg.paths;
        let og = KolmogorovGrid::new(-8.0, 8.0, 321, 101, horizon)?;
        let (r, _) = feynman_kac_check("feynman_kac[ou]", &|x| -x, &one, &|x| x * x, &og, &[(0.0, 1.0)], 64, m, seed)?;
        out.push(r);
        let gg = KolmogorovGrid::new(0.0, 6.0, 301, 101, horizon)?;
        let (r, _) = feynman_kac_check(
            "feynman_kac[gbm]",
            &|x| 0.1 * x,
            &|x| 0.2 * x,
            &|x| x,
            &gg,
            &[(0.0, 1.0)],
            64,
            m,
            sub_seed(seed, 1),
        )?;
        out.push(r);
        Ok(out)
    }

    /// The six closed-form Dupire derivative examples on one Brownian path,
    /// plus the randomized non-anticipativity check of the library.
    fn dupire(&self) -> Result<Vec<IdentityReport>> {
        let grid = self.grid()?;
        let n = grid.steps();
        let x = simulate_brownian(&grid, 1, sub_seed(self.cfg.master_seed, TAG_DUPIRE))?;
        let w: Vec<f64> = x.path(0).to_vec();
        let meta = ReportMetadata::of(&x, 0);
        let ks: Vec<usize> = (0..n).collect();
        let mut out = Vec::new();
        let report = |name: &str, err: f64, tol: f64| IdentityReport::new(format!("dupire[{name}]"), err, 0.0, 0.0, tol, meta);

        let value = PathFunctional::current_value();
        let mut err = 0.0f64;
        let mut tol = 0.0f64;
        for h in [1e-6, 1e-3, 0.5] {
            for &k in &ks {
                err = err.max((vertical_derivative(&value, &w, &grid, k, h)? - 1.0).abs());
                tol = tol.max(4.0 * f64::EPSILON * (1.0 + w[k].abs()) / h);
            }
        }
        out.push(report("vertical:w_t", err, tol));

        let mut w7 = w.clone();
        let k7 = n / 2;
        w7[k7] = 0.7;
        let d = vertical_derivative(&PathFunctional::current_square(), &w7, &grid, k7, 1e-3)?;
        out.push(report("vertical:w_t^2@0.7", (d - 1.4).abs(), 1e-10));

        let integral = PathFunctional::running_integral();
        let err = max_abs(ks.iter().map(|&k| vertical_derivative(&integral, &w, &grid, k, 1e-3)).collect::<Result<Vec<_>>>()?);
        out.push(report("vertical:running_integral", err, 0.0));

        let err = max_abs(ks.iter().map(|&k| horizontal_derivative(&value, &w, &grid, k, None)).collect::<Result<Vec<_>>>()?);
        out.push(report("horizontal:w_t", err, 0.0));

        let h = 0.5 * grid.dt();
        let mut err = 0.0f64;
        let mut tol = 0.0f64;
        for &k in &ks {
            err = err.max((horizontal_derivative(&integral, &w, &grid, k, None)? - w[k]).abs());
            tol = tol.max(h * (1.0 + w[k].abs()));
        }
        out.push(report("horizontal:running_integral", err, tol));

        let mut w0 = w.clone();
        for v in w0.iter_mut() {
            *v += 0.3;
        }
        let tw0 = PathFunctional::time_times_initial();
        let err = max_abs(
            ks.iter().map(|&k| Ok(horizontal_derivative(&tw0, &w0, &grid, k, None)? - 0.3)).collect::<Result<Vec<_>>>()?,
        );
        out.push(report("horizontal:t*w_0", err, 1e-10));

        let library = [
            value,
            PathFunctional::current_square(),
            integral,
            tw0,
            PathFunctional::running_max(),
            PathFunctional::conditional_square(),
            PathFunctional::conditional_running_integral(),
        ];
        let mut violations = 0usize;
        for u in &library {
            violations += crate::functional_calc::non_anticipativity_violations(u, &w, &grid, 50, self.cfg.master_seed)?.len();
        }
        out.push(report("non_anticipativity", violations as f64, 0.0));
        Ok(out)
    }

    /// Criteria of the isometry and reconstruction checks on the ensemble
    /// coarsened to `N/4`, `N/2` and `N`: each finer error term may exceed
    /// the coarser one by at most 4 SE of the two estimates.
    fn grid_refinement(&self) -> Result<Vec<IdentityReport>> {
        let full = self.brownian()?;
        let horizon = full.grid().horizon();
        let basis = self.cfg.basis.basis()?;
        // (quantity, [(N, error term, SE)])
        let mut series: Vec<(String, Vec<(usize, f64, f64)>)> = Vec::new();
        let mut push = |name: String, n: usize, err: f64, se: f64| {
            match series.iter_mut().find(|(s, _)| *s == name) {
                Some((_, v)) => v.push((n, err, se)),
                None => series.push((name, vec![(n, err, se)])),
            }
        };
        for factor in REFINEMENT_FACTORS {
            let coarse;
            let x = if factor == 1 {
                full
            } else {
                coarse = full.coarsen(factor)?;
                &coarse
            };
            let n = x.grid().steps();
            let closed = [horizon, horizon * horizon / 2.0, horizon.powi(3)];
            for ((name, u), target) in brownian_integrands(x).iter().zip(closed) {
                let d = ito_integral(u, x)?;
                let sq = stats::second_moment(&d.values);
                push(format!("ito_isometry:{name}"), n, (sq.value - target).abs(), sq.std_error);
            }
            let (_, fits) = fit_all(x, &basis, self.cfg)?;
            for fit in &fits {
                let (_, r) = clark_ocone_reconstruct(&fit.f, &fit.rep, x, fit.tolerance)?;
                push(format!("clark_ocone:{}", fit.name), n, r.estimate, r.standard_error);
            }
        }
        let meta = ReportMetadata::of(full, basis.len());
        let mut out = Vec::new();
        for (name, pts) in &series {
            for pair in pts.windows(2) {
                let ((nc, ec, sc), (nf, ef, sf)) = (pair[0], pair[1]);
                let slack = 4.0 * sc.max(sf);
                out.push(IdentityReport::new(
                    format!("grid_refinement[{name}][N={nf} vs {nc}]"),
                    (ef - ec).max(0.0),
                    0.0,
                    sc.max(sf),
                    slack,
                    meta,
                ));
            }
        }
        Ok(out)
    }
}

/// One entry of an empirical-vs-theoretical covariance comparison.
#[derive(Debug, Clone, Copy)]
pub struct CovarianceCell {
    pub s: f64,
    pub t: f64,
    pub empirical: f64,
    pub theoretical: f64,
    pub std_error: f64,
}

impl CovarianceCell {
    fn ratio(&self) -> f64 {
        let d = (self.empirical - self.theoretical).abs();
        if self.std_error > 0.0 {
            d / (4.0 * self.std_error)
        } else if d > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
}

/// `E[X_s X_t]` estimates for all node pairs `0 < s <= t` against `R_H`.
pub fn covariance_cells(x: &PathEnsemble, hurst: f64) -> Vec<CovarianceCell> {
    use rayon::prelude::*;
    let grid = *x.grid();
    let n = grid.steps();
    let cols: Vec<Vec<f64>> = (0..=n).map(|i| x.column(i).to_vec()).collect();
    let cols = Arc::new(cols);
    (1..=n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let cols = Arc::clone(&cols);
            (i..=n).map(move |j| {
                let prod: Vec<f64> = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).collect();
                let e = Estimate::of_mean(&prod);
                let (s, t) = (grid.node(i), grid.node(j));
                CovarianceCell { s, t, empirical: e.value, theoretical: fbm_covariance(hurst, s, t), std_error: e.std_error }
            })
        })
        .collect()
}

/// Half-Gaussian variance of `max(B_T, 0)` in closed form, used to confirm
/// the quadrature oracle.
pub fn half_gaussian_variance(horizon: f64) -> f64 {
    horizon * (0.5 - 1.0 / (2.0 * PI))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_oracle_for_half_gaussian() {
        for t in [0.5, 1.0, 2.0] {
            let v = functional_variance("max(B_T,0)", t).unwrap();
            assert!((v - half_gaussian_variance(t)).abs() < 1e-10, "{v}");
        }
    }

    #[test]
    fn sub_seeds_differ() {
        let s: Vec<u64> = (0..10).map(|t| sub_seed(7, t)).collect();
        for i in 0..10 {
            for j in 0..i {
                assert_ne!(s[i], s[j]);
            }
        }
    }

    fn small(suite: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(&format!(
            r#"{{"paths": 20000, "grid": {{"steps": 64}}, "suite": ["{suite}"]}}"#
        ))
        .unwrap()
    }

    #[test]
    fn dupire_reports_pass() {
        let cfg = small("dupire");
        let reports = Suite::new(&cfg).run(CheckName::Dupire).unwrap();
        assert_eq!(reports.len(), 7);
        assert!(reports.iter().all(|r| r.passed()), "{reports:#?}");
    }

    #[test]
    fn poisson_driver_isometry() {
        let cfg = ExperimentConfig::from_json(
            r#"{"paths": 20000, "grid": {"steps": 16}, "driver": {"process": "poisson", "rate": 2.0, "jump_size": 0.5},
                "suite": ["ito_isometry", "centering"]}"#,
        )
        .unwrap();
        let suite = Suite::new(&cfg);
        for c in [CheckName::ItoIsometry, CheckName::Centering] {
            let reports = suite.run(c).unwrap();
            assert!(reports.iter().all(|r| r.passed()), "{reports:#?}");
        }
    }

    #[test]
    fn tightened_tolerance_is_applied() {
        let cfg = ExperimentConfig::from_json(
            r#"{"paths": 2000, "grid": {"steps": 16}, "suite": ["ito_isometry"],
                "tolerance_overrides": {"ito_isometry": {"factor": 0.5}}}"#,
        )
        .unwrap();
        let base = ExperimentConfig { tolerance_overrides: Default::default(), ..cfg.clone() };
        let a = Suite::new(&cfg).run(CheckName::ItoIsometry).unwrap();
        let b = Suite::new(&base).run(CheckName::ItoIsometry).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.tolerance, 0.5 * y.tolerance);
        }
    }
}
