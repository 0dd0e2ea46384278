//! Stochastic integrals (divergences) and energy-space norms on the grid.
//!
//! Integrals are left-point sums `sum_i u_{t_i} (X_{t_{i+1}} - X_{t_i})`,
//! evaluated per path left to right so they are exactly linear in `u` up to
//! the fixed summation order.

use ndarray::Array2;
use rayon::prelude::*;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::levy::{LevyMeasure, QUAD_REL_TOL};
use crate::numerics::quad;
use crate::numerics::stats::{self, Estimate};
use crate::paths::{PathEnsemble, TimeGrid};

/// Integrand sampled on the grid: `values[(m, i)]` is `u` on `[t_i, t_{i+1})`
/// along path `m`.
#[derive(Debug, Clone)]
pub struct AdaptedProcessSample {
    grid: TimeGrid,
    values: Array2<f64>,
    adapted: bool,
}

impl AdaptedProcessSample {
    /// Evaluates `f(i, t_i, prefix)` where `prefix` holds `X_{t_0..=t_i}`.
    /// The result is adapted by construction.
    pub fn from_fn<F>(x: &PathEnsemble, f: F) -> Self
    where
        F: Fn(usize, f64, &[f64]) -> f64 + Sync,
    {
        let grid = *x.grid();
        let n = grid.steps();
        let m = x.num_paths();
        let mut data = vec![0.0; m * n];
        data.par_chunks_mut(n.max(1)).enumerate().for_each(|(r, row)| {
            let path = x.path(r);
            let path = path.as_slice().expect("standard layout");
            for (i, slot) in row.iter_mut().enumerate() {
                *slot = f(i, grid.node(i), &path[..=i]);
            }
        });
        Self { grid, values: Array2::from_shape_vec((m, n), data).expect("shape"), adapted: true }
    }

    /// Wraps raw values; `adapted` records whether column `i` was computed
    /// from path data up to `t_i` only.
    pub fn from_values(grid: TimeGrid, values: Array2<f64>, adapted: bool) -> Result<Self> {
        if values.ncols() != grid.steps() {
            return Err(Error::ShapeMismatch(format!(
                "integrand has {} columns, grid has {} steps",
                values.ncols(),
                grid.steps()
            )));
        }
        Ok(Self { grid, values, adapted })
    }

    pub fn constant(grid: TimeGrid, num_paths: usize, c: f64) -> Self {
        Self { grid, values: Array2::from_elem((num_paths, grid.steps()), c), adapted: true }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn num_paths(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_adapted(&self) -> bool {
        self.adapted
    }

    /// `a u + b w`, adapted iff both inputs are.
    pub fn combine(a: f64, u: &Self, b: f64, w: &Self) -> Result<Self> {
        if u.grid != w.grid || u.values.dim() != w.values.dim() {
            return Err(Error::ShapeMismatch("integrands differ in shape".into()));
        }
        Ok(Self {
            grid: u.grid,
            values: &u.values * a + &w.values * b,
            adapted: u.adapted && w.adapted,
        })
    }
}

/// One real number per path.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomVariableSample {
    pub values: Vec<f64>,
    pub provenance: String,
}

impl RandomVariableSample {
    pub fn new(values: Vec<f64>, provenance: impl Into<String>) -> Self {
        Self { values, provenance: provenance.into() }
    }

    /// `f(path)` on every path of the ensemble.
    pub fn from_paths<F>(x: &PathEnsemble, provenance: impl Into<String>, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let values = (0..x.num_paths())
            .into_par_iter()
            .map(|r| f(x.path(r).as_slice().expect("standard layout")))
            .collect();
        Self::new(values, provenance)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> Estimate {
        Estimate::of_mean(&self.values)
    }

    pub fn variance(&self) -> f64 {
        stats::variance(&self.values)
    }

    pub fn check_aligned(&self, x: &PathEnsemble) -> Result<()> {
        if self.len() != x.num_paths() {
            return Err(Error::ShapeMismatch(format!(
                "sample has {} values, ensemble has {} paths",
                self.len(),
                x.num_paths()
            )));
        }
        Ok(())
    }

    /// CSV `path_id,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "path_id,value")?;
        for (m, v) in self.values.iter().enumerate() {
            writeln!(w, "{m},{v}")?;
        }
        Ok(())
    }
}

/// Energy space in which integrand norms are measured.
#[derive(Debug, Clone)]
pub enum EnergySpec {
    /// `E int |u|^2 dt`
    BrownianLebesgue,
    /// `E int |u|^2 d<X>` with the realized quadratic variation.
    MartingaleQv,
    /// `int int |v|^2 nu(dz) dt` over `|z| > truncation`.
    PoissonMeasure { truncation: f64, measure: LevyMeasure },
    /// Weighted direct sum; component `j` contributes `weight_j ||.||_j^2`.
    DirectSum(Vec<(f64, EnergySpec)>),
}

impl EnergySpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            EnergySpec::PoissonMeasure { truncation, measure } => {
                if !(*truncation >= 0.0) || (!measure.is_finite_activity() && *truncation <= 0.0) {
                    return Err(Error::param(
                        "truncation",
                        "must be positive for infinite-activity Levy measures",
                    ));
                }
                Ok(())
            }
            EnergySpec::DirectSum(parts) => {
                for (w, spec) in parts {
                    if !(*w > 0.0) {
                        return Err(Error::param("weight", "direct-sum weights must be positive"));
                    }
                    spec.validate()?;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

fn check_pair(u: &AdaptedProcessSample, x: &PathEnsemble) -> Result<()> {
    if u.grid != *x.grid() {
        return Err(Error::ShapeMismatch("integrand and ensemble use different grids".into()));
    }
    if u.num_paths() != x.num_paths() {
        return Err(Error::ShapeMismatch(format!(
            "integrand has {} paths, ensemble has {}",
            u.num_paths(),
            x.num_paths()
        )));
    }
    Ok(())
}

/// Ito integral `int u dX` as a left-point sum per path.
pub fn ito_integral(u: &AdaptedProcessSample, x: &PathEnsemble) -> Result<RandomVariableSample> {
    check_pair(u, x)?;
    if !u.adapted {
        return Err(Error::NotAdapted("Ito integration needs an adapted integrand".into()));
    }
    let n = x.grid().steps();
    let values = (0..x.num_paths())
        .into_par_iter()
        .map(|r| {
            let path = x.path(r);
            let uu = u.values.row(r);
            let mut acc = 0.0;
            for i in 0..n {
                acc += uu[i] * (path[i + 1] - path[i]);
            }
            acc
        })
        .collect();
    Ok(RandomVariableSample::new(values, format!("ito_integral[{}]", x.label())))
}

/// Running realized quadratic variation `<X>_{t_j} = sum_{i<j} (dX_i)^2`,
/// shape `M x (N+1)`.
pub fn quadratic_variation(x: &PathEnsemble) -> Array2<f64> {
    let n = x.grid().steps();
    let m = x.num_paths();
    let mut out = vec![0.0; m * (n + 1)];
    out.par_chunks_mut(n + 1).enumerate().for_each(|(r, row)| {
        let path = x.path(r);
        let mut acc = 0.0;
        for i in 0..n {
            let d = path[i + 1] - path[i];
            acc += d * d;
            row[i + 1] = acc;
        }
    });
    Array2::from_shape_vec((m, n + 1), out).expect("shape")
}

/// Per-path `int u w d<.>` under a path-based energy spec; averaging gives
/// [`energy_inner`].
pub fn energy_inner_density(
    u: &AdaptedProcessSample,
    w: &AdaptedProcessSample,
    spec: &EnergySpec,
    x: &PathEnsemble,
) -> Result<Vec<f64>> {
    check_pair(u, x)?;
    check_pair(w, x)?;
    let n = x.grid().steps();
    let dt = x.grid().dt();
    let qv = match spec {
        EnergySpec::BrownianLebesgue => false,
        EnergySpec::MartingaleQv => true,
        other => {
            return Err(Error::IncompatibleSpec(format!(
                "{other:?} does not measure grid integrands; use jump_energy_norm or direct_sum_energy_norm"
            )))
        }
    };
    Ok((0..x.num_paths())
        .into_par_iter()
        .map(|r| {
            let path = x.path(r);
            let (uu, ww) = (u.values.row(r), w.values.row(r));
            let mut acc = 0.0;
            for i in 0..n {
                let weight = if qv {
                    let d = path[i + 1] - path[i];
                    d * d
                } else {
                    dt
                };
                acc += uu[i] * ww[i] * weight;
            }
            acc
        })
        .collect())
}

/// Monte Carlo estimate of the squared energy norm `||u||^2`.
pub fn energy_norm(u: &AdaptedProcessSample, spec: &EnergySpec, x: &PathEnsemble) -> Result<Estimate> {
    energy_inner(u, u, spec, x)
}

/// Monte Carlo estimate of `<u, w>` in the energy space.
pub fn energy_inner(
    u: &AdaptedProcessSample,
    w: &AdaptedProcessSample,
    spec: &EnergySpec,
    x: &PathEnsemble,
) -> Result<Estimate> {
    Ok(Estimate::of_mean(&energy_inner_density(u, w, spec, x)?))
}

/// Per-path energy integrand `int u^2 d<.>`; averaging it gives
/// [`energy_norm`].
pub fn energy_density(u: &AdaptedProcessSample, spec: &EnergySpec, x: &PathEnsemble) -> Result<Vec<f64>> {
    energy_inner_density(u, u, spec, x)
}

pub type JumpFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Integrand `v(t, z)` of a compensated Poisson integral.
#[derive(Clone)]
pub enum JumpIntegrand {
    /// `v = c`
    Constant(f64),
    /// `v = coef * z` on `|z| <= cap` (all `z` when `cap` is `None`).
    Linear { coef: f64, cap: Option<f64> },
    General(JumpFn),
}

impl fmt::Debug for JumpIntegrand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JumpIntegrand::Constant(c) => write!(f, "Constant({c})"),
            JumpIntegrand::Linear { coef, cap } => write!(f, "Linear {{ coef: {coef}, cap: {cap:?} }}"),
            JumpIntegrand::General(_) => f.write_str("General(..)"),
        }
    }
}

impl JumpIntegrand {
    pub fn eval(&self, t: f64, z: f64) -> f64 {
        match self {
            JumpIntegrand::Constant(c) => *c,
            JumpIntegrand::Linear { coef, cap } => match cap {
                Some(c) if z.abs() > *c => 0.0,
                _ => coef * z,
            },
            JumpIntegrand::General(f) => f(t, z),
        }
    }

    fn time_homogeneous(&self) -> bool {
        !matches!(self, JumpIntegrand::General(_))
    }
}

fn poisson_spec(spec: &EnergySpec) -> Result<(f64, &LevyMeasure)> {
    match spec {
        EnergySpec::PoissonMeasure { truncation, measure } => {
            spec.validate()?;
            Ok((*truncation, measure))
        }
        other => Err(Error::IncompatibleSpec(format!("expected a Poisson-measure spec, got {other:?}"))),
    }
}

/// `int_0^T int_{|z|>eps} g(t, z) nu(dz) dt`.
fn measure_time_integral<G>(g: G, homogeneous: bool, horizon: f64, eps: f64, nu: &LevyMeasure) -> Result<f64>
where
    G: Fn(f64, f64) -> f64,
{
    if homogeneous {
        return Ok(horizon * nu.integrate_above(eps, |z| g(0.0, z))?);
    }
    let inner_err = std::cell::RefCell::new(None);
    let value = quad::integrate(
        |t| match nu.integrate_above(eps, |z| g(t, z)) {
            Ok(v) => v,
            Err(e) => {
                inner_err.borrow_mut().get_or_insert(e);
                0.0
            }
        },
        0.0,
        horizon,
        QUAD_REL_TOL,
        1e-14,
    )?;
    match inner_err.into_inner() {
        Some(e) => Err(e),
        None => Ok(value),
    }
}

/// Compensator `int_0^T int_{|z|>eps} v nu(dz) dt`, after checking that `v` is
/// `nu`-integrable on the truncated domain.
pub fn compensator(v: &JumpIntegrand, spec: &EnergySpec, horizon: f64) -> Result<f64> {
    let (eps, nu) = poisson_spec(spec)?;
    match (v, nu) {
        (JumpIntegrand::Constant(c), _) => Ok(c * horizon * nu.mass_above(eps)?),
        (JumpIntegrand::Linear { coef, cap }, LevyMeasure::SymmetricPowerLaw { k, gamma }) => {
            if cap.is_none() && *gamma <= 1.0 {
                return Err(Error::NonIntegrable(format!(
                    "z is not integrable against |z|^(-1-{gamma}) at infinity"
                )));
            }
            let _ = (coef, k);
            // odd integrand against a symmetric measure
            Ok(0.0)
        }
        _ => {
            measure_time_integral(|t, z| v.eval(t, z).abs(), v.time_homogeneous(), horizon, eps, nu)?;
            measure_time_integral(|t, z| v.eval(t, z), v.time_homogeneous(), horizon, eps, nu)
        }
    }
}

/// Squared energy norm `int int v^2 nu(dz) dt` of a jump integrand.
pub fn jump_energy_norm(v: &JumpIntegrand, spec: &EnergySpec, horizon: f64) -> Result<f64> {
    let (eps, nu) = poisson_spec(spec)?;
    match (v, nu) {
        (JumpIntegrand::Constant(c), _) => Ok(c * c * horizon * nu.mass_above(eps)?),
        (JumpIntegrand::Linear { coef, cap }, LevyMeasure::SymmetricPowerLaw { k, gamma }) => match cap {
            Some(cap) if *cap > eps => Ok(coef * coef
                * horizon
                * 2.0
                * k
                * (cap.powf(2.0 - gamma) - eps.powf(2.0 - gamma))
                / (2.0 - gamma)),
            Some(_) => Ok(0.0),
            None => Err(Error::NonIntegrable("z^2 has infinite mass under a stable Levy measure".into())),
        },
        _ => measure_time_integral(|t, z| v.eval(t, z).powi(2), v.time_homogeneous(), horizon, eps, nu),
    }
}

/// `int int v(t, z) N~(dt, dz)` over jumps with `|z| > eps`: recorded jumps
/// minus the compensator, both truncated at the same `eps`.
pub fn compensated_poisson_integral(
    v: &JumpIntegrand,
    x: &PathEnsemble,
    spec: &EnergySpec,
) -> Result<RandomVariableSample> {
    let (eps, _) = poisson_spec(spec)?;
    let jumps = x.jumps().ok_or(Error::MissingJumpRecords)?;
    if let Some(recorded) = x.jump_threshold() {
        if recorded > eps * (1.0 + 1e-12) {
            return Err(Error::param(
                "truncation",
                format!("ensemble only records jumps above {recorded}, spec asks for {eps}"),
            ));
        }
    }
    let comp = compensator(v, spec, x.grid().horizon())?;
    let values = jumps
        .par_iter()
        .map(|list| {
            list.iter()
                .filter(|j| j.size.abs() > eps)
                .fold(0.0, |acc, j| acc + v.eval(j.time, j.size))
                - comp
        })
        .collect();
    Ok(RandomVariableSample::new(values, format!("poisson_integral[{}]", x.label())))
}

/// Integrand of one component of a mixed divergence.
#[derive(Debug, Clone, Copy)]
pub enum ComponentIntegrand<'a> {
    /// Left-point integral against the component's paths.
    Path(&'a AdaptedProcessSample),
    /// Compensated Poisson integral against the component's jump records.
    Jump(&'a JumpIntegrand, &'a EnergySpec),
}

fn component_divergence(v: ComponentIntegrand<'_>, x: &PathEnsemble) -> Result<RandomVariableSample> {
    match v {
        ComponentIntegrand::Path(u) => ito_integral(u, x),
        ComponentIntegrand::Jump(j, spec) => compensated_poisson_integral(j, x, spec),
    }
}

/// `alpha delta_A(u) + beta delta_B(v)` over independent components.
pub fn mixed_divergence(
    u: ComponentIntegrand<'_>,
    v: ComponentIntegrand<'_>,
    alpha: f64,
    beta: f64,
    a: &PathEnsemble,
    b: &PathEnsemble,
) -> Result<RandomVariableSample> {
    if a.grid() != b.grid() || a.num_paths() != b.num_paths() {
        return Err(Error::ShapeMismatch("mixture components differ in grid or path count".into()));
    }
    if a.sources().iter().any(|s| b.sources().contains(s)) {
        return Err(Error::param("components", "components share a noise source"));
    }
    let da = component_divergence(u, a)?;
    let db = component_divergence(v, b)?;
    let values = da.values.iter().zip(&db.values).map(|(p, q)| alpha * p + beta * q).collect();
    Ok(RandomVariableSample::new(values, format!("mixed_divergence[{alpha},{beta}]")))
}

/// `sum_j w_j ||part_j||^2` for a direct-sum spec, given each part's squared
/// norm estimate in order.
pub fn direct_sum_energy_norm(spec: &EnergySpec, parts: &[Estimate]) -> Result<Estimate> {
    let EnergySpec::DirectSum(components) = spec else {
        return Err(Error::IncompatibleSpec("expected a direct-sum spec".into()));
    };
    spec.validate()?;
    if components.len() != parts.len() {
        return Err(Error::ShapeMismatch(format!(
            "direct sum has {} components, got {} norms",
            components.len(),
            parts.len()
        )));
    }
    let value = components.iter().zip(parts).fold(0.0, |acc, ((w, _), p)| acc + w * p.value);
    let var = components.iter().zip(parts).fold(0.0, |acc, ((w, _), p)| acc + (w * p.std_error).powi(2));
    Ok(Estimate { value, std_error: var.sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{simulate_brownian, simulate_compound_poisson, simulate_stable_levy, JumpThreshold};
    use crate::levy::stable_density_coefficient;

    fn within(est: Estimate, target: f64, slack: f64) -> bool {
        (est.value - target).abs() <= 4.0 * est.std_error + slack
    }

    #[test]
    fn unit_integrand_telescopes() {
        let g = TimeGrid::new(1.0, 64).unwrap();
        let b = simulate_brownian(&g, 200, 1).unwrap();
        let one = AdaptedProcessSample::constant(g, 200, 1.0);
        let d = ito_integral(&one, &b).unwrap();
        for (v, bt) in d.values.iter().zip(b.terminal()) {
            assert!((v - bt).abs() < 1e-12);
        }
    }

    #[test]
    fn ito_formula_for_square() {
        let g = TimeGrid::new(1.0, 256).unwrap();
        let b = simulate_brownian(&g, 20_000, 2).unwrap();
        let u = AdaptedProcessSample::from_fn(&b, |_, _, p| 2.0 * p[p.len() - 1]);
        let d = ito_integral(&u, &b).unwrap();
        let err: Vec<f64> = d.values.iter().zip(b.terminal()).map(|(v, bt)| (v - (bt * bt - 1.0)).powi(2)).collect();
        let l2 = stats::mean(&err).sqrt();
        // exact L2 error is sqrt(2 / N)
        assert!((l2 - (2.0 / 256.0f64).sqrt()).abs() < 0.01, "{l2}");
    }

    #[test]
    fn isometry_for_brownian_integrand() {
        let g = TimeGrid::new(1.0, 128).unwrap();
        let b = simulate_brownian(&g, 100_000, 3).unwrap();
        let u = AdaptedProcessSample::from_fn(&b, |_, _, p| p[p.len() - 1]);
        let d = ito_integral(&u, &b).unwrap();
        assert!(within(stats::second_moment(&d.values), 0.5, g.dt()));
        let e = energy_norm(&u, &EnergySpec::BrownianLebesgue, &b).unwrap();
        assert!(within(e, 0.5, g.dt()));
        assert!(within(d.mean(), 0.0, 0.0));
    }

    #[test]
    fn non_adapted_rejected() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let b = simulate_brownian(&g, 3, 1).unwrap();
        let u = AdaptedProcessSample::from_values(g, Array2::zeros((3, 4)), false).unwrap();
        assert!(matches!(ito_integral(&u, &b), Err(Error::NotAdapted(_))));
        let g2 = TimeGrid::new(1.0, 8).unwrap();
        let w = AdaptedProcessSample::constant(g2, 3, 1.0);
        assert!(matches!(ito_integral(&w, &b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn quadratic_variation_cases() {
        let g = TimeGrid::new(1.0, 256).unwrap();
        let b = simulate_brownian(&g, 20_000, 4).unwrap();
        let qv = quadratic_variation(&b);
        let q1 = qv.column(256).to_vec();
        assert!(within(Estimate::of_mean(&q1), 1.0, 0.0));
        let qv2 = quadratic_variation(&b.scaled(2.0));
        assert!(within(Estimate::of_mean(&qv2.column(256).to_vec()), 4.0, 0.0));

        for n in [16usize, 256] {
            let g = TimeGrid::new(1.0, n).unwrap();
            let line = Array2::from_shape_fn((1, n + 1), |(_, i)| g.node(i));
            let x = PathEnsemble::from_matrix(g, line, crate::paths::ProcessLabel::Custom { name: "t".into() }).unwrap();
            let q = quadratic_variation(&x)[(0, n)];
            assert!((q - g.dt()).abs() < 1e-14);
        }
    }

    #[test]
    fn energy_norm_cases() {
        let g = TimeGrid::new(1.0, 64).unwrap();
        let b = simulate_brownian(&g, 50_000, 5).unwrap();
        let one = AdaptedProcessSample::constant(g, 50_000, 1.0);
        let e = energy_norm(&one, &EnergySpec::BrownianLebesgue, &b).unwrap();
        assert!((e.value - 1.0).abs() < 1e-12 && e.std_error < 1e-12);
        let b2 = b.scaled(2.0);
        let eq = energy_norm(&one, &EnergySpec::MartingaleQv, &b2).unwrap();
        assert!(within(eq, 4.0, 0.0));
        let bad = EnergySpec::PoissonMeasure { truncation: 0.1, measure: LevyMeasure::poisson(1.0, 1.0) };
        assert!(matches!(energy_norm(&one, &bad, &b), Err(Error::IncompatibleSpec(_))));
    }

    #[test]
    fn compensated_poisson_moments() {
        let g = TimeGrid::new(1.0, 16).unwrap();
        let nu = LevyMeasure::poisson(3.0, 1.0);
        let x = simulate_compound_poisson(&g, &nu, 100_000, 6).unwrap();
        let spec = EnergySpec::PoissonMeasure { truncation: 0.0, measure: nu };
        let d = compensated_poisson_integral(&JumpIntegrand::Constant(1.0), &x, &spec).unwrap();
        assert!(within(d.mean(), 0.0, 0.0));
        assert!(within(stats::variance_estimate(&d.values), 3.0, 0.0));
        let zero = compensated_poisson_integral(&JumpIntegrand::Constant(0.0), &x, &spec).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
        assert_eq!(jump_energy_norm(&JumpIntegrand::Constant(1.0), &spec, 1.0).unwrap(), 3.0);
    }

    #[test]
    fn stable_truncated_isometry() {
        let g = TimeGrid::new(1.0, 16).unwrap();
        let (gamma, eps, cap) = (1.5, 0.05, 2.0);
        let x = simulate_stable_levy(&g, gamma, 1.0, JumpThreshold::Absolute(eps), 50_000, 7).unwrap();
        let spec = EnergySpec::PoissonMeasure { truncation: eps, measure: LevyMeasure::stable(gamma, 1.0).unwrap() };
        let v = JumpIntegrand::Linear { coef: 1.0, cap: Some(cap) };
        let d = compensated_poisson_integral(&v, &x, &spec).unwrap();
        let k = stable_density_coefficient(gamma, 1.0);
        let target = 2.0 * k * (cap.powf(2.0 - gamma) - eps.powf(2.0 - gamma)) / (2.0 - gamma);
        assert!((jump_energy_norm(&v, &spec, 1.0).unwrap() - target).abs() < 1e-12);
        assert!(within(stats::second_moment(&d.values), target, 0.0));
        assert!(within(d.mean(), 0.0, 0.0));
        // the general (quadrature) route agrees with the closed forms
        let general = JumpIntegrand::General(Arc::new(move |_, z: f64| if z.abs() <= cap { z } else { 0.0 }));
        assert!(compensator(&general, &spec, 1.0).unwrap().abs() < 1e-8);
        let q = jump_energy_norm(&general, &spec, 1.0).unwrap();
        assert!((q - target).abs() < 1e-6 * target);
    }

    #[test]
    fn poisson_integral_errors() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let b = simulate_brownian(&g, 3, 1).unwrap();
        let spec = EnergySpec::PoissonMeasure { truncation: 0.0, measure: LevyMeasure::poisson(1.0, 1.0) };
        assert!(matches!(
            compensated_poisson_integral(&JumpIntegrand::Constant(1.0), &b, &spec),
            Err(Error::MissingJumpRecords)
        ));
        let x = simulate_stable_levy(&g, 0.8, 1.0, JumpThreshold::Absolute(0.5), 3, 1).unwrap();
        let spec = EnergySpec::PoissonMeasure { truncation: 0.5, measure: LevyMeasure::stable(0.8, 1.0).unwrap() };
        let v = JumpIntegrand::Linear { coef: 1.0, cap: None };
        assert!(matches!(compensated_poisson_integral(&v, &x, &spec), Err(Error::NonIntegrable(_))));
        let vg = JumpIntegrand::General(Arc::new(|_, z: f64| z));
        assert!(matches!(compensated_poisson_integral(&vg, &x, &spec), Err(Error::NonIntegrable(_))));
    }

    #[test]
    fn mixed_divergence_direct_sum() {
        let g = TimeGrid::new(1.0, 32).unwrap();
        let m = 100_000;
        let b = simulate_brownian(&g, m, 8).unwrap();
        let nu = LevyMeasure::poisson(3.0, 1.0);
        let p = simulate_compound_poisson(&g, &nu, m, 8).unwrap();
        let spec = EnergySpec::PoissonMeasure { truncation: 0.0, measure: nu };
        let one = AdaptedProcessSample::constant(g, m, 1.0);
        let v = JumpIntegrand::Constant(1.0);
        let (alpha, beta) = (0.7, 1.3);
        let mixed = mixed_divergence(
            ComponentIntegrand::Path(&one),
            ComponentIntegrand::Jump(&v, &spec),
            alpha,
            beta,
            &b,
            &p,
        )
        .unwrap();
        let target = alpha * alpha + beta * beta * 3.0;
        assert!(within(stats::variance_estimate(&mixed.values), target, 0.0));

        let db = ito_integral(&one, &b).unwrap();
        let dl = compensated_poisson_integral(&v, &p, &spec).unwrap();
        assert!(within(stats::covariance(&db.values, &dl.values), 0.0, 0.0));

        let degenerate = mixed_divergence(
            ComponentIntegrand::Path(&one),
            ComponentIntegrand::Jump(&v, &spec),
            alpha,
            0.0,
            &b,
            &p,
        )
        .unwrap();
        for (x, y) in degenerate.values.iter().zip(&db.values) {
            assert_eq!(*x, alpha * y);
        }

        let sum = EnergySpec::DirectSum(vec![(alpha * alpha, EnergySpec::BrownianLebesgue), (beta * beta, spec.clone())]);
        let parts = [
            energy_norm(&one, &EnergySpec::BrownianLebesgue, &b).unwrap(),
            Estimate::exact(jump_energy_norm(&v, &spec, 1.0).unwrap()),
        ];
        let total = direct_sum_energy_norm(&sum, &parts).unwrap();
        assert!((total.value - target).abs() < 1e-12);
        assert!(mixed_divergence(ComponentIntegrand::Path(&one), ComponentIntegrand::Path(&one), 1.0, 1.0, &b, &b).is_err());
    }

    #[test]
    fn spec_validation() {
        let bad = EnergySpec::PoissonMeasure { truncation: 0.0, measure: LevyMeasure::stable(1.5, 1.0).unwrap() };
        assert!(bad.validate().is_err());
        let neg = EnergySpec::DirectSum(vec![(-1.0, EnergySpec::BrownianLebesgue)]);
        assert!(neg.validate().is_err());
    }
}
