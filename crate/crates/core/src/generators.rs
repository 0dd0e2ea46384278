//! Generator-side checks: Fourier-multiplier evolution for the mixed
//! diffusion plus stable generator, Monte Carlo smoothing, and a
//! Crank-Nicolson backward Kolmogorov solver with a Feynman-Kac cross-check.

use ndarray::Array2;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::adjoint::{IdentityReport, ReportMetadata};
use crate::error::{Error, Result};
use crate::levy::stable_tail_bound;
use crate::numerics::normal_cdf;
use crate::numerics::stats::{self, Estimate};
use crate::randomness::{check_stable_index, sample_gaussian, sample_stable, Purpose, StreamKey};

/// Real samples on the periodic grid `x_j = -L + j h`, `h = 2L / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    half_width: f64,
    values: Vec<f64>,
}

impl SpectralField {
    pub fn new(half_width: f64, values: Vec<f64>) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::param("half_width", "must be positive"));
        }
        let n = values.len();
        if n < 16 || !n.is_power_of_two() {
            return Err(Error::param("resolution", format!("{n} is not a power of two >= 16")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spectral field values".into()));
        }
        Ok(Self { half_width, values })
    }

    pub fn from_fn(half_width: f64, resolution: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let h = 2.0 * half_width / resolution as f64;
        Self::new(half_width, (0..resolution).map(|j| f(-half_width + j as f64 * h)).collect())
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn resolution(&self) -> usize {
        self.values.len()
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.values.len() as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.spacing()
    }

    /// Value at `x`: the node value when `x` is a node, linear interpolation
    /// otherwise (periodic).
    pub fn value_at(&self, x: f64) -> f64 {
        let n = self.values.len();
        let s = (x + self.half_width) / self.spacing();
        let j = s.floor();
        let frac = s - j;
        let j = (j as i64).rem_euclid(n as i64) as usize;
        if frac.abs() < 1e-9 {
            return self.values[j];
        }
        if 1.0 - frac < 1e-9 {
            return self.values[(j + 1) % n];
        }
        (1.0 - frac) * self.values[j] + frac * self.values[(j + 1) % n]
    }

    /// `h * sum_j values_j`.
    pub fn mass(&self) -> f64 {
        stats::sum(&self.values) * self.spacing()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// CSV `x,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,value")?;
        for (j, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{v}", self.node(j))?;
        }
        Ok(())
    }
}

/// Weights of the generator `(alpha^2 / 2) Laplacian - c beta^gamma (-Laplacian)^(gamma/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub c_gamma: f64,
}

impl GeneratorParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64, c_gamma: f64) -> Result<Self> {
        let p = Self { alpha, beta, gamma, c_gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::param("alpha", "must be nonnegative"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::param("beta", "must be nonnegative"));
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return Err(Error::param("alpha", "alpha and beta cannot both be zero"));
        }
        check_stable_index(self.gamma)?;
        if !(self.c_gamma > 0.0 && self.c_gamma.is_finite()) {
            return Err(Error::param("c_gamma", "must be positive"));
        }
        Ok(())
    }

    /// Characteristic exponent `psi(xi)`: `E exp(i xi X_t) = exp(-t psi(xi))`.
    pub fn exponent(&self, xi: f64) -> f64 {
        let a = xi.abs();
        0.5 * self.alpha * self.alpha * a * a + self.c_gamma * self.beta.powf(self.gamma) * a.powf(self.gamma)
    }

    /// Bound on `P(|alpha B_t + beta L_t| > d)` from the union of the two
    /// half-distance events.
    pub fn escape_probability(&self, t: f64, d: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        if d <= 0.0 {
            return 1.0;
        }
        let mut p = 0.0;
        let half = if self.alpha > 0.0 && self.beta > 0.0 { 0.5 * d } else { d };
        if self.alpha > 0.0 {
            p += 2.0 * normal_cdf(-half / (self.alpha * t.sqrt()));
        }
        if self.beta > 0.0 {
            p += stable_tail_bound(self.gamma, self.c_gamma * self.beta.powf(self.gamma), t, half);
        }
        p.min(1.0)
    }
}

/// Bound on the periodization error at points `|x| <= probe_radius` for data
/// bounded by `sup_f` and supported in `|y| <= support_radius` on a box of
/// half-width `half_width`.
pub fn wrap_around_bound(
    params: &GeneratorParams,
    t: f64,
    half_width: f64,
    probe_radius: f64,
    support_radius: f64,
    sup_f: f64,
) -> f64 {
    sup_f * params.escape_probability(t, 2.0 * half_width - probe_radius - support_radius)
}

/// Exact-in-time evolution `u^(t, xi) = exp(-t psi(xi)) u^(0, xi)` on the
/// periodic box.
pub fn spectral_evolve(f0: &SpectralField, t: f64, params: &GeneratorParams) -> Result<SpectralField> {
    params.validate()?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::param("t", "must be nonnegative"));
    }
    if t == 0.0 {
        return Ok(f0.clone());
    }
    let n = f0.resolution();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex<f64>> = f0.values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fwd.process(&mut buf);
    let dxi = std::f64::consts::PI / f0.half_width;
    for (k, c) in buf.iter_mut().enumerate() {
        let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        *c *= (-t * params.exponent(kk * dxi)).exp();
    }
    inv.process(&mut buf);
    let scale = 1.0 / n as f64;
    SpectralField::new(f0.half_width, buf.iter().map(|c| c.re * scale).collect())
}

/// Common-random-number samples of `alpha B_t + beta L_t`.
pub fn smoothing_samples(t: f64, params: &GeneratorParams, m: usize, seed: u64) -> Result<Vec<f64>> {
    params.validate()?;
    if m == 0 {
        return Err(Error::param("paths", "at least one sample required"));
    }
    if !(t >= 0.0) {
        return Err(Error::param("t", "must be nonnegative"));
    }
    let mut out = vec![0.0; m];
    if t == 0.0 {
        return Ok(out);
    }
    if params.alpha > 0.0 {
        let mut s = StreamKey::for_path(seed, Purpose::SmoothingBrownian, 0).stream();
        let sd = params.alpha * t.sqrt();
        for (o, z) in out.iter_mut().zip(sample_gaussian(&mut s, m)) {
            *o += sd * z;
        }
    }
    if params.beta > 0.0 {
        let mut s = StreamKey::for_path(seed, Purpose::SmoothingStable, 0).stream();
        for (o, l) in out.iter_mut().zip(sample_stable(&mut s, params.gamma, params.c_gamma * t, m)?) {
            *o += params.beta * l;
        }
    }
    Ok(out)
}

/// `u(t, x) = E f(x + alpha B_t + beta L_t)` at each `x`, with standard errors.
pub fn mc_smoothing<F>(
    f: F,
    t: f64,
    params: &GeneratorParams,
    xs: &[f64],
    m: usize,
    seed: u64,
) -> Result<Vec<Estimate>>
where
    F: Fn(f64) -> f64 + Sync,
{
    let samples = smoothing_samples(t, params, m, seed)?;
    Ok(xs
        .par_iter()
        .map(|&x| {
            let vals: Vec<f64> = samples.iter().map(|s| f(x + s)).collect();
            Estimate::of_mean(&vals)
        })
        .collect())
}

/// Spectral evolution against Monte Carlo smoothing at probe points. Each
/// probe passes when `|spectral - MC| <= 4 SE + max(1e-4, wrap bound)`; the
/// report carries the probe with the largest discrepancy-to-tolerance ratio.
#[allow(clippy::too_many_arguments)]
pub fn generator_consistency_check<F>(
    name: &str,
    f: F,
    support_radius: f64,
    params: &GeneratorParams,
    t: f64,
    half_width: f64,
    resolution: usize,
    probes: &[f64],
    m: usize,
    seed: u64,
) -> Result<IdentityReport>
where
    F: Fn(f64) -> f64 + Sync,
{
    let field = SpectralField::from_fn(half_width, resolution, &f)?;
    let evolved = spectral_evolve(&field, t, params)?;
    let mc = mc_smoothing(&f, t, params, probes, m, seed)?;
    let probe_radius = probes.iter().fold(0.0, |r: f64, x| r.max(x.abs()));
    let wrap = wrap_around_bound(params, t, half_width, probe_radius, support_radius, field.sup_norm());
    let floor = wrap.max(1e-4);
    let mut worst: Option<(f64, f64, f64, f64)> = None;
    for (x, est) in probes.iter().zip(&mc) {
        let s = evolved.value_at(*x);
        let tol = 4.0 * est.std_error + floor;
        let ratio = (s - est.value).abs() / tol;
        if worst.map_or(true, |w| ratio > w.0) {
            worst = Some((ratio, s, est.value, est.std_error));
        }
    }
    let (_, s, mcv, se) = worst.ok_or(Error::param("probes", "at least one probe point required"))?;
    Ok(IdentityReport::new(
        name,
        mcv,
        s,
        se,
        4.0 * se + floor,
        ReportMetadata { num_paths: m, steps: resolution, basis_size: 0, seed },
    ))
}

/// Space-time mesh for the backward Kolmogorov solver: `nx` nodes on
/// `[x_lo, x_hi]` and `nt` nodes on `[0, horizon]`, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KolmogorovGrid {
    pub x_lo: f64,
    pub x_hi: f64,
    pub nx: usize,
    pub nt: usize,
    pub horizon: f64,
}

impl KolmogorovGrid {
    pub fn new(x_lo: f64, x_hi: f64, nx: usize, nt: usize, horizon: f64) -> Result<Self> {
        let g = Self { x_lo, x_hi, nx, nt, horizon };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_lo < self.x_hi) || !self.x_lo.is_finite() || !self.x_hi.is_finite() {
            return Err(Error::param("x_lo", "need a finite interval with x_lo < x_hi"));
        }
        if self.nx < 8 {
            return Err(Error::param("nx", "need at least 8 space nodes"));
        }
        if self.nt < 2 {
            return Err(Error::param("nt", "need at least 2 time nodes"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::param("horizon", "must be positive"));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_hi - self.x_lo) / (self.nx - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        self.horizon / (self.nt - 1) as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        if j == self.nx - 1 {
            self.x_hi
        } else {
            self.x_lo + j as f64 * self.dx()
        }
    }

    pub fn t(&self, n: usize) -> f64 {
        if n == self.nt - 1 {
            self.horizon
        } else {
            n as f64 * self.dt()
        }
    }

    /// Same interval and horizon with both spacings halved.
    pub fn refined(&self) -> Self {
        Self { nx: 2 * self.nx - 1, nt: 2 * self.nt - 1, ..*self }
    }

    fn time_index(&self, t: f64) -> Result<usize> {
        let s = t / self.dt();
        let n = s.round();
        if !((s - n).abs() < 1e-9) || n < 0.0 || n as usize >= self.nt {
            return Err(Error::param("t", format!("{t} is not a time node of the grid")));
        }
        Ok(n as usize)
    }
}

/// `u(t_n, x_j)` as an `nt x nx` table.
#[derive(Debug, Clone, PartialEq)]
pub struct KolmogorovTable {
    pub grid: KolmogorovGrid,
    pub values: Array2<f64>,
}

impl KolmogorovTable {
    /// `u(t, x)` for a time node `t`, linear in `x` between space nodes.
    pub fn value_at(&self, t: f64, x: f64) -> Result<f64> {
        let n = self.grid.time_index(t)?;
        if !(x >= self.grid.x_lo && x <= self.grid.x_hi) {
            return Err(Error::param("x", format!("{x} outside the solver interval")));
        }
        let s = (x - self.grid.x_lo) / self.grid.dx();
        let j = (s.floor() as usize).min(self.grid.nx - 2);
        let frac = s - j as f64;
        let row = self.values.row(n);
        if frac.abs() < 1e-9 {
            return Ok(row[j]);
        }
        Ok((1.0 - frac) * row[j] + frac * row[j + 1])
    }

    /// CSV `t,x,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x,value")?;
        for n in 0..self.grid.nt {
            for j in 0..self.grid.nx {
                writeln!(w, "{},{},{}", self.grid.t(n), self.grid.x(j), self.values[(n, j)])?;
            }
        }
        Ok(())
    }
}

/// Solves `u_t + b u_x + (sigma^2 / 2) u_xx = 0`, `u(T) = f`, backward with
/// Crank-Nicolson and central differences. Boundary values stay at `f`.
pub fn kolmogorov_solve(
    b: &(dyn Fn(f64) -> f64 + Sync),
    sigma: &(dyn Fn(f64) -> f64 + Sync),
    f: &(dyn Fn(f64) -> f64 + Sync),
    grid: &KolmogorovGrid,
) -> Result<KolmogorovTable> {
    grid.validate()?;
    let (nx, nt) = (grid.nx, grid.nt);
    let (dx, dt) = (grid.dx(), grid.dt());
    let xs: Vec<f64> = (0..nx).map(|j| grid.x(j)).collect();
    let terminal: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    if terminal.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("terminal data".into()));
    }
    // L u_j = lo_j u_{j-1} + di_j u_j + up_j u_{j+1}
    let mut lo = vec![0.0; nx];
    let mut di = vec![0.0; nx];
    let mut up = vec![0.0; nx];
    for j in 1..nx - 1 {
        let a = 0.5 * sigma(xs[j]).powi(2);
        let v = b(xs[j]);
        if !a.is_finite() || !v.is_finite() {
            return Err(Error::NonFinite(format!("coefficients at x = {}", xs[j])));
        }
        lo[j] = a / (dx * dx) - v / (2.0 * dx);
        di[j] = -2.0 * a / (dx * dx);
        up[j] = a / (dx * dx) + v / (2.0 * dx);
    }
    let sup_terminal = terminal.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    let limit = 10.0 * sup_terminal.max(f64::MIN_POSITIVE);

    let mut values = Array2::zeros((nt, nx));
    values.row_mut(nt - 1).assign(&ndarray::ArrayView1::from(&terminal));
    let mut u = terminal.clone();
    let mut rhs = vec![0.0; nx];
    let (mut sub, mut diag, mut sup) = (vec![0.0; nx], vec![0.0; nx], vec![0.0; nx]);
    for j in 1..nx - 1 {
        sub[j] = -0.5 * dt * lo[j];
        diag[j] = 1.0 - 0.5 * dt * di[j];
        sup[j] = -0.5 * dt * up[j];
    }
    diag[0] = 1.0;
    diag[nx - 1] = 1.0;
    for n in (0..nt - 1).rev() {
        rhs[0] = terminal[0];
        rhs[nx - 1] = terminal[nx - 1];
        for j in 1..nx - 1 {
            rhs[j] = u[j] + 0.5 * dt * (lo[j] * u[j - 1] + di[j] * u[j] + up[j] * u[j + 1]);
        }
        u = thomas(&sub, &diag, &sup, &rhs);
        let peak = u.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        if !(peak <= limit) {
            return Err(Error::Unstable(format!(
                "sup-norm {peak:e} at t = {} exceeds 10x the terminal sup {sup_terminal:e}",
                grid.t(n)
            )));
        }
        values.row_mut(n).assign(&ndarray::ArrayView1::from(&u));
    }
    Ok(KolmogorovTable { grid: *grid, values })
}

/// Tridiagonal solve; `sub[0]` and `sup[n-1]` are ignored.
fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i] * c[i - 1];
        c[i] = if i + 1 < n { sup[i] / m } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Monte Carlo `E f(X_T) | X_t = x` by Euler-Maruyama with `steps` steps,
/// returning the estimate and the paired fine-minus-coarse mean (the coarse
/// scheme uses summed pairs of the same increments), which estimates the
/// Euler bias of the coarse scheme.
#[allow(clippy::too_many_arguments)]
fn euler_expectation(
    b: &(dyn Fn(f64) -> f64 + Sync),
    sigma: &(dyn Fn(f64) -> f64 + Sync),
    f: &(dyn Fn(f64) -> f64 + Sync),
    t: f64,
    x: f64,
    horizon: f64,
    steps: usize,
    m: usize,
    seed: u64,
    probe: u64,
) -> Result<(Estimate, f64)> {
    let fine = 2 * steps;
    let dt = (horizon - t) / fine as f64;
    let sd = dt.sqrt();
    let pairs: Vec<(f64, f64)> = (0..m)
        .into_par_iter()
        .map(|r| {
            let mut s = StreamKey::for_path(seed, Purpose::FeynmanKac, probe * m as u64 + r as u64).stream();
            let (mut xf, mut xc) = (x, x);
            for _ in 0..steps {
                let w1 = sd * s.gaussian();
                let w2 = sd * s.gaussian();
                xf = xf + b(xf) * dt + sigma(xf) * w1;
                xf = xf + b(xf) * dt + sigma(xf) * w2;
                xc = xc + b(xc) * 2.0 * dt + sigma(xc) * (w1 + w2);
            }
            (f(xf), f(xc))
        })
        .collect();
    if pairs.iter().any(|(a, c)| !a.is_finite() || !c.is_finite()) {
        let count = pairs.iter().filter(|(a, c)| !a.is_finite() || !c.is_finite()).count();
        let first = pairs.iter().position(|(a, c)| !a.is_finite() || !c.is_finite()).unwrap_or(0);
        return Err(Error::Diverged { count, total: m, first });
    }
    let fine_vals: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let diffs: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
    Ok((Estimate::of_mean(&fine_vals), stats::mean(&diffs)))
}

/// Per-probe detail of a Feynman-Kac comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeynmanKacProbe {
    pub t: f64,
    pub x: f64,
    pub pde: f64,
    pub monte_carlo: f64,
    pub std_error: f64,
    /// `|u(dx, dt) - u(dx/2, dt/2)|` at the probe.
    pub pde_scheme_error: f64,
    /// `|E f(X^fine) - E f(X^coarse)|` with shared increments.
    pub euler_scheme_error: f64,
    pub tolerance: f64,
}

/// Monte Carlo diffusion from each probe `(t, x)` against the PDE table.
/// Tolerance per probe: `4 SE + PDE scheme error + Euler scheme error`; the
/// report carries the probe with the largest discrepancy-to-tolerance ratio.
#[allow(clippy::too_many_arguments)]
pub fn feynman_kac_check(
    name: &str,
    b: &(dyn Fn(f64) -> f64 + Sync),
    sigma: &(dyn Fn(f64) -> f64 + Sync),
    f: &(dyn Fn(f64) -> f64 + Sync),
    grid: &KolmogorovGrid,
    probes: &[(f64, f64)],
    euler_steps: usize,
    m: usize,
    seed: u64,
) -> Result<(IdentityReport, Vec<FeynmanKacProbe>)> {
    if euler_steps == 0 || m < 2 {
        return Err(Error::param("paths", "need at least one Euler step and two paths"));
    }
    let table = kolmogorov_solve(b, sigma, f, grid)?;
    let fine = kolmogorov_solve(b, sigma, f, &grid.refined())?;
    let mut details = Vec::with_capacity(probes.len());
    for (p, &(t, x)) in probes.iter().enumerate() {
        let pde = table.value_at(t, x)?;
        let pde_err = (pde - fine.value_at(t, x)?).abs();
        let (mc, bias) = euler_expectation(b, sigma, f, t, x, grid.horizon, euler_steps, m, seed, p as u64)?;
        details.push(FeynmanKacProbe {
            t,
            x,
            pde,
            monte_carlo: mc.value,
            std_error: mc.std_error,
            pde_scheme_error: pde_err,
            euler_scheme_error: bias.abs(),
            tolerance: 4.0 * mc.std_error + pde_err + bias.abs(),
        });
    }
    let worst = details
        .iter()
        .max_by(|a, c| {
            let ra = (a.pde - a.monte_carlo).abs() / a.tolerance;
            let rc = (c.pde - c.monte_carlo).abs() / c.tolerance;
            ra.total_cmp(&rc)
        })
        .ok_or(Error::param("probes", "at least one probe required"))?;
    let report = IdentityReport::new(
        name,
        worst.monte_carlo,
        worst.pde,
        worst.std_error,
        worst.tolerance,
        ReportMetadata { num_paths: m, steps: 2 * euler_steps, basis_size: 0, seed },
    );
    Ok((report, details))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::quad;
    use std::f64::consts::PI;

    fn gaussian_density(var: f64) -> impl Fn(f64) -> f64 {
        move |x| (-x * x / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
    }

    #[test]
    fn zero_time_is_identity() {
        let f = SpectralField::from_fn(8.0, 64, gaussian_density(0.25)).unwrap();
        let p = GeneratorParams::new(1.0, 1.0, 1.5, 1.0).unwrap();
        assert_eq!(spectral_evolve(&f, 0.0, &p).unwrap(), f);
    }

    #[test]
    fn heat_kernel_convolution() {
        let p = GeneratorParams::new(1.0, 0.0, 1.0, 1.0).unwrap();
        let (l, n, t) = (20.0, 1024, 0.7);
        let f = SpectralField::from_fn(l, n, gaussian_density(0.25)).unwrap();
        let u = spectral_evolve(&f, t, &p).unwrap();
        let exact = gaussian_density(0.25 + t);
        let wrap = wrap_around_bound(&p, t, l, l, 6.0, f.sup_norm()) + exact(l);
        for j in 0..n {
            assert!((u.values()[j] - exact(u.node(j))).abs() <= 1e-6 + wrap, "{j}");
        }
    }

    #[test]
    fn cauchy_semigroup_convolution() {
        let p = GeneratorParams::new(0.0, 1.0, 1.0, 1.0).unwrap();
        let t = 0.1;
        let (l, n) = (2048.0, 1 << 17);
        let f0 = gaussian_density(0.25);
        let f = SpectralField::from_fn(l, n, &f0).unwrap();
        let u = spectral_evolve(&f, t, &p).unwrap();
        let wrap = wrap_around_bound(&p, t, l, 4.0, 6.0, f.sup_norm());
        assert!(wrap < 1e-4, "{wrap}");
        for x in [-4.0, -1.5, 0.0, 0.5, 2.0, 4.0] {
            let poisson = |y: f64| f0(y) * t / (PI * ((x - y) * (x - y) + t * t));
            let exact = quad::integrate(poisson, -8.0, 8.0, 1e-12, 1e-15).unwrap();
            assert!((u.value_at(x) - exact).abs() <= 1e-4 + wrap, "x={x}: {} vs {exact}", u.value_at(x));
        }
    }

    #[test]
    fn semigroup_mass_and_maximum() {
        let p = GeneratorParams::new(0.7, 1.2, 1.3, 0.8).unwrap();
        let f = SpectralField::from_fn(16.0, 512, gaussian_density(0.3)).unwrap();
        let a = spectral_evolve(&spectral_evolve(&f, 0.2, &p).unwrap(), 0.3, &p).unwrap();
        let b = spectral_evolve(&f, 0.5, &p).unwrap();
        let scale = b.sup_norm();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-12 * scale);
        }
        assert!((b.mass() - f.mass()).abs() < 1e-12);
        assert!(b.sup_norm() <= f.sup_norm() * (1.0 + 1e-12));
    }

    #[test]
    fn smoothing_examples() {
        let xs = [-1.0, 0.0, 0.4, 2.0];
        let p = GeneratorParams::new(1.0, 0.7, 1.5, 1.0).unwrap();
        let ones = mc_smoothing(|_| 1.0, 0.5, &p, &xs, 1000, 1).unwrap();
        assert!(ones.iter().all(|e| e.value == 1.0));

        let t = 0.8;
        let heat = GeneratorParams::new(1.0, 0.0, 1.5, 1.0).unwrap();
        let est = mc_smoothing(f64::cos, t, &heat, &xs, 200_000, 2).unwrap();
        for (x, e) in xs.iter().zip(&est) {
            assert!((e.value - x.cos() * (-t / 2.0).exp()).abs() <= 4.0 * e.std_error, "{x}");
        }
        let stable = GeneratorParams::new(0.0, 1.0, 1.5, 1.0).unwrap();
        let est = mc_smoothing(f64::cos, t, &stable, &xs, 200_000, 3).unwrap();
        for (x, e) in xs.iter().zip(&est) {
            assert!((e.value - x.cos() * (-t).exp()).abs() <= 4.0 * e.std_error, "{x}");
        }
    }

    #[test]
    fn mixed_generator_consistency() {
        let bump = |x: f64| (-x * x / 0.5).exp();
        let probes: Vec<f64> = (-4..=4).map(|k| k as f64 * 0.5).collect();
        for (a, b) in [(1.0, 1.0), (1.0, 0.0), (0.0, 1.0)] {
            let p = GeneratorParams::new(a, b, 1.5, 1.0).unwrap();
            let r = generator_consistency_check("mixed", bump, 6.0, &p, 0.5, 512.0, 1 << 14, &probes, 100_000, 4)
                .unwrap();
            assert!(r.passed(), "{a} {b}: {r:?}");
        }
    }

    #[test]
    fn kolmogorov_closed_forms() {
        let zero = |_: f64| 0.0;
        let one = |_: f64| 1.0;
        let g = KolmogorovGrid::new(-10.0, 10.0, 401, 101, 1.0).unwrap();
        let lin = kolmogorov_solve(&zero, &one, &|x| x, &g).unwrap();
        for n in 0..g.nt {
            for j in 0..g.nx {
                assert!((lin.values[(n, j)] - g.x(j)).abs() < 1e-8);
            }
        }
        let sq = kolmogorov_solve(&zero, &one, &|x| x * x, &g).unwrap();
        assert!((sq.value_at(0.0, 0.0).unwrap() - 1.0).abs() < 1e-3);
        let s = kolmogorov_solve(&zero, &one, &f64::sin, &g).unwrap();
        for j in 0..g.nx {
            let x = g.x(j);
            if x.abs() <= 5.0 {
                assert!((s.values[(0, j)] - x.sin() * (-0.5f64).exp()).abs() < 1e-3, "{x}");
            }
        }
    }

    #[test]
    fn unstable_march_detected() {
        // convection-dominated central differences with large steps grow
        let g = KolmogorovGrid::new(-1.0, 1.0, 41, 20, 1.0).unwrap();
        let drift = |x: f64| 5000.0 * x;
        let r = kolmogorov_solve(&drift, &|_| 0.01, &|x: f64| (3.0 * x).sin(), &g);
        assert!(matches!(r, Err(Error::Unstable(_))), "{r:?}");
    }

    #[test]
    fn feynman_kac_examples() {
        let zero = |_: f64| 0.0;
        let one = |_: f64| 1.0;
        let g = KolmogorovGrid::new(-8.0, 8.0, 321, 101, 1.0).unwrap();
        let (r, _) = feynman_kac_check("linear", &zero, &one, &|x| x, &g, &[(0.0, 0.3), (0.5, -1.0)], 32, 20_000, 1)
            .unwrap();
        assert!(r.passed(), "{r:?}");

        let ou = |x: f64| -x;
        let (r, d) = feynman_kac_check("ou", &ou, &one, &|x| x * x, &g, &[(0.0, 1.0)], 64, 100_000, 2).unwrap();
        assert!(r.passed(), "{r:?}");
        let target = (-2.0f64).exp() + (1.0 - (-2.0f64).exp()) / 2.0;
        assert!((d[0].pde - target).abs() < 1e-3, "{}", d[0].pde);

        let gg = KolmogorovGrid::new(0.0, 6.0, 301, 101, 1.0).unwrap();
        let (r, d) = feynman_kac_check(
            "gbm",
            &|x| 0.1 * x,
            &|x| 0.2 * x,
            &|x| x,
            &gg,
            &[(0.0, 1.0)],
            64,
            100_000,
            3,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
        assert!((d[0].pde - 0.1f64.exp()).abs() <= d[0].tolerance);
    }
}
