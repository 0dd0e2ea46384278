//! Path ensembles of the driving processes on a uniform time grid.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::levy::{stable_density_coefficient, LevyMeasure};
use crate::randomness::{check_stable_index, Purpose, StreamKey};

pub mod io;

/// Uniform grid `t_i = i T / N`, `i = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::param("horizon", format!("must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::param("steps", "must be at least 1"));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            i as f64 * self.horizon / self.steps as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.node(i)).collect()
    }
}

/// Which process an ensemble holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessLabel {
    Brownian,
    Fbm { hurst: f64 },
    Volterra,
    Diffusion,
    Stable { gamma: f64, c_gamma: f64 },
    Poisson { rate: f64 },
    Scaled { factor: f64, inner: Box<ProcessLabel> },
    Mixed { alpha: f64, beta: f64, a: Box<ProcessLabel>, b: Box<ProcessLabel> },
    Custom { name: String },
}

impl fmt::Display for ProcessLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProcessLabel::Brownian => write!(f, "brownian"),
            ProcessLabel::Fbm { hurst } => write!(f, "fbm({hurst})"),
            ProcessLabel::Volterra => write!(f, "volterra"),
            ProcessLabel::Diffusion => write!(f, "diffusion"),
            ProcessLabel::Stable { gamma, .. } => write!(f, "stable({gamma})"),
            ProcessLabel::Poisson { rate } => write!(f, "poisson({rate})"),
            ProcessLabel::Scaled { factor, inner } => write!(f, "{factor}*{inner}"),
            ProcessLabel::Mixed { alpha, beta, a, b } => write!(f, "{alpha}*{a}+{beta}*{b}"),
            ProcessLabel::Custom { name } => write!(f, "{name}"),
        }
    }
}

/// A recorded jump `(time, size)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub time: f64,
    pub size: f64,
}

/// A random source consumed by an ensemble, used to reject mixtures of
/// components that share noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseSource {
    pub master_seed: u64,
    pub purpose: Purpose,
}

/// `M` simulated paths on a [`TimeGrid`], stored row-major `M x (N+1)`.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    grid: TimeGrid,
    paths: Array2<f64>,
    label: ProcessLabel,
    initial_value: f64,
    increments: Option<Array2<f64>>,
    jumps: Option<Vec<Vec<Jump>>>,
    jump_threshold: Option<f64>,
    sources: Vec<NoiseSource>,
}

impl PathEnsemble {
    /// Wraps an explicit path matrix. Column 0 must be constant.
    pub fn from_matrix(grid: TimeGrid, paths: Array2<f64>, label: ProcessLabel) -> Result<Self> {
        if paths.ncols() != grid.steps() + 1 {
            return Err(Error::ShapeMismatch(format!(
                "path matrix has {} columns, grid needs {}",
                paths.ncols(),
                grid.steps() + 1
            )));
        }
        let paths = paths.as_standard_layout().into_owned();
        let initial_value = paths.first().copied().unwrap_or(0.0);
        if paths.column(0).iter().any(|&x| x != initial_value) {
            return Err(Error::ShapeMismatch("paths start from different values".into()));
        }
        Ok(Self {
            grid,
            paths,
            label,
            initial_value,
            increments: None,
            jumps: None,
            jump_threshold: None,
            sources: Vec::new(),
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn num_paths(&self) -> usize {
        self.paths.nrows()
    }

    pub fn label(&self) -> &ProcessLabel {
        &self.label
    }

    pub fn initial_value(&self) -> f64 {
        self.initial_value
    }

    pub fn paths(&self) -> &Array2<f64> {
        &self.paths
    }

    pub fn path(&self, m: usize) -> ArrayView1<'_, f64> {
        self.paths.row(m)
    }

    /// `X_{t_i}` across paths.
    pub fn column(&self, i: usize) -> ArrayView1<'_, f64> {
        self.paths.column(i)
    }

    pub fn terminal(&self) -> Vec<f64> {
        self.paths.column(self.grid.steps()).to_vec()
    }

    /// Driving Brownian increments, when the process was built from them.
    pub fn increments(&self) -> Option<&Array2<f64>> {
        self.increments.as_ref()
    }

    pub fn jumps(&self) -> Option<&[Vec<Jump>]> {
        self.jumps.as_deref()
    }

    /// Threshold below which jumps were not recorded.
    pub fn jump_threshold(&self) -> Option<f64> {
        self.jump_threshold
    }

    pub fn sources(&self) -> &[NoiseSource] {
        &self.sources
    }

    /// Master seed of the first noise source (0 for deterministic ensembles).
    pub fn seed(&self) -> u64 {
        self.sources.first().map(|s| s.master_seed).unwrap_or(0)
    }

    pub fn with_jumps(mut self, jumps: Vec<Vec<Jump>>, threshold: f64) -> Result<Self> {
        if jumps.len() != self.num_paths() {
            return Err(Error::ShapeMismatch("one jump list per path required".into()));
        }
        let t_max = self.grid.horizon();
        if jumps.iter().flatten().any(|j| !(j.time > 0.0 && j.time <= t_max)) {
            return Err(Error::param("jumps", "jump times must lie in (0, T]"));
        }
        self.jumps = Some(jumps);
        self.jump_threshold = Some(threshold);
        Ok(self)
    }

    /// Pathwise `c X`.
    pub fn scaled(&self, factor: f64) -> PathEnsemble {
        let mut out = self.clone();
        out.paths.mapv_inplace(|x| factor * x);
        out.initial_value *= factor;
        out.increments = None;
        if let Some(jumps) = out.jumps.as_mut() {
            for j in jumps.iter_mut().flatten() {
                j.size *= factor;
            }
            out.jump_threshold = out.jump_threshold.map(|e| e * factor.abs());
        }
        out.label = ProcessLabel::Scaled { factor, inner: Box::new(self.label.clone()) };
        out
    }

    /// Keeps every `factor`-th grid node; driving increments are summed.
    pub fn coarsen(&self, factor: usize) -> Result<PathEnsemble> {
        if factor == 0 || self.grid.steps() % factor != 0 {
            return Err(Error::param("factor", "must divide the number of steps"));
        }
        let grid = TimeGrid::new(self.grid.horizon(), self.grid.steps() / factor)?;
        let cols: Vec<usize> = (0..=grid.steps()).map(|j| j * factor).collect();
        let paths = self.paths.select(Axis(1), &cols).as_standard_layout().into_owned();
        let increments = self.increments.as_ref().map(|inc| {
            Array2::from_shape_fn((inc.nrows(), grid.steps()), |(m, j)| {
                (0..factor).fold(0.0, |acc, r| acc + inc[(m, j * factor + r)])
            })
        });
        Ok(PathEnsemble { grid, paths, increments, ..self.clone() })
    }
}

/// Fills an `m x width` row-major buffer in parallel; row `r` is produced by
/// `fill(r, row)`. Output does not depend on the thread count.
fn par_rows<F>(m: usize, width: usize, fill: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let mut data = vec![0.0; m * width];
    if width > 0 {
        data.par_chunks_mut(width).enumerate().for_each(|(r, row)| fill(r, row));
    }
    data
}

fn check_count(m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::param("paths", "at least one path required"));
    }
    Ok(())
}

fn driving_increments(grid: &TimeGrid, m: usize, seed: u64) -> Array2<f64> {
    let n = grid.steps();
    let sd = grid.dt().sqrt();
    let data = par_rows(m, n, |r, row| {
        let mut s = StreamKey::for_path(seed, Purpose::DrivingNoise, r as u64).stream();
        for w in row.iter_mut() {
            *w = sd * s.gaussian();
        }
    });
    Array2::from_shape_vec((m, n), data).expect("shape")
}

fn noise(seed: u64, purpose: Purpose) -> NoiseSource {
    NoiseSource { master_seed: seed, purpose }
}

/// Standard Brownian motion, `B_0 = 0`.
pub fn simulate_brownian(grid: &TimeGrid, m: usize, seed: u64) -> Result<PathEnsemble> {
    check_count(m)?;
    let n = grid.steps();
    let inc = driving_increments(grid, m, seed);
    let data = par_rows(m, n + 1, |r, row| {
        let mut b = 0.0;
        row[0] = b;
        for i in 0..n {
            b += inc[(r, i)];
            row[i + 1] = b;
        }
    });
    Ok(PathEnsemble {
        grid: *grid,
        paths: Array2::from_shape_vec((m, n + 1), data).expect("shape"),
        label: ProcessLabel::Brownian,
        initial_value: 0.0,
        increments: Some(inc),
        jumps: None,
        jump_threshold: None,
        sources: vec![noise(seed, Purpose::DrivingNoise)],
    })
}

/// Hurst index in (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HurstParameter(f64);

impl HurstParameter {
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.0 && h < 1.0) {
            return Err(Error::param("hurst", format!("must lie in (0, 1), got {h}")));
        }
        Ok(Self(h))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// Fractional Brownian covariance `R_H(s, t)`.
pub fn fbm_covariance(h: f64, s: f64, t: f64) -> f64 {
    let two_h = 2.0 * h;
    0.5 * (s.powf(two_h) + t.powf(two_h) - (t - s).abs().powf(two_h))
}

/// Lower Cholesky factor of `R_H` on `t_1..t_N`. Adds diagonal jitter (up to
/// `1e-8` of the largest variance) when the plain factorization fails.
fn fbm_cholesky(grid: &TimeGrid, h: f64) -> Result<Vec<f64>> {
    let n = grid.steps();
    let t: Vec<f64> = (1..=n).map(|i| grid.node(i)).collect();
    let cov = DMatrix::from_fn(n, n, |j, k| fbm_covariance(h, t[j], t[k]));
    let scale = (0..n).map(|j| cov[(j, j)]).fold(0.0, f64::max);
    let mut jitter = 0.0;
    loop {
        let mut a = cov.clone();
        for j in 0..n {
            a[(j, j)] += jitter;
        }
        if let Some(chol) = a.cholesky() {
            if jitter > 0.0 {
                log::warn!("fbm covariance regularized with jitter {jitter:e}");
            }
            let l = chol.l();
            let mut flat = vec![0.0; n * n];
            for j in 0..n {
                for k in 0..=j {
                    flat[j * n + k] = l[(j, k)];
                }
            }
            return Ok(flat);
        }
        jitter = if jitter == 0.0 { 1e-14 * scale } else { jitter * 10.0 };
        if jitter > 1e-8 * scale {
            return Err(Error::Factorization(format!(
                "fbm covariance with H = {h} on {n} nodes is not positive definite"
            )));
        }
    }
}

/// Fractional Brownian motion by exact Cholesky factorization of its
/// covariance on the grid. Cost is `O(N^3 + M N^2)`.
pub fn simulate_fbm(grid: &TimeGrid, hurst: HurstParameter, m: usize, seed: u64) -> Result<PathEnsemble> {
    check_count(m)?;
    let n = grid.steps();
    let h = hurst.value();
    let chol = fbm_cholesky(grid, h)?;
    let data = par_rows(m, n + 1, |r, row| {
        let mut s = StreamKey::for_path(seed, Purpose::FbmNoise, r as u64).stream();
        let z: Vec<f64> = (0..n).map(|_| s.gaussian()).collect();
        row[0] = 0.0;
        for j in 0..n {
            let lrow = &chol[j * n..j * n + j + 1];
            row[j + 1] = lrow.iter().zip(&z).fold(0.0, |acc, (l, zk)| acc + l * zk);
        }
    });
    Ok(PathEnsemble {
        grid: *grid,
        paths: Array2::from_shape_vec((m, n + 1), data).expect("shape"),
        label: ProcessLabel::Fbm { hurst: h },
        initial_value: 0.0,
        increments: None,
        jumps: None,
        jump_threshold: None,
        sources: vec![noise(seed, Purpose::FbmNoise)],
    })
}

/// Kernel `K(t, s)` on `0 <= s <= t <= T`.
pub struct VolterraKernel<'a> {
    eval: Box<dyn Fn(f64, f64) -> f64 + Sync + 'a>,
}

impl<'a> VolterraKernel<'a> {
    pub fn new(eval: impl Fn(f64, f64) -> f64 + Sync + 'a) -> Self {
        Self { eval: Box::new(eval) }
    }

    pub fn eval(&self, t: f64, s: f64) -> f64 {
        (self.eval)(t, s)
    }

    /// Kernel matrix `K(t_j, t_i)` for `i < j`, row-major `N x N` with row
    /// `j - 1` holding node `t_j`. Also returns `max_j sum_{i<j} K^2 dt`.
    fn discretize(&self, grid: &TimeGrid) -> Result<(Vec<f64>, f64)> {
        let n = grid.steps();
        let dt = grid.dt();
        let mut mat = vec![0.0; n * n];
        let mut worst: f64 = 0.0;
        for j in 1..=n {
            let mut energy = 0.0;
            for i in 0..j {
                let k = self.eval(grid.node(j), grid.node(i));
                if !k.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "kernel at (t, s) = ({}, {})",
                        grid.node(j),
                        grid.node(i)
                    )));
                }
                mat[(j - 1) * n + i] = k;
                energy += k * k * dt;
            }
            worst = worst.max(energy);
        }
        if !worst.is_finite() {
            return Err(Error::NonFinite("kernel is not square integrable on the grid".into()));
        }
        Ok((mat, worst))
    }
}

/// Volterra process `X_{t_j} = sum_{i<j} K(t_j, t_i) dW_i`.
pub fn simulate_volterra(
    grid: &TimeGrid,
    kernel: &VolterraKernel<'_>,
    m: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    check_count(m)?;
    let n = grid.steps();
    let (kmat, _) = kernel.discretize(grid)?;
    let inc = driving_increments(grid, m, seed);
    let data = par_rows(m, n + 1, |r, row| {
        row[0] = 0.0;
        for j in 1..=n {
            let krow = &kmat[(j - 1) * n..(j - 1) * n + j];
            let mut acc = 0.0;
            for (i, k) in krow.iter().enumerate() {
                acc += k * inc[(r, i)];
            }
            row[j] = acc;
        }
    });
    Ok(PathEnsemble {
        grid: *grid,
        paths: Array2::from_shape_vec((m, n + 1), data).expect("shape"),
        label: ProcessLabel::Volterra,
        initial_value: 0.0,
        increments: Some(inc),
        jumps: None,
        jump_threshold: None,
        sources: vec![noise(seed, Purpose::DrivingNoise)],
    })
}

/// Euler-Maruyama for `dX = b(X) dt + sigma(X) dW`.
pub fn simulate_diffusion(
    grid: &TimeGrid,
    drift: &(dyn Fn(f64) -> f64 + Sync),
    vol: &(dyn Fn(f64) -> f64 + Sync),
    x0: f64,
    m: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    check_count(m)?;
    let n = grid.steps();
    let dt = grid.dt();
    let inc = driving_increments(grid, m, seed);
    let data = par_rows(m, n + 1, |r, row| {
        let mut x = x0;
        row[0] = x;
        for i in 0..n {
            x = x + drift(x) * dt + vol(x) * inc[(r, i)];
            row[i + 1] = x;
        }
    });
    let paths = Array2::from_shape_vec((m, n + 1), data).expect("shape");
    let bad: Vec<usize> = paths
        .outer_iter()
        .enumerate()
        .filter(|(_, row)| row.iter().any(|x| !x.is_finite()))
        .map(|(r, _)| r)
        .collect();
    if let Some(&first) = bad.first() {
        return Err(Error::Diverged { count: bad.len(), total: m, first });
    }
    Ok(PathEnsemble {
        grid: *grid,
        paths,
        label: ProcessLabel::Diffusion,
        initial_value: x0,
        increments: Some(inc),
        jumps: None,
        jump_threshold: None,
        sources: vec![noise(seed, Purpose::DrivingNoise)],
    })
}

/// How the large-jump records of a stable ensemble are thresholded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpThreshold {
    /// Threshold such that the expected number of recorded jumps per path is
    /// this count.
    ExpectedCount(f64),
    Absolute(f64),
    Disabled,
}

impl Default for JumpThreshold {
    fn default() -> Self {
        JumpThreshold::ExpectedCount(1000.0)
    }
}

/// Symmetric stable Levy process with `E exp(i xi L_t) = exp(-t c |xi|^gamma)`.
///
/// Increments are exact Chambers-Mallows-Stuck draws. The recorded jumps are
/// an exact draw of the Poisson random measure of jumps with `|z| > eps`
/// (the compound-Poisson part of the increment law) on a separate stream;
/// they carry the correct law but are not pathwise coupled to the increments.
pub fn simulate_stable_levy(
    grid: &TimeGrid,
    gamma: f64,
    c_gamma: f64,
    threshold: JumpThreshold,
    m: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    check_stable_index(gamma)?;
    check_count(m)?;
    if !(c_gamma > 0.0 && c_gamma.is_finite()) {
        return Err(Error::param("c_gamma", format!("must be positive, got {c_gamma}")));
    }
    let n = grid.steps();
    let dt = grid.dt();
    let factor = (dt * c_gamma).powf(1.0 / gamma);
    let data = par_rows(m, n + 1, |r, row| {
        let mut s = StreamKey::for_path(seed, Purpose::StableIncrements, r as u64).stream();
        let mut x = 0.0;
        row[0] = x;
        for i in 0..n {
            x += factor * s.standard_stable(gamma);
            row[i + 1] = x;
        }
    });
    let mut out = PathEnsemble {
        grid: *grid,
        paths: Array2::from_shape_vec((m, n + 1), data).expect("shape"),
        label: ProcessLabel::Stable { gamma, c_gamma },
        initial_value: 0.0,
        increments: None,
        jumps: None,
        jump_threshold: None,
        sources: vec![noise(seed, Purpose::StableIncrements)],
    };
    let k = stable_density_coefficient(gamma, c_gamma);
    let eps = match threshold {
        JumpThreshold::Disabled => return Ok(out),
        JumpThreshold::Absolute(e) => e,
        JumpThreshold::ExpectedCount(count) => {
            if !(count > 0.0) {
                return Err(Error::param("expected_count", "must be positive"));
            }
            (2.0 * k * grid.horizon() / (gamma * count)).powf(1.0 / gamma)
        }
    };
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::param("jump_threshold", format!("must be positive, got {eps}")));
    }
    let nu = LevyMeasure::SymmetricPowerLaw { k, gamma };
    let jumps = record_jumps(grid, &nu, eps, m, seed, Purpose::StableJumps)?;
    out.sources.push(noise(seed, Purpose::StableJumps));
    out.with_jumps(jumps, eps)
}

fn record_jumps(
    grid: &TimeGrid,
    nu: &LevyMeasure,
    eps: f64,
    m: usize,
    seed: u64,
    purpose: Purpose,
) -> Result<Vec<Vec<Jump>>> {
    let rate = nu.mass_above(eps)?;
    let dt = grid.dt();
    let n = grid.steps();
    (0..m)
        .into_par_iter()
        .map(|r| {
            let mut s = StreamKey::for_path(seed, purpose, r as u64).stream();
            let mut jumps = Vec::new();
            for i in 0..n {
                let count = s.poisson(rate * dt);
                let t0 = grid.node(i);
                let mut step: Vec<Jump> = Vec::with_capacity(count as usize);
                for _ in 0..count {
                    let time = (t0 + dt * s.open_unit()).min(grid.node(i + 1));
                    step.push(Jump { time, size: nu.sample_jump(eps, &mut s)? });
                }
                step.sort_by(|a, b| a.time.total_cmp(&b.time));
                jumps.extend(step);
            }
            Ok(jumps)
        })
        .collect()
}

/// Compound Poisson process with finite Levy measure `nu`; every jump is
/// recorded (threshold 0).
pub fn simulate_compound_poisson(
    grid: &TimeGrid,
    nu: &LevyMeasure,
    m: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    check_count(m)?;
    if !nu.is_finite_activity() {
        return Err(Error::param("levy_measure", "compound Poisson needs a finite measure"));
    }
    let jumps = record_jumps(grid, nu, 0.0, m, seed, Purpose::PoissonJumps)?;
    let n = grid.steps();
    let data = par_rows(m, n + 1, |r, row| {
        let mut level = 0.0;
        let mut it = jumps[r].iter().peekable();
        row[0] = 0.0;
        for (i, slot) in row.iter_mut().enumerate().skip(1) {
            let t = grid.node(i);
            while let Some(j) = it.peek() {
                if j.time <= t {
                    level += j.size;
                    it.next();
                } else {
                    break;
                }
            }
            *slot = level;
        }
    });
    let rate = nu.mass_above(0.0)?;
    let out = PathEnsemble {
        grid: *grid,
        paths: Array2::from_shape_vec((m, n + 1), data).expect("shape"),
        label: ProcessLabel::Poisson { rate },
        initial_value: 0.0,
        increments: None,
        jumps: None,
        jump_threshold: None,
        sources: vec![noise(seed, Purpose::PoissonJumps)],
    };
    out.with_jumps(jumps, 0.0)
}

/// Pathwise `alpha A + beta B` of two independent ensembles on one grid.
pub fn simulate_mixed(
    alpha: f64,
    beta: f64,
    a: &PathEnsemble,
    b: &PathEnsemble,
) -> Result<PathEnsemble> {
    if a.grid != b.grid {
        return Err(Error::ShapeMismatch("components live on different grids".into()));
    }
    if a.num_paths() != b.num_paths() {
        return Err(Error::ShapeMismatch(format!(
            "components have {} and {} paths",
            a.num_paths(),
            b.num_paths()
        )));
    }
    if a.sources.iter().any(|s| b.sources.contains(s)) {
        return Err(Error::param("components", "components share a noise source"));
    }
    let paths = &a.paths * alpha + &b.paths * beta;
    let jumps = match (a.jumps(), b.jumps()) {
        (None, None) => None,
        (ja, jb) => {
            let mut merged = vec![Vec::new(); a.num_paths()];
            for (src, w) in [(ja, alpha), (jb, beta)] {
                if let Some(list) = src {
                    for (dst, path_jumps) in merged.iter_mut().zip(list) {
                        dst.extend(path_jumps.iter().map(|j| Jump { time: j.time, size: w * j.size }));
                    }
                }
            }
            for list in merged.iter_mut() {
                list.sort_by(|p, q| p.time.total_cmp(&q.time));
            }
            Some(merged)
        }
    };
    Ok(PathEnsemble {
        grid: a.grid,
        paths,
        label: ProcessLabel::Mixed {
            alpha,
            beta,
            a: Box::new(a.label.clone()),
            b: Box::new(b.label.clone()),
        },
        initial_value: alpha * a.initial_value + beta * b.initial_value,
        increments: None,
        jump_threshold: jumps.as_ref().map(|_| {
            let ta = a.jump_threshold.map(|e| e * alpha.abs());
            let tb = b.jump_threshold.map(|e| e * beta.abs());
            ta.into_iter().chain(tb).fold(f64::INFINITY, f64::min)
        }),
        jumps,
        sources: a.sources.iter().chain(&b.sources).copied().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::stats::{self, Estimate};

    fn within(est: Estimate, target: f64, slack: f64) -> bool {
        (est.value - target).abs() <= 4.0 * est.std_error + slack
    }

    #[test]
    fn grid_nodes() {
        let g = TimeGrid::new(2.0, 8).unwrap();
        assert_eq!(g.node(0), 0.0);
        assert_eq!(g.node(8), 2.0);
        assert_eq!(g.dt(), 0.25);
        let nodes = g.nodes();
        assert!(nodes.windows(2).all(|w| w[1] > w[0]));
        assert!(TimeGrid::new(0.0, 4).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn brownian_moments() {
        let g = TimeGrid::new(1.0, 32).unwrap();
        let e = simulate_brownian(&g, 100_000, 1).unwrap();
        assert!(e.column(0).iter().all(|&x| x == 0.0));
        let b1 = e.terminal();
        assert!(within(stats::variance_estimate(&b1), 1.0, 0.0));
        let bh = e.column(16).to_vec();
        assert!(within(stats::covariance(&bh, &b1), 0.5, 0.0));
        assert!(e.increments().is_some());
    }

    #[test]
    fn fbm_terminal_variance_and_midpoint() {
        let g = TimeGrid::new(1.0, 16).unwrap();
        for &h in &[0.3, 0.75] {
            let e = simulate_fbm(&g, HurstParameter::new(h).unwrap(), 50_000, 3).unwrap();
            assert!(within(stats::variance_estimate(&e.terminal()), 1.0, 0.0), "H = {h}");
        }
        let e = simulate_fbm(&g, HurstParameter::new(0.75).unwrap(), 50_000, 4).unwrap();
        let mid = e.column(8).to_vec();
        assert!(within(stats::variance_estimate(&mid), 0.5f64.powf(1.5), 0.0));
    }

    #[test]
    fn fbm_half_is_brownian_covariance() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let e = simulate_fbm(&g, HurstParameter::new(0.5).unwrap(), 50_000, 8).unwrap();
        for j in 1..=8 {
            for k in j..=8 {
                let c = stats::covariance(&e.column(j).to_vec(), &e.column(k).to_vec());
                assert!(within(c, g.node(j).min(g.node(k)), 0.0), "({j},{k})");
            }
        }
    }

    #[test]
    fn hurst_bounds() {
        assert!(HurstParameter::new(0.0).is_err());
        assert!(HurstParameter::new(1.0).is_err());
        assert!(HurstParameter::new(0.4).is_ok());
    }

    #[test]
    fn volterra_unit_kernel_is_brownian() {
        let g = TimeGrid::new(1.0, 20).unwrap();
        let k = VolterraKernel::new(|_, _| 1.0);
        let v = simulate_volterra(&g, &k, 50, 9).unwrap();
        let b = simulate_brownian(&g, 50, 9).unwrap();
        assert_eq!(v.paths(), b.paths());
    }

    #[test]
    fn volterra_variances() {
        let g = TimeGrid::new(1.0, 64).unwrap();
        let dt = g.dt();
        for (kernel, seed) in [(VolterraKernel::new(|t, s| t - s), 10), (VolterraKernel::new(|_, s| s), 11)] {
            let e = simulate_volterra(&g, &kernel, 100_000, seed).unwrap();
            let est = stats::second_moment(&e.terminal());
            assert!(within(est, 1.0 / 3.0, dt), "{est:?}");
        }
    }

    #[test]
    fn volterra_rejects_non_finite_kernel() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let k = VolterraKernel::new(|t, s| 1.0 / (t - s - 0.25));
        assert!(simulate_volterra(&g, &k, 2, 1).is_err());
    }

    #[test]
    fn diffusion_degenerates_to_brownian() {
        let g = TimeGrid::new(1.0, 50).unwrap();
        let d = simulate_diffusion(&g, &|_| 0.0, &|_| 1.0, 0.0, 40, 21).unwrap();
        let b = simulate_brownian(&g, 40, 21).unwrap();
        assert_eq!(d.paths(), b.paths());
    }

    #[test]
    fn ornstein_uhlenbeck_and_gbm() {
        let g = TimeGrid::new(1.0, 256).unwrap();
        let ou = simulate_diffusion(&g, &|x| -x, &|_| 1.0, 0.0, 100_000, 22).unwrap();
        let target = (1.0 - (-2.0f64).exp()) / 2.0;
        assert!(within(stats::variance_estimate(&ou.terminal()), target, 2.0 * g.dt()));
        let gbm = simulate_diffusion(&g, &|x| 0.1 * x, &|x| 0.2 * x, 1.0, 100_000, 23).unwrap();
        assert!(within(Estimate::of_mean(&gbm.terminal()), 0.1f64.exp(), 2.0 * g.dt()));
    }

    #[test]
    fn diffusion_divergence_is_reported() {
        let g = TimeGrid::new(1.0, 200).unwrap();
        let r = simulate_diffusion(&g, &|x| x * x * 1e3, &|_| 0.0, 1.0, 3, 1);
        assert!(matches!(r, Err(Error::Diverged { count: 3, .. })));
    }

    #[test]
    fn stable_charfn_and_symmetry() {
        let g = TimeGrid::new(1.0, 16).unwrap();
        let e = simulate_stable_levy(&g, 1.5, 1.0, JumpThreshold::Disabled, 100_000, 30).unwrap();
        let l1 = e.terminal();
        let c: Vec<f64> = l1.iter().map(|x| x.cos()).collect();
        assert!(within(Estimate::of_mean(&c), (-1.0f64).exp(), 0.0));
        for xi in [0.3, 1.0, 2.5] {
            let s: Vec<f64> = l1.iter().map(|x| (xi * x).sin()).collect();
            assert!(within(Estimate::of_mean(&s), 0.0, 0.0));
        }
    }

    #[test]
    fn stable_self_similarity() {
        let gamma = 1.5;
        let g1 = TimeGrid::new(1.0, 8).unwrap();
        let g2 = TimeGrid::new(2.0, 16).unwrap();
        let a = simulate_stable_levy(&g2, gamma, 1.0, JumpThreshold::Disabled, 20_000, 31).unwrap();
        let b = simulate_stable_levy(&g1, gamma, 1.0, JumpThreshold::Disabled, 20_000, 32).unwrap();
        let scaled: Vec<f64> = b.terminal().iter().map(|x| 2f64.powf(1.0 / gamma) * x).collect();
        let d = stats::ks_two_sample(&a.terminal(), &scaled);
        assert!(d < stats::ks_critical_99(20_000, 20_000), "KS {d}");
    }

    #[test]
    fn stable_jump_records() {
        let g = TimeGrid::new(1.0, 32).unwrap();
        let e = simulate_stable_levy(&g, 1.2, 1.0, JumpThreshold::ExpectedCount(50.0), 2_000, 33).unwrap();
        let eps = e.jump_threshold().unwrap();
        let jumps = e.jumps().unwrap();
        let counts: Vec<f64> = jumps.iter().map(|j| j.len() as f64).collect();
        assert!(within(Estimate::of_mean(&counts), 50.0, 0.0));
        for j in jumps.iter().flatten() {
            assert!(j.time > 0.0 && j.time <= 1.0);
            assert!(j.size.abs() > eps);
        }
        assert!(simulate_stable_levy(&g, 2.5, 1.0, JumpThreshold::Disabled, 2, 1).is_err());
    }

    #[test]
    fn mixture_rules() {
        let g = TimeGrid::new(1.0, 16).unwrap();
        let b = simulate_brownian(&g, 100, 5).unwrap();
        let l = simulate_stable_levy(&g, 1.5, 1.0, JumpThreshold::ExpectedCount(5.0), 100, 5).unwrap();
        let x = simulate_mixed(2.0, 0.0, &b, &l).unwrap();
        assert_eq!(x.paths(), &(b.paths() * 2.0 + &(l.paths() * 0.0)));
        let b2 = b.scaled(2.0);
        for (p, q) in x.paths().iter().zip(b2.paths()) {
            assert_eq!(p, q);
        }
        assert!(simulate_mixed(1.0, 1.0, &b, &b).is_err());
        let other = simulate_brownian(&g, 50, 6).unwrap();
        assert!(simulate_mixed(1.0, 1.0, &b, &other).is_err());
    }

    #[test]
    fn mixture_variance_and_charfn() {
        let g = TimeGrid::new(1.0, 32).unwrap();
        let m = 100_000;
        let b = simulate_brownian(&g, m, 40).unwrap();
        let bh = simulate_fbm(&g, HurstParameter::new(0.75).unwrap(), m, 40).unwrap();
        let x = simulate_mixed(1.0, 1.0, &b, &bh).unwrap();
        assert!(within(stats::variance_estimate(&x.terminal()), 2.0, 0.0));
        let l = simulate_stable_levy(&g, 1.5, 1.0, JumpThreshold::Disabled, m, 40).unwrap();
        let y = simulate_mixed(1.0, 1.0, &b, &l).unwrap();
        let c: Vec<f64> = y.terminal().iter().map(|v| v.cos()).collect();
        assert!(within(Estimate::of_mean(&c), (-1.5f64).exp(), 0.0));
    }

    #[test]
    fn compound_poisson_counts() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let e = simulate_compound_poisson(&g, &LevyMeasure::poisson(3.0, 1.0), 50_000, 2).unwrap();
        let est = stats::variance_estimate(&e.terminal());
        assert!(within(est, 3.0, 0.0));
        assert!(within(Estimate::of_mean(&e.terminal()), 3.0, 0.0));
    }

    #[test]
    fn coarsening_keeps_nodes() {
        let g = TimeGrid::new(1.0, 16).unwrap();
        let b = simulate_brownian(&g, 10, 1).unwrap();
        let c = b.coarsen(4).unwrap();
        assert_eq!(c.grid().steps(), 4);
        assert_eq!(c.column(4), b.column(16));
        let inc = c.increments().unwrap();
        for r in 0..10 {
            let sum: f64 = inc.row(r).sum();
            assert!((sum - c.path(r)[4]).abs() < 1e-12);
        }
        assert!(b.coarsen(3).is_err());
        assert!(c.path(3).as_slice().is_some());
        let t = PathEnsemble::from_matrix(g, b.paths().t().to_owned().t().to_owned(), ProcessLabel::Brownian).unwrap();
        assert!(t.path(0).as_slice().is_some());
    }
}
