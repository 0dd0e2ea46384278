//! Dupire (horizontal and vertical) derivatives of non-anticipative path
//! functionals on the simulation grid.
//!
//! A path is its `N + 1` node values, read as the piecewise-constant
//! (left-continuous in the node index) path `w(t) = w_{k(t)}` with
//! `k(t) = max { i : t_i <= t }`.

use rayon::prelude::*;
use std::fmt;
use std::sync::Arc;

use crate::adjoint::RieszRepresenter;
use crate::error::{Error, Result};
use crate::numerics::stats::{self, Estimate};
use crate::paths::{PathEnsemble, TimeGrid};
use crate::randomness::{Purpose, StreamKey};

pub type Evaluator = Arc<dyn Fn(f64, &[f64], &TimeGrid) -> f64 + Send + Sync>;

/// `U(t, w)`, evaluated from the full node vector of `w`. Non-anticipative
/// functionals read only nodes with `t_i <= t`.
#[derive(Clone)]
pub struct PathFunctional {
    pub label: String,
    eval: Evaluator,
}

impl fmt::Debug for PathFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PathFunctional").field("label", &self.label).finish()
    }
}

/// Index of the last node at or before `t`.
pub fn node_index(grid: &TimeGrid, t: f64) -> usize {
    let s = t / grid.dt();
    ((s + 1e-9).floor().max(0.0) as usize).min(grid.steps())
}

impl PathFunctional {
    pub fn new(label: impl Into<String>, eval: impl Fn(f64, &[f64], &TimeGrid) -> f64 + Send + Sync + 'static) -> Self {
        Self { label: label.into(), eval: Arc::new(eval) }
    }

    pub fn eval(&self, t: f64, path: &[f64], grid: &TimeGrid) -> Result<f64> {
        if path.len() != grid.steps() + 1 {
            return Err(Error::ShapeMismatch(format!(
                "path has {} nodes, grid needs {}",
                path.len(),
                grid.steps() + 1
            )));
        }
        let v = (self.eval)(t, path, grid);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{} at t = {t}", self.label)));
        }
        Ok(v)
    }

    /// `U(t, w) = w(t)`.
    pub fn current_value() -> Self {
        Self::new("current_value", |t, w, g| w[node_index(g, t)])
    }

    /// `U(t, w) = w(t)^2`.
    pub fn current_square() -> Self {
        Self::new("current_square", |t, w, g| w[node_index(g, t)].powi(2))
    }

    /// `U(t, w) = int_0^t w(s) ds` for the piecewise-constant path.
    pub fn running_integral() -> Self {
        Self::new("running_integral", running_integral)
    }

    /// `U(t, w) = t w_0`.
    pub fn time_times_initial() -> Self {
        Self::new("time_times_initial", |t, w, _| t * w[0])
    }

    /// `U(t, w) = max_{s <= t} w(s)`.
    pub fn running_max() -> Self {
        Self::new("running_max", |t, w, g| w[..=node_index(g, t)].iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)))
    }

    /// `U(t, w) = w(t)^2 + (T - t)`, the martingale `E[B_T^2 | F_t]`.
    pub fn conditional_square() -> Self {
        Self::new("conditional_square", |t, w, g| w[node_index(g, t)].powi(2) + (g.horizon() - t))
    }

    /// `U(t, w) = int_0^t w(s) ds + (T - t) w(t)`, the martingale
    /// `E[int_0^T B_s ds | F_t]`.
    pub fn conditional_running_integral() -> Self {
        Self::new("conditional_running_integral", |t, w, g| {
            running_integral(t, w, g) + (g.horizon() - t) * w[node_index(g, t)]
        })
    }
}

fn running_integral(t: f64, w: &[f64], g: &TimeGrid) -> f64 {
    let k = node_index(g, t);
    let full = w[..k].iter().fold(0.0, |acc, v| acc + v * g.dt());
    full + w[k] * (t - g.node(k)).max(0.0)
}

fn check_index(grid: &TimeGrid, k: usize, inclusive: bool) -> Result<()> {
    let ok = if inclusive { k <= grid.steps() } else { k < grid.steps() };
    if !ok {
        return Err(Error::param("t_index", format!("{k} outside the grid of {} steps", grid.steps())));
    }
    Ok(())
}

/// Default vertical bump: `1e-4` times the path's sup-norm (1 for the zero path).
pub fn default_vertical_bump(path: &[f64]) -> f64 {
    let scale = path.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    1e-4 * if scale > 0.0 { scale } else { 1.0 }
}

/// Central difference of `U(t_k, w +- h 1_{[t_k, T]})`; the bump shifts
/// every node `i >= k`.
pub fn vertical_derivative(u: &PathFunctional, path: &[f64], grid: &TimeGrid, k: usize, h: f64) -> Result<f64> {
    check_index(grid, k, true)?;
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::param("h", "bump size must be positive"));
    }
    let t = grid.node(k);
    let mut up = path.to_vec();
    let mut down = path.to_vec();
    for i in k..path.len() {
        up[i] += h;
        down[i] -= h;
    }
    Ok((u.eval(t, &up, grid)? - u.eval(t, &down, grid)?) / (2.0 * h))
}

/// `w` stopped at node `k`.
pub fn frozen_at(path: &[f64], k: usize) -> Vec<f64> {
    let mut out = path.to_vec();
    let v = path[k];
    for x in out.iter_mut().skip(k + 1) {
        *x = v;
    }
    out
}

/// Forward difference `[U(t_k + h, w_{. ^ t_k}) - U(t_k, w_{. ^ t_k})] / h`
/// with `0 < h <= dt`; `None` uses `h = dt / 2`.
pub fn horizontal_derivative(
    u: &PathFunctional,
    path: &[f64],
    grid: &TimeGrid,
    k: usize,
    h: Option<f64>,
) -> Result<f64> {
    check_index(grid, k, false)?;
    let h = h.unwrap_or(0.5 * grid.dt());
    if !(h > 0.0 && h <= grid.dt() * (1.0 + 1e-12)) {
        return Err(Error::param("h", "time step must lie in (0, dt]"));
    }
    let frozen = frozen_at(path, k);
    let t = grid.node(k);
    Ok((u.eval(t + h, &frozen, grid)? - u.eval(t, &frozen, grid)?) / h)
}

/// Randomized check that `U(t_k, .)` ignores nodes after `t_k`: for `trials`
/// random `k`, nodes `i > k` are replaced by Gaussian noise. Returns the
/// indices `k` at which the value changed.
pub fn non_anticipativity_violations(
    u: &PathFunctional,
    path: &[f64],
    grid: &TimeGrid,
    trials: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let mut s = StreamKey::for_path(seed, Purpose::TestIntegrands, 0).stream();
    let n = grid.steps();
    let mut bad = Vec::new();
    for _ in 0..trials {
        let k = ((s.open_unit() * n as f64) as usize).min(n - 1);
        let mut perturbed = path.to_vec();
        for x in perturbed.iter_mut().skip(k + 1) {
            *x += 10.0 * s.gaussian();
        }
        let t = grid.node(k);
        if u.eval(t, path, grid)? != u.eval(t, &perturbed, grid)? {
            bad.push(k);
        }
    }
    Ok(bad)
}

/// Relative `L^2(dt x P)` distance between the vertical derivative of the
/// martingale functional `U(t, w) = E[F | F_t]` and the fitted Clark-Ocone
/// integrand, over the first `max_paths` paths and every step.
pub fn vertical_consistency(
    u: &PathFunctional,
    rep: &RieszRepresenter,
    x: &PathEnsemble,
    max_paths: usize,
) -> Result<Estimate> {
    let grid = *x.grid();
    let n = grid.steps();
    let m = x.num_paths().min(max_paths);
    let phi = rep.evaluate(x)?;
    let per_path: Vec<Result<(f64, f64)>> = (0..m)
        .into_par_iter()
        .map(|r| {
            let path = x.path(r);
            let path = path.as_slice().expect("standard layout");
            let h = default_vertical_bump(path);
            let (mut num, mut den) = (0.0, 0.0);
            for k in 0..n {
                let d = vertical_derivative(u, path, &grid, k, h)?;
                let f = phi.values()[(r, k)];
                num += (f - d) * (f - d);
                den += d * d;
            }
            Ok((num, den))
        })
        .collect();
    let per_path: Vec<(f64, f64)> = per_path.into_iter().collect::<Result<_>>()?;
    let nums: Vec<f64> = per_path.iter().map(|p| p.0).collect();
    let dens: Vec<f64> = per_path.iter().map(|p| p.1).collect();
    let (num, den) = (stats::mean(&nums), stats::mean(&dens));
    if !(den > 0.0) {
        return Err(Error::NonFinite("vertical derivative vanishes identically".into()));
    }
    let ratio = num / den;
    let lin: Vec<f64> = per_path.iter().map(|(a, b)| a - ratio * b).collect();
    let se = Estimate::of_mean(&lin).std_error / den;
    let value = ratio.sqrt();
    Ok(Estimate { value, std_error: if value > 0.0 { se / (2.0 * value) } else { 0.0 } })
}
