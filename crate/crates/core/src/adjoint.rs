//! Adjoint (Riesz) derivative `D_X F` over a predictable integrand basis,
//! regression-based predictable projection, and the identity checks of the
//! factorization `(Id - E) F = delta(Pi D F)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::ops::Range;

use crate::error::{Error, Result};
use crate::integration::{
    energy_density, energy_inner_density, ito_integral, AdaptedProcessSample, EnergySpec, RandomVariableSample,
};
use crate::numerics::quad::gauss_hermite;
use crate::numerics::stats::{self, Estimate};
use crate::paths::{PathEnsemble, ProcessLabel, TimeGrid};
use crate::randomness::{Purpose, StreamKey};

/// Paths per reduction chunk. Fixed so reductions do not depend on the
/// thread count.
const CHUNK: usize = 1024;
const MAX_CONDITION: f64 = 1e12;

/// Path-prefix features available beyond powers of the current state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathFeature {
    /// `max_{j <= i} X_{t_j}`
    RunningMax,
    /// `sum_{j < i} X_{t_j} dt`
    RunningIntegral,
    /// `1{X_{t_i} > knot}`
    Step(f64),
    /// `(X_{t_i} - knot)^+`
    Hinge(f64),
}

/// Tensor basis: `bins` time-bin indicators times the per-bin features
/// `1, x, ..., x^degree` of the current state, then any extra path features.
/// Element `k = bin * features_per_bin + f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrandBasis {
    pub bins: usize,
    pub degree: usize,
    #[serde(default)]
    pub features: Vec<PathFeature>,
}

impl Default for IntegrandBasis {
    fn default() -> Self {
        Self { bins: 16, degree: 3, features: Vec::new() }
    }
}

impl IntegrandBasis {
    pub fn new(bins: usize, degree: usize) -> Result<Self> {
        let b = Self { bins, degree, features: Vec::new() };
        b.validate()?;
        Ok(b)
    }

    pub fn with_features(mut self, features: Vec<PathFeature>) -> Self {
        self.features = features;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 {
            return Err(Error::param("basis.bins", "must be at least 1"));
        }
        if self.degree > 12 {
            return Err(Error::param("basis.degree", "must be at most 12"));
        }
        Ok(())
    }

    pub fn features_per_bin(&self) -> usize {
        self.degree + 1 + self.features.len()
    }

    /// Number of elements `K`.
    pub fn len(&self) -> usize {
        self.bins * self.features_per_bin()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Time bin of step `i` on an `n`-step grid: `floor(i * bins / n)`.
    pub fn bin_of(&self, i: usize, n: usize) -> usize {
        i * self.bins / n
    }

    fn bin_ranges(&self, n: usize) -> Vec<Range<usize>> {
        let mut ranges = vec![0..0; self.bins];
        for (b, range) in ranges.iter_mut().enumerate() {
            if let Some(s) = (0..n).find(|&i| self.bin_of(i, n) == b) {
                let end = (s..n).find(|&i| self.bin_of(i, n) != b).unwrap_or(n);
                *range = s..end;
            }
        }
        ranges
    }

    /// Writes the `N x F` feature rows of one path (row-major) into `out`.
    fn fill_features(&self, path: &[f64], dt: f64, out: &mut [f64]) {
        let f = self.features_per_bin();
        let n = path.len() - 1;
        let mut running_max = f64::NEG_INFINITY;
        let mut running_int = 0.0;
        for i in 0..n {
            let x = path[i];
            running_max = running_max.max(x);
            let row = &mut out[i * f..(i + 1) * f];
            let mut p = 1.0;
            for slot in row.iter_mut().take(self.degree + 1) {
                *slot = p;
                p *= x;
            }
            for (q, feat) in self.features.iter().enumerate() {
                row[self.degree + 1 + q] = match feat {
                    PathFeature::RunningMax => running_max,
                    PathFeature::RunningIntegral => running_int,
                    PathFeature::Step(knot) => f64::from(u8::from(x > *knot)),
                    PathFeature::Hinge(knot) => (x - knot).max(0.0),
                };
            }
            running_int += x * dt;
        }
    }

    /// `e_k(t_i, X_{t_0..=t_i})`.
    pub fn element(&self, k: usize, i: usize, grid: &TimeGrid, prefix: &[f64]) -> f64 {
        let f = self.features_per_bin();
        let (bin, feat) = (k / f, k % f);
        if self.bin_of(i, grid.steps()) != bin {
            return 0.0;
        }
        let x = prefix[i];
        if feat <= self.degree {
            let mut p = 1.0;
            for _ in 0..feat {
                p *= x;
            }
            return p;
        }
        match self.features[feat - self.degree - 1] {
            PathFeature::RunningMax => prefix[..=i].iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)),
            PathFeature::RunningIntegral => prefix[..i].iter().fold(0.0, |acc, v| acc + v * grid.dt()),
            PathFeature::Step(knot) => f64::from(u8::from(x > knot)),
            PathFeature::Hinge(knot) => (x - knot).max(0.0),
        }
    }

    /// `sum_k coeffs_k e_k` evaluated on every path.
    pub fn span(&self, coeffs: &[f64], x: &PathEnsemble) -> Result<AdaptedProcessSample> {
        if coeffs.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} coefficients for a basis of {} elements",
                coeffs.len(),
                self.len()
            )));
        }
        let grid = *x.grid();
        let n = grid.steps();
        let f = self.features_per_bin();
        let m = x.num_paths();
        let mut data = vec![0.0; m * n];
        data.par_chunks_mut(n.max(1)).enumerate().for_each(|(r, row)| {
            let path = x.path(r);
            let path = path.as_slice().expect("standard layout");
            let mut feats = vec![0.0; n * f];
            self.fill_features(path, grid.dt(), &mut feats);
            for (i, slot) in row.iter_mut().enumerate() {
                let c = &coeffs[self.bin_of(i, n) * f..][..f];
                *slot = feats[i * f..(i + 1) * f].iter().zip(c).fold(0.0, |acc, (a, b)| acc + a * b);
            }
        });
        AdaptedProcessSample::from_values(grid, Array2::from_shape_vec((m, n), data).expect("shape"), true)
    }
}

/// How the ridge added to the Gram matrix is chosen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RidgePolicy {
    /// Start at `1e-8 trace(G) / K`, doubling until the condition estimate is
    /// below `1e12`.
    #[default]
    Auto,
    Fixed(f64),
}

/// Largest entrywise gap between the divergence-covariance and energy Gram
/// matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GramDiscrepancy {
    /// `max |G_div - G_energy|` over entries.
    pub max_abs: f64,
    /// Standard error of the entry attaining `max_abs`.
    pub std_error_at_max: f64,
    /// `max (|G_div - G_energy| - 4 SE)` over entries.
    pub max_excess: f64,
}

/// Divergence-covariance and energy Gram matrices of a basis on an ensemble,
/// with the divergence samples `delta(e_k)` cached.
#[derive(Debug, Clone)]
pub struct GramSystem {
    basis: IntegrandBasis,
    grid: TimeGrid,
    seed: u64,
    divergences: Array2<f64>,
    g_div: DMatrix<f64>,
    g_div_se: DMatrix<f64>,
    g_energy: DMatrix<f64>,
    discrepancy: GramDiscrepancy,
    active: Vec<usize>,
    dropped: Vec<usize>,
}

#[derive(Clone)]
struct GramAcc {
    div: Vec<f64>,
    div_sq: Vec<f64>,
    en: Vec<f64>,
    diff_sq: Vec<f64>,
}

impl GramAcc {
    fn new(k: usize) -> Self {
        Self { div: vec![0.0; k * k], div_sq: vec![0.0; k * k], en: vec![0.0; k * k], diff_sq: vec![0.0; k * k] }
    }

    fn absorb(&mut self, other: &GramAcc) {
        for (dst, src) in [
            (&mut self.div, &other.div),
            (&mut self.div_sq, &other.div_sq),
            (&mut self.en, &other.en),
            (&mut self.diff_sq, &other.diff_sq),
        ] {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
    }
}

fn energy_weights(spec: &EnergySpec) -> Result<bool> {
    match spec {
        EnergySpec::BrownianLebesgue => Ok(false),
        EnergySpec::MartingaleQv => Ok(true),
        other => Err(Error::IncompatibleSpec(format!("Gram assembly needs a path energy spec, got {other:?}"))),
    }
}

/// Assembles both Gram matrices of `basis` on `x`.
pub fn build_gram(basis: &IntegrandBasis, x: &PathEnsemble, spec: &EnergySpec) -> Result<GramSystem> {
    basis.validate()?;
    let use_qv = energy_weights(spec)?;
    let m = x.num_paths();
    if m < 2 {
        return Err(Error::EmptyEnsemble);
    }
    let grid = *x.grid();
    let n = grid.steps();
    let dt = grid.dt();
    let f = basis.features_per_bin();
    let k = basis.len();
    let ranges = basis.bin_ranges(n);

    let mut divs = vec![0.0; m * k];
    let accs: Vec<GramAcc> = divs
        .par_chunks_mut(CHUNK * k)
        .enumerate()
        .map(|(c, block)| {
            let mut acc = GramAcc::new(k);
            let mut feats = vec![0.0; n * f];
            let mut en = vec![0.0; basis.bins * f * f];
            for (j, delta) in block.chunks_mut(k).enumerate() {
                let path = x.path(c * CHUNK + j);
                let path = path.as_slice().expect("standard layout");
                basis.fill_features(path, dt, &mut feats);
                en.iter_mut().for_each(|v| *v = 0.0);
                for (b, range) in ranges.iter().enumerate() {
                    let d = &mut delta[b * f..(b + 1) * f];
                    d.iter_mut().for_each(|v| *v = 0.0);
                    let e = &mut en[b * f * f..(b + 1) * f * f];
                    for i in range.clone() {
                        let dx = path[i + 1] - path[i];
                        let w = if use_qv { dx * dx } else { dt };
                        let row = &feats[i * f..(i + 1) * f];
                        for p in 0..f {
                            d[p] += row[p] * dx;
                            for q in 0..f {
                                e[p * f + q] += row[p] * row[q] * w;
                            }
                        }
                    }
                }
                for a in 0..k {
                    for b in a..k {
                        let p = delta[a] * delta[b];
                        let e = if a / f == b / f { en[(a / f) * f * f + (a % f) * f + (b % f)] } else { 0.0 };
                        let idx = a * k + b;
                        acc.div[idx] += p;
                        acc.div_sq[idx] += p * p;
                        acc.en[idx] += e;
                        acc.diff_sq[idx] += (p - e) * (p - e);
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = GramAcc::new(k);
    for a in &accs {
        total.absorb(a);
    }
    if total.div.iter().chain(&total.en).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("basis evaluations on the ensemble".into()));
    }

    let mf = m as f64;
    let mut g_div = DMatrix::zeros(k, k);
    let mut g_div_se = DMatrix::zeros(k, k);
    let mut g_energy = DMatrix::zeros(k, k);
    let mut disc = GramDiscrepancy { max_abs: 0.0, std_error_at_max: 0.0, max_excess: f64::NEG_INFINITY };
    for a in 0..k {
        for b in a..k {
            let idx = a * k + b;
            let mean_div = total.div[idx] / mf;
            let var_div = ((total.div_sq[idx] - total.div[idx] * mean_div) / (mf - 1.0)).max(0.0);
            let mean_en = total.en[idx] / mf;
            let diff = mean_div - mean_en;
            let diff_sum = total.div[idx] - total.en[idx];
            let var_diff = ((total.diff_sq[idx] - diff_sum * diff) / (mf - 1.0)).max(0.0);
            let se_diff = (var_diff / mf).sqrt();
            for (r, s) in [(a, b), (b, a)] {
                g_div[(r, s)] = mean_div;
                g_div_se[(r, s)] = (var_div / mf).sqrt();
                g_energy[(r, s)] = mean_en;
            }
            if diff.abs() > disc.max_abs {
                disc.max_abs = diff.abs();
                disc.std_error_at_max = se_diff;
            }
            disc.max_excess = disc.max_excess.max(diff.abs() - 4.0 * se_diff);
        }
    }

    let max_diag = (0..k).map(|a| g_div[(a, a)]).fold(0.0, f64::max);
    let (active, dropped): (Vec<usize>, Vec<usize>) =
        (0..k).partition(|&a| g_div[(a, a)] > 1e-13 * max_diag && g_energy[(a, a)] > 0.0);
    if !dropped.is_empty() {
        log::info!("gram: dropping {} degenerate basis columns {:?}", dropped.len(), dropped);
    }
    Ok(GramSystem {
        basis: basis.clone(),
        grid,
        seed: x.seed(),
        divergences: Array2::from_shape_vec((m, k), divs).expect("shape"),
        g_div,
        g_div_se,
        g_energy,
        discrepancy: disc,
        active,
        dropped,
    })
}

fn submatrix(g: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| g[(idx[r], idx[c])])
}

fn extreme_eigenvalues(g: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(g.clone()).eigenvalues;
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    (max, min.max(0.0))
}

/// Ridge, condition estimate and number of doublings for `g`.
fn choose_ridge(g: &DMatrix<f64>, policy: RidgePolicy) -> Result<(f64, f64, u32)> {
    let (lmax, lmin) = extreme_eigenvalues(g);
    let cond = |r: f64| (lmax + r) / (lmin + r);
    match policy {
        RidgePolicy::Fixed(r) => {
            if !(r >= 0.0) {
                return Err(Error::param("ridge", "must be nonnegative"));
            }
            let c = cond(r);
            if !c.is_finite() || c > 1e16 {
                return Err(Error::SingularGram { condition: c, ridge: r });
            }
            Ok((r, c, 0))
        }
        RidgePolicy::Auto => {
            let mut r = 1e-8 * g.trace() / g.nrows() as f64;
            let mut doublings = 0;
            while !(cond(r) < MAX_CONDITION) {
                if doublings >= 200 || !r.is_finite() {
                    return Err(Error::SingularGram { condition: cond(r), ridge: r });
                }
                r *= 2.0;
                doublings += 1;
            }
            if doublings > 0 {
                log::info!("ridge escalated {doublings} times to {r:e} (condition {:e})", cond(r));
            }
            Ok((r, cond(r), doublings))
        }
    }
}

fn solve_ridged(g: &DMatrix<f64>, rhs: &DVector<f64>, ridge: f64, cond: f64) -> Result<(DVector<f64>, f64)> {
    let n = g.nrows();
    let a = g + DMatrix::identity(n, n) * ridge;
    let chol = a.clone().cholesky().ok_or(Error::SingularGram { condition: cond, ridge })?;
    let sol = chol.solve(rhs);
    let residual = (&a * &sol - rhs).norm();
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularGram { condition: cond, ridge });
    }
    Ok((sol, residual))
}

impl GramSystem {
    pub fn basis(&self) -> &IntegrandBasis {
        &self.basis
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn num_paths(&self) -> usize {
        self.divergences.nrows()
    }

    /// `G_div[k, l] = E^[delta(e_k) delta(e_l)]`.
    pub fn divergence_gram(&self) -> &DMatrix<f64> {
        &self.g_div
    }

    /// Standard errors of the entries of [`Self::divergence_gram`].
    pub fn divergence_gram_se(&self) -> &DMatrix<f64> {
        &self.g_div_se
    }

    /// `G_energy[k, l] = E^<e_k, e_l>`.
    pub fn energy_gram(&self) -> &DMatrix<f64> {
        &self.g_energy
    }

    pub fn discrepancy(&self) -> GramDiscrepancy {
        self.discrepancy
    }

    /// Cached `delta(e_k)` samples, `M x K`.
    pub fn divergences(&self) -> &Array2<f64> {
        &self.divergences
    }

    pub fn active_columns(&self) -> &[usize] {
        &self.active
    }

    pub fn dropped_columns(&self) -> &[usize] {
        &self.dropped
    }

    pub fn metadata(&self) -> ReportMetadata {
        ReportMetadata {
            num_paths: self.num_paths(),
            steps: self.grid.steps(),
            basis_size: self.basis.len(),
            seed: self.seed,
        }
    }

    fn check_sample(&self, f: &RandomVariableSample) -> Result<()> {
        if f.len() != self.num_paths() {
            return Err(Error::ShapeMismatch(format!(
                "functional has {} values, Gram built on {} paths",
                f.len(),
                self.num_paths()
            )));
        }
        if f.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("functional {}", f.provenance)));
        }
        Ok(())
    }

    /// `b_k = E^[(F - E^F) delta(e_k)]` over the active columns.
    fn rhs(&self, f: &RandomVariableSample) -> (f64, DVector<f64>) {
        let mean = stats::mean(&f.values);
        let m = self.num_paths() as f64;
        let b: Vec<f64> = self
            .active
            .par_iter()
            .map(|&k| {
                let col = self.divergences.column(k);
                f.values.iter().zip(col.iter()).fold(0.0, |acc, (v, d)| acc + (v - mean) * d) / m
            })
            .collect();
        (mean, DVector::from_vec(b))
    }

    /// Solves `(G_div + ridge I) c = b` for the Riesz representer of `F`.
    pub fn covariant_derivative(&self, f: &RandomVariableSample, ridge: RidgePolicy) -> Result<RieszRepresenter> {
        self.check_sample(f)?;
        let (mean, b) = self.rhs(f);
        let mut coefficients = vec![0.0; self.basis.len()];
        let (mut ridge_used, mut condition, mut residual, mut doublings) = (0.0, 1.0, 0.0, 0);
        if !self.active.is_empty() {
            let g = submatrix(&self.g_div, &self.active);
            let (r, c, d) = choose_ridge(&g, ridge)?;
            let (sol, res) = solve_ridged(&g, &b, r, c)?;
            for (slot, &k) in self.active.iter().enumerate() {
                coefficients[k] = sol[slot];
            }
            (ridge_used, condition, residual, doublings) = (r, c, res, d);
        }
        Ok(RieszRepresenter {
            basis: self.basis.clone(),
            coefficients,
            ridge: ridge_used,
            gram_condition: condition,
            residual_diag: residual,
            ridge_doublings: doublings,
            mean,
            dropped_columns: self.dropped.clone(),
        })
    }

    /// `delta(phi)` from the cached divergences: `sum_k c_k delta(e_k)`.
    pub fn divergence_of(&self, rep: &RieszRepresenter) -> Result<RandomVariableSample> {
        if rep.basis != self.basis {
            return Err(Error::ShapeMismatch("representer built on a different basis".into()));
        }
        let values = (0..self.num_paths())
            .into_par_iter()
            .map(|r| {
                let row = self.divergences.row(r);
                row.iter().zip(&rep.coefficients).fold(0.0, |acc, (d, c)| acc + d * c)
            })
            .collect();
        Ok(RandomVariableSample::new(values, "divergence_of_representer"))
    }
}

/// Builds the Gram system and solves for the representer in one step.
pub fn covariant_derivative(
    f: &RandomVariableSample,
    basis: &IntegrandBasis,
    x: &PathEnsemble,
    spec: &EnergySpec,
    ridge: RidgePolicy,
) -> Result<(GramSystem, RieszRepresenter)> {
    f.check_aligned(x)?;
    let gram = build_gram(basis, x, spec)?;
    let rep = gram.covariant_derivative(f, ridge)?;
    Ok((gram, rep))
}

/// `phi = sum_k c_k e_k`, the basis-subspace estimate of `Pi D F`, with the
/// sample mean of `F` carried alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RieszRepresenter {
    pub basis: IntegrandBasis,
    pub coefficients: Vec<f64>,
    pub ridge: f64,
    pub gram_condition: f64,
    pub residual_diag: f64,
    pub ridge_doublings: u32,
    /// Sample mean of the functional.
    pub mean: f64,
    pub dropped_columns: Vec<usize>,
}

impl RieszRepresenter {
    /// Coefficient of feature `feature` in time bin `bin`.
    pub fn coefficient(&self, bin: usize, feature: usize) -> f64 {
        self.coefficients[bin * self.basis.features_per_bin() + feature]
    }

    pub fn evaluate(&self, x: &PathEnsemble) -> Result<AdaptedProcessSample> {
        self.basis.span(&self.coefficients, x)
    }

    /// `delta(phi)` recomputed from the ensemble paths.
    pub fn divergence(&self, x: &PathEnsemble) -> Result<RandomVariableSample> {
        ito_integral(&self.evaluate(x)?, x)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub num_paths: usize,
    pub steps: usize,
    pub basis_size: usize,
    pub seed: u64,
}

impl ReportMetadata {
    pub fn of(x: &PathEnsemble, basis_size: usize) -> Self {
        Self { num_paths: x.num_paths(), steps: x.grid().steps(), basis_size, seed: x.seed() }
    }
}

/// Outcome of one numerical identity check; passes iff
/// `|estimate - target| <= tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub name: String,
    pub estimate: f64,
    pub target: f64,
    pub standard_error: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
    pub metadata: ReportMetadata,
}

impl IdentityReport {
    pub fn new(
        name: impl Into<String>,
        estimate: f64,
        target: f64,
        standard_error: f64,
        tolerance: f64,
        metadata: ReportMetadata,
    ) -> Self {
        let verdict = if (estimate - target).abs() <= tolerance { Verdict::Pass } else { Verdict::Fail };
        Self { name: name.into(), estimate, target, standard_error, tolerance, verdict, metadata }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// Result of [`predictable_projection`].
#[derive(Debug, Clone)]
pub struct Projection {
    pub process: AdaptedProcessSample,
    /// Per-bin regression coefficients, `bins x features_per_bin` row-major.
    pub coefficients: Vec<f64>,
    /// Bins whose regression was singular and fell back to the bin mean.
    pub fallback_bins: Vec<usize>,
}

/// `(Pi u)_{t_i} = E[u_{t_i} | F_{t_i}]` by least squares of `u` on the basis
/// features, pooled over the steps of each time bin.
pub fn predictable_projection(u_raw: &Array2<f64>, basis: &IntegrandBasis, x: &PathEnsemble) -> Result<Projection> {
    basis.validate()?;
    let grid = *x.grid();
    let (m, n) = (x.num_paths(), grid.steps());
    if u_raw.dim() != (m, n) {
        return Err(Error::ShapeMismatch(format!("integrand is {:?}, ensemble needs ({m}, {n})", u_raw.dim())));
    }
    if u_raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("integrand to project".into()));
    }
    let f = basis.features_per_bin();
    let bins = basis.bins;
    let dt = grid.dt();

    let chunked = |per_path: &(dyn Fn(usize, &[f64], &mut [f64]) + Sync), width: usize| -> Vec<f64> {
        let parts: Vec<Vec<f64>> = (0..m.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut acc = vec![0.0; width];
                let mut feats = vec![0.0; n * f];
                for r in c * CHUNK..((c + 1) * CHUNK).min(m) {
                    let path = x.path(r);
                    basis.fill_features(path.as_slice().expect("standard layout"), dt, &mut feats);
                    per_path(r, &feats, &mut acc);
                }
                acc
            })
            .collect();
        let mut total = vec![0.0; width];
        for p in &parts {
            for (a, b) in total.iter_mut().zip(p) {
                *a += b;
            }
        }
        total
    };

    // per-bin feature scales, then normal equations on scaled features
    let counts: Vec<f64> = (0..bins)
        .map(|b| (0..n).filter(|&i| basis.bin_of(i, n) == b).count() as f64 * m as f64)
        .collect();
    let sq = chunked(
        &|_, feats, acc| {
            for i in 0..n {
                let b = basis.bin_of(i, n);
                for p in 0..f {
                    acc[b * f + p] += feats[i * f + p] * feats[i * f + p];
                }
            }
        },
        bins * f,
    );
    let scale: Vec<f64> = sq
        .iter()
        .enumerate()
        .map(|(j, s)| if counts[j / f] > 0.0 { (s / counts[j / f]).sqrt() } else { 0.0 })
        .collect();
    let width = bins * (f * f + f + 1);
    let normal = chunked(
        &|r, feats, acc| {
            let u = u_raw.row(r);
            for i in 0..n {
                let b = basis.bin_of(i, n);
                let base = b * (f * f + f + 1);
                let sc = &scale[b * f..(b + 1) * f];
                for p in 0..f {
                    if sc[p] == 0.0 {
                        continue;
                    }
                    let xp = feats[i * f + p] / sc[p];
                    for q in 0..f {
                        if sc[q] != 0.0 {
                            acc[base + p * f + q] += xp * feats[i * f + q] / sc[q];
                        }
                    }
                    acc[base + f * f + p] += xp * u[i];
                }
                acc[base + f * f + f] += u[i];
            }
        },
        width,
    );

    let mut coefficients = vec![0.0; bins * f];
    let mut fallback_bins = Vec::new();
    for b in 0..bins {
        if counts[b] == 0.0 {
            continue;
        }
        let base = b * (f * f + f + 1);
        let live: Vec<usize> = (0..f).filter(|&p| scale[b * f + p] > 0.0).collect();
        let a = DMatrix::from_fn(live.len(), live.len(), |r, c| normal[base + live[r] * f + live[c]]);
        let rhs = DVector::from_fn(live.len(), |r, _| normal[base + f * f + live[r]]);
        let (lmax, lmin) = extreme_eigenvalues(&a);
        let solved = if !live.is_empty() && lmax / lmin < MAX_CONDITION {
            a.cholesky().map(|c| c.solve(&rhs)).filter(|s| s.iter().all(|v| v.is_finite()))
        } else {
            None
        };
        match solved {
            Some(sol) => {
                for (slot, &p) in live.iter().enumerate() {
                    coefficients[b * f + p] = sol[slot] / scale[b * f + p];
                }
            }
            None => {
                log::warn!("projection: bin {b} regression singular, using the bin mean");
                fallback_bins.push(b);
                coefficients[b * f] = normal[base + f * f + f] / counts[b];
            }
        }
    }
    let process = basis.span(&coefficients, x)?;
    Ok(Projection { process, coefficients, fallback_bins })
}

/// `F^ = E^F + delta(phi)` and the relative residual `E^[(F - F^)^2] / Var^(F)`.
/// A constant `F` is judged on the absolute residual with tolerance `1e-12`.
pub fn clark_ocone_reconstruct(
    f: &RandomVariableSample,
    rep: &RieszRepresenter,
    x: &PathEnsemble,
    tolerance: f64,
) -> Result<(RandomVariableSample, IdentityReport)> {
    f.check_aligned(x)?;
    let delta = rep.divergence(x)?;
    let values: Vec<f64> = delta.values.iter().map(|d| rep.mean + d).collect();
    let sq: Vec<f64> = f.values.iter().zip(&values).map(|(a, b)| (a - b) * (a - b)).collect();
    let resid = Estimate::of_mean(&sq);
    let var = stats::central_second_moment(&f.values);
    let meta = ReportMetadata::of(x, rep.basis.len());
    let report = if var > 0.0 {
        IdentityReport::new(
            format!("clark_ocone_residual[{}]", f.provenance),
            resid.value / var,
            0.0,
            resid.std_error / var,
            tolerance,
            meta,
        )
    } else {
        IdentityReport::new(
            format!("clark_ocone_residual_absolute[{}]", f.provenance),
            resid.value,
            0.0,
            resid.std_error,
            1e-12,
            meta,
        )
    };
    Ok((RandomVariableSample::new(values, format!("reconstruction[{}]", f.provenance)), report))
}

/// `Var^(F)` against `||phi||^2` in the energy space. The tolerance is four
/// paired standard errors plus the absolute reconstruction residual.
pub fn variance_identity_check(
    f: &RandomVariableSample,
    rep: &RieszRepresenter,
    spec: &EnergySpec,
    x: &PathEnsemble,
) -> Result<IdentityReport> {
    f.check_aligned(x)?;
    let phi = rep.evaluate(x)?;
    let dens = energy_density(&phi, spec, x)?;
    let mean = stats::mean(&f.values);
    let centered_sq: Vec<f64> = f.values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let paired: Vec<f64> = centered_sq.iter().zip(&dens).map(|(a, b)| a - b).collect();
    let se = Estimate::of_mean(&paired).std_error;
    let delta = rep.divergence(x)?;
    let slack = stats::mean(
        &f.values.iter().zip(&delta.values).map(|(v, d)| (v - rep.mean - d).powi(2)).collect::<Vec<_>>(),
    );
    Ok(IdentityReport::new(
        format!("variance_identity[{}]", f.provenance),
        stats::mean(&centered_sq),
        stats::mean(&dens),
        se,
        4.0 * se + slack,
        ReportMetadata::of(x, rep.basis.len()),
    ))
}

/// `count` integrands `sum_k a_k e_k` with independent standard normal `a_k`.
pub fn random_span_integrands(
    basis: &IntegrandBasis,
    x: &PathEnsemble,
    count: usize,
    seed: u64,
) -> Result<Vec<AdaptedProcessSample>> {
    (0..count)
        .map(|j| {
            let mut s = StreamKey::for_path(seed, Purpose::TestIntegrands, j as u64).stream();
            let coeffs: Vec<f64> = (0..basis.len()).map(|_| s.gaussian()).collect();
            basis.span(&coeffs, x)
        })
        .collect()
}

/// `E^[F delta(u)]` against `<phi, u>` for each test integrand, within four
/// paired standard errors. `F` is centered first.
pub fn adjointness_check(
    f: &RandomVariableSample,
    rep: &RieszRepresenter,
    tests: &[AdaptedProcessSample],
    spec: &EnergySpec,
    x: &PathEnsemble,
) -> Result<Vec<IdentityReport>> {
    f.check_aligned(x)?;
    let phi = rep.evaluate(x)?;
    let mean = stats::mean(&f.values);
    tests
        .iter()
        .enumerate()
        .map(|(j, u)| {
            let du = ito_integral(u, x)?;
            let lhs: Vec<f64> = f.values.iter().zip(&du.values).map(|(v, d)| (v - mean) * d).collect();
            let rhs = energy_inner_density(&phi, u, spec, x)?;
            let paired: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
            let se = Estimate::of_mean(&paired).std_error;
            Ok(IdentityReport::new(
                format!("adjointness[{}][{j}]", f.provenance),
                stats::mean(&lhs),
                stats::mean(&rhs),
                se,
                4.0 * se,
                ReportMetadata::of(x, rep.basis.len()),
            ))
        })
        .collect()
}

/// Relative `L^2(dt x P)` distance between `phi` and `oracle(t, X_t)` over the
/// first `max_paths` paths, with a delta-method standard error.
pub fn integrand_discrepancy<G>(rep: &RieszRepresenter, x: &PathEnsemble, max_paths: usize, oracle: G) -> Result<Estimate>
where
    G: Fn(f64, f64) -> f64 + Sync,
{
    let grid = *x.grid();
    let n = grid.steps();
    let f = rep.basis.features_per_bin();
    let m = x.num_paths().min(max_paths);
    let per_path: Vec<(f64, f64)> = (0..m)
        .into_par_iter()
        .map(|r| {
            let path = x.path(r);
            let path = path.as_slice().expect("standard layout");
            let mut feats = vec![0.0; n * f];
            rep.basis.fill_features(path, grid.dt(), &mut feats);
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..n {
                let c = &rep.coefficients[rep.basis.bin_of(i, n) * f..][..f];
                let phi = feats[i * f..(i + 1) * f].iter().zip(c).fold(0.0, |acc, (a, b)| acc + a * b);
                let g = oracle(grid.node(i), path[i]);
                num += (phi - g) * (phi - g);
                den += g * g;
            }
            (num, den)
        })
        .collect();
    ratio_estimate(&per_path)
}

fn ratio_estimate(per_path: &[(f64, f64)]) -> Result<Estimate> {
    let nums: Vec<f64> = per_path.iter().map(|p| p.0).collect();
    let dens: Vec<f64> = per_path.iter().map(|p| p.1).collect();
    let (num, den) = (stats::mean(&nums), stats::mean(&dens));
    if !(den > 0.0) {
        return Err(Error::NonFinite("oracle integrand has zero norm".into()));
    }
    let ratio = num / den;
    let lin: Vec<f64> = per_path.iter().map(|(a, b)| a - ratio * b).collect();
    let ratio_se = Estimate::of_mean(&lin).std_error / den;
    let value = ratio.sqrt();
    let std_error = if value > 0.0 { ratio_se / (2.0 * value) } else { 0.0 };
    Ok(Estimate { value, std_error })
}

/// Paths used by [`malliavin_crosscheck`]; the oracle costs `O(nodes)` per
/// grid point.
pub const CROSSCHECK_PATHS: usize = 20_000;

/// Compares `phi` for `F = f(B_T)` with `E[f'(B_T) | B_t]` computed by
/// Gauss-Hermite quadrature with `nodes` points, confirmed against `2 nodes`.
pub fn malliavin_crosscheck<D>(
    name: &str,
    f_prime: D,
    x: &PathEnsemble,
    rep: &RieszRepresenter,
    nodes: usize,
    tolerance: f64,
) -> Result<IdentityReport>
where
    D: Fn(f64) -> f64 + Sync,
{
    if !matches!(x.label(), ProcessLabel::Brownian) {
        return Err(Error::param("ensemble", "the Malliavin cross-check needs a Brownian ensemble"));
    }
    let horizon = x.grid().horizon();
    let (z1, w1) = gauss_hermite(nodes);
    let (z2, w2) = gauss_hermite(2 * nodes);
    let rule = |z: &[f64], w: &[f64], t: f64, b: f64| {
        let s = (horizon - t).max(0.0).sqrt();
        z.iter().zip(w).fold(0.0, |acc, (zi, wi)| acc + wi * f_prime(b + s * zi))
    };
    // quadrature convergence on a probe set spanning the sampled states
    let grid = *x.grid();
    for i in (0..grid.steps()).step_by((grid.steps() / 8).max(1)) {
        let t = grid.node(i);
        for b in [-4.0, -2.0, -0.5, 0.0, 0.7, 2.0, 4.0] {
            let (g1, g2) = (rule(&z1, &w1, t, b), rule(&z2, &w2, t, b));
            if !((g1 - g2).abs() <= 1e-8 * (1.0 + g2.abs())) {
                return Err(Error::Quadrature(format!(
                    "Gauss-Hermite with {nodes} and {} nodes disagree at t={t}, x={b}: {g1} vs {g2}",
                    2 * nodes
                )));
            }
        }
    }
    let est = integrand_discrepancy(rep, x, CROSSCHECK_PATHS, |t, b| rule(&z1, &w1, t, b))?;
    let mut meta = ReportMetadata::of(x, rep.basis.len());
    meta.num_paths = meta.num_paths.min(CROSSCHECK_PATHS);
    Ok(IdentityReport::new(format!("malliavin_crosscheck[{name}]"), est.value, 0.0, est.std_error, tolerance, meta))
}

/// Discrete forms of the boundedness of `D`, with `sigma` the `1/M` sample
/// standard deviation of `F`:
/// `||delta(phi)|| <= sigma` for the divergence-metric representer and
/// `||G_en^-1 b||_energy <= C sigma` for the energy-metric representer, where
/// `C^2 = lambda_max(G_en^-1 G_div)` is the squared operator norm of `delta`
/// on the basis subspace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundednessReport {
    pub std_dev: f64,
    pub operator_norm: f64,
    pub divergence_norm: f64,
    pub energy_representer_norm: f64,
    /// Energy norm of the divergence-metric representer (informational).
    pub representer_energy_norm: f64,
    pub holds: bool,
}

pub fn boundedness_check(f: &RandomVariableSample, gram: &GramSystem, rep: &RieszRepresenter) -> Result<BoundednessReport> {
    gram.check_sample(f)?;
    let sigma = stats::central_second_moment(&f.values).sqrt();
    let delta = gram.divergence_of(rep)?;
    let divergence_norm = stats::mean(&delta.values.iter().map(|d| d * d).collect::<Vec<_>>()).sqrt();
    let active = &gram.active;
    let (_, b) = gram.rhs(f);
    let g_en = submatrix(&gram.g_energy, active);
    let g_div = submatrix(&gram.g_div, active);
    let coeffs = DVector::from_fn(active.len(), |r, _| rep.coefficients[active[r]]);
    let representer_energy_norm = coeffs.dot(&(&g_en * &coeffs)).max(0.0).sqrt();
    let (ridge, cond, _) = choose_ridge(&g_en, RidgePolicy::Auto)?;
    let a = &g_en + DMatrix::identity(active.len(), active.len()) * ridge;
    let chol = a.cholesky().ok_or(Error::SingularGram { condition: cond, ridge })?;
    let linv = chol.l().try_inverse().ok_or(Error::SingularGram { condition: cond, ridge })?;
    let sym = &linv * &g_div * linv.transpose();
    let sym = (&sym + sym.transpose()) * 0.5;
    let operator_norm = extreme_eigenvalues(&sym).0.max(0.0).sqrt();
    let c_en = chol.solve(&b);
    let energy_representer_norm = c_en.dot(&(&g_en * &c_en)).max(0.0).sqrt();
    let slack = 1.0 + 1e-6;
    let holds = divergence_norm <= slack * sigma && energy_representer_norm <= slack * operator_norm * sigma;
    Ok(BoundednessReport {
        std_dev: sigma,
        operator_norm,
        divergence_norm,
        energy_representer_norm,
        representer_energy_norm,
        holds,
    })
}
