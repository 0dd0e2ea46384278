//! Levy measures of the jump drivers and the stable-law normalization.
//!
//! A symmetric stable process with characteristic function
//! `exp(-t c |xi|^gamma)` has Levy density `k |z|^(-1-gamma)` where
//! `c = k pi / (Gamma(gamma + 1) sin(pi gamma / 2))`. The conversion is an
//! implementation convention and is what [`stable_density_coefficient`] uses.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma as gamma_fn;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::quad;
use crate::randomness::{check_stable_index, Stream};

/// Density coefficient `k` of the stable Levy measure with exponent scale `c`.
pub fn stable_density_coefficient(gamma: f64, c_gamma: f64) -> f64 {
    c_gamma * gamma_fn(gamma + 1.0) * (PI * gamma / 2.0).sin() / PI
}

/// Exponent scale `c` for a stable Levy density with coefficient `k`.
pub fn stable_exponent_scale(gamma: f64, k: f64) -> f64 {
    k * PI / (gamma_fn(gamma + 1.0) * (PI * gamma / 2.0).sin())
}

/// Asymptotic bound on `P(|L_t| > y)` for the symmetric stable process,
/// `t nu(|z| > y)`, doubled for safety at moderate `y`.
pub fn stable_tail_bound(gamma: f64, c_gamma: f64, t: f64, y: f64) -> f64 {
    let k = stable_density_coefficient(gamma, c_gamma);
    (2.0 * t * 2.0 * k * y.powf(-gamma) / gamma).min(1.0)
}

/// One point mass of a finite Levy measure: jumps of `size` at `rate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub size: f64,
    pub rate: f64,
}

pub type DensityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Levy measure `nu` on `R \ {0}`.
#[derive(Clone)]
pub enum LevyMeasure {
    /// `k |z|^(-1-gamma) dz`
    SymmetricPowerLaw { k: f64, gamma: f64 },
    /// Finite measure made of point masses (compound Poisson drivers).
    Atoms(Vec<Atom>),
    /// User-supplied density; integrals use adaptive quadrature.
    Density(DensityFn),
}

impl fmt::Debug for LevyMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LevyMeasure::SymmetricPowerLaw { k, gamma } => {
                f.debug_struct("SymmetricPowerLaw").field("k", k).field("gamma", gamma).finish()
            }
            LevyMeasure::Atoms(a) => f.debug_tuple("Atoms").field(a).finish(),
            LevyMeasure::Density(_) => f.write_str("Density(..)"),
        }
    }
}

pub(crate) const QUAD_REL_TOL: f64 = 1e-8;

impl LevyMeasure {
    pub fn stable(gamma: f64, c_gamma: f64) -> Result<Self> {
        check_stable_index(gamma)?;
        if !(c_gamma > 0.0) {
            return Err(Error::param("c_gamma", "must be positive"));
        }
        Ok(LevyMeasure::SymmetricPowerLaw { k: stable_density_coefficient(gamma, c_gamma), gamma })
    }

    pub fn poisson(rate: f64, size: f64) -> Self {
        LevyMeasure::Atoms(vec![Atom { size, rate }])
    }

    pub fn is_finite_activity(&self) -> bool {
        matches!(self, LevyMeasure::Atoms(_))
    }

    /// `nu(|z| > eps)`.
    pub fn mass_above(&self, eps: f64) -> Result<f64> {
        match self {
            LevyMeasure::SymmetricPowerLaw { k, gamma } => Ok(2.0 * k * eps.powf(-gamma) / gamma),
            LevyMeasure::Atoms(atoms) => {
                Ok(atoms.iter().filter(|a| a.size.abs() > eps).map(|a| a.rate).sum())
            }
            LevyMeasure::Density(_) => self.integrate_above(eps, |_| 1.0),
        }
    }

    /// `int_{|z| > eps} g(z) nu(dz)`. Divergence of the integral is reported
    /// as [`Error::NonIntegrable`].
    pub fn integrate_above<G: Fn(f64) -> f64>(&self, eps: f64, g: G) -> Result<f64> {
        let wrap = |e: Error| match e {
            Error::Quadrature(msg) => Error::NonIntegrable(msg),
            other => other,
        };
        match self {
            LevyMeasure::Atoms(atoms) => Ok(atoms
                .iter()
                .filter(|a| a.size.abs() > eps)
                .fold(0.0, |acc, a| acc + a.rate * g(a.size))),
            LevyMeasure::SymmetricPowerLaw { k, gamma } => {
                if !(eps > 0.0) {
                    return Err(Error::param("truncation", "must be positive for infinite activity"));
                }
                // z = eps s^(-1/gamma) maps (eps, inf) onto (0, 1] with nu(dz) = k eps^-gamma / gamma ds
                let inv = -1.0 / gamma;
                let integral = quad::integrate(
                    |s| {
                        let z = eps * s.powf(inv);
                        g(z) + g(-z)
                    },
                    0.0,
                    1.0,
                    QUAD_REL_TOL,
                    1e-14,
                )
                .map_err(wrap)?;
                Ok(k * eps.powf(-gamma) / gamma * integral)
            }
            LevyMeasure::Density(rho) => {
                let upper = quad::integrate_to_infinity(|z| g(z) * rho(z), eps, QUAD_REL_TOL, 1e-14)
                    .map_err(wrap)?;
                let lower = quad::integrate_to_infinity(|z| g(-z) * rho(-z), eps, QUAD_REL_TOL, 1e-14)
                    .map_err(wrap)?;
                Ok(upper + lower)
            }
        }
    }

    /// Draws one jump size from `nu` restricted to `|z| > eps`, normalized.
    pub(crate) fn sample_jump(&self, eps: f64, stream: &mut Stream) -> Result<f64> {
        match self {
            LevyMeasure::SymmetricPowerLaw { gamma, .. } => {
                let magnitude = eps * stream.open_unit().powf(-1.0 / gamma);
                Ok(if stream.open_unit() < 0.5 { -magnitude } else { magnitude })
            }
            LevyMeasure::Atoms(atoms) => {
                let live: Vec<&Atom> = atoms.iter().filter(|a| a.size.abs() > eps).collect();
                let total: f64 = live.iter().map(|a| a.rate).sum();
                let mut u = stream.open_unit() * total;
                for a in &live {
                    if u < a.rate {
                        return Ok(a.size);
                    }
                    u -= a.rate;
                }
                live.last().map(|a| a.size).ok_or(Error::param("levy_measure", "no mass above threshold"))
            }
            LevyMeasure::Density(_) => {
                Err(Error::param("levy_measure", "sampling from a generic density is not supported"))
            }
        }
    }
}
