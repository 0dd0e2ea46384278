//! Deterministic random streams and the distribution samplers built on them.
//!
//! Every stream is a ChaCha8 keystream: the 256-bit key is expanded from the
//! master seed and the 64-bit ChaCha stream id selects the sub-stream. Each
//! path and each purpose gets its own stream, so results do not depend on
//! which thread generated which path.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// What a stream is used for. The tag occupies the high bits of the stream id,
/// so two purposes never collide for the same path index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Purpose {
    /// Brownian increments driving Brownian, Volterra and diffusion paths.
    DrivingNoise,
    FbmNoise,
    StableIncrements,
    StableJumps,
    PoissonJumps,
    TestIntegrands,
    SmoothingBrownian,
    SmoothingStable,
    FeynmanKac,
    Custom(u16),
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::DrivingNoise => 1,
            Purpose::FbmNoise => 2,
            Purpose::StableIncrements => 3,
            Purpose::StableJumps => 4,
            Purpose::PoissonJumps => 5,
            Purpose::TestIntegrands => 6,
            Purpose::SmoothingBrownian => 7,
            Purpose::SmoothingStable => 8,
            Purpose::FeynmanKac => 9,
            Purpose::Custom(c) => 0x100 + c as u64,
        }
    }
}

const INDEX_BITS: u32 = 40;

/// Identifies one stream: the run's master seed plus a stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl StreamKey {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self { master_seed, stream_id }
    }

    /// Stream for path `index` used for `purpose`.
    pub fn for_path(master_seed: u64, purpose: Purpose, index: u64) -> Self {
        assert!(index < (1 << INDEX_BITS), "path index exceeds 2^40");
        Self { master_seed, stream_id: (purpose.tag() << INDEX_BITS) | index }
    }

    pub fn stream(&self) -> Stream {
        make_stream(self.master_seed, self.stream_id)
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A counter-based random stream. Cloning it duplicates the position.
#[derive(Debug, Clone)]
pub struct Stream {
    rng: ChaCha8Rng,
}

/// Creates the stream `(master_seed, stream_id)`. Identical arguments always
/// yield identical sequences.
pub fn make_stream(master_seed: u64, stream_id: u64) -> Stream {
    let mut state = master_seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream_id);
    Stream { rng }
}

impl Stream {
    /// Uniform on the open interval (0, 1).
    pub fn open_unit(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn gaussian(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn exponential(&mut self) -> f64 {
        -self.open_unit().ln()
    }

    /// One standard symmetric stable draw with characteristic function
    /// `exp(-|xi|^gamma)` (Chambers-Mallows-Stuck). `gamma` must be in (0, 2).
    pub fn standard_stable(&mut self, gamma: f64) -> f64 {
        let v = PI * (self.open_unit() - 0.5);
        let w = self.exponential();
        if gamma == 1.0 {
            return v.tan();
        }
        let lead = (gamma * v).sin() / v.cos().powf(1.0 / gamma);
        lead * (((1.0 - gamma) * v).cos() / w).powf((1.0 - gamma) / gamma)
    }

    pub fn poisson(&mut self, mean: f64) -> u64 {
        if mean <= 0.0 {
            return 0;
        }
        let dist = rand_distr::Poisson::new(mean).expect("finite positive mean");
        self.rng.sample::<f64, _>(dist) as u64
    }
}

impl RngCore for Stream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// `n` i.i.d. standard normal draws.
pub fn sample_gaussian(stream: &mut Stream, n: usize) -> Vec<f64> {
    (0..n).map(|_| stream.gaussian()).collect()
}

pub(crate) fn check_stable_index(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 2.0) {
        return Err(Error::param("gamma", format!("stability index {gamma} outside (0, 2)")));
    }
    Ok(())
}

/// `n` i.i.d. symmetric stable draws with characteristic function
/// `exp(-scale * |xi|^gamma)`.
pub fn sample_stable(stream: &mut Stream, gamma: f64, scale: f64, n: usize) -> Result<Vec<f64>> {
    check_stable_index(gamma)?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::param("scale", format!("must be positive, got {scale}")));
    }
    let factor = scale.powf(1.0 / gamma);
    Ok((0..n).map(|_| factor * stream.standard_stable(gamma)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::stats;

    #[test]
    fn identical_keys_identical_draws() {
        let mut a = make_stream(42, 0);
        let mut b = make_stream(42, 0);
        let xa: Vec<u64> = (0..100).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..100).map(|_| b.next_u64()).collect();
        assert_eq!(xa, xb);
    }

    #[test]
    fn distinct_stream_ids_differ() {
        let mut a = make_stream(42, 0);
        let mut b = make_stream(42, 1);
        let xa: Vec<u64> = (0..100).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..100).map(|_| b.next_u64()).collect();
        assert_ne!(xa, xb);
    }

    #[test]
    fn paired_streams_uncorrelated() {
        let mut a = make_stream(42, 0);
        let mut b = make_stream(42, 1);
        let n = 100_000;
        let xa = sample_gaussian(&mut a, n);
        let xb = sample_gaussian(&mut b, n);
        let rho = stats::correlation(&xa, &xb);
        assert!(rho.abs() < 0.02, "rho = {rho}");
    }

    #[test]
    fn gaussian_moments() {
        let n = 1_000_000;
        let x = sample_gaussian(&mut make_stream(7, 3), n);
        let nf = n as f64;
        let m = stats::mean(&x);
        let v = stats::variance(&x);
        let skew = x.iter().map(|z| (z - m).powi(3)).sum::<f64>() / nf / v.powf(1.5);
        assert!(m.abs() < 4.0 / nf.sqrt(), "mean {m}");
        assert!((v - 1.0).abs() < 4.0 * (2.0 / nf).sqrt(), "var {v}");
        assert!(skew.abs() < 4.0 * (6.0 / nf).sqrt(), "skew {skew}");
    }

    fn charfn_check(gamma: f64, scale: f64, xi: f64, seed: u64) {
        let x = sample_stable(&mut make_stream(seed, 0), gamma, scale, 100_000).unwrap();
        let c: Vec<f64> = x.iter().map(|v| (xi * v).cos()).collect();
        let est = stats::Estimate::of_mean(&c);
        let target = (-scale * xi.abs().powf(gamma)).exp();
        assert!(
            (est.value - target).abs() <= 4.0 * est.std_error,
            "gamma {gamma}: {} vs {target} (se {})",
            est.value,
            est.std_error
        );
    }

    #[test]
    fn stable_charfn_at_unit_frequency() {
        // exp(-1) ~ 0.3679
        charfn_check(1.5, 1.0, 1.0, 11);
    }

    #[test]
    fn stable_charfn_near_gaussian_index() {
        // exp(-0.5^1.9) = exp(-0.2679)
        charfn_check(1.9, 1.0, 0.5, 12);
    }

    #[test]
    fn cauchy_median_is_zero() {
        let n = 100_000;
        let mut x = sample_stable(&mut make_stream(5, 9), 1.0, 1.0, n).unwrap();
        x.sort_by(|a, b| a.total_cmp(b));
        let median = x[n / 2];
        // median SE for Cauchy(0,1): 1 / (2 f(0) sqrt(n)) with f(0) = 1/pi
        let se = PI / (2.0 * (n as f64).sqrt());
        assert!(median.abs() <= 4.0 * se, "median {median}");
    }

    #[test]
    fn rejects_bad_index() {
        let mut s = make_stream(1, 1);
        assert!(sample_stable(&mut s, 2.5, 1.0, 3).is_err());
        assert!(sample_stable(&mut s, 0.0, 1.0, 3).is_err());
        assert!(sample_stable(&mut s, 1.0, -1.0, 3).is_err());
    }

    #[test]
    fn path_keys_do_not_collide_across_purposes() {
        let a = StreamKey::for_path(1, Purpose::DrivingNoise, 5);
        let b = StreamKey::for_path(1, Purpose::FbmNoise, 5);
        assert_ne!(a.stream_id, b.stream_id);
    }
}
