use proptest::prelude::*;

use factorlab::cli::config::{CheckName, ExperimentConfig};
use factorlab::functional_calc::{non_anticipativity_violations, vertical_derivative, PathFunctional};
use factorlab::generators::{spectral_evolve, GeneratorParams, SpectralField};
use factorlab::integration::{ito_integral, quadratic_variation, AdaptedProcessSample};
use factorlab::paths::{io, simulate_brownian, TimeGrid};
use factorlab::randomness::{Purpose, StreamKey};

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn ito_integral_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
        let x = simulate_brownian(&TimeGrid::new(1.0, 16).unwrap(), 50, seed).unwrap();
        let u = AdaptedProcessSample::from_fn(&x, |_, t, p| p[p.len() - 1] * t);
        let w = AdaptedProcessSample::from_fn(&x, |i, _, p| p[..=i].iter().fold(0.0f64, |m, v| m.max(*v)));
        let lhs = ito_integral(&AdaptedProcessSample::combine(a, &u, b, &w).unwrap(), &x).unwrap();
        let du = ito_integral(&u, &x).unwrap();
        let dw = ito_integral(&w, &x).unwrap();
        for r in 0..x.num_paths() {
            let rhs = a * du.values[r] + b * dw.values[r];
            prop_assert!((lhs.values[r] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn quadratic_variation_is_monotone(seed in 0u64..1000, steps in 1usize..40) {
        let x = simulate_brownian(&TimeGrid::new(2.0, steps).unwrap(), 5, seed).unwrap();
        let qv = quadratic_variation(&x);
        for row in qv.outer_iter() {
            prop_assert_eq!(row[0], 0.0);
            for w in row.as_slice().unwrap().windows(2) {
                prop_assert!(w[1] >= w[0]);
            }
        }
    }

    #[test]
    fn streams_are_reproducible(seed in any::<u64>(), index in 0u64..(1u64 << 40)) {
        let mut a = StreamKey::for_path(seed, Purpose::DrivingNoise, index).stream();
        let mut b = StreamKey::for_path(seed, Purpose::DrivingNoise, index).stream();
        for _ in 0..8 {
            prop_assert_eq!(a.gaussian().to_bits(), b.gaussian().to_bits());
        }
    }

    #[test]
    fn semigroup_composes(s in 0.01f64..0.5, t in 0.01f64..0.5, alpha in 0.0f64..1.5, beta in 0.1f64..1.5, gamma in 0.3f64..1.95) {
        let p = GeneratorParams::new(alpha, beta, gamma, 1.0).unwrap();
        let f = SpectralField::from_fn(20.0, 256, |x| (-x * x).exp()).unwrap();
        let two = spectral_evolve(&spectral_evolve(&f, s, &p).unwrap(), t, &p).unwrap();
        let one = spectral_evolve(&f, s + t, &p).unwrap();
        for (a, b) in two.values().iter().zip(one.values()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn library_functionals_ignore_the_future(seed in 0u64..1000) {
        let g = TimeGrid::new(1.0, 32).unwrap();
        let w = simulate_brownian(&g, 1, seed).unwrap().path(0).to_vec();
        for u in [PathFunctional::running_max(), PathFunctional::conditional_running_integral()] {
            prop_assert!(non_anticipativity_violations(&u, &w, &g, 20, seed).unwrap().is_empty());
        }
    }

    #[test]
    fn vertical_derivative_of_square(value in -5.0f64..5.0, k in 0usize..=16) {
        let g = TimeGrid::new(1.0, 16).unwrap();
        let mut w = vec![0.0; 17];
        w[k] = value;
        let d = vertical_derivative(&PathFunctional::current_square(), &w, &g, k, 1e-3).unwrap();
        prop_assert!((d - 2.0 * value).abs() <= 1e-9);
    }

    #[test]
    fn binary_container_roundtrips(seed in 0u64..1000, steps in 1usize..10, m in 0usize..6) {
        let g = TimeGrid::new(0.5, steps).unwrap();
        let x = if m == 0 {
            factorlab::paths::PathEnsemble::from_matrix(g, ndarray::Array2::zeros((0, steps + 1)),
                factorlab::paths::ProcessLabel::Brownian).unwrap()
        } else {
            simulate_brownian(&g, m, seed).unwrap()
        };
        let mut buf = Vec::new();
        io::write_binary(&x, &mut buf).unwrap();
        let (back, _) = io::read_binary(&buf[..]).unwrap();
        prop_assert_eq!(back.paths(), x.paths());
        prop_assert_eq!(back.grid(), x.grid());
    }

    #[test]
    fn config_roundtrips(seed in any::<u64>(), steps in 16usize..512, paths in 2usize..100_000, pick in 0usize..12) {
        let cfg = ExperimentConfig {
            master_seed: seed,
            paths,
            suite: vec![CheckName::ALL[pick]],
            ..ExperimentConfig::default()
        };
        let mut cfg = cfg;
        cfg.grid.steps = steps;
        if cfg.validate().is_ok() {
            let text = serde_json::to_string(&cfg).unwrap();
            prop_assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
        }
    }
}
