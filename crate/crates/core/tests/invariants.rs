//! Property tests over randomly drawn models, through the public API.

use proptest::prelude::*;

use qsc_core::conversion::{hamiltonian_strat, identity_residuals, ito_to_strat, neumann_sum, strat_to_ito};
use qsc_core::diagrams::{enumerate_vacuum_diagrams, is_time_consecutive, tc_sum_at_vertices, vacuum_series_sum};
use qsc_core::ensemble::{random_gauge, random_hermitian_family, random_matrix, rng};
use qsc_core::flow::{dissipation_residual, EhGenerator};
use qsc_core::modelspec::{parse, serialize, Coefficients, GaugeDecl, ModelSpec};
use qsc_core::operator::spectral_norm;
use qsc_core::unitarity::{hp_from_ito, ito_from_hp, unitarity_residuals};
use qsc_core::{GaugeSpec, Mat, OperatorMatrix};

fn model(seed: u64, channels: usize, dim: usize, contraction: f64) -> (OperatorMatrix, GaugeSpec) {
    let mut r = rng(seed);
    let gauge = random_gauge(&mut r, channels, 0.8);
    let e = random_hermitian_family(&mut r, channels, dim, &gauge, contraction);
    (e, gauge)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conversion_round_trip(seed in any::<u64>(), n in 1usize..4, d in 1usize..4, a in 0.05f64..0.95) {
        let (e, gauge) = model(seed, n, d, a);
        let g0 = hamiltonian_strat(&e);
        let cr = strat_to_ito(&g0, &gauge).unwrap();
        prop_assert!(identity_residuals(&cr).max() <= 1e-9 * (1.0 + g0.op_norm()).powi(2) / (1.0 - a));
        let back = ito_to_strat(&cr.g, &gauge).unwrap();
        prop_assert!((&back.g0 - &g0).op_norm() <= 1e-9 * (1.0 + g0.op_norm()));
    }

    #[test]
    fn hamiltonian_models_are_unitary(seed in any::<u64>(), n in 1usize..4, d in 1usize..3) {
        let (e, gauge) = model(seed, n, d, 0.7);
        let g = strat_to_ito(&hamiltonian_strat(&e), &gauge).unwrap().g;
        let (iso, coiso) = unitarity_residuals(&g);
        prop_assert!(iso.max(coiso) <= 1e-9);
        let hp = hp_from_ito(&g).unwrap().params;
        prop_assert!((&ito_from_hp(&hp).unwrap() - &g).op_norm() <= 1e-9 * (1.0 + g.op_norm()));
    }

    #[test]
    fn generators_agree_and_dissipation_vanishes(seed in any::<u64>(), n in 1usize..3, d in 1usize..4) {
        let (e, gauge) = model(seed, n, d, 0.6);
        let cr = strat_to_ito(&hamiltonian_strat(&e), &gauge).unwrap();
        let direct = EhGenerator::direct(&cr.g);
        let sandwich = EhGenerator::sandwich(&e, &cr.f).unwrap();
        let mut r = rng(seed ^ 1);
        let x = random_matrix(&mut r, d, d);
        let y = random_matrix(&mut r, d, d);
        for a in 0..=n {
            for b in 0..=n {
                let l = direct.apply(a, b, &x).unwrap();
                let diff = spectral_norm(&(&l - sandwich.apply(a, b, &x).unwrap()));
                prop_assert!(diff <= 1e-9 * (1.0 + spectral_norm(&l)));
                let scale = (1.0 + cr.g.op_norm()).powi(2) * (1.0 + spectral_norm(&x)) * (1.0 + spectral_norm(&y));
                prop_assert!(dissipation_residual(&direct, a, b, &x, &y).unwrap() <= 1e-9 * scale);
            }
        }
    }

    #[test]
    fn neumann_tail_bound_holds(seed in any::<u64>(), order in 0usize..25, a in 0.05f64..0.9) {
        let (e, gauge) = model(seed, 1, 2, a);
        let g0 = hamiltonian_strat(&e);
        let exact = strat_to_ito(&g0, &gauge).unwrap().g;
        let ns = neumann_sum(&g0, &gauge, order).unwrap();
        prop_assert!((&ns.sum - &exact).op_norm() <= ns.tail_bound + 1e-12 * (1.0 + exact.op_norm()));
    }

    #[test]
    fn resummed_series_matches_vertex_expansion(seed in any::<u64>(), t in 0.0f64..1.0) {
        // blocks-resummed series and vertex-ordered sum share the same limit
        let (e, gauge) = model(seed, 1, 2, 0.4);
        let v = gauge.v();
        let s = vacuum_series_sum(&e, &v, t, 40).unwrap();
        let mut by_n = Mat::zeros(2, 2);
        for n in 0..=80 {
            by_n += tc_sum_at_vertices(&e, &v, t, n).unwrap();
        }
        prop_assert!(spectral_norm(&(&s.value - &by_n)) <= 1e-9 * (1.0 + spectral_norm(&by_n)));
    }

    #[test]
    fn itô_specs_round_trip_through_text(seed in any::<u64>(), n in 1usize..3, d in 1usize..3) {
        let (e, gauge) = model(seed, n, d, 0.5);
        let g = strat_to_ito(&hamiltonian_strat(&e), &gauge).unwrap().g;
        let spec = ModelSpec {
            d,
            n,
            coefficients: Coefficients::Ito(g),
            gauge: GaugeDecl::Explicit(gauge.z().clone()),
            noise: None,
            simulation: None,
            observable: None,
        };
        prop_assert_eq!(parse(&serialize(&spec)).unwrap(), spec);
    }
}

#[test]
fn time_consecutive_count_is_a_power_of_two() {
    for n in 1..=8 {
        let tc = enumerate_vacuum_diagrams(n).unwrap().iter().filter(|d| is_time_consecutive(d)).count();
        assert_eq!(tc, 1 << (n - 1));
    }
}

#[test]
fn zero_time_series_is_identity() {
    let (e, gauge) = model(3, 2, 2, 0.5);
    let s = vacuum_series_sum(&e, &gauge.v(), 0.0, 5).unwrap();
    assert_eq!(s.value, Mat::identity(2, 2));
}
