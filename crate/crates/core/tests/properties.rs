use laser_coherence::bounds::{g_asymmetry, msse_exact, HeterodyneSetup};
use laser_coherence::control::{solve_vandermonde, DoubleDouble, Precision};
use laser_coherence::discrete::{build_discrete, transfer_matrix};
use laser_coherence::glauber::{model_g2, FourTimes};
use laser_coherence::superop::{build_liouvillian, FlatVector};
use laser_coherence::{build_model, custom_model, phase_covariance_check};
use proptest::prelude::*;

fn loss_profile() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..20.0, 1..12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn steady_state_is_a_normalized_fixed_point(loss in loss_profile()) {
        let m = custom_model(&loss).unwrap();
        prop_assert!((m.steady.iter().sum::<f64>() - 1.0).abs() < 1e-13);
        prop_assert!(m.steady.iter().all(|&p| p >= 0.0));
        prop_assert!(m.fixed_point_residual() < 1e-12);
        let l = build_liouvillian(&m);
        let out = l.apply(&FlatVector::from_diagonal(&m.steady));
        prop_assert!(out.max_abs() < 1e-12 * l.max_abs().max(1.0));
    }

    #[test]
    fn liouvillian_preserves_trace(loss in loss_profile(), seed in 0u64..1000) {
        let m = custom_model(&loss).unwrap();
        let l = build_liouvillian(&m);
        let d = m.dim;
        let x: Vec<f64> = (0..d * d).map(|i| (((i as u64 + 1) * (seed + 3)) % 17) as f64 - 8.0).collect();
        let y = l.apply(&FlatVector::from_data(d, x));
        prop_assert!(y.trace().abs() < 1e-11 * l.max_abs().max(1.0) * 8.0 * (d * d) as f64);
    }

    #[test]
    fn model_is_phase_covariant(loss in loss_profile(), zeta in -3.0f64..3.0) {
        let m = custom_model(&loss).unwrap();
        prop_assert!(phase_covariance_check(&m, zeta) < 1e-12);
        prop_assert!(build_liouvillian(&m).phase_invariance_residual(zeta) < 1e-12);
    }

    #[test]
    fn discrete_step_is_isometric_with_fixed_point(d in 2usize..30, frac in 0.01f64..0.95) {
        let m = build_model(d).unwrap();
        let l0max = m.l0_diagonal().into_iter().fold(0.0, f64::max);
        let gamma = (frac / l0max).sqrt();
        let dm = build_discrete(&m, gamma).unwrap();
        prop_assert!(dm.isometry_residual() < 1e-13);
        let t = transfer_matrix(&dm);
        let s = FlatVector::from_diagonal(&m.steady);
        let out = t.apply(&s);
        let err = out.data.iter().zip(&s.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-13);
    }

    #[test]
    fn g2_is_symmetric_under_pair_swaps(d in 3usize..10, t in prop::array::uniform4(-3.0f64..3.0)) {
        let m = build_model(d).unwrap();
        let a = model_g2(&m, &FourTimes::new(t[0], t[1], t[2], t[3])).unwrap();
        let b = model_g2(&m, &FourTimes::new(t[1], t[0], t[3], t[2])).unwrap();
        prop_assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        prop_assert!(a >= -1e-12);
    }

    #[test]
    fn msse_is_positive_and_falls_with_flux(x in 1e-4f64..2.0, n in 0.5f64..4.0) {
        let a = msse_exact(&HeterodyneSetup::new(n, 1.0, x).unwrap());
        let b = msse_exact(&HeterodyneSetup::new(2.0 * n, 1.0, x).unwrap());
        prop_assert!(a > 0.0 && b > 0.0 && b < a);
    }

    #[test]
    fn vandermonde_residual_small_in_double(d in 2usize..=10, seed in 0u64..1000) {
        let rhs: Vec<f64> = (1..d).map(|n| 0.1 + ((n as u64 * 7 + seed) % 13) as f64 / 4.0).collect();
        let sys = solve_vandermonde(d, &rhs, Some(Precision::Double)).unwrap();
        let norm = rhs.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        prop_assert!(sys.residual <= 1e-8 * norm);
    }

    #[test]
    fn double_double_round_trips(a in -1e6f64..1e6, b in 1e-3f64..1e6) {
        let (x, y) = (DoubleDouble::new(a), DoubleDouble::new(b));
        let q = (x / y) * y - x;
        prop_assert!(q.to_f64().abs() <= 1e-28 * a.abs().max(1.0));
        prop_assert_eq!((x + y - y).to_f64(), a);
    }
}

#[test]
fn asymmetry_increases_with_mean() {
    let mut prev = 0.0;
    for nbar in [0.5, 2.0, 10.0, 50.0, 300.0] {
        let a = g_asymmetry(nbar, (60.0 * nbar).ceil() as u64 + 60).unwrap().value;
        assert!(a > prev, "{nbar}: {a} <= {prev}");
        prev = a;
    }
}
