use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use singcurv::clifford::{build_gamma, verify_omega_contraction, Omega3};
use singcurv::dirac::{build_d0, conjugated_operator, count_kernel, test_spinor, ConformalSurface, SpinStructureTorus};
use singcurv::frame::{connection_at, harmonic_alpha, ConePoint, vierbein_at, MetricField, SigmaSpec, TrigTerm};
use singcurv::integrability::linear_fit;
use singcurv::measure::smooth_r_density;
use singcurv::par;
use singcurv::quad::gauss_on;

fn trig_sigma(n: usize, amps: &[f64], phases: &[f64]) -> SigmaSpec {
    let terms = amps
        .iter()
        .zip(phases)
        .enumerate()
        .map(|(i, (a, p))| TrigTerm { amp: *a, k: (0..n).map(|d| 0.5 + ((i + d) % 3) as f64 * 0.7).collect(), phase: *p })
        .collect();
    SigmaSpec::Trig { terms }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gauss_rule_is_exact_on_polynomials(m in 1usize..12, a in -2.0f64..0.0, len in 0.1f64..3.0, coefs in prop::collection::vec(-1.0f64..1.0, 1..24)) {
        let b = a + len;
        let deg = (2 * m - 1).min(coefs.len() - 1);
        let p = |x: f64| coefs[..=deg].iter().rev().fold(0.0, |acc, c| acc * x + c);
        let exact: f64 = coefs[..=deg].iter().enumerate().map(|(k, c)| c * (b.powi(k as i32 + 1) - a.powi(k as i32 + 1)) / (k as f64 + 1.0)).sum();
        let q: f64 = gauss_on(a, b, m).iter().map(|(x, w)| w * p(*x)).sum();
        prop_assert!((q - exact).abs() <= 1e-11 * (1.0 + exact.abs()));
    }

    #[test]
    fn ordered_sum_is_thread_independent(v in prop::collection::vec(-1e6f64..1e6, 0..400)) {
        let a = par::sum(&par::map(&v, |x| x * 2.0));
        let b = par::with_threads(1, || par::sum(&par::map(&v, |x| x * 2.0)));
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn frames_and_connections_are_consistent(seed in 0u64..1000, x in prop::collection::vec(-0.5f64..0.5, 3)) {
        let m = MetricField::trig_random(3, seed);
        let f = vierbein_at(&m, &x).unwrap();
        prop_assert!(f.residuals(&m.g(&x)) < 1e-12);
        let c = connection_at(&m, &x).unwrap();
        prop_assert!(c.antisymmetry_defect() < 1e-10);
        prop_assert!(c.torsion_residual() < 1e-8);
        prop_assert!(c.logdet_residual() < 1e-8);
    }

    #[test]
    fn frame_route_matches_conformal_closed_form(n in 2usize..4, amps in prop::collection::vec(-0.3f64..0.3, 1..3), phase in 0.0f64..6.0, x in prop::collection::vec(-0.4f64..0.4, 3)) {
        let phases: Vec<f64> = (0..amps.len()).map(|i| phase + i as f64).collect();
        let s = trig_sigma(n, &amps, &phases);
        let m = MetricField::conformal(n, s.clone());
        let r = smooth_r_density(&m, &x[..n]).unwrap();
        let want = s.scalar_curvature(&x[..n]);
        prop_assert!((r - want).abs() <= 1e-6 * (1.0 + want.abs()), "{} vs {}", r, want);
    }

    #[test]
    fn contraction_identity_random_omega(seed in 0u64..10_000, n in 3usize..5) {
        let g = build_gamma(n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = verify_omega_contraction(&g, &Omega3::random(n, &mut rng)).unwrap();
        prop_assert!(r.rel_residual <= 1e-12);
    }

    #[test]
    fn conjugated_operator_is_symmetric(seed in 0u64..1000, c in 0.0f64..0.9, px in 0.1f64..0.9, spin in 0usize..4) {
        let s = ConformalSurface { lengths: [1.0, 1.0], cones: vec![ConePoint { at: vec![px, 0.5], c }], smooth: None, delta: None };
        let spin = SpinStructureTorus::all()[spin];
        let d0 = build_d0(spin, 8, s.lengths).unwrap();
        let d = conjugated_operator(&s, &d0).unwrap();
        let a = test_spinor(&s, 8, spin, seed, 0.2);
        let b = test_spinor(&s, 8, spin, seed + 1, 0.2);
        prop_assert!(d.adjointness_residual(&a, &b) < 1e-12);
    }

    #[test]
    fn kernel_count_is_scale_invariant(mut sv in prop::collection::vec(1e-3f64..10.0, 60..200), zeros in 0usize..3, scale in 1e-3f64..1e3) {
        for z in sv.iter_mut().take(zeros) {
            *z = 0.0;
        }
        sv.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let scaled: Vec<f64> = sv.iter().map(|v| v * scale).collect();
        prop_assert_eq!(count_kernel(&sv, 1e-3).k, count_kernel(&scaled, 1e-3).k);
        prop_assert_eq!(count_kernel(&sv, 1e-5).k, zeros);
    }

    #[test]
    fn alpha_solves_its_quadratic(n in 2usize..8, c in 0.0f64..0.95) {
        let a = harmonic_alpha(n, c);
        let nf = n as f64;
        prop_assert!((a * a + (nf - 2.0) * a - (nf - 1.0) / (1.0 - c).powi(2)).abs() < 1e-9 * (1.0 + a * a));
        prop_assert!(a >= 1.0 - 1e-12);
    }

    #[test]
    fn linear_fit_recovers_lines(s in -5.0f64..5.0, b in -3.0f64..3.0) {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| b + s * v).collect();
        let (fs, fb, r2, res) = linear_fit(&x, &y);
        prop_assert!((fs - s).abs() < 1e-10 && (fb - b).abs() < 1e-9 && res < 1e-9);
        prop_assert!(r2 > 1.0 - 1e-9);
    }
}
