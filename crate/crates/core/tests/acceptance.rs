//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use singcurv::clifford::{build_gamma, verify_omega_contraction, verify_triple_commutator, verify_commutator_product, verify_gamma_commutator, Omega3, TupleMode, VerifyOptions};
use singcurv::dirac::{dirac_sweep, lichnerowicz_vanishing, quarter_density_check, ConformalSurface, LichnerowiczOutcome, LichnerowiczTarget, SpinStructureTorus};
use singcurv::frame::{MetricField, SigmaSpec, TrigTerm, WarpProfile};
use singcurv::harmonic::{dyadic_eps, harmonic_cone_metric, harmonic_r_density, harmonicity_residual, neighborhood_scaling, shell_samples, Core, HarmonicChart, ScalingOptions, ScalingVerdict};
use singcurv::integrability::{all_integrable, frame_coefficient_quantities, audit, lp_threshold_scan, power_law_oracle_slope, curvature_terms_audit, dirac_square_audit, ScanOptions, Verdict};
use singcurv::measure::{cone_family_density_exponent, decompose, default_probes, gluing_dr, integrate_f_r, pair_dr, smooth_r_density, DecomposeOptions, QuadOptions};
use singcurv::testfn::{AngularWindow, BaseFactor, Plateau, TestFunction};
use std::f64::consts::PI;
use std::time::Instant;

struct Outcome {
    pass: bool,
    detail: String,
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn identities() -> Outcome {
    let t = Instant::now();
    let mut ok = true;
    let mut worst_float = 0.0f64;
    for n in [2, 3, 4, 6] {
        let g = build_gamma(n).unwrap();
        let opts = VerifyOptions { mode: TupleMode::default_for(n, 11), g0_sign: 1 };
        for r in [verify_commutator_product(&g, opts), verify_triple_commutator(&g, opts), verify_gamma_commutator(&g, opts)] {
            ok &= r.exact_zero && (n > 4 || r.exhaustive);
            worst_float = worst_float.max(r.float_residual);
        }
    }
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in [3, 4] {
        let g = build_gamma(n).unwrap();
        for _ in 0..20 {
            worst = worst.max(verify_omega_contraction(&g, &Omega3::random(n, &mut rng)).unwrap().rel_residual);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Outcome {
        pass: ok && worst <= 1e-12 && secs < 60.0,
        detail: format!("exact residuals zero = {ok}, float {worst_float:.1e}, contraction rel {worst:.1e}, {secs:.1}s"),
    }
}

fn smooth_consistency() -> Outcome {
    let t = Instant::now();
    let q = QuadOptions::default();
    let mut worst = 0.0f64;
    let sphere = MetricField::stereographic_sphere(2, 1.0);
    let trig = MetricField::trig_random(3, 7);
    for k in 0..10 {
        let s = k as f64 / 10.0;
        let f2 = TestFunction::bump(vec![0.3 * (2.0 * PI * s).cos(), 0.3 * (2.0 * PI * s).sin()], 0.2 + 0.03 * k as f64, 0.6 + 0.05 * k as f64);
        let f3 = TestFunction::bump(vec![0.1 * s, -0.1 * s, 0.05], 0.15 + 0.02 * k as f64, 0.4 + 0.03 * k as f64);
        for (m, f) in [(&sphere, f2), (&trig, f3)] {
            let a = pair_dr(m, &f, &q).unwrap().value;
            let b = integrate_f_r(m, &f, &q).unwrap().value;
            worst = worst.max(rel(a, b));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Outcome { pass: worst <= 1e-5 && secs < 120.0, detail: format!("max rel {worst:.1e} over 20 pairings, {secs:.1}s") }
}

fn cone_atom() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for c in [0.25, 0.5, 0.75] {
        let t = Instant::now();
        let m = MetricField::cone(c, 2);
        let d = decompose(&m, &default_probes(&m, 0.5, 3, 0.0, 0.0), &DecomposeOptions::default()).unwrap();
        let w = d.atoms[0].weight;
        let e = rel(w, 4.0 * PI * c);
        let secs = t.elapsed().as_secs_f64();
        pass &= d.atoms[0].detected && e <= 0.01 && secs < 60.0;
        parts.push(format!("c={c}: {w:.6} (rel {e:.1e}, {secs:.1}s)"));
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn gluing() -> Outcome {
    let q = QuadOptions::default();
    let disk = WarpProfile::FlatBall { a: 1.0 };
    let f = TestFunction::Split {
        center: vec![0.0, 0.0],
        polar: vec![0],
        shell: 0.0,
        radial: Plateau::new(0.3, 0.6),
        base: vec![BaseFactor::Periodic { lo: 0.0, hi: 2.0 * PI }],
        window: None,
        value: 1.0,
    };
    let g = gluing_dr(&disk, &disk, 2, &f, &q).unwrap();
    let e_total = rel(g.total, 8.0 * PI);
    // same surface in the inversion chart, densities sampled at several points of the circle
    let m = MetricField::conformal(2, SigmaSpec::InversionDouble { a: 1.0 });
    let local: Vec<(usize, TestFunction)> = (0..6)
        .map(|k| {
            (
                0,
                TestFunction::Split {
                    center: vec![0.0, 0.0],
                    polar: vec![0, 1],
                    shell: 1.0,
                    radial: Plateau::new(0.05, 0.1),
                    base: vec![],
                    window: Some(AngularWindow { theta0: k as f64 * PI / 3.0, plateau: Plateau::new(0.1, 0.3) }),
                    value: 1.0,
                },
            )
        })
        .collect();
    let d = decompose(&m, &default_probes(&m, 0.4, 3, 0.0, 0.0), &DecomposeOptions { local_probes: local, ..Default::default() }).unwrap();
    let mut e_local = rel(g.surface_density, 4.0);
    for l in &d.strata[0].local {
        e_local = e_local.max(rel(l.density, 4.0));
    }
    Outcome {
        pass: e_total <= 1e-3 && e_local <= 5e-3,
        detail: format!("total {:.8} (rel {e_total:.1e}), density worst rel {e_local:.1e} over {} points", g.total, d.strata[0].local.len() + 1),
    }
}

fn cone_family() -> Outcome {
    let m = MetricField::cone_family(1, 2, 0.3);
    let d = decompose(&m, &default_probes(&m, 0.4, 3, 0.3, 0.7), &DecomposeOptions::default()).unwrap();
    let w = d.strata[0].density;
    let e = rel(w, 4.0 * PI * 0.3);
    let m3 = MetricField::cone_family(1, 3, 0.3);
    let d3 = decompose(&m3, &default_probes(&m3, 0.4, 3, 0.3, 0.7), &DecomposeOptions::default()).unwrap();
    let (slope, _) = cone_family_density_exponent(1, 3, 0.3, &[0.005, 0.01, 0.02, 0.04, 0.08]).unwrap();
    Outcome {
        pass: d.strata[0].detected && e <= 0.01 && !d3.strata[0].detected && (slope + 2.0).abs() <= 0.05,
        detail: format!("2-fiber weight {w:.6} (rel {e:.1e}); 3-fiber stratum detected = {}, density exponent {slope:.4}", d3.strata[0].detected),
    }
}

fn integrability() -> Outcome {
    let o = ScanOptions::default();
    let mut pass = true;
    let mut fit = 0.0f64;
    let mut parts = Vec::new();
    for (n, want) in [(3, Verdict::Integrable), (2, Verdict::Divergent)] {
        let m = MetricField::cone(0.5, n);
        let r = audit(&m, &vec![0.0; n], &frame_coefficient_quantities()[1..], None, &o).unwrap();
        fit = fit.max((r[0].slope - power_law_oracle_slope(-0.5, 2.0, n, 0.5)).abs());
        pass &= r[0].verdict == want;
        parts.push(format!("L² connection n={n}: {:?}", r[0].verdict));
    }
    let grid3: Vec<f64> = (0..9).map(|i| 2.0 + 0.25 * i as f64).collect();
    let t3 = lp_threshold_scan(3, 0.5, &grid3, &o).unwrap();
    let grid2: Vec<f64> = (0..9).map(|i| 1.0 + 0.25 * i as f64).collect();
    let t2 = lp_threshold_scan(2, 0.5, &grid2, &o).unwrap();
    pass &= t3.brackets(3.0) && t2.brackets(2.0);
    fit = fit.max(t3.max_fit_error).max(t2.max_fit_error);
    parts.push(format!("threshold n=3 in ({}, {}], n=2 in ({}, {}]", t3.last_integrable, t3.first_divergent, t2.last_integrable, t2.first_divergent));
    for n in [2, 3] {
        let m = MetricField::cone(0.4, n);
        let x0 = vec![0.0; n];
        let ok = all_integrable(&curvature_terms_audit(&m, &x0, &o).unwrap()) && all_integrable(&dirac_square_audit(&m, &x0, &o).unwrap());
        pass &= ok;
        parts.push(format!("audits n={n}: {ok}"));
    }
    pass &= fit <= 0.05;
    parts.push(format!("max fit error {fit:.1e}"));
    Outcome { pass, detail: parts.join("; ") }
}

fn dirac() -> Outcome {
    let t = Instant::now();
    let rows = dirac_sweep(&SpinStructureTorus::all(), &[0.0, 0.25, 0.5], &[16, 32]).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let index_zero = rows.iter().all(|r| r.index == 0);
    let oracle = rows.iter().all(|r| r.matches_oracle);
    let gap = rows.iter().map(|r| r.gap_ratio).fold(f64::INFINITY, f64::min);
    let stable = rows.iter().filter(|r| r.n == 16).all(|a| rows.iter().any(|b| b.n == 32 && b.spin == a.spin && b.c == a.c && b.k_plus == a.k_plus && b.k_minus == a.k_minus));
    Outcome {
        pass: index_zero && oracle && stable && gap >= 10.0 && secs < 600.0,
        detail: format!("{} rows, index all zero = {index_zero}, k₊ matches Fourier count = {oracle}, stable = {stable}, min gap ratio {gap:.1}, {secs:.1}s", rows.len()),
    }
}

fn quarter_density() -> Outcome {
    let smooth = ConformalSurface {
        lengths: [1.0, 1.0],
        cones: vec![],
        smooth: Some(SigmaSpec::Trig {
            terms: vec![TrigTerm { amp: 0.3, k: vec![2.0 * PI, 0.0], phase: 0.2 }, TrigTerm { amp: 0.2, k: vec![2.0 * PI, -2.0 * PI], phase: 1.0 }],
        }),
        delta: None,
    };
    let spin = SpinStructureTorus { periodic: [true, false] };
    let a = quarter_density_check(&smooth, 32, spin).unwrap();
    let b = quarter_density_check(&ConformalSurface::single_cone(0.5), 32, spin).unwrap();
    Outcome { pass: a.residual <= 1e-10 && b.residual <= 1e-8, detail: format!("smooth {:.1e}, cone {:.1e} at N=32", a.residual, b.residual) }
}

fn lichnerowicz() -> Outcome {
    match lichnerowicz_vanishing(&LichnerowiczTarget::RoundSphere, 400, 6, 0) {
        LichnerowiczOutcome::Sphere(r) => Outcome {
            pass: r.squared >= 0.475,
            detail: format!("s_min² = {:.6} (bound 0.475), form residual {:.1e}", r.squared, r.form_residual),
        },
        LichnerowiczOutcome::Infeasible { reason } => Outcome { pass: false, detail: reason },
    }
}

fn harmonic() -> Outcome {
    let mut worst_h = 0.0f64;
    for n in 2..=4 {
        for k in 1..=9 {
            let c = k as f64 / 10.0;
            let m = harmonic_cone_metric(n, c).unwrap();
            worst_h = worst_h.max(harmonicity_residual(&m, &shell_samples(n, &vec![0.0; n], 0.05, 1.0, 20, k as u64)).unwrap());
        }
    }
    let eps = dyadic_eps(0.25, 12);
    let mut verdicts = Vec::new();
    for n in [2, 3] {
        let m = harmonic_cone_metric(n, 0.5).unwrap();
        let h = HarmonicChart::new(m, &shell_samples(n, &vec![0.0; n], 0.1, 0.5, 5, 0), None).unwrap();
        let r = neighborhood_scaling(&h, &Core::Point { at: vec![0.0; n] }, &eps, &ScalingOptions::default(), "harmonic_cone").unwrap();
        verdicts.push((n, r.verdict, r.slope));
    }
    let scaling_ok = verdicts[0].1 == ScalingVerdict::NotMet && verdicts[1].1 == ScalingVerdict::Met;
    let mut worst_r = 0.0f64;
    let charts = [
        MetricField::stereographic_sphere(2, 1.0),
        MetricField::conformal(2, SigmaSpec::Trig { terms: vec![TrigTerm { amp: 0.3, k: vec![1.3, 0.4], phase: 0.1 }, TrigTerm { amp: 0.2, k: vec![-0.5, 2.0], phase: 0.7 }] }),
    ];
    for (i, m) in charts.iter().enumerate() {
        let pts = shell_samples(2, &[0.0, 0.0], 0.0, 1.0, 50, 100 + i as u64);
        let h = HarmonicChart::new(m.clone(), &pts, None).unwrap();
        for x in &pts {
            let a = harmonic_r_density(&h, x).unwrap();
            let b = smooth_r_density(m, x).unwrap();
            worst_r = worst_r.max((a - b).abs() / b.abs().max(1e-12));
        }
    }
    Outcome {
        pass: worst_h <= 1e-6 && scaling_ok && worst_r <= 1e-6,
        detail: format!(
            "harmonicity {worst_h:.1e}; scaling n=2 {:?} (e={:.3}), n=3 {:?} (e={:.3}); formula vs frame {worst_r:.1e} at 100 points",
            verdicts[0].1, verdicts[0].2, verdicts[1].1, verdicts[1].2
        ),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("identity suite", identities),
        ("smooth consistency", smooth_consistency),
        ("cone atom", cone_atom),
        ("gluing", gluing),
        ("cone family", cone_family),
        ("integrability verdicts", integrability),
        ("dirac sweep", dirac),
        ("quarter-density equivalence", quarter_density),
        ("lichnerowicz bound", lichnerowicz),
        ("harmonic coordinates", harmonic),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!("{} {:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
