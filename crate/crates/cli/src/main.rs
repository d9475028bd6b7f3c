mod config;

use clap::{Parser, Subcommand};
use config::{AuditKind, DiracCheck, ExpectVerdict, RunConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use singcurv::clifford::{build_gamma, verify_omega_contraction, verify_triple_commutator, verify_commutator_product, verify_gamma_commutator, Omega3, TupleMode, VerifyOptions};
use singcurv::dirac::{
    build_d0, conjugated_operator, dirac_sweep, lichnerowicz_vanishing, quadratic_form_check, quarter_density_check, sweep_row, test_spinor, ConformalSurface,
    LichnerowiczTarget, SpinStructureTorus, SweepRow,
};
use singcurv::frame::SigmaSpec;
use singcurv::harmonic::{dyadic_eps, harmonic_cone_exponent, harmonicity_residual, neighborhood_scaling, shell_samples, Core, HarmonicChart, HarmonicError, ScalingOptions, ScalingVerdict};
use singcurv::integrability::{self, Verdict};
use singcurv::measure::{decompose, default_probes, DecomposeOptions, MeasureError};
use std::io::Write;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "singcurv", version, about = "Distributional scalar curvature, Clifford identities and singular Dirac operators")]
struct Cli {
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Report destination (stdout when absent)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run the identity checks with a deliberately corrupted term group
    #[arg(long, global = true)]
    self_test: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Exact gamma-matrix identities
    VerifyIdentities {
        /// Dimensions in 2..=6, comma separated
        #[arg(long, value_delimiter = ',')]
        dims: Vec<usize>,
    },
    /// Decompose dR into density, atoms and strata
    Curvature,
    /// Dyadic annulus integrability audits
    Integrability,
    /// Torus Dirac kernel sweep (CSV)
    Dirac,
    /// Harmonic-coordinate checks and the neighborhood scaling test
    Harmonic,
}

enum Failure {
    /// exit 1
    Assertion(String),
    /// exit 2
    Config(String),
    /// exit 3
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Assertion(_) => 1,
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
    fn message(&self) -> &str {
        match self {
            Failure::Assertion(m) | Failure::Config(m) | Failure::Numerical(m) => m,
        }
    }
}

struct Ctx {
    config: RunConfig,
    seed: u64,
    hash: String,
    out: Option<PathBuf>,
    command: &'static str,
}

impl Ctx {
    fn envelope(&self, result: Value) -> Value {
        json!({
            "tool": "singcurv",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config_sha256": self.hash,
            "seed": self.seed,
            "result": result,
        })
    }

    fn emit(&self, text: &str) -> Result<(), Failure> {
        match &self.out {
            Some(p) => fs::write(p, text).map_err(|e| Failure::Config(format!("cannot write {}: {e}", p.display()))),
            None => print_stdout(text),
        }
    }

    fn emit_json(&self, result: Value) -> Result<(), Failure> {
        let v = self.envelope(result);
        self.emit(&serde_json::to_string_pretty(&v).expect("report serializes"))
    }
}

// A closed pipe downstream (`| head`) is not an error for us.
fn print_stdout(text: &str) -> Result<(), Failure> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::Config(format!("cannot write stdout: {e}"))),
        _ => Ok(()),
    }
}

fn to_value<T: Serialize>(t: &T) -> Value {
    serde_json::to_value(t).expect("report serializes")
}

fn seeded_omegas(n: usize, count: usize, seed: u64) -> Vec<Omega3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| Omega3::random(n, &mut rng)).collect()
}

fn cmd_verify_identities(ctx: &Ctx, flag_dims: &[usize], self_test: bool) -> Result<(), Failure> {
    let cfg = ctx.config.identities.clone();
    let dims: Vec<usize> = if !flag_dims.is_empty() { flag_dims.to_vec() } else { cfg.as_ref().map(|c| c.dims.clone()).unwrap_or_default() };
    if dims.is_empty() {
        return Err(Failure::Config("no dimensions given: pass --dims or set identities.dims".into()));
    }
    if let Some(d) = dims.iter().find(|d| !(2..=6).contains(*d)) {
        return Err(Failure::Config(format!("dimension {d} outside 2..=6")));
    }
    let draws = cfg.map(|c| c.contraction_draws).unwrap_or(20);
    let mut reports = Vec::new();
    let mut contractions = Vec::new();
    let mut failures = Vec::new();
    for &n in &dims {
        let g = build_gamma(n).map_err(|e| Failure::Numerical(e.to_string()))?;
        let opts = VerifyOptions { mode: TupleMode::default_for(n, ctx.seed), g0_sign: if self_test { -1 } else { 1 } };
        for r in [verify_commutator_product(&g, opts), verify_triple_commutator(&g, opts), verify_gamma_commutator(&g, opts)] {
            if !r.passed() {
                failures.push(format!("{} n={}: tuple {:?} term {}", r.identity, n, r.offending_tuple.clone().unwrap_or_default(), r.offending_term.clone().unwrap_or_default()));
            }
            reports.push(to_value(&r));
        }
        if n >= 3 {
            let mut worst = 0.0f64;
            for w in seeded_omegas(n, draws, ctx.seed) {
                let r = verify_omega_contraction(&g, &w).map_err(|e| Failure::Numerical(e.to_string()))?;
                worst = worst.max(r.rel_residual);
            }
            if worst > 1e-12 {
                failures.push(format!("contraction n={n}: relative residual {worst:e}"));
            }
            contractions.push(json!({ "n": n, "draws": draws, "max_rel_residual": worst }));
        }
    }
    ctx.emit_json(json!({ "identities": reports, "contraction": contractions, "passed": failures.is_empty(), "self_test": self_test }))?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Assertion(failures.join("\n")))
    }
}

fn cmd_curvature(ctx: &Ctx) -> Result<(), Failure> {
    let cfg = ctx.config.curvature.clone().ok_or_else(|| Failure::Config("missing [curvature] table".into()))?;
    let m = cfg.metric.build(ctx.seed, cfg.derivatives).map_err(Failure::Config)?;
    let p = &cfg.probes;
    let probes = default_probes(&m, p.r0, p.levels, p.base_inner, p.base_outer);
    let opts = DecomposeOptions { quad: cfg.quad.resolve(), ac_points: cfg.ac_points.clone(), ..Default::default() };
    match decompose(&m, &probes, &opts) {
        Ok(d) => ctx.emit_json(to_value(&d)),
        Err(MeasureError::NonConvergent { what, trace }) => {
            ctx.emit_json(json!({ "error": "non-convergent", "what": what, "trace": to_value(&trace) }))?;
            Err(Failure::Numerical(format!("extrapolation did not converge: {what}")))
        }
        Err(e @ MeasureError::IllConditioned { .. }) => Err(Failure::Numerical(e.to_string())),
        Err(e) => Err(Failure::Config(e.to_string())),
    }
}

fn cmd_integrability(ctx: &Ctx) -> Result<(), Failure> {
    let cfg = ctx.config.integrability.clone().ok_or_else(|| Failure::Config("missing [integrability] table".into()))?;
    let opts = cfg.scan.resolve();
    let mut out = serde_json::Map::new();
    let mut all_reports = Vec::new();
    if let Some(ms) = &cfg.metric {
        let m = ms.build(ctx.seed, cfg.derivatives).map_err(Failure::Config)?;
        let x0 = cfg.at.clone().unwrap_or_else(|| vec![0.0; m.n]);
        if x0.len() != m.n {
            return Err(Failure::Config(format!("`at` has {} coordinates, chart has {}", x0.len(), m.n)));
        }
        let audits = if cfg.audits.is_empty() { vec![AuditKind::CurvatureTerms, AuditKind::DiracSquare] } else { cfg.audits.clone() };
        for a in audits {
            let items = match a {
                AuditKind::CurvatureTerms => integrability::curvature_terms_quantities(),
                AuditKind::DiracSquare => integrability::dirac_square_quantities(),
                AuditKind::QuarterDensity => integrability::quarter_density_quantities(),
                AuditKind::DiracCoefficients => integrability::dirac_coefficient_quantities(),
                AuditKind::FrameCoefficients => integrability::frame_coefficient_quantities(),
            };
            let r = integrability::audit(&m, &x0, &items, None, &opts).map_err(|e| Failure::Numerical(e.to_string()))?;
            all_reports.extend(r);
        }
    }
    out.insert("reports".into(), to_value(&all_reports));
    let mut failures = Vec::new();
    if let Some(t) = &cfg.threshold {
        let r = integrability::lp_threshold_scan(t.n, t.c, &t.p_grid, &opts).map_err(|e| Failure::Numerical(e.to_string()))?;
        if let Some(p) = t.expect_bracket {
            if !r.brackets(p) {
                failures.push(format!("threshold ({}, {}] does not bracket p = {p}", r.last_integrable, r.first_divergent));
            }
        }
        out.insert("threshold".into(), to_value(&r));
    }
    let inconclusive = all_reports.iter().filter(|r| r.verdict == Verdict::Inconclusive).count();
    out.insert("all_integrable".into(), json!(integrability::all_integrable(&all_reports)));
    ctx.emit_json(Value::Object(out))?;
    if cfg.expect_all_integrable && !integrability::all_integrable(&all_reports) {
        if inconclusive > 0 {
            return Err(Failure::Numerical(format!("{inconclusive} scans inconclusive")));
        }
        failures.push("not every audited quantity is integrable".into());
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Assertion(failures.join("\n")))
    }
}

fn csv_rows(rows: &[SweepRow]) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Failure::Numerical(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::Numerical(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

fn cmd_dirac(ctx: &Ctx) -> Result<(), Failure> {
    let cfg = ctx.config.dirac.clone().unwrap_or_default();
    let spins: Vec<SpinStructureTorus> = cfg
        .spins
        .iter()
        .map(|s| SpinStructureTorus::parse(s).ok_or_else(|| Failure::Config(format!("spin structure {s:?} is not one of PP, PA, AP, AA"))))
        .collect::<Result<_, _>>()?;
    if let Some(c) = cfg.cs.iter().find(|c| !(0.0..1.0).contains(*c)) {
        return Err(Failure::Config(format!("cone exponent {c} outside [0, 1)")));
    }
    if let Some(n) = cfg.ns.iter().find(|n| **n < 8 || **n % 2 == 1) {
        return Err(Failure::Config(format!("grid size {n} must be even and at least 8")));
    }
    let rows = dirac_sweep(&spins, &cfg.cs, &cfg.ns).map_err(|e| Failure::Numerical(e.to_string()))?;
    let mut checks = serde_json::Map::new();
    let spin0 = spins.first().copied().unwrap_or_else(SpinStructureTorus::trivial);
    let cone = ConformalSurface::single_cone(cfg.cs.iter().copied().fold(0.0, f64::max));
    let n0 = cfg.ns.iter().copied().max().unwrap_or(16);
    let num = |e: singcurv::dirac::DiracError| Failure::Numerical(e.to_string());
    for check in &cfg.checks {
        match check {
            DiracCheck::Adjointness => {
                let d0 = build_d0(spin0, n0, cone.lengths).map_err(num)?;
                let d = conjugated_operator(&cone, &d0).map_err(num)?;
                let a = test_spinor(&cone, n0, spin0, ctx.seed, 0.2);
                let b = test_spinor(&cone, n0, spin0, ctx.seed.wrapping_add(1), 0.2);
                checks.insert("adjointness".into(), json!({ "n": n0, "spin": spin0.label(), "residual": d.adjointness_residual(&a, &b) }));
            }
            DiracCheck::QuarterDensity => {
                let smooth = smooth_surface();
                let a = quarter_density_check(&smooth, n0, spin0).map_err(num)?;
                let b = quarter_density_check(&cone, n0, spin0).map_err(num)?;
                checks.insert("quarter_density".into(), json!({ "smooth": to_value(&a), "cone": to_value(&b) }));
            }
            DiracCheck::QuadraticForm => {
                let r = quadratic_form_check(&smooth_surface(), n0, spin0, ctx.seed).map_err(num)?;
                checks.insert("quadratic_form".into(), to_value(&r));
            }
            DiracCheck::Lichnerowicz => {
                let s = lichnerowicz_vanishing(&LichnerowiczTarget::RoundSphere, cfg.sphere_n, cfg.sphere_modes, ctx.seed);
                let t = lichnerowicz_vanishing(&LichnerowiczTarget::Torus(cone.clone()), n0, cfg.sphere_modes, ctx.seed);
                checks.insert("lichnerowicz".into(), json!({ "sphere": to_value(&s), "torus": to_value(&t) }));
            }
            DiracCheck::DeltaHalving => {
                let mut out = Vec::new();
                for r in rows.iter().filter(|r| r.c > 0.0) {
                    let spin = SpinStructureTorus::parse(&r.spin).expect("labels round-trip");
                    let mut s = ConformalSurface::single_cone(r.c);
                    s.delta = Some(0.5 * r.delta);
                    match sweep_row(spin, &s, r.c, r.n) {
                        Ok(h) => out.push(json!({ "spin": r.spin, "c": r.c, "n": r.n, "delta": h.delta, "k_plus": h.k_plus, "k_minus": h.k_minus, "stable": h.k_plus == r.k_plus && h.k_minus == r.k_minus })),
                        Err(e) => out.push(json!({ "spin": r.spin, "c": r.c, "n": r.n, "skipped": e.to_string() })),
                    }
                }
                checks.insert("delta_halving".into(), Value::Array(out));
            }
        }
    }
    let csv_text = csv_rows(&rows)?;
    let header = format!("# singcurv {} config_sha256={} seed={}\n", env!("CARGO_PKG_VERSION"), ctx.hash, ctx.seed);
    let summary = ctx.envelope(json!({
        "rows": rows.len(),
        "index_all_zero": rows.iter().all(|r| r.index == 0),
        "inconclusive": rows.iter().filter(|r| r.inconclusive).count(),
        "checks": Value::Object(checks),
    }));
    ctx.emit(&format!("{header}{csv_text}"))?;
    let summary_text = serde_json::to_string_pretty(&summary).expect("report serializes");
    if ctx.out.is_some() {
        print_stdout(&summary_text)?;
    } else {
        eprintln!("{summary_text}");
    }
    if rows.iter().any(|r| r.inconclusive) {
        return Err(Failure::Numerical("kernel gap below the required ratio in some rows".into()));
    }
    if rows.iter().any(|r| r.index != 0) {
        return Err(Failure::Assertion("nonzero index in the sweep".into()));
    }
    Ok(())
}

fn smooth_surface() -> ConformalSurface {
    ConformalSurface {
        lengths: [1.0, 1.0],
        cones: vec![],
        smooth: Some(SigmaSpec::Trig {
            terms: vec![
                singcurv::frame::TrigTerm { amp: 0.3, k: vec![2.0 * std::f64::consts::PI, 0.0], phase: 0.2 },
                singcurv::frame::TrigTerm { amp: 0.2, k: vec![2.0 * std::f64::consts::PI, -2.0 * std::f64::consts::PI], phase: 1.0 },
            ],
        }),
        delta: None,
    }
}

fn cmd_harmonic(ctx: &Ctx) -> Result<(), Failure> {
    let cfg = ctx.config.harmonic.clone().ok_or_else(|| Failure::Config("missing [harmonic] table".into()))?;
    let m = cfg.metric.build(ctx.seed, None).map_err(Failure::Config)?;
    let n = m.n;
    let core = cfg.core.clone().unwrap_or(Core::Point { at: vec![0.0; n] });
    let center = match &core {
        Core::Point { at } => at.clone(),
        Core::Segment { start, .. } => start.clone(),
    };
    if center.len() != n {
        return Err(Failure::Config("core coordinates do not match the chart dimension".into()));
    }
    let samples = shell_samples(n, &center, 0.05, 1.0, cfg.samples, ctx.seed);
    let residual = harmonicity_residual(&m, &samples).map_err(|e| Failure::Numerical(e.to_string()))?;
    let chart = match HarmonicChart::new(m, &samples, Some(core.clone())) {
        Ok(c) => c,
        Err(HarmonicError::NotHarmonic { residual, tol }) => {
            ctx.emit_json(json!({ "harmonicity_residual": residual, "tolerance": tol, "harmonic": false }))?;
            return Err(Failure::Assertion(format!("chart is not harmonic (residual {residual:e})")));
        }
        Err(e) => return Err(Failure::Numerical(e.to_string())),
    };
    let eps = dyadic_eps(cfg.eps_r0, cfg.eps_count);
    let report = neighborhood_scaling(&chart, &core, &eps, &ScalingOptions::default(), "neighborhood scaling").map_err(|e| Failure::Numerical(e.to_string()))?;
    let oracle = match &cfg.metric {
        config::MetricSpec::HarmonicCone { c, n } => Some(harmonic_cone_exponent(*n, *c)),
        _ => None,
    };
    ctx.emit_json(json!({ "harmonicity_residual": residual, "harmonic": true, "report": to_value(&report), "oracle_exponent": oracle }))?;
    if report.verdict == ScalingVerdict::Inconclusive {
        return Err(Failure::Numerical("scaling fit inconclusive".into()));
    }
    if let Some(want) = cfg.expect {
        let got = report.verdict == ScalingVerdict::Met;
        if got != (want == ExpectVerdict::Met) {
            return Err(Failure::Assertion(format!("expected {want:?}, got {:?}", report.verdict)));
        }
    }
    Ok(())
}

fn load(cli: &Cli, command: &'static str) -> Result<Ctx, Failure> {
    let (config, hash) = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Config(format!("cannot read {}: {e}", p.display())))?;
            let cfg = RunConfig::parse(&text).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
            (cfg, format!("{:x}", Sha256::digest(text.as_bytes())))
        }
        None => (RunConfig::default(), format!("{:x}", Sha256::digest(b""))),
    };
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    Ok(Ctx { config, seed, hash, out: cli.out.clone(), command })
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(k) = cli.threads {
        singcurv::par::set_threads(k).map_err(Failure::Config)?;
    }
    let name = match &cli.command {
        Command::VerifyIdentities { .. } => "verify-identities",
        Command::Curvature => "curvature",
        Command::Integrability => "integrability",
        Command::Dirac => "dirac",
        Command::Harmonic => "harmonic",
    };
    if cli.self_test && name != "verify-identities" {
        return Err(Failure::Config("--self-test applies to verify-identities only".into()));
    }
    let ctx = load(&cli, name)?;
    match &cli.command {
        Command::VerifyIdentities { dims } => cmd_verify_identities(&ctx, dims, cli.self_test),
        Command::Curvature => cmd_curvature(&ctx),
        Command::Integrability => cmd_integrability(&ctx),
        Command::Dirac => cmd_dirac(&ctx),
        Command::Harmonic => cmd_harmonic(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
