//! The scalar curvature measure dR.
//!
//! Pairings use the first-order form, which needs only ω and ∂f and so makes
//! sense across cone points and gluing loci:
//!
//! ∫ f dR = −∫ ∂_μ f · V^μ dx − ∫ f √|g| W dx,
//! V^μ = √|g| (e_a^μ e_b^ν − e_a^ν e_b^μ) ω_{abν},
//! W = e_a^μ e_b^ν (ω_{acμ} ω_{cbν} − ω_{acν} ω_{cbμ}).
//!
//! The pointwise density R is computed separately from ∂ω + ωω.

use crate::frame::{
    connection_at, connection_derivative, second_derivative_step, ConnectionData, FrameError, GluedCollar, MetricField, Stratum,
    WarpProfile,
};
use crate::quad::{
    arc_rule, gauss_on, gauss_pieces, integrate_excluding, product_rule, sphere_rule, ExtrapolationOptions, ExtrapolationTrace,
    PolarLayout,
};
use crate::testfn::{BaseFactor, Plateau, TestFunction};
use crate::par;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("{what}: extrapolation in the exclusion radius did not converge (radii {radii:?}, partial sums {partial:?})", radii = trace.radii, partial = trace.partial)]
    NonConvergent { what: String, trace: ExtrapolationTrace },
    #[error("probe system is ill-conditioned (condition number {cond:e})")]
    IllConditioned { cond: f64 },
    #[error("boundary metrics differ: ρ₁(0) = {first}, ρ₂(0) = {second}")]
    BoundaryMismatch { first: f64, second: f64 },
    #[error("cone fiber dimension must be at least 2, got {0}")]
    FiberDimension(usize),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

#[derive(Clone, Debug, Serialize)]
pub struct QuadOptions {
    pub radial_order: usize,
    pub polar_order: usize,
    pub azimuth: usize,
    pub arc_order: usize,
    pub base_order: usize,
    pub extrapolation: ExtrapolationOptions,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            radial_order: 16,
            polar_order: 12,
            azimuth: 32,
            arc_order: 16,
            base_order: 12,
            extrapolation: ExtrapolationOptions::default(),
        }
    }
}

fn same(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-13 * (1.0 + x.abs()))
}

fn push_break(v: &mut Vec<f64>, r: f64) {
    if r >= 0.0 && !v.iter().any(|b| (b - r).abs() <= 1e-14 * (1.0 + r)) {
        v.push(r);
    }
}

/// Quadrature layout adapted to the support of f and the metric's strata.
pub fn layout_for(m: &MetricField, f: &TestFunction, q: &QuadOptions) -> PolarLayout {
    let n = m.n;
    let center = f.center().to_vec();
    let polar = f.polar_coords();
    let base_coords = f.base_coords();
    let full = base_coords.is_empty();
    let mut breaks = Vec::new();
    let (directions, base) = match f {
        TestFunction::Bump { plateau, .. } => {
            push_break(&mut breaks, 0.0);
            if plateau.inner > 0.0 {
                push_break(&mut breaks, plateau.inner);
            }
            push_break(&mut breaks, plateau.outer);
            (sphere_rule(n, q.polar_order, q.azimuth), vec![(vec![], 1.0)])
        }
        TestFunction::Split { shell, radial, base, window, .. } => {
            let s = *shell;
            push_break(&mut breaks, (s - radial.outer).max(0.0));
            for r in [s - radial.inner, s, s + radial.inner, s + radial.outer] {
                if r > 0.0 {
                    push_break(&mut breaks, r);
                }
            }
            let dirs = match window {
                Some(w) if polar.len() == 2 => {
                    let t = w.theta0;
                    let p = w.plateau;
                    let mut b = vec![t - p.outer];
                    if p.inner > 0.0 {
                        b.extend([t - p.inner, t + p.inner]);
                    } else {
                        b.push(t);
                    }
                    b.push(t + p.outer);
                    arc_rule(&b, q.arc_order)
                }
                _ => sphere_rule(polar.len(), q.polar_order, q.azimuth),
            };
            let rules: Vec<Vec<(f64, f64)>> = base
                .iter()
                .map(|b| {
                    let bp = b.breakpoints();
                    gauss_pieces(&bp, q.base_order)
                })
                .collect();
            (dirs, product_rule(&rules))
        }
    };
    let rmax = breaks.iter().copied().fold(0.0, f64::max);
    let mut singular_radii = Vec::new();
    let mut avoid = Vec::new();
    for s in &m.singular {
        match s {
            Stratum::Point { at } if full && same(at, &center) => singular_radii.push(0.0),
            Stratum::Sphere { center: c, radius } if full && same(c, &center) => {
                if *radius < rmax {
                    push_break(&mut breaks, *radius);
                    singular_radii.push(*radius);
                }
            }
            Stratum::Subspace { point, along } => {
                let mut a = along.clone();
                a.sort_unstable();
                let aligned = a == base_coords && polar.iter().all(|&p| (point[p] - center[p]).abs() <= 1e-13);
                if aligned {
                    singular_radii.push(0.0);
                } else {
                    avoid.push(s.clone());
                }
            }
            other => avoid.push(other.clone()),
        }
    }
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    PolarLayout {
        n,
        center,
        polar,
        breaks,
        singular_radii,
        directions,
        base,
        base_coords,
        avoid,
        avoid_radius: m.exclusion.max(1e-9),
        radial_order: q.radial_order,
    }
}

/// ω_{abc} contracted into W = ω_{aca} ω_{cbb} − ω_{acb} ω_{cba}.
fn w_term(c: &ConnectionData) -> f64 {
    let n = c.g.nrows();
    let w = &c.omega_frame;
    let mut s = 0.0;
    for a in 0..n {
        for b in 0..n {
            for k in 0..n {
                s += w.at(a, k, a) * w.at(k, b, b) - w.at(a, k, b) * w.at(k, b, a);
            }
        }
    }
    s
}

/// V^μ = √|g| (e_a^μ e_b^ν − e_a^ν e_b^μ) ω_{abν}.
pub fn flux_vector(c: &ConnectionData) -> Vec<f64> {
    let n = c.g.nrows();
    let ei = &c.frame.e_inv;
    let sg = c.sqrt_det();
    (0..n)
        .map(|mu| {
            let mut s = 0.0;
            for a in 0..n {
                for b in 0..n {
                    for nu in 0..n {
                        s += (ei[(a, mu)] * ei[(b, nu)] - ei[(a, nu)] * ei[(b, mu)]) * c.omega.at(a, b, nu);
                    }
                }
            }
            sg * s
        })
        .collect()
}

/// Scalar curvature e_a^μ e_b^ν R^{ab}_{μν} from frame data.
pub fn smooth_r_density(m: &MetricField, x: &[f64]) -> Result<f64, FrameError> {
    let c = connection_at(m, x)?;
    let h = second_derivative_step(m, x);
    let dw = connection_derivative(m, x, h)?;
    Ok(r_from(&c, &dw))
}

fn r_from(c: &ConnectionData, dw: &[crate::frame::T3]) -> f64 {
    let n = c.g.nrows();
    let ei = &c.frame.e_inv;
    let mut s = 0.0;
    for a in 0..n {
        for b in 0..n {
            for mu in 0..n {
                for nu in 0..n {
                    let w = ei[(a, mu)] * ei[(b, nu)];
                    if w != 0.0 {
                        s += w * (dw[mu].at(a, b, nu) - dw[nu].at(a, b, mu));
                    }
                }
            }
        }
    }
    s + w_term(c)
}

/// Integrand of the first-order pairing at x.
pub fn pairing_density(m: &MetricField, f: &TestFunction, x: &[f64]) -> Result<f64, FrameError> {
    let j = f.jet(x);
    if j.f == 0.0 && j.grad.iter().all(|g| *g == 0.0) {
        return Ok(0.0);
    }
    let c = connection_at(m, x)?;
    let v = flux_vector(&c);
    let div: f64 = j.grad.iter().zip(&v).map(|(a, b)| a * b).sum();
    Ok(-div - j.f * c.sqrt_det() * w_term(&c))
}

#[derive(Clone, Debug, Serialize)]
pub struct Pairing {
    pub value: f64,
    pub trace: ExtrapolationTrace,
}

fn finish(what: &str, trace: ExtrapolationTrace) -> Result<Pairing, MeasureError> {
    if !trace.converged {
        return Err(MeasureError::NonConvergent { what: what.into(), trace });
    }
    Ok(Pairing { value: trace.value, trace })
}

/// ∫ f dR by the first-order pairing.
pub fn pair_dr(m: &MetricField, f: &TestFunction, q: &QuadOptions) -> Result<Pairing, MeasureError> {
    let layout = layout_for(m, f, q);
    let t = integrate_excluding(&layout, &|x: &[f64]| pairing_density(m, f, x), &q.extrapolation)?;
    finish("pairing", t)
}

/// ∫ f R dvol_g with R from `smooth_r_density`; only the absolutely continuous part.
pub fn integrate_f_r(m: &MetricField, f: &TestFunction, q: &QuadOptions) -> Result<Pairing, MeasureError> {
    let layout = layout_for(m, f, q);
    let g = |x: &[f64]| -> Result<f64, FrameError> {
        let v = f.value(x);
        if v == 0.0 {
            return Ok(0.0);
        }
        let r = smooth_r_density(m, x)?;
        Ok(v * r * m.g(x).determinant().sqrt())
    };
    let t = integrate_excluding(&layout, &g, &q.extrapolation)?;
    finish("curvature integral", t)
}

/// ∫_Z f dμ_Z with the induced Riemannian measure (f(p) for a point).
pub fn stratum_integral(m: &MetricField, z: &Stratum, f: &TestFunction, q: &QuadOptions) -> f64 {
    let n = m.n;
    match z {
        Stratum::Point { at } => f.value(at),
        Stratum::Sphere { center, radius } => {
            let dirs = match f {
                TestFunction::Split { center: c, window: Some(w), polar, .. } if n == 2 && polar.len() == 2 && same(c, center) => {
                    let t = w.theta0;
                    let p = w.plateau;
                    let mut b = vec![t - p.outer];
                    if p.inner > 0.0 {
                        b.extend([t - p.inner, t + p.inner]);
                    }
                    b.push(t + p.outer);
                    arc_rule(&b, 2 * q.arc_order)
                }
                _ => sphere_rule(n, 2 * q.polar_order, 2 * q.azimuth),
            };
            let vals = par::map(&dirs, |(u, w)| {
                let x: Vec<f64> = center.iter().zip(u).map(|(c, v)| c + radius * v).collect();
                let fv = f.value(&x);
                if fv == 0.0 {
                    return 0.0;
                }
                let g = m.g(&x);
                let gi = g.clone().try_inverse().unwrap_or_else(|| DMatrix::zeros(n, n));
                let uv = DVector::from_column_slice(u);
                let nn = (uv.transpose() * &gi * &uv)[(0, 0)];
                w * radius.powi(n as i32 - 1) * fv * (g.determinant() * nn).sqrt()
            });
            par::sum(&vals)
        }
        Stratum::Subspace { point, along } => {
            let rules: Vec<Vec<(f64, f64)>> = along
                .iter()
                .map(|&qc| {
                    let bp = match f {
                        TestFunction::Split { polar, base, .. } if !polar.contains(&qc) => {
                            let idx = f.base_coords().iter().position(|&b| b == qc).unwrap();
                            base[idx].breakpoints()
                        }
                        TestFunction::Split { center, shell, radial, .. } => {
                            let r = shell + radial.outer;
                            vec![center[qc] - r, center[qc], center[qc] + r]
                        }
                        TestFunction::Bump { center, plateau, .. } => {
                            vec![center[qc] - plateau.outer, center[qc], center[qc] + plateau.outer]
                        }
                    };
                    gauss_pieces(&bp, 4 * q.base_order)
                })
                .collect();
            let nodes = product_rule(&rules);
            let vals = par::map(&nodes, |(y, w)| {
                let mut x = point.clone();
                for (k, &qc) in along.iter().enumerate() {
                    x[qc] = y[k];
                }
                let fv = f.value(&x);
                if fv == 0.0 {
                    return 0.0;
                }
                let g = m.g(&x);
                let gz = DMatrix::from_fn(along.len(), along.len(), |i, j| g[(along[i], along[j])]);
                w * fv * gz.determinant().sqrt()
            });
            par::sum(&vals)
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeRecord {
    pub stratum: Option<usize>,
    pub test_function: TestFunction,
    pub pairing: f64,
    pub ac: f64,
    pub residual: f64,
    /// ∫_{Z_k} f dμ_k for every declared stratum.
    pub stratum_masses: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AtomPart {
    pub at: Vec<f64>,
    pub weight: f64,
    pub detected: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct LocalDensity {
    pub point: Vec<f64>,
    pub density: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StratumPart {
    pub stratum: Stratum,
    /// Singular density per unit induced measure.
    pub density: f64,
    pub detected: bool,
    pub local: Vec<LocalDensity>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AcSample {
    pub point: Vec<f64>,
    /// dR/dvol_g
    pub density: f64,
    /// dR/dx = density · √|g|
    pub coordinate_density: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MeasureDecomposition {
    pub ac_density: Vec<AcSample>,
    pub atoms: Vec<AtomPart>,
    pub strata: Vec<StratumPart>,
    pub probes: Vec<ProbeRecord>,
    pub condition: f64,
}

#[derive(Clone, Debug)]
pub struct DecomposeOptions {
    pub quad: QuadOptions,
    /// Test functions on which local densities are sampled, keyed by stratum index.
    pub local_probes: Vec<(usize, TestFunction)>,
    pub ac_points: Vec<Vec<f64>>,
    pub detect_rel: f64,
    pub detect_abs: f64,
    pub max_condition: f64,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        DecomposeOptions {
            quad: QuadOptions::default(),
            local_probes: vec![],
            ac_points: vec![],
            detect_rel: 1e-4,
            detect_abs: 1e-8,
            max_condition: 1e10,
        }
    }
}

/// Shrinking probes around each declared stratum: radii r0·2^{−j}, plateau on the inner half.
///
/// Subspace strata get base bumps with plateau (base_inner, base_outer) along the stratum.
pub fn default_probes(m: &MetricField, r0: f64, levels: usize, base_inner: f64, base_outer: f64) -> Vec<(usize, TestFunction)> {
    let n = m.n;
    let mut out = Vec::new();
    for (k, s) in m.singular.iter().enumerate() {
        for j in 0..levels {
            let r = r0 * 0.5f64.powi(j as i32);
            let pl = Plateau::new(0.5 * r, r);
            let f = match s {
                Stratum::Point { at } => TestFunction::Bump { center: at.clone(), plateau: pl, value: 1.0 },
                Stratum::Sphere { center, radius } => TestFunction::Split {
                    center: center.clone(),
                    polar: (0..n).collect(),
                    shell: *radius,
                    radial: pl,
                    base: vec![],
                    window: None,
                    value: 1.0,
                },
                Stratum::Subspace { point, along } => {
                    let polar: Vec<usize> = (0..n).filter(|i| !along.contains(i)).collect();
                    let base = (0..n)
                        .filter(|i| along.contains(i))
                        .map(|i| BaseFactor::Bump { center: point[i], plateau: Plateau::new(base_inner, base_outer) })
                        .collect();
                    TestFunction::Split { center: point.clone(), polar, shell: 0.0, radial: pl, base, window: None, value: 1.0 }
                }
            };
            out.push((k, f));
        }
    }
    out
}

fn probe(m: &MetricField, k: Option<usize>, f: &TestFunction, q: &QuadOptions) -> Result<ProbeRecord, MeasureError> {
    let p = pair_dr(m, f, q)?.value;
    let ac = integrate_f_r(m, f, q)?.value;
    let masses = m.singular.iter().map(|z| stratum_integral(m, z, f, q)).collect();
    Ok(ProbeRecord { stratum: k, test_function: f.clone(), pairing: p, ac, residual: p - ac, stratum_masses: masses })
}

/// Split dR into pointwise density samples and constant singular weights on the declared strata.
pub fn decompose(m: &MetricField, probes: &[(usize, TestFunction)], opts: &DecomposeOptions) -> Result<MeasureDecomposition, MeasureError> {
    let q = &opts.quad;
    let ns = m.singular.len();
    let mut records = Vec::with_capacity(probes.len());
    for (k, f) in probes {
        records.push(probe(m, Some(*k), f, q)?);
    }
    let mut weights = vec![0.0; ns];
    let mut cond = 1.0;
    if ns > 0 {
        // column-scaled least squares via SVD
        let a = DMatrix::from_fn(records.len(), ns, |i, k| records[i].stratum_masses[k]);
        let scale: Vec<f64> = (0..ns).map(|k| a.column(k).amax().max(1e-300)).collect();
        let an = DMatrix::from_fn(a.nrows(), ns, |i, k| a[(i, k)] / scale[k]);
        let b = DVector::from_iterator(records.len(), records.iter().map(|r| r.residual));
        let svd = an.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !(cond <= opts.max_condition) || records.len() < ns {
            return Err(MeasureError::IllConditioned { cond });
        }
        let sol = svd.solve(&b, 0.0).map_err(|_| MeasureError::IllConditioned { cond })?;
        for k in 0..ns {
            weights[k] = sol[k] / scale[k];
        }
    }
    let mut atoms = Vec::new();
    let mut strata = Vec::new();
    for (k, z) in m.singular.iter().enumerate() {
        // detection compares the singular part with the probe's own pairing scale
        let mine: Vec<&ProbeRecord> = records.iter().filter(|r| r.stratum == Some(k)).collect();
        let detected = mine.iter().any(|r| {
            let sing = (weights[k] * r.stratum_masses[k]).abs();
            let scale = r.pairing.abs().max(r.ac.abs());
            sing > opts.detect_abs && sing > opts.detect_rel * scale
        });
        match z {
            Stratum::Point { at } => atoms.push(AtomPart { at: at.clone(), weight: weights[k], detected }),
            _ => {
                let mut local = Vec::new();
                for (kk, f) in opts.local_probes.iter().filter(|(kk, _)| *kk == k) {
                    let r = probe(m, Some(*kk), f, q)?;
                    let mass = r.stratum_masses[k];
                    local.push(LocalDensity { point: f.center_on(z), density: r.residual / mass });
                    records.push(r);
                }
                strata.push(StratumPart { stratum: z.clone(), density: weights[k], detected, local });
            }
        }
    }
    let mut ac_density = Vec::new();
    for x in &opts.ac_points {
        let r = smooth_r_density(m, x)?;
        let sg = m.g(x).determinant().sqrt();
        ac_density.push(AcSample { point: x.clone(), density: r, coordinate_density: r * sg });
    }
    Ok(MeasureDecomposition { ac_density, atoms, strata, probes: records, condition: cond })
}

impl TestFunction {
    /// Representative point of the probe on a stratum, used to label local densities.
    pub fn center_on(&self, z: &Stratum) -> Vec<f64> {
        match (self, z) {
            (TestFunction::Split { center, window: Some(w), .. }, Stratum::Sphere { radius, .. }) => {
                vec![center[0] + radius * w.theta0.cos(), center[1] + radius * w.theta0.sin()]
            }
            (TestFunction::Split { center, base, window: None, .. }, Stratum::Subspace { along, .. }) => {
                let mut p = center.clone();
                for (i, &qc) in along.iter().enumerate() {
                    if let Some(BaseFactor::Bump { center: c, .. }) = base.get(i) {
                        p[qc] = *c;
                    }
                }
                p
            }
            _ => self.center().to_vec(),
        }
    }
}

impl MeasureDecomposition {
    /// Σ w f(p) + Σ density ∫_Z f + ∫ f R dvol for a held-out f.
    pub fn reconstruct(&self, m: &MetricField, f: &TestFunction, q: &QuadOptions) -> Result<f64, MeasureError> {
        let mut s = integrate_f_r(m, f, q)?.value;
        for a in &self.atoms {
            s += a.weight * f.value(&a.at);
        }
        for z in &self.strata {
            s += z.density * stratum_integral(m, &z.stratum, f, q);
        }
        Ok(s)
    }
}

/// Mean curvature of the boundary t = 0 of a collar dt² + ρ(t)²δ, −½ tr(h⁻¹ ∂_t h).
///
/// The normal points into the collar, so the unit ball's boundary has H = n − 1.
pub fn mean_curvature(profile: &WarpProfile, n: usize) -> f64 {
    let m = MetricField::collar(n, GluedCollar { first: profile.clone(), second: profile.clone() });
    let x: Vec<f64> = vec![0.0; n];
    let g = m.g(&x);
    let dg = &m.dg(&x)[0];
    let h = g.view((1, 1), (n - 1, n - 1)).into_owned();
    let dh = dg.view((1, 1), (n - 1, n - 1)).into_owned();
    let hinv = h.try_inverse().expect("boundary metric");
    -0.5 * (hinv * dh).trace()
}

#[derive(Clone, Debug, Serialize)]
pub struct GluingPairing {
    pub interior: [f64; 2],
    pub surface: f64,
    pub mean_curvature: [f64; 2],
    /// 2 (H₁ + H₂)
    pub surface_density: f64,
    pub total: f64,
}

/// Boundary-metric agreement required for gluing.
pub const ISOMETRY_TOL: f64 = 1e-10;

/// ∫ f dR on two collars glued along t = 0, piece one at t > 0.
///
/// f must split as φ(|t|)·b(y) on the chart (t, y).
pub fn gluing_dr(first: &WarpProfile, second: &WarpProfile, n: usize, f: &TestFunction, q: &QuadOptions) -> Result<GluingPairing, MeasureError> {
    let (r1, r2) = (first.rho(0.0), second.rho(0.0));
    if (r1 - r2).abs() > ISOMETRY_TOL * r1.abs().max(r2.abs()) {
        return Err(MeasureError::BoundaryMismatch { first: r1, second: r2 });
    }
    let (radial, base) = match f {
        TestFunction::Split { polar, shell, radial, base, window: None, .. } if polar == &vec![0] && *shell == 0.0 => (*radial, base.clone()),
        _ => return Err(MeasureError::Unsupported("gluing needs a split test function φ(|t|)·b(y)".into())),
    };
    let rules: Vec<Vec<(f64, f64)>> = base.iter().map(|b| gauss_pieces(&b.breakpoints(), q.base_order)).collect();
    let ynodes = product_rule(&rules);
    let mut interior = [0.0; 2];
    for (side, prof) in [first, second].into_iter().enumerate() {
        let m = MetricField::collar(n, GluedCollar { first: prof.clone(), second: prof.clone() });
        let top = prof.depth().map_or(radial.outer, |d| d.min(radial.outer));
        let mut tb = vec![0.0];
        if radial.inner > 0.0 && radial.inner < top {
            tb.push(radial.inner);
        }
        tb.push(top);
        // the curvature is smooth up to t = 0 on each side, so plain GL suffices
        let tn = gauss_pieces(&tb, q.radial_order);
        let nodes: Vec<(Vec<f64>, f64)> = tn
            .iter()
            .flat_map(|(t, wt)| {
                ynodes.iter().map(move |(y, wy)| {
                    let mut x = vec![*t];
                    x.extend(y);
                    (x, wt * wy)
                })
            })
            .collect();
        let vals = par::map(&nodes, |(x, w)| -> Result<f64, FrameError> {
            let fv = f.value(x);
            if fv == 0.0 {
                return Ok(0.0);
            }
            let r = smooth_r_density(&m, x)?;
            Ok(w * fv * r * m.g(x).determinant().sqrt())
        });
        let vals: Result<Vec<f64>, FrameError> = vals.into_iter().collect();
        interior[side] = par::sum(&vals?);
    }
    let h = [mean_curvature(first, n), mean_curvature(second, n)];
    let vol: Vec<f64> = ynodes
        .iter()
        .map(|(y, w)| {
            let mut x = vec![0.0];
            x.extend(y);
            w * f.value(&x) * r1.powi(n as i32 - 1)
        })
        .collect();
    let surface = 2.0 * (h[0] + h[1]) * par::sum(&vol);
    Ok(GluingPairing { interior, surface, mean_curvature: h, surface_density: 2.0 * (h[0] + h[1]), total: interior[0] + interior[1] + surface })
}

#[derive(Clone, Debug, Serialize)]
pub struct ConeFamilyPairing {
    /// ∫ f R dvol off the axis
    pub interior: f64,
    /// 4πc ∫_Z f dvol_Z when the fiber is two-dimensional, else 0
    pub singular: f64,
    pub total: f64,
    /// The first-order pairing computed directly on the same chart.
    pub direct: f64,
    pub trace: ExtrapolationTrace,
}

/// ∫ f dR on flat ℝ^k × (ℝ^fiber, |x|^{−2c}δ), Z = ℝ^k × {0}.
pub fn cone_family_dr(base_dim: usize, fiber: usize, c: f64, f: &TestFunction, q: &QuadOptions) -> Result<ConeFamilyPairing, MeasureError> {
    if fiber < 2 {
        return Err(MeasureError::FiberDimension(fiber));
    }
    let m = MetricField::cone_family(base_dim, fiber, c);
    let interior = integrate_f_r(&m, f, q)?.value;
    let singular = if fiber == 2 { 4.0 * PI * c * stratum_integral(&m, &m.singular[0], f, q) } else { 0.0 };
    let d = pair_dr(&m, f, q)?;
    Ok(ConeFamilyPairing { interior, singular, total: interior + singular, direct: d.value, trace: d.trace })
}

/// Least-squares slope of log y against log x.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.abs().ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Fitted exponent of R in the geodesic distance s = r^{1−c}/(1−c) from the cone axis.
pub fn cone_family_density_exponent(base_dim: usize, fiber: usize, c: f64, radii: &[f64]) -> Result<(f64, Vec<f64>), FrameError> {
    let m = MetricField::cone_family(base_dim, fiber, c);
    let mut s = Vec::new();
    let mut rv = Vec::new();
    for &r in radii {
        let mut x = vec![0.1; base_dim];
        x.extend(std::iter::once(r));
        x.extend(std::iter::repeat(0.0).take(fiber - 1));
        rv.push(smooth_r_density(&m, &x)?);
        s.push(r.powf(1.0 - c) / (1.0 - c));
    }
    Ok((loglog_slope(&s, &rv).0, rv))
}

/// Plain tensor Gauss–Legendre over a box, for integrands without strata.
pub fn box_integral<F>(lo: &[f64], hi: &[f64], order: usize, f: F) -> f64
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    let rules: Vec<Vec<(f64, f64)>> = lo.iter().zip(hi).map(|(a, b)| gauss_on(*a, *b, order)).collect();
    let nodes = product_rule(&rules);
    let vals = par::map(&nodes, |(x, w)| w * f(x));
    par::sum(&vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::SigmaSpec;
    use crate::testfn::AngularWindow;

    #[test]
    fn flat_pairs_to_zero() {
        let m = MetricField::flat(3);
        let f = TestFunction::bump(vec![0.1, 0.2, -0.1], 0.2, 0.7);
        let p = pair_dr(&m, &f, &QuadOptions::default()).unwrap();
        assert!(p.value.abs() < 1e-12);
    }

    #[test]
    fn sphere_density_and_consistency() {
        let m = MetricField::stereographic_sphere(2, 1.0);
        let r = smooth_r_density(&m, &[0.3, -0.2]).unwrap();
        assert!((r - 2.0).abs() < 1e-6, "{r}");
        let f = TestFunction::bump(vec![0.2, 0.1], 0.3, 0.9);
        let q = QuadOptions::default();
        let a = pair_dr(&m, &f, &q).unwrap().value;
        let b = integrate_f_r(&m, &f, &q).unwrap().value;
        assert!((a - b).abs() < 1e-8 * b.abs(), "{a} {b}");
    }

    #[test]
    fn trig_metric_consistency() {
        let m = MetricField::trig_random(3, 7);
        let f = TestFunction::bump(vec![0.0, 0.1, 0.2], 0.2, 0.6);
        let q = QuadOptions::default();
        let a = pair_dr(&m, &f, &q).unwrap().value;
        let b = integrate_f_r(&m, &f, &q).unwrap().value;
        assert!((a - b).abs() < 1e-6 * b.abs().max(1e-3), "{a} {b}");
    }

    #[test]
    fn cone_atom() {
        let m = MetricField::cone(0.5, 2);
        let f = TestFunction::bump(vec![0.0, 0.0], 0.2, 0.5);
        let p = pair_dr(&m, &f, &QuadOptions::default()).unwrap().value;
        assert!((p - 2.0 * PI).abs() < 1e-8, "{p}");
    }

    #[test]
    fn inversion_double_stratum() {
        let m = MetricField::conformal(2, SigmaSpec::InversionDouble { a: 1.0 });
        let q = QuadOptions::default();
        let f = TestFunction::Split {
            center: vec![0.0, 0.0],
            polar: vec![0, 1],
            shell: 1.0,
            radial: Plateau::new(0.1, 0.4),
            base: vec![],
            window: None,
            value: 1.0,
        };
        let p = pair_dr(&m, &f, &q).unwrap().value;
        assert!((p - 8.0 * PI).abs() < 1e-8, "{p}");
        let probes = default_probes(&m, 0.4, 3, 0.0, 0.0);
        let local = vec![(
            0,
            TestFunction::Split {
                center: vec![0.0, 0.0],
                polar: vec![0, 1],
                shell: 1.0,
                radial: Plateau::new(0.05, 0.1),
                base: vec![],
                window: Some(AngularWindow { theta0: 0.7, plateau: Plateau::new(0.1, 0.3) }),
                value: 1.0,
            },
        )];
        let d = decompose(&m, &probes, &DecomposeOptions { local_probes: local, ..Default::default() }).unwrap();
        assert!((d.strata[0].density - 4.0).abs() < 1e-6, "{:?}", d.strata[0]);
        assert!((d.strata[0].local[0].density - 4.0).abs() < 1e-6);
    }

    #[test]
    fn doubled_disk_by_gluing_and_by_chart() {
        let q = QuadOptions::default();
        let disk = WarpProfile::FlatBall { a: 1.0 };
        assert!((mean_curvature(&disk, 2) - 1.0).abs() < 1e-14);
        assert!((mean_curvature(&disk, 4) - 3.0).abs() < 1e-14);
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
        assert!((g.total - 8.0 * PI).abs() < 1e-9, "{g:?}");
        let m = MetricField::collar(2, GluedCollar { first: disk.clone(), second: disk.clone() });
        let p = pair_dr(&m, &f, &q).unwrap().value;
        assert!((p - 8.0 * PI).abs() < 1e-8, "{p}");
        let hemi = WarpProfile::Hemisphere { a: 1.0 };
        let g2 = gluing_dr(&hemi, &disk, 2, &f, &q).unwrap();
        let m2 = MetricField::collar(2, GluedCollar { first: hemi, second: disk });
        let p2 = pair_dr(&m2, &f, &q).unwrap().value;
        assert!((g2.surface_density - 2.0).abs() < 1e-12);
        assert!((g2.total - p2).abs() < 1e-7 * p2.abs(), "{g2:?} {p2}");
    }

    #[test]
    fn cone_family_weights() {
        let q = QuadOptions::default();
        let f = TestFunction::Split {
            center: vec![0.0; 3],
            polar: vec![1, 2],
            shell: 0.0,
            radial: Plateau::new(0.2, 0.4),
            base: vec![BaseFactor::Bump { center: 0.0, plateau: Plateau::new(0.3, 0.7) }],
            window: None,
            value: 1.0,
        };
        let r = cone_family_dr(1, 2, 0.3, &f, &q).unwrap();
        assert!((r.direct - 4.0 * PI * 0.3).abs() < 1e-6 * r.direct, "{r:?}");
        assert!((r.total - r.direct).abs() < 1e-6 * r.direct);
        let (slope, _) = cone_family_density_exponent(1, 3, 0.5, &[0.01, 0.02, 0.04, 0.08]).unwrap();
        assert!((slope + 2.0).abs() < 0.01, "{slope}");
    }
}
