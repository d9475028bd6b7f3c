//! Metric fields on a chart and their orthonormal-frame calculus.
//!
//! Index conventions: `e[(μ, a)] = e_μ^a`, `e_inv[(a, μ)] = e_a^μ`, and
//! three-index arrays are stored row-major in the order they are written.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clifford::Omega3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("point {point:?} lies within {distance:e} of the singular set")]
    OnSingularSet { point: Vec<f64>, distance: f64 },
    #[error("metric not positive definite at {0:?}")]
    NotPositiveDefinite(Vec<f64>),
    #[error("non-finite derivative estimate at {0:?}")]
    NonFinite(Vec<f64>),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Three-index array with a common range `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct T3 {
    pub n: usize,
    pub data: Vec<f64>,
}

impl T3 {
    pub fn zeros(n: usize) -> Self {
        T3 { n, data: vec![0.0; n * n * n] }
    }
    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.n + j) * self.n + k]
    }
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let n = self.n;
        self.data[(i * n + j) * n + k] = v;
    }
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Closed-form conformal exponents σ for metrics e^{2σ}δ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaSpec {
    Zero,
    /// Round sphere of the given radius in stereographic coordinates: σ = log(2ρ) − log(1+|x|²).
    Stereographic { radius: f64 },
    /// σ = −c log|x − x₀|
    Cone { c: f64, center: Vec<f64> },
    /// Flat disk of radius a glued to its inverted copy: σ = 0 inside, −2 log(|x|/a) outside.
    InversionDouble { a: f64 },
    /// σ = amp · exp(−|x − x₀|²/w²)
    Gaussian { amp: f64, center: Vec<f64>, width: f64 },
    /// σ = Σ amp · cos(k·x + phase)
    Trig { terms: Vec<TrigTerm> },
    /// −Σ cᵢ/2 · log(ρᵢ² + δ²) with the periodic distance ρ² = Σ_d (L_d/π)² sin²(π(x_d − p_d)/L_d).
    TorusCones { lengths: Vec<f64>, delta: f64, cones: Vec<ConePoint> },
    Sum { parts: Vec<SigmaSpec> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConePoint {
    pub at: Vec<f64>,
    pub c: f64,
}

/// Periodic squared distance, its gradient and Hessian diagonal.
fn torus_rho2(x: &[f64], p: &[f64], lengths: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let mut r2 = 0.0;
    let mut g = Vec::with_capacity(x.len());
    let mut h = Vec::with_capacity(x.len());
    for d in 0..x.len() {
        let l = lengths[d];
        let a = PI * (x[d] - p[d]) / l;
        let k = l / PI;
        r2 += k * k * a.sin().powi(2);
        g.push(k * (2.0 * a).sin());
        h.push(2.0 * (2.0 * a).cos());
    }
    (r2, g, h)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub amp: f64,
    pub k: Vec<f64>,
    pub phase: f64,
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn diff(x: &[f64], c: &[f64]) -> Vec<f64> {
    x.iter().enumerate().map(|(i, v)| v - c.get(i).copied().unwrap_or(0.0)).collect()
}

impl SigmaSpec {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            SigmaSpec::Zero => 0.0,
            SigmaSpec::Stereographic { radius } => (2.0 * radius).ln() - (1.0 + norm2(x)).ln(),
            SigmaSpec::Cone { c, center } => -c * 0.5 * norm2(&diff(x, center)).ln(),
            SigmaSpec::InversionDouble { a } => {
                let r = norm2(x).sqrt();
                if r <= *a {
                    0.0
                } else {
                    -2.0 * (r / a).ln()
                }
            }
            SigmaSpec::Gaussian { amp, center, width } => amp * (-norm2(&diff(x, center)) / (width * width)).exp(),
            SigmaSpec::Trig { terms } => terms.iter().map(|t| t.amp * (dot(&t.k, x) + t.phase).cos()).sum(),
            SigmaSpec::TorusCones { lengths, delta, cones } => cones
                .iter()
                .map(|cp| -0.5 * cp.c * (torus_rho2(x, &cp.at, lengths).0 + delta * delta).ln())
                .sum(),
            SigmaSpec::Sum { parts } => parts.iter().map(|p| p.value(x)).sum(),
        }
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        match self {
            SigmaSpec::Zero => vec![0.0; n],
            SigmaSpec::Stereographic { .. } => {
                let d = 1.0 + norm2(x);
                x.iter().map(|v| -2.0 * v / d).collect()
            }
            SigmaSpec::Cone { c, center } => {
                let y = diff(x, center);
                let r2 = norm2(&y);
                y.iter().map(|v| -c * v / r2).collect()
            }
            SigmaSpec::InversionDouble { a } => {
                let r2 = norm2(x);
                if r2.sqrt() <= *a {
                    vec![0.0; n]
                } else {
                    x.iter().map(|v| -2.0 * v / r2).collect()
                }
            }
            SigmaSpec::Gaussian { amp, center, width } => {
                let y = diff(x, center);
                let w2 = width * width;
                let e = amp * (-norm2(&y) / w2).exp();
                y.iter().map(|v| -2.0 * v / w2 * e).collect()
            }
            SigmaSpec::Trig { terms } => {
                let mut g = vec![0.0; n];
                for t in terms {
                    let s = -t.amp * (dot(&t.k, x) + t.phase).sin();
                    for (gi, ki) in g.iter_mut().zip(&t.k) {
                        *gi += s * ki;
                    }
                }
                g
            }
            SigmaSpec::TorusCones { lengths, delta, cones } => {
                let mut g = vec![0.0; n];
                for cp in cones {
                    let (r2, dr, _) = torus_rho2(x, &cp.at, lengths);
                    let q = r2 + delta * delta;
                    for d in 0..n {
                        g[d] -= 0.5 * cp.c * dr[d] / q;
                    }
                }
                g
            }
            SigmaSpec::Sum { parts } => {
                let mut g = vec![0.0; n];
                for p in parts {
                    for (gi, v) in g.iter_mut().zip(p.grad(x)) {
                        *gi += v;
                    }
                }
                g
            }
        }
    }

    /// Hessian ∂_μ∂_ν σ.
    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = x.len();
        match self {
            SigmaSpec::Zero => DMatrix::zeros(n, n),
            SigmaSpec::Stereographic { .. } => {
                let d = 1.0 + norm2(x);
                DMatrix::from_fn(n, n, |i, j| {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    -2.0 * delta / d + 4.0 * x[i] * x[j] / (d * d)
                })
            }
            SigmaSpec::Cone { c, center } => {
                let y = diff(x, center);
                let r2 = norm2(&y);
                DMatrix::from_fn(n, n, |i, j| {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    -c * (delta / r2 - 2.0 * y[i] * y[j] / (r2 * r2))
                })
            }
            SigmaSpec::InversionDouble { a } => {
                let r2 = norm2(x);
                if r2.sqrt() <= *a {
                    DMatrix::zeros(n, n)
                } else {
                    DMatrix::from_fn(n, n, |i, j| {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        -2.0 * (delta / r2 - 2.0 * x[i] * x[j] / (r2 * r2))
                    })
                }
            }
            SigmaSpec::Gaussian { amp, center, width } => {
                let y = diff(x, center);
                let w2 = width * width;
                let e = amp * (-norm2(&y) / w2).exp();
                DMatrix::from_fn(n, n, |i, j| {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    e * (-2.0 * delta / w2 + 4.0 * y[i] * y[j] / (w2 * w2))
                })
            }
            SigmaSpec::Trig { terms } => {
                let mut h = DMatrix::zeros(n, n);
                for t in terms {
                    let cth = -t.amp * (dot(&t.k, x) + t.phase).cos();
                    for i in 0..n {
                        for j in 0..n {
                            h[(i, j)] += cth * t.k[i] * t.k[j];
                        }
                    }
                }
                h
            }
            SigmaSpec::TorusCones { lengths, delta, cones } => {
                let mut h = DMatrix::zeros(n, n);
                for cp in cones {
                    let (r2, dr, d2) = torus_rho2(x, &cp.at, lengths);
                    let q = r2 + delta * delta;
                    for i in 0..n {
                        for j in 0..n {
                            let dd = if i == j { d2[i] } else { 0.0 };
                            h[(i, j)] -= 0.5 * cp.c * (dd / q - dr[i] * dr[j] / (q * q));
                        }
                    }
                }
                h
            }
            SigmaSpec::Sum { parts } => {
                let mut h = DMatrix::zeros(n, n);
                for p in parts {
                    h += p.hessian(x);
                }
                h
            }
        }
    }

    pub fn laplacian(&self, x: &[f64]) -> f64 {
        self.hessian(x).trace()
    }

    /// Closed-form scalar curvature of e^{2σ}δ in n dimensions.
    pub fn scalar_curvature(&self, x: &[f64]) -> f64 {
        let n = x.len() as f64;
        let g = self.grad(x);
        (-2.0 * self.value(x)).exp() * (-2.0 * (n - 1.0)) * (self.laplacian(x) + 0.5 * (n - 2.0) * norm2(&g))
    }

    /// Singular strata implied by this σ.
    pub fn strata(&self, n: usize) -> Vec<Stratum> {
        match self {
            SigmaSpec::Cone { center, .. } => {
                let mut p = center.clone();
                p.resize(n, 0.0);
                vec![Stratum::Point { at: p }]
            }
            SigmaSpec::InversionDouble { a } => vec![Stratum::Sphere { center: vec![0.0; n], radius: *a }],
            SigmaSpec::Sum { parts } => parts.iter().flat_map(|p| p.strata(n)).collect(),
            _ => vec![],
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Singular loci excluded from pointwise evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stratum {
    Point { at: Vec<f64> },
    /// Euclidean sphere |x − center| = radius.
    Sphere { center: Vec<f64>, radius: f64 },
    /// Affine subspace through `point` spanned by the listed coordinate axes.
    Subspace { point: Vec<f64>, along: Vec<usize> },
}

impl Stratum {
    pub fn hyperplane(n: usize, normal_axis: usize, offset: f64) -> Self {
        let mut point = vec![0.0; n];
        point[normal_axis] = offset;
        Stratum::Subspace { point, along: (0..n).filter(|&i| i != normal_axis).collect() }
    }

    /// Euclidean coordinate distance from x.
    pub fn distance(&self, x: &[f64]) -> f64 {
        match self {
            Stratum::Point { at } => norm2(&diff(x, at)).sqrt(),
            Stratum::Sphere { center, radius } => (norm2(&diff(x, center)).sqrt() - radius).abs(),
            Stratum::Subspace { point, along } => x
                .iter()
                .enumerate()
                .filter(|(i, _)| !along.contains(i))
                .map(|(i, v)| (v - point[i]).powi(2))
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// Dimension of the stratum itself.
    pub fn dim(&self, n: usize) -> usize {
        match self {
            Stratum::Point { .. } => 0,
            Stratum::Sphere { .. } => n - 1,
            Stratum::Subspace { along, .. } => along.len(),
        }
    }
}

/// Profile ρ(t) of a collar metric dt² + ρ(t)² h, t the inward normal distance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WarpProfile {
    /// Flat ball of radius a: ρ = a − t.
    FlatBall { a: f64 },
    /// Hemisphere of radius a with geodesic boundary: ρ = a cos(t/a).
    Hemisphere { a: f64 },
    /// Product collar: ρ ≡ a.
    Cylinder { a: f64 },
}

impl WarpProfile {
    pub fn rho(&self, t: f64) -> f64 {
        match *self {
            WarpProfile::FlatBall { a } => a - t,
            WarpProfile::Hemisphere { a } => a * (t / a).cos(),
            WarpProfile::Cylinder { a } => a,
        }
    }
    pub fn drho(&self, t: f64) -> f64 {
        match *self {
            WarpProfile::FlatBall { .. } => -1.0,
            WarpProfile::Hemisphere { a } => -(t / a).sin(),
            WarpProfile::Cylinder { .. } => 0.0,
        }
    }
    pub fn d2rho(&self, t: f64) -> f64 {
        match *self {
            WarpProfile::Hemisphere { a } => -(t / a).cos() / a,
            _ => 0.0,
        }
    }
    /// Normal extent of the collar chart (where ρ reaches zero), if any.
    pub fn depth(&self) -> Option<f64> {
        match *self {
            WarpProfile::FlatBall { a } => Some(a),
            WarpProfile::Hemisphere { a } => Some(0.5 * std::f64::consts::PI * a),
            WarpProfile::Cylinder { .. } => None,
        }
    }
}

/// Two collars glued along t = 0; t > 0 lies in the first piece.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GluedCollar {
    pub first: WarpProfile,
    pub second: WarpProfile,
}

impl GluedCollar {
    /// ρ and its derivative in the signed normal coordinate.
    pub fn rho(&self, t: f64) -> (f64, f64, f64) {
        if t >= 0.0 {
            (self.first.rho(t), self.first.drho(t), self.first.d2rho(t))
        } else {
            (self.second.rho(-t), -self.second.drho(-t), self.second.d2rho(-t))
        }
    }
}

/// Smooth metric δ + Σ A_k sin(k·x + φ_k) with symmetric A_k.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigMetric {
    pub n: usize,
    pub modes: Vec<TrigMode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigMode {
    pub amp: Vec<f64>,
    pub k: Vec<f64>,
    pub phase: f64,
}

impl TrigMetric {
    /// Random smooth metric whose perturbation has operator norm below `strength`.
    pub fn random(n: usize, modes: usize, strength: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let per = strength / modes as f64 / n as f64;
        let modes = (0..modes)
            .map(|_| {
                let mut amp = vec![0.0; n * n];
                for i in 0..n {
                    for j in i..n {
                        let v = rng.random_range(-per..per);
                        amp[i * n + j] = v;
                        amp[j * n + i] = v;
                    }
                }
                let k = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
                TrigMode { amp, k, phase: rng.random_range(0.0..std::f64::consts::TAU) }
            })
            .collect();
        TrigMetric { n, modes }
    }
}

pub type MetricFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// User-supplied metric; derivatives come from finite differences.
#[derive(Clone)]
pub struct GenericMetric {
    pub label: String,
    pub g: MetricFn,
}

impl fmt::Debug for GenericMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GenericMetric({})", self.label)
    }
}

#[derive(Clone, Debug)]
pub enum Family {
    Flat,
    ConformalFlat(SigmaSpec),
    /// Flat base coordinates z (first `base_dim`) times the cone |x|^{−2c}δ on the fiber.
    ConeFamily { base_dim: usize, c: f64 },
    /// Two-sided collar dt² + ρ(t)²δ on coordinates (t, y); the boundary metric is flat in y.
    Collar(GluedCollar),
    /// Cone metric in harmonic coordinates R^{2/α−2}(a δ + (1−a) xxᵀ/R²), a = α²(1−c)².
    HarmonicCone { c: f64, alpha: f64 },
    Trig(TrigMetric),
    Generic(GenericMetric),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DerivativeSupply {
    Analytic,
    /// Central differences with step `h` times the local coordinate scale, Richardson-extrapolated.
    FiniteDifference { h: f64, richardson: bool },
}

impl Default for DerivativeSupply {
    fn default() -> Self {
        DerivativeSupply::FiniteDifference { h: 1e-4, richardson: true }
    }
}

#[derive(Clone, Debug)]
pub struct MetricField {
    pub n: usize,
    pub family: Family,
    pub derivatives: DerivativeSupply,
    pub singular: Vec<Stratum>,
    /// Pointwise evaluation refuses points closer than this to a stratum.
    pub exclusion: f64,
}

impl MetricField {
    pub fn new(n: usize, family: Family) -> Self {
        let (singular, derivatives) = match &family {
            Family::ConformalFlat(s) => (s.strata(n), DerivativeSupply::Analytic),
            Family::ConeFamily { base_dim, .. } => {
                (vec![Stratum::Subspace { point: vec![0.0; n], along: (0..*base_dim).collect() }], DerivativeSupply::Analytic)
            }
            Family::Collar(_) => (vec![Stratum::hyperplane(n, 0, 0.0)], DerivativeSupply::Analytic),
            Family::HarmonicCone { .. } => (vec![Stratum::Point { at: vec![0.0; n] }], DerivativeSupply::Analytic),
            Family::Generic(_) => (vec![], DerivativeSupply::default()),
            _ => (vec![], DerivativeSupply::Analytic),
        };
        MetricField { n, family, derivatives, singular, exclusion: 1e-12 }
    }

    pub fn flat(n: usize) -> Self {
        Self::new(n, Family::Flat)
    }

    pub fn conformal(n: usize, sigma: SigmaSpec) -> Self {
        Self::new(n, Family::ConformalFlat(sigma))
    }

    /// |x|^{−2c}δ with vertex at the origin.
    pub fn cone(c: f64, n: usize) -> Self {
        Self::conformal(n, SigmaSpec::Cone { c, center: vec![0.0; n] })
    }

    /// Round sphere of radius `radius` in a stereographic chart.
    pub fn stereographic_sphere(n: usize, radius: f64) -> Self {
        Self::conformal(n, SigmaSpec::Stereographic { radius })
    }

    pub fn cone_family(base_dim: usize, fiber_dim: usize, c: f64) -> Self {
        Self::new(base_dim + fiber_dim, Family::ConeFamily { base_dim, c })
    }

    pub fn collar(n: usize, glue: GluedCollar) -> Self {
        Self::new(n, Family::Collar(glue))
    }

    pub fn trig_random(n: usize, seed: u64) -> Self {
        Self::new(n, Family::Trig(TrigMetric::random(n, 3, 0.4, seed)))
    }

    pub fn generic(n: usize, label: &str, g: MetricFn) -> Self {
        Self::new(n, Family::Generic(GenericMetric { label: label.into(), g }))
    }

    pub fn with_derivatives(mut self, d: DerivativeSupply) -> Self {
        self.derivatives = d;
        self
    }

    pub fn with_singular(mut self, s: Vec<Stratum>) -> Self {
        self.singular = s;
        self
    }

    /// Distance to the nearest declared stratum (∞ when there is none).
    pub fn singular_distance(&self, x: &[f64]) -> f64 {
        self.singular.iter().map(|s| s.distance(x)).fold(f64::INFINITY, f64::min)
    }

    pub fn check_point(&self, x: &[f64]) -> Result<(), FrameError> {
        if x.len() != self.n {
            return Err(FrameError::Dimension { expected: self.n, got: x.len() });
        }
        let d = self.singular_distance(x);
        if d <= self.exclusion {
            return Err(FrameError::OnSingularSet { point: x.to_vec(), distance: d });
        }
        Ok(())
    }

    /// Metric components g_{μν}(x).
    pub fn g(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        match &self.family {
            Family::Flat => DMatrix::identity(n, n),
            Family::ConformalFlat(s) => DMatrix::identity(n, n) * (2.0 * s.value(x)).exp(),
            Family::ConeFamily { base_dim, c } => {
                let r2 = norm2(&x[*base_dim..]);
                let f = r2.powf(-c);
                DMatrix::from_fn(n, n, |i, j| if i != j { 0.0 } else if i < *base_dim { 1.0 } else { f })
            }
            Family::Collar(glue) => {
                let (rho, _, _) = glue.rho(x[0]);
                DMatrix::from_fn(n, n, |i, j| if i != j { 0.0 } else if i == 0 { 1.0 } else { rho * rho })
            }
            Family::HarmonicCone { c, alpha } => harmonic_cone_g(x, *c, *alpha),
            Family::Trig(t) => {
                let mut g = DMatrix::identity(n, n);
                for m in &t.modes {
                    let s = (dot(&m.k, x) + m.phase).sin();
                    for i in 0..n {
                        for j in 0..n {
                            g[(i, j)] += m.amp[i * n + j] * s;
                        }
                    }
                }
                g
            }
            Family::Generic(gm) => (gm.g)(x),
        }
    }

    fn analytic_dg(&self, x: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        let n = self.n;
        Some(match &self.family {
            Family::Flat => vec![DMatrix::zeros(n, n); n],
            Family::ConformalFlat(s) => {
                let e = (2.0 * s.value(x)).exp();
                s.grad(x).iter().map(|gm| DMatrix::identity(n, n) * (2.0 * gm * e)).collect()
            }
            Family::ConeFamily { base_dim, c } => {
                let k = *base_dim;
                let r2 = norm2(&x[k..]);
                let f = r2.powf(-c);
                (0..n)
                    .map(|mu| {
                        if mu < k {
                            DMatrix::zeros(n, n)
                        } else {
                            let df = -2.0 * c * x[mu] / r2 * f;
                            DMatrix::from_fn(n, n, |i, j| if i == j && i >= k { df } else { 0.0 })
                        }
                    })
                    .collect()
            }
            Family::Collar(glue) => {
                let (rho, drho, _) = glue.rho(x[0]);
                let mut v = vec![DMatrix::zeros(n, n); n];
                for i in 1..n {
                    v[0][(i, i)] = 2.0 * rho * drho;
                }
                v
            }
            Family::HarmonicCone { c, alpha } => harmonic_cone_dg(x, *c, *alpha),
            Family::Trig(t) => {
                let mut v = vec![DMatrix::zeros(n, n); n];
                for m in &t.modes {
                    let cs = (dot(&m.k, x) + m.phase).cos();
                    for mu in 0..n {
                        for i in 0..n {
                            for j in 0..n {
                                v[mu][(i, j)] += m.amp[i * n + j] * cs * m.k[mu];
                            }
                        }
                    }
                }
                v
            }
            Family::Generic(_) => return None,
        })
    }

    /// Local coordinate scale used to size finite-difference steps.
    pub fn local_scale(&self, x: &[f64]) -> f64 {
        self.singular_distance(x).min(1.0)
    }

    /// First derivatives ∂_μ g, analytic when available and requested.
    pub fn dg(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        if let DerivativeSupply::Analytic = self.derivatives {
            if let Some(v) = self.analytic_dg(x) {
                return v;
            }
        }
        let (h, rich) = match self.derivatives {
            DerivativeSupply::FiniteDifference { h, richardson } => (h, richardson),
            DerivativeSupply::Analytic => (1e-4, true),
        };
        let step = h * self.local_scale(x);
        let f = |y: &[f64]| self.g(y);
        fd_gradient(&f, x, step, rich)
    }
}

/// Central-difference gradient of a matrix-valued function with optional Richardson step.
pub fn fd_gradient<F>(f: &F, x: &[f64], h: f64, richardson: bool) -> Vec<DMatrix<f64>>
where
    F: Fn(&[f64]) -> DMatrix<f64>,
{
    let n = x.len();
    let central = |mu: usize, h: f64| {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[mu] += h;
        xm[mu] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    };
    (0..n)
        .map(|mu| {
            let d1 = central(mu, h);
            if richardson {
                let d2 = central(mu, 0.5 * h);
                (d2 * 4.0 - d1) / 3.0
            } else {
                d1
            }
        })
        .collect()
}

/// Central-difference gradient of a vector-valued function, Richardson-extrapolated.
pub fn fd_gradient_vec<F>(f: &F, x: &[f64], h: f64) -> Result<Vec<Vec<f64>>, FrameError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, FrameError>,
{
    let n = x.len();
    let mut out = Vec::with_capacity(n);
    for mu in 0..n {
        let central = |h: f64| -> Result<Vec<f64>, FrameError> {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[mu] += h;
            xm[mu] -= h;
            let a = f(&xp)?;
            let b = f(&xm)?;
            Ok(a.iter().zip(&b).map(|(p, m)| (p - m) / (2.0 * h)).collect())
        };
        let d1 = central(h)?;
        let d2 = central(0.5 * h)?;
        let v: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| (4.0 * b - a) / 3.0).collect();
        if v.iter().any(|t| !t.is_finite()) {
            return Err(FrameError::NonFinite(x.to_vec()));
        }
        out.push(v);
    }
    Ok(out)
}

/// α for the harmonic-coordinate cone: root of α² + (n−2)α − (n−1)/(1−c)².
pub fn harmonic_alpha(n: usize, c: f64) -> f64 {
    let nf = n as f64;
    0.5 * (((nf - 2.0).powi(2) + 4.0 * (nf - 1.0) / (1.0 - c).powi(2)).sqrt() - (nf - 2.0))
}

fn harmonic_cone_g(x: &[f64], c: f64, alpha: f64) -> DMatrix<f64> {
    let n = x.len();
    let r2 = norm2(x);
    let a = alpha * alpha * (1.0 - c).powi(2);
    let beta = 2.0 / alpha - 2.0;
    let f = r2.powf(0.5 * beta);
    DMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        f * (a * delta + (1.0 - a) * x[i] * x[j] / r2)
    })
}

fn harmonic_cone_dg(x: &[f64], c: f64, alpha: f64) -> Vec<DMatrix<f64>> {
    let n = x.len();
    let r2 = norm2(x);
    let a = alpha * alpha * (1.0 - c).powi(2);
    let beta = 2.0 / alpha - 2.0;
    let f = r2.powf(0.5 * beta);
    (0..n)
        .map(|k| {
            let df = beta * x[k] / r2 * f;
            DMatrix::from_fn(n, n, |i, j| {
                let delta = if i == j { 1.0 } else { 0.0 };
                let dik = if i == k { 1.0 } else { 0.0 };
                let djk = if j == k { 1.0 } else { 0.0 };
                let p = x[i] * x[j] / r2;
                let dp = (dik * x[j] + x[i] * djk) / r2 - 2.0 * x[i] * x[j] * x[k] / (r2 * r2);
                df * (a * delta + (1.0 - a) * p) + f * (1.0 - a) * dp
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct FrameData {
    pub point: Vec<f64>,
    /// e[(μ, a)] = e_μ^a
    pub e: DMatrix<f64>,
    /// e_inv[(a, μ)] = e_a^μ
    pub e_inv: DMatrix<f64>,
}

impl FrameData {
    /// max of |e_a^μ e_μ^b − δ|, |e_μ^a e_a^ν − δ| and |Σ_a e_μ^a e_ν^a − g|
    pub fn residuals(&self, g: &DMatrix<f64>) -> f64 {
        let n = self.e.nrows();
        let id = DMatrix::<f64>::identity(n, n);
        let r1 = (&self.e_inv * &self.e - &id).amax();
        let r2 = (&self.e * &self.e_inv - &id).amax();
        let r3 = (&self.e * self.e.transpose() - g).amax();
        r1.max(r2).max(r3)
    }
}

fn cholesky_lower(g: &DMatrix<f64>, x: &[f64]) -> Result<DMatrix<f64>, FrameError> {
    g.clone().cholesky().map(|c| c.l()).ok_or_else(|| FrameError::NotPositiveDefinite(x.to_vec()))
}

/// Lower-triangular vierbein e_μ^a = L_{μa} with g = L Lᵀ.
pub fn vierbein_at(m: &MetricField, x: &[f64]) -> Result<FrameData, FrameError> {
    m.check_point(x)?;
    let g = m.g(x);
    let l = cholesky_lower(&g, x)?;
    let e_inv = l.clone().try_inverse().ok_or_else(|| FrameError::NotPositiveDefinite(x.to_vec()))?;
    Ok(FrameData { point: x.to_vec(), e: l, e_inv })
}

/// Derivatives of the Cholesky factor: ∂L = L Φ(L⁻¹ ∂g L⁻ᵀ), Φ = lower part with halved diagonal.
fn cholesky_derivative(l: &DMatrix<f64>, linv: &DMatrix<f64>, dg: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    dg.iter()
        .map(|d| {
            let mut p = linv * d * linv.transpose();
            let n = p.nrows();
            for i in 0..n {
                for j in 0..n {
                    if j > i {
                        p[(i, j)] = 0.0;
                    } else if i == j {
                        p[(i, j)] *= 0.5;
                    }
                }
            }
            l * p
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ConnectionData {
    pub frame: FrameData,
    /// ω^a_{bμ} stored as (a, b, μ)
    pub omega: T3,
    /// ω_{abc} = ω_{abμ} e_c^μ
    pub omega_frame: Omega3,
    /// Γ^α_{βμ} stored as (α, β, μ)
    pub christoffel: T3,
    /// ∂_μ log|g| from the metric
    pub dlogdet: Vec<f64>,
    /// de[ρ][(σ, a)] = ∂_ρ e_σ^a
    pub de: Vec<DMatrix<f64>>,
    pub dg: Vec<DMatrix<f64>>,
    pub g: DMatrix<f64>,
    pub ginv: DMatrix<f64>,
}

/// Smooth frame rotation G(x) = exp(θ(x) J) in the (i, j) plane, θ = θ₀ + k·x.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneGauge {
    pub i: usize,
    pub j: usize,
    pub theta0: f64,
    pub k: Vec<f64>,
}

impl PlaneGauge {
    /// G and ∂_μ G, acting on frame indices (new index first).
    pub fn eval(&self, x: &[f64], n: usize) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let th = self.theta0 + dot(&self.k, x);
        let (s, c) = th.sin_cos();
        let mut g = DMatrix::identity(n, n);
        g[(self.i, self.i)] = c;
        g[(self.j, self.j)] = c;
        g[(self.i, self.j)] = -s;
        g[(self.j, self.i)] = s;
        let mut dgt = DMatrix::zeros(n, n);
        dgt[(self.i, self.i)] = -s;
        dgt[(self.j, self.j)] = -s;
        dgt[(self.i, self.j)] = -c;
        dgt[(self.j, self.i)] = c;
        let dg = (0..n).map(|mu| &dgt * self.k.get(mu).copied().unwrap_or(0.0)).collect();
        (g, dg)
    }
}

fn connection_from_frame(
    frame: FrameData,
    de: Vec<DMatrix<f64>>,
    g: DMatrix<f64>,
    dg: Vec<DMatrix<f64>>,
) -> Result<ConnectionData, FrameError> {
    let n = g.nrows();
    let e = &frame.e;
    let ei = &frame.e_inv;
    // C^a_{bc} = e_b^ρ e_c^σ (∂_ρ e_σ^a − ∂_σ e_ρ^a)
    let mut cc = T3::zeros(n);
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                let mut s = 0.0;
                for rho in 0..n {
                    for sig in 0..n {
                        let w = ei[(b, rho)] * ei[(c, sig)];
                        if w != 0.0 {
                            s += w * (de[rho][(sig, a)] - de[sig][(rho, a)]);
                        }
                    }
                }
                cc.set(a, b, c, s);
            }
        }
    }
    let mut wf = Omega3::zeros(n);
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                wf.set(a, b, c, 0.5 * (cc.at(a, b, c) + cc.at(b, c, a) - cc.at(c, a, b)));
            }
        }
    }
    let mut omega = T3::zeros(n);
    for a in 0..n {
        for b in 0..n {
            for mu in 0..n {
                let s: f64 = (0..n).map(|c| wf.at(a, b, c) * e[(mu, c)]).sum();
                omega.set(a, b, mu, s);
            }
        }
    }
    let ginv = g.clone().try_inverse().ok_or_else(|| FrameError::NotPositiveDefinite(frame.point.clone()))?;
    let mut chris = T3::zeros(n);
    for al in 0..n {
        for be in 0..n {
            for mu in 0..n {
                let mut s = 0.0;
                for la in 0..n {
                    s += ginv[(al, la)] * (dg[be][(la, mu)] + dg[mu][(la, be)] - dg[la][(be, mu)]);
                }
                chris.set(al, be, mu, 0.5 * s);
            }
        }
    }
    let dlogdet: Vec<f64> = dg.iter().map(|d| (&ginv * d).trace()).collect();
    if omega.data.iter().chain(&dlogdet).any(|v| !v.is_finite()) {
        return Err(FrameError::NonFinite(frame.point.clone()));
    }
    Ok(ConnectionData { frame, omega, omega_frame: wf, christoffel: chris, dlogdet, de, dg, g, ginv })
}

/// Frame, connection, Christoffel symbols and ∂ log|g| at x.
pub fn connection_at(m: &MetricField, x: &[f64]) -> Result<ConnectionData, FrameError> {
    let frame = vierbein_at(m, x)?;
    let g = m.g(x);
    let dg = m.dg(x);
    if dg.iter().any(|d| d.iter().any(|v| !v.is_finite())) {
        return Err(FrameError::NonFinite(x.to_vec()));
    }
    let de = cholesky_derivative(&frame.e, &frame.e_inv, &dg);
    connection_from_frame(frame, de, g, dg)
}

/// Connection in the rotated frame ē_μ^ā = Σ_a e_μ^a G_{āa}.
pub fn connection_at_gauge(m: &MetricField, x: &[f64], gauge: &PlaneGauge) -> Result<ConnectionData, FrameError> {
    let base = connection_at(m, x)?;
    let n = m.n;
    let (gm, dgm) = gauge.eval(x, n);
    let e = &base.frame.e * gm.transpose();
    let e_inv = &gm * &base.frame.e_inv;
    let de: Vec<DMatrix<f64>> =
        (0..n).map(|rho| &base.de[rho] * gm.transpose() + &base.frame.e * dgm[rho].transpose()).collect();
    let frame = FrameData { point: x.to_vec(), e, e_inv };
    connection_from_frame(frame, de, base.g, base.dg)
}

impl ConnectionData {
    /// Torsion residual max |∂_ρ e_σ^i − ∂_σ e_ρ^i + ω^i_{jρ} e_σ^j − ω^i_{jσ} e_ρ^j|.
    pub fn torsion_residual(&self) -> f64 {
        let n = self.g.nrows();
        let e = &self.frame.e;
        let mut worst = 0.0f64;
        for i in 0..n {
            for rho in 0..n {
                for sig in 0..n {
                    let mut v = self.de[rho][(sig, i)] - self.de[sig][(rho, i)];
                    for j in 0..n {
                        v += self.omega.at(i, j, rho) * e[(sig, j)] - self.omega.at(i, j, sig) * e[(rho, j)];
                    }
                    worst = worst.max(v.abs());
                }
            }
        }
        worst
    }

    /// max_μ |½ g^{ρσ}∂_μ g_{ρσ} − e_c^ρ ∂_μ e_ρ^c|
    pub fn logdet_residual(&self) -> f64 {
        let via_frame = self.dlogdet_via_frame();
        self.dlogdet.iter().zip(&via_frame).map(|(a, b)| (a - b).abs() * 0.5).fold(0.0, f64::max)
    }

    /// 2 e_c^ρ ∂_μ e_ρ^c
    pub fn dlogdet_via_frame(&self) -> Vec<f64> {
        let n = self.g.nrows();
        (0..n)
            .map(|mu| {
                let mut s = 0.0;
                for c in 0..n {
                    for rho in 0..n {
                        s += self.frame.e_inv[(c, rho)] * self.de[mu][(rho, c)];
                    }
                }
                2.0 * s
            })
            .collect()
    }

    /// max |ω_{abμ} + ω_{baμ}|
    pub fn antisymmetry_defect(&self) -> f64 {
        let n = self.g.nrows();
        let mut m = 0.0f64;
        for a in 0..n {
            for b in 0..n {
                for mu in 0..n {
                    m = m.max((self.omega.at(a, b, mu) + self.omega.at(b, a, mu)).abs());
                }
            }
        }
        m
    }

    /// ω^a_{bμ} with frame index a raised to (a, b) and the coordinate index as a vector.
    pub fn omega_coord(&self, a: usize, b: usize) -> Vec<f64> {
        (0..self.g.nrows()).map(|mu| self.omega.at(a, b, mu)).collect()
    }

    pub fn sqrt_det(&self) -> f64 {
        self.g.determinant().sqrt()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DlogdetResult {
    pub via_metric: Vec<f64>,
    pub via_frame: Vec<f64>,
    pub disagreement: f64,
}

/// ∂_μ log|g| by the metric trace and by the frame trace.
pub fn dlogdet_at(m: &MetricField, x: &[f64]) -> Result<DlogdetResult, FrameError> {
    let c = connection_at(m, x)?;
    let vf = c.dlogdet_via_frame();
    let dis = c.dlogdet.iter().zip(&vf).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(DlogdetResult { via_metric: c.dlogdet, via_frame: vf, disagreement: dis })
}

/// ∂_μ of the coordinate connection components: out[μ] = ∂_μ ω^a_{bν} as a T3 (a, b, ν).
pub fn connection_derivative(m: &MetricField, x: &[f64], h: f64) -> Result<Vec<T3>, FrameError> {
    let n = m.n;
    let f = |y: &[f64]| -> Result<Vec<f64>, FrameError> { Ok(connection_at(m, y)?.omega.data) };
    let g = fd_gradient_vec(&f, x, h)?;
    Ok(g.into_iter().map(|data| T3 { n, data }).collect())
}

/// Finite-difference step for derivatives of connection data at x.
pub fn second_derivative_step(m: &MetricField, x: &[f64]) -> f64 {
    1e-3 * m.local_scale(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn flat_frame_identity() {
        let m = MetricField::flat(3);
        let c = connection_at(&m, &[0.3, -0.2, 0.7]).unwrap();
        assert_eq!(c.frame.e, DMatrix::identity(3, 3));
        assert_eq!(c.omega.max_abs(), 0.0);
        assert_eq!(c.christoffel.max_abs(), 0.0);
        assert!(c.dlogdet.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn conformal_2d_connection() {
        let s = SigmaSpec::Gaussian { amp: 0.4, center: vec![0.1, -0.2], width: 0.8 };
        let m = MetricField::conformal(2, s.clone());
        let x = [0.35, 0.2];
        let c = connection_at(&m, &x).unwrap();
        let es = s.value(&x).exp();
        assert!(close(c.frame.e[(0, 0)], es, 1e-14) && close(c.frame.e[(1, 1)], es, 1e-14));
        assert_eq!(c.frame.e[(1, 0)], 0.0);
        let gr = s.grad(&x);
        // ω¹₂ = σ_y dx − σ_x dy
        assert!(close(c.omega.at(0, 1, 0), gr[1], 1e-12));
        assert!(close(c.omega.at(0, 1, 1), -gr[0], 1e-12));
        assert!(c.torsion_residual() < 1e-12);
        assert!(c.logdet_residual() < 1e-12);
        for mu in 0..2 {
            assert!(close(c.dlogdet[mu], 4.0 * gr[mu], 1e-12));
        }
    }

    #[test]
    fn cone_dlogdet() {
        let c = 0.3;
        let m = MetricField::cone(c, 2);
        let x = [0.4, -0.7];
        let r2 = x[0] * x[0] + x[1] * x[1];
        let d = dlogdet_at(&m, &x).unwrap();
        for mu in 0..2 {
            assert!(close(d.via_metric[mu], -4.0 * c * x[mu] / r2, 1e-12));
        }
        assert!(d.disagreement < 1e-12);
    }

    #[test]
    fn polar_cone_frame() {
        let c = 0.4;
        let m = MetricField::generic(
            2,
            "polar cone",
            Arc::new(move |y: &[f64]| {
                let s = y[0];
                DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, ((1.0 - c) * s).powi(2)])
            }),
        );
        let f = vierbein_at(&m, &[0.5, 1.0]).unwrap();
        assert!(close(f.e[(0, 0)], 1.0, 1e-14));
        assert!(close(f.e[(1, 1)], (1.0 - c) * 0.5, 1e-14));
    }

    #[test]
    fn generic_fd_matches_analytic() {
        let t = MetricField::trig_random(3, 7);
        let tf = match &t.family {
            Family::Trig(tm) => tm.clone(),
            _ => unreachable!(),
        };
        let tm = MetricField::new(3, Family::Trig(tf));
        let gen = MetricField::generic(3, "trig", Arc::new(move |y: &[f64]| tm.g(y)));
        let x = [0.2, 0.1, -0.3];
        let a = connection_at(&t, &x).unwrap();
        let b = connection_at(&gen, &x).unwrap();
        let err = a.omega.data.iter().zip(&b.omega.data).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
        assert!(b.torsion_residual() < 1e-6);
        assert!(a.torsion_residual() < 1e-9 && a.logdet_residual() < 1e-9);
    }

    #[test]
    fn refuses_singular_point() {
        let m = MetricField::cone(0.5, 2);
        assert!(matches!(vierbein_at(&m, &[0.0, 0.0]), Err(FrameError::OnSingularSet { .. })));
    }

    #[test]
    fn harmonic_alpha_values() {
        assert!(close(harmonic_alpha(3, 0.0), 1.0, 1e-14));
        assert!(close(harmonic_alpha(3, 0.5), (33f64.sqrt() - 1.0) / 2.0, 1e-14));
        assert!(close(harmonic_alpha(2, 0.5), 2.0, 1e-14));
    }
}
