//! Conjugated Dirac operator on flat tori with conical conformal factors.
//!
//! On g = e^{2σ}g₀ the operator D̂ = e^{−σ}D₀ is symmetric for
//! ⟨η, ψ⟩_H = ∫ ⟨η, ψ⟩ e^σ dx. Spinors are pairs (ψ₊, ψ₋) of grid functions;
//! D₀ = [[0, ∂₋], [∂₊, 0]] with ∂₊ = −i(∂₁ + i∂₂), realized by Fourier
//! differentiation with frequencies shifted by ½ on antiperiodic cycles.

use crate::clifford::build_gamma;
use crate::frame::{connection_at, ConePoint, FrameError, MetricField, SigmaSpec};
use crate::par;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

type C = Complex64;
const I: C = C::new(0.0, 1.0);

#[derive(Debug, Error)]
pub enum DiracError {
    #[error("grid size must be even and at least 8, got {0}")]
    Grid(usize),
    #[error("regularization δ = {delta} is below two grid spacings ({two_h})")]
    DeltaTooSmall { delta: f64, two_h: f64 },
    #[error("σ is not finite at node {0}")]
    NonFiniteSigma(usize),
    #[error("cone exponent {0} outside [0, 1)")]
    ConeExponent(f64),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// Periodic (true) or antiperiodic boundary condition on each cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpinStructureTorus {
    pub periodic: [bool; 2],
}

impl SpinStructureTorus {
    pub fn trivial() -> Self {
        SpinStructureTorus { periodic: [true, true] }
    }

    pub fn all() -> [SpinStructureTorus; 4] {
        [[true, true], [true, false], [false, true], [false, false]].map(|p| SpinStructureTorus { periodic: p })
    }

    pub fn is_trivial(&self) -> bool {
        self.periodic == [true, true]
    }

    /// Frequency shift per cycle.
    pub fn theta(&self) -> [f64; 2] {
        self.periodic.map(|p| if p { 0.0 } else { 0.5 })
    }

    pub fn label(&self) -> String {
        self.periodic.iter().map(|p| if *p { 'P' } else { 'A' }).collect()
    }

    pub fn parse(s: &str) -> Option<Self> {
        let b: Vec<bool> = s.chars().map(|c| c == 'P' || c == 'p').collect();
        if s.len() != 2 || !s.chars().all(|c| "PpAa".contains(c)) {
            return None;
        }
        Some(SpinStructureTorus { periodic: [b[0], b[1]] })
    }
}

/// Flat torus ℝ²/(L₁ℤ × L₂ℤ) with σ = Σ cone terms + smooth part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConformalSurface {
    pub lengths: [f64; 2],
    pub cones: Vec<ConePoint>,
    #[serde(default)]
    pub smooth: Option<SigmaSpec>,
    /// Mollification scale; defaults to 4 grid spacings.
    #[serde(default)]
    pub delta: Option<f64>,
}

impl ConformalSurface {
    pub fn flat(lengths: [f64; 2]) -> Self {
        ConformalSurface { lengths, cones: vec![], smooth: None, delta: None }
    }

    /// One cone of exponent c at the center of the unit torus.
    pub fn single_cone(c: f64) -> Self {
        let cones = if c == 0.0 { vec![] } else { vec![ConePoint { at: vec![0.5, 0.5], c }] };
        ConformalSurface { lengths: [1.0, 1.0], cones, smooth: None, delta: None }
    }

    pub fn validate(&self) -> Result<(), DiracError> {
        for cp in &self.cones {
            if !(0.0..1.0).contains(&cp.c) {
                return Err(DiracError::ConeExponent(cp.c));
            }
        }
        Ok(())
    }

    pub fn spacing(&self, n: usize) -> f64 {
        self.lengths[0].max(self.lengths[1]) / n as f64
    }

    pub fn delta_for(&self, n: usize) -> f64 {
        self.delta.unwrap_or(4.0 * self.lengths[0].min(self.lengths[1]) / n as f64)
    }

    /// Regularized σ_δ as a closed-form field.
    pub fn sigma_spec(&self, n: usize) -> SigmaSpec {
        let mut parts = Vec::new();
        if !self.cones.is_empty() {
            parts.push(SigmaSpec::TorusCones { lengths: self.lengths.to_vec(), delta: self.delta_for(n), cones: self.cones.clone() });
        }
        if let Some(s) = &self.smooth {
            parts.push(s.clone());
        }
        match parts.len() {
            0 => SigmaSpec::Zero,
            1 => parts.pop().unwrap(),
            _ => SigmaSpec::Sum { parts },
        }
    }

    pub fn nodes(&self, n: usize) -> Vec<[f64; 2]> {
        let (h1, h2) = (self.lengths[0] / n as f64, self.lengths[1] / n as f64);
        (0..n * n).map(|k| [(k / n) as f64 * h1, (k % n) as f64 * h2]).collect()
    }
}

/// Fourier differentiation on an N-point grid of period L with frequency shift θ.
pub fn fourier_derivative(n: usize, length: f64, theta: f64) -> DMatrix<C> {
    let h = length / n as f64;
    let freqs: Vec<f64> = (0..n).map(|k| k as f64 - (n / 2) as f64 + theta).collect();
    DMatrix::from_fn(n, n, |j, l| {
        let dx = (j as f64 - l as f64) * h;
        let mut s = C::new(0.0, 0.0);
        for &k in &freqs {
            let w = 2.0 * PI * k / length;
            s += I * w * C::from_polar(1.0, w * dx);
        }
        s / n as f64
    })
}

fn kron(a: &DMatrix<C>, b: &DMatrix<C>) -> DMatrix<C> {
    a.kronecker(b)
}

#[derive(Clone, Debug)]
pub struct D0Blocks {
    pub n: usize,
    pub lengths: [f64; 2],
    pub spin: SpinStructureTorus,
    pub d1: DMatrix<C>,
    pub d2: DMatrix<C>,
    /// ∂₊ = −i(∂₁ + i∂₂)
    pub plus: DMatrix<C>,
    /// ∂₋ = −i(∂₁ − i∂₂) = ∂₊ᴴ
    pub minus: DMatrix<C>,
}

pub fn build_d0(spin: SpinStructureTorus, n: usize, lengths: [f64; 2]) -> Result<D0Blocks, DiracError> {
    if n < 8 || n % 2 != 0 {
        return Err(DiracError::Grid(n));
    }
    let th = spin.theta();
    let id = DMatrix::<C>::identity(n, n);
    let d1 = kron(&fourier_derivative(n, lengths[0], th[0]), &id);
    let d2 = kron(&id, &fourier_derivative(n, lengths[1], th[1]));
    let plus = (&d1 + &d2 * I) * (-I);
    let minus = (&d1 - &d2 * I) * (-I);
    Ok(D0Blocks { n, lengths, spin, d1, d2, plus, minus })
}

#[derive(Clone, Debug)]
pub struct DiracDiscretization {
    pub n: usize,
    pub lengths: [f64; 2],
    pub spin: SpinStructureTorus,
    pub sigma: Vec<f64>,
    /// ∂̂₊ = e^{−σ}∂₊
    pub plus: DMatrix<C>,
    /// ∂̂₋ = e^{−σ}∂₋
    pub minus: DMatrix<C>,
    /// e^σ h₁h₂ per node: the ⟨·,·⟩_H quadrature weight.
    pub weight: Vec<f64>,
}

fn scale_rows(m: &DMatrix<C>, s: &[f64]) -> DMatrix<C> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= C::new(s[i], 0.0);
    }
    out
}

fn scale_cols(m: &DMatrix<C>, s: &[f64]) -> DMatrix<C> {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= C::new(s[j], 0.0);
    }
    out
}

pub fn sigma_on_grid(s: &ConformalSurface, n: usize) -> Result<Vec<f64>, DiracError> {
    s.validate()?;
    let h = s.spacing(n);
    if !s.cones.is_empty() {
        let d = s.delta_for(n);
        if d < 2.0 * h * (1.0 - 1e-12) {
            return Err(DiracError::DeltaTooSmall { delta: d, two_h: 2.0 * h });
        }
    }
    let spec = s.sigma_spec(n);
    let v: Vec<f64> = s.nodes(n).iter().map(|x| spec.value(x)).collect();
    if let Some(k) = v.iter().position(|x| !x.is_finite()) {
        return Err(DiracError::NonFiniteSigma(k));
    }
    Ok(v)
}

pub fn conjugated_operator(s: &ConformalSurface, d0: &D0Blocks) -> Result<DiracDiscretization, DiracError> {
    let n = d0.n;
    let sigma = sigma_on_grid(s, n)?;
    let em: Vec<f64> = sigma.iter().map(|v| (-v).exp()).collect();
    let h2 = s.lengths[0] * s.lengths[1] / (n * n) as f64;
    Ok(DiracDiscretization {
        n,
        lengths: s.lengths,
        spin: d0.spin,
        plus: scale_rows(&d0.plus, &em),
        minus: scale_rows(&d0.minus, &em),
        weight: sigma.iter().map(|v| v.exp() * h2).collect(),
        sigma,
    })
}

/// A spinor field: (ψ₊, ψ₋) at the grid nodes.
#[derive(Clone, Debug)]
pub struct Spinor {
    pub plus: DVector<C>,
    pub minus: DVector<C>,
}

impl DiracDiscretization {
    pub fn apply(&self, psi: &Spinor) -> Spinor {
        Spinor { plus: &self.minus * &psi.minus, minus: &self.plus * &psi.plus }
    }

    pub fn inner_h(&self, a: &Spinor, b: &Spinor) -> C {
        let mut s = C::new(0.0, 0.0);
        for k in 0..self.weight.len() {
            s += (a.plus[k].conj() * b.plus[k] + a.minus[k].conj() * b.minus[k]) * self.weight[k];
        }
        s
    }

    /// |⟨η, D̂ψ⟩_H − ⟨D̂η, ψ⟩_H| relative to ‖η‖‖D̂ψ‖ + ‖D̂η‖‖ψ‖.
    pub fn adjointness_residual(&self, eta: &Spinor, psi: &Spinor) -> f64 {
        let dpsi = self.apply(psi);
        let deta = self.apply(eta);
        let a = self.inner_h(eta, &dpsi);
        let b = self.inner_h(&deta, psi);
        let nrm = |x: &Spinor| self.inner_h(x, x).re.sqrt();
        (a - b).norm() / (nrm(eta) * nrm(&dpsi) + nrm(&deta) * nrm(psi))
    }

    /// e^{σ/2} ∂̂₊ e^{−σ/2}: ∂̂₊ written in an orthonormal basis of H.
    pub fn symmetric_plus(&self) -> DMatrix<C> {
        let hp: Vec<f64> = self.sigma.iter().map(|v| (0.5 * v).exp()).collect();
        let hm: Vec<f64> = self.sigma.iter().map(|v| (-0.5 * v).exp()).collect();
        scale_cols(&scale_rows(&self.plus, &hp), &hm)
    }

    pub fn symmetric_minus(&self) -> DMatrix<C> {
        let hp: Vec<f64> = self.sigma.iter().map(|v| (0.5 * v).exp()).collect();
        let hm: Vec<f64> = self.sigma.iter().map(|v| (-0.5 * v).exp()).collect();
        scale_cols(&scale_rows(&self.minus, &hp), &hm)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct KernelCount {
    pub k: usize,
    pub threshold: f64,
    /// First retained singular value over the largest discarded one (or the threshold when none).
    pub gap_ratio: f64,
    pub smallest: Vec<f64>,
}

/// Count singular values below gap_tol × (median of the lowest decile).
///
/// Assumes the kernel is smaller than half the lowest decile, otherwise the
/// reference collapses onto the kernel itself.
pub fn count_kernel(sorted: &[f64], gap_tol: f64) -> KernelCount {
    let dec = (sorted.len() / 10).max(1);
    let reference = sorted[dec / 2];
    let threshold = gap_tol * reference;
    let k = sorted.iter().take_while(|s| **s < threshold).count();
    let below = if k > 0 { sorted[k - 1].max(f64::MIN_POSITIVE) } else { threshold };
    // capped so an exact zero singular value still serializes
    let gap_ratio = if k < sorted.len() { (sorted[k] / below).min(1e16) } else { 0.0 };
    KernelCount { k, threshold, gap_ratio, smallest: sorted.iter().take(4).copied().collect() }
}

pub fn sorted_singular_values(m: &DMatrix<C>) -> Vec<f64> {
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    s
}

/// Required separation between kernel and the rest of the spectrum.
pub const MIN_GAP_RATIO: f64 = 10.0;
pub const DEFAULT_GAP_TOL: f64 = 1e-3;

#[derive(Clone, Debug, Serialize)]
pub struct KernelReport {
    pub k_plus: usize,
    pub k_minus: usize,
    pub index: i64,
    pub plus: KernelCount,
    pub minus: KernelCount,
    pub inconclusive: bool,
}

/// Kernel dimensions of ∂̂₊ and of ∂̂₋ (its H-adjoint), each from its own SVD.
pub fn kernel_dims(d: &DiracDiscretization, gap_tol: f64) -> KernelReport {
    let plus = count_kernel(&sorted_singular_values(&d.symmetric_plus()), gap_tol);
    let minus = count_kernel(&sorted_singular_values(&d.symmetric_minus()), gap_tol);
    let inconclusive = plus.gap_ratio < MIN_GAP_RATIO || minus.gap_ratio < MIN_GAP_RATIO;
    KernelReport { k_plus: plus.k, k_minus: minus.k, index: plus.k as i64 - minus.k as i64, plus, minus, inconclusive }
}

/// Smooth twisted spinor from random low modes, optionally damped to zero near cone points.
pub fn test_spinor(s: &ConformalSurface, n: usize, spin: SpinStructureTorus, seed: u64, avoid_radius: f64) -> Spinor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let th = spin.theta();
    let nodes = s.nodes(n);
    let mut coefs = Vec::new();
    for _ in 0..2 {
        let mut cs = Vec::new();
        for k1 in -2i32..=2 {
            for k2 in -2i32..=2 {
                let a = C::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) / (1.0 + (k1 * k1 + k2 * k2) as f64);
                cs.push((k1 as f64 + th[0], k2 as f64 + th[1], a));
            }
        }
        coefs.push(cs);
    }
    let damp = |x: &[f64; 2]| -> f64 {
        let mut v = 1.0;
        for cp in &s.cones {
            if avoid_radius <= 0.0 {
                break;
            }
            let (r2, _, _) = {
                let mut r2 = 0.0;
                for d in 0..2 {
                    let l = s.lengths[d];
                    r2 += (l / PI).powi(2) * (PI * (x[d] - cp.at[d]) / l).sin().powi(2);
                }
                (r2, 0, 0)
            };
            let t = (r2.sqrt() / avoid_radius - 1.0).clamp(0.0, 1.0);
            v *= t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
        }
        v
    };
    let field = |cs: &[(f64, f64, C)]| -> DVector<C> {
        DVector::from_iterator(
            nodes.len(),
            nodes.iter().map(|x| {
                let mut v = C::new(0.0, 0.0);
                for &(k1, k2, a) in cs {
                    v += a * C::from_polar(1.0, 2.0 * PI * (k1 * x[0] / s.lengths[0] + k2 * x[1] / s.lengths[1]));
                }
                v * damp(x)
            }),
        )
    };
    Spinor { plus: field(&coefs[0]), minus: field(&coefs[1]) }
}

#[derive(Clone, Debug, Serialize)]
pub struct QuarterDensityReport {
    pub n: usize,
    /// max |entry difference| between the two assembled operators
    pub residual: f64,
    pub scale: f64,
}

/// Assemble −iγ^a e_a^μ(∂_μ + ⅛ω_{bcμ}[γ^b, γ^c] − ⅛∂_μ log|g|) from frame data and compare with e^{−σ}D₀.
pub fn quarter_density_check(s: &ConformalSurface, n: usize, spin: SpinStructureTorus) -> Result<QuarterDensityReport, DiracError> {
    let d0 = build_d0(spin, n, s.lengths)?;
    let dd = conjugated_operator(s, &d0)?;
    let metric = MetricField::conformal(2, s.sigma_spec(n));
    let gs = build_gamma(2).expect("2d gammas").to_f64();
    let nodes = s.nodes(n);
    let nn = n * n;
    // per-node multipliers: γ^a e_a^μ for each μ, and the zero-order matrix
    let data = par::map(&nodes, |x| -> Result<([[DMatrix<C>; 2]; 1], DMatrix<C>), FrameError> {
        let c = connection_at(&metric, x)?;
        let e = &c.frame.e_inv;
        let mut first = [DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)];
        let mut zero = DMatrix::<C>::zeros(2, 2);
        for mu in 0..2 {
            let mut conn = DMatrix::<C>::zeros(2, 2);
            for b in 0..2 {
                for cc in 0..2 {
                    let comm = &gs[b] * &gs[cc] - &gs[cc] * &gs[b];
                    conn += comm * C::new(0.125 * c.omega.at(b, cc, mu), 0.0);
                }
            }
            conn -= DMatrix::<C>::identity(2, 2) * C::new(0.125 * c.dlogdet[mu], 0.0);
            for a in 0..2 {
                let ga = &gs[a] * C::new(e[(a, mu)], 0.0) * (-I);
                first[mu] += &ga;
                zero += &ga * &conn;
            }
        }
        Ok(([first], zero))
    });
    let data: Result<Vec<_>, FrameError> = data.into_iter().collect();
    let data = data?;
    // spinor index layout: component s at node k ↦ s·N² + k, plus first
    let mut q = DMatrix::<C>::zeros(2 * nn, 2 * nn);
    let dmu = [&d0.d1, &d0.d2];
    for k in 0..nn {
        let ([first], zero) = &data[k];
        for s1 in 0..2 {
            for s2 in 0..2 {
                for mu in 0..2 {
                    let f = first[mu][(s1, s2)];
                    if f != C::new(0.0, 0.0) {
                        for l in 0..nn {
                            q[(s1 * nn + k, s2 * nn + l)] += f * dmu[mu][(k, l)];
                        }
                    }
                }
                q[(s1 * nn + k, s2 * nn + k)] += zero[(s1, s2)];
            }
        }
    }
    let mut r = DMatrix::<C>::zeros(2 * nn, 2 * nn);
    r.view_mut((0, nn), (nn, nn)).copy_from(&dd.minus);
    r.view_mut((nn, 0), (nn, nn)).copy_from(&dd.plus);
    let residual = (&q - &r).iter().map(|z| z.norm()).fold(0.0, f64::max);
    let scale = r.iter().map(|z| z.norm()).fold(0.0, f64::max);
    Ok(QuarterDensityReport { n, residual, scale })
}

#[derive(Clone, Debug, Serialize)]
pub struct QuadraticFormReport {
    pub n: usize,
    /// ‖D̂ψ‖²_H − ‖∇̂ψ‖²_H
    pub lhs: f64,
    /// ¼ ∫ |ψ|² R e^σ dx
    pub rhs: f64,
    pub rel_residual: f64,
}

/// Discrete integrated Lichnerowicz identity for a smooth twisted ψ.
pub fn quadratic_form_check(s: &ConformalSurface, n: usize, spin: SpinStructureTorus, seed: u64) -> Result<QuadraticFormReport, DiracError> {
    let d0 = build_d0(spin, n, s.lengths)?;
    let dd = conjugated_operator(s, &d0)?;
    let spec = s.sigma_spec(n);
    let metric = MetricField::conformal(2, spec.clone());
    let psi = test_spinor(s, n, spin, seed, 0.0);
    let dpsi = dd.apply(&psi);
    let lhs_d = dd.inner_h(&dpsi, &dpsi).re;
    let nodes = s.nodes(n);
    let comps = [&psi.plus, &psi.minus];
    let derivs: Vec<[DVector<C>; 2]> = comps.iter().map(|c| [&d0.d1 * *c, &d0.d2 * *c]).collect();
    let mut grad2 = 0.0;
    let mut rhs = 0.0;
    for (k, x) in nodes.iter().enumerate() {
        let c = connection_at(&metric, x)?;
        let sig = dd.sigma[k];
        let w = dd.weight[k];
        // ⅛ω_{abμ}[γ^a,γ^b] = ½ω_{12μ}γ¹γ² = (i/2)ω_{12μ}σ₃
        for mu in 0..2 {
            let w12 = c.omega.at(0, 1, mu);
            let dl = c.dlogdet[mu];
            for (sidx, sign) in [(0usize, 1.0), (1usize, -1.0)] {
                let v = derivs[sidx][mu][k] + I * (0.5 * w12 * sign) * comps[sidx][k] - comps[sidx][k] * (0.125 * dl);
                grad2 += (v * (-sig).exp()).norm_sqr() * w;
            }
        }
        let r = spec.scalar_curvature(x);
        rhs += 0.25 * (psi.plus[k].norm_sqr() + psi.minus[k].norm_sqr()) * r * w;
    }
    let lhs = lhs_d - grad2;
    Ok(QuadraticFormReport { n, lhs, rhs, rel_residual: (lhs - rhs).abs() / lhs_d.max(grad2) })
}

/// Radial operators of the round unit sphere in polar-mode form.
///
/// With u = √(sin ϑ)·f for the angular mode m, ∂̂₊ becomes
/// B_m u = u' − (m + ½) u / sin ϑ on (0, π); the companion
/// T_m u = u' + (m − ½) u / sin ϑ + tan(ϑ/2) u satisfies ‖B u‖² − ‖T u‖² = ‖u‖².
pub fn sphere_mode_operators(m: i32, n: usize) -> (DMatrix<f64>, DMatrix<f64>, f64) {
    let h = PI / (n + 1) as f64;
    let th: Vec<f64> = (1..=n).map(|i| i as f64 * h).collect();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        if i + 1 < n {
            d[(i, i + 1)] = 0.5 / h;
        }
        if i > 0 {
            d[(i, i - 1)] = -0.5 / h;
        }
    }
    let a = m as f64 + 0.5;
    let b = m as f64 - 0.5;
    let mut bm = d.clone();
    let mut tm = d;
    for i in 0..n {
        bm[(i, i)] -= a / th[i].sin();
        tm[(i, i)] += b / th[i].sin() + (0.5 * th[i]).tan();
    }
    (bm, tm, h)
}

#[derive(Clone, Debug, Serialize)]
pub struct SphereReport {
    pub n: usize,
    pub modes: i32,
    pub smallest_singular_value: f64,
    pub squared: f64,
    /// (R/4)(1 − 0.05) with R = 2
    pub bound: f64,
    pub holds: bool,
    pub per_mode: Vec<(i32, f64)>,
    /// max over sampled u of |‖Bu‖² − ½(‖Bu‖² + ‖Tu‖²) − ½‖u‖²| / ‖u‖²
    pub form_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum LichnerowiczOutcome {
    Infeasible { reason: String },
    Sphere(SphereReport),
}

#[derive(Clone, Debug)]
pub enum LichnerowiczTarget {
    Torus(ConformalSurface),
    RoundSphere,
}

pub const LICHNEROWICZ_BOUND: f64 = 0.5 * (1.0 - 0.05);

/// Smallest singular value of ∂̂₊ under a positive curvature hypothesis.
pub fn lichnerowicz_vanishing(target: &LichnerowiczTarget, n: usize, modes: i32, seed: u64) -> LichnerowiczOutcome {
    match target {
        LichnerowiczTarget::Torus(_) => LichnerowiczOutcome::Infeasible {
            reason: "total curvature of a torus is 4πχ = 0, so dR cannot be positive".into(),
        },
        LichnerowiczTarget::RoundSphere => {
            let ms: Vec<i32> = (-modes..=modes).collect();
            let per_mode: Vec<(i32, f64)> = par::map(&ms, |&m| {
                let (b, _, _) = sphere_mode_operators(m, n);
                (m, b.singular_values().min())
            });
            let smin = per_mode.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut form_residual = 0.0f64;
            for &m in &[-2, -1, 0, 1, 2] {
                let (b, t, h) = sphere_mode_operators(m, n);
                // smooth sample vanishing at both poles
                let a1: f64 = rng.random_range(0.5..1.5);
                let a2: f64 = rng.random_range(-0.5..0.5);
                let u = DVector::from_fn(n, |i, _| {
                    let th = (i + 1) as f64 * h;
                    th.sin().powi(3) * (a1 + a2 * th.cos())
                });
                let bu = (&b * &u).norm_squared() * h;
                let tu = (&t * &u).norm_squared() * h;
                let uu = u.norm_squared() * h;
                form_residual = form_residual.max((bu - 0.5 * (bu + tu) - 0.5 * uu).abs() / uu);
            }
            LichnerowiczOutcome::Sphere(SphereReport {
                n,
                modes,
                smallest_singular_value: smin,
                squared: smin * smin,
                bound: LICHNEROWICZ_BOUND,
                holds: smin * smin >= LICHNEROWICZ_BOUND,
                per_mode,
                form_residual,
            })
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub spin: String,
    pub c: f64,
    pub n: usize,
    pub delta: f64,
    pub k_plus: usize,
    pub k_minus: usize,
    pub index: i64,
    pub gap_ratio: f64,
    pub s0_plus: f64,
    pub s1_plus: f64,
    pub s0_minus: f64,
    pub s1_minus: f64,
    pub inconclusive: bool,
    /// k₊ equals the σ → 0 Fourier-mode count
    pub matches_oracle: bool,
}

/// Zero modes of ∂₊ on the flat torus: only the fully periodic structure has one.
pub fn fourier_mode_oracle(spin: SpinStructureTorus) -> usize {
    spin.is_trivial() as usize
}

pub fn sweep_row(spin: SpinStructureTorus, surface: &ConformalSurface, c: f64, n: usize) -> Result<SweepRow, DiracError> {
    let d0 = build_d0(spin, n, surface.lengths)?;
    let d = conjugated_operator(surface, &d0)?;
    let k = kernel_dims(&d, DEFAULT_GAP_TOL);
    let sp = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(f64::NAN);
    Ok(SweepRow {
        spin: spin.label(),
        c,
        n,
        delta: if surface.cones.is_empty() { 0.0 } else { surface.delta_for(n) },
        k_plus: k.k_plus,
        k_minus: k.k_minus,
        index: k.index,
        gap_ratio: k.plus.gap_ratio.min(k.minus.gap_ratio),
        s0_plus: sp(&k.plus.smallest, 0),
        s1_plus: sp(&k.plus.smallest, 1),
        s0_minus: sp(&k.minus.smallest, 0),
        s1_minus: sp(&k.minus.smallest, 1),
        inconclusive: k.inconclusive,
        matches_oracle: k.k_plus == fourier_mode_oracle(spin),
    })
}

/// Every (spin structure, c, N) combination for a single centered cone on the unit torus.
pub fn dirac_sweep(spins: &[SpinStructureTorus], cs: &[f64], ns: &[usize]) -> Result<Vec<SweepRow>, DiracError> {
    let mut jobs = Vec::new();
    for &n in ns {
        for &c in cs {
            for &s in spins {
                jobs.push((s, c, n));
            }
        }
    }
    let rows = par::map(&jobs, |&(s, c, n)| sweep_row(s, &ConformalSurface::single_cone(c), c, n));
    rows.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::TrigTerm;

    fn smooth_surface() -> ConformalSurface {
        ConformalSurface {
            lengths: [1.0, 1.0],
            cones: vec![],
            smooth: Some(SigmaSpec::Trig {
                terms: vec![
                    TrigTerm { amp: 0.3, k: vec![2.0 * PI, 0.0], phase: 0.2 },
                    TrigTerm { amp: 0.2, k: vec![2.0 * PI, -2.0 * PI], phase: 1.0 },
                ],
            }),
            delta: None,
        }
    }

    #[test]
    fn d0_blocks_are_adjoint_and_square_to_laplacian() {
        for spin in SpinStructureTorus::all() {
            let d = build_d0(spin, 8, [1.0, 1.3]).unwrap();
            assert!((d.plus.adjoint() - &d.minus).camax() < 1e-12);
            let lap = &d.d1 * &d.d1 + &d.d2 * &d.d2;
            assert!((&d.minus * &d.plus + &lap).camax() < 1e-9);
        }
    }

    #[test]
    fn flat_kernels() {
        for spin in SpinStructureTorus::all() {
            let d0 = build_d0(spin, 8, [1.0, 1.0]).unwrap();
            let d = conjugated_operator(&ConformalSurface::flat([1.0, 1.0]), &d0).unwrap();
            let k = kernel_dims(&d, DEFAULT_GAP_TOL);
            assert_eq!(k.k_plus, fourier_mode_oracle(spin));
            assert_eq!(k.index, 0);
            if spin.periodic == [false, false] {
                assert!((k.plus.smallest[0] - PI * 2f64.sqrt()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn weighted_adjointness() {
        let s = ConformalSurface::single_cone(0.5);
        let spin = SpinStructureTorus { periodic: [true, false] };
        let d0 = build_d0(spin, 16, s.lengths).unwrap();
        let d = conjugated_operator(&s, &d0).unwrap();
        let a = test_spinor(&s, 16, spin, 1, 0.2);
        let b = test_spinor(&s, 16, spin, 2, 0.2);
        assert!(d.adjointness_residual(&a, &b) < 1e-12);
        // smooth σ: ⟨η, D̂ψ⟩_H equals the flat pairing ⟨η, D₀ψ⟩
        let s2 = smooth_surface();
        let d2 = conjugated_operator(&s2, &d0).unwrap();
        let dp = d2.apply(&b);
        let lhs = d2.inner_h(&a, &dp);
        let h2 = 1.0 / 256.0;
        let flat = a.plus.dotc(&(&d0.minus * &b.minus)) * h2 + a.minus.dotc(&(&d0.plus * &b.plus)) * h2;
        assert!((lhs - flat).norm() < 1e-10 * flat.norm().max(1.0));
    }

    #[test]
    fn quarter_density_routes_agree() {
        let r = quarter_density_check(&smooth_surface(), 8, SpinStructureTorus::trivial()).unwrap();
        assert!(r.residual < 1e-10, "{r:?}");
        let r = quarter_density_check(&ConformalSurface::single_cone(0.5), 8, SpinStructureTorus::trivial()).unwrap();
        assert!(r.residual < 1e-8, "{r:?}");
    }

    #[test]
    fn quadratic_form_identity() {
        let a = quadratic_form_check(&smooth_surface(), 16, SpinStructureTorus::trivial(), 3).unwrap();
        let b = quadratic_form_check(&smooth_surface(), 32, SpinStructureTorus::trivial(), 3).unwrap();
        assert!(b.rel_residual < 1e-6, "{a:?} {b:?}");
        assert!(b.rel_residual <= a.rel_residual / 4.0 || b.rel_residual < 1e-10);
    }

    #[test]
    fn sphere_bound() {
        match lichnerowicz_vanishing(&LichnerowiczTarget::RoundSphere, 200, 4, 0) {
            LichnerowiczOutcome::Sphere(r) => {
                assert!(r.holds, "{r:?}");
                assert!((r.smallest_singular_value - 1.0).abs() < 0.05, "{r:?}");
                assert!(r.form_residual < 1e-3, "{r:?}");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            lichnerowicz_vanishing(&LichnerowiczTarget::Torus(ConformalSurface::flat([1.0, 1.0])), 16, 2, 0),
            LichnerowiczOutcome::Infeasible { .. }
        ));
    }

    #[test]
    fn rejects_tight_delta() {
        let mut s = ConformalSurface::single_cone(0.25);
        s.delta = Some(0.01);
        let d0 = build_d0(SpinStructureTorus::trivial(), 16, s.lengths).unwrap();
        assert!(matches!(conjugated_operator(&s, &d0), Err(DiracError::DeltaTooSmall { .. })));
    }
}
