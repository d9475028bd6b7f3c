//! L^p audits near a singular point by dyadic annulus scaling.
//!
//! Annulus A_k = {2^{−k−1} r₀ < |x − x₀| < 2^{−k} r₀}. The per-annulus
//! contributions ∫_{A_k} |Q|^p dμ are fitted as log₂ c_k ≈ a + s·k; a sum that
//! decays geometrically (s clearly negative) is finite.

use crate::clifford::{alt4, build_gamma, GammaSet};
use crate::frame::{connection_at, connection_at_gauge, ConnectionData, FrameError, MetricField, PlaneGauge};
use crate::par;
use crate::quad::{gauss_on, sphere_rule};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IntegrabilityError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("annuli of radius {r0} leave the chart of radius {chart}")]
    LeavesChart { r0: f64, chart: f64 },
    #[error("non-finite value of {0} in annulus {1}")]
    NonFinite(String, usize),
    #[error("exponent grid is too coarse or never flips: {0}")]
    GridTooCoarse(String),
}

/// Reference measure for the norms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    /// dvol_g = √|g| dx
    Riemannian,
    /// |g|^{1/4} dx
    QuarterDensity,
    Lebesgue,
}

impl Measure {
    fn weight(&self, det: f64) -> f64 {
        match self {
            Measure::Riemannian => det.sqrt(),
            Measure::QuarterDensity => det.sqrt().sqrt(),
            Measure::Lebesgue => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Integrable,
    Divergent,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct AnnulusEntry {
    pub k: usize,
    pub r_inner: f64,
    pub r_outer: f64,
    pub contribution: f64,
    /// Same integral for the size of the factors, used to recognize cancellation.
    pub scale_contribution: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct IntegrabilityReport {
    pub condition_id: String,
    pub label: String,
    pub p: f64,
    pub measure: Measure,
    /// Fitted slope of log₂ contributions against k.
    pub slope: f64,
    /// −slope: the geometric decay rate of the dyadic sum.
    pub decay_exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub max_residual: f64,
    pub verdict: Verdict,
    pub note: Option<String>,
    pub annuli: Vec<AnnulusEntry>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScanOptions {
    pub r0: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub radial_order: usize,
    pub polar_order: usize,
    pub azimuth: usize,
    /// Coordinate radius of the chart around x₀.
    pub chart_radius: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions { r0: 0.5, k_min: 2, k_max: 14, radial_order: 8, polar_order: 8, azimuth: 16, chart_radius: f64::INFINITY }
    }
}

/// Slope magnitude below which the decay is called geometric.
pub const SLOPE_DELTA: f64 = 0.1;
pub const MIN_R2: f64 = 0.98;
/// Flat contributions (within this slope and spread) mean a logarithmic divergence.
pub const MARGINAL_SLOPE: f64 = 0.02;
pub const MARGINAL_SPREAD: f64 = 0.05;
/// Quantity/scale ratio below which a quantity counts as identically zero.
pub const CANCELLATION_RATIO: f64 = 1e-10;

/// Verdict and note from the fit.
pub fn classify(slope: f64, r2: f64, max_residual: f64) -> (Verdict, Option<String>) {
    if slope <= -SLOPE_DELTA && r2 >= MIN_R2 {
        (Verdict::Integrable, None)
    } else if slope >= SLOPE_DELTA {
        (Verdict::Divergent, None)
    } else if slope.abs() < MARGINAL_SLOPE && max_residual < MARGINAL_SPREAD {
        (Verdict::Divergent, Some("logarithmic".into()))
    } else {
        (Verdict::Inconclusive, None)
    }
}

/// Linear least squares y ≈ a + s x; returns (s, a, R², max |residual|).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let s = sxy / sxx;
    let a = my - s * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(u, v)| (v - a - s * u).powi(2)).sum();
    let maxr = x.iter().zip(y).map(|(u, v)| (v - a - s * u).abs()).fold(0.0, f64::max);
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    (s, a, r2, maxr)
}

/// Scan ∫_{A_k} |Q|^p dμ over dyadic annuli around x₀.
///
/// `q` returns (|Q|, size of its factors); the second value only feeds the
/// cancellation check.
#[allow(clippy::too_many_arguments)]
pub fn annulus_scan<Q>(
    m: &MetricField,
    q: Q,
    p: f64,
    x0: &[f64],
    measure: Measure,
    opts: &ScanOptions,
    condition_id: &str,
    label: &str,
) -> Result<IntegrabilityReport, IntegrabilityError>
where
    Q: Fn(&[f64]) -> Result<(f64, f64), FrameError> + Sync,
{
    if opts.r0 > opts.chart_radius {
        return Err(IntegrabilityError::LeavesChart { r0: opts.r0, chart: opts.chart_radius });
    }
    let n = m.n;
    let dirs = sphere_rule(n, opts.polar_order, opts.azimuth);
    // slight irrational rotation so no node sits on a coordinate axis
    let dirs: Vec<(Vec<f64>, f64)> = dirs.into_iter().map(|(u, w)| (tilt(&u), w)).collect();
    let mut annuli = Vec::new();
    for k in opts.k_min..=opts.k_max {
        let ro = opts.r0 * 0.5f64.powi(k as i32);
        let ri = 0.5 * ro;
        let radial = gauss_on(ri, ro, opts.radial_order);
        let nodes: Vec<(Vec<f64>, f64)> = radial
            .iter()
            .flat_map(|(r, wr)| {
                dirs.iter().map(move |(u, wu)| {
                    let x: Vec<f64> = x0.iter().zip(u).map(|(a, b)| a + r * b).collect();
                    (x, wr * wu * r.powi(n as i32 - 1))
                })
            })
            .collect();
        let vals = par::map(&nodes, |(x, w)| -> Result<(f64, f64), FrameError> {
            let (v, s) = q(x)?;
            let mu = measure.weight(m.g(x).determinant());
            Ok((w * mu * v.powf(p), w * mu * s.powf(p)))
        });
        let mut a = Vec::with_capacity(vals.len());
        let mut b = Vec::with_capacity(vals.len());
        for v in vals {
            let (x, y) = v?;
            a.push(x);
            b.push(y);
        }
        let c = par::sum(&a);
        let sc = par::sum(&b);
        if !c.is_finite() || !sc.is_finite() {
            return Err(IntegrabilityError::NonFinite(label.into(), k));
        }
        annuli.push(AnnulusEntry { k, r_inner: ri, r_outer: ro, contribution: c, scale_contribution: sc });
    }
    let total: f64 = annuli.iter().map(|a| a.contribution).sum();
    let total_scale: f64 = annuli.iter().map(|a| a.scale_contribution).sum();
    let base = |slope: f64, a: f64, r2: f64, mr: f64, verdict: Verdict, note: Option<String>, annuli: Vec<AnnulusEntry>| IntegrabilityReport {
        condition_id: condition_id.into(),
        label: label.into(),
        p,
        measure,
        slope,
        decay_exponent: -slope,
        intercept: a,
        r_squared: r2,
        max_residual: mr,
        verdict,
        note,
        annuli,
    };
    if total == 0.0 || (total_scale > 0.0 && total <= CANCELLATION_RATIO * total_scale) {
        return Ok(base(f64::NEG_INFINITY, f64::NEG_INFINITY, 1.0, 0.0, Verdict::Integrable, Some("vanishes identically".into()), annuli));
    }
    let kx: Vec<f64> = annuli.iter().map(|a| a.k as f64).collect();
    let ly: Vec<f64> = annuli.iter().map(|a| a.contribution.max(1e-300).log2()).collect();
    let (s, a, r2, mr) = linear_fit(&kx, &ly);
    let (v, note) = classify(s, r2, mr);
    Ok(base(s, a, r2, mr, v, note, annuli))
}

fn tilt(u: &[f64]) -> Vec<f64> {
    // rotation by a fixed generic angle in each consecutive coordinate pair
    let mut v = u.to_vec();
    let t: f64 = 0.3141;
    for i in 0..v.len().saturating_sub(1) {
        let (a, b) = (v[i], v[i + 1]);
        v[i] = t.cos() * a - t.sin() * b;
        v[i + 1] = t.sin() * a + t.cos() * b;
    }
    v
}

/// Slope of the dyadic contributions of |Q| = r^α in L^p(dvol_g) on the cone |x|^{−2c}δ in ℝⁿ.
pub fn power_law_oracle_slope(alpha: f64, p: f64, n: usize, c: f64) -> f64 {
    -(p * alpha + n as f64 * (1.0 - c))
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// A tensor-valued expression of the frame data with a factor-size estimate.
pub type QuantityFn = fn(&ConnectionData) -> (f64, f64);

#[derive(Clone, Copy)]
pub struct Quantity {
    pub id: &'static str,
    pub label: &'static str,
    pub p: f64,
    pub measure: Measure,
    pub eval: QuantityFn,
}

fn e_norm(c: &ConnectionData) -> f64 {
    norm(c.frame.e_inv.iter().copied())
}

fn w_norm(c: &ConnectionData) -> f64 {
    norm(c.omega_frame.w.iter().copied())
}

fn q_ee(c: &ConnectionData) -> (f64, f64) {
    let n = c.g.nrows();
    let e = &c.frame.e_inv;
    let mut s = 0.0;
    for a in 0..n {
        for b in 0..n {
            for mu in 0..n {
                for nu in 0..n {
                    s += (e[(a, mu)] * e[(b, nu)] - e[(b, mu)] * e[(a, nu)]).powi(2);
                }
            }
        }
    }
    (s.sqrt(), e_norm(c).powi(2))
}

fn q_flux(c: &ConnectionData) -> (f64, f64) {
    let v = crate::measure::flux_vector(c);
    let sg = c.sqrt_det();
    (norm(v.iter().map(|x| x / sg)), e_norm(c) * w_norm(c))
}

/// −e_a^μ ω_{bcc} + e_b^μ ω_{acc} + e_c^μ ω_{cab} − e_c^μ ω_{cba}
fn q_mixed(c: &ConnectionData) -> (f64, f64) {
    let n = c.g.nrows();
    let e = &c.frame.e_inv;
    let w = &c.omega_frame;
    let tr: Vec<f64> = (0..n).map(|b| (0..n).map(|k| w.at(b, k, k)).sum()).collect();
    let mut s = 0.0;
    for a in 0..n {
        for b in 0..n {
            for mu in 0..n {
                let mut v = -e[(a, mu)] * tr[b] + e[(b, mu)] * tr[a];
                for k in 0..n {
                    v += e[(k, mu)] * (w.at(k, a, b) - w.at(k, b, a));
                }
                s += v * v;
            }
        }
    }
    (s.sqrt(), e_norm(c) * w_norm(c))
}

fn q_ww(c: &ConnectionData) -> (f64, f64) {
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
    (s.abs(), w_norm(c).powi(2))
}

/// e_c^μ ω_{cdd}
fn q_trace(c: &ConnectionData) -> (f64, f64) {
    let n = c.g.nrows();
    let e = &c.frame.e_inv;
    let w = &c.omega_frame;
    let v = (0..n).map(|mu| (0..n).map(|k| e[(k, mu)] * (0..n).map(|d| w.at(k, d, d)).sum::<f64>()).sum::<f64>());
    (norm(v), e_norm(c) * w_norm(c))
}

/// Alt_{cdef}(e_c^μ ω_{efd})
fn q_alt_ew(c: &ConnectionData) -> (f64, f64) {
    let n = c.g.nrows();
    if n < 4 {
        return (0.0, e_norm(c) * w_norm(c));
    }
    let e = &c.frame.e_inv;
    let w = &c.omega_frame;
    let mut s = 0.0;
    for mu in 0..n {
        let x = |cc: usize, d: usize, ee: usize, f: usize| e[(cc, mu)] * w.at(ee, f, d);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let v = alt4(x, [i, j, k, l]);
                        s += v * v;
                    }
                }
            }
        }
    }
    (s.sqrt(), e_norm(c) * w_norm(c))
}

/// Alt_{mnpq}(ω_{mrr}ω_{pqn} − ω_{pqr}ω_{rnm} + ω_{mrp}ω_{rnq})
fn q_alt_ww(c: &ConnectionData) -> (f64, f64) {
    let n = c.g.nrows();
    if n < 4 {
        return (0.0, w_norm(c).powi(2));
    }
    let w = &c.omega_frame;
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let v = alt4(|a, b, cc, d| w.four_form_seed(a, b, cc, d), [i, j, k, l]);
                    s += v * v;
                }
            }
        }
    }
    (s.sqrt(), w_norm(c).powi(2))
}

fn q_e(c: &ConnectionData) -> (f64, f64) {
    let v = e_norm(c);
    (v, v)
}

fn q_omega(c: &ConnectionData) -> (f64, f64) {
    let v = w_norm(c);
    (v, v)
}

/// Alt_{abc} ω_{abc}
fn q_alt_w(c: &ConnectionData) -> (f64, f64) {
    let n = c.g.nrows();
    let w = &c.omega_frame;
    let mut s = 0.0;
    for a in 0..n {
        for b in 0..n {
            for k in 0..n {
                let mut v = 0.0;
                for (perm, sg) in [([0, 1, 2], 1.0), ([1, 2, 0], 1.0), ([2, 0, 1], 1.0), ([1, 0, 2], -1.0), ([0, 2, 1], -1.0), ([2, 1, 0], -1.0)] {
                    let idx = [a, b, k];
                    v += sg * w.at(idx[perm[0]], idx[perm[1]], idx[perm[2]]);
                }
                s += (v / 6.0).powi(2);
            }
        }
    }
    (s.sqrt(), w_norm(c))
}

/// 4 e_a^μ ω_{abμ} − e_b^μ ∂_μ log|g|
fn q_quarter_combo(c: &ConnectionData) -> (f64, f64) {
    let n = c.g.nrows();
    let e = &c.frame.e_inv;
    let w = &c.omega_frame;
    let dl = &c.dlogdet;
    let mut s = 0.0;
    let mut sc = 0.0;
    for b in 0..n {
        let t1: f64 = 4.0 * (0..n).map(|a| w.at(a, b, a)).sum::<f64>();
        let t2: f64 = (0..n).map(|mu| e[(b, mu)] * dl[mu]).sum();
        s += (t1 - t2).powi(2);
        sc += t1 * t1 + t2 * t2;
    }
    (s.sqrt(), sc.sqrt())
}

/// e_a^μ ∂_μ log|g|
fn q_e_dlog(c: &ConnectionData) -> (f64, f64) {
    let n = c.g.nrows();
    let e = &c.frame.e_inv;
    let v = (0..n).map(|a| (0..n).map(|mu| e[(a, mu)] * c.dlogdet[mu]).sum::<f64>());
    let r = norm(v);
    (r, r)
}

pub fn curvature_terms_quantities() -> Vec<Quantity> {
    let q = |id, label, eval| Quantity { id, label, p: 1.0, measure: Measure::Riemannian, eval };
    vec![
        q("curv.1", "e_a^μ e_b^ν − e_b^μ e_a^ν", q_ee as QuantityFn),
        q("curv.2a", "(e_a^μ e_b^ν − e_a^ν e_b^μ) ω_{abν}", q_flux),
        q("curv.2b", "−e_a^μ e_c^ν ω_{bcν} + e_b^μ e_c^ν ω_{acν} + e_c^μ e_b^ν ω_{caν} − e_c^μ e_a^ν ω_{cbν}", q_mixed),
        q("curv.3", "e_a^μ e_b^ν (ω_{acμ} ω_{cbν} − ω_{acν} ω_{cbμ})", q_ww),
    ]
}

pub fn dirac_square_quantities() -> Vec<Quantity> {
    let q = |id, label, eval| Quantity { id, label, p: 1.0, measure: Measure::Riemannian, eval };
    vec![
        q("dsq.1", "e_c^μ e_d^ν − e_d^μ e_c^ν", q_ee as QuantityFn),
        q("dsq.2a", "e_c^μ ω_{cdd}", q_trace),
        q("dsq.2b", "−e_a^μ ω_{bdd} + e_b^μ ω_{add} + e_c^μ ω_{cab} − e_c^μ ω_{cba}", q_mixed),
        q("dsq.2c", "Alt_{cdef}(e_c^μ ω_{efd})", q_alt_ew),
        q("dsq.3a", "ω_{aca} ω_{cbb} − ω_{acb} ω_{cba}", q_ww),
        q("dsq.3b", "Alt_{mnpq}(ω_{mrr} ω_{pqn} − ω_{pqr} ω_{rnm} + ω_{mrp} ω_{rnq})", q_alt_ww),
    ]
}

pub fn quarter_density_quantities() -> Vec<Quantity> {
    let q = |id, label, eval| Quantity { id, label, p: 2.0, measure: Measure::QuarterDensity, eval };
    vec![
        q("quarter.1", "e_a^μ", q_e as QuantityFn),
        q("quarter.2", "Alt_{abc} ω_{abc}", q_alt_w),
        q("quarter.3", "4 e_a^μ ω_{abμ} − e_b^μ ∂_μ log|g|", q_quarter_combo),
    ]
}

pub fn dirac_coefficient_quantities() -> Vec<Quantity> {
    let q = |id, label, eval| Quantity { id, label, p: 2.0, measure: Measure::QuarterDensity, eval };
    vec![
        q("dcoef.1", "e_a^μ", q_e as QuantityFn),
        q("dcoef.2", "ω_{abc}", q_omega),
        q("dcoef.3", "e_a^μ ∂_μ log|g|", q_e_dlog),
    ]
}

pub fn frame_coefficient_quantities() -> Vec<Quantity> {
    let q = |id, label, eval| Quantity { id, label, p: 2.0, measure: Measure::Riemannian, eval };
    vec![q("frame.1", "e_a^μ", q_e as QuantityFn), q("frame.2", "ω_{abc}", q_omega)]
}

/// Run every quantity through the annulus scan, optionally in a rotated frame.
pub fn audit(
    m: &MetricField,
    x0: &[f64],
    items: &[Quantity],
    gauge: Option<&PlaneGauge>,
    opts: &ScanOptions,
) -> Result<Vec<IntegrabilityReport>, IntegrabilityError> {
    items
        .iter()
        .map(|it| {
            let f = |x: &[f64]| -> Result<(f64, f64), FrameError> {
                let c = match gauge {
                    Some(gg) => connection_at_gauge(m, x, gg)?,
                    None => connection_at(m, x)?,
                };
                Ok((it.eval)(&c))
            };
            annulus_scan(m, f, it.p, x0, it.measure, opts, it.id, it.label)
        })
        .collect()
}

pub fn curvature_terms_audit(m: &MetricField, x0: &[f64], opts: &ScanOptions) -> Result<Vec<IntegrabilityReport>, IntegrabilityError> {
    audit(m, x0, &curvature_terms_quantities(), None, opts)
}

pub fn dirac_square_audit(m: &MetricField, x0: &[f64], opts: &ScanOptions) -> Result<Vec<IntegrabilityReport>, IntegrabilityError> {
    audit(m, x0, &dirac_square_quantities(), None, opts)
}

pub fn quarter_density_audit(m: &MetricField, x0: &[f64], opts: &ScanOptions) -> Result<Vec<IntegrabilityReport>, IntegrabilityError> {
    audit(m, x0, &quarter_density_quantities(), None, opts)
}

pub fn all_integrable(reports: &[IntegrabilityReport]) -> bool {
    reports.iter().all(|r| r.verdict == Verdict::Integrable)
}

/// |D ψ| for a constant unit spinor: |¼ ω_{jki} γ^i γ^j γ^k ψ|.
pub fn constant_spinor_dirac_norm(c: &ConnectionData, gammas: &[DMatrix<Complex64>], psi: &DVector<Complex64>) -> f64 {
    let n = c.g.nrows();
    let w = &c.omega_frame;
    let d = psi.len();
    let mut out = DVector::from_element(d, Complex64::new(0.0, 0.0));
    for j in 0..n {
        for k in 0..n {
            if j == k {
                continue;
            }
            let gjk = &gammas[j] * &gammas[k];
            let v = &gjk * psi;
            for i in 0..n {
                let coef = w.at(j, k, i);
                if coef != 0.0 {
                    out += (&gammas[i] * &v) * Complex64::new(0.25 * coef, 0.0);
                }
            }
        }
    }
    out.norm()
}

#[derive(Clone, Debug, Serialize)]
pub struct ThresholdRow {
    pub p: f64,
    pub slope: f64,
    pub oracle_slope: f64,
    pub verdict: Verdict,
    pub note: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ThresholdReport {
    pub n: usize,
    pub c: f64,
    pub rows: Vec<ThresholdRow>,
    pub last_integrable: f64,
    pub first_divergent: f64,
    pub max_fit_error: f64,
}

impl ThresholdReport {
    pub fn brackets(&self, p: f64) -> bool {
        self.last_integrable < p && p <= self.first_divergent
    }
}

/// L^p(dvol_g) scan of |D ψ| for a constant spinor on the cone |x|^{−2c}δ in ℝⁿ.
pub fn lp_threshold_scan(n: usize, c: f64, p_grid: &[f64], opts: &ScanOptions) -> Result<ThresholdReport, IntegrabilityError> {
    let m = MetricField::cone(c, n);
    let g: GammaSet = build_gamma(n).map_err(|e| IntegrabilityError::GridTooCoarse(e.to_string()))?;
    let gm = g.to_f64();
    let mut psi = DVector::from_element(g.dim_rep, Complex64::new(0.0, 0.0));
    psi[0] = Complex64::new(1.0, 0.0);
    let x0 = vec![0.0; n];
    let f = |x: &[f64]| -> Result<(f64, f64), FrameError> {
        let cd = connection_at(&m, x)?;
        let v = constant_spinor_dirac_norm(&cd, &gm, &psi);
        Ok((v, v))
    };
    let mut rows = Vec::new();
    for &p in p_grid {
        let r = annulus_scan(&m, f, p, &x0, Measure::Riemannian, opts, "ex5", "|D ψ|")?;
        rows.push(ThresholdRow { p, slope: r.slope, oracle_slope: power_law_oracle_slope(c - 1.0, p, n, c), verdict: r.verdict, note: r.note });
    }
    let last_integrable = rows.iter().filter(|r| r.verdict == Verdict::Integrable).map(|r| r.p).fold(f64::NEG_INFINITY, f64::max);
    let first_divergent = rows.iter().filter(|r| r.verdict == Verdict::Divergent).map(|r| r.p).fold(f64::INFINITY, f64::min);
    if !last_integrable.is_finite() || !first_divergent.is_finite() || first_divergent < last_integrable {
        return Err(IntegrabilityError::GridTooCoarse(format!("no clean flip on {p_grid:?}")));
    }
    let max_fit_error = rows.iter().map(|r| (r.slope - r.oracle_slope).abs()).fold(0.0, f64::max);
    Ok(ThresholdReport { n, c, rows, last_integrable, first_divergent, max_fit_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::PlaneGauge;

    #[test]
    fn flat_volume_scan() {
        let m = MetricField::flat(3);
        let r = annulus_scan(&m, |_| Ok((1.0, 1.0)), 1.0, &[0.0; 3], Measure::Riemannian, &ScanOptions::default(), "vol", "1").unwrap();
        assert!((r.slope + 3.0).abs() < 1e-10);
        assert_eq!(r.verdict, Verdict::Integrable);
    }

    #[test]
    fn cone_connection_l2() {
        let o = ScanOptions::default();
        for (n, want) in [(3, Verdict::Integrable), (2, Verdict::Divergent)] {
            let m = MetricField::cone(0.5, n);
            let r = audit(&m, &vec![0.0; n], &frame_coefficient_quantities()[1..], None, &o).unwrap();
            assert_eq!(r[0].verdict, want, "n={n}: {:?}", r[0].slope);
            let oracle = power_law_oracle_slope(0.5 - 1.0, 2.0, n, 0.5);
            assert!((r[0].slope - oracle).abs() < 0.05, "{} vs {oracle}", r[0].slope);
        }
    }

    #[test]
    fn audits_on_cones() {
        let o = ScanOptions::default();
        for n in [2, 3] {
            let m = MetricField::cone(0.4, n);
            let x0 = vec![0.0; n];
            let t1 = curvature_terms_audit(&m, &x0, &o).unwrap();
            assert!(all_integrable(&t1), "{:?}", t1.iter().map(|r| (&r.condition_id, r.slope, r.verdict)).collect::<Vec<_>>());
            let t2 = dirac_square_audit(&m, &x0, &o).unwrap();
            assert!(all_integrable(&t2));
            if n == 2 {
                assert_eq!(t1[3].note.as_deref(), Some("vanishes identically"));
            }
        }
        let m = MetricField::cone(0.5, 2);
        let p9 = quarter_density_audit(&m, &[0.0, 0.0], &o).unwrap();
        assert!(all_integrable(&p9));
        assert_eq!(p9[2].note.as_deref(), Some("vanishes identically"));
        // gauge rotation leaves the verdicts alone
        let gg = PlaneGauge { i: 0, j: 1, theta0: 0.3, k: vec![0.7, -0.4] };
        let rot = audit(&m, &[0.0, 0.0], &curvature_terms_quantities(), Some(&gg), &o).unwrap();
        assert!(all_integrable(&rot));
    }

    #[test]
    fn lp_scan_brackets_dimension() {
        let grid: Vec<f64> = (0..9).map(|i| 2.0 + 0.25 * i as f64).collect();
        let r = lp_threshold_scan(3, 0.5, &grid, &ScanOptions::default()).unwrap();
        assert!(r.brackets(3.0), "{r:?}");
        assert!(r.max_fit_error < 0.05);
        let grid2: Vec<f64> = (0..9).map(|i| 1.0 + 0.25 * i as f64).collect();
        let r2 = lp_threshold_scan(2, 0.5, &grid2, &ScanOptions::default()).unwrap();
        assert!(r2.brackets(2.0));
    }
}
