//! Tensor-product quadrature on polar blocks with shrinking exclusion shells.
//!
//! A layout integrates over `center + r·u` in the polar coordinates P
//! (radial Gauss–Legendre pieces between breakpoints, u from a sphere rule)
//! times a Gauss–Legendre product over the remaining coordinates. Radii at
//! which the integrand is singular are excluded by ε and the exclusion is
//! shrunk dyadically; the partial sums are accelerated with Aitken's Δ².

use crate::frame::{FrameError, Stratum};
use crate::par;
use gauss_quad::{FiniteAboveNegOneF64, GaussJacobi, GaussLegendre};
use serde::Serialize;
use std::f64::consts::PI;
use std::num::NonZeroUsize;

/// Gauss–Legendre nodes and weights on [−1, 1].
pub fn gauss_legendre(m: usize) -> Vec<(f64, f64)> {
    let m = NonZeroUsize::new(m.max(1)).unwrap();
    GaussLegendre::new(m).as_node_weight_pairs().to_vec()
}

/// Gauss–Legendre on [a, b].
pub fn gauss_on(a: f64, b: f64, m: usize) -> Vec<(f64, f64)> {
    let h = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    gauss_legendre(m).into_iter().map(|(x, w)| (mid + h * x, w * h)).collect()
}

/// Piecewise Gauss–Legendre over consecutive breakpoints.
pub fn gauss_pieces(breaks: &[f64], m: usize) -> Vec<(f64, f64)> {
    breaks.windows(2).filter(|w| w[1] > w[0]).flat_map(|w| gauss_on(w[0], w[1], m)).collect()
}

/// Gauss–Jacobi for the weight (1 − t²)^α on [−1, 1].
fn gauss_jacobi_sym(m: usize, alpha: f64) -> Vec<(f64, f64)> {
    if alpha == 0.0 {
        return gauss_legendre(m);
    }
    let a = FiniteAboveNegOneF64::new(alpha).expect("jacobi exponent");
    let m = NonZeroUsize::new(m.max(1)).unwrap();
    GaussJacobi::new(m, a, a).as_node_weight_pairs().to_vec()
}

/// Directions on S^{m−1} ⊂ ℝ^m with weights summing to the sphere's area.
///
/// m = 2 uses an `azimuth`-point trapezoid; higher m splits off one polar
/// angle at a time with a Gauss–Jacobi rule in cos θ.
pub fn sphere_rule(m: usize, polar: usize, azimuth: usize) -> Vec<(Vec<f64>, f64)> {
    match m {
        0 => vec![(vec![], 1.0)],
        1 => vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)],
        2 => {
            let h = 2.0 * PI / azimuth as f64;
            (0..azimuth).map(|k| {
                let t = (k as f64 + 0.5) * h;
                (vec![t.cos(), t.sin()], h)
            }).collect()
        }
        _ => {
            let inner = sphere_rule(m - 1, polar, azimuth);
            let tr = gauss_jacobi_sym(polar, 0.5 * (m as f64 - 3.0));
            let mut out = Vec::with_capacity(tr.len() * inner.len());
            for &(t, wt) in &tr {
                let s = (1.0 - t * t).max(0.0).sqrt();
                for (v, wv) in &inner {
                    let mut u = Vec::with_capacity(m);
                    u.push(t);
                    u.extend(v.iter().map(|c| c * s));
                    out.push((u, wt * wv));
                }
            }
            out
        }
    }
}

/// Directions (cos θ, sin θ) with Gauss–Legendre weights over an angle range split at breakpoints.
pub fn arc_rule(breaks: &[f64], m: usize) -> Vec<(Vec<f64>, f64)> {
    gauss_pieces(breaks, m).into_iter().map(|(t, w)| (vec![t.cos(), t.sin()], w)).collect()
}

/// Area of the unit sphere S^{m−1}.
pub fn sphere_area(m: usize) -> f64 {
    let mf = m as f64;
    2.0 * PI.powf(0.5 * mf) / gamma_fn(0.5 * mf)
}

fn gamma_fn(x: f64) -> f64 {
    // only half-integers and integers are needed here
    if (x - 0.5).abs() < 1e-12 {
        PI.sqrt()
    } else if (x - 1.0).abs() < 1e-12 {
        1.0
    } else {
        (x - 1.0) * gamma_fn(x - 1.0)
    }
}

#[derive(Clone, Debug)]
pub struct PolarLayout {
    pub n: usize,
    /// Full-length point; only the polar coordinates are read.
    pub center: Vec<f64>,
    pub polar: Vec<usize>,
    /// Sorted radial breakpoints.
    pub breaks: Vec<f64>,
    /// Breakpoints at which the integrand is singular.
    pub singular_radii: Vec<f64>,
    pub directions: Vec<(Vec<f64>, f64)>,
    /// Product rule over the non-polar coordinates: (values in coordinate order, weight).
    pub base: Vec<(Vec<f64>, f64)>,
    pub base_coords: Vec<usize>,
    /// Strata not aligned with the layout; nodes closer than `avoid_radius` are dropped.
    pub avoid: Vec<Stratum>,
    pub avoid_radius: f64,
    pub radial_order: usize,
}

/// Product of one-dimensional rules.
pub fn product_rule(rules: &[Vec<(f64, f64)>]) -> Vec<(Vec<f64>, f64)> {
    let mut out = vec![(Vec::new(), 1.0)];
    for r in rules {
        let mut next = Vec::with_capacity(out.len() * r.len());
        for (p, w) in &out {
            for &(x, wx) in r {
                let mut q = p.clone();
                q.push(x);
                next.push((q, w * wx));
            }
        }
        out = next;
    }
    out
}

/// Integral value with the absolute mass Σ|w·F| for scaling tolerances.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct Sum {
    pub value: f64,
    pub mass: f64,
    pub dropped: usize,
}

impl PolarLayout {
    fn point(&self, r: f64, u: &[f64], b: &[f64]) -> Vec<f64> {
        let mut x = self.center.clone();
        for (k, &p) in self.polar.iter().enumerate() {
            x[p] = self.center[p] + r * u[k];
        }
        for (k, &q) in self.base_coords.iter().enumerate() {
            x[q] = b[k];
        }
        x
    }

    /// ∫ over the radial nodes given, times all directions and base nodes.
    pub fn integrate_radial<F>(&self, radial: &[(f64, f64)], f: &F) -> Result<Sum, FrameError>
    where
        F: Fn(&[f64]) -> Result<f64, FrameError> + Sync,
    {
        let m = self.polar.len();
        let nd = self.directions.len();
        let nb = self.base.len();
        let per_r = nd * nb;
        let total = radial.len() * per_r;
        let vals = par::map_range(total, |idx| -> Result<(f64, f64, bool), FrameError> {
            let (ir, rest) = (idx / per_r, idx % per_r);
            let (id, ib) = (rest / nb, rest % nb);
            let (r, wr) = radial[ir];
            let (u, wu) = &self.directions[id];
            let (b, wb) = &self.base[ib];
            let x = self.point(r, u, b);
            if self.avoid.iter().any(|s| s.distance(&x) <= self.avoid_radius) {
                return Ok((0.0, 0.0, true));
            }
            let w = wr * r.powi(m as i32 - 1) * wu * wb;
            let v = w * f(&x)?;
            Ok((v, v.abs(), false))
        });
        let mut terms = Vec::with_capacity(total);
        let mut mass = Vec::with_capacity(total);
        let mut dropped = 0;
        for v in vals {
            let (a, b, d) = v?;
            terms.push(a);
            mass.push(b);
            dropped += d as usize;
        }
        Ok(Sum { value: par::sum(&terms), mass: par::sum(&mass), dropped })
    }

    /// Radial pieces with ε removed next to every singular radius, graded geometrically towards it.
    fn trimmed_intervals(&self, eps: f64) -> Vec<(f64, f64)> {
        let sing = |r: f64| self.singular_radii.iter().any(|s| (s - r).abs() <= 1e-14 * (1.0 + r));
        let mut out = Vec::new();
        for w in self.breaks.windows(2).filter(|w| w[1] > w[0]) {
            let (lo, hi) = (w[0], w[1]);
            let mid = 0.5 * (lo + hi);
            let (sl, sh) = (sing(lo), sing(hi));
            let mut pts = vec![];
            if sl {
                let mut d = eps;
                while lo + d < if sh { mid } else { hi } {
                    pts.push(lo + d);
                    d *= 2.0;
                }
            } else {
                pts.push(lo);
            }
            if sh {
                let mut up = vec![];
                let mut d = eps;
                while hi - d > if sl { mid } else { lo } {
                    up.push(hi - d);
                    d *= 2.0;
                }
                if sl {
                    pts.push(mid);
                }
                up.reverse();
                pts.extend(up);
            } else {
                pts.push(hi);
            }
            out.extend(pts.windows(2).filter(|p| p[1] > p[0]).map(|p| (p[0], p[1])));
        }
        out
    }

    /// Largest exclusion that keeps every trimmed interval at least half its length.
    pub fn max_exclusion(&self) -> f64 {
        let sing = |r: f64| self.singular_radii.iter().any(|s| (s - r).abs() <= 1e-14 * (1.0 + r));
        let mut e = f64::INFINITY;
        for w in self.breaks.windows(2) {
            let len = w[1] - w[0];
            let ends = sing(w[0]) as usize + sing(w[1]) as usize;
            if ends > 0 && len > 0.0 {
                e = e.min(0.25 * len);
            }
        }
        e
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExtrapolationOptions {
    /// Starting exclusion; clipped to the layout's admissible maximum.
    pub eps0: f64,
    pub max_levels: usize,
    pub rel_tol: f64,
    /// Floor relative to the absolute integrand mass.
    pub mass_tol: f64,
    /// Absolute floor for values that vanish.
    pub abs_tol: f64,
    /// Smallest exclusion tried, relative to the outer radius.
    pub min_ratio: f64,
}

impl Default for ExtrapolationOptions {
    fn default() -> Self {
        ExtrapolationOptions { eps0: 0.05, max_levels: 40, rel_tol: 1e-9, mass_tol: 1e-12, abs_tol: 1e-11, min_ratio: 1e-9 }
    }
}

/// Partial sums over the exclusion radii and their Δ² extrapolants.
#[derive(Clone, Debug, Serialize)]
pub struct ExtrapolationTrace {
    pub radii: Vec<f64>,
    pub partial: Vec<f64>,
    pub extrapolants: Vec<f64>,
    pub converged: bool,
    pub value: f64,
    pub mass: f64,
    pub dropped_nodes: usize,
}

fn aitken(x: &[f64]) -> Vec<f64> {
    x.windows(3)
        .map(|w| {
            let d1 = w[1] - w[0];
            let d2 = w[2] - w[1];
            let den = d2 - d1;
            if den.abs() <= 1e-14 * (d1.abs() + d2.abs()) || den == 0.0 {
                w[2]
            } else {
                w[2] - d2 * d2 / den
            }
        })
        .collect()
}

/// Integrate over the layout, shrinking the exclusion at singular radii.
pub fn integrate_excluding<F>(layout: &PolarLayout, f: &F, opts: &ExtrapolationOptions) -> Result<ExtrapolationTrace, FrameError>
where
    F: Fn(&[f64]) -> Result<f64, FrameError> + Sync,
{
    let order = layout.radial_order;
    if layout.singular_radii.is_empty() {
        let nodes: Vec<(f64, f64)> = layout.breaks.windows(2).filter(|w| w[1] > w[0]).flat_map(|w| gauss_on(w[0], w[1], order)).collect();
        let s = layout.integrate_radial(&nodes, f)?;
        return Ok(ExtrapolationTrace {
            radii: vec![],
            partial: vec![s.value],
            extrapolants: vec![s.value],
            converged: true,
            value: s.value,
            mass: s.mass,
            dropped_nodes: s.dropped,
        });
    }
    let eps0 = opts.eps0.min(layout.max_exclusion());
    let nodes: Vec<(f64, f64)> = layout.trimmed_intervals(eps0).into_iter().flat_map(|(a, b)| gauss_on(a, b, order)).collect();
    let s0 = layout.integrate_radial(&nodes, f)?;
    let mut radii = vec![eps0];
    let mut partial = vec![s0.value];
    let mut mass = s0.mass;
    let mut dropped = s0.dropped;
    let mut ext = Vec::new();
    let mut converged = false;
    let mut eps = eps0;
    let rmax = layout.breaks.last().copied().unwrap_or(0.0);
    for _ in 0..opts.max_levels {
        let e2 = 0.5 * eps;
        if e2 < opts.min_ratio * rmax {
            break;
        }
        let mut shell = Vec::new();
        for &s in &layout.singular_radii {
            if s + eps <= rmax {
                shell.extend(gauss_on(s + e2, s + eps, order));
            }
            if s > 0.0 && s - eps >= 0.0 {
                shell.extend(gauss_on(s - eps, s - e2, order));
            }
        }
        let sh = layout.integrate_radial(&shell, f)?;
        mass += sh.mass;
        dropped += sh.dropped;
        partial.push(partial.last().unwrap() + sh.value);
        radii.push(e2);
        eps = e2;
        ext = aitken(&partial);
        if ext.len() >= 3 {
            let k = ext.len();
            let (a, b, c) = (ext[k - 3], ext[k - 2], ext[k - 1]);
            let tol = opts.rel_tol * c.abs() + opts.mass_tol * mass + opts.abs_tol;
            let k = partial.len();
            let raw = (partial[k - 1] - partial[k - 2]).abs() <= tol && (partial[k - 2] - partial[k - 3]).abs() <= tol;
            if raw || ((c - b).abs() <= tol && (b - a).abs() <= tol) {
                converged = true;
                break;
            }
        }
    }
    let value = ext.last().copied().unwrap_or(*partial.last().unwrap());
    Ok(ExtrapolationTrace { radii, partial, extrapolants: ext, converged, value, mass, dropped_nodes: dropped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_areas() {
        for m in 1..6 {
            let s: f64 = sphere_rule(m, 8, 16).iter().map(|(_, w)| w).sum();
            assert!((s - sphere_area(m)).abs() < 1e-12, "m={m}: {s}");
        }
        // second moment ∫ u_1² = area/m
        for m in 2..6 {
            let s: f64 = sphere_rule(m, 8, 16).iter().map(|(u, w)| w * u[m - 1] * u[m - 1]).sum();
            assert!((s - sphere_area(m) / m as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn ball_volume_and_singular_extrapolation() {
        let layout = PolarLayout {
            n: 3,
            center: vec![0.0; 3],
            polar: vec![0, 1, 2],
            breaks: vec![0.0, 1.0],
            singular_radii: vec![0.0],
            directions: sphere_rule(3, 8, 16),
            base: vec![(vec![], 1.0)],
            base_coords: vec![],
            avoid: vec![],
            avoid_radius: 0.0,
            radial_order: 12,
        };
        // ∫_{B} |x|^{-2.5} = 4π ∫ r^{-0.5} dr = 8π
        let f = |x: &[f64]| Ok((x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).powf(-1.25));
        let t = integrate_excluding(&layout, &f, &ExtrapolationOptions::default()).unwrap();
        assert!(t.converged);
        assert!((t.value - 8.0 * PI).abs() < 1e-7 * 8.0 * PI, "{}", t.value);
    }
}
