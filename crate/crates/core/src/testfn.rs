//! Compactly supported C² test functions with plateaus.
//!
//! Profiles use the quintic smoothstep S(u) = 10u³ − 15u⁴ + 6u⁵, which has
//! matching first and second derivatives at both ends.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// φ(s) = 1 for s ≤ inner, 0 for s ≥ outer, quintic blend in between.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub inner: f64,
    pub outer: f64,
}

fn smoothstep(u: f64) -> (f64, f64, f64) {
    if u <= 0.0 {
        (0.0, 0.0, 0.0)
    } else if u >= 1.0 {
        (1.0, 0.0, 0.0)
    } else {
        let u2 = u * u;
        (u2 * u * (10.0 - 15.0 * u + 6.0 * u2), 30.0 * u2 * (1.0 - u) * (1.0 - u), 60.0 * u * (1.0 - u) * (1.0 - 2.0 * u))
    }
}

impl Plateau {
    pub fn new(inner: f64, outer: f64) -> Self {
        assert!(0.0 <= inner && inner < outer, "plateau needs 0 <= inner < outer");
        Plateau { inner, outer }
    }

    /// (φ, φ', φ'') at s ≥ 0.
    pub fn eval(&self, s: f64) -> (f64, f64, f64) {
        let w = self.outer - self.inner;
        let (v, d1, d2) = smoothstep((self.outer - s) / w);
        (v, -d1 / w, d2 / (w * w))
    }

    pub fn value(&self, s: f64) -> f64 {
        self.eval(s).0
    }

    /// ∫_{−∞}^{∞} φ(|s|) ds = inner + outer (the blend integrates to half its width).
    pub fn line_integral(&self) -> f64 {
        self.inner + self.outer
    }
}

/// Factor for a coordinate outside the polar block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseFactor {
    /// φ(|x_q − center|)
    Bump { center: f64, plateau: Plateau },
    /// Identically one over one period [lo, hi) of a periodic coordinate.
    Periodic { lo: f64, hi: f64 },
}

impl BaseFactor {
    fn eval(&self, t: f64) -> (f64, f64, f64) {
        match self {
            BaseFactor::Bump { center, plateau } => {
                let s = t - center;
                let (v, d1, d2) = plateau.eval(s.abs());
                let sg = if s < 0.0 { -1.0 } else { 1.0 };
                (v, d1 * sg, d2)
            }
            BaseFactor::Periodic { .. } => (1.0, 0.0, 0.0),
        }
    }

    pub fn integral(&self) -> f64 {
        match self {
            BaseFactor::Bump { plateau, .. } => plateau.line_integral(),
            BaseFactor::Periodic { lo, hi } => hi - lo,
        }
    }

    /// Breakpoints of the factor's support.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            BaseFactor::Bump { center, plateau } => {
                let mut v = vec![center - plateau.outer];
                if plateau.inner > 0.0 {
                    v.push(center - plateau.inner);
                    v.push(center + plateau.inner);
                } else {
                    v.push(*center);
                }
                v.push(center + plateau.outer);
                v
            }
            BaseFactor::Periodic { lo, hi } => vec![*lo, *hi],
        }
    }
}

/// Angular window for a two-dimensional polar block: φ(|θ − θ₀|) with θ wrapped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngularWindow {
    pub theta0: f64,
    pub plateau: Plateau,
}

fn wrap(a: f64) -> f64 {
    let mut t = (a + PI) % (2.0 * PI);
    if t < 0.0 {
        t += 2.0 * PI;
    }
    t - PI
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    /// value · φ(|x − center|)
    Bump { center: Vec<f64>, plateau: Plateau, value: f64 },
    /// value · φ(| |x_P − c_P| − shell |) · Π_q b_q(x_q) · window(θ)
    ///
    /// `polar` lists the coordinates P of the radial block; the remaining
    /// coordinates carry one base factor each, in increasing order.
    Split {
        center: Vec<f64>,
        polar: Vec<usize>,
        shell: f64,
        radial: Plateau,
        base: Vec<BaseFactor>,
        window: Option<AngularWindow>,
        value: f64,
    },
}

/// f, ∇f and ∇∇f at a point.
#[derive(Clone, Debug)]
pub struct Jet {
    pub f: f64,
    pub grad: Vec<f64>,
    pub hess: DMatrix<f64>,
}

impl TestFunction {
    pub fn bump(center: Vec<f64>, inner: f64, outer: f64) -> Self {
        TestFunction::Bump { center, plateau: Plateau::new(inner, outer), value: 1.0 }
    }

    pub fn dim(&self) -> usize {
        match self {
            TestFunction::Bump { center, .. } | TestFunction::Split { center, .. } => center.len(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut o = self.clone();
        match &mut o {
            TestFunction::Bump { value, .. } | TestFunction::Split { value, .. } => *value *= s,
        }
        o
    }

    pub fn value_scale(&self) -> f64 {
        match self {
            TestFunction::Bump { value, .. } | TestFunction::Split { value, .. } => *value,
        }
    }

    pub fn center(&self) -> &[f64] {
        match self {
            TestFunction::Bump { center, .. } | TestFunction::Split { center, .. } => center,
        }
    }

    /// Coordinates of the polar block.
    pub fn polar_coords(&self) -> Vec<usize> {
        match self {
            TestFunction::Bump { center, .. } => (0..center.len()).collect(),
            TestFunction::Split { polar, .. } => polar.clone(),
        }
    }

    pub fn base_coords(&self) -> Vec<usize> {
        let p = self.polar_coords();
        (0..self.dim()).filter(|i| !p.contains(i)).collect()
    }

    pub fn jet(&self, x: &[f64]) -> Jet {
        let n = x.len();
        match self {
            TestFunction::Bump { center, plateau, value } => {
                let y: Vec<f64> = x.iter().zip(center).map(|(a, b)| a - b).collect();
                let r = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                let (v, d1, d2) = plateau.eval(r);
                let (grad, hess) = radial_derivatives(&y, r, d1, d2, &vec![true; n]);
                Jet { f: value * v, grad: grad.iter().map(|g| g * value).collect(), hess: hess * *value }
            }
            TestFunction::Split { center, polar, shell, radial, base, window, value } => {
                // radial factor in the polar coordinates
                let mut y = vec![0.0; n];
                for &p in polar {
                    y[p] = x[p] - center[p];
                }
                let r = polar.iter().map(|&p| y[p] * y[p]).sum::<f64>().sqrt();
                let s = r - shell;
                let (rv, mut rd1, rd2) = radial.eval(s.abs());
                if s < 0.0 {
                    rd1 = -rd1;
                }
                let mask: Vec<bool> = (0..n).map(|i| polar.contains(&i)).collect();
                let (rg, rh) = radial_derivatives(&y, r, rd1, rd2, &mask);
                let mut factors: Vec<(f64, Vec<f64>, DMatrix<f64>)> = vec![(rv, rg, rh)];
                // base factors
                let bc: Vec<usize> = (0..n).filter(|i| !polar.contains(i)).collect();
                for (q, b) in bc.iter().zip(base) {
                    let (v, d1, d2) = b.eval(x[*q]);
                    let mut g = vec![0.0; n];
                    g[*q] = d1;
                    let mut h = DMatrix::zeros(n, n);
                    h[(*q, *q)] = d2;
                    factors.push((v, g, h));
                }
                if let Some(w) = window {
                    let (i, j) = (polar[0], polar[1]);
                    let (a, b) = (y[i], y[j]);
                    let r2 = a * a + b * b;
                    let th = b.atan2(a);
                    let dth = wrap(th - w.theta0);
                    let (v, mut d1, d2) = w.plateau.eval(dth.abs());
                    if dth < 0.0 {
                        d1 = -d1;
                    }
                    // ∇θ and ∇∇θ
                    let mut tg = vec![0.0; n];
                    tg[i] = -b / r2;
                    tg[j] = a / r2;
                    let mut th2 = DMatrix::zeros(n, n);
                    let r4 = r2 * r2;
                    th2[(i, i)] = 2.0 * a * b / r4;
                    th2[(j, j)] = -2.0 * a * b / r4;
                    th2[(i, j)] = (b * b - a * a) / r4;
                    th2[(j, i)] = th2[(i, j)];
                    let g: Vec<f64> = tg.iter().map(|t| d1 * t).collect();
                    let mut h = th2 * d1;
                    for p in 0..n {
                        for q in 0..n {
                            h[(p, q)] += d2 * tg[p] * tg[q];
                        }
                    }
                    factors.push((v, g, h));
                }
                product_jet(&factors, n, *value)
            }
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.jet(x).f
    }

    /// Whether x is inside the closed support.
    pub fn in_support(&self, x: &[f64]) -> bool {
        self.value(x) != 0.0 || self.jet(x).grad.iter().any(|g| *g != 0.0)
    }
}

fn radial_derivatives(y: &[f64], r: f64, d1: f64, d2: f64, polar: &[bool]) -> (Vec<f64>, DMatrix<f64>) {
    let n = y.len();
    if r == 0.0 {
        // the plateau makes every profile flat at the origin
        return (vec![0.0; n], DMatrix::zeros(n, n));
    }
    let u: Vec<f64> = y.iter().map(|v| v / r).collect();
    let grad = u.iter().map(|v| d1 * v).collect();
    let hess = DMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j && polar[i] { 1.0 } else { 0.0 };
        let proj = delta - u[i] * u[j];
        d2 * u[i] * u[j] + d1 * proj / r
    });
    (grad, hess)
}

fn product_jet(factors: &[(f64, Vec<f64>, DMatrix<f64>)], n: usize, scale: f64) -> Jet {
    let mut f = scale;
    let mut grad = vec![0.0; n];
    let mut hess = DMatrix::zeros(n, n);
    for (i, (v, g, h)) in factors.iter().enumerate() {
        let others: f64 = factors.iter().enumerate().filter(|(k, _)| *k != i).map(|(_, t)| t.0).product();
        for p in 0..n {
            grad[p] += scale * others * g[p];
        }
        hess += h * (scale * others);
        for (k, (_, g2, _)) in factors.iter().enumerate() {
            if k == i {
                continue;
            }
            let rest: f64 = factors.iter().enumerate().filter(|(m, _)| *m != i && *m != k).map(|(_, t)| t.0).product();
            for p in 0..n {
                for q in 0..n {
                    hess[(p, q)] += scale * rest * g[p] * g2[q];
                }
            }
        }
        f *= v;
    }
    Jet { f, grad, hess }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(t: &TestFunction, x: &[f64]) {
        let h = 1e-5;
        let j = t.jet(x);
        for mu in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[mu] += h;
            xm[mu] -= h;
            let jp = t.jet(&xp);
            let jm = t.jet(&xm);
            let gd = (jp.f - jm.f) / (2.0 * h);
            assert!((gd - j.grad[mu]).abs() < 1e-6, "grad {mu}: {gd} vs {}", j.grad[mu]);
            for nu in 0..x.len() {
                let hd = (jp.grad[nu] - jm.grad[nu]) / (2.0 * h);
                assert!((hd - j.hess[(mu, nu)]).abs() < 1e-5, "hess {mu}{nu}: {hd} vs {}", j.hess[(mu, nu)]);
            }
        }
    }

    #[test]
    fn plateau_profile() {
        let p = Plateau::new(0.2, 0.5);
        assert_eq!(p.value(0.1), 1.0);
        assert_eq!(p.value(0.6), 0.0);
        assert!((p.value(0.35) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn jets_match_differences() {
        let b = TestFunction::bump(vec![0.1, -0.2, 0.3], 0.2, 0.6);
        fd_check(&b, &[0.3, 0.1, 0.2]);
        let s = TestFunction::Split {
            center: vec![0.0, 0.0, 0.0],
            polar: vec![1, 2],
            shell: 0.5,
            radial: Plateau::new(0.1, 0.3),
            base: vec![BaseFactor::Bump { center: 0.0, plateau: Plateau::new(0.3, 0.8) }],
            window: Some(AngularWindow { theta0: 0.4, plateau: Plateau::new(0.2, 0.7) }),
            value: 2.0,
        };
        fd_check(&s, &[0.5, 0.55, 0.35]);
        fd_check(&s, &[-0.45, 0.62, 0.1]);
    }

    #[test]
    fn base_integral() {
        let b = BaseFactor::Bump { center: 0.3, plateau: Plateau::new(0.5, 1.0) };
        let n = 20000;
        let h = 4.0 / n as f64;
        let s: f64 = (0..n).map(|i| b.eval(-1.7 + (i as f64 + 0.5) * h).0 * h).sum();
        assert!((s - b.integral()).abs() < 1e-6);
    }
}
