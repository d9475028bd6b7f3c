//! Exact Clifford matrices and mechanical checks of the commutator identities.
//!
//! Matrices carry complex rational entries so that every check below is a
//! bit-exact comparison. A floating copy is kept for cross-checks and for the
//! contraction identity, which involves random real coefficients.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::{Complex, Complex64};
use num_rational::Rational64;
use num_traits::{One, Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::par;

pub type Q = Rational64;
pub type Cq = Complex<Q>;

#[derive(Debug, Error, PartialEq)]
pub enum CliffordError {
    #[error("dimension {0} outside 2..=8")]
    DimensionOutOfRange(usize),
    #[error("index {index} outside 1..={n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("connection array has length {got}, expected {expected}")]
    BadShape { got: usize, expected: usize },
    #[error("omega not antisymmetric in its first two indices (defect {0:e})")]
    NotAntisymmetric(f64),
}

fn q(v: i64) -> Q {
    Q::from_integer(v)
}

fn cq(re: i64, im: i64) -> Cq {
    Complex::new(q(re), q(im))
}

/// Square matrix with exact complex rational entries, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ExactMatrix {
    dim: usize,
    data: Vec<Cq>,
}

impl ExactMatrix {
    pub fn zeros(dim: usize) -> Self {
        ExactMatrix { dim, data: vec![Cq::zero(); dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = Cq::one();
        }
        m
    }

    pub fn from_rows(rows: &[&[Cq]]) -> Self {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for r in rows {
            assert_eq!(r.len(), dim);
            data.extend_from_slice(r);
        }
        ExactMatrix { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> Cq {
        self.data[i * self.dim + j]
    }

    pub fn entries(&self) -> &[Cq] {
        &self.data
    }

    pub fn mul(&self, o: &ExactMatrix) -> ExactMatrix {
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a.is_zero() {
                    continue;
                }
                for j in 0..n {
                    let b = o.data[k * n + j];
                    if !b.is_zero() {
                        out.data[i * n + j] += a * b;
                    }
                }
            }
        }
        out
    }

    pub fn add(&self, o: &ExactMatrix) -> ExactMatrix {
        let mut out = self.clone();
        out.add_scaled(o, Cq::one());
        out
    }

    pub fn sub(&self, o: &ExactMatrix) -> ExactMatrix {
        let mut out = self.clone();
        out.add_scaled(o, -Cq::one());
        out
    }

    /// `self += s * o`
    pub fn add_scaled(&mut self, o: &ExactMatrix, s: Cq) {
        if s.is_zero() {
            return;
        }
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            if !b.is_zero() {
                *a += *b * s;
            }
        }
    }

    pub fn scale(&self, s: Cq) -> ExactMatrix {
        ExactMatrix { dim: self.dim, data: self.data.iter().map(|v| *v * s).collect() }
    }

    pub fn adjoint(&self) -> ExactMatrix {
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.data[j * n + i] = self.data[i * n + j].conj();
            }
        }
        out
    }

    pub fn commutator(&self, o: &ExactMatrix) -> ExactMatrix {
        self.mul(o).sub(&o.mul(self))
    }

    pub fn kron(&self, o: &ExactMatrix) -> ExactMatrix {
        let (n, m) = (self.dim, o.dim);
        let d = n * m;
        let mut out = Self::zeros(d);
        for i in 0..n {
            for j in 0..n {
                let a = self.data[i * n + j];
                if a.is_zero() {
                    continue;
                }
                for k in 0..m {
                    for l in 0..m {
                        out.data[(i * m + k) * d + j * m + l] = a * o.data[k * m + l];
                    }
                }
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| v.is_zero())
    }

    /// Largest `max(|re|, |im|)` over the entries.
    pub fn max_abs(&self) -> Q {
        self.data
            .iter()
            .map(|v| std::cmp::max(v.re.abs(), v.im.abs()))
            .max()
            .unwrap_or_else(Q::zero)
    }

    pub fn to_f64(&self) -> DMatrix<Complex64> {
        let n = self.dim;
        DMatrix::from_fn(n, n, |i, j| {
            let v = self.data[i * n + j];
            Complex64::new(ratio_f64(v.re), ratio_f64(v.im))
        })
    }
}

fn ratio_f64(r: Q) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn sigma(k: usize) -> ExactMatrix {
    let z = cq(0, 0);
    match k {
        1 => ExactMatrix::from_rows(&[&[z, cq(1, 0)], &[cq(1, 0), z]]),
        2 => ExactMatrix::from_rows(&[&[z, cq(0, -1)], &[cq(0, 1), z]]),
        3 => ExactMatrix::from_rows(&[&[cq(1, 0), z], &[z, cq(-1, 0)]]),
        _ => unreachable!(),
    }
}

/// The Pauli matrices σ₁, σ₂, σ₃.
pub fn pauli() -> [ExactMatrix; 3] {
    [sigma(1), sigma(2), sigma(3)]
}

#[derive(Clone, Debug)]
pub struct GammaSet {
    pub n: usize,
    pub dim_rep: usize,
    pub gammas: Vec<ExactMatrix>,
}

impl GammaSet {
    /// Gamma with a 1-based index.
    pub fn gamma(&self, i: usize) -> &ExactMatrix {
        &self.gammas[i - 1]
    }

    pub fn to_f64(&self) -> Vec<DMatrix<Complex64>> {
        self.gammas.iter().map(|g| g.to_f64()).collect()
    }

    /// Largest entry of γ^iγ^j + γ^jγ^i − 2δ^{ij}.
    pub fn anticommutator_residual(&self) -> Q {
        let id = ExactMatrix::identity(self.dim_rep);
        let mut worst = Q::zero();
        for i in 0..self.n {
            for j in 0..self.n {
                let mut m = self.gammas[i].mul(&self.gammas[j]).add(&self.gammas[j].mul(&self.gammas[i]));
                if i == j {
                    m.add_scaled(&id, cq(-2, 0));
                }
                worst = worst.max(m.max_abs());
            }
        }
        worst
    }

    pub fn hermiticity_residual(&self) -> Q {
        self.gammas
            .iter()
            .map(|g| g.sub(&g.adjoint()).max_abs())
            .max()
            .unwrap_or_else(Q::zero)
    }
}

fn build_even(n: usize) -> Vec<ExactMatrix> {
    let [s1, s2, s3] = pauli();
    if n == 2 {
        return vec![s1, s2];
    }
    let prev = build_even(n - 2);
    let id = ExactMatrix::identity(prev[0].dim());
    let mut out: Vec<ExactMatrix> = prev.iter().map(|g| g.kron(&s1)).collect();
    out.push(id.kron(&s2));
    out.push(id.kron(&s3));
    out
}

pub fn build_gamma(n: usize) -> Result<GammaSet, CliffordError> {
    if !(2..=8).contains(&n) {
        return Err(CliffordError::DimensionOutOfRange(n));
    }
    let mut gammas = build_even(n - n % 2);
    if n % 2 == 1 {
        // chirality element of the even algebra below
        let m = n - 1;
        let mut prod = ExactMatrix::identity(gammas[0].dim());
        for g in &gammas {
            prod = prod.mul(g);
        }
        let k = (m / 2) % 4;
        let phase = [cq(1, 0), cq(0, -1), cq(-1, 0), cq(0, 1)][k];
        gammas.push(prod.scale(phase));
    }
    let dim_rep = gammas[0].dim();
    Ok(GammaSet { n, dim_rep, gammas })
}

#[derive(Clone, Debug)]
pub struct AntisymProduct {
    pub indices: Vec<usize>,
    pub matrix: ExactMatrix,
}

fn permutations(p: usize) -> Vec<(Vec<usize>, i64)> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; p], &mut out);
    out.into_iter()
        .map(|perm| {
            let s = permutation_sign(&perm);
            (perm, s)
        })
        .collect()
}

/// Sign of a permutation given as a list of distinct values.
pub fn permutation_sign(perm: &[usize]) -> i64 {
    let mut inv = 0;
    for i in 0..perm.len() {
        for j in i + 1..perm.len() {
            if perm[i] > perm[j] {
                inv += 1;
            }
        }
    }
    if inv % 2 == 0 {
        1
    } else {
        -1
    }
}

/// Alt-normalized product by brute force over all p! orderings (1-based indices).
pub fn antisym_product(g: &GammaSet, idx: &[usize]) -> Result<AntisymProduct, CliffordError> {
    for &i in idx {
        if i == 0 || i > g.n {
            return Err(CliffordError::IndexOutOfRange { index: i, n: g.n });
        }
    }
    let p = idx.len();
    let mut acc = ExactMatrix::zeros(g.dim_rep);
    let mut fact = 1i64;
    for k in 2..=p as i64 {
        fact *= k;
    }
    for (perm, s) in permutations(p) {
        let mut m = ExactMatrix::identity(g.dim_rep);
        for &k in &perm {
            m = m.mul(g.gamma(idx[k]));
        }
        acc.add_scaled(&m, cq(s, 0));
    }
    let matrix = acc.scale(Complex::new(Q::new(1, fact), Q::zero()));
    Ok(AntisymProduct { indices: idx.to_vec(), matrix })
}

/// Cache of γ^{[i₁…i_k]} keyed by the sorted index set (0-based).
///
/// For distinct indices the antisymmetrized product equals the plain ordered
/// product, so the cache stores products over increasing index sets and a
/// permutation sign.
pub struct AltTable {
    gammas: Vec<ExactMatrix>,
    dim: usize,
    cache: HashMap<Vec<usize>, ExactMatrix>,
}

impl AltTable {
    pub fn new(g: &GammaSet) -> Self {
        let mut t = AltTable { gammas: g.gammas.clone(), dim: g.dim_rep, cache: HashMap::new() };
        // eager fill of every subset so lookups need no mutation
        let n = g.n;
        for mask in 0u32..(1 << n) {
            let set: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let mut m = ExactMatrix::identity(t.dim);
            for &i in &set {
                m = m.mul(&t.gammas[i]);
            }
            t.cache.insert(set, m);
        }
        t
    }

    /// Sign and matrix for γ^{[idx]}, or None when an index repeats.
    pub fn get(&self, idx: &[usize]) -> Option<(i64, &ExactMatrix)> {
        let mut sorted = idx.to_vec();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return None;
        }
        let s = permutation_sign(idx);
        Some((s, &self.cache[&sorted]))
    }

    /// `acc += coef * γ^{[idx]}`
    pub fn accumulate(&self, acc: &mut ExactMatrix, coef: i64, idx: &[usize]) {
        if coef == 0 {
            return;
        }
        if let Some((s, m)) = self.get(idx) {
            acc.add_scaled(m, cq(coef * s, 0));
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

fn d(a: usize, b: usize) -> i64 {
    (a == b) as i64
}

/// How tuples are enumerated by the identity checks.
#[derive(Clone, Copy, Debug, Serialize)]
pub enum TupleMode {
    Exhaustive,
    Sampled { count: usize, seed: u64 },
}

impl TupleMode {
    /// Exhaustive up to n = 4, sampled above with the given seed.
    pub fn default_for(n: usize, seed: u64) -> Self {
        if n <= 4 {
            TupleMode::Exhaustive
        } else {
            TupleMode::Sampled { count: 4000, seed }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    pub mode: TupleMode,
    /// Sign applied to the 𝒢₀ group; −1 is the deliberately broken self-test.
    pub g0_sign: i64,
}

impl VerifyOptions {
    pub fn for_dim(n: usize, seed: u64) -> Self {
        VerifyOptions { mode: TupleMode::default_for(n, seed), g0_sign: 1 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentityReport {
    pub identity: String,
    pub n: usize,
    pub tuples_checked: usize,
    pub exhaustive: bool,
    /// Largest exact residual entry (as a float for reporting).
    pub residual: f64,
    pub exact_zero: bool,
    /// Same comparison redone in floating point.
    pub float_residual: f64,
    /// First failing tuple (1-based) and the term group it is attributed to.
    pub offending_tuple: Option<Vec<usize>>,
    pub offending_term: Option<String>,
}

impl IdentityReport {
    pub fn passed(&self) -> bool {
        self.exact_zero && self.float_residual <= 1e-13
    }
}

fn tuples(n: usize, k: usize, mode: TupleMode) -> (Vec<Vec<usize>>, bool) {
    match mode {
        TupleMode::Exhaustive => {
            let total = n.pow(k as u32);
            let v = (0..total)
                .map(|mut t| {
                    let mut idx = vec![0; k];
                    for slot in idx.iter_mut().rev() {
                        *slot = t % n;
                        t /= n;
                    }
                    idx
                })
                .collect();
            (v, true)
        }
        TupleMode::Sampled { count, seed } => {
            let total = n.pow(k as u32);
            if count >= total {
                return tuples(n, k, TupleMode::Exhaustive);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = (0..count).map(|_| (0..k).map(|_| rng.random_range(0..n)).collect()).collect();
            (v, false)
        }
    }
}

struct TupleOutcome {
    residual: Q,
    float_residual: f64,
    term: Option<String>,
}

fn max_abs_f64(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

fn run_check<F>(name: &str, g: &GammaSet, k: usize, mode: TupleMode, f: F) -> IdentityReport
where
    F: Fn(&[usize]) -> TupleOutcome + Sync + Send,
{
    let (ts, exhaustive) = tuples(g.n, k, mode);
    let outcomes = par::map(&ts, |t| f(t));
    let mut worst = Q::zero();
    let mut fworst = 0.0f64;
    let mut offending = None;
    for (t, o) in ts.iter().zip(&outcomes) {
        if o.residual > worst {
            worst = o.residual;
        }
        fworst = fworst.max(o.float_residual);
        if offending.is_none() && !o.residual.is_zero() {
            offending = Some((t.iter().map(|i| i + 1).collect::<Vec<_>>(), o.term.clone()));
        }
    }
    let (offending_tuple, offending_term) = match offending {
        Some((t, term)) => (Some(t), Some(term.unwrap_or_else(|| "unattributed".into()))),
        None => (None, None),
    };
    IdentityReport {
        identity: name.into(),
        n: g.n,
        tuples_checked: ts.len(),
        exhaustive,
        residual: ratio_f64(worst),
        exact_zero: worst.is_zero(),
        float_residual: fworst,
        offending_tuple,
        offending_term,
    }
}

struct Prepared {
    alt: AltTable,
    comm: Vec<ExactMatrix>,
    comm_f: Vec<DMatrix<Complex64>>,
    id: ExactMatrix,
    n: usize,
}

impl Prepared {
    fn new(g: &GammaSet) -> Self {
        let n = g.n;
        let mut comm = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                comm.push(g.gammas[a].commutator(&g.gammas[b]));
            }
        }
        let comm_f = comm.iter().map(|m| m.to_f64()).collect();
        Prepared { alt: AltTable::new(g), comm, comm_f, id: ExactMatrix::identity(g.dim_rep), n }
    }
    fn c(&self, a: usize, b: usize) -> &ExactMatrix {
        &self.comm[a * self.n + b]
    }
}

/// `[γ^c,γ^d][γ^e,γ^f] = 4γ^{[cdef]} + 4(δ^{de}γ^{[cf]} − δ^{df}γ^{[ce]} − δ^{ce}γ^{[df]} + δ^{cf}γ^{[de]}) − 4(δ^{ce}δ^{fd} − δ^{cf}δ^{ed})`
pub fn verify_commutator_product(g: &GammaSet, opts: VerifyOptions) -> IdentityReport {
    let p = Prepared::new(g);
    run_check("commutator-pair", g, 4, opts.mode, |t| {
        let (c, dd, e, f) = (t[0], t[1], t[2], t[3]);
        let lhs = p.c(c, dd).mul(p.c(e, f));
        let mut rhs = ExactMatrix::zeros(p.alt.dim());
        p.alt.accumulate(&mut rhs, 4, &[c, dd, e, f]);
        p.alt.accumulate(&mut rhs, 4 * d(dd, e), &[c, f]);
        p.alt.accumulate(&mut rhs, -4 * d(dd, f), &[c, e]);
        p.alt.accumulate(&mut rhs, -4 * d(c, e), &[dd, f]);
        p.alt.accumulate(&mut rhs, 4 * d(c, f), &[dd, e]);
        rhs.add_scaled(&p.id, cq(-4 * (d(c, e) * d(f, dd) - d(c, f) * d(e, dd)), 0));
        let r = lhs.sub(&rhs);
        let fr = max_abs_f64(&(&p.comm_f[c * p.n + dd] * &p.comm_f[e * p.n + f] - rhs.to_f64()));
        TupleOutcome { residual: r.max_abs(), float_residual: fr, term: None }
    })
}

/// The four 𝒢 groups of the triple-commutator expansion for one 0-based tuple.
pub fn g_groups(alt: &AltTable, t: &[usize]) -> [ExactMatrix; 4] {
    let (a, b, c, dd, e, f) = (t[0], t[1], t[2], t[3], t[4], t[5]);
    let dim = alt.dim();
    let mut g6 = ExactMatrix::zeros(dim);
    alt.accumulate(&mut g6, 1, &[a, b, c, dd, e, f]);

    let mut g4 = ExactMatrix::zeros(dim);
    let terms4: [(i64, [usize; 4]); 12] = [
        (d(b, c), [a, dd, e, f]),
        (-d(b, dd), [a, c, e, f]),
        (-d(a, c), [b, dd, e, f]),
        (d(a, dd), [b, c, e, f]),
        (d(dd, e), [c, f, a, b]),
        (-d(dd, f), [c, e, a, b]),
        (-d(c, e), [dd, f, a, b]),
        (d(c, f), [dd, e, a, b]),
        (d(a, f), [b, e, c, dd]),
        (-d(b, f), [a, e, c, dd]),
        (-d(a, e), [b, f, c, dd]),
        (d(b, e), [a, f, c, dd]),
    ];
    for (k, idx) in terms4 {
        alt.accumulate(&mut g4, k, &idx);
    }

    let mut g2 = ExactMatrix::zeros(dim);
    let terms2: [(i64, [usize; 2]); 15] = [
        (d(e, dd) * d(f, a) - d(e, a) * d(f, dd), [b, c]),
        (d(e, a) * d(f, c) - d(e, c) * d(f, a), [b, dd]),
        (d(e, b) * d(f, dd) - d(e, dd) * d(f, b), [a, c]),
        (d(e, c) * d(f, b) - d(e, b) * d(f, c), [a, dd]),
        (d(e, dd) * d(f, c) - d(e, c) * d(f, dd), [a, b]),
        (d(e, b) * d(f, a) - d(e, a) * d(f, b), [c, dd]),
        (d(b, c) * d(dd, e) - d(b, dd) * d(c, e), [a, f]),
        (-d(b, c) * d(dd, f) + d(b, dd) * d(c, f), [a, e]),
        (d(a, c) * d(dd, f) - d(a, dd) * d(c, f), [b, e]),
        (-d(a, c) * d(dd, e) + d(a, dd) * d(c, e), [b, f]),
        (d(b, c) * d(a, f) - d(a, c) * d(b, f), [dd, e]),
        (-d(b, c) * d(a, e) + d(a, c) * d(b, e), [dd, f]),
        (-d(b, dd) * d(a, f) + d(a, dd) * d(b, f), [c, e]),
        (d(b, dd) * d(a, e) - d(a, dd) * d(b, e), [c, f]),
        (-d(a, c) * d(b, dd) + d(a, dd) * d(b, c), [e, f]),
    ];
    for (k, idx) in terms2 {
        alt.accumulate(&mut g2, k, &idx);
    }

    let g0c = -d(b, c) * d(a, e) * d(dd, f) + d(b, c) * d(a, f) * d(dd, e) + d(b, dd) * d(a, e) * d(c, f)
        - d(b, dd) * d(a, f) * d(c, e)
        + d(a, c) * d(b, e) * d(dd, f)
        - d(a, c) * d(b, f) * d(dd, e)
        - d(a, dd) * d(b, e) * d(c, f)
        + d(a, dd) * d(b, f) * d(c, e);
    let g0 = ExactMatrix::identity(dim).scale(cq(g0c, 0));
    [g6, g4, g2, g0]
}

/// `[γ^a,γ^b][γ^c,γ^d][γ^e,γ^f] = 8(𝒢₆+𝒢₄+𝒢₂+𝒢₀)`, each group assembled term by term.
pub fn verify_triple_commutator(g: &GammaSet, opts: VerifyOptions) -> IdentityReport {
    let p = Prepared::new(g);
    let n = p.n;
    let mut pairs = Vec::with_capacity(n.pow(4));
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for dd in 0..n {
                    pairs.push(p.c(a, b).mul(p.c(c, dd)));
                }
            }
        }
    }
    let names = ["G6", "G4", "G2", "G0"];
    run_check("triple-commutator", g, 6, opts.mode, |t| {
        let lhs = pairs[((t[0] * n + t[1]) * n + t[2]) * n + t[3]].mul(p.c(t[4], t[5]));
        let groups = g_groups(&p.alt, t);
        let mut rhs = ExactMatrix::zeros(p.alt.dim());
        for (k, gm) in groups.iter().enumerate() {
            let s = if k == 3 { 8 * opts.g0_sign } else { 8 };
            rhs.add_scaled(gm, cq(s, 0));
        }
        let r = lhs.sub(&rhs);
        let term = if r.is_zero() {
            None
        } else {
            // a single group entering with the wrong sign leaves exactly ±16 of it behind
            groups.iter().enumerate().find_map(|(k, gm)| {
                let hit = !gm.is_zero() && (r == gm.scale(cq(16, 0)) || r == gm.scale(cq(-16, 0)));
                hit.then(|| names[k].to_string())
            })
        };
        let lhs_f = &p.comm_f[t[0] * n + t[1]] * &p.comm_f[t[2] * n + t[3]] * &p.comm_f[t[4] * n + t[5]];
        let fr = max_abs_f64(&(lhs_f - rhs.to_f64()));
        TupleOutcome { residual: r.max_abs(), float_residual: fr, term }
    })
}

/// `γ^i[γ^j,γ^k] = 2(γ^{[ijk]} + δ^{ij}γ^k − δ^{ik}γ^j)`
pub fn verify_gamma_commutator(g: &GammaSet, opts: VerifyOptions) -> IdentityReport {
    let p = Prepared::new(g);
    let gf = g.to_f64();
    run_check("gamma-commutator", g, 3, opts.mode, |t| {
        let (i, j, k) = (t[0], t[1], t[2]);
        let lhs = g.gammas[i].mul(p.c(j, k));
        let mut rhs = ExactMatrix::zeros(p.alt.dim());
        p.alt.accumulate(&mut rhs, 2, &[i, j, k]);
        p.alt.accumulate(&mut rhs, 2 * d(i, j), &[k]);
        p.alt.accumulate(&mut rhs, -2 * d(i, k), &[j]);
        let r = lhs.sub(&rhs);
        let fr = max_abs_f64(&(&gf[i] * &p.comm_f[j * p.n + k] - rhs.to_f64()));
        TupleOutcome { residual: r.max_abs(), float_residual: fr, term: None }
    })
}

/// Connection coefficients ω_{abc} stored as `w[(a*n + b)*n + c]`, 0-based.
#[derive(Clone, Debug)]
pub struct Omega3 {
    pub n: usize,
    pub w: Vec<f64>,
}

impl Omega3 {
    pub fn new(n: usize, w: Vec<f64>) -> Result<Self, CliffordError> {
        if w.len() != n * n * n {
            return Err(CliffordError::BadShape { got: w.len(), expected: n * n * n });
        }
        Ok(Omega3 { n, w })
    }

    pub fn zeros(n: usize) -> Self {
        Omega3 { n, w: vec![0.0; n * n * n] }
    }

    /// Random coefficients antisymmetric in the first pair.
    pub fn random<R: Rng>(n: usize, rng: &mut R) -> Self {
        let mut o = Self::zeros(n);
        for a in 0..n {
            for b in a + 1..n {
                for c in 0..n {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    o.set(a, b, c, v);
                    o.set(b, a, c, -v);
                }
            }
        }
        o
    }

    pub fn at(&self, a: usize, b: usize, c: usize) -> f64 {
        self.w[(a * self.n + b) * self.n + c]
    }

    pub fn set(&mut self, a: usize, b: usize, c: usize, v: f64) {
        let n = self.n;
        self.w[(a * n + b) * n + c] = v;
    }

    pub fn antisymmetry_defect(&self) -> f64 {
        let n = self.n;
        let mut m = 0.0f64;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    m = m.max((self.at(a, b, c) + self.at(b, a, c)).abs());
                }
            }
        }
        m
    }

    /// X_{mnpq} = ω_{mrr}ω_{pqn} − ω_{pqr}ω_{rnm} + ω_{mrp}ω_{rnq}
    pub fn four_form_seed(&self, m: usize, nn: usize, p: usize, q: usize) -> f64 {
        let mut s = 0.0;
        for r in 0..self.n {
            s += self.at(m, r, r) * self.at(p, q, nn) - self.at(p, q, r) * self.at(r, nn, m)
                + self.at(m, r, p) * self.at(r, nn, q);
        }
        s
    }

    /// The seed with the first factor read as ω_{rmm}.
    pub fn four_form_seed_literal(&self, m: usize, nn: usize, p: usize, q: usize) -> f64 {
        let mut s = 0.0;
        for r in 0..self.n {
            s += self.at(r, m, m) * self.at(p, q, nn) - self.at(p, q, r) * self.at(r, nn, m)
                + self.at(m, r, p) * self.at(r, nn, q);
        }
        s
    }

    /// ω_{abc}ω_{acb} − ω_{arr}ω_{ass}
    pub fn scalar_part(&self) -> f64 {
        let n = self.n;
        let mut s1 = 0.0;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    s1 += self.at(a, b, c) * self.at(a, c, b);
                }
            }
        }
        let mut s2 = 0.0;
        for a in 0..n {
            let tr: f64 = (0..n).map(|r| self.at(a, r, r)).sum();
            s2 += tr * tr;
        }
        s1 - s2
    }
}

/// Alt over four slots of a 4-tensor given as a closure, with 1/4! normalization.
pub fn alt4<F: Fn(usize, usize, usize, usize) -> f64>(x: F, idx: [usize; 4]) -> f64 {
    let mut s = 0.0;
    for (perm, sg) in permutations(4) {
        s += sg as f64 * x(idx[perm[0]], idx[perm[1]], idx[perm[2]], idx[perm[3]]);
    }
    s / 24.0
}

/// How the four-form term of the contraction identity is summed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FourFormReading {
    /// Coefficient 768 over increasing index sets m<n<p<q, seed starting with ω_{mrr}.
    IncreasingSets,
    /// Coefficient 768 under full summation, seed starting with ω_{rmm}.
    LiteralFullSum,
}

#[derive(Clone, Debug, Serialize)]
pub struct ContractionReport {
    pub n: usize,
    pub lhs_scale: f64,
    pub abs_residual: f64,
    pub rel_residual: f64,
    pub scalar_lhs: f64,
    pub scalar_rhs: f64,
}

fn fmat_zero(d: usize) -> DMatrix<Complex64> {
    DMatrix::from_element(d, d, Complex64::new(0.0, 0.0))
}

/// Left side Σ ω_{abc}ω_{efd}[γ^a,γ^b][γ^c,γ^d][γ^e,γ^f].
pub fn contraction_lhs(g: &GammaSet, w: &Omega3) -> DMatrix<Complex64> {
    let n = g.n;
    let gf = g.to_f64();
    let dim = g.dim_rep;
    let comm = |a: usize, b: usize| &gf[a] * &gf[b] - &gf[b] * &gf[a];
    // A_c = Σ_{ab} ω_{abc}[γ^a,γ^b]
    let a_c: Vec<DMatrix<Complex64>> = (0..n)
        .map(|c| {
            let mut m = fmat_zero(dim);
            for a in 0..n {
                for b in 0..n {
                    let v = w.at(a, b, c);
                    if v != 0.0 {
                        m += comm(a, b) * Complex64::new(v, 0.0);
                    }
                }
            }
            m
        })
        .collect();
    let mut lhs = fmat_zero(dim);
    for c in 0..n {
        for dd in 0..n {
            lhs += &a_c[c] * comm(c, dd) * &a_c[dd];
        }
    }
    lhs
}

/// Right side: four-form term plus 32(ω_{abc}ω_{acb} − ω_{arr}ω_{ass}).
pub fn contraction_rhs(g: &GammaSet, w: &Omega3, reading: FourFormReading) -> DMatrix<Complex64> {
    let n = g.n;
    let alt = AltTable::new(g);
    let dim = g.dim_rep;
    let mut rhs = DMatrix::<Complex64>::identity(dim, dim) * Complex64::new(32.0 * w.scalar_part(), 0.0);
    match reading {
        FourFormReading::IncreasingSets => {
            for m in 0..n {
                for nn in m + 1..n {
                    for p in nn + 1..n {
                        for q in p + 1..n {
                            let coef = 768.0 * alt4(|a, b, c, d| w.four_form_seed(a, b, c, d), [m, nn, p, q]);
                            let (s, mat) = alt.get(&[m, nn, p, q]).unwrap();
                            rhs += mat.to_f64() * Complex64::new(coef * s as f64, 0.0);
                        }
                    }
                }
            }
        }
        FourFormReading::LiteralFullSum => {
            for m in 0..n {
                for nn in 0..n {
                    for p in 0..n {
                        for q in 0..n {
                            if let Some((s, mat)) = alt.get(&[m, nn, p, q]) {
                                let coef =
                                    768.0 * alt4(|a, b, c, d| w.four_form_seed_literal(a, b, c, d), [m, nn, p, q]);
                                rhs += mat.to_f64() * Complex64::new(coef * s as f64, 0.0);
                            }
                        }
                    }
                }
            }
        }
    }
    rhs
}

pub fn verify_omega_contraction_with(
    g: &GammaSet,
    w: &Omega3,
    reading: FourFormReading,
) -> Result<ContractionReport, CliffordError> {
    if w.n != g.n {
        return Err(CliffordError::BadShape { got: w.w.len(), expected: g.n.pow(3) });
    }
    let defect = w.antisymmetry_defect();
    if defect > 1e-12 {
        return Err(CliffordError::NotAntisymmetric(defect));
    }
    let lhs = contraction_lhs(g, w);
    let rhs = contraction_rhs(g, w, reading);
    let scale = max_abs_f64(&lhs);
    let abs = max_abs_f64(&(&lhs - &rhs));
    let dim = g.dim_rep as f64;
    let scalar_lhs = lhs.trace().re / dim;
    Ok(ContractionReport {
        n: g.n,
        lhs_scale: scale,
        abs_residual: abs,
        rel_residual: if scale > 0.0 { abs / scale } else { abs },
        scalar_lhs,
        scalar_rhs: 32.0 * w.scalar_part(),
    })
}

/// Contraction identity with the increasing-index reading of the four-form term.
pub fn verify_omega_contraction(g: &GammaSet, w: &Omega3) -> Result<ContractionReport, CliffordError> {
    verify_omega_contraction_with(g, w, FourFormReading::IncreasingSets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pauli_base() {
        let g = build_gamma(2).unwrap();
        assert_eq!(g.gammas, vec![sigma(1), sigma(2)]);
        let g3 = build_gamma(3).unwrap();
        assert_eq!(g3.gammas, pauli().to_vec());
    }

    #[test]
    fn all_dims_exact() {
        for n in 2..=8 {
            let g = build_gamma(n).unwrap();
            assert_eq!(g.dim_rep, 1 << (n / 2));
            assert!(g.anticommutator_residual().is_zero(), "n={n}");
            assert!(g.hermiticity_residual().is_zero(), "n={n}");
        }
        assert_eq!(build_gamma(1).unwrap_err(), CliffordError::DimensionOutOfRange(1));
        assert!(build_gamma(9).is_err());
    }

    #[test]
    fn antisym_basics() {
        let g = build_gamma(4).unwrap();
        assert!(antisym_product(&g, &[1, 1]).unwrap().matrix.is_zero());
        let a12 = antisym_product(&g, &[1, 2]).unwrap().matrix;
        let expect = g.gamma(1).commutator(g.gamma(2)).scale(Complex::new(Q::new(1, 2), Q::zero()));
        assert_eq!(a12, expect);
        let a = antisym_product(&g, &[1, 2, 3, 4]).unwrap().matrix;
        let prod = g.gamma(1).mul(g.gamma(2)).mul(g.gamma(3)).mul(g.gamma(4));
        assert_eq!(a, prod);
        assert!(matches!(antisym_product(&g, &[0]), Err(CliffordError::IndexOutOfRange { .. })));
        assert!(matches!(antisym_product(&g, &[5]), Err(CliffordError::IndexOutOfRange { .. })));
    }

    #[test]
    fn alt_table_matches_brute_force() {
        for n in 2..=6 {
            let g = build_gamma(n).unwrap();
            let t = AltTable::new(&g);
            for p in 1..=4usize {
                let (ts, _) = tuples(n, p, TupleMode::Sampled { count: 300, seed: n as u64 });
                for idx in ts {
                    let one: Vec<usize> = idx.iter().map(|i| i + 1).collect();
                    let brute = antisym_product(&g, &one).unwrap().matrix;
                    let mut fast = ExactMatrix::zeros(g.dim_rep);
                    t.accumulate(&mut fast, 1, &idx);
                    assert_eq!(brute, fast, "n={n} idx={one:?}");
                }
            }
        }
    }

    #[test]
    fn small_identities() {
        for n in 2..=3 {
            let g = build_gamma(n).unwrap();
            let o = VerifyOptions::for_dim(n, 0);
            assert!(verify_commutator_product(&g, o).passed());
            assert!(verify_triple_commutator(&g, o).passed());
            assert!(verify_gamma_commutator(&g, o).passed());
        }
    }

    #[test]
    fn commutator_in_two_dimensions() {
        let g = build_gamma(2).unwrap();
        let lhs = g.gamma(1).mul(&g.gamma(1).commutator(g.gamma(2)));
        assert_eq!(lhs, g.gamma(2).scale(cq(2, 0)));
    }

    #[test]
    fn broken_g0_is_located() {
        let g = build_gamma(4).unwrap();
        let r = verify_triple_commutator(&g, VerifyOptions { mode: TupleMode::Exhaustive, g0_sign: -1 });
        assert!(!r.exact_zero);
        assert_eq!(r.offending_term.as_deref(), Some("G0"));
    }

    #[test]
    fn zero_omega() {
        let g = build_gamma(4).unwrap();
        let r = verify_omega_contraction(&g, &Omega3::zeros(4)).unwrap();
        assert_eq!(r.abs_residual, 0.0);
    }

    #[test]
    fn rejects_symmetric_omega() {
        let g = build_gamma(3).unwrap();
        let mut w = Omega3::zeros(3);
        w.set(0, 1, 2, 1.0);
        assert!(matches!(verify_omega_contraction(&g, &w), Err(CliffordError::NotAntisymmetric(_))));
    }

    #[test]
    fn only_increasing_reading_closes() {
        use rand::SeedableRng;
        let g = build_gamma(4).unwrap();
        let w = Omega3::random(4, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
        assert!(verify_omega_contraction_with(&g, &w, FourFormReading::IncreasingSets).unwrap().rel_residual < 1e-12);
        assert!(verify_omega_contraction_with(&g, &w, FourFormReading::LiteralFullSum).unwrap().rel_residual > 1.0);
    }
}
