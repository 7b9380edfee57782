//! Sparse multivariate polynomials in the local coordinates `(x, y, z, t)` of
//! a reference box `[-1, 1]^4`.
//!
//! TM-mode fields never carry a `z` exponent; the fourth slot exists so the
//! same algebra builds the three-dimensional bases.

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    X = 0,
    Y = 1,
    Z = 2,
    T = 3,
}

impl Var {
    pub const ALL: [Var; 4] = [Var::X, Var::Y, Var::Z, Var::T];
    pub const SPACE: [Var; 3] = [Var::X, Var::Y, Var::Z];
}

/// Exponents of `x^i y^j z^l t^k`, stored as `[i, j, l, k]`.
pub type Exponent = [u8; 4];

pub fn total_degree(e: &Exponent) -> usize {
    e.iter().map(|&v| v as usize).sum()
}

/// Monomials of total degree `<= p` in the given variables, graded
/// lexicographic (by degree, then descending in the first variable).
pub fn graded_monomials(p: usize, vars: &[Var]) -> Vec<Exponent> {
    let mut out = Vec::new();
    for d in 0..=p {
        push_of_degree(d, vars, [0; 4], &mut out);
    }
    out
}

fn push_of_degree(d: usize, vars: &[Var], acc: Exponent, out: &mut Vec<Exponent>) {
    match vars {
        [] => {
            if d == 0 {
                out.push(acc)
            }
        }
        [last] => {
            let mut e = acc;
            e[*last as usize] = d as u8;
            out.push(e);
        }
        [first, rest @ ..] => {
            for k in (0..=d).rev() {
                let mut e = acc;
                e[*first as usize] = k as u8;
                push_of_degree(d - k, rest, e, out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Poly<S> {
    terms: BTreeMap<Exponent, S>,
}

impl<S: Scalar> Default for Poly<S> {
    fn default() -> Self {
        Self::zero()
    }
}

impl<S: Scalar> Poly<S> {
    pub fn zero() -> Self {
        Self { terms: BTreeMap::new() }
    }

    pub fn constant(c: S) -> Self {
        Self::monomial([0; 4], c)
    }

    pub fn monomial(e: Exponent, c: S) -> Self {
        let mut p = Self::zero();
        p.add_term(e, c);
        p
    }

    /// Single variable `v` with coefficient one.
    pub fn var(v: Var) -> Self {
        let mut e = [0; 4];
        e[v as usize] = 1;
        Self::monomial(e, S::one())
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (Exponent, S)>) -> Self {
        let mut p = Self::zero();
        for (e, c) in terms {
            p.add_term(e, c);
        }
        p
    }

    pub fn add_term(&mut self, e: Exponent, c: S) {
        if c == S::zero() {
            return;
        }
        let entry = self.terms.entry(e).or_insert(S::zero());
        *entry += c;
        if *entry == S::zero() {
            self.terms.remove(&e);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Exponent, &S)> {
        self.terms.iter()
    }

    pub fn coeff(&self, e: &Exponent) -> S {
        self.terms.get(e).copied().unwrap_or_else(S::zero)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    /// Total degree, `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.terms.keys().map(total_degree).max()
    }

    pub fn degree_in(&self, v: Var) -> usize {
        self.terms.keys().map(|e| e[v as usize] as usize).max().unwrap_or(0)
    }

    pub fn max_abs_coeff(&self) -> S {
        self.terms.values().fold(S::zero(), |m, c| m.max(c.abs()))
    }

    pub fn scale(&self, s: S) -> Self {
        if s == S::zero() {
            return Self::zero();
        }
        Self { terms: self.terms.iter().map(|(e, c)| (*e, *c * s)).collect() }
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: S, other: &Self) {
        for (e, c) in &other.terms {
            self.add_term(*e, *c * s);
        }
    }

    pub fn diff(&self, v: Var) -> Self {
        let k = v as usize;
        let mut out = Self::zero();
        for (e, c) in &self.terms {
            if e[k] == 0 {
                continue;
            }
            let mut d = *e;
            d[k] -= 1;
            out.add_term(d, *c * S::from_usize(e[k] as usize));
        }
        out
    }

    /// Substitutes `v -> v + shift`.
    pub fn shift_var(&self, v: Var, shift: S) -> Self {
        let k = v as usize;
        let mut out = Self::zero();
        for (e, c) in &self.terms {
            let n = e[k] as usize;
            // (v + s)^n = sum_r C(n, r) v^r s^(n-r)
            let mut binom = S::one();
            for r in (0..=n).rev() {
                let mut d = *e;
                d[k] = r as u8;
                out.add_term(d, *c * binom * shift.powi((n - r) as i32));
                binom = binom * S::from_usize(r) / S::from_usize(n - r + 1);
            }
        }
        out
    }

    /// Restricts to `v = value`, dropping the variable.
    pub fn restrict(&self, v: Var, value: S) -> Self {
        let k = v as usize;
        let mut out = Self::zero();
        for (e, c) in &self.terms {
            let mut d = *e;
            d[k] = 0;
            out.add_term(d, *c * value.powi(e[k] as i32));
        }
        out
    }

    pub fn eval(&self, x: &[S; 4]) -> S {
        let maxd = self.terms.keys().flat_map(|e| e.iter().copied()).max().unwrap_or(0) as usize;
        let mut pw = [[S::one(); 16]; 4];
        let maxd = maxd.min(15);
        for v in 0..4 {
            for d in 1..=maxd {
                pw[v][d] = pw[v][d - 1] * x[v];
            }
        }
        self.terms
            .iter()
            .map(|(e, c)| *c * pw[0][e[0] as usize] * pw[1][e[1] as usize] * pw[2][e[2] as usize] * pw[3][e[3] as usize])
            .sum()
    }

    /// Exact integral over `[-1, 1]` in each listed variable; the others remain.
    pub fn integrate_box(&self, vars: &[Var]) -> Self {
        let mut out = Self::zero();
        'terms: for (e, c) in &self.terms {
            let mut d = *e;
            let mut w = *c;
            for v in vars {
                let k = *v as usize;
                if e[k] % 2 == 1 {
                    continue 'terms;
                }
                w *= S::lit(2.0) / S::from_usize(e[k] as usize + 1);
                d[k] = 0;
            }
            out.add_term(d, w);
        }
        out
    }

    /// Exact integral over the full reference box `[-1, 1]^4` restricted to `vars`.
    pub fn integral(&self, vars: &[Var]) -> S {
        self.integrate_box(vars).coeff(&[0; 4])
    }

    /// Drops coefficients with magnitude `<= tol`.
    pub fn prune(&self, tol: S) -> Self {
        Self { terms: self.terms.iter().filter(|(_, c)| c.abs() > tol).map(|(e, c)| (*e, *c)).collect() }
    }
}

impl<S: Scalar> Add for &Poly<S> {
    type Output = Poly<S>;
    fn add(self, rhs: &Poly<S>) -> Poly<S> {
        let mut out = self.clone();
        out.axpy(S::one(), rhs);
        out
    }
}

impl<S: Scalar> Sub for &Poly<S> {
    type Output = Poly<S>;
    fn sub(self, rhs: &Poly<S>) -> Poly<S> {
        let mut out = self.clone();
        out.axpy(-S::one(), rhs);
        out
    }
}

impl<S: Scalar> Neg for &Poly<S> {
    type Output = Poly<S>;
    fn neg(self) -> Poly<S> {
        self.scale(-S::one())
    }
}

impl<S: Scalar> Mul for &Poly<S> {
    type Output = Poly<S>;
    fn mul(self, rhs: &Poly<S>) -> Poly<S> {
        let mut out = Poly::zero();
        for (a, ca) in &self.terms {
            for (b, cb) in &rhs.terms {
                let e = [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]];
                out.add_term(e, *ca * *cb);
            }
        }
        out
    }
}

/// Three polynomial components of a vector field.
pub type PolyVec<S> = [Poly<S>; 3];

pub fn zero_vec<S: Scalar>() -> PolyVec<S> {
    [Poly::zero(), Poly::zero(), Poly::zero()]
}

pub fn vec_axpy<S: Scalar>(acc: &mut PolyVec<S>, s: S, v: &PolyVec<S>) {
    for (a, b) in acc.iter_mut().zip(v) {
        a.axpy(s, b);
    }
}

pub fn vec_scale<S: Scalar>(v: &PolyVec<S>, s: S) -> PolyVec<S> {
    [v[0].scale(s), v[1].scale(s), v[2].scale(s)]
}

pub fn vec_is_zero<S: Scalar>(v: &PolyVec<S>) -> bool {
    v.iter().all(Poly::is_zero)
}

pub fn vec_max_abs<S: Scalar>(v: &PolyVec<S>) -> S {
    v.iter().fold(S::zero(), |m, p| m.max(p.max_abs_coeff()))
}

pub fn vec_degree<S: Scalar>(v: &PolyVec<S>) -> Option<usize> {
    v.iter().filter_map(Poly::degree).max()
}
