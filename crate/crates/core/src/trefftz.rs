//! Trefftz polynomial bases: local frames, the curl recurrence that propagates
//! initial traces in time, the initial-trace families of every variant and the
//! per-element tabulations used by assembly.

use std::collections::HashMap;
use std::io::{self, Write};
use std::sync::Arc;

use rayon::prelude::*;

use crate::geometry::{Element, MaterialParams, Mesh, Side, TimePartition};
use crate::poly::{graded_monomials, vec_axpy, vec_degree, vec_is_zero, vec_max_abs, vec_scale, zero_vec, Poly, PolyVec, Var};
use crate::quadrature::{QuadRule2D, QuadRule3D, QuadratureError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrefftzError {
    #[error("initial trace has degree {found} but the space has degree {degree}")]
    DegreeTooHigh { degree: usize, found: usize },
    #[error("initial trace depends on time")]
    TimeDependentTrace,
    #[error("{variant:?} basis of degree {degree} has {found} members, expected {expected}")]
    DimensionMismatch { variant: Variant, degree: usize, expected: usize, found: usize },
    #[error("{0:?} bases cannot be used by the 2D solver")]
    NotTwoDimensional(Variant),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// Which Trefftz space a basis spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Full3D,
    DivFree3D,
    TM2D,
    DivFreeTM2D,
}

impl Variant {
    pub fn dimension(self, p: usize) -> usize {
        match self {
            Variant::Full3D => (p + 3) * (p + 2) * (p + 1),
            Variant::DivFree3D => (p + 1) * (p + 2) * (2 * p + 9) / 3,
            Variant::TM2D => 3 * (p + 1) * (p + 2) / 2,
            Variant::DivFreeTM2D => (p + 1) * (p + 3),
        }
    }

    pub fn is_tm(self) -> bool {
        matches!(self, Variant::TM2D | Variant::DivFreeTM2D)
    }

    fn space_vars(self) -> &'static [Var] {
        if self.is_tm() {
            &[Var::X, Var::Y]
        } else {
            &Var::SPACE
        }
    }
}

/// Affine map between the reference box `[-1, 1]^4` and a space-time box.
///
/// The z half-width is `1/2` for TM elements (unit extent).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame<S> {
    pub center: [S; 3],
    pub half: [S; 3],
    /// Start of the time slab.
    pub t_lo: S,
    pub t_half: S,
}

impl<S: Scalar> LocalFrame<S> {
    pub fn new(center: [S; 3], half: [S; 3], t_lo: S, t_half: S) -> Self {
        Self { center, half, t_lo, t_half }
    }

    /// Frame of `element x (t_lo, t_hi)` with unit z-extent.
    pub fn for_element(element: &Element<S>, t_lo: S, t_hi: S) -> Self {
        let c = element.bbox.center();
        let h = S::lit(0.5);
        Self {
            center: [c[0], c[1], h],
            half: [element.bbox.width() * h, element.bbox.height() * h, h],
            t_lo,
            t_half: (t_hi - t_lo) * h,
        }
    }

    /// Same shape, centered at the origin and starting at time zero.
    pub fn reference(half: [S; 3], t_half: S) -> Self {
        Self { center: [S::zero(); 3], half, t_lo: S::zero(), t_half }
    }

    pub fn t_center(&self) -> S {
        self.t_lo + self.t_half
    }

    pub fn to_local(&self, x: S, y: S, t: S) -> [S; 4] {
        [
            (x - self.center[0]) / self.half[0],
            (y - self.center[1]) / self.half[1],
            S::zero(),
            (t - self.t_center()) / self.t_half,
        ]
    }

    /// Physical volume of the spatial box divided by the reference volume 8.
    pub fn space_jacobian(&self) -> S {
        self.half[0] * self.half[1] * self.half[2]
    }

    fn key(&self) -> [u64; 4] {
        [
            self.half[0].as_f64().to_bits(),
            self.half[1].as_f64().to_bits(),
            self.half[2].as_f64().to_bits(),
            self.t_half.as_f64().to_bits(),
        ]
    }
}

/// An electromagnetic field `(E, H)` with polynomial components in local coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyField<S> {
    pub e: PolyVec<S>,
    pub h: PolyVec<S>,
    pub frame: LocalFrame<S>,
}

impl<S: Scalar> PolyField<S> {
    pub fn eval_local(&self, x: &[S; 4]) -> [S; 6] {
        [
            self.e[0].eval(x),
            self.e[1].eval(x),
            self.e[2].eval(x),
            self.h[0].eval(x),
            self.h[1].eval(x),
            self.h[2].eval(x),
        ]
    }

    pub fn eval(&self, x: S, y: S, t: S) -> [S; 6] {
        self.eval_local(&self.frame.to_local(x, y, t))
    }

    pub fn max_abs_coeff(&self) -> S {
        vec_max_abs(&self.e).max(vec_max_abs(&self.h))
    }

    /// Initial trace at the start of the slab, as polynomials in space only.
    pub fn initial_trace(&self) -> (PolyVec<S>, PolyVec<S>) {
        let r = |v: &PolyVec<S>| v.clone().map(|c| c.restrict(Var::T, -S::one()));
        (r(&self.e), r(&self.h))
    }
}

fn scaled_diff<S: Scalar>(p: &Poly<S>, v: Var, half: S) -> Poly<S> {
    p.diff(v).scale(S::one() / half)
}

/// Physical curl of a local-coordinate vector field.
pub fn curl_field<S: Scalar>(v: &PolyVec<S>, frame: &LocalFrame<S>) -> PolyVec<S> {
    let d = |c: usize, var: Var| scaled_diff(&v[c], var, frame.half[var as usize]);
    [
        &d(2, Var::Y) - &d(1, Var::Z),
        &d(0, Var::Z) - &d(2, Var::X),
        &d(1, Var::X) - &d(0, Var::Y),
    ]
}

/// Physical divergence of a local-coordinate vector field.
pub fn div_field<S: Scalar>(v: &PolyVec<S>, frame: &LocalFrame<S>) -> Poly<S> {
    let mut out = Poly::zero();
    for (c, var) in Var::SPACE.iter().enumerate() {
        out.axpy(S::one(), &scaled_diff(&v[c], *var, frame.half[c]));
    }
    out
}

fn check_trace<S: Scalar>(v: &PolyVec<S>, p: usize) -> Result<(), TrefftzError> {
    if v.iter().any(|c| c.degree_in(Var::T) > 0) {
        return Err(TrefftzError::TimeDependentTrace);
    }
    match vec_degree(v) {
        Some(d) if d > p => Err(TrefftzError::DegreeTooHigh { degree: p, found: d }),
        _ => Ok(()),
    }
}

/// Coefficients `(e_m, h_m)` of the expansion in powers of `(t - t_lo) / t_half`.
pub fn recurrence_terms<S: Scalar>(
    e0: &PolyVec<S>,
    h0: &PolyVec<S>,
    mat: &MaterialParams<S>,
    p: usize,
    frame: &LocalFrame<S>,
) -> Result<Vec<(PolyVec<S>, PolyVec<S>)>, TrefftzError> {
    check_trace(e0, p)?;
    check_trace(h0, p)?;
    let mut terms = vec![(e0.clone(), h0.clone())];
    for m in 1..=p {
        let (ep, hp) = &terms[m - 1];
        let f = frame.t_half / S::from_usize(m);
        let e = vec_scale(&curl_field(hp, frame), f / mat.eps);
        let h = vec_scale(&curl_field(ep, frame), -f / mat.mu);
        if vec_is_zero(&e) && vec_is_zero(&h) {
            break;
        }
        terms.push((e, h));
    }
    Ok(terms)
}

/// Propagates an initial trace in time so that the result solves the source-free
/// Maxwell system exactly and matches `(e0, h0)` at the start of the slab.
pub fn extend_to_trefftz<S: Scalar>(
    e0: &PolyVec<S>,
    h0: &PolyVec<S>,
    mat: &MaterialParams<S>,
    p: usize,
    frame: &LocalFrame<S>,
) -> Result<PolyField<S>, TrefftzError> {
    let terms = recurrence_terms(e0, h0, mat, p, frame)?;
    let mut e = zero_vec();
    let mut h = zero_vec();
    for (m, (em, hm)) in terms.iter().enumerate() {
        // s = t_local + 1
        let s_m = Poly::monomial([0, 0, 0, m as u8], S::one()).shift_var(Var::T, S::one());
        for c in 0..3 {
            e[c].axpy(S::one(), &(&em[c] * &s_m));
            h[c].axpy(S::one(), &(&hm[c] * &s_m));
        }
    }
    Ok(PolyField { e, h, frame: *frame })
}

fn unit<S: Scalar>(c: usize, p: Poly<S>) -> PolyVec<S> {
    let mut v = zero_vec();
    v[c] = p;
    v
}

fn normalize_max<S: Scalar>(v: PolyVec<S>) -> PolyVec<S> {
    let m = vec_max_abs(&v);
    if m == S::zero() {
        v
    } else {
        vec_scale(&v, S::one() / m)
    }
}

/// Initial traces of the full TM space: every component `E3, H1, H2` ranges over
/// the monomials of degree `<= p` in `(x, y)`.
pub fn initial_basis_tm2d<S: Scalar>(p: usize) -> Vec<(PolyVec<S>, PolyVec<S>)> {
    let monos = graded_monomials(p, &[Var::X, Var::Y]);
    let mut out = Vec::with_capacity(3 * monos.len());
    for e in &monos {
        out.push((unit(2, Poly::monomial(*e, S::one())), zero_vec()));
    }
    for c in 0..2 {
        for e in &monos {
            out.push((zero_vec(), unit(c, Poly::monomial(*e, S::one()))));
        }
    }
    out
}

/// Initial traces of the divergence-free TM space: `E3` monomials plus magnetic
/// fields `curl (0, 0, phi)` for monomials `phi` of degree `1..=p+1`, each scaled
/// to unit largest coefficient.
pub fn initial_basis_divfree_tm2d<S: Scalar>(p: usize, frame: &LocalFrame<S>) -> Vec<(PolyVec<S>, PolyVec<S>)> {
    let vars = [Var::X, Var::Y];
    let mut out: Vec<_> = graded_monomials(p, &vars)
        .into_iter()
        .map(|e| (unit(2, Poly::monomial(e, S::one())), zero_vec()))
        .collect();
    for e in graded_monomials(p + 1, &vars).into_iter().skip(1) {
        let h = curl_field(&unit(2, Poly::monomial(e, S::one())), frame);
        out.push((zero_vec(), normalize_max(h)));
    }
    out
}

fn divfree_3d_candidates<S: Scalar>(p: usize, frame: &LocalFrame<S>) -> Vec<PolyVec<S>> {
    let mut out = Vec::new();
    for e in graded_monomials(p + 1, &Var::SPACE).into_iter().skip(1) {
        for c in 0..3 {
            let v = curl_field(&unit(c, Poly::monomial(e, S::one())), frame);
            if !vec_is_zero(&v) {
                out.push(normalize_max(v));
            }
        }
    }
    out
}

/// Initial traces in three dimensions. With `divfree` the candidates are curls
/// of vector monomials of degree `<= p+1` and still contain dependent members;
/// [`LocalBasis::build`] filters them.
pub fn initial_basis_3d<S: Scalar>(p: usize, divfree: bool, frame: &LocalFrame<S>) -> Vec<(PolyVec<S>, PolyVec<S>)> {
    if divfree {
        let cands = divfree_3d_candidates(p, frame);
        let mut out: Vec<_> = cands.iter().map(|v| (v.clone(), zero_vec())).collect();
        out.extend(cands.into_iter().map(|v| (zero_vec(), v)));
        out
    } else {
        let monos = graded_monomials(p, &Var::SPACE);
        let mut out = Vec::with_capacity(6 * monos.len());
        for field in 0..2 {
            for c in 0..3 {
                for e in &monos {
                    let v = unit(c, Poly::monomial(*e, S::one()));
                    out.push(if field == 0 { (v, zero_vec()) } else { (zero_vec(), v) });
                }
            }
        }
        out
    }
}

/// Element inner product `int_K eps e.e' + mu h.h'` on coefficient vectors over
/// a fixed monomial list.
struct TraceInnerProduct<S> {
    monos: Vec<[u8; 4]>,
    index: HashMap<[u8; 4], usize>,
    gram: Vec<S>,
    weights: [S; 6],
}

impl<S: Scalar> TraceInnerProduct<S> {
    fn new(p: usize, vars: &[Var], mat: &MaterialParams<S>, frame: &LocalFrame<S>) -> Self {
        let monos = graded_monomials(p, vars);
        let index = monos.iter().enumerate().map(|(i, e)| (*e, i)).collect();
        let n = monos.len();
        let mut gram = vec![S::zero(); n * n];
        for i in 0..n {
            for j in 0..n {
                let mut v = S::one();
                for k in 0..3 {
                    let d = monos[i][k] + monos[j][k];
                    v *= if d % 2 == 1 { S::zero() } else { S::lit(2.0) / S::from_usize(d as usize + 1) };
                }
                gram[i * n + j] = v;
            }
        }
        let jac = frame.space_jacobian();
        let (we, wh) = (mat.eps * jac, mat.mu * jac);
        Self { monos, index, gram, weights: [we, we, we, wh, wh, wh] }
    }

    fn coeffs(&self, e: &PolyVec<S>, h: &PolyVec<S>) -> Vec<S> {
        let n = self.monos.len();
        let mut out = vec![S::zero(); 6 * n];
        for (c, comp) in e.iter().chain(h.iter()).enumerate() {
            for (exp, v) in comp.terms() {
                out[c * n + self.index[exp]] = *v;
            }
        }
        out
    }

    fn to_field(&self, c: &[S]) -> (PolyVec<S>, PolyVec<S>) {
        let n = self.monos.len();
        let mut v: [PolyVec<S>; 2] = [zero_vec(), zero_vec()];
        for comp in 0..6 {
            v[comp / 3][comp % 3] = Poly::from_terms((0..n).map(|i| (self.monos[i], c[comp * n + i])));
        }
        let [e, h] = v;
        (e, h)
    }

    fn apply(&self, a: &[S], b: &[S]) -> S {
        let n = self.monos.len();
        let mut total = S::zero();
        for comp in 0..6 {
            let (ac, bc) = (&a[comp * n..(comp + 1) * n], &b[comp * n..(comp + 1) * n]);
            if ac.iter().all(|v| *v == S::zero()) || bc.iter().all(|v| *v == S::zero()) {
                continue;
            }
            let mut s = S::zero();
            for i in 0..n {
                if ac[i] == S::zero() {
                    continue;
                }
                let row = &self.gram[i * n..(i + 1) * n];
                s += ac[i] * row.iter().zip(bc).map(|(g, b)| *g * *b).sum::<S>();
            }
            total += self.weights[comp] * s;
        }
        total
    }
}

/// Modified Gram-Schmidt with one re-orthogonalization pass. Returns the indices
/// of the kept candidates and the orthonormal combinations.
fn weighted_gram_schmidt<S: Scalar>(ip: &TraceInnerProduct<S>, cands: &[Vec<S>], tol: S) -> (Vec<usize>, Vec<Vec<S>>) {
    let mut kept = Vec::new();
    let mut q: Vec<Vec<S>> = Vec::new();
    for (k, c) in cands.iter().enumerate() {
        let n0 = ip.apply(c, c).sqrt();
        if n0 == S::zero() {
            continue;
        }
        let mut v = c.clone();
        for _ in 0..2 {
            for qi in &q {
                let r = ip.apply(qi, &v);
                for (vj, qj) in v.iter_mut().zip(qi) {
                    *vj -= r * *qj;
                }
            }
        }
        let nv = ip.apply(&v, &v).sqrt();
        if nv <= tol * n0 {
            continue;
        }
        kept.push(k);
        q.push(v.into_iter().map(|x| x / nv).collect());
    }
    (kept, q)
}

/// A Trefftz basis on a reference-shaped element: depends only on the element
/// size, slab length and material, so equal-shaped elements share one.
#[derive(Debug, Clone)]
pub struct LocalBasis<S> {
    pub degree: usize,
    pub variant: Variant,
    pub material: MaterialParams<S>,
    pub frame: LocalFrame<S>,
    pub orthonormal: bool,
    functions: Vec<PolyField<S>>,
}

impl<S: Scalar> LocalBasis<S> {
    pub fn build(
        p: usize,
        variant: Variant,
        half: [S; 3],
        t_half: S,
        material: MaterialParams<S>,
        orthonormalize: bool,
    ) -> Result<Self, TrefftzError> {
        let frame = LocalFrame::reference(half, t_half);
        let raw = match variant {
            Variant::Full3D => initial_basis_3d(p, false, &frame),
            Variant::DivFree3D => initial_basis_3d(p, true, &frame),
            Variant::TM2D => initial_basis_tm2d(p),
            Variant::DivFreeTM2D => initial_basis_divfree_tm2d(p, &frame),
        };
        let traces = if orthonormalize || variant == Variant::DivFree3D {
            let ip = TraceInnerProduct::new(p, variant.space_vars(), &material, &frame);
            let coeffs: Vec<_> = raw.iter().map(|(e, h)| ip.coeffs(e, h)).collect();
            let (kept, q) = weighted_gram_schmidt(&ip, &coeffs, S::dependence_tol());
            if orthonormalize {
                q.iter().map(|c| ip.to_field(c)).collect()
            } else {
                kept.into_iter().map(|k| raw[k].clone()).collect()
            }
        } else {
            raw
        };
        let expected = variant.dimension(p);
        if traces.len() != expected {
            return Err(TrefftzError::DimensionMismatch { variant, degree: p, expected, found: traces.len() });
        }
        let functions = traces
            .iter()
            .map(|(e, h)| extend_to_trefftz(e, h, &material, p, &frame))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { degree: p, variant, material, frame, orthonormal: orthonormalize, functions })
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn functions(&self) -> &[PolyField<S>] {
        &self.functions
    }

    /// Values of every member at local points; row `f` holds member `f`.
    pub fn tabulate(&self, points: &[[S; 4]]) -> Tabulation<S> {
        let values = self
            .functions
            .par_iter()
            .flat_map_iter(|f| points.iter().map(move |x| f.eval_local(x)))
            .collect();
        Tabulation { n_funcs: self.functions.len(), n_points: points.len(), values }
    }

    /// Writes `member,component,i,j,k,coefficient` rows (`k` is the time
    /// exponent); 3D bases add the z exponent as a final `l` column.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let three_d = !self.variant.is_tm();
        writeln!(w, "member,component,i,j,k,coefficient{}", if three_d { ",l" } else { "" })?;
        const NAMES: [&str; 6] = ["E1", "E2", "E3", "H1", "H2", "H3"];
        for (m, f) in self.functions.iter().enumerate() {
            for (c, poly) in f.e.iter().chain(f.h.iter()).enumerate() {
                for (e, v) in poly.terms() {
                    write!(w, "{m},{},{},{},{},{:.16e}", NAMES[c], e[0], e[1], e[3], v)?;
                    if three_d {
                        write!(w, ",{}", e[2])?;
                    }
                    writeln!(w)?;
                }
            }
        }
        Ok(())
    }
}

/// A basis placed on a concrete space-time element.
#[derive(Debug, Clone)]
pub struct TrefftzBasis<S> {
    pub element: usize,
    pub slab: usize,
    pub frame: LocalFrame<S>,
    pub local: Arc<LocalBasis<S>>,
}

impl<S: Scalar> TrefftzBasis<S> {
    pub fn len(&self) -> usize {
        self.local.len()
    }

    pub fn is_empty(&self) -> bool {
        self.local.is_empty()
    }

    pub fn degree(&self) -> usize {
        self.local.degree
    }

    pub fn variant(&self) -> Variant {
        self.local.variant
    }

    pub fn function(&self, i: usize) -> PolyField<S> {
        let mut f = self.local.functions[i].clone();
        f.frame = self.frame;
        f
    }

    pub fn functions(&self) -> Vec<PolyField<S>> {
        (0..self.len()).map(|i| self.function(i)).collect()
    }
}

/// Builds the basis of `element x I^slab`.
pub fn build_trefftz_basis<S: Scalar>(
    element: &Element<S>,
    partition: &TimePartition<S>,
    slab: usize,
    p: usize,
    variant: Variant,
    orthonormalize: bool,
) -> Result<TrefftzBasis<S>, TrefftzError> {
    let (t_lo, t_hi) = partition.slab(slab);
    let frame = LocalFrame::for_element(element, t_lo, t_hi);
    let local = LocalBasis::build(p, variant, frame.half, frame.t_half, element.material, orthonormalize)?;
    Ok(TrefftzBasis { element: element.index, slab, frame, local: Arc::new(local) })
}

/// Max coefficient of `eps dE/dt - curl H` and `mu dH/dt + curl E` in physical units.
pub fn maxwell_residual<S: Scalar>(f: &PolyField<S>, mat: &MaterialParams<S>) -> S {
    let dt = |v: &PolyVec<S>| v.clone().map(|c| scaled_diff(&c, Var::T, f.frame.t_half));
    let mut r1 = vec_scale(&dt(&f.e), mat.eps);
    vec_axpy(&mut r1, -S::one(), &curl_field(&f.h, &f.frame));
    let mut r2 = vec_scale(&dt(&f.h), mat.mu);
    vec_axpy(&mut r2, S::one(), &curl_field(&f.e, &f.frame));
    vec_max_abs(&r1).max(vec_max_abs(&r2))
}

/// [`maxwell_residual`] divided by the size of the individual terms.
pub fn relative_maxwell_residual<S: Scalar>(f: &PolyField<S>, mat: &MaterialParams<S>) -> S {
    let fr = &f.frame;
    let inv = [fr.half[0], fr.half[1], fr.half[2], fr.t_half]
        .iter()
        .fold(S::zero(), |m, h| m.max(S::one() / *h));
    let scale = f.max_abs_coeff() * inv * mat.eps.max(mat.mu).max(S::one());
    if scale == S::zero() {
        S::zero()
    } else {
        maxwell_residual(f, mat) / scale
    }
}

/// Max coefficient of `div(eps E)` and `div(mu H)`.
pub fn divergence_residual<S: Scalar>(f: &PolyField<S>, mat: &MaterialParams<S>) -> S {
    let de = div_field(&f.e, &f.frame).max_abs_coeff() * mat.eps;
    let dh = div_field(&f.h, &f.frame).max_abs_coeff() * mat.mu;
    de.max(dh)
}

/// Member values at a point set, stored as `values[f * n_points + q]`.
#[derive(Debug, Clone)]
pub struct Tabulation<S> {
    pub n_funcs: usize,
    pub n_points: usize,
    pub values: Vec<[S; 6]>,
}

impl<S: Scalar> Tabulation<S> {
    #[inline]
    pub fn get(&self, f: usize, q: usize) -> &[S; 6] {
        &self.values[f * self.n_points + q]
    }

    /// Field of the combination `sum_f coeffs[f] * member_f` at every point.
    pub fn combine(&self, coeffs: &[S]) -> Vec<[S; 6]> {
        let mut out = vec![[S::zero(); 6]; self.n_points];
        for (f, c) in coeffs.iter().enumerate() {
            if *c == S::zero() {
                continue;
            }
            for (q, o) in out.iter_mut().enumerate() {
                let v = self.get(f, q);
                for k in 0..6 {
                    o[k] += *c * v[k];
                }
            }
        }
        out
    }
}

/// A quadrature rule on the reference domain and the basis values at its points.
#[derive(Debug, Clone)]
pub struct Tabulated<R, S> {
    pub rule: R,
    pub table: Tabulation<S>,
}

/// Tabulations of one [`LocalBasis`] on the start/end planes, the four
/// side-time rectangles and the space-time volume. "Low" rules have `p+1`
/// nodes per direction (exact for the bilinear terms), "high" rules `p+3`
/// (for non-polynomial data). Rule jacobians are 1; callers scale.
#[derive(Debug, Clone)]
pub struct BasisTables<S> {
    pub start_lo: Tabulated<QuadRule2D<S>, S>,
    pub end_lo: Tabulated<QuadRule2D<S>, S>,
    pub start_hi: Tabulated<QuadRule2D<S>, S>,
    pub end_hi: Tabulated<QuadRule2D<S>, S>,
    pub side_lo: [Tabulated<QuadRule2D<S>, S>; 4],
    pub side_hi: [Tabulated<QuadRule2D<S>, S>; 4],
    pub volume_hi: Tabulated<QuadRule3D<S>, S>,
}

impl<S: Scalar> BasisTables<S> {
    pub fn build(basis: &LocalBasis<S>, n_lo: usize, n_hi: usize) -> Result<Self, TrefftzError> {
        let plane = |n: usize, t: S| -> Result<Tabulated<QuadRule2D<S>, S>, TrefftzError> {
            let rule = QuadRule2D::square(n, S::one())?;
            let pts: Vec<_> = rule.points.iter().map(|p| [p[0], p[1], S::zero(), t]).collect();
            Ok(Tabulated { table: basis.tabulate(&pts), rule })
        };
        let side = |n: usize, s: Side| -> Result<Tabulated<QuadRule2D<S>, S>, TrefftzError> {
            let rule = QuadRule2D::square(n, S::one())?;
            let pts: Vec<_> = rule
                .points
                .iter()
                .map(|p| {
                    let r = s.reference_point(p[0]);
                    [r[0], r[1], S::zero(), p[1]]
                })
                .collect();
            Ok(Tabulated { table: basis.tabulate(&pts), rule })
        };
        let sides = |n: usize| -> Result<[Tabulated<QuadRule2D<S>, S>; 4], TrefftzError> {
            Ok([side(n, Side::XLo)?, side(n, Side::XHi)?, side(n, Side::YLo)?, side(n, Side::YHi)?])
        };
        let vol_rule = QuadRule3D::cube(n_hi, S::one())?;
        let vol_pts: Vec<_> = vol_rule.points.iter().map(|p| [p[0], p[1], S::zero(), p[2]]).collect();
        Ok(Self {
            start_lo: plane(n_lo, -S::one())?,
            end_lo: plane(n_lo, S::one())?,
            start_hi: plane(n_hi, -S::one())?,
            end_hi: plane(n_hi, S::one())?,
            side_lo: sides(n_lo)?,
            side_hi: sides(n_hi)?,
            volume_hi: Tabulated { table: basis.tabulate(&vol_pts), rule: vol_rule },
        })
    }
}

/// Basis shared by all elements with equal size and material.
#[derive(Debug, Clone)]
pub struct BasisClass<S> {
    pub basis: Arc<LocalBasis<S>>,
    pub tables: BasisTables<S>,
}

/// Bases of every element of a 2D mesh for slabs of a fixed length.
#[derive(Debug, Clone)]
pub struct BasisSet<S> {
    pub degree: usize,
    pub variant: Variant,
    pub step: S,
    classes: Vec<BasisClass<S>>,
    class_of: Vec<usize>,
}

impl<S: Scalar> BasisSet<S> {
    /// Tabulates with `p+1` and `p+3` nodes per direction.
    pub fn build(mesh: &Mesh<S>, step: S, p: usize, variant: Variant, orthonormalize: bool) -> Result<Self, TrefftzError> {
        Self::build_with_rules(mesh, step, p, variant, orthonormalize, p + 1, p + 3)
    }

    pub fn build_with_rules(
        mesh: &Mesh<S>,
        step: S,
        p: usize,
        variant: Variant,
        orthonormalize: bool,
        n_lo: usize,
        n_hi: usize,
    ) -> Result<Self, TrefftzError> {
        if !variant.is_tm() {
            return Err(TrefftzError::NotTwoDimensional(variant));
        }
        let mut keys: Vec<([u64; 4], [u64; 2], LocalFrame<S>, MaterialParams<S>)> = Vec::new();
        let mut class_of = Vec::with_capacity(mesh.n_elements());
        for el in mesh.elements() {
            let frame = LocalFrame::for_element(el, S::zero(), step);
            let key = (frame.key(), [el.material.eps.as_f64().to_bits(), el.material.mu.as_f64().to_bits()]);
            let idx = match keys.iter().position(|k| (k.0, k.1) == key) {
                Some(i) => i,
                None => {
                    keys.push((key.0, key.1, frame, el.material));
                    keys.len() - 1
                }
            };
            class_of.push(idx);
        }
        let classes = keys
            .par_iter()
            .map(|(_, _, frame, mat)| {
                let basis = LocalBasis::build(p, variant, frame.half, frame.t_half, *mat, orthonormalize)?;
                let tables = BasisTables::build(&basis, n_lo, n_hi)?;
                Ok(BasisClass { basis: Arc::new(basis), tables })
            })
            .collect::<Result<Vec<_>, TrefftzError>>()?;
        Ok(Self { degree: p, variant, step, classes, class_of })
    }

    pub fn n_basis(&self) -> usize {
        self.variant.dimension(self.degree)
    }

    pub fn n_elements(&self) -> usize {
        self.class_of.len()
    }

    pub fn classes(&self) -> &[BasisClass<S>] {
        &self.classes
    }

    pub fn class_index(&self, element: usize) -> usize {
        self.class_of[element]
    }

    pub fn class(&self, element: usize) -> &BasisClass<S> {
        &self.classes[self.class_of[element]]
    }

    /// The basis of `element` on the slab starting at `t_lo`.
    pub fn element_basis(&self, mesh: &Mesh<S>, element: usize, slab: usize, t_lo: S) -> TrefftzBasis<S> {
        let frame = LocalFrame::for_element(mesh.element(element), t_lo, t_lo + self.step);
        TrefftzBasis { element, slab, frame, local: self.class(element).basis.clone() }
    }
}
