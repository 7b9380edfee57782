//! Slab bilinear form and right-hand side of the space-time Trefftz DG method.
//!
//! All flux algebra is done with literal cross products of 3-vectors at
//! quadrature points. Matrix rows index test functions, columns trial functions.

use std::io::{self, Write};
use std::sync::Arc;

use rayon::prelude::*;

use crate::geometry::{BoundaryTag, FaceKind, Mesh, Side, TimePartition};
use crate::linalg::{BlockSparseMatrix, DenseMatrix};
use crate::poly::{vec_axpy, vec_scale, PolyVec, Var};
use crate::quadrature::QuadRule2D;
use crate::scalar::{cross3, dot3, Scalar, Vec3};
use crate::slab_solver::FieldState;
use crate::trefftz::{curl_field, BasisSet, Tabulated, Tabulation, TrefftzError, Variant};

pub use crate::scalar::cross3 as cross;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AssemblyError {
    #[error("basis set covers {bases} elements but the mesh has {mesh}")]
    MissingBasis { mesh: usize, bases: usize },
    #[error("element {element} has no face on side {side:?}")]
    OpenElement { element: usize, side: Side },
    #[error("slab {slab} has length {found}, bases were built for {expected}")]
    StepMismatch { slab: usize, expected: f64, found: f64 },
    #[error(transparent)]
    Basis(#[from] TrefftzError),
}

/// Global numbering: `element * n_basis + local`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DofMap {
    pub n_elements: usize,
    pub n_basis: usize,
}

impl DofMap {
    pub fn new(n_elements: usize, n_basis: usize) -> Self {
        Self { n_elements, n_basis }
    }

    pub fn n_dofs(&self) -> usize {
        self.n_elements * self.n_basis
    }

    pub fn global(&self, element: usize, local: usize) -> usize {
        element * self.n_basis + local
    }

    pub fn split(&self, global: usize) -> (usize, usize) {
        (global / self.n_basis, global % self.n_basis)
    }

    pub fn range(&self, element: usize) -> std::ops::Range<usize> {
        element * self.n_basis..(element + 1) * self.n_basis
    }
}

/// The linear system of one time slab.
#[derive(Debug, Clone)]
pub struct SlabSystem<S> {
    pub dofs: DofMap,
    pub matrix: Arc<BlockSparseMatrix<S>>,
    pub rhs: Vec<S>,
}

/// Initial data `(E, H)` at a physical point.
pub type InitialFn<'a, S> = &'a (dyn Fn(S, S) -> [S; 6] + Sync);

/// Data at the start of a slab: analytic initial fields or the previous state.
#[derive(Clone, Copy)]
pub enum PrevData<'a, S> {
    Initial(InitialFn<'a, S>),
    State(&'a FieldState<S>),
}

#[inline]
fn split6<S: Scalar>(v: &[S; 6]) -> (Vec3<S>, Vec3<S>) {
    ([v[0], v[1], v[2]], [v[3], v[4], v[5]])
}

fn dofs_for<S: Scalar>(mesh: &Mesh<S>, bases: &BasisSet<S>) -> Result<DofMap, AssemblyError> {
    if bases.n_elements() != mesh.n_elements() {
        return Err(AssemblyError::MissingBasis { mesh: mesh.n_elements(), bases: bases.n_elements() });
    }
    Ok(DofMap::new(mesh.n_elements(), bases.n_basis()))
}

/// Slab endpoints, checked against the step the bases were built for.
pub fn slab_interval<S: Scalar>(bases: &BasisSet<S>, partition: &TimePartition<S>, slab: usize) -> Result<(S, S), AssemblyError> {
    let (lo, hi) = partition.slab(slab);
    let tol = S::lit(1e-10).max(S::epsilon() * S::lit(64.0)) * bases.step.abs().max(S::one());
    if ((hi - lo) - bases.step).abs() > tol {
        return Err(AssemblyError::StepMismatch { slab, expected: bases.step.as_f64(), found: (hi - lo).as_f64() });
    }
    Ok((lo, hi))
}

/// `jac * sum_q w_q f(trial_j(q), test_i(q))` for all pairs.
fn pair_block<S: Scalar>(
    test: &Tabulation<S>,
    trial: &Tabulation<S>,
    rule: &QuadRule2D<S>,
    jac: S,
    f: impl Fn(&[S; 6], &[S; 6]) -> S,
) -> DenseMatrix<S> {
    let mut m = DenseMatrix::zeros(test.n_funcs, trial.n_funcs);
    for i in 0..test.n_funcs {
        for j in 0..trial.n_funcs {
            let mut acc = S::zero();
            for (q, w) in rule.weights.iter().enumerate() {
                acc += *w * f(trial.get(j, q), test.get(i, q));
            }
            m[(i, j)] = jac * acc;
        }
    }
    m
}

/// `(n x H_trial) . v_test - (n x E_trial) . w_test`.
fn interface_integrand<S: Scalar>(n: &Vec3<S>, trial: &[S; 6], test: &[S; 6]) -> S {
    let (e, h) = split6(trial);
    let (v, w) = split6(test);
    dot3(&cross3(n, &h), &v) - dot3(&cross3(n, &e), &w)
}

fn boundary_integrand<S: Scalar>(tag: &BoundaryTag<S>, n: &Vec3<S>, trial: &[S; 6], test: &[S; 6]) -> S {
    let (e, h) = split6(trial);
    let (v, w) = split6(test);
    match tag {
        BoundaryTag::Impedance { beta, .. } => {
            *beta * dot3(&cross3(n, &h), &cross3(n, &w)) - dot3(&cross3(n, &e), &w)
        }
        BoundaryTag::Symmetry => dot3(&cross3(n, &h), &v),
    }
}

fn face_jacobian<S: Scalar>(length: S, t_half: S) -> S {
    length * S::lit(0.5) * t_half
}

fn temporal_block<S: Scalar>(mesh: &Mesh<S>, bases: &BasisSet<S>, e: usize) -> DenseMatrix<S> {
    let el = mesh.element(e);
    let mat = el.material;
    let t = &bases.class(e).tables.start_lo;
    let jac = el.bbox.area() / S::lit(4.0);
    pair_block(&t.table, &t.table, &t.rule, jac, |u, v| {
        mat.eps * (u[0] * v[0] + u[1] * v[1] + u[2] * v[2]) + mat.mu * (u[3] * v[3] + u[4] * v[4] + u[5] * v[5])
    })
}

type Contribution<S> = Vec<(usize, usize, DenseMatrix<S>)>;

fn accumulate<S: Scalar>(matrix: &mut BlockSparseMatrix<S>, parts: Vec<Contribution<S>>) {
    for part in parts {
        for (r, c, m) in part {
            let b = matrix.block_mut(r, c);
            for i in 0..m.rows() {
                for j in 0..m.cols() {
                    b[(i, j)] += m[(i, j)];
                }
            }
        }
    }
}

fn side_table<S: Scalar>(bases: &BasisSet<S>, e: usize, side: Side) -> &Tabulated<QuadRule2D<S>, S> {
    &bases.class(e).tables.side_lo[side.index()]
}

/// Matrix of the face-only form: interface jumps and averages, boundary
/// impedance or symmetry terms, and the temporal term at the slab start.
pub fn assemble_b<S: Scalar>(mesh: &Mesh<S>, bases: &BasisSet<S>) -> Result<BlockSparseMatrix<S>, AssemblyError> {
    let dofs = dofs_for(mesh, bases)?;
    let t_half = bases.step * S::lit(0.5);
    let half = S::lit(0.5);
    let mut matrix = BlockSparseMatrix::new(&vec![dofs.n_basis; dofs.n_elements]);
    let temporal: Vec<Contribution<S>> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| vec![(e, e, temporal_block(mesh, bases, e))])
        .collect();
    let faces: Vec<Contribution<S>> = mesh
        .faces()
        .par_iter()
        .map(|face| {
            let n = face.normal3();
            let side = face.owner_side();
            let jac = face_jacobian(face.length(), t_half);
            match &face.kind {
                FaceKind::Interior { left, right, .. } => {
                    let tl = side_table(bases, *left, side);
                    let tr = side_table(bases, *right, side.opposite());
                    let mut out = Vec::with_capacity(4);
                    let sides = [(*left, tl, half), (*right, tr, -half)];
                    for (trial, ttr, sigma) in sides {
                        for (test, tte, _) in sides {
                            let m = pair_block(&tte.table, &ttr.table, &tl.rule, jac * sigma, |u, v| {
                                interface_integrand(&n, u, v)
                            });
                            out.push((test, trial, m));
                        }
                    }
                    out
                }
                FaceKind::Boundary { element, tag } => {
                    let t = side_table(bases, *element, side);
                    let m = pair_block(&t.table, &t.table, &t.rule, jac, |u, v| boundary_integrand(tag, &n, u, v));
                    vec![(*element, *element, m)]
                }
            }
        })
        .collect();
    accumulate(&mut matrix, temporal);
    accumulate(&mut matrix, faces);
    Ok(matrix)
}

/// Maxwell residual `(eps dE/dt - curl H, mu dH/dt + curl E)` of every member of
/// a class, tabulated on the class volume rule.
fn residual_table<S: Scalar>(bases: &BasisSet<S>, class: usize) -> Tabulation<S> {
    let c = &bases.classes()[class];
    let mat = c.basis.material;
    let pts: Vec<[S; 4]> = c.tables.volume_hi.rule.points.iter().map(|p| [p[0], p[1], S::zero(), p[2]]).collect();
    let mut values = Vec::with_capacity(c.basis.len() * pts.len());
    for f in c.basis.functions() {
        let dt = |v: &PolyVec<S>| v.clone().map(|p| p.diff(Var::T).scale(S::one() / f.frame.t_half));
        let mut r1 = vec_scale(&dt(&f.e), mat.eps);
        vec_axpy(&mut r1, -S::one(), &curl_field(&f.h, &f.frame));
        let mut r2 = vec_scale(&dt(&f.h), mat.mu);
        vec_axpy(&mut r2, S::one(), &curl_field(&f.e, &f.frame));
        for x in &pts {
            values.push([r1[0].eval(x), r1[1].eval(x), r1[2].eval(x), r2[0].eval(x), r2[1].eval(x), r2[2].eval(x)]);
        }
    }
    Tabulation { n_funcs: c.basis.len(), n_points: pts.len(), values }
}

/// Matrix of the abstract form with volume terms and element-wise fluxes
/// `n x (H - H*) . v - n x (E - E*) . w`, assembled element by element.
/// Interior fluxes are averages; impedance faces use `H* = H`, `E* = beta H x n`;
/// symmetry faces use `E* = E`, `H* = 0`.
pub fn assemble_b_volume_form<S: Scalar>(mesh: &Mesh<S>, bases: &BasisSet<S>) -> Result<BlockSparseMatrix<S>, AssemblyError> {
    let dofs = dofs_for(mesh, bases)?;
    let t_half = bases.step * S::lit(0.5);
    let half = S::lit(0.5);
    let element_faces = mesh.element_faces();
    let residuals: Vec<Tabulation<S>> = (0..bases.classes().len()).into_par_iter().map(|c| residual_table(bases, c)).collect();
    let parts: Vec<Result<Contribution<S>, AssemblyError>> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|k| {
            let el = mesh.element(k);
            let mut out = vec![(k, k, temporal_block(mesh, bases, k))];
            // volume terms
            let vol = &bases.class(k).tables.volume_hi;
            let res = &residuals[bases.class_index(k)];
            let jac = el.bbox.area() / S::lit(4.0) * t_half;
            let mut m = DenseMatrix::zeros(dofs.n_basis, dofs.n_basis);
            for i in 0..dofs.n_basis {
                for j in 0..dofs.n_basis {
                    let mut acc = S::zero();
                    for (q, w) in vol.rule.weights.iter().enumerate() {
                        let r = res.get(j, q);
                        let t = vol.table.get(i, q);
                        acc += *w * (0..6).map(|c| r[c] * t[c]).sum::<S>();
                    }
                    m[(i, j)] = jac * acc;
                }
            }
            out.push((k, k, m));
            for side in Side::ALL {
                let fi = element_faces[k][side.index()].ok_or(AssemblyError::OpenElement { element: k, side })?;
                let face = &mesh.faces()[fi];
                let jac = face_jacobian(face.length(), t_half);
                let own = side_table(bases, k, side);
                match &face.kind {
                    FaceKind::Interior { left, right, .. } => {
                        let is_left = *left == k && face.owner_side() == side;
                        let (nb, nk) = if is_left {
                            (*right, face.normal3())
                        } else {
                            (*left, [-face.normal[0], -face.normal[1], S::zero()])
                        };
                        let other = side_table(bases, nb, side.opposite());
                        out.push((k, k, pair_block(&own.table, &own.table, &own.rule, jac * half, |u, v| interface_integrand(&nk, u, v))));
                        out.push((k, nb, pair_block(&own.table, &other.table, &own.rule, -jac * half, |u, v| interface_integrand(&nk, u, v))));
                    }
                    FaceKind::Boundary { tag, .. } => {
                        let n = face.normal3();
                        let m = pair_block(&own.table, &own.table, &own.rule, jac, |u, v| {
                            let (e, h) = split6(u);
                            let (tv, tw) = split6(v);
                            match tag {
                                BoundaryTag::Impedance { beta, .. } => {
                                    let e_star = cross3(&h, &n).map(|c| c * *beta);
                                    -dot3(&cross3(&n, &sub(&e, &e_star)), &tw)
                                }
                                BoundaryTag::Symmetry => dot3(&cross3(&n, &h), &tv),
                            }
                        });
                        out.push((k, k, m));
                    }
                }
            }
            Ok(out)
        })
        .collect();
    let mut matrix = BlockSparseMatrix::new(&vec![dofs.n_basis; dofs.n_elements]);
    accumulate(&mut matrix, parts.into_iter().collect::<Result<Vec<_>, _>>()?);
    Ok(matrix)
}

fn sub<S: Scalar>(a: &Vec3<S>, b: &Vec3<S>) -> Vec3<S> {
    crate::scalar::sub3(a, b)
}

/// Block-diagonal matrix of the slab triple norm: weighted `L2` masses at both
/// ends of the slab plus `2 beta |n x H|^2` on impedance faces.
pub fn assemble_triple_norm<S: Scalar>(mesh: &Mesh<S>, bases: &BasisSet<S>) -> Result<BlockSparseMatrix<S>, AssemblyError> {
    let dofs = dofs_for(mesh, bases)?;
    let t_half = bases.step * S::lit(0.5);
    let mut matrix = BlockSparseMatrix::new(&vec![dofs.n_basis; dofs.n_elements]);
    let parts: Vec<Contribution<S>> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let el = mesh.element(e);
            let mat = el.material;
            let jac = el.bbox.area() / S::lit(4.0);
            let mass = |u: &[S; 6], v: &[S; 6]| {
                mat.eps * (u[0] * v[0] + u[1] * v[1] + u[2] * v[2]) + mat.mu * (u[3] * v[3] + u[4] * v[4] + u[5] * v[5])
            };
            let tabs = &bases.class(e).tables;
            vec![
                (e, e, pair_block(&tabs.start_lo.table, &tabs.start_lo.table, &tabs.start_lo.rule, jac, mass)),
                (e, e, pair_block(&tabs.end_lo.table, &tabs.end_lo.table, &tabs.end_lo.rule, jac, mass)),
            ]
        })
        .collect();
    accumulate(&mut matrix, parts);
    let faces: Vec<Contribution<S>> = mesh
        .faces()
        .par_iter()
        .filter_map(|face| match &face.kind {
            FaceKind::Boundary { element, tag: BoundaryTag::Impedance { beta, .. } } if *beta > S::zero() => {
                let n = face.normal3();
                let t = side_table(bases, *element, face.owner_side());
                let jac = face_jacobian(face.length(), t_half) * S::lit(2.0) * *beta;
                let m = pair_block(&t.table, &t.table, &t.rule, jac, |u, v| {
                    dot3(&cross3(&n, &[u[3], u[4], u[5]]), &cross3(&n, &[v[3], v[4], v[5]]))
                });
                Some(vec![(*element, *element, m)])
            }
            _ => None,
        })
        .collect();
    accumulate(&mut matrix, faces);
    Ok(matrix)
}

/// Values of the slab-start data of element `e` at the points of its `p+3` start-plane rule.
pub fn prev_trace<S: Scalar>(prev: PrevData<'_, S>, mesh: &Mesh<S>, bases: &BasisSet<S>, e: usize) -> Vec<[S; 6]> {
    let start = &bases.class(e).tables.start_hi;
    let el = mesh.element(e);
    match prev {
        PrevData::Initial(f) => start
            .rule
            .points
            .iter()
            .map(|p| {
                let x = el.to_physical(p[0], p[1]);
                f(x[0], x[1])
            })
            .collect(),
        PrevData::State(state) => {
            let pb = state.bases();
            let end = &pb.class(e).tables.end_hi;
            if end.rule.points == start.rule.points && pb.n_elements() == mesh.n_elements() {
                end.table.combine(state.element_coeffs(e))
            } else {
                let t = state.t_hi();
                start
                    .rule
                    .points
                    .iter()
                    .map(|p| {
                        let x = el.to_physical(p[0], p[1]);
                        state.eval_in_element(e, x[0], x[1], t)
                    })
                    .collect()
            }
        }
    }
}

/// Physical point and time of a side-rule node.
fn side_point<S: Scalar>(mesh: &Mesh<S>, e: usize, side: Side, node: &[S; 2], t_lo: S, t_half: S) -> (S, S, S) {
    let r = side.reference_point(node[0]);
    let x = mesh.element(e).to_physical(r[0], r[1]);
    (x[0], x[1], t_lo + t_half * (node[1] + S::one()))
}

/// Right-hand side: temporal term against the slab-start data (`p+3` rule) and
/// `-int (n x g) . w` on excited boundary faces (`p+3` rule).
pub fn assemble_r<S: Scalar>(
    mesh: &Mesh<S>,
    bases: &BasisSet<S>,
    partition: &TimePartition<S>,
    slab: usize,
    prev: PrevData<'_, S>,
) -> Result<Vec<S>, AssemblyError> {
    let dofs = dofs_for(mesh, bases)?;
    let (t_lo, _) = slab_interval(bases, partition, slab)?;
    let t_half = bases.step * S::lit(0.5);
    let element_faces = mesh.element_faces();
    let blocks: Vec<Vec<S>> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let el = mesh.element(e);
            let mat = el.material;
            let tabs = &bases.class(e).tables;
            let prev_vals = prev_trace(prev, mesh, bases, e);
            let jac = el.bbox.area() / S::lit(4.0);
            let mut out = vec![S::zero(); dofs.n_basis];
            for (i, o) in out.iter_mut().enumerate() {
                let mut acc = S::zero();
                for (q, w) in tabs.start_hi.rule.weights.iter().enumerate() {
                    let v = tabs.start_hi.table.get(i, q);
                    let u = &prev_vals[q];
                    acc += *w
                        * (mat.eps * (u[0] * v[0] + u[1] * v[1] + u[2] * v[2])
                            + mat.mu * (u[3] * v[3] + u[4] * v[4] + u[5] * v[5]));
                }
                *o = jac * acc;
            }
            for side in Side::ALL {
                let Some(fi) = element_faces[e][side.index()] else { continue };
                let face = &mesh.faces()[fi];
                let FaceKind::Boundary { tag, .. } = &face.kind else { continue };
                let Some(g) = tag.excitation() else { continue };
                let n = face.normal3();
                let t = &tabs.side_hi[side.index()];
                let jac = face_jacobian(face.length(), t_half);
                let ng: Vec<Vec3<S>> = t
                    .rule
                    .points
                    .iter()
                    .map(|p| {
                        let (x, y, tt) = side_point(mesh, e, side, p, t_lo, t_half);
                        cross3(&n, &[S::zero(), S::zero(), (g.0)(x, y, tt)])
                    })
                    .collect();
                for (i, o) in out.iter_mut().enumerate() {
                    let mut acc = S::zero();
                    for (q, w) in t.rule.weights.iter().enumerate() {
                        let v = t.table.get(i, q);
                        acc += *w * dot3(&ng[q], &[v[3], v[4], v[5]]);
                    }
                    *o -= jac * acc;
                }
            }
            out
        })
        .collect();
    Ok(blocks.concat())
}

/// Matrix and right-hand side of one slab.
pub fn assemble_slab<S: Scalar>(
    mesh: &Mesh<S>,
    bases: &BasisSet<S>,
    partition: &TimePartition<S>,
    slab: usize,
    prev: PrevData<'_, S>,
) -> Result<SlabSystem<S>, AssemblyError> {
    let dofs = dofs_for(mesh, bases)?;
    slab_interval(bases, partition, slab)?;
    let matrix = Arc::new(assemble_b(mesh, bases)?);
    let rhs = assemble_r(mesh, bases, partition, slab, prev)?;
    Ok(SlabSystem { dofs, matrix, rhs })
}

/// Largest entry-wise difference of two block matrices relative to the largest entry of `a`.
pub fn relative_max_difference<S: Scalar>(a: &BlockSparseMatrix<S>, b: &BlockSparseMatrix<S>) -> S {
    let (da, db) = (a.to_dense(), b.to_dense());
    let diff = da.as_slice().iter().zip(db.as_slice()).fold(S::zero(), |m, (x, y)| m.max((*x - *y).abs()));
    diff / da.max_abs().max(S::min_positive_value())
}

/// Relative change of `B` when every low-order rule gains one node per direction.
pub fn quadrature_exactness_gap<S: Scalar>(mesh: &Mesh<S>, step: S, p: usize, variant: Variant) -> Result<S, AssemblyError> {
    let base = BasisSet::build(mesh, step, p, variant, true)?;
    let finer = BasisSet::build_with_rules(mesh, step, p, variant, true, p + 2, p + 3)?;
    Ok(relative_max_difference(&assemble_b(mesh, &base)?, &assemble_b(mesh, &finer)?))
}

/// `max_i |B(U; v_i) - R(v_i)| / max_i |R(v_i)|` for a field `U` given at physical
/// points, with all integrals on the `p+3` rules. Vanishes up to quadrature error
/// when `U` solves the boundary value problem.
pub fn consistency_residual<S: Scalar>(
    mesh: &Mesh<S>,
    bases: &BasisSet<S>,
    partition: &TimePartition<S>,
    slab: usize,
    exact: &(dyn Fn(S, S, S) -> [S; 6] + Sync),
) -> Result<S, AssemblyError> {
    let dofs = dofs_for(mesh, bases)?;
    let (t_lo, _) = slab_interval(bases, partition, slab)?;
    let t_half = bases.step * S::lit(0.5);
    let start = |x: S, y: S| exact(x, y, t_lo);
    let rhs = assemble_r(mesh, bases, partition, slab, PrevData::Initial(&start))?;
    let mut applied = vec![S::zero(); dofs.n_dofs()];
    // temporal term with the exact trace
    for e in 0..mesh.n_elements() {
        let el = mesh.element(e);
        let mat = el.material;
        let tab = &bases.class(e).tables.start_hi;
        let jac = el.bbox.area() / S::lit(4.0);
        for i in 0..dofs.n_basis {
            let mut acc = S::zero();
            for (q, w) in tab.rule.weights.iter().enumerate() {
                let p = tab.rule.points[q];
                let x = el.to_physical(p[0], p[1]);
                let u = exact(x[0], x[1], t_lo);
                let v = tab.table.get(i, q);
                acc += *w
                    * (mat.eps * (u[0] * v[0] + u[1] * v[1] + u[2] * v[2]) + mat.mu * (u[3] * v[3] + u[4] * v[4] + u[5] * v[5]));
            }
            applied[dofs.global(e, i)] += jac * acc;
        }
    }
    for face in mesh.faces() {
        let n = face.normal3();
        let side = face.owner_side();
        let jac = face_jacobian(face.length(), t_half);
        match &face.kind {
            FaceKind::Interior { left, right, .. } => {
                // the exact field is single valued: only the jump of a periodic
                // image could contribute
                let tl = &bases.class(*left).tables.side_hi[side.index()];
                let tr = &bases.class(*right).tables.side_hi[side.opposite().index()];
                for (q, w) in tl.rule.weights.iter().enumerate() {
                    let (x, y, t) = side_point(mesh, *left, side, &tl.rule.points[q], t_lo, t_half);
                    let ul = exact(x, y, t);
                    let (x, y, t) = side_point(mesh, *right, side.opposite(), &tl.rule.points[q], t_lo, t_half);
                    let ur = exact(x, y, t);
                    let jump: [S; 6] = std::array::from_fn(|c| ul[c] - ur[c]);
                    for i in 0..dofs.n_basis {
                        let avg = |t: &Tabulated<QuadRule2D<S>, S>| interface_integrand(&n, &jump, t.table.get(i, q));
                        applied[dofs.global(*left, i)] += jac * *w * S::lit(0.5) * avg(tl);
                        applied[dofs.global(*right, i)] += jac * *w * S::lit(0.5) * avg(tr);
                    }
                }
            }
            FaceKind::Boundary { element, tag } => {
                let t = &bases.class(*element).tables.side_hi[side.index()];
                for (q, w) in t.rule.weights.iter().enumerate() {
                    let (x, y, tt) = side_point(mesh, *element, side, &t.rule.points[q], t_lo, t_half);
                    let u = exact(x, y, tt);
                    for i in 0..dofs.n_basis {
                        applied[dofs.global(*element, i)] += jac * *w * boundary_integrand(tag, &n, &u, t.table.get(i, q));
                    }
                }
            }
        }
    }
    let scale = rhs.iter().fold(S::zero(), |m, v| m.max(v.abs())).max(S::min_positive_value());
    let gap = applied.iter().zip(&rhs).fold(S::zero(), |m, (a, b)| m.max((*a - *b).abs()));
    Ok(gap / scale)
}

/// Writes `row,col,value` lines for every stored entry.
pub fn write_matrix<S: Scalar, W: Write>(matrix: &BlockSparseMatrix<S>, mut w: W) -> io::Result<()> {
    writeln!(w, "row,col,value")?;
    for (r, c, v) in matrix.triplets() {
        writeln!(w, "{r},{c},{v:.16e}")?;
    }
    Ok(())
}
