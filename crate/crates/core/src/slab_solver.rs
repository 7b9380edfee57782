//! Per-slab linear solves, the implicit time loop and energy bookkeeping.

use std::io::{self, Write};
use std::sync::Arc;

use rayon::prelude::*;

use crate::assembly::{assemble_b, assemble_r, assemble_triple_norm, prev_trace, slab_interval, AssemblyError, DofMap, PrevData, SlabSystem};
use crate::geometry::{BoundaryTag, FaceKind, Mesh, TimePartition};
use crate::linalg::{
    block_bandwidths, block_rcm_order, cholesky, max_eigenvalue_spd, norm2, BandedLu, BlockJacobiGmres, BlockSparseMatrix, DenseMatrix, LinalgError,
    LuFactors,
};
use crate::quadrature::QuadRule2D;
use crate::scalar::{cross3, dot3, Scalar};
use crate::trefftz::{BasisSet, BasisTables, LocalBasis, LocalFrame, TrefftzError, Variant};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolveError {
    #[error("slab matrix is singular: {0}")]
    Singular(#[from] LinalgError),
    #[error("linear solve reached relative residual {achieved:e}, required {required:e}")]
    NotConverged { achieved: f64, required: f64 },
    #[error("time {t} lies outside the slab [{lo}, {hi}]")]
    OutsideSlab { t: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Basis(#[from] TrefftzError),
}

/// Systems up to this size are factored densely.
pub const DENSE_LIMIT: usize = 1500;
/// Largest band factorization kept in memory, in stored entries.
pub const BAND_STORAGE_LIMIT: usize = 1 << 26;

enum Factorization<S> {
    Dense(LuFactors<S>),
    Banded(BandedLu<S>),
    Iterative(BlockJacobiGmres<S>),
}

/// Factorization of a slab matrix, reusable for every slab with the same matrix.
pub struct SlabSolver<S> {
    matrix: Arc<BlockSparseMatrix<S>>,
    factors: Factorization<S>,
    tol: S,
}

impl<S: Scalar> SlabSolver<S> {
    pub fn new(matrix: Arc<BlockSparseMatrix<S>>) -> Result<Self, SolveError> {
        Self::with_dense_limit(matrix, DENSE_LIMIT)
    }

    pub fn with_dense_limit(matrix: Arc<BlockSparseMatrix<S>>, dense_limit: usize) -> Result<Self, SolveError> {
        let n = matrix.dim();
        let factors = if n <= dense_limit {
            Factorization::Dense(LuFactors::factor(&matrix.to_dense())?)
        } else {
            let natural: Vec<usize> = (0..matrix.n_blocks()).collect();
            let rcm = block_rcm_order(&matrix);
            let cost = |o: &[usize]| {
                let (kl, ku) = block_bandwidths(&matrix, o);
                BandedLu::<S>::storage(n, kl, ku)
            };
            let (order, storage) = [natural, rcm].into_iter().map(|o| (cost(&o), o)).min_by_key(|(c, _)| *c).map(|(c, o)| (o, c)).unwrap();
            if storage <= BAND_STORAGE_LIMIT {
                Factorization::Banded(BandedLu::factor(&matrix, &order)?)
            } else {
                Factorization::Iterative(BlockJacobiGmres::new(&matrix)?)
            }
        };
        Ok(Self { matrix, factors, tol: S::solve_tol() })
    }

    pub fn matrix(&self) -> &BlockSparseMatrix<S> {
        &self.matrix
    }

    /// `"dense"`, `"banded"` or `"gmres"`.
    pub fn method(&self) -> &'static str {
        match self.factors {
            Factorization::Dense(_) => "dense",
            Factorization::Banded(_) => "banded",
            Factorization::Iterative(_) => "gmres",
        }
    }

    fn relative_residual(&self, x: &[S], b: &[S], bnorm: S) -> S {
        let ax = self.matrix.matvec(x);
        let r: Vec<S> = b.iter().zip(&ax).map(|(bi, ai)| *bi - *ai).collect();
        norm2(&r) / bnorm
    }

    /// Solves to relative residual `S::solve_tol()` or fails.
    pub fn solve(&self, b: &[S]) -> Result<Vec<S>, SolveError> {
        let bnorm = norm2(b);
        if bnorm == S::zero() {
            return Ok(vec![S::zero(); b.len()]);
        }
        let mut x = match &self.factors {
            Factorization::Dense(lu) => lu.solve(b),
            Factorization::Banded(lu) => lu.solve(b),
            Factorization::Iterative(g) => g.solve(&self.matrix, b, None, self.tol * S::lit(0.5)).0,
        };
        // iterative refinement
        for _ in 0..4 {
            if self.relative_residual(&x, b, bnorm) <= self.tol {
                break;
            }
            let ax = self.matrix.matvec(&x);
            let r: Vec<S> = b.iter().zip(&ax).map(|(bi, ai)| *bi - *ai).collect();
            match &self.factors {
                Factorization::Dense(lu) => {
                    let d = lu.solve(&r);
                    x.iter_mut().zip(d).for_each(|(xi, di)| *xi += di);
                }
                Factorization::Banded(lu) => {
                    let d = lu.solve(&r);
                    x.iter_mut().zip(d).for_each(|(xi, di)| *xi += di);
                }
                Factorization::Iterative(g) => {
                    x = g.solve(&self.matrix, b, Some(x), self.tol * S::lit(0.5)).0;
                }
            }
        }
        let achieved = self.relative_residual(&x, b, bnorm);
        if !(achieved <= self.tol) {
            return Err(SolveError::NotConverged { achieved: achieved.as_f64(), required: self.tol.as_f64() });
        }
        Ok(x)
    }
}

/// Solves one assembled slab system.
pub fn solve_slab<S: Scalar>(system: &SlabSystem<S>) -> Result<Vec<S>, SolveError> {
    SlabSolver::new(system.matrix.clone())?.solve(&system.rhs)
}

/// Discrete fields on one slab: basis coefficients plus the handles needed to evaluate them.
#[derive(Debug, Clone)]
pub struct FieldState<S> {
    slab: usize,
    t_lo: S,
    t_hi: S,
    coeffs: Vec<S>,
    mesh: Arc<Mesh<S>>,
    bases: Arc<BasisSet<S>>,
}

impl<S: Scalar> FieldState<S> {
    pub fn new(slab: usize, t_lo: S, t_hi: S, coeffs: Vec<S>, mesh: Arc<Mesh<S>>, bases: Arc<BasisSet<S>>) -> Self {
        assert_eq!(coeffs.len(), mesh.n_elements() * bases.n_basis(), "coefficient vector has the wrong length");
        Self { slab, t_lo, t_hi, coeffs, mesh, bases }
    }

    pub fn slab(&self) -> usize {
        self.slab
    }

    pub fn t_lo(&self) -> S {
        self.t_lo
    }

    pub fn t_hi(&self) -> S {
        self.t_hi
    }

    pub fn coeffs(&self) -> &[S] {
        &self.coeffs
    }

    pub fn mesh(&self) -> &Arc<Mesh<S>> {
        &self.mesh
    }

    pub fn bases(&self) -> &Arc<BasisSet<S>> {
        &self.bases
    }

    pub fn dofs(&self) -> DofMap {
        DofMap::new(self.mesh.n_elements(), self.bases.n_basis())
    }

    pub fn element_coeffs(&self, e: usize) -> &[S] {
        &self.coeffs[self.dofs().range(e)]
    }

    pub fn frame(&self, e: usize) -> LocalFrame<S> {
        LocalFrame::for_element(self.mesh.element(e), self.t_lo, self.t_hi)
    }

    pub fn eval_local(&self, e: usize, x: &[S; 4]) -> [S; 6] {
        let mut out = [S::zero(); 6];
        for (c, f) in self.element_coeffs(e).iter().zip(self.bases.class(e).basis.functions()) {
            if *c == S::zero() {
                continue;
            }
            let v = f.eval_local(x);
            for k in 0..6 {
                out[k] += *c * v[k];
            }
        }
        out
    }

    /// Fields of element `e` at a physical point (extrapolated outside the element).
    pub fn eval_in_element(&self, e: usize, x: S, y: S, t: S) -> [S; 6] {
        self.eval_local(e, &self.frame(e).to_local(x, y, t))
    }

    /// Fields at a physical point, or `None` outside the mesh.
    pub fn eval(&self, x: S, y: S, t: S) -> Option<[S; 6]> {
        self.mesh.locate(x, y).map(|e| self.eval_in_element(e, x, y, t))
    }

    /// Values at the points of a reference-plane rule and local time `tau`.
    fn plane_values(&self, e: usize, rule: &QuadRule2D<S>, tau: S) -> Vec<[S; 6]> {
        rule.points.iter().map(|p| self.eval_local(e, &[p[0], p[1], S::zero(), tau])).collect()
    }

    fn local_time(&self, t: S) -> Result<S, SolveError> {
        let h = (self.t_hi - self.t_lo) * S::lit(0.5);
        let tau = (t - self.t_lo - h) / h;
        let tol = S::epsilon() * S::lit(64.0);
        if tau < -S::one() - tol || tau > S::one() + tol {
            return Err(SolveError::OutsideSlab { t: t.as_f64(), lo: self.t_lo.as_f64(), hi: self.t_hi.as_f64() });
        }
        Ok(tau.max(-S::one()).min(S::one()))
    }
}

fn energy_density<S: Scalar>(eps: S, mu: S, u: &[S; 6]) -> S {
    eps * (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]) + mu * (u[3] * u[3] + u[4] * u[4] + u[5] * u[5])
}

fn plane_energy<S: Scalar>(rule: &QuadRule2D<S>, area: S, eps: S, mu: S, vals: &[[S; 6]]) -> S {
    let jac = area / S::lit(4.0);
    S::lit(0.5) * jac * rule.weights.iter().zip(vals).map(|(w, u)| *w * energy_density(eps, mu, u)).sum::<S>()
}

/// `1/2 int eps |E(t)|^2 + mu |H(t)|^2` with the `p+1` element rule; at the slab
/// ends this is the one-sided limit from inside the slab.
pub fn compute_energy<S: Scalar>(state: &FieldState<S>, t: S) -> Result<S, SolveError> {
    let tau = state.local_time(t)?;
    let mesh = &state.mesh;
    let parts: Vec<S> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let el = mesh.element(e);
            let tabs = &state.bases.class(e).tables;
            let (rule, vals) = if tau == -S::one() {
                (&tabs.start_lo.rule, tabs.start_lo.table.combine(state.element_coeffs(e)))
            } else if tau == S::one() {
                (&tabs.end_lo.rule, tabs.end_lo.table.combine(state.element_coeffs(e)))
            } else {
                (&tabs.start_lo.rule, state.plane_values(e, &tabs.start_lo.rule, tau))
            };
            plane_energy(rule, el.bbox.area(), el.material.eps, el.material.mu, &vals)
        })
        .collect();
    Ok(parts.into_iter().sum())
}

/// Energy of slab-start data (initial fields or the previous state's end trace)
/// on the `p+3` start-plane rule used by the right-hand side.
pub fn prev_energy<S: Scalar>(prev: PrevData<'_, S>, mesh: &Mesh<S>, bases: &BasisSet<S>) -> S {
    (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let el = mesh.element(e);
            let vals = prev_trace(prev, mesh, bases, e);
            plane_energy(&bases.class(e).tables.start_hi.rule, el.bbox.area(), el.material.eps, el.material.mu, &vals)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum()
}

/// One row of the energy ledger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyRow<S> {
    pub n: usize,
    pub t_start: S,
    pub t_end: S,
    /// Energy of the slab-start data the slab was driven by.
    pub energy_prev: S,
    pub energy_start: S,
    pub energy_end: S,
    /// `int beta |n x H|^2 + (n x g) . H` over the boundary and the slab.
    pub boundary_flux: S,
    pub jump_e: S,
    pub jump_h: S,
    pub identity_residual: S,
}

/// Evaluates every term of the discrete energy balance of one slab.
pub fn energy_balance<S: Scalar>(prev: PrevData<'_, S>, state: &FieldState<S>) -> EnergyRow<S> {
    let mesh = &state.mesh;
    let bases = &state.bases;
    let half = S::lit(0.5);
    let t_half = (state.t_hi - state.t_lo) * half;
    let energy_prev = prev_energy(prev, mesh, bases);
    let jumps: Vec<(S, S)> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let el = mesh.element(e);
            let tab = &bases.class(e).tables.start_hi;
            let p = prev_trace(prev, mesh, bases, e);
            let u = tab.table.combine(state.element_coeffs(e));
            let jac = el.bbox.area() / S::lit(4.0);
            let mut je = S::zero();
            let mut jh = S::zero();
            for (q, w) in tab.rule.weights.iter().enumerate() {
                let d: [S; 6] = std::array::from_fn(|k| u[q][k] - p[q][k]);
                je += *w * el.material.eps * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
                jh += *w * el.material.mu * (d[3] * d[3] + d[4] * d[4] + d[5] * d[5]);
            }
            (half * jac * je, half * jac * jh)
        })
        .collect();
    let (jump_e, jump_h) = jumps.into_iter().fold((S::zero(), S::zero()), |a, b| (a.0 + b.0, a.1 + b.1));
    let flux: Vec<S> = mesh
        .faces()
        .par_iter()
        .map(|face| {
            let FaceKind::Boundary { element, tag: BoundaryTag::Impedance { beta, g } } = &face.kind else {
                return S::zero();
            };
            let side = face.owner_side();
            let n = face.normal3();
            let tabs = &bases.class(*element).tables;
            let jac = face.length() * half * t_half;
            let coeffs = state.element_coeffs(*element);
            let mut acc = S::zero();
            if *beta > S::zero() {
                let t = &tabs.side_lo[side.index()];
                let vals = t.table.combine(coeffs);
                for (w, u) in t.rule.weights.iter().zip(&vals) {
                    let nh = cross3(&n, &[u[3], u[4], u[5]]);
                    acc += *w * *beta * dot3(&nh, &nh);
                }
            }
            if let Some(g) = g {
                let t = &tabs.side_hi[side.index()];
                let vals = t.table.combine(coeffs);
                let el = mesh.element(*element);
                for ((w, u), pt) in t.rule.weights.iter().zip(&vals).zip(&t.rule.points) {
                    let r = side.reference_point(pt[0]);
                    let x = el.to_physical(r[0], r[1]);
                    let tt = state.t_lo + t_half * (pt[1] + S::one());
                    let ng = cross3(&n, &[S::zero(), S::zero(), (g.0)(x[0], x[1], tt)]);
                    acc += *w * dot3(&ng, &[u[3], u[4], u[5]]);
                }
            }
            jac * acc
        })
        .collect();
    let boundary_flux: S = flux.into_iter().sum();
    let energy_start = compute_energy(state, state.t_lo).expect("slab start");
    let energy_end = compute_energy(state, state.t_hi).expect("slab end");
    let identity_residual = (energy_end - energy_prev + boundary_flux + jump_e + jump_h).abs();
    EnergyRow {
        n: state.slab,
        t_start: state.t_lo,
        t_end: state.t_hi,
        energy_prev,
        energy_start,
        energy_end,
        boundary_flux,
        jump_e,
        jump_h,
        identity_residual,
    }
}

/// `|E(t^n-) - E_prev(t^{n-1}) + flux + jumps|`: zero for discrete solutions.
pub fn energy_identity_residual<S: Scalar>(prev: PrevData<'_, S>, next: &FieldState<S>) -> S {
    energy_balance(prev, next).identity_residual
}

/// Per-slab energy bookkeeping of a run.
#[derive(Debug, Clone, Default)]
pub struct EnergyLedger<S> {
    pub initial_energy: S,
    pub rows: Vec<EnergyRow<S>>,
}

impl<S: Scalar> EnergyLedger<S> {
    /// Largest `identity_residual / max(1, energy)` over all slabs.
    pub fn max_relative_identity_residual(&self) -> S {
        self.rows
            .iter()
            .map(|r| r.identity_residual / S::one().max(r.energy_prev).max(r.energy_end))
            .fold(S::zero(), S::max)
    }

    /// Whether end-of-slab energies never grow, starting from the initial energy,
    /// up to `rel_tol * max(1, E)`.
    pub fn is_monotone(&self, rel_tol: S) -> bool {
        let mut last = self.initial_energy;
        for r in &self.rows {
            if r.energy_end > last + rel_tol * S::one().max(last) {
                return false;
            }
            last = r.energy_end;
        }
        true
    }

    pub fn final_energy(&self) -> S {
        self.rows.last().map_or(self.initial_energy, |r| r.energy_end)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "n,t_start,t_end,energy_start,energy_end,boundary_flux,jump_E,jump_H,identity_residual")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.n, r.t_start, r.t_end, r.energy_start, r.energy_end, r.boundary_flux, r.jump_e, r.jump_h, r.identity_residual
            )?;
        }
        Ok(())
    }
}

/// Assembles, solves and wraps one slab.
pub fn advance<S: Scalar>(
    prev: PrevData<'_, S>,
    mesh: &Arc<Mesh<S>>,
    bases: &Arc<BasisSet<S>>,
    partition: &TimePartition<S>,
    slab: usize,
    solver: &SlabSolver<S>,
) -> Result<FieldState<S>, SolveError> {
    let (t_lo, t_hi) = slab_interval(bases, partition, slab)?;
    let rhs = assemble_r(mesh, bases, partition, slab, prev)?;
    let coeffs = solver.solve(&rhs)?;
    Ok(FieldState::new(slab, t_lo, t_hi, coeffs, mesh.clone(), bases.clone()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub degree: usize,
    pub variant: Variant,
    pub orthonormalize: bool,
}

impl RunOptions {
    pub fn new(degree: usize) -> Self {
        Self { degree, variant: Variant::DivFreeTM2D, orthonormalize: true }
    }
}

/// States of every slab and the energy ledger of a run.
#[derive(Debug, Clone)]
pub struct RunResult<S> {
    pub states: Vec<FieldState<S>>,
    pub ledger: EnergyLedger<S>,
}

/// Bases and factorization for one slab length.
struct StepCache<S> {
    bases: Arc<BasisSet<S>>,
    solver: SlabSolver<S>,
}

fn step_cache<S: Scalar>(mesh: &Mesh<S>, step: S, opts: &RunOptions) -> Result<StepCache<S>, SolveError> {
    let bases = Arc::new(BasisSet::build(mesh, step, opts.degree, opts.variant, opts.orthonormalize)?);
    let matrix = Arc::new(assemble_b(mesh, &bases)?);
    Ok(StepCache { solver: SlabSolver::new(matrix)?, bases })
}

/// The implicit time loop. Slabs of equal length share bases and one factorization.
pub fn run<S: Scalar>(
    mesh: Arc<Mesh<S>>,
    partition: &TimePartition<S>,
    opts: RunOptions,
    initial: &(dyn Fn(S, S) -> [S; 6] + Sync),
) -> Result<RunResult<S>, SolveError> {
    run_with(mesh, partition, opts, initial, |_| {})
}

/// [`run`] with a callback invoked on every new state.
pub fn run_with<S: Scalar>(
    mesh: Arc<Mesh<S>>,
    partition: &TimePartition<S>,
    opts: RunOptions,
    initial: &(dyn Fn(S, S) -> [S; 6] + Sync),
    mut on_state: impl FnMut(&FieldState<S>),
) -> Result<RunResult<S>, SolveError> {
    // uniform knots give steps that differ in the last bits; share one cache among them
    let mut caches: Vec<(S, StepCache<S>)> = Vec::new();
    let mut states: Vec<FieldState<S>> = Vec::with_capacity(partition.n_slabs());
    let mut ledger = EnergyLedger { initial_energy: S::zero(), rows: Vec::with_capacity(partition.n_slabs()) };
    for n in 1..=partition.n_slabs() {
        let step = partition.step(n);
        let tol = S::epsilon() * S::lit(64.0) * step;
        let idx = match caches.iter().position(|(h, _)| (*h - step).abs() <= tol) {
            Some(i) => i,
            None => {
                caches.push((step, step_cache(&mesh, step, &opts)?));
                caches.len() - 1
            }
        };
        let cache = &caches[idx].1;
        let prev = match states.last() {
            Some(s) => PrevData::State(s),
            None => PrevData::Initial(initial),
        };
        let state = advance(prev, &mesh, &cache.bases, partition, n, &cache.solver)?;
        let row = energy_balance(prev, &state);
        if n == 1 {
            ledger.initial_energy = row.energy_prev;
        }
        ledger.rows.push(row);
        on_state(&state);
        states.push(state);
    }
    Ok(RunResult { states, ledger })
}

/// `x^T B x` and the triple norm `|||x|||^2` for repeated coercivity checks.
pub struct CoercivityCheck<S> {
    pub b: BlockSparseMatrix<S>,
    pub norm: BlockSparseMatrix<S>,
}

impl<S: Scalar> CoercivityCheck<S> {
    pub fn new(mesh: &Mesh<S>, bases: &BasisSet<S>) -> Result<Self, SolveError> {
        Ok(Self { b: assemble_b(mesh, bases)?, norm: assemble_triple_norm(mesh, bases)? })
    }

    /// `(x^T B x, |||x|||^2)`.
    pub fn gap(&self, x: &[S]) -> (S, S) {
        (self.b.quadratic_form(x), self.norm.quadratic_form(x))
    }
}

/// One-shot form of [`CoercivityCheck::gap`].
pub fn coercivity_gap<S: Scalar>(coeffs: &[S], mesh: &Mesh<S>, bases: &BasisSet<S>) -> Result<(S, S), SolveError> {
    Ok(CoercivityCheck::new(mesh, bases)?.gap(coeffs))
}

/// Smallest `C` with `int_{K x I} eps|E|^2 + mu|H|^2 <= C (eps|E(t_lo)|^2 + mu|H(t_lo)|^2)_K`
/// over the span of `basis`: the largest generalized eigenvalue of the
/// space-time mass matrix against the initial-trace mass matrix.
pub fn trefftz_stability_constant<S: Scalar>(basis: &LocalBasis<S>) -> Result<S, SolveError> {
    let p = basis.degree;
    let tables = BasisTables::build(basis, p + 1, p + 3)?;
    let n = basis.len();
    let mat = basis.material;
    let fr = basis.frame;
    let area_jac = fr.half[0] * fr.half[1] * S::lit(2.0) * fr.half[2];
    let gram = |tab: &crate::trefftz::Tabulation<S>, weights: &[S], jac: S| {
        DenseMatrix::from_fn(n, n, |i, j| {
            jac * weights
                .iter()
                .enumerate()
                .map(|(q, w)| {
                    let (a, b) = (tab.get(i, q), tab.get(j, q));
                    *w * (mat.eps * (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) + mat.mu * (a[3] * b[3] + a[4] * b[4] + a[5] * b[5]))
                })
                .sum::<S>()
        })
    };
    let g = gram(&tables.start_hi.table, &tables.start_hi.rule.weights, area_jac);
    let m = gram(&tables.volume_hi.table, &tables.volume_hi.rule.weights, area_jac * fr.t_half);
    let l = cholesky(&g)?;
    // C = lambda_max(L^-1 M L^-T)
    let linv = lower_inverse(&l);
    let t = mat_mul(&mat_mul(&linv, &m), &linv.transpose());
    Ok(max_eigenvalue_spd(&t, 2000))
}

fn lower_inverse<S: Scalar>(l: &DenseMatrix<S>) -> DenseMatrix<S> {
    let n = l.rows();
    let mut inv = DenseMatrix::zeros(n, n);
    for c in 0..n {
        for i in c..n {
            let mut s = if i == c { S::one() } else { S::zero() };
            for k in c..i {
                s -= l[(i, k)] * inv[(k, c)];
            }
            inv[(i, c)] = s / l[(i, i)];
        }
    }
    inv
}

fn mat_mul<S: Scalar>(a: &DenseMatrix<S>, b: &DenseMatrix<S>) -> DenseMatrix<S> {
    DenseMatrix::from_fn(a.rows(), b.cols(), |i, j| (0..a.cols()).map(|k| a[(i, k)] * b[(k, j)]).sum())
}

/// Random-direction lower bound for the same constant, used to cross-check.
pub fn stability_ratio<S: Scalar>(basis: &LocalBasis<S>, coeffs: &[S]) -> Result<S, SolveError> {
    let p = basis.degree;
    let tables = BasisTables::build(basis, p + 1, p + 3)?;
    let mat = basis.material;
    let fr = basis.frame;
    let start = tables.start_hi.table.combine(coeffs);
    let vol = tables.volume_hi.table.combine(coeffs);
    let e0: S = tables.start_hi.rule.weights.iter().zip(&start).map(|(w, u)| *w * energy_density(mat.eps, mat.mu, u)).sum();
    let ev: S = tables.volume_hi.rule.weights.iter().zip(&vol).map(|(w, u)| *w * energy_density(mat.eps, mat.mu, u)).sum();
    Ok(ev * fr.t_half / e0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{apply_periodic_pairing, build_structured_mesh, build_time_partition, Axis, BoundarySpec, MaterialParams, Rect, Side};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(n: usize, len: f64) -> Mesh<f64> {
        build_structured_mesh(n, n, Rect::new(0.0, len, 0.0, len), |_, _| MaterialParams::vacuum()).unwrap()
    }

    #[test]
    fn solver_trivial_cases() {
        let mut m = BlockSparseMatrix::new(&[2, 2]);
        *m.block_mut(0, 0) = DenseMatrix::identity(2);
        *m.block_mut(1, 1) = DenseMatrix::identity(2);
        let m = Arc::new(m);
        for limit in [0, 100] {
            let s = SlabSolver::with_dense_limit(m.clone(), limit).unwrap();
            assert_eq!(s.solve(&[0.0; 4]).unwrap(), vec![0.0; 4]);
            let b = [1.0f64, -2.0, 3.5, 0.25];
            let x = s.solve(&b).unwrap();
            for (a, e) in x.iter().zip(b) {
                assert!((a - e).abs() < 1e-15);
            }
        }
        let mut z = BlockSparseMatrix::<f64>::new(&[2]);
        *z.block_mut(0, 0) = DenseMatrix::zeros(2, 2);
        assert!(matches!(SlabSolver::new(Arc::new(z)), Err(SolveError::Singular(_))));
    }

    #[test]
    fn single_element_constant_field() {
        // E0 = (0,0,1), H0 = 0 on a PEC unit square with p = 0: E stays 1, H stays 0
        let mesh = Arc::new(square(1, 1.0));
        let part = build_time_partition(1.0, 1).unwrap();
        let init = |_: f64, _: f64| [0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let r = run(mesh, &part, RunOptions { degree: 0, variant: Variant::DivFreeTM2D, orthonormalize: false }, &init).unwrap();
        let c = r.states[0].coeffs();
        assert!((c[0] - 1.0).abs() < 1e-14 && c[1].abs() < 1e-14 && c[2].abs() < 1e-14, "{c:?}");
        assert!((r.ledger.rows[0].energy_end - 0.5).abs() < 1e-14);
    }

    #[test]
    fn energy_examples() {
        let pi = std::f64::consts::PI;
        let mesh = Arc::new(square(4, pi));
        let part = build_time_partition(0.1, 1).unwrap();
        let init = |_: f64, _: f64| [0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let r = run(mesh.clone(), &part, RunOptions::new(1), &init).unwrap();
        let s = &r.states[0];
        // the datum is incompatible with PEC walls, so only the data energy is exact
        assert!((r.ledger.initial_energy - pi * pi / 2.0).abs() < 1e-12);
        assert!(compute_energy(s, 0.05).unwrap() > 0.0);
        let end = compute_energy(s, 0.1).unwrap();
        assert!(end > 0.0 && end <= r.ledger.initial_energy);
        assert_eq!(end, r.ledger.rows[0].energy_end);
        assert!(matches!(compute_energy(s, 0.2), Err(SolveError::OutsideSlab { .. })));
        let zero = |_: f64, _: f64| [0.0; 6];
        let r = run(mesh, &part, RunOptions::new(2), &zero).unwrap();
        assert!(r.states[0].coeffs().iter().all(|c| *c == 0.0));
        let row = r.ledger.rows[0];
        assert_eq!((row.energy_end, row.boundary_flux, row.jump_e, row.identity_residual), (0.0, 0.0, 0.0, 0.0));
    }

    fn cavity(x: f64, y: f64, t: f64) -> [f64; 6] {
        let w = 2f64.sqrt();
        [0.0, 0.0, w * x.sin() * y.sin() * (w * t).cos(), -x.sin() * y.cos() * (w * t).sin(), x.cos() * y.sin() * (w * t).sin(), 0.0]
    }

    #[test]
    fn cavity_energy_identity_and_dissipation() {
        let pi = std::f64::consts::PI;
        let mesh = Arc::new(square(4, pi));
        let part = build_time_partition(1.0, 5).unwrap();
        let init = |x: f64, y: f64| cavity(x, y, 0.0);
        let r = run(mesh, &part, RunOptions::new(2), &init).unwrap();
        assert!(r.ledger.max_relative_identity_residual() <= 1e-9);
        assert!(r.ledger.is_monotone(1e-12));
        for row in &r.ledger.rows {
            assert!(row.jump_e >= 0.0 && row.jump_h >= 0.0);
        }
        assert!((r.ledger.initial_energy - pi * pi / 4.0).abs() < 1e-6);
    }

    #[test]
    fn absorbing_and_excited_identity() {
        let mut mesh = build_structured_mesh(3, 2, Rect::new(0.0, 3.0, 0.0, 2.0), |x, _| {
            if x > 2.0 { MaterialParams::new(4.0, 1.0) } else { MaterialParams::vacuum() }
        })
        .unwrap();
        let g = crate::geometry::Excitation::new(|_, y, t: f64| (t * 2.0).sin() * (1.0 + y));
        mesh.set_boundary(Side::XLo, BoundarySpec::Impedance { beta: 1.0, g: Some(g) }).unwrap();
        mesh.set_boundary(Side::XHi, BoundarySpec::Absorbing).unwrap();
        mesh.set_boundary(Side::YLo, BoundarySpec::Symmetry).unwrap();
        let mesh = Arc::new(mesh);
        let part = build_time_partition(2.0, 8).unwrap();
        let init = |x: f64, _: f64| [0.0, 0.0, (x * 1.3).cos(), 0.0, 0.2, 0.0];
        let r = run(mesh, &part, RunOptions::new(3), &init).unwrap();
        assert!(r.ledger.max_relative_identity_residual() <= 1e-9);
    }

    #[test]
    fn random_coefficients_violate_identity() {
        let pi = std::f64::consts::PI;
        let mesh = Arc::new(square(3, pi));
        let bases = Arc::new(BasisSet::build(&mesh, 0.2, 2, Variant::DivFreeTM2D, true).unwrap());
        let init = |x: f64, y: f64| cavity(x, y, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let coeffs: Vec<f64> = (0..mesh.n_elements() * bases.n_basis()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = FieldState::new(1, 0.0, 0.2, coeffs, mesh, bases);
        assert!(energy_identity_residual(PrevData::Initial(&init), &s) > 1e-3);
    }

    #[test]
    fn coercivity_equality() {
        let mut mesh = build_structured_mesh(4, 4, Rect::new(0.0, 1.0, 0.0, 1.0), |x, y| {
            if x + y > 1.0 { MaterialParams::new(4.0, 1.0) } else { MaterialParams::new(1.0, 2.0) }
        })
        .unwrap();
        mesh.set_boundary(Side::XLo, BoundarySpec::Absorbing).unwrap();
        mesh.set_boundary(Side::YHi, BoundarySpec::Impedance { beta: 0.7, g: None }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for p in 0..=3 {
            let bases = BasisSet::build(&mesh, 0.1, p, Variant::DivFreeTM2D, true).unwrap();
            let check = CoercivityCheck::new(&mesh, &bases).unwrap();
            for _ in 0..50 {
                let x: Vec<f64> = (0..check.b.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let (b, t) = check.gap(&x);
                assert!((b - 0.5 * t).abs() <= 1e-10 * t, "p={p} {b} {t}");
            }
        }
        assert_eq!(coercivity_gap(&[0.0; 48], &square(2, 1.0), &BasisSet::build(&square(2, 1.0), 0.1, 1, Variant::DivFreeTM2D, true).unwrap()).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn pec_triple_norm_has_no_boundary_part() {
        let mesh = square(2, 1.0);
        let bases = BasisSet::build(&mesh, 0.1, 1, Variant::DivFreeTM2D, true).unwrap();
        let n = assemble_triple_norm(&mesh, &bases).unwrap();
        // orthonormal start traces: start mass is the identity, so the diagonal is 1 + end mass
        let t = n.to_dense();
        for i in 0..t.rows() {
            assert!(t[(i, i)] >= 1.0 - 1e-12);
        }
        assert_eq!(n.pattern().len(), 4);
    }

    #[test]
    fn markov_restart() {
        let pi = std::f64::consts::PI;
        let mesh = Arc::new(square(4, pi));
        let part = build_time_partition(0.8, 4).unwrap();
        let init = |x: f64, y: f64| cavity(x, y, 0.0);
        let opts = RunOptions::new(2);
        let r = run(mesh.clone(), &part, opts, &init).unwrap();
        // restart from the end trace of slab 2 given as plain initial data
        let s2 = r.states[1].clone();
        let t2 = s2.t_hi();
        let saved = move |x: f64, y: f64| s2.eval(x, y, t2).unwrap();
        let tail = TimePartition::from_knots(part.knots()[2..].to_vec()).unwrap();
        let shifted = TimePartition::from_knots(tail.knots().iter().map(|t| t - t2).collect()).unwrap();
        let r2 = run(mesh, &shifted, opts, &saved).unwrap();
        let a = r.states[2].coeffs();
        let b = r2.states[0].coeffs();
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-13 * scale.max(1.0) * 10.0, "{x} {y}");
        }
    }

    #[test]
    fn banded_and_gmres_paths_match_dense() {
        let mesh = apply_periodic_pairing(&square(4, 2.0), Axis::X).unwrap();
        let bases = BasisSet::build(&mesh, 0.3, 2, Variant::DivFreeTM2D, true).unwrap();
        let m = Arc::new(assemble_b(&mesh, &bases).unwrap());
        let b: Vec<f64> = (0..m.dim()).map(|i| (i as f64).cos()).collect();
        let d = SlabSolver::with_dense_limit(m.clone(), usize::MAX).unwrap().solve(&b).unwrap();
        let banded = SlabSolver::with_dense_limit(m.clone(), 0).unwrap();
        assert_eq!(banded.method(), "banded");
        let x = banded.solve(&b).unwrap();
        for (a, e) in x.iter().zip(&d) {
            assert!((a - e).abs() < 1e-10);
        }
        let g = SlabSolver { factors: Factorization::Iterative(BlockJacobiGmres::new(&m).unwrap()), matrix: m, tol: 1e-12 };
        let x = g.solve(&b).unwrap();
        for (a, e) in x.iter().zip(&d) {
            assert!((a - e).abs() < 1e-10);
        }
    }

    #[test]
    fn stability_constant_is_finite_and_bounds_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in 1..=3 {
            let basis = LocalBasis::build(p, Variant::DivFreeTM2D, [0.1, 0.1, 0.5], 0.05, MaterialParams::new(2.0, 1.0), true).unwrap();
            let c: f64 = trefftz_stability_constant(&basis).unwrap();
            assert!(c.is_finite() && c > 0.0);
            for _ in 0..20 {
                let x: Vec<f64> = (0..basis.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                assert!(stability_ratio(&basis, &x).unwrap() <= c * (1.0 + 1e-10));
            }
        }
    }

    #[test]
    fn ledger_csv_layout() {
        let mesh = Arc::new(square(1, 1.0));
        let part = build_time_partition(1.0, 2).unwrap();
        let init = |_: f64, _: f64| [0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let r = run(mesh, &part, RunOptions::new(0), &init).unwrap();
        let mut out = Vec::new();
        r.ledger.write_csv(&mut out).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert_eq!(s.lines().count(), 3);
        assert_eq!(s.lines().next().unwrap(), "n,t_start,t_end,energy_start,energy_end,boundary_flux,jump_E,jump_H,identity_residual");
    }
}
