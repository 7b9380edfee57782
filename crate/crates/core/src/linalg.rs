//! Dense and block-sparse linear algebra for the slab systems.

use rayon::prelude::*;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("matrix is singular to working precision (pivot {pivot} at column {column})")]
    Singular { column: usize, pivot: f64 },
    #[error("matrix is not positive definite at column {0}")]
    NotPositiveDefinite(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> DenseMatrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = S::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> S) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |m, v| m.max(v.abs()))
    }

    /// `y += A x`.
    pub fn gemv_add(&self, x: &[S], y: &mut [S]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.rows) {
            let row = self.row(i);
            let mut acc = S::zero();
            for (a, b) in row.iter().zip(x) {
                acc += *a * *b;
            }
            *yi += acc;
        }
    }

    pub fn matvec(&self, x: &[S]) -> Vec<S> {
        let mut y = vec![S::zero(); self.rows];
        self.gemv_add(x, &mut y);
        y
    }

    pub fn quadratic_form(&self, x: &[S]) -> S {
        dot(x, &self.matvec(x))
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }
}

impl<S> std::ops::Index<(usize, usize)> for DenseMatrix<S> {
    type Output = S;
    fn index(&self, (i, j): (usize, usize)) -> &S {
        &self.data[i * self.cols + j]
    }
}

impl<S> std::ops::IndexMut<(usize, usize)> for DenseMatrix<S> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

pub fn norm2<S: Scalar>(a: &[S]) -> S {
    dot(a, a).sqrt()
}

/// LU factorization with partial pivoting.
#[derive(Debug, Clone)]
pub struct LuFactors<S> {
    n: usize,
    lu: Vec<S>,
    perm: Vec<usize>,
}

impl<S: Scalar> LuFactors<S> {
    pub fn factor(a: &DenseMatrix<S>) -> Result<Self, LinalgError> {
        if a.rows != a.cols {
            return Err(LinalgError::Dimension(format!("{}x{} is not square", a.rows, a.cols)));
        }
        let n = a.rows;
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.max_abs().max(S::min_positive_value());
        for k in 0..n {
            let (p, pv) = (k..n)
                .map(|i| (i, lu[i * n + k].abs()))
                .fold((k, -S::one()), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pv <= scale * S::epsilon() * S::from_usize(n.max(1)) {
                return Err(LinalgError::Singular { column: k, pivot: pv.as_f64() });
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for i in (k + 1)..n {
                let f = lu[i * n + k] / pivot;
                lu[i * n + k] = f;
                if f != S::zero() {
                    for j in (k + 1)..n {
                        let u = lu[k * n + j];
                        lu[i * n + j] -= f * u;
                    }
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [S]) {
        let n = self.n;
        let mut x: Vec<S> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in (i + 1)..n {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc / self.lu[i * n + i];
        }
        b.copy_from_slice(&x);
    }

    pub fn solve(&self, b: &[S]) -> Vec<S> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Lower Cholesky factor `L` with `A = L L^T`.
pub fn cholesky<S: Scalar>(a: &DenseMatrix<S>) -> Result<DenseMatrix<S>, LinalgError> {
    let n = a.rows();
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= S::zero() {
            return Err(LinalgError::NotPositiveDefinite(j));
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix (power iteration).
pub fn max_eigenvalue_spd<S: Scalar>(a: &DenseMatrix<S>, iterations: usize) -> S {
    let n = a.rows();
    if n == 0 {
        return S::zero();
    }
    let mut v: Vec<S> = (0..n).map(|i| S::one() + S::lit(0.01) * S::from_usize(i % 7)).collect();
    let mut lambda = S::zero();
    for _ in 0..iterations {
        let w = a.matvec(&v);
        let nw = norm2(&w);
        if nw == S::zero() {
            return S::zero();
        }
        let next = dot(&v, &w) / dot(&v, &v);
        v = w.into_iter().map(|x| x / nw).collect();
        if (next - lambda).abs() <= S::epsilon() * S::lit(16.0) * next.abs() {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Square matrix of dense blocks on a block-row sparsity pattern.
#[derive(Debug, Clone)]
pub struct BlockSparseMatrix<S> {
    offsets: Vec<usize>,
    rows: Vec<Vec<(usize, DenseMatrix<S>)>>,
}

impl<S: Scalar> BlockSparseMatrix<S> {
    /// Empty matrix with block sizes `sizes`.
    pub fn new(sizes: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        offsets.push(0);
        for s in sizes {
            offsets.push(offsets.last().unwrap() + s);
        }
        Self { offsets, rows: vec![Vec::new(); sizes.len()] }
    }

    pub fn n_blocks(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn block_size(&self, b: usize) -> usize {
        self.offsets[b + 1] - self.offsets[b]
    }

    pub fn offset(&self, b: usize) -> usize {
        self.offsets[b]
    }

    pub fn block(&self, row: usize, col: usize) -> Option<&DenseMatrix<S>> {
        self.rows[row].iter().find(|(c, _)| *c == col).map(|(_, m)| m)
    }

    pub fn block_mut(&mut self, row: usize, col: usize) -> &mut DenseMatrix<S> {
        let (nr, nc) = (self.block_size(row), self.block_size(col));
        let pos = match self.rows[row].iter().position(|(c, _)| *c == col) {
            Some(p) => p,
            None => {
                self.rows[row].push((col, DenseMatrix::zeros(nr, nc)));
                self.rows[row].len() - 1
            }
        };
        &mut self.rows[row][pos].1
    }

    /// Replaces block row `row` wholesale (used by the parallel assembler).
    pub fn set_block_row(&mut self, row: usize, blocks: Vec<(usize, DenseMatrix<S>)>) {
        self.rows[row] = blocks;
    }

    pub fn block_row(&self, row: usize) -> &[(usize, DenseMatrix<S>)] {
        &self.rows[row]
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        let bi = self.offsets.partition_point(|&o| o <= i) - 1;
        let bj = self.offsets.partition_point(|&o| o <= j) - 1;
        self.block(bi, bj).map_or(S::zero(), |m| m[(i - self.offsets[bi], j - self.offsets[bj])])
    }

    pub fn matvec(&self, x: &[S]) -> Vec<S> {
        let mut y = vec![S::zero(); self.dim()];
        let offsets = &self.offsets;
        let chunks: Vec<Vec<S>> = self
            .rows
            .par_iter()
            .enumerate()
            .map(|(r, blocks)| {
                let mut out = vec![S::zero(); offsets[r + 1] - offsets[r]];
                for (c, m) in blocks {
                    m.gemv_add(&x[offsets[*c]..offsets[c + 1]], &mut out);
                }
                out
            })
            .collect();
        for (r, chunk) in chunks.into_iter().enumerate() {
            y[offsets[r]..offsets[r + 1]].copy_from_slice(&chunk);
        }
        y
    }

    pub fn quadratic_form(&self, x: &[S]) -> S {
        dot(x, &self.matvec(x))
    }

    pub fn to_dense(&self) -> DenseMatrix<S> {
        let n = self.dim();
        let mut d = DenseMatrix::zeros(n, n);
        for (r, blocks) in self.rows.iter().enumerate() {
            for (c, m) in blocks {
                for i in 0..m.rows() {
                    for j in 0..m.cols() {
                        d[(self.offsets[r] + i, self.offsets[*c] + j)] += m[(i, j)];
                    }
                }
            }
        }
        d
    }

    pub fn max_abs(&self) -> S {
        self.rows.iter().flatten().fold(S::zero(), |m, (_, b)| m.max(b.max_abs()))
    }

    /// Non-zero blocks as `(row, col)` pairs.
    pub fn pattern(&self) -> Vec<(usize, usize)> {
        let mut p: Vec<_> = self
            .rows
            .iter()
            .enumerate()
            .flat_map(|(r, blocks)| blocks.iter().map(move |(c, _)| (r, *c)))
            .collect();
        p.sort_unstable();
        p
    }

    /// Entries as `(row, col, value)` triples, row-major within blocks.
    pub fn triplets(&self) -> Vec<(usize, usize, S)> {
        let mut out = Vec::new();
        for (r, c) in self.pattern() {
            let m = self.block(r, c).unwrap();
            for i in 0..m.rows() {
                for j in 0..m.cols() {
                    out.push((self.offsets[r] + i, self.offsets[c] + j, m[(i, j)]));
                }
            }
        }
        out
    }
}

/// Right-preconditioned restarted GMRES with block-Jacobi preconditioning.
#[derive(Debug, Clone)]
pub struct BlockJacobiGmres<S> {
    offsets: Vec<usize>,
    diag: Vec<LuFactors<S>>,
    restart: usize,
    max_iter: usize,
}

impl<S: Scalar> BlockJacobiGmres<S> {
    /// Factors the diagonal blocks of `matrix`.
    pub fn new(matrix: &BlockSparseMatrix<S>) -> Result<Self, LinalgError> {
        let diag = (0..matrix.n_blocks())
            .into_par_iter()
            .map(|b| {
                let m = matrix
                    .block(b, b)
                    .cloned()
                    .unwrap_or_else(|| DenseMatrix::zeros(matrix.block_size(b), matrix.block_size(b)));
                LuFactors::factor(&m)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { offsets: matrix.offsets.clone(), diag, restart: 60, max_iter: 3000 })
    }

    pub fn precondition(&self, v: &[S]) -> Vec<S> {
        let o = &self.offsets;
        let chunks: Vec<Vec<S>> = self
            .diag
            .par_iter()
            .enumerate()
            .map(|(b, lu)| lu.solve(&v[o[b]..o[b + 1]]))
            .collect();
        chunks.concat()
    }

    /// Solves `matrix x = b` to `||b - A x|| <= tol ||b||`, starting from `x0`
    /// (or the block-diagonal solution); returns the solution and the achieved
    /// relative residual.
    pub fn solve(&self, matrix: &BlockSparseMatrix<S>, b: &[S], x0: Option<Vec<S>>, tol: S) -> (Vec<S>, S) {
        let n = b.len();
        let bnorm = norm2(b);
        let mut x = vec![S::zero(); n];
        if bnorm == S::zero() {
            return (x, S::zero());
        }
        x = x0.unwrap_or_else(|| self.precondition(b));
        let mut iters = 0;
        loop {
            let ax = matrix.matvec(&x);
            let r: Vec<S> = b.iter().zip(&ax).map(|(bi, ai)| *bi - *ai).collect();
            let beta = norm2(&r);
            if beta <= tol * bnorm || iters >= self.max_iter {
                return (x, beta / bnorm);
            }
            let m = self.restart;
            let mut v: Vec<Vec<S>> = Vec::with_capacity(m + 1);
            v.push(r.iter().map(|ri| *ri / beta).collect());
            let mut h = vec![vec![S::zero(); m]; m + 1];
            let mut cs = vec![S::zero(); m];
            let mut sn = vec![S::zero(); m];
            let mut g = vec![S::zero(); m + 1];
            g[0] = beta;
            let mut k_used = 0;
            let mut zs: Vec<Vec<S>> = Vec::with_capacity(m);
            for k in 0..m {
                let z = self.precondition(&v[k]);
                let mut w = matrix.matvec(&z);
                zs.push(z);
                for pass in 0..2 {
                    for (j, vj) in v.iter().enumerate() {
                        let hij = dot(&w, vj);
                        if pass == 0 {
                            h[j][k] = hij;
                        } else {
                            h[j][k] += hij;
                        }
                        for (wi, vi) in w.iter_mut().zip(vj) {
                            *wi -= hij * *vi;
                        }
                    }
                }
                let hn = norm2(&w);
                h[k + 1][k] = hn;
                for j in 0..k {
                    let t = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                    h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                    h[j][k] = t;
                }
                let denom = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
                if denom == S::zero() {
                    cs[k] = S::one();
                    sn[k] = S::zero();
                } else {
                    cs[k] = h[k][k] / denom;
                    sn[k] = h[k + 1][k] / denom;
                }
                h[k][k] = cs[k] * h[k][k] + sn[k] * h[k + 1][k];
                h[k + 1][k] = S::zero();
                g[k + 1] = -sn[k] * g[k];
                g[k] = cs[k] * g[k];
                k_used = k + 1;
                iters += 1;
                if g[k + 1].abs() <= tol * bnorm * S::lit(0.1) || hn == S::zero() {
                    break;
                }
                v.push(w.into_iter().map(|wi| wi / hn).collect());
            }
            let mut y = vec![S::zero(); k_used];
            for i in (0..k_used).rev() {
                let mut acc = g[i];
                for j in (i + 1)..k_used {
                    acc -= h[i][j] * y[j];
                }
                y[i] = acc / h[i][i];
            }
            for (yi, z) in y.iter().zip(&zs) {
                for (xj, zj) in x.iter_mut().zip(z) {
                    *xj += *yi * *zj;
                }
            }
        }
    }
}

/// Reverse Cuthill-McKee ordering of the block graph; `order[new] = old`.
pub fn block_rcm_order<S: Scalar>(matrix: &BlockSparseMatrix<S>) -> Vec<usize> {
    let n = matrix.n_blocks();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (r, c) in matrix.pattern() {
        if r != c {
            adj[r].push(c);
            adj[c].push(r);
        }
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let start = (0..n).filter(|&i| !seen[i]).min_by_key(|&i| adj[i].len()).unwrap();
        seen[start] = true;
        let mut head = order.len();
        order.push(start);
        while head < order.len() {
            let v = order[head];
            head += 1;
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&u| !seen[u]).collect();
            next.sort_by_key(|&u| adj[u].len());
            for u in next {
                seen[u] = true;
                order.push(u);
            }
        }
    }
    order.reverse();
    order
}

/// Lower and upper dof bandwidths of `matrix` under the block order `order`.
pub fn block_bandwidths<S: Scalar>(matrix: &BlockSparseMatrix<S>, order: &[usize]) -> (usize, usize) {
    let (pos, offsets) = permuted_offsets(matrix, order);
    let (mut kl, mut ku) = (0, 0);
    for (r, c) in matrix.pattern() {
        let (nr, nc) = (pos[r], pos[c]);
        let (r0, r1) = (offsets[nr], offsets[nr + 1] - 1);
        let (c0, c1) = (offsets[nc], offsets[nc + 1] - 1);
        kl = kl.max(r1.saturating_sub(c0));
        ku = ku.max(c1.saturating_sub(r0));
    }
    (kl, ku)
}

fn permuted_offsets<S: Scalar>(matrix: &BlockSparseMatrix<S>, order: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut pos = vec![0; order.len()];
    let mut offsets = Vec::with_capacity(order.len() + 1);
    offsets.push(0);
    for (new, &old) in order.iter().enumerate() {
        pos[old] = new;
        offsets.push(offsets[new] + matrix.block_size(old));
    }
    (pos, offsets)
}

/// Band LU with partial pivoting on a block-permuted copy of a block-sparse matrix.
/// Storage is column-major with `2 kl + ku + 1` rows per column.
#[derive(Debug, Clone)]
pub struct BandedLu<S> {
    n: usize,
    kl: usize,
    ku: usize,
    ab: Vec<S>,
    pivots: Vec<usize>,
    /// `dof_map[old dof] = new dof`.
    dof_map: Vec<usize>,
}

impl<S: Scalar> BandedLu<S> {
    /// Number of stored entries for the given bandwidths.
    pub fn storage(n: usize, kl: usize, ku: usize) -> usize {
        n * (2 * kl + ku + 1)
    }

    pub fn factor(matrix: &BlockSparseMatrix<S>, order: &[usize]) -> Result<Self, LinalgError> {
        let n = matrix.dim();
        let (kl, ku) = block_bandwidths(matrix, order);
        let (pos, offsets) = permuted_offsets(matrix, order);
        let mut dof_map = vec![0; n];
        for (old, &new) in pos.iter().enumerate() {
            for k in 0..matrix.block_size(old) {
                dof_map[matrix.offset(old) + k] = offsets[new] + k;
            }
        }
        let ld = 2 * kl + ku + 1;
        let kv = kl + ku;
        let mut ab = vec![S::zero(); n * ld];
        for r in 0..matrix.n_blocks() {
            for (c, blk) in matrix.block_row(r) {
                let (r0, c0) = (offsets[pos[r]], offsets[pos[*c]]);
                for i in 0..blk.rows() {
                    for j in 0..blk.cols() {
                        let (gi, gj) = (r0 + i, c0 + j);
                        ab[gj * ld + kv + gi - gj] = blk[(i, j)];
                    }
                }
            }
        }
        let mut pivots = vec![0; n];
        let mut ju = 0;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let col = j * ld + kv;
            let mut jp = 0;
            let mut best = ab[col].abs();
            for r in 1..=km {
                let v = ab[col + r].abs();
                if v > best {
                    best = v;
                    jp = r;
                }
            }
            pivots[j] = j + jp;
            if best == S::zero() {
                return Err(LinalgError::Singular { column: j, pivot: 0.0 });
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    let base = c * ld + kv + j - c;
                    ab.swap(base, base + jp);
                }
            }
            let inv = S::one() / ab[col];
            for r in 1..=km {
                ab[col + r] *= inv;
            }
            if km == 0 || ju == j {
                continue;
            }
            let (head, tail) = ab.split_at_mut((j + 1) * ld);
            let l = &head[col + 1..=col + km];
            tail[..(ju - j) * ld].par_chunks_mut(ld).enumerate().for_each(|(k, column)| {
                let c = j + 1 + k;
                let top = kv + j - c;
                let a = column[top];
                if a != S::zero() {
                    for (r, lr) in l.iter().enumerate() {
                        column[top + 1 + r] -= *lr * a;
                    }
                }
            });
        }
        Ok(Self { n, kl, ku, ab, pivots, dof_map })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    pub fn solve(&self, b: &[S]) -> Vec<S> {
        let (n, kl) = (self.n, self.kl);
        let ld = 2 * kl + self.ku + 1;
        let kv = kl + self.ku;
        let mut x = vec![S::zero(); n];
        for (old, &new) in self.dof_map.iter().enumerate() {
            x[new] = b[old];
        }
        for j in 0..n {
            let l = self.pivots[j];
            if l != j {
                x.swap(l, j);
            }
            let xj = x[j];
            if xj != S::zero() {
                let col = j * ld + kv;
                for r in 1..=kl.min(n - 1 - j) {
                    x[j + r] -= self.ab[col + r] * xj;
                }
            }
        }
        for j in (0..n).rev() {
            let col = j * ld + kv;
            x[j] /= self.ab[col];
            let xj = x[j];
            if xj != S::zero() {
                for i in j.saturating_sub(kv)..j {
                    x[i] -= self.ab[col + i - j] * xj;
                }
            }
        }
        self.dof_map.iter().map(|&new| x[new]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_solves_small_system() {
        let a = DenseMatrix::<f64>::from_fn(3, 3, |i, j| [[0.0, 2.0, 1.0], [1.0, 1.0, 0.0], [3.0, 0.0, 1.0]][i][j]);
        let lu = LuFactors::factor(&a).unwrap();
        let x = lu.solve(&[3.0, 2.0, 4.0]);
        for (xi, e) in x.iter().zip([1.0, 1.0, 1.0]) {
            assert!((xi - e).abs() < 1e-14);
        }
    }

    #[test]
    fn lu_detects_singular() {
        let a = DenseMatrix::from_fn(2, 2, |i, _| if i == 0 { 1.0 } else { 2.0 });
        assert!(matches!(LuFactors::factor(&a), Err(LinalgError::Singular { .. })));
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = DenseMatrix::<f64>::from_fn(3, 3, |i, j| if i == j { 4.0 } else { 1.0 });
        let l = cholesky(&a).unwrap();
        let llt = DenseMatrix::<f64>::from_fn(3, 3, |i, j| (0..3).map(|k| l[(i, k)] * l[(j, k)]).sum());
        for i in 0..3 {
            for j in 0..3 {
                assert!((llt[(i, j)] - a[(i, j)]).abs() < 1e-14);
            }
        }
        assert!(cholesky(&DenseMatrix::from_fn(2, 2, |_, _| 1.0)).is_err());
    }

    #[test]
    fn power_iteration_diagonal() {
        let a = DenseMatrix::<f64>::from_fn(3, 3, |i, j| if i == j { [1.0, 5.0, 2.0][i] } else { 0.0 });
        assert!((max_eigenvalue_spd(&a, 500) - 5.0).abs() < 1e-10);
    }

    fn tridiagonal_blocks(nb: usize, bs: usize) -> BlockSparseMatrix<f64> {
        let mut m = BlockSparseMatrix::new(&vec![bs; nb]);
        for b in 0..nb {
            *m.block_mut(b, b) = DenseMatrix::from_fn(bs, bs, |i, j| if i == j { 4.0 } else { 0.3 / (1.0 + (i + j) as f64) });
            if b + 1 < nb {
                *m.block_mut(b, b + 1) = DenseMatrix::from_fn(bs, bs, |i, j| 0.5 - 0.1 * (i as f64) + 0.05 * j as f64);
                *m.block_mut(b + 1, b) = DenseMatrix::from_fn(bs, bs, |i, j| -0.4 + 0.07 * (i * j) as f64);
            }
        }
        m
    }

    #[test]
    fn gmres_matches_dense_lu() {
        let m = tridiagonal_blocks(12, 5);
        let b: Vec<f64> = (0..m.dim()).map(|i| (i as f64 * 0.37).sin()).collect();
        let dense = LuFactors::factor(&m.to_dense()).unwrap().solve(&b);
        let (x, res) = BlockJacobiGmres::new(&m).unwrap().solve(&m, &b, None, 1e-13);
        assert!(res <= 1e-13);
        for (a, e) in x.iter().zip(&dense) {
            assert!((a - e).abs() < 1e-11);
        }
    }

    #[test]
    fn block_access_and_pattern() {
        let m = tridiagonal_blocks(3, 2);
        assert_eq!(m.dim(), 6);
        assert_eq!(m.pattern().len(), 7);
        assert_eq!(m.get(0, 0), 4.0);
        assert_eq!(m.get(0, 5), 0.0);
        let x = vec![1.0; 6];
        let d = m.to_dense().matvec(&x);
        let s = m.matvec(&x);
        assert!(d.iter().zip(&s).all(|(a, b)| (a - b).abs() < 1e-15));
        assert_eq!(m.triplets().len(), 7 * 4);
    }

    fn grid_blocks(nx: usize, ny: usize, bs: usize, periodic_x: bool) -> BlockSparseMatrix<f64> {
        // zero diagonal entries force pivoting; coupling to the four grid neighbours
        let n = nx * ny;
        let mut m = BlockSparseMatrix::new(&vec![bs; n]);
        let val = |r: usize, c: usize, i: usize, j: usize| ((r * 7 + c * 3 + i * 5 + j * 11) % 13) as f64 / 13.0 - 0.5;
        for e in 0..n {
            let (i, j) = (e % nx, e / nx);
            *m.block_mut(e, e) = DenseMatrix::from_fn(bs, bs, |a, b| if a == b { 0.0 } else { 1.0 + val(e, e, a, b) });
            let mut nb = Vec::new();
            if i + 1 < nx {
                nb.push(e + 1);
            } else if periodic_x && nx > 2 {
                nb.push(j * nx);
            }
            if j + 1 < ny {
                nb.push(e + nx);
            }
            for f in nb {
                *m.block_mut(e, f) = DenseMatrix::from_fn(bs, bs, |a, b| val(e, f, a, b));
                *m.block_mut(f, e) = DenseMatrix::from_fn(bs, bs, |a, b| val(f, e, b, a));
            }
        }
        m
    }

    #[test]
    fn banded_lu_matches_dense() {
        for (nx, ny, bs, per) in [(1, 1, 3, false), (4, 3, 3, false), (5, 4, 2, true), (3, 6, 4, true)] {
            let m = grid_blocks(nx, ny, bs, per);
            let b: Vec<f64> = (0..m.dim()).map(|i| (i as f64 * 0.71).cos()).collect();
            let dense = LuFactors::factor(&m.to_dense()).unwrap().solve(&b);
            for order in [(0..m.n_blocks()).collect::<Vec<_>>(), block_rcm_order(&m)] {
                let lu = BandedLu::factor(&m, &order).unwrap();
                let x = lu.solve(&b);
                for (a, e) in x.iter().zip(&dense) {
                    assert!((a - e).abs() < 1e-10 * (1.0 + e.abs()), "{nx}x{ny}: {a} {e}");
                }
            }
        }
    }

    #[test]
    fn rcm_is_a_permutation_and_narrows_band() {
        let m = grid_blocks(10, 3, 2, false);
        let mut order = block_rcm_order(&m);
        let natural: Vec<usize> = (0..30).collect();
        let rcm = block_bandwidths(&m, &order);
        let nat = block_bandwidths(&m, &natural);
        assert_eq!(nat, (21, 21));
        assert!(rcm.0 < nat.0 && rcm.1 < nat.1, "{rcm:?}");
        order.sort_unstable();
        assert_eq!(order, natural);
    }

    #[test]
    fn banded_detects_singular() {
        let mut m = BlockSparseMatrix::<f64>::new(&[2, 2]);
        *m.block_mut(0, 0) = DenseMatrix::identity(2);
        *m.block_mut(1, 1) = DenseMatrix::zeros(2, 2);
        assert!(matches!(BandedLu::factor(&m, &[0, 1]), Err(LinalgError::Singular { column: 2, .. })));
    }
}
