//! Envelope (skyline) LU factorization with a reverse Cuthill–McKee ordering.
//!
//! The ordering and envelope structure depend only on the sparsity pattern
//! and are computed once by [`SymbolicLu::analyze`]; numeric factorizations of
//! operators sharing that pattern reuse it. No pivoting is performed, which is
//! sound for the symmetric positive definite operators assembled here; a
//! pivot below `1e-14 * max|A|` is reported as a singular operator.
//!
//! Within the envelope, row `i` of `L` and column `i` of `U` are stored
//! contiguously from column/row `first[i]` up to the diagonal, so every inner
//! product in the factorization and every substitution step is a dense slice
//! operation.

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::sparse::SparseOperator;
use crate::error::{check_len, Error, Result};

const PIVOT_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct SymbolicLu {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    /// `inv[old] = new`
    inv: Vec<usize>,
    first: Vec<usize>,
    l_ptr: Vec<usize>,
    u_ptr: Vec<usize>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl SymbolicLu {
    pub fn analyze(op: &SparseOperator) -> Self {
        let n = op.dim();
        let adjacency = symmetric_adjacency(op);
        let perm = reverse_cuthill_mckee(&adjacency);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (old, nbrs) in adjacency.iter().enumerate() {
            let i = inv[old];
            for &nb in nbrs {
                let j = inv[nb];
                if j < i {
                    first[i] = first[i].min(j);
                }
            }
        }
        let mut l_ptr = vec![0; n + 1];
        let mut u_ptr = vec![0; n + 1];
        for i in 0..n {
            l_ptr[i + 1] = l_ptr[i] + (i - first[i]);
            u_ptr[i + 1] = u_ptr[i] + (i - first[i]) + 1;
        }
        Self {
            n,
            perm,
            inv,
            first,
            l_ptr,
            u_ptr,
            row_ptr: op.row_ptr().to_vec(),
            col_idx: op.col_idx().to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored entries in `L` and `U` together.
    pub fn envelope_size(&self) -> usize {
        self.l_ptr[self.n] + self.u_ptr[self.n]
    }

    /// Largest distance from the diagonal to the envelope edge.
    pub fn bandwidth(&self) -> usize {
        (0..self.n).map(|i| i - self.first[i]).max().unwrap_or(0)
    }

    pub fn matches(&self, op: &SparseOperator) -> bool {
        op.dim() == self.n && op.row_ptr() == self.row_ptr.as_slice() && op.col_idx() == self.col_idx.as_slice()
    }
}

fn symmetric_adjacency(op: &SparseOperator) -> Vec<Vec<usize>> {
    let n = op.dim();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for &j in op.row(i).0 {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    adj
}

fn bfs_levels(adj: &[Vec<usize>], start: usize, seen: &mut [bool], order: &mut Vec<usize>) -> usize {
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    let mut last = start;
    while let Some(v) = queue.pop_front() {
        order.push(v);
        last = v;
        let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&w| !seen[w]).collect();
        nbrs.sort_by_key(|&w| (adj[w].len(), w));
        for w in nbrs {
            seen[w] = true;
            queue.push_back(w);
        }
    }
    last
}

fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut candidates: Vec<usize> = (0..n).collect();
    candidates.sort_by_key(|&v| (adj[v].len(), v));
    for &seed in &candidates {
        if seen[seed] {
            continue;
        }
        // one sweep towards a pseudo-peripheral node
        let mut probe_seen = seen.clone();
        let mut probe = Vec::new();
        let far = bfs_levels(adj, seed, &mut probe_seen, &mut probe);
        bfs_levels(adj, far, &mut seen, &mut order);
    }
    order.reverse();
    order
}

/// Numeric factors `P A P^T = L U` sharing a [`SymbolicLu`].
#[derive(Debug, Clone)]
pub struct TriangularFactors {
    symbolic: Arc<SymbolicLu>,
    l: Vec<f64>,
    u: Vec<f64>,
}

/// Factorizes `op` with a freshly computed ordering.
pub fn factorize(op: &SparseOperator) -> Result<TriangularFactors> {
    factorize_with(&Arc::new(SymbolicLu::analyze(op)), op)
}

/// Factorizes `op` reusing a cached symbolic analysis of its pattern.
pub fn factorize_with(symbolic: &Arc<SymbolicLu>, op: &SparseOperator) -> Result<TriangularFactors> {
    if !symbolic.matches(op) {
        return Err(Error::InvalidArgument(
            "operator pattern differs from the symbolic analysis".into(),
        ));
    }
    let s = symbolic.as_ref();
    let n = s.n;
    let mut l = vec![0.0; s.l_ptr[n]];
    let mut u = vec![0.0; s.u_ptr[n]];
    for r in 0..n {
        let (cols, vals) = op.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            let (i, j) = (s.inv[r], s.inv[c]);
            if j < i {
                l[s.l_ptr[i] + j - s.first[i]] += v;
            } else {
                u[s.u_ptr[j] + i - s.first[j]] += v;
            }
        }
    }
    let threshold = PIVOT_TOLERANCE * op.max_abs();
    for i in 0..n {
        let fi = s.first[i];
        let (l_done, l_rest) = l.split_at_mut(s.l_ptr[i]);
        let row_i = &mut l_rest[..i - fi];
        for j in fi..i {
            let fj = s.first[j];
            let start = fi.max(fj);
            let col_j = &u[s.u_ptr[j]..s.u_ptr[j + 1]];
            let dot = dot(&row_i[start - fi..j - fi], &col_j[start - fj..j - fj]);
            row_i[j - fi] = (row_i[j - fi] - dot) / col_j[j - fj];
        }
        let (_, u_rest) = u.split_at_mut(s.u_ptr[i]);
        let col_i = &mut u_rest[..i - fi + 1];
        for j in fi..i {
            let fj = s.first[j];
            let start = fi.max(fj);
            let row_j = &l_done[s.l_ptr[j]..s.l_ptr[j + 1]];
            let d = dot(&row_j[start - fj..j - fj], &col_i[start - fi..j - fi]);
            col_i[j - fi] -= d;
        }
        let d = dot(row_i, &col_i[..i - fi]);
        col_i[i - fi] -= d;
        let pivot = col_i[i - fi];
        if !(pivot.abs() > threshold) {
            return Err(Error::SingularOperator {
                row: s.perm[i],
                pivot,
                threshold,
            });
        }
    }
    Ok(TriangularFactors {
        symbolic: Arc::clone(symbolic),
        l,
        u,
    })
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl TriangularFactors {
    pub fn dim(&self) -> usize {
        self.symbolic.n
    }

    pub fn symbolic(&self) -> &Arc<SymbolicLu> {
        &self.symbolic
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("solve", self.dim(), b.len())?;
        let s = &*self.symbolic;
        let mut y: Vec<f64> = s.perm.iter().map(|&o| b[o]).collect();
        for i in 0..s.n {
            let fi = s.first[i];
            let d = dot(&self.l[s.l_ptr[i]..s.l_ptr[i + 1]], &y[fi..i]);
            y[i] -= d;
        }
        for j in (0..s.n).rev() {
            let fj = s.first[j];
            let col = &self.u[s.u_ptr[j]..s.u_ptr[j + 1]];
            y[j] /= col[j - fj];
            let yj = y[j];
            for (yk, ukj) in y[fj..j].iter_mut().zip(col) {
                *yk -= ukj * yj;
            }
        }
        Ok(self.unpermute(&y))
    }

    /// Solves `A^T x = b` with the same factors.
    pub fn solve_transpose(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("solve_transpose", self.dim(), b.len())?;
        let s = &*self.symbolic;
        let mut y: Vec<f64> = s.perm.iter().map(|&o| b[o]).collect();
        for j in 0..s.n {
            let fj = s.first[j];
            let col = &self.u[s.u_ptr[j]..s.u_ptr[j + 1]];
            let d = dot(&col[..j - fj], &y[fj..j]);
            y[j] = (y[j] - d) / col[j - fj];
        }
        for i in (0..s.n).rev() {
            let fi = s.first[i];
            let yi = y[i];
            for (yk, lik) in y[fi..i].iter_mut().zip(&self.l[s.l_ptr[i]..s.l_ptr[i + 1]]) {
                *yk -= lik * yi;
            }
        }
        Ok(self.unpermute(&y))
    }

    /// Solves `A X = B` for all columns of `B` in one sweep.
    pub fn solve_many(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.solve_block(b, false)
    }

    /// Solves `A^T X = B` for all columns of `B` in one sweep.
    pub fn solve_transpose_many(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.solve_block(b, true)
    }

    fn solve_block(&self, b: &DMatrix<f64>, transpose: bool) -> Result<DMatrix<f64>> {
        check_len("solve_many", self.dim(), b.nrows())?;
        let s = &*self.symbolic;
        let k = b.ncols();
        // row-major work buffer: the k right-hand sides of one unknown are adjacent
        let mut y = vec![0.0; s.n * k];
        for (i, &o) in s.perm.iter().enumerate() {
            for c in 0..k {
                y[i * k + c] = b[(o, c)];
            }
        }
        let mut acc = vec![0.0; k];
        if !transpose {
            for i in 0..s.n {
                let fi = s.first[i];
                acc.iter_mut().for_each(|a| *a = 0.0);
                for (off, &lik) in self.l[s.l_ptr[i]..s.l_ptr[i + 1]].iter().enumerate() {
                    let row = &y[(fi + off) * k..(fi + off + 1) * k];
                    axpy(&mut acc, lik, row);
                }
                sub_assign(&mut y[i * k..(i + 1) * k], &acc);
            }
            for j in (0..s.n).rev() {
                let fj = s.first[j];
                let col = &self.u[s.u_ptr[j]..s.u_ptr[j + 1]];
                let inv = 1.0 / col[j - fj];
                let (head, tail) = y.split_at_mut(j * k);
                let yj = &mut tail[..k];
                yj.iter_mut().for_each(|v| *v *= inv);
                for (off, &ukj) in col[..j - fj].iter().enumerate() {
                    axpy(&mut head[(fj + off) * k..(fj + off + 1) * k], -ukj, yj);
                }
            }
        } else {
            for j in 0..s.n {
                let fj = s.first[j];
                let col = &self.u[s.u_ptr[j]..s.u_ptr[j + 1]];
                acc.iter_mut().for_each(|a| *a = 0.0);
                for (off, &ukj) in col[..j - fj].iter().enumerate() {
                    axpy(&mut acc, ukj, &y[(fj + off) * k..(fj + off + 1) * k]);
                }
                let inv = 1.0 / col[j - fj];
                for (v, a) in y[j * k..(j + 1) * k].iter_mut().zip(&acc) {
                    *v = (*v - a) * inv;
                }
            }
            for i in (0..s.n).rev() {
                let fi = s.first[i];
                let (head, tail) = y.split_at_mut(i * k);
                let yi = &tail[..k];
                for (off, &lik) in self.l[s.l_ptr[i]..s.l_ptr[i + 1]].iter().enumerate() {
                    axpy(&mut head[(fi + off) * k..(fi + off + 1) * k], -lik, yi);
                }
            }
        }
        let mut x = DMatrix::zeros(s.n, k);
        for (i, &o) in s.perm.iter().enumerate() {
            for c in 0..k {
                x[(o, c)] = y[i * k + c];
            }
        }
        Ok(x)
    }

    fn unpermute(&self, y: &[f64]) -> DVector<f64> {
        let mut x = DVector::zeros(self.dim());
        for (i, &o) in self.symbolic.perm.iter().enumerate() {
            x[o] = y[i];
        }
        x
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn sub_assign(y: &mut [f64], x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi -= xi;
    }
}
