use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Result};

/// Square sparse matrix in compressed sparse row layout with sorted,
/// duplicate-free column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    symmetric: bool,
}

impl SparseOperator {
    /// Builds an operator from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>, symmetric: bool) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < n && c < n, "triplet ({r}, {c}) out of range for n = {n}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
            symmetric,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal_from(&DVector::from_element(n, 1.0))
    }

    pub fn diagonal_from(d: &DVector<f64>) -> Self {
        let n = d.len();
        Self {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: d.iter().copied().collect(),
            symmetric: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Columns and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map(|k| vals[k]).unwrap_or(0.0)
    }

    /// True when every stored entry lies on the diagonal.
    pub fn is_diagonal(&self) -> bool {
        (0..self.n).all(|i| self.row(i).0.iter().all(|&c| c == i))
    }

    pub fn diagonal(&self) -> DVector<f64> {
        DVector::from_iterator(self.n, (0..self.n).map(|i| self.get(i, i)))
    }

    pub fn same_pattern(&self, other: &Self) -> bool {
        self.n == other.n && self.row_ptr == other.row_ptr && self.col_idx == other.col_idx
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.n, "operator/vector dimension mismatch");
        DVector::from_iterator(
            self.n,
            (0..self.n).map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum::<f64>()
            }),
        )
    }

    pub fn mul_transpose_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.n, "operator/vector dimension mismatch");
        let mut y = DVector::zeros(self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                y[c] += v * x[i];
            }
        }
        y
    }

    /// Product with a dense `n x k` matrix.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.n, "operator/matrix dimension mismatch");
        let mut y = DMatrix::zeros(self.n, x.ncols());
        for k in 0..x.ncols() {
            let col = x.column(k);
            for i in 0..self.n {
                let (cols, vals) = self.row(i);
                y[(i, k)] = cols.iter().zip(vals).map(|(&c, &v)| v * col[c]).sum();
            }
        }
        y
    }

    /// `self + alpha * other` for operators sharing a sparsity pattern.
    pub fn add_scaled(&self, alpha: f64, other: &Self) -> Self {
        assert!(
            self.same_pattern(other),
            "add_scaled requires identical sparsity patterns"
        );
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        out.symmetric = self.symmetric && other.symmetric;
        out
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// Adds `d[i]` to each diagonal entry. The diagonal must be stored.
    pub fn add_diagonal(&mut self, d: &DVector<f64>) {
        for i in 0..self.n {
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            let k = self.col_idx[r.clone()]
                .binary_search(&i)
                .expect("diagonal entry not in sparsity pattern");
            self.values[r.start + k] += d[i];
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |A_ij - A_ji|` over stored entries.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                a[(i, j)] += v;
            }
        }
        a
    }

    /// `u^T A v`.
    pub fn bilinear(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        u.dot(&self.mul_vec(v))
    }
}

/// Mass-weighted inner product `u^T M v`.
pub fn weighted_inner(u: &DVector<f64>, v: &DVector<f64>, m: &SparseOperator) -> Result<f64> {
    check_len("weighted_inner (u)", m.dim(), u.len())?;
    check_len("weighted_inner (v)", m.dim(), v.len())?;
    // accumulate symmetrically so (u, v) and (v, u) agree for symmetric M
    let mu = m.mul_vec(u);
    let mv = m.mul_vec(v);
    Ok(0.5 * (u.dot(&mv) + v.dot(&mu)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_are_merged_and_sorted() {
        let a = SparseOperator::from_triplets(2, vec![(1, 0, 1.0), (0, 1, 2.0), (0, 1, 3.0), (0, 0, 1.0)], false);
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.get(0, 1), 5.0);
        assert_eq!(a.row(0).0, &[0, 1]);
        assert_eq!(a.get(1, 1), 0.0);
    }

    #[test]
    fn inner_with_identity_is_euclidean() {
        let u = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let id = SparseOperator::identity(3);
        assert_eq!(weighted_inner(&u, &u, &id).unwrap(), 14.0);
    }

    #[test]
    fn inner_rejects_mismatch() {
        let u = DVector::from_vec(vec![1.0, 2.0]);
        let id = SparseOperator::identity(3);
        assert!(weighted_inner(&u, &u, &id).is_err());
    }

    #[test]
    fn transpose_product_matches_dense() {
        let a = SparseOperator::from_triplets(3, vec![(0, 2, 1.5), (1, 0, -1.0), (2, 2, 4.0)], false);
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let dense = a.to_dense();
        assert_eq!(a.mul_transpose_vec(&x), dense.transpose() * &x);
        assert_eq!(a.mul_vec(&x), dense * &x);
    }
}
