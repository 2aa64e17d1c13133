//! Mass-weighted proper orthogonal decomposition of state snapshots.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::linalg_fem::SparseOperator;

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct PodBasis {
    /// `d x r`, columns orthonormal in the `weight` inner product.
    phi: DMatrix<f64>,
    bias: DVector<f64>,
    /// Empirical covariance spectrum (1/n convention), descending, all
    /// numerically available values, not only the retained ones.
    eigvals: Vec<f64>,
    n_snapshots: usize,
    weight: SparseOperator,
    /// Cached `(M Φ)^T`.
    projector: DMatrix<f64>,
}

/// POD of the rows of `snapshots` (`n x d`) in the `weight` inner product.
pub fn compute_pod(snapshots: &DMatrix<f64>, weight: &SparseOperator, rank: usize) -> Result<PodBasis> {
    let (n, d) = snapshots.shape();
    check_len("compute_pod (snapshot length)", weight.dim(), d)?;
    if n == 0 {
        return Err(Error::Empty("POD snapshots"));
    }
    if rank == 0 || rank > n {
        return Err(Error::InvalidArgument(format!(
            "POD rank must be in 1..={n} (number of snapshots), got {rank}"
        )));
    }
    let bias: DVector<f64> = snapshots.row_mean().transpose();
    let scale = 1.0 / (n as f64).sqrt();
    let mut centered = DMatrix::zeros(d, n);
    for (k, row) in snapshots.row_iter().enumerate() {
        let mut col = centered.column_mut(k);
        for i in 0..d {
            col[i] = (row[i] - bias[i]) * scale;
        }
    }

    // X = S (U - b)/√n with S^T S = M; Φ = S^-1 (left singular vectors)
    let (phi_all, sv) = if weight.is_diagonal() {
        let diag = weight.diagonal();
        if let Some(i) = diag.iter().position(|w| !(*w > 0.0)) {
            return Err(Error::InvalidArgument(format!("non-positive weight at node {i}")));
        }
        let sqrt_w = diag.map(f64::sqrt);
        for mut col in centered.column_iter_mut() {
            col.component_mul_assign(&sqrt_w);
        }
        let svd = centered.svd(true, false);
        let mut u = svd.u.expect("left singular vectors requested");
        for mut col in u.column_iter_mut() {
            col.component_div_assign(&sqrt_w);
        }
        (u, svd.singular_values)
    } else {
        let chol = Cholesky::new(weight.to_dense())
            .ok_or_else(|| Error::InvalidArgument("weight matrix is not positive definite".into()))?;
        let l = chol.l();
        let x = l.tr_mul(&centered);
        let svd = x.svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let phi = l
            .transpose()
            .solve_upper_triangular(&u)
            .ok_or_else(|| Error::InvalidArgument("singular Cholesky factor".into()))?;
        (phi, svd.singular_values)
    };

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let s_max = sv[order[0]];
    let achieved = order
        .iter()
        .filter(|&&i| sv[i] >= RANK_TOLERANCE * s_max && sv[i] > 0.0)
        .count();
    if achieved < rank {
        return Err(Error::RankDeficient {
            requested: rank,
            achieved,
        });
    }
    let mut phi = DMatrix::zeros(d, rank);
    for (k, &i) in order.iter().take(rank).enumerate() {
        let mut v = phi_all.column(i).into_owned();
        let imax = v.iamax();
        if v[imax] < 0.0 {
            v.neg_mut();
        }
        phi.set_column(k, &v);
    }
    PodBasis::from_parts(
        phi,
        bias,
        order.iter().map(|&i| sv[i] * sv[i]).collect(),
        n,
        weight.clone(),
    )
}

impl PodBasis {
    pub fn from_parts(
        phi: DMatrix<f64>,
        bias: DVector<f64>,
        eigvals: Vec<f64>,
        n_snapshots: usize,
        weight: SparseOperator,
    ) -> Result<Self> {
        check_len("POD bias", phi.nrows(), bias.len())?;
        check_len("POD weight", phi.nrows(), weight.dim())?;
        if eigvals.len() < phi.ncols() {
            return Err(Error::InvalidArgument("fewer eigenvalues than basis vectors".into()));
        }
        let projector = weight.mul_dense(&phi).transpose();
        Ok(Self {
            phi,
            bias,
            eigvals,
            n_snapshots,
            weight,
            projector,
        })
    }

    pub fn rank(&self) -> usize {
        self.phi.ncols()
    }

    pub fn dim(&self) -> usize {
        self.phi.nrows()
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    /// Full available spectrum, descending.
    pub fn eigvals(&self) -> &[f64] {
        &self.eigvals
    }

    pub fn n_snapshots(&self) -> usize {
        self.n_snapshots
    }

    pub fn weight(&self) -> &SparseOperator {
        &self.weight
    }

    /// `Σ_{i>r} λ_i`, the mean squared training reconstruction error.
    pub fn trailing_energy(&self) -> f64 {
        self.eigvals[self.rank()..].iter().sum()
    }

    /// Keeps the leading `rank` modes.
    pub fn truncated(&self, rank: usize) -> Result<Self> {
        if rank == 0 || rank > self.rank() {
            return Err(Error::InvalidArgument(format!("cannot truncate to rank {rank}")));
        }
        Self::from_parts(
            self.phi.columns(0, rank).into_owned(),
            self.bias.clone(),
            self.eigvals.clone(),
            self.n_snapshots,
            self.weight.clone(),
        )
    }

    /// `Φ^T M (u - b)`.
    pub fn project(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("project", self.dim(), u.len())?;
        Ok(self.reduce(&(u - &self.bias)))
    }

    /// `Φ^T M v` for a direction `v` (no bias subtraction).
    pub fn reduce(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.projector * v
    }

    /// `Φ^T M S` column by column.
    pub fn reduce_many(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        &self.projector * s
    }

    /// `(M Φ)^T`, rows are the weighted modes.
    pub fn projector(&self) -> &DMatrix<f64> {
        &self.projector
    }

    /// `M Φ`, the right-hand sides of the adjoint Jacobian route.
    pub fn weighted_modes(&self) -> DMatrix<f64> {
        self.projector.transpose()
    }

    pub fn lift(&self, phi: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("lift", self.rank(), phi.len())?;
        Ok(&self.phi * phi + &self.bias)
    }
}

/// `Q(u) = ||u - u_target||_M^2` restricted to `b + span(Φ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedTrackingForm {
    pub c: DVector<f64>,
    pub q0: f64,
}

pub fn build_tracking_form(basis: &PodBasis, u_target: &DVector<f64>) -> Result<ReducedTrackingForm> {
    check_len("tracking target", basis.dim(), u_target.len())?;
    let diff = basis.bias() - u_target;
    let m_diff = basis.weight().mul_vec(&diff);
    Ok(ReducedTrackingForm {
        c: basis.phi().tr_mul(&m_diff),
        q0: diff.dot(&m_diff),
    })
}

impl ReducedTrackingForm {
    pub fn value(&self, phi: &DVector<f64>) -> f64 {
        phi.dot(phi) + 2.0 * phi.dot(&self.c) + self.q0
    }

    pub fn gradient(&self, phi: &DVector<f64>) -> DVector<f64> {
        (phi + &self.c) * 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg_fem::{assemble_mass, build_mesh};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_snapshots(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, j| rng.random_range(-1.0..1.0) * (1.0 + j as f64).recip())
    }

    fn weighted_gram(b: &PodBasis) -> DMatrix<f64> {
        b.phi().tr_mul(&b.weighted_modes())
    }

    #[test]
    fn antipodal_pair_gives_rank_one() {
        let mesh = build_mesh(4, 4).unwrap();
        let m = assemble_mass(&mesh, true);
        let raw = mesh.interpolate(|x, y| x * y + 0.3);
        let v = &raw / m.bilinear(&raw, &raw).sqrt();
        let snaps = DMatrix::from_rows(&[v.transpose(), -v.transpose()]);
        let pod = compute_pod(&snaps, &m, 1).unwrap();
        assert!(pod.bias().amax() < 1e-15);
        assert!((pod.eigvals()[0] - 1.0).abs() < 1e-12);
        assert!((pod.phi().column(0) - &v).amax() < 1e-12);
        assert!(matches!(
            compute_pod(&snaps, &m, 2),
            Err(Error::RankDeficient { achieved: 1, .. })
        ));
    }

    #[test]
    fn rejects_rank_above_snapshot_count() {
        let mesh = build_mesh(3, 3).unwrap();
        let m = assemble_mass(&mesh, true);
        let snaps = random_snapshots(3, mesh.num_nodes(), 1);
        assert!(compute_pod(&snaps, &m, 4).is_err());
    }

    #[test]
    fn orthonormal_in_both_weightings() {
        let mesh = build_mesh(6, 6).unwrap();
        let d = mesh.num_nodes();
        let snaps = random_snapshots(20, d, 2);
        for lumped in [true, false] {
            let pod = compute_pod(&snaps, &assemble_mass(&mesh, lumped), 12).unwrap();
            assert!((weighted_gram(&pod) - DMatrix::identity(12, 12)).amax() < 1e-10);
            assert!(pod.eigvals().windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn training_error_equals_trailing_energy() {
        let mesh = build_mesh(5, 5).unwrap();
        let m = assemble_mass(&mesh, true);
        let snaps = random_snapshots(15, mesh.num_nodes(), 3);
        let pod = compute_pod(&snaps, &m, 6).unwrap();
        let mut err = 0.0;
        for row in snaps.row_iter() {
            let u = row.transpose();
            let e = &u - pod.lift(&pod.project(&u).unwrap()).unwrap();
            err += m.bilinear(&e, &e);
        }
        err /= 15.0;
        let trailing = pod.trailing_energy();
        assert!((err - trailing).abs() <= 1e-8 * trailing, "{err} vs {trailing}");
    }

    #[test]
    fn full_centered_rank_reconstructs_training_set() {
        let mesh = build_mesh(5, 5).unwrap();
        let m = assemble_mass(&mesh, true);
        let snaps = random_snapshots(8, mesh.num_nodes(), 4);
        let pod = compute_pod(&snaps, &m, 7).unwrap();
        for row in snaps.row_iter() {
            let u = row.transpose();
            let e = &u - pod.lift(&pod.project(&u).unwrap()).unwrap();
            assert!(e.amax() < 1e-10);
        }
    }

    #[test]
    fn projection_identities() {
        let mesh = build_mesh(5, 5).unwrap();
        let m = assemble_mass(&mesh, true);
        let snaps = random_snapshots(12, mesh.num_nodes(), 5);
        let pod = compute_pod(&snaps, &m, 5).unwrap();
        assert!(pod.project(pod.bias()).unwrap().amax() < 1e-14);
        let e2 = DVector::from_fn(5, |i, _| if i == 1 { 1.0 } else { 0.0 });
        let u = pod.lift(&e2).unwrap();
        assert!((pod.project(&u).unwrap() - &e2).amax() < 1e-10);

        let phi = DVector::from_fn(5, |i, _| (i as f64 * 0.7).sin());
        assert!((pod.project(&pod.lift(&phi).unwrap()).unwrap() - &phi).amax() < 1e-10);

        let u = snaps.row(3).transpose() * 1.7;
        let resid = &u - pod.lift(&pod.project(&u).unwrap()).unwrap();
        assert!(pod.reduce(&resid).amax() < 1e-9);
    }

    #[test]
    fn tracking_form_matches_full_quadratic() {
        let mesh = build_mesh(6, 6).unwrap();
        let m = assemble_mass(&mesh, true);
        let snaps = random_snapshots(14, mesh.num_nodes(), 6);
        let pod = compute_pod(&snaps, &m, 6).unwrap();

        let at_bias = build_tracking_form(&pod, pod.bias()).unwrap();
        assert!(at_bias.c.amax() == 0.0 && at_bias.q0 == 0.0);

        let target = mesh.interpolate(|x, y| (2.0 * std::f64::consts::PI * x).sin() * y);
        let form = build_tracking_form(&pod, &target).unwrap();
        let phi = DVector::from_fn(6, |i, _| 0.3 - 0.1 * i as f64);
        let diff = pod.lift(&phi).unwrap() - &target;
        let full = m.bilinear(&diff, &diff);
        assert!((form.value(&phi) - full).abs() < 1e-10 * full.max(1.0));

        let g = form.gradient(&phi);
        let h = 1e-6;
        for k in 0..6 {
            let mut p = phi.clone();
            p[k] += h;
            let mut q = phi.clone();
            q[k] -= h;
            let fd = (form.value(&p) - form.value(&q)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8);
        }
    }
}
