//! Matérn-class Gaussian random fields `m ~ N(m̄, (-γΔ + δI)^-2)` with
//! homogeneous Neumann conditions, discretized with P1 elements.
//!
//! The discrete covariance spectrum comes from the generalized symmetric
//! eigenproblem `(γK + δM) v = μ M v` with the lumped mass `M`; the covariance
//! eigenvalues are `λ = μ^-2` and the modes are `M`-orthonormal. Sampling uses
//! the full spectrum, so truncating the basis for the surrogate input never
//! biases the sampled fields.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_len, Error, Result};
use crate::linalg_fem::{assemble_stiffness, lumped_mass_diagonal, StructuredMesh};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaternSpec {
    pub gamma: f64,
    pub delta: f64,
    pub alpha: f64,
    pub mean_value: f64,
}

impl MaternSpec {
    pub fn new(gamma: f64, delta: f64, mean_value: f64) -> Result<Self> {
        let spec = Self {
            gamma,
            delta,
            alpha: 2.0,
            mean_value,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !(self.delta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "Matérn gamma and delta must be positive (got {}, {})",
                self.gamma, self.delta
            )));
        }
        if self.alpha != 2.0 {
            return Err(Error::InvalidArgument(format!(
                "only alpha = 2 is supported, got {}",
                self.alpha
            )));
        }
        if !self.mean_value.is_finite() {
            return Err(Error::InvalidArgument("mean value must be finite".into()));
        }
        Ok(())
    }
}

/// Karhunen–Loève basis of the discretized field.
#[derive(Debug, Clone, PartialEq)]
pub struct KleBasis {
    rank: usize,
    mean_value: f64,
    /// Covariance eigenvalues of the full spectrum, descending.
    eigvals: Vec<f64>,
    /// `d x d`, columns `M`-orthonormal, ordered like `eigvals`.
    modes: DMatrix<f64>,
    mass: DVector<f64>,
}

pub fn build_kle(mesh: &StructuredMesh, spec: &MaternSpec, rank: usize) -> Result<KleBasis> {
    spec.validate()?;
    let d = mesh.num_nodes();
    if rank == 0 || rank > d {
        return Err(Error::InvalidArgument(format!(
            "KLE rank must be in 1..={d}, got {rank}"
        )));
    }
    let stiffness = assemble_stiffness(mesh, &DVector::from_element(d, 1.0))?;
    let mass = lumped_mass_diagonal(mesh);
    let inv_sqrt: DVector<f64> = mass.map(|m| 1.0 / m.sqrt());

    // D^-1/2 (γK + δM) D^-1/2 with D the lumped mass
    let mut a = stiffness.to_dense() * spec.gamma;
    for i in 0..d {
        a[(i, i)] += spec.delta * mass[i];
    }
    for j in 0..d {
        for i in 0..d {
            a[(i, j)] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    let eig = SymmetricEigen::try_new(a, f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigen(format!("symmetric eigensolver did not converge (d = {d})")))?;

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    if let Some(&bad) = order.iter().find(|&&i| !(eig.eigenvalues[i] > 0.0)) {
        return Err(Error::Eigen(format!(
            "non-positive precision eigenvalue {}",
            eig.eigenvalues[bad]
        )));
    }
    let eigvals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].powf(-spec.alpha)).collect();
    let mut modes = DMatrix::zeros(d, d);
    for (k, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).component_mul(&inv_sqrt);
        // fix the sign so the entry of largest magnitude is positive
        let imax = v.iamax();
        if v[imax] < 0.0 {
            v.neg_mut();
        }
        modes.set_column(k, &v);
    }
    Ok(KleBasis {
        rank,
        mean_value: spec.mean_value,
        eigvals,
        modes,
        mass,
    })
}

impl KleBasis {
    /// Reassembles a basis from persisted parts.
    pub fn from_parts(
        rank: usize,
        mean_value: f64,
        eigvals: Vec<f64>,
        modes: DMatrix<f64>,
        mass: DVector<f64>,
    ) -> Result<Self> {
        let d = mass.len();
        check_len("KLE modes rows", d, modes.nrows())?;
        check_len("KLE eigenvalues", modes.ncols(), eigvals.len())?;
        if rank == 0 || rank > eigvals.len() {
            return Err(Error::InvalidArgument(format!("invalid KLE rank {rank}")));
        }
        Ok(Self {
            rank,
            mean_value,
            eigvals,
            modes,
            mass,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.mass.len()
    }

    pub fn mean_value(&self) -> f64 {
        self.mean_value
    }

    /// Full spectrum, descending.
    pub fn all_eigvals(&self) -> &[f64] {
        &self.eigvals
    }

    pub fn all_modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    pub fn eigvals(&self) -> &[f64] {
        &self.eigvals[..self.rank]
    }

    pub fn modes(&self) -> nalgebra::DMatrixView<'_, f64> {
        self.modes.columns(0, self.rank)
    }

    pub fn mass(&self) -> &DVector<f64> {
        &self.mass
    }

    /// Same spectrum, different retained rank.
    pub fn with_rank(&self, rank: usize) -> Result<Self> {
        Self::from_parts(
            rank,
            self.mean_value,
            self.eigvals.clone(),
            self.modes.clone(),
            self.mass.clone(),
        )
    }

    /// Whitening factors `1/√λ_i` for the retained modes.
    pub fn whitening(&self) -> DVector<f64> {
        DVector::from_iterator(self.rank, self.eigvals().iter().map(|l| 1.0 / l.sqrt()))
    }

    /// Pointwise variance `Σ_i λ_i ψ_i(x)^2` over the full spectrum.
    pub fn pointwise_variance(&self) -> DVector<f64> {
        let mut var = DVector::zeros(self.dim());
        for (k, l) in self.eigvals.iter().enumerate() {
            var += self.modes.column(k).map(|v| v * v) * *l;
        }
        var
    }

    /// Field with KLE coordinates `xi` (length = full spectrum size).
    pub fn field_from_normals(&self, xi: &DVector<f64>) -> DVector<f64> {
        assert_eq!(xi.len(), self.eigvals.len(), "one coefficient per eigenpair");
        let scaled = DVector::from_iterator(xi.len(), xi.iter().zip(&self.eigvals).map(|(x, l)| x * l.sqrt()));
        let mut m = &self.modes * scaled;
        m.add_scalar_mut(self.mean_value);
        m
    }
}

/// One realization of the field, tagged with the substream that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub values: DVector<f64>,
    pub seed: u64,
    pub stream: u64,
    pub index: u64,
}

pub fn sample_field(kle: &KleBasis, seed: u64, stream: u64, index: u64) -> FieldSample {
    let mut rng = substream(seed, stream, index);
    let xi = DVector::from_iterator(
        kle.eigvals.len(),
        (0..kle.eigvals.len()).map(|_| StandardNormal.sample(&mut rng)),
    );
    FieldSample {
        values: kle.field_from_normals(&xi),
        seed,
        stream,
        index,
    }
}

/// Reduced coordinates `Ψ^T M (m - m̄)`, optionally divided by `√λ_i`.
pub fn encode(kle: &KleBasis, m: &DVector<f64>, whiten: bool) -> Result<DVector<f64>> {
    check_len("encode", kle.dim(), m.len())?;
    let weighted = DVector::from_iterator(
        m.len(),
        m.iter().zip(kle.mass.iter()).map(|(v, w)| (v - kle.mean_value) * w),
    );
    let mut coeffs = kle.modes().tr_mul(&weighted);
    if whiten {
        for (c, l) in coeffs.iter_mut().zip(kle.eigvals()) {
            *c /= l.sqrt();
        }
    }
    Ok(coeffs)
}
