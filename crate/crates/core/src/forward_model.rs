//! Semilinear state equation `-∇·(e^m ∇u) + r u^3 = Σ_i z_i f_i` on the unit
//! square with homogeneous Dirichlet conditions.
//!
//! The discrete residual is `R(u) = K(e^m) u + r M_L u^3 - F z` with the cubic
//! term lumped, so the Newton Jacobian `K(e^m) + 3r M_L diag(u^2)` is symmetric.
//! Boundary rows are eliminated symmetrically and read `R_b = u_b`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::linalg_fem::{
    eliminate_in_place, factorize_with, lumped_mass_diagonal, SparseOperator, StiffnessAssembler, StructuredMesh,
    SymbolicLu, TriangularFactors,
};
use crate::reduction::PodBasis;

/// Gaussian bump `exp(-|x - c|^2 / 2σ^2) / (σ√(2π))`.
pub fn bump(sigma: f64, center: [f64; 2], x: [f64; 2]) -> f64 {
    let dx = x[0] - center[0];
    let dy = x[1] - center[1];
    (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * PI).sqrt())
}

/// Localized sources on a `g x g` interior lattice.
#[derive(Debug, Clone)]
pub struct SourceBasis {
    g: usize,
    sigma: f64,
    centers: Vec<[f64; 2]>,
    /// `d x g^2`, column `i` is `M_L f_i(nodes)`.
    loads: DMatrix<f64>,
}

pub fn build_source_basis(mesh: &StructuredMesh, g: usize, sigma: f64) -> Result<SourceBasis> {
    if g == 0 {
        return Err(Error::InvalidArgument("source grid size must be at least 1".into()));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "source width must be positive, got {sigma}"
        )));
    }
    let step = 1.0 / (g as f64 + 1.0);
    let mut centers = Vec::with_capacity(g * g);
    for k in 0..g {
        for j in 0..g {
            centers.push([(j + 1) as f64 * step, (k + 1) as f64 * step]);
        }
    }
    let mass = lumped_mass_diagonal(mesh);
    let coords = mesh.coords();
    let loads = DMatrix::from_fn(mesh.num_nodes(), centers.len(), |n, i| {
        mass[n] * bump(sigma, centers[i], coords[n])
    });
    Ok(SourceBasis {
        g,
        sigma,
        centers,
        loads,
    })
}

impl SourceBasis {
    pub fn grid(&self) -> usize {
        self.g
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn num_controls(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[[f64; 2]] {
        &self.centers
    }

    pub fn loads(&self) -> &DMatrix<f64> {
        &self.loads
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_iter: usize,
    /// Sufficient-decrease constant of the backtracking search.
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            max_iter: 25,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 30,
        }
    }
}

/// Converged state together with the factors of the final Newton Jacobian.
#[derive(Debug, Clone)]
pub struct StateSolution {
    pub u: DVector<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    /// Residual norm before each Newton step and after the last one.
    pub residual_history: Vec<f64>,
    pub factors: TriangularFactors,
}

/// Which side of the implicit-function identity to solve with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JacobianRoute {
    /// Fewer back substitutions of the two.
    #[default]
    Auto,
    Forward,
    Adjoint,
}

#[derive(Debug, Clone)]
pub struct SemilinearProblem {
    mesh: StructuredMesh,
    r: f64,
    sources: SourceBasis,
    newton: NewtonOptions,
    mass: DVector<f64>,
    /// Lumped mass with boundary entries zeroed.
    interior_mass: DVector<f64>,
    /// Source loads with boundary rows zeroed.
    loads: DMatrix<f64>,
    assembler: StiffnessAssembler,
    symbolic: Arc<SymbolicLu>,
}

impl SemilinearProblem {
    pub fn new(mesh: StructuredMesh, r: f64, sources: SourceBasis, newton: NewtonOptions) -> Result<Self> {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "reaction coefficient must be >= 0, got {r}"
            )));
        }
        check_len("source loads", mesh.num_nodes(), sources.loads.nrows())?;
        let mask = mesh.boundary_mask();
        let mass = lumped_mass_diagonal(&mesh);
        let interior_mass = DVector::from_fn(mass.len(), |i, _| if mask[i] { 0.0 } else { mass[i] });
        let mut loads = sources.loads.clone();
        for (i, &b) in mask.iter().enumerate() {
            if b {
                loads.row_mut(i).fill(0.0);
            }
        }
        let assembler = StiffnessAssembler::new(&mesh);
        let pattern = assembler.assemble(&DVector::from_element(mesh.num_nodes(), 1.0))?;
        let symbolic = Arc::new(SymbolicLu::analyze(&pattern));
        Ok(Self {
            mesh,
            r,
            sources,
            newton,
            mass,
            interior_mass,
            loads,
            assembler,
            symbolic,
        })
    }

    pub fn mesh(&self) -> &StructuredMesh {
        &self.mesh
    }

    pub fn reaction(&self) -> f64 {
        self.r
    }

    pub fn sources(&self) -> &SourceBasis {
        &self.sources
    }

    pub fn num_controls(&self) -> usize {
        self.sources.num_controls()
    }

    pub fn newton_options(&self) -> &NewtonOptions {
        &self.newton
    }

    pub fn set_newton_options(&mut self, opts: NewtonOptions) {
        self.newton = opts;
    }

    pub fn lumped_mass(&self) -> &DVector<f64> {
        &self.mass
    }

    /// `∂_z R = -F̃`; this returns `F̃`.
    pub fn control_loads(&self) -> &DMatrix<f64> {
        &self.loads
    }

    pub fn symbolic(&self) -> &Arc<SymbolicLu> {
        &self.symbolic
    }

    /// `K(e^m)` with Dirichlet rows and columns eliminated.
    pub fn state_operator(&self, m: &DVector<f64>) -> Result<SparseOperator> {
        check_len("parameter field", self.mesh.num_nodes(), m.len())?;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("parameter field has non-finite entries".into()));
        }
        let mut k = self.assembler.assemble(&m.map(f64::exp))?;
        eliminate_in_place(&mut k, self.mesh.boundary_mask());
        Ok(k)
    }

    fn residual(&self, k: &SparseOperator, u: &DVector<f64>, load: &DVector<f64>) -> DVector<f64> {
        let mut res = k.mul_vec(u);
        for i in 0..u.len() {
            res[i] += self.r * self.interior_mass[i] * u[i] * u[i] * u[i] - load[i];
        }
        res
    }

    /// Newton operator `K(e^m) + 3r diag(M u²)` at the state `u`.
    pub fn newton_operator(&self, m: &DVector<f64>, u: &DVector<f64>) -> Result<SparseOperator> {
        check_len("state", self.mesh.num_nodes(), u.len())?;
        Ok(self.jacobian(&self.state_operator(m)?, u))
    }

    fn jacobian(&self, k: &SparseOperator, u: &DVector<f64>) -> SparseOperator {
        let mut j = k.clone();
        if self.r != 0.0 {
            let d = DVector::from_fn(u.len(), |i, _| 3.0 * self.r * self.interior_mass[i] * u[i] * u[i]);
            j.add_diagonal(&d);
        }
        j
    }

    /// Interior load `F̃ z`.
    pub fn control_load(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("control vector", self.num_controls(), z.len())?;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("control vector has non-finite entries".into()));
        }
        Ok(&self.loads * z)
    }

    pub fn solve_state(&self, m: &DVector<f64>, z: &DVector<f64>) -> Result<StateSolution> {
        let load = self.control_load(z)?;
        let k = self.state_operator(m)?;
        self.newton_solve(&k, &load)
    }

    /// Solves with an arbitrary nodal load vector; boundary entries are ignored.
    pub fn solve_with_load(&self, m: &DVector<f64>, load: &DVector<f64>) -> Result<StateSolution> {
        check_len("load vector", self.mesh.num_nodes(), load.len())?;
        let mut load = load.clone();
        for (i, &b) in self.mesh.boundary_mask().iter().enumerate() {
            if b {
                load[i] = 0.0;
            }
        }
        let k = self.state_operator(m)?;
        self.newton_solve(&k, &load)
    }

    fn newton_solve(&self, k: &SparseOperator, load: &DVector<f64>) -> Result<StateSolution> {
        let opts = &self.newton;
        let mut u = DVector::zeros(load.len());
        let mut res = self.residual(k, &u, load);
        let mut norm = res.norm();
        let norm0 = norm;
        let mut history = vec![norm];
        let mut iterations = 0;
        while norm > opts.atol && norm > opts.rtol * norm0 {
            if iterations == opts.max_iter {
                return Err(non_convergence(iterations, norm, u));
            }
            let factors = factorize_with(&self.symbolic, &self.jacobian(k, &u))?;
            let step = factors.solve(&(-&res))?;
            let mut alpha = 1.0;
            let mut backtracks = 0;
            let (trial, trial_res, trial_norm) = loop {
                let trial = &u + &step * alpha;
                let trial_res = self.residual(k, &trial, load);
                let trial_norm = trial_res.norm();
                if trial_norm * trial_norm <= (1.0 - 2.0 * opts.armijo_c * alpha) * norm * norm {
                    break (trial, trial_res, trial_norm);
                }
                backtracks += 1;
                if backtracks > opts.max_backtracks {
                    return Err(non_convergence(iterations, norm, u));
                }
                alpha *= opts.backtrack_factor;
            };
            u = trial;
            res = trial_res;
            norm = trial_norm;
            iterations += 1;
            history.push(norm);
        }
        let factors = factorize_with(&self.symbolic, &self.jacobian(k, &u))?;
        Ok(StateSolution {
            u,
            residual_norm: norm,
            iterations,
            residual_history: history,
            factors,
        })
    }

    /// Gradient of `Q(u(m, z))` in `z` from `∂_u Q`: solves `J^T p = -∂_u Q`
    /// with the retained factors and returns `-F̃^T p`.
    pub fn performance_gradient(&self, state: &StateSolution, qgrad_u: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("performance gradient", self.mesh.num_nodes(), qgrad_u.len())?;
        let p = state.factors.solve_transpose(&(-qgrad_u))?;
        Ok(-self.loads.tr_mul(&p))
    }

    /// `Φ^T M ∂_z u = Φ^T M J^-1 F̃` (an `r_U x d_Z` matrix).
    pub fn reduced_control_jacobian(
        &self,
        state: &StateSolution,
        basis: &PodBasis,
        route: JacobianRoute,
    ) -> Result<DMatrix<f64>> {
        check_len("POD basis", self.mesh.num_nodes(), basis.dim())?;
        let forward = match route {
            JacobianRoute::Auto => self.num_controls() < basis.rank(),
            JacobianRoute::Forward => true,
            JacobianRoute::Adjoint => false,
        };
        if forward {
            let s = state.factors.solve_many(&self.loads)?;
            Ok(basis.reduce_many(&s))
        } else {
            let w = state.factors.solve_transpose_many(&basis.weighted_modes())?;
            Ok(w.transpose() * &self.loads)
        }
    }

    /// Full control Jacobian `∂_z u` (`d x d_Z`).
    pub fn control_jacobian(&self, state: &StateSolution) -> Result<DMatrix<f64>> {
        state.factors.solve_many(&self.loads)
    }
}

fn non_convergence(iterations: usize, residual: f64, u: DVector<f64>) -> Error {
    Error::NonConvergence {
        iterations,
        residual,
        last_iterate: Box::new(u.as_slice().to_vec()),
    }
}
