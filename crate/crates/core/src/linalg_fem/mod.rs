//! P1 finite elements on a uniform triangulation of the unit square, sparse
//! operators, Dirichlet elimination and reusable triangular factors.

mod assembly;
mod lu;
mod mesh;
mod sparse;

pub(crate) use assembly::eliminate_in_place;
pub use assembly::{apply_dirichlet, assemble_mass, assemble_stiffness, lumped_mass_diagonal, StiffnessAssembler};
pub use lu::{factorize, factorize_with, SymbolicLu, TriangularFactors};
pub use mesh::{build_mesh, StructuredMesh};
pub use sparse::{weighted_inner, SparseOperator};
