use nalgebra::DVector;

use super::mesh::StructuredMesh;
use super::sparse::SparseOperator;
use crate::error::{check_len, Error, Result};

/// P1 stiffness `K(a)_ij = ∫ a ∇φ_i·∇φ_j` with `a` taken per element as the
/// mean of its three nodal values.
pub fn assemble_stiffness(mesh: &StructuredMesh, a: &DVector<f64>) -> Result<SparseOperator> {
    StiffnessAssembler::new(mesh).assemble(a)
}

/// Stiffness assembly with the sparsity pattern, the element-to-slot scatter
/// map and the local geometric matrices computed once per mesh.
#[derive(Debug, Clone)]
pub struct StiffnessAssembler {
    template: SparseOperator,
    triangles: Vec<[usize; 3]>,
    slots: Vec<[usize; 9]>,
    local: Vec<[f64; 9]>,
}

impl StiffnessAssembler {
    pub fn new(mesh: &StructuredMesh) -> Self {
        let triangles = mesh.triangles().to_vec();
        let mut triplets = Vec::with_capacity(9 * triangles.len());
        for tri in &triangles {
            for &p in tri {
                for &q in tri {
                    triplets.push((p, q, 0.0));
                }
            }
        }
        let template = SparseOperator::from_triplets(mesh.num_nodes(), triplets, true);
        let mut slots = Vec::with_capacity(triangles.len());
        let mut local = Vec::with_capacity(triangles.len());
        for tri in &triangles {
            let (area, g) = mesh.element_geometry(tri);
            let mut s = [0usize; 9];
            let mut k = [0.0; 9];
            for p in 0..3 {
                let start = template.row_ptr()[tri[p]];
                let (cols, _) = template.row(tri[p]);
                for q in 0..3 {
                    let off = cols.binary_search(&tri[q]).expect("pattern contains element couplings");
                    s[3 * p + q] = start + off;
                    k[3 * p + q] = area * (g[p][0] * g[q][0] + g[p][1] * g[q][1]);
                }
            }
            slots.push(s);
            local.push(k);
        }
        Self {
            template,
            triangles,
            slots,
            local,
        }
    }

    pub fn assemble(&self, a: &DVector<f64>) -> Result<SparseOperator> {
        check_len("assemble_stiffness", self.template.dim(), a.len())?;
        if let Some(i) = a.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "coefficient must be positive and finite, got {} at node {i}",
                a[i]
            )));
        }
        let mut op = self.template.clone();
        let vals = op.values_mut();
        for ((tri, slots), local) in self.triangles.iter().zip(&self.slots).zip(&self.local) {
            let coeff = (a[tri[0]] + a[tri[1]] + a[tri[2]]) / 3.0;
            for (&s, &k) in slots.iter().zip(local) {
                vals[s] += coeff * k;
            }
        }
        Ok(op)
    }
}

/// P1 mass matrix; `lumped` gives the row-sum diagonal.
pub fn assemble_mass(mesh: &StructuredMesh, lumped: bool) -> SparseOperator {
    if lumped {
        return SparseOperator::diagonal_from(&lumped_mass_diagonal(mesh));
    }
    let mut triplets = Vec::with_capacity(9 * mesh.triangles().len());
    for tri in mesh.triangles() {
        let (area, _) = mesh.element_geometry(tri);
        for p in 0..3 {
            for q in 0..3 {
                let m = if p == q { area / 6.0 } else { area / 12.0 };
                triplets.push((tri[p], tri[q], m));
            }
        }
    }
    SparseOperator::from_triplets(mesh.num_nodes(), triplets, true)
}

/// Lumped mass as a plain diagonal vector.
pub fn lumped_mass_diagonal(mesh: &StructuredMesh) -> DVector<f64> {
    let mut d = DVector::zeros(mesh.num_nodes());
    for tri in mesh.triangles() {
        let (area, _) = mesh.element_geometry(tri);
        for &n in tri {
            d[n] += area / 3.0;
        }
    }
    d
}

/// Imposes `u = value` on masked nodes by symmetric elimination: masked rows
/// and columns become identity rows/columns, and the eliminated column
/// contributions move to the right-hand side. The sparsity pattern is kept.
pub fn apply_dirichlet(
    op: &SparseOperator,
    rhs: &DVector<f64>,
    mask: &[bool],
    value: f64,
) -> Result<(SparseOperator, DVector<f64>)> {
    check_len("apply_dirichlet (rhs)", op.dim(), rhs.len())?;
    check_len("apply_dirichlet (mask)", op.dim(), mask.len())?;
    let mut out = op.clone();
    let mut b = rhs.clone();
    let row_ptr = op.row_ptr().to_vec();
    let cols = op.col_idx().to_vec();
    let vals = out.values_mut();
    for i in 0..op.dim() {
        for k in row_ptr[i]..row_ptr[i + 1] {
            let j = cols[k];
            if mask[i] {
                vals[k] = if i == j { 1.0 } else { 0.0 };
            } else if mask[j] {
                b[i] -= vals[k] * value;
                vals[k] = 0.0;
            }
        }
        if mask[i] {
            b[i] = value;
        }
    }
    Ok((out, b))
}

/// Zeroes the masked rows and columns and puts ones on their diagonal,
/// without touching any right-hand side.
pub(crate) fn eliminate_in_place(op: &mut SparseOperator, mask: &[bool]) {
    let row_ptr = op.row_ptr().to_vec();
    let cols = op.col_idx().to_vec();
    let vals = op.values_mut();
    for i in 0..mask.len() {
        for k in row_ptr[i]..row_ptr[i + 1] {
            let j = cols[k];
            if mask[i] || mask[j] {
                vals[k] = if i == j { 1.0 } else { 0.0 };
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg_fem::mesh::build_mesh;

    fn ones(n: usize) -> DVector<f64> {
        DVector::from_element(n, 1.0)
    }

    #[test]
    fn constants_are_in_stiffness_kernel() {
        let mesh = build_mesh(6, 5).unwrap();
        let k = assemble_stiffness(&mesh, &ones(mesh.num_nodes())).unwrap();
        let r = k.mul_vec(&ones(mesh.num_nodes()));
        assert!(r.amax() < 1e-12);
        assert!(k.asymmetry() <= 1e-12 * k.max_abs());
    }

    #[test]
    fn linear_field_energy_is_exact() {
        let mesh = build_mesh(7, 7).unwrap();
        let k = assemble_stiffness(&mesh, &ones(mesh.num_nodes())).unwrap();
        let u = mesh.interpolate(|x, _| x);
        assert!((k.bilinear(&u, &u) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stiffness_is_linear_in_coefficient() {
        let mesh = build_mesh(4, 4).unwrap();
        let n = mesh.num_nodes();
        let k1 = assemble_stiffness(&mesh, &ones(n)).unwrap();
        let k2 = assemble_stiffness(&mesh, &(ones(n) * 2.0)).unwrap();
        for (a, b) in k1.values().iter().zip(k2.values()) {
            assert!((2.0 * a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_nonpositive_coefficient() {
        let mesh = build_mesh(3, 3).unwrap();
        let mut a = ones(mesh.num_nodes());
        a[5] = 0.0;
        assert!(assemble_stiffness(&mesh, &a).is_err());
        a[5] = -1.0;
        assert!(assemble_stiffness(&mesh, &a).is_err());
    }

    #[test]
    fn total_mass_is_domain_area() {
        let mesh = build_mesh(5, 9).unwrap();
        let e = ones(mesh.num_nodes());
        for lumped in [false, true] {
            let m = assemble_mass(&mesh, lumped);
            assert!((m.bilinear(&e, &e) - 1.0).abs() < 1e-12);
        }
        assert!((lumped_mass_diagonal(&mesh).sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lumped_interior_entry_is_h_squared() {
        let mesh = build_mesh(8, 8).unwrap();
        let m = assemble_mass(&mesh, true);
        let h = mesh.h();
        let node = mesh.node_index(3, 4);
        assert!((m.get(node, node) - h * h).abs() < 1e-15);
        assert!(m.diagonal().iter().all(|v| *v > 0.0));
        assert_eq!(m.diagonal(), lumped_mass_diagonal(&mesh));
        assert!(m.is_diagonal());
    }

    #[test]
    fn consistent_mass_converges_to_quarter() {
        let mut errs = Vec::new();
        for n in [8, 16, 32] {
            let mesh = build_mesh(n, n).unwrap();
            let m = assemble_mass(&mesh, false);
            let u = mesh.interpolate(|x, y| (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin());
            errs.push((m.bilinear(&u, &u) - 0.25).abs());
        }
        assert!(errs[2] < errs[1] && errs[1] < errs[0]);
        assert!(errs[2] < 1e-3);
    }

    #[test]
    fn dirichlet_on_identity_is_noop() {
        let id = SparseOperator::identity(4);
        let (a, b) = apply_dirichlet(&id, &DVector::zeros(4), &[true; 4], 0.0).unwrap();
        assert_eq!(a, id);
        assert_eq!(b, DVector::zeros(4));
    }

    #[test]
    fn dirichlet_keeps_symmetry_and_moves_columns() {
        let mesh = build_mesh(4, 4).unwrap();
        let k = assemble_stiffness(&mesh, &ones(mesh.num_nodes())).unwrap();
        let rhs = DVector::zeros(mesh.num_nodes());
        let (a, b) = apply_dirichlet(&k, &rhs, mesh.boundary_mask(), 2.0).unwrap();
        assert!(a.asymmetry() == 0.0);
        // with u = 2 everywhere, interior rows of K u vanish, so the lifted rhs
        // must reproduce it exactly
        let u = DVector::from_element(mesh.num_nodes(), 2.0);
        let r = a.mul_vec(&u) - &b;
        assert!(r.amax() < 1e-12);
    }
}
