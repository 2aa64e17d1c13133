use crate::error::{Error, Result};

/// Uniform P1 triangulation of the unit square.
///
/// Nodes are numbered row-major: node `(i, j)` with `x1 = i / nx`,
/// `x2 = j / ny` has index `j * (nx + 1) + i`. Each cell is split along the
/// diagonal from its lower-left to its upper-right corner.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredMesh {
    nx: usize,
    ny: usize,
    coords: Vec<[f64; 2]>,
    boundary: Vec<bool>,
    triangles: Vec<[usize; 3]>,
}

impl StructuredMesh {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidArgument(format!(
                "mesh needs at least 2 cells per axis, got {nx}x{ny}"
            )));
        }
        let mut coords = Vec::with_capacity((nx + 1) * (ny + 1));
        let mut boundary = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                coords.push([i as f64 / nx as f64, j as f64 / ny as f64]);
                boundary.push(i == 0 || i == nx || j == 0 || j == ny);
            }
        }
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let n00 = j * (nx + 1) + i;
                let n10 = n00 + 1;
                let n01 = n00 + nx + 1;
                let n11 = n01 + 1;
                // both counterclockwise
                triangles.push([n00, n10, n11]);
                triangles.push([n00, n11, n01]);
            }
        }
        Ok(Self {
            nx,
            ny,
            coords,
            boundary,
            triangles,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    /// Cell width along x1.
    pub fn h(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn num_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// Evaluates `f` at every node.
    pub fn interpolate(&self, f: impl Fn(f64, f64) -> f64) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_iterator(self.num_nodes(), self.coords.iter().map(|p| f(p[0], p[1])))
    }

    /// Area and P1 shape-function gradients of a triangle.
    pub(crate) fn element_geometry(&self, tri: &[usize; 3]) -> (f64, [[f64; 2]; 3]) {
        let p = tri.map(|n| self.coords[n]);
        let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
        let area = 0.5 * det.abs();
        let mut grads = [[0.0; 2]; 3];
        for (k, g) in grads.iter_mut().enumerate() {
            let a = p[(k + 1) % 3];
            let b = p[(k + 2) % 3];
            *g = [(a[1] - b[1]) / det, (b[0] - a[0]) / det];
        }
        (area, grads)
    }
}

pub fn build_mesh(nx: usize, ny: usize) -> Result<StructuredMesh> {
    StructuredMesh::new(nx, ny)
}
