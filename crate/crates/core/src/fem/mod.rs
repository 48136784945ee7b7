//! P1 finite elements: assembly, boundary conditions, boundary calculus and
//! direct solves.

mod assembly;
mod bc;
mod boundary;
mod data;
mod solver;
mod sparse;

pub use assembly::{
    assemble_load, assemble_load_on, assemble_mass, assemble_stiffness, assemble_vector_load, element_geometry,
    element_gradients, element_mass, element_stiffness, pattern, QUADRATURE,
};
pub use bc::{apply_dirichlet, DofMap, EssentialBc, ReducedSystem};
pub use boundary::{
    boundary_integral, consistent_flux, integrate, normal_component, normal_derivative, recovered_gradients,
    second_normal_derivative, tangential_derivative, tangential_gradient, tangential_laplacian,
};
pub use data::{ScalarData, ScalarFn, VectorData};
pub use solver::SparseSolver;
pub use sparse::CsrMatrix;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Vec2};

/// A named nodal scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub name: String,
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Field { name: name.into(), values }
    }

    pub fn check(&self, mesh: &Mesh) -> Result<()> {
        if self.values.len() != mesh.num_nodes() {
            return Err(Error::InvalidArgument(format!(
                "field '{}' has {} values, mesh has {} nodes",
                self.name,
                self.values.len(),
                mesh.num_nodes()
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("field '{}' is not finite at node {i}", self.name)));
        }
        Ok(())
    }
}

/// Stiffness and mass matrices of one mesh.
#[derive(Debug, Clone)]
pub struct Operators {
    pub stiffness: CsrMatrix,
    pub mass: CsrMatrix,
}

impl Operators {
    pub fn new(mesh: &Mesh) -> Result<Self> {
        Ok(Operators { stiffness: assemble_stiffness(mesh)?, mass: assemble_mass(mesh)? })
    }

    pub fn l2_norm(&self, u: &[f64]) -> f64 {
        self.mass.bilinear(u, u).max(0.0).sqrt()
    }

    pub fn h1_norm(&self, u: &[f64]) -> f64 {
        (self.stiffness.bilinear(u, u) + self.mass.bilinear(u, u)).max(0.0).sqrt()
    }

    /// `K - k2 M`.
    pub fn helmholtz(&self, k2: f64) -> CsrMatrix {
        self.stiffness.axpby(1.0, &self.mass, -k2)
    }
}

pub fn l2_norm(mesh: &Mesh, u: &[f64]) -> Result<f64> {
    Ok(assemble_mass(mesh)?.bilinear(u, u).max(0.0).sqrt())
}

pub fn h1_norm(mesh: &Mesh, u: &[f64]) -> Result<f64> {
    Ok(Operators::new(mesh)?.h1_norm(u))
}

/// P1 interpolant of `u` at `p`.
pub fn interpolate(mesh: &Mesh, u: &[f64], p: Vec2) -> Result<f64> {
    let (t, b) =
        mesh.locate(p).ok_or_else(|| Error::Evaluation(format!("point ({}, {}) is outside the mesh", p.x, p.y)))?;
    let tri = mesh.triangles()[t];
    Ok(b[0] * u[tri[0]] + b[1] * u[tri[1]] + b[2] * u[tri[2]])
}

/// Recovered nodal gradient interpolated at `p`.
pub fn gradient_at(mesh: &Mesh, grads: &[Vec2], p: Vec2) -> Result<Vec2> {
    let (t, b) =
        mesh.locate(p).ok_or_else(|| Error::Evaluation(format!("point ({}, {}) is outside the mesh", p.x, p.y)))?;
    let tri = mesh.triangles()[t];
    Ok(grads[tri[0]] * b[0] + grads[tri[1]] * b[1] + grads[tri[2]] * b[2])
}

/// Discrete harmonic extension of prescribed nodal vectors: each component
/// solves `K u = 0` on the remaining nodes.
pub fn harmonic_extension(mesh: &Mesh, prescribed: &[(usize, Vec2)]) -> Result<Vec<Vec2>> {
    let k = assemble_stiffness(mesh)?;
    let n = mesh.num_nodes();
    let nodes: Vec<usize> = prescribed.iter().map(|p| p.0).collect();
    let dofs = DofMap::new(n, &nodes);
    let reduced = k.submatrix(&dofs.free, &dofs.index);
    let solver = SparseSolver::cholesky(&reduced)?;
    let mut out = vec![Vec2::zeros(); n];
    for comp in 0..2 {
        let mut full = vec![0.0; n];
        for &(i, v) in prescribed {
            if i >= n {
                return Err(Error::InvalidArgument(format!("node {i} out of range")));
            }
            full[i] = v[comp];
        }
        let kx = k.matvec(&full);
        let rhs: Vec<f64> = dofs.free.iter().map(|&i| -kx[i]).collect();
        let x = solver.solve(&rhs);
        for (r, &i) in dofs.free.iter().enumerate() {
            full[i] = x[r];
        }
        for (o, v) in out.iter_mut().zip(full) {
            o[comp] = v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_rectangle, BoundaryTag};
    use std::f64::consts::PI;

    #[test]
    fn operator_invariants() {
        let m = generate_rectangle(1.0, 0.7, 0.1).unwrap();
        let ops = Operators::new(&m).unwrap();
        assert!(ops.stiffness.asymmetry() < 1e-14);
        assert!(ops.mass.asymmetry() < 1e-14);
        assert!(ops.stiffness.matvec(&vec![1.0; m.num_nodes()]).iter().all(|v| v.abs() < 1e-12));
        assert!(SparseSolver::cholesky(&ops.mass).is_ok());
    }

    #[test]
    fn norms() {
        let m = generate_rectangle(1.0, 1.0, 0.02).unwrap();
        let ops = Operators::new(&m).unwrap();
        assert_eq!(ops.l2_norm(&vec![0.0; m.num_nodes()]), 0.0);
        let one = vec![1.0; m.num_nodes()];
        assert!((ops.l2_norm(&one) - 1.0).abs() < 1e-12);
        assert!((ops.h1_norm(&one) - 1.0).abs() < 1e-12);
        let s: Vec<f64> = m.nodes().iter().map(|p| (PI * p.x).sin() * (PI * p.y).sin()).collect();
        assert!((ops.l2_norm(&s) - 0.5).abs() / 0.5 < 0.01);
    }

    #[test]
    fn harmonic_extension_reproduces_affine_maps() {
        let m = generate_rectangle(1.0, 1.0, 0.1).unwrap();
        let map = |p: Vec2| Vec2::new(0.1 * p.x + 0.2 * p.y, -0.3 * p.x);
        let pres: Vec<(usize, Vec2)> =
            m.boundary_nodes(BoundaryTag::Outer).into_iter().map(|i| (i, map(m.nodes()[i]))).collect();
        let ext = harmonic_extension(&m, &pres).unwrap();
        for (i, p) in m.nodes().iter().enumerate() {
            assert!((ext[i] - map(*p)).norm() < 1e-12);
        }
    }
}
