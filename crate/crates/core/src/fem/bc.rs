//! Essential boundary conditions by symmetric elimination.

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};
use crate::mesh::{BoundaryTag, Mesh};

/// Prescribed nodal values, sorted by node index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EssentialBc {
    nodes: Vec<usize>,
    values: Vec<f64>,
}

impl EssentialBc {
    pub fn none() -> Self {
        Self::default()
    }

    /// Zero values on every node carrying one of `tags`.
    pub fn homogeneous(mesh: &Mesh, tags: &[BoundaryTag]) -> Self {
        let mut nodes: Vec<usize> = tags.iter().flat_map(|&t| mesh.boundary_nodes(t)).collect();
        nodes.sort_unstable();
        nodes.dedup();
        let values = vec![0.0; nodes.len()];
        EssentialBc { nodes, values }
    }

    /// Arbitrary values; every node must lie on the boundary.
    pub fn new(mesh: &Mesh, mut pairs: Vec<(usize, f64)>) -> Result<Self> {
        let boundary = mesh.boundary_mask();
        pairs.sort_by_key(|p| p.0);
        for w in pairs.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::BoundaryCondition(format!("node {} is constrained twice", w[0].0)));
            }
        }
        for &(i, v) in &pairs {
            if i >= mesh.num_nodes() || !boundary[i] {
                return Err(Error::BoundaryCondition(format!("node {i} is not on the boundary")));
            }
            if !v.is_finite() {
                return Err(Error::BoundaryCondition(format!("value at node {i} is not finite")));
            }
        }
        Ok(EssentialBc { nodes: pairs.iter().map(|p| p.0).collect(), values: pairs.iter().map(|p| p.1).collect() })
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_homogeneous(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Map between all nodes and the unconstrained ones.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    pub n: usize,
    pub free: Vec<usize>,
    pub index: Vec<Option<usize>>,
}

impl DofMap {
    pub fn new(n: usize, constrained: &[usize]) -> Self {
        let mut fixed = vec![false; n];
        for &i in constrained {
            fixed[i] = true;
        }
        let mut index = vec![None; n];
        let mut free = Vec::with_capacity(n - constrained.len().min(n));
        for i in 0..n {
            if !fixed[i] {
                index[i] = Some(free.len());
                free.push(i);
            }
        }
        DofMap { n, free, index }
    }

    pub fn num_free(&self) -> usize {
        self.free.len()
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&i| full[i]).collect()
    }

    /// Free values scattered into a full vector, zero elsewhere.
    pub fn extend(&self, reduced: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (k, &i) in self.free.iter().enumerate() {
            out[i] = reduced[k];
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub dofs: DofMap,
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    prescribed: Vec<f64>,
}

impl ReducedSystem {
    /// Full solution from the free values and the prescribed ones.
    pub fn expand(&self, reduced: &[f64]) -> Vec<f64> {
        let mut out = self.prescribed.clone();
        for (k, &i) in self.dofs.free.iter().enumerate() {
            out[i] = reduced[k];
        }
        out
    }
}

/// Removes constrained rows and columns, moving their contribution to the
/// right-hand side.
pub fn apply_dirichlet(op: &CsrMatrix, rhs: &[f64], bc: &EssentialBc) -> Result<ReducedSystem> {
    let n = op.n();
    if rhs.len() != n {
        return Err(Error::InvalidArgument(format!("rhs has length {}, operator has size {n}", rhs.len())));
    }
    if let Some(&i) = bc.nodes.iter().find(|&&i| i >= n) {
        return Err(Error::BoundaryCondition(format!("node {i} out of range")));
    }
    let dofs = DofMap::new(n, &bc.nodes);
    let mut prescribed = vec![0.0; n];
    for (&i, &v) in bc.nodes.iter().zip(&bc.values) {
        prescribed[i] = v;
    }
    let correction = if bc.is_homogeneous() { vec![0.0; n] } else { op.matvec(&prescribed) };
    let rhs = dofs.free.iter().map(|&i| rhs[i] - correction[i]).collect();
    let matrix = op.submatrix(&dofs.free, &dofs.index);
    Ok(ReducedSystem { dofs, matrix, rhs, prescribed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble_load, assemble_stiffness, ScalarData, SparseSolver};
    use crate::mesh::generate_rectangle;

    #[test]
    fn all_constrained_gives_prescribed() {
        let m = generate_rectangle(1.0, 1.0, 0.5).unwrap();
        let k = assemble_stiffness(&m).unwrap();
        let mut bc = EssentialBc::homogeneous(&m, &[BoundaryTag::Outer]);
        bc.nodes = (0..m.num_nodes()).collect();
        bc.values = vec![2.0; m.num_nodes()];
        let r = apply_dirichlet(&k, &vec![0.0; m.num_nodes()], &bc).unwrap();
        assert_eq!(r.matrix.n(), 0);
        assert_eq!(r.expand(&[]), vec![2.0; m.num_nodes()]);
    }

    #[test]
    fn linear_patch_test() {
        let m = generate_rectangle(1.0, 1.0, 0.2).unwrap();
        let exact = |p: crate::Vec2| 1.0 + 2.0 * p.x - 3.0 * p.y;
        let pairs = m.boundary_nodes(BoundaryTag::Outer).into_iter().map(|i| (i, exact(m.nodes()[i]))).collect();
        let bc = EssentialBc::new(&m, pairs).unwrap();
        let k = assemble_stiffness(&m).unwrap();
        let r = apply_dirichlet(&k, &vec![0.0; m.num_nodes()], &bc).unwrap();
        let u = r.expand(&SparseSolver::cholesky(&r.matrix).unwrap().solve(&r.rhs));
        for (i, p) in m.nodes().iter().enumerate() {
            assert!((u[i] - exact(*p)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_dirichlet_keeps_boundary_zero() {
        let m = generate_rectangle(1.0, 1.0, 0.25).unwrap();
        let bc = EssentialBc::homogeneous(&m, &[BoundaryTag::Outer]);
        let f = assemble_load(&m, &ScalarData::Constant(1.0)).unwrap();
        let r = apply_dirichlet(&assemble_stiffness(&m).unwrap(), &f, &bc).unwrap();
        let u = r.expand(&SparseSolver::lu(&r.matrix).unwrap().solve(&r.rhs));
        for i in m.boundary_nodes(BoundaryTag::Outer) {
            assert_eq!(u[i], 0.0);
        }
    }

    #[test]
    fn interior_node_is_rejected() {
        let m = generate_rectangle(1.0, 1.0, 0.5).unwrap();
        // node 12 is the last cell center
        assert!(matches!(EssentialBc::new(&m, vec![(12, 0.0)]), Err(Error::BoundaryCondition(_))));
    }
}
