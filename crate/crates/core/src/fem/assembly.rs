//! P1 element matrices and global assembly.

use std::collections::BTreeSet;

use super::data::{ScalarData, VectorData};
use super::sparse::CsrMatrix;
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Vec2};

/// Edge-midpoint rule: exact for quadratics, weights `area / 3`.
pub const QUADRATURE: [[f64; 3]; 3] = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]];

/// Area and gradients of the three barycentric coordinates.
pub fn element_geometry(mesh: &Mesh, t: usize) -> Result<(f64, [Vec2; 3])> {
    let [p0, p1, p2] = mesh.triangle_points(t);
    let area = 0.5 * ((p1.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (p1.y - p0.y));
    let scale = (p1 - p0).norm_squared().max((p2 - p1).norm_squared()).max((p0 - p2).norm_squared());
    if !(area > 1e-14 * scale) {
        return Err(Error::Assembly { triangle: t, area });
    }
    let d = 2.0 * area;
    Ok((
        area,
        [
            Vec2::new(p1.y - p2.y, p2.x - p1.x) / d,
            Vec2::new(p2.y - p0.y, p0.x - p2.x) / d,
            Vec2::new(p0.y - p1.y, p1.x - p0.x) / d,
        ],
    ))
}

pub fn element_stiffness(area: f64, grads: &[Vec2; 3]) -> [[f64; 3]; 3] {
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = area * grads[i].dot(&grads[j]);
        }
    }
    k
}

pub fn element_mass(area: f64) -> [[f64; 3]; 3] {
    let mut m = [[area / 12.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = area / 6.0;
    }
    m
}

/// Node-to-node sparsity pattern of P1 operators.
pub fn pattern(mesh: &Mesh) -> CsrMatrix {
    let mut rows = vec![BTreeSet::new(); mesh.num_nodes()];
    for tri in mesh.triangles() {
        for &i in tri {
            for &j in tri {
                rows[i].insert(j);
            }
        }
    }
    CsrMatrix::with_pattern(&rows)
}

fn assemble(mesh: &Mesh, local: impl Fn(f64, &[Vec2; 3]) -> [[f64; 3]; 3]) -> Result<CsrMatrix> {
    let mut a = pattern(mesh);
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let (area, grads) = element_geometry(mesh, t)?;
        let e = local(area, &grads);
        for i in 0..3 {
            for j in 0..3 {
                a.add(tri[i], tri[j], e[i][j]);
            }
        }
    }
    Ok(a)
}

pub fn assemble_stiffness(mesh: &Mesh) -> Result<CsrMatrix> {
    assemble(mesh, element_stiffness)
}

pub fn assemble_mass(mesh: &Mesh) -> Result<CsrMatrix> {
    assemble(mesh, |area, _| element_mass(area))
}

/// `F_i = int f phi_i` with the edge-midpoint rule.
pub fn assemble_load(mesh: &Mesh, f: &ScalarData) -> Result<Vec<f64>> {
    assemble_load_on(mesh, f, |_| true)
}

/// Load restricted to the triangles selected by `include`.
pub fn assemble_load_on(mesh: &Mesh, f: &ScalarData, include: impl Fn(usize) -> bool) -> Result<Vec<f64>> {
    f.check(mesh)?;
    let mut out = vec![0.0; mesh.num_nodes()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        if !include(t) {
            continue;
        }
        let (area, _) = element_geometry(mesh, t)?;
        for q in QUADRATURE {
            let w = area / 3.0 * f.eval(mesh, t, q);
            for k in 0..3 {
                out[tri[k]] += w * q[k];
            }
        }
    }
    Ok(out)
}

/// `G_i = int A . grad phi_i` with the edge-midpoint rule.
pub fn assemble_vector_load(mesh: &Mesh, a: &VectorData) -> Result<Vec<f64>> {
    a.check(mesh)?;
    let mut out = vec![0.0; mesh.num_nodes()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let (area, grads) = element_geometry(mesh, t)?;
        let mean = QUADRATURE.iter().fold(Vec2::zeros(), |s, q| s + a.eval(mesh, t, *q)) / 3.0;
        for k in 0..3 {
            out[tri[k]] += area * mean.dot(&grads[k]);
        }
    }
    Ok(out)
}

/// Constant gradient of a P1 field on every triangle.
pub fn element_gradients(mesh: &Mesh, u: &[f64]) -> Result<Vec<Vec2>> {
    (0..mesh.num_triangles())
        .map(|t| {
            let (_, g) = element_geometry(mesh, t)?;
            let tri = mesh.triangles()[t];
            Ok(g[0] * u[tri[0]] + g[1] * u[tri[1]] + g[2] * u[tri[2]])
        })
        .collect()
}
