//! Calculus on boundary loops.

use super::assembly::element_gradients;
use crate::error::{Error, Result};
use crate::mesh::{BoundaryGeometry, BoundaryTag, Mesh, Vec2};

fn check_len(mesh: &Mesh, v: &[f64], what: &str) -> Result<()> {
    if v.len() != mesh.num_nodes() {
        return Err(Error::InvalidArgument(format!(
            "{what} has {} values, mesh has {} nodes",
            v.len(),
            mesh.num_nodes()
        )));
    }
    Ok(())
}

/// Trapezoidal integral of a node-indexed density over the edges of `geom`.
pub fn integrate(geom: &BoundaryGeometry, density: &[f64]) -> f64 {
    geom.edge_nodes.iter().zip(&geom.edge_lengths).map(|([a, b], l)| 0.5 * l * (density[*a] + density[*b])).sum()
}

/// `int_{tag} density dsigma`; `density` is indexed by mesh node.
pub fn boundary_integral(mesh: &Mesh, tag: BoundaryTag, density: &[f64]) -> Result<f64> {
    check_len(mesh, density, "density")?;
    Ok(integrate(&mesh.boundary_geometry(tag)?, density))
}

/// Gradient at every node: element gradients averaged with the interior
/// angle of each incident triangle as weight.
pub fn recovered_gradients(mesh: &Mesh, u: &[f64]) -> Result<Vec<Vec2>> {
    check_len(mesh, u, "field")?;
    let g = element_gradients(mesh, u)?;
    let mut sum = vec![Vec2::zeros(); mesh.num_nodes()];
    let mut weight = vec![0.0; mesh.num_nodes()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        for (k, &i) in tri.iter().enumerate() {
            let w = mesh.triangle_angle(t, k);
            sum[i] += g[t] * w;
            weight[i] += w;
        }
    }
    Ok(sum.into_iter().zip(weight).map(|(s, w)| if w > 0.0 { s / w } else { s }).collect())
}

/// `du/dn` at the nodes of `tag` (zero elsewhere).
pub fn normal_derivative(mesh: &Mesh, tag: BoundaryTag, u: &[f64]) -> Result<Vec<f64>> {
    let geom = mesh.boundary_geometry(tag)?;
    let grad = recovered_gradients(mesh, u)?;
    Ok(normal_component(&geom, &grad))
}

/// Variationally consistent normal flux on `tag`: `residual` holds
/// `int grad u . grad phi_i - int (k2 u + f) phi_i` for every node, which on
/// boundary node `i` equals `int du/dn phi_i`; the boundary mass is lumped.
pub fn consistent_flux(mesh: &Mesh, tag: BoundaryTag, residual: &[f64]) -> Result<Vec<f64>> {
    check_len(mesh, residual, "residual")?;
    let geom = mesh.boundary_geometry(tag)?;
    let mut out = vec![0.0; residual.len()];
    for &i in &geom.nodes {
        out[i] = residual[i] / geom.node_weights[i];
    }
    Ok(out)
}

pub fn normal_component(geom: &BoundaryGeometry, grad: &[Vec2]) -> Vec<f64> {
    let mut out = vec![0.0; grad.len()];
    for &i in &geom.nodes {
        out[i] = grad[i].dot(&geom.node_normals[i]);
    }
    out
}

/// Loops of `geom` with their edge lengths; edge `i` of a loop runs from
/// node `i` to node `i + 1`.
fn loops_with_lengths(geom: &BoundaryGeometry) -> impl Iterator<Item = (&[usize], &[f64])> {
    let mut offset = 0;
    geom.loops.iter().map(move |lp| {
        let lengths = &geom.edge_lengths[offset..offset + lp.len()];
        offset += lp.len();
        (lp.nodes.as_slice(), lengths)
    })
}

/// Centered arclength derivative of `s` along every loop of `geom`, in the
/// traversal direction (the node tangent).
pub fn tangential_derivative(geom: &BoundaryGeometry, s: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; s.len()];
    for (nodes, len) in loops_with_lengths(geom) {
        let m = nodes.len();
        for i in 0..m {
            let p = (i + m - 1) % m;
            out[nodes[i]] = (s[nodes[(i + 1) % m]] - s[nodes[p]]) / (len[p] + len[i]);
        }
    }
    out
}

/// Tangential gradient of `s` on `tag`.
pub fn tangential_gradient(mesh: &Mesh, tag: BoundaryTag, s: &[f64]) -> Result<Vec<f64>> {
    check_len(mesh, s, "boundary scalar")?;
    let geom = mesh.boundary_geometry(tag)?;
    Ok(tangential_derivative(&geom, s))
}

/// Second arclength derivative with nonuniform spacing.
pub fn tangential_laplacian(geom: &BoundaryGeometry, s: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; s.len()];
    for (nodes, len) in loops_with_lengths(geom) {
        let m = nodes.len();
        for i in 0..m {
            let p = (i + m - 1) % m;
            let (prev, cur, next) = (nodes[p], nodes[i], nodes[(i + 1) % m]);
            out[cur] = ((s[next] - s[cur]) / len[i] - (s[cur] - s[prev]) / len[p]) / (0.5 * (len[p] + len[i]));
        }
    }
    out
}

/// `d2u/dn2` on `tag` from the trace of the equation `-lap u - k2 u = f`:
/// `lap u = d2u/dn2 + H du/dn + lap_Gamma u` with the polygon curvature `H`.
pub fn second_normal_derivative(
    mesh: &Mesh,
    tag: BoundaryTag,
    u: &[f64],
    k2: f64,
    f_nodal: &[f64],
) -> Result<Vec<f64>> {
    check_len(mesh, f_nodal, "source")?;
    let geom = mesh.boundary_geometry(tag)?;
    let dn = normal_component(&geom, &recovered_gradients(mesh, u)?);
    let lap_t = tangential_laplacian(&geom, u);
    let mut out = vec![0.0; u.len()];
    for &i in &geom.nodes {
        out[i] = -k2 * u[i] - f_nodal[i] - geom.node_curvature[i] * dn[i] - lap_t[i];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_disk, generate_rectangle};
    use std::f64::consts::PI;

    #[test]
    fn perimeters_and_symmetry() {
        let sq = generate_rectangle(1.0, 1.0, 0.1).unwrap();
        let one = vec![1.0; sq.num_nodes()];
        assert!((boundary_integral(&sq, BoundaryTag::Outer, &one).unwrap() - 4.0).abs() < 1e-12);
        let d = generate_disk(Vec2::zeros(), 1.0, 0.05).unwrap();
        let one = vec![1.0; d.num_nodes()];
        let x: Vec<f64> = d.nodes().iter().map(|p| p.x).collect();
        let per = boundary_integral(&d, BoundaryTag::Outer, &one).unwrap();
        assert!((per - 2.0 * PI).abs() < 2e-3);
        assert!(boundary_integral(&d, BoundaryTag::Outer, &x).unwrap().abs() < 1e-12);
    }

    #[test]
    fn normal_derivative_of_linear_and_constant() {
        let d = generate_disk(Vec2::zeros(), 1.0, 0.1).unwrap();
        let geom = d.boundary_geometry(BoundaryTag::Outer).unwrap();
        let u: Vec<f64> = d.nodes().iter().map(|p| 2.0 * p.x - p.y + 3.0).collect();
        let dn = normal_derivative(&d, BoundaryTag::Outer, &u).unwrap();
        for &i in &geom.nodes {
            let want = Vec2::new(2.0, -1.0).dot(&geom.node_normals[i]);
            assert!((dn[i] - want).abs() < 1e-12);
        }
        let c = normal_derivative(&d, BoundaryTag::Outer, &vec![4.0; d.num_nodes()]).unwrap();
        assert!(c.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn tangential_derivative_on_circle() {
        let d = generate_disk(Vec2::zeros(), 1.0, 0.05).unwrap();
        let geom = d.boundary_geometry(BoundaryTag::Outer).unwrap();
        let s: Vec<f64> = d.nodes().iter().map(|p| p.y.atan2(p.x).sin()).collect();
        let ds = tangential_derivative(&geom, &s);
        for &i in &geom.nodes {
            let th = d.nodes()[i].y.atan2(d.nodes()[i].x);
            assert!((ds[i] - th.cos()).abs() < 5e-3);
        }
        assert!(integrate(&geom, &ds).abs() < 1e-12);
        let c = tangential_derivative(&geom, &vec![1.0; d.num_nodes()]);
        assert!(c.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn curvature_signs() {
        let d = generate_disk(Vec2::zeros(), 2.0, 0.1).unwrap();
        let geom = d.boundary_geometry(BoundaryTag::Outer).unwrap();
        for &i in &geom.nodes {
            assert!((geom.node_curvature[i] - 0.5).abs() < 1e-3);
            assert!((geom.node_normals[i] - d.nodes()[i] / 2.0).norm() < 1e-12);
        }
    }
}
