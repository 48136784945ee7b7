//! Velocity fields and the node map `x -> x + t V(x)`.

use std::fmt;
use std::sync::Arc;

use super::{Mesh, Vec2};
use crate::error::{Error, Result};

pub type VectorFn = Arc<dyn Fn(Vec2) -> Vec2 + Send + Sync>;

#[derive(Clone)]
pub enum VelocityKind {
    Analytic(VectorFn),
    /// One vector per mesh node.
    Nodal(Vec<Vec2>),
}

#[derive(Clone)]
pub struct VelocityField {
    pub kind: VelocityKind,
    pub name: String,
}

impl fmt::Debug for VelocityField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.kind {
            VelocityKind::Analytic(_) => "analytic".to_string(),
            VelocityKind::Nodal(v) => format!("nodal[{}]", v.len()),
        };
        f.debug_struct("VelocityField").field("name", &self.name).field("kind", &kind).finish()
    }
}

impl VelocityField {
    pub fn analytic(name: impl Into<String>, f: impl Fn(Vec2) -> Vec2 + Send + Sync + 'static) -> Self {
        VelocityField { kind: VelocityKind::Analytic(Arc::new(f)), name: name.into() }
    }

    pub fn nodal(name: impl Into<String>, values: Vec<Vec2>) -> Self {
        VelocityField { kind: VelocityKind::Nodal(values), name: name.into() }
    }

    pub fn zero() -> Self {
        Self::analytic("zero", |_| Vec2::zeros())
    }

    pub fn translation(d: Vec2) -> Self {
        Self::analytic("translate", move |_| d)
    }

    /// `V(x) = x - center`.
    pub fn dilation(center: Vec2) -> Self {
        Self::analytic("dilate", move |x| x - center)
    }

    /// Infinitesimal rotation about `center`.
    pub fn rotation(center: Vec2) -> Self {
        Self::analytic("rotate", move |x| {
            let d = x - center;
            Vec2::new(-d.y, d.x)
        })
    }

    /// Area-preserving stretch `(x - cx, -(y - cy))`.
    pub fn stretch(center: Vec2) -> Self {
        Self::analytic("stretch", move |x| Vec2::new(x.x - center.x, -(x.y - center.y)))
    }

    /// Values at every mesh node.
    pub fn at_nodes(&self, mesh: &Mesh) -> Result<Vec<Vec2>> {
        let values = match &self.kind {
            VelocityKind::Analytic(f) => mesh.nodes().iter().map(|&x| f(x)).collect::<Vec<_>>(),
            VelocityKind::Nodal(v) => {
                if v.len() != mesh.num_nodes() {
                    return Err(Error::InvalidArgument(format!(
                        "velocity '{}' has {} nodal values, mesh has {} nodes",
                        self.name,
                        v.len(),
                        mesh.num_nodes()
                    )));
                }
                v.clone()
            }
        };
        if let Some(i) = values.iter().position(|v| !(v.x.is_finite() && v.y.is_finite())) {
            return Err(Error::InvalidArgument(format!("velocity '{}' is not finite at node {i}", self.name)));
        }
        Ok(values)
    }

    /// Scales the field; the result is nodal on `mesh`.
    pub fn scaled_on(&self, mesh: &Mesh, s: f64) -> Result<VelocityField> {
        let v = self.at_nodes(mesh)?.into_iter().map(|x| x * s).collect();
        Ok(Self::nodal(format!("{}*{s}", self.name), v))
    }
}

/// Largest `|V(a) - V(b)| / |a - b|` over triangle edges.
pub fn lipschitz_estimate(mesh: &Mesh, values: &[Vec2]) -> f64 {
    let x = mesh.nodes();
    let mut l: f64 = 0.0;
    for tri in mesh.triangles() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            l = l.max((values[a] - values[b]).norm() / (x[a] - x[b]).norm());
        }
    }
    l
}

/// Moves every node by `t V(x)`.
///
/// The map is first checked for bijectivity with the sampled Lipschitz
/// bound (`|t| L < 1`), then every triangle must keep positive area.
pub fn deform(mesh: &Mesh, v: &VelocityField, t: f64) -> Result<Mesh> {
    if !t.is_finite() {
        return Err(Error::InvalidArgument(format!("deformation parameter t = {t} is not finite")));
    }
    let values = v.at_nodes(mesh)?;
    if t == 0.0 {
        return Ok(mesh.clone());
    }
    let bound = t.abs() * lipschitz_estimate(mesh, &values);
    if bound >= 1.0 {
        return Err(Error::NotBijective(bound));
    }
    let nodes = mesh.nodes().iter().zip(&values).map(|(x, d)| x + d * t).collect();
    mesh.with_nodes(nodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_disk, BoundaryTag};

    #[test]
    fn zero_step_is_identity() {
        let m = generate_disk(Vec2::zeros(), 1.0, 0.25).unwrap();
        let d = deform(&m, &VelocityField::rotation(Vec2::zeros()), 0.0).unwrap();
        assert_eq!(d.nodes(), m.nodes());
        let d = deform(&m, &VelocityField::zero(), 0.3).unwrap();
        assert_eq!(d.nodes(), m.nodes());
    }

    #[test]
    fn dilation_scales_radii_and_area() {
        let m = generate_disk(Vec2::zeros(), 1.0, 0.2).unwrap();
        let d = deform(&m, &VelocityField::dilation(Vec2::zeros()), 0.1).unwrap();
        for (a, b) in m.nodes().iter().zip(d.nodes()) {
            assert!((b.norm() - 1.1 * a.norm()).abs() < 1e-15);
        }
        assert!((d.area() / m.area() - 1.21).abs() < 1e-13);
        for &i in &d.boundary_nodes(BoundaryTag::Outer) {
            assert!((d.nodes()[i].norm() - 1.1).abs() < 1e-14);
        }
    }

    #[test]
    fn large_rotation_is_rejected() {
        let m = generate_disk(Vec2::zeros(), 1.0, 0.25).unwrap();
        let r = deform(&m, &VelocityField::rotation(Vec2::zeros()), 10.0);
        assert!(matches!(r, Err(Error::NotBijective(_))));
    }

    #[test]
    fn nodal_length_is_checked() {
        let m = generate_disk(Vec2::zeros(), 1.0, 0.25).unwrap();
        let v = VelocityField::nodal("bad", vec![Vec2::zeros(); 3]);
        assert!(matches!(deform(&m, &v, 0.1), Err(Error::InvalidArgument(_))));
    }
}
