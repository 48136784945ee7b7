//! Coefficient data: constants, closures, nodal or per-element values.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Vec2, VectorFn};

pub type ScalarFn = Arc<dyn Fn(Vec2) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum ScalarData {
    Constant(f64),
    Function(ScalarFn),
    /// P1 data, one value per node.
    Nodal(Vec<f64>),
}

#[derive(Clone)]
pub enum VectorData {
    Constant(Vec2),
    Function(VectorFn),
    /// P1 data, one vector per node.
    Nodal(Vec<Vec2>),
    /// Piecewise constant, one vector per triangle.
    PerElement(Vec<Vec2>),
}

impl fmt::Debug for ScalarData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarData::Constant(c) => write!(f, "Constant({c})"),
            ScalarData::Function(_) => write!(f, "Function"),
            ScalarData::Nodal(v) => write!(f, "Nodal[{}]", v.len()),
        }
    }
}

impl fmt::Debug for VectorData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VectorData::Constant(c) => write!(f, "Constant({}, {})", c.x, c.y),
            VectorData::Function(_) => write!(f, "Function"),
            VectorData::Nodal(v) => write!(f, "Nodal[{}]", v.len()),
            VectorData::PerElement(v) => write!(f, "PerElement[{}]", v.len()),
        }
    }
}

impl Default for ScalarData {
    fn default() -> Self {
        ScalarData::Constant(0.0)
    }
}

impl Default for VectorData {
    fn default() -> Self {
        VectorData::Constant(Vec2::zeros())
    }
}

impl ScalarData {
    pub fn function(f: impl Fn(Vec2) -> f64 + Send + Sync + 'static) -> Self {
        ScalarData::Function(Arc::new(f))
    }

    pub fn check(&self, mesh: &Mesh) -> Result<()> {
        match self {
            ScalarData::Nodal(v) if v.len() != mesh.num_nodes() => Err(Error::InvalidArgument(format!(
                "nodal data has {} values, mesh has {} nodes",
                v.len(),
                mesh.num_nodes()
            ))),
            _ => Ok(()),
        }
    }

    /// Value at barycentric coordinates `bary` of triangle `t`.
    pub fn eval(&self, mesh: &Mesh, t: usize, bary: [f64; 3]) -> f64 {
        match self {
            ScalarData::Constant(c) => *c,
            ScalarData::Function(f) => f(point(mesh, t, bary)),
            ScalarData::Nodal(v) => {
                let tri = mesh.triangles()[t];
                bary[0] * v[tri[0]] + bary[1] * v[tri[1]] + bary[2] * v[tri[2]]
            }
        }
    }

    pub fn at_point(&self, mesh: &Mesh, p: Vec2) -> Result<f64> {
        match self {
            ScalarData::Constant(c) => Ok(*c),
            ScalarData::Function(f) => Ok(f(p)),
            ScalarData::Nodal(_) => {
                let (t, bary) = locate(mesh, p)?;
                Ok(self.eval(mesh, t, bary))
            }
        }
    }

    pub fn at_nodes(&self, mesh: &Mesh) -> Result<Vec<f64>> {
        self.check(mesh)?;
        Ok(match self {
            ScalarData::Constant(c) => vec![*c; mesh.num_nodes()],
            ScalarData::Function(f) => mesh.nodes().iter().map(|&p| f(p)).collect(),
            ScalarData::Nodal(v) => v.clone(),
        })
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ScalarData::Constant(c) => *c == 0.0,
            ScalarData::Nodal(v) => v.iter().all(|&x| x == 0.0),
            ScalarData::Function(_) => false,
        }
    }

    /// Nodal data survives a change of coordinates but not of connectivity.
    pub fn is_mesh_bound(&self) -> bool {
        matches!(self, ScalarData::Nodal(_))
    }
}

impl VectorData {
    pub fn function(f: impl Fn(Vec2) -> Vec2 + Send + Sync + 'static) -> Self {
        VectorData::Function(Arc::new(f))
    }

    pub fn check(&self, mesh: &Mesh) -> Result<()> {
        let (len, want, what) = match self {
            VectorData::Nodal(v) => (v.len(), mesh.num_nodes(), "nodes"),
            VectorData::PerElement(v) => (v.len(), mesh.num_triangles(), "triangles"),
            _ => return Ok(()),
        };
        if len != want {
            return Err(Error::InvalidArgument(format!("vector data has {len} values, mesh has {want} {what}")));
        }
        Ok(())
    }

    pub fn eval(&self, mesh: &Mesh, t: usize, bary: [f64; 3]) -> Vec2 {
        match self {
            VectorData::Constant(c) => *c,
            VectorData::Function(f) => f(point(mesh, t, bary)),
            VectorData::Nodal(v) => {
                let tri = mesh.triangles()[t];
                v[tri[0]] * bary[0] + v[tri[1]] * bary[1] + v[tri[2]] * bary[2]
            }
            VectorData::PerElement(v) => v[t],
        }
    }

    pub fn at_point(&self, mesh: &Mesh, p: Vec2) -> Result<Vec2> {
        match self {
            VectorData::Constant(c) => Ok(*c),
            VectorData::Function(f) => Ok(f(p)),
            _ => {
                let (t, bary) = locate(mesh, p)?;
                Ok(self.eval(mesh, t, bary))
            }
        }
    }

    /// Node values; piecewise data is averaged over incident triangles with
    /// the interior angle as weight.
    pub fn at_nodes(&self, mesh: &Mesh) -> Result<Vec<Vec2>> {
        self.check(mesh)?;
        Ok(match self {
            VectorData::Constant(c) => vec![*c; mesh.num_nodes()],
            VectorData::Function(f) => mesh.nodes().iter().map(|&p| f(p)).collect(),
            VectorData::Nodal(v) => v.clone(),
            VectorData::PerElement(v) => {
                let mut sum = vec![Vec2::zeros(); mesh.num_nodes()];
                let mut weight = vec![0.0; mesh.num_nodes()];
                for (t, tri) in mesh.triangles().iter().enumerate() {
                    for (k, &i) in tri.iter().enumerate() {
                        let w = mesh.triangle_angle(t, k);
                        sum[i] += v[t] * w;
                        weight[i] += w;
                    }
                }
                sum.into_iter().zip(weight).map(|(s, w)| if w > 0.0 { s / w } else { s }).collect()
            }
        })
    }

    pub fn is_zero(&self) -> bool {
        match self {
            VectorData::Constant(c) => c.x == 0.0 && c.y == 0.0,
            VectorData::Nodal(v) | VectorData::PerElement(v) => v.iter().all(|x| x.x == 0.0 && x.y == 0.0),
            VectorData::Function(_) => false,
        }
    }

    pub fn is_mesh_bound(&self) -> bool {
        matches!(self, VectorData::Nodal(_) | VectorData::PerElement(_))
    }
}

fn point(mesh: &Mesh, t: usize, bary: [f64; 3]) -> Vec2 {
    let p = mesh.triangle_points(t);
    p[0] * bary[0] + p[1] * bary[1] + p[2] * bary[2]
}

fn locate(mesh: &Mesh, p: Vec2) -> Result<(usize, [f64; 3])> {
    mesh.locate(p).ok_or_else(|| Error::Evaluation(format!("point ({}, {}) is outside the mesh", p.x, p.y)))
}
