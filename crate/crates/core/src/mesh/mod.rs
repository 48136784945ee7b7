//! Triangular meshes with tagged boundary loops.

mod deform;
mod generate;
mod io;
mod punch;

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;

pub use deform::{deform, lipschitz_estimate, VectorFn, VelocityField, VelocityKind};
pub use generate::{generate_annulus, generate_disk, generate_rectangle, Shape};
pub use io::{export_msh, export_vtk, import_msh, TagMap, VtkField};
pub use punch::{carve_inclusion, local_mesh_size, punch_hole, punch_hole_with, HoleSpec, PunchOptions, PunchResult};

use crate::error::{Error, Result};

pub type Vec2 = nalgebra::Vector2<f64>;

/// Which part of the boundary an edge belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundaryTag {
    /// The outer boundary of the domain.
    Outer,
    /// The boundary of an inclusion (structure) inside the domain.
    Obstacle,
    /// The boundary of a nucleated hole.
    Hole,
}

impl BoundaryTag {
    pub const ALL: [BoundaryTag; 3] = [BoundaryTag::Outer, BoundaryTag::Obstacle, BoundaryTag::Hole];

    pub fn name(self) -> &'static str {
        match self {
            BoundaryTag::Outer => "outer",
            BoundaryTag::Obstacle => "obstacle",
            BoundaryTag::Hole => "hole",
        }
    }
}

impl std::str::FromStr for BoundaryTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "outer" => Ok(BoundaryTag::Outer),
            "obstacle" => Ok(BoundaryTag::Obstacle),
            "hole" => Ok(BoundaryTag::Hole),
            other => Err(Error::InvalidArgument(format!("unknown boundary tag '{other}'"))),
        }
    }
}

/// A boundary edge. After construction the direction always keeps the
/// computational domain on its left.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub tag: BoundaryTag,
}

/// A closed boundary loop, listed in traversal order (domain on the left).
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryLoop {
    pub tag: BoundaryTag,
    pub nodes: Vec<usize>,
}

impl BoundaryLoop {
    /// Edge `i` runs from `nodes[i]` to `nodes[(i + 1) % len]`.
    pub fn edge(&self, i: usize) -> [usize; 2] {
        [self.nodes[i], self.nodes[(i + 1) % self.nodes.len()]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Per-edge and per-node boundary geometry for one tag.
///
/// Node-indexed vectors have one entry per mesh node; entries of nodes that
/// are not on the tagged boundary are zero.
#[derive(Debug, Clone)]
pub struct BoundaryGeometry {
    pub tag: BoundaryTag,
    pub loops: Vec<BoundaryLoop>,
    /// Boundary nodes of the tag in ascending order.
    pub nodes: Vec<usize>,
    pub edge_nodes: Vec<[usize; 2]>,
    pub edge_normals: Vec<Vec2>,
    pub edge_lengths: Vec<f64>,
    pub node_normals: Vec<Vec2>,
    /// Unit tangent in traversal direction (normal rotated by +90 degrees).
    pub node_tangents: Vec<Vec2>,
    /// Half the summed length of the two edges at the node.
    pub node_weights: Vec<f64>,
    /// Signed curvature, `div n`: positive where the boundary is convex
    /// seen from the domain.
    pub node_curvature: Vec<f64>,
}

impl BoundaryGeometry {
    pub fn contains(&self, node: usize) -> bool {
        self.nodes.binary_search(&node).is_ok()
    }

    pub fn perimeter(&self) -> f64 {
        self.edge_lengths.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    nodes: Vec<Vec2>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

pub(crate) fn signed_area(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y))
}

pub(crate) fn cross(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

impl Mesh {
    /// Builds a mesh and checks every structural invariant.
    ///
    /// Boundary edges may be given in either direction; they are re-oriented
    /// so the domain lies on their left. Every edge that belongs to exactly
    /// one triangle must appear in `boundary_edges`.
    pub fn new(nodes: Vec<Vec2>, triangles: Vec<[usize; 3]>, boundary_edges: Vec<BoundaryEdge>) -> Result<Self> {
        let n = nodes.len();
        if let Some(p) = nodes.iter().position(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(Error::Geometry(format!("node {p} has non-finite coordinates")));
        }
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= n) {
                return Err(Error::Geometry(format!("triangle {t} references a node out of range")));
            }
            let area = signed_area(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            if area <= 0.0 {
                return Err(Error::Deformation { triangle: t, area });
            }
        }

        // directed edge -> triangle, counterclockwise orientation
        let mut directed: HashMap<(usize, usize), usize> = HashMap::with_capacity(3 * triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let e = (tri[k], tri[(k + 1) % 3]);
                if directed.insert(e, t).is_some() {
                    return Err(Error::Geometry(format!(
                        "edge ({}, {}) is used twice with the same orientation",
                        e.0, e.1
                    )));
                }
            }
        }

        let mut oriented = Vec::with_capacity(boundary_edges.len());
        let mut seen = BTreeSet::new();
        for be in &boundary_edges {
            let [a, b] = be.nodes;
            if a >= n || b >= n || a == b {
                return Err(Error::Geometry(format!("boundary edge ({a}, {b}) is invalid")));
            }
            let fwd = directed.contains_key(&(a, b));
            let bwd = directed.contains_key(&(b, a));
            let nodes = match (fwd, bwd) {
                (true, false) => [a, b],
                (false, true) => [b, a],
                (true, true) => {
                    return Err(Error::Geometry(format!("boundary edge ({a}, {b}) is shared by two triangles")))
                }
                (false, false) => {
                    return Err(Error::Geometry(format!("boundary edge ({a}, {b}) does not belong to any triangle")))
                }
            };
            if !seen.insert(edge_key(a, b)) {
                return Err(Error::Geometry(format!("boundary edge ({a}, {b}) is listed twice")));
            }
            oriented.push(BoundaryEdge { nodes, tag: be.tag });
        }
        for &(a, b) in directed.keys() {
            if !directed.contains_key(&(b, a)) && !seen.contains(&edge_key(a, b)) {
                return Err(Error::Geometry(format!("free edge ({a}, {b}) carries no boundary tag")));
            }
        }
        if !oriented.iter().any(|e| e.tag == BoundaryTag::Outer) {
            return Err(Error::Geometry("mesh has no Outer boundary".into()));
        }

        // closed loops per tag: in-degree = out-degree = 1
        let mut out_deg: HashMap<(BoundaryTag, usize), usize> = HashMap::new();
        let mut in_deg: HashMap<(BoundaryTag, usize), usize> = HashMap::new();
        for e in &oriented {
            *out_deg.entry((e.tag, e.nodes[0])).or_default() += 1;
            *in_deg.entry((e.tag, e.nodes[1])).or_default() += 1;
        }
        for (key, &d) in out_deg.iter() {
            if d != 1 || in_deg.get(key).copied().unwrap_or(0) != 1 {
                return Err(Error::Geometry(format!(
                    "boundary loops of tag {:?} are not closed simple curves at node {}",
                    key.0, key.1
                )));
            }
        }
        if in_deg.keys().any(|k| !out_deg.contains_key(k)) {
            return Err(Error::Geometry("boundary loops are not closed".into()));
        }

        Ok(Mesh { nodes, triangles, boundary_edges: oriented })
    }

    pub fn nodes(&self) -> &[Vec2] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn dimension(&self) -> usize {
        2
    }

    pub fn triangle_points(&self, t: usize) -> [Vec2; 3] {
        let [a, b, c] = self.triangles[t];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        signed_area(a, b, c)
    }

    pub fn centroid(&self, t: usize) -> Vec2 {
        let [a, b, c] = self.triangle_points(t);
        (a + b + c) / 3.0
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Same connectivity and tags, new coordinates. Fails if a triangle
    /// loses positive orientation.
    pub fn with_nodes(&self, nodes: Vec<Vec2>) -> Result<Mesh> {
        if nodes.len() != self.nodes.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} coordinates, got {}",
                self.nodes.len(),
                nodes.len()
            )));
        }
        let mut worst: Option<(usize, f64)> = None;
        for (t, tri) in self.triangles.iter().enumerate() {
            let area = signed_area(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            if !(area > 0.0) && worst.is_none_or(|(_, w)| area < w || area.is_nan()) {
                worst = Some((t, area));
            }
        }
        if let Some((triangle, area)) = worst {
            return Err(Error::Deformation { triangle, area });
        }
        Ok(Mesh { nodes, triangles: self.triangles.clone(), boundary_edges: self.boundary_edges.clone() })
    }

    pub fn tags(&self) -> BTreeSet<BoundaryTag> {
        self.boundary_edges.iter().map(|e| e.tag).collect()
    }

    pub fn has_tag(&self, tag: BoundaryTag) -> bool {
        self.boundary_edges.iter().any(|e| e.tag == tag)
    }

    /// Nodes on boundaries with the given tag, ascending.
    pub fn boundary_nodes(&self, tag: BoundaryTag) -> Vec<usize> {
        let set: BTreeSet<usize> = self.boundary_edges.iter().filter(|e| e.tag == tag).flat_map(|e| e.nodes).collect();
        set.into_iter().collect()
    }

    /// Boolean mask of all boundary nodes regardless of tag.
    pub fn boundary_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.nodes.len()];
        for e in &self.boundary_edges {
            mask[e.nodes[0]] = true;
            mask[e.nodes[1]] = true;
        }
        mask
    }

    /// Closed loops of a tag, each starting at its smallest node index.
    /// Loops are sorted by their first node.
    pub fn boundary_loops(&self, tag: BoundaryTag) -> Result<Vec<BoundaryLoop>> {
        let mut next: HashMap<usize, usize> = HashMap::new();
        for e in self.boundary_edges.iter().filter(|e| e.tag == tag) {
            next.insert(e.nodes[0], e.nodes[1]);
        }
        if next.is_empty() {
            return Err(Error::MissingTag(tag));
        }
        let mut starts: Vec<usize> = next.keys().copied().collect();
        starts.sort_unstable();
        let mut visited = BTreeSet::new();
        let mut loops = Vec::new();
        for s in starts {
            if visited.contains(&s) {
                continue;
            }
            let mut nodes = vec![s];
            visited.insert(s);
            let mut cur = s;
            loop {
                let nx = *next.get(&cur).ok_or_else(|| Error::Geometry(format!("open boundary loop at node {cur}")))?;
                if nx == s {
                    break;
                }
                if !visited.insert(nx) {
                    return Err(Error::Geometry(format!("boundary loop revisits node {nx}")));
                }
                nodes.push(nx);
                cur = nx;
            }
            loops.push(BoundaryLoop { tag, nodes });
        }
        Ok(loops)
    }

    pub fn boundary_geometry(&self, tag: BoundaryTag) -> Result<BoundaryGeometry> {
        let loops = self.boundary_loops(tag)?;
        let n = self.nodes.len();
        let mut edge_nodes = Vec::new();
        let mut edge_normals = Vec::new();
        let mut edge_lengths = Vec::new();
        let mut node_normals = vec![Vec2::zeros(); n];
        let mut node_tangents = vec![Vec2::zeros(); n];
        let mut node_weights = vec![0.0; n];
        let mut node_curvature = vec![0.0; n];
        let mut nodes = Vec::new();
        for lp in &loops {
            let m = lp.len();
            let mut normals = Vec::with_capacity(m);
            let mut lengths = Vec::with_capacity(m);
            for i in 0..m {
                let [a, b] = lp.edge(i);
                let d = self.nodes[b] - self.nodes[a];
                let len = d.norm();
                // domain on the left, so outward is the right-hand normal
                let nrm = Vec2::new(d.y, -d.x) / len;
                edge_nodes.push([a, b]);
                edge_normals.push(nrm);
                edge_lengths.push(len);
                normals.push(nrm);
                lengths.push(len);
            }
            for i in 0..m {
                let prev = (i + m - 1) % m;
                let node = lp.nodes[i];
                // both adjacent edges subtend the same angle at a 2D boundary
                // node, so the angle-weighted average is the bisector
                let avg = normals[prev] + normals[i];
                let nrm = if avg.norm() > 1e-14 { avg.normalize() } else { normals[i] };
                node_normals[node] = nrm;
                node_tangents[node] = Vec2::new(-nrm.y, nrm.x);
                let w = 0.5 * (lengths[prev] + lengths[i]);
                node_weights[node] = w;
                // turning angle of the traversal direction, left turns positive
                let t_in = Vec2::new(-normals[prev].y, normals[prev].x);
                let t_out = Vec2::new(-normals[i].y, normals[i].x);
                let turn = cross(t_in, t_out).atan2(t_in.dot(&t_out));
                node_curvature[node] = turn / w;
                nodes.push(node);
            }
        }
        nodes.sort_unstable();
        Ok(BoundaryGeometry {
            tag,
            loops,
            nodes,
            edge_nodes,
            edge_normals,
            edge_lengths,
            node_normals,
            node_tangents,
            node_weights,
            node_curvature,
        })
    }

    /// Triangles incident to each node, ascending.
    pub fn node_triangles(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            for &i in tri {
                adj[i].push(t);
            }
        }
        adj
    }

    /// Interior angle of triangle `t` at local vertex `k`, radians.
    pub fn triangle_angle(&self, t: usize, k: usize) -> f64 {
        let p = self.triangle_points(t);
        let a = p[k];
        let b = p[(k + 1) % 3];
        let c = p[(k + 2) % 3];
        let u = b - a;
        let v = c - a;
        cross(u, v).atan2(u.dot(&v))
    }

    /// Smallest interior angle over all triangles, degrees.
    pub fn min_angle_deg(&self) -> f64 {
        (0..self.triangles.len())
            .flat_map(|t| (0..3).map(move |k| (t, k)))
            .map(|(t, k)| self.triangle_angle(t, k))
            .fold(f64::INFINITY, f64::min)
            * 180.0
            / PI
    }

    pub fn max_edge_length(&self) -> f64 {
        self.edge_lengths().fold(0.0, f64::max)
    }

    pub fn mean_edge_length(&self) -> f64 {
        let (s, c) = self.edge_lengths().fold((0.0, 0usize), |(s, c), l| (s + l, c + 1));
        if c == 0 {
            0.0
        } else {
            s / c as f64
        }
    }

    fn edge_lengths(&self) -> impl Iterator<Item = f64> + '_ {
        self.triangles
            .iter()
            .flat_map(move |tri| (0..3).map(move |k| (self.nodes[tri[k]] - self.nodes[tri[(k + 1) % 3]]).norm()))
    }

    /// Finds a triangle containing `p` and the barycentric coordinates of
    /// `p` in it. Points on shared edges resolve to the lowest index.
    pub fn locate(&self, p: Vec2) -> Option<(usize, [f64; 3])> {
        let tol = 1e-12;
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.triangle_points(t);
            let area = signed_area(a, b, c);
            let l0 = signed_area(p, b, c) / area;
            let l1 = signed_area(a, p, c) / area;
            let l2 = 1.0 - l0 - l1;
            let m = l0.min(l1).min(l2);
            if m >= -tol {
                return Some((t, [l0, l1, l2]));
            }
            if m > -1e-9 && best.as_ref().is_none_or(|b| m > b.2) {
                best = Some((t, [l0, l1, l2], m));
            }
        }
        best.map(|(t, l, _)| (t, l))
    }

    /// Distance from `p` to the nearest boundary edge of any tag.
    pub fn distance_to_boundary(&self, p: Vec2) -> f64 {
        self.boundary_edges
            .iter()
            .map(|e| point_segment_distance(p, self.nodes[e.nodes[0]], self.nodes[e.nodes[1]]))
            .fold(f64::INFINITY, f64::min)
    }
}

pub(crate) fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let d = b - a;
    let len2 = d.norm_squared();
    let s = if len2 > 0.0 { ((p - a).dot(&d) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + d * s)).norm()
}

pub(crate) fn point_triangle_distance(p: Vec2, tri: [Vec2; 3]) -> f64 {
    let [a, b, c] = tri;
    let area = signed_area(a, b, c);
    let l0 = signed_area(p, b, c) / area;
    let l1 = signed_area(a, p, c) / area;
    let l2 = 1.0 - l0 - l1;
    if l0 >= 0.0 && l1 >= 0.0 && l2 >= 0.0 {
        return 0.0;
    }
    point_segment_distance(p, a, b).min(point_segment_distance(p, b, c)).min(point_segment_distance(p, c, a))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_triangle() -> Mesh {
        Mesh::new(
            vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)],
            vec![[0, 1, 2]],
            vec![
                BoundaryEdge { nodes: [1, 0], tag: BoundaryTag::Outer },
                BoundaryEdge { nodes: [1, 2], tag: BoundaryTag::Outer },
                BoundaryEdge { nodes: [2, 0], tag: BoundaryTag::Outer },
            ],
        )
        .unwrap()
    }

    #[test]
    fn boundary_edges_are_reoriented() {
        let m = unit_triangle();
        assert_eq!(m.boundary_edges()[0].nodes, [0, 1]);
        let loops = m.boundary_loops(BoundaryTag::Outer).unwrap();
        assert_eq!(loops.len(), 1);
        assert_eq!(loops[0].nodes, vec![0, 1, 2]);
    }

    #[test]
    fn rejects_clockwise_triangle() {
        let err =
            Mesh::new(vec![Vec2::new(0.0, 0.0), Vec2::new(0.0, 1.0), Vec2::new(1.0, 0.0)], vec![[0, 1, 2]], vec![])
                .unwrap_err();
        assert!(matches!(err, Error::Deformation { triangle: 0, .. }));
    }

    #[test]
    fn rejects_untagged_free_edge() {
        let err = Mesh::new(
            vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)],
            vec![[0, 1, 2]],
            vec![BoundaryEdge { nodes: [0, 1], tag: BoundaryTag::Outer }],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Geometry(_)));
    }

    #[test]
    fn missing_tag_is_a_lookup_error() {
        let m = unit_triangle();
        assert!(matches!(m.boundary_geometry(BoundaryTag::Hole), Err(Error::MissingTag(BoundaryTag::Hole))));
    }

    #[test]
    fn locate_and_angles() {
        let m = unit_triangle();
        let (t, l) = m.locate(Vec2::new(0.25, 0.25)).unwrap();
        assert_eq!(t, 0);
        assert!((l[0] - 0.5).abs() < 1e-15);
        assert!(m.locate(Vec2::new(2.0, 2.0)).is_none());
        assert!((m.min_angle_deg() - 45.0).abs() < 1e-12);
    }
}
