//! Hole nucleation by local cavity remeshing.
//!
//! Triangles near the hole center are removed, leaving a star-shaped cavity.
//! The cavity is refilled with graded concentric rings between a polygonal
//! hole boundary and the cavity loop, followed by edge flips and smoothing
//! restricted to the new patch.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use super::generate::zipper;
use super::{cross, edge_key, point_triangle_distance, signed_area, BoundaryEdge, BoundaryTag, Mesh, Vec2};
use crate::error::{Error, Result};

/// A disk-shaped hole `center + radius * unit disk`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoleSpec {
    pub center: Vec2,
    pub radius: f64,
    /// Capacity of the reference hole.
    pub cap_omega: f64,
    /// Area of the reference hole, pi for the unit disk.
    pub mes_omega: f64,
}

impl HoleSpec {
    pub fn disk(center: Vec2, radius: f64) -> Self {
        HoleSpec { center, radius, cap_omega: 1.0, mes_omega: PI }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidArgument(format!("hole radius must be positive, got {}", self.radius)));
        }
        if !(self.cap_omega > 0.0) {
            return Err(Error::InvalidArgument(format!("cap_omega must be positive, got {}", self.cap_omega)));
        }
        if !(self.mes_omega > 0.0) {
            return Err(Error::InvalidArgument(format!("mes_omega must be positive, got {}", self.mes_omega)));
        }
        if !(self.center.x.is_finite() && self.center.y.is_finite()) {
            return Err(Error::InvalidArgument("hole center is not finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PunchOptions {
    /// Smallest interior angle allowed in the remeshed patch, degrees.
    pub min_angle_deg: f64,
    /// Lower bound on the number of edges of the hole polygon.
    pub min_hole_edges: usize,
    /// Ratio of edge lengths between consecutive rings.
    pub growth: f64,
    /// Triangulate the disk instead of removing it (conforming inclusion).
    pub fill: bool,
}

impl Default for PunchOptions {
    fn default() -> Self {
        PunchOptions { min_angle_deg: 15.0, min_hole_edges: 16, growth: 1.3, fill: false }
    }
}

#[derive(Debug, Clone)]
pub struct PunchResult {
    pub mesh: Mesh,
    /// Index in the new mesh of every old node, `None` for removed nodes.
    pub node_map: Vec<Option<usize>>,
    /// Nodes of the hole polygon in counterclockwise order.
    pub hole_nodes: Vec<usize>,
    /// Triangles inside the polygon; only non-empty when filling.
    pub inside_triangles: Vec<usize>,
    /// Local mesh size used to grade the patch.
    pub h_local: f64,
}

/// Removes `hole` from the mesh with default options.
pub fn punch_hole(mesh: &Mesh, hole: &HoleSpec) -> Result<Mesh> {
    punch_hole_with(mesh, hole, &PunchOptions::default()).map(|r| r.mesh)
}

/// Local mean edge length around `p` within `radius`.
pub fn local_mesh_size(mesh: &Mesh, p: Vec2, radius: f64) -> Result<f64> {
    let (t0, _) =
        mesh.locate(p).ok_or_else(|| Error::Geometry(format!("point ({}, {}) is outside the mesh", p.x, p.y)))?;
    let edge_mean = |t: usize| {
        let q = mesh.triangle_points(t);
        ((q[0] - q[1]).norm() + (q[1] - q[2]).norm() + (q[2] - q[0]).norm()) / 3.0
    };
    let h0 = edge_mean(t0);
    let reach = radius + 2.0 * h0;
    let (s, c) = (0..mesh.num_triangles())
        .filter(|&t| (mesh.centroid(t) - p).norm() < reach)
        .fold((0.0, 0usize), |(s, c), t| (s + edge_mean(t), c + 1));
    Ok(if c == 0 { h0 } else { s / c as f64 })
}

pub fn punch_hole_with(mesh: &Mesh, hole: &HoleSpec, opts: &PunchOptions) -> Result<PunchResult> {
    hole.validate()?;
    if !(opts.growth > 1.0) || opts.min_hole_edges < 8 {
        return Err(Error::InvalidArgument("punch options need growth > 1 and at least 8 hole edges".into()));
    }
    let x0 = hole.center;
    let eps = hole.radius;
    let h = local_mesh_size(mesh, x0, eps)?;
    if eps < 0.25 * h {
        return Err(Error::Resolution(format!(
            "hole radius {eps} is below a quarter of the local mesh size {h}; refine the mesh near ({}, {})",
            x0.x, x0.y
        )));
    }
    let clearance = mesh.distance_to_boundary(x0) - eps;
    if clearance < 0.25 * h {
        return Err(Error::Geometry(format!(
            "hole of radius {eps} at ({}, {}) intersects or touches another boundary",
            x0.x, x0.y
        )));
    }
    let n_hole = opts.min_hole_edges.max((2.0 * PI * eps / h).ceil() as usize);
    let e0 = 2.0 * PI * eps / n_hole as f64;

    // radius at which graded rings reach the background size
    let (mut r, mut e) = (eps, e0);
    while e < h {
        r += 0.866 * e;
        e = (e * opts.growth).min(h);
    }
    let preferred = r + 0.5 * h;
    let mut candidates = vec![preferred, preferred + 0.5 * h, preferred + h];
    let mut shrink = preferred - 0.5 * h;
    while shrink > eps + 0.6 * h {
        candidates.push(shrink);
        shrink -= 0.5 * h;
    }
    candidates.push(eps + 0.6 * h);

    let mut last_err = None;
    for rc in candidates {
        match attempt(mesh, hole, opts, h, n_hole, rc) {
            Ok(res) => return Ok(res),
            Err(err) => last_err = Some(err),
        }
    }
    Err(last_err.expect("at least one candidate radius"))
}

fn tri_min_angle(p: [Vec2; 3]) -> f64 {
    (0..3)
        .map(|k| {
            let u = p[(k + 1) % 3] - p[k];
            let v = p[(k + 2) % 3] - p[k];
            cross(u, v).atan2(u.dot(&v))
        })
        .fold(f64::INFINITY, f64::min)
}

fn attempt(mesh: &Mesh, hole: &HoleSpec, opts: &PunchOptions, h: f64, n_hole: usize, rc: f64) -> Result<PunchResult> {
    let x0 = hole.center;
    let eps = hole.radius;
    let old = mesh.nodes();
    let boundary = mesh.boundary_mask();

    let removed: Vec<bool> =
        (0..mesh.num_triangles()).map(|t| point_triangle_distance(x0, mesh.triangle_points(t)) < rc).collect();
    for (t, tri) in mesh.triangles().iter().enumerate() {
        if removed[t] && tri.iter().any(|&i| boundary[i]) {
            return Err(Error::Geometry(format!(
                "hole at ({}, {}) is too close to another boundary to remesh around it",
                x0.x, x0.y
            )));
        }
    }

    // cavity loop: free edges of the remaining triangles that are not on
    // the original boundary; they run clockwise around the cavity
    let mut directed = BTreeSet::new();
    for (t, tri) in mesh.triangles().iter().enumerate() {
        if !removed[t] {
            for k in 0..3 {
                directed.insert((tri[k], tri[(k + 1) % 3]));
            }
        }
    }
    let original: BTreeSet<(usize, usize)> =
        mesh.boundary_edges().iter().map(|e| edge_key(e.nodes[0], e.nodes[1])).collect();
    let mut next: BTreeMap<usize, usize> = BTreeMap::new();
    for &(a, b) in &directed {
        if !directed.contains(&(b, a)) && !original.contains(&edge_key(a, b)) && next.insert(b, a).is_some() {
            return Err(Error::Geometry("cavity boundary is not a simple loop".into()));
        }
    }
    let start = *next.keys().next().ok_or_else(|| Error::Geometry("empty cavity".into()))?;
    let mut cavity = vec![start];
    let mut cur = next[&start];
    while cur != start {
        if cavity.len() > next.len() {
            return Err(Error::Geometry("cavity boundary is not a simple loop".into()));
        }
        cavity.push(cur);
        cur = *next.get(&cur).ok_or_else(|| Error::Geometry("cavity boundary is open".into()))?;
    }
    if cavity.len() != next.len() {
        return Err(Error::Geometry("cavity boundary has several components".into()));
    }
    // star-shaped about the hole center, counterclockwise
    let mut winding = 0.0;
    for i in 0..cavity.len() {
        let (p, q) = (old[cavity[i]] - x0, old[cavity[(i + 1) % cavity.len()]] - x0);
        let turn = cross(p, q).atan2(p.dot(&q));
        if turn <= 1e-3 {
            return Err(Error::Geometry("cavity is not star-shaped about the hole center".into()));
        }
        winding += turn;
    }
    if (winding - 2.0 * PI).abs() > 1e-6 {
        return Err(Error::Geometry("cavity does not enclose the hole center".into()));
    }
    let r_min = cavity.iter().map(|&i| (old[i] - x0).norm()).fold(f64::INFINITY, f64::min);
    let cavity_edge =
        (0..cavity.len()).map(|i| (old[cavity[(i + 1) % cavity.len()]] - old[cavity[i]]).norm()).sum::<f64>()
            / cavity.len() as f64;

    // renumber kept nodes
    let mut used = vec![false; old.len()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        if !removed[t] {
            for &i in tri {
                used[i] = true;
            }
        }
    }
    let mut node_map = vec![None; old.len()];
    let mut nodes = Vec::with_capacity(old.len());
    for (i, p) in old.iter().enumerate() {
        if used[i] {
            node_map[i] = Some(nodes.len());
            nodes.push(*p);
        }
    }
    let mut triangles: Vec<[usize; 3]> = mesh
        .triangles()
        .iter()
        .enumerate()
        .filter(|(t, _)| !removed[*t])
        .map(|(_, tri)| tri.map(|i| node_map[i].expect("kept node")))
        .collect();
    let patch_start = triangles.len();
    let cavity_loop: Vec<usize> = cavity.iter().map(|&i| node_map[i].expect("kept node")).collect();

    let ring = |nodes: &mut Vec<Vec2>, r: f64, n: usize, offset: f64| -> Vec<usize> {
        (0..n)
            .map(|k| {
                let th = offset + 2.0 * PI * k as f64 / n as f64;
                nodes.push(x0 + Vec2::new(th.cos(), th.sin()) * r);
                nodes.len() - 1
            })
            .collect()
    };
    let first_new = nodes.len();
    let hole_loop = ring(&mut nodes, eps, n_hole, 0.0);
    let e0 = 2.0 * PI * eps / n_hole as f64;
    if r_min < eps + 0.5 * e0 {
        return Err(Error::Geometry("cavity is too small for the hole".into()));
    }

    let mut loops = vec![hole_loop.clone()];
    let (mut r, mut e) = (eps, e0);
    let target = cavity_edge.max(e0);
    for k in 1.. {
        let e_next = (e * opts.growth).min(target);
        let r_next = r + 0.866 * 0.5 * (e + e_next);
        if r_min - r_next < 0.6 * e_next {
            break;
        }
        let n = ((2.0 * PI * r_next / e_next).round() as usize).max(6);
        let offset = if k % 2 == 1 { PI / n as f64 } else { 0.0 };
        loops.push(ring(&mut nodes, r_next, n, offset));
        r = r_next;
        e = e_next;
    }
    loops.push(cavity_loop);
    for w in loops.windows(2) {
        zipper(&nodes, x0, &w[0], &w[1], &mut triangles);
    }

    let mut inside_start = triangles.len();
    if opts.fill {
        let m = ((eps / (0.866 * e0)).round() as usize).max(1);
        let center = nodes.len();
        nodes.push(x0);
        let mut inner: Vec<Vec<usize>> = Vec::new();
        for i in 1..m {
            let n = ((n_hole as f64 * i as f64 / m as f64).round() as usize).max(6);
            let offset = if i % 2 == 1 { PI / n as f64 } else { 0.0 };
            inner.push(ring(&mut nodes, eps * i as f64 / m as f64, n, offset));
        }
        inner.push(hole_loop.clone());
        inside_start = triangles.len();
        let first = &inner[0];
        for k in 0..first.len() {
            triangles.push([center, first[k], first[(k + 1) % first.len()]]);
        }
        for w in inner.windows(2) {
            zipper(&nodes, x0, &w[0], &w[1], &mut triangles);
        }
    }

    let hole_edges: BTreeSet<(usize, usize)> =
        (0..hole_loop.len()).map(|k| edge_key(hole_loop[k], hole_loop[(k + 1) % hole_loop.len()])).collect();
    let region: Vec<bool> = (0..triangles.len()).map(|t| t >= inside_start).collect();
    lawson_flips(&nodes, &mut triangles, patch_start, &hole_edges, &region);
    let movable: Vec<usize> =
        (first_new..nodes.len()).filter(|i| !hole_loop.contains(i) && (nodes[*i] - x0).norm() > 0.0).collect();
    smooth(&mut nodes, &triangles, patch_start, &movable);

    let mut worst = f64::INFINITY;
    for tri in &triangles[patch_start..] {
        let p = tri.map(|i| nodes[i]);
        if signed_area(p[0], p[1], p[2]) <= 0.0 {
            return Err(Error::Geometry("remeshed patch contains an inverted triangle".into()));
        }
        worst = worst.min(tri_min_angle(p));
    }
    let worst_deg = worst.to_degrees();
    if worst_deg < opts.min_angle_deg {
        return Err(Error::Quality { min_angle: worst_deg, floor: opts.min_angle_deg });
    }

    let mut edges: Vec<BoundaryEdge> = mesh
        .boundary_edges()
        .iter()
        .map(|e| BoundaryEdge { nodes: e.nodes.map(|i| node_map[i].expect("boundary node kept")), tag: e.tag })
        .collect();
    if !opts.fill {
        for k in 0..hole_loop.len() {
            edges.push(BoundaryEdge {
                nodes: [hole_loop[k], hole_loop[(k + 1) % hole_loop.len()]],
                tag: BoundaryTag::Hole,
            });
        }
    }
    let inside_triangles = (inside_start..triangles.len()).filter(|_| opts.fill).collect();
    let mesh = Mesh::new(nodes, triangles, edges)?;
    Ok(PunchResult { mesh, node_map, hole_nodes: hole_loop, inside_triangles, h_local: h })
}

/// Removes the triangulated disk of a filled punch, turning its polygon into
/// a `Hole` boundary. Returns the holed mesh and, for every node of the
/// filled mesh, its index in the holed one.
pub fn carve_inclusion(filled: &PunchResult) -> Result<(Mesh, Vec<Option<usize>>)> {
    if filled.inside_triangles.is_empty() {
        return Err(Error::InvalidArgument("punch result has no filled disk to carve".into()));
    }
    let mesh = &filled.mesh;
    let inside: BTreeSet<usize> = filled.inside_triangles.iter().copied().collect();
    let kept: Vec<[usize; 3]> =
        (0..mesh.num_triangles()).filter(|t| !inside.contains(t)).map(|t| mesh.triangles()[t]).collect();
    let mut map = vec![None; mesh.num_nodes()];
    let mut nodes = Vec::new();
    for tri in &kept {
        for &i in tri {
            if map[i].is_none() {
                map[i] = Some(nodes.len());
                nodes.push(mesh.nodes()[i]);
            }
        }
    }
    let index = |i: usize| map[i].ok_or_else(|| Error::Geometry(format!("node {i} is not used outside the disk")));
    let triangles = kept.iter().map(|t| Ok([index(t[0])?, index(t[1])?, index(t[2])?])).collect::<Result<Vec<_>>>()?;
    let mut edges = mesh
        .boundary_edges()
        .iter()
        .map(|e| Ok(BoundaryEdge { nodes: [index(e.nodes[0])?, index(e.nodes[1])?], tag: e.tag }))
        .collect::<Result<Vec<_>>>()?;
    let ring = &filled.hole_nodes;
    for k in 0..ring.len() {
        edges.push(BoundaryEdge {
            nodes: [index(ring[k])?, index(ring[(k + 1) % ring.len()])?],
            tag: BoundaryTag::Hole,
        });
    }
    Ok((Mesh::new(nodes, triangles, edges)?, map))
}

/// Delaunay edge flips among triangles `start..`, never across a
/// constrained edge or between triangles of different regions.
fn lawson_flips(
    nodes: &[Vec2],
    triangles: &mut [[usize; 3]],
    start: usize,
    constrained: &BTreeSet<(usize, usize)>,
    region: &[bool],
) {
    let angle = |a: Vec2, b: Vec2, c: Vec2| {
        // angle at a
        let (u, v) = (b - a, c - a);
        cross(u, v).atan2(u.dot(&v))
    };
    for _ in 0..200 {
        let mut owner: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
        for (t, tri) in triangles.iter().enumerate().skip(start) {
            for k in 0..3 {
                owner.insert((tri[k], tri[(k + 1) % 3]), (t, tri[(k + 2) % 3]));
            }
        }
        let mut flipped = false;
        for (&(a, b), &(t1, c)) in &owner {
            if a > b || constrained.contains(&edge_key(a, b)) {
                continue;
            }
            let Some(&(t2, d)) = owner.get(&(b, a)) else { continue };
            if region[t1] != region[t2] {
                continue;
            }
            let (pa, pb, pc, pd) = (nodes[a], nodes[b], nodes[c], nodes[d]);
            if angle(pc, pa, pb) + angle(pd, pb, pa) <= PI + 1e-10 {
                continue;
            }
            if signed_area(pc, pa, pd) <= 0.0 || signed_area(pd, pb, pc) <= 0.0 {
                continue;
            }
            triangles[t1] = [c, a, d];
            triangles[t2] = [d, b, c];
            flipped = true;
            break;
        }
        if !flipped {
            return;
        }
    }
}

/// Laplacian smoothing of `movable` nodes, accepting a move only when it
/// improves the worst angle of the incident triangles.
fn smooth(nodes: &mut [Vec2], triangles: &[[usize; 3]], start: usize, movable: &[usize]) {
    let mut incident: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in movable {
        incident.insert(i, Vec::new());
    }
    for (t, tri) in triangles.iter().enumerate().skip(start) {
        for &i in tri {
            if let Some(v) = incident.get_mut(&i) {
                v.push(t);
            }
        }
    }
    let worst = |nodes: &[Vec2], ts: &[usize]| {
        ts.iter()
            .map(|&t| {
                let p = triangles[t].map(|i| nodes[i]);
                if signed_area(p[0], p[1], p[2]) <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    tri_min_angle(p)
                }
            })
            .fold(f64::INFINITY, f64::min)
    };
    for _ in 0..6 {
        for (&i, ts) in &incident {
            let mut nb = BTreeSet::new();
            for &t in ts {
                for &j in &triangles[t] {
                    if j != i {
                        nb.insert(j);
                    }
                }
            }
            if nb.is_empty() {
                continue;
            }
            let target = nb.iter().map(|&j| nodes[j]).sum::<Vec2>() / nb.len() as f64;
            let before = worst(nodes, ts);
            let saved = nodes[i];
            nodes[i] = target;
            if worst(nodes, ts) <= before {
                nodes[i] = saved;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_disk, generate_rectangle};

    #[test]
    fn punched_square_area() {
        let m = generate_rectangle(1.0, 1.0, 0.025).unwrap();
        let hole = HoleSpec::disk(Vec2::new(0.5, 0.5), 0.1);
        let p = punch_hole(&m, &hole).unwrap();
        let exact = 1.0 - PI * 0.01;
        assert!((p.area() - exact).abs() / exact < 0.02);
        assert_eq!(p.boundary_loops(BoundaryTag::Hole).unwrap().len(), 1);
        for &i in &p.boundary_nodes(BoundaryTag::Hole) {
            assert!(((p.nodes()[i] - hole.center).norm() - 0.1).abs() < 1e-14);
        }
    }

    #[test]
    fn tiny_hole_is_a_resolution_error() {
        let m = generate_rectangle(1.0, 1.0, 0.1).unwrap();
        let r = punch_hole(&m, &HoleSpec::disk(Vec2::new(0.5, 0.5), 0.01));
        assert!(matches!(r, Err(Error::Resolution(_))));
    }

    #[test]
    fn hole_touching_boundary_is_a_geometry_error() {
        let m = generate_rectangle(1.0, 1.0, 0.05).unwrap();
        let r = punch_hole(&m, &HoleSpec::disk(Vec2::new(0.1, 0.5), 0.1));
        assert!(matches!(r, Err(Error::Geometry(_))));
    }

    #[test]
    fn two_disjoint_punches() {
        let m = generate_rectangle(1.0, 1.0, 0.04).unwrap();
        let a = punch_hole(&m, &HoleSpec::disk(Vec2::new(0.3, 0.3), 0.08)).unwrap();
        let b = punch_hole(&a, &HoleSpec::disk(Vec2::new(0.7, 0.7), 0.08)).unwrap();
        assert_eq!(b.boundary_loops(BoundaryTag::Hole).unwrap().len(), 2);
    }

    #[test]
    fn punch_in_disk_keeps_quality() {
        let m = generate_disk(Vec2::zeros(), 1.0, 0.05).unwrap();
        for (x, eps) in [(Vec2::new(0.0, 0.0), 0.05), (Vec2::new(0.31, -0.4), 0.05), (Vec2::new(0.1, 0.2), 0.02)] {
            let r = punch_hole_with(&m, &HoleSpec::disk(x, eps), &PunchOptions::default()).unwrap();
            let exact = m.area() - PI * eps * eps;
            assert!((r.mesh.area() - exact).abs() / exact < 0.002);
        }
    }

    #[test]
    fn filled_disk_is_conforming() {
        let m = generate_rectangle(1.0, 1.0, 0.05).unwrap();
        let opts = PunchOptions { fill: true, min_hole_edges: 32, ..Default::default() };
        let r = punch_hole_with(&m, &HoleSpec::disk(Vec2::new(0.5, 0.5), 0.04), &opts).unwrap();
        assert!((r.mesh.area() - 1.0).abs() < 1e-12);
        let inside: f64 = r.inside_triangles.iter().map(|&t| r.mesh.triangle_area(t)).sum();
        let polygon = 0.5 * 32.0 * 0.04f64.powi(2) * (2.0 * PI / 32.0).sin();
        assert!((inside - polygon).abs() < 1e-14);
        assert!(!r.mesh.has_tag(BoundaryTag::Hole));
    }

    #[test]
    fn carving_matches_direct_punch_area() {
        let m = generate_rectangle(1.0, 1.0, 0.05).unwrap();
        let opts = PunchOptions { fill: true, min_hole_edges: 32, ..Default::default() };
        let r = punch_hole_with(&m, &HoleSpec::disk(Vec2::new(0.5, 0.5), 0.04), &opts).unwrap();
        let (holed, map) = carve_inclusion(&r).unwrap();
        let inside: f64 = r.inside_triangles.iter().map(|&t| r.mesh.triangle_area(t)).sum();
        assert!((holed.area() - (1.0 - inside)).abs() < 1e-12);
        assert_eq!(holed.boundary_nodes(BoundaryTag::Hole).len(), 32);
        for (i, j) in map.iter().enumerate() {
            if let Some(j) = j {
                assert_eq!(holed.nodes()[*j], r.mesh.nodes()[i]);
            }
        }
        let plain = punch_hole_with(&m, &HoleSpec::disk(Vec2::new(0.5, 0.5), 0.04), &PunchOptions::default()).unwrap();
        assert!(carve_inclusion(&plain).is_err());
    }
}
