//! Deterministic structured generators.

use std::f64::consts::PI;

use super::{cross, BoundaryEdge, BoundaryTag, Mesh, Vec2};
use crate::error::{Error, Result};

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {v}")));
    }
    Ok(())
}

/// Crossed structured mesh of `[0, width] x [0, height]`.
///
/// The domain is split into `ceil(width / h) x ceil(height / h)` cells and
/// every cell into four triangles around an extra center node. For
/// `(1, 1, 0.5)` this gives 13 nodes and 16 triangles. The crossed pattern
/// has no preferred diagonal, so the mesh keeps the reflection symmetries of
/// the rectangle.
pub fn generate_rectangle(width: f64, height: f64, h: f64) -> Result<Mesh> {
    check_positive("width", width)?;
    check_positive("height", height)?;
    check_positive("h", h)?;
    if h >= width.min(height) {
        return Err(Error::InvalidArgument(format!(
            "h = {h} must be smaller than min(width, height) = {}",
            width.min(height)
        )));
    }
    let nx = (width / h - 1e-9).ceil() as usize;
    let ny = (height / h - 1e-9).ceil() as usize;
    let grid = |i: usize, j: usize| j * (nx + 1) + i;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1) + nx * ny);
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push(Vec2::new(width * i as f64 / nx as f64, height * j as f64 / ny as f64));
        }
    }
    let first_center = nodes.len();
    for j in 0..ny {
        for i in 0..nx {
            nodes.push(Vec2::new(width * (i as f64 + 0.5) / nx as f64, height * (j as f64 + 0.5) / ny as f64));
        }
    }
    let mut triangles = Vec::with_capacity(4 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let c = first_center + j * nx + i;
            let (a, b, d, e) = (grid(i, j), grid(i + 1, j), grid(i + 1, j + 1), grid(i, j + 1));
            triangles.extend_from_slice(&[[a, b, c], [b, d, c], [d, e, c], [e, a, c]]);
        }
    }
    let mut edges = Vec::with_capacity(2 * (nx + ny));
    let outer = |a, b| BoundaryEdge { nodes: [a, b], tag: BoundaryTag::Outer };
    for i in 0..nx {
        edges.push(outer(grid(i, 0), grid(i + 1, 0)));
        edges.push(outer(grid(i + 1, ny), grid(i, ny)));
    }
    for j in 0..ny {
        edges.push(outer(grid(nx, j), grid(nx, j + 1)));
        edges.push(outer(grid(0, j + 1), grid(0, j)));
    }
    Mesh::new(nodes, triangles, edges)
}

/// Disk mesh built from concentric rings of `6 i` nodes.
///
/// Ring radii are uniform, `ceil(radius / h)` rings in total; the outermost
/// ring lies exactly on the circle.
pub fn generate_disk(center: Vec2, radius: f64, h: f64) -> Result<Mesh> {
    check_positive("radius", radius)?;
    check_positive("h", h)?;
    if h >= radius {
        return Err(Error::InvalidArgument(format!("h = {h} must be smaller than radius = {radius}")));
    }
    let rings = (radius / h - 1e-9).ceil() as usize;
    let mut nodes = vec![center];
    let mut ring_ids: Vec<Vec<usize>> = Vec::with_capacity(rings);
    for i in 1..=rings {
        let r = if i == rings { radius } else { radius * i as f64 / rings as f64 };
        let n = 6 * i;
        let ids = (0..n)
            .map(|k| {
                let th = 2.0 * PI * k as f64 / n as f64;
                nodes.push(center + Vec2::new(r * th.cos(), r * th.sin()));
                nodes.len() - 1
            })
            .collect();
        ring_ids.push(ids);
    }
    let mut triangles = Vec::new();
    let first = &ring_ids[0];
    for k in 0..first.len() {
        triangles.push([0, first[k], first[(k + 1) % first.len()]]);
    }
    for w in ring_ids.windows(2) {
        zipper(&nodes, center, &w[0], &w[1], &mut triangles);
    }
    let last = ring_ids.last().expect("at least one ring");
    let edges = (0..last.len())
        .map(|k| BoundaryEdge { nodes: [last[k], last[(k + 1) % last.len()]], tag: BoundaryTag::Outer })
        .collect();
    Mesh::new(nodes, triangles, edges)
}

/// Closed curves used by [`generate_annulus`].
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Disk {
        center: Vec2,
        radius: f64,
    },
    Rectangle {
        min: Vec2,
        max: Vec2,
    },
    /// Counterclockwise vertices of a simple polygon.
    Polygon(Vec<Vec2>),
}

impl Shape {
    fn validate(&self) -> Result<()> {
        match self {
            Shape::Disk { radius, .. } => check_positive("radius", *radius),
            Shape::Rectangle { min, max } => {
                check_positive("rectangle width", max.x - min.x)?;
                check_positive("rectangle height", max.y - min.y)
            }
            Shape::Polygon(v) => {
                if v.len() < 3 {
                    return Err(Error::InvalidArgument("polygon needs at least 3 vertices".into()));
                }
                let twice_area: f64 = (0..v.len()).map(|i| cross(v[i], v[(i + 1) % v.len()])).sum();
                if twice_area <= 0.0 {
                    return Err(Error::Geometry("polygon vertices must be counterclockwise".into()));
                }
                Ok(())
            }
        }
    }

    /// A reference point the shape is expected to be star-shaped about.
    pub fn center(&self) -> Vec2 {
        match self {
            Shape::Disk { center, .. } => *center,
            Shape::Rectangle { min, max } => (min + max) / 2.0,
            Shape::Polygon(v) => {
                // area centroid
                let mut a = 0.0;
                let mut c = Vec2::zeros();
                for i in 0..v.len() {
                    let (p, q) = (v[i], v[(i + 1) % v.len()]);
                    let w = cross(p, q);
                    a += w;
                    c += (p + q) * w;
                }
                c / (3.0 * a)
            }
        }
    }

    fn vertices(&self) -> Option<Vec<Vec2>> {
        match self {
            Shape::Disk { .. } => None,
            Shape::Rectangle { min, max } => Some(vec![*min, Vec2::new(max.x, min.y), *max, Vec2::new(min.x, max.y)]),
            Shape::Polygon(v) => Some(v.clone()),
        }
    }

    /// Counterclockwise boundary samples with spacing at most `h`.
    fn sample(&self, h: f64) -> Vec<Vec2> {
        match self {
            Shape::Disk { center, radius } => {
                let n = ((2.0 * PI * radius / h).ceil() as usize).max(8);
                (0..n)
                    .map(|k| {
                        let th = 2.0 * PI * k as f64 / n as f64;
                        center + Vec2::new(radius * th.cos(), radius * th.sin())
                    })
                    .collect()
            }
            _ => {
                let v = self.vertices().expect("polygonal shape");
                let mut out = Vec::new();
                for i in 0..v.len() {
                    let (p, q) = (v[i], v[(i + 1) % v.len()]);
                    let n = ((q - p).norm() / h - 1e-9).ceil().max(1.0) as usize;
                    for k in 0..n {
                        out.push(p + (q - p) * (k as f64 / n as f64));
                    }
                }
                out
            }
        }
    }

    /// Distance from `origin` to the boundary along direction `dir`, for a
    /// shape star-shaped about `origin`.
    fn ray(&self, origin: Vec2, dir: Vec2) -> Option<f64> {
        match self {
            Shape::Disk { center, radius } => {
                let m = origin - center;
                let b = m.dot(&dir);
                let c = m.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let t = -b + disc.sqrt();
                (t > 0.0).then_some(t)
            }
            _ => {
                let v = self.vertices().expect("polygonal shape");
                let mut best: Option<f64> = None;
                for i in 0..v.len() {
                    let (p, q) = (v[i], v[(i + 1) % v.len()]);
                    let e = q - p;
                    let den = cross(dir, e);
                    if den.abs() < 1e-300 {
                        continue;
                    }
                    let w = p - origin;
                    let t = cross(w, e) / den;
                    let s = cross(w, dir) / den;
                    if t > 0.0 && (-1e-12..=1.0 + 1e-12).contains(&s) {
                        best = Some(best.map_or(t, |b: f64| b.min(t)));
                    }
                }
                best
            }
        }
    }

    fn is_star_shaped_about(&self, origin: Vec2) -> bool {
        match self {
            Shape::Disk { center, radius } => (origin - center).norm() < *radius,
            _ => {
                let v = self.vertices().expect("polygonal shape");
                (0..v.len()).all(|i| cross(v[i] - origin, v[(i + 1) % v.len()] - origin) > 0.0)
            }
        }
    }
}

fn angle_about(c: Vec2, p: Vec2) -> f64 {
    (p.y - c.y).atan2(p.x - c.x)
}

/// Piecewise-linear map from unwrapped angle to arclength fraction of a
/// closed star-shaped loop, measured from the ray at `theta_ref`.
struct ArcFraction {
    angles: Vec<f64>,
    fractions: Vec<f64>,
    shift: f64,
}

impl ArcFraction {
    fn new(c: Vec2, pts: &[Vec2], theta_ref: f64) -> Self {
        let n = pts.len();
        let total: f64 = (0..n).map(|i| (pts[(i + 1) % n] - pts[i]).norm()).sum();
        let mut angles = Vec::with_capacity(n + 1);
        let mut fractions = Vec::with_capacity(n + 1);
        let mut prev = angle_about(c, pts[0]);
        let mut acc = 0.0;
        angles.push(prev);
        fractions.push(0.0);
        for i in 1..=n {
            let p = pts[i % n];
            acc += (p - pts[i - 1]).norm();
            let mut th = angle_about(c, p);
            while th <= prev {
                th += 2.0 * PI;
            }
            angles.push(th);
            fractions.push(acc / total);
            prev = th;
        }
        let mut f = ArcFraction { angles, fractions, shift: 0.0 };
        f.shift = f.raw(theta_ref);
        f
    }

    fn raw(&self, theta: f64) -> f64 {
        let a0 = self.angles[0];
        let mut th = theta;
        while th < a0 {
            th += 2.0 * PI;
        }
        while th >= a0 + 2.0 * PI {
            th -= 2.0 * PI;
        }
        let k = self.angles.partition_point(|&a| a <= th).clamp(1, self.angles.len() - 1);
        let (t0, t1) = (self.angles[k - 1], self.angles[k]);
        let (f0, f1) = (self.fractions[k - 1], self.fractions[k]);
        f0 + (f1 - f0) * (th - t0) / (t1 - t0)
    }

    /// Fraction at `theta`, zero on the reference ray and increasing
    /// counterclockwise up to one.
    fn at(&self, theta: f64) -> f64 {
        (self.raw(theta) - self.shift).rem_euclid(1.0)
    }
}

/// Mesh of `outer \ obstacle`, tagged Outer and Obstacle.
///
/// The region is swept by loops blended radially between the obstacle and
/// the outer boundary, seen from the obstacle center; both shapes must be
/// star-shaped about that point.
pub fn generate_annulus(outer: &Shape, obstacle: &Shape, h: f64) -> Result<Mesh> {
    check_positive("h", h)?;
    outer.validate()?;
    obstacle.validate()?;
    let c = obstacle.center();
    if !obstacle.is_star_shaped_about(c) {
        return Err(Error::Geometry("obstacle is not star-shaped about its center".into()));
    }
    if !outer.is_star_shaped_about(c) {
        return Err(Error::Geometry(
            "outer boundary does not enclose the obstacle center or is not star-shaped about it".into(),
        ));
    }
    let inner_pts = obstacle.sample(h);
    let outer_pts = outer.sample(h);
    let dir = |th: f64| Vec2::new(th.cos(), th.sin());
    let radial = |shape: &Shape, th: f64| {
        shape.ray(c, dir(th)).ok_or_else(|| Error::Geometry("boundary is not visible from the obstacle center".into()))
    };
    let mut max_gap: f64 = 0.0;
    for p in inner_pts.iter().chain(outer_pts.iter()) {
        let th = angle_about(c, *p);
        let gap = radial(outer, th)? - radial(obstacle, th)?;
        if gap <= 0.25 * h {
            return Err(Error::Geometry("obstacle must lie strictly inside the outer boundary with clearance".into()));
        }
        max_gap = max_gap.max(gap);
    }

    let layers = ((max_gap / h).ceil() as usize).max(1);
    let theta_ref = angle_about(c, inner_pts[0]);
    let frac_in = ArcFraction::new(c, &inner_pts, theta_ref);
    let frac_out = ArcFraction::new(c, &outer_pts, theta_ref);
    let (n_in, n_out) = (inner_pts.len() as f64, outer_pts.len() as f64);

    let mut nodes: Vec<Vec2> = Vec::new();
    let mut loops: Vec<Vec<usize>> = Vec::with_capacity(layers + 1);
    for k in 0..=layers {
        let ids: Vec<usize> = if k == 0 {
            inner_pts.iter().map(|p| push(&mut nodes, *p)).collect()
        } else if k == layers {
            outer_pts.iter().map(|p| push(&mut nodes, *p)).collect()
        } else {
            let s = k as f64 / layers as f64;
            let n = ((1.0 - s) * n_in + s * n_out).round().max(3.0) as usize;
            let blend = |th: f64| (1.0 - s) * frac_in.at(th) + s * frac_out.at(th);
            let mut ids = Vec::with_capacity(n);
            for m in 0..n {
                let u = m as f64 / n as f64;
                let th = invert_monotone(&blend, u, theta_ref);
                let rho = (1.0 - s) * radial(obstacle, th)? + s * radial(outer, th)?;
                ids.push(push(&mut nodes, c + dir(th) * rho));
            }
            ids
        };
        loops.push(ids);
    }
    let mut triangles = Vec::new();
    for w in loops.windows(2) {
        zipper(&nodes, c, &w[0], &w[1], &mut triangles);
    }
    let ring_edges = |ids: &[usize], tag| {
        (0..ids.len()).map(|i| BoundaryEdge { nodes: [ids[i], ids[(i + 1) % ids.len()]], tag }).collect::<Vec<_>>()
    };
    let mut edges = ring_edges(&loops[0], BoundaryTag::Obstacle);
    edges.extend(ring_edges(&loops[layers], BoundaryTag::Outer));
    Mesh::new(nodes, triangles, edges)
}

fn push(nodes: &mut Vec<Vec2>, p: Vec2) -> usize {
    nodes.push(p);
    nodes.len() - 1
}

/// Solves `f(theta) = u` for `theta` in `[theta_ref, theta_ref + 2 pi)`
/// by bisection; `f` is increasing from 0 to 1 on that interval.
fn invert_monotone(f: &dyn Fn(f64) -> f64, u: f64, theta_ref: f64) -> f64 {
    if u <= 0.0 {
        return theta_ref;
    }
    let (mut lo, mut hi) = (theta_ref, theta_ref + 2.0 * PI);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Triangulates the strip between two loops that both wind
/// counterclockwise around `c`, `inner` closer to `c` than `outer`.
pub(crate) fn zipper(nodes: &[Vec2], c: Vec2, inner: &[usize], outer: &[usize], triangles: &mut Vec<[usize; 3]>) {
    let unwrap = |ids: &[usize], start: usize, base: f64| -> Vec<f64> {
        let n = ids.len();
        let mut out = Vec::with_capacity(n + 1);
        let mut prev = base;
        for k in 0..=n {
            let mut th = angle_about(c, nodes[ids[(start + k) % n]]);
            if k == 0 {
                while th < base - PI {
                    th += 2.0 * PI;
                }
                while th >= base + PI {
                    th -= 2.0 * PI;
                }
            } else {
                while th <= prev {
                    th += 2.0 * PI;
                }
            }
            if k == n {
                th = out[0] + 2.0 * PI;
            }
            out.push(th);
            prev = th;
        }
        out
    };
    let a0 = angle_about(c, nodes[inner[0]]);
    // outer start: node with angle closest to the first inner node
    let j0 = (0..outer.len())
        .min_by(|&i, &j| {
            let d = |k: usize| {
                let t = (angle_about(c, nodes[outer[k]]) - a0).rem_euclid(2.0 * PI);
                t.min(2.0 * PI - t)
            };
            d(i).total_cmp(&d(j))
        })
        .expect("non-empty loop");
    let ta = unwrap(inner, 0, a0);
    let tb = unwrap(outer, j0, a0);
    let (na, nb) = (inner.len(), outer.len());
    let a = |i: usize| inner[i % na];
    let b = |j: usize| outer[(j0 + j) % nb];
    let (mut i, mut j) = (0usize, 0usize);
    while i < na || j < nb {
        let advance_inner = if i == na {
            false
        } else if j == nb {
            true
        } else {
            ta[i + 1] <= tb[j + 1]
        };
        if advance_inner {
            triangles.push([a(i), b(j), a(i + 1)]);
            i += 1;
        } else {
            triangles.push([a(i), b(j), b(j + 1)]);
            j += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rectangle_counts() {
        let m = generate_rectangle(1.0, 1.0, 0.5).unwrap();
        assert_eq!(m.num_nodes(), 13);
        assert_eq!(m.num_triangles(), 16);
        assert!((m.area() - 1.0).abs() < 1e-14);
        assert!(m.max_edge_length() <= 1.5 * 0.5);
        assert_eq!(m.boundary_loops(BoundaryTag::Outer).unwrap().len(), 1);
    }

    #[test]
    fn rectangle_rejects_degenerate_input() {
        assert!(matches!(generate_rectangle(1.0, 0.0, 0.1), Err(Error::InvalidArgument(_))));
        assert!(matches!(generate_rectangle(1.0, 1.0, 1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn rectangle_triangle_count_scales_inverse_square() {
        let a = generate_rectangle(1.0, 1.0, 0.1).unwrap().num_triangles();
        let b = generate_rectangle(1.0, 1.0, 0.05).unwrap().num_triangles();
        assert_eq!(b, 4 * a);
    }

    #[test]
    fn disk_area_and_boundary() {
        let m = generate_disk(Vec2::zeros(), 1.0, 0.2).unwrap();
        assert!((m.area() - PI).abs() / PI < 0.02);
        for &i in &m.boundary_nodes(BoundaryTag::Outer) {
            assert!((m.nodes()[i].norm() - 1.0).abs() < 1e-14);
        }
        let e1 = PI - m.area();
        let e2 = PI - generate_disk(Vec2::zeros(), 1.0, 0.1).unwrap().area();
        assert!((e1 / e2 - 4.0).abs() < 0.2);
        assert!(generate_disk(Vec2::zeros(), 1.0, 2.0).is_err());
    }

    #[test]
    fn disk_annulus_area() {
        let m = generate_annulus(
            &Shape::Disk { center: Vec2::zeros(), radius: 1.0 },
            &Shape::Disk { center: Vec2::zeros(), radius: 0.3 },
            0.1,
        )
        .unwrap();
        let exact = PI * (1.0 - 0.09);
        assert!((m.area() - exact).abs() / exact < 0.02);
        assert!(m.min_angle_deg() > 20.0);
    }

    #[test]
    fn oversized_obstacle_is_rejected() {
        let r = generate_annulus(
            &Shape::Disk { center: Vec2::zeros(), radius: 1.0 },
            &Shape::Disk { center: Vec2::zeros(), radius: 1.5 },
            0.1,
        );
        assert!(matches!(r, Err(Error::Geometry(_))));
    }

    #[test]
    fn square_annulus_loops_and_tags() {
        let m = generate_annulus(
            &Shape::Rectangle { min: Vec2::new(0.0, 0.0), max: Vec2::new(3.0, 3.0) },
            &Shape::Rectangle { min: Vec2::new(1.0, 1.0), max: Vec2::new(2.0, 2.0) },
            0.25,
        )
        .unwrap();
        assert_eq!(m.boundary_loops(BoundaryTag::Outer).unwrap().len(), 1);
        assert_eq!(m.boundary_loops(BoundaryTag::Obstacle).unwrap().len(), 1);
        assert!((m.area() - 8.0).abs() < 1e-12);
    }
}
