//! Gmsh MSH v2 ASCII import/export and legacy VTK export.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{edge_key, signed_area, BoundaryEdge, BoundaryTag, Mesh, Vec2};
use crate::error::{Error, Result};

/// Physical group id to boundary tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagMap(pub BTreeMap<i64, BoundaryTag>);

impl Default for TagMap {
    /// 1 = Outer, 2 = Obstacle, 3 = Hole.
    fn default() -> Self {
        TagMap(BTreeMap::from([(1, BoundaryTag::Outer), (2, BoundaryTag::Obstacle), (3, BoundaryTag::Hole)]))
    }
}

impl TagMap {
    fn id_of(&self, tag: BoundaryTag) -> i64 {
        self.0.iter().find(|(_, &t)| t == tag).map(|(&id, _)| id).unwrap_or(match tag {
            BoundaryTag::Outer => 1,
            BoundaryTag::Obstacle => 2,
            BoundaryTag::Hole => 3,
        })
    }
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    section: &'static str,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        loop {
            match self.inner.next() {
                Some((_, l)) if l.trim().is_empty() => continue,
                Some((i, l)) => return Ok((i + 1, l.trim())),
                None => {
                    return Err(Error::Parse {
                        section: self.section.to_string(),
                        line: 0,
                        message: "unexpected end of file".into(),
                    })
                }
            }
        }
    }

    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse { section: self.section.to_string(), line, message: message.into() }
    }

    fn expect(&mut self, token: &str) -> Result<()> {
        let (ln, l) = self.next_line()?;
        if l != token {
            return Err(self.err(ln, format!("expected '{token}', found '{l}'")));
        }
        Ok(())
    }
}

fn parse_num<T: std::str::FromStr>(lines: &Lines, ln: usize, tok: Option<&str>, what: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok()).ok_or_else(|| lines.err(ln, format!("invalid or missing {what}")))
}

/// Reads a Gmsh MSH v2 ASCII file.
///
/// Triangles (type 2) form the mesh, clockwise ones are flipped. Line
/// elements (type 1) tag boundary edges through their physical group;
/// boundary edges without a line element default to Outer.
pub fn import_msh(path: &Path, tags: &TagMap) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_msh(&text, tags)
}

pub(crate) fn parse_msh(text: &str, tags: &TagMap) -> Result<Mesh> {
    let mut lines = Lines { inner: text.lines().enumerate(), section: "$MeshFormat" };
    lines.expect("$MeshFormat")?;
    let (ln, l) = lines.next_line()?;
    let version: f64 = parse_num(&lines, ln, l.split_whitespace().next(), "version")?;
    if !(2.0..3.0).contains(&version) {
        return Err(lines.err(ln, format!("unsupported MSH version {version}, expected 2.x")));
    }
    if l.split_whitespace().nth(1) != Some("0") {
        return Err(lines.err(ln, "only ASCII files are supported"));
    }
    lines.expect("$EndMeshFormat")?;

    lines.section = "$Nodes";
    lines.expect("$Nodes")?;
    let (ln, l) = lines.next_line()?;
    let count: usize = parse_num(&lines, ln, Some(l), "node count")?;
    let mut index: HashMap<i64, usize> = HashMap::with_capacity(count);
    let mut nodes = Vec::with_capacity(count);
    for _ in 0..count {
        let (ln, l) = lines.next_line()?;
        let mut it = l.split_whitespace();
        let id: i64 = parse_num(&lines, ln, it.next(), "node id")?;
        let x: f64 = parse_num(&lines, ln, it.next(), "x coordinate")?;
        let y: f64 = parse_num(&lines, ln, it.next(), "y coordinate")?;
        if index.insert(id, nodes.len()).is_some() {
            return Err(lines.err(ln, format!("duplicate node id {id}")));
        }
        nodes.push(Vec2::new(x, y));
    }
    lines.expect("$EndNodes")?;

    lines.section = "$Elements";
    lines.expect("$Elements")?;
    let (ln, l) = lines.next_line()?;
    let count: usize = parse_num(&lines, ln, Some(l), "element count")?;
    let mut triangles = Vec::new();
    let mut line_tags: BTreeMap<(usize, usize), BoundaryTag> = BTreeMap::new();
    for _ in 0..count {
        let (ln, l) = lines.next_line()?;
        let f: Vec<&str> = l.split_whitespace().collect();
        let ty: u32 = parse_num(&lines, ln, f.get(1).copied(), "element type")?;
        let ntags: usize = parse_num(&lines, ln, f.get(2).copied(), "tag count")?;
        let node_at = |k: usize| -> Result<usize> {
            let id: i64 = parse_num(&lines, ln, f.get(3 + ntags + k).copied(), "element node")?;
            index.get(&id).copied().ok_or_else(|| lines.err(ln, format!("unknown node id {id}")))
        };
        match ty {
            1 => {
                let phys: i64 = if ntags > 0 { parse_num(&lines, ln, f.get(3).copied(), "physical tag")? } else { 0 };
                let tag = *tags
                    .0
                    .get(&phys)
                    .ok_or_else(|| lines.err(ln, format!("physical group {phys} has no boundary tag mapping")))?;
                line_tags.insert(edge_key(node_at(0)?, node_at(1)?), tag);
            }
            2 => {
                let mut t = [node_at(0)?, node_at(1)?, node_at(2)?];
                if signed_area(nodes[t[0]], nodes[t[1]], nodes[t[2]]) < 0.0 {
                    t.swap(1, 2);
                }
                triangles.push(t);
            }
            _ => {}
        }
    }
    lines.expect("$EndElements")?;

    let mut count: BTreeMap<(usize, usize), (usize, [usize; 2])> = BTreeMap::new();
    for t in &triangles {
        for k in 0..3 {
            let e = count.entry(edge_key(t[k], t[(k + 1) % 3])).or_insert((0, [t[k], t[(k + 1) % 3]]));
            e.0 += 1;
        }
    }
    let boundary_edges = count
        .iter()
        .filter(|(_, (c, _))| *c == 1)
        .map(|(key, (_, nodes))| BoundaryEdge {
            nodes: *nodes,
            tag: line_tags.get(key).copied().unwrap_or(BoundaryTag::Outer),
        })
        .collect();
    Mesh::new(nodes, triangles, boundary_edges)
}

/// Writes a Gmsh MSH v2.2 ASCII file with full-precision coordinates.
pub fn export_msh(mesh: &Mesh, tags: &TagMap, path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let mut body = String::new();
    body.push_str("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n");
    body.push_str(&format!("{}\n", mesh.num_nodes()));
    for (i, p) in mesh.nodes().iter().enumerate() {
        body.push_str(&format!("{} {:?} {:?} 0\n", i + 1, p.x, p.y));
    }
    body.push_str("$EndNodes\n$Elements\n");
    let ne = mesh.boundary_edges().len() + mesh.num_triangles();
    body.push_str(&format!("{ne}\n"));
    let mut id = 1;
    for e in mesh.boundary_edges() {
        let phys = tags.id_of(e.tag);
        body.push_str(&format!("{id} 1 2 {phys} {phys} {} {}\n", e.nodes[0] + 1, e.nodes[1] + 1));
        id += 1;
    }
    for t in mesh.triangles() {
        body.push_str(&format!("{id} 2 2 0 1 {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
        id += 1;
    }
    body.push_str("$EndElements\n");
    w.write_all(body.as_bytes()).map_err(io)?;
    w.flush().map_err(io)
}

/// Named point data for [`export_vtk`].
#[derive(Debug, Clone, Copy)]
pub enum VtkField<'a> {
    Scalar(&'a str, &'a [f64]),
    Vector(&'a str, &'a [Vec2]),
}

impl VtkField<'_> {
    fn len(&self) -> usize {
        match self {
            VtkField::Scalar(_, v) => v.len(),
            VtkField::Vector(_, v) => v.len(),
        }
    }

    fn name(&self) -> String {
        let raw = match self {
            VtkField::Scalar(n, _) | VtkField::Vector(n, _) => n,
        };
        raw.chars().map(|c| if c.is_whitespace() { '_' } else { c }).collect()
    }
}

/// Writes a legacy ASCII VTK unstructured grid with point data.
pub fn export_vtk(mesh: &Mesh, fields: &[VtkField], path: &Path) -> Result<()> {
    for f in fields {
        if f.len() != mesh.num_nodes() {
            return Err(Error::InvalidArgument(format!(
                "field '{}' has {} values, mesh has {} nodes",
                f.name(),
                f.len(),
                mesh.num_nodes()
            )));
        }
    }
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\nshapeopt mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    s.push_str(&format!("POINTS {} double\n", mesh.num_nodes()));
    for p in mesh.nodes() {
        s.push_str(&format!("{:?} {:?} 0\n", p.x, p.y));
    }
    let nt = mesh.num_triangles();
    s.push_str(&format!("CELLS {nt} {}\n", 4 * nt));
    for t in mesh.triangles() {
        s.push_str(&format!("3 {} {} {}\n", t[0], t[1], t[2]));
    }
    s.push_str(&format!("CELL_TYPES {nt}\n"));
    for _ in 0..nt {
        s.push_str("5\n");
    }
    if !fields.is_empty() {
        s.push_str(&format!("POINT_DATA {}\n", mesh.num_nodes()));
    }
    for f in fields {
        match f {
            VtkField::Scalar(_, v) => {
                s.push_str(&format!("SCALARS {} double 1\nLOOKUP_TABLE default\n", f.name()));
                for x in v.iter() {
                    s.push_str(&format!("{x:?}\n"));
                }
            }
            VtkField::Vector(_, v) => {
                s.push_str(&format!("VECTORS {} double\n", f.name()));
                for x in v.iter() {
                    s.push_str(&format!("{:?} {:?} 0\n", x.x, x.y));
                }
            }
        }
    }
    w.write_all(s.as_bytes()).map_err(io)?;
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_rectangle;

    const ONE_TRIANGLE: &str = "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n3\n1 0 0 0\n2 0 1 0\n3 1 0 0\n$EndNodes\n$Elements\n1\n1 2 2 0 1 1 2 3\n$EndElements\n";

    #[test]
    fn single_triangle_file() {
        let m = parse_msh(ONE_TRIANGLE, &TagMap::default()).unwrap();
        assert_eq!(m.num_triangles(), 1);
        assert_eq!(m.boundary_edges().len(), 3);
        assert!(m.triangle_area(0) > 0.0);
    }

    #[test]
    fn truncated_file_names_section() {
        let cut = &ONE_TRIANGLE[..ONE_TRIANGLE.find("$Elements").unwrap() + 12];
        match parse_msh(cut, &TagMap::default()) {
            Err(Error::Parse { section, .. }) => assert_eq!(section, "$Elements"),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_msh("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n3\n1 0 x 0\n", &TagMap::default()) {
            Err(Error::Parse { section, line, .. }) => {
                assert_eq!(section, "$Nodes");
                assert_eq!(line, 6);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn msh_round_trip() {
        let m = generate_rectangle(1.0, 0.5, 0.1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("square.msh");
        export_msh(&m, &TagMap::default(), &path).unwrap();
        let r = import_msh(&path, &TagMap::default()).unwrap();
        assert_eq!(r.num_nodes(), m.num_nodes());
        for t in 0..m.num_triangles() {
            assert!((r.triangle_area(t) - m.triangle_area(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn vtk_has_point_data() {
        let m = generate_rectangle(1.0, 1.0, 0.5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vtk");
        let s = vec![1.0; m.num_nodes()];
        let v = vec![Vec2::new(1.0, 2.0); m.num_nodes()];
        export_vtk(&m, &[VtkField::Scalar("eta", &s), VtkField::Vector("V", &v)], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# vtk DataFile Version 3.0"));
        assert!(text.contains("CELL_TYPES 16"));
        assert!(text.contains("SCALARS eta double 1"));
        assert!(text.contains("VECTORS V double"));
        assert!(export_vtk(&m, &[VtkField::Scalar("bad", &[1.0])], &path).is_err());
    }
}
