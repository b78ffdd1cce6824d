//! Plain-text mesh dump: `#vertices`, `#triangles`, `#edges`, `#periodic` sections.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use super::{BoundaryEdge, TriMesh};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MeshDump {
    pub mesh: TriMesh,
    pub periodic: Vec<(usize, usize)>,
}

pub fn write_mesh_dump<W: Write>(out: &mut W, mesh: &TriMesh, periodic: &[(usize, usize)]) -> Result<()> {
    let mut s = String::with_capacity(64 * (mesh.vertices.len() + mesh.triangles.len()));
    s.push_str("#vertices\n");
    for (i, p) in mesh.vertices.iter().enumerate() {
        // `{:?}` on f64 is the shortest round-trip representation
        let _ = writeln!(s, "{i} {:?} {:?}", p[0], p[1]);
    }
    s.push_str("#triangles\n");
    for (i, t) in mesh.triangles.iter().enumerate() {
        let _ = writeln!(s, "{i} {} {} {}", t[0], t[1], t[2]);
    }
    s.push_str("#edges\n");
    for (i, e) in mesh.boundary_edges.iter().enumerate() {
        let _ = writeln!(s, "{i} {} {} {}", e.vertices[0], e.vertices[1], e.tag.as_str());
    }
    s.push_str("#periodic\n");
    for (a, b) in periodic {
        let _ = writeln!(s, "{a} {b}");
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}

pub fn read_mesh_dump<R: BufRead>(input: R) -> Result<MeshDump> {
    let mut dump = MeshDump {
        mesh: TriMesh { vertices: Vec::new(), triangles: Vec::new(), boundary_edges: Vec::new() },
        periodic: Vec::new(),
    };
    let mut section = String::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('#') {
            section = name.trim().to_string();
            continue;
        }
        let bad = |what: &str| Error::InvalidMeshParameter(format!("mesh dump line {}: {what}", lineno + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        let num = |k: usize| -> Result<usize> { fields.get(k).ok_or_else(|| bad("missing field"))?.parse().map_err(|_| bad("bad index")) };
        let real = |k: usize| -> Result<f64> { fields.get(k).ok_or_else(|| bad("missing field"))?.parse().map_err(|_| bad("bad coordinate")) };
        match section.as_str() {
            "vertices" => dump.mesh.vertices.push([real(1)?, real(2)?]),
            "triangles" => dump.mesh.triangles.push([num(1)?, num(2)?, num(3)?]),
            "edges" => dump.mesh.boundary_edges.push(BoundaryEdge {
                vertices: [num(1)?, num(2)?],
                tag: fields.get(3).ok_or_else(|| bad("missing tag"))?.parse()?,
            }),
            "periodic" => dump.periodic.push((num(0)?, num(1)?)),
            other => return Err(bad(&format!("unknown section `{other}`"))),
        }
    }
    let nv = dump.mesh.vertices.len();
    let in_range = dump.mesh.triangles.iter().flatten().chain(dump.mesh.boundary_edges.iter().flat_map(|e| &e.vertices)).all(|&v| v < nv);
    if !in_range {
        return Err(Error::InvalidMeshParameter("mesh dump references a missing vertex".into()));
    }
    Ok(dump)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_cell_mesh, CellGeometry};

    #[test]
    fn round_trip() {
        let cell = build_cell_mesh(&CellGeometry::new(0.25, 16), 0.08).unwrap();
        let pairs: Vec<_> = cell.periodic_pairs.iter().map(|p| (p.a, p.b)).collect();
        let mut buf = Vec::new();
        write_mesh_dump(&mut buf, &cell.mesh, &pairs).unwrap();
        let back = read_mesh_dump(&buf[..]).unwrap();
        assert_eq!(back.mesh, cell.mesh);
        assert_eq!(back.periodic, pairs);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_mesh_dump("#vertices\n0 0.0\n".as_bytes()).is_err());
        assert!(read_mesh_dump("#triangles\n0 0 1 2\n".as_bytes()).is_err());
        assert!(read_mesh_dump("#bogus\n1 2\n".as_bytes()).is_err());
    }
}
