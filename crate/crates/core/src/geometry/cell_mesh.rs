use std::collections::{HashMap, HashSet};

use spade::{AngleLimit, ConstrainedDelaunayTriangulation, Point2, RefinementParameters, Triangulation};

use super::{dist, BoundaryEdge, BoundaryTag, CellGeometry, TriMesh};
use crate::error::{Error, Result};

/// Identification of two boundary vertices of the cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeriodicPair {
    /// Vertex on the left (or bottom) edge.
    pub a: usize,
    /// Its translate on the right (or top) edge.
    pub b: usize,
    /// 0: shift by (1,0); 1: shift by (0,1).
    pub axis: usize,
}

/// Conforming triangulation of `Y*` with periodic vertex pairings.
///
/// Every cell-boundary vertex sits on the uniform lattice `k / grid_n`, so
/// traces on opposite edges are exact translates and any two cell meshes
/// built with the same `grid_n` glue conformingly.
#[derive(Debug, Clone)]
pub struct CellMesh {
    pub mesh: TriMesh,
    pub geometry: CellGeometry,
    pub periodic_pairs: Vec<PeriodicPair>,
    pub h: f64,
    pub grid_n: usize,
    /// Lattice coordinates `(i, j)` (in units of `1/grid_n`) of cell-boundary vertices.
    pub lattice: Vec<Option<(u32, u32)>>,
}

/// Number of boundary segments per cell side for a target size.
/// Always even so the structured hole-free mesh has no all-boundary corner triangle.
pub fn grid_divisions(h_target: f64) -> usize {
    let n = (1.0 / h_target - 1e-9).ceil().max(2.0) as usize;
    n + n % 2
}

pub fn build_cell_mesh(geom: &CellGeometry, h_target: f64) -> Result<CellMesh> {
    geom.validate()?;
    if !(h_target > 0.0 && h_target < 0.25) {
        return Err(Error::InvalidMeshParameter(format!("h_target {h_target} outside (0, 0.25)")));
    }
    if geom.has_hole() {
        let elements = geom.ligament() / h_target;
        if elements < 3.0 - 1e-9 {
            return Err(Error::MeshTooCoarse { h: h_target, elements });
        }
    }
    let n = grid_divisions(h_target);
    let mesh = if geom.has_hole() { holed_mesh(geom, n, h_target)? } else { structured_mesh(n) };
    let mut cell = CellMesh { mesh, geometry: *geom, periodic_pairs: Vec::new(), h: 0.0, grid_n: n, lattice: Vec::new() };
    cell.h = cell.mesh.max_edge_length();
    cell.lattice = lattice_coordinates(&cell.mesh.vertices, n);
    cell.periodic_pairs = pair_periodic(&cell.lattice, n);
    if cell.h > 2.0 * h_target {
        return Err(Error::MeshGeneration(format!("max edge {} exceeds 2*h_target", cell.h)));
    }
    Ok(cell)
}

impl CellMesh {
    /// The partner of `v` under the periodic identification along `axis`.
    pub fn partner(&self, v: usize, axis: usize) -> Option<usize> {
        self.periodic_pairs.iter().find_map(|p| match p.axis == axis {
            true if p.a == v => Some(p.b),
            true if p.b == v => Some(p.a),
            _ => None,
        })
    }
}

/// Union-jack triangulation of the full cell on an `n x n` grid.
fn structured_mesh(n: usize) -> TriMesh {
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let nf = n as f64;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push([i as f64 / nf, j as f64 / nf]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (v00, v10, v01, v11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
            if (i + j) % 2 == 0 {
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            } else {
                triangles.push([v00, v10, v01]);
                triangles.push([v10, v11, v01]);
            }
        }
    }
    let mut mesh = TriMesh { vertices, triangles, boundary_edges: Vec::new() };
    mesh.boundary_edges = tag_boundary(&mesh);
    mesh
}

fn holed_mesh(geom: &CellGeometry, n: usize, h: f64) -> Result<TriMesh> {
    let nf = n as f64;
    let mut outer = Vec::with_capacity(4 * n);
    for k in 0..n {
        outer.push([k as f64 / nf, 0.0]);
    }
    for k in 0..n {
        outer.push([1.0, k as f64 / nf]);
    }
    for k in 0..n {
        outer.push([(n - k) as f64 / nf, 1.0]);
    }
    for k in 0..n {
        outer.push([0.0, (n - k) as f64 / nf]);
    }
    let poly = geom.polygon();

    let mut max_area = 0.4 * h * h;
    for _attempt in 0..8 {
        let mesh = triangulate(&outer, &poly, max_area, h)?;
        if mesh.max_edge_length() <= 2.0 * h {
            return Ok(mesh);
        }
        max_area *= 0.6;
    }
    Err(Error::MeshGeneration("refinement could not meet the edge-length bound".into()))
}

fn triangulate(outer: &[[f64; 2]], poly: &[[f64; 2]], max_area: f64, h: f64) -> Result<TriMesh> {
    let gen_err = |e: spade::InsertionError| Error::MeshGeneration(format!("{e:?}"));
    let mut cdt = ConstrainedDelaunayTriangulation::<Point2<f64>>::new();
    for ring in [outer, poly] {
        let handles = ring
            .iter()
            .map(|p| cdt.insert(Point2::new(p[0], p[1])))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(gen_err)?;
        for k in 0..handles.len() {
            cdt.add_constraint(handles[k], handles[(k + 1) % handles.len()]);
        }
    }
    let budget = (40.0 / (h * h)) as usize + 1000;
    let result = cdt.refine(
        RefinementParameters::<f64>::new()
            .exclude_outer_faces(true)
            .keep_constraint_edges()
            .with_angle_limit(AngleLimit::from_deg(25.0))
            .with_max_allowed_area(max_area)
            .with_max_additional_vertices(budget),
    );
    if !result.refinement_complete {
        return Err(Error::MeshGeneration("Delaunay refinement ran out of vertices".into()));
    }
    let excluded: HashSet<_> = result.excluded_faces.into_iter().collect();

    let mut remap: Vec<Option<usize>> = vec![None; cdt.num_vertices()];
    let mut raw_triangles = Vec::new();
    for face in cdt.inner_faces() {
        if excluded.contains(&face.fix()) {
            continue;
        }
        let vs = face.vertices().map(|v| v.fix().index());
        for &v in &vs {
            remap[v] = Some(0);
        }
        raw_triangles.push(vs);
    }
    let mut vertices = Vec::new();
    for (old, slot) in remap.iter_mut().enumerate() {
        if slot.is_some() {
            let p = cdt.vertex(spade::handles::FixedVertexHandle::from_index(old)).position();
            *slot = Some(vertices.len());
            vertices.push([p.x, p.y]);
        }
    }
    let mut triangles: Vec<[usize; 3]> =
        raw_triangles.iter().map(|t| t.map(|v| remap[v].expect("used vertex"))).collect();
    // Deterministic triangle order independent of spade's face storage.
    triangles.sort_by_key(|t| {
        let mut s = *t;
        s.sort_unstable();
        s
    });
    let mut mesh = TriMesh { vertices, triangles, boundary_edges: Vec::new() };
    for t in 0..mesh.triangles.len() {
        if mesh.signed_area(t) < 0.0 {
            mesh.triangles[t].swap(1, 2);
        }
    }
    mesh.boundary_edges = tag_boundary(&mesh);
    Ok(mesh)
}

/// Boundary edges (edges with one adjacent triangle), oriented as in their triangle.
fn tag_boundary(mesh: &TriMesh) -> Vec<BoundaryEdge> {
    let mut count: HashMap<(usize, usize), (usize, [usize; 2])> = HashMap::new();
    for tri in &mesh.triangles {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            let e = count.entry((a.min(b), a.max(b))).or_insert((0, [a, b]));
            e.0 += 1;
        }
    }
    let mut edges: Vec<_> = count.into_iter().filter(|(_, (c, _))| *c == 1).map(|(k, (_, o))| (k, o)).collect();
    edges.sort_unstable_by_key(|(k, _)| *k);
    let on = |v: usize, axis: usize, value: f64| (mesh.vertices[v][axis] - value).abs() < 1e-12;
    edges
        .into_iter()
        .map(|(_, [a, b])| {
            let tag = if on(a, 1, 0.0) && on(b, 1, 0.0) {
                BoundaryTag::CellBottom
            } else if on(a, 1, 1.0) && on(b, 1, 1.0) {
                BoundaryTag::CellTop
            } else if on(a, 0, 0.0) && on(b, 0, 0.0) {
                BoundaryTag::CellLeft
            } else if on(a, 0, 1.0) && on(b, 0, 1.0) {
                BoundaryTag::CellRight
            } else {
                BoundaryTag::Hole
            };
            BoundaryEdge { vertices: [a, b], tag }
        })
        .collect()
}

fn lattice_coordinates(vertices: &[[f64; 2]], n: usize) -> Vec<Option<(u32, u32)>> {
    let nf = n as f64;
    vertices
        .iter()
        .map(|p| {
            let on_boundary = p.iter().any(|&c| c.abs() < 1e-12 || (c - 1.0).abs() < 1e-12);
            if !on_boundary {
                return None;
            }
            let (i, j) = ((p[0] * nf).round(), (p[1] * nf).round());
            debug_assert!(dist(*p, [i / nf, j / nf]) < 1e-12);
            Some((i as u32, j as u32))
        })
        .collect()
}

fn pair_periodic(lattice: &[Option<(u32, u32)>], n: usize) -> Vec<PeriodicPair> {
    let n = n as u32;
    let lookup: HashMap<(u32, u32), usize> =
        lattice.iter().enumerate().filter_map(|(v, l)| l.map(|l| (l, v))).collect();
    let mut pairs = Vec::new();
    for axis in 0..2 {
        for k in 0..=n {
            let (from, to) = if axis == 0 { ((0, k), (n, k)) } else { ((k, 0), (k, n)) };
            if let (Some(&a), Some(&b)) = (lookup.get(&from), lookup.get(&to)) {
                pairs.push(PeriodicPair { a, b, axis });
            }
        }
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
        // strict interior test for a convex CCW polygon
        (0..poly.len()).all(|i| {
            let a = poly[i];
            let b = poly[(i + 1) % poly.len()];
            (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) > 1e-12
        })
    }

    #[test]
    fn no_hole_gives_full_square() {
        let m = build_cell_mesh(&CellGeometry::new(0.0, 64), 0.1).unwrap();
        assert_eq!(m.mesh.count_tag(BoundaryTag::Hole), 0);
        assert!((m.mesh.area() - 1.0).abs() < 1e-14);
        assert_eq!(m.grid_n, 10);
    }

    #[test]
    fn holed_mesh_invariants() {
        let g = CellGeometry::new(0.25, 64);
        let m = build_cell_mesh(&g, 0.05).unwrap();
        for t in 0..m.mesh.triangles.len() {
            assert!(m.mesh.signed_area(t) > 0.0);
        }
        let hole_area = m.mesh.area();
        let poly_area = 0.5 * 64.0 * 0.0625 * (2.0 * PI / 64.0).sin();
        assert!((hole_area - (1.0 - poly_area)).abs() < 1e-12);
        assert!((poly_area - PI / 16.0).abs() / (PI / 16.0) < 2e-3);
        assert_eq!(m.mesh.count_tag(BoundaryTag::Hole), 64);
        let poly = g.polygon();
        assert!(m.mesh.vertices.iter().all(|&p| !point_in_polygon(p, &poly)));
        assert!(m.h <= 0.1);
        for tag in [BoundaryTag::CellLeft, BoundaryTag::CellRight, BoundaryTag::CellBottom, BoundaryTag::CellTop] {
            assert_eq!(m.mesh.count_tag(tag), m.grid_n);
        }
    }

    #[test]
    fn periodic_pairs_are_exact_translates_and_involutive() {
        let m = build_cell_mesh(&CellGeometry::new(0.2, 32), 0.04).unwrap();
        assert_eq!(m.periodic_pairs.len(), 2 * (m.grid_n + 1));
        for p in &m.periodic_pairs {
            let a = m.mesh.vertices[p.a];
            let b = m.mesh.vertices[p.b];
            let mut shift = [0.0, 0.0];
            shift[p.axis] = 1.0;
            assert!((a[0] + shift[0] - b[0]).abs() < 1e-12 && (a[1] + shift[1] - b[1]).abs() < 1e-12);
            assert_eq!(m.partner(m.partner(p.a, p.axis).unwrap(), p.axis), Some(p.a));
        }
    }

    #[test]
    fn coarse_mesh_rejected() {
        let err = build_cell_mesh(&CellGeometry::new(0.4, 64), 0.05).unwrap_err();
        assert!(matches!(err, Error::MeshTooCoarse { .. }));
        assert!(build_cell_mesh(&CellGeometry::new(0.25, 64), 0.3).is_err());
    }

    #[test]
    fn area_stable_under_refinement() {
        // The discrete |Y*| is the polygon complement at every level.
        let g = CellGeometry::new(0.25, 64);
        let areas: Vec<f64> =
            [0.08, 0.04, 0.02].iter().map(|&h| build_cell_mesh(&g, h).unwrap().mesh.area()).collect();
        for (w, h) in areas.windows(2).zip([0.04f64, 0.02]) {
            assert!((w[0] - w[1]).abs() <= h * h);
        }
    }

    #[test]
    fn deterministic_generation() {
        let g = CellGeometry::new(0.3, 48);
        let a = build_cell_mesh(&g, 0.05).unwrap();
        let b = build_cell_mesh(&g, 0.05).unwrap();
        assert_eq!(a.mesh, b.mesh);
    }
}
