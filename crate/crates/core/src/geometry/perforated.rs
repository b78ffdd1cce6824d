use std::collections::HashMap;
use std::ops::Range;

use super::{build_cell_mesh, cell_measures, BoundaryEdge, BoundaryTag, CellGeometry, CellMesh, Epsilon, Measures, Rect, TriMesh};
use crate::error::{Error, Result};

/// Default guard on the number of triangles in a perforated mesh.
pub const DEFAULT_ELEMENT_CAP: usize = 1_500_000;

/// One scaled hole `eps(k + O)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hole {
    pub cell: [usize; 2],
    pub center: [f64; 2],
    /// Indices into `mesh.boundary_edges`.
    pub edges: Vec<usize>,
    /// Global vertex ids of the polygon, in reference order (angle 0 first, CCW).
    pub polygon: Vec<usize>,
}

/// The image of a reference cell mesh in cell `eps(k + Y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPatch {
    pub cell: [usize; 2],
    pub perforated: bool,
    pub triangles: Range<usize>,
    /// Reference vertex -> global vertex.
    pub vertex_map: Vec<usize>,
}

/// Triangulation of `D^eps`: `D` minus the holes of all interior cells.
#[derive(Debug, Clone)]
pub struct PerforatedMesh {
    pub epsilon: Epsilon,
    pub domain: Rect,
    pub geometry: CellGeometry,
    /// Cells per direction.
    pub cells: [usize; 2],
    pub hole_cells: Vec<[usize; 2]>,
    pub holes: Vec<Hole>,
    pub patches: Vec<CellPatch>,
    pub mesh: TriMesh,
    pub measures: Measures,
    /// Reference mesh used in perforated cells (the plain mesh when `r = 0`).
    pub reference: CellMesh,
    pub h: f64,
}

/// Result of the surface-to-volume comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceToVolume {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

/// Volume over which the right-hand side of the surface-to-volume identity is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeRegion {
    /// Only cells that carry a hole (the testable identity).
    PerforatedCells,
    /// All of `D^eps`, including the hole-free boundary layer.
    Whole,
}

pub fn build_perforated_mesh(geom: &CellGeometry, epsilon: Epsilon, domain: Rect, h_target: f64) -> Result<PerforatedMesh> {
    build_perforated_mesh_capped(geom, epsilon, domain, h_target, DEFAULT_ELEMENT_CAP)
}

pub fn build_perforated_mesh_capped(
    geom: &CellGeometry,
    epsilon: Epsilon,
    domain: Rect,
    h_target: f64,
    cap: usize,
) -> Result<PerforatedMesh> {
    geom.validate()?;
    let n = f64::from(epsilon.denominator());
    let count = |len: f64| -> Result<usize> {
        let c = len * n;
        if !(c >= 1.0) || (c - c.round()).abs() > 1e-9 {
            return Err(Error::InvalidMeshParameter(format!("domain side {len} is not a multiple of epsilon = {epsilon}")));
        }
        Ok(c.round() as usize)
    };
    let (nx, ny) = (count(domain.width())?, count(domain.height())?);

    let plain_geom = CellGeometry { hole_radius: 0.0, ..*geom };
    let plain = build_cell_mesh(&plain_geom, h_target)?;
    let holed = if geom.has_hole() { build_cell_mesh(geom, h_target)? } else { plain.clone() };
    debug_assert_eq!(plain.grid_n, holed.grid_n);

    let is_perforated = |i: usize, j: usize| geom.has_hole() && i >= 1 && j >= 1 && i + 2 <= nx && j + 2 <= ny;
    let n_holes = if geom.has_hole() { nx.saturating_sub(2) * ny.saturating_sub(2) } else { 0 };
    let estimated = n_holes * holed.mesh.triangles.len() + (nx * ny - n_holes) * plain.mesh.triangles.len();
    if estimated > cap {
        return Err(Error::MeshTooLarge { estimated, cap });
    }

    let eps = epsilon.value();
    let gn = plain.grid_n as u64;
    let lattice_point = |key: (u64, u64)| {
        [
            domain.min[0] + eps * (key.0 as f64 / gn as f64),
            domain.min[1] + eps * (key.1 as f64 / gn as f64),
        ]
    };

    // reference polygon vertices are the cell vertices that sit on the hole
    let ref_polygon: Vec<usize> = if n_holes > 0 {
        geom.polygon()
            .iter()
            .map(|q| {
                holed.mesh.vertices.iter().position(|p| (p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12)
            })
            .collect::<Option<_>>()
            .ok_or_else(|| Error::MeshGeneration("hole polygon vertex missing from cell mesh".into()))?
    } else {
        Vec::new()
    };

    let mut vertices: Vec<[f64; 2]> = Vec::new();
    let mut triangles: Vec<[usize; 3]> = Vec::with_capacity(estimated);
    let mut boundary_edges = Vec::new();
    let mut lattice: HashMap<(u64, u64), usize> = HashMap::new();
    let mut patches = Vec::with_capacity(nx * ny);
    let mut holes = Vec::with_capacity(n_holes);
    let mut hole_cells = Vec::with_capacity(n_holes);

    for j in 0..ny {
        for i in 0..nx {
            let perforated = is_perforated(i, j);
            let cell = if perforated { &holed } else { &plain };
            let vertex_map: Vec<usize> = cell
                .mesh
                .vertices
                .iter()
                .zip(&cell.lattice)
                .map(|(p, key)| match key {
                    Some((a, b)) => {
                        let key = (i as u64 * gn + u64::from(*a), j as u64 * gn + u64::from(*b));
                        *lattice.entry(key).or_insert_with(|| {
                            vertices.push(lattice_point(key));
                            vertices.len() - 1
                        })
                    }
                    None => {
                        vertices.push([
                            domain.min[0] + eps * (i as f64 + p[0]),
                            domain.min[1] + eps * (j as f64 + p[1]),
                        ]);
                        vertices.len() - 1
                    }
                })
                .collect();
            let start = triangles.len();
            triangles.extend(cell.mesh.triangles.iter().map(|t| t.map(|v| vertex_map[v])));

            let mut hole_edges = Vec::new();
            for e in &cell.mesh.boundary_edges {
                let tag = match e.tag {
                    BoundaryTag::Hole => BoundaryTag::Hole,
                    BoundaryTag::CellLeft if i == 0 => BoundaryTag::Outer,
                    BoundaryTag::CellRight if i + 1 == nx => BoundaryTag::Outer,
                    BoundaryTag::CellBottom if j == 0 => BoundaryTag::Outer,
                    BoundaryTag::CellTop if j + 1 == ny => BoundaryTag::Outer,
                    _ => continue,
                };
                if tag == BoundaryTag::Hole {
                    hole_edges.push(boundary_edges.len());
                }
                boundary_edges.push(BoundaryEdge { vertices: e.vertices.map(|v| vertex_map[v]), tag });
            }
            if perforated {
                let c = geom.hole_center;
                let polygon = ref_polygon.iter().map(|&v| vertex_map[v]).collect();
                holes.push(Hole {
                    cell: [i, j],
                    center: [domain.min[0] + eps * (i as f64 + c[0]), domain.min[1] + eps * (j as f64 + c[1])],
                    edges: hole_edges,
                    polygon,
                });
                hole_cells.push([i, j]);
            }
            patches.push(CellPatch { cell: [i, j], perforated, triangles: start..triangles.len(), vertex_map });
        }
    }

    let mesh = TriMesh { vertices, triangles, boundary_edges };
    let h = eps * holed.h.max(plain.h);
    Ok(PerforatedMesh {
        epsilon,
        domain,
        geometry: *geom,
        cells: [nx, ny],
        hole_cells,
        holes,
        patches,
        mesh,
        measures: cell_measures(geom),
        reference: holed,
        h,
    })
}

impl PerforatedMesh {
    pub fn num_holes(&self) -> usize {
        self.holes.len()
    }

    /// Triangles belonging to cells that carry a hole.
    pub fn perforated_triangles(&self) -> impl Iterator<Item = usize> + '_ {
        self.patches.iter().filter(|p| p.perforated).flat_map(|p| p.triangles.clone())
    }

    /// Maps a point on a hole boundary to the reference cell: `x/eps - k`.
    pub fn to_reference(&self, hole: &Hole, x: [f64; 2]) -> [f64; 2] {
        let eps = self.epsilon.value();
        [
            (x[0] - self.domain.min[0]) / eps - hole.cell[0] as f64,
            (x[1] - self.domain.min[1]) / eps - hole.cell[1] as f64,
        ]
    }

    /// Mesh of all of `D`: the `D^eps` triangles first, then a fan over each hole.
    /// Returns the mesh and the number of leading `D^eps` triangles.
    pub fn with_holes_filled(&self) -> (TriMesh, usize) {
        let mut mesh = self.mesh.clone();
        let n_dom = mesh.triangles.len();
        mesh.boundary_edges.retain(|e| e.tag != BoundaryTag::Hole);
        for hole in &self.holes {
            let c = mesh.vertices.len();
            mesh.vertices.push(hole.center);
            let k = hole.polygon.len();
            for s in 0..k {
                mesh.triangles.push([c, hole.polygon[s], hole.polygon[(s + 1) % k]]);
            }
        }
        (mesh, n_dom)
    }
}

/// Structured union-jack mesh of a rectangle with `OUTER` boundary tags.
pub fn build_rect_mesh(domain: Rect, h_target: f64) -> Result<TriMesh> {
    if !(h_target > 0.0 && h_target.is_finite()) {
        return Err(Error::InvalidMeshParameter(format!("h_target {h_target} must be positive")));
    }
    let div = |len: f64| {
        let n = (len / h_target - 1e-9).ceil().max(2.0) as usize;
        n + n % 2
    };
    let (nx, ny) = (div(domain.width()), div(domain.height()));
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([
                domain.min[0] + domain.width() * i as f64 / nx as f64,
                domain.min[1] + domain.height() * j as f64 / ny as f64,
            ]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10, v01, v11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
            if (i + j) % 2 == 0 {
                triangles.extend([[v00, v10, v11], [v00, v11, v01]]);
            } else {
                triangles.extend([[v00, v10, v01], [v10, v11, v01]]);
            }
        }
    }
    let mut boundary_edges = Vec::with_capacity(2 * (nx + ny));
    let tag = BoundaryTag::Outer;
    for i in 0..nx {
        boundary_edges.push(BoundaryEdge { vertices: [idx(i, 0), idx(i + 1, 0)], tag });
        boundary_edges.push(BoundaryEdge { vertices: [idx(i + 1, ny), idx(i, ny)], tag });
    }
    for j in 0..ny {
        boundary_edges.push(BoundaryEdge { vertices: [idx(nx, j), idx(nx, j + 1)], tag });
        boundary_edges.push(BoundaryEdge { vertices: [idx(0, j + 1), idx(0, j)], tag });
    }
    Ok(TriMesh { vertices, triangles, boundary_edges })
}

/// Compares `eps * int_{dO^eps} v` with `|dO|/|Y*| * int v` over the perforated cells.
pub fn surface_to_volume_residual<F: Fn([f64; 2]) -> f64>(v: F, mesh: &PerforatedMesh) -> SurfaceToVolume {
    surface_to_volume_over(v, mesh, VolumeRegion::PerforatedCells)
}

pub fn surface_to_volume_over<F: Fn([f64; 2]) -> f64>(v: F, mesh: &PerforatedMesh, region: VolumeRegion) -> SurfaceToVolume {
    let eps = mesh.epsilon.value();
    let (area_ystar, perim) = mesh.measures.coefficients();
    let lhs = eps * mesh.mesh.integrate_boundary(BoundaryTag::Hole, &v);
    let volume = match region {
        VolumeRegion::PerforatedCells => mesh.mesh.integrate_over(mesh.perforated_triangles(), &v),
        VolumeRegion::Whole => mesh.mesh.integrate(&v),
    };
    let rhs = if perim > 0.0 { perim / area_ystar * volume } else { 0.0 };
    SurfaceToVolume { lhs, rhs, residual: (lhs - rhs).abs() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn eps(n: u32) -> Epsilon {
        Epsilon::new(n).unwrap()
    }

    #[test]
    fn hole_counts() {
        let g = CellGeometry::new(0.25, 16);
        for (n, holes) in [(2, 0), (3, 1), (4, 4), (8, 36)] {
            let m = build_perforated_mesh(&g, eps(n), Rect::unit(), 0.08).unwrap();
            assert_eq!(m.num_holes(), holes);
            assert_eq!(m.mesh.count_tag(BoundaryTag::Hole), holes * 16);
        }
    }

    #[test]
    fn area_matches_polygon_arithmetic() {
        let g = CellGeometry::new(0.25, 64);
        let m = build_perforated_mesh(&g, eps(8), Rect::unit(), 0.05).unwrap();
        let expected = 1.0 - 36.0 / 64.0 * PI / 16.0;
        assert!((m.mesh.area() - expected).abs() / expected < 1e-3);
        let discrete = 1.0 - 36.0 / 64.0 * m.measures.discrete_area_hole;
        assert!((m.mesh.area() - discrete).abs() < 1e-12);
        for t in 0..m.mesh.triangles.len() {
            assert!(m.mesh.signed_area(t) > 0.0);
        }
    }

    #[test]
    fn mesh_is_conforming() {
        // every interior edge is shared by exactly two triangles
        let m = build_perforated_mesh(&CellGeometry::new(0.2, 16), eps(4), Rect::unit(), 0.1).unwrap();
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &m.mesh.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let single = count.values().filter(|&&c| c == 1).count();
        assert!(count.values().all(|&c| c <= 2));
        assert_eq!(single, m.mesh.boundary_edges.len());
        assert!((m.mesh.boundary_length(BoundaryTag::Outer) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn patches_are_affine_images() {
        let g = CellGeometry::new(0.25, 16);
        let m = build_perforated_mesh(&g, eps(4), Rect::unit(), 0.08).unwrap();
        for p in m.patches.iter().filter(|p| p.perforated) {
            for (r, &gv) in m.reference.mesh.vertices.iter().zip(&p.vertex_map) {
                let x = m.mesh.vertices[gv];
                let back = [x[0] * 4.0 - p.cell[0] as f64, x[1] * 4.0 - p.cell[1] as f64];
                assert!((back[0] - r[0]).abs() < 1e-12 && (back[1] - r[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn memory_guard() {
        let err = build_perforated_mesh_capped(&CellGeometry::new(0.25, 16), eps(8), Rect::unit(), 0.05, 100).unwrap_err();
        assert!(matches!(err, Error::MeshTooLarge { .. }));
        let bad = Rect { min: [0.0, 0.0], max: [1.1, 1.0] };
        assert!(build_perforated_mesh(&CellGeometry::new(0.25, 16), eps(4), bad, 0.08).is_err());
    }

    #[test]
    fn surface_to_volume_constant_is_exact() {
        let g = CellGeometry::new(0.25, 32);
        for n in [4, 8] {
            let m = build_perforated_mesh(&g, eps(n), Rect::unit(), 0.08).unwrap();
            let s = surface_to_volume_residual(|_| 1.0, &m);
            assert!(s.residual <= 1e-12, "{s:?}");
            let expected = m.num_holes() as f64 / f64::from(n * n) * m.measures.discrete_perim_hole;
            assert!((s.lhs - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn surface_to_volume_whole_domain_sees_boundary_layer() {
        let g = CellGeometry::new(0.25, 32);
        let m = build_perforated_mesh(&g, eps(4), Rect::unit(), 0.08).unwrap();
        let s = surface_to_volume_over(|_| 1.0, &m, VolumeRegion::Whole);
        let (ay, perim) = m.measures.coefficients();
        let layer_area = 12.0 / 16.0; // twelve hole-free cells of area 1/16
        assert!((s.residual - perim / ay * layer_area).abs() < 1e-12);
    }

    #[test]
    fn filled_mesh_covers_domain() {
        let m = build_perforated_mesh(&CellGeometry::new(0.25, 16), eps(4), Rect::unit(), 0.08).unwrap();
        let (full, n_dom) = m.with_holes_filled();
        assert_eq!(n_dom, m.mesh.triangles.len());
        assert!((full.area() - 1.0).abs() < 1e-12);
        assert!((0..full.triangles.len()).all(|t| full.signed_area(t) > 0.0));
    }

    #[test]
    fn rect_mesh_area() {
        let r = Rect { min: [0.0, 0.0], max: [2.0, 1.0] };
        let m = build_rect_mesh(r, 0.1).unwrap();
        assert!((m.area() - 2.0).abs() < 1e-12);
        assert!((m.boundary_length(BoundaryTag::Outer) - 6.0).abs() < 1e-12);
    }
}
