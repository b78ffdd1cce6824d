use std::collections::HashMap;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::geometry::{BoundaryTag, PeriodicPair, TriMesh};

/// Edge numbering of a triangulation, for the quadratic midpoint nodes.
///
/// Scalar P2 nodes are the vertices `0..n_vertices` followed by one node per edge.
#[derive(Debug, Clone)]
pub struct P2Topology {
    pub n_vertices: usize,
    pub edges: Vec<[usize; 2]>,
    /// `tri_edges[t][k]` joins local vertices `k` and `k+1 mod 3`.
    pub tri_edges: Vec<[usize; 3]>,
    edge_index: HashMap<(usize, usize), usize>,
}

impl P2Topology {
    pub fn new(mesh: &TriMesh) -> Self {
        let mut edges = Vec::with_capacity(mesh.triangles.len() * 3 / 2 + mesh.boundary_edges.len());
        let mut edge_index = HashMap::with_capacity(edges.capacity());
        let tri_edges = mesh
            .triangles
            .iter()
            .map(|tri| {
                [0, 1, 2].map(|k| {
                    let (a, b) = (tri[k], tri[(k + 1) % 3]);
                    *edge_index.entry((a.min(b), a.max(b))).or_insert_with(|| {
                        edges.push([a.min(b), a.max(b)]);
                        edges.len() - 1
                    })
                })
            })
            .collect();
        Self { n_vertices: mesh.vertices.len(), edges, tri_edges, edge_index }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_vertices + self.edges.len()
    }

    pub fn edge_id(&self, a: usize, b: usize) -> Option<usize> {
        self.edge_index.get(&(a.min(b), a.max(b))).copied()
    }

    /// Local P2 nodes of a triangle: three vertices then the three edge midpoints.
    #[inline]
    pub fn tri_nodes(&self, mesh: &TriMesh, t: usize) -> [usize; 6] {
        let [a, b, c] = mesh.triangles[t];
        let [e0, e1, e2] = self.tri_edges[t];
        let nv = self.n_vertices;
        [a, b, c, nv + e0, nv + e1, nv + e2]
    }

    /// Nodes of a boundary edge: its two vertices then its midpoint.
    pub fn edge_nodes(&self, a: usize, b: usize) -> [usize; 3] {
        let e = self.edge_id(a, b).expect("boundary edge belongs to the mesh");
        [a, b, self.n_vertices + e]
    }

    pub fn node_point(&self, mesh: &TriMesh, node: usize) -> [f64; 2] {
        if node < self.n_vertices {
            mesh.vertices[node]
        } else {
            let [a, b] = self.edges[node - self.n_vertices];
            let (p, q) = (mesh.vertices[a], mesh.vertices[b]);
            [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]
        }
    }
}

/// Boundary condition on one tagged part of the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bc {
    DirichletZero,
    Periodic,
    Natural,
}

/// Boundary conditions per tag; untagged parts default to natural.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BcSpec {
    entries: Vec<(BoundaryTag, Bc)>,
}

impl BcSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, tag: BoundaryTag, bc: Bc) -> Self {
        self.entries.push((tag, bc));
        self
    }

    /// Periodic cell edges, natural condition on the hole.
    pub fn periodic_cell() -> Self {
        Self::new()
            .with(BoundaryTag::CellLeft, Bc::Periodic)
            .with(BoundaryTag::CellRight, Bc::Periodic)
            .with(BoundaryTag::CellBottom, Bc::Periodic)
            .with(BoundaryTag::CellTop, Bc::Periodic)
            .with(BoundaryTag::Hole, Bc::Natural)
    }

    /// No-slip on the outer boundary, natural on holes.
    pub fn dirichlet_outer() -> Self {
        Self::new().with(BoundaryTag::Outer, Bc::DirichletZero).with(BoundaryTag::Hole, Bc::Natural)
    }

    pub fn get(&self, tag: BoundaryTag) -> Bc {
        self.entries.iter().find(|(t, _)| *t == tag).map_or(Bc::Natural, |e| e.1)
    }

    fn validate(&self) -> Result<()> {
        for (i, &(tag, bc)) in self.entries.iter().enumerate() {
            if let Some(&(_, other)) = self.entries[..i].iter().find(|(t, _)| *t == tag) {
                if other != bc {
                    return Err(Error::InconsistentBoundary {
                        tag,
                        reason: format!("assigned both {other:?} and {bc:?}"),
                    });
                }
            }
            if bc == Bc::Periodic {
                let partner = match tag {
                    BoundaryTag::CellLeft => BoundaryTag::CellRight,
                    BoundaryTag::CellRight => BoundaryTag::CellLeft,
                    BoundaryTag::CellBottom => BoundaryTag::CellTop,
                    BoundaryTag::CellTop => BoundaryTag::CellBottom,
                    _ => {
                        return Err(Error::InconsistentBoundary { tag, reason: "only cell edges can be periodic".into() })
                    }
                };
                if self.get(partner) != Bc::Periodic {
                    return Err(Error::InconsistentBoundary {
                        tag,
                        reason: format!("periodic but the opposite edge {partner:?} is {:?}", self.get(partner)),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Taylor-Hood P2/P1 space with periodic identification and Dirichlet elimination.
///
/// Velocity dof of (node, component) is `2 * class + component`.
#[derive(Debug)]
pub struct MixedSpace {
    pub topo: P2Topology,
    vel_class: Vec<Option<usize>>,
    n_vel_classes: usize,
    pre_class: Vec<usize>,
    n_pre: usize,
    bc: BcSpec,
    n_triangles: usize,
    vel_pattern: OnceLock<(Vec<usize>, Vec<usize>)>,
}

impl Clone for MixedSpace {
    fn clone(&self) -> Self {
        Self {
            topo: self.topo.clone(),
            vel_class: self.vel_class.clone(),
            n_vel_classes: self.n_vel_classes,
            pre_class: self.pre_class.clone(),
            n_pre: self.n_pre,
            bc: self.bc.clone(),
            n_triangles: self.n_triangles,
            vel_pattern: OnceLock::new(),
        }
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    /// Keeps the smaller index as representative.
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

pub fn build_space(mesh: &TriMesh, periodic: &[PeriodicPair], bc: &BcSpec) -> Result<MixedSpace> {
    bc.validate()?;
    let topo = P2Topology::new(mesh);
    let nv = topo.n_vertices;
    let mut vel = UnionFind::new(topo.n_nodes());
    let mut pre = UnionFind::new(nv);

    for (axis, tag) in [(0, BoundaryTag::CellLeft), (1, BoundaryTag::CellBottom)] {
        if bc.get(tag) != Bc::Periodic {
            continue;
        }
        let partner: HashMap<usize, usize> =
            periodic.iter().filter(|p| p.axis == axis).map(|p| (p.a, p.b)).collect();
        if partner.is_empty() {
            return Err(Error::InconsistentBoundary { tag, reason: "periodic condition without periodic pairs".into() });
        }
        for (&a, &b) in &partner {
            vel.union(a, b);
            pre.union(a, b);
        }
        for e in mesh.boundary_edges.iter().filter(|e| e.tag == tag) {
            let [a, b] = e.vertices;
            let (pa, pb) = match (partner.get(&a), partner.get(&b)) {
                (Some(&pa), Some(&pb)) => (pa, pb),
                _ => return Err(Error::InconsistentBoundary { tag, reason: format!("edge ({a}, {b}) has no periodic image") }),
            };
            let (e0, e1) = (topo.edge_id(a, b), topo.edge_id(pa, pb));
            match (e0, e1) {
                (Some(e0), Some(e1)) => vel.union(nv + e0, nv + e1),
                _ => return Err(Error::InconsistentBoundary { tag, reason: format!("edge ({a}, {b}) has no periodic image") }),
            }
        }
    }

    let mut dirichlet = vec![false; topo.n_nodes()];
    for e in &mesh.boundary_edges {
        if bc.get(e.tag) == Bc::DirichletZero {
            for node in topo.edge_nodes(e.vertices[0], e.vertices[1]) {
                dirichlet[node] = true;
            }
        }
    }
    let mut root_dirichlet = vec![false; topo.n_nodes()];
    for (node, &d) in dirichlet.iter().enumerate() {
        if d {
            let r = vel.find(node);
            root_dirichlet[r] = true;
        }
    }
    let mut root_class: Vec<Option<usize>> = vec![None; topo.n_nodes()];
    let mut vel_class = vec![None; topo.n_nodes()];
    let mut n_vel_classes = 0;
    for node in 0..topo.n_nodes() {
        let r = vel.find(node);
        if root_dirichlet[r] {
            continue;
        }
        vel_class[node] = Some(*root_class[r].get_or_insert_with(|| {
            n_vel_classes += 1;
            n_vel_classes - 1
        }));
    }
    let mut pre_root = vec![usize::MAX; nv];
    let mut pre_class = vec![0; nv];
    let mut n_pre = 0;
    for v in 0..nv {
        let r = pre.find(v);
        if pre_root[r] == usize::MAX {
            pre_root[r] = n_pre;
            n_pre += 1;
        }
        pre_class[v] = pre_root[r];
    }
    Ok(MixedSpace {
        topo,
        vel_class,
        n_vel_classes,
        pre_class,
        n_pre,
        bc: bc.clone(),
        n_triangles: mesh.triangles.len(),
        vel_pattern: OnceLock::new(),
    })
}

impl MixedSpace {
    pub fn n_velocity_dofs(&self) -> usize {
        2 * self.n_vel_classes
    }

    pub fn n_velocity_classes(&self) -> usize {
        self.n_vel_classes
    }

    pub fn n_pressure_dofs(&self) -> usize {
        self.n_pre
    }

    pub fn bc(&self) -> &BcSpec {
        &self.bc
    }

    pub fn n_triangles(&self) -> usize {
        self.n_triangles
    }

    #[inline]
    pub fn node_class(&self, node: usize) -> Option<usize> {
        self.vel_class[node]
    }

    #[inline]
    pub fn velocity_dof(&self, node: usize, comp: usize) -> Option<usize> {
        self.vel_class[node].map(|c| 2 * c + comp)
    }

    #[inline]
    pub fn pressure_dof(&self, vertex: usize) -> usize {
        self.pre_class[vertex]
    }

    /// Removes the class of `node` (both components fixed to zero).
    pub fn pin_node(&mut self, node: usize) {
        let Some(c) = self.vel_class[node] else { return };
        for cls in self.vel_class.iter_mut() {
            *cls = match *cls {
                Some(k) if k == c => None,
                Some(k) if k > c => Some(k - 1),
                other => other,
            };
        }
        self.n_vel_classes -= 1;
        self.vel_pattern = OnceLock::new();
    }

    /// Free velocity dofs of nodes lying on edges with the given tag.
    pub fn boundary_dofs(&self, mesh: &TriMesh, tag: BoundaryTag) -> Vec<usize> {
        let mut dofs: Vec<usize> = mesh
            .boundary_edges
            .iter()
            .filter(|e| e.tag == tag)
            .flat_map(|e| self.topo.edge_nodes(e.vertices[0], e.vertices[1]))
            .filter_map(|n| self.vel_class[n])
            .flat_map(|c| [2 * c, 2 * c + 1])
            .collect();
        dofs.sort_unstable();
        dofs.dedup();
        dofs
    }

    /// Nodal values (per raw P2 node) from a free velocity vector; eliminated nodes are zero.
    pub fn expand_velocity(&self, u: &[f64]) -> Vec<[f64; 2]> {
        assert_eq!(u.len(), self.n_velocity_dofs());
        self.vel_class.iter().map(|c| c.map_or([0.0, 0.0], |c| [u[2 * c], u[2 * c + 1]])).collect()
    }

    pub fn expand_pressure(&self, p: &[f64]) -> Vec<f64> {
        assert_eq!(p.len(), self.n_pre);
        self.pre_class.iter().map(|&c| p[c]).collect()
    }

    /// Free vector from nodal values; each class takes the value of its first node.
    pub fn restrict_velocity(&self, nodal: &[[f64; 2]]) -> Vec<f64> {
        let mut u = vec![0.0; self.n_velocity_dofs()];
        let mut seen = vec![false; self.n_vel_classes];
        for (node, c) in self.vel_class.iter().enumerate() {
            if let Some(c) = *c {
                if !seen[c] {
                    seen[c] = true;
                    u[2 * c] = nodal[node][0];
                    u[2 * c + 1] = nodal[node][1];
                }
            }
        }
        u
    }

    pub fn interpolate_velocity<F: Fn([f64; 2]) -> [f64; 2]>(&self, mesh: &TriMesh, f: F) -> Vec<f64> {
        let nodal: Vec<[f64; 2]> = (0..self.topo.n_nodes()).map(|n| f(self.topo.node_point(mesh, n))).collect();
        self.restrict_velocity(&nodal)
    }

    pub fn interpolate_pressure<F: Fn([f64; 2]) -> f64>(&self, mesh: &TriMesh, f: F) -> Vec<f64> {
        let mut p = vec![0.0; self.n_pre];
        let mut seen = vec![false; self.n_pre];
        for (v, &c) in self.pre_class.iter().enumerate() {
            if !seen[c] {
                seen[c] = true;
                p[c] = f(mesh.vertices[v]);
            }
        }
        p
    }

    /// Scalar sparsity pattern on velocity classes, expanded to 2x2 blocks.
    pub(crate) fn velocity_pattern(&self, mesh: &TriMesh) -> &(Vec<usize>, Vec<usize>) {
        self.vel_pattern.get_or_init(|| {
            let n = self.n_vel_classes as u64;
            let mut pairs: Vec<u64> = Vec::with_capacity(36 * mesh.triangles.len());
            for t in 0..mesh.triangles.len() {
                let cls: Vec<u64> =
                    self.topo.tri_nodes(mesh, t).iter().filter_map(|&nd| self.vel_class[nd].map(|c| c as u64)).collect();
                for &a in &cls {
                    for &b in &cls {
                        pairs.push(a * n + b);
                    }
                }
            }
            pairs.sort_unstable();
            pairs.dedup();
            expand_pattern(&pairs, self.n_vel_classes, n, 2, 2)
        })
    }

    /// Pattern of the pressure-by-velocity coupling.
    pub(crate) fn divergence_pattern(&self, mesh: &TriMesh) -> (Vec<usize>, Vec<usize>) {
        let n = self.n_vel_classes as u64;
        let mut pairs: Vec<u64> = Vec::with_capacity(18 * mesh.triangles.len());
        for t in 0..mesh.triangles.len() {
            let nodes = self.topo.tri_nodes(mesh, t);
            for &v in &nodes[..3] {
                let q = self.pre_class[v] as u64;
                for &nd in &nodes {
                    if let Some(c) = self.vel_class[nd] {
                        pairs.push(q * n + c as u64);
                    }
                }
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        expand_pattern(&pairs, self.n_pre, n, 1, 2)
    }

    pub(crate) fn pressure_pattern(&self, mesh: &TriMesh) -> (Vec<usize>, Vec<usize>) {
        let n = self.n_pre as u64;
        let mut pairs: Vec<u64> = Vec::with_capacity(9 * mesh.triangles.len());
        for tri in &mesh.triangles {
            for &a in tri {
                for &b in tri {
                    pairs.push(self.pre_class[a] as u64 * n + self.pre_class[b] as u64);
                }
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        expand_pattern(&pairs, self.n_pre, n, 1, 1)
    }
}

/// Expands a sorted class-pair list `(row * ncls + col)` into a CSR pattern
/// with `rb x cb` blocks per pair.
fn expand_pattern(pairs: &[u64], nrow_cls: usize, ncol_cls: u64, rb: usize, cb: usize) -> (Vec<usize>, Vec<usize>) {
    let mut row_ptr = vec![0usize; nrow_cls * rb + 1];
    let mut col_idx = Vec::with_capacity(pairs.len() * rb * cb);
    let mut k = 0;
    for r in 0..nrow_cls {
        let start = k;
        while k < pairs.len() && (pairs[k] / ncol_cls) as usize == r {
            k += 1;
        }
        for sub in 0..rb {
            for &p in &pairs[start..k] {
                let c = (p % ncol_cls) as usize;
                for cc in 0..cb {
                    col_idx.push(cb * c + cc);
                }
            }
            row_ptr[rb * r + sub + 1] = col_idx.len();
        }
    }
    (row_ptr, col_idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_cell_mesh, build_rect_mesh, CellGeometry, Rect};

    #[test]
    fn periodic_counts_without_hole() {
        let cell = build_cell_mesh(&CellGeometry::new(0.0, 8), 0.24).unwrap(); // 6x6 grid
        assert_eq!(cell.grid_n, 6);
        let s = build_space(&cell.mesh, &cell.periodic_pairs, &BcSpec::periodic_cell()).unwrap();
        // distinct P2 nodes on a 6x6 periodic grid = (2*6)^2
        assert_eq!(s.n_velocity_dofs(), 2 * 144);
        assert_eq!(s.n_pressure_dofs(), 36);
    }

    #[test]
    fn natural_rect_keeps_all_nodes() {
        let m = build_rect_mesh(Rect::unit(), 0.25).unwrap();
        let s = build_space(&m, &[], &BcSpec::new()).unwrap();
        assert_eq!(s.n_velocity_dofs(), 2 * 81);
    }

    #[test]
    fn dirichlet_removes_boundary_nodes() {
        let m = build_rect_mesh(Rect::unit(), 0.25).unwrap();
        let s = build_space(&m, &[], &BcSpec::dirichlet_outer()).unwrap();
        // interior P2 nodes of a 4x4 grid: 7x7
        assert_eq!(s.n_velocity_dofs(), 2 * 49);
        assert!(s.boundary_dofs(&m, BoundaryTag::Outer).is_empty());
    }

    #[test]
    fn hole_dofs_are_kept() {
        let cell = build_cell_mesh(&CellGeometry::new(0.25, 16), 0.08).unwrap();
        let s = build_space(&cell.mesh, &cell.periodic_pairs, &BcSpec::periodic_cell()).unwrap();
        // 16 polygon vertices plus 16 edge midpoints, two components each
        assert_eq!(s.boundary_dofs(&cell.mesh, BoundaryTag::Hole).len(), 64);
    }

    #[test]
    fn inconsistent_specs_rejected() {
        let cell = build_cell_mesh(&CellGeometry::new(0.25, 16), 0.08).unwrap();
        let both = BcSpec::periodic_cell().with(BoundaryTag::CellLeft, Bc::DirichletZero);
        assert!(matches!(
            build_space(&cell.mesh, &cell.periodic_pairs, &both),
            Err(Error::InconsistentBoundary { .. })
        ));
        let half = BcSpec::new().with(BoundaryTag::CellLeft, Bc::Periodic);
        assert!(build_space(&cell.mesh, &cell.periodic_pairs, &half).is_err());
        let hole = BcSpec::new().with(BoundaryTag::Hole, Bc::Periodic);
        assert!(build_space(&cell.mesh, &cell.periodic_pairs, &hole).is_err());
    }

    #[test]
    fn pinning_renumbers() {
        let cell = build_cell_mesh(&CellGeometry::new(0.25, 16), 0.08).unwrap();
        let mut s = build_space(&cell.mesh, &cell.periodic_pairs, &BcSpec::periodic_cell()).unwrap();
        let n = s.n_velocity_dofs();
        s.pin_node(0);
        assert_eq!(s.n_velocity_dofs(), n - 2);
        assert_eq!(s.node_class(0), None);
        let u: Vec<f64> = (0..s.n_velocity_dofs()).map(|k| k as f64).collect();
        assert_eq!(s.restrict_velocity(&s.expand_velocity(&u)), u);
    }
}
