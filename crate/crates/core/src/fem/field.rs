//! Pointwise evaluation of P2/P1 fields and point location.

use super::element::{p2_grads, p2_values, Element};
use super::quadrature::{bary_to_point, TRI7};
use super::space::P2Topology;
use crate::geometry::TriMesh;

/// A P2 vector field given by raw nodal values (one entry per P2 node).
#[derive(Debug, Clone, Copy)]
pub struct VelocityField<'a> {
    pub mesh: &'a TriMesh,
    pub topo: &'a P2Topology,
    pub nodal: &'a [[f64; 2]],
}

impl<'a> VelocityField<'a> {
    pub fn new(mesh: &'a TriMesh, topo: &'a P2Topology, nodal: &'a [[f64; 2]]) -> Self {
        assert_eq!(nodal.len(), topo.n_nodes());
        Self { mesh, topo, nodal }
    }

    pub fn value(&self, t: usize, l: [f64; 3]) -> [f64; 2] {
        let nodes = self.topo.tri_nodes(self.mesh, t);
        let v = p2_values(l);
        let mut u = [0.0; 2];
        for (a, &n) in nodes.iter().enumerate() {
            u[0] += v[a] * self.nodal[n][0];
            u[1] += v[a] * self.nodal[n][1];
        }
        u
    }

    /// `g[k][h] = d u_k / d x_h`.
    pub fn gradient(&self, t: usize, el: &Element, l: [f64; 3]) -> [[f64; 2]; 2] {
        let nodes = self.topo.tri_nodes(self.mesh, t);
        let g = p2_grads(l, &el.grad_l);
        let mut out = [[0.0; 2]; 2];
        for (a, &n) in nodes.iter().enumerate() {
            for k in 0..2 {
                for h in 0..2 {
                    out[k][h] += self.nodal[n][k] * g[a][h];
                }
            }
        }
        out
    }

    /// `int f(x, u, grad u)` over the listed triangles (degree-5 rule).
    pub fn integrate_over<I, F>(&self, triangles: I, mut f: F) -> f64
    where
        I: IntoIterator<Item = usize>,
        F: FnMut([f64; 2], [f64; 2], [[f64; 2]; 2]) -> f64,
    {
        let mut total = 0.0;
        for t in triangles {
            let el = Element::new(self.mesh, t);
            for (l, w) in &TRI7 {
                let x = bary_to_point(el.pts, *l);
                total += w * el.area * f(x, self.value(t, *l), self.gradient(t, &el, *l));
            }
        }
        total
    }

    pub fn integrate<F>(&self, f: F) -> f64
    where
        F: FnMut([f64; 2], [f64; 2], [[f64; 2]; 2]) -> f64,
    {
        self.integrate_over(0..self.mesh.triangles.len(), f)
    }
}

/// P1 value of per-vertex data inside triangle `t`.
pub fn p1_value(mesh: &TriMesh, nodal: &[f64], t: usize, l: [f64; 3]) -> f64 {
    let [a, b, c] = mesh.triangles[t];
    l[0] * nodal[a] + l[1] * nodal[b] + l[2] * nodal[c]
}

/// Uniform bucket grid over the mesh bounding box.
#[derive(Debug, Clone)]
pub struct PointLocator {
    min: [f64; 2],
    cell: [f64; 2],
    dims: [usize; 2],
    buckets: Vec<Vec<usize>>,
}

impl PointLocator {
    pub fn new(mesh: &TriMesh) -> Self {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in &mesh.vertices {
            for c in 0..2 {
                min[c] = min[c].min(p[c]);
                max[c] = max[c].max(p[c]);
            }
        }
        let side = ((mesh.triangles.len() as f64).sqrt().ceil() as usize).max(1);
        let dims = [side, side];
        let cell = [((max[0] - min[0]) / side as f64).max(1e-300), ((max[1] - min[1]) / side as f64).max(1e-300)];
        let mut buckets = vec![Vec::new(); side * side];
        for t in 0..mesh.triangles.len() {
            let pts = mesh.triangle_points(t);
            let lo = [0, 1].map(|c| pts.iter().map(|p| p[c]).fold(f64::INFINITY, f64::min));
            let hi = [0, 1].map(|c| pts.iter().map(|p| p[c]).fold(f64::NEG_INFINITY, f64::max));
            let (i0, j0) = Self::index(min, cell, dims, lo);
            let (i1, j1) = Self::index(min, cell, dims, hi);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * side + i].push(t);
                }
            }
        }
        Self { min, cell, dims, buckets }
    }

    fn index(min: [f64; 2], cell: [f64; 2], dims: [usize; 2], x: [f64; 2]) -> (usize, usize) {
        let f = |c: usize| (((x[c] - min[c]) / cell[c]).floor().max(0.0) as usize).min(dims[c] - 1);
        (f(0), f(1))
    }

    /// First triangle (in index order) containing `x`, with barycentric coordinates.
    pub fn locate(&self, mesh: &TriMesh, x: [f64; 2]) -> Option<(usize, [f64; 3])> {
        let (i, j) = Self::index(self.min, self.cell, self.dims, x);
        self.buckets[j * self.dims[0] + i].iter().find_map(|&t| {
            let l = Element::new(mesh, t).barycentric(x);
            l.iter().all(|&v| v >= -1e-10).then_some((t, l))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::space::{build_space, BcSpec};
    use crate::geometry::{build_cell_mesh, CellGeometry};

    #[test]
    fn quadratic_field_is_reproduced() {
        let cell = build_cell_mesh(&CellGeometry::new(0.25, 16), 0.08).unwrap();
        let s = build_space(&cell.mesh, &[], &BcSpec::new()).unwrap();
        let f = |x: [f64; 2]| [x[0] * x[0] - x[1], x[0] * x[1]];
        let nodal = s.expand_velocity(&s.interpolate_velocity(&cell.mesh, f));
        let field = VelocityField::new(&cell.mesh, &s.topo, &nodal);
        let loc = PointLocator::new(&cell.mesh);
        for x in [[0.1, 0.1], [0.9, 0.3], [0.5, 0.05], [0.999, 0.999]] {
            let (t, l) = loc.locate(&cell.mesh, x).unwrap();
            let v = field.value(t, l);
            let e = f(x);
            assert!((v[0] - e[0]).abs() < 1e-12 && (v[1] - e[1]).abs() < 1e-12);
            let g = field.gradient(t, &Element::new(&cell.mesh, t), l);
            assert!((g[0][0] - 2.0 * x[0]).abs() < 1e-11 && (g[1][1] - x[0]).abs() < 1e-11);
        }
        // inside the hole: not located
        assert!(loc.locate(&cell.mesh, [0.5, 0.5]).is_none());
    }
}
