//! Affine triangle geometry and the quadratic Lagrange basis.

use crate::geometry::TriMesh;

#[derive(Debug, Clone, Copy)]
pub struct Element {
    pub pts: [[f64; 2]; 3],
    pub area: f64,
    /// Constant gradients of the barycentric coordinates.
    pub grad_l: [[f64; 2]; 3],
}

impl Element {
    #[inline]
    pub fn new(mesh: &TriMesh, t: usize) -> Self {
        let p = mesh.triangle_points(t);
        let two_a = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
        let inv = 1.0 / two_a;
        let grad_l = [
            [(p[1][1] - p[2][1]) * inv, (p[2][0] - p[1][0]) * inv],
            [(p[2][1] - p[0][1]) * inv, (p[0][0] - p[2][0]) * inv],
            [(p[0][1] - p[1][1]) * inv, (p[1][0] - p[0][0]) * inv],
        ];
        Self { pts: p, area: 0.5 * two_a, grad_l }
    }

    /// Barycentric coordinates of `x` (may be outside `[0,1]` if `x` is outside).
    pub fn barycentric(&self, x: [f64; 2]) -> [f64; 3] {
        let p0 = self.pts[0];
        let d = [x[0] - p0[0], x[1] - p0[1]];
        let l1 = self.grad_l[1][0] * d[0] + self.grad_l[1][1] * d[1];
        let l2 = self.grad_l[2][0] * d[0] + self.grad_l[2][1] * d[1];
        [1.0 - l1 - l2, l1, l2]
    }
}

/// P2 shape functions: vertices, then midpoints of edges 01, 12, 20.
#[inline]
pub fn p2_values(l: [f64; 3]) -> [f64; 6] {
    [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[0] * l[1],
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
    ]
}

#[inline]
pub fn p2_grads(l: [f64; 3], g: &[[f64; 2]; 3]) -> [[f64; 2]; 6] {
    let v = |i: usize| {
        let s = 4.0 * l[i] - 1.0;
        [s * g[i][0], s * g[i][1]]
    };
    let e = |i: usize, j: usize| {
        [4.0 * (l[i] * g[j][0] + l[j] * g[i][0]), 4.0 * (l[i] * g[j][1] + l[j] * g[i][1])]
    };
    [v(0), v(1), v(2), e(0, 1), e(1, 2), e(2, 0)]
}

/// Quadratic basis along an edge at parameter `s`: end `a`, end `b`, midpoint.
#[inline]
pub fn edge_p2_values(s: f64) -> [f64; 3] {
    [(1.0 - s) * (1.0 - 2.0 * s), s * (2.0 * s - 1.0), 4.0 * s * (1.0 - s)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_of_unity_and_nodal_property() {
        for l in [[0.2, 0.3, 0.5], [1.0, 0.0, 0.0], [0.5, 0.5, 0.0]] {
            let s: f64 = p2_values(l).iter().sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
        assert_eq!(p2_values([0.5, 0.5, 0.0]), [0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let g = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
        let grads = p2_grads([0.2, 0.3, 0.5], &g);
        for c in 0..2 {
            assert!(grads.iter().map(|gr| gr[c]).sum::<f64>().abs() < 1e-14);
        }
    }

    #[test]
    fn barycentric_round_trip() {
        let mesh = TriMesh { vertices: vec![[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]], triangles: vec![[0, 1, 2]], boundary_edges: vec![] };
        let e = Element::new(&mesh, 0);
        assert!((e.area - 1.0).abs() < 1e-15);
        let l = e.barycentric([0.5, 0.25]);
        assert!((l[0] - 0.5).abs() < 1e-15 && (l[1] - 0.25).abs() < 1e-15 && (l[2] - 0.25).abs() < 1e-15);
    }
}
