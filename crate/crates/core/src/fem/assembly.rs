use rayon::prelude::*;

use super::element::{edge_p2_values, p2_grads, p2_values, Element};
use super::quadrature::{bary_to_point, lerp, GAUSS3, TRI7};
use super::space::MixedSpace;
use super::sparse::SparseMatrix;
use crate::geometry::{dist, BoundaryTag, TriMesh};

/// Fourth-order tensor indexed `[i][j][k][h]`; acts on gradients as
/// `(C G)_{kh} = sum_{ij} C[i][j][k][h] G_{ij}`.
pub type Tensor4 = [[[[f64; 2]; 2]; 2]; 2];

/// Bilinear forms available through [`assemble`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FormKind {
    /// `nu * int grad u : grad v`
    Stiffness(f64),
    /// `int u . v`
    Mass,
    /// `int q div v` (pressure rows, velocity columns)
    Div,
    /// `int_{tag} u . v`
    BoundaryMass(BoundaryTag),
}

const CHUNK: usize = 2048;

type Local = [[f64; 12]; 12];

pub fn assemble(mesh: &TriMesh, space: &MixedSpace, kind: FormKind) -> SparseMatrix {
    match kind {
        FormKind::Stiffness(nu) => assemble_velocity_volume(mesh, space, move |el, m| {
            for (l, w) in &TRI7 {
                let g = p2_grads(*l, &el.grad_l);
                let wq = w * el.area * nu;
                for a in 0..6 {
                    for b in 0..6 {
                        let s = wq * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                        m[2 * a][2 * b] += s;
                        m[2 * a + 1][2 * b + 1] += s;
                    }
                }
            }
        }),
        FormKind::Mass => assemble_velocity_volume(mesh, space, |el, m| {
            for (l, w) in &TRI7 {
                let v = p2_values(*l);
                let wq = w * el.area;
                for a in 0..6 {
                    for b in 0..6 {
                        let s = wq * v[a] * v[b];
                        m[2 * a][2 * b] += s;
                        m[2 * a + 1][2 * b + 1] += s;
                    }
                }
            }
        }),
        FormKind::Div => assemble_divergence(mesh, space),
        FormKind::BoundaryMass(tag) => assemble_boundary_mass(mesh, space, tag),
    }
}

/// `int (C grad u) : grad v`.
pub fn assemble_effective(mesh: &TriMesh, space: &MixedSpace, c: &Tensor4) -> SparseMatrix {
    let c = *c;
    assemble_velocity_volume(mesh, space, move |el, m| {
        for (l, w) in &TRI7 {
            let g = p2_grads(*l, &el.grad_l);
            let wq = w * el.area;
            for a in 0..6 {
                for b in 0..6 {
                    for i in 0..2 {
                        for k in 0..2 {
                            let mut s = 0.0;
                            for j in 0..2 {
                                for h in 0..2 {
                                    s += c[i][j][k][h] * g[a][j] * g[b][h];
                                }
                            }
                            // row: test (b, k); column: trial (a, i)
                            m[2 * b + k][2 * a + i] += wq * s;
                        }
                    }
                }
            }
        }
    })
}

fn local_dofs(space: &MixedSpace, nodes: &[usize; 6]) -> [Option<usize>; 12] {
    let mut d = [None; 12];
    for (k, &n) in nodes.iter().enumerate() {
        d[2 * k] = space.velocity_dof(n, 0);
        d[2 * k + 1] = space.velocity_dof(n, 1);
    }
    d
}

fn assemble_velocity_volume<K>(mesh: &TriMesh, space: &MixedSpace, kernel: K) -> SparseMatrix
where
    K: Fn(&Element, &mut Local) + Sync,
{
    let (rp, ci) = space.velocity_pattern(mesh).clone();
    let n = space.n_velocity_dofs();
    let mut a = SparseMatrix::from_pattern(n, n, rp, ci);
    let nt = mesh.triangles.len();
    for start in (0..nt).step_by(CHUNK) {
        let end = (start + CHUNK).min(nt);
        // element matrices in parallel, scattered in triangle order (bit-reproducible)
        let locals: Vec<Local> = (start..end)
            .into_par_iter()
            .map(|t| {
                let mut m = [[0.0; 12]; 12];
                kernel(&Element::new(mesh, t), &mut m);
                m
            })
            .collect();
        for (t, m) in (start..end).zip(&locals) {
            let dofs = local_dofs(space, &space.topo.tri_nodes(mesh, t));
            for (r, row) in dofs.iter().zip(m) {
                let Some(r) = *r else { continue };
                for (c, v) in dofs.iter().zip(row) {
                    if let Some(c) = *c {
                        a.add_to(r, c, *v);
                    }
                }
            }
        }
    }
    a
}

fn assemble_divergence(mesh: &TriMesh, space: &MixedSpace) -> SparseMatrix {
    let (rp, ci) = space.divergence_pattern(mesh);
    let mut b = SparseMatrix::from_pattern(space.n_pressure_dofs(), space.n_velocity_dofs(), rp, ci);
    for t in 0..mesh.triangles.len() {
        let el = Element::new(mesh, t);
        let nodes = space.topo.tri_nodes(mesh, t);
        let dofs = local_dofs(space, &nodes);
        let mut m = [[0.0; 12]; 3];
        for (l, w) in &TRI7 {
            let g = p2_grads(*l, &el.grad_l);
            let wq = w * el.area;
            for (q, row) in m.iter_mut().enumerate() {
                for a in 0..6 {
                    row[2 * a] += wq * l[q] * g[a][0];
                    row[2 * a + 1] += wq * l[q] * g[a][1];
                }
            }
        }
        for (q, row) in m.iter().enumerate() {
            let r = space.pressure_dof(nodes[q]);
            for (c, v) in dofs.iter().zip(row) {
                if let Some(c) = *c {
                    b.add_to(r, c, *v);
                }
            }
        }
    }
    b
}

fn assemble_boundary_mass(mesh: &TriMesh, space: &MixedSpace, tag: BoundaryTag) -> SparseMatrix {
    let (rp, ci) = space.velocity_pattern(mesh).clone();
    let n = space.n_velocity_dofs();
    let mut mg = SparseMatrix::from_pattern(n, n, rp, ci);
    for e in mesh.boundary_edges.iter().filter(|e| e.tag == tag) {
        let [va, vb] = e.vertices;
        let len = dist(mesh.vertices[va], mesh.vertices[vb]);
        let nodes = space.topo.edge_nodes(va, vb);
        let mut m = [[0.0; 3]; 3];
        for &(s, w) in &GAUSS3 {
            let v = edge_p2_values(s);
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += w * len * v[i] * v[j];
                }
            }
        }
        for c in 0..2 {
            for i in 0..3 {
                let Some(r) = space.velocity_dof(nodes[i], c) else { continue };
                for j in 0..3 {
                    if let Some(col) = space.velocity_dof(nodes[j], c) {
                        mg.add_to(r, col, m[i][j]);
                    }
                }
            }
        }
    }
    mg
}

/// P1 pressure mass matrix (exact element formula).
pub fn assemble_pressure_mass(mesh: &TriMesh, space: &MixedSpace) -> SparseMatrix {
    let (rp, ci) = space.pressure_pattern(mesh);
    let n = space.n_pressure_dofs();
    let mut m = SparseMatrix::from_pattern(n, n, rp, ci);
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let area = mesh.signed_area(t);
        for (i, &a) in tri.iter().enumerate() {
            for (j, &b) in tri.iter().enumerate() {
                let v = if i == j { area / 6.0 } else { area / 12.0 };
                m.add_to(space.pressure_dof(a), space.pressure_dof(b), v);
            }
        }
    }
    m
}

/// `int f . phi` for every free velocity basis function.
pub fn load_vector<F: Fn([f64; 2]) -> [f64; 2] + Sync>(mesh: &TriMesh, space: &MixedSpace, f: F) -> Vec<f64> {
    let mut rhs = vec![0.0; space.n_velocity_dofs()];
    let nt = mesh.triangles.len();
    for start in (0..nt).step_by(CHUNK) {
        let end = (start + CHUNK).min(nt);
        let locals: Vec<[f64; 12]> = (start..end)
            .into_par_iter()
            .map(|t| {
                let el = Element::new(mesh, t);
                let mut loc = [0.0; 12];
                for (l, w) in &TRI7 {
                    let v = p2_values(*l);
                    let fx = f(bary_to_point(el.pts, *l));
                    let wq = w * el.area;
                    for a in 0..6 {
                        loc[2 * a] += wq * v[a] * fx[0];
                        loc[2 * a + 1] += wq * v[a] * fx[1];
                    }
                }
                loc
            })
            .collect();
        for (t, loc) in (start..end).zip(&locals) {
            let dofs = local_dofs(space, &space.topo.tri_nodes(mesh, t));
            for (d, v) in dofs.iter().zip(loc) {
                if let Some(d) = *d {
                    rhs[d] += v;
                }
            }
        }
    }
    rhs
}

/// `int_{edges} f . phi` over the listed boundary edges; `f` receives the edge index and the point.
pub fn boundary_load_vector<I, F>(mesh: &TriMesh, space: &MixedSpace, edges: I, mut f: F) -> Vec<f64>
where
    I: IntoIterator<Item = usize>,
    F: FnMut(usize, [f64; 2]) -> [f64; 2],
{
    let mut rhs = vec![0.0; space.n_velocity_dofs()];
    for k in edges {
        let [va, vb] = mesh.boundary_edges[k].vertices;
        let (pa, pb) = (mesh.vertices[va], mesh.vertices[vb]);
        let len = dist(pa, pb);
        let nodes = space.topo.edge_nodes(va, vb);
        for &(s, w) in &GAUSS3 {
            let v = edge_p2_values(s);
            let fx = f(k, lerp(pa, pb, s));
            for a in 0..3 {
                for c in 0..2 {
                    if let Some(d) = space.velocity_dof(nodes[a], c) {
                        rhs[d] += w * len * v[a] * fx[c];
                    }
                }
            }
        }
    }
    rhs
}

/// `int f psi` for every pressure basis function.
pub fn pressure_load<F: Fn([f64; 2]) -> f64>(mesh: &TriMesh, space: &MixedSpace, f: F) -> Vec<f64> {
    let mut rhs = vec![0.0; space.n_pressure_dofs()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let el = Element::new(mesh, t);
        for (l, w) in &TRI7 {
            let fx = f(bary_to_point(el.pts, *l));
            for q in 0..3 {
                rhs[space.pressure_dof(tri[q])] += w * el.area * l[q] * fx;
            }
        }
    }
    rhs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::space::{build_space, BcSpec};
    use crate::geometry::{build_cell_mesh, build_rect_mesh, CellGeometry, Rect};

    fn setup() -> (TriMesh, MixedSpace) {
        let cell = build_cell_mesh(&CellGeometry::new(0.25, 16), 0.08).unwrap();
        let s = build_space(&cell.mesh, &[], &BcSpec::new()).unwrap();
        (cell.mesh, s)
    }

    #[test]
    fn stiffness_kills_constants_and_is_symmetric() {
        let (mesh, s) = setup();
        let k = assemble(&mesh, &s, FormKind::Stiffness(1.3));
        assert!(k.symmetry_defect() <= 1e-12);
        let u = s.interpolate_velocity(&mesh, |_| [2.0, -1.0]);
        assert!(k.matvec(&u).iter().all(|v| v.abs() < 1e-11));
    }

    #[test]
    fn stiffness_patch_test() {
        let cell = build_cell_mesh(&CellGeometry::new(0.0, 8), 0.2).unwrap();
        let s = build_space(&cell.mesh, &[], &BcSpec::new()).unwrap();
        let nu = 0.7;
        let k = assemble(&cell.mesh, &s, FormKind::Stiffness(nu));
        let lam = [[0.3, -1.2], [0.5, 2.0]];
        let u = s.interpolate_velocity(&cell.mesh, |x| {
            [lam[0][0] * x[0] + lam[0][1] * x[1], lam[1][0] * x[0] + lam[1][1] * x[1]]
        });
        let frob: f64 = lam.iter().flatten().map(|v| v * v).sum();
        assert!((k.quad_form(&u) - nu * frob).abs() < 1e-10);
    }

    #[test]
    fn mass_total_is_twice_area() {
        let (mesh, s) = setup();
        let m = assemble(&mesh, &s, FormKind::Mass);
        assert!(m.symmetry_defect() <= 1e-12);
        let total: f64 = m.values().iter().sum();
        assert!((total - 2.0 * mesh.area()).abs() < 1e-10);
    }

    #[test]
    fn boundary_mass_measures_perimeter() {
        let (mesh, s) = setup();
        let mg = assemble(&mesh, &s, FormKind::BoundaryMass(BoundaryTag::Hole));
        assert!(mg.symmetry_defect() <= 1e-12);
        let ones = s.interpolate_velocity(&mesh, |_| [1.0, 0.0]);
        assert!((mg.quad_form(&ones) - mesh.boundary_length(BoundaryTag::Hole)).abs() < 1e-12);
    }

    #[test]
    fn divergence_of_linear_field() {
        let m = build_rect_mesh(Rect::unit(), 0.25).unwrap();
        let s = build_space(&m, &[], &BcSpec::new()).unwrap();
        let b = assemble(&m, &s, FormKind::Div);
        let u = s.interpolate_velocity(&m, |x| [3.0 * x[0], -x[1]]);
        let ones = vec![1.0; s.n_pressure_dofs()];
        // int div u = 2 over the unit square
        let total: f64 = b.matvec(&u).iter().zip(&ones).map(|(a, b)| a * b).sum();
        assert!((total - 2.0).abs() < 1e-12);
    }

    #[test]
    fn effective_with_identity_tensor_is_stiffness() {
        let (mesh, s) = setup();
        let nu = 1.7;
        let mut c = [[[[0.0; 2]; 2]; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                c[i][j][i][j] = nu;
            }
        }
        let ks = assemble_effective(&mesh, &s, &c);
        let k = assemble(&mesh, &s, FormKind::Stiffness(nu));
        let diff = SparseMatrix::linear_combination(&[(1.0, &ks), (-1.0, &k)]);
        assert!(diff.values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn load_vector_integrates_constant() {
        let (mesh, s) = setup();
        let f = load_vector(&mesh, &s, |_| [1.0, 2.0]);
        let ones_x = s.interpolate_velocity(&mesh, |_| [1.0, 0.0]);
        let v: f64 = f.iter().zip(&ones_x).map(|(a, b)| a * b).sum();
        assert!((v - mesh.area()).abs() < 1e-12);
        let mp = assemble_pressure_mass(&mesh, &s);
        assert!((mp.values().iter().sum::<f64>() - mesh.area()).abs() < 1e-12);
        let pl = pressure_load(&mesh, &s, |_| 1.0);
        assert!((pl.iter().sum::<f64>() - mesh.area()).abs() < 1e-12);
    }
}
