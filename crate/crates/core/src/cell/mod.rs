//! Periodic Stokes cell problems, the effective tensor and the correctors.
//!
//! For a constant gradient `Lambda` the cell problem seeks a periodic `w` and a
//! pressure `q` on `Y*` with
//! `nu int (Lambda + grad w) : grad phi - int q div phi = 0` and
//! `int psi div(Lambda y + w) = 0`, natural condition on the hole.
//! The hole's natural condition fixes the pressure constant; `w` is fixed up to
//! a constant vector, which is removed by pinning one node and shifting to mean zero.

use faer::Mat;
use nalgebra::{Matrix4, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{
    assemble, build_space, pressure_load, BcSpec, Element, FormKind, MixedSpace, ResidualReport, SaddleFactorization,
    SaddleSystem, SolverConfig, Tensor4, VelocityField,
};
use crate::fem::quadrature::TRI7;
use crate::geometry::{CellMesh, TriMesh};

pub type Matrix2 = [[f64; 2]; 2];

/// The unit matrix `e_ij`.
pub fn unit_matrix(i: usize, j: usize) -> Matrix2 {
    let mut m = [[0.0; 2]; 2];
    m[i][j] = 1.0;
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CellConfig {
    pub nu: f64,
    pub solver: SolverConfig,
}

impl Default for CellConfig {
    fn default() -> Self {
        Self { nu: 1.0, solver: SolverConfig::default() }
    }
}

/// Cheap identity of a mesh, used to refuse mixing solutions from different meshes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeshId(u64);

impl MeshId {
    pub fn of(mesh: &TriMesh) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |x: u64| {
            h ^= x;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        mix(mesh.vertices.len() as u64);
        mix(mesh.triangles.len() as u64);
        for p in &mesh.vertices {
            mix(p[0].to_bits());
            mix(p[1].to_bits());
        }
        for t in &mesh.triangles {
            t.iter().for_each(|&v| mix(v as u64));
        }
        Self(h)
    }
}

#[derive(Debug, Clone)]
pub struct CellSolution {
    pub lambda: Matrix2,
    pub nu: f64,
    /// Raw P2 nodal values of `w` (periodic nodes carry equal values).
    pub w: Vec<[f64; 2]>,
    /// Per-vertex pressure.
    pub q: Vec<f64>,
    pub report: ResidualReport,
    pub mesh_id: MeshId,
}

/// Assembled and factorized cell problem, reusable for any number of `Lambda`.
#[derive(Debug)]
pub struct CellProblem<'a> {
    mesh: &'a CellMesh,
    space: MixedSpace,
    factor: SaddleFactorization,
    psi_integrals: Vec<f64>,
    nu: f64,
    mesh_id: MeshId,
}

impl<'a> CellProblem<'a> {
    pub fn new(mesh: &'a CellMesh, cfg: &CellConfig) -> Result<Self> {
        if !(cfg.nu > 0.0 && cfg.nu.is_finite()) {
            return Err(Error::Config(format!("viscosity must be positive, got {}", cfg.nu)));
        }
        let m = &mesh.mesh;
        let mut space = build_space(m, &mesh.periodic_pairs, &BcSpec::periodic_cell())?;
        // velocity is periodic with a natural hole condition: constants are in the kernel
        space.pin_node(0);
        let a = assemble(m, &space, FormKind::Stiffness(cfg.nu));
        let b = assemble(m, &space, FormKind::Div);
        let psi_integrals = pressure_load(m, &space, |_| 1.0);
        let mean_weights = (!mesh.geometry.has_hole()).then(|| psi_integrals.clone());
        let factor = SaddleFactorization::new(SaddleSystem { a, b: Some(b), mean_weights }, &cfg.solver)?;
        Ok(Self { mesh, space, factor, psi_integrals, nu: cfg.nu, mesh_id: MeshId::of(m) })
    }

    pub fn space(&self) -> &MixedSpace {
        &self.space
    }

    /// Solves for all `lambdas` with one factorization.
    pub fn solve_many(&self, lambdas: &[Matrix2]) -> Result<Vec<CellSolution>> {
        let has_hole = self.mesh.geometry.has_hole();
        for lam in lambdas {
            let tr = lam[0][0] + lam[1][1];
            let scale = lam.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            if !has_hole && tr.abs() > 1e-14 * scale.max(1.0) {
                return Err(Error::IncompatibleCellProblem(format!(
                    "without a hole div(Lambda y + w) = 0 forces trace(Lambda) = 0, got {tr}"
                )));
            }
        }
        let m = &self.mesh.mesh;
        let (n, np) = (self.space.n_velocity_dofs(), self.space.n_pressure_dofs());
        let mut f = Mat::<f64>::zeros(n, lambdas.len());
        let mut g = Mat::<f64>::zeros(np, lambdas.len());
        for (s, lam) in lambdas.iter().enumerate() {
            // f = -nu int Lambda : grad phi, g = -tr(Lambda) int psi
            for t in 0..m.triangles.len() {
                let el = Element::new(m, t);
                let nodes = self.space.topo.tri_nodes(m, t);
                for (l, w) in &TRI7 {
                    let grads = crate::fem::p2_grads(*l, &el.grad_l);
                    for (a, &node) in nodes.iter().enumerate() {
                        for k in 0..2 {
                            if let Some(d) = self.space.velocity_dof(node, k) {
                                let lg = lam[k][0] * grads[a][0] + lam[k][1] * grads[a][1];
                                f[(d, s)] -= self.nu * w * el.area * lg;
                            }
                        }
                    }
                }
            }
            let tr = lam[0][0] + lam[1][1];
            for (q, v) in self.psi_integrals.iter().enumerate() {
                g[(q, s)] = -tr * v;
            }
        }
        let (u, p, reports) = self.factor.solve_many(&f, &g)?;
        let area = m.area();
        let out = lambdas
            .iter()
            .enumerate()
            .map(|(s, lam)| {
                let us: Vec<f64> = u.col(s).iter().copied().collect();
                let ps: Vec<f64> = p.col(s).iter().copied().collect();
                let mut w = self.space.expand_velocity(&us);
                let field = VelocityField::new(m, &self.space.topo, &w);
                let mean = [0, 1].map(|c| field.integrate(|_, u, _| u[c]) / area);
                w.iter_mut().for_each(|v| {
                    v[0] -= mean[0];
                    v[1] -= mean[1];
                });
                CellSolution {
                    lambda: *lam,
                    nu: self.nu,
                    w,
                    q: self.space.expand_pressure(&ps),
                    report: reports[s],
                    mesh_id: self.mesh_id,
                }
            })
            .collect();
        Ok(out)
    }
}

pub fn solve_cell(lambda: Matrix2, mesh: &CellMesh, cfg: &CellConfig) -> Result<CellSolution> {
    Ok(CellProblem::new(mesh, cfg)?.solve_many(&[lambda])?.remove(0))
}

/// Solutions for `e_11, e_12, e_21, e_22` (index `2i + j`).
pub fn solve_cell_basis(mesh: &CellMesh, cfg: &CellConfig) -> Result<Vec<CellSolution>> {
    let lambdas: Vec<Matrix2> = (0..4).map(|a| unit_matrix(a / 2, a % 2)).collect();
    CellProblem::new(mesh, cfg)?.solve_many(&lambdas)
}

/// Residual diagnostics of one cell solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellResiduals {
    /// `max_psi |int psi div(Lambda y + w)|` over periodic P1 tests.
    pub divergence: f64,
    /// `max |w(a) - w(b)|` over periodic node pairs.
    pub periodicity: f64,
    /// `|int w| / |Y*|`.
    pub mean: f64,
    /// Algebraic block residual reported by the solver.
    pub solver: f64,
}

pub fn cell_residuals(sol: &CellSolution, mesh: &CellMesh) -> Result<CellResiduals> {
    check_mesh(std::slice::from_ref(sol), mesh)?;
    let m = &mesh.mesh;
    let space = build_space(m, &mesh.periodic_pairs, &BcSpec::periodic_cell())?;
    let field = VelocityField::new(m, &space.topo, &sol.w);
    let tr = sol.lambda[0][0] + sol.lambda[1][1];
    let mut div = vec![0.0; space.n_pressure_dofs()];
    for t in 0..m.triangles.len() {
        let el = Element::new(m, t);
        for (l, w) in &TRI7 {
            let g = field.gradient(t, &el, *l);
            let d = tr + g[0][0] + g[1][1];
            for q in 0..3 {
                div[space.pressure_dof(m.triangles[t][q])] += w * el.area * l[q] * d;
            }
        }
    }
    let divergence = div.iter().fold(0.0f64, |a, v| a.max(v.abs()));

    let mut periodicity: f64 = 0.0;
    let nv = space.topo.n_vertices;
    let mut check = |a: usize, b: usize| {
        periodicity = periodicity.max((sol.w[a][0] - sol.w[b][0]).abs()).max((sol.w[a][1] - sol.w[b][1]).abs());
    };
    for p in &mesh.periodic_pairs {
        check(p.a, p.b);
    }
    // edge midpoints: pair edges whose endpoints are periodic images
    for e in &m.boundary_edges {
        let [a, b] = e.vertices;
        if let (Some(pa), Some(pb)) = (mesh.partner(a, 0).or(mesh.partner(a, 1)), mesh.partner(b, 0).or(mesh.partner(b, 1))) {
            if let (Some(e0), Some(e1)) = (space.topo.edge_id(a, b), space.topo.edge_id(pa, pb)) {
                check(nv + e0, nv + e1);
            }
        }
    }
    let area = m.area();
    let mean = [0, 1].map(|c| field.integrate(|_, u, _| u[c]).abs() / area);
    Ok(CellResiduals { divergence, periodicity, mean: mean[0].max(mean[1]), solver: sol.report.relative })
}

fn check_mesh(sols: &[CellSolution], mesh: &CellMesh) -> Result<()> {
    let id = MeshId::of(&mesh.mesh);
    if sols.iter().any(|s| s.mesh_id != id) {
        return Err(Error::Mismatch("cell solutions were computed on a different mesh".into()));
    }
    Ok(())
}

fn check_basis(sols: &[CellSolution], mesh: &CellMesh) -> Result<f64> {
    if sols.len() != 4 {
        return Err(Error::Mismatch(format!("need 4 basis solutions, got {}", sols.len())));
    }
    for (a, s) in sols.iter().enumerate() {
        if s.lambda != unit_matrix(a / 2, a % 2) {
            return Err(Error::Mismatch(format!("solution {a} is not for e_{}{}", a / 2 + 1, a % 2 + 1)));
        }
    }
    check_mesh(sols, mesh)?;
    let nu = sols[0].nu;
    if sols.iter().any(|s| s.nu != nu) {
        return Err(Error::Mismatch("basis solutions use different viscosities".into()));
    }
    Ok(nu)
}

/// `(C Lambda)_{kh} = int_{Y*} (nu Lambda_kh + nu d_h w^k - q delta_kh)` for one solution.
pub fn apply_volume(sol: &CellSolution, mesh: &CellMesh) -> Result<Matrix2> {
    check_mesh(std::slice::from_ref(sol), mesh)?;
    let m = &mesh.mesh;
    let topo = crate::fem::P2Topology::new(m);
    let field = VelocityField::new(m, &topo, &sol.w);
    let mut grad_int = [[0.0; 2]; 2];
    let mut q_int = 0.0;
    for t in 0..m.triangles.len() {
        let el = Element::new(m, t);
        for (l, w) in &TRI7 {
            let g = field.gradient(t, &el, *l);
            let wa = w * el.area;
            for k in 0..2 {
                for h in 0..2 {
                    grad_int[k][h] += wa * g[k][h];
                }
            }
            q_int += wa * crate::fem::p1_value(m, &sol.q, t, *l);
        }
    }
    let area = m.area();
    let nu = sol.nu;
    let mut out = [[0.0; 2]; 2];
    for k in 0..2 {
        for h in 0..2 {
            out[k][h] = nu * area * sol.lambda[k][h] + nu * grad_int[k][h] - if k == h { q_int } else { 0.0 };
        }
    }
    Ok(out)
}

/// `nu int (Lambda_1 + grad w_1) : (Lambda_2 + grad w_2)`.
pub fn energy_pairing(s1: &CellSolution, s2: &CellSolution, mesh: &CellMesh) -> Result<f64> {
    check_mesh(&[s1.clone(), s2.clone()][..], mesh)?;
    let m = &mesh.mesh;
    let topo = crate::fem::P2Topology::new(m);
    let f1 = VelocityField::new(m, &topo, &s1.w);
    let f2 = VelocityField::new(m, &topo, &s2.w);
    let mut total = 0.0;
    for t in 0..m.triangles.len() {
        let el = Element::new(m, t);
        for (l, w) in &TRI7 {
            let (g1, g2) = (f1.gradient(t, &el, *l), f2.gradient(t, &el, *l));
            let mut s = 0.0;
            for k in 0..2 {
                for h in 0..2 {
                    s += (s1.lambda[k][h] + g1[k][h]) * (s2.lambda[k][h] + g2[k][h]);
                }
            }
            total += w * el.area * s;
        }
    }
    Ok(s1.nu * total)
}

/// Fourth-order effective tensor, `c[i][j][k][h] = (C e_ij)_{kh}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveTensor {
    pub c: Tensor4,
}

impl EffectiveTensor {
    /// `nu` times the identity on matrices.
    pub fn isotropic(nu: f64) -> Self {
        let mut c = [[[[0.0; 2]; 2]; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                c[i][j][i][j] = nu;
            }
        }
        Self { c }
    }

    /// 4x4 representation `M[2i+j][2k+h]`.
    pub fn as_matrix(&self) -> [[f64; 4]; 4] {
        let mut m = [[0.0; 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                m[a][b] = self.c[a / 2][a % 2][b / 2][b % 2];
            }
        }
        m
    }

    pub fn apply(&self, lambda: &Matrix2) -> Matrix2 {
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for h in 0..2 {
                        out[k][h] += self.c[i][j][k][h] * lambda[i][j];
                    }
                }
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut c = self.c;
        c.iter_mut().flatten().flatten().flatten().for_each(|v| *v *= s);
        Self { c }
    }

    /// `max |C_ijkh - C_khij|`.
    pub fn major_symmetry_defect(&self) -> f64 {
        let m = self.as_matrix();
        (0..4).flat_map(|a| (0..4).map(move |b| (a, b))).map(|(a, b)| (m[a][b] - m[b][a]).abs()).fold(0.0, f64::max)
    }

    /// `max |C_ijkh - C_jikh|` (reported, not required).
    pub fn minor_symmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for h in 0..2 {
                        worst = worst.max((self.c[i][j][k][h] - self.c[j][i][k][h]).abs());
                    }
                }
            }
        }
        worst
    }

    /// Eigenvalues of the symmetric part of the 4x4 representation, ascending.
    pub fn eigenvalues(&self) -> [f64; 4] {
        let m = self.as_matrix();
        let mat = Matrix4::from_fn(|a, b| 0.5 * (m[a][b] + m[b][a]));
        let mut ev: Vec<f64> = SymmetricEigen::new(mat).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        [ev[0], ev[1], ev[2], ev[3]]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let (a, b) = (self.as_matrix(), other.as_matrix());
        (0..16).map(|k| (a[k / 4][k % 4] - b[k / 4][k % 4]).abs()).fold(0.0, f64::max)
    }

    /// Symmetry and positivity checks required before the tensor is used.
    pub fn validate(&self) -> Result<()> {
        if self.c.iter().flatten().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTensor("non-finite entries".into()));
        }
        let scale = self.as_matrix().iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
        let defect = self.major_symmetry_defect();
        if defect > 1e-8 * scale {
            return Err(Error::InvalidTensor(format!("major symmetry defect {defect:.3e}")));
        }
        let lmin = self.min_eigenvalue();
        if lmin <= 0.0 {
            return Err(Error::InvalidTensor(format!("not positive definite (min eigenvalue {lmin:.3e})")));
        }
        Ok(())
    }
}

/// Tensor from the volume formula applied to the four basis solutions.
pub fn effective_tensor_volume(sols: &[CellSolution], mesh: &CellMesh) -> Result<EffectiveTensor> {
    check_basis(sols, mesh)?;
    let mut c = [[[[0.0; 2]; 2]; 2]; 2];
    for (a, s) in sols.iter().enumerate() {
        let ce = apply_volume(s, mesh)?;
        for k in 0..2 {
            for h in 0..2 {
                c[a / 2][a % 2][k][h] = ce[k][h];
            }
        }
    }
    Ok(EffectiveTensor { c })
}

/// Tensor from the energy bilinear form (independent cross-check of the volume formula).
pub fn effective_tensor_energy(sols: &[CellSolution], mesh: &CellMesh) -> Result<EffectiveTensor> {
    check_basis(sols, mesh)?;
    let mut c = [[[[0.0; 2]; 2]; 2]; 2];
    for a in 0..4 {
        for b in a..4 {
            let v = energy_pairing(&sols[a], &sols[b], mesh)?;
            c[a / 2][a % 2][b / 2][b % 2] = v;
            c[b / 2][b % 2][a / 2][a % 2] = v;
        }
    }
    Ok(EffectiveTensor { c })
}

/// Correctors `U1(x, y) = sum_ij w_ij(y) dU_i/dx_j(x)` and `P(x, y) = sum_ij q_ij(y) dU_i/dx_j(x)`
/// sampled at points `xs` and at the cell-mesh vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectorField {
    pub xs: Vec<[f64; 2]>,
    pub ys: Vec<[f64; 2]>,
    /// `u1[ix][iy]`.
    pub u1: Vec<Vec<[f64; 2]>>,
    pub p: Vec<Vec<f64>>,
}

/// `grad_u(x)[i][j] = dU_i/dx_j`.
pub fn reconstruct_correctors<G>(grad_u: G, sols: &[CellSolution], mesh: &CellMesh, xs: &[[f64; 2]]) -> Result<CorrectorField>
where
    G: Fn([f64; 2]) -> Matrix2,
{
    check_basis(sols, mesh)?;
    let nv = mesh.mesh.vertices.len();
    let mut u1 = Vec::with_capacity(xs.len());
    let mut p = Vec::with_capacity(xs.len());
    for &x in xs {
        let g = grad_u(x);
        let mut ux = vec![[0.0; 2]; nv];
        let mut px = vec![0.0; nv];
        for (a, s) in sols.iter().enumerate() {
            let gij = g[a / 2][a % 2];
            if gij == 0.0 {
                continue;
            }
            for v in 0..nv {
                ux[v][0] += gij * s.w[v][0];
                ux[v][1] += gij * s.w[v][1];
                px[v] += gij * s.q[v];
            }
        }
        u1.push(ux);
        p.push(px);
    }
    Ok(CorrectorField { xs: xs.to_vec(), ys: mesh.mesh.vertices.clone(), u1, p })
}

/// `|| div_x U + div_y U1(x, .) ||_{L2(Y*)}` for a macroscopic gradient `g`.
pub fn corrector_divergence_residual(g: &Matrix2, sols: &[CellSolution], mesh: &CellMesh) -> Result<f64> {
    check_basis(sols, mesh)?;
    let m = &mesh.mesh;
    let topo = crate::fem::P2Topology::new(m);
    let mut combined = vec![[0.0; 2]; topo.n_nodes()];
    for (a, s) in sols.iter().enumerate() {
        let gij = g[a / 2][a % 2];
        for (c, w) in combined.iter_mut().zip(&s.w) {
            c[0] += gij * w[0];
            c[1] += gij * w[1];
        }
    }
    let field = VelocityField::new(m, &topo, &combined);
    let tr = g[0][0] + g[1][1];
    Ok(field.integrate(|_, _, gr| (tr + gr[0][0] + gr[1][1]).powi(2)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_cell_mesh, CellGeometry};

    fn holed(r: f64, h: f64) -> CellMesh {
        build_cell_mesh(&CellGeometry::new(r, 32), h).unwrap()
    }

    #[test]
    fn no_hole_shear_is_trivial() {
        let mesh = build_cell_mesh(&CellGeometry::new(0.0, 8), 0.2).unwrap();
        let sol = solve_cell(unit_matrix(0, 1), &mesh, &CellConfig::default()).unwrap();
        assert!(sol.w.iter().flatten().all(|v| v.abs() < 1e-10));
        assert!(sol.q.iter().all(|v| v.abs() < 1e-10));
        let c = apply_volume(&sol, &mesh).unwrap();
        assert!((c[0][1] - 1.0).abs() < 1e-9 && c[1][0].abs() < 1e-9);
    }

    #[test]
    fn no_hole_rejects_trace() {
        let mesh = build_cell_mesh(&CellGeometry::new(0.0, 8), 0.2).unwrap();
        let err = solve_cell(unit_matrix(0, 0), &mesh, &CellConfig::default()).unwrap_err();
        assert!(matches!(err, Error::IncompatibleCellProblem(_)));
    }

    #[test]
    fn linearity_and_residuals() {
        let mesh = holed(0.25, 0.08);
        let p = CellProblem::new(&mesh, &CellConfig::default()).unwrap();
        let lam = [[1.0, 0.3], [-0.2, 0.5]];
        let two = [[2.0, 0.6], [-0.4, 1.0]];
        let s = p.solve_many(&[lam, two]).unwrap();
        let diff = s[0].w.iter().zip(&s[1].w).map(|(a, b)| (2.0 * a[0] - b[0]).abs().max((2.0 * a[1] - b[1]).abs())).fold(0.0, f64::max);
        assert!(diff < 1e-10);
        let r = cell_residuals(&s[0], &mesh).unwrap();
        assert!(r.divergence < 1e-9 && r.periodicity < 1e-12 && r.mean < 1e-10, "{r:?}");
    }

    #[test]
    fn volume_and_energy_tensors_agree() {
        let mesh = holed(0.25, 0.08);
        let sols = solve_cell_basis(&mesh, &CellConfig::default()).unwrap();
        let cv = effective_tensor_volume(&sols, &mesh).unwrap();
        let ce = effective_tensor_energy(&sols, &mesh).unwrap();
        assert!(cv.max_abs_diff(&ce) < 1e-8, "{}", cv.max_abs_diff(&ce));
        assert!(cv.major_symmetry_defect() < 1e-8);
        assert!(ce.min_eigenvalue() > 0.0);
        cv.validate().unwrap();
    }

    #[test]
    fn viscosity_scales_tensor() {
        let mesh = holed(0.2, 0.1);
        let c1 = effective_tensor_volume(&solve_cell_basis(&mesh, &CellConfig::default()).unwrap(), &mesh).unwrap();
        let cfg2 = CellConfig { nu: 2.0, ..CellConfig::default() };
        let c2 = effective_tensor_volume(&solve_cell_basis(&mesh, &cfg2).unwrap(), &mesh).unwrap();
        assert!(c2.max_abs_diff(&c1.scaled(2.0)) < 1e-9);
    }

    #[test]
    fn mismatched_mesh_rejected() {
        let m1 = holed(0.25, 0.08);
        let m2 = holed(0.25, 0.07);
        let sols = solve_cell_basis(&m1, &CellConfig::default()).unwrap();
        assert!(matches!(effective_tensor_volume(&sols, &m2), Err(Error::Mismatch(_))));
    }

    #[test]
    fn correctors() {
        let mesh = holed(0.25, 0.08);
        let sols = solve_cell_basis(&mesh, &CellConfig::default()).unwrap();
        let xs = [[0.3, 0.4], [0.7, 0.1]];
        let zero = reconstruct_correctors(|_| [[0.0; 2]; 2], &sols, &mesh, &xs).unwrap();
        assert!(zero.u1.iter().flatten().flatten().all(|v| *v == 0.0));
        let shear = reconstruct_correctors(|_| unit_matrix(0, 1), &sols, &mesh, &xs).unwrap();
        for v in 0..mesh.mesh.vertices.len() {
            assert_eq!(shear.u1[1][v], sols[1].w[v]);
            assert_eq!(shear.p[0][v], sols[1].q[v]);
        }
    }
}
