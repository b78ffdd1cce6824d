//! Semi-implicit integrator for the homogenized equation on the unperforated domain.
//!
//! The unknown is `u* = |Y*| u` in a continuous P2 space with zero Dirichlet trace;
//! there is no pressure and no divergence constraint.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::cell::EffectiveTensor;
use crate::error::{Error, Result};
use crate::fem::quadrature::TRI7;
use crate::fem::{
    assemble, assemble_effective, build_space, load_vector, BcSpec, Element, FormKind, MixedSpace, SparseMatrix,
    VelocityField,
};
use crate::fields::{FieldSpec, Forcing, TimeProfile};
use crate::geometry::{Rect, TriMesh};
use crate::micro::{align_path, dot, increments, RunOptions};
use crate::noise::{NoiseOperators, TimeGrid, WienerPath};

/// How the cell measures enter the equation for `u* = |Y*| u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HomScaling {
    /// Rescaled from the equation for `u`: operator `K*/|Y*|`, Brinkman `|dO| b / |Y*|`.
    #[default]
    Derived,
    /// Coefficients used verbatim on `u*`: operator `K*`, Brinkman `|dO| b`.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HomParams {
    pub b: f64,
    /// Sign of the Brinkman drift; `-1` is dissipative.
    pub sigma_b: f64,
    pub scaling: HomScaling,
    pub forcing: Forcing,
    pub u0: FieldSpec,
    pub t_final: f64,
    pub steps: usize,
    /// `|Y*|`.
    pub area_ystar: f64,
    /// `|dO|`.
    pub perim_hole: f64,
}

impl Default for HomParams {
    fn default() -> Self {
        Self {
            b: 1.0,
            sigma_b: -1.0,
            scaling: HomScaling::Derived,
            forcing: Forcing::none(),
            u0: FieldSpec::Zero,
            t_final: 0.25,
            steps: 250,
            area_ystar: 1.0,
            perim_hole: 0.0,
        }
    }
}

impl HomParams {
    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t_final, self.steps)
    }

    fn validate(&self) -> Result<()> {
        if self.sigma_b != 1.0 && self.sigma_b != -1.0 {
            return Err(Error::Config(format!("sigma_b must be +1 or -1, got {}", self.sigma_b)));
        }
        if !(self.area_ystar > 0.0 && self.area_ystar <= 1.0) || !(self.perim_hole >= 0.0) {
            return Err(Error::Config(format!("invalid cell measures |Y*| = {}, |dO| = {}", self.area_ystar, self.perim_hole)));
        }
        if !(self.b >= 0.0 && self.b.is_finite()) {
            return Err(Error::Config(format!("Fourier coefficient b must be non-negative, got {}", self.b)));
        }
        self.grid().map(|_| ())
    }

    /// Multipliers `(operator, Brinkman)` of `K*` and `M` in the drift.
    pub fn coefficients(&self) -> (f64, f64) {
        let brinkman = self.perim_hole * self.b;
        match self.scaling {
            HomScaling::Derived => (1.0 / self.area_ystar, brinkman / self.area_ystar),
            HomScaling::Literal => (1.0, brinkman),
        }
    }
}

/// `K*[u, v] = int (C grad u) : grad v` after checking `C`.
pub fn assemble_effective_operator(c: &EffectiveTensor, mesh: &TriMesh, space: &MixedSpace) -> Result<SparseMatrix> {
    c.validate()?;
    Ok(assemble_effective(mesh, space, &c.c))
}

/// `C_ijkh = delta_ij delta_kh`, whose form is `int div u div v`.
fn divergence_tensor() -> EffectiveTensor {
    let mut c = [[[[0.0; 2]; 2]; 2]; 2];
    for i in 0..2 {
        for k in 0..2 {
            c[i][i][k][k] = 1.0;
        }
    }
    EffectiveTensor { c }
}

pub struct HomSystem<'a> {
    pub mesh: &'a TriMesh,
    pub domain: Rect,
    pub params: HomParams,
    pub tensor: EffectiveTensor,
    pub space: MixedSpace,
    pub mass: SparseMatrix,
    pub operator: SparseMatrix,
    pub div_form: SparseMatrix,
    llt: Llt<usize, f64>,
    forcing: Vec<(Vec<f64>, TimeProfile)>,
    noise1: Mat<f64>,
    noise2: Mat<f64>,
    initial: Vec<f64>,
}

impl std::fmt::Debug for HomSystem<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HomSystem").field("dofs", &self.space.n_velocity_dofs()).field("params", &self.params).finish()
    }
}

pub fn assemble_hom<'a>(
    mesh: &'a TriMesh,
    domain: Rect,
    tensor: &EffectiveTensor,
    params: &HomParams,
    noise: Option<&NoiseOperators>,
) -> Result<HomSystem<'a>> {
    params.validate()?;
    let space = build_space(mesh, &[], &BcSpec::dirichlet_outer())?;
    let mass = assemble(mesh, &space, FormKind::Mass);
    let operator = assemble_effective_operator(tensor, mesh, &space)?;
    let div_form = assemble_effective(mesh, &space, &divergence_tensor().c);
    let dt = params.grid()?.dt();
    let (kc, bc) = params.coefficients();
    // M + dt kc K* - sigma_b dt bc M
    let lhs = SparseMatrix::linear_combination(&[(1.0 - params.sigma_b * dt * bc, &mass), (dt * kc, &operator)]);
    let n = space.n_velocity_dofs();
    let mut trip = Vec::with_capacity(lhs.nnz());
    for r in 0..n {
        trip.extend(lhs.row(r).filter(|(c, _)| *c <= r).map(|(c, v)| Triplet::new(r, c, v)));
    }
    let indefinite = || Error::IndefiniteOperator { sign: params.sigma_b as i8, product: dt * params.perim_hole * params.b };
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trip)
        .map_err(|e| Error::SingularSystem(format!("could not build the step matrix: {e:?}")))?;
    let llt = mat.sp_cholesky(Side::Lower).map_err(|_| indefinite())?;

    let forcing = params.forcing.terms.iter().map(|(f, p)| (load_vector(mesh, &space, |x| f.eval(&domain, x)), *p)).collect();
    let (noise1, noise2) = match noise {
        Some(ops) => hom_noise_loads(mesh, &space, ops, params)?,
        None => (Mat::zeros(n, 0), Mat::zeros(n, 0)),
    };
    let y = params.area_ystar;
    let initial = space.interpolate_velocity(mesh, |x| {
        let v = params.u0.eval(&domain, x);
        [y * v[0], y * v[1]]
    });
    let sys = HomSystem {
        mesh,
        domain,
        params: params.clone(),
        tensor: *tensor,
        space,
        mass,
        operator,
        div_form,
        llt,
        forcing,
        noise1,
        noise2,
        initial,
    };
    // a pivot-free factorization of an indefinite matrix may still succeed; verify on a probe
    let probe = vec![1.0; n];
    let mut x = Mat::<f64>::from_fn(n, 1, |i, _| probe[i]);
    sys.llt.solve_in_place(x.as_mut());
    if x.col(0).iter().any(|v| !v.is_finite()) || dot(&probe, &x.col(0).iter().copied().collect::<Vec<_>>()) <= 0.0 {
        return Err(indefinite());
    }
    Ok(sys)
}

/// `N1[:, j] = |Y*| g1(0) sqrt(lambda_j) int e_j . phi` and
/// `N2[:, j] = sqrt(lambda_j) (|dO| g21(0) int e_j . phi + (int_dO g22(0) e_j) . int phi)`.
fn hom_noise_loads(mesh: &TriMesh, space: &MixedSpace, ops: &NoiseOperators, params: &HomParams) -> Result<(Mat<f64>, Mat<f64>)> {
    let n = space.n_velocity_dofs();
    let jmax = ops.q1.j.max(ops.q2.j);
    let modes: Vec<Vec<f64>> = (1..=jmax).map(|j| load_vector(mesh, space, |x| ops.q1.eval(j, x))).collect();
    let const_loads = [load_vector(mesh, space, |_| [1.0, 0.0]), load_vector(mesh, space, |_| [0.0, 1.0])];
    let mut n1 = Mat::<f64>::zeros(n, ops.q1.j);
    for j in 1..=ops.q1.j {
        let c = params.area_ystar * ops.g1_coeff(0.0) * ops.q1.eigenvalue(j).sqrt();
        for i in 0..n {
            n1[(i, j - 1)] = c * modes[j - 1][i];
        }
    }
    let avg = ops.boundary_average_g22(0.0);
    let mut n2 = Mat::<f64>::zeros(n, ops.q2.j);
    for j in 1..=ops.q2.j {
        let sl = ops.q2.eigenvalue(j).sqrt();
        let c = params.perim_hole * ops.g21_coeff(0.0, j);
        for i in 0..n {
            n2[(i, j - 1)] = sl * (c * modes[j - 1][i] + avg[j - 1][0] * const_loads[0][i] + avg[j - 1][1] * const_loads[1][i]);
        }
    }
    Ok((n1, n2))
}

impl HomSystem<'_> {
    pub fn n_velocity_dofs(&self) -> usize {
        self.space.n_velocity_dofs()
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.initial
    }

    pub fn pairing_load(&self, phi: &FieldSpec) -> Vec<f64> {
        let d = self.domain;
        load_vector(self.mesh, &self.space, |x| phi.eval(&d, x))
    }

    /// Column `j` of the `dW2` forcing (for checks of the boundary-noise coefficient).
    pub fn boundary_noise_column(&self, j: usize) -> Vec<f64> {
        self.noise2.col(j).iter().copied().collect()
    }

    fn forcing_load(&self, t: f64) -> Vec<f64> {
        let mut f = vec![0.0; self.n_velocity_dofs()];
        for (load, p) in &self.forcing {
            let a = p.eval(t);
            f.iter_mut().zip(load).for_each(|(d, v)| *d += a * v);
        }
        f
    }

    /// `||u_h - u||_{L2(D)}` for an exact field.
    pub fn l2_error<F: Fn([f64; 2]) -> [f64; 2]>(&self, u: &[f64], exact: F) -> f64 {
        let nodal = self.space.expand_velocity(u);
        let field = VelocityField::new(self.mesh, &self.space.topo, &nodal);
        field
            .integrate(|x, v, _| {
                let e = exact(x);
                (v[0] - e[0]).powi(2) + (v[1] - e[1]).powi(2)
            })
            .sqrt()
    }

    /// Quadrature floor of `int |div u|^2`: the value for the P2 interpolant of a
    /// divergence-free field with the same L2 norm as `u`.
    pub fn divergence_floor(&self, u: &[f64]) -> f64 {
        use std::f64::consts::PI;
        let d = self.domain;
        // curl of sin^2(pi x~) sin^2(pi y~)
        let stream = |x: [f64; 2]| {
            let (lx, ly) = (d.width(), d.height());
            let (a, b) = (PI * (x[0] - d.min[0]) / lx, PI * (x[1] - d.min[1]) / ly);
            [a.sin().powi(2) * 2.0 * b.sin() * b.cos() * PI / ly, -2.0 * a.sin() * a.cos() * PI / lx * b.sin().powi(2)]
        };
        let v = self.space.interpolate_velocity(self.mesh, stream);
        let (nu, nv) = (self.mass.quad_form(u), self.mass.quad_form(&v));
        if nv == 0.0 {
            return 0.0;
        }
        self.div_form.quad_form(&v) * nu / nv
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomSeries {
    pub seed: u64,
    /// `||u*^m||^2_{L2(D)}`.
    pub energy: Vec<f64>,
    /// `int |div u*^m|^2`.
    pub div_sq: Vec<f64>,
    /// `int u*^m . phi_k`, indexed `[k][m]`.
    pub pairings: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct HomTrajectory {
    pub grid: TimeGrid,
    pub samples: Vec<HomSeries>,
    pub finals: Vec<Vec<f64>>,
}

/// `(M + dt K~ - sigma_b dt B~ M) u+ = M u + dt |Y*| F(t+) + tau(t)(N1 dW1 + N2 dW2)` for all paths at once.
pub fn run_hom(sys: &HomSystem, paths: &[WienerPath], opts: &RunOptions) -> Result<HomTrajectory> {
    let grid = sys.params.grid()?;
    let dt = grid.dt();
    let n = sys.n_velocity_dofs();
    let noisy = !paths.is_empty();
    let paths: Vec<WienerPath> = paths.iter().map(|p| align_path(p, &grid)).collect::<Result<_>>()?;
    let ns = paths.len().max(1);
    let (j1, j2) = (sys.noise1.ncols(), sys.noise2.ncols());
    let loads: Vec<Vec<f64>> = opts.test_functions.iter().map(|f| sys.pairing_load(f)).collect();
    let mut u = Mat::<f64>::from_fn(n, ns, |i, _| sys.initial[i]);
    let record = |rec: &mut HomSeries, us: &[f64]| {
        rec.energy.push(sys.mass.quad_form(us));
        rec.div_sq.push(sys.div_form.quad_form(us));
        for (k, l) in loads.iter().enumerate() {
            rec.pairings[k].push(dot(l, us));
        }
    };
    let mut series: Vec<HomSeries> = (0..ns)
        .map(|s| HomSeries {
            seed: paths.get(s).map_or(0, |p| p.seed),
            energy: Vec::with_capacity(grid.steps + 1),
            div_sq: Vec::with_capacity(grid.steps + 1),
            pairings: vec![Vec::with_capacity(grid.steps + 1); loads.len()],
        })
        .collect();
    for rec in series.iter_mut() {
        record(rec, &sys.initial);
    }
    for m in 0..grid.steps {
        let f = sys.forcing_load(grid.time(m + 1));
        let ys = sys.params.area_ystar;
        let mut rhs = Mat::<f64>::from_fn(n, ns, |i, _| dt * ys * f[i]);
        sys.mass.mul_dense_add(1.0, &u, &mut rhs);
        if noisy {
            let tau = NoiseOperators::temporal_factor(grid.time(m));
            if j1 > 0 {
                rhs += (&sys.noise1 * &increments(&paths, m, j1, false)?) * faer::Scale(tau);
            }
            if j2 > 0 {
                rhs += (&sys.noise2 * &increments(&paths, m, j2, true)?) * faer::Scale(tau);
            }
        }
        sys.llt.solve_in_place(rhs.as_mut());
        u = rhs;
        for (s, rec) in series.iter_mut().enumerate() {
            let us: Vec<f64> = u.col(s).iter().copied().collect();
            if us.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("homogenized state at step {}", m + 1)));
            }
            record(rec, &us);
        }
    }
    let finals = if opts.keep_final { (0..ns).map(|s| u.col(s).iter().copied().collect()).collect() } else { Vec::new() };
    Ok(HomTrajectory { grid, samples: series, finals })
}

/// `int_D |div u|^2` by quadrature (independent of the assembled form).
pub fn divergence_sq(sys: &HomSystem, u: &[f64]) -> f64 {
    let nodal = sys.space.expand_velocity(u);
    let field = VelocityField::new(sys.mesh, &sys.space.topo, &nodal);
    let mut total = 0.0;
    for t in 0..sys.mesh.triangles.len() {
        let el = Element::new(sys.mesh, t);
        for (l, w) in &TRI7 {
            let g = field.gradient(t, &el, *l);
            total += w * el.area * (g[0][0] + g[1][1]).powi(2);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_rect_mesh;
    use crate::noise::{sample_wiener, NoiseConfig};
    use std::f64::consts::PI;

    fn rect(h: f64) -> TriMesh {
        build_rect_mesh(Rect::unit(), h).unwrap()
    }

    #[test]
    fn isotropic_operator_is_stiffness() {
        let m = rect(0.25);
        let s = build_space(&m, &[], &BcSpec::dirichlet_outer()).unwrap();
        let k = assemble_effective_operator(&EffectiveTensor::isotropic(1.5), &m, &s).unwrap();
        let st = assemble(&m, &s, FormKind::Stiffness(1.5));
        let d = SparseMatrix::linear_combination(&[(1.0, &k), (-1.0, &st)]);
        assert!(d.values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn constants_in_kernel_before_dirichlet() {
        let m = rect(0.25);
        let s = build_space(&m, &[], &BcSpec::new()).unwrap();
        let mut c = EffectiveTensor::isotropic(1.0);
        c.c[0][1][1][0] = 0.3;
        c.c[1][0][0][1] = 0.3;
        let k = assemble_effective_operator(&c, &m, &s).unwrap();
        let one = s.interpolate_velocity(&m, |_| [1.0, -2.0]);
        assert!(k.matvec(&one).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn random_probes_positive() {
        use rand::{Rng, SeedableRng};
        let m = rect(0.25);
        let s = build_space(&m, &[], &BcSpec::dirichlet_outer()).unwrap();
        let mut c = EffectiveTensor::isotropic(1.0);
        c.c[0][0][1][1] = 0.4;
        c.c[1][1][0][0] = 0.4;
        let k = assemble_effective_operator(&c, &m, &s).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let u: Vec<f64> = (0..s.n_velocity_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert!(k.quad_form(&u) > 0.0);
        }
    }

    #[test]
    fn invalid_tensor_rejected() {
        let m = rect(0.25);
        let s = build_space(&m, &[], &BcSpec::dirichlet_outer()).unwrap();
        let mut c = EffectiveTensor::isotropic(1.0);
        c.c[0][1][1][0] = 0.5;
        assert!(matches!(assemble_effective_operator(&c, &m, &s), Err(Error::InvalidTensor(_))));
    }

    #[test]
    fn eigenfunction_decay() {
        let m = rect(1.0 / 8.0);
        let p = HomParams { b: 0.0, u0: FieldSpec::sine([1, 1], [1.0, 1.0]), t_final: 0.1, steps: 20, ..HomParams::default() };
        let sys = assemble_hom(&m, Rect::unit(), &EffectiveTensor::isotropic(1.0), &p, None).unwrap();
        let tr = run_hom(&sys, &[], &RunOptions::default()).unwrap();
        let e = &tr.samples[0].energy;
        let per_step = (e[1] / e[0]).sqrt();
        let lam = 2.0 * PI * PI;
        assert!((per_step - 1.0 / (1.0 + lam * 0.005)).abs() < 1e-3, "{per_step}");
        let end = (e[20] / e[0]).sqrt();
        assert!((end - (-lam * 0.1f64).exp()).abs() < 0.05);
    }

    #[test]
    fn sign_choice() {
        let m = rect(0.25);
        let p = HomParams { b: 1.0e4, sigma_b: 1.0, perim_hole: 1.0, area_ystar: 0.8, t_final: 0.1, steps: 1, ..HomParams::default() };
        let err = assemble_hom(&m, Rect::unit(), &EffectiveTensor::isotropic(1.0), &p, None).unwrap_err();
        assert!(matches!(err, Error::IndefiniteOperator { sign: 1, .. }), "{err:?}");
        let ok = HomParams { sigma_b: -1.0, ..p };
        assemble_hom(&m, Rect::unit(), &EffectiveTensor::isotropic(1.0), &ok, None).unwrap();
    }

    #[test]
    fn initial_state_is_scaled() {
        let m = rect(0.25);
        let p = HomParams { u0: FieldSpec::sine([1, 1], [1.0, 1.0]), area_ystar: 0.75, ..HomParams::default() };
        let sys = assemble_hom(&m, Rect::unit(), &EffectiveTensor::isotropic(1.0), &p, None).unwrap();
        let plain = sys.space.interpolate_velocity(&m, |x| FieldSpec::sine([1, 1], [1.0, 1.0]).eval(&Rect::unit(), x));
        for (a, b) in sys.initial_state().iter().zip(&plain) {
            assert!((a - 0.75 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn boundary_noise_coefficient() {
        use crate::geometry::CellGeometry;
        let m = rect(0.25);
        let geom = CellGeometry::new(0.25, 16);
        let ops = NoiseOperators::new(&NoiseConfig { j: 4, ..NoiseConfig::default() }, Rect::unit(), geom).unwrap();
        let p = HomParams { area_ystar: 0.8, perim_hole: 1.5, ..HomParams::default() };
        let sys = assemble_hom(&m, Rect::unit(), &EffectiveTensor::isotropic(1.0), &p, Some(&ops)).unwrap();
        let avg = ops.boundary_average_g22(0.0);
        for j in 1..=4 {
            let ej = load_vector(&m, &sys.space, |x| ops.q2.eval(j, x));
            let c0 = load_vector(&m, &sys.space, |_| avg[j - 1]);
            let col = sys.boundary_noise_column(j - 1);
            let sl = ops.q2.eigenvalue(j).sqrt();
            for i in 0..col.len() {
                let expect = sl * (1.5 * ops.g21_coeff(0.0, j) * ej[i] + c0[i]);
                assert!((col[i] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn noise_mean_and_determinism() {
        let m = rect(0.25);
        let geom = crate::geometry::CellGeometry::new(0.25, 16);
        let ops = NoiseOperators::new(&NoiseConfig { j: 8, ..NoiseConfig::default() }, Rect::unit(), geom).unwrap();
        let p = HomParams { u0: FieldSpec::sine([1, 1], [1.0, 1.0]), t_final: 0.1, steps: 10, perim_hole: 1.5, area_ystar: 0.8, ..HomParams::default() };
        let sys = assemble_hom(&m, Rect::unit(), &EffectiveTensor::isotropic(1.0), &p, Some(&ops)).unwrap();
        let g = p.grid().unwrap();
        let paths: Vec<_> = (0..3).map(|s| sample_wiener(&ops.q1, &ops.q2, &g, s)).collect();
        let opts = RunOptions { test_functions: vec![FieldSpec::sine([1, 1], [1.0, 0.0])], keep_final: true };
        let a = run_hom(&sys, &paths, &opts).unwrap();
        assert_eq!(a.samples, run_hom(&sys, &paths, &opts).unwrap().samples);
        assert!(a.samples[0].div_sq[10] > 0.0);
        let direct = divergence_sq(&sys, &a.finals[0]);
        assert!((direct - a.samples[0].div_sq[10]).abs() < 1e-10 * direct.max(1.0));
    }
}
