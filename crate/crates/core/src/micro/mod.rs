//! Implicit Euler / Euler–Maruyama integrator for the microscale system in `D^eps`.
//!
//! Per step, with `E = M + eps^2 M_G` and `S = K + eps b M_G`:
//! `(E + dt S) u+ - B^T p^ = E u + dt F(t+) + tau(t)(L1 dW1 + L2 dW2)`, `B u+ = 0`,
//! where `p^ = dt p+` accumulates into the time-integrated pressure.

use faer::Mat;
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{
    assemble, assemble_pressure_mass, boundary_load_vector, build_space, load_vector, pressure_load, BcSpec, Element,
    FormKind, MixedSpace, SaddleFactorization, SaddleSystem, SolverConfig, VelocityField,
};
use crate::fem::quadrature::TRI7;
use crate::fields::{FieldSpec, Forcing, TimeProfile};
use crate::geometry::{BoundaryTag, PerforatedMesh, TriMesh};
use crate::noise::{NoiseOperators, TimeGrid, WienerPath};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MicroParams {
    pub nu: f64,
    pub b: f64,
    pub forcing: Forcing,
    pub u0: FieldSpec,
    /// Boundary datum; defaults to the trace of `u0`.
    pub v0: Option<FieldSpec>,
    pub t_final: f64,
    pub steps: usize,
    pub solver: SolverConfig,
}

impl Default for MicroParams {
    fn default() -> Self {
        Self {
            nu: 1.0,
            b: 1.0,
            forcing: Forcing::none(),
            u0: FieldSpec::Zero,
            v0: None,
            t_final: 0.25,
            steps: 250,
            solver: SolverConfig { tolerance: 1e-9, ..SolverConfig::default() },
        }
    }
}

impl MicroParams {
    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t_final, self.steps)
    }

    fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::Config(format!("viscosity must be positive, got {}", self.nu)));
        }
        if !(self.b >= 0.0 && self.b.is_finite()) {
            return Err(Error::Config(format!("Fourier coefficient b must be non-negative, got {}", self.b)));
        }
        self.grid().map(|_| ())
    }
}

/// Assembled blocks and the factorized step matrix for one `eps`.
#[derive(Debug)]
pub struct MicroSystem<'a> {
    pub mesh: &'a PerforatedMesh,
    pub params: MicroParams,
    pub epsilon: f64,
    pub space: MixedSpace,
    pub mass: crate::fem::SparseMatrix,
    /// Hole-boundary mass, stored without structural zeros.
    pub boundary_mass: crate::fem::SparseMatrix,
    /// `nu`-weighted stiffness.
    pub stiffness: crate::fem::SparseMatrix,
    pub pressure_mass: crate::fem::SparseMatrix,
    pub mean_constraint: bool,
    factor: SaddleFactorization,
    forcing: Vec<(Vec<f64>, TimeProfile)>,
    noise1: Mat<f64>,
    noise2: Mat<f64>,
    initial: Vec<f64>,
    /// `E u0`, replaced by `M u0 + eps^2 int v0 . phi` when `v0` is given.
    initial_energy_rhs: Vec<f64>,
    initial_norm_sq: f64,
}

/// Builds the blocks, the initial state and the noise loads, and factorizes the step matrix.
pub fn assemble_micro<'a>(mesh: &'a PerforatedMesh, params: &MicroParams, noise: Option<&NoiseOperators>) -> Result<MicroSystem<'a>> {
    params.validate()?;
    let eps = mesh.epsilon.value();
    let m = &mesh.mesh;
    let space = build_space(m, &[], &BcSpec::dirichlet_outer())?;
    let mass = assemble(m, &space, FormKind::Mass);
    let boundary_mass = assemble(m, &space, FormKind::BoundaryMass(BoundaryTag::Hole)).pruned();
    let stiffness = assemble(m, &space, FormKind::Stiffness(params.nu));
    let div = assemble(m, &space, FormKind::Div);
    let pressure_mass = assemble_pressure_mass(m, &space);
    let mean_constraint = mesh.num_holes() == 0;
    if mean_constraint {
        warn!("eps = {}: no holes inside D, the dynamic boundary condition is vacuous; fixing the pressure mean", mesh.epsilon);
    }
    let dt = params.grid()?.dt();
    let a = crate::fem::SparseMatrix::linear_combination(&[
        (1.0, &mass),
        (dt, &stiffness),
        (eps * eps + dt * eps * params.b, &boundary_mass),
    ]);
    let mean_weights = mean_constraint.then(|| pressure_load(m, &space, |_| 1.0));
    let factor = SaddleFactorization::new(SaddleSystem { a, b: Some(div), mean_weights }, &params.solver)?;

    let domain = mesh.domain;
    let forcing = params
        .forcing
        .terms
        .iter()
        .map(|(f, p)| (load_vector(m, &space, |x| f.eval(&domain, x)), *p))
        .collect();

    let n = space.n_velocity_dofs();
    let (noise1, noise2) = match noise {
        Some(ops) => noise_loads(mesh, &space, ops, eps)?,
        None => (Mat::zeros(n, 0), Mat::zeros(n, 0)),
    };

    let initial = space.interpolate_velocity(m, |x| params.u0.eval(&domain, x));
    let mut initial_energy_rhs = mass.matvec(&initial);
    let (vol, bd) = (mass.quad_form(&initial), boundary_mass.quad_form(&initial));
    let initial_norm_sq = match &params.v0 {
        None => {
            boundary_mass.matvec_add(eps * eps, &initial, &mut initial_energy_rhs);
            vol + eps * eps * bd
        }
        Some(v0) => {
            let hole_edges: Vec<usize> = mesh.holes.iter().flat_map(|h| h.edges.iter().copied()).collect();
            let lv = boundary_load_vector(m, &space, hole_edges.iter().copied(), |_, x| v0.eval(&domain, x));
            initial_energy_rhs.iter_mut().zip(&lv).for_each(|(r, v)| *r += eps * eps * v);
            let v0_sq: f64 = hole_edges
                .iter()
                .map(|&e| {
                    let [a, b] = m.boundary_edges[e].vertices;
                    let (pa, pb) = (m.vertices[a], m.vertices[b]);
                    let len = crate::geometry::dist(pa, pb);
                    crate::fem::quadrature::GAUSS3
                        .iter()
                        .map(|&(s, w)| {
                            let v = v0.eval(&domain, crate::fem::quadrature::lerp(pa, pb, s));
                            w * len * (v[0] * v[0] + v[1] * v[1])
                        })
                        .sum::<f64>()
                })
                .sum();
            vol + eps * eps * v0_sq
        }
    };

    Ok(MicroSystem {
        mesh,
        params: params.clone(),
        epsilon: eps,
        space,
        mass,
        boundary_mass,
        stiffness,
        pressure_mass,
        mean_constraint,
        factor,
        forcing,
        noise1,
        noise2,
        initial,
        initial_energy_rhs,
        initial_norm_sq,
    })
}

/// `L1[:, j] = g1(0) sqrt(lambda_j) int e_j . phi` and
/// `L2[:, j] = eps sqrt(lambda_j) int_{dO^eps} (g21(0) e_j + R g22(0) e_j) . phi`.
fn noise_loads(mesh: &PerforatedMesh, space: &MixedSpace, ops: &NoiseOperators, eps: f64) -> Result<(Mat<f64>, Mat<f64>)> {
    let m = &mesh.mesh;
    let n = space.n_velocity_dofs();
    let mut l1 = Mat::<f64>::zeros(n, ops.q1.j);
    for j in 1..=ops.q1.j {
        let c = ops.g1_coeff(0.0) * ops.q1.eigenvalue(j).sqrt();
        if c == 0.0 {
            continue;
        }
        let v = load_vector(m, space, |x| ops.q1.eval(j, x));
        for (i, x) in v.iter().enumerate() {
            l1[(i, j - 1)] = c * x;
        }
    }
    let mut hole_of_edge = vec![usize::MAX; m.boundary_edges.len()];
    for (h, hole) in mesh.holes.iter().enumerate() {
        for &e in &hole.edges {
            hole_of_edge[e] = h;
        }
    }
    let hole_edges: Vec<usize> = mesh.holes.iter().flat_map(|h| h.edges.iter().copied()).collect();
    let mut l2 = Mat::<f64>::zeros(n, ops.q2.j);
    if !hole_edges.is_empty() {
        for j in 1..=ops.q2.j {
            let g21 = ops.g21_coeff(0.0, j);
            let v = boundary_load_vector(m, space, hole_edges.iter().copied(), |e, x| {
                let y = mesh.to_reference(&mesh.holes[hole_of_edge[e]], x);
                let lifted = ops.g22_value(0.0, j, mesh.geometry.angle_of(y));
                let ej = ops.q2.eval(j, x);
                [g21 * ej[0] + lifted[0], g21 * ej[1] + lifted[1]]
            });
            let c = eps * ops.q2.eigenvalue(j).sqrt();
            for (i, x) in v.iter().enumerate() {
                l2[(i, j - 1)] = c * x;
            }
        }
    }
    if l1.col_iter().chain(l2.col_iter()).any(|c| c.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("noise load vectors".into()));
    }
    Ok((l1, l2))
}

impl MicroSystem<'_> {
    pub fn n_velocity_dofs(&self) -> usize {
        self.space.n_velocity_dofs()
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.initial
    }

    /// `||U0||^2 = ||u0||^2 + eps^2 ||v0||^2_{dO^eps}`.
    pub fn initial_norm_sq(&self) -> f64 {
        self.initial_norm_sq
    }

    /// `int_{D^eps} phi . basis` for a test field.
    pub fn pairing_load(&self, phi: &FieldSpec) -> Vec<f64> {
        let d = self.mesh.domain;
        load_vector(&self.mesh.mesh, &self.space, |x| phi.eval(&d, x))
    }

    /// Step matrix symmetry defect (the saddle blocks are symmetric by construction).
    pub fn step_matrix_symmetry_defect(&self) -> f64 {
        self.factor.system().a.symmetry_defect()
    }

    fn forcing_load(&self, t: f64) -> Vec<f64> {
        let mut f = vec![0.0; self.n_velocity_dofs()];
        for (load, p) in &self.forcing {
            let a = p.eval(t);
            f.iter_mut().zip(load).for_each(|(d, v)| *d += a * v);
        }
        f
    }
}

/// Options for a batch of trajectories.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Test fields paired with `u` at every step.
    pub test_functions: Vec<FieldSpec>,
    /// Keep the final velocity and time-integrated pressure of each sample.
    pub keep_final: bool,
}

/// Scalar history of one trajectory at `t_0 .. t_M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSeries {
    pub seed: u64,
    /// `||u^m||^2_{L2(D^eps)}`.
    pub energy: Vec<f64>,
    /// `||u^m||^2_{L2(dO^eps)}`.
    pub boundary: Vec<f64>,
    /// `||grad u^m||^2`.
    pub grad: Vec<f64>,
    /// `||P^m||^2_{L2}` of the time-integrated pressure.
    pub pressure: Vec<f64>,
    /// `int u^m . phi_k`, indexed `[k][m]`.
    pub pairings: Vec<Vec<f64>>,
    /// Largest relative defect of the per-step energy identity.
    pub identity_defect: f64,
    /// Largest relative algebraic residual.
    pub solver_residual: f64,
}

#[derive(Debug, Clone)]
pub struct FinalState {
    pub u: Vec<f64>,
    /// Time-integrated pressure `P(T)`.
    pub pressure: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MicroTrajectory {
    pub epsilon: f64,
    pub grid: TimeGrid,
    pub j: usize,
    pub samples: Vec<SampleSeries>,
    pub finals: Vec<FinalState>,
    pub initial_norm_sq: f64,
}

/// Aligns a path with the system's time grid, coarsening dyadically refined paths.
pub(crate) fn align_path(path: &WienerPath, grid: &TimeGrid) -> Result<WienerPath> {
    if (path.grid.t_final - grid.t_final).abs() > 1e-12 * grid.t_final {
        return Err(Error::Mismatch(format!("path horizon {} differs from T = {}", path.grid.t_final, grid.t_final)));
    }
    if path.grid.steps == grid.steps {
        return Ok(path.clone());
    }
    if path.grid.steps % grid.steps != 0 {
        return Err(Error::Mismatch(format!("path has {} steps, cannot match {}", path.grid.steps, grid.steps)));
    }
    path.coarsen(path.grid.steps / grid.steps)
}

/// Increments of all samples at step `m` as a `J x S` matrix.
pub(crate) fn increments(paths: &[WienerPath], m: usize, j: usize, second: bool) -> Result<Mat<f64>> {
    let mut out = Mat::<f64>::zeros(j, paths.len());
    for (s, p) in paths.iter().enumerate() {
        let dw = if second { p.dw2(m) } else { p.dw1(m) };
        if dw.len() != j {
            return Err(Error::Mismatch(format!("path carries {} modes, the operators {j}", dw.len())));
        }
        for (k, v) in dw.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("noise increment (seed {}, step {m}, mode {})", p.seed, k + 1)));
            }
            out[(k, s)] = *v;
        }
    }
    Ok(out)
}

/// Samples integrated together per multi-column solve; bounds the dense work arrays.
pub const SAMPLE_BATCH: usize = 16;

/// Integrates the paths in batches of [`SAMPLE_BATCH`] (one multi-column solve per step and batch).
/// With no paths a single noise-free trajectory is run.
pub fn run_micro(sys: &MicroSystem, paths: &[WienerPath], opts: &RunOptions) -> Result<MicroTrajectory> {
    if paths.len() <= SAMPLE_BATCH {
        return run_micro_batch(sys, paths, opts);
    }
    let mut out: Option<MicroTrajectory> = None;
    for chunk in paths.chunks(SAMPLE_BATCH) {
        let t = run_micro_batch(sys, chunk, opts)?;
        match &mut out {
            None => out = Some(t),
            Some(o) => {
                o.samples.extend(t.samples);
                o.finals.extend(t.finals);
            }
        }
    }
    Ok(out.expect("at least one batch"))
}

fn run_micro_batch(sys: &MicroSystem, paths: &[WienerPath], opts: &RunOptions) -> Result<MicroTrajectory> {
    let grid = sys.params.grid()?;
    let dt = grid.dt();
    let eps = sys.epsilon;
    let n = sys.n_velocity_dofs();
    let np = sys.space.n_pressure_dofs();
    let noisy = !paths.is_empty();
    let paths: Vec<WienerPath> = paths.iter().map(|p| align_path(p, &grid)).collect::<Result<_>>()?;
    let ns = paths.len().max(1);
    let (j1, j2) = (sys.noise1.ncols(), sys.noise2.ncols());
    if noisy && (j1 == 0 && j2 == 0) {
        warn!("paths supplied but the system was assembled without noise operators");
    }
    let loads: Vec<Vec<f64>> = opts.test_functions.iter().map(|f| sys.pairing_load(f)).collect();

    let mut u = Mat::<f64>::zeros(n, ns);
    let mut eu = Mat::<f64>::zeros(n, ns);
    for s in 0..ns {
        for i in 0..n {
            u[(i, s)] = sys.initial[i];
            eu[(i, s)] = sys.initial_energy_rhs[i];
        }
    }
    let mut pcum = Mat::<f64>::zeros(np, ns);
    let mut series: Vec<SampleSeries> = (0..ns)
        .map(|s| SampleSeries {
            seed: paths.get(s).map_or(0, |p| p.seed),
            energy: Vec::with_capacity(grid.steps + 1),
            boundary: Vec::with_capacity(grid.steps + 1),
            grad: Vec::with_capacity(grid.steps + 1),
            pressure: Vec::with_capacity(grid.steps + 1),
            pairings: vec![Vec::with_capacity(grid.steps + 1); loads.len()],
            identity_defect: 0.0,
            solver_residual: 0.0,
        })
        .collect();
    for rec in series.iter_mut() {
        let u0 = &sys.initial;
        rec.energy.push(sys.mass.quad_form(u0));
        rec.boundary.push(sys.boundary_mass.quad_form(u0));
        rec.grad.push(sys.stiffness.quad_form(u0) / sys.params.nu);
        rec.pressure.push(0.0);
        for (k, l) in loads.iter().enumerate() {
            rec.pairings[k].push(dot(l, u0));
        }
    }

    let zero_g = Mat::<f64>::zeros(np, ns);
    for m in 0..grid.steps {
        let t_next = grid.time(m + 1);
        // explicit part r = dt F(t+) + tau(t_m)(L1 dW1 + L2 dW2)
        let f = sys.forcing_load(t_next);
        let mut r = Mat::<f64>::from_fn(n, ns, |i, _| dt * f[i]);
        if noisy {
            let tau = NoiseOperators::temporal_factor(grid.time(m));
            if j1 > 0 {
                let dw = increments(&paths, m, j1, false)?;
                r += (&sys.noise1 * &dw) * faer::Scale(tau);
            }
            if j2 > 0 {
                let dw = increments(&paths, m, j2, true)?;
                r += (&sys.noise2 * &dw) * faer::Scale(tau);
            }
        }
        let rhs = &eu + &r;
        let (un, p, reports) = sys.factor.solve_many(&rhs, &zero_g)?;
        for s in 0..ns {
            let us = col(&un, s);
            let mu = sys.mass.matvec(&us);
            let gu = sys.boundary_mass.matvec(&us);
            let ku = sys.stiffness.matvec(&us);
            let (e_vol, e_bd, e_k) = (dot(&us, &mu), dot(&us, &gu), dot(&us, &ku));
            // 2 u+^T (E u+ - E u) + 2 dt u+^T S u+ = 2 u+^T r
            let eu_new: Vec<f64> = mu.iter().zip(&gu).map(|(a, b)| a + eps * eps * b).collect();
            let rs = col(&r, s);
            let eus = col(&eu, s);
            let lhs = 2.0 * (dot(&us, &eu_new) - dot(&us, &eus)) + 2.0 * dt * (e_k + eps * sys.params.b * e_bd);
            let rhs_id = 2.0 * dot(&us, &rs);
            let scale = [2.0 * dot(&us, &eu_new), 2.0 * dot(&us, &eus).abs(), 2.0 * dt * e_k, rhs_id.abs()]
                .into_iter()
                .fold(f64::MIN_POSITIVE, f64::max);
            let rec = &mut series[s];
            rec.identity_defect = rec.identity_defect.max((lhs - rhs_id).abs() / scale);
            rec.solver_residual = rec.solver_residual.max(reports[s].relative);
            for i in 0..np {
                pcum[(i, s)] += p[(i, s)];
            }
            let ps = col(&pcum, s);
            rec.energy.push(e_vol);
            rec.boundary.push(e_bd);
            rec.grad.push(e_k / sys.params.nu);
            rec.pressure.push(sys.pressure_mass.quad_form(&ps));
            for (k, l) in loads.iter().enumerate() {
                rec.pairings[k].push(dot(l, &us));
            }
            for (i, v) in eu_new.iter().enumerate() {
                eu[(i, s)] = *v;
            }
            if !(e_vol.is_finite() && e_k.is_finite()) {
                return Err(Error::NonFinite(format!("micro state at step {} (eps = {eps})", m + 1)));
            }
        }
        u = un;
    }
    let finals = if opts.keep_final {
        (0..ns).map(|s| FinalState { u: col(&u, s), pressure: col(&pcum, s) }).collect()
    } else {
        Vec::new()
    };
    Ok(MicroTrajectory {
        epsilon: eps,
        grid,
        j: j1.max(j2),
        samples: series,
        finals,
        initial_norm_sq: sys.initial_norm_sq,
    })
}

fn col(m: &Mat<f64>, s: usize) -> Vec<f64> {
    m.col(s).iter().copied().collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Discrete analog of the uniform energy bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyCertificate {
    pub epsilon: f64,
    pub samples: usize,
    /// Smallest `C_T` with `LHS_m <= C_T (1 + E||U0||^2)` for all `m`.
    pub c_t: f64,
    /// `E sup_m (||u^m||^2 + eps^2 ||u^m||^2_{dO})`.
    pub sup_energy: f64,
    /// `max_m sqrt(eps) ||u^m||_{dO^eps} / ||u^m||_{H1(D^eps)}` over all samples.
    pub trace_ratio: f64,
    /// `sup_m E ||P(t_m)||^2`.
    pub pressure_bound: f64,
    pub identity_defect: f64,
}

pub fn energy_certificate(traj: &MicroTrajectory) -> Result<EnergyCertificate> {
    let ns = traj.samples.len();
    if ns < 8 {
        return Err(Error::Config(format!("energy certificate needs at least 8 samples, got {ns}")));
    }
    let eps = traj.epsilon;
    let dt = traj.grid.dt();
    let steps = traj.grid.steps;
    let mean = |f: &dyn Fn(&SampleSeries, usize) -> f64, m: usize| traj.samples.iter().map(|s| f(s, m)).sum::<f64>() / ns as f64;
    let mut dissipation = 0.0;
    let mut c_t: f64 = 0.0;
    let mut pressure_bound: f64 = 0.0;
    let denom = 1.0 + traj.initial_norm_sq;
    for m in 0..=steps {
        let state = mean(&|s, m| s.energy[m] + eps * eps * s.boundary[m], m);
        if m > 0 {
            dissipation += dt * mean(&|s, m| s.grad[m] + eps * eps * s.boundary[m], m);
        }
        c_t = c_t.max((state + dissipation) / denom);
        pressure_bound = pressure_bound.max(mean(&|s, m| s.pressure[m], m));
    }
    let sup_energy = traj
        .samples
        .iter()
        .map(|s| (0..=steps).map(|m| s.energy[m] + eps * eps * s.boundary[m]).fold(0.0, f64::max))
        .sum::<f64>()
        / ns as f64;
    let trace_ratio = traj
        .samples
        .iter()
        .flat_map(|s| (0..=steps).map(move |m| (s, m)))
        .filter(|(s, m)| s.energy[*m] + s.grad[*m] > 0.0)
        .map(|(s, m)| (eps * s.boundary[m] / (s.energy[m] + s.grad[m])).sqrt())
        .fold(0.0, f64::max);
    let identity_defect = traj.samples.iter().map(|s| s.identity_defect).fold(0.0, f64::max);
    Ok(EnergyCertificate { epsilon: eps, samples: ns, c_t, sup_energy, trace_ratio, pressure_bound, identity_defect })
}

/// Velocity on `D^eps` extended by zero into the holes.
#[derive(Debug, Clone)]
pub struct ExtendedField {
    /// `D^eps` triangles first, then the hole fans.
    pub mesh: TriMesh,
    pub n_dom: usize,
    pub nodal: Vec<[f64; 2]>,
    topo: crate::fem::P2Topology,
}

/// Zero extension of a velocity of `sys` to all of `D`.
pub fn extend_by_zero(sys: &MicroSystem, u: &[f64]) -> Result<ExtendedField> {
    if u.len() != sys.n_velocity_dofs() {
        return Err(Error::Mismatch(format!("velocity has {} dofs, system {}", u.len(), sys.n_velocity_dofs())));
    }
    let (mesh, n_dom) = sys.mesh.with_holes_filled();
    Ok(ExtendedField { mesh, n_dom, nodal: sys.space.expand_velocity(u), topo: sys.space.topo.clone() })
}

impl ExtendedField {
    /// `int_D f(x, u~(x), grad u~(x))`, with `u~ = 0` and `grad u~ = 0` in the holes.
    pub fn integrate<F: FnMut([f64; 2], [f64; 2], [[f64; 2]; 2]) -> f64>(&self, mut f: F) -> f64 {
        let dom = TriMesh { vertices: self.mesh.vertices.clone(), triangles: self.mesh.triangles[..self.n_dom].to_vec(), boundary_edges: vec![] };
        let field = VelocityField::new(&dom, &self.topo, &self.nodal);
        let inside = field.integrate(&mut f);
        let holes: f64 = (self.n_dom..self.mesh.triangles.len())
            .map(|t| {
                let el = Element::new(&self.mesh, t);
                TRI7.iter()
                    .map(|(l, w)| w * el.area * f(crate::fem::quadrature::bary_to_point(el.pts, *l), [0.0; 2], [[0.0; 2]; 2]))
                    .sum::<f64>()
            })
            .sum();
        inside + holes
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.integrate(|_, u, _| u[0] * u[0] + u[1] * u[1])
    }

    /// `<div u~, phi> = -int_D u~ . grad phi` for a scalar test with gradient `grad_phi`.
    pub fn distributional_divergence<G: Fn([f64; 2]) -> [f64; 2]>(&self, grad_phi: G) -> f64 {
        -self.integrate(|x, u, _| {
            let g = grad_phi(x);
            u[0] * g[0] + u[1] * g[1]
        })
    }
}

/// `int_{D^eps} |div u_h|^2` (pointwise; only the weak divergence vanishes).
pub fn pointwise_divergence_l2(sys: &MicroSystem, u: &[f64]) -> f64 {
    let nodal = sys.space.expand_velocity(u);
    let field = VelocityField::new(&sys.mesh.mesh, &sys.space.topo, &nodal);
    field.integrate(|_, _, g| (g[0][0] + g[1][1]).powi(2))
}

/// Per-sample right-endpoint sums `sum_m dt int u^m . phi_k`.
pub fn time_integrated_pairing(traj: &MicroTrajectory, k: usize) -> Vec<f64> {
    let dt = traj.grid.dt();
    traj.samples.iter().map(|s| dt * s.pairings[k][1..].iter().sum::<f64>()).collect()
}

/// Number of noise modes in the system (W1, W2).
pub fn noise_modes(sys: &MicroSystem) -> (usize, usize) {
    (sys.noise1.ncols(), sys.noise2.ncols())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_perforated_mesh, CellGeometry, Epsilon, Rect};
    use crate::noise::{sample_wiener, NoiseConfig};

    fn mesh(n: u32, r: f64) -> PerforatedMesh {
        build_perforated_mesh(&CellGeometry::new(r, 16), Epsilon::new(n).unwrap(), Rect::unit(), 0.08).unwrap()
    }

    fn params(steps: usize) -> MicroParams {
        MicroParams {
            u0: FieldSpec::sine([1, 1], [1.0, 1.0]),
            t_final: 0.05,
            steps,
            ..MicroParams::default()
        }
    }

    #[test]
    fn step_matrix_is_symmetric() {
        let m = mesh(4, 0.25);
        let sys = assemble_micro(&m, &params(5), None).unwrap();
        assert!(sys.step_matrix_symmetry_defect() < 1e-12);
        assert!(!sys.mean_constraint);
    }

    #[test]
    fn no_holes_uses_mean_constraint() {
        let m = mesh(2, 0.25);
        assert_eq!(m.num_holes(), 0);
        let p = MicroParams { b: 0.0, ..params(4) };
        let sys = assemble_micro(&m, &p, None).unwrap();
        assert!(sys.mean_constraint);
        assert_eq!(sys.boundary_mass.nnz(), 0);
        run_micro(&sys, &[], &RunOptions::default()).unwrap();
    }

    #[test]
    fn noise_free_energy_decreases() {
        let m = mesh(4, 0.25);
        let sys = assemble_micro(&m, &params(5), None).unwrap();
        let tr = run_micro(&sys, &[], &RunOptions::default()).unwrap();
        let s = &tr.samples[0];
        let eps = tr.epsilon;
        for k in 1..s.energy.len() {
            let (a, b) = (s.energy[k - 1] + eps * eps * s.boundary[k - 1], s.energy[k] + eps * eps * s.boundary[k]);
            assert!(b <= a * (1.0 + 1e-12), "step {k}: {b} > {a}");
        }
        assert!(s.identity_defect < 1e-8, "{}", s.identity_defect);
        assert!(s.solver_residual <= 1e-9);
    }

    #[test]
    fn noisy_identity_and_determinism() {
        let m = mesh(4, 0.25);
        let cfg = NoiseConfig { j: 8, ..NoiseConfig::default() };
        let ops = NoiseOperators::new(&cfg, Rect::unit(), m.geometry).unwrap();
        let sys = assemble_micro(&m, &params(4), Some(&ops)).unwrap();
        let g = sys.params.grid().unwrap();
        let paths: Vec<_> = (0..2).map(|s| sample_wiener(&ops.q1, &ops.q2, &g, s)).collect();
        let opts = RunOptions { test_functions: vec![FieldSpec::sine([1, 1], [1.0, 0.0])], keep_final: true };
        let a = run_micro(&sys, &paths, &opts).unwrap();
        let b = run_micro(&sys, &paths, &opts).unwrap();
        assert_eq!(a.samples, b.samples);
        assert!(a.samples.iter().all(|s| s.identity_defect < 1e-8));
        assert_ne!(a.samples[0].energy, a.samples[1].energy);
        // telescoping: P(T) equals the sum of increments, and starts at zero
        assert_eq!(a.samples[0].pressure[0], 0.0);
        assert!(a.finals[0].pressure.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn batches_concatenate() {
        let m = mesh(4, 0.25);
        let ops = NoiseOperators::new(&NoiseConfig { j: 4, ..NoiseConfig::default() }, Rect::unit(), m.geometry).unwrap();
        let sys = assemble_micro(&m, &params(2), Some(&ops)).unwrap();
        let g = sys.params.grid().unwrap();
        let paths: Vec<_> = (0..SAMPLE_BATCH as u64 + 2).map(|s| sample_wiener(&ops.q1, &ops.q2, &g, s)).collect();
        let all = run_micro(&sys, &paths, &RunOptions::default()).unwrap();
        assert_eq!(all.samples.len(), paths.len());
        let tail = run_micro(&sys, &paths[SAMPLE_BATCH..], &RunOptions::default()).unwrap();
        for (a, b) in all.samples[SAMPLE_BATCH..].iter().zip(&tail.samples) {
            assert_eq!(a.seed, b.seed);
            for (x, y) in a.energy.iter().zip(&b.energy) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-30));
            }
        }
    }

    #[test]
    fn zero_extension_preserves_norm() {
        let m = mesh(4, 0.25);
        let sys = assemble_micro(&m, &params(2), None).unwrap();
        let ones = sys.space.interpolate_velocity(&m.mesh, |_| [1.0, 0.0]);
        let ext = extend_by_zero(&sys, &ones).unwrap();
        assert!((ext.l2_norm_sq() - sys.mass.quad_form(&ones)).abs() < 1e-12);
        let u = sys.initial_state();
        let e = extend_by_zero(&sys, u).unwrap();
        assert!((e.l2_norm_sq() - sys.mass.quad_form(u)).abs() < 1e-12);
        // a divergence-free constant field has a nonzero distributional divergence across holes
        let d = ext.distributional_divergence(|x| {
            let (cx, cy) = (0.375, 0.375);
            let r2 = (x[0] - cx).powi(2) + (x[1] - cy).powi(2);
            let w = (-r2 / 0.01).exp();
            [-2.0 * (x[0] - cx) / 0.01 * w, -2.0 * (x[1] - cy) / 0.01 * w]
        });
        assert!(d.abs() > 1e-6, "{d}");
    }
}
