//! Saddle-point solves `A u - B^T p = f`, `B u = g`.
//!
//! The direct path factorizes the symmetric indefinite matrix
//! `[[A, B^T], [B, 0]]` acting on `(u, -p)` with a sparse LU. When the
//! pressure is only defined up to a constant, one extra multiplier row
//! enforces `c^T p = 0`. Uzawa (CG on the pressure Schur complement with
//! inner CG solves) is kept as an independent cross-check.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use serde::{Deserialize, Serialize};

use super::sparse::SparseMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    #[default]
    Direct,
    Uzawa,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub method: SolverMethod,
    /// Relative residual bound, re-verified after every solve.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { method: SolverMethod::Direct, tolerance: 1e-10, max_iterations: 20_000 }
    }
}

/// Blocks of a saddle-point system.
#[derive(Debug, Clone)]
pub struct SaddleSystem {
    pub a: SparseMatrix,
    pub b: Option<SparseMatrix>,
    /// Weights `c` of a mean constraint `c^T p = 0` (set when the pressure has a constant nullspace).
    pub mean_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// `|| [f - A u + B^T p; g - B u] || / || [f; g] ||` (absolute when the rhs is zero).
    pub relative: f64,
    pub momentum: f64,
    pub continuity: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct SaddleSolution {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub report: ResidualReport,
}

impl SaddleSystem {
    pub fn n_velocity(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_pressure(&self) -> usize {
        self.b.as_ref().map_or(0, |b| b.nrows())
    }

    fn check_shapes(&self) -> Result<()> {
        let n = self.a.nrows();
        if self.a.ncols() != n {
            return Err(Error::Mismatch("velocity block is not square".into()));
        }
        if let Some(b) = &self.b {
            if b.ncols() != n {
                return Err(Error::Mismatch(format!("divergence block has {} columns, expected {n}", b.ncols())));
            }
        }
        if let Some(c) = &self.mean_weights {
            if c.len() != self.n_pressure() {
                return Err(Error::Mismatch("mean-constraint weights do not match the pressure space".into()));
            }
        }
        Ok(())
    }

    /// A constant pressure satisfies `B^T 1 = 0` exactly when no boundary carries
    /// a natural condition; without a mean constraint the system is then singular.
    fn check_pressure_nullspace(&self) -> Result<()> {
        let (Some(b), None) = (&self.b, &self.mean_weights) else { return Ok(()) };
        if b.nrows() == 0 {
            return Ok(());
        }
        let bt1 = b.transpose_matvec(&vec![1.0; b.nrows()]);
        let scale = b.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let defect = bt1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if defect <= 1e-10 * scale {
            return Err(Error::SingularSystem(
                "constant pressure mode is undetermined: no natural boundary (e.g. no hole) and no mean-zero pressure constraint"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Block residual of `(u, p)` against `(f, g)`.
    pub fn residual(&self, u: &[f64], p: &[f64], f: &[f64], g: &[f64]) -> ResidualReport {
        let mut rm = f.to_vec();
        self.a.matvec_add(-1.0, u, &mut rm);
        let mut rc = g.to_vec();
        if let Some(b) = &self.b {
            let btp = b.transpose_matvec(p);
            rm.iter_mut().zip(&btp).for_each(|(r, v)| *r += v);
            b.matvec_add(-1.0, u, &mut rc);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let (nm, nc) = (norm(&rm), norm(&rc));
        let rhs = (norm(f).powi(2) + norm(g).powi(2)).sqrt();
        let total = (nm * nm + nc * nc).sqrt();
        ResidualReport {
            relative: if rhs > 0.0 { total / rhs } else { total },
            momentum: nm,
            continuity: nc,
            iterations: 0,
        }
    }
}

/// LU factorization of the full block matrix, reusable across right-hand sides.
pub struct SaddleFactorization {
    system: SaddleSystem,
    lu: Lu<usize, f64>,
    tolerance: f64,
}

impl std::fmt::Debug for SaddleFactorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SaddleFactorization")
            .field("n_velocity", &self.system.n_velocity())
            .field("n_pressure", &self.system.n_pressure())
            .finish()
    }
}

impl SaddleFactorization {
    pub fn new(system: SaddleSystem, cfg: &SolverConfig) -> Result<Self> {
        system.check_shapes()?;
        system.check_pressure_nullspace()?;
        let (n, m) = (system.n_velocity(), system.n_pressure());
        let extra = usize::from(system.mean_weights.is_some());
        let dim = n + m + extra;
        let mut trip = Vec::with_capacity(system.a.nnz() + 2 * system.b.as_ref().map_or(0, |b| b.nnz()) + 2 * m);
        for r in 0..n {
            trip.extend(system.a.row(r).map(|(c, v)| Triplet::new(r, c, v)));
        }
        if let Some(b) = &system.b {
            for q in 0..m {
                for (c, v) in b.row(q) {
                    trip.push(Triplet::new(n + q, c, v));
                    trip.push(Triplet::new(c, n + q, v));
                }
            }
        }
        if let Some(w) = &system.mean_weights {
            for (q, &v) in w.iter().enumerate() {
                trip.push(Triplet::new(n + m, n + q, v));
                trip.push(Triplet::new(n + q, n + m, v));
            }
        }
        let kkt = SparseColMat::<usize, f64>::try_new_from_triplets(dim, dim, &trip)
            .map_err(|e| Error::SingularSystem(format!("could not build block matrix: {e:?}")))?;
        drop(trip);
        let lu = kkt.sp_lu().map_err(|e| Error::SingularSystem(format!("sparse LU failed: {e:?}")))?;
        Ok(Self { system, lu, tolerance: cfg.tolerance })
    }

    pub fn system(&self) -> &SaddleSystem {
        &self.system
    }

    fn dim(&self) -> usize {
        self.system.n_velocity() + self.system.n_pressure() + usize::from(self.system.mean_weights.is_some())
    }

    pub fn solve(&self, f: &[f64], g: &[f64]) -> Result<SaddleSolution> {
        let (n, m) = (self.system.n_velocity(), self.system.n_pressure());
        let mut fm = Mat::<f64>::zeros(n, 1);
        let mut gm = Mat::<f64>::zeros(m, 1);
        fm.col_mut(0).iter_mut().zip(f).for_each(|(d, s)| *d = *s);
        gm.col_mut(0).iter_mut().zip(g).for_each(|(d, s)| *d = *s);
        let (u, p, reports) = self.solve_many(&fm, &gm)?;
        Ok(SaddleSolution {
            u: u.col(0).iter().copied().collect(),
            p: p.col(0).iter().copied().collect(),
            report: reports[0],
        })
    }

    /// Solves for every column of `f` (n x S) and `g` (m x S). Each column's
    /// residual is re-verified; up to three refinement sweeps are applied if needed.
    pub fn solve_many(&self, f: &Mat<f64>, g: &Mat<f64>) -> Result<(Mat<f64>, Mat<f64>, Vec<ResidualReport>)> {
        let (n, m) = (self.system.n_velocity(), self.system.n_pressure());
        let cols = f.ncols();
        if f.nrows() != n || g.nrows() != m || g.ncols() != cols {
            return Err(Error::Mismatch("right-hand side shape does not match the system".into()));
        }
        let mut u = Mat::<f64>::zeros(n, cols);
        let mut p = Mat::<f64>::zeros(m, cols);
        // residual rhs, initially the full rhs
        let mut rhs = Mat::<f64>::zeros(self.dim(), cols);
        for s in 0..cols {
            for r in 0..n {
                rhs[(r, s)] = f[(r, s)];
            }
            for q in 0..m {
                rhs[(n + q, s)] = g[(q, s)];
            }
        }
        let mut reports = vec![
            ResidualReport { relative: f64::INFINITY, momentum: 0.0, continuity: 0.0, iterations: 0 };
            cols
        ];
        for sweep in 0..4 {
            self.lu.solve_in_place(rhs.as_mut());
            for s in 0..cols {
                for r in 0..n {
                    u[(r, s)] += rhs[(r, s)];
                }
                for q in 0..m {
                    p[(q, s)] -= rhs[(n + q, s)];
                }
            }
            let mut worst: f64 = 0.0;
            for s in 0..cols {
                let us: Vec<f64> = u.col(s).iter().copied().collect();
                let ps: Vec<f64> = p.col(s).iter().copied().collect();
                let fs: Vec<f64> = f.col(s).iter().copied().collect();
                let gs: Vec<f64> = g.col(s).iter().copied().collect();
                let mut rep = self.system.residual(&us, &ps, &fs, &gs);
                if !rep.relative.is_finite() || us.iter().chain(&ps).any(|v| !v.is_finite()) {
                    return Err(Error::SingularSystem(
                        "factorization produced non-finite values (undetermined velocity or pressure mode)".into(),
                    ));
                }
                rep.iterations = sweep + 1;
                reports[s] = rep;
                worst = worst.max(rep.relative);
            }
            if worst <= self.tolerance {
                return Ok((u, p, reports));
            }
            // refinement: new rhs is the current residual
            for s in 0..cols {
                let us: Vec<f64> = u.col(s).iter().copied().collect();
                let ps: Vec<f64> = p.col(s).iter().copied().collect();
                let mut rm: Vec<f64> = f.col(s).iter().copied().collect();
                self.system.a.matvec_add(-1.0, &us, &mut rm);
                let mut rc: Vec<f64> = g.col(s).iter().copied().collect();
                if let Some(b) = &self.system.b {
                    let btp = b.transpose_matvec(&ps);
                    rm.iter_mut().zip(&btp).for_each(|(r, v)| *r += v);
                    b.matvec_add(-1.0, &us, &mut rc);
                }
                for (r, v) in rm.iter().enumerate() {
                    rhs[(r, s)] = *v;
                }
                for (q, v) in rc.iter().enumerate() {
                    rhs[(n + q, s)] = *v;
                }
                if self.dim() > n + m {
                    rhs[(n + m, s)] = 0.0;
                }
            }
        }
        let worst = reports.iter().map(|r| r.relative).fold(0.0, f64::max);
        Err(Error::SingularSystem(format!(
            "block residual {worst:.3e} above tolerance {:.1e} after refinement (ill-conditioned or singular system)",
            self.tolerance
        )))
    }
}

/// One-shot solve with the configured method.
pub fn solve_saddle(system: &SaddleSystem, f: &[f64], g: &[f64], cfg: &SolverConfig) -> Result<SaddleSolution> {
    match cfg.method {
        SolverMethod::Direct => SaddleFactorization::new(system.clone(), cfg)?.solve(f, g),
        SolverMethod::Uzawa => uzawa(system, f, g, cfg),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned CG for SPD `a`.
fn pcg(a: &SparseMatrix, rhs: &[f64], tol: f64, max_it: usize) -> Result<(Vec<f64>, usize)> {
    let n = rhs.len();
    let diag: Vec<f64> = a.diagonal().iter().map(|d| if *d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut x = vec![0.0; n];
    let bnorm = dot(rhs, rhs).sqrt();
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_it {
        a.matvec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::SingularSystem("velocity block is not positive definite".into()));
        }
        let alpha = rz / pap;
        x.iter_mut().zip(&p).for_each(|(x, p)| *x += alpha * p);
        r.iter_mut().zip(&ap).for_each(|(r, ap)| *r -= alpha * ap);
        if dot(&r, &r).sqrt() <= tol * bnorm {
            return Ok((x, it));
        }
        z.iter_mut().zip(r.iter().zip(&diag)).for_each(|(z, (r, d))| *z = r * d);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
    }
    Err(Error::NotConverged { iterations: max_it, residual: dot(&r, &r).sqrt() / bnorm })
}

/// CG on the Schur complement `S pi = B A^{-1} f - g` with `pi = -p`.
fn uzawa(system: &SaddleSystem, f: &[f64], g: &[f64], cfg: &SolverConfig) -> Result<SaddleSolution> {
    system.check_shapes()?;
    system.check_pressure_nullspace()?;
    let inner_tol = (cfg.tolerance * 1e-3).max(1e-15);
    let max_it = cfg.max_iterations;
    let Some(b) = &system.b else {
        let (u, it) = pcg(&system.a, f, inner_tol, max_it)?;
        let mut report = system.residual(&u, &[], f, g);
        report.iterations = it;
        return Ok(SaddleSolution { u, p: Vec::new(), report });
    };
    let m = b.nrows();
    let project = |v: &mut Vec<f64>| {
        // remove the constant mode when the pressure has a nullspace
        if system.mean_weights.is_some() {
            let mean = v.iter().sum::<f64>() / m as f64;
            v.iter_mut().for_each(|x| *x -= mean);
        }
    };
    let apply_s = |pi: &[f64]| -> Result<Vec<f64>> {
        let (x, _) = pcg(&system.a, &b.transpose_matvec(pi), inner_tol, max_it)?;
        let mut y = b.matvec(&x);
        project(&mut y);
        Ok(y)
    };
    let (u0, mut total_it) = pcg(&system.a, f, inner_tol, max_it)?;
    let mut rhs = b.matvec(&u0);
    rhs.iter_mut().zip(g).for_each(|(r, g)| *r -= g);
    project(&mut rhs);
    let mut pi = vec![0.0; m];
    let bnorm = dot(&rhs, &rhs).sqrt();
    if bnorm > 0.0 {
        let mut r = rhs.clone();
        let mut d = r.clone();
        let mut rr = dot(&r, &r);
        let mut converged = false;
        for _ in 0..max_it {
            total_it += 1;
            let sd = apply_s(&d)?;
            let dsd = dot(&d, &sd);
            if dsd <= 0.0 {
                break;
            }
            let alpha = rr / dsd;
            pi.iter_mut().zip(&d).for_each(|(x, d)| *x += alpha * d);
            r.iter_mut().zip(&sd).for_each(|(r, s)| *r -= alpha * s);
            let rr_new = dot(&r, &r);
            if rr_new.sqrt() <= cfg.tolerance * 1e-2 * bnorm {
                converged = true;
                break;
            }
            d.iter_mut().zip(&r).for_each(|(d, r)| *d = r + rr_new / rr * *d);
            rr = rr_new;
        }
        if !converged && dot(&r, &r).sqrt() > cfg.tolerance * bnorm {
            return Err(Error::NotConverged { iterations: total_it, residual: dot(&r, &r).sqrt() / bnorm });
        }
    }
    let mut frhs = f.to_vec();
    let btpi = b.transpose_matvec(&pi);
    frhs.iter_mut().zip(&btpi).for_each(|(f, v)| *f -= v);
    let (u, _) = pcg(&system.a, &frhs, inner_tol, max_it)?;
    let mut p: Vec<f64> = pi.iter().map(|x| -x).collect();
    if let Some(c) = &system.mean_weights {
        let shift = dot(c, &p) / c.iter().sum::<f64>();
        p.iter_mut().for_each(|x| *x -= shift);
    }
    let mut report = system.residual(&u, &p, f, g);
    report.iterations = total_it;
    if report.relative > cfg.tolerance {
        return Err(Error::NotConverged { iterations: total_it, residual: report.relative });
    }
    Ok(SaddleSolution { u, p, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::assembly::{assemble, FormKind};
    use crate::fem::space::{build_space, BcSpec};
    use crate::geometry::{build_rect_mesh, Rect};

    fn stokes(h: f64) -> (SaddleSystem, Vec<f64>) {
        let mesh = build_rect_mesh(Rect::unit(), h).unwrap();
        let s = build_space(&mesh, &[], &BcSpec::dirichlet_outer()).unwrap();
        let a = assemble(&mesh, &s, FormKind::Stiffness(1.0));
        let b = assemble(&mesh, &s, FormKind::Div);
        let w = crate::fem::assembly::pressure_load(&mesh, &s, |_| 1.0);
        let f = crate::fem::assembly::load_vector(&mesh, &s, |x| [x[1] - 0.5, x[0] * x[0]]);
        (SaddleSystem { a, b: Some(b), mean_weights: Some(w) }, f)
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let (sys, _) = stokes(0.25);
        let n = sys.n_velocity();
        let sol = solve_saddle(&sys, &vec![0.0; n], &vec![0.0; sys.n_pressure()], &SolverConfig::default()).unwrap();
        assert!(sol.u.iter().chain(&sol.p).all(|v| *v == 0.0));
        assert_eq!(sol.report.relative, 0.0);
    }

    #[test]
    fn missing_mean_constraint_is_reported() {
        let (mut sys, f) = stokes(0.25);
        sys.mean_weights = None;
        let err = solve_saddle(&sys, &f, &vec![0.0; sys.n_pressure()], &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::SingularSystem(ref m) if m.contains("mean")));
    }

    #[test]
    fn direct_and_uzawa_agree() {
        let (sys, f) = stokes(0.2);
        let g = vec![0.0; sys.n_pressure()];
        let d = solve_saddle(&sys, &f, &g, &SolverConfig::default()).unwrap();
        let cfg = SolverConfig { method: SolverMethod::Uzawa, ..SolverConfig::default() };
        let u = solve_saddle(&sys, &f, &g, &cfg).unwrap();
        assert!(d.report.relative <= 1e-10 && u.report.relative <= 1e-10);
        let diff = d.u.iter().zip(&u.u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-9, "{diff}");
        let pdiff = d.p.iter().zip(&u.p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(pdiff < 1e-7, "{pdiff}");
    }

    #[test]
    fn spd_only_cg_matches_factorization() {
        let (sys, f) = stokes(0.2);
        let spd = SaddleSystem { a: sys.a.clone(), b: None, mean_weights: None };
        let d = solve_saddle(&spd, &f, &[], &SolverConfig::default()).unwrap();
        let cfg = SolverConfig { method: SolverMethod::Uzawa, ..SolverConfig::default() };
        let c = solve_saddle(&spd, &f, &[], &cfg).unwrap();
        let diff = d.u.iter().zip(&c.u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-9);
    }
}
