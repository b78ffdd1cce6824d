//! Self-contained checks for the criteria that do not need the full eps sweep.

use std::f64::consts::PI;
use std::path::Path;

use super::config::RunConfig;
use super::study::{run_convergence_study, write_report, Verdict};
use crate::cell::{
    apply_volume, cell_residuals, effective_tensor_energy, effective_tensor_volume, solve_cell, solve_cell_basis,
    CellConfig, CellSolution, EffectiveTensor, Matrix2,
};
use crate::error::Result;
use crate::fem::SolverConfig;
use crate::fields::{FieldSpec, Forcing, TimeProfile};
use crate::geometry::{build_cell_mesh, build_rect_mesh, CellGeometry, Rect};
use crate::hom::{assemble_hom, run_hom, HomParams};
use crate::micro::RunOptions;
use crate::noise::{ito_isometry_check, mean_se, sample_wiener, verify_trace_class, NoiseConfig, NoiseOperators, TimeGrid};

fn cell_cfg(tol: f64) -> CellConfig {
    CellConfig { nu: 1.0, solver: SolverConfig { tolerance: tol, ..SolverConfig::default() } }
}

/// Volume and energy formulas agree for `r` in {0.1, 0.2, 0.3} on meshes with `h = r / 6`.
pub fn tensor_dual_formula() -> Result<Verdict> {
    let mut worst: f64 = 0.0;
    let mut detail = String::new();
    for r in [0.1, 0.2, 0.3] {
        let mesh = build_cell_mesh(&CellGeometry::new(r, 64), r / 6.0)?;
        let sols = solve_cell_basis(&mesh, &cell_cfg(1e-10))?;
        let gap = effective_tensor_volume(&sols, &mesh)?.max_abs_diff(&effective_tensor_energy(&sols, &mesh)?);
        worst = worst.max(gap);
        detail.push_str(&format!("r={r}: {gap:.1e} "));
    }
    Ok(Verdict { criterion_id: 1, value: worst, threshold: 1e-8, pass: worst <= 1e-8, detail: detail.trim_end().into() })
}

/// Symmetry and positivity of the tensor, and the exact no-hole case.
pub fn tensor_structure() -> Result<Verdict> {
    let mesh = build_cell_mesh(&CellGeometry::new(0.25, 64), 0.25 / 6.0)?;
    let c = effective_tensor_volume(&solve_cell_basis(&mesh, &cell_cfg(1e-10))?, &mesh)?;
    let (sym, eig) = (c.major_symmetry_defect(), c.min_eigenvalue());
    let plain = build_cell_mesh(&CellGeometry::new(0.0, 64), 1.0 / 12.0)?;
    let mut exact: f64 = 0.0;
    for lambda in [[[0.0, 1.0], [0.0, 0.0]], [[1.0, 0.0], [0.0, -1.0]], [[0.3, -0.7], [1.1, -0.3]]] {
        let s = solve_cell(lambda, &plain, &cell_cfg(1e-10))?;
        let cl = apply_volume(&s, &plain)?;
        for i in 0..2 {
            for j in 0..2 {
                exact = exact.max((cl[i][j] - lambda[i][j]).abs());
            }
        }
    }
    let pass = sym <= 1e-8 && eig > 0.0 && exact <= 1e-9;
    Ok(Verdict {
        criterion_id: 2,
        value: sym.max(exact),
        threshold: 1e-8,
        pass,
        detail: format!("major symmetry {sym:.1e}, min eigenvalue {eig:.4e}, no-hole |C L - nu L| {exact:.1e} (<= 1e-9)"),
    })
}

fn max_abs_diff(a: &CellSolution, b: &CellSolution, scale: f64) -> f64 {
    let w = a.w.iter().zip(&b.w).flat_map(|(x, y)| [(x[0] - scale * y[0]).abs(), (x[1] - scale * y[1]).abs()]);
    let q = a.q.iter().zip(&b.q).map(|(x, y)| (x - scale * y).abs());
    w.chain(q).fold(0.0, f64::max)
}

/// Divergence, periodicity, mean and linearity of the cell solutions.
pub fn cell_problem_residuals() -> Result<Verdict> {
    let mesh = build_cell_mesh(&CellGeometry::new(0.25, 64), 0.25 / 6.0)?;
    let cfg = cell_cfg(1e-10);
    let (mut div, mut per, mut mean): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for s in solve_cell_basis(&mesh, &cfg)? {
        let r = cell_residuals(&s, &mesh)?;
        div = div.max(r.divergence);
        per = per.max(r.periodicity);
        mean = mean.max(r.mean);
    }
    let lambda: Matrix2 = [[0.4, -1.2], [0.7, 0.9]];
    let one = solve_cell(lambda, &mesh, &cfg)?;
    let two = solve_cell([[0.8, -2.4], [1.4, 1.8]], &mesh, &cfg)?;
    let lin = max_abs_diff(&two, &one, 2.0);
    let pass = div <= 1e-9 && per <= 1e-9 && mean <= 1e-10 && lin <= 1e-10;
    Ok(Verdict {
        criterion_id: 3,
        value: div.max(per),
        threshold: 1e-9,
        pass,
        detail: format!("divergence {div:.1e}, periodicity {per:.1e}, mean {mean:.1e} (<= 1e-10), linearity {lin:.1e} (<= 1e-10)"),
    })
}

/// Observed orders `log2(e_i / e_{i+1})`.
pub fn observed_orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

const MMS_NU: f64 = 1.0;

fn mms_error(h: f64, steps: usize, t_final: f64, forcing: Forcing, exact_time: impl Fn(f64) -> f64) -> Result<f64> {
    let mesh = build_rect_mesh(Rect::unit(), h)?;
    let s = FieldSpec::sine([1, 1], [1.0, 1.0]);
    let params = HomParams { b: 0.0, forcing, u0: s.clone(), t_final, steps, area_ystar: 1.0, perim_hole: 0.0, ..HomParams::default() };
    let sys = assemble_hom(&mesh, Rect::unit(), &EffectiveTensor::isotropic(MMS_NU), &params, None)?;
    let traj = run_hom(&sys, &[], &RunOptions { keep_final: true, ..RunOptions::default() })?;
    let a = exact_time(t_final);
    Ok(sys.l2_error(&traj.finals[0], |x| {
        let v = s.eval(&Rect::unit(), x);
        [a * v[0], a * v[1]]
    }))
}

/// Spatial errors of `u = (1 + t) s` on `h = 1/4, 1/8, 1/16` (backward Euler is exact in time here).
pub fn manufactured_spatial() -> Result<Vec<f64>> {
    let lam = 2.0 * PI * PI * MMS_NU;
    let f = Forcing { terms: vec![(FieldSpec::sine([1, 1], [1.0, 1.0]), TimeProfile::Affine { a: 1.0 + lam, b: lam })] };
    [0.25, 0.125, 0.0625].iter().map(|&h| mms_error(h, 10, 0.1, f.clone(), |t| 1.0 + t)).collect()
}

/// Temporal errors of `u = exp(-t) s` with 10, 20, 40 steps on a fine mesh.
pub fn manufactured_temporal() -> Result<Vec<f64>> {
    let lam = 2.0 * PI * PI * MMS_NU;
    let f = Forcing { terms: vec![(FieldSpec::sine([1, 1], [1.0, 1.0]), TimeProfile::Exponential { a: lam - 1.0, rate: -1.0 })] };
    [10, 20, 40].iter().map(|&n| mms_error(1.0 / 32.0, n, 1.0, f.clone(), |t| (-t).exp())).collect()
}

fn sci(v: &[f64]) -> String {
    format!("[{}]", v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", "))
}

pub fn integrator_orders() -> Result<Verdict> {
    let (es, et) = (manufactured_spatial()?, manufactured_temporal()?);
    let (os, ot) = (observed_orders(&es), observed_orders(&et));
    let smin = os.iter().copied().fold(f64::INFINITY, f64::min);
    let tmin = ot.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Verdict {
        criterion_id: 4,
        value: smin,
        threshold: 1.9,
        pass: smin >= 1.9 && tmin >= 0.9,
        detail: format!("spatial errors {} orders {os:.3?}; temporal errors {} orders {ot:.3?} (>= 0.9)", sci(&es), sci(&et)),
    })
}

/// Ito isometry, trace-class saturation and independence of the two processes.
pub fn noise_fidelity(samples: usize) -> Result<Verdict> {
    let grid = TimeGrid::new(0.25, 250)?;
    let ops = NoiseOperators::new(&NoiseConfig::default(), Rect::unit(), CellGeometry::new(0.25, 64))?;
    let ito = ito_isometry_check(&ops, &grid, samples, 1 << 40);
    let trace = verify_trace_class(&ops, &grid, 0.01);
    let saturation = match &trace {
        Ok(r) => r.relative_change.iter().copied().fold(0.0, f64::max),
        Err(_) => f64::INFINITY,
    };
    // sum_j sqrt(l1_j l2_j) W1_j(T) W2_j(T) has mean zero iff the processes are uncorrelated
    let cross: Vec<f64> = (0..samples as u64)
        .map(|s| {
            let p = sample_wiener(&ops.q1, &ops.q2, &grid, (1 << 41) + s);
            (1..=ops.q1.j)
                .map(|j| {
                    let w1: f64 = (0..grid.steps).map(|m| p.dw1(m)[j - 1]).sum();
                    let w2: f64 = (0..grid.steps).map(|m| p.dw2(m)[j - 1]).sum();
                    (ops.q1.eigenvalue(j) * ops.q2.eigenvalue(j)).sqrt() * w1 * w2
                })
                .sum()
        })
        .collect();
    let (cm, cse) = mean_se(&cross);
    let z = (ito.estimate - ito.exact).abs() / ito.standard_error;
    let pass = ito.within(3.0) && saturation <= 0.01 && cm.abs() <= 3.0 * cse;
    Ok(Verdict {
        criterion_id: 5,
        value: z,
        threshold: 3.0,
        pass,
        detail: format!(
            "Ito {:.5e} vs {:.5e} ({} samples); J=32->64 change {saturation:.2e} (<= 1e-2); cross-covariance {cm:.2e} (3 SE {:.2e})",
            ito.estimate,
            ito.exact,
            ito.samples,
            3.0 * cse
        ),
    })
}

/// Runs `cfg` twice and compares every reproducible output byte for byte.
pub fn determinism(cfg: &RunConfig, scratch: &Path) -> Result<Verdict> {
    let (a, b) = (scratch.join("run_a"), scratch.join("run_b"));
    write_report(&run_convergence_study(cfg), &a)?;
    write_report(&run_convergence_study(cfg), &b)?;
    let mut names: Vec<String> = std::fs::read_dir(&a)?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .filter(|n| n != "timings.csv")
        .collect();
    names.sort();
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| std::fs::read(a.join(n.as_str())).ok() != std::fs::read(b.join(n.as_str())).ok())
        .collect();
    Ok(Verdict {
        criterion_id: 10,
        value: differing.len() as f64,
        threshold: 0.0,
        pass: differing.is_empty() && !names.is_empty(),
        detail: format!("{} files compared; differing: {differing:?}", names.len()),
    })
}

/// Small study used for determinism checks.
pub fn small_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.geometry = CellGeometry::new(0.25, 16);
    c.epsilons = vec![crate::geometry::Epsilon::new(4).expect("valid"), crate::geometry::Epsilon::new(8).expect("valid")];
    c.samples = 8;
    c.noise.j = 8;
    c.mesh.hom_h = 0.125;
    c.physics.t_final = 0.02;
    c.physics.dt = 0.0025;
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_of_geometric_sequence() {
        let o = observed_orders(&[1.0, 0.25, 0.0625]);
        assert!(o.iter().all(|v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn spatial_mms_converges() {
        let e = manufactured_spatial().unwrap();
        let o = observed_orders(&e);
        assert!(o.iter().all(|v| *v >= 1.9), "{e:?} {o:?}");
    }

    #[test]
    fn temporal_mms_first_order() {
        let e = manufactured_temporal().unwrap();
        let o = observed_orders(&e);
        assert!(o.iter().all(|v| *v >= 0.9 && *v < 1.3), "{e:?} {o:?}");
    }
}
