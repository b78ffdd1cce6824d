//! Two-scale pairings, weak errors and the lemma residual table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::FieldSpec;
use crate::geometry::{surface_to_volume_over, surface_to_volume_residual, BoundaryTag, PerforatedMesh, TriMesh, VolumeRegion};
use crate::hom::HomTrajectory;
use crate::micro::{EnergyCertificate, ExtendedField, MicroTrajectory};
use crate::noise::{lift_boundary_noise, mean_se, TimeGrid};

/// `int_D u(x) phi(x) psi(x / eps) dx` with `psi` Y-periodic.
pub fn two_scale_pairing<U, P, S>(mesh: &TriMesh, u: U, phi: P, psi: S, eps: f64) -> f64
where
    U: Fn([f64; 2]) -> f64,
    P: Fn([f64; 2]) -> f64,
    S: Fn([f64; 2]) -> f64,
{
    mesh.integrate(|x| u(x) * phi(x) * psi(periodic(x, eps)))
}

/// Same pairing for one component of a zero-extended velocity.
pub fn two_scale_pairing_extended<P, S>(field: &ExtendedField, component: usize, phi: P, psi: S, eps: f64) -> f64
where
    P: Fn([f64; 2]) -> f64,
    S: Fn([f64; 2]) -> f64,
{
    field.integrate(|x, u, _| u[component] * phi(x) * psi(periodic(x, eps)))
}

fn periodic(x: [f64; 2], eps: f64) -> [f64; 2] {
    [(x[0] / eps).rem_euclid(1.0), (x[1] / eps).rem_euclid(1.0)]
}

/// Per-sample histories of `int u . phi_k`, the common input of [`weak_error`].
#[derive(Debug, Clone, PartialEq)]
pub struct PairingSeries {
    pub seeds: Vec<u64>,
    pub grid: TimeGrid,
    /// `[sample][k][m]`.
    pub values: Vec<Vec<Vec<f64>>>,
}

impl From<&MicroTrajectory> for PairingSeries {
    fn from(t: &MicroTrajectory) -> Self {
        Self {
            seeds: t.samples.iter().map(|s| s.seed).collect(),
            grid: t.grid,
            values: t.samples.iter().map(|s| s.pairings.clone()).collect(),
        }
    }
}

impl From<&HomTrajectory> for PairingSeries {
    fn from(t: &HomTrajectory) -> Self {
        Self {
            seeds: t.samples.iter().map(|s| s.seed).collect(),
            grid: t.grid,
            values: t.samples.iter().map(|s| s.pairings.clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakError {
    /// `|E int_0^T int_D (u~ - u*) . phi|`.
    pub value: f64,
    /// MC standard error of the mean difference.
    pub standard_error: f64,
    pub samples: usize,
    /// Per-sample `int_0^T int_D (u~ - u*) . phi` (for paired comparisons across eps).
    pub diffs: Vec<f64>,
}

/// Weak error per test function. Both sides must be driven by the same paths.
pub fn weak_error(micro: &PairingSeries, hom: &PairingSeries) -> Result<Vec<WeakError>> {
    if micro.seeds != hom.seeds {
        return Err(Error::UncoupledNoise(format!(
            "micro seeds {:?} vs homogenized seeds {:?}; the weak error would be Monte-Carlo dominated",
            preview(&micro.seeds),
            preview(&hom.seeds)
        )));
    }
    if micro.grid != hom.grid {
        return Err(Error::Mismatch(format!("time grids differ: {:?} vs {:?}", micro.grid, hom.grid)));
    }
    let nk = micro.values.first().map_or(0, Vec::len);
    if micro.values.iter().chain(&hom.values).any(|s| s.len() != nk) {
        return Err(Error::Mismatch("test-function counts differ".into()));
    }
    let dt = micro.grid.dt();
    Ok((0..nk)
        .map(|k| {
            // right-endpoint rule over [0, T], matching the implicit steps
            let diffs: Vec<f64> = micro
                .values
                .iter()
                .zip(&hom.values)
                .map(|(a, b)| dt * a[k][1..].iter().zip(&b[k][1..]).map(|(x, y)| x - y).sum::<f64>())
                .collect();
            let (mean, se) = mean_se(&diffs);
            WeakError { value: mean.abs(), standard_error: se, samples: diffs.len(), diffs }
        })
        .collect())
}

fn preview(s: &[u64]) -> &[u64] {
    &s[..s.len().min(3)]
}

/// One row of the lemma table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaRow {
    pub epsilon: f64,
    /// `sqrt(eps) ||u||_{dO^eps} / ||u||_{H1(D^eps)}` for a fixed smooth `u`.
    pub trace_ratio: f64,
    /// The same ratio along the simulated trajectories, when available.
    pub trace_ratio_dynamic: Option<f64>,
    /// `sqrt(eps) ||R^eps h|| / ||h||_{L2(dO)}`.
    pub lift_ratio: f64,
    /// Surface-to-volume residual for `v = 1`.
    pub s2v_one: f64,
    /// Surface-to-volume residual for `v = x1` over all of `D^eps` (boundary layer included).
    pub s2v_x1: f64,
    /// `sup_m E ||P(t_m)||^2`, when trajectories are available.
    pub pressure_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaTable {
    pub rows: Vec<LemmaRow>,
    /// Largest ratio `v_later / v_earlier` of each bounded quantity over the sweep.
    pub trace_growth: f64,
    pub lift_growth: f64,
    pub pressure_growth: Option<f64>,
    pub s2v_one_max: f64,
    pub s2v_x1_decreasing: bool,
}

/// Largest `v[j] / v[i]` for `i < j` (1 for fewer than two values).
pub fn max_growth(v: &[f64]) -> f64 {
    let mut g: f64 = 1.0;
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            if v[i] > 0.0 {
                g = g.max(v[j] / v[i]);
            } else if v[j] > 0.0 {
                g = f64::INFINITY;
            }
        }
    }
    g
}

/// Lemma residuals over an eps sweep (meshes ordered coarse to fine).
pub fn lemma_checks(meshes: &[&PerforatedMesh], certificates: &[Option<&EnergyCertificate>]) -> Result<LemmaTable> {
    if meshes.len() < 2 {
        return Err(Error::Config(format!("lemma checks need at least two eps values, got {}", meshes.len())));
    }
    let smooth = FieldSpec::sine([1, 1], [1.0, 1.0]);
    let h = |_: [f64; 2], th: f64| [1.0, th.cos()];
    let rows: Vec<LemmaRow> = meshes
        .iter()
        .enumerate()
        .map(|(i, pm)| {
            let eps = pm.epsilon.value();
            let d = pm.domain;
            let m = &pm.mesh;
            let bd = m.integrate_boundary(BoundaryTag::Hole, |x| {
                let v = smooth.eval(&d, x);
                v[0] * v[0] + v[1] * v[1]
            });
            let h1 = m.integrate(|x| {
                let v = smooth.eval(&d, x);
                let g = smooth.gradient(&d, x);
                v[0] * v[0] + v[1] * v[1] + g.iter().flatten().map(|a| a * a).sum::<f64>()
            });
            let lifted = lift_boundary_noise(h, pm);
            let h_ref = pm.geometry.boundary_integral(|y, th| {
                let v = h(y, th);
                v[0] * v[0] + v[1] * v[1]
            });
            let cert = certificates.get(i).copied().flatten();
            LemmaRow {
                epsilon: eps,
                trace_ratio: (eps * bd / h1).sqrt(),
                trace_ratio_dynamic: cert.map(|c| c.trace_ratio),
                lift_ratio: (eps * lifted.norm_sq() / h_ref).sqrt(),
                s2v_one: surface_to_volume_residual(|_| 1.0, pm).residual,
                s2v_x1: surface_to_volume_over(|x| x[0], pm, VolumeRegion::Whole).residual,
                pressure_bound: cert.map(|c| c.pressure_bound),
            }
        })
        .collect();
    let col = |f: &dyn Fn(&LemmaRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let mut trace_growth = max_growth(&col(&|r| r.trace_ratio));
    if rows.iter().all(|r| r.trace_ratio_dynamic.is_some()) {
        trace_growth = trace_growth.max(max_growth(&col(&|r| r.trace_ratio_dynamic.unwrap_or(0.0))));
    }
    let pressure_growth = rows
        .iter()
        .all(|r| r.pressure_bound.is_some())
        .then(|| max_growth(&col(&|r| r.pressure_bound.unwrap_or(0.0))));
    let x1 = col(&|r| r.s2v_x1);
    Ok(LemmaTable {
        trace_growth,
        lift_growth: max_growth(&col(&|r| r.lift_ratio)),
        pressure_growth,
        s2v_one_max: col(&|r| r.s2v_one).into_iter().fold(0.0, f64::max),
        s2v_x1_decreasing: x1.windows(2).all(|w| w[1] < w[0]),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_perforated_mesh, build_rect_mesh, CellGeometry, Epsilon, Rect};

    fn pm(n: u32) -> PerforatedMesh {
        build_perforated_mesh(&CellGeometry::new(0.25, 16), Epsilon::new(n).unwrap(), Rect::unit(), 1.0 / 12.0).unwrap()
    }

    #[test]
    fn pairing_with_unit_profile_is_plain_integral() {
        let m = build_rect_mesh(Rect::unit(), 0.1).unwrap();
        let u = |x: [f64; 2]| x[0] * x[1];
        let phi = |x: [f64; 2]| 1.0 + x[0];
        let a = two_scale_pairing(&m, u, phi, |_| 1.0, 0.25);
        assert!((a - m.integrate(|x| u(x) * phi(x))).abs() < 1e-15);
        assert!((a - (1.0 / 4.0 + 1.0 / 6.0)).abs() < 1e-12);
    }

    #[test]
    fn oscillatory_pairing_tends_to_cell_average() {
        use std::f64::consts::PI;
        // int_Y psi = 1/4
        let psi = |y: [f64; 2]| (PI * y[0]).sin().powi(2) * (PI * y[1]).cos().powi(2);
        let m = build_rect_mesh(Rect::unit(), 1.0 / 128.0).unwrap();
        for eps in [0.25, 0.125, 0.0625] {
            let v = two_scale_pairing(&m, |_| 1.0, |_| 1.0, psi, eps);
            assert!((v - 0.25).abs() < 1e-5, "{eps}: {v}");
        }
        // non-integer cell counts converge
        let errs: Vec<f64> = [0.3, 0.15, 0.075]
            .iter()
            .map(|&e| (two_scale_pairing(&m, |_| 1.0, |_| 1.0, |y| y[0], e) - 0.5).abs())
            .collect();
        assert!(errs[2] < errs[0]);
    }

    #[test]
    fn indicator_pairing_is_area() {
        let p = pm(4);
        let v = two_scale_pairing(&p.mesh, |_| 1.0, |_| 1.0, |_| 1.0, 0.25);
        assert!((v - p.mesh.area()).abs() < 1e-12, "{v}");
    }

    fn series(seeds: Vec<u64>, vals: Vec<f64>) -> PairingSeries {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        PairingSeries { values: seeds.iter().map(|_| vec![vals.clone()]).collect(), seeds, grid }
    }

    #[test]
    fn self_weak_error_is_zero() {
        let a = series(vec![1, 2, 3], vec![0.0, 1.0, 2.0]);
        let e = weak_error(&a, &a).unwrap();
        assert_eq!(e[0].value, 0.0);
        let b = series(vec![1, 2, 3], vec![0.0, 0.0, 0.0]);
        assert!((weak_error(&a, &b).unwrap()[0].value - 1.5).abs() < 1e-15);
    }

    #[test]
    fn uncoupled_seeds_refused() {
        let a = series(vec![1, 2], vec![0.0, 1.0, 2.0]);
        let b = series(vec![1, 3], vec![0.0, 1.0, 2.0]);
        assert!(matches!(weak_error(&a, &b), Err(Error::UncoupledNoise(_))));
    }

    #[test]
    fn growth() {
        assert_eq!(max_growth(&[1.0]), 1.0);
        assert_eq!(max_growth(&[2.0, 1.0, 1.5]), 1.5);
        assert_eq!(max_growth(&[2.0, 1.5, 1.0]), 1.0);
        assert_eq!(max_growth(&[1.0, 3.0, 2.0]), 3.0);
    }

    #[test]
    fn lemma_table_bounded() {
        let (a, b, c) = (pm(4), pm(8), pm(16));
        let t = lemma_checks(&[&a, &b, &c], &[None, None, None]).unwrap();
        assert!(t.trace_growth < 2.0, "{:?}", t.rows);
        assert!(t.lift_growth < 2.0, "{:?}", t.rows);
        assert!(t.s2v_one_max < 1e-12);
        assert!(t.s2v_x1_decreasing, "{:?}", t.rows);
        assert!(t.pressure_growth.is_none());
        assert!(lemma_checks(&[&a], &[None]).is_err());
    }
}
