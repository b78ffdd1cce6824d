//! cell -> tensor -> hom -> micro sweep -> weak errors -> lemma checks.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::diagnostics::{lemma_checks, weak_error, LemmaTable, PairingSeries, WeakError};
use crate::cell::{
    cell_residuals, corrector_divergence_residual, effective_tensor_energy, effective_tensor_volume, solve_cell_basis,
    CellConfig, EffectiveTensor,
};
use crate::error::{Error, Result};
use crate::fem::SolverConfig;
use crate::fields::default_test_functions;
use crate::geometry::{build_cell_mesh, build_perforated_mesh, build_rect_mesh, cell_measures, Epsilon, PerforatedMesh};
use crate::hom::{assemble_hom, run_hom, HomParams, HomTrajectory};
use crate::micro::{assemble_micro, energy_certificate, run_micro, EnergyCertificate, MicroParams, MicroTrajectory, RunOptions};
use crate::noise::{sample_wiener, NoiseOperators, WienerPath};

/// Tensor stage output; independent of the noise block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSummary {
    pub tensor: EffectiveTensor,
    /// Largest entrywise gap between the volume and energy formulas.
    pub formula_gap: f64,
    pub major_symmetry_defect: f64,
    pub min_eigenvalue: f64,
    pub max_divergence_residual: f64,
    pub max_periodicity_defect: f64,
    pub max_mean: f64,
    /// Pointwise `|| div_y (Lambda y + w) ||_{L2}` for a generic gradient; only the weak
    /// divergence vanishes for Taylor-Hood, so this is a discretization measure.
    pub corrector_divergence: f64,
    pub cell_triangles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomSummary {
    pub velocity_dofs: usize,
    pub area_ystar: f64,
    pub perim_hole: f64,
    /// MC mean of `int |div u*(T)|^2`.
    pub div_sq: f64,
    /// Quadrature floor of the same functional.
    pub div_floor: f64,
    pub final_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonRow {
    pub epsilon: Epsilon,
    pub holes: usize,
    pub triangles: usize,
    pub velocity_dofs: usize,
    pub weak: Vec<WeakError>,
    /// `|int int (u~^eps - u*) phi_k|` of the noise-free runs; with additive noise this is the exact
    /// expectation the Monte-Carlo estimate targets. Empty when the noise is off (`weak` is then exact).
    pub noise_free: Vec<f64>,
    pub certificate: Option<EnergyCertificate>,
    pub solver_residual: f64,
    /// MC means of `||u^m||^2` and `||u^m||^2_{dO^eps}` at every step.
    pub energy_mean: Vec<f64>,
    pub boundary_mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: String,
    pub message: String,
}

/// One acceptance verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub criterion_id: u32,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2}: {} value={:.6e} threshold={:.3e} {}",
            self.criterion_id,
            if self.pass { "PASS" } else { "FAIL" },
            self.value,
            self.threshold,
            self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub config: RunConfig,
    pub tensor: Option<TensorSummary>,
    pub hom: Option<HomSummary>,
    /// Homogenized MC means per step: `(||u*||_{L2}, ||div u*||_{L2})`.
    pub hom_series: Vec<(f64, f64, f64)>,
    pub rows: Vec<EpsilonRow>,
    pub lemmas: Option<LemmaTable>,
    pub errors: Vec<StageError>,
    pub verdicts: Vec<Verdict>,
    /// Wall-clock seconds per stage; written separately since it is not reproducible.
    #[serde(skip)]
    pub timings: Vec<(String, f64)>,
}

impl ConvergenceReport {
    pub fn verdict(&self, id: u32) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.criterion_id == id)
    }
}

/// Runs the whole study; stage failures are recorded and the remaining stages still run where possible.
pub fn run_convergence_study(cfg: &RunConfig) -> ConvergenceReport {
    let mut rep = ConvergenceReport {
        config: cfg.clone(),
        tensor: None,
        hom: None,
        hom_series: vec![],
        rows: vec![],
        lemmas: None,
        errors: vec![],
        verdicts: vec![],
        timings: vec![],
    };
    if let Err(e) = cfg.validate() {
        rep.errors.push(StageError { stage: "config".into(), message: e.to_string() });
        return rep;
    }
    let clock = Instant::now();
    let lap = |rep: &mut ConvergenceReport, stage: &str| {
        rep.timings.push((stage.to_string(), clock.elapsed().as_secs_f64()));
        info!("{stage} done at {:.1}s", clock.elapsed().as_secs_f64());
    };
    let record = |rep: &mut ConvergenceReport, stage: &str, e: Error| {
        log::error!("stage {stage} failed: {e}");
        rep.errors.push(StageError { stage: stage.to_string(), message: e.to_string() });
    };

    let tensor = match compute_tensor(cfg) {
        Ok(t) => Some(t),
        Err(e) => {
            record(&mut rep, "tensor", e);
            None
        }
    };
    rep.tensor = tensor.clone();
    lap(&mut rep, "tensor");

    let (ops, paths) = match coupled_noise(cfg) {
        Ok(x) => x,
        Err(e) => {
            record(&mut rep, "noise", e);
            return rep;
        }
    };
    let opts = RunOptions { test_functions: default_test_functions(), keep_final: true };

    let (hom_traj, hom_free) = match &tensor {
        Some(t) => match hom_stage(cfg, &t.tensor, ops.as_ref(), &paths, &opts) {
            Ok((summary, series, traj, free)) => {
                rep.hom = Some(summary);
                rep.hom_series = series;
                (Some(traj), free)
            }
            Err(e) => {
                record(&mut rep, "hom", e);
                (None, None)
            }
        },
        None => (None, None),
    };
    lap(&mut rep, "hom");

    let mut meshes: Vec<PerforatedMesh> = Vec::new();
    for eps in cfg.sweep() {
        let stage = format!("micro eps={eps}");
        match micro_stage(cfg, eps, ops.as_ref(), &paths, &opts, hom_traj.as_ref(), hom_free.as_ref()) {
            Ok((row, mesh)) => {
                rep.rows.push(row);
                meshes.push(mesh);
            }
            Err(e) => record(&mut rep, &stage, e),
        }
        lap(&mut rep, &stage);
    }

    if meshes.len() >= 2 {
        let refs: Vec<&PerforatedMesh> = meshes.iter().collect();
        let certs: Vec<Option<&EnergyCertificate>> = rep.rows.iter().map(|r| r.certificate.as_ref()).collect();
        match lemma_checks(&refs, &certs) {
            Ok(t) => rep.lemmas = Some(t),
            Err(e) => record(&mut rep, "lemmas", e),
        }
        lap(&mut rep, "lemmas");
    }
    rep.verdicts = study_verdicts(&rep);
    rep
}

/// Noise operators and the coupled paths shared by every run of a study (none when the noise is off).
pub fn coupled_noise(cfg: &RunConfig) -> Result<(Option<NoiseOperators>, Vec<WienerPath>)> {
    if cfg.noise.is_off() {
        return Ok((None, vec![]));
    }
    let grid = cfg.physics.grid()?;
    let ops = NoiseOperators::new(&cfg.noise, cfg.domain, cfg.geometry)?;
    let paths = cfg.seeds().into_iter().map(|s| sample_wiener(&ops.q1, &ops.q2, &grid, s)).collect();
    Ok((Some(ops), paths))
}

/// Cell problems and tensor diagnostics (or the tensor file named in the config).
pub fn compute_tensor(cfg: &RunConfig) -> Result<TensorSummary> {
    if let Some(path) = &cfg.tensor_file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let t: TensorSummary = serde_json::from_str(&text).map_err(|e| Error::Config(format!("invalid tensor file: {e}")))?;
        t.tensor.validate()?;
        return Ok(t);
    }
    let mesh = build_cell_mesh(&cfg.geometry, cfg.mesh.cell_h)?;
    let cell_cfg = CellConfig { nu: cfg.physics.nu, solver: SolverConfig::default() };
    let sols = solve_cell_basis(&mesh, &cell_cfg)?;
    let vol = effective_tensor_volume(&sols, &mesh)?;
    let en = effective_tensor_energy(&sols, &mesh)?;
    let (mut div, mut per, mut mean) = (0.0f64, 0.0f64, 0.0f64);
    for s in &sols {
        let r = cell_residuals(s, &mesh)?;
        div = div.max(r.divergence);
        per = per.max(r.periodicity);
        mean = mean.max(r.mean);
    }
    let corrector_divergence = corrector_divergence_residual(&[[1.0, 0.5], [-0.3, -1.0]], &sols, &mesh)?;
    vol.validate()?;
    Ok(TensorSummary {
        formula_gap: vol.max_abs_diff(&en),
        major_symmetry_defect: vol.major_symmetry_defect(),
        min_eigenvalue: vol.min_eigenvalue(),
        tensor: vol,
        max_divergence_residual: div,
        max_periodicity_defect: per,
        max_mean: mean,
        corrector_divergence,
        cell_triangles: mesh.mesh.triangles.len(),
    })
}

pub fn hom_params(cfg: &RunConfig) -> Result<HomParams> {
    let (area_ystar, perim_hole) = cell_measures(&cfg.geometry).coefficients();
    Ok(HomParams {
        b: cfg.physics.b,
        sigma_b: cfg.physics.sigma_b,
        scaling: cfg.physics.scaling,
        forcing: cfg.physics.forcing.clone(),
        u0: cfg.physics.u0.clone(),
        t_final: cfg.physics.t_final,
        steps: cfg.physics.steps()?,
        area_ystar,
        perim_hole,
    })
}

pub fn micro_params(cfg: &RunConfig) -> Result<MicroParams> {
    Ok(MicroParams {
        nu: cfg.physics.nu,
        b: cfg.physics.b,
        forcing: cfg.physics.forcing.clone(),
        u0: cfg.physics.u0.clone(),
        t_final: cfg.physics.t_final,
        steps: cfg.physics.steps()?,
        ..MicroParams::default()
    })
}

type HomStage = (HomSummary, Vec<(f64, f64, f64)>, HomTrajectory, Option<HomTrajectory>);

fn hom_stage(cfg: &RunConfig, tensor: &EffectiveTensor, ops: Option<&NoiseOperators>, paths: &[WienerPath], opts: &RunOptions) -> Result<HomStage> {
    let mesh = build_rect_mesh(cfg.domain, cfg.mesh.hom_h)?;
    let params = hom_params(cfg)?;
    let sys = assemble_hom(&mesh, cfg.domain, tensor, &params, ops)?;
    let traj = run_hom(&sys, paths, opts)?;
    let noise_free = match ops {
        Some(_) => Some(run_hom(&sys, &[], &RunOptions { keep_final: false, ..opts.clone() })?),
        None => None,
    };
    let ns = traj.samples.len() as f64;
    let steps = traj.grid.steps;
    let series = (0..=steps)
        .map(|m| {
            let e = traj.samples.iter().map(|s| s.energy[m]).sum::<f64>() / ns;
            let d = traj.samples.iter().map(|s| s.div_sq[m]).sum::<f64>() / ns;
            (traj.grid.time(m), e.sqrt(), d.sqrt())
        })
        .collect::<Vec<_>>();
    let div_sq = series[steps].2.powi(2);
    let div_floor = traj.finals.iter().map(|u| sys.divergence_floor(u)).fold(0.0, f64::max);
    let summary = HomSummary {
        velocity_dofs: sys.n_velocity_dofs(),
        area_ystar: params.area_ystar,
        perim_hole: params.perim_hole,
        div_sq,
        div_floor,
        final_energy: series[steps].1.powi(2),
    };
    Ok((summary, series, traj, noise_free))
}

fn micro_stage(
    cfg: &RunConfig,
    eps: Epsilon,
    ops: Option<&NoiseOperators>,
    paths: &[WienerPath],
    opts: &RunOptions,
    hom: Option<&HomTrajectory>,
    hom_free: Option<&HomTrajectory>,
) -> Result<(EpsilonRow, PerforatedMesh)> {
    let mesh = build_perforated_mesh(&cfg.geometry, eps, cfg.domain, cfg.mesh.cell_h)?;
    let row = {
        let params = micro_params(cfg)?;
        let sys = assemble_micro(&mesh, &params, ops)?;
        info!("eps = {eps}: {} velocity dofs, {} holes", sys.n_velocity_dofs(), mesh.num_holes());
        let traj = run_micro(&sys, paths, &RunOptions { keep_final: false, ..opts.clone() })?;
        let certificate = {
            let k = cfg.certificate_samples.min(traj.samples.len());
            let head = MicroTrajectory { samples: traj.samples[..k].to_vec(), ..traj.clone() };
            if k >= 8 { Some(energy_certificate(&head)?) } else { None }
        };
        let mut weak = match hom {
            Some(h) => weak_error(&PairingSeries::from(&traj), &PairingSeries::from(h))?,
            None => vec![],
        };
        if ops.is_none() {
            // deterministic run: the single trajectory is exact
            weak.iter_mut().for_each(|w| w.standard_error = 0.0);
        }
        let noise_free = match (ops, hom_free) {
            (Some(_), Some(h)) => {
                let free = run_micro(&sys, &[], &RunOptions { keep_final: false, ..opts.clone() })?;
                weak_error(&PairingSeries::from(&free), &PairingSeries::from(h))?.iter().map(|w| w.value).collect()
            }
            _ => vec![],
        };
        let ns = traj.samples.len() as f64;
        let mean = |f: &dyn Fn(&crate::micro::SampleSeries) -> &Vec<f64>| {
            (0..=traj.grid.steps).map(|m| traj.samples.iter().map(|s| f(s)[m]).sum::<f64>() / ns).collect::<Vec<_>>()
        };
        let row = EpsilonRow {
            epsilon: eps,
            holes: mesh.num_holes(),
            triangles: mesh.mesh.triangles.len(),
            velocity_dofs: sys.n_velocity_dofs(),
            weak,
            noise_free,
            certificate,
            solver_residual: traj.samples.iter().map(|s| s.solver_residual).fold(0.0, f64::max),
            energy_mean: mean(&|s| &s.energy),
            boundary_mean: mean(&|s| &s.boundary),
        };
        row
    };
    Ok((row, mesh))
}

/// Verdicts for the criteria the study itself decides (6-9).
pub fn study_verdicts(rep: &ConvergenceReport) -> Vec<Verdict> {
    let mut out = Vec::new();
    let certs: Vec<&EnergyCertificate> = rep.rows.iter().filter_map(|r| r.certificate.as_ref()).collect();
    if certs.len() >= 2 && certs.len() == rep.rows.len() {
        let c: Vec<f64> = certs.iter().map(|c| c.c_t).collect();
        let (lo, hi) = (c.iter().copied().fold(f64::INFINITY, f64::min), c.iter().copied().fold(0.0, f64::max));
        let defect = certs.iter().map(|c| c.identity_defect).fold(0.0, f64::max);
        let ratio = hi / lo;
        out.push(Verdict {
            criterion_id: 6,
            value: ratio,
            threshold: 2.0,
            pass: ratio < 2.0 && defect < 1e-8,
            detail: format!("C_T = {c:.4?}, energy-identity defect {defect:.1e}"),
        });
    }
    if let Some(l) = &rep.lemmas {
        let growth = l.trace_growth.max(l.lift_growth).max(l.pressure_growth.unwrap_or(1.0));
        out.push(Verdict {
            criterion_id: 7,
            value: growth,
            threshold: 2.0,
            pass: growth <= 2.0 && l.s2v_one_max <= 1e-12 && l.s2v_x1_decreasing && l.pressure_growth.is_some(),
            detail: format!(
                "growth trace {:.3} lift {:.3} pressure {:?}; s2v(1) {:.1e}; s2v(x1) decreasing {}",
                l.trace_growth, l.lift_growth, l.pressure_growth, l.s2v_one_max, l.s2v_x1_decreasing
            ),
        });
    }
    if rep.rows.len() >= 2 && rep.rows.iter().all(|r| !r.weak.is_empty()) {
        let (margin, detail) = weak_decrease_margin(&rep.rows);
        out.push(Verdict { criterion_id: 8, value: margin, threshold: 1.0, pass: margin > 1.0, detail });
    }
    if let (Some(h), Some(t)) = (&rep.hom, &rep.tensor) {
        let ratio = if h.div_floor > 0.0 { h.div_sq / h.div_floor } else { f64::INFINITY };
        out.push(Verdict {
            criterion_id: 9,
            value: ratio,
            threshold: 10.0,
            pass: ratio > 10.0 && t.max_divergence_residual <= 1e-9,
            detail: format!(
                "int|div u*|^2 = {:.3e}, floor {:.3e}; cell weak div residual {:.1e} (<= 1e-9), pointwise corrector div {:.1e}",
                h.div_sq, h.div_floor, t.max_divergence_residual, t.corrector_divergence
            ),
        });
    }
    out
}

/// Smallest `(e_coarse - e_fine) / (3 SE)` over consecutive eps and test functions, with the SE of
/// the paired per-sample difference (both runs share the paths).
pub fn weak_decrease_margin(rows: &[EpsilonRow]) -> (f64, String) {
    let mut margin = f64::INFINITY;
    let mut detail = String::new();
    let nk = rows[0].weak.len();
    for k in 0..nk {
        let _ = write!(detail, "phi{}: ", k + 1);
        for w in rows.windows(2) {
            let (a, b) = (&w[0].weak[k], &w[1].weak[k]);
            let (sa, sb) = (sign_of_mean(&a.diffs), sign_of_mean(&b.diffs));
            let paired: Vec<f64> = a.diffs.iter().zip(&b.diffs).map(|(x, y)| sa * x - sb * y).collect();
            let (dec, se) = match a.standard_error == 0.0 && b.standard_error == 0.0 {
                true => (paired.iter().sum::<f64>() / paired.len() as f64, 0.0),
                false => crate::noise::mean_se(&paired),
            };
            let m = if se > 0.0 { dec / (3.0 * se) } else if dec > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
            margin = margin.min(m);
            let _ = write!(detail, "{:.3e}->{:.3e} (se {:.1e}", a.value, b.value, se);
            if let (Some(fa), Some(fb)) = (w[0].noise_free.get(k), w[1].noise_free.get(k)) {
                let _ = write!(detail, ", noise-free {fa:.3e}->{fb:.3e}");
            }
            detail.push_str(") ");
        }
    }
    (margin, detail.trim_end().to_string())
}

fn sign_of_mean(v: &[f64]) -> f64 {
    if v.iter().sum::<f64>() >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

/// Writes `report.csv`, `hom.csv`, `micro_eps_N.csv`, `tensor.json`, `summary.json`, `errors.json`
/// (all reproducible) and `timings.csv`.
pub fn write_report(rep: &ConvergenceReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let nk = rep.rows.iter().map(|r| r.weak.len()).max().unwrap_or(0);
    let mut csv = String::from("epsilon,holes,triangles,velocity_dofs");
    for k in 1..=nk {
        let _ = write!(csv, ",weak_error_phi{k},weak_se_phi{k},noise_free_phi{k}");
    }
    csv.push_str(",c_t,sup_energy,trace_ratio_dynamic,pressure_bound,identity_defect,solver_residual,trace_ratio,lift_ratio,s2v_one,s2v_x1\n");
    for (i, r) in rep.rows.iter().enumerate() {
        let _ = write!(csv, "{},{},{},{}", r.epsilon, r.holes, r.triangles, r.velocity_dofs);
        for k in 0..nk {
            match r.weak.get(k) {
                Some(w) => {
                    let _ = write!(csv, ",{:e},{:e},{}", w.value, w.standard_error, fmt_opt(r.noise_free.get(k).copied()));
                }
                None => csv.push_str(",,,"),
            }
        }
        let c = r.certificate.as_ref();
        let l = rep.lemmas.as_ref().and_then(|l| l.rows.get(i));
        let _ = writeln!(
            csv,
            ",{},{},{},{},{},{:e},{},{},{},{}",
            fmt_opt(c.map(|c| c.c_t)),
            fmt_opt(c.map(|c| c.sup_energy)),
            fmt_opt(c.map(|c| c.trace_ratio)),
            fmt_opt(c.map(|c| c.pressure_bound)),
            fmt_opt(c.map(|c| c.identity_defect)),
            r.solver_residual,
            fmt_opt(l.map(|l| l.trace_ratio)),
            fmt_opt(l.map(|l| l.lift_ratio)),
            fmt_opt(l.map(|l| l.s2v_one)),
            fmt_opt(l.map(|l| l.s2v_x1)),
        );
    }
    std::fs::write(dir.join("report.csv"), csv)?;

    let dt = rep.config.physics.dt;
    if !rep.hom_series.is_empty() {
        let mut h = String::from("t,l2_norm,div_l2\n");
        for (t, e, d) in &rep.hom_series {
            let _ = writeln!(h, "{t:e},{e:e},{d:e}");
        }
        std::fs::write(dir.join("hom.csv"), h)?;
    }
    for r in &rep.rows {
        let mut m = String::from("t,energy,boundary_energy\n");
        for (i, (e, b)) in r.energy_mean.iter().zip(&r.boundary_mean).enumerate() {
            let _ = writeln!(m, "{:e},{e:e},{b:e}", i as f64 * dt);
        }
        std::fs::write(dir.join(format!("micro_eps_{}.csv", r.epsilon.denominator())), m)?;
    }
    if let Some(t) = &rep.tensor {
        std::fs::write(dir.join("tensor.json"), serde_json::to_string_pretty(t)?)?;
    }
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&rep.verdicts)?)?;
    std::fs::write(dir.join("errors.json"), serde_json::to_string_pretty(&rep.errors)?)?;
    let mut tm = String::from("stage,elapsed_s\n");
    for (s, t) in &rep.timings {
        let _ = writeln!(tm, "{s},{t:.3}");
    }
    std::fs::write(dir.join("timings.csv"), tm)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        let mut c = RunConfig::default();
        c.geometry = crate::geometry::CellGeometry::new(0.25, 16);
        c.epsilons = vec![Epsilon::new(4).unwrap()];
        c.mesh.cell_h = 1.0 / 12.0;
        c.mesh.hom_h = 0.125;
        c.samples = 2;
        c.noise.j = 4;
        c.physics.t_final = 0.02;
        c.physics.dt = 0.005;
        c
    }

    #[test]
    fn single_epsilon_has_no_convergence_verdict() {
        let rep = run_convergence_study(&tiny());
        assert!(rep.errors.is_empty(), "{:?}", rep.errors);
        assert_eq!(rep.rows.len(), 1);
        assert!(rep.verdict(8).is_none());
        assert!(rep.lemmas.is_none());
        assert!(rep.verdict(9).is_some());
    }

    #[test]
    fn noise_free_column_matches_a_noise_off_run() {
        let noisy = run_convergence_study(&tiny());
        let mut c = tiny();
        (c.noise.sigma1, c.noise.sigma2, c.noise.sigma3) = (0.0, 0.0, 0.0);
        let quiet = run_convergence_study(&c);
        let (a, b) = (&noisy.rows[0], &quiet.rows[0]);
        assert!(b.noise_free.is_empty());
        assert_eq!(a.noise_free.len(), b.weak.len());
        for (f, w) in a.noise_free.iter().zip(&b.weak) {
            assert_eq!(w.standard_error, 0.0);
            assert!((f - w.value).abs() <= 1e-12 * w.value.abs().max(1e-12), "{f} vs {}", w.value);
        }
    }

    #[test]
    fn tensor_block_is_seed_independent() {
        let a = tiny();
        let mut b = tiny();
        b.noise.seed = 7;
        let (ra, rb) = (run_convergence_study(&a), run_convergence_study(&b));
        assert_eq!(ra.tensor, rb.tensor);
        assert_ne!(ra.rows[0].weak, rb.rows[0].weak);
    }

    #[test]
    fn stage_failures_are_recorded() {
        let mut c = tiny();
        c.epsilons = vec![Epsilon::new(4).unwrap(), Epsilon::new(5).unwrap()];
        c.domain = crate::geometry::Rect { min: [0.0, 0.0], max: [1.0, 0.5] };
        let rep = run_convergence_study(&c);
        assert!(rep.errors.iter().any(|e| e.stage == "micro eps=1/5"), "{:?}", rep.errors);
        assert_eq!(rep.rows.len(), 1);
        let dir = tempfile::tempdir().unwrap();
        write_report(&rep, dir.path()).unwrap();
        assert!(dir.path().join("errors.json").exists());
    }

    #[test]
    fn reports_are_byte_identical() {
        let c = tiny();
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_report(&run_convergence_study(&c), d1.path()).unwrap();
        write_report(&run_convergence_study(&c), d2.path()).unwrap();
        for f in ["report.csv", "hom.csv", "micro_eps_4.csv", "tensor.json", "summary.json"] {
            assert_eq!(std::fs::read(d1.path().join(f)).unwrap(), std::fs::read(d2.path().join(f)).unwrap(), "{f}");
        }
    }
}
