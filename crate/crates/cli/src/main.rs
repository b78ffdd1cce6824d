use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use stokes_homog::fields::default_test_functions;
use stokes_homog::geometry::{build_cell_mesh, build_perforated_mesh, build_rect_mesh, write_mesh_dump, Epsilon, TriMesh};
use stokes_homog::harness::{checks, compute_tensor, coupled_noise, hom_params, micro_params, run_convergence_study, write_report, RunConfig, TensorSummary, Verdict};
use stokes_homog::hom::{assemble_hom, run_hom};
use stokes_homog::micro::{assemble_micro, run_micro, RunOptions};

#[derive(Parser)]
#[command(name = "stokes-homog", version, about = "Homogenization experiments for the stochastic Stokes problem in perforated domains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration (defaults are used for missing fields).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write the reference cell mesh and the perforated mesh for one eps.
    Mesh {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "1/8")]
        epsilon: Epsilon,
    },
    /// Solve the cell problems and print their residuals.
    Cell {
        #[command(flatten)]
        common: Common,
    },
    /// Compute the effective tensor (`tensor.json`, `tensor.csv`).
    Tensor {
        #[command(flatten)]
        common: Common,
    },
    /// Integrate the homogenized equation.
    SimulateHom {
        #[command(flatten)]
        common: Common,
        /// Tensor JSON written by `tensor`; computed when absent.
        #[arg(long)]
        tensor: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Integrate the microscale system for one eps.
    SimulateMicro {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "1/8")]
        epsilon: Epsilon,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Full convergence study.
    Converge {
        #[command(flatten)]
        common: Common,
    },
    /// Quick self-checks (tensor, cell residuals, integrator orders, noise, determinism).
    Check {
        #[command(flatten)]
        common: Common,
        /// Monte-Carlo samples for the noise checks.
        #[arg(long, default_value_t = 10_000)]
        noise_samples: usize,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    match &common.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn dump(path: &Path, mesh: &TriMesh, periodic: &[(usize, usize)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write_mesh_dump(&mut f, mesh, periodic)?;
    Ok(())
}

/// Vertex values of a P2 velocity next to the mesh dump.
fn snapshot(dir: &Path, name: &str, mesh: &TriMesh, nodal: &[[f64; 2]]) -> Result<()> {
    dump(&dir.join(format!("{name}.mesh")), mesh, &[])?;
    let mut s = String::from("vertex,x,y,u1,u2\n");
    for (i, p) in mesh.vertices.iter().enumerate() {
        let _ = writeln!(s, "{i},{:?},{:?},{:e},{:e}", p[0], p[1], nodal[i][0], nodal[i][1]);
    }
    fs::write(dir.join(format!("{name}.csv")), s)?;
    Ok(())
}

fn tensor_csv(t: &TensorSummary) -> String {
    let mut s = String::from("i,j,k,h,value\n");
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for h in 0..2 {
                    let _ = writeln!(s, "{},{},{},{},{:e}", i + 1, j + 1, k + 1, h + 1, t.tensor.c[i][j][k][h]);
                }
            }
        }
    }
    s
}

fn print_verdicts(v: &[Verdict]) -> bool {
    for x in v {
        println!("{}", x.line());
    }
    v.iter().all(|x| x.pass)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Mesh { common, epsilon } => {
            let cfg = load(&common)?;
            fs::create_dir_all(&common.out)?;
            let cell = build_cell_mesh(&cfg.geometry, cfg.mesh.cell_h)?;
            let pairs: Vec<(usize, usize)> = cell.periodic_pairs.iter().map(|p| (p.a, p.b)).collect();
            dump(&common.out.join("cell.mesh"), &cell.mesh, &pairs)?;
            let pm = build_perforated_mesh(&cfg.geometry, epsilon, cfg.domain, cfg.mesh.cell_h)?;
            dump(&common.out.join(format!("domain_eps_{}.mesh", epsilon.denominator())), &pm.mesh, &[])?;
            println!(
                "cell: {} triangles; eps = {epsilon}: {} triangles, {} holes, |Y*| = {:.6}, |dO| = {:.6}",
                cell.mesh.triangles.len(),
                pm.mesh.triangles.len(),
                pm.num_holes(),
                pm.measures.discrete_area_ystar,
                pm.measures.discrete_perim_hole
            );
        }
        Command::Cell { common } => {
            let cfg = load(&common)?;
            let t = compute_tensor(&cfg)?;
            fs::create_dir_all(&common.out)?;
            fs::write(common.out.join("cell.json"), serde_json::to_string_pretty(&t)?)?;
            println!(
                "cell problems: divergence {:.2e}, periodicity {:.2e}, mean {:.2e}, corrector divergence {:.2e}",
                t.max_divergence_residual, t.max_periodicity_defect, t.max_mean, t.corrector_divergence
            );
        }
        Command::Tensor { common } => {
            let cfg = load(&common)?;
            let t = compute_tensor(&cfg)?;
            fs::create_dir_all(&common.out)?;
            fs::write(common.out.join("tensor.json"), serde_json::to_string_pretty(&t)?)?;
            fs::write(common.out.join("tensor.csv"), tensor_csv(&t))?;
            print!("{}", tensor_csv(&t));
            println!(
                "# formula gap {:.2e}, major symmetry {:.2e}, min eigenvalue {:.6}",
                t.formula_gap, t.major_symmetry_defect, t.min_eigenvalue
            );
        }
        Command::SimulateHom { common, tensor, samples } => {
            let mut cfg = load(&common)?;
            if let Some(t) = tensor {
                cfg.tensor_file = Some(t);
            }
            if let Some(s) = samples {
                cfg.samples = s;
            }
            cfg.validate()?;
            let t = compute_tensor(&cfg)?;
            let (ops, paths) = coupled_noise(&cfg)?;
            let mesh = build_rect_mesh(cfg.domain, cfg.mesh.hom_h)?;
            let sys = assemble_hom(&mesh, cfg.domain, &t.tensor, &hom_params(&cfg)?, ops.as_ref())?;
            let traj = run_hom(&sys, &paths, &RunOptions { test_functions: default_test_functions(), keep_final: true })?;
            fs::create_dir_all(&common.out)?;
            for (s, (series, u)) in traj.samples.iter().zip(&traj.finals).enumerate() {
                let mut csv = String::from("t,l2_norm,div_l2\n");
                for m in 0..=traj.grid.steps {
                    let _ = writeln!(csv, "{:e},{:e},{:e}", traj.grid.time(m), series.energy[m].sqrt(), series.div_sq[m].sqrt());
                }
                fs::write(common.out.join(format!("hom_sample_{s}.csv")), csv)?;
                snapshot(&common.out, &format!("hom_final_{s}"), &mesh, &sys.space.expand_velocity(u))?;
            }
            println!("{} samples, {} velocity dofs -> {}", traj.samples.len(), sys.n_velocity_dofs(), common.out.display());
        }
        Command::SimulateMicro { common, epsilon, samples } => {
            let mut cfg = load(&common)?;
            if let Some(s) = samples {
                cfg.samples = s;
            }
            cfg.validate()?;
            let (ops, paths) = coupled_noise(&cfg)?;
            let pm = build_perforated_mesh(&cfg.geometry, epsilon, cfg.domain, cfg.mesh.cell_h)?;
            let sys = assemble_micro(&pm, &micro_params(&cfg)?, ops.as_ref())?;
            let traj = run_micro(&sys, &paths, &RunOptions { test_functions: default_test_functions(), keep_final: true })?;
            fs::create_dir_all(&common.out)?;
            for (s, (series, fin)) in traj.samples.iter().zip(&traj.finals).enumerate() {
                let mut csv = String::from("t,energy,boundary_energy\n");
                for m in 0..=traj.grid.steps {
                    let _ = writeln!(csv, "{:e},{:e},{:e}", traj.grid.time(m), series.energy[m], series.boundary[m]);
                }
                fs::write(common.out.join(format!("micro_sample_{s}.csv")), csv)?;
                snapshot(&common.out, &format!("micro_final_{s}"), &pm.mesh, &sys.space.expand_velocity(&fin.u))?;
            }
            println!("eps = {epsilon}: {} samples, {} velocity dofs -> {}", traj.samples.len(), sys.n_velocity_dofs(), common.out.display());
        }
        Command::Converge { common } => {
            let cfg = load(&common)?;
            let out = cfg.output.clone().unwrap_or(common.out);
            let rep = run_convergence_study(&cfg);
            write_report(&rep, &out)?;
            for e in &rep.errors {
                eprintln!("stage {} failed: {}", e.stage, e.message);
            }
            let ok = print_verdicts(&rep.verdicts);
            println!("report written to {}", out.display());
            if !rep.errors.is_empty() {
                bail!("{} stage(s) failed", rep.errors.len());
            }
            if !ok {
                bail!("some criteria failed");
            }
        }
        Command::Check { common, noise_samples } => {
            let _ = load(&common)?;
            fs::create_dir_all(&common.out)?;
            let verdicts = vec![
                checks::tensor_dual_formula()?,
                checks::tensor_structure()?,
                checks::cell_problem_residuals()?,
                checks::integrator_orders()?,
                checks::noise_fidelity(noise_samples)?,
                checks::determinism(&checks::small_config(), &common.out)?,
            ];
            fs::write(common.out.join("checks.json"), serde_json::to_string_pretty(&verdicts)?)?;
            if !print_verdicts(&verdicts) {
                bail!("some checks failed");
            }
        }
    }
    Ok(())
}
