use std::fs;

use stokes_homog::geometry::{CellGeometry, Epsilon};
use stokes_homog::harness::{compute_tensor, run_convergence_study, write_report, RunConfig};

fn small() -> RunConfig {
    let mut c = RunConfig::default();
    c.geometry = CellGeometry::new(0.25, 16);
    c.epsilons = vec![Epsilon::new(4).unwrap(), Epsilon::new(8).unwrap()];
    c.mesh.hom_h = 0.125;
    c.samples = 8;
    c.certificate_samples = 8;
    c.noise.j = 4;
    c.physics.t_final = 0.02;
    c.physics.dt = 0.005;
    c
}

#[test]
fn config_file_with_precomputed_tensor_drives_a_study() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let tensor = compute_tensor(&cfg).unwrap();
    fs::write(dir.path().join("tensor.json"), serde_json::to_string(&tensor).unwrap()).unwrap();

    let mut on_disk = cfg.clone();
    on_disk.tensor_file = Some("tensor.json".into());
    let cfg_path = dir.path().join("run.json");
    fs::write(&cfg_path, on_disk.to_json()).unwrap();

    let loaded = RunConfig::load(&cfg_path).unwrap();
    assert_eq!(loaded.tensor_file.as_deref(), Some(dir.path().join("tensor.json").as_path()));

    let rep = run_convergence_study(&loaded);
    assert!(rep.errors.is_empty(), "{:?}", rep.errors);
    assert_eq!(rep.tensor.as_ref().unwrap().tensor, tensor.tensor);
    assert_eq!(rep.rows.len(), 2);
    assert!(rep.rows.iter().all(|r| r.weak.len() == 3 && r.certificate.is_some()));
    assert!(rep.lemmas.is_some());
    for id in [6, 7, 8, 9] {
        assert!(rep.verdict(id).is_some(), "criterion {id} missing");
    }

    let out = dir.path().join("out");
    write_report(&rep, &out).unwrap();
    for f in ["report.csv", "hom.csv", "micro_eps_4.csv", "micro_eps_8.csv", "tensor.json", "summary.json", "errors.json"] {
        assert!(out.join(f).exists(), "{f} not written");
    }
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 3);
}

#[test]
fn missing_tensor_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.tensor_file = Some("nope.json".into());
    let p = dir.path().join("run.json");
    fs::write(&p, cfg.to_json()).unwrap();
    let err = RunConfig::load(&p).unwrap_err();
    assert!(err.to_string().contains("does not exist"), "{err}");
}

#[test]
fn readme_example_config_parses() {
    let readme = include_str!("../../../README.md");
    let start = readme.find("```json\n").expect("json block") + "```json\n".len();
    let len = readme[start..].find("```").unwrap();
    let cfg = RunConfig::from_json(&readme[start..start + len]).unwrap();
    let mut expected = RunConfig::default();
    expected.mesh.cell_h = cfg.mesh.cell_h;
    assert_eq!(cfg, expected);
}
