use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shapeopt"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

/// Writes `body` as a config next to a fresh output directory.
fn scratch(body: &str) -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("run.toml");
    fs::write(&p, format!("output_dir = \"out\"\n{body}")).unwrap();
    (dir, p.display().to_string())
}

const COARSE_DISK: &str = "[mesh]\nkind = \"disk\"\nh = 0.1\n";

#[test]
fn missing_config_exits_1_and_names_the_path() {
    let o = run(&["solve", "/nonexistent/run.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/run.toml"));
}

#[test]
fn unknown_keys_exit_1_with_key_path() {
    let (_d, cfg) = scratch("[solver]\nfd_stepz = [0.1]\n");
    let o = run(&["solve", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("solver.fd_stepz"), "{err}");
}

#[test]
fn solve_writes_artifacts_and_summary() {
    let (d, cfg) = scratch(COARSE_DISK);
    let o = run(&["solve", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = d.path().join("out");
    let s = summary(&out);
    assert_eq!(s["command"], "solve");
    assert_eq!(s["adjoint_convention"]["name"], "shape");
    assert!(s["scalars"]["j"].as_f64().unwrap() > 0.0);
    assert!(s["tolerances"]["resonance_threshold"].is_number());
    assert!(fs::read_to_string(out.join("state.vtk")).unwrap().starts_with("# vtk DataFile Version"));
    let csv = fs::read_to_string(out.join("state.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("node,x,y,state"));
    assert_eq!(csv.lines().count() as u64, s["mesh"]["nodes"].as_u64().unwrap() + 1);
}

#[test]
fn overrides_beat_the_file() {
    let (d, cfg) = scratch(&format!("{COARSE_DISK}[problem]\nk2 = 1.0\n"));
    assert!(run(&["solve", &cfg, "--set", "problem.k2=2.0"]).status.success());
    let a = summary(&d.path().join("out"))["scalars"]["j"].as_f64().unwrap();
    assert!(run(&["solve", &cfg]).status.success());
    let b = summary(&d.path().join("out"))["scalars"]["j"].as_f64().unwrap();
    assert_ne!(a, b);
}

#[test]
fn repeated_runs_are_bit_identical() {
    let (d, cfg) =
        scratch(&format!("{COARSE_DISK}[velocity]\nkind = \"normal_bump\"\ncenter = [1.0, 0.0]\nwidth = 0.4\n"));
    let grab = || {
        assert!(run(&["shape-grad", &cfg]).status.success());
        summary(&d.path().join("out"))["scalars"].to_string()
    };
    assert_eq!(grab(), grab());
}

#[test]
fn translation_is_reported_as_invariant() {
    let (d, cfg) = scratch(&format!("{COARSE_DISK}[velocity]\nkind = \"translate_x\"\n"));
    assert!(run(&["shape-grad", &cfg]).status.success());
    let s = summary(&d.path().join("out"));
    assert_eq!(s["scalars"]["rigid_motion_invariant"], true);
    assert!(s["tolerances"]["rigid_motion_tol"].is_number());
}

#[test]
fn nodal_velocity_file_matches_analytic_field() {
    let (d, cfg) = scratch(COARSE_DISK);
    let mesh = shapeopt::mesh::generate_disk(shapeopt::Vec2::zeros(), 1.0, 0.1).unwrap();
    let mut text = String::from("vx,vy\n");
    for p in mesh.nodes() {
        text += &format!("{:.17e},{:.17e}\n", p.x, p.y);
    }
    fs::write(d.path().join("v.csv"), text).unwrap();
    assert!(run(&["shape-grad", &cfg, "--set", "solver.fd_check=false"]).status.success());
    let analytic = summary(&d.path().join("out"))["scalars"]["dj"].as_f64().unwrap();
    let o = run(&[
        "shape-grad",
        &cfg,
        "--set",
        "solver.fd_check=false",
        "--set",
        "velocity.kind=nodal",
        "--set",
        "velocity.path=v.csv",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let nodal = summary(&d.path().join("out"))["scalars"]["dj"].as_f64().unwrap();
    assert!((analytic - nodal).abs() < 1e-12 * analytic.abs());
}

#[test]
fn shipped_disk_benchmark_validates() {
    let d = tempfile::tempdir().unwrap();
    let o =
        run(&["validate", configs().join("disk.toml").to_str().unwrap(), "--output-dir", d.path().to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("PASS [0] shape derivative"));
    let csv = fs::read_to_string(d.path().join("validation.csv")).unwrap();
    assert!(csv.starts_with("criterion,name,measured,reference,error,tolerance,comparison,verdict"));
    assert_eq!(summary(d.path())["checks_failed"], 0);
}

#[test]
fn out_of_tolerance_validation_exits_2() {
    let (d, cfg) = scratch(&format!("{COARSE_DISK}[validate]\nshape_tol = 1e-12\n"));
    let o = run(&["validate", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(summary(&d.path().join("out"))["checks_failed"].as_u64().unwrap() > 0);
}

#[test]
fn run_uses_the_configured_command() {
    let (d, cfg) = scratch(&format!("command = \"eigs\"\n{COARSE_DISK}[solver]\neig_count = 3\n"));
    assert!(run(&["run", &cfg]).status.success());
    let s = summary(&d.path().join("out"));
    assert_eq!(s["command"], "eigs");
    assert_eq!(s["scalars"]["eigenvalues"].as_array().unwrap().len(), 3);
    let (_d, bare) = scratch(COARSE_DISK);
    assert_eq!(run(&["run", &bare]).status.code(), Some(1));
}

#[test]
fn topo_grad_reports_both_modes() {
    let (d, cfg) = scratch("[mesh]\nkind = \"rectangle\"\nh = 0.1\n[problem]\ngamma = 0.5\n[topo]\nqueries = [[0.5, 0.5]]\neps = [0.1, 0.2]\n");
    assert!(run(&["topo-grad", &cfg]).status.success());
    let s = summary(&d.path().join("out"));
    assert_eq!(s["adjoint_convention"]["name"], "topological");
    let q = &s["scalars"]["queries"][0];
    assert!(q["dt"].as_f64().unwrap() < 0.0);
    let o = run(&["topo-grad", &cfg, "--set", "topo.mode=hole", "--set", "topo.eps=[0.1]"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(summary(&d.path().join("out"))["scalars"]["lambda"].as_f64().unwrap() > 0.0);
}

#[test]
fn optimize_writes_history_and_snapshots() {
    let (d, cfg) =
        scratch("[mesh]\nkind = \"annulus\"\nh = 0.1\n[problem]\nbc = \"obstacle\"\n[optimize]\nmax_iters = 3\n");
    let o = run(&["optimize", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = d.path().join("out");
    let s = summary(&out);
    assert!(s["scalars"]["j_final"].as_f64().unwrap() < s["scalars"]["j_initial"].as_f64().unwrap());
    assert_eq!(s["scalars"]["armijo_holds"], true);
    assert!(out.join("history.csv").exists() && out.join("iter_0000.vtk").exists());
}

#[test]
fn obstacle_variant_without_obstacle_is_an_error() {
    let (_d, cfg) = scratch(&format!("{COARSE_DISK}[problem]\nbc = \"obstacle\"\n"));
    let o = run(&["solve", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).to_lowercase().contains("obstacle"));
}

#[test]
fn every_shipped_config_parses() {
    let mut n = 0;
    for e in fs::read_dir(configs()).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "toml") {
            let cfg = shapeopt_cli::config::load(&p, &[]).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            assert!(cfg.command.is_some(), "{}", p.display());
            n += 1;
        }
    }
    assert!(n >= 4);
}
