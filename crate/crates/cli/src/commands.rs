//! One function per subcommand. Each fills a [`Record`] that becomes
//! `summary.json` in the output directory.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Map, Value};

use shapeopt::fem::Field;
use shapeopt::helmholtz::{solve_state, AdjointConvention, BcVariant, ProblemData, SolveOptions};
use shapeopt::mesh::{export_vtk, HoleSpec, VtkField};
use shapeopt::optimize::{run, write_history};
use shapeopt::shape_grad::{evaluate_j, fd_shape_derivative, shape_derivative, ShapeGradOptions};
use shapeopt::spectral::{detect_multiplicity, solve_eigs, EigOptions};
use shapeopt::topo::{simple_pair, topo_quotient, topo_source_field, HoleSensitivity, QuotientMode, CLUSTER_TOL};
use shapeopt::validation::{determinism_check, run_suite, validate_setup, Check, Setup};
use shapeopt::{Mesh, Vec2};

use crate::config::{Command, RunConfig, Suite, TopoMode, VelocityConfig};
use crate::error::CliError;
use crate::setup;

/// Scalars, tolerances, artifacts and timings of one run.
pub struct Record {
    command: Command,
    out: PathBuf,
    convention: AdjointConvention,
    scalars: Map<String, Value>,
    tolerances: Map<String, Value>,
    artifacts: Vec<String>,
    timings_ms: Map<String, Value>,
    checks: Vec<Check>,
}

impl Record {
    fn new(command: Command, out: PathBuf) -> Self {
        Record {
            command,
            out,
            convention: AdjointConvention::Shape,
            scalars: Map::new(),
            tolerances: Map::new(),
            artifacts: Vec::new(),
            timings_ms: Map::new(),
            checks: Vec::new(),
        }
    }

    fn scalar(&mut self, key: &str, v: impl Serialize) {
        self.scalars.insert(key.into(), json!(v));
    }

    fn tol(&mut self, key: &str, v: impl Serialize) {
        self.tolerances.insert(key.into(), json!(v));
    }

    fn time(&mut self, key: &str, since: Instant) {
        self.timings_ms.insert(key.into(), json!(since.elapsed().as_secs_f64() * 1e3));
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.out.join(name)
    }

    fn vtk(&mut self, name: &str, mesh: &Mesh, fields: &[VtkField]) -> Result<(), CliError> {
        let p = self.path(name);
        export_vtk(mesh, fields, &p)?;
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), CliError> {
        let p = self.path(name);
        let err = |e: csv::Error| CliError::Write { path: p.clone(), source: e.into() };
        let mut w = csv::Writer::from_path(&p).map_err(err)?;
        w.write_record(header).map_err(err)?;
        for r in rows {
            w.write_record(&r).map_err(err)?;
        }
        w.flush().map_err(|source| CliError::Write { path: p.clone(), source })
    }

    /// Asserted checks that are out of tolerance.
    pub fn failed(&self) -> usize {
        self.checks.iter().filter(|c| c.asserted() && !c.passed).count()
    }

    pub fn checks(&self) -> &[Check] {
        &self.checks
    }

    fn summary(&self, cfg: &RunConfig, mesh: &Mesh) -> Value {
        json!({
            "command": self.command.name(),
            "config_digest": cfg.digest(),
            "deterministic": cfg.deterministic,
            "adjoint_convention": {
                "name": self.convention.name(),
                "sign": self.convention.sign(),
            },
            "mesh": {
                "nodes": mesh.num_nodes(),
                "triangles": mesh.num_triangles(),
                "area": mesh.area(),
                "max_edge": mesh.max_edge_length(),
                "min_angle_deg": mesh.min_angle_deg(),
            },
            "tolerances": self.tolerances,
            "scalars": self.scalars,
            "checks_failed": self.failed(),
            "artifacts": self.artifacts,
            "timings_ms": self.timings_ms,
        })
    }
}

/// `|DJ| / |J|` below which a rigid motion counts as leaving `J` unchanged.
pub const RIGID_MOTION_TOL: f64 = 1e-3;

fn fmt(x: f64) -> String {
    format!("{x:.17e}")
}

fn solve_tolerances(rec: &mut Record) {
    let o = SolveOptions::default();
    rec.tol("resonance_threshold", o.resonance_threshold);
    rec.tol("residual_tol", o.residual_tol);
}

fn eig_tolerances(rec: &mut Record, cfg: &RunConfig) {
    let o = EigOptions::default();
    rec.tol("eig_tol", o.tol);
    rec.tol("eig_max_iter", o.max_iter);
    rec.tol("eig_seed", o.seed);
    rec.tol("multiplicity_tol", cfg.solver.multiplicity_tol);
}

struct Inputs {
    mesh: Mesh,
    data: ProblemData,
    variant: BcVariant,
}

/// Runs `cmd`, writes its artifacts and `summary.json`, and returns the
/// record. Tolerance failures are reported through [`Record::failed`].
pub fn execute(cmd: Command, cfg: &RunConfig, base: &Path) -> Result<Record, CliError> {
    let out = if cfg.output_dir.is_absolute() { cfg.output_dir.clone() } else { base.join(&cfg.output_dir) };
    fs::create_dir_all(&out).map_err(|source| CliError::Write { path: out.clone(), source })?;
    let mut rec = Record::new(cmd, out);
    let t = Instant::now();
    let inputs = Inputs {
        mesh: setup::mesh(&cfg.mesh, base)?,
        data: setup::problem(&cfg.problem),
        variant: setup::variant(cfg.problem.bc),
    };
    rec.time("mesh", t);
    inputs.data.validate(&inputs.mesh)?;
    inputs.variant.check(&inputs.mesh)?;
    match cmd {
        Command::Solve => solve(&mut rec, &inputs)?,
        Command::Eigs => eigs(&mut rec, cfg, &inputs)?,
        Command::ShapeGrad => shape_grad(&mut rec, cfg, base, &inputs)?,
        Command::TopoGrad => topo_grad(&mut rec, cfg, &inputs)?,
        Command::Optimize => optimize(&mut rec, cfg, &inputs)?,
        Command::Validate => validate(&mut rec, cfg, base, &inputs)?,
    }
    rec.time("total", t);
    let summary = rec.summary(cfg, &inputs.mesh);
    let p = rec.out.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary is plain JSON");
    fs::write(&p, text + "\n").map_err(|source| CliError::Write { path: p, source })?;
    Ok(rec)
}

fn solve(rec: &mut Record, inp: &Inputs) -> Result<(), CliError> {
    solve_tolerances(rec);
    let t = Instant::now();
    let s = solve_state(&inp.mesh, &inp.data, inp.variant)?;
    rec.time("solve", t);
    let j = evaluate_j(&inp.mesh, &inp.data, &s.solution.values)?;
    rec.scalar("j", j.j_total);
    rec.scalar("j_gradient_misfit", j.j_gradient_misfit);
    rec.scalar("j_value_misfit", j.j_value_misfit);
    rec.scalar("residual", s.residual);
    rec.scalar("resonance_margin", s.resonance_margin);
    rec.scalar("nearest_eigenvalue", s.nearest_eigenvalue);
    rec.vtk("state.vtk", &inp.mesh, &[VtkField::Scalar("state", &s.solution.values)])?;
    let rows = inp
        .mesh
        .nodes()
        .iter()
        .zip(&s.solution.values)
        .enumerate()
        .map(|(i, (p, u))| vec![i.to_string(), fmt(p.x), fmt(p.y), fmt(*u)])
        .collect();
    rec.csv("state.csv", &["node", "x", "y", "state"], rows)
}

fn eigs(rec: &mut Record, cfg: &RunConfig, inp: &Inputs) -> Result<(), CliError> {
    eig_tolerances(rec, cfg);
    let t = Instant::now();
    let pairs = solve_eigs(&inp.mesh, inp.variant, cfg.solver.eig_count)?;
    rec.time("eigensolve", t);
    let clusters = detect_multiplicity(&inp.mesh, &pairs, cfg.solver.multiplicity_tol)?;
    rec.scalar("eigenvalues", pairs.iter().map(|p| p.lambda).collect::<Vec<_>>());
    rec.scalar("residuals", pairs.iter().map(|p| p.residual).collect::<Vec<_>>());
    rec.scalar(
        "clusters",
        clusters
            .iter()
            .map(|c| json!({"lambda_mean": c.lambda_mean, "multiplicity": c.multiplicity, "truncated": c.truncated}))
            .collect::<Vec<_>>(),
    );
    let mut rows = Vec::new();
    for (k, c) in clusters.iter().enumerate() {
        for p in &c.pairs {
            rows.push(vec![
                p.index.to_string(),
                fmt(p.lambda),
                fmt(p.residual),
                k.to_string(),
                c.multiplicity.to_string(),
            ]);
        }
    }
    rows.sort_by_key(|r| r[0].parse::<usize>().unwrap_or(0));
    rec.csv("eigs.csv", &["index", "lambda", "residual", "cluster", "multiplicity"], rows)?;
    let names: Vec<String> = pairs.iter().map(|p| format!("mode_{}", p.index)).collect();
    let fields: Vec<VtkField> =
        pairs.iter().zip(&names).map(|(p, n)| VtkField::Scalar(n, &p.eigenfunction.values)).collect();
    rec.vtk("eigs.vtk", &inp.mesh, &fields)
}

fn shape_grad(rec: &mut Record, cfg: &RunConfig, base: &Path, inp: &Inputs) -> Result<(), CliError> {
    solve_tolerances(rec);
    rec.tol("include_target_flux", cfg.solver.include_target_flux);
    let v = setup::velocity(&cfg.velocity, &inp.mesh, base)?;
    let opts = ShapeGradOptions { include_target_flux: cfg.solver.include_target_flux };
    let t = Instant::now();
    let r = shape_derivative(&inp.mesh, &inp.data, &v, inp.variant, &opts)?;
    rec.time("adjoint", t);
    rec.convention = r.convention;
    let state = solve_state(&inp.mesh, &inp.data, inp.variant)?;
    let j = evaluate_j(&inp.mesh, &inp.data, &state.solution.values)?.j_total;
    rec.scalar("velocity", &v.name);
    rec.scalar("j", j);
    rec.scalar("dj", r.dj);
    let relative = r.dj.abs() / j.abs().max(f64::MIN_POSITIVE);
    rec.scalar("dj_relative_to_j", relative);
    if matches!(cfg.velocity, VelocityConfig::TranslateX | VelocityConfig::TranslateY | VelocityConfig::Rotate { .. }) {
        rec.tol("rigid_motion_tol", RIGID_MOTION_TOL);
        rec.scalar("rigid_motion_invariant", relative <= RIGID_MOTION_TOL);
    }
    rec.scalar("terms", r.terms.iter().map(|t| (t.name.clone(), json!(t.value))).collect::<Map<_, _>>());
    rec.scalar("diagnostics", r.diagnostics.iter().map(|t| (t.name.clone(), json!(t.value))).collect::<Map<_, _>>());
    rec.scalar("warnings", &r.warnings);
    let mut rows: Vec<Vec<String>> =
        r.terms.iter().map(|t| vec!["term".into(), t.name.clone(), fmt(t.value)]).collect();
    rows.extend(r.diagnostics.iter().map(|t| vec!["diagnostic".into(), t.name.clone(), fmt(t.value)]));
    rows.push(vec!["total".into(), "dj".into(), fmt(r.dj)]);
    if cfg.solver.fd_check {
        rec.tol("fd_steps", &cfg.solver.fd_steps);
        let t = Instant::now();
        let fd = fd_shape_derivative(&inp.mesh, &inp.data, &v, &cfg.solver.fd_steps, inp.variant)?;
        rec.time("finite_difference", t);
        rec.scalar("fd_dj", fd.derivative);
        rec.scalar("fd_relative_error", (r.dj - fd.derivative).abs() / fd.derivative.abs());
        rec.scalar("fd_observed_order", fd.observed_order);
        rows.push(vec!["finite_difference".into(), "dj".into(), fmt(fd.derivative)]);
    }
    rec.csv("terms.csv", &["kind", "name", "value"], rows)?;
    let vel = v.at_nodes(&inp.mesh)?;
    let mut fields = vec![VtkField::Vector("velocity", &vel), VtkField::Scalar("state", &state.solution.values)];
    if r.descent_density.len() == inp.mesh.num_nodes() {
        fields.push(VtkField::Scalar("descent_density", &r.descent_density));
    }
    rec.vtk("shape_grad.vtk", &inp.mesh, &fields)
}

fn topo_grad(rec: &mut Record, cfg: &RunConfig, inp: &Inputs) -> Result<(), CliError> {
    solve_tolerances(rec);
    rec.tol("eps", &cfg.topo.eps);
    rec.convention = AdjointConvention::Topological;
    let queries: Vec<Vec2> = cfg.topo.queries.iter().map(|q| Vec2::new(q[0], q[1])).collect();
    let mut rows = Vec::new();
    let mut values = Vec::new();
    match cfg.topo.mode {
        TopoMode::Source => {
            let t = Instant::now();
            let field = topo_source_field(&inp.mesh, &inp.data, inp.variant)?;
            rec.time("field", t);
            for x in &queries {
                let dt = field.at(&inp.mesh, *x)?;
                let table = topo_quotient(&inp.mesh, &inp.data, *x, &cfg.topo.eps, QuotientMode::Source(inp.variant))?;
                for r in &table.rows {
                    rows.push(vec![fmt(x.x), fmt(x.y), fmt(r.eps), fmt(dt), fmt(r.quotient), fmt(r.delta_psi)]);
                }
                values.push(json!({
                    "x": [x.x, x.y],
                    "dt": dt,
                    "quotient_limit": table.limit,
                    "observed_order": table.observed_order,
                    "eps2_r_squared": table.eps2_fit.map(|f| f.r_squared),
                }));
            }
            rec.time("quotients", t);
            rec.vtk(
                "topo.vtk",
                &inp.mesh,
                &[
                    VtkField::Scalar("topo_source", &field.values.values),
                    VtkField::Scalar("state", &field.state.values),
                    VtkField::Scalar("adjoint", &field.adjoint.values),
                ],
            )?;
        }
        TopoMode::Hole => {
            rec.tol("cluster_tol", CLUSTER_TOL);
            let t = Instant::now();
            let cluster = simple_pair(&inp.mesh, BcVariant::Dirichlet, 0)?;
            let sens = HoleSensitivity::eigen(&inp.mesh, &inp.data, &cluster, BcVariant::Dirichlet)?;
            let nodal: Field = sens.nodal(&inp.mesh, &inp.data, PI)?;
            rec.time("field", t);
            rec.scalar("lambda", cluster.lambda_mean);
            for x in &queries {
                let terms = sens.terms(&inp.mesh, &inp.data, *x)?;
                let dt = sens.at(&inp.mesh, &inp.data, *x, HoleSpec::disk(*x, 1.0).mes_omega)?;
                let table = topo_quotient(&inp.mesh, &inp.data, *x, &cfg.topo.eps, QuotientMode::DirichletHole)?;
                for r in &table.rows {
                    rows.push(vec![fmt(x.x), fmt(x.y), fmt(r.eps), fmt(dt), fmt(r.quotient), fmt(r.delta_psi)]);
                }
                values.push(json!({
                    "x": [x.x, x.y],
                    "dt": dt,
                    "terms": {
                        "gradient_pairing": terms.gradient_pairing,
                        "coupling": terms.coupling,
                        "gradient_misfit": terms.gradient_misfit,
                        "value_misfit": terms.value_misfit,
                    },
                    "quotients": table.rows.iter().map(|r| json!({"eps": r.eps, "quotient": r.quotient})).collect::<Vec<_>>(),
                }));
            }
            rec.time("quotients", t);
            rec.vtk(
                "topo.vtk",
                &inp.mesh,
                &[
                    VtkField::Scalar("topo_hole", &nodal.values),
                    VtkField::Scalar("eigenfunction", &sens.state.values),
                    VtkField::Scalar("adjoint", &sens.adjoint.values),
                ],
            )?;
        }
    }
    rec.scalar("mode", format!("{:?}", cfg.topo.mode).to_lowercase());
    rec.scalar("queries", values);
    rec.csv("topo.csv", &["x", "y", "eps", "dt", "quotient", "delta_psi"], rows)
}

fn optimize(rec: &mut Record, cfg: &RunConfig, inp: &Inputs) -> Result<(), CliError> {
    solve_tolerances(rec);
    let mut oc = setup::optimize(&cfg.optimize, cfg.problem.bc)?;
    rec.tolerances.insert("optimize".into(), json!(cfg.optimize));
    oc.output_dir = Some(rec.out.clone());
    let t = Instant::now();
    let r = run(&inp.mesh, &inp.data, &oc)?;
    rec.time("optimize", t);
    let first = r.records.first().map_or(f64::NAN, |x| x.j);
    let last = r.records.last().map_or(f64::NAN, |x| x.j);
    rec.scalar("j_initial", first);
    rec.scalar("j_final", last);
    rec.scalar("j_ratio", last / first);
    rec.scalar("records", r.records.len());
    rec.scalar("stop", format!("{:?}", r.stop));
    rec.scalar("armijo_holds", r.records.iter().all(|x| x.satisfies_armijo(oc.armijo_c)));
    rec.scalar("holes_nucleated", r.records.last().map_or(0, |x| x.holes_nucleated));
    rec.artifacts.push("history.csv".into());
    rec.artifacts.extend((0..r.records.len()).map(|i| format!("iter_{i:04}.vtk")));
    write_history(&rec.out.join("history.csv"), &r.records)?;
    rec.vtk("final.vtk", &r.mesh, &[])
}

fn validate(rec: &mut Record, cfg: &RunConfig, base: &Path, inp: &Inputs) -> Result<(), CliError> {
    let t = Instant::now();
    rec.scalar("suite", format!("{:?}", cfg.validate.suite).to_lowercase());
    rec.checks = match cfg.validate.suite {
        Suite::Setup => {
            solve_tolerances(rec);
            eig_tolerances(rec, cfg);
            rec.tol("fd_steps", &cfg.solver.fd_steps);
            rec.tol("shape_tol", cfg.validate.shape_tol);
            rec.tol("topo_tol", cfg.validate.topo_tol);
            rec.tol("eps", &cfg.topo.eps);
            let s = Setup {
                mesh: inp.mesh.clone(),
                data: inp.data.clone(),
                variant: inp.variant,
                velocity: setup::velocity(&cfg.velocity, &inp.mesh, base)?,
                queries: cfg.topo.queries.iter().map(|q| Vec2::new(q[0], q[1])).collect(),
                eps: cfg.topo.eps.clone(),
                fd_steps: cfg.solver.fd_steps.clone(),
                shape_tol: cfg.validate.shape_tol,
                topo_tol: cfg.validate.topo_tol,
            };
            validate_setup(&s)?
        }
        Suite::Acceptance => {
            let first = run_suite();
            let second = run_suite();
            let mut all = first.clone();
            all.push(determinism_check(&first, &second));
            all
        }
    };
    rec.time("validate", t);
    rec.scalar("checks", rec.checks.len());
    let rows = rec
        .checks
        .iter()
        .map(|c| {
            let verdict = if !c.asserted() {
                "INFO"
            } else if c.passed {
                "PASS"
            } else {
                "FAIL"
            };
            vec![
                c.criterion.to_string(),
                c.name.clone(),
                fmt(c.measured),
                fmt(c.reference),
                fmt(c.error),
                fmt(c.tolerance),
                format!("{:?}", c.comparison).to_lowercase(),
                verdict.to_string(),
            ]
        })
        .collect();
    rec.csv(
        "validation.csv",
        &["criterion", "name", "measured", "reference", "error", "tolerance", "comparison", "verdict"],
        rows,
    )
}
