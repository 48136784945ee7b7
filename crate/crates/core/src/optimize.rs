//! Steepest descent on the boundary with Armijo backtracking, and an optional
//! topology phase that nucleates one hole at a time.
//!
//! Every boundary node of a movable tag moves with `-(g - mu) n`, where `g`
//! is the Hadamard density from [`crate::shape_grad`] and `mu` the area
//! multiplier. The motion is extended to the interior harmonically.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fem::{assemble_load, harmonic_extension, integrate, Field};
use crate::helmholtz::{BcVariant, HelmholtzSolver, ProblemData, SolveOptions};
use crate::mesh::{
    deform, export_vtk, punch_hole, BoundaryGeometry, BoundaryTag, HoleSpec, Mesh, Vec2, VelocityField, VtkField,
};
use crate::shape_grad::{evaluate_j, shape_derivative, FunctionalValue, ShapeGradOptions};
use crate::topo::{topo_source_field, HoleSensitivity, ScaleFunction};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AreaConstraint {
    None,
    /// Multiplier chosen so the first-order area change is
    /// `-rate (area - target)` per unit step.
    Target {
        area: f64,
        rate: f64,
    },
}

/// Which topological derivative ranks hole sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopoIndicator {
    /// `(1 - gamma) f p`, scaled by `pi eps^2`.
    Source,
    /// Hole formula with `k2` as coupling, scaled by `eps^2`.
    Hole,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopoPhase {
    /// Run a topology step after every `every` descent steps.
    pub every: usize,
    /// Sites must lie below this quantile of the field (and below zero).
    pub quantile: f64,
    pub eps0: f64,
    pub indicator: TopoIndicator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeConfig {
    pub max_iters: usize,
    pub step0: f64,
    pub armijo_c: f64,
    pub shrink: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub area_constraint: AreaConstraint,
    pub movable_tags: Vec<BoundaryTag>,
    pub topo_phase: Option<TopoPhase>,
    /// Stop when the predicted or achieved relative decrease falls below.
    pub stop_tol: f64,
    pub variant: BcVariant,
    pub min_angle_floor: f64,
    pub output_dir: Option<PathBuf>,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            max_iters: 30,
            step0: 1.0,
            armijo_c: 1e-4,
            shrink: 0.5,
            min_step: 1e-8,
            max_step: 1e4,
            area_constraint: AreaConstraint::None,
            movable_tags: vec![BoundaryTag::Obstacle],
            topo_phase: None,
            stop_tol: 1e-6,
            variant: BcVariant::Obstacle,
            min_angle_floor: 10.0,
            output_dir: None,
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.step0 > 0.0 && self.step0.is_finite()) {
            return bad(format!("step0 must be positive, got {}", self.step0));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad(format!("armijo_c must lie in (0, 1), got {}", self.armijo_c));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad(format!("shrink must lie in (0, 1), got {}", self.shrink));
        }
        if !(self.min_step > 0.0 && self.min_step <= self.step0 && self.step0 <= self.max_step) {
            return bad("steps must satisfy 0 < min_step <= step0 <= max_step".into());
        }
        if !(self.stop_tol >= 0.0) {
            return bad(format!("stop_tol must be non-negative, got {}", self.stop_tol));
        }
        if self.movable_tags.is_empty() {
            return bad("no movable boundary tags".into());
        }
        if let AreaConstraint::Target { area, rate } = self.area_constraint {
            if !(area > 0.0 && rate >= 0.0 && rate.is_finite()) {
                return bad("area target must be positive with a non-negative rate".into());
            }
        }
        if let Some(t) = &self.topo_phase {
            if t.every == 0 || !(t.quantile > 0.0 && t.quantile < 1.0) || !(t.eps0 > 0.0) {
                return bad("topology phase needs every >= 1, quantile in (0, 1) and eps0 > 0".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Initial,
    Descent,
    Topology,
    RolledBack,
}

impl StepKind {
    pub fn name(self) -> &'static str {
        match self {
            StepKind::Initial => "initial",
            StepKind::Descent => "descent",
            StepKind::Topology => "topology",
            StepKind::RolledBack => "rolled_back",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub kind: StepKind,
    pub j: f64,
    pub j_gradient_misfit: f64,
    pub j_value_misfit: f64,
    pub j_before: f64,
    /// Directional derivative along the chosen descent field.
    pub dj: f64,
    pub step: f64,
    pub area: f64,
    pub min_angle_deg: f64,
    pub holes_nucleated: usize,
    pub hole_center: Option<Vec2>,
}

impl IterationRecord {
    /// Sufficient decrease for descent records, trivially true otherwise.
    pub fn satisfies_armijo(&self, c: f64) -> bool {
        self.kind != StepKind::Descent || self.j <= self.j_before + c * self.step * self.dj
    }
}

/// `J` for the state on `mesh`.
pub fn functional(mesh: &Mesh, data: &ProblemData, variant: BcVariant) -> Result<FunctionalValue> {
    let solver = HelmholtzSolver::new(mesh, data.k2, variant, &SolveOptions::default())?;
    let eta = solver.solve(&assemble_load(mesh, &data.f)?, "eta")?.solution;
    evaluate_j(mesh, data, &eta.values)
}

fn movable_geometries(mesh: &Mesh, tags: &[BoundaryTag]) -> Result<Vec<BoundaryGeometry>> {
    tags.iter().map(|&t| mesh.boundary_geometry(t)).collect()
}

/// Area multiplier `mu` for the density `g` on the movable boundary.
pub fn area_multiplier(geoms: &[BoundaryGeometry], g: &[f64], constraint: &AreaConstraint, area: f64) -> f64 {
    match *constraint {
        AreaConstraint::None => 0.0,
        AreaConstraint::Target { area: target, rate } => {
            let perimeter: f64 = geoms.iter().map(|b| b.perimeter()).sum();
            let mean = geoms.iter().map(|b| integrate(b, g)).sum::<f64>() / perimeter;
            mean - rate * (area - target) / perimeter
        }
    }
}

/// `-(g - mu) n` on movable nodes, zero on the rest of the boundary,
/// harmonically extended.
pub fn descent_velocity(mesh: &Mesh, geoms: &[BoundaryGeometry], g: &[f64], mu: f64) -> Result<Vec<Vec2>> {
    let mut prescribed = vec![None; mesh.num_nodes()];
    for e in mesh.boundary_edges() {
        for &i in &e.nodes {
            prescribed[i] = Some(Vec2::zeros());
        }
    }
    for b in geoms {
        for &i in &b.nodes {
            prescribed[i] = Some(b.node_normals[i] * -(g[i] - mu));
        }
    }
    // a node shared with a fixed tag stays put
    for e in mesh.boundary_edges() {
        if !geoms.iter().any(|b| b.tag == e.tag) {
            for &i in &e.nodes {
                prescribed[i] = Some(Vec2::zeros());
            }
        }
    }
    let pres: Vec<(usize, Vec2)> = prescribed.into_iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v))).collect();
    harmonic_extension(mesh, &pres)
}

/// State of the loop at one mesh.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub j: FunctionalValue,
    pub density: Vec<f64>,
    pub mu: f64,
    pub velocity: Vec<Vec2>,
    pub dj: f64,
}

pub fn evaluate(mesh: &Mesh, data: &ProblemData, cfg: &OptimizeConfig) -> Result<Evaluation> {
    let geoms = movable_geometries(mesh, &cfg.movable_tags)?;
    let grad = shape_derivative(mesh, data, &VelocityField::zero(), cfg.variant, &ShapeGradOptions::default())?;
    let g = grad.descent_density;
    let mu = area_multiplier(&geoms, &g, &cfg.area_constraint, mesh.area());
    let velocity = descent_velocity(mesh, &geoms, &g, mu)?;
    let dj = geoms
        .iter()
        .map(|b| {
            let dens: Vec<f64> = (0..mesh.num_nodes()).map(|i| g[i] * velocity[i].dot(&b.node_normals[i])).collect();
            integrate(b, &dens)
        })
        .sum();
    Ok(Evaluation { j: functional(mesh, data, cfg.variant)?, density: g, mu, velocity, dj })
}

fn record(iter: usize, kind: StepKind, mesh: &Mesh, j: &FunctionalValue, j_before: f64) -> IterationRecord {
    IterationRecord {
        iter,
        kind,
        j: j.j_total,
        j_gradient_misfit: j.j_gradient_misfit,
        j_value_misfit: j.j_value_misfit,
        j_before,
        dj: 0.0,
        step: 0.0,
        area: mesh.area(),
        min_angle_deg: mesh.min_angle_deg(),
        holes_nucleated: 0,
        hole_center: None,
    }
}

/// Backtracking from `step` along the evaluated descent field. Returns the
/// new mesh, its record (iteration number left at 0) and the accepted step.
fn line_search(
    mesh: &Mesh,
    data: &ProblemData,
    cfg: &OptimizeConfig,
    eval: &Evaluation,
    step: f64,
) -> Result<(Mesh, IterationRecord)> {
    let j0 = eval.j.j_total;
    if eval.velocity.iter().all(|v| v.x == 0.0 && v.y == 0.0) {
        let mut r = record(0, StepKind::Descent, mesh, &eval.j, j0);
        r.step = step;
        return Ok((mesh.clone(), r));
    }
    if !(eval.dj < 0.0) {
        return Err(Error::Stall { min_step: cfg.min_step });
    }
    let field = VelocityField::nodal("descent", eval.velocity.clone());
    let mut t = step;
    while t >= cfg.min_step {
        let candidate = match deform(mesh, &field, t) {
            Ok(m) if m.min_angle_deg() >= cfg.min_angle_floor => Some(m),
            Ok(_) | Err(Error::NotBijective(_)) | Err(Error::Deformation { .. }) => None,
            Err(e) => return Err(e),
        };
        if let Some(m) = candidate {
            match functional(&m, data, cfg.variant) {
                Ok(j) if j.j_total <= j0 + cfg.armijo_c * t * eval.dj => {
                    let mut r = record(0, StepKind::Descent, &m, &j, j0);
                    r.dj = eval.dj;
                    r.step = t;
                    return Ok((m, r));
                }
                Ok(_) | Err(Error::Resonance { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        t *= cfg.shrink;
    }
    Err(Error::Stall { min_step: cfg.min_step })
}

/// One Armijo step starting from `cfg.step0`.
pub fn descent_step(mesh: &Mesh, data: &ProblemData, cfg: &OptimizeConfig) -> Result<(Mesh, IterationRecord)> {
    cfg.validate()?;
    let eval = evaluate(mesh, data, cfg)?;
    line_search(mesh, data, cfg, &eval, cfg.step0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Site {
    pub node: usize,
    pub value: f64,
    pub radius: f64,
}

fn node_sizes(mesh: &Mesh) -> Vec<f64> {
    let mut sum = vec![0.0; mesh.num_nodes()];
    let mut count = vec![0usize; mesh.num_nodes()];
    for tri in mesh.triangles() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            let l = (mesh.nodes()[a] - mesh.nodes()[b]).norm();
            for i in [a, b] {
                sum[i] += l;
                count[i] += 1;
            }
        }
    }
    sum.iter().zip(&count).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect()
}

/// Global minimizer of `values` among interior nodes where a hole of radius
/// `max(4 h, eps0)` fits, provided it lies below zero and below the
/// `quantile` of the field.
pub fn select_site(mesh: &Mesh, values: &[f64], quantile: f64, eps0: f64) -> Result<Option<Site>> {
    if values.len() != mesh.num_nodes() {
        return Err(Error::InvalidArgument("topological field does not match the mesh".into()));
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let q = sorted[((quantile * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1)];
    let threshold = q.min(0.0);
    let boundary = mesh.boundary_mask();
    let h = node_sizes(mesh);
    let mut best: Option<Site> = None;
    for (i, &v) in values.iter().enumerate() {
        if boundary[i] || !(v < threshold) || best.is_some_and(|b| v >= b.value) {
            continue;
        }
        let radius = (4.0 * h[i]).max(eps0);
        if mesh.distance_to_boundary(mesh.nodes()[i]) - radius >= h[i] {
            best = Some(Site { node: i, value: v, radius });
        }
    }
    Ok(best)
}

/// Field ranking hole sites, with its scale function.
pub fn topo_indicator(
    mesh: &Mesh,
    data: &ProblemData,
    cfg: &OptimizeConfig,
    which: TopoIndicator,
) -> Result<(Field, ScaleFunction)> {
    Ok(match which {
        TopoIndicator::Source => {
            let f = topo_source_field(mesh, data, cfg.variant)?;
            (f.values, f.scale)
        }
        TopoIndicator::Hole => (
            HoleSensitivity::helmholtz(mesh, data, cfg.variant)?.nodal(mesh, data, PI)?,
            ScaleFunction { coeff: 1.0, exponent: 2.0 },
        ),
    })
}

/// Nucleates at most one hole. The hole is rolled back when `J` rises by
/// more than the prediction plus half its magnitude.
pub fn topology_step(mesh: &Mesh, data: &ProblemData, cfg: &OptimizeConfig) -> Result<(Mesh, IterationRecord)> {
    let phase = cfg.topo_phase.ok_or_else(|| Error::InvalidArgument("topology phase is disabled".into()))?;
    let j0 = functional(mesh, data, cfg.variant)?;
    let unchanged = |kind| record(0, kind, mesh, &j0, j0.j_total);
    let (field, scale) = topo_indicator(mesh, data, cfg, phase.indicator)?;
    let Some(site) = select_site(mesh, &field.values, phase.quantile, phase.eps0)? else {
        return Ok((mesh.clone(), unchanged(StepKind::Topology)));
    };
    let center = mesh.nodes()[site.node];
    let holed = match punch_hole(mesh, &HoleSpec::disk(center, site.radius)) {
        Ok(m) => m,
        Err(Error::Geometry(_)) | Err(Error::Quality { .. }) | Err(Error::Resolution(_)) => {
            return Ok((mesh.clone(), unchanged(StepKind::Topology)))
        }
        Err(e) => return Err(e),
    };
    let j1 = match functional(&holed, data, cfg.variant) {
        Ok(j) => j,
        Err(Error::Resonance { .. }) => return Ok((mesh.clone(), unchanged(StepKind::RolledBack))),
        Err(e) => return Err(e),
    };
    let predicted = scale.eval(site.radius) * site.value;
    if j1.j_total - j0.j_total > predicted + 0.5 * predicted.abs() {
        let mut r = unchanged(StepKind::RolledBack);
        r.hole_center = Some(center);
        r.dj = site.value;
        return Ok((mesh.clone(), r));
    }
    let mut r = record(0, StepKind::Topology, &holed, &j1, j0.j_total);
    r.holes_nucleated = 1;
    r.hole_center = Some(center);
    r.dj = site.value;
    r.step = site.radius;
    Ok((holed, r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIters,
    Converged,
    Stalled,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub records: Vec<IterationRecord>,
    pub mesh: Mesh,
    pub stop: StopReason,
}

fn snapshot(dir: &Path, index: usize, mesh: &Mesh, eval: Option<&Evaluation>) -> Result<()> {
    let path = dir.join(format!("iter_{index:04}.vtk"));
    match eval {
        Some(e) => export_vtk(
            mesh,
            &[VtkField::Scalar("density", &e.density), VtkField::Vector("velocity", &e.velocity)],
            &path,
        ),
        None => export_vtk(mesh, &[], &path),
    }
}

pub fn write_history(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let io = |e: csv::Error| Error::io(path, e.into());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record([
        "iter",
        "kind",
        "j",
        "j_gradient_misfit",
        "j_value_misfit",
        "j_before",
        "dj",
        "step",
        "area",
        "min_angle_deg",
        "holes_nucleated",
        "hole_x",
        "hole_y",
    ])
    .map_err(io)?;
    for r in records {
        let (hx, hy) = r.hole_center.map_or((String::new(), String::new()), |c| (c.x.to_string(), c.y.to_string()));
        w.write_record([
            r.iter.to_string(),
            r.kind.name().to_string(),
            r.j.to_string(),
            r.j_gradient_misfit.to_string(),
            r.j_value_misfit.to_string(),
            r.j_before.to_string(),
            r.dj.to_string(),
            r.step.to_string(),
            r.area.to_string(),
            r.min_angle_deg.to_string(),
            r.holes_nucleated.to_string(),
            hx,
            hy,
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Alternates descent and, when enabled, topology steps until `stop_tol`,
/// a stall or `max_iters`.
pub fn run(mesh: &Mesh, data: &ProblemData, cfg: &OptimizeConfig) -> Result<RunResult> {
    cfg.validate()?;
    data.validate(mesh)?;
    if let Some(dir) = &cfg.output_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut mesh = mesh.clone();
    let mut eval = evaluate(&mesh, data, cfg)?;
    let mut first = record(0, StepKind::Initial, &mesh, &eval.j, eval.j.j_total);
    first.dj = eval.dj;
    let mut records = vec![first];
    if let Some(dir) = &cfg.output_dir {
        snapshot(dir, 0, &mesh, Some(&eval))?;
    }
    let mut step = cfg.step0;
    let mut stop = StopReason::MaxIters;
    for iter in 1..=cfg.max_iters {
        let j = eval.j.j_total;
        let scale = j.abs().max(f64::MIN_POSITIVE);
        if eval.dj.abs() * step / scale < cfg.stop_tol {
            stop = StopReason::Converged;
            break;
        }
        let (next, mut r) = match line_search(&mesh, data, cfg, &eval, step) {
            Ok(x) => x,
            Err(Error::Stall { .. }) => {
                stop = StopReason::Stalled;
                break;
            }
            Err(e) => return Err(e),
        };
        r.iter = records.len();
        let achieved = (j - r.j) / scale;
        step = (r.step / cfg.shrink).min(cfg.max_step);
        mesh = next;
        records.push(r);
        if let Some(phase) = cfg.topo_phase {
            if iter % phase.every == 0 {
                let (next, mut r) = topology_step(&mesh, data, cfg)?;
                r.iter = records.len();
                mesh = next;
                records.push(r);
            }
        }
        eval = evaluate(&mesh, data, cfg)?;
        if let Some(dir) = &cfg.output_dir {
            snapshot(dir, records.len() - 1, &mesh, Some(&eval))?;
        }
        if achieved < cfg.stop_tol {
            stop = StopReason::Converged;
            break;
        }
    }
    if let Some(dir) = &cfg.output_dir {
        write_history(&dir.join("history.csv"), &records)?;
    }
    Ok(RunResult { records, mesh, stop })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::ScalarData;
    use crate::mesh::{generate_annulus, generate_rectangle, Shape};

    fn annulus(h: f64) -> Mesh {
        generate_annulus(
            &Shape::Disk { center: Vec2::zeros(), radius: 1.0 },
            &Shape::Disk { center: Vec2::zeros(), radius: 0.3 },
            h,
        )
        .unwrap()
    }

    #[test]
    fn zero_source_leaves_the_mesh_alone() {
        let m = annulus(0.15);
        let data = ProblemData { f: ScalarData::Constant(0.0), ..Default::default() };
        let (next, r) = descent_step(&m, &data, &OptimizeConfig::default()).unwrap();
        assert_eq!(next.nodes(), m.nodes());
        assert_eq!(r.j, 0.0);
        assert!(r.satisfies_armijo(1e-4));
    }

    #[test]
    fn constant_density_is_projected_out() {
        let m = annulus(0.15);
        let geoms = movable_geometries(&m, &[BoundaryTag::Obstacle]).unwrap();
        let g = vec![0.7; m.num_nodes()];
        let c = AreaConstraint::Target { area: m.area(), rate: 1.0 };
        let mu = area_multiplier(&geoms, &g, &c, m.area());
        assert!((mu - 0.7).abs() < 1e-14);
        let v = descent_velocity(&m, &geoms, &g, mu).unwrap();
        assert!(v.iter().all(|x| x.norm() < 1e-12));
    }

    #[test]
    fn no_iterations_and_infinite_tolerance() {
        let m = annulus(0.15);
        let data = ProblemData::default();
        let cfg = OptimizeConfig { max_iters: 0, ..Default::default() };
        let r = run(&m, &data, &cfg).unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.records[0].kind, StepKind::Initial);
        let cfg = OptimizeConfig { stop_tol: f64::INFINITY, ..Default::default() };
        let r = run(&m, &data, &cfg).unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.stop, StopReason::Converged);
    }

    #[test]
    fn site_selection_follows_the_spike() {
        let m = generate_rectangle(1.0, 1.0, 0.05).unwrap();
        let spike = m.nodes().iter().position(|p| (p - Vec2::new(0.5, 0.5)).norm() < 0.03).unwrap();
        let mut v = vec![1.0; m.num_nodes()];
        assert!(select_site(&m, &v, 0.1, 0.05).unwrap().is_none());
        v[spike] = -5.0;
        let s = select_site(&m, &v, 0.1, 0.05).unwrap().unwrap();
        assert_eq!(s.node, spike);
    }

    #[test]
    fn favorable_contrast_is_a_no_op() {
        let m = generate_rectangle(1.0, 1.0, 0.1).unwrap();
        // the adjoint is negative here, so gamma > 1 makes (1 - gamma) f p positive
        let data = ProblemData { gamma: 2.0, ..Default::default() };
        let cfg = OptimizeConfig {
            variant: BcVariant::Dirichlet,
            movable_tags: vec![BoundaryTag::Outer],
            topo_phase: Some(TopoPhase { every: 1, quantile: 0.1, eps0: 0.05, indicator: TopoIndicator::Source }),
            ..Default::default()
        };
        let (field, _) = topo_indicator(&m, &data, &cfg, TopoIndicator::Source).unwrap();
        assert!(field.values.iter().all(|v| *v >= 0.0));
        let (next, r) = topology_step(&m, &data, &cfg).unwrap();
        assert_eq!(next.nodes(), m.nodes());
        assert_eq!(r.holes_nucleated, 0);
    }

    #[test]
    fn annulus_descent_decreases() {
        let m = annulus(0.1);
        let cfg = OptimizeConfig { max_iters: 5, ..Default::default() };
        let r = run(&m, &ProblemData::default(), &cfg).unwrap();
        assert!(r.records.iter().all(|x| x.satisfies_armijo(cfg.armijo_c)));
        assert_eq!(r.records.len(), 6, "{:?}", r.stop);
        assert!(r.records.windows(2).all(|w| w[1].j < w[0].j));
    }
}
