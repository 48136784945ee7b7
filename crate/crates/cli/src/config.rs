//! Run configuration: one TOML file, dotted `--set` overrides on top, then
//! strict deserialization (unknown keys are errors).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Solve,
    Eigs,
    ShapeGrad,
    TopoGrad,
    Optimize,
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Eigs => "eigs",
            Command::ShapeGrad => "shape-grad",
            Command::TopoGrad => "topo-grad",
            Command::Optimize => "optimize",
            Command::Validate => "validate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Used by `shapeopt run`; the explicit subcommands ignore it.
    pub command: Option<Command>,
    pub output_dir: PathBuf,
    /// Reported in the summary. Every computation is single-threaded.
    pub deterministic: bool,
    pub mesh: MeshConfig,
    pub problem: ProblemConfig,
    pub velocity: VelocityConfig,
    pub solver: SolverConfig,
    pub topo: TopoConfig,
    pub optimize: OptimizeSection,
    pub validate: ValidateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: None,
            output_dir: PathBuf::from("out"),
            deterministic: true,
            mesh: MeshConfig::default(),
            problem: ProblemConfig::default(),
            velocity: VelocityConfig::default(),
            solver: SolverConfig::default(),
            topo: TopoConfig::default(),
            optimize: OptimizeSection::default(),
            validate: ValidateSection::default(),
        }
    }
}

fn origin() -> [f64; 2] {
    [0.0, 0.0]
}
fn one() -> f64 {
    1.0
}
fn default_h() -> f64 {
    0.05
}
fn obstacle_radius() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshConfig {
    Disk {
        #[serde(default = "origin")]
        center: [f64; 2],
        #[serde(default = "one")]
        radius: f64,
        #[serde(default = "default_h")]
        h: f64,
    },
    Rectangle {
        #[serde(default = "one")]
        width: f64,
        #[serde(default = "one")]
        height: f64,
        #[serde(default = "default_h")]
        h: f64,
    },
    /// Disk with a disk-shaped obstacle removed.
    Annulus {
        #[serde(default = "one")]
        outer_radius: f64,
        #[serde(default = "obstacle_radius")]
        obstacle_radius: f64,
        #[serde(default = "origin")]
        obstacle_center: [f64; 2],
        #[serde(default = "default_h")]
        h: f64,
    },
    /// Gmsh v2 ASCII file; `tags` maps physical ids to boundary names.
    Msh {
        path: PathBuf,
        #[serde(default)]
        tags: BTreeMap<String, String>,
    },
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig::Disk { center: origin(), radius: 1.0, h: default_h() }
    }
}

/// A constant, or `[c, gx, gy]` for `c + gx x + gy y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarSpec {
    Constant(f64),
    Affine([f64; 3]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BcName {
    Dirichlet,
    Neumann,
    Obstacle,
    AllDirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    pub k2: f64,
    pub f: ScalarSpec,
    /// Constant gradient target.
    pub a: [f64; 2],
    pub eta0: ScalarSpec,
    pub gamma: f64,
    pub bc: BcName,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            k2: 1.0,
            f: ScalarSpec::Constant(1.0),
            a: [0.0, 0.0],
            eta0: ScalarSpec::Constant(0.0),
            gamma: 1.0,
            bc: BcName::Dirichlet,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VelocityConfig {
    TranslateX,
    TranslateY,
    Dilate {
        #[serde(default = "origin")]
        center: [f64; 2],
    },
    Rotate {
        #[serde(default = "origin")]
        center: [f64; 2],
    },
    Stretch {
        #[serde(default = "origin")]
        center: [f64; 2],
    },
    /// Gaussian bump times the outward normal on the boundary, extended
    /// harmonically inside.
    NormalBump {
        center: [f64; 2],
        width: f64,
    },
    /// CSV with columns `vx,vy`, one row per mesh node.
    Nodal {
        path: PathBuf,
    },
}

impl Default for VelocityConfig {
    fn default() -> Self {
        VelocityConfig::Dilate { center: origin() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Central finite-difference steps, coarse to fine.
    pub fd_steps: Vec<f64>,
    pub fd_check: bool,
    pub eig_count: usize,
    pub multiplicity_tol: f64,
    pub include_target_flux: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            fd_steps: vec![1e-2, 5e-3, 2.5e-3],
            fd_check: true,
            eig_count: 6,
            multiplicity_tol: 1e-2,
            include_target_flux: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopoMode {
    Source,
    Hole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopoConfig {
    pub mode: TopoMode,
    pub queries: Vec<[f64; 2]>,
    /// Radii of the quotient sweep.
    pub eps: Vec<f64>,
}

impl Default for TopoConfig {
    fn default() -> Self {
        TopoConfig { mode: TopoMode::Source, queries: Vec::new(), eps: vec![0.02, 0.04, 0.08] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorName {
    Source,
    Hole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopoPhaseConfig {
    pub every: usize,
    pub quantile: f64,
    pub eps0: f64,
    pub indicator: IndicatorName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeSection {
    pub max_iters: usize,
    pub step0: f64,
    pub armijo_c: f64,
    pub shrink: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub stop_tol: f64,
    pub min_angle_floor: f64,
    pub movable_tags: Vec<String>,
    pub area_target: Option<f64>,
    pub area_rate: f64,
    pub topology: Option<TopoPhaseConfig>,
}

impl Default for OptimizeSection {
    fn default() -> Self {
        let d = shapeopt::optimize::OptimizeConfig::default();
        OptimizeSection {
            max_iters: d.max_iters,
            step0: d.step0,
            armijo_c: d.armijo_c,
            shrink: d.shrink,
            min_step: d.min_step,
            max_step: d.max_step,
            stop_tol: d.stop_tol,
            min_angle_floor: d.min_angle_floor,
            movable_tags: d.movable_tags.iter().map(|t| t.name().to_string()).collect(),
            area_target: None,
            area_rate: 1.0,
            topology: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    /// Every derivative formula on the configured problem.
    Setup,
    /// The fixed benchmark suite, run twice for the determinism check.
    Acceptance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateSection {
    pub suite: Suite,
    pub shape_tol: f64,
    pub topo_tol: f64,
}

impl Default for ValidateSection {
    fn default() -> Self {
        ValidateSection { suite: Suite::Setup, shape_tol: 0.05, topo_tol: 0.10 }
    }
}

/// Parses the right-hand side of `--set` as a TOML value, falling back to
/// a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies `key.path=value` to a table, creating intermediate tables.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Override(format!("'{assignment}' is not of the form key.path=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Override(format!("empty key in '{path}'")));
    }
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut cur = table;
    for (i, k) in parents.iter().enumerate() {
        let entry = cur.entry(k.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Override(format!("'{}' is not a table", keys[..=i].join("."))))?;
    }
    cur.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// SHA-256 of the effective configuration in canonical TOML.
    pub fn digest(&self) -> String {
        let canonical = toml::to_string(self).unwrap_or_default();
        Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn from_table(table: Table) -> Result<RunConfig, CliError> {
    serde_path_to_error::deserialize(Value::Table(table)).map_err(|e| CliError::Config {
        key: e.path().to_string(),
        message: e.inner().to_string().lines().next().unwrap_or_default().to_string(),
    })
}

pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
    let mut table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Syntax { path: path.to_path_buf(), message: e.to_string() })?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    from_table(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<RunConfig, CliError> {
        from_table(s.parse().unwrap())
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_key_reports_its_path() {
        let err = parse("[problem]\nk3 = 2.0\n").unwrap_err();
        match err {
            CliError::Config { key, message } => {
                assert_eq!(key, "problem.k3");
                assert!(message.contains("k3"), "{message}");
            }
            other => panic!("{other}"),
        }
        let err = parse("[mesh]\nkind = \"disk\"\nradius = 1.0\nwidth = 2.0\n").unwrap_err();
        assert!(err.to_string().contains("width"), "{err}");
    }

    #[test]
    fn overrides_take_precedence_and_create_tables() {
        let mut t: Table = "[problem]\nk2 = 1.0\n".parse().unwrap();
        apply_override(&mut t, "problem.k2=2.5").unwrap();
        apply_override(&mut t, "problem.bc=neumann").unwrap();
        apply_override(&mut t, "topo.queries=[[0.1, 0.2]]").unwrap();
        apply_override(&mut t, "mesh.kind=\"rectangle\"").unwrap();
        let c = from_table(t).unwrap();
        assert_eq!(c.problem.k2, 2.5);
        assert_eq!(c.problem.bc, BcName::Neumann);
        assert_eq!(c.topo.queries, vec![[0.1, 0.2]]);
        assert!(matches!(c.mesh, MeshConfig::Rectangle { .. }));
    }

    #[test]
    fn malformed_overrides_are_rejected() {
        let mut t = Table::new();
        assert!(apply_override(&mut t, "novalue").is_err());
        assert!(apply_override(&mut t, "a..b=1").is_err());
        apply_override(&mut t, "a=1").unwrap();
        assert!(apply_override(&mut t, "a.b=1").is_err());
    }

    #[test]
    fn affine_scalars_parse() {
        let c = parse("[problem]\nf = [1.0, 1.0, 0.0]\neta0 = 0.5\n").unwrap();
        assert_eq!(c.problem.f, ScalarSpec::Affine([1.0, 1.0, 0.0]));
        assert_eq!(c.problem.eta0, ScalarSpec::Constant(0.5));
    }

    #[test]
    fn digest_tracks_effective_values() {
        let a = parse("").unwrap();
        let b = parse("[problem]\nk2 = 1.0\n").unwrap();
        let c = parse("[problem]\nk2 = 2.0\n").unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        assert_eq!(a.digest().len(), 64);
    }
}
