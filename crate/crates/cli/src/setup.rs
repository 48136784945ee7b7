//! Configuration sections to core objects.

use std::collections::BTreeMap;
use std::path::Path;

use shapeopt::fem::{harmonic_extension, ScalarData, VectorData};
use shapeopt::helmholtz::{BcVariant, ProblemData};
use shapeopt::mesh::{generate_annulus, generate_disk, generate_rectangle, import_msh, Shape, TagMap, VelocityField};
use shapeopt::optimize::{AreaConstraint, OptimizeConfig, TopoIndicator, TopoPhase};
use shapeopt::{BoundaryTag, Mesh, Vec2};

use crate::config::{BcName, IndicatorName, MeshConfig, OptimizeSection, ProblemConfig, ScalarSpec, VelocityConfig};
use crate::error::CliError;

fn v2(p: [f64; 2]) -> Vec2 {
    Vec2::new(p[0], p[1])
}

/// Relative paths in the config resolve against the config file's directory.
fn resolve(base: &Path, p: &Path) -> std::path::PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn mesh(cfg: &MeshConfig, base: &Path) -> Result<Mesh, CliError> {
    Ok(match cfg {
        MeshConfig::Disk { center, radius, h } => generate_disk(v2(*center), *radius, *h)?,
        MeshConfig::Rectangle { width, height, h } => generate_rectangle(*width, *height, *h)?,
        MeshConfig::Annulus { outer_radius, obstacle_radius, obstacle_center, h } => generate_annulus(
            &Shape::Disk { center: Vec2::zeros(), radius: *outer_radius },
            &Shape::Disk { center: v2(*obstacle_center), radius: *obstacle_radius },
            *h,
        )?,
        MeshConfig::Msh { path, tags } => import_msh(&resolve(base, path), &tag_map(tags)?)?,
    })
}

fn tag_map(tags: &BTreeMap<String, String>) -> Result<TagMap, CliError> {
    if tags.is_empty() {
        return Ok(TagMap::default());
    }
    let mut out = BTreeMap::new();
    for (id, name) in tags {
        let key = format!("mesh.tags.{id}");
        let id: i64 = id
            .parse()
            .map_err(|_| CliError::Config { key: key.clone(), message: "physical ids must be integers".into() })?;
        let tag: BoundaryTag =
            name.parse().map_err(|e: shapeopt::Error| CliError::Config { key, message: e.to_string() })?;
        out.insert(id, tag);
    }
    Ok(TagMap(out))
}

pub fn variant(bc: BcName) -> BcVariant {
    match bc {
        BcName::Dirichlet => BcVariant::Dirichlet,
        BcName::Neumann => BcVariant::Neumann,
        BcName::Obstacle => BcVariant::Obstacle,
        BcName::AllDirichlet => BcVariant::AllDirichlet,
    }
}

fn scalar(s: ScalarSpec) -> ScalarData {
    match s {
        ScalarSpec::Constant(c) => ScalarData::Constant(c),
        ScalarSpec::Affine([c, gx, gy]) => ScalarData::function(move |p| c + gx * p.x + gy * p.y),
    }
}

pub fn problem(cfg: &ProblemConfig) -> ProblemData {
    ProblemData {
        k2: cfg.k2,
        f: scalar(cfg.f),
        a: VectorData::Constant(v2(cfg.a)),
        eta0: scalar(cfg.eta0),
        gamma: cfg.gamma,
    }
}

pub fn velocity(cfg: &VelocityConfig, mesh: &Mesh, base: &Path) -> Result<VelocityField, CliError> {
    Ok(match cfg {
        VelocityConfig::TranslateX => VelocityField::translation(Vec2::new(1.0, 0.0)),
        VelocityConfig::TranslateY => VelocityField::translation(Vec2::new(0.0, 1.0)),
        VelocityConfig::Dilate { center } => VelocityField::dilation(v2(*center)),
        VelocityConfig::Rotate { center } => VelocityField::rotation(v2(*center)),
        VelocityConfig::Stretch { center } => VelocityField::stretch(v2(*center)),
        VelocityConfig::NormalBump { center, width } => normal_bump(mesh, v2(*center), *width)?,
        VelocityConfig::Nodal { path } => nodal(mesh, &resolve(base, path))?,
    })
}

fn normal_bump(mesh: &Mesh, center: Vec2, width: f64) -> Result<VelocityField, CliError> {
    if !(width > 0.0) {
        return Err(CliError::Config {
            key: "velocity.width".into(),
            message: format!("must be positive, got {width}"),
        });
    }
    let mut prescribed = Vec::new();
    for tag in mesh.tags() {
        let geom = mesh.boundary_geometry(tag)?;
        for &i in &geom.nodes {
            let r2 = (mesh.nodes()[i] - center).norm_squared();
            prescribed.push((i, (-r2 / (width * width)).exp() * geom.node_normals[i]));
        }
    }
    Ok(VelocityField::nodal("normal_bump", harmonic_extension(mesh, &prescribed)?))
}

#[derive(serde::Deserialize)]
struct NodalRow {
    vx: f64,
    vy: f64,
}

fn nodal(mesh: &Mesh, path: &Path) -> Result<VelocityField, CliError> {
    let err = |message: String| CliError::Velocity { path: path.to_path_buf(), message };
    let mut reader = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    let values = reader
        .deserialize::<NodalRow>()
        .map(|r| r.map(|r| Vec2::new(r.vx, r.vy)).map_err(|e| err(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() != mesh.num_nodes() {
        return Err(err(format!("{} rows for {} mesh nodes", values.len(), mesh.num_nodes())));
    }
    Ok(VelocityField::nodal("nodal", values))
}

pub fn optimize(cfg: &OptimizeSection, bc: BcName) -> Result<OptimizeConfig, CliError> {
    let movable_tags = cfg
        .movable_tags
        .iter()
        .map(|t| t.parse())
        .collect::<Result<Vec<BoundaryTag>, _>>()
        .map_err(|e| CliError::Config { key: "optimize.movable_tags".into(), message: e.to_string() })?;
    let out = OptimizeConfig {
        max_iters: cfg.max_iters,
        step0: cfg.step0,
        armijo_c: cfg.armijo_c,
        shrink: cfg.shrink,
        min_step: cfg.min_step,
        max_step: cfg.max_step,
        area_constraint: match cfg.area_target {
            Some(area) => AreaConstraint::Target { area, rate: cfg.area_rate },
            None => AreaConstraint::None,
        },
        movable_tags,
        topo_phase: cfg.topology.as_ref().map(|t| TopoPhase {
            every: t.every,
            quantile: t.quantile,
            eps0: t.eps0,
            indicator: match t.indicator {
                IndicatorName::Source => TopoIndicator::Source,
                IndicatorName::Hole => TopoIndicator::Hole,
            },
        }),
        stop_tol: cfg.stop_tol,
        variant: variant(bc),
        min_angle_floor: cfg.min_angle_floor,
        output_dir: None,
    };
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_bump_is_normal_and_peaks_at_center() {
        let m = generate_disk(Vec2::zeros(), 1.0, 0.2).unwrap();
        let v = normal_bump(&m, Vec2::new(1.0, 0.0), 0.3).unwrap().at_nodes(&m).unwrap();
        let geom = m.boundary_geometry(BoundaryTag::Outer).unwrap();
        let mut best = (0.0, Vec2::zeros());
        for &i in &geom.nodes {
            let n = geom.node_normals[i];
            assert!((v[i] - v[i].dot(&n) * n).norm() < 1e-12);
            if v[i].norm() > best.0 {
                best = (v[i].norm(), m.nodes()[i]);
            }
        }
        assert!((best.1 - Vec2::new(1.0, 0.0)).norm() < 0.25, "{:?}", best.1);
        assert!(normal_bump(&m, Vec2::zeros(), 0.0).is_err());
    }

    #[test]
    fn unknown_tag_names_are_config_errors() {
        let tags = BTreeMap::from([("1".to_string(), "rim".to_string())]);
        assert!(matches!(tag_map(&tags), Err(CliError::Config { .. })));
        let tags = BTreeMap::from([("x".to_string(), "outer".to_string())]);
        assert!(matches!(tag_map(&tags), Err(CliError::Config { .. })));
    }
}
