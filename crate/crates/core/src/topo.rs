//! Topological derivatives.
//!
//! Three quantities live here: the source-contrast derivative as a nodal
//! field, the hole-nucleation derivative at query points, and the first-order
//! eigenvalue shift caused by a small Dirichlet hole. Each comes with an
//! empirical counterpart built from conforming inclusions or punched meshes.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fem::{assemble_load, element_geometry, interpolate, recovered_gradients, Field, Operators};
use crate::helmholtz::{
    adjoint_load, perturbed_with, AdjointConvention, BcVariant, DeflatedSolver, HelmholtzSolver, ProblemData,
    SolveOptions,
};
use crate::mesh::{carve_inclusion, local_mesh_size, punch_hole_with, HoleSpec, Mesh, PunchOptions, PunchResult, Vec2};
use crate::oracle::{linear_fit, observed_order, richardson, LinearFit};
use crate::shape_grad::evaluate_j;
use crate::spectral::{detect_multiplicity, solve_eigs, EigenCluster};

/// Relative gap below which two discrete eigenvalues count as one.
pub const CLUSTER_TOL: f64 = 1e-4;

/// `coeff * eps^exponent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleFunction {
    pub coeff: f64,
    pub exponent: f64,
}

impl ScaleFunction {
    /// Area of a disk of radius `eps` scaled from a reference of area `mes`.
    pub fn area(mes: f64) -> Self {
        ScaleFunction { coeff: mes, exponent: 2.0 }
    }

    pub fn eval(&self, eps: f64) -> f64 {
        self.coeff * eps.powf(self.exponent)
    }
}

#[derive(Debug, Clone)]
pub struct TopoField {
    /// `(1 - gamma) f p` at every node.
    pub values: Field,
    pub scale: ScaleFunction,
    pub convention: AdjointConvention,
    pub state: Field,
    pub adjoint: Field,
}

impl TopoField {
    pub fn at(&self, mesh: &Mesh, x: Vec2) -> Result<f64> {
        interpolate(mesh, &self.values.values, x)
    }
}

/// Source-contrast derivative `(1 - gamma) f p` with the adjoint in the
/// topological sign convention.
pub fn topo_source_field(mesh: &Mesh, data: &ProblemData, variant: BcVariant) -> Result<TopoField> {
    data.validate(mesh)?;
    let solver = HelmholtzSolver::new(mesh, data.k2, variant, &SolveOptions::default())?;
    let state = solver.solve(&assemble_load(mesh, &data.f)?, "eta")?.solution;
    let convention = AdjointConvention::Topological;
    let load = adjoint_load(mesh, &solver.ops, data, &state.values, convention)?;
    let adjoint = solver.solve(&load, "p")?.solution;
    let f = data.f.at_nodes(mesh)?;
    let contrast = 1.0 - data.gamma;
    let values = f.iter().zip(&adjoint.values).map(|(fi, pi)| contrast * (fi * pi)).collect();
    Ok(TopoField {
        values: Field::new("topo_source", values),
        scale: ScaleFunction::area(PI),
        convention,
        state,
        adjoint,
    })
}

/// Which perturbation a quotient sweep applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuotientMode {
    /// Source multiplied by `gamma` on a disk, same mesh for both solves.
    Source(BcVariant),
    /// Dirichlet hole, with the state being the first Dirichlet eigenfunction.
    DirichletHole,
}

impl QuotientMode {
    pub fn name(self) -> &'static str {
        match self {
            QuotientMode::Source(_) => "source",
            QuotientMode::DirichletHole => "dirichlet_hole",
        }
    }

    pub fn scale(self) -> ScaleFunction {
        match self {
            QuotientMode::Source(_) => ScaleFunction::area(PI),
            // the reference measure is part of the hole derivative itself
            QuotientMode::DirichletHole => ScaleFunction { coeff: 1.0, exponent: 2.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuotientRow {
    pub eps: f64,
    pub scale: f64,
    pub delta_psi: f64,
    pub quotient: f64,
    /// `int |grad d|^2 + int d^2` for `d = eta_eps - eta`.
    pub squared_misfit: f64,
    /// Source mode: `(1 - gamma) sum_i p_i int_disk f phi_i`.
    pub adjoint_pairing: Option<f64>,
    /// Hole mode: eigenvalue without and with the hole.
    pub eigenvalues: Option<(f64, f64)>,
}

impl QuotientRow {
    /// `delta_psi - squared_misfit - adjoint_pairing`, zero up to round-off.
    pub fn identity_defect(&self) -> Option<f64> {
        self.adjoint_pairing.map(|p| self.delta_psi - self.squared_misfit - p)
    }
}

#[derive(Debug, Clone)]
pub struct QuotientTable {
    pub mode: QuotientMode,
    pub center: Vec2,
    /// Sorted by decreasing `eps`.
    pub rows: Vec<QuotientRow>,
    /// Richardson limit of the two finest quotients, remainder order 1.
    pub limit: f64,
    pub observed_order: Option<f64>,
    /// `delta_psi` against `eps^2`.
    pub eps2_fit: Option<LinearFit>,
}

fn check_transferable(data: &ProblemData) -> Result<()> {
    if data.f.is_mesh_bound() || data.a.is_mesh_bound() || data.eta0.is_mesh_bound() {
        return Err(Error::InvalidArgument(
            "quotient sweeps remesh around the query point; give f, A and eta0 as constants or functions".into(),
        ));
    }
    Ok(())
}

fn fill(mesh: &Mesh, center: Vec2, eps: f64, edges: usize) -> Result<PunchResult> {
    let opts = PunchOptions { fill: true, min_hole_edges: edges, ..Default::default() };
    punch_hole_with(mesh, &HoleSpec::disk(center, eps), &opts)
}

fn source_row(mesh: &Mesh, data: &ProblemData, variant: BcVariant, center: Vec2, eps: f64) -> Result<QuotientRow> {
    let filled = fill(mesh, center, eps, 48)?;
    let m = &filled.mesh;
    let hole = HoleSpec::disk(center, eps);
    let h = local_mesh_size(m, center, eps)?;
    if h > 0.25 * eps * (1.0 + 1e-9) {
        return Err(Error::Resolution(format!(
            "local mesh size {h} exceeds a quarter of eps = {eps} at ({}, {}); refine the base mesh",
            center.x, center.y
        )));
    }
    let solver = HelmholtzSolver::new(m, data.k2, variant, &SolveOptions::default())?;
    let pert = perturbed_with(m, &solver, data, &hole)?;
    let (eta, eta_eps) = (&pert.base.solution.values, &pert.perturbed.solution.values);
    let delta_psi = evaluate_j(m, data, eta_eps)?.j_total - evaluate_j(m, data, eta)?.j_total;
    let d: Vec<f64> = eta_eps.iter().zip(eta).map(|(a, b)| a - b).collect();
    let squared_misfit = solver.ops.stiffness.bilinear(&d, &d) + solver.ops.mass.bilinear(&d, &d);
    let load = adjoint_load(m, &solver.ops, data, eta, AdjointConvention::Topological)?;
    let p = solver.solve(&load, "p")?.solution.values;
    let pairing = (1.0 - data.gamma) * p.iter().zip(&pert.disk_load).map(|(a, b)| a * b).sum::<f64>();
    let scale = QuotientMode::Source(variant).scale().eval(eps);
    Ok(QuotientRow {
        eps,
        scale,
        delta_psi,
        quotient: delta_psi / scale,
        squared_misfit,
        adjoint_pairing: Some(pairing),
        eigenvalues: None,
    })
}

/// Eigenpair `index` of `mesh`, required to be simple.
pub fn simple_pair(mesh: &Mesh, variant: BcVariant, index: usize) -> Result<EigenCluster> {
    let pairs = solve_eigs(mesh, variant, index + 3)?;
    let clusters = detect_multiplicity(mesh, &pairs, CLUSTER_TOL)?;
    let cluster = clusters
        .into_iter()
        .find(|c| c.pairs.iter().any(|p| p.index == index))
        .ok_or_else(|| Error::Evaluation(format!("eigenpair {index} was not computed")))?;
    if cluster.multiplicity != 1 {
        return Err(Error::Multiplicity {
            lambda: cluster.lambda_mean,
            multiplicity: cluster.multiplicity,
            hint: "hole derivatives need a simple eigenvalue",
        });
    }
    Ok(cluster)
}

/// Eigenpair `index` before and after carving the disk, the latter extended
/// by zero and sign-aligned with the former.
struct HoleEigenpairs {
    filled: PunchResult,
    holed: Mesh,
    lambda: f64,
    eta: Vec<f64>,
    lambda_eps: f64,
    eta_eps_holed: Vec<f64>,
    eta_eps_extended: Vec<f64>,
    ops: Operators,
}

fn hole_eigenpairs(mesh: &Mesh, hole: &HoleSpec, variant: BcVariant, index: usize) -> Result<HoleEigenpairs> {
    let opts = PunchOptions { fill: true, min_hole_edges: 32, ..Default::default() };
    let filled = punch_hole_with(mesh, hole, &opts)?;
    let (holed, map) = carve_inclusion(&filled)?;
    let base = simple_pair(&filled.mesh, variant, index)?;
    let pert = simple_pair(&holed, variant, index)?;
    let eta = base.pairs[0].eigenfunction.values.clone();
    let mut eta_eps_holed = pert.pairs[0].eigenfunction.values.clone();
    let mut ext: Vec<f64> = map.iter().map(|j| j.map_or(0.0, |j| eta_eps_holed[j])).collect();
    let ops = Operators::new(&filled.mesh)?;
    let overlap: f64 = ops.mass.matvec(&eta).iter().zip(&ext).map(|(a, b)| a * b).sum();
    if overlap < 0.0 {
        ext.iter_mut().for_each(|v| *v = -*v);
        eta_eps_holed.iter_mut().for_each(|v| *v = -*v);
    }
    Ok(HoleEigenpairs {
        filled,
        holed,
        lambda: base.pairs[0].lambda,
        eta,
        lambda_eps: pert.pairs[0].lambda,
        eta_eps_holed,
        eta_eps_extended: ext,
        ops,
    })
}

impl HoleEigenpairs {
    fn squared_misfit(&self) -> f64 {
        let d: Vec<f64> = self.eta_eps_extended.iter().zip(&self.eta).map(|(a, b)| a - b).collect();
        self.ops.stiffness.bilinear(&d, &d) + self.ops.mass.bilinear(&d, &d)
    }
}

fn hole_row(mesh: &Mesh, data: &ProblemData, center: Vec2, eps: f64) -> Result<QuotientRow> {
    let pairs = hole_eigenpairs(mesh, &HoleSpec::disk(center, eps), BcVariant::Dirichlet, 0)?;
    let psi = evaluate_j(&pairs.filled.mesh, data, &pairs.eta)?.j_total;
    let psi_eps = evaluate_j(&pairs.holed, data, &pairs.eta_eps_holed)?.j_total;
    let delta_psi = psi_eps - psi;
    let scale = QuotientMode::DirichletHole.scale().eval(eps);
    Ok(QuotientRow {
        eps,
        scale,
        delta_psi,
        quotient: delta_psi / scale,
        squared_misfit: pairs.squared_misfit(),
        adjoint_pairing: None,
        eigenvalues: Some((pairs.lambda, pairs.lambda_eps)),
    })
}

/// Difference quotients `(psi(eps) - psi(0)) / scale(eps)` over a sweep of
/// radii around `center`, with a Richardson limit.
pub fn topo_quotient(
    mesh: &Mesh,
    data: &ProblemData,
    center: Vec2,
    eps_list: &[f64],
    mode: QuotientMode,
) -> Result<QuotientTable> {
    data.validate(mesh)?;
    check_transferable(data)?;
    if eps_list.is_empty() {
        return Err(Error::InvalidArgument("empty radius list".into()));
    }
    let mut eps: Vec<f64> = eps_list.to_vec();
    if eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::InvalidArgument("radii must be positive".into()));
    }
    eps.sort_by(|a, b| b.total_cmp(a));
    eps.dedup();
    let rows = eps
        .iter()
        .map(|&e| match mode {
            QuotientMode::Source(variant) => source_row(mesh, data, variant, center, e),
            QuotientMode::DirichletHole => hole_row(mesh, data, center, e),
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len();
    let q: Vec<f64> = rows.iter().map(|r| r.quotient).collect();
    let limit = if n >= 2 { richardson(q[n - 2], q[n - 1], rows[n - 2].eps / rows[n - 1].eps, 1.0) } else { q[0] };
    let observed_order = if n >= 3 {
        Some(observed_order(q[n - 3], q[n - 2], q[n - 1], rows[n - 2].eps / rows[n - 1].eps)).filter(|o| o.is_finite())
    } else {
        None
    };
    let eps2_fit = if n >= 2 {
        let samples: Vec<(f64, f64)> = rows.iter().map(|r| (r.eps * r.eps, r.delta_psi)).collect();
        Some(linear_fit(&samples)?)
    } else {
        None
    };
    Ok(QuotientTable { mode, center, rows, limit, observed_order, eps2_fit })
}

/// State and adjoint feeding the hole derivative
/// `mes (grad eta . grad p - c eta p - |grad eta - A|^2 - (eta - eta0)^2)`,
/// where `c` is the eigenvalue or `k2`.
#[derive(Debug, Clone)]
pub struct HoleSensitivity {
    pub state: Field,
    pub adjoint: Field,
    pub coupling: f64,
}

/// Individual contributions at one point, before the factor `mes`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoleTerms {
    pub gradient_pairing: f64,
    pub coupling: f64,
    pub gradient_misfit: f64,
    pub value_misfit: f64,
}

impl HoleTerms {
    pub fn total(&self) -> f64 {
        self.gradient_pairing - self.coupling - self.gradient_misfit - self.value_misfit
    }
}

impl HoleSensitivity {
    /// Eigenvalue case: the adjoint `(K - lambda M) p = -2 (...)` is solved
    /// in the complement of the eigenfunction.
    pub fn eigen(mesh: &Mesh, data: &ProblemData, cluster: &EigenCluster, variant: BcVariant) -> Result<Self> {
        if cluster.multiplicity != 1 {
            return Err(Error::Multiplicity {
                lambda: cluster.lambda_mean,
                multiplicity: cluster.multiplicity,
                hint: "hole derivatives need a simple eigenvalue",
            });
        }
        data.a.check(mesh)?;
        data.eta0.check(mesh)?;
        let pair = &cluster.pairs[0];
        pair.eigenfunction.check(mesh)?;
        let ops = Operators::new(mesh)?;
        let load = adjoint_load(mesh, &ops, data, &pair.eigenfunction.values, AdjointConvention::Topological)?;
        let solver = DeflatedSolver::new(mesh, &ops, pair.lambda, variant, &pair.eigenfunction.values)?;
        let (p, _) = solver.solve(&load)?;
        Ok(HoleSensitivity {
            state: Field::new("eta", pair.eigenfunction.values.clone()),
            adjoint: Field::new("p", p),
            coupling: pair.lambda,
        })
    }

    /// Helmholtz state with source `f` and coupling `k2`.
    pub fn helmholtz(mesh: &Mesh, data: &ProblemData, variant: BcVariant) -> Result<Self> {
        let field = topo_source_field(mesh, data, variant)?;
        Ok(HoleSensitivity { state: field.state, adjoint: field.adjoint, coupling: data.k2 })
    }

    /// Terms at `x`, with gradients taken on the triangle containing `x`.
    pub fn terms(&self, mesh: &Mesh, data: &ProblemData, x: Vec2) -> Result<HoleTerms> {
        let h = local_mesh_size(mesh, x, 0.0)
            .map_err(|_| Error::Evaluation(format!("query point ({}, {}) is outside the mesh", x.x, x.y)))?;
        if mesh.distance_to_boundary(x) < 2.0 * h {
            return Err(Error::Evaluation(format!("query point within 2h of boundary at ({}, {})", x.x, x.y)));
        }
        let (t, b) = mesh
            .locate(x)
            .ok_or_else(|| Error::Evaluation(format!("query point ({}, {}) is outside the mesh", x.x, x.y)))?;
        let tri = mesh.triangles()[t];
        let (_, g) = element_geometry(mesh, t)?;
        let (eta, p) = (&self.state.values, &self.adjoint.values);
        let value = |u: &[f64]| b[0] * u[tri[0]] + b[1] * u[tri[1]] + b[2] * u[tri[2]];
        let grad = |u: &[f64]| g[0] * u[tri[0]] + g[1] * u[tri[1]] + g[2] * u[tri[2]];
        let (e, ge, pv, gp) = (value(eta), grad(eta), value(p), grad(p));
        let a = data.a.eval(mesh, t, b);
        let e0 = data.eta0.eval(mesh, t, b);
        Ok(HoleTerms {
            gradient_pairing: ge.dot(&gp),
            coupling: self.coupling * e * pv,
            gradient_misfit: (ge - a).norm_squared(),
            value_misfit: (e - e0).powi(2),
        })
    }

    pub fn at(&self, mesh: &Mesh, data: &ProblemData, x: Vec2, mes_omega: f64) -> Result<f64> {
        Ok(mes_omega * self.terms(mesh, data, x)?.total())
    }

    /// Nodal map of the derivative from recovered gradients.
    pub fn nodal(&self, mesh: &Mesh, data: &ProblemData, mes_omega: f64) -> Result<Field> {
        self.state.check(mesh)?;
        let ge = recovered_gradients(mesh, &self.state.values)?;
        let gp = recovered_gradients(mesh, &self.adjoint.values)?;
        let a = data.a.at_nodes(mesh)?;
        let e0 = data.eta0.at_nodes(mesh)?;
        let values = (0..mesh.num_nodes())
            .map(|i| {
                let (e, p) = (self.state.values[i], self.adjoint.values[i]);
                let terms = HoleTerms {
                    gradient_pairing: ge[i].dot(&gp[i]),
                    coupling: self.coupling * e * p,
                    gradient_misfit: (ge[i] - a[i]).norm_squared(),
                    value_misfit: (e - e0[i]).powi(2),
                };
                mes_omega * terms.total()
            })
            .collect();
        Ok(Field::new("topo_hole", values))
    }
}

/// Hole derivative at `x` for the simple eigenpair in `cluster`.
pub fn topo_hole_derivative(
    mesh: &Mesh,
    data: &ProblemData,
    cluster: &EigenCluster,
    x: Vec2,
    hole: &HoleSpec,
) -> Result<f64> {
    hole.validate()?;
    HoleSensitivity::eigen(mesh, data, cluster, BcVariant::Dirichlet)?.at(mesh, data, x, hole.mes_omega)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigHoleRow {
    pub eps: f64,
    /// Eigenvalue on the mesh with the disk triangulated.
    pub lambda: f64,
    /// Eigenvalue with the disk removed.
    pub lambda_eps: f64,
    /// `|eta_eps - eta|_{H1}` over the full domain, `eta_eps` extended by zero.
    pub h1_difference: f64,
}

impl EigHoleRow {
    pub fn shift(&self) -> f64 {
        self.lambda_eps - self.lambda
    }
}

#[derive(Debug, Clone)]
pub struct EigHoleExpansion {
    pub lambda0: f64,
    pub eta_at_center: f64,
    /// `4 pi eta(x0)^2 cap`.
    pub first_order_coeff: f64,
    /// `4 pi eta(x0) cap`, the unsquared variant, for reporting.
    pub unsquared_coeff: f64,
    pub remainder_order: f64,
    pub rows: Vec<EigHoleRow>,
    /// Shift against `eps`.
    pub linear_fit: Option<LinearFit>,
    /// Shift against `1 / |ln eps|`.
    pub log_fit: Option<LinearFit>,
}

impl EigHoleExpansion {
    pub fn predicted(&self, eps: f64) -> f64 {
        self.lambda0 + eps * self.first_order_coeff
    }

    /// Every hole raises the eigenvalue, more so for larger holes.
    pub fn increasing(&self) -> bool {
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| a.eps.total_cmp(&b.eps));
        rows.iter().all(|r| r.shift() > 0.0) && rows.windows(2).all(|w| w[1].lambda_eps > w[0].lambda_eps)
    }
}

/// Predicted first-order coefficient of eigenpair `index` of `cluster` at
/// `hole.center`, plus the eigenvalue shift measured on punched meshes.
pub fn eig_hole_expansion(
    mesh: &Mesh,
    cluster: &EigenCluster,
    variant: BcVariant,
    hole: &HoleSpec,
    eps_list: &[f64],
) -> Result<EigHoleExpansion> {
    hole.validate()?;
    if cluster.multiplicity != 1 {
        return Err(Error::Multiplicity {
            lambda: cluster.lambda_mean,
            multiplicity: cluster.multiplicity,
            hint: "the hole expansion needs a simple eigenvalue",
        });
    }
    let pair = &cluster.pairs[0];
    let eta = interpolate(mesh, &pair.eigenfunction.values, hole.center)?;
    let mut eps: Vec<f64> = eps_list.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    let rows = eps
        .iter()
        .map(|&e| {
            let pairs = hole_eigenpairs(mesh, &HoleSpec { radius: e, ..*hole }, variant, pair.index)?;
            Ok(EigHoleRow {
                eps: e,
                lambda: pairs.lambda,
                lambda_eps: pairs.lambda_eps,
                h1_difference: pairs.squared_misfit().sqrt(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let fit = |x: fn(f64) -> f64| -> Result<Option<LinearFit>> {
        if rows.len() < 2 {
            return Ok(None);
        }
        let samples: Vec<(f64, f64)> = rows.iter().map(|r| (x(r.eps), r.shift())).collect();
        linear_fit(&samples).map(Some)
    };
    Ok(EigHoleExpansion {
        lambda0: pair.lambda,
        eta_at_center: eta,
        first_order_coeff: 4.0 * PI * eta * eta * hole.cap_omega,
        unsquared_coeff: 4.0 * PI * eta * hole.cap_omega,
        remainder_order: 2.0,
        linear_fit: fit(|e| e)?,
        log_fit: fit(|e| 1.0 / e.ln().abs())?,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{element_gradients, ScalarData, VectorData};
    use crate::mesh::{generate_disk, generate_rectangle};

    fn data(gamma: f64) -> ProblemData {
        ProblemData { gamma, ..Default::default() }
    }

    #[test]
    fn source_field_vanishes_without_contrast_or_source() {
        let m = generate_rectangle(1.0, 1.0, 0.1).unwrap();
        let f = topo_source_field(&m, &data(1.0), BcVariant::Dirichlet).unwrap();
        assert!(f.values.values.iter().all(|v| *v == 0.0));
        let zero = ProblemData { f: ScalarData::Constant(0.0), gamma: 0.5, ..Default::default() };
        let f = topo_source_field(&m, &zero, BcVariant::Dirichlet).unwrap();
        assert!(f.values.values.iter().all(|v| *v == 0.0));
        assert_eq!(f.scale.eval(0.1), PI * 0.01);
    }

    #[test]
    fn source_field_is_affine_in_gamma() {
        let m = generate_rectangle(1.0, 1.0, 0.1).unwrap();
        let base = topo_source_field(&m, &data(0.5), BcVariant::Dirichlet).unwrap();
        let f = data(0.5).f.at_nodes(&m).unwrap();
        let unit: Vec<f64> = f.iter().zip(&base.adjoint.values).map(|(a, b)| a * b).collect();
        for gamma in [0.25, 2.0, 3.0] {
            let t = topo_source_field(&m, &data(gamma), BcVariant::Dirichlet).unwrap();
            for (a, b) in t.values.values.iter().zip(&unit) {
                assert_eq!(*a, (1.0 - gamma) * b);
            }
        }
    }

    #[test]
    fn source_quotient_identity_is_exact() {
        let m = generate_rectangle(1.0, 1.0, 0.05).unwrap();
        let d = ProblemData { eta0: ScalarData::function(|p| p.x * p.y), ..data(0.5) };
        let t =
            topo_quotient(&m, &d, Vec2::new(0.5, 0.5), &[0.08], QuotientMode::Source(BcVariant::Dirichlet)).unwrap();
        let row = &t.rows[0];
        let defect = row.identity_defect().unwrap();
        assert!(defect.abs() <= 1e-10 * row.delta_psi.abs(), "defect {defect:e} vs {:e}", row.delta_psi);
    }

    #[test]
    fn source_quotient_without_contrast_is_zero() {
        let m = generate_rectangle(1.0, 1.0, 0.05).unwrap();
        let t = topo_quotient(
            &m,
            &data(1.0),
            Vec2::new(0.4, 0.5),
            &[0.05, 0.1],
            QuotientMode::Source(BcVariant::Dirichlet),
        )
        .unwrap();
        assert!(t.rows.iter().all(|r| r.quotient == 0.0));
        assert_eq!(t.limit, 0.0);
    }

    #[test]
    fn mesh_bound_data_is_rejected_by_sweeps() {
        let m = generate_rectangle(1.0, 1.0, 0.1).unwrap();
        let d = ProblemData { eta0: ScalarData::Nodal(vec![0.0; m.num_nodes()]), ..data(0.5) };
        let r = topo_quotient(&m, &d, Vec2::new(0.5, 0.5), &[0.1], QuotientMode::DirichletHole);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn matched_targets_give_zero_hole_derivative() {
        let m = generate_disk(Vec2::zeros(), 1.0, 0.1).unwrap();
        let cluster = simple_pair(&m, BcVariant::Dirichlet, 0).unwrap();
        let eta = cluster.pairs[0].eigenfunction.values.clone();
        let d = ProblemData {
            a: VectorData::PerElement(element_gradients(&m, &eta).unwrap()),
            eta0: ScalarData::Nodal(eta),
            ..Default::default()
        };
        let s = HoleSensitivity::eigen(&m, &d, &cluster, BcVariant::Dirichlet).unwrap();
        assert!(s.adjoint.values.iter().all(|v| v.abs() < 1e-10));
        for x in [Vec2::new(0.1, 0.2), Vec2::new(-0.3, 0.05), Vec2::new(0.0, -0.5)] {
            assert!(topo_hole_derivative(&m, &d, &cluster, x, &HoleSpec::disk(x, 0.05)).unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn query_near_boundary_is_rejected() {
        let m = generate_disk(Vec2::zeros(), 1.0, 0.1).unwrap();
        let cluster = simple_pair(&m, BcVariant::Dirichlet, 0).unwrap();
        let x = Vec2::new(0.95, 0.0);
        let err = topo_hole_derivative(&m, &ProblemData::default(), &cluster, x, &HoleSpec::disk(x, 0.01)).unwrap_err();
        assert!(err.to_string().contains("query point within 2h of boundary"));
    }

    #[test]
    fn capacity_scales_the_coefficient() {
        let m = generate_disk(Vec2::zeros(), 1.0, 0.1).unwrap();
        let cluster = simple_pair(&m, BcVariant::Dirichlet, 0).unwrap();
        let hole = HoleSpec::disk(Vec2::new(0.1, 0.0), 0.05);
        let one = eig_hole_expansion(&m, &cluster, BcVariant::Dirichlet, &hole, &[]).unwrap();
        let two =
            eig_hole_expansion(&m, &cluster, BcVariant::Dirichlet, &HoleSpec { cap_omega: 2.0, ..hole }, &[]).unwrap();
        assert_eq!(two.first_order_coeff, 2.0 * one.first_order_coeff);
        assert_eq!(one.predicted(0.0), one.lambda0);
    }

    #[test]
    fn hole_raises_the_first_eigenvalue() {
        let m = generate_disk(Vec2::zeros(), 1.0, 0.1).unwrap();
        let cluster = simple_pair(&m, BcVariant::Dirichlet, 0).unwrap();
        let e =
            eig_hole_expansion(&m, &cluster, BcVariant::Dirichlet, &HoleSpec::disk(Vec2::zeros(), 0.1), &[0.1, 0.2])
                .unwrap();
        assert!(e.increasing(), "{:?}", e.rows);
    }
}
