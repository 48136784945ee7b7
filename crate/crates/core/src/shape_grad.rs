//! The misfit functional `J = int |grad eta - A|^2 + int |eta - eta0|^2` and
//! its shape derivatives, with finite-difference oracles on deformed meshes.

use crate::error::{Error, Result};
use crate::fem::{
    assemble_load, consistent_flux, element_geometry, integrate, tangential_derivative, tangential_laplacian,
    Operators, QUADRATURE,
};
use crate::helmholtz::{
    adjoint_load, AdjointConvention, BcVariant, DeflatedSolver, HelmholtzSolver, ProblemData, SolveOptions,
};
use crate::mesh::{deform, BoundaryGeometry, BoundaryTag, Mesh, Vec2, VelocityField};
use crate::oracle::{fd_table, FdResult};
use crate::spectral::{simple_eig_derivative, solve_eigs, EigenCluster, EigenPair};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunctionalValue {
    pub j_total: f64,
    /// `int |grad eta - A|^2`.
    pub j_gradient_misfit: f64,
    /// `int |eta - eta0|^2`.
    pub j_value_misfit: f64,
}

/// Both misfits with the edge-midpoint rule on every triangle.
pub fn evaluate_j(mesh: &Mesh, data: &ProblemData, state: &[f64]) -> Result<FunctionalValue> {
    if state.len() != mesh.num_nodes() {
        return Err(Error::InvalidArgument(format!(
            "state has {} values, mesh has {} nodes",
            state.len(),
            mesh.num_nodes()
        )));
    }
    data.a.check(mesh)?;
    data.eta0.check(mesh)?;
    let (mut jg, mut jv) = (0.0, 0.0);
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let (area, g) = element_geometry(mesh, t)?;
        let grad = g[0] * state[tri[0]] + g[1] * state[tri[1]] + g[2] * state[tri[2]];
        for q in QUADRATURE {
            let eta = q[0] * state[tri[0]] + q[1] * state[tri[1]] + q[2] * state[tri[2]];
            jg += area / 3.0 * (grad - data.a.eval(mesh, t, q)).norm_squared();
            jv += area / 3.0 * (eta - data.eta0.eval(mesh, t, q)).powi(2);
        }
    }
    Ok(FunctionalValue { j_total: jg + jv, j_gradient_misfit: jg, j_value_misfit: jv })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientTerm {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct ShapeGradientResult {
    pub dj: f64,
    /// `g` with `dj = int g V.n` when every moving boundary is Dirichlet.
    pub density: Option<Vec<f64>>,
    /// Hadamard density for descent on every boundary; natural parts have
    /// the tangential term integrated by parts.
    pub descent_density: Vec<f64>,
    /// Contributions summing to `dj`.
    pub terms: Vec<GradientTerm>,
    /// Values reported next to `dj` but not part of it.
    pub diagnostics: Vec<GradientTerm>,
    pub convention: AdjointConvention,
    pub warnings: Vec<String>,
}

impl ShapeGradientResult {
    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().chain(&self.diagnostics).find(|t| t.name == name).map(|t| t.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ShapeGradOptions {
    /// Adds `2 (A.n) d eta/dn` to the Dirichlet density. Without it the
    /// density is the classical one, which is exact only when `A.n = 0` on
    /// the moving boundary.
    pub include_target_flux: bool,
}

/// One tagged boundary with its condition and the normal velocity.
struct Part {
    tag: BoundaryTag,
    dirichlet: bool,
    geom: BoundaryGeometry,
    vn: Vec<f64>,
}

fn parts(mesh: &Mesh, variant: BcVariant, vel: &[Vec2]) -> Result<Vec<Part>> {
    mesh.tags()
        .into_iter()
        .map(|tag| {
            let geom = mesh.boundary_geometry(tag)?;
            let vn = crate::fem::normal_component(&geom, vel);
            Ok(Part { tag, dirichlet: variant.constrained_tags().contains(&tag), geom, vn })
        })
        .collect()
}

fn residual(ops: &Operators, k2: f64, u: &[f64], load: &[f64]) -> Vec<f64> {
    let au = ops.helmholtz(k2).matvec(u);
    au.iter().zip(load).map(|(a, b)| a - b).collect()
}

/// Adjoint with the load it was solved against. `flux_offset` is the factor
/// of `(d eta/dn - A.n)` that the load's boundary part adds to `dp/dn`.
struct Adjoint {
    values: Vec<f64>,
    load: Vec<f64>,
    flux_offset: f64,
}

/// Boundary quantities shared by every formula.
struct Traces {
    k2: f64,
    eta: Vec<f64>,
    p: Vec<f64>,
    dn_eta: Vec<f64>,
    dn_p: Vec<f64>,
    a: Vec<Vec2>,
    eta0: Vec<f64>,
    f: Vec<f64>,
}

impl Traces {
    #[allow(clippy::too_many_arguments)]
    fn new(
        mesh: &Mesh,
        ops: &Operators,
        data: &ProblemData,
        k2: f64,
        eta: &[f64],
        eta_load: &[f64],
        adj: &Adjoint,
        f_nodes: Vec<f64>,
    ) -> Result<Self> {
        let r_eta = residual(ops, k2, eta, eta_load);
        let r_p = residual(ops, k2, &adj.values, &adj.load);
        let a = data.a.at_nodes(mesh)?;
        let n = mesh.num_nodes();
        let mut dn_eta = vec![0.0; n];
        let mut dn_p = vec![0.0; n];
        for tag in mesh.tags() {
            let geom = mesh.boundary_geometry(tag)?;
            let fe = consistent_flux(mesh, tag, &r_eta)?;
            let fp = consistent_flux(mesh, tag, &r_p)?;
            for &i in &geom.nodes {
                dn_eta[i] = fe[i];
                dn_p[i] = fp[i] + adj.flux_offset * (fe[i] - a[i].dot(&geom.node_normals[i]));
            }
        }
        Ok(Traces {
            k2,
            eta: eta.to_vec(),
            p: adj.values.clone(),
            dn_eta,
            dn_p,
            a,
            eta0: data.eta0.at_nodes(mesh)?,
            f: f_nodes,
        })
    }
}

/// Nodal densities of one part, zero off the part.
struct PartDensities {
    misfit: Vec<f64>,
    flux_pair: Vec<f64>,
    flux_square: Vec<f64>,
    target_flux: Vec<f64>,
    /// `-p d2eta/dn2`.
    curvature: Vec<f64>,
    /// `p dt(eta)`, paired with `dt(V.n)`.
    tangential_weight: Vec<f64>,
    /// `-dt(p dt(eta))`, the tangential term after integration by parts.
    tangential_ibp: Vec<f64>,
    /// Alternative natural density `f p - grad eta . grad p + k2 eta p`.
    lagrangian: Vec<f64>,
    eta_sq: Vec<f64>,
    grad_sq: Vec<f64>,
}

fn densities(part: &Part, tr: &Traces) -> PartDensities {
    let n = tr.eta.len();
    let g = &part.geom;
    let dt_eta = tangential_derivative(g, &tr.eta);
    let dt_p = tangential_derivative(g, &tr.p);
    let lap_t = tangential_laplacian(g, &tr.eta);
    let mut d = PartDensities {
        misfit: vec![0.0; n],
        flux_pair: vec![0.0; n],
        flux_square: vec![0.0; n],
        target_flux: vec![0.0; n],
        curvature: vec![0.0; n],
        tangential_weight: vec![0.0; n],
        tangential_ibp: vec![0.0; n],
        lagrangian: vec![0.0; n],
        eta_sq: vec![0.0; n],
        grad_sq: vec![0.0; n],
    };
    let mut p_dt_eta = vec![0.0; n];
    for &i in &g.nodes {
        let (nrm, tan) = (g.node_normals[i], g.node_tangents[i]);
        let grad_eta = nrm * tr.dn_eta[i] + tan * dt_eta[i];
        let grad_p = nrm * tr.dn_p[i] + tan * dt_p[i];
        d.misfit[i] = (grad_eta - tr.a[i]).norm_squared() + (tr.eta[i] - tr.eta0[i]).powi(2);
        d.flux_pair[i] = tr.dn_eta[i] * tr.dn_p[i];
        d.flux_square[i] = tr.dn_eta[i] * tr.dn_eta[i];
        d.target_flux[i] = 2.0 * tr.a[i].dot(&nrm) * tr.dn_eta[i];
        let d2n = -tr.k2 * tr.eta[i] - tr.f[i] - g.node_curvature[i] * tr.dn_eta[i] - lap_t[i];
        d.curvature[i] = -tr.p[i] * d2n;
        d.tangential_weight[i] = tr.p[i] * dt_eta[i];
        p_dt_eta[i] = tr.p[i] * dt_eta[i];
        d.lagrangian[i] = tr.f[i] * tr.p[i] - grad_eta.dot(&grad_p) + tr.k2 * tr.eta[i] * tr.p[i];
        d.eta_sq[i] = tr.eta[i] * tr.eta[i];
        d.grad_sq[i] = grad_eta.norm_squared();
    }
    let dt_flux = tangential_derivative(g, &p_dt_eta);
    for &i in &g.nodes {
        d.tangential_ibp[i] = -dt_flux[i];
    }
    d
}

fn weighted(a: &[f64], w: &[f64]) -> Vec<f64> {
    a.iter().zip(w).map(|(x, y)| x * y).collect()
}

/// Largest turning angle between consecutive edges, in degrees.
fn max_turning_deg(g: &BoundaryGeometry) -> f64 {
    let mut worst: f64 = 0.0;
    let mut offset = 0;
    for lp in &g.loops {
        let m = lp.len();
        for i in 0..m {
            let a = g.edge_normals[offset + (i + m - 1) % m];
            let b = g.edge_normals[offset + i];
            worst = worst.max(a.dot(&b).clamp(-1.0, 1.0).acos().to_degrees());
        }
        offset += m;
    }
    worst
}

/// Sign choices of the assembled formula.
#[derive(Debug, Clone, Copy)]
struct Signs {
    /// Factor of `int dn(eta) dn(p) V.n` on Dirichlet parts.
    flux_pair: f64,
    /// Factor of the `p d eta'/dn` terms on natural parts.
    natural: f64,
    include_target_flux: bool,
}

struct Assembled {
    dj: f64,
    terms: Vec<GradientTerm>,
    diagnostics: Vec<GradientTerm>,
    descent: Vec<f64>,
    pure_hadamard: bool,
    warnings: Vec<String>,
}

fn term(name: impl Into<String>, value: f64) -> GradientTerm {
    GradientTerm { name: name.into(), value }
}

fn assemble_formula(parts: &[Part], tr: &Traces, signs: Signs) -> Assembled {
    let n = tr.eta.len();
    let mut terms = Vec::new();
    let mut diagnostics = Vec::new();
    let mut descent = vec![0.0; n];
    let mut pure = true;
    let mut warnings = Vec::new();
    for part in parts {
        let d = densities(part, tr);
        let name = part.tag.name();
        let int_vn = |dens: &[f64]| integrate(&part.geom, &weighted(dens, &part.vn));
        terms.push(term(format!("{name}.misfit"), int_vn(&d.misfit)));
        for &i in &part.geom.nodes {
            descent[i] += d.misfit[i];
        }
        if part.dirichlet {
            terms.push(term(format!("{name}.flux_pair"), signs.flux_pair * int_vn(&d.flux_pair)));
            terms.push(term(format!("{name}.flux_square"), -2.0 * int_vn(&d.flux_square)));
            let tf = int_vn(&d.target_flux);
            if signs.include_target_flux {
                terms.push(term(format!("{name}.target_flux"), tf));
            } else {
                diagnostics.push(term(format!("{name}.target_flux_omitted"), tf));
            }
            for &i in &part.geom.nodes {
                descent[i] += signs.flux_pair * d.flux_pair[i] - 2.0 * d.flux_square[i]
                    + if signs.include_target_flux { d.target_flux[i] } else { 0.0 };
            }
        } else {
            if part.vn.iter().any(|x| *x != 0.0) {
                pure = false;
            }
            let dt_vn = tangential_derivative(&part.geom, &part.vn);
            let tangential = integrate(&part.geom, &weighted(&d.tangential_weight, &dt_vn));
            terms.push(term(format!("{name}.normal_curvature"), signs.natural * int_vn(&d.curvature)));
            terms.push(term(format!("{name}.tangential"), signs.natural * tangential));
            diagnostics.push(term(format!("{name}.lagrangian_form"), int_vn(&d.lagrangian) + int_vn(&d.misfit)));
            for &i in &part.geom.nodes {
                descent[i] += signs.natural * (d.curvature[i] + d.tangential_ibp[i]);
            }
            let turn = max_turning_deg(&part.geom);
            if turn > 30.0 {
                warnings.push(format!(
                    "{name} boundary has a {turn:.0} degree corner; curvature-based second normal derivative is unreliable there"
                ));
            }
        }
    }
    let dj = terms.iter().map(|t| t.value).sum();
    Assembled { dj, terms, diagnostics, descent, pure_hadamard: pure, warnings }
}

fn finish(a: Assembled, convention: AdjointConvention) -> ShapeGradientResult {
    ShapeGradientResult {
        dj: a.dj,
        density: a.pure_hadamard.then(|| a.descent.clone()),
        descent_density: a.descent,
        terms: a.terms,
        diagnostics: a.diagnostics,
        convention,
        warnings: a.warnings,
    }
}

/// Shape derivative of `J` for the Helmholtz state under `variant`, summed
/// over every tagged boundary. Dirichlet parts use
/// `dn(eta) dn(p) - 2 dn(eta)^2 + misfit`, natural parts use
/// `p (-d2eta/dn2 V.n + grad eta . grad_Gamma(V.n)) + misfit V.n`, with the
/// adjoint solved in the shape convention.
pub fn shape_derivative(
    mesh: &Mesh,
    data: &ProblemData,
    v: &VelocityField,
    variant: BcVariant,
    opts: &ShapeGradOptions,
) -> Result<ShapeGradientResult> {
    data.validate(mesh)?;
    let vel = v.at_nodes(mesh)?;
    let solver = HelmholtzSolver::new(mesh, data.k2, variant, &SolveOptions::default())?;
    let load = assemble_load(mesh, &data.f)?;
    let eta = solver.solve(&load, "eta")?.solution.values;
    let convention = AdjointConvention::Shape;
    let p_load = adjoint_load(mesh, &solver.ops, data, &eta, convention)?;
    let p = solver.solve(&p_load, "p")?.solution.values;
    let adj = Adjoint { values: p, load: p_load, flux_offset: 2.0 };
    let tr = Traces::new(mesh, &solver.ops, data, data.k2, &eta, &load, &adj, data.f.at_nodes(mesh)?)?;
    let signs = Signs { flux_pair: 1.0, natural: 1.0, include_target_flux: opts.include_target_flux };
    let mut out = finish(assemble_formula(&parts(mesh, variant, &vel)?, &tr, signs), convention);
    let j = evaluate_j(mesh, data, &eta)?;
    out.diagnostics.push(term("j", j.j_total));
    Ok(out)
}

/// Dirichlet state on Outer (and holes).
pub fn dj_dirichlet(mesh: &Mesh, data: &ProblemData, v: &VelocityField) -> Result<ShapeGradientResult> {
    shape_derivative(mesh, data, v, BcVariant::Dirichlet, &ShapeGradOptions::default())
}

/// Natural condition on Outer.
pub fn dj_neumann(mesh: &Mesh, data: &ProblemData, v: &VelocityField) -> Result<ShapeGradientResult> {
    shape_derivative(mesh, data, v, BcVariant::Neumann, &ShapeGradOptions::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObstacleCase {
    /// `k2` off the spectrum.
    Plain,
    /// `k2` is the first (simple) eigenvalue of the obstacle problem.
    SimpleEig,
}

/// Obstacle problem: Dirichlet on Outer, natural on Obstacle.
pub fn dj_obstacle(
    mesh: &Mesh,
    data: &ProblemData,
    v: &VelocityField,
    which: ObstacleCase,
) -> Result<ShapeGradientResult> {
    if !mesh.has_tag(BoundaryTag::Obstacle) {
        return Err(Error::MissingTag(BoundaryTag::Obstacle));
    }
    match which {
        ObstacleCase::Plain => shape_derivative(mesh, data, v, BcVariant::Obstacle, &ShapeGradOptions::default()),
        ObstacleCase::SimpleEig => {
            let pairs = solve_eigs(mesh, BcVariant::Obstacle, 3)?;
            let clusters = crate::spectral::detect_multiplicity(mesh, &pairs, 1e-2)?;
            eigen_coupled(mesh, &clusters[0], data, v, BcVariant::Obstacle)
        }
    }
}

/// `J` with `eta` the normalized eigenfunction of a simple eigenvalue
/// `k2 = lambda`, which moves with the domain.
///
/// `dj` follows the classical statement: the adjoint carries a homogeneous
/// natural condition on Outer and the derivative is
/// `(k2)' int eta p - int dn(eta) dn(p) V.n + ...` on Dirichlet parts. Since
/// `lambda` is a Neumann eigenvalue when the state itself is natural, that
/// adjoint is solved in the M-orthogonal complement of `eta`.
/// `diagnostics` carries `deflated_total`, the derivative obtained with the
/// state's own boundary conditions and the deflated adjoint.
pub fn dj_with_eigenvalue(
    mesh: &Mesh,
    cluster: &EigenCluster,
    data: &ProblemData,
    v: &VelocityField,
    variant: BcVariant,
) -> Result<ShapeGradientResult> {
    if variant == BcVariant::Obstacle {
        return Err(Error::InvalidArgument("use dj_obstacle for the obstacle eigenvalue case".into()));
    }
    eigen_coupled(mesh, cluster, data, v, variant)
}

fn simple_pair(cluster: &EigenCluster) -> Result<&EigenPair> {
    if cluster.multiplicity != 1 {
        return Err(Error::Multiplicity {
            lambda: cluster.lambda_mean,
            multiplicity: cluster.multiplicity,
            hint: "only eigenvalue branch derivatives exist for multiple eigenvalues; use multiple_eig_derivative",
        });
    }
    Ok(&cluster.pairs[0])
}

fn eigen_coupled(
    mesh: &Mesh,
    cluster: &EigenCluster,
    data: &ProblemData,
    v: &VelocityField,
    variant: BcVariant,
) -> Result<ShapeGradientResult> {
    data.a.check(mesh)?;
    data.eta0.check(mesh)?;
    let pair = simple_pair(cluster)?;
    let lambda = pair.lambda;
    let eta = pair.eigenfunction.values.clone();
    let vel = v.at_nodes(mesh)?;
    let ops = Operators::new(mesh)?;
    let n = mesh.num_nodes();
    let zero = vec![0.0; n];
    let convention = AdjointConvention::Shape;
    let r_load = adjoint_load(mesh, &ops, data, &eta, convention)?;
    let all_parts = parts(mesh, variant, &vel)?;

    // stated adjoint: homogeneous natural condition on Outer (Obstacle for
    // the obstacle problem), Dirichlet elsewhere as in the state
    let stated_tag = if variant == BcVariant::Obstacle { BoundaryTag::Obstacle } else { BoundaryTag::Outer };
    let stated_variant = if variant == BcVariant::Obstacle { BcVariant::Obstacle } else { BcVariant::Neumann };
    let r_eta = residual(&ops, lambda, &eta, &zero);
    let a_nodes = data.a.at_nodes(mesh)?;
    let mut stated_load = r_load.clone();
    let geom = mesh.boundary_geometry(stated_tag)?;
    for &i in &geom.nodes {
        stated_load[i] += -2.0 * r_eta[i] + 2.0 * geom.node_weights[i] * a_nodes[i].dot(&geom.node_normals[i]);
    }
    let state_natural_on_stated = !variant.constrained_tags().contains(&stated_tag);
    let stated_p = if state_natural_on_stated {
        DeflatedSolver::new(mesh, &ops, lambda, stated_variant, &eta)?.solve(&stated_load)?.0
    } else {
        HelmholtzSolver::with_operators(mesh, ops.clone(), lambda, stated_variant, &SolveOptions::default())?
            .solve(&stated_load, "p")?
            .solution
            .values
    };
    let stated = Adjoint { values: stated_p, load: stated_load, flux_offset: 0.0 };
    let tr = Traces::new(mesh, &ops, data, lambda, &eta, &zero, &stated, zero.clone())?;

    let obstacle = variant == BcVariant::Obstacle;
    let signs = Signs { flux_pair: -1.0, natural: if obstacle { -1.0 } else { 1.0 }, include_target_flux: false };
    let mut a = assemble_formula(&all_parts, &tr, signs);
    let k2_prime = if obstacle {
        // sum of |grad eta|^2 V.n over every boundary minus lambda eta^2 V.n on the obstacle
        let mut s = 0.0;
        for part in &all_parts {
            let d = densities(part, &tr);
            s += integrate(&part.geom, &weighted(&d.grad_sq, &part.vn));
            if !part.dirichlet {
                s -= lambda * integrate(&part.geom, &weighted(&d.eta_sq, &part.vn));
            }
        }
        s
    } else {
        simple_eig_derivative(mesh, cluster, v, variant)?
    };
    let eta_p = ops.mass.bilinear(&eta, &stated.values);
    let coupling = if obstacle { -k2_prime * eta_p } else { k2_prime * eta_p };
    a.terms.push(term("eigen_coupling", coupling));
    a.dj += coupling;
    a.diagnostics.push(term("eigenvalue_derivative", k2_prime));
    a.diagnostics.push(term("eigenvalue_derivative_simple", simple_eig_derivative(mesh, cluster, v, variant)?));

    // deflated adjoint with the state's own boundary conditions
    let (p_d, mu) = DeflatedSolver::new(mesh, &ops, lambda, variant, &eta)?.solve(&r_load)?;
    let mut mu_load = r_load.clone();
    let me = ops.mass.matvec(&eta);
    mu_load.iter_mut().zip(&me).for_each(|(l, m)| *l -= mu * m);
    let deflated = Adjoint { values: p_d, load: mu_load, flux_offset: 2.0 };
    let tr_d = Traces::new(mesh, &ops, data, lambda, &eta, &zero, &deflated, zero.clone())?;
    let signs_d = Signs { flux_pair: 1.0, natural: 1.0, include_target_flux: true };
    let ad = assemble_formula(&all_parts, &tr_d, signs_d);
    let mut normalization = 0.0;
    for part in all_parts.iter().filter(|p| !p.dirichlet) {
        let d = densities(part, &tr_d);
        normalization -= 0.5 * mu * integrate(&part.geom, &weighted(&d.eta_sq, &part.vn));
    }
    a.diagnostics.push(term("deflated_normalization", normalization));
    a.diagnostics.push(term("deflated_total", ad.dj + normalization));
    a.diagnostics.push(term("j", evaluate_j(mesh, data, &eta)?.j_total));
    Ok(finish(a, convention))
}

/// `(J(phi_t) - J(phi_-t)) / 2t` on the same connectivity for each `t`.
/// Data given as functions are re-evaluated on the moved nodes; nodal data
/// moves with them.
pub fn fd_shape_derivative(
    mesh: &Mesh,
    data: &ProblemData,
    v: &VelocityField,
    t_list: &[f64],
    variant: BcVariant,
) -> Result<FdResult> {
    let j_at = |t: f64| -> Result<f64> {
        let m = deform(mesh, v, t)?;
        let eta = crate::helmholtz::solve_state(&m, data, variant)?.solution.values;
        Ok(evaluate_j(&m, data, &eta)?.j_total)
    };
    fd_table(t_list, 2.0, |t| Ok((j_at(t)? - j_at(-t)?) / (2.0 * t)))
}

/// Index of the pair in `pairs` with the largest M-overlap with `reference`.
pub fn track_branch(mesh: &Mesh, reference: &[f64], pairs: &[EigenPair]) -> Result<(usize, f64)> {
    let mass = Operators::new(mesh)?.mass;
    let (idx, ov) = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| (i, mass.bilinear(reference, &p.eigenfunction.values)))
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .ok_or_else(|| Error::Precondition("no eigenpairs to track".into()))?;
    Ok((idx, ov))
}

/// Central differences of `J(eta_t)` with `eta_t` the eigenfunction on the
/// moved mesh that overlaps most with the base one, sign-aligned.
pub fn fd_eigen_functional(
    mesh: &Mesh,
    pair: &EigenPair,
    data: &ProblemData,
    v: &VelocityField,
    variant: BcVariant,
    t_list: &[f64],
) -> Result<FdResult> {
    let count = pair.index + 3;
    let j_at = |t: f64| -> Result<f64> {
        let m = deform(mesh, v, t)?;
        let pairs = solve_eigs(&m, variant, count)?;
        let (i, ov) = track_branch(&m, &pair.eigenfunction.values, &pairs)?;
        let mut eta = pairs[i].eigenfunction.values.clone();
        if ov < 0.0 {
            eta.iter_mut().for_each(|x| *x = -*x);
        }
        Ok(evaluate_j(&m, data, &eta)?.j_total)
    };
    fd_table(t_list, 2.0, |t| Ok((j_at(t)? - j_at(-t)?) / (2.0 * t)))
}

/// One-sided differences `(lambda_i(t) - lambda_i(0)) / t` of the sorted
/// eigenvalues of a cluster, one table per branch.
pub fn fd_eigenvalue_branches(
    mesh: &Mesh,
    cluster: &EigenCluster,
    v: &VelocityField,
    variant: BcVariant,
    t_list: &[f64],
) -> Result<Vec<FdResult>> {
    let first = cluster.pairs.iter().map(|p| p.index).min().unwrap_or(0);
    let count = first + cluster.multiplicity;
    let base: Vec<f64> = cluster.pairs.iter().map(|p| p.lambda).collect();
    let mut base_sorted = base.clone();
    base_sorted.sort_by(f64::total_cmp);
    let mut at: std::collections::BTreeMap<u64, Vec<f64>> = Default::default();
    for &t in t_list {
        let m = deform(mesh, v, t)?;
        let pairs = solve_eigs(&m, variant, count + 2)?;
        at.insert(t.to_bits(), pairs[first..count].iter().map(|p| p.lambda).collect());
    }
    (0..cluster.multiplicity)
        .map(|b| fd_table(t_list, 1.0, |t| Ok((at[&t.to_bits()][b] - base_sorted[b]) / t)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{element_gradients, ScalarData, VectorData};
    use crate::mesh::{generate_disk, generate_rectangle};

    #[test]
    fn functional_examples() {
        let sq = generate_rectangle(1.0, 1.0, 0.1).unwrap();
        let zero = vec![0.0; sq.num_nodes()];
        let d1 = ProblemData { eta0: ScalarData::Constant(1.0), ..Default::default() };
        assert!((evaluate_j(&sq, &d1, &zero).unwrap().j_total - 1.0).abs() < 1e-12);
        let d2 = ProblemData { a: VectorData::Constant(Vec2::new(1.0, 0.0)), ..Default::default() };
        assert!((evaluate_j(&sq, &d2, &zero).unwrap().j_total - 1.0).abs() < 1e-12);
        let eta: Vec<f64> = sq.nodes().iter().map(|p| p.x * p.y).collect();
        let met = ProblemData {
            a: VectorData::PerElement(element_gradients(&sq, &eta).unwrap()),
            eta0: ScalarData::Nodal(eta.clone()),
            ..Default::default()
        };
        assert_eq!(evaluate_j(&sq, &met, &eta).unwrap().j_total, 0.0);
    }

    #[test]
    fn zero_velocity_gives_zero() {
        let m = generate_disk(Vec2::zeros(), 1.0, 0.2).unwrap();
        let data = ProblemData::default();
        assert_eq!(dj_dirichlet(&m, &data, &VelocityField::zero()).unwrap().dj, 0.0);
        assert_eq!(dj_neumann(&m, &data, &VelocityField::zero()).unwrap().dj, 0.0);
    }

    #[test]
    fn density_reintegrates() {
        let m = generate_disk(Vec2::zeros(), 1.0, 0.15).unwrap();
        let data = ProblemData { eta0: ScalarData::Constant(0.1), ..Default::default() };
        let v = VelocityField::analytic("bump", |p| Vec2::new(p.x * p.y, p.x));
        let r = dj_dirichlet(&m, &data, &v).unwrap();
        let g = r.density.as_ref().unwrap();
        let geom = m.boundary_geometry(BoundaryTag::Outer).unwrap();
        let vn = crate::fem::normal_component(&geom, &v.at_nodes(&m).unwrap());
        let again = integrate(&geom, &weighted(g, &vn));
        assert!((again - r.dj).abs() <= 1e-12 * r.dj.abs().max(1e-300));
    }

    #[test]
    fn targets_met_leave_flux_square() {
        // the adjoint vanishes; its flux is recovered to O(h) and shrinks
        let mut ratios = Vec::new();
        for h in [0.2, 0.1, 0.05] {
            let m = generate_disk(Vec2::zeros(), 1.0, h).unwrap();
            let base = ProblemData::default();
            let eta = crate::helmholtz::solve_state(&m, &base, BcVariant::Dirichlet).unwrap().solution.values;
            let met = ProblemData {
                a: VectorData::PerElement(element_gradients(&m, &eta).unwrap()),
                eta0: ScalarData::Nodal(eta.clone()),
                ..Default::default()
            };
            let p = crate::helmholtz::solve_adjoint(
                &m,
                &met,
                &crate::fem::Field::new("eta", eta.clone()),
                BcVariant::Dirichlet,
                AdjointConvention::Shape,
            )
            .unwrap();
            assert!(p.solution.values.iter().all(|x| x.abs() < 1e-12));
            let r = dj_dirichlet(&m, &met, &VelocityField::dilation(Vec2::zeros())).unwrap();
            let sq = r.term("outer.flux_square").unwrap();
            assert!(sq < 0.0);
            ratios.push((r.term("outer.flux_pair").unwrap() / sq).abs());
        }
        println!("{ratios:?}");
        assert!(ratios[2] < ratios[1] && ratios[1] < ratios[0]);
        assert!(ratios[2] < 0.05);
    }

    #[test]
    fn fd_of_area_like_functional() {
        // J = int |0 - eta0|^2 with eta0 = 1 and f = 0 is the area: dJ = 2 area for V = x
        let m = generate_disk(Vec2::zeros(), 1.0, 0.2).unwrap();
        let data = ProblemData { f: ScalarData::Constant(0.0), eta0: ScalarData::Constant(1.0), ..Default::default() };
        let fd = fd_shape_derivative(
            &m,
            &data,
            &VelocityField::dilation(Vec2::zeros()),
            &[1e-2, 5e-3, 2.5e-3],
            BcVariant::Dirichlet,
        )
        .unwrap();
        assert!((fd.derivative - 2.0 * m.area()).abs() < 1e-10);
        let zero = fd_shape_derivative(&m, &data, &VelocityField::zero(), &[1e-2, 5e-3], BcVariant::Dirichlet).unwrap();
        assert_eq!(zero.derivative, 0.0);
    }
}
