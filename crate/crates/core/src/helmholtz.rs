//! State and adjoint Helmholtz problems `-lap u - k2 u = f` with resonance
//! detection.

use std::fmt;

use crate::error::{Error, Result};
use crate::fem::{
    assemble_load, assemble_load_on, assemble_vector_load, CsrMatrix, DofMap, Field, Operators, ScalarData,
    SparseSolver, VectorData,
};
use crate::mesh::{local_mesh_size, BoundaryTag, HoleSpec, Mesh};

/// Coefficients of the equation and of the misfit functional.
#[derive(Clone)]
pub struct ProblemData {
    pub k2: f64,
    pub f: ScalarData,
    /// Target for the gradient.
    pub a: VectorData,
    /// Target for the value.
    pub eta0: ScalarData,
    /// Source contrast inside a perturbation disk.
    pub gamma: f64,
}

impl Default for ProblemData {
    fn default() -> Self {
        ProblemData {
            k2: 1.0,
            f: ScalarData::Constant(1.0),
            a: VectorData::default(),
            eta0: ScalarData::default(),
            gamma: 1.0,
        }
    }
}

impl fmt::Debug for ProblemData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemData")
            .field("k2", &self.k2)
            .field("f", &self.f)
            .field("a", &self.a)
            .field("eta0", &self.eta0)
            .field("gamma", &self.gamma)
            .finish()
    }
}

impl ProblemData {
    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        if !self.k2.is_finite() {
            return Err(Error::InvalidArgument(format!("k2 = {} is not finite", self.k2)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("gamma must be positive, got {}", self.gamma)));
        }
        self.f.check(mesh)?;
        self.a.check(mesh)?;
        self.eta0.check(mesh)
    }
}

/// Which boundaries carry a homogeneous Dirichlet condition. Hole
/// boundaries are always Dirichlet; the rest is natural.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BcVariant {
    /// Dirichlet on Outer.
    Dirichlet,
    /// Natural on Outer.
    Neumann,
    /// Dirichlet on Outer, natural on Obstacle.
    Obstacle,
    /// Dirichlet on every tagged boundary.
    AllDirichlet,
}

impl BcVariant {
    pub fn constrained_tags(self) -> &'static [BoundaryTag] {
        match self {
            BcVariant::Dirichlet | BcVariant::Obstacle => &[BoundaryTag::Outer, BoundaryTag::Hole],
            BcVariant::Neumann => &[BoundaryTag::Hole],
            BcVariant::AllDirichlet => &BoundaryTag::ALL,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BcVariant::Dirichlet => "dirichlet",
            BcVariant::Neumann => "neumann",
            BcVariant::Obstacle => "obstacle",
            BcVariant::AllDirichlet => "all_dirichlet",
        }
    }

    pub fn check(self, mesh: &Mesh) -> Result<()> {
        if self == BcVariant::Obstacle && !mesh.has_tag(BoundaryTag::Obstacle) {
            return Err(Error::MissingTag(BoundaryTag::Obstacle));
        }
        Ok(())
    }

    pub fn dofs(self, mesh: &Mesh) -> Result<DofMap> {
        self.check(mesh)?;
        let mut fixed: Vec<usize> = self.constrained_tags().iter().flat_map(|&t| mesh.boundary_nodes(t)).collect();
        fixed.sort_unstable();
        fixed.dedup();
        Ok(DofMap::new(mesh.num_nodes(), &fixed))
    }
}

impl std::str::FromStr for BcVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dirichlet" => Ok(BcVariant::Dirichlet),
            "neumann" => Ok(BcVariant::Neumann),
            "obstacle" => Ok(BcVariant::Obstacle),
            "all_dirichlet" => Ok(BcVariant::AllDirichlet),
            other => Err(Error::InvalidArgument(format!("unknown boundary condition variant '{other}'"))),
        }
    }
}

/// Sign of the adjoint right-hand side.
///
/// `Shape` solves `(K - k2 M) p = +2 (int (grad eta - A) . grad v + int (eta - eta0) v)`,
/// the convention of the shape derivative formulas; `Topological` uses the
/// opposite sign, which is what the source topological derivative expects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AdjointConvention {
    Shape,
    Topological,
}

impl AdjointConvention {
    pub fn sign(self) -> f64 {
        match self {
            AdjointConvention::Shape => 1.0,
            AdjointConvention::Topological => -1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AdjointConvention::Shape => "shape",
            AdjointConvention::Topological => "topological",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Relative distance of `k2` to the spectrum below which solves are refused.
    pub resonance_threshold: f64,
    /// Largest accepted relative algebraic residual.
    pub residual_tol: f64,
    /// Inverse-iteration steps used to locate the nearest eigenvalue.
    pub resonance_probe_steps: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { resonance_threshold: 1e-6, residual_tol: 1e-8, resonance_probe_steps: 12 }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: Field,
    pub residual: f64,
    /// `|k2 - lambda| / max(|lambda|, |k2|, 1 / area)` for the nearest discrete eigenvalue.
    pub resonance_margin: f64,
    pub nearest_eigenvalue: f64,
}

/// Factorized `K - k2 M` with its boundary conditions, reusable for any
/// number of loads.
pub struct HelmholtzSolver {
    pub k2: f64,
    pub variant: BcVariant,
    pub ops: Operators,
    pub dofs: DofMap,
    matrix: CsrMatrix,
    lu: SparseSolver,
    pub resonance_margin: f64,
    pub nearest_eigenvalue: f64,
    area: f64,
    opts: SolveOptions,
}

impl fmt::Debug for HelmholtzSolver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HelmholtzSolver")
            .field("k2", &self.k2)
            .field("variant", &self.variant)
            .field("free_dofs", &self.dofs.num_free())
            .field("resonance_margin", &self.resonance_margin)
            .finish()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl HelmholtzSolver {
    pub fn new(mesh: &Mesh, k2: f64, variant: BcVariant, opts: &SolveOptions) -> Result<Self> {
        Self::with_operators(mesh, Operators::new(mesh)?, k2, variant, opts)
    }

    pub fn with_operators(
        mesh: &Mesh,
        ops: Operators,
        k2: f64,
        variant: BcVariant,
        opts: &SolveOptions,
    ) -> Result<Self> {
        if !k2.is_finite() {
            return Err(Error::InvalidArgument(format!("k2 = {k2} is not finite")));
        }
        let dofs = variant.dofs(mesh)?;
        let full = ops.helmholtz(k2);
        let matrix = full.submatrix(&dofs.free, &dofs.index);
        let lu = SparseSolver::lu(&matrix).map_err(|e| match e {
            Error::Solver(_) => Error::Resonance { k2, nearest_eigenvalue: k2, margin: 0.0 },
            other => other,
        })?;
        let mut s = HelmholtzSolver {
            k2,
            variant,
            ops,
            dofs,
            matrix,
            lu,
            resonance_margin: f64::INFINITY,
            nearest_eigenvalue: f64::NAN,
            area: mesh.area(),
            opts: *opts,
        };
        s.probe_resonance();
        if !(s.resonance_margin >= opts.resonance_threshold) {
            return Err(Error::Resonance { k2, nearest_eigenvalue: s.nearest_eigenvalue, margin: s.resonance_margin });
        }
        Ok(s)
    }

    /// Inverse iteration with the factorized operator. `|y|_M / |x|_M` with
    /// `y = A^{-1} M x` bounds `1 / min |lambda - k2|` from below and
    /// converges to it.
    fn probe_resonance(&mut self) {
        let n = self.dofs.num_free();
        if n == 0 {
            return;
        }
        let mass = self.ops.mass.submatrix(&self.dofs.free, &self.dofs.index);
        let stiff = self.ops.stiffness.submatrix(&self.dofs.free, &self.dofs.index);
        // deterministic, non-symmetric start vector
        let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64 * 0.7548776662).fract() - 0.5)).collect();
        let mut inv_dist: f64 = 0.0;
        for _ in 0..self.opts.resonance_probe_steps.max(1) {
            let mx = mass.matvec(&x);
            let xm = mass.bilinear(&x, &x).sqrt();
            let y = self.lu.solve(&mx);
            if y.iter().any(|v| !v.is_finite()) {
                self.resonance_margin = 0.0;
                self.nearest_eigenvalue = self.k2;
                return;
            }
            let ym = mass.bilinear(&y, &y).sqrt();
            inv_dist = ym / xm;
            x = y.iter().map(|v| v / ym).collect();
        }
        let rq = stiff.bilinear(&x, &x) / mass.bilinear(&x, &x);
        let dist = 1.0 / inv_dist;
        // 1/area keeps the ratio meaningful when both k2 and lambda vanish
        let scale = rq.abs().max(self.k2.abs()).max(1.0 / self.area);
        self.nearest_eigenvalue = rq;
        self.resonance_margin = if scale > 0.0 { dist / scale } else { 0.0 };
    }

    /// Solves with a full-length load; constrained nodes get zero.
    pub fn solve(&self, load: &[f64], name: &str) -> Result<SolveReport> {
        if load.len() != self.dofs.n {
            return Err(Error::InvalidArgument(format!("load has {} entries, expected {}", load.len(), self.dofs.n)));
        }
        let b = self.dofs.restrict(load);
        let mut x = self.lu.solve(&b);
        let bn = norm(&b);
        let residual_of = |x: &[f64]| {
            let r: Vec<f64> = self.matrix.matvec(x).iter().zip(&b).map(|(ax, bi)| ax - bi).collect();
            let rel = if bn > 0.0 { norm(&r) / bn } else { norm(x) };
            (r, rel)
        };
        let (r, mut residual) = residual_of(&x);
        if residual > 1e-13 && residual.is_finite() {
            // one step of iterative refinement
            let dx = self.lu.solve(&r);
            let refined: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a - d).collect();
            let (_, res2) = residual_of(&refined);
            if res2 < residual {
                x = refined;
                residual = res2;
            }
        }
        if !(residual <= self.opts.residual_tol) {
            return Err(Error::Solver(format!(
                "relative residual {residual:e} exceeds tolerance {:e}",
                self.opts.residual_tol
            )));
        }
        Ok(SolveReport {
            solution: Field::new(name, self.dofs.extend(&x)),
            residual,
            resonance_margin: self.resonance_margin,
            nearest_eigenvalue: self.nearest_eigenvalue,
        })
    }
}

/// Solver for `(K - lambda M) u = b` at a simple eigenvalue `lambda`, in the
/// M-orthogonal complement of its eigenvector `e`. The bordered system
/// `[A, M e; (M e)^T, 0] [u; mu] = [b; 0]` is regular; `mu = e^T b / e^T M e`
/// is the removed component.
pub struct DeflatedSolver {
    pub dofs: DofMap,
    lu: SparseSolver,
}

impl fmt::Debug for DeflatedSolver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DeflatedSolver").field("free_dofs", &self.dofs.num_free()).finish()
    }
}

impl DeflatedSolver {
    pub fn new(mesh: &Mesh, ops: &Operators, lambda: f64, variant: BcVariant, eigenvector: &[f64]) -> Result<Self> {
        let dofs = variant.dofs(mesh)?;
        let n = dofs.num_free();
        if eigenvector.len() != mesh.num_nodes() {
            return Err(Error::InvalidArgument("eigenvector length does not match the mesh".into()));
        }
        let a = ops.helmholtz(lambda).submatrix(&dofs.free, &dofs.index);
        let me = ops.mass.submatrix(&dofs.free, &dofs.index).matvec(&dofs.restrict(eigenvector));
        let mut triplets = Vec::with_capacity(a.nnz() + 2 * n);
        for (i, &m) in me.iter().enumerate() {
            triplets.extend(a.row(i).map(|(j, v)| (i, j, v)));
            if m != 0.0 {
                triplets.push((i, n, m));
                triplets.push((n, i, m));
            }
        }
        let bordered = CsrMatrix::from_triplets(n + 1, &triplets)?;
        Ok(DeflatedSolver { dofs, lu: SparseSolver::lu(&bordered)? })
    }

    /// Returns the full-length solution and the multiplier `mu`.
    pub fn solve(&self, load: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut b = self.dofs.restrict(load);
        b.push(0.0);
        let mut x = self.lu.solve(&b);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver("deflated solve produced non-finite values; is the eigenvalue simple?".into()));
        }
        let mu = x.pop().unwrap_or(0.0);
        Ok((self.dofs.extend(&x), mu))
    }
}

/// Full-length adjoint load `sign * 2 (int (grad eta - A) . grad v + int (eta - eta0) v)`.
pub fn adjoint_load(
    mesh: &Mesh,
    ops: &Operators,
    data: &ProblemData,
    state: &[f64],
    convention: AdjointConvention,
) -> Result<Vec<f64>> {
    let k_eta = ops.stiffness.matvec(state);
    let m_eta = ops.mass.matvec(state);
    let ga = if data.a.is_zero() { vec![0.0; state.len()] } else { assemble_vector_load(mesh, &data.a)? };
    let l0 = if data.eta0.is_zero() { vec![0.0; state.len()] } else { assemble_load(mesh, &data.eta0)? };
    let s = 2.0 * convention.sign();
    Ok((0..state.len()).map(|i| s * ((k_eta[i] - ga[i]) + (m_eta[i] - l0[i]))).collect())
}

pub fn solve_state(mesh: &Mesh, data: &ProblemData, variant: BcVariant) -> Result<SolveReport> {
    solve_state_with(mesh, data, variant, &SolveOptions::default())
}

pub fn solve_state_with(
    mesh: &Mesh,
    data: &ProblemData,
    variant: BcVariant,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    data.validate(mesh)?;
    let solver = HelmholtzSolver::new(mesh, data.k2, variant, opts)?;
    solver.solve(&assemble_load(mesh, &data.f)?, "eta")
}

pub fn solve_adjoint(
    mesh: &Mesh,
    data: &ProblemData,
    state: &Field,
    variant: BcVariant,
    convention: AdjointConvention,
) -> Result<SolveReport> {
    data.validate(mesh)?;
    state.check(mesh)?;
    let solver = HelmholtzSolver::new(mesh, data.k2, variant, &SolveOptions::default())?;
    let load = adjoint_load(mesh, &solver.ops, data, &state.values, convention)?;
    solver.solve(&load, "p")
}

/// Centroid classification of triangles inside a disk.
pub fn triangles_in_disk(mesh: &Mesh, hole: &HoleSpec) -> Vec<bool> {
    (0..mesh.num_triangles()).map(|t| (mesh.centroid(t) - hole.center).norm() < hole.radius).collect()
}

#[derive(Debug, Clone)]
pub struct PerturbedReport {
    pub base: SolveReport,
    pub perturbed: SolveReport,
    /// `|eta_eps - eta|_{H1}`.
    pub h1_difference: f64,
    /// Load of `f` restricted to the disk.
    pub disk_load: Vec<f64>,
}

/// State with the source multiplied by `gamma` inside the disk, on the same
/// mesh. Triangles are classified by centroid, which needs `h <= eps / 4`
/// around the disk.
pub fn solve_perturbed_source(
    mesh: &Mesh,
    data: &ProblemData,
    variant: BcVariant,
    hole: &HoleSpec,
) -> Result<PerturbedReport> {
    data.validate(mesh)?;
    hole.validate()?;
    let h = local_mesh_size(mesh, hole.center, hole.radius)?;
    if h > 0.25 * hole.radius * (1.0 + 1e-9) {
        return Err(Error::Resolution(format!(
            "local mesh size {h} exceeds a quarter of the disk radius {}; refine near the disk",
            hole.radius
        )));
    }
    let solver = HelmholtzSolver::new(mesh, data.k2, variant, &SolveOptions::default())?;
    perturbed_with(mesh, &solver, data, hole)
}

pub(crate) fn perturbed_with(
    mesh: &Mesh,
    solver: &HelmholtzSolver,
    data: &ProblemData,
    hole: &HoleSpec,
) -> Result<PerturbedReport> {
    let inside = triangles_in_disk(mesh, hole);
    let load = assemble_load(mesh, &data.f)?;
    let disk_load = assemble_load_on(mesh, &data.f, |t| inside[t])?;
    let perturbed_load: Vec<f64> = load.iter().zip(&disk_load).map(|(l, d)| l + (data.gamma - 1.0) * d).collect();
    let base = solver.solve(&load, "eta")?;
    let perturbed = if data.gamma == 1.0 {
        let mut r = base.clone();
        r.solution.name = "eta_eps".into();
        r
    } else {
        solver.solve(&perturbed_load, "eta_eps")?
    };
    let diff: Vec<f64> = perturbed.solution.values.iter().zip(&base.solution.values).map(|(a, b)| a - b).collect();
    let h1_difference = solver.ops.h1_norm(&diff);
    Ok(PerturbedReport { base, perturbed, h1_difference, disk_load })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_rectangle, Vec2};
    use std::f64::consts::PI;

    #[test]
    fn zero_source_gives_zero() {
        let m = generate_rectangle(1.0, 1.0, 0.1).unwrap();
        let data = ProblemData { f: ScalarData::Constant(0.0), ..Default::default() };
        let r = solve_state(&m, &data, BcVariant::Dirichlet).unwrap();
        assert!(r.solution.values.iter().all(|v| *v == 0.0));
        assert!((r.nearest_eigenvalue - 2.0 * PI * PI).abs() / (2.0 * PI * PI) < 0.05);
    }

    #[test]
    fn manufactured_solution() {
        let m = generate_rectangle(1.0, 1.0, 0.025).unwrap();
        let exact = |p: Vec2| (PI * p.x).sin() * (PI * p.y).sin();
        let data = ProblemData {
            k2: 1.0,
            f: ScalarData::function(move |p| (2.0 * PI * PI - 1.0) * exact(p)),
            ..Default::default()
        };
        let r = solve_state(&m, &data, BcVariant::Dirichlet).unwrap();
        let err: Vec<f64> = r.solution.values.iter().zip(m.nodes()).map(|(u, p)| u - exact(*p)).collect();
        assert!(crate::fem::l2_norm(&m, &err).unwrap() < 2e-3);
        assert!(r.residual < 1e-12);
    }

    #[test]
    fn adjoint_conventions_are_opposite() {
        let m = generate_rectangle(1.0, 1.0, 0.1).unwrap();
        let data = ProblemData { eta0: ScalarData::Constant(0.3), ..Default::default() };
        let eta = solve_state(&m, &data, BcVariant::Dirichlet).unwrap().solution;
        let p3 = solve_adjoint(&m, &data, &eta, BcVariant::Dirichlet, AdjointConvention::Shape).unwrap();
        let p4 = solve_adjoint(&m, &data, &eta, BcVariant::Dirichlet, AdjointConvention::Topological).unwrap();
        for (a, b) in p3.solution.values.iter().zip(&p4.solution.values) {
            assert_eq!(*a, -*b);
        }
        assert!(p3.solution.values.iter().any(|v| v.abs() > 1e-3));
    }

    #[test]
    fn targets_met_give_zero_adjoint() {
        let m = generate_rectangle(1.0, 1.0, 0.1).unwrap();
        let data = ProblemData::default();
        let eta = solve_state(&m, &data, BcVariant::Dirichlet).unwrap().solution;
        let grads = crate::fem::element_gradients(&m, &eta.values).unwrap();
        let met = ProblemData {
            a: VectorData::PerElement(grads),
            eta0: ScalarData::Nodal(eta.values.clone()),
            ..Default::default()
        };
        let p = solve_adjoint(&m, &met, &eta, BcVariant::Dirichlet, AdjointConvention::Shape).unwrap();
        assert!(p.solution.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn resonance_is_refused() {
        let m = generate_rectangle(1.0, 1.0, 0.1).unwrap();
        let probe = HelmholtzSolver::new(&m, 1.0, BcVariant::Dirichlet, &SolveOptions::default()).unwrap();
        // refine the estimate with a shift close to it, then solve there
        let near =
            HelmholtzSolver::new(&m, probe.nearest_eigenvalue * 0.999, BcVariant::Dirichlet, &SolveOptions::default())
                .unwrap();
        let lambda = near.nearest_eigenvalue;
        let data = ProblemData { k2: lambda, ..Default::default() };
        match solve_state(&m, &data, BcVariant::Dirichlet) {
            Err(Error::Resonance { nearest_eigenvalue, margin, .. }) => {
                assert!(margin < 1e-6);
                assert!((nearest_eigenvalue - lambda).abs() < 1e-6 * lambda);
            }
            other => panic!("expected resonance error, got {other:?}"),
        }
        let neumann = ProblemData { k2: 0.0, ..Default::default() };
        assert!(matches!(solve_state(&m, &neumann, BcVariant::Neumann), Err(Error::Resonance { .. })));
    }

    #[test]
    fn deflated_solve_is_orthogonal() {
        let m = generate_rectangle(1.0, 1.0, 0.1).unwrap();
        let e = crate::spectral::solve_eigs(&m, BcVariant::Dirichlet, 1).unwrap();
        let ops = Operators::new(&m).unwrap();
        let s = DeflatedSolver::new(&m, &ops, e[0].lambda, BcVariant::Dirichlet, &e[0].eigenfunction.values).unwrap();
        let load = assemble_load(&m, &ScalarData::Constant(1.0)).unwrap();
        let (u, mu) = s.solve(&load).unwrap();
        let eta = &e[0].eigenfunction.values;
        assert!(ops.mass.bilinear(eta, &u).abs() < 1e-10);
        let expected: f64 = eta.iter().zip(&load).map(|(a, b)| a * b).sum();
        assert!((mu - expected).abs() < 1e-10 * expected.abs());
    }

    #[test]
    fn unit_contrast_changes_nothing() {
        let m = generate_rectangle(1.0, 1.0, 0.02).unwrap();
        let data = ProblemData { gamma: 1.0, ..Default::default() };
        let r =
            solve_perturbed_source(&m, &data, BcVariant::Dirichlet, &HoleSpec::disk(Vec2::new(0.5, 0.5), 0.1)).unwrap();
        assert_eq!(r.base.solution.values, r.perturbed.solution.values);
        assert_eq!(r.h1_difference, 0.0);
        let coarse = generate_rectangle(1.0, 1.0, 0.1).unwrap();
        assert!(matches!(
            solve_perturbed_source(&coarse, &data, BcVariant::Dirichlet, &HoleSpec::disk(Vec2::new(0.5, 0.5), 0.1)),
            Err(Error::Resolution(_))
        ));
    }
}
