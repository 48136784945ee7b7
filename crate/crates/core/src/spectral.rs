//! Low Laplacian eigenpairs, multiplicity clusters and eigenvalue shape
//! derivatives.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fem::{
    consistent_flux, integrate, normal_component, recovered_gradients, CsrMatrix, Field, Operators, SparseSolver,
};
use crate::helmholtz::BcVariant;
use crate::mesh::{BoundaryTag, Mesh, VelocityField};

#[derive(Debug, Clone)]
pub struct EigenPair {
    pub lambda: f64,
    /// M-normalized; largest-magnitude entry positive.
    pub eigenfunction: Field,
    /// Rank in ascending order, from 0.
    pub index: usize,
    /// `|K x - lambda M x| / (|M x| max(1, lambda))`.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for EigOptions {
    fn default() -> Self {
        EigOptions { tol: 1e-10, max_iter: 1000, seed: 0x5eed }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// M-orthonormalizes the columns in place (classical Gram-Schmidt applied
/// twice). Returns false if a column collapses.
fn m_orthonormalize(cols: &mut [Vec<f64>], mass: &CsrMatrix) -> bool {
    for j in 0..cols.len() {
        for _ in 0..2 {
            let mj = mass.matvec(&cols[j]);
            for i in 0..j {
                let c = dot(&cols[i], &mj);
                let (head, tail) = cols.split_at_mut(j);
                for (x, y) in tail[0].iter_mut().zip(&head[i]) {
                    *x -= c * y;
                }
            }
        }
        let nrm = mass.bilinear(&cols[j], &cols[j]).sqrt();
        if !(nrm > 1e-300) {
            return false;
        }
        cols[j].iter_mut().for_each(|x| *x /= nrm);
    }
    true
}

fn fix_sign(v: &mut [f64]) {
    let big = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
    if big < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// The `count` smallest eigenpairs of `K u = lambda M u` under `variant`.
pub fn solve_eigs(mesh: &Mesh, variant: BcVariant, count: usize) -> Result<Vec<EigenPair>> {
    solve_eigs_with(mesh, variant, count, &EigOptions::default())
}

/// Shift-invert block subspace iteration with Rayleigh-Ritz. The shift is 0
/// when some boundary is constrained and `-1/area` otherwise, so the
/// shifted operator is always SPD.
pub fn solve_eigs_with(mesh: &Mesh, variant: BcVariant, count: usize, opts: &EigOptions) -> Result<Vec<EigenPair>> {
    let ops = Operators::new(mesh)?;
    let dofs = variant.dofs(mesh)?;
    let n = dofs.num_free();
    if count == 0 || count * 4 > n {
        return Err(Error::InvalidArgument(format!("cannot compute {count} eigenpairs with {n} free unknowns")));
    }
    let k = ops.stiffness.submatrix(&dofs.free, &dofs.index);
    let m = ops.mass.submatrix(&dofs.free, &dofs.index);
    let shift = if dofs.num_free() == mesh.num_nodes() { -1.0 / mesh.area() } else { 0.0 };
    let shifted = ops.helmholtz(shift).submatrix(&dofs.free, &dofs.index);
    let solver = SparseSolver::cholesky(&shifted)?;

    let block = (2 * count).max(count + 8).min(n / 2);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x: Vec<Vec<f64>> = (0..block).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mut worst = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let mut y: Vec<Vec<f64>> = x.iter().map(|c| solver.solve(&m.matvec(c))).collect();
        if !m_orthonormalize(&mut y, &m) {
            return Err(Error::Solver("eigensolver basis lost rank".into()));
        }
        let ky: Vec<Vec<f64>> = y.iter().map(|c| k.matvec(c)).collect();
        let small = DMatrix::from_fn(block, block, |i, j| 0.5 * (dot(&y[i], &ky[j]) + dot(&y[j], &ky[i])));
        let eig = SymmetricEigen::new(small);
        let mut order: Vec<usize> = (0..block).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        x = order
            .iter()
            .map(|&c| {
                let mut v = vec![0.0; n];
                for (i, yi) in y.iter().enumerate() {
                    let q = eig.eigenvectors[(i, c)];
                    v.iter_mut().zip(yi).for_each(|(a, b)| *a += q * b);
                }
                v
            })
            .collect();
        let lambdas: Vec<f64> = order.iter().map(|&c| eig.eigenvalues[c]).collect();
        worst = (0..count).map(|i| residual(&k, &m, &x[i], lambdas[i])).fold(0.0, f64::max);
        if worst <= opts.tol {
            let mut out = Vec::with_capacity(count);
            for (i, v) in x.into_iter().take(count).enumerate() {
                let mut full = dofs.extend(&v);
                fix_sign(&mut full);
                let r = residual(&k, &m, &v, lambdas[i]);
                out.push(EigenPair {
                    lambda: lambdas[i],
                    eigenfunction: Field::new(format!("eig{i}"), full),
                    index: i,
                    residual: r,
                });
            }
            return Ok(out);
        }
    }
    Err(Error::NoConvergence { iterations: opts.max_iter, residual: worst })
}

fn residual(k: &CsrMatrix, m: &CsrMatrix, v: &[f64], lambda: f64) -> f64 {
    let kv = k.matvec(v);
    let mv = m.matvec(v);
    let r: f64 = kv.iter().zip(&mv).map(|(a, b)| (a - lambda * b).powi(2)).sum::<f64>().sqrt();
    r / (dot(&mv, &mv).sqrt() * lambda.abs().max(1.0))
}

#[derive(Debug, Clone)]
pub struct EigenCluster {
    pub pairs: Vec<EigenPair>,
    pub multiplicity: usize,
    pub lambda_mean: f64,
    /// The cluster reaches the last computed pair, so it may continue
    /// beyond what was computed.
    pub truncated: bool,
    pub rel_tol: f64,
}

/// Groups sorted pairs whose consecutive relative gap is at most `rel_tol`
/// and M-orthonormalizes each group.
pub fn detect_multiplicity(mesh: &Mesh, pairs: &[EigenPair], rel_tol: f64) -> Result<Vec<EigenCluster>> {
    if !(rel_tol >= 0.0) {
        return Err(Error::InvalidArgument(format!("cluster tolerance {rel_tol} must be non-negative")));
    }
    if pairs.windows(2).any(|w| w[1].lambda < w[0].lambda) {
        return Err(Error::Precondition("eigenpairs must be sorted ascending".into()));
    }
    let mass = Operators::new(mesh)?.mass;
    let mut groups: Vec<Vec<EigenPair>> = Vec::new();
    for p in pairs {
        match groups.last_mut() {
            Some(g)
                if {
                    let prev = g.last().map(|q| q.lambda).unwrap_or(p.lambda);
                    let scale = prev.abs().max(p.lambda.abs());
                    scale == 0.0 || (p.lambda - prev) <= rel_tol * scale
                } =>
            {
                g.push(p.clone())
            }
            _ => groups.push(vec![p.clone()]),
        }
    }
    let total = groups.len();
    let mut out = Vec::with_capacity(total);
    for (gi, mut g) in groups.into_iter().enumerate() {
        if g.len() > 1 {
            let mut cols: Vec<Vec<f64>> = g.iter().map(|p| p.eigenfunction.values.clone()).collect();
            if !m_orthonormalize(&mut cols, &mass) {
                return Err(Error::Precondition("cluster eigenfunctions are linearly dependent".into()));
            }
            for (p, c) in g.iter_mut().zip(cols) {
                p.eigenfunction.values = c;
            }
        }
        let lambda_mean = g.iter().map(|p| p.lambda).sum::<f64>() / g.len() as f64;
        out.push(EigenCluster { multiplicity: g.len(), lambda_mean, truncated: gi + 1 == total, rel_tol, pairs: g });
    }
    Ok(out)
}

/// Boundary parts that move, with whether they carry the Dirichlet
/// condition.
fn boundary_parts(mesh: &Mesh, variant: BcVariant, only: Option<BoundaryTag>) -> Result<Vec<(BoundaryTag, bool)>> {
    if let Some(t) = only {
        if !mesh.has_tag(t) {
            return Err(Error::MissingTag(t));
        }
    }
    Ok(mesh
        .tags()
        .into_iter()
        .filter(|t| only.is_none_or(|o| o == *t))
        .map(|t| (t, variant.constrained_tags().contains(&t)))
        .collect())
}

/// `(k2)'` for a simple eigenvalue: `-int (d eta/dn)^2 V.n` on Dirichlet
/// parts and `int (|grad eta|^2 - lambda eta^2) V.n` on natural parts.
pub fn simple_eig_derivative(
    mesh: &Mesh,
    cluster: &EigenCluster,
    v: &VelocityField,
    variant: BcVariant,
) -> Result<f64> {
    if cluster.multiplicity != 1 {
        return Err(Error::Multiplicity {
            lambda: cluster.lambda_mean,
            multiplicity: cluster.multiplicity,
            hint: "use multiple_eig_derivative",
        });
    }
    let d = multiple_eig_derivative(mesh, cluster, v, variant, None)?;
    Ok(d.matrix[(0, 0)])
}

#[derive(Debug, Clone)]
pub struct MultiEigDerivative {
    /// `p x p` symmetric matrix whose eigenvalues are the branch derivatives.
    pub matrix: DMatrix<f64>,
    /// Eigenvalues of `matrix`, ascending.
    pub candidates: Vec<f64>,
    /// Same with the gradient term on natural boundaries integrated without
    /// the `V.n` weight; `None` when every moving boundary is Dirichlet.
    pub unweighted_gradient_candidates: Option<Vec<f64>>,
}

fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut e: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e
}

/// Derivative matrix of a (possibly multiple) eigenvalue:
/// `m_ij = -int dn(eta_i) dn(eta_j) V.n` on Dirichlet parts and
/// `int (grad eta_i . grad eta_j - lambda eta_i eta_j) V.n` on natural parts.
///
/// Normal derivatives on Dirichlet parts are the consistent residual flux;
/// gradients on natural parts are angle-weighted recoveries.
pub fn multiple_eig_derivative(
    mesh: &Mesh,
    cluster: &EigenCluster,
    v: &VelocityField,
    variant: BcVariant,
    tag: Option<BoundaryTag>,
) -> Result<MultiEigDerivative> {
    let p = cluster.pairs.len();
    if p == 0 {
        return Err(Error::Precondition("empty cluster".into()));
    }
    let ops = Operators::new(mesh)?;
    let mass = &ops.mass;
    for i in 0..p {
        cluster.pairs[i].eigenfunction.check(mesh)?;
        for j in 0..=i {
            let g = mass.bilinear(&cluster.pairs[i].eigenfunction.values, &cluster.pairs[j].eigenfunction.values);
            let target = if i == j { 1.0 } else { 0.0 };
            if (g - target).abs() > 1e-8 {
                return Err(Error::Precondition(format!("cluster basis is not M-orthonormal: <{i},{j}> = {g}")));
            }
        }
    }
    let lambda = cluster.lambda_mean;
    let vel = v.at_nodes(mesh)?;
    let grads: Vec<_> =
        cluster.pairs.iter().map(|pr| recovered_gradients(mesh, &pr.eigenfunction.values)).collect::<Result<_>>()?;
    let mut matrix = DMatrix::zeros(p, p);
    let mut unweighted = DMatrix::zeros(p, p);
    // residuals K eta - lambda M eta carry the boundary flux
    let residuals: Vec<Vec<f64>> = cluster
        .pairs
        .iter()
        .map(|pr| {
            let e = &pr.eigenfunction.values;
            let ke = ops.stiffness.matvec(e);
            let me = ops.mass.matvec(e);
            ke.iter().zip(&me).map(|(a, b)| a - pr.lambda * b).collect()
        })
        .collect();
    let mut natural = false;
    for (t, dirichlet) in boundary_parts(mesh, variant, tag)? {
        let geom = mesh.boundary_geometry(t)?;
        let vn = normal_component(&geom, &vel);
        let dn: Vec<Vec<f64>> = if dirichlet {
            residuals.iter().map(|r| consistent_flux(mesh, t, r)).collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        natural |= !dirichlet;
        for i in 0..p {
            for j in 0..=i {
                let mut dens = vec![0.0; mesh.num_nodes()];
                let mut dens_unw = vec![0.0; mesh.num_nodes()];
                let (ei, ej) = (&cluster.pairs[i].eigenfunction.values, &cluster.pairs[j].eigenfunction.values);
                for &a in &geom.nodes {
                    if dirichlet {
                        dens[a] = -dn[i][a] * dn[j][a] * vn[a];
                        dens_unw[a] = dens[a];
                    } else {
                        let gg = grads[i][a].dot(&grads[j][a]);
                        dens[a] = (gg - lambda * ei[a] * ej[a]) * vn[a];
                        dens_unw[a] = gg - lambda * ei[a] * ej[a] * vn[a];
                    }
                }
                let (w, u) = (integrate(&geom, &dens), integrate(&geom, &dens_unw));
                matrix[(i, j)] += w;
                unweighted[(i, j)] += u;
                if i != j {
                    matrix[(j, i)] += w;
                    unweighted[(j, i)] += u;
                }
            }
        }
    }
    let candidates = sorted_eigenvalues(&matrix);
    let unweighted_gradient_candidates = natural.then(|| sorted_eigenvalues(&unweighted));
    Ok(MultiEigDerivative { matrix, candidates, unweighted_gradient_candidates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_disk, generate_rectangle, Vec2};
    use std::f64::consts::PI;

    #[test]
    fn square_dirichlet_spectrum() {
        let m = generate_rectangle(1.0, 1.0, 1.0 / 32.0).unwrap();
        let e = solve_eigs(&m, BcVariant::Dirichlet, 4).unwrap();
        assert!((e[0].lambda / (2.0 * PI * PI) - 1.0).abs() < 0.01);
        assert!((e[1].lambda / e[2].lambda - 1.0).abs() < 0.005);
        let ops = Operators::new(&m).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let g = ops.mass.bilinear(&e[i].eigenfunction.values, &e[j].eigenfunction.values);
                assert!((g - if i == j { 1.0 } else { 0.0 }).abs() < 1e-8);
            }
            assert!(e[i].residual <= 1e-10);
        }
        let c = detect_multiplicity(&m, &e, 1e-2).unwrap();
        assert_eq!(c.iter().map(|c| c.multiplicity).collect::<Vec<_>>(), vec![1, 2, 1]);
    }

    #[test]
    fn neumann_kernel_is_constant() {
        let m = generate_rectangle(1.0, 1.0, 0.1).unwrap();
        let e = solve_eigs(&m, BcVariant::Neumann, 3).unwrap();
        assert!(e[0].lambda.abs() < 1e-8);
        let v = &e[0].eigenfunction.values;
        let (lo, hi) = v.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        assert!((hi - lo) / hi < 1e-6);
        assert!(hi > 0.0);
    }

    #[test]
    fn deterministic() {
        let m = generate_disk(Vec2::zeros(), 1.0, 0.2).unwrap();
        let a = solve_eigs(&m, BcVariant::Dirichlet, 3).unwrap();
        let b = solve_eigs(&m, BcVariant::Dirichlet, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.lambda, y.lambda);
            assert_eq!(x.eigenfunction.values, y.eigenfunction.values);
        }
    }

    #[test]
    fn zero_velocity_gives_zero_matrix() {
        let m = generate_rectangle(1.0, 1.0, 0.1).unwrap();
        let e = solve_eigs(&m, BcVariant::Dirichlet, 4).unwrap();
        let c = detect_multiplicity(&m, &e, 1e-2).unwrap();
        let d = multiple_eig_derivative(&m, &c[1], &VelocityField::zero(), BcVariant::Dirichlet, None).unwrap();
        assert!(d.matrix.iter().all(|x| *x == 0.0));
        assert!(matches!(
            simple_eig_derivative(&m, &c[1], &VelocityField::zero(), BcVariant::Dirichlet),
            Err(Error::Multiplicity { multiplicity: 2, .. })
        ));
    }

    #[test]
    fn disk_dilation_scaling() {
        let m = generate_disk(Vec2::zeros(), 1.0, 0.05).unwrap();
        let e = solve_eigs(&m, BcVariant::Dirichlet, 1).unwrap();
        let c = detect_multiplicity(&m, &e, 1e-2).unwrap();
        let d =
            simple_eig_derivative(&m, &c[0], &VelocityField::dilation(Vec2::zeros()), BcVariant::Dirichlet).unwrap();
        let rel = d / (-2.0 * e[0].lambda) - 1.0;
        assert!(rel.abs() < 0.02, "relative error {rel}");
    }

    #[test]
    fn disk_neumann_dilation_scaling() {
        let m = generate_disk(Vec2::zeros(), 1.0, 0.05).unwrap();
        let e = solve_eigs(&m, BcVariant::Neumann, 3).unwrap();
        let c = detect_multiplicity(&m, &e, 1e-2).unwrap();
        assert_eq!(c[1].multiplicity, 2);
        let d = multiple_eig_derivative(&m, &c[1], &VelocityField::dilation(Vec2::zeros()), BcVariant::Neumann, None)
            .unwrap();
        for x in &d.candidates {
            let rel = x / (-2.0 * c[1].lambda_mean) - 1.0;
            assert!(rel.abs() < 0.05, "relative error {rel}");
        }
    }
}
