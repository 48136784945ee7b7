//! Ground truth for tests: closed-form eigenpairs of the unit square and
//! unit disk, manufactured solutions, Richardson extrapolation and
//! log-log rate fitting.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};
use std::sync::Arc;

use crate::fem::{ScalarData, ScalarFn};
use crate::helmholtz::BcVariant;
use crate::mesh::Vec2;

/// Positive zeros `j_{n,k}` of `J_n`, ascending, as `(value, n, k)`.
pub const BESSEL_ZEROS: [(f64, u32, u32); 14] = [
    (2.404825557695773, 0, 1),
    (3.831705970207512, 1, 1),
    (5.135622301840683, 2, 1),
    (5.520078110286311, 0, 2),
    (6.380161895923984, 3, 1),
    (7.015586669815619, 1, 2),
    (7.588342434503804, 4, 1),
    (8.417244140399866, 2, 2),
    (8.653727912911013, 0, 3),
    (8.771483815959954, 5, 1),
    (9.76102312998167, 3, 2),
    (9.936109524217686, 6, 1),
    (10.173468135062722, 1, 3),
    (11.064709488501185, 4, 2),
];

/// Positive zeros `j'_{n,k}` of `J_n'`, ascending.
pub const BESSEL_DERIVATIVE_ZEROS: [(f64, u32, u32); 12] = [
    (1.841183781340659, 1, 1),
    (3.05423692822714, 2, 1),
    (3.831705970207512, 0, 1),
    (4.201188941210528, 3, 1),
    (5.317553126083994, 4, 1),
    (5.331442773525033, 1, 2),
    (6.415616375700241, 5, 1),
    (6.706133194158459, 2, 2),
    (7.015586669815619, 0, 2),
    (7.501266144684148, 6, 1),
    (8.015236598375953, 3, 2),
    (8.536316366346286, 1, 3),
];

/// `J_n(x)` by its power series; accurate to about 1e-12 for `|x| <= 12`.
pub fn bessel_j(n: u32, x: f64) -> f64 {
    let half = 0.5 * x;
    let mut term = (1..=n).fold(1.0, |acc, i| acc * half / i as f64);
    let mut sum = term;
    let q = half * half;
    for m in 1..200u32 {
        term *= -q / (m as f64 * (m + n) as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) && m > 2 {
            break;
        }
    }
    sum
}

pub fn bessel_j_prime(n: u32, x: f64) -> f64 {
    if n == 0 {
        -bessel_j(1, x)
    } else {
        0.5 * (bessel_j(n - 1, x) - bessel_j(n + 1, x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalyticDomain {
    /// `[0, 1]^2`.
    UnitSquare,
    /// Radius 1 about the origin.
    UnitDisk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Angular {
    Cos,
    Sin,
}

/// Mode labels: `(m, n)` sine/cosine counts on the square, `(order, root,
/// cos|sin)` on the disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeLabel {
    Square { m: u32, n: u32 },
    Disk { order: u32, root: u32, angular: Angular },
}

#[derive(Clone)]
pub struct AnalyticEigenpair {
    pub lambda: f64,
    pub label: ModeLabel,
    /// Normalized to unit L2 norm.
    pub eigenfunction: ScalarFn,
}

impl AnalyticEigenpair {
    pub fn data(&self) -> ScalarData {
        ScalarData::Function(self.eigenfunction.clone())
    }
}

impl fmt::Debug for AnalyticEigenpair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnalyticEigenpair").field("lambda", &self.lambda).field("label", &self.label).finish()
    }
}

fn square_pairs(neumann: bool, count: usize) -> Vec<AnalyticEigenpair> {
    let lo = if neumann { 0 } else { 1 };
    let hi = lo + count as u32 + 1;
    let mut modes: Vec<(u32, u32)> = (lo..hi).flat_map(|m| (lo..hi).map(move |n| (m, n))).collect();
    modes.sort_by_key(|&(m, n)| (m * m + n * n, m, n));
    modes
        .into_iter()
        .take(count)
        .map(|(m, n)| {
            let lambda = PI * PI * (m * m + n * n) as f64;
            let (a, b) = (m as f64 * PI, n as f64 * PI);
            let eigenfunction: ScalarFn = if neumann {
                let c = |k: u32| if k == 0 { 1.0 } else { 2f64.sqrt() };
                let s = c(m) * c(n);
                Arc::new(move |p: Vec2| s * (a * p.x).cos() * (b * p.y).cos())
            } else {
                Arc::new(move |p: Vec2| 2.0 * (a * p.x).sin() * (b * p.y).sin())
            };
            AnalyticEigenpair { lambda, label: ModeLabel::Square { m, n }, eigenfunction }
        })
        .collect()
}

fn disk_mode(z: f64, order: u32, root: u32, angular: Angular, neumann: bool) -> AnalyticEigenpair {
    let ang_norm = if order == 0 { 2.0 * PI } else { PI };
    let radial_norm = if neumann {
        0.5 * (1.0 - (order * order) as f64 / (z * z)) * bessel_j(order, z).powi(2)
    } else {
        0.5 * bessel_j(order + 1, z).powi(2)
    };
    let scale = 1.0 / (ang_norm * radial_norm).sqrt();
    let n = order as f64;
    let eigenfunction: ScalarFn = Arc::new(move |p: Vec2| {
        let r = p.norm();
        let th = p.y.atan2(p.x);
        let a = match angular {
            Angular::Cos => (n * th).cos(),
            Angular::Sin => (n * th).sin(),
        };
        scale * bessel_j(order, z * r) * a
    });
    AnalyticEigenpair { lambda: z * z, label: ModeLabel::Disk { order, root, angular }, eigenfunction }
}

fn disk_pairs(neumann: bool, count: usize) -> Result<Vec<AnalyticEigenpair>> {
    let mut out = Vec::with_capacity(count);
    if neumann {
        let c = 1.0 / PI.sqrt();
        out.push(AnalyticEigenpair {
            lambda: 0.0,
            label: ModeLabel::Disk { order: 0, root: 0, angular: Angular::Cos },
            eigenfunction: Arc::new(move |_| c),
        });
    }
    let table: &[(f64, u32, u32)] = if neumann { &BESSEL_DERIVATIVE_ZEROS } else { &BESSEL_ZEROS };
    for &(z, order, root) in table {
        out.push(disk_mode(z, order, root, Angular::Cos, neumann));
        if order > 0 {
            out.push(disk_mode(z, order, root, Angular::Sin, neumann));
        }
    }
    if out.len() < count {
        return Err(Error::InvalidArgument(format!("only {} tabulated disk eigenpairs, {count} requested", out.len())));
    }
    out.truncate(count);
    Ok(out)
}

/// The `count` smallest eigenpairs of `-lap` on a reference domain.
/// Only Dirichlet and Neumann conditions on the outer boundary are known in
/// closed form.
pub fn analytic_eigs(domain: AnalyticDomain, bc: BcVariant, count: usize) -> Result<Vec<AnalyticEigenpair>> {
    let neumann = match bc {
        BcVariant::Dirichlet | BcVariant::AllDirichlet => false,
        BcVariant::Neumann => true,
        BcVariant::Obstacle => {
            return Err(Error::InvalidArgument("no closed-form spectrum with an obstacle".into()));
        }
    };
    match domain {
        AnalyticDomain::UnitSquare => Ok(square_pairs(neumann, count)),
        AnalyticDomain::UnitDisk => disk_pairs(neumann, count),
    }
}

/// `u = sin(pi x) sin(pi y)` on the unit square and the source that makes
/// it solve `-lap u - k2 u = f` with zero Dirichlet data.
pub fn manufactured_square(k2: f64) -> (ScalarData, ScalarData) {
    let exact = ScalarData::function(|p: Vec2| (PI * p.x).sin() * (PI * p.y).sin());
    let c = 2.0 * PI * PI - k2;
    let source = ScalarData::function(move |p: Vec2| c * (PI * p.x).sin() * (PI * p.y).sin());
    (exact, source)
}

/// Combines estimates at steps `h` and `h / ratio` of a method with error
/// `O(h^order)`.
pub fn richardson(coarse: f64, fine: f64, ratio: f64, order: f64) -> f64 {
    let r = ratio.powf(order);
    (r * fine - coarse) / (r - 1.0)
}

/// Observed order from three estimates at steps `h`, `h / ratio`, `h / ratio^2`.
pub fn observed_order(coarse: f64, mid: f64, fine: f64, ratio: f64) -> f64 {
    ((coarse - mid) / (mid - fine)).abs().ln() / ratio.ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdRow {
    pub t: f64,
    pub estimate: f64,
}

/// Difference quotients at decreasing steps with their extrapolation.
#[derive(Debug, Clone, PartialEq)]
pub struct FdResult {
    pub rows: Vec<FdRow>,
    /// Nominal order of the quotient (2 for central, 1 for one-sided).
    pub nominal_order: f64,
    /// Extrapolation of the two finest rows; needs a constant step ratio.
    pub richardson: Option<f64>,
    /// From the three finest rows.
    pub observed_order: Option<f64>,
    /// Best estimate: the extrapolated value when available.
    pub derivative: f64,
}

/// Tabulates `quotient(t)` over strictly decreasing positive steps.
pub fn fd_table(ts: &[f64], nominal_order: f64, mut quotient: impl FnMut(f64) -> Result<f64>) -> Result<FdResult> {
    if ts.is_empty() || ts.iter().any(|t| !(*t > 0.0 && t.is_finite())) || ts.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("finite-difference steps must be positive and strictly decreasing".into()));
    }
    let rows = ts.iter().map(|&t| Ok(FdRow { t, estimate: quotient(t)? })).collect::<Result<Vec<_>>>()?;
    let n = rows.len();
    let ratio_at = |i: usize| rows[i - 1].t / rows[i].t;
    let constant_ratio = (2..n).all(|i| (ratio_at(i) / ratio_at(1) - 1.0).abs() < 1e-9);
    let richardson_value = (n >= 2 && constant_ratio)
        .then(|| richardson(rows[n - 2].estimate, rows[n - 1].estimate, ratio_at(n - 1), nominal_order));
    let observed = (n >= 3 && constant_ratio)
        .then(|| observed_order(rows[n - 3].estimate, rows[n - 2].estimate, rows[n - 1].estimate, ratio_at(n - 1)));
    let derivative = richardson_value.unwrap_or(rows[n - 1].estimate);
    Ok(FdResult { rows, nominal_order, richardson: richardson_value, observed_order: observed, derivative })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceFit {
    pub samples: Vec<(f64, f64)>,
    pub fitted_rate: f64,
    /// Log-log constant: `value ~ exp(intercept) * param^rate`.
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares slope of `log value` against `log param`.
pub fn fit_rate(samples: &[(f64, f64)]) -> Result<ConvergenceFit> {
    if samples.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 samples, got {}", samples.len())));
    }
    if let Some(&(p, v)) = samples.iter().find(|(p, v)| !(*p > 0.0 && *v > 0.0 && p.is_finite() && v.is_finite())) {
        return Err(Error::Fit(format!("sample ({p}, {v}) is not positive")));
    }
    if samples.windows(2).any(|w| w[1].0 >= w[0].0) {
        return Err(Error::Fit("parameters must be strictly decreasing".into()));
    }
    let n = samples.len() as f64;
    let xs: Vec<f64> = samples.iter().map(|s| s.0.ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let rate = sxy / sxx;
    let r_squared = if syy <= 1e-28 * (1.0 + my * my) { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    Ok(ConvergenceFit { samples: samples.to_vec(), fitted_rate: rate, intercept: my - rate * mx, r_squared })
}

/// Least-squares line `y = slope x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(samples: &[(f64, f64)]) -> Result<LinearFit> {
    if samples.len() < 2 {
        return Err(Error::Fit(format!("need at least 2 samples, got {}", samples.len())));
    }
    if samples.iter().any(|(x, y)| !(x.is_finite() && y.is_finite())) {
        return Err(Error::Fit("samples must be finite".into()));
    }
    let n = samples.len() as f64;
    let mx = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let my = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let sxx: f64 = samples.iter().map(|s| (s.0 - mx).powi(2)).sum();
    let sxy: f64 = samples.iter().map(|s| (s.0 - mx) * (s.1 - my)).sum();
    let syy: f64 = samples.iter().map(|s| (s.1 - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Fit("abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    Ok(LinearFit { slope, intercept: my - slope * mx, r_squared })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zeros_are_roots() {
        for &(z, n, _) in &BESSEL_ZEROS {
            assert!(bessel_j(n, z).abs() < 1e-12, "J_{n}({z}) = {}", bessel_j(n, z));
        }
        for &(z, n, _) in &BESSEL_DERIVATIVE_ZEROS {
            assert!(bessel_j_prime(n, z).abs() < 1e-12);
        }
        assert!(BESSEL_ZEROS.windows(2).all(|w| w[0].0 < w[1].0));
        assert!(BESSEL_DERIVATIVE_ZEROS.windows(2).all(|w| w[0].0 < w[1].0));
    }

    #[test]
    fn bessel_reference_values() {
        assert_relative_eq!(bessel_j(0, 1.0), 0.7651976865579666, epsilon = 1e-14);
        assert_relative_eq!(bessel_j(1, 2.5), 0.4970941024642741, epsilon = 1e-14);
        assert_relative_eq!(bessel_j(3, 10.0), 0.05837937930518666, epsilon = 1e-12);
    }

    #[test]
    fn square_spectrum() {
        let e = analytic_eigs(AnalyticDomain::UnitSquare, BcVariant::Dirichlet, 3).unwrap();
        let l: Vec<f64> = e.iter().map(|p| p.lambda).collect();
        assert_relative_eq!(l[0], 2.0 * PI * PI, epsilon = 1e-12);
        assert_relative_eq!(l[1], 5.0 * PI * PI, epsilon = 1e-12);
        assert_relative_eq!(l[2], 5.0 * PI * PI, epsilon = 1e-12);
        let n = analytic_eigs(AnalyticDomain::UnitSquare, BcVariant::Neumann, 4).unwrap();
        assert_eq!(n[0].lambda, 0.0);
        assert_relative_eq!(n[1].lambda, PI * PI, epsilon = 1e-12);
    }

    #[test]
    fn disk_spectrum() {
        let e = analytic_eigs(AnalyticDomain::UnitDisk, BcVariant::Dirichlet, 5).unwrap();
        assert!((e[0].lambda - 5.78318596).abs() < 1e-8);
        assert_eq!(e[1].lambda, e[2].lambda);
        let n = analytic_eigs(AnalyticDomain::UnitDisk, BcVariant::Neumann, 3).unwrap();
        assert_eq!(n[0].lambda, 0.0);
        assert_relative_eq!(n[1].lambda, 1.841183781340659f64.powi(2), epsilon = 1e-14);
        assert!(analytic_eigs(AnalyticDomain::UnitDisk, BcVariant::Obstacle, 1).is_err());
        assert!(analytic_eigs(AnalyticDomain::UnitDisk, BcVariant::Dirichlet, 500).is_err());
    }

    #[test]
    fn disk_modes_are_normalized() {
        // polar midpoint rule
        let e = analytic_eigs(AnalyticDomain::UnitDisk, BcVariant::Dirichlet, 3).unwrap();
        let n = analytic_eigs(AnalyticDomain::UnitDisk, BcVariant::Neumann, 2).unwrap();
        for pair in e.iter().chain(&n) {
            let (nr, nt) = (400, 256);
            let mut s = 0.0;
            for i in 0..nr {
                let r = (i as f64 + 0.5) / nr as f64;
                for j in 0..nt {
                    let th = 2.0 * PI * (j as f64 + 0.5) / nt as f64;
                    let v = (pair.eigenfunction)(Vec2::new(r * th.cos(), r * th.sin()));
                    s += v * v * r;
                }
            }
            s *= 2.0 * PI / (nr * nt) as f64;
            assert!((s - 1.0).abs() < 1e-4, "{:?}: {s}", pair.label);
        }
    }

    #[test]
    fn fit_examples() {
        let h = [0.1, 0.05, 0.025, 0.0125];
        let exact: Vec<(f64, f64)> = h.iter().map(|&h| (h, 3.0 * h * h)).collect();
        let f = fit_rate(&exact).unwrap();
        assert!((f.fitted_rate - 2.0).abs() < 1e-10);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        let flat: Vec<(f64, f64)> = h.iter().map(|&h| (h, 4.0)).collect();
        assert!(fit_rate(&flat).unwrap().fitted_rate.abs() < 1e-12);
        let hs: Vec<f64> = (0..6).map(|i| 0.1 * 0.63f64.powi(i)).collect();
        let mixed: Vec<(f64, f64)> = hs.iter().map(|&h| (h, h + 5.0 * h * h)).collect();
        let r = fit_rate(&mixed).unwrap().fitted_rate;
        assert!(r > 1.0 && r < 2.0);
        assert!(fit_rate(&[(1.0, 1.0), (0.5, -1.0), (0.25, 1.0)]).is_err());
        assert!(fit_rate(&exact[..2]).is_err());
    }

    #[test]
    fn richardson_removes_leading_error() {
        let f = |h: f64| 1.0 + 2.0 * h * h + h.powi(4);
        assert!((richardson(f(0.1), f(0.05), 2.0, 2.0) - 1.0).abs() < 1e-4);
        assert!((observed_order(f(0.1), f(0.05), f(0.025), 2.0) - 2.0).abs() < 0.01);
    }

    #[test]
    fn fd_table_of_cubic() {
        // derivative at 0 of g(t) = 3t + t^3 by central differences
        let g = |t: f64| 3.0 * t + t.powi(3);
        let r = fd_table(&[0.1, 0.05, 0.025], 2.0, |t| Ok((g(t) - g(-t)) / (2.0 * t))).unwrap();
        assert!((r.derivative - 3.0).abs() < 1e-12);
        assert!((r.observed_order.unwrap() - 2.0).abs() < 1e-6);
        assert!(fd_table(&[0.1, 0.2], 2.0, |_| Ok(0.0)).is_err());
    }

    #[test]
    fn linear_fit_recovers_lines() {
        let s: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 3.0 * i as f64 - 1.0)).collect();
        let f = linear_fit(&s).unwrap();
        assert_relative_eq!(f.slope, 3.0, epsilon = 1e-12);
        assert_relative_eq!(f.intercept, -1.0, epsilon = 1e-12);
        assert_relative_eq!(f.r_squared, 1.0, epsilon = 1e-12);
        assert!(linear_fit(&[(1.0, 2.0), (1.0, 3.0)]).is_err());
    }
}
