//! One-dimensional quadrature rules and an adaptive Gauss–Kronrod driver.
//!
//! Gauss rules are built with the Golub–Welsch eigenvalue method and then
//! polished by Newton iteration on the orthonormal three-term recurrence,
//! which brings nodes and weights to full double precision.

use nalgebra::DMatrix;

use crate::algebra::{c, CMatrix};
use crate::error::{Error, Result};

/// Nodes and weights of a one-dimensional rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Eigenvalues of the symmetric tridiagonal Jacobi matrix with zero diagonal.
fn jacobi_nodes(off: &[f64]) -> Vec<f64> {
    let n = off.len() + 1;
    let mut j = DMatrix::<f64>::zeros(n, n);
    for (k, &b) in off.iter().enumerate() {
        j[(k, k + 1)] = b;
        j[(k + 1, k)] = b;
    }
    let mut nodes: Vec<f64> = j.symmetric_eigenvalues().iter().copied().collect();
    nodes.sort_by(f64::total_cmp);
    nodes
}

/// Orthonormal Hermite functions `h̃_0..h̃_{n}` at `x` (weight `e^{−x²}`).
fn hermite_orthonormal(n: usize, x: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(n + 1);
    p.push(std::f64::consts::PI.powf(-0.25));
    if n >= 1 {
        p.push(std::f64::consts::SQRT_2 * x * p[0]);
    }
    for k in 1..n {
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * x * p[k] - (kf / (kf + 1.0)).sqrt() * p[k - 1];
        p.push(next);
    }
    p
}

/// Gauss–Hermite rule normalized for the probability-like measure
/// `e^{−x²} dx / √π`, so the weights sum to one.
pub fn gauss_hermite(order: usize) -> Result<Rule> {
    if order == 0 {
        return Err(Error::Config("Gauss-Hermite order must be at least 1".into()));
    }
    let off: Vec<f64> = (1..order).map(|k| (k as f64 / 2.0).sqrt()).collect();
    let mut nodes = jacobi_nodes(&off);
    let mut weights = Vec::with_capacity(order);
    for x in nodes.iter_mut() {
        for _ in 0..8 {
            let p = hermite_orthonormal(order, *x);
            let dp = (2.0 * order as f64).sqrt() * p[order - 1];
            let step = p[order] / dp;
            *x -= step;
            if step.abs() <= 1e-16 * (1.0 + x.abs()) {
                break;
            }
        }
        let p = hermite_orthonormal(order, *x);
        let christoffel: f64 = p[..order].iter().map(|v| v * v).sum();
        weights.push(1.0 / (christoffel * std::f64::consts::PI.sqrt()));
    }
    symmetrize(&mut nodes, &mut weights);
    Ok(Rule { nodes, weights })
}

/// Enforces exact `x ↔ −x` symmetry of a symmetric rule.
fn symmetrize(nodes: &mut [f64], weights: &mut [f64]) {
    let n = nodes.len();
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
}

/// Legendre polynomial `P_n(x)` and its derivative.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Gauss–Legendre rule on `[a, b]`.
pub fn gauss_legendre(order: usize, a: f64, b: f64) -> Result<Rule> {
    if order == 0 {
        return Err(Error::Config("Gauss-Legendre order must be at least 1".into()));
    }
    let off: Vec<f64> = (1..order)
        .map(|k| {
            let kf = k as f64;
            kf / (4.0 * kf * kf - 1.0).sqrt()
        })
        .collect();
    let mut nodes = jacobi_nodes(&off);
    let mut weights = Vec::with_capacity(order);
    for x in nodes.iter_mut() {
        for _ in 0..8 {
            let (p, dp) = legendre(order, *x);
            let step = p / dp;
            *x -= step;
            if step.abs() <= 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(order, *x);
        weights.push(2.0 / ((1.0 - *x * *x) * dp * dp));
    }
    symmetrize(&mut nodes, &mut weights);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    Ok(Rule {
        nodes: nodes.iter().map(|x| mid + half * x).collect(),
        weights: weights.iter().map(|w| w * half).collect(),
    })
}

const KRONROD_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const KRONROD_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GAUSS7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Result of an adaptive matrix-valued integration.
#[derive(Debug, Clone)]
pub struct AdaptiveResult {
    pub value: CMatrix,
    pub error_estimate: f64,
    pub intervals: usize,
}

fn gk15<F: Fn(f64) -> CMatrix>(f: &F, a: f64, b: f64) -> (CMatrix, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let center = f(mid);
    let mut kronrod = &center * c(KRONROD_WEIGHTS[7], 0.0);
    let mut gauss = &center * c(GAUSS7_WEIGHTS[3], 0.0);
    for k in 0..7 {
        let dx = half * KRONROD_NODES[k];
        let pair = f(mid - dx) + f(mid + dx);
        kronrod += &pair * c(KRONROD_WEIGHTS[k], 0.0);
        if k % 2 == 1 {
            gauss += &pair * c(GAUSS7_WEIGHTS[k / 2], 0.0);
        }
    }
    kronrod *= c(half, 0.0);
    gauss *= c(half, 0.0);
    let err = crate::algebra::max_abs(&(&kronrod - &gauss));
    (kronrod, err)
}

/// Globally adaptive 15-point Gauss–Kronrod integration of a matrix-valued
/// function on `[a, b]`, bisecting the interval with the largest error
/// until the summed estimate drops below `tol`.
pub fn integrate_adaptive<F: Fn(f64) -> CMatrix>(
    f: F,
    a: f64,
    b: f64,
    tol: f64,
    max_intervals: usize,
) -> Result<AdaptiveResult> {
    let mut pieces = vec![(a, b, gk15(&f, a, b))];
    loop {
        let total_err: f64 = pieces.iter().map(|p| p.2 .1).sum();
        if total_err <= tol || pieces.len() >= max_intervals {
            let mut value = pieces[0].2 .0.clone() * c(0.0, 0.0);
            for p in &pieces {
                value += &p.2 .0;
            }
            if total_err > tol {
                return Err(Error::Convergence(format!(
                    "adaptive quadrature reached {max_intervals} intervals with error {total_err:.3e} > {tol:.3e}"
                )));
            }
            return Ok(AdaptiveResult {
                value,
                error_estimate: total_err,
                intervals: pieces.len(),
            });
        }
        let worst = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .2 .1.total_cmp(&y.1 .2 .1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let (lo, hi, _) = pieces.swap_remove(worst);
        let m = 0.5 * (lo + hi);
        pieces.push((lo, m, gk15(&f, lo, m)));
        pieces.push((m, hi, gk15(&f, m, hi)));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_factorial_odd(k: usize) -> f64 {
        (1..=k).step_by(2).map(|v| v as f64).product()
    }

    #[test]
    fn hermite_moments_are_exact() {
        let rule = gauss_hermite(16).unwrap();
        assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        for p in 0usize..32 {
            let q = rule.integrate(|x| x.powi(p as i32));
            // ∫ x^{2j} e^{−x²} dx/√π = (2j−1)!! / 2^j.
            let exact = if p % 2 == 1 {
                0.0
            } else {
                double_factorial_odd(p.saturating_sub(1)) / 2f64.powi(p as i32 / 2)
            };
            let scale = rule.integrate(|x| x.abs().powi(p as i32));
            assert!((q - exact).abs() < 1e-13 * scale.max(1.0), "p={p}: {q} vs {exact}");
        }
    }

    #[test]
    fn hermite_nodes_are_symmetric() {
        for order in [1, 2, 5, 12, 16, 33] {
            let r = gauss_hermite(order).unwrap();
            for i in 0..order {
                assert_eq!(r.nodes[i], -r.nodes[order - 1 - i]);
                assert_eq!(r.weights[i], r.weights[order - 1 - i]);
            }
        }
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let rule = gauss_legendre(10, 0.0, 2.0).unwrap();
        for p in 0..20 {
            let q = rule.integrate(|x| x.powi(p));
            let exact = 2f64.powi(p + 1) / (p as f64 + 1.0);
            assert!((q - exact).abs() < 1e-12 * exact, "p={p}");
        }
    }

    #[test]
    fn adaptive_integrates_lorentzian() {
        let res = integrate_adaptive(
            |x| CMatrix::from_element(1, 1, c(1.0 / (1.0 + x * x), 0.0)),
            -50.0,
            50.0,
            1e-12,
            500,
        )
        .unwrap();
        let exact = 2.0 * 50f64.atan();
        assert!((res.value[(0, 0)].re - exact).abs() < 1e-11);
    }

    #[test]
    fn zero_order_is_rejected() {
        assert!(gauss_hermite(0).is_err());
        assert!(gauss_legendre(0, 0.0, 1.0).is_err());
    }
}
