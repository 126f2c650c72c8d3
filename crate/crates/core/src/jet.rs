//! Truncated second-order Taylor jets of matrix-valued functions of `x`.
//!
//! A jet carries the value, gradient and Hessian at a fixed point together
//! with `order`, the number of derivative levels that are still exact.
//! Products and sums keep the smaller order; differentiation drops one.

use crate::algebra::{c, CMatrix, HermitianEig, C64};
use crate::symbol::FieldJet;

#[derive(Debug, Clone)]
pub(crate) struct Jet {
    pub v: CMatrix,
    pub d1: Vec<CMatrix>,
    pub d2: Vec<Vec<CMatrix>>,
    pub order: u8,
}

impl Jet {
    pub fn from_field(f: &FieldJet) -> Self {
        Self {
            v: f.v.clone(),
            d1: f.d1.clone(),
            d2: f.d2.clone(),
            order: 2,
        }
    }

    pub fn mul(&self, other: &Jet) -> Jet {
        let order = self.order.min(other.order);
        let n = self.d1.len().min(other.d1.len());
        let v = &self.v * &other.v;
        let d1 = if order >= 1 {
            (0..n)
                .map(|i| &self.d1[i] * &other.v + &self.v * &other.d1[i])
                .collect()
        } else {
            Vec::new()
        };
        let d2 = if order >= 2 {
            (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| {
                            &self.d2[i][j] * &other.v
                                + &self.d1[i] * &other.d1[j]
                                + &self.d1[j] * &other.d1[i]
                                + &self.v * &other.d2[i][j]
                        })
                        .collect()
                })
                .collect()
        } else {
            Vec::new()
        };
        Jet { v, d1, d2, order }
    }

    pub fn add(&self, other: &Jet) -> Jet {
        self.axpy(c(1.0, 0.0), other)
    }

    /// `self + s·other`.
    pub fn axpy(&self, s: C64, other: &Jet) -> Jet {
        let order = self.order.min(other.order);
        let n = self.d1.len().min(other.d1.len());
        Jet {
            v: &self.v + &other.v * s,
            d1: if order >= 1 {
                (0..n).map(|i| &self.d1[i] + &other.d1[i] * s).collect()
            } else {
                Vec::new()
            },
            d2: if order >= 2 {
                (0..n)
                    .map(|i| (0..n).map(|j| &self.d2[i][j] + &other.d2[i][j] * s).collect())
                    .collect()
            } else {
                Vec::new()
            },
            order,
        }
    }

    pub fn scale(&self, s: C64) -> Jet {
        Jet {
            v: &self.v * s,
            d1: self.d1.iter().map(|m| m * s).collect(),
            d2: self.d2.iter().map(|row| row.iter().map(|m| m * s).collect()).collect(),
            order: self.order,
        }
    }

    /// `∂_μ` of the jet, one order lower.
    pub fn deriv(&self, mu: usize) -> Jet {
        debug_assert!(self.order >= 1);
        let n = self.d1.len();
        if self.order >= 2 {
            Jet {
                v: self.d1[mu].clone(),
                d1: (0..n).map(|j| self.d2[mu][j].clone()).collect(),
                d2: Vec::new(),
                order: 1,
            }
        } else {
            Jet {
                v: self.d1[mu].clone(),
                d1: Vec::new(),
                d2: Vec::new(),
                order: 0,
            }
        }
    }

    /// Jet of the matrix inverse.
    pub fn inverse(&self, inv: &CMatrix) -> Jet {
        let n = self.d1.len();
        let d1: Vec<CMatrix> = (0..n).map(|i| -(inv * &self.d1[i] * inv)).collect();
        let d2 = if self.order >= 2 {
            (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| {
                            inv * (&self.d1[i] * inv * &self.d1[j] + &self.d1[j] * inv * &self.d1[i] - &self.d2[i][j])
                                * inv
                        })
                        .collect()
                })
                .collect()
        } else {
            Vec::new()
        };
        Jet {
            v: inv.clone(),
            d1,
            d2,
            order: self.order,
        }
    }
}

/// First divided difference of `f(λ) = e^{−τλ}`, evaluated stably as
/// `−τ e^{−τm} sinh(τd)/(τd)` with `m`, `d` the midpoint and half-gap.
pub(crate) fn exp_dd1(a: f64, b: f64, tau: f64) -> f64 {
    let m = 0.5 * (a + b);
    let d = 0.5 * (a - b);
    let z = tau * d;
    let shc = if z.abs() < 1e-4 {
        1.0 + z * z / 6.0
    } else {
        z.sinh() / z
    };
    -tau * (-tau * m).exp() * shc
}

/// Second divided difference of `e^{−τλ}`.
pub(crate) fn exp_dd2(a: f64, b: f64, cc: f64, tau: f64) -> f64 {
    let mut p = [a, b, cc];
    p.sort_by(f64::total_cmp);
    let spread = p[2] - p[0];
    if tau * spread < 2e-3 {
        // Expansion about the mean in complete homogeneous polynomials of
        // the offsets (the linear one vanishes).
        let m = (p[0] + p[1] + p[2]) / 3.0;
        let d = [p[0] - m, p[1] - m, p[2] - m];
        let mut h2 = 0.0;
        let mut h3 = 0.0;
        for i in 0..3 {
            for j in i..3 {
                h2 += d[i] * d[j];
                for k in j..3 {
                    h3 += d[i] * d[j] * d[k];
                }
            }
        }
        let t2 = tau * tau;
        (-tau * m).exp() * (t2 / 2.0 + t2 * t2 / 24.0 * h2 - t2 * t2 * tau / 120.0 * h3)
    } else {
        (exp_dd1(p[0], p[1], tau) - exp_dd1(p[1], p[2], tau)) / (p[0] - p[2])
    }
}

/// Jet of `e^{−τH(x)}` from the jet of `H` via the Daleckii–Krein formulas
/// in the eigenbasis of `H(x₀)`.
pub(crate) fn exp_jet(h: &Jet, eig: &HermitianEig, tau: f64, order: u8) -> Jet {
    let dim = eig.dim();
    let n = h.d1.len();
    let u = &eig.vectors;
    let ut = u.adjoint();
    let lam = &eig.values;
    let v = eig.map(|l| c((-tau * l).exp(), 0.0));
    if order == 0 {
        return Jet {
            v,
            d1: Vec::new(),
            d2: Vec::new(),
            order: 0,
        };
    }
    let f1 = |i: usize, j: usize| exp_dd1(lam[i], lam[j], tau);
    let ht1: Vec<CMatrix> = h.d1.iter().map(|m| &ut * m * u).collect();
    let d1: Vec<CMatrix> = ht1
        .iter()
        .map(|m| {
            let inner = CMatrix::from_fn(dim, dim, |i, j| m[(i, j)] * f1(i, j));
            u * inner * &ut
        })
        .collect();
    if order == 1 || h.order < 2 {
        return Jet {
            v,
            d1,
            d2: Vec::new(),
            order: 1,
        };
    }
    let mut f2 = vec![0.0; dim * dim * dim];
    for i in 0..dim {
        for k in 0..dim {
            for j in 0..dim {
                f2[(i * dim + k) * dim + j] = exp_dd2(lam[i], lam[k], lam[j], tau);
            }
        }
    }
    let mut d2 = vec![vec![CMatrix::zeros(dim, dim); n]; n];
    for a in 0..n {
        for b in a..n {
            let hab = &ut * &h.d2[a][b] * u;
            let inner = CMatrix::from_fn(dim, dim, |i, j| {
                let mut s = hab[(i, j)] * f1(i, j);
                for k in 0..dim {
                    let w = f2[(i * dim + k) * dim + j];
                    s += (ht1[a][(i, k)] * ht1[b][(k, j)] + ht1[b][(i, k)] * ht1[a][(k, j)]) * w;
                }
                s
            });
            let m = u * inner * &ut;
            d2[b][a] = m.clone();
            d2[a][b] = m;
        }
    }
    Jet { v, d1, d2, order: 2 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{hermitian_eig, matrix_exp, max_abs, pauli};

    fn exp_dd1_naive(a: f64, b: f64, tau: f64) -> f64 {
        ((-tau * a).exp() - (-tau * b).exp()) / (a - b)
    }

    #[test]
    fn divided_differences_match_naive_when_separated() {
        for (a, b, t) in [(0.3, 2.0, 0.7), (1.0, 5.0, 1.0), (-0.5, 0.8, 0.2)] {
            assert!((exp_dd1(a, b, t) - exp_dd1_naive(a, b, t)).abs() < 1e-14);
        }
        let naive2 = |a: f64, b: f64, cc: f64, t: f64| (exp_dd1_naive(a, b, t) - exp_dd1_naive(b, cc, t)) / (a - cc);
        assert!((exp_dd2(0.1, 1.3, 2.9, 0.8) - naive2(0.1, 1.3, 2.9, 0.8)).abs() < 1e-13);
    }

    #[test]
    fn divided_differences_have_confluent_limits() {
        let t = 0.6;
        let l: f64 = 1.7;
        assert!((exp_dd1(l, l, t) + t * (-t * l).exp()).abs() < 1e-15);
        assert!((exp_dd2(l, l, l, t) - 0.5 * t * t * (-t * l).exp()).abs() < 1e-15);
        // Both evaluation paths against f[a,b,c] = ∫∫_simplex f''.
        let rule = crate::quadrature::gauss_legendre(20, 0.0, 1.0).unwrap();
        for spread in [1e-6, 1e-3, 0.0019, 0.0021, 0.05, 2.0] {
            let (a, b, cc) = (l, l + 0.3 * spread / t, l + spread / t);
            let mut reference = 0.0;
            for (&s, &ws) in rule.nodes.iter().zip(&rule.weights) {
                for (&r, &wr) in rule.nodes.iter().zip(&rule.weights) {
                    let u = (1.0 - s) * r;
                    let x = a + s * (b - a) + u * (cc - a);
                    reference += ws * wr * (1.0 - s) * t * t * (-t * x).exp();
                }
            }
            let got = exp_dd2(a, b, cc, t);
            assert!(
                (got - reference).abs() < 1e-12 * reference,
                "spread {spread}: {got} vs {reference}"
            );
        }
    }

    #[test]
    fn exp_jet_matches_finite_differences() {
        // H(x) = (Γ⁰ + x₀Γ¹ + x₁²Γ²)², a 2×2 Hermitian family in two variables.
        let [sx, sy, sz] = pauli();
        let g = |x: &[f64]| &sx + &sy * c(x[0], 0.0) + &sz * c(x[1] * x[1] + 0.3 * x[0] * x[1], 0.0);
        let hf = |x: &[f64]| {
            let m = g(x);
            &m * &m
        };
        let x0 = [0.2, -0.4];
        let eps = 1e-4;
        let fd_h = |i: usize| {
            let mut p = x0.to_vec();
            let mut m = x0.to_vec();
            p[i] += eps;
            m[i] -= eps;
            (hf(&p) - hf(&m)) * c(0.5 / eps, 0.0)
        };
        let fd_h2 = |i: usize, j: usize| {
            let at = |si: f64, sj: f64| {
                let mut p = x0.to_vec();
                p[i] += si;
                p[j] += sj;
                hf(&p)
            };
            if i == j {
                (at(eps, 0.0) - hf(&x0) * c(2.0, 0.0) + at(-eps, 0.0)) * c(1.0 / (eps * eps), 0.0)
            } else {
                (at(eps, eps) - at(eps, -eps) - at(-eps, eps) + at(-eps, -eps)) * c(0.25 / (eps * eps), 0.0)
            }
        };
        let h = Jet {
            v: hf(&x0),
            d1: (0..2).map(fd_h).collect(),
            d2: (0..2).map(|i| (0..2).map(|j| fd_h2(i, j)).collect()).collect(),
            order: 2,
        };
        let tau = 0.7;
        let eig = hermitian_eig(&h.v).unwrap();
        let jet = exp_jet(&h, &eig, tau, 2);
        let e = |x: &[f64]| matrix_exp(&(hf(x) * c(-tau, 0.0))).unwrap();
        let step = 1e-3;
        for i in 0..2 {
            let mut p = x0.to_vec();
            let mut m = x0.to_vec();
            p[i] += step;
            m[i] -= step;
            let fd = (e(&p) - e(&m)) * c(0.5 / step, 0.0);
            assert!(max_abs(&(fd - &jet.d1[i])) < 1e-6);
            let fd2 = (e(&p) - e(&x0) * c(2.0, 0.0) + e(&m)) * c(1.0 / (step * step), 0.0);
            assert!(max_abs(&(fd2 - &jet.d2[i][i])) < 1e-5);
        }
        let at = |si: f64, sj: f64| e(&[x0[0] + si, x0[1] + sj]);
        let mixed =
            (at(step, step) - at(step, -step) - at(-step, step) + at(-step, -step)) * c(0.25 / (step * step), 0.0);
        assert!(max_abs(&(mixed - &jet.d2[0][1])) < 1e-5);
    }

    #[test]
    fn product_rule_on_polynomials() {
        // f = 𝕀 + x₀ M, g = x₁² M: (fg)_{01} = 2x₁ M² at the origin shifted.
        let m = pauli()[0].clone();
        let z = CMatrix::zeros(2, 2);
        let f = Jet {
            v: CMatrix::identity(2, 2),
            d1: vec![m.clone(), z.clone()],
            d2: vec![vec![z.clone(); 2]; 2],
            order: 2,
        };
        let g = Jet {
            v: &m * c(0.25, 0.0),
            d1: vec![z.clone(), &m * c(1.0, 0.0)],
            d2: vec![vec![z.clone(), z.clone()], vec![z.clone(), &m * c(2.0, 0.0)]],
            order: 2,
        };
        let p = f.mul(&g);
        assert!(max_abs(&(&p.d2[0][1] - &m * &m)) < 1e-15);
        assert_eq!(p.deriv(1).order, 1);
        assert_eq!(p.deriv(1).deriv(0).order, 0);
    }
}
