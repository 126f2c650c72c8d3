//! Matrix-valued coefficient fields over a coordinate chart.
//!
//! The primary representation is a finite series of terms
//! `M · x^α · w(k·x)` where `w` is `1`, `cos` or `sin`. Such fields have
//! exact first and second derivatives. Arbitrary fields (tabulated data,
//! closures) plug in through the [`FieldRule`] trait; their derivatives
//! are taken by finite differences unless the rule supplies them.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::algebra::{c, CMatrix};
use crate::error::{Error, Result};

/// Optional trigonometric factor of a series term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveKind {
    Cos,
    Sin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub kind: WaveKind,
    pub k: Vec<f64>,
}

/// One term `coeff · x^exponent · wave(k·x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coeff: CMatrix,
    pub exponent: Vec<u32>,
    pub wave: Option<Wave>,
}

/// Value, gradient and Hessian of a scalar function at a point.
#[derive(Debug, Clone)]
struct ScalarJet {
    v: f64,
    d1: Vec<f64>,
    d2: Vec<Vec<f64>>,
}

impl Term {
    fn monomial_jet(&self, x: &[f64]) -> ScalarJet {
        let n = x.len();
        let pow = |base: f64, e: u32| if e == 0 { 1.0 } else { base.powi(e as i32) };
        let v = (0..n).map(|i| pow(x[i], self.exponent[i])).product();
        let mut d1 = vec![0.0; n];
        let mut d2 = vec![vec![0.0; n]; n];
        for i in 0..n {
            let ei = self.exponent[i];
            if ei == 0 {
                continue;
            }
            let rest_i: f64 = (0..n)
                .filter(|&l| l != i)
                .map(|l| pow(x[l], self.exponent[l]))
                .product();
            d1[i] = ei as f64 * pow(x[i], ei - 1) * rest_i;
            if ei >= 2 {
                d2[i][i] = (ei * (ei - 1)) as f64 * pow(x[i], ei - 2) * rest_i;
            }
            for j in (i + 1)..n {
                let ej = self.exponent[j];
                if ej == 0 {
                    continue;
                }
                let rest: f64 = (0..n)
                    .filter(|&l| l != i && l != j)
                    .map(|l| pow(x[l], self.exponent[l]))
                    .product();
                let val = ei as f64 * pow(x[i], ei - 1) * ej as f64 * pow(x[j], ej - 1) * rest;
                d2[i][j] = val;
                d2[j][i] = val;
            }
        }
        ScalarJet { v, d1, d2 }
    }

    fn wave_jet(&self, x: &[f64]) -> ScalarJet {
        let n = x.len();
        match &self.wave {
            None => ScalarJet {
                v: 1.0,
                d1: vec![0.0; n],
                d2: vec![vec![0.0; n]; n],
            },
            Some(w) => {
                let theta: f64 = w.k.iter().zip(x).map(|(k, xi)| k * xi).sum();
                let (s, co) = theta.sin_cos();
                let (v, dv) = match w.kind {
                    WaveKind::Cos => (co, -s),
                    WaveKind::Sin => (s, co),
                };
                ScalarJet {
                    v,
                    d1: w.k.iter().map(|k| k * dv).collect(),
                    d2: w
                        .k
                        .iter()
                        .map(|ki| w.k.iter().map(|kj| -ki * kj * v).collect())
                        .collect(),
                }
            }
        }
    }

    fn scalar_jet(&self, x: &[f64]) -> ScalarJet {
        let m = self.monomial_jet(x);
        let w = self.wave_jet(x);
        let n = x.len();
        let d1 = (0..n).map(|i| m.d1[i] * w.v + m.v * w.d1[i]).collect();
        let d2 = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| m.d2[i][j] * w.v + m.d1[i] * w.d1[j] + m.d1[j] * w.d1[i] + m.v * w.d2[i][j])
                    .collect()
            })
            .collect();
        ScalarJet { v: m.v * w.v, d1, d2 }
    }
}

/// A field given by a finite sum of [`Term`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesField {
    n: usize,
    dim: usize,
    terms: Vec<Term>,
}

impl SeriesField {
    pub fn new(n: usize, dim: usize, terms: Vec<Term>) -> Result<Self> {
        for (t, term) in terms.iter().enumerate() {
            if term.coeff.nrows() != dim || term.coeff.ncols() != dim {
                return Err(Error::Validation(format!("term {t}: coefficient is not {dim}x{dim}")));
            }
            if term.exponent.len() != n {
                return Err(Error::Validation(format!("term {t}: exponent has length != {n}")));
            }
            if let Some(w) = &term.wave {
                if w.k.len() != n {
                    return Err(Error::Validation(format!("term {t}: wave vector has length != {n}")));
                }
            }
        }
        Ok(Self { n, dim, terms })
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    fn combine<F: Fn(&ScalarJet) -> f64>(&self, x: &[f64], pick: F) -> CMatrix {
        let mut out = CMatrix::zeros(self.dim, self.dim);
        for term in &self.terms {
            let s = pick(&term.scalar_jet(x));
            if s != 0.0 {
                out += &term.coeff * c(s, 0.0);
            }
        }
        out
    }
}

/// Extension hook for fields that are not series (tabulated grids,
/// closures). Derivatives default to `None`, meaning "take finite
/// differences".
pub trait FieldRule: Send + Sync {
    fn value(&self, x: &[f64]) -> CMatrix;

    fn gradient(&self, _x: &[f64]) -> Option<Vec<CMatrix>> {
        None
    }

    fn hessian(&self, _x: &[f64]) -> Option<Vec<Vec<CMatrix>>> {
        None
    }
}

type FieldFn = dyn Fn(&[f64]) -> CMatrix + Send + Sync;

/// A [`FieldRule`] backed by a plain closure.
pub struct FnRule(Arc<FieldFn>);

impl FieldRule for FnRule {
    fn value(&self, x: &[f64]) -> CMatrix {
        (self.0)(x)
    }
}

/// Matrix-valued field on an `n`-dimensional chart with `dim × dim` values.
#[derive(Clone)]
pub enum MatrixField {
    Series(SeriesField),
    Rule {
        n: usize,
        dim: usize,
        rule: Arc<dyn FieldRule>,
    },
}

impl fmt::Debug for MatrixField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatrixField::Series(s) => f.debug_tuple("Series").field(s).finish(),
            MatrixField::Rule { n, dim, .. } => f.debug_struct("Rule").field("n", n).field("dim", dim).finish(),
        }
    }
}

impl MatrixField {
    /// Constant field.
    pub fn constant(n: usize, m: CMatrix) -> Self {
        let dim = m.nrows();
        MatrixField::Series(SeriesField {
            n,
            dim,
            terms: vec![Term {
                coeff: m,
                exponent: vec![0; n],
                wave: None,
            }],
        })
    }

    pub fn zero(n: usize, dim: usize) -> Self {
        MatrixField::Series(SeriesField {
            n,
            dim,
            terms: Vec::new(),
        })
    }

    pub fn series(n: usize, dim: usize, terms: Vec<Term>) -> Result<Self> {
        Ok(MatrixField::Series(SeriesField::new(n, dim, terms)?))
    }

    /// Field evaluated by a closure; derivatives by finite differences.
    pub fn from_fn<F>(n: usize, dim: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> CMatrix + Send + Sync + 'static,
    {
        MatrixField::Rule {
            n,
            dim,
            rule: Arc::new(FnRule(Arc::new(f))),
        }
    }

    pub fn from_rule(n: usize, dim: usize, rule: Arc<dyn FieldRule>) -> Self {
        MatrixField::Rule { n, dim, rule }
    }

    pub fn dim_manifold(&self) -> usize {
        match self {
            MatrixField::Series(s) => s.n,
            MatrixField::Rule { n, .. } => *n,
        }
    }

    pub fn dim_fiber(&self) -> usize {
        match self {
            MatrixField::Series(s) => s.dim,
            MatrixField::Rule { dim, .. } => *dim,
        }
    }

    pub fn eval(&self, x: &[f64]) -> CMatrix {
        match self {
            MatrixField::Series(s) => s.combine(x, |j| j.v),
            MatrixField::Rule { rule, .. } => rule.value(x),
        }
    }

    /// Exact first derivatives `∂_i M`, if available.
    pub fn gradient(&self, x: &[f64]) -> Option<Vec<CMatrix>> {
        match self {
            MatrixField::Series(s) => Some((0..s.n).map(|i| s.combine(x, |j| j.d1[i])).collect()),
            MatrixField::Rule { rule, .. } => rule.gradient(x),
        }
    }

    /// Exact second derivatives `∂_i ∂_j M`, if available.
    pub fn hessian(&self, x: &[f64]) -> Option<Vec<Vec<CMatrix>>> {
        match self {
            MatrixField::Series(s) => Some(
                (0..s.n)
                    .map(|i| (0..s.n).map(|j| s.combine(x, |jet| jet.d2[i][j])).collect())
                    .collect(),
            ),
            MatrixField::Rule { rule, .. } => rule.hessian(x),
        }
    }

    pub fn has_analytic_derivatives(&self) -> bool {
        matches!(self, MatrixField::Series(_))
    }

    /// Series representation, if this field has one.
    pub fn as_series(&self) -> Option<&SeriesField> {
        match self {
            MatrixField::Series(s) => Some(s),
            MatrixField::Rule { .. } => None,
        }
    }

    /// Checks the analytic gradient against central differences at `x`,
    /// returning the worst relative mismatch.
    pub fn derivative_consistency(&self, x: &[f64], h: f64) -> Option<f64> {
        let grad = self.gradient(x)?;
        let mut worst: f64 = 0.0;
        for (i, g) in grad.iter().enumerate() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            let fd = (self.eval(&xp) - self.eval(&xm)) / c(2.0 * h, 0.0);
            let scale = crate::algebra::max_abs(g).max(1.0);
            worst = worst.max(crate::algebra::max_abs(&(fd - g)) / scale);
        }
        Some(worst)
    }
}
