//! Interior heat-kernel densities `a₀`, `a₁`, `a₂` at a point.
//!
//! With `U₀(ξ) = e^{−H(x,ξ)}` and the first- and second-order operators
//! `K f = −Γ(ξ) D f − D̄(Γ(ξ) f)` and `D̄D + V` acting on matrix functions of
//! `x`, the densities are
//!
//! ```text
//! a₀ = ∫ dξ/π^{n/2} tr e^{−H}
//! a₁ = −∫ dξ/π^{n/2} tr ∫₀¹ e^{−(1−τ)H} K e^{−τH}                      (= 0)
//! a₂ = ∫ dξ/π^{n/2} tr [ ∫∫_{τ₁<τ₂} e^{−(1−τ₂)H} K e^{−(τ₂−τ₁)H} K e^{−τ₁H}
//!                        − ∫₀¹ e^{−(1−τ)H} (D̄D + V) e^{−τH} ]
//! ```
//!
//! where every operator acts on everything to its right, starting from the
//! constant identity matrix. The `x`-dependence is carried by second-order
//! jets at the evaluation point; jets of `e^{−τH}` are built from the jet of
//! `H` by the Daleckii–Krein divided-difference formulas, which is the
//! spectral form of the Duhamel rule `∂e^{−τH} = −∫₀^τ e^{−(τ−s)H}(∂H)e^{−sH}ds`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::algebra::{c, hermitian_eig, matrix_exp, CMatrix, C64};
use crate::error::{Error, Result};
use crate::jet::{exp_jet, Jet};
use crate::quadrature::{gauss_hermite, gauss_legendre, Rule};
use crate::symbol::{DiracSymbol, JetData};

/// Default Gauss–Hermite order per ξ axis.
pub const DEFAULT_XI_ORDER: usize = 16;
/// Default Gauss–Legendre order per τ axis.
pub const DEFAULT_TAU_ORDER: usize = 24;
/// Order increase used for the self-convergence error estimate.
pub const REFINEMENT_STEP: usize = 4;

/// Tensor Gauss–Hermite rule for `∫ dξ/π^{n/2}` after whitening by a
/// positive-definite scalar metric `g`: `ξ = g^{−1/2} η`.
#[derive(Debug, Clone)]
pub struct XiQuadrature {
    pub order: usize,
    metric: Vec<Vec<f64>>,
    /// `W = g^{−1/2}`, row-major.
    pub whitening: Vec<Vec<f64>>,
    nodes: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl XiQuadrature {
    pub fn new(order: usize, metric: &[Vec<f64>]) -> Result<Self> {
        let n = metric.len();
        if n == 0 || metric.iter().any(|r| r.len() != n) {
            return Err(Error::Config(
                "whitening metric must be a non-empty square matrix".into(),
            ));
        }
        let g = DMatrix::<f64>::from_fn(n, n, |i, j| 0.5 * (metric[i][j] + metric[j][i]));
        let eig = g.clone().symmetric_eigen();
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min > 0.0) {
            return Err(Error::Ellipticity {
                min_eigenvalue: min,
                x: Vec::new(),
                xi: Vec::new(),
            });
        }
        let inv_sqrt = DMatrix::<f64>::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
        let w = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
        let det_w: f64 = eig.eigenvalues.iter().map(|l| 1.0 / l.sqrt()).product();
        let rule = gauss_hermite(order)?;
        let mut nodes = Vec::with_capacity(order.pow(n as u32));
        let mut weights = Vec::with_capacity(order.pow(n as u32));
        let mut idx = vec![0usize; n];
        loop {
            let eta: Vec<f64> = idx.iter().map(|&k| rule.nodes[k]).collect();
            let wgh: f64 = idx.iter().map(|&k| rule.weights[k]).product();
            let r2: f64 = eta.iter().map(|v| v * v).sum();
            let xi: Vec<f64> = (0..n).map(|i| (0..n).map(|j| w[(i, j)] * eta[j]).sum()).collect();
            nodes.push(xi);
            weights.push(wgh * r2.exp() * det_w);
            let mut k = 0;
            while k < n {
                idx[k] += 1;
                if idx[k] < order {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == n {
                break;
            }
        }
        Ok(Self {
            order,
            metric: metric.to_vec(),
            whitening: (0..n).map(|i| (0..n).map(|j| w[(i, j)]).collect()).collect(),
            nodes,
            weights,
        })
    }

    /// Unwhitened rule (`g = 𝕀`).
    pub fn standard(n: usize, order: usize) -> Result<Self> {
        let id: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::new(order, &id)
    }

    /// Rule whitened by the scalar proxy metric `(1/N) tr a^{μν}(x)`, rescaled
    /// to the geometric mean of the extreme ratios `λ_min(H)/ξᵀgξ` and
    /// `λ_max(H)/ξᵀgξ` over sampled directions. This balances the slowest
    /// and fastest decaying branches against the Hermite weight.
    pub fn for_symbol(sym: &DiracSymbol, x: &[f64], order: usize) -> Result<Self> {
        let mut g = sym.scalar_metric(x)?;
        balance_metric(&mut g, |dir| {
            crate::algebra::hermitian_eigenvalues(&sym.build_h(x, dir)?)
        })?;
        Self::new(order, &g).map_err(|e| match e {
            Error::Ellipticity { min_eigenvalue, .. } => Error::Ellipticity {
                min_eigenvalue,
                x: x.to_vec(),
                xi: Vec::new(),
            },
            other => other,
        })
    }

    /// Same whitening with a different order.
    pub fn with_order(&self, order: usize) -> Result<Self> {
        Self::new(order, &self.metric)
    }

    pub fn dim(&self) -> usize {
        self.metric.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `Σ_k w_k f(ξ_k)`: nodes are evaluated in parallel, the sum is taken
    /// in node order, so the result does not depend on the worker count.
    pub fn integrate<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(&[f64]) -> Result<f64> + Sync,
    {
        let values: Vec<Result<f64>> = self.nodes.par_iter().map(|xi| f(xi)).collect();
        let mut total = 0.0;
        for (w, v) in self.weights.iter().zip(values) {
            total += w * v?;
        }
        Ok(total)
    }
}

/// Rescales `g` by `√(lo·hi)`, where `lo` and `hi` are the extreme ratios
/// of the smallest and largest eigenvalue of the quadratic form at a unit
/// direction to `dirᵀ g dir`, sampled over quasi-uniform directions.
pub(crate) fn balance_metric<F>(g: &mut [Vec<f64>], eigenvalues: F) -> Result<()>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = g.len();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for dir in crate::symbol::sphere_directions(n, 256) {
        let q: f64 = (0..n)
            .map(|i| (0..n).map(|j| dir[i] * g[i][j] * dir[j]).sum::<f64>())
            .sum();
        let ev = eigenvalues(&dir)?;
        if q > 0.0 && !ev.is_empty() {
            lo = lo.min(ev[0] / q);
            hi = hi.max(ev[ev.len() - 1] / q);
        }
    }
    let scale = (lo * hi).sqrt();
    if scale.is_finite() && scale > 0.0 {
        for row in g.iter_mut() {
            for v in row.iter_mut() {
                *v *= scale;
            }
        }
    }
    Ok(())
}

/// Simplex quadrature controls for [`volterra_term`].
#[derive(Debug, Clone)]
pub struct VolterraSpec {
    pub order: usize,
}

impl Default for VolterraSpec {
    fn default() -> Self {
        Self {
            order: DEFAULT_TAU_ORDER,
        }
    }
}

/// Time-ordered integral
/// `∫_{0<τ₁<…<τ_k<1} e^{−(1−τ_k)H} F_k ⋯ e^{−(τ₂−τ₁)H} F₁ e^{−τ₁H}`
/// for `k ∈ {1, 2}`, with `factors = [F₁, …, F_k]`.
pub fn volterra_term(h: &CMatrix, factors: &[CMatrix], spec: &VolterraSpec) -> Result<CMatrix> {
    let exp = |t: f64| matrix_exp(&(h * c(-t, 0.0)));
    let rule = gauss_legendre(spec.order, 0.0, 1.0)?;
    match factors {
        [f1] => {
            let mut acc = CMatrix::zeros(h.nrows(), h.ncols());
            for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
                acc += exp(1.0 - t)? * f1 * exp(t)? * c(w, 0.0);
            }
            Ok(acc)
        }
        [f1, f2] => {
            let mut acc = CMatrix::zeros(h.nrows(), h.ncols());
            for (&t1, &w1) in rule.nodes.iter().zip(&rule.weights) {
                let right = f1 * exp(t1)?;
                for (&s, &ws) in rule.nodes.iter().zip(&rule.weights) {
                    let t2 = t1 + (1.0 - t1) * s;
                    acc += exp(1.0 - t2)? * f2 * exp(t2 - t1)? * &right * c(w1 * ws * (1.0 - t1), 0.0);
                }
            }
            Ok(acc)
        }
        _ => Err(Error::Unsupported(format!(
            "Volterra terms of order {} (only 1 and 2 are implemented)",
            factors.len()
        ))),
    }
}

/// A density value with its self-convergence error estimate.
#[derive(Debug, Clone, Serialize)]
pub struct InteriorValue {
    pub value: f64,
    pub error_estimate: f64,
    pub warning: Option<String>,
}

/// Coefficient jets at a point, rearranged for applying `D`, `D̄` and `K`.
struct PointOperators {
    n: usize,
    gamma: Vec<Jet>,
    rho_inv: Jet,
    /// `Γ^μ ρ`.
    gamma_rho: Vec<Jet>,
    /// `ρ Γ^μ`.
    rho_gamma: Vec<Jet>,
    conn: Vec<Jet>,
    potential: Option<CMatrix>,
}

impl PointOperators {
    fn new(jets: &JetData) -> Result<Self> {
        let n = jets.gamma.len();
        let rho = Jet::from_field(&jets.rho);
        let rho_inv_v = crate::algebra::inverse(&rho.v)?;
        let rho_inv = rho.inverse(&rho_inv_v);
        let gamma: Vec<Jet> = jets.gamma.iter().map(Jet::from_field).collect();
        Ok(Self {
            n,
            gamma_rho: gamma.iter().map(|g| g.mul(&rho)).collect(),
            rho_gamma: gamma.iter().map(|g| rho.mul(g)).collect(),
            gamma,
            rho_inv,
            conn: jets.conn.iter().map(Jet::from_field).collect(),
            potential: jets.potential.as_ref().map(|p| p.v.clone()),
        })
    }

    /// `D f = i Γ^μ ρ (∂_μ + B_μ)(ρ⁻¹ f)`.
    fn d(&self, f: &Jet) -> Jet {
        let g = self.rho_inv.mul(f);
        let mut out: Option<Jet> = None;
        for mu in 0..self.n {
            let inner = g.deriv(mu).add(&self.conn[mu].mul(&g));
            let term = self.gamma_rho[mu].mul(&inner);
            out = Some(match out {
                None => term,
                Some(acc) => acc.add(&term),
            });
        }
        out.expect("n >= 1").scale(c(0.0, 1.0))
    }

    /// `D̄ g = i ρ⁻¹ (∂_ν + B_ν)(ρ Γ^ν g)`.
    fn dbar(&self, g: &Jet) -> Jet {
        let mut out: Option<Jet> = None;
        for nu in 0..self.n {
            let h = self.rho_gamma[nu].mul(g);
            let inner = h.deriv(nu).add(&self.conn[nu].mul(&h));
            out = Some(match out {
                None => inner,
                Some(acc) => acc.add(&inner),
            });
        }
        self.rho_inv.mul(&out.expect("n >= 1")).scale(c(0.0, 1.0))
    }

    fn gamma_xi(&self, xi: &[f64]) -> Jet {
        let mut acc = self.gamma[0].scale(c(xi[0], 0.0));
        for mu in 1..self.n {
            acc = acc.axpy(c(xi[mu], 0.0), &self.gamma[mu]);
        }
        acc
    }

    /// `K f = −Γ(ξ) D f − D̄(Γ(ξ) f)`.
    fn k(&self, gx: &Jet, f: &Jet) -> Jet {
        let a = gx.mul(&self.d(f));
        let b = self.dbar(&gx.mul(f));
        a.add(&b).scale(c(-1.0, 0.0))
    }
}

fn trace_re(m: &CMatrix) -> f64 {
    m.trace().re
}

/// `a₀(x) = ∫ dξ/π^{n/2} tr e^{−H(x,ξ)}`, with the error estimated from a
/// rule of order `quad.order + 4`.
pub fn compute_a0(sym: &DiracSymbol, x: &[f64], quad: &XiQuadrature) -> Result<InteriorValue> {
    let integrand = |xi: &[f64]| -> Result<f64> {
        let h = sym.build_h(x, xi)?;
        let eig = hermitian_eig(&h)?;
        Ok(eig.values.iter().map(|l| (-l).exp()).sum())
    };
    let value = quad.integrate(integrand)?;
    let refined = quad.with_order(quad.order + REFINEMENT_STEP)?.integrate(integrand)?;
    Ok(finish(value, refined, None))
}

fn finish(value: f64, refined: f64, tol: Option<f64>) -> InteriorValue {
    let err = (value - refined).abs();
    let warning = tol
        .filter(|&t| err > t * value.abs().max(1.0))
        .map(|t| format!("quadrature self-convergence {err:.3e} exceeds relative tolerance {t:.1e}"));
    InteriorValue {
        value,
        error_estimate: err,
        warning,
    }
}

/// Magnitude of the ξ-integrated first-order Volterra term, which vanishes
/// because its integrand is odd in ξ.
pub fn check_a1(sym: &DiracSymbol, x: &[f64], quad: &XiQuadrature) -> Result<f64> {
    let jets = sym.jets(x)?;
    let ops = PointOperators::new(&jets)?;
    let rule = gauss_legendre(DEFAULT_TAU_ORDER, 0.0, 1.0)?;
    let total = quad.integrate(|xi| {
        let gx = ops.gamma_xi(xi);
        let h = gx.mul(&gx);
        let eig = hermitian_eig(&h.v)?;
        let mut acc = 0.0;
        for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
            let e = exp_jet(&h, &eig, t, 1);
            let ke = ops.k(&gx, &e);
            let left = eig.map(|l| c((-(1.0 - t) * l).exp(), 0.0));
            acc += w * trace_re(&(left * ke.v));
        }
        Ok(acc)
    })?;
    Ok(total.abs())
}

/// ξ-integrand of `a₂` at one covector.
fn a2_integrand(ops: &PointOperators, xi: &[f64], rule: &Rule) -> Result<f64> {
    let gx = ops.gamma_xi(xi);
    let h = gx.mul(&gx);
    let eig = hermitian_eig(&h.v)?;
    let value_exp = |t: f64| eig.map(|l| c((-t * l).exp(), 0.0));

    let mut second_order = 0.0;
    for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
        let e = exp_jet(&h, &eig, t, 2);
        let mut l = ops.dbar(&ops.d(&e)).v;
        if let Some(v) = &ops.potential {
            l += v * &e.v;
        }
        second_order += w * trace_re(&(value_exp(1.0 - t) * l));
    }

    let mut first_order_squared = 0.0;
    for (&t1, &w1) in rule.nodes.iter().zip(&rule.weights) {
        let e1 = exp_jet(&h, &eig, t1, 2);
        let g1 = ops.k(&gx, &e1);
        for (&s, &ws) in rule.nodes.iter().zip(&rule.weights) {
            let t2 = t1 + (1.0 - t1) * s;
            let e2 = exp_jet(&h, &eig, t2 - t1, 1);
            let g2 = ops.k(&gx, &e2.mul(&g1));
            first_order_squared += w1 * ws * (1.0 - t1) * trace_re(&(value_exp(1.0 - t2) * g2.v));
        }
    }
    Ok(first_order_squared - second_order)
}

/// `a₂(x)` from coefficient jets, with the error estimated from a ξ-rule of
/// order `quad.order + 4`. A warning is attached when the two orders
/// differ by more than `1e-3` relative.
pub fn compute_a2(
    sym: &DiracSymbol,
    x: &[f64],
    quad: &XiQuadrature,
    jets: &JetData,
    tau_order: usize,
) -> Result<InteriorValue> {
    if jets.gamma.len() != sym.n() || jets.x.as_slice() != x {
        return Err(Error::Config("jets do not belong to this symbol and point".into()));
    }
    let ops = PointOperators::new(jets)?;
    let rule = gauss_legendre(tau_order, 0.0, 1.0)?;
    let value = quad.integrate(|xi| a2_integrand(&ops, xi, &rule))?;
    let refined = quad
        .with_order(quad.order + REFINEMENT_STEP)?
        .integrate(|xi| a2_integrand(&ops, xi, &rule))?;
    Ok(finish(value, refined, Some(1e-3)))
}

/// Convenience wrapper: jets from the symbol, default τ order.
pub fn compute_a2_default(sym: &DiracSymbol, x: &[f64], quad: &XiQuadrature) -> Result<InteriorValue> {
    let jets = sym.jets(x)?;
    compute_a2(sym, x, quad, &jets, DEFAULT_TAU_ORDER)
}

/// Trace of a Volterra term, used by the integrand cross-checks.
pub fn volterra_trace(h: &CMatrix, factors: &[CMatrix], spec: &VolterraSpec) -> Result<C64> {
    Ok(volterra_term(h, factors, spec)?.trace())
}
