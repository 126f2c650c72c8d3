//! Boundary resolvent slice and the boundary heat invariant `A₁`.
//!
//! At a boundary point with frozen split `Γ(ξ) = Aω + C(ξ̂)` the normal
//! resolvent symbol is `R_λ(ω) = {(Aω + C)² − λ}⁻¹ = P(ω)⁻¹` with the
//! quadratic pencil `P(ω) = A²ω² + Bω + C² − λ`. Its Fourier transform in
//! `ω` is evaluated by residues:
//!
//! ```text
//! Φ(λ, y) =  i Σ_{Im ω_j > 0} e^{iω_j y} Res_j      (y > 0)
//! Φ(λ, y) = −i Σ_{Im ω_j < 0} e^{iω_j y} Res_j      (y < 0)
//! ```
//!
//! and `Ψ₁ = −√π ∫ dλ/(2πi) e^{−λ} tr(Φ₀⁻¹ ∂_λΦ₀)` is integrated along a
//! parabolic contour wrapped around the positive real λ axis.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{
    c, hermitian_eigenvalues, identity, inverse, matrix_sqrt_analytic, max_abs, pencil_roots, singular_values,
    solve_sylvester, CMatrix, PencilSpectrum, SqrtBranch, C64,
};
use crate::error::{Error, Result};
use crate::interior::{balance_metric, XiQuadrature};
use crate::quadrature::integrate_adaptive;
use crate::symbol::{BoundaryFrame, BoundarySplit, DiracSymbol};

/// Relative threshold below which the resolvent symbol counts as singular.
pub const NEAR_SPECTRUM_TOL: f64 = 1e-12;
/// Allowed disagreement between two Φ₀ evaluation methods.
pub const CROSS_CHECK_TOL: f64 = 1e-6;

/// `R_λ(ω) = {(Aω + C)² − λ𝕀}⁻¹` by direct inversion.
pub fn resolvent_symbol(split: &BoundarySplit, lambda: C64, omega: C64) -> Result<CMatrix> {
    let p = split.symbol_at(omega) - identity(split.dim()) * lambda;
    let sv = singular_values(&p)?;
    let top = sv.last().copied().unwrap_or(0.0);
    if sv[0] <= NEAR_SPECTRUM_TOL * top.max(1.0) {
        return Err(Error::NearSpectrum(format!(
            "(Aω+C)²−λ is singular at ω = {omega}, λ = {lambda} (smallest singular value {:.3e})",
            sv[0]
        )));
    }
    inverse(&p)
}

/// Residue representation of `Φ(λ, ·, ξ̂)` for one split and one λ.
#[derive(Debug, Clone)]
pub struct BoundaryResolvent {
    a: CMatrix,
    spectrum: PencilSpectrum,
    upper: Vec<usize>,
    lower: Vec<usize>,
}

impl BoundaryResolvent {
    pub fn new(split: &BoundarySplit, lambda: C64) -> Result<Self> {
        let spectrum = pencil_roots(&split.a2(), &split.b, &split.c2(), lambda)?;
        let mut upper = Vec::new();
        let mut lower = Vec::new();
        for (k, r) in spectrum.roots.iter().enumerate() {
            if r.omega.im.abs() <= NEAR_SPECTRUM_TOL * (1.0 + r.omega.norm()) {
                return Err(Error::NearSpectrum(format!(
                    "pencil root ω = {} is real at λ = {}",
                    r.omega, spectrum.lambda
                )));
            }
            if r.omega.im > 0.0 {
                upper.push(k);
            } else {
                lower.push(k);
            }
        }
        let count = |idx: &[usize]| idx.iter().map(|&k| spectrum.roots[k].multiplicity).sum::<usize>();
        let n = split.dim();
        if count(&upper) != n || count(&lower) != n {
            return Err(Error::BoundaryEllipticity(format!(
                "pencil has {} upper and {} lower half-plane roots, expected {n} each",
                count(&upper),
                count(&lower)
            )));
        }
        Ok(Self {
            a: split.a.clone(),
            spectrum,
            upper,
            lower,
        })
    }

    /// The λ actually used; differs from the request after a defective-root retry.
    pub fn lambda(&self) -> C64 {
        self.spectrum.lambda
    }

    pub fn perturbed(&self) -> bool {
        self.spectrum.perturbed
    }

    pub fn spectrum(&self) -> &PencilSpectrum {
        &self.spectrum
    }

    fn side(&self, y: f64) -> (&[usize], C64) {
        if y >= 0.0 {
            (&self.upper, c(0.0, 1.0))
        } else {
            (&self.lower, c(0.0, -1.0))
        }
    }

    /// `Φ(λ, y)`; the value at `y = 0` is `Φ₀` from the upper half-plane.
    pub fn phi(&self, y: f64) -> CMatrix {
        let (idx, pref) = self.side(y);
        let n = self.a.nrows();
        idx.iter().fold(CMatrix::zeros(n, n), |acc, &k| {
            let r = &self.spectrum.roots[k];
            acc + &r.residue * (pref * (c(0.0, y) * r.omega).exp())
        })
    }

    /// One-sided `∂_yΦ`: from the right for `side ≥ 0`, from the left otherwise.
    pub fn dphi_dy(&self, y: f64, side: f64) -> CMatrix {
        let (idx, pref) = if y > 0.0 || (y == 0.0 && side >= 0.0) {
            self.side(1.0)
        } else {
            self.side(-1.0)
        };
        let n = self.a.nrows();
        idx.iter().fold(CMatrix::zeros(n, n), |acc, &k| {
            let r = &self.spectrum.roots[k];
            acc + &r.residue * (pref * c(0.0, 1.0) * r.omega * (c(0.0, y) * r.omega).exp())
        })
    }

    pub fn phi0(&self) -> CMatrix {
        self.phi(0.0)
    }

    /// `∂_λΦ₀ = ∫dω/2π R_λ²`, from the residues of `R²`:
    /// `Res_{ω_j} R² = Res_j S_j + S_j Res_j`, `S_j = Σ_{k≠j} Res_k/(ω_j − ω_k)`.
    pub fn dphi0_dlambda(&self) -> CMatrix {
        let roots = &self.spectrum.roots;
        let n = self.a.nrows();
        let mut acc = CMatrix::zeros(n, n);
        for &j in &self.upper {
            let mut s = CMatrix::zeros(n, n);
            for (k, r) in roots.iter().enumerate() {
                if k != j {
                    s += &r.residue / (roots[j].omega - r.omega);
                }
            }
            acc += &roots[j].residue * &s + &s * &roots[j].residue;
        }
        acc * c(0.0, 1.0)
    }

    /// Slowest exponential decay rate `min |Im ω_j|` of `Φ`.
    pub fn decay_rate(&self) -> f64 {
        self.spectrum
            .roots
            .iter()
            .map(|r| r.omega.im.abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// `|Σ_j Res_j|` relative to the residue scale; zero for an exact
    /// partial-fraction decomposition of an `O(ω⁻²)` resolvent.
    pub fn residue_defect(&self) -> f64 {
        let scale = self
            .spectrum
            .roots
            .iter()
            .map(|r| max_abs(&r.residue))
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        max_abs(&self.spectrum.residue_sum()) / scale
    }
}

/// `Φ(λ, y, ξ̂)` by residues.
pub fn phi(split: &BoundarySplit, lambda: C64, y: f64) -> Result<CMatrix> {
    Ok(BoundaryResolvent::new(split, lambda)?.phi(y))
}

/// How `Φ₀` and `∂_λΦ₀` are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phi0Method {
    /// Residues of the pencil in the upper half-plane.
    #[default]
    Residue,
    /// Adaptive real-line quadrature after `ω = tan θ`.
    Quadrature,
    /// `Φ₀ = ½A⁻¹μ⁻¹A⁻¹` with `μ = (A⁻¹(C² − λ)A⁻¹)^{1/2}`; requires `B = 0`.
    ClosedForm,
}

/// `Φ₀`, `∂_λΦ₀` and diagnostics at one `(λ, ξ̂)`.
#[derive(Debug, Clone)]
pub struct ResolventSlice {
    pub lambda: C64,
    pub xi_hat: Vec<f64>,
    pub phi0: CMatrix,
    pub dphi0: CMatrix,
    pub method: Phi0Method,
    /// Method-specific consistency measure: residue-sum defect, quadrature
    /// error estimate, or the Sylvester residual of the closed form.
    pub residual: f64,
}

/// `Φ₀(λ, ξ̂)` and `∂_λΦ₀` by the requested method.
pub fn phi0(split: &BoundarySplit, lambda: C64, method: Phi0Method) -> Result<ResolventSlice> {
    let (lambda_used, phi0, dphi0, residual) = match method {
        Phi0Method::Residue => {
            let r = BoundaryResolvent::new(split, lambda)?;
            (r.lambda(), r.phi0(), r.dphi0_dlambda(), r.residue_defect())
        }
        Phi0Method::Quadrature => {
            let (p, d, err) = phi0_quadrature(split, lambda)?;
            (lambda, p, d, err)
        }
        Phi0Method::ClosedForm => {
            let (p, d, res) = phi0_closed_form(split, lambda)?;
            (lambda, p, d, res)
        }
    };
    Ok(ResolventSlice {
        lambda: lambda_used,
        xi_hat: split.xi_hat.clone(),
        phi0,
        dphi0,
        method,
        residual,
    })
}

/// Real-line quadrature with `ω = tan θ`. The substitution turns
/// `R(ω) dω` into `cos²θ Q(θ)⁻¹ dθ / cos²θ` with
/// `Q(θ) = A² sin²θ + B sinθ cosθ + (C² − λ) cos²θ`, which stays regular at
/// `θ = ±π/2`, so the algebraic tail is integrated exactly.
fn phi0_quadrature(split: &BoundarySplit, lambda: C64) -> Result<(CMatrix, CMatrix, f64)> {
    let n = split.dim();
    let a2 = split.a2();
    let shifted = split.c2() - identity(n) * lambda;
    let q_inv = |t: f64| {
        let (s, co) = t.sin_cos();
        let q = &a2 * c(s * s, 0.0) + &split.b * c(s * co, 0.0) + &shifted * c(co * co, 0.0);
        inverse(&q).unwrap_or_else(|_| CMatrix::from_element(n, n, c(f64::NAN, 0.0)))
    };
    let h = PI / 2.0;
    let val = integrate_adaptive(|t| q_inv(t) * c(1.0 / (2.0 * PI), 0.0), -h, h, 1e-13, 4000)?;
    let der = integrate_adaptive(
        |t| {
            let qi = q_inv(t);
            let co = t.cos();
            &qi * &qi * c(co * co / (2.0 * PI), 0.0)
        },
        -h,
        h,
        1e-13,
        4000,
    )?;
    if val
        .value
        .iter()
        .chain(der.value.iter())
        .any(|z| !z.re.is_finite() || !z.im.is_finite())
    {
        return Err(Error::NearSpectrum(format!(
            "resolvent singular on the real ω axis at λ = {lambda}"
        )));
    }
    Ok((val.value, der.value, val.error_estimate.max(der.error_estimate)))
}

fn phi0_closed_form(split: &BoundarySplit, lambda: C64) -> Result<(CMatrix, CMatrix, f64)> {
    if !split.b_is_zero(1e-12) {
        return Err(Error::Validation("closed-form Φ₀ requires B = AC + CA = 0".into()));
    }
    let n = split.dim();
    let a_inv = inverse(&split.a)?;
    let m = &a_inv * (split.c2() - identity(n) * lambda) * &a_inv;
    let mu = matrix_sqrt_analytic(&m, SqrtBranch::PositiveRealPart)?;
    let mu_inv = inverse(&mu)?;
    let a_inv2 = &a_inv * &a_inv;
    let x = solve_sylvester(&mu, &mu, &(-&a_inv2))?;
    let phi0 = &a_inv * &mu_inv * &a_inv * c(0.5, 0.0);
    let dphi0 = &a_inv * &mu_inv * &x * &mu_inv * &a_inv * c(-0.5, 0.0);
    let residual = max_abs(&(&mu * &x + &x * &mu + &a_inv2));
    Ok((phi0, dphi0, residual))
}

/// Largest entrywise difference between the residue and quadrature
/// evaluations of `Φ₀` and `∂_λΦ₀`; fails above [`CROSS_CHECK_TOL`].
pub fn phi0_cross_check(split: &BoundarySplit, lambda: C64) -> Result<f64> {
    let r = phi0(split, lambda, Phi0Method::Residue)?;
    let q = phi0(split, lambda, Phi0Method::Quadrature)?;
    let delta = max_abs(&(&r.phi0 - &q.phi0)).max(max_abs(&(&r.dphi0 - &q.dphi0)));
    if delta > CROSS_CHECK_TOL {
        return Err(Error::CrossValidation(format!(
            "Φ₀ residue and quadrature methods differ by {delta:.3e} at λ = {lambda}"
        )));
    }
    Ok(delta)
}

/// Decaying solution of `(−A²∂_r² − iB∂_r + C² − λ)φ = 0` on `r > 0` with
/// `φ(0) = f`, given by `φ(r) = Φ(λ, r)Φ₀⁻¹ f`.
#[derive(Debug, Clone)]
pub struct HalflineSolution {
    resolvent: BoundaryResolvent,
    coeff: CMatrix,
    split: BoundarySplit,
}

impl HalflineSolution {
    pub fn eval(&self, r: f64) -> CMatrix {
        self.resolvent.phi(r) * &self.coeff
    }

    pub fn derivative(&self, r: f64) -> CMatrix {
        self.resolvent.dphi_dy(r, 1.0) * &self.coeff
    }

    /// Central-difference residual of the ODE at `r > step`.
    pub fn ode_residual(&self, r: f64, step: f64) -> f64 {
        let (m, z, p) = (self.eval(r - step), self.eval(r), self.eval(r + step));
        let d2 = (&p - &z * c(2.0, 0.0) + &m) * c(1.0 / (step * step), 0.0);
        let d1 = (&p - &m) * c(1.0 / (2.0 * step), 0.0);
        let n = self.split.dim();
        let lhs = -(self.split.a2() * d2) - &self.split.b * d1 * c(0.0, 1.0)
            + (self.split.c2() - identity(n) * self.resolvent.lambda()) * z;
        max_abs(&lhs)
    }
}

/// Solves the half-line problem for the boundary data `f` (an `N×k` block).
pub fn solve_halfline_ode(split: &BoundarySplit, lambda: C64, f: &CMatrix) -> Result<HalflineSolution> {
    if f.nrows() != split.dim() {
        return Err(Error::Validation("boundary data must have N rows".into()));
    }
    let resolvent = BoundaryResolvent::new(split, lambda)?;
    let p0 = resolvent.phi0();
    let inv = inverse(&p0).map_err(|_| Error::BoundaryEllipticity(format!("Φ₀ is singular at λ = {lambda}")))?;
    let sv = singular_values(&p0)?;
    if sv[0] <= NEAR_SPECTRUM_TOL * sv[sv.len() - 1] {
        return Err(Error::BoundaryEllipticity(format!(
            "Φ₀ is numerically singular at λ = {lambda} (σ_min = {:.3e})",
            sv[0]
        )));
    }
    Ok(HalflineSolution {
        coeff: inv * f,
        resolvent,
        split: split.clone(),
    })
}

/// Boundary part of the Dirichlet Green function,
/// `F_B(r, r′) = −Φ(λ, r)Φ₀⁻¹Φ(λ, −r′)` for `r, r′ ≥ 0`.
pub fn boundary_green(split: &BoundarySplit, lambda: C64, r: f64, r_prime: f64) -> Result<CMatrix> {
    if r < 0.0 || r_prime < 0.0 {
        return Err(Error::Validation("F_B is defined for r, r′ ≥ 0".into()));
    }
    let res = BoundaryResolvent::new(split, lambda)?;
    let inv =
        inverse(&res.phi0()).map_err(|_| Error::BoundaryEllipticity(format!("Φ₀ is singular at λ = {lambda}")))?;
    Ok(-(res.phi(r) * inv * res.phi(-r_prime)))
}

/// Parabolic inverse-Laplace contour in `s = −λ`:
/// `s(u) = μ(1 + iu)²`, `u ∈ (−3, 3)`, trapezoidal rule with `nodes`
/// points at `u_k = (k + ½)h`, `h = 6/nodes`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContourSpec {
    pub nodes: usize,
    /// Parabola scale; defaults to `π·nodes/24`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    /// Abscissa `w` of the vertical line the contour replaces; defaults to
    /// `−10(1 + max eig C²)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abscissa: Option<f64>,
    #[serde(default)]
    pub method: Phi0Method,
}

impl Default for ContourSpec {
    fn default() -> Self {
        Self {
            nodes: 64,
            mu: None,
            abscissa: None,
            method: Phi0Method::Residue,
        }
    }
}

impl ContourSpec {
    pub fn mu(&self) -> f64 {
        self.mu.unwrap_or(PI * self.nodes as f64 / 24.0)
    }

    pub fn abscissa_for(&self, split: &BoundarySplit) -> Result<f64> {
        match self.abscissa {
            Some(w) => Ok(w),
            None => {
                let ev = hermitian_eigenvalues(&split.c2())?;
                Ok(-10.0 * (1.0 + ev.last().copied().unwrap_or(0.0).max(0.0)))
            }
        }
    }

    /// Same contour with twice the nodes and the parabola scale held fixed.
    pub fn doubled(&self) -> Self {
        Self {
            nodes: 2 * self.nodes,
            mu: Some(self.mu()),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes < 4 || self.nodes % 2 != 0 {
            return Err(Error::ContourPlacement(format!(
                "node count must be even and at least 4, got {}",
                self.nodes
            )));
        }
        let mu = self.mu();
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::ContourPlacement(format!(
                "parabola scale μ = {mu} must be positive so the contour stays off λ ≥ 0"
            )));
        }
        if let Some(w) = self.abscissa {
            if !(w < 0.0) {
                return Err(Error::ContourPlacement(format!("abscissa w = {w} must be negative")));
            }
        }
        Ok(())
    }

    /// Contour nodes `(λ_k, dλ/du)` in the upper half of the `s` plane.
    fn nodes_lambda(&self) -> Vec<(C64, C64)> {
        let mu = self.mu();
        let h = 6.0 / self.nodes as f64;
        (0..self.nodes / 2)
            .map(|k| {
                let u = (k as f64 + 0.5) * h;
                let z = c(1.0, u);
                (-(z * z * mu), z * c(0.0, 2.0 * mu))
            })
            .collect()
    }
}

/// `tr(Φ₀⁻¹ ∂_λΦ₀)` at one λ.
pub fn log_det_derivative(split: &BoundarySplit, lambda: C64, method: Phi0Method) -> Result<C64> {
    let slice = phi0(split, lambda, method)?;
    let inv =
        inverse(&slice.phi0).map_err(|_| Error::BoundaryEllipticity(format!("Φ₀ is singular at λ = {lambda}")))?;
    Ok((inv * slice.dphi0).trace())
}

/// `Ψ₁ = −√π ∫ dλ/(2πi) e^{−λ} tr(Φ₀⁻¹ ∂_λΦ₀)` on the contour.
pub fn psi1(split: &BoundarySplit, contour: &ContourSpec) -> Result<f64> {
    contour.validate()?;
    contour.abscissa_for(split)?;
    let h = 6.0 / contour.nodes as f64;
    let mut total = 0.0;
    for (lambda, ds) in contour.nodes_lambda() {
        if lambda.im == 0.0 && lambda.re >= 0.0 {
            return Err(Error::ContourPlacement(format!(
                "contour node λ = {lambda} lies on the spectrum"
            )));
        }
        let g = log_det_derivative(split, lambda, contour.method)?;
        total += ((-lambda).exp() * g * ds).im;
    }
    Ok(-PI.sqrt() * h / PI * total)
}

/// `Ψ₁` with its node-doubling self-convergence delta.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Psi1Value {
    pub value: f64,
    pub doubling_delta: f64,
}

pub fn psi1_checked(split: &BoundarySplit, contour: &ContourSpec) -> Result<Psi1Value> {
    let value = psi1(split, contour)?;
    let fine = psi1(split, &contour.doubled())?;
    Ok(Psi1Value {
        value,
        doubling_delta: (fine - value).abs(),
    })
}

/// `−(√π/2) tr e^{−C²}`, the value of `Ψ₁` when `B = 0`.
pub fn psi1_closed_form(split: &BoundarySplit) -> Result<f64> {
    if !split.b_is_zero(1e-12) {
        return Err(Error::Validation("closed-form Ψ₁ requires B = 0".into()));
    }
    let ev = hermitian_eigenvalues(&split.c2())?;
    Ok(-0.5 * PI.sqrt() * ev.iter().map(|v| (-v).exp()).sum::<f64>())
}

/// A weighted boundary point: `weight` is the quadrature weight of `∂M`.
#[derive(Debug, Clone)]
pub struct BoundaryPoint {
    pub frame: BoundaryFrame,
    pub weight: f64,
}

#[derive(Debug, Clone, Default)]
pub struct BoundaryMesh {
    pub points: Vec<BoundaryPoint>,
}

/// `A₁` with per-point densities and the contour doubling delta.
#[derive(Debug, Clone, Serialize)]
pub struct A1Value {
    pub value: f64,
    /// `∫ dξ̂/π^{(n−1)/2} Ψ₁` at each mesh point.
    pub densities: Vec<f64>,
    pub doubling_delta: f64,
}

/// ξ̂ nodes with weights for one mesh point, keeping one member of each
/// `±ξ̂` pair with doubled weight.
fn tangential_nodes(sym: &DiracSymbol, frame: &BoundaryFrame, order: usize) -> Result<Vec<(Vec<f64>, f64)>> {
    if sym.n() == 1 {
        return Ok(vec![(Vec::new(), 1.0)]);
    }
    let mut g = sym.tangential_metric(frame)?;
    balance_metric(&mut g, |dir| {
        hermitian_eigenvalues(&sym.boundary_split(frame, dir)?.c2())
    })?;
    let quad = XiQuadrature::new(order, &g).map_err(|e| match e {
        Error::Ellipticity { min_eigenvalue, .. } => Error::BoundaryEllipticity(format!(
            "tangential metric is not positive definite (min eigenvalue {min_eigenvalue:.3e})"
        )),
        other => other,
    })?;
    let mut out = Vec::new();
    for (xi, &w) in quad.nodes().iter().zip(quad.weights()) {
        match xi.iter().find(|v| **v != 0.0) {
            None => out.push((xi.clone(), w)),
            Some(v) if *v > 0.0 => out.push((xi.clone(), 2.0 * w)),
            Some(_) => {}
        }
    }
    Ok(out)
}

/// `A₁ = Σ_points weight · ∫ dξ̂/π^{(n−1)/2} Ψ₁(ξ̂)` with whitened
/// Gauss–Hermite in `ξ̂`. Tasks are evaluated in parallel and summed in a
/// fixed order.
pub fn compute_a1(sym: &DiracSymbol, mesh: &BoundaryMesh, xi_order: usize, contour: &ContourSpec) -> Result<A1Value> {
    contour.validate()?;
    let witness = |p: &BoundaryPoint, e: Error| match e {
        Error::Ellipticity { .. }
        | Error::NearSpectrum(_)
        | Error::BoundaryEllipticity(_)
        | Error::DegeneratePencil { .. } => {
            Error::BoundaryEllipticity(format!("at boundary point {:?}: {e}", p.frame.point))
        }
        other => other,
    };
    let mut tasks = Vec::new();
    for (ip, p) in mesh.points.iter().enumerate() {
        let nodes = tangential_nodes(sym, &p.frame, xi_order).map_err(|e| witness(p, e))?;
        for (xi, w) in nodes {
            tasks.push((ip, xi, w));
        }
    }
    let doubled = contour.doubled();
    let values: Vec<Result<(f64, f64)>> = tasks
        .par_iter()
        .map(|(ip, xi, _)| {
            let p = &mesh.points[*ip];
            let split = sym.boundary_split(&p.frame, xi).map_err(|e| witness(p, e))?;
            let coarse = psi1(&split, contour).map_err(|e| witness(p, e))?;
            let fine = psi1(&split, &doubled).map_err(|e| witness(p, e))?;
            Ok((coarse, fine))
        })
        .collect();
    let mut densities = vec![0.0; mesh.points.len()];
    let mut fine_densities = vec![0.0; mesh.points.len()];
    for ((ip, _, w), v) in tasks.iter().zip(values) {
        let (coarse, fine) = v?;
        densities[*ip] += w * coarse;
        fine_densities[*ip] += w * fine;
    }
    let mut value = 0.0;
    let mut fine_value = 0.0;
    for (p, (d, f)) in mesh.points.iter().zip(densities.iter().zip(&fine_densities)) {
        value += p.weight * d;
        fine_value += p.weight * f;
    }
    Ok(A1Value {
        value,
        densities,
        doubling_delta: (fine_value - value).abs(),
    })
}
