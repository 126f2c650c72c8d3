//! Operator data `(Γ^μ, ρ, B_μ)` on a coordinate chart.
//!
//! From the Dirac matrices `Γ^μ(x)` this module builds the noncommutative
//! metric `a^{μν} = ½(Γ^μΓ^ν + Γ^νΓ^μ)`, the leading symbol
//! `H(x,ξ) = Γ(ξ)²`, checks ellipticity by sampling, splits the symbol at a
//! boundary into `A = Γ(dr)`, `C = Γ(dx̂ʲ)ξ̂_j`, `B = AC + CA`, and supplies
//! coefficient jets (values plus first and second derivatives).

use serde::Serialize;

use crate::algebra::{c, hermitian_asymmetry, hermitian_eigenvalues, identity, inverse, max_abs, CMatrix, C64};
use crate::error::{Error, Result};
use crate::field::MatrixField;

/// Tolerance for the self-adjointness checks on the coefficient fields.
pub const FIELD_HERMITIAN_TOL: f64 = 1e-10;

/// Axis-aligned box in chart coordinates; infinite bounds are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DomainBox {
    pub fn unbounded(n: usize) -> Self {
        Self {
            lo: vec![f64::NEG_INFINITY; n],
            hi: vec![f64::INFINITY; n],
        }
    }

    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return Err(Error::Config("domain box needs lo < hi in every coordinate".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| v >= l && v <= h)
    }

    /// True when the whole cube `x ± margin` lies inside the box.
    pub fn contains_with_margin(&self, x: &[f64], margin: f64) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| v - margin >= *l && v + margin <= *h)
    }
}

/// The operator's defining data on one chart.
#[derive(Debug, Clone)]
pub struct DiracSymbol {
    n: usize,
    dim: usize,
    gamma: Vec<MatrixField>,
    rho: MatrixField,
    conn: Vec<MatrixField>,
    potential: Option<MatrixField>,
    domain: DomainBox,
}

impl DiracSymbol {
    pub fn new(gamma: Vec<MatrixField>, rho: MatrixField, conn: Vec<MatrixField>, domain: DomainBox) -> Result<Self> {
        let n = gamma.len();
        if n == 0 {
            return Err(Error::Config("symbol needs at least one Dirac matrix".into()));
        }
        let dim = gamma[0].dim_fiber();
        if dim == 0 {
            return Err(Error::Config("fiber dimension must be positive".into()));
        }
        if conn.len() != n {
            return Err(Error::Config(format!(
                "expected {n} connection components, got {}",
                conn.len()
            )));
        }
        if domain.dim() != n {
            return Err(Error::Config(format!(
                "domain box has dimension {} != {n}",
                domain.dim()
            )));
        }
        let fields = gamma
            .iter()
            .map(|f| ("gamma", f))
            .chain(conn.iter().map(|f| ("connection", f)));
        for (what, f) in fields.chain(std::iter::once(("rho", &rho))) {
            if f.dim_manifold() != n || f.dim_fiber() != dim {
                return Err(Error::Config(format!(
                    "{what} field has shape (n={}, N={}), expected (n={n}, N={dim})",
                    f.dim_manifold(),
                    f.dim_fiber()
                )));
            }
        }
        Ok(Self {
            n,
            dim,
            gamma,
            rho,
            conn,
            potential: None,
            domain,
        })
    }

    /// Constant Dirac matrices with `ρ = 𝕀`, `B = 0` on all of `ℝⁿ`.
    pub fn constant(gammas: Vec<CMatrix>) -> Result<Self> {
        let n = gammas.len();
        let dim = gammas.first().map_or(0, |g| g.nrows());
        let gamma = gammas.into_iter().map(|g| MatrixField::constant(n, g)).collect();
        let conn = (0..n).map(|_| MatrixField::zero(n, dim)).collect();
        Self::new(
            gamma,
            MatrixField::constant(n, identity(dim)),
            conn,
            DomainBox::unbounded(n),
        )
    }

    /// Adds a Hermitian zeroth-order potential, so the operator becomes
    /// `D̄D + V`.
    pub fn with_potential(mut self, v: MatrixField) -> Result<Self> {
        if v.dim_manifold() != self.n || v.dim_fiber() != self.dim {
            return Err(Error::Config("potential field has the wrong shape".into()));
        }
        self.potential = Some(v);
        Ok(self)
    }

    pub fn with_domain(mut self, domain: DomainBox) -> Result<Self> {
        if domain.dim() != self.n {
            return Err(Error::Config("domain box has the wrong dimension".into()));
        }
        self.domain = domain;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn gamma_fields(&self) -> &[MatrixField] {
        &self.gamma
    }

    pub fn rho_field(&self) -> &MatrixField {
        &self.rho
    }

    pub fn connection_fields(&self) -> &[MatrixField] {
        &self.conn
    }

    pub fn potential_field(&self) -> Option<&MatrixField> {
        self.potential.as_ref()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::Domain {
                point: x.to_vec(),
                detail: format!("expected {} coordinates", self.n),
            });
        }
        if !self.domain.contains(x) {
            return Err(Error::Domain {
                point: x.to_vec(),
                detail: "outside the domain box".into(),
            });
        }
        Ok(())
    }

    fn check_covector(&self, xi: &[f64]) -> Result<()> {
        if xi.len() != self.n {
            return Err(Error::Validation(format!(
                "covector has length {} != {}",
                xi.len(),
                self.n
            )));
        }
        Ok(())
    }

    /// Verifies the structural assumptions at `x`: `Γ^μ`, `ρ` self-adjoint,
    /// `ρ` non-degenerate, `B_μ` anti-self-adjoint, `V` self-adjoint.
    pub fn validate_at(&self, x: &[f64]) -> Result<()> {
        self.check_point(x)?;
        let tol = |m: &CMatrix| FIELD_HERMITIAN_TOL * max_abs(m).max(1.0);
        for (mu, g) in self.gamma.iter().enumerate() {
            let m = g.eval(x);
            let asym = hermitian_asymmetry(&m);
            if asym > tol(&m) {
                return Err(Error::Validation(format!(
                    "Gamma^{mu} is not self-adjoint (asymmetry {asym:.3e})"
                )));
            }
        }
        let rho = self.rho.eval(x);
        let asym = hermitian_asymmetry(&rho);
        if asym > tol(&rho) {
            return Err(Error::Validation(format!(
                "rho is not self-adjoint (asymmetry {asym:.3e})"
            )));
        }
        let det = rho.determinant().norm();
        if det <= 1e-10 {
            return Err(Error::Validation(format!("rho is degenerate (|det| = {det:.3e})")));
        }
        for (mu, b) in self.conn.iter().enumerate() {
            let m = b.eval(x);
            let anti = max_abs(&(&m + m.adjoint()));
            if anti > tol(&m) {
                return Err(Error::Validation(format!(
                    "B_{mu} is not anti-self-adjoint (asymmetry {anti:.3e})"
                )));
            }
        }
        if let Some(v) = &self.potential {
            let m = v.eval(x);
            let asym = hermitian_asymmetry(&m);
            if asym > tol(&m) {
                return Err(Error::Validation(format!(
                    "potential is not self-adjoint (asymmetry {asym:.3e})"
                )));
            }
        }
        Ok(())
    }

    pub fn gammas_at(&self, x: &[f64]) -> Result<Vec<CMatrix>> {
        self.check_point(x)?;
        Ok(self.gamma.iter().map(|g| g.eval(x)).collect())
    }

    /// `Γ(ξ) = Σ_μ Γ^μ ξ_μ`.
    pub fn gamma_of(&self, x: &[f64], xi: &[f64]) -> Result<CMatrix> {
        self.check_covector(xi)?;
        let gammas = self.gammas_at(x)?;
        Ok(contract(&gammas, xi))
    }

    /// `a^{μν} = ½(Γ^μΓ^ν + Γ^νΓ^μ)`.
    pub fn build_metric(&self, x: &[f64]) -> Result<Vec<Vec<CMatrix>>> {
        let g = self.gammas_at(x)?;
        Ok(metric_from_gammas(&g))
    }

    /// `H(x,ξ) = Γ(ξ)²`.
    pub fn build_h(&self, x: &[f64], xi: &[f64]) -> Result<CMatrix> {
        let g = self.gamma_of(x, xi)?;
        Ok(&g * &g)
    }

    /// Scalar proxy metric `g₀^{μν} = (1/N) tr a^{μν}(x)` (real symmetric).
    pub fn scalar_metric(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let a = self.build_metric(x)?;
        let nf = self.dim as f64;
        Ok(a.iter()
            .map(|row| row.iter().map(|m| m.trace().re / nf).collect())
            .collect())
    }

    /// Boundary split at a boundary point with the given frame and
    /// tangential covector `ξ̂`.
    pub fn boundary_split(&self, frame: &BoundaryFrame, xi_hat: &[f64]) -> Result<BoundarySplit> {
        if frame.dr.len() != self.n || frame.dxhat.iter().any(|v| v.len() != self.n) {
            return Err(Error::Config("boundary frame covectors must have length n".into()));
        }
        if frame.dxhat.len() + 1 != self.n {
            return Err(Error::Config(format!(
                "boundary frame needs {} tangential covectors, got {}",
                self.n - 1,
                frame.dxhat.len()
            )));
        }
        if xi_hat.len() + 1 != self.n {
            return Err(Error::Validation(format!(
                "tangential covector must have length {}",
                self.n - 1
            )));
        }
        let g = self.gammas_at(&frame.point)?;
        let a = contract(&g, &frame.dr);
        let mut cm = CMatrix::zeros(self.dim, self.dim);
        for (j, dx) in frame.dxhat.iter().enumerate() {
            cm += contract(&g, dx) * c(xi_hat[j], 0.0);
        }
        let mut split = BoundarySplit::from_matrices(a, cm)?;
        split.point = frame.point.clone();
        split.xi_hat = xi_hat.to_vec();
        Ok(split)
    }

    /// Tangential scalar metric `ĝ^{ij} = (1/N) tr a(dx̂ⁱ, dx̂ʲ)` of a frame.
    pub fn tangential_metric(&self, frame: &BoundaryFrame) -> Result<Vec<Vec<f64>>> {
        let a = self.build_metric(&frame.point)?;
        let nf = self.dim as f64;
        let pair = |u: &[f64], v: &[f64]| {
            let mut s = 0.0;
            for mu in 0..self.n {
                for nu in 0..self.n {
                    s += u[mu] * v[nu] * a[mu][nu].trace().re;
                }
            }
            s / nf
        };
        Ok(frame
            .dxhat
            .iter()
            .map(|u| frame.dxhat.iter().map(|v| pair(u, v)).collect())
            .collect())
    }

    /// Jets from exact derivatives when every field provides them,
    /// otherwise from central differences with step `1e-4·(1+|x|)`.
    pub fn jets(&self, x: &[f64]) -> Result<JetData> {
        if let Some(j) = self.analytic_jets(x)? {
            return Ok(j);
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.jets_at(x, 1e-4 * (1.0 + norm))
    }

    /// Jets from exact field derivatives, or `None` if a field lacks them.
    pub fn analytic_jets(&self, x: &[f64]) -> Result<Option<JetData>> {
        self.check_point(x)?;
        let exact = |f: &MatrixField| -> Option<FieldJet> {
            Some(FieldJet {
                v: f.eval(x),
                d1: f.gradient(x)?,
                d2: f.hessian(x)?,
            })
        };
        let gamma: Option<Vec<FieldJet>> = self.gamma.iter().map(exact).collect();
        let conn: Option<Vec<FieldJet>> = self.conn.iter().map(exact).collect();
        let rho = exact(&self.rho);
        let potential = match &self.potential {
            Some(v) => match exact(v) {
                Some(j) => Some(Some(j)),
                None => None,
            },
            None => Some(None),
        };
        Ok(match (gamma, conn, rho, potential) {
            (Some(gamma), Some(conn), Some(rho), Some(potential)) => Some(JetData {
                x: x.to_vec(),
                gamma,
                rho,
                conn,
                potential,
                analytic: true,
            }),
            _ => None,
        })
    }

    /// Central-difference jets with step `h` (second order in `h`).
    pub fn jets_at(&self, x: &[f64], h: f64) -> Result<JetData> {
        self.check_point(x)?;
        if !(h > 0.0) {
            return Err(Error::Config("finite-difference step must be positive".into()));
        }
        if !self.domain.contains_with_margin(x, 2.0 * h) {
            return Err(Error::Domain {
                point: x.to_vec(),
                detail: format!("finite-difference stencil needs a margin of {:.3e}", 2.0 * h),
            });
        }
        let fd = |f: &MatrixField| finite_difference_jet(f, x, h);
        Ok(JetData {
            x: x.to_vec(),
            gamma: self.gamma.iter().map(fd).collect(),
            rho: fd(&self.rho),
            conn: self.conn.iter().map(fd).collect(),
            potential: self.potential.as_ref().map(fd),
            analytic: false,
        })
    }

    /// Samples `λ_min(H(x,ξ))` over a domain grid and the unit sphere of
    /// covectors, then refines around the minimizer by pattern search.
    pub fn ellipticity_check(&self, spec: &SampleSpec) -> Result<EllipticityVerdict> {
        if spec.directions == 0 || spec.grid_per_axis == 0 {
            return Err(Error::Config("ellipticity sample grid is empty".into()));
        }
        let dirs = sphere_directions(self.n, spec.directions);
        let points = self.domain_grid(spec.grid_per_axis);
        let mut best = (f64::INFINITY, points[0].clone(), dirs[0].clone());
        for x in &points {
            for xi in &dirs {
                let v = self.min_eigenvalue(x, xi)?;
                if v < best.0 {
                    best = (v, x.clone(), xi.clone());
                }
            }
        }
        if spec.refine {
            best = self.refine_minimum(best, &dirs)?;
        }
        Ok(EllipticityVerdict {
            elliptic: best.0 > spec.threshold,
            min_eigenvalue: best.0,
            witness_x: best.1,
            witness_xi: best.2,
        })
    }

    fn min_eigenvalue(&self, x: &[f64], xi: &[f64]) -> Result<f64> {
        let h = self.build_h(x, xi)?;
        Ok(hermitian_eigenvalues(&h)?[0])
    }

    fn domain_grid(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = (0..self.n)
            .map(|i| {
                let (lo, hi) = (self.domain.lo[i], self.domain.hi[i]);
                if !lo.is_finite() || !hi.is_finite() {
                    vec![0f64.clamp(lo, hi)]
                } else if per_axis == 1 {
                    vec![0.5 * (lo + hi)]
                } else {
                    (0..per_axis)
                        .map(|k| lo + (hi - lo) * k as f64 / (per_axis - 1) as f64)
                        .collect()
                }
            })
            .collect();
        let mut pts = vec![Vec::new()];
        for axis in &axes {
            pts = pts
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        pts
    }

    fn refine_minimum(&self, start: (f64, Vec<f64>, Vec<f64>), dirs: &[Vec<f64>]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let (mut best, mut x, mut xi) = start;
        // Typical spacing between sample directions sets the first step.
        let mut step = if dirs.len() > 1 {
            (2.0 * std::f64::consts::PI / dirs.len() as f64).powf(1.0 / (self.n.max(2) - 1) as f64)
        } else {
            0.0
        };
        let box_step: Vec<f64> = (0..self.n)
            .map(|i| {
                let w = self.domain.hi[i] - self.domain.lo[i];
                if w.is_finite() {
                    w / 8.0
                } else {
                    0.0
                }
            })
            .collect();
        let mut xstep = 1.0;
        while step > 1e-10 && self.n > 1 {
            let mut improved = false;
            for i in 0..self.n {
                for sgn in [-1.0, 1.0] {
                    let mut cand = xi.clone();
                    cand[i] += sgn * step;
                    let norm = cand.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        continue;
                    }
                    cand.iter_mut().for_each(|v| *v /= norm);
                    let v = self.min_eigenvalue(&x, &cand)?;
                    if v < best {
                        best = v;
                        xi = cand;
                        improved = true;
                    }
                }
                if box_step[i] > 0.0 {
                    for sgn in [-1.0, 1.0] {
                        let mut cand = x.clone();
                        cand[i] = (cand[i] + sgn * xstep * box_step[i]).clamp(self.domain.lo[i], self.domain.hi[i]);
                        let v = self.min_eigenvalue(&cand, &xi)?;
                        if v < best {
                            best = v;
                            x = cand;
                            improved = true;
                        }
                    }
                }
            }
            if !improved {
                step *= 0.5;
                xstep *= 0.5;
            }
        }
        Ok((best, x, xi))
    }
}

/// `Σ_μ M_μ v_μ`.
pub fn contract(ms: &[CMatrix], v: &[f64]) -> CMatrix {
    let dim = ms[0].nrows();
    let mut out = CMatrix::zeros(dim, dim);
    for (m, &w) in ms.iter().zip(v) {
        if w != 0.0 {
            out += m * c(w, 0.0);
        }
    }
    out
}

pub fn metric_from_gammas(g: &[CMatrix]) -> Vec<Vec<CMatrix>> {
    let n = g.len();
    let mut a = vec![vec![CMatrix::zeros(0, 0); n]; n];
    for mu in 0..n {
        for nu in mu..n {
            let m = (&g[mu] * &g[nu] + &g[nu] * &g[mu]) * c(0.5, 0.0);
            a[nu][mu] = m.clone();
            a[mu][nu] = m;
        }
    }
    a
}

fn finite_difference_jet(f: &MatrixField, x: &[f64], h: f64) -> FieldJet {
    let n = x.len();
    let at = |shifts: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(i, s) in shifts {
            y[i] += s;
        }
        f.eval(&y)
    };
    let v = f.eval(x);
    let inv2h = c(1.0 / (2.0 * h), 0.0);
    let d1: Vec<CMatrix> = (0..n).map(|i| (at(&[(i, h)]) - at(&[(i, -h)])) * inv2h).collect();
    let mut d2 = vec![vec![CMatrix::zeros(v.nrows(), v.ncols()); n]; n];
    for i in 0..n {
        d2[i][i] = (at(&[(i, h)]) - &v * c(2.0, 0.0) + at(&[(i, -h)])) * c(1.0 / (h * h), 0.0);
        for j in (i + 1)..n {
            let m = (at(&[(i, h), (j, h)]) - at(&[(i, h), (j, -h)]) - at(&[(i, -h), (j, h)]) + at(&[(i, -h), (j, -h)]))
                * c(1.0 / (4.0 * h * h), 0.0);
            d2[j][i] = m.clone();
            d2[i][j] = m;
        }
    }
    FieldJet { v, d1, d2 }
}

/// Quasi-uniform unit covectors: `±1` for `n = 1`, equally spaced angles
/// for `n = 2`, a spherical Fibonacci lattice for `n = 3`, and normalized
/// Halton points otherwise.
pub fn sphere_directions(n: usize, count: usize) -> Vec<Vec<f64>> {
    match n {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|k| {
                    let z = 1.0 - (2.0 * k as f64 + 1.0) / count as f64;
                    let r = (1.0 - z * z).sqrt();
                    let phi = golden * k as f64;
                    vec![r * phi.cos(), r * phi.sin(), z]
                })
                .collect()
        }
        _ => {
            const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
            let mut out = Vec::with_capacity(count);
            let mut k = 1u64;
            while out.len() < count {
                let p: Vec<f64> = (0..n)
                    .map(|d| 2.0 * halton(k, PRIMES[d % PRIMES.len()]) - 1.0)
                    .collect();
                let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 1e-3 && norm <= 1.0 {
                    out.push(p.iter().map(|v| v / norm).collect());
                }
                k += 1;
            }
            out
        }
    }
}

fn halton(mut k: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while k > 0 {
        f /= base as f64;
        r += f * (k % base) as f64;
        k /= base;
    }
    r
}

/// Sampling controls for [`DiracSymbol::ellipticity_check`].
#[derive(Debug, Clone)]
pub struct SampleSpec {
    pub directions: usize,
    pub grid_per_axis: usize,
    pub threshold: f64,
    pub refine: bool,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            directions: 512,
            grid_per_axis: 8,
            threshold: 1e-8,
            refine: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EllipticityVerdict {
    pub elliptic: bool,
    pub min_eigenvalue: f64,
    pub witness_x: Vec<f64>,
    pub witness_xi: Vec<f64>,
}

/// Boundary point in ambient coordinates with the covectors `dr` (inward
/// normal coordinate) and `dx̂ʲ` (tangential coordinates).
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFrame {
    pub point: Vec<f64>,
    pub dr: Vec<f64>,
    pub dxhat: Vec<Vec<f64>>,
}

/// Frozen boundary matrices at a boundary point and tangential covector.
#[derive(Debug, Clone)]
pub struct BoundarySplit {
    pub a: CMatrix,
    pub b: CMatrix,
    pub c: CMatrix,
    pub point: Vec<f64>,
    pub xi_hat: Vec<f64>,
}

impl BoundarySplit {
    /// Builds the split from `A` and `C`; `B = AC + CA`.
    pub fn from_matrices(a: CMatrix, cm: CMatrix) -> Result<Self> {
        if !a.is_square() || a.shape() != cm.shape() {
            return Err(Error::Validation(
                "split matrices A and C must be square of equal size".into(),
            ));
        }
        for (what, m) in [("A", &a), ("C", &cm)] {
            let asym = hermitian_asymmetry(m);
            if asym > FIELD_HERMITIAN_TOL * max_abs(m).max(1.0) {
                return Err(Error::Validation(format!(
                    "split matrix {what} is not self-adjoint ({asym:.3e})"
                )));
            }
        }
        if inverse(&a).is_err() || a.determinant().norm() <= 1e-12 * max_abs(&a).powi(a.nrows() as i32) {
            return Err(Error::Ellipticity {
                min_eigenvalue: 0.0,
                x: Vec::new(),
                xi: Vec::new(),
            });
        }
        let b = &a * &cm + &cm * &a;
        Ok(Self {
            a,
            b,
            c: cm,
            point: Vec::new(),
            xi_hat: Vec::new(),
        })
    }

    /// Builds a split from explicit `A`, `B`, `C`, describing the normal
    /// operator `−A²∂² − iB∂ + C²`. Used for model problems whose `B`
    /// does not come from a Dirac factorization.
    pub fn from_parts(a: CMatrix, b: CMatrix, cm: CMatrix) -> Result<Self> {
        let mut split = Self::from_matrices(a, cm)?;
        if b.shape() != split.a.shape() {
            return Err(Error::Validation("split matrix B has the wrong shape".into()));
        }
        let asym = hermitian_asymmetry(&b);
        if asym > FIELD_HERMITIAN_TOL * max_abs(&b).max(1.0) {
            return Err(Error::Validation(format!(
                "split matrix B is not self-adjoint ({asym:.3e})"
            )));
        }
        split.b = b;
        Ok(split)
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a2(&self) -> CMatrix {
        &self.a * &self.a
    }

    pub fn c2(&self) -> CMatrix {
        &self.c * &self.c
    }

    /// `A²ω² + Bω + C²`, which equals `(Aω + C)²` for a Dirac split.
    pub fn symbol_at(&self, omega: C64) -> CMatrix {
        self.a2() * (omega * omega) + &self.b * omega + self.c2()
    }

    /// Same split with `ξ̂ → −ξ̂`.
    pub fn reflected_xi(&self) -> Self {
        Self {
            a: self.a.clone(),
            b: -&self.b,
            c: -&self.c,
            point: self.point.clone(),
            xi_hat: self.xi_hat.iter().map(|v| -v).collect(),
        }
    }

    /// Same split with every coefficient scaled by `s` (used for the
    /// homogeneity relations): `C → sC`, `B → sB`.
    pub fn scaled_xi(&self, s: f64) -> Self {
        Self {
            a: self.a.clone(),
            b: &self.b * c(s, 0.0),
            c: &self.c * c(s, 0.0),
            point: self.point.clone(),
            xi_hat: self.xi_hat.iter().map(|v| v * s).collect(),
        }
    }

    pub fn b_is_zero(&self, tol: f64) -> bool {
        max_abs(&self.b) <= tol * max_abs(&self.a).max(1.0) * max_abs(&self.c).max(1.0)
    }
}

/// Value, gradient and Hessian of one coefficient field at a point.
#[derive(Debug, Clone)]
pub struct FieldJet {
    pub v: CMatrix,
    pub d1: Vec<CMatrix>,
    pub d2: Vec<Vec<CMatrix>>,
}

impl FieldJet {
    pub fn constant(v: CMatrix, n: usize) -> Self {
        let z = CMatrix::zeros(v.nrows(), v.ncols());
        Self {
            d1: vec![z.clone(); n],
            d2: vec![vec![z; n]; n],
            v,
        }
    }

    /// Largest asymmetry `|∂_i∂_j − ∂_j∂_i|` of the second derivatives.
    pub fn hessian_asymmetry(&self) -> f64 {
        let n = self.d1.len();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max(max_abs(&(&self.d2[i][j] - &self.d2[j][i])));
            }
        }
        worst
    }
}

/// Jets of every coefficient field at one point.
#[derive(Debug, Clone)]
pub struct JetData {
    pub x: Vec<f64>,
    pub gamma: Vec<FieldJet>,
    pub rho: FieldJet,
    pub conn: Vec<FieldJet>,
    pub potential: Option<FieldJet>,
    pub analytic: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{diag_real, from_real_rows, pauli, zeros};
    use crate::field::{Term, Wave, WaveKind};

    fn clifford() -> DiracSymbol {
        let [sx, sy, _] = pauli();
        DiracSymbol::constant(vec![sx, sy]).unwrap()
    }

    fn close(a: &CMatrix, b: &CMatrix) -> f64 {
        max_abs(&(a - b))
    }

    #[test]
    fn clifford_metric_is_identity() {
        let a = clifford().build_metric(&[0.0, 0.0]).unwrap();
        assert!(close(&a[0][0], &identity(2)) == 0.0);
        assert!(close(&a[1][1], &identity(2)) == 0.0);
        assert!(max_abs(&a[0][1]) == 0.0);
    }

    #[test]
    fn mixed_metric_entries() {
        let sym = DiracSymbol::constant(vec![pauli()[0].clone(), diag_real(&[1.0, 2.0])]).unwrap();
        let a = sym.build_metric(&[0.0, 0.0]).unwrap();
        assert!(close(&a[0][1], &from_real_rows(&[&[0.0, 1.5], &[1.5, 0.0]])) < 1e-15);
        assert!(close(&a[1][1], &diag_real(&[1.0, 4.0])) < 1e-15);
        assert!(close(&a[0][1], &a[1][0]) == 0.0);
        let h = sym.build_h(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!(close(&h, &from_real_rows(&[&[2.0, 3.0], &[3.0, 5.0]])) < 1e-15);
    }

    #[test]
    fn zero_covector_gives_zero_h() {
        let h = clifford().build_h(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(max_abs(&h), 0.0);
    }

    #[test]
    fn clifford_is_elliptic_with_unit_minimum() {
        let v = clifford().ellipticity_check(&SampleSpec::default()).unwrap();
        assert!(v.elliptic);
        assert!((v.min_eigenvalue - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_sigma_z_pair_is_not_elliptic() {
        let sz = pauli()[2].clone();
        let sym = DiracSymbol::constant(vec![sz.clone(), sz]).unwrap();
        let v = sym.ellipticity_check(&SampleSpec::default()).unwrap();
        assert!(!v.elliptic);
        assert!(v.min_eigenvalue.abs() < 1e-12);
        let xi = &v.witness_xi;
        assert!((xi[0] + xi[1]).abs() < 1e-6, "witness {xi:?}");
    }

    #[test]
    fn sigma_x_diag_pair_degenerates_off_the_axes() {
        // det Γ(ξ) = 2ξ₂² − ξ₁² vanishes on ξ₁ = ±√2 ξ₂.
        let sym = DiracSymbol::constant(vec![pauli()[0].clone(), diag_real(&[1.0, 2.0])]).unwrap();
        let v = sym.ellipticity_check(&SampleSpec::default()).unwrap();
        assert!(!v.elliptic);
        let xi = &v.witness_xi;
        assert!((xi[0].abs() - 2f64.sqrt() * xi[1].abs()).abs() < 1e-6, "witness {xi:?}");
    }

    #[test]
    fn empty_sample_grid_is_rejected() {
        let spec = SampleSpec {
            directions: 0,
            ..SampleSpec::default()
        };
        assert!(matches!(clifford().ellipticity_check(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn clifford_split_has_zero_b() {
        let frame = BoundaryFrame {
            point: vec![0.0, 0.0],
            dr: vec![1.0, 0.0],
            dxhat: vec![vec![0.0, 1.0]],
        };
        let s = clifford().boundary_split(&frame, &[1.0]).unwrap();
        assert!(close(&s.a, &pauli()[0]) == 0.0);
        assert!(close(&s.c, &pauli()[1]) == 0.0);
        assert_eq!(max_abs(&s.b), 0.0);
    }

    #[test]
    fn non_commuting_split_reproduces_symbol() {
        let sym = DiracSymbol::constant(vec![pauli()[0].clone(), diag_real(&[1.0, 2.0])]).unwrap();
        let frame = BoundaryFrame {
            point: vec![0.0, 0.0],
            dr: vec![1.0, 0.0],
            dxhat: vec![vec![0.0, 1.0]],
        };
        let s = sym.boundary_split(&frame, &[1.0]).unwrap();
        assert!(close(&s.b, &from_real_rows(&[&[0.0, 3.0], &[3.0, 0.0]])) < 1e-15);
        for w in [-2.0, -0.3, 0.0, 0.7, 1.9] {
            let omega = c(w, 0.0);
            let pencil = s.a2() * omega * omega + &s.b * omega + s.c2();
            let h = sym.build_h(&[0.0, 0.0], &[w, 1.0]).unwrap();
            assert!(close(&pencil, &h) < 1e-12);
            assert!(close(&s.symbol_at(omega), &h) < 1e-12);
        }
    }

    #[test]
    fn singular_normal_matrix_is_rejected() {
        let sz = pauli()[2].clone();
        let sym = DiracSymbol::constant(vec![zeros(2), sz]).unwrap();
        let frame = BoundaryFrame {
            point: vec![0.0, 0.0],
            dr: vec![1.0, 0.0],
            dxhat: vec![vec![0.0, 1.0]],
        };
        assert!(matches!(
            sym.boundary_split(&frame, &[1.0]),
            Err(Error::Ellipticity { .. })
        ));
    }

    #[test]
    fn jets_of_linear_field_are_exact() {
        let sx = pauli()[0].clone();
        let g = MatrixField::series(
            1,
            2,
            vec![
                Term {
                    coeff: sx.clone(),
                    exponent: vec![0],
                    wave: None,
                },
                Term {
                    coeff: sx.clone(),
                    exponent: vec![1],
                    wave: None,
                },
            ],
        )
        .unwrap();
        let sym = DiracSymbol::new(
            vec![g],
            MatrixField::constant(1, identity(2)),
            vec![MatrixField::zero(1, 2)],
            DomainBox::new(vec![-1.0], vec![1.0]).unwrap(),
        )
        .unwrap();
        let fd = sym.jets_at(&[0.2], 1e-3).unwrap();
        assert!(close(&fd.gamma[0].d1[0], &sx) < 1e-10);
        let exact = sym.analytic_jets(&[0.2]).unwrap().unwrap();
        assert!(close(&exact.gamma[0].d1[0], &sx) == 0.0);
        assert!(max_abs(&exact.rho.d1[0]) == 0.0);
    }

    #[test]
    fn quadratic_rho_second_derivative() {
        let rho = MatrixField::series(
            2,
            1,
            vec![
                Term {
                    coeff: identity(1),
                    exponent: vec![0, 0],
                    wave: None,
                },
                Term {
                    coeff: identity(1) * c(0.3, 0.0),
                    exponent: vec![1, 1],
                    wave: None,
                },
                Term {
                    coeff: identity(1) * c(0.2, 0.0),
                    exponent: vec![2, 0],
                    wave: None,
                },
            ],
        )
        .unwrap();
        let sym = DiracSymbol::new(
            vec![
                MatrixField::constant(2, identity(1)),
                MatrixField::constant(2, identity(1)),
            ],
            rho,
            vec![MatrixField::zero(2, 1), MatrixField::zero(2, 1)],
            DomainBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(),
        )
        .unwrap();
        let x = [0.1, -0.4];
        let fd = sym.jets_at(&x, 1e-3).unwrap();
        let ex = sym.analytic_jets(&x).unwrap().unwrap();
        assert!((ex.rho.d2[0][0][(0, 0)].re - 0.4).abs() < 1e-15);
        assert!((ex.rho.d2[0][1][(0, 0)].re - 0.3).abs() < 1e-15);
        for i in 0..2 {
            for j in 0..2 {
                assert!(close(&fd.rho.d2[i][j], &ex.rho.d2[i][j]) < 1e-8);
            }
        }
        assert!(fd.rho.hessian_asymmetry() < 1e-12);
    }

    #[test]
    fn jet_margin_is_enforced() {
        let sym = DiracSymbol::constant(vec![identity(1)])
            .unwrap()
            .with_domain(DomainBox::new(vec![0.0], vec![1.0]).unwrap())
            .unwrap();
        assert!(matches!(sym.jets_at(&[1e-4], 1e-3), Err(Error::Domain { .. })));
        assert!(matches!(sym.build_h(&[2.0], &[1.0]), Err(Error::Domain { .. })));
    }

    #[test]
    fn structural_checks_catch_bad_fields() {
        let bad_conn = MatrixField::constant(1, identity(1));
        let sym = DiracSymbol::new(
            vec![MatrixField::constant(1, identity(1))],
            MatrixField::constant(1, identity(1)),
            vec![bad_conn],
            DomainBox::unbounded(1),
        )
        .unwrap();
        assert!(sym.validate_at(&[0.0]).is_err());
        let wave = MatrixField::series(
            1,
            1,
            vec![Term {
                coeff: identity(1) * c(0.0, 1.0),
                exponent: vec![0],
                wave: Some(Wave {
                    kind: WaveKind::Sin,
                    k: vec![1.0],
                }),
            }],
        )
        .unwrap();
        let ok = DiracSymbol::new(
            vec![MatrixField::constant(1, identity(1))],
            MatrixField::constant(1, identity(1)),
            vec![wave],
            DomainBox::unbounded(1),
        )
        .unwrap();
        assert!(ok.validate_at(&[0.3]).is_ok());
    }
}
