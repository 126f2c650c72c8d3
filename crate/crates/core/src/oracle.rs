//! Brute-force discretization oracles on one-dimensional geometries.
//!
//! Operators are discretized on a staggered grid. Node values `f_j` live at
//! `x_j`, first-order images at midpoints `x_{j+½}`:
//!
//! ```text
//! (E g)_{j+½} = (g_{j+1} − g_j)/h + B(x_{j+½}) (g_{j+1} + g_j)/2
//! D  = i Γρ|_mid · E · ρ⁻¹|_nodes            (nodes → midpoints)
//! D̄  = D†                                    (midpoints → nodes)
//! Δ  = (E ρ⁻¹)† (ρ a ρ)|_mid (E ρ⁻¹)          (positive sign convention)
//! ```
//!
//! so `D̄D` and `DD̄` are exact matrix products and share their non-zero
//! spectrum to rounding. The circle is periodic; the interval carries
//! Dirichlet conditions at both ends (boundary nodes eliminated).

use std::f64::consts::PI;
use std::io::Write;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::algebra::{c, hermitian_eigenvalues, identity, inverse, max_abs, CMatrix};
use crate::error::{Error, Result};
use crate::symbol::{BoundarySplit, DiracSymbol};

/// Smallest accepted grid size.
pub const MIN_GRID: usize = 16;
/// Relative zero-mode threshold for index computations.
pub const ZERO_MODE_TOL: f64 = 1e-6;

/// One-dimensional oracle geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Geometry {
    /// Periodic `[0, L)`.
    Circle { length: f64 },
    /// `[0, L]` with Dirichlet conditions at both ends.
    Interval { length: f64 },
}

impl Geometry {
    pub fn length(&self) -> f64 {
        match *self {
            Geometry::Circle { length } | Geometry::Interval { length } => length,
        }
    }

    fn validate(&self) -> Result<()> {
        let l = self.length();
        if !(l > 0.0) || !l.is_finite() {
            return Err(Error::Config(format!("geometry length must be positive, got {l}")));
        }
        Ok(())
    }
}

/// Which operator to assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    /// `−Δ + V`.
    Laplacian,
    D,
    #[serde(rename = "dbar")]
    DBar,
    /// `D̄D + V`.
    #[serde(rename = "dbar-d")]
    DBarD,
    /// `DD̄`.
    #[serde(rename = "d-dbar")]
    DDBar,
}

impl OperatorKind {
    pub fn is_self_adjoint(&self) -> bool {
        !matches!(self, OperatorKind::D | OperatorKind::DBar)
    }
}

/// A dense discretization with lazily computed spectrum.
#[derive(Debug, Clone)]
pub struct DiscretizedOperator {
    pub geometry: Geometry,
    pub m: usize,
    pub kind: OperatorKind,
    /// Fibre dimension `N`.
    pub fiber: usize,
    pub matrix: CMatrix,
    /// Hermiticity defect before symmetrization (self-adjoint kinds).
    pub hermiticity_residual: f64,
    eigenvalues: OnceLock<Vec<f64>>,
}

impl DiscretizedOperator {
    fn new(geometry: Geometry, m: usize, kind: OperatorKind, fiber: usize, matrix: CMatrix) -> Self {
        let (matrix, residual) = if kind.is_self_adjoint() {
            let r = max_abs(&(&matrix - matrix.adjoint())) / max_abs(&matrix).max(f64::MIN_POSITIVE);
            ((&matrix + matrix.adjoint()) * c(0.5, 0.0), r)
        } else {
            (matrix, 0.0)
        };
        Self {
            geometry,
            m,
            kind,
            fiber,
            matrix,
            hermiticity_residual: residual,
            eigenvalues: OnceLock::new(),
        }
    }

    pub fn grid_step(&self) -> f64 {
        self.geometry.length() / self.m as f64
    }

    /// Ascending eigenvalues (self-adjoint kinds only).
    pub fn eigenvalues(&self) -> Result<&[f64]> {
        if !self.kind.is_self_adjoint() {
            return Err(Error::Unsupported(format!("{:?} is not self-adjoint", self.kind)));
        }
        if let Some(v) = self.eigenvalues.get() {
            return Ok(v);
        }
        let v = hermitian_eigenvalues(&self.matrix)?;
        Ok(self.eigenvalues.get_or_init(|| v))
    }
}

struct Grid {
    h: f64,
    /// Node coordinates of the unknowns.
    nodes: Vec<f64>,
    /// Midpoint coordinates.
    mids: Vec<f64>,
    periodic: bool,
}

impl Grid {
    fn new(geometry: Geometry, m: usize) -> Self {
        let l = geometry.length();
        let h = l / m as f64;
        match geometry {
            Geometry::Circle { .. } => Self {
                h,
                nodes: (0..m).map(|j| j as f64 * h).collect(),
                mids: (0..m).map(|j| (j as f64 + 0.5) * h).collect(),
                periodic: true,
            },
            Geometry::Interval { .. } => Self {
                h,
                nodes: (1..m).map(|j| j as f64 * h).collect(),
                mids: (0..m).map(|j| (j as f64 + 0.5) * h).collect(),
                periodic: false,
            },
        }
    }

    /// Unknown indices adjacent to midpoint `k` (left, right); `None` marks a
    /// Dirichlet boundary node.
    fn neighbours(&self, k: usize) -> (Option<usize>, Option<usize>) {
        if self.periodic {
            let m = self.nodes.len();
            (Some(k), Some((k + 1) % m))
        } else {
            let left = if k == 0 { None } else { Some(k - 1) };
            let right = if k + 1 == self.mids.len() { None } else { Some(k) };
            (left, right)
        }
    }
}

fn set_block(target: &mut CMatrix, row: usize, col: usize, block: &CMatrix) {
    let n = block.nrows();
    let mut view = target.view_mut((row * n, col * n), (n, n));
    view += block;
}

/// `E ρ⁻¹` from nodes to midpoints.
fn covariant_difference(sym: &DiracSymbol, grid: &Grid) -> Result<CMatrix> {
    let n = sym.dim();
    let mut e = CMatrix::zeros(grid.mids.len() * n, grid.nodes.len() * n);
    let rho_inv: Vec<CMatrix> = grid
        .nodes
        .iter()
        .map(|&x| inverse(&sym.rho_field().eval(&[x])))
        .collect::<Result<_>>()?;
    let id = identity(n);
    for (k, &xm) in grid.mids.iter().enumerate() {
        let b = sym.connection_fields()[0].eval(&[xm]);
        let (left, right) = grid.neighbours(k);
        let avg = &b * c(0.5, 0.0);
        if let Some(j) = left {
            set_block(&mut e, k, j, &((&id * c(-1.0 / grid.h, 0.0) + &avg) * &rho_inv[j]));
        }
        if let Some(j) = right {
            set_block(&mut e, k, j, &((&id * c(1.0 / grid.h, 0.0) + &avg) * &rho_inv[j]));
        }
    }
    Ok(e)
}

fn block_diag<F: Fn(f64) -> CMatrix>(points: &[f64], n: usize, f: F) -> CMatrix {
    let mut out = CMatrix::zeros(points.len() * n, points.len() * n);
    for (k, &x) in points.iter().enumerate() {
        set_block(&mut out, k, k, &f(x));
    }
    out
}

fn check_periodic(sym: &DiracSymbol, l: f64) -> Result<()> {
    let fields = sym
        .gamma_fields()
        .iter()
        .chain(std::iter::once(sym.rho_field()))
        .chain(sym.connection_fields())
        .chain(sym.potential_field());
    for f in fields {
        let d = max_abs(&(f.eval(&[0.0]) - f.eval(&[l])));
        if d > 1e-8 * max_abs(&f.eval(&[0.0])).max(1.0) {
            return Err(Error::Validation(format!(
                "coefficient fields are not {l}-periodic (mismatch {d:.3e})"
            )));
        }
    }
    Ok(())
}

/// Assembles `kind` for a one-dimensional symbol on `geometry` with `m` cells.
pub fn discretize(sym: &DiracSymbol, geometry: Geometry, m: usize, kind: OperatorKind) -> Result<DiscretizedOperator> {
    geometry.validate()?;
    if sym.n() != 1 {
        return Err(Error::Unsupported(format!(
            "discretization oracles need n = 1, got n = {}",
            sym.n()
        )));
    }
    if m < MIN_GRID {
        return Err(Error::Resolution(format!(
            "grid size {m} is below the minimum {MIN_GRID}"
        )));
    }
    if let Geometry::Circle { length } = geometry {
        check_periodic(sym, length)?;
    }
    for x in [0.0, geometry.length()] {
        if !sym.domain().contains(&[x]) {
            return Err(Error::Domain {
                point: vec![x],
                detail: "geometry extends outside the symbol's domain box".into(),
            });
        }
    }
    let n = sym.dim();
    let grid = Grid::new(geometry, m);
    let e = covariant_difference(sym, &grid)?;
    let potential = || -> CMatrix {
        match sym.potential_field() {
            Some(v) => block_diag(&grid.nodes, n, |x| v.eval(&[x])),
            None => CMatrix::zeros(grid.nodes.len() * n, grid.nodes.len() * n),
        }
    };
    let gamma_rho = |x: f64| sym.gamma_fields()[0].eval(&[x]) * sym.rho_field().eval(&[x]);
    let d = || block_diag(&grid.mids, n, gamma_rho) * &e * c(0.0, 1.0);
    let matrix = match kind {
        OperatorKind::Laplacian => {
            let w = block_diag(&grid.mids, n, |x| {
                let r = sym.rho_field().eval(&[x]);
                let g = sym.gamma_fields()[0].eval(&[x]);
                &r * &g * &g * &r
            });
            e.adjoint() * w * &e + potential()
        }
        OperatorKind::D => d(),
        OperatorKind::DBar => d().adjoint(),
        OperatorKind::DBarD => {
            let dm = d();
            dm.adjoint() * dm + potential()
        }
        OperatorKind::DDBar => {
            let dm = d();
            &dm * dm.adjoint()
        }
    };
    Ok(DiscretizedOperator::new(geometry, m, kind, n, matrix))
}

/// `Σ_k e^{−tλ_k}` over a spectrum.
pub fn trace_of_spectrum(eigenvalues: &[f64], t: f64) -> f64 {
    eigenvalues.iter().map(|l| (-t * l).exp()).sum()
}

/// `Tr e^{−tL}` of a self-adjoint discretization.
pub fn heat_trace(op: &DiscretizedOperator, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Validation(format!("heat trace needs t > 0, got {t}")));
    }
    Ok(trace_of_spectrum(op.eigenvalues()?, t))
}

/// `(Σ(λ_k − λ)⁻¹, Σ(λ_k − λ)⁻²)`: the resolvent trace and its λ-derivative.
pub fn resolvent_traces(op: &DiscretizedOperator, lambda: f64) -> Result<(f64, f64)> {
    let ev = op.eigenvalues()?;
    let scale = ev.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if ev.iter().any(|&l| (l - lambda).abs() <= 1e-12 * scale) {
        return Err(Error::NearSpectrum(format!(
            "λ = {lambda} is an eigenvalue of the discretization"
        )));
    }
    Ok((
        ev.iter().map(|l| 1.0 / (l - lambda)).sum(),
        ev.iter().map(|l| (l - lambda).powi(-2)).sum(),
    ))
}

/// Small-t fit controls for the model `(4πt)^{n/2} Tr = Σ_k Â_k t^{k/2}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSpec {
    pub k_max: usize,
    /// Fit even `k` only (closed geometries).
    pub even_only: bool,
    pub t_min: f64,
    pub t_max: f64,
    pub samples: usize,
}

impl FitSpec {
    /// Defaults for a grid of `m` cells: circle `k ≤ 8` even on
    /// `[5h², 0.025L²]`, interval `k ≤ 2` on `[5h², 0.1L²]`.
    pub fn default_for(geometry: Geometry, m: usize) -> Self {
        let l = geometry.length();
        let h = l / m as f64;
        match geometry {
            Geometry::Circle { .. } => Self {
                k_max: 8,
                even_only: true,
                t_min: 5.0 * h * h,
                t_max: 0.025 * l * l,
                samples: 48,
            },
            Geometry::Interval { .. } => Self {
                k_max: 2,
                even_only: false,
                t_min: 5.0 * h * h,
                t_max: 0.1 * l * l,
                samples: 48,
            },
        }
    }

    fn powers(&self) -> Vec<usize> {
        (0..=self.k_max).filter(|k| !self.even_only || k % 2 == 0).collect()
    }

    fn grid(&self, t_max: f64) -> Vec<f64> {
        let (a, b) = (self.t_min.ln(), t_max.ln());
        (0..self.samples)
            .map(|i| (a + (b - a) * i as f64 / (self.samples - 1) as f64).exp())
            .collect()
    }
}

/// One fitted coefficient `Â_k`.
#[derive(Debug, Clone, Serialize)]
pub struct FitCoefficient {
    pub k: usize,
    pub value: f64,
    /// Change under halving the upper end of the t-window.
    pub uncertainty: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HeatFit {
    pub t_grid: Vec<f64>,
    pub coefficients: Vec<FitCoefficient>,
    /// Root-mean-square residual of the fit on the full window.
    pub residual: f64,
    /// Condition number of the column-scaled design matrix.
    pub condition: f64,
}

impl HeatFit {
    pub fn coefficient(&self, k: usize) -> Option<&FitCoefficient> {
        self.coefficients.iter().find(|c| c.k == k)
    }
}

fn least_squares(ts: &[f64], ys: &[f64], powers: &[usize]) -> Result<(Vec<f64>, f64, f64)> {
    let rows = ts.len();
    let cols = powers.len();
    if rows <= cols {
        return Err(Error::Window(format!(
            "{rows} samples cannot determine {cols} coefficients; widen the window or add samples"
        )));
    }
    let mut a = DMatrix::<f64>::from_fn(rows, cols, |i, j| ts[i].powf(powers[j] as f64 / 2.0));
    let scales: Vec<f64> = (0..cols).map(|j| a.column(j).norm()).collect();
    for (j, s) in scales.iter().enumerate() {
        a.column_mut(j).scale_mut(1.0 / s);
    }
    let ev = (a.transpose() * &a).symmetric_eigenvalues();
    let lo = ev.iter().copied().fold(f64::INFINITY, f64::min).max(0.0);
    let hi = ev.iter().copied().fold(0.0f64, f64::max);
    let condition = (hi / lo).sqrt();
    if !(condition <= 1e10) {
        return Err(Error::Window(format!(
            "fit design condition {condition:.3e} exceeds 1e10; reduce k_max or widen the t-window"
        )));
    }
    let y = DVector::from_column_slice(ys);
    let qr = a.clone().qr();
    let rhs = qr.q().transpose() * &y;
    let x = qr
        .r()
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::Window("singular fit design".into()))?;
    let resid = (&a * &x - &y).norm() / (rows as f64).sqrt();
    Ok(((0..cols).map(|j| x[j] / scales[j]).collect(), resid, condition))
}

/// Fits `(4πt)^{n/2} trace(t)` on the window of `spec`, with the
/// uncertainty of each coefficient taken from a refit on
/// `[t_min, t_max/2]`.
pub fn fit_trace<F: Fn(f64) -> Result<f64>>(n: usize, trace: F, spec: &FitSpec) -> Result<HeatFit> {
    if !(spec.t_min > 0.0 && spec.t_max > 2.0 * spec.t_min) {
        return Err(Error::Window(format!(
            "t-window [{:.3e}, {:.3e}] is empty or too narrow to halve",
            spec.t_min, spec.t_max
        )));
    }
    let powers = spec.powers();
    let sample = |t_max: f64| -> Result<(Vec<f64>, Vec<f64>)> {
        let ts = spec.grid(t_max);
        let ys = ts
            .iter()
            .map(|&t| Ok((4.0 * PI * t).powf(n as f64 / 2.0) * trace(t)?))
            .collect::<Result<Vec<f64>>>()?;
        Ok((ts, ys))
    };
    let (ts, ys) = sample(spec.t_max)?;
    let (full, residual, condition) = least_squares(&ts, &ys, &powers)?;
    let (ts2, ys2) = sample(0.5 * spec.t_max)?;
    let (half, _, _) = least_squares(&ts2, &ys2, &powers)?;
    Ok(HeatFit {
        t_grid: ts,
        coefficients: powers
            .iter()
            .enumerate()
            .map(|(j, &k)| FitCoefficient {
                k,
                value: full[j],
                uncertainty: (full[j] - half[j]).abs(),
            })
            .collect(),
        residual,
        condition,
    })
}

/// Heat-invariant fit of one discretization, or of the Richardson
/// combination `(4 Tr_{2m} − Tr_m)/3` when a refined operator with twice
/// the cells is supplied.
pub fn fit_heat_invariants(
    op: &DiscretizedOperator,
    refined: Option<&DiscretizedOperator>,
    spec: &FitSpec,
) -> Result<HeatFit> {
    if let Some(r) = refined {
        if r.m != 2 * op.m || r.geometry != op.geometry || r.kind != op.kind {
            return Err(Error::Config(
                "Richardson refinement needs the same geometry and kind with twice the cells".into(),
            ));
        }
    }
    let coarse = op.eigenvalues()?;
    let fine = refined.map(|r| r.eigenvalues()).transpose()?;
    fit_trace(
        1,
        |t| {
            let a = trace_of_spectrum(coarse, t);
            Ok(match fine {
                Some(f) => (4.0 * trace_of_spectrum(f, t) - a) / 3.0,
                None => a,
            })
        },
        spec,
    )
}

/// Result of [`index_check`].
#[derive(Debug, Clone, Serialize)]
pub struct IndexReport {
    /// Largest relative mismatch of the sorted non-zero spectra of `D̄D`, `DD̄`.
    pub paired_spectra_residual: f64,
    pub index: i64,
    pub kernel_dbar_d: usize,
    pub kernel_d_dbar: usize,
    /// `(t, Tr e^{−tD̄D} − Tr e^{−tDD̄})`.
    pub trace_diff_samples: Vec<(f64, f64)>,
    /// Spread of the trace differences over the samples.
    pub trace_diff_spread: f64,
    /// Set when an eigenvalue lies within a factor 10 of the zero-mode threshold.
    pub threshold_ambiguous: bool,
}

/// Compares `D̄D` and `DD̄` on the circle. Any potential is ignored.
pub fn index_check(sym: &DiracSymbol, geometry: Geometry, m: usize) -> Result<IndexReport> {
    if !matches!(geometry, Geometry::Circle { .. }) {
        return Err(Error::Unsupported("index check requires the circle geometry".into()));
    }
    let d = discretize(sym, geometry, m, OperatorKind::D)?;
    let dbd = DiscretizedOperator::new(
        geometry,
        m,
        OperatorKind::DBarD,
        d.fiber,
        d.matrix.adjoint() * &d.matrix,
    );
    let ddb = DiscretizedOperator::new(
        geometry,
        m,
        OperatorKind::DDBar,
        d.fiber,
        &d.matrix * d.matrix.adjoint(),
    );
    let e1 = dbd.eigenvalues()?;
    let e2 = ddb.eigenvalues()?;
    let top = e1.iter().chain(e2).fold(0.0f64, |a, v| a.max(v.abs()));
    let thr = ZERO_MODE_TOL * top;
    let ambiguous = e1
        .iter()
        .chain(e2)
        .any(|v| v.abs() > thr / 10.0 && v.abs() < thr * 10.0);
    let nz1: Vec<f64> = e1.iter().copied().filter(|v| v.abs() > thr).collect();
    let nz2: Vec<f64> = e2.iter().copied().filter(|v| v.abs() > thr).collect();
    let k1 = e1.len() - nz1.len();
    let k2 = e2.len() - nz2.len();
    let paired = if nz1.len() == nz2.len() {
        nz1.iter()
            .zip(&nz2)
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()))
            .fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    let samples: Vec<(f64, f64)> = [0.1, 0.5, 1.0, 2.0]
        .iter()
        .map(|&t| (t, trace_of_spectrum(e1, t) - trace_of_spectrum(e2, t)))
        .collect();
    let lo = samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let hi = samples.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(IndexReport {
        paired_spectra_residual: paired,
        index: k1 as i64 - k2 as i64,
        kernel_dbar_d: k1,
        kernel_d_dbar: k2,
        trace_diff_samples: samples,
        trace_diff_spread: hi - lo,
        threshold_ambiguous: ambiguous,
    })
}

/// Controls for the truncated half-line oracle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HalflineSpec {
    /// Truncation radius; defaults to `20/√λ_min(C² + 1)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    /// Coarse grid step; the refined run uses half of it.
    pub step: f64,
    /// Trapezoid points for the lattice bulk density.
    pub bulk_points: usize,
}

impl Default for HalflineSpec {
    fn default() -> Self {
        Self {
            radius: None,
            step: 0.04,
            bulk_points: 8192,
        }
    }
}

/// Ψ₁ estimate from the truncated half-line discretization.
#[derive(Debug, Clone, Serialize)]
pub struct HalflineEstimate {
    pub psi1: f64,
    /// Coarse-grid estimate before Richardson extrapolation.
    pub psi1_coarse: f64,
    pub radius: f64,
}

/// `L₀ = −A²δ² − iBδ₁ + C²` on the interior nodes of `[0, R]` with step `h`
/// (central differences, Dirichlet at both ends).
pub fn halfline_operator(split: &BoundarySplit, radius: f64, h: f64) -> Result<CMatrix> {
    let cells = (radius / h).round() as usize;
    if cells < MIN_GRID {
        return Err(Error::Resolution(format!("half-line grid has only {cells} cells")));
    }
    let n = split.dim();
    let nodes = cells - 1;
    let a2 = split.a2();
    let diag = &a2 * c(2.0 / (h * h), 0.0) + split.c2();
    let off_plus = -(&a2 * c(1.0 / (h * h), 0.0)) - &split.b * c(0.0, 1.0 / (2.0 * h));
    let off_minus = -(&a2 * c(1.0 / (h * h), 0.0)) + &split.b * c(0.0, 1.0 / (2.0 * h));
    let mut l = CMatrix::zeros(nodes * n, nodes * n);
    for j in 0..nodes {
        set_block(&mut l, j, j, &diag);
        if j + 1 < nodes {
            set_block(&mut l, j, j + 1, &off_plus);
            set_block(&mut l, j + 1, j, &off_minus);
        }
    }
    Ok(l)
}

/// Bulk density `(1/2π)∫ tr e^{−S(k)} dk` of the lattice symbol
/// `S(k) = A²(4/h²)sin²(kh/2) + B sin(kh)/h + C²` over one period.
fn lattice_density(split: &BoundarySplit, h: f64, points: usize) -> Result<f64> {
    let a2 = split.a2();
    let c2 = split.c2();
    let period = 2.0 * PI / h;
    let dk = period / points as f64;
    let mut total = 0.0;
    for j in 0..points {
        let k = -PI / h + j as f64 * dk;
        let s = &a2 * c(4.0 / (h * h) * (0.5 * k * h).sin().powi(2), 0.0) + &split.b * c((k * h).sin() / h, 0.0) + &c2;
        total += hermitian_eigenvalues(&s)?.iter().map(|l| (-l).exp()).sum::<f64>();
    }
    Ok(total * dk / (2.0 * PI))
}

/// `Ψ₁ = √π·b` with `b = Tr e^{−L₀} − R ρ_h` (both ends contribute one
/// boundary term each), Richardson-extrapolated over `h` and `h/2`.
pub fn halfline_psi1(split: &BoundarySplit, spec: &HalflineSpec) -> Result<HalflineEstimate> {
    let radius = match spec.radius {
        Some(r) => r,
        None => {
            let shifted = split.c2() + identity(split.dim());
            20.0 / hermitian_eigenvalues(&shifted)?[0].sqrt()
        }
    };
    let boundary_term = |h: f64| -> Result<f64> {
        let cells = (radius / h).round();
        let l = halfline_operator(split, radius, h)?;
        let tr: f64 = hermitian_eigenvalues(&((&l + l.adjoint()) * c(0.5, 0.0)))?
            .iter()
            .map(|v| (-v).exp())
            .sum();
        Ok(tr - cells * h * lattice_density(split, h, spec.bulk_points)?)
    };
    let coarse = boundary_term(spec.step)?;
    let fine = boundary_term(0.5 * spec.step)?;
    let b = (4.0 * fine - coarse) / 3.0;
    Ok(HalflineEstimate {
        psi1: PI.sqrt() * b,
        psi1_coarse: PI.sqrt() * coarse,
        radius,
    })
}

/// Writes `index,eigenvalue` rows.
pub fn write_eigenvalues_csv<W: Write>(mut w: W, eigenvalues: &[f64]) -> Result<()> {
    writeln!(w, "index,eigenvalue")?;
    for (i, v) in eigenvalues.iter().enumerate() {
        writeln!(w, "{i},{v:.17e}")?;
    }
    Ok(())
}

/// Writes `t,trace` rows.
pub fn write_trace_csv<W: Write>(mut w: W, samples: &[(f64, f64)]) -> Result<()> {
    writeln!(w, "t,trace")?;
    for (t, v) in samples {
        writeln!(w, "{t:.17e},{v:.17e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{diag_real, pauli};
    use crate::field::{MatrixField, Term, Wave, WaveKind};
    use crate::symbol::DomainBox;

    fn scalar(potential: Option<f64>) -> DiracSymbol {
        let s = DiracSymbol::constant(vec![identity(1)]).unwrap();
        match potential {
            Some(v) => s
                .with_potential(MatrixField::constant(1, identity(1) * c(v, 0.0)))
                .unwrap(),
            None => s,
        }
    }

    fn wave(coeff: CMatrix, kind: WaveKind, k: f64) -> Term {
        Term {
            coeff,
            exponent: vec![0],
            wave: Some(Wave { kind, k: vec![k] }),
        }
    }

    fn constant_term(coeff: CMatrix) -> Term {
        Term {
            coeff,
            exponent: vec![0],
            wave: None,
        }
    }

    #[test]
    fn flat_circle_spectrum() {
        let l = 2.0 * PI;
        let op = discretize(&scalar(None), Geometry::Circle { length: l }, 64, OperatorKind::DBarD).unwrap();
        assert!(op.hermiticity_residual < 1e-10);
        let ev = op.eigenvalues().unwrap();
        assert!(ev[0].abs() < 1e-10);
        // Modes ±1 and ±2: exact lattice values (2/h sin(kh/2))².
        let h = l / 64.0;
        for (i, k) in [(1, 1.0), (2, 1.0), (3, 2.0), (4, 2.0)] {
            let want = (2.0 / h * (0.5 * k * h).sin()).powi(2);
            assert!((ev[i] - want).abs() < 1e-10, "{} vs {want}", ev[i]);
            assert!((ev[i] - k * k).abs() < 2.0 * k.powi(4) * h * h / 12.0);
        }
        assert!((heat_trace(&op, 50.0).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn interval_laplacian_converges_at_second_order() {
        let errs: Vec<f64> = [64, 128, 256]
            .iter()
            .map(|&m| {
                let op = discretize(
                    &scalar(None),
                    Geometry::Interval { length: PI },
                    m,
                    OperatorKind::Laplacian,
                )
                .unwrap();
                (op.eigenvalues().unwrap()[0] - 1.0).abs()
            })
            .collect();
        let slope = (errs[0] / errs[2]).ln() / 4f64.ln();
        assert!((slope - 2.0).abs() < 0.2, "slope {slope}");
        assert!(errs[2] < 1e-4);
    }

    #[test]
    fn interval_heat_trace_matches_theta_function() {
        let op = discretize(
            &scalar(None),
            Geometry::Interval { length: PI },
            512,
            OperatorKind::Laplacian,
        )
        .unwrap();
        let t = 0.01;
        let want = 0.5 * ((PI / t).sqrt() - 1.0);
        assert!((heat_trace(&op, t).unwrap() - want).abs() < 1e-3 * want);
        let one = DiscretizedOperator::new(
            Geometry::Circle { length: 1.0 },
            16,
            OperatorKind::DBarD,
            1,
            identity(1) * c(2.0, 0.0),
        );
        assert!((heat_trace(&one, 1.0).unwrap() - (-2f64).exp()).abs() < 1e-15);
        assert!(heat_trace(&one, 0.0).is_err());
    }

    #[test]
    fn interval_fit_recovers_weyl_and_boundary_terms() {
        let geom = Geometry::Interval { length: PI };
        let coarse = discretize(&scalar(None), geom, 200, OperatorKind::Laplacian).unwrap();
        let fine = discretize(&scalar(None), geom, 400, OperatorKind::Laplacian).unwrap();
        let fit = fit_heat_invariants(&coarse, Some(&fine), &FitSpec::default_for(geom, 200)).unwrap();
        let a0 = fit.coefficient(0).unwrap().value;
        let a1 = fit.coefficient(1).unwrap().value;
        assert!((a0 - PI).abs() < 0.01 * PI, "{a0}");
        assert!((a1 + PI.sqrt()).abs() < 0.01 * PI.sqrt(), "{a1}");
    }

    #[test]
    fn circle_fit_recovers_potential_term() {
        let l = 2.0 * PI;
        let geom = Geometry::Circle { length: l };
        let v0 = 0.8;
        let coarse = discretize(&scalar(Some(v0)), geom, 128, OperatorKind::DBarD).unwrap();
        let fine = discretize(&scalar(Some(v0)), geom, 256, OperatorKind::DBarD).unwrap();
        let fit = fit_heat_invariants(&coarse, Some(&fine), &FitSpec::default_for(geom, 128)).unwrap();
        assert!((fit.coefficient(0).unwrap().value - l).abs() < 1e-3 * l);
        let a2 = fit.coefficient(2).unwrap().value;
        assert!((a2 + v0 * l).abs() < 0.01 * v0 * l, "{a2}");

        let flat_c = discretize(&scalar(None), geom, 128, OperatorKind::DBarD).unwrap();
        let flat_f = discretize(&scalar(None), geom, 256, OperatorKind::DBarD).unwrap();
        let fit = fit_heat_invariants(&flat_c, Some(&flat_f), &FitSpec::default_for(geom, 128)).unwrap();
        let a2 = fit.coefficient(2).unwrap();
        assert!(a2.value.abs() <= (10.0 * a2.uncertainty).max(1e-3), "{a2:?}");
    }

    #[test]
    fn laplacian_and_dbar_d_coincide_in_one_dimension() {
        let l = 2.0 * PI;
        let rho = MatrixField::series(
            1,
            2,
            vec![
                constant_term(identity(2)),
                wave(diag_real(&[0.2, -0.1]), WaveKind::Cos, 1.0),
            ],
        )
        .unwrap();
        let g = MatrixField::series(
            1,
            2,
            vec![
                constant_term(pauli()[0].clone()),
                wave(pauli()[2].clone() * c(0.2, 0.0), WaveKind::Sin, 1.0),
            ],
        )
        .unwrap();
        let b = MatrixField::series(1, 2, vec![wave(pauli()[1].clone() * c(0.0, 0.3), WaveKind::Cos, 2.0)]).unwrap();
        let sym = DiracSymbol::new(vec![g], rho, vec![b], DomainBox::unbounded(1)).unwrap();
        let geom = Geometry::Circle { length: l };
        let a = discretize(&sym, geom, 32, OperatorKind::Laplacian).unwrap();
        let bb = discretize(&sym, geom, 32, OperatorKind::DBarD).unwrap();
        assert!(max_abs(&(&a.matrix - &bb.matrix)) < 1e-10 * max_abs(&a.matrix));
        assert!(bb.hermiticity_residual < 1e-10);
        assert!(bb.eigenvalues().unwrap()[0] > -1e-8);
    }

    #[test]
    fn index_checks() {
        let l = 2.0 * PI;
        let geom = Geometry::Circle { length: l };
        let b = MatrixField::series(1, 1, vec![wave(identity(1) * c(0.0, 0.4), WaveKind::Sin, 1.0)]).unwrap();
        let sym = DiracSymbol::new(
            vec![MatrixField::constant(1, identity(1))],
            MatrixField::constant(1, identity(1)),
            vec![b],
            DomainBox::unbounded(1),
        )
        .unwrap();
        let r = index_check(&sym, geom, 64).unwrap();
        assert_eq!(r.index, 0);
        assert!(r.paired_spectra_residual < 1e-8);

        let g = MatrixField::series(
            1,
            2,
            vec![
                constant_term(pauli()[0].clone()),
                wave(pauli()[0].clone() * c(0.3, 0.0), WaveKind::Sin, 1.0),
            ],
        )
        .unwrap();
        let rho = MatrixField::from_fn(1, 2, |x| identity(2) * c((0.1 * x[0].cos()).exp(), 0.0));
        let sym = DiracSymbol::new(vec![g], rho, vec![MatrixField::zero(1, 2)], DomainBox::unbounded(1)).unwrap();
        let r = index_check(&sym, geom, 64).unwrap();
        assert_eq!(r.index, 0);
        assert!(r.paired_spectra_residual < 1e-8, "{}", r.paired_spectra_residual);
        assert!(r.trace_diff_spread < 1e-6);
        assert!(index_check(&sym, Geometry::Interval { length: 1.0 }, 64).is_err());
    }

    #[test]
    fn resolvent_trace_derivative() {
        let op = discretize(
            &scalar(Some(0.5)),
            Geometry::Circle { length: 2.0 * PI },
            32,
            OperatorKind::DBarD,
        )
        .unwrap();
        let lam = -0.7;
        let eps = 1e-5;
        let (_, d) = resolvent_traces(&op, lam).unwrap();
        let (p, _) = resolvent_traces(&op, lam + eps).unwrap();
        let (m, _) = resolvent_traces(&op, lam - eps).unwrap();
        assert!(((p - m) / (2.0 * eps) - d).abs() < 1e-6 * d);
    }

    #[test]
    fn invalid_inputs() {
        let geom = Geometry::Circle { length: 1.0 };
        assert!(matches!(
            discretize(&scalar(None), geom, 8, OperatorKind::DBarD),
            Err(Error::Resolution(_))
        ));
        let two = DiracSymbol::constant(vec![identity(1), identity(1)]).unwrap();
        assert!(matches!(
            discretize(&two, geom, 32, OperatorKind::DBarD),
            Err(Error::Unsupported(_))
        ));
        let v = MatrixField::from_fn(1, 1, |x| identity(1) * c(x[0], 0.0));
        let aperiodic = scalar(None).with_potential(v).unwrap();
        assert!(discretize(&aperiodic, geom, 32, OperatorKind::DBarD).is_err());
    }

    #[test]
    fn halfline_oracle_matches_dirichlet_value() {
        let s = BoundarySplit::from_parts(identity(1), CMatrix::zeros(1, 1), CMatrix::zeros(1, 1)).unwrap();
        let est = halfline_psi1(&s, &HalflineSpec::default()).unwrap();
        assert!((est.psi1 + PI.sqrt() / 2.0).abs() < 1e-6, "{}", est.psi1);
    }

    #[test]
    fn csv_writers() {
        let mut buf = Vec::new();
        write_eigenvalues_csv(&mut buf, &[1.0, 2.0]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &[(0.1, 3.0)]).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,trace\n"));
    }
}
