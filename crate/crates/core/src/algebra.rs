//! Dense complex matrix kernel.
//!
//! Everything downstream works with small dense `N×N` complex matrices
//! (`N ≤ 16` in practice): Hermitian eigendecomposition, the matrix
//! exponential, an analytically continued matrix square root, and the
//! roots/residues of the quadratic pencil `A2 ω² + B1 ω + C0 − λ`.
//!
//! All functions are pure; they only read their arguments.

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Dense complex matrix, the value type of every endomorphism in the crate.
pub type CMatrix = DMatrix<C64>;

/// Relative tolerance used when a matrix must be Hermitian.
pub const HERMITIAN_RTOL: f64 = 1e-10;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn zeros(n: usize) -> CMatrix {
    CMatrix::zeros(n, n)
}

/// Builds a complex matrix from real row-major entries.
pub fn from_real_rows(rows: &[&[f64]]) -> CMatrix {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    CMatrix::from_fn(n, m, |i, j| c(rows[i][j], 0.0))
}

pub fn diag_real(d: &[f64]) -> CMatrix {
    CMatrix::from_fn(
        d.len(),
        d.len(),
        |i, j| if i == j { c(d[i], 0.0) } else { C64::default() },
    )
}

/// Pauli matrices σ_x, σ_y, σ_z.
pub fn pauli() -> [CMatrix; 3] {
    let sx = from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
    let mut sy = zeros(2);
    sy[(0, 1)] = c(0.0, -1.0);
    sy[(1, 0)] = c(0.0, 1.0);
    let sz = diag_real(&[1.0, -1.0]);
    [sx, sy, sz]
}

/// Block-diagonal direct sum of two matrices.
pub fn direct_sum(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (na, nb) = (a.nrows(), b.nrows());
    let mut out = zeros(na + nb);
    out.view_mut((0, 0), (na, na)).copy_from(a);
    out.view_mut((na, na), (nb, nb)).copy_from(b);
    out
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// `max |M − M†|`.
pub fn hermitian_asymmetry(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn is_hermitian(m: &CMatrix, rtol: f64) -> bool {
    m.is_square() && hermitian_asymmetry(m) <= rtol * max_abs(m).max(f64::MIN_POSITIVE)
}

fn check_square(m: &CMatrix, what: &str) -> Result<()> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::Validation(format!(
            "{what}: expected a non-empty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn check_finite(m: &CMatrix, what: &str) -> Result<()> {
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Validation(format!("{what}: non-finite entries")));
    }
    Ok(())
}

/// Eigendecomposition `M = U diag(values) U†` of a Hermitian matrix,
/// eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct HermitianEig {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl HermitianEig {
    /// `U f(Λ) U†`.
    pub fn map<F: Fn(f64) -> C64>(&self, f: F) -> CMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let fj = f(self.values[j]);
            for i in 0..n {
                scaled[(i, j)] *= fj;
            }
        }
        &scaled * self.vectors.adjoint()
    }

    pub fn reconstruct(&self) -> CMatrix {
        self.map(|v| c(v, 0.0))
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Hermitian eigendecomposition with ascending eigenvalues.
///
/// The input is validated against [`HERMITIAN_RTOL`] and symmetrized
/// before the solve.
pub fn hermitian_eig(m: &CMatrix) -> Result<HermitianEig> {
    check_square(m, "hermitian_eig")?;
    check_finite(m, "hermitian_eig")?;
    let asym = hermitian_asymmetry(m);
    let tol = HERMITIAN_RTOL * max_abs(m).max(f64::MIN_POSITIVE);
    if asym > tol {
        return Err(Error::NotHermitian {
            asymmetry: asym,
            tolerance: tol,
        });
    }
    let sym = (m + m.adjoint()) * c(0.5, 0.0);
    let eig = sym.symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(HermitianEig { values, vectors })
}

/// Ascending eigenvalues of a (possibly large) Hermitian matrix, without
/// eigenvectors. Real-valued inputs take the cheaper real symmetric path.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Result<Vec<f64>> {
    check_square(m, "hermitian_eigenvalues")?;
    check_finite(m, "hermitian_eigenvalues")?;
    let asym = hermitian_asymmetry(m);
    let tol = HERMITIAN_RTOL * max_abs(m).max(f64::MIN_POSITIVE);
    if asym > tol {
        return Err(Error::NotHermitian {
            asymmetry: asym,
            tolerance: tol,
        });
    }
    let n = m.nrows();
    let mut values: Vec<f64> = if m.iter().all(|z| z.im == 0.0) {
        let re = DMatrix::<f64>::from_fn(n, n, |i, j| 0.5 * (m[(i, j)].re + m[(j, i)].re));
        re.symmetric_eigenvalues().iter().copied().collect()
    } else {
        let sym = (m + m.adjoint()) * c(0.5, 0.0);
        sym.symmetric_eigenvalues().iter().copied().collect()
    };
    values.sort_by(f64::total_cmp);
    Ok(values)
}

fn is_diagonal(m: &CMatrix) -> bool {
    let n = m.nrows();
    (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)] == C64::default()))
}

/// Matrix exponential.
///
/// Zero and diagonal inputs are handled exactly, Hermitian inputs through
/// the eigendecomposition, everything else by scaling and squaring with a
/// degree-13 Padé approximant.
pub fn matrix_exp(m: &CMatrix) -> Result<CMatrix> {
    check_square(m, "matrix_exp")?;
    check_finite(m, "matrix_exp")?;
    let n = m.nrows();
    if is_diagonal(m) {
        return Ok(CMatrix::from_fn(n, n, |i, j| {
            if i == j {
                m[(i, i)].exp()
            } else {
                C64::default()
            }
        }));
    }
    if hermitian_asymmetry(m) <= 1e-12 * max_abs(m) {
        let eig = hermitian_eig(m)?;
        return Ok(eig.map(|v| c(v.exp(), 0.0)));
    }
    expm_pade13(m)
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

fn one_norm(m: &CMatrix) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Scaling-and-squaring exponential with the degree-13 Padé approximant.
/// Valid for any square matrix; used directly as an independent route.
pub fn expm_pade13(m: &CMatrix) -> Result<CMatrix> {
    check_square(m, "expm_pade13")?;
    check_finite(m, "expm_pade13")?;
    let n = m.nrows();
    let norm = one_norm(m);
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = m * c(0.5f64.powi(s), 0.0);
    let id = identity(n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = |k: usize| c(PADE13[k], 0.0);
    let u_inner = &a6 * (&a6 * b(13) + &a4 * b(11) + &a2 * b(9)) + &a6 * b(7) + &a4 * b(5) + &a2 * b(3) + &id * b(1);
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b(12) + &a4 * b(10) + &a2 * b(8)) + &a6 * b(6) + &a4 * b(4) + &a2 * b(2) + &id * b(0);
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| Error::Validation("expm: singular Padé denominator".into()))?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

/// Inverse of a square matrix, with a relative singularity guard.
pub fn inverse(m: &CMatrix) -> Result<CMatrix> {
    check_square(m, "inverse")?;
    let scale = max_abs(m);
    let lu = m.clone().lu();
    let inv = lu
        .try_inverse()
        .ok_or_else(|| Error::Validation("singular matrix".into()))?;
    if !inv.iter().all(|z| z.re.is_finite() && z.im.is_finite()) || max_abs(&inv) * scale > 1e15 {
        return Err(Error::IllConditioned {
            condition: max_abs(&inv) * scale,
        });
    }
    Ok(inv)
}

/// Complex Schur form `M = Q T Q†` with `T` upper triangular.
pub fn complex_schur(m: &CMatrix) -> Result<(CMatrix, CMatrix)> {
    check_square(m, "complex_schur")?;
    check_finite(m, "complex_schur")?;
    if let Some(schur) = Schur::try_new(m.clone(), f64::EPSILON, 5_000) {
        return Ok(schur.unpack());
    }
    // Highly degenerate inputs (e.g. block-scalar companion matrices) can
    // stall the shifted QR iteration; a fixed dense unitary similarity
    // breaks the structure without changing the spectrum.
    let n = m.nrows();
    for seed in 1..=3usize {
        let g = CMatrix::from_fn(n, n, |i, j| {
            let k = (seed * 31 + i * 7 + j * 3) as f64;
            c(k.sin(), (k * 1.618 + 1.0).cos())
        });
        let u = g.qr().q();
        if let Some(schur) = Schur::try_new(u.adjoint() * m * &u, f64::EPSILON, 5_000) {
            let (q, t) = schur.unpack();
            return Ok((u * q, t));
        }
    }
    Err(Error::Convergence("complex Schur iteration did not converge".into()))
}

/// Eigenvalues of a general complex matrix (diagonal of its Schur form).
pub fn eigenvalues_general(m: &CMatrix) -> Result<Vec<C64>> {
    let (_, t) = complex_schur(m)?;
    Ok((0..t.nrows()).map(|i| t[(i, i)]).collect())
}

/// Branch selection for [`matrix_sqrt_analytic`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SqrtBranch {
    /// Eigenvalues of the root have positive real part; this is the
    /// continuation from the positive-definite root.
    #[default]
    PositiveRealPart,
    NegativeRealPart,
}

/// Square root analytic off the closed negative real axis.
///
/// Hermitian positive-definite inputs return the unique positive-definite
/// root; otherwise the Schur method builds the root whose eigenvalues are
/// the principal scalar roots.
pub fn matrix_sqrt_analytic(m: &CMatrix, branch: SqrtBranch) -> Result<CMatrix> {
    check_square(m, "matrix_sqrt_analytic")?;
    check_finite(m, "matrix_sqrt_analytic")?;
    let n = m.nrows();
    let scale = max_abs(m).max(1.0);
    let cut_tol = 1e-10 * scale;
    let sign = match branch {
        SqrtBranch::PositiveRealPart => 1.0,
        SqrtBranch::NegativeRealPart => -1.0,
    };

    if is_hermitian(m, 1e-14) {
        let eig = hermitian_eig(m)?;
        if let Some(&lo) = eig.values.first() {
            if lo <= cut_tol {
                return Err(Error::BranchAmbiguity {
                    re: lo,
                    im: 0.0,
                    tolerance: cut_tol,
                });
            }
        }
        return Ok(eig.map(|v| c(sign * v.sqrt(), 0.0)));
    }

    let (q, t) = complex_schur(m)?;
    for i in 0..n {
        let z = t[(i, i)];
        if z.im.abs() <= cut_tol && z.re <= cut_tol {
            return Err(Error::BranchAmbiguity {
                re: z.re,
                im: z.im,
                tolerance: cut_tol,
            });
        }
    }
    let mut r = zeros(n);
    for j in 0..n {
        r[(j, j)] = t[(j, j)].sqrt();
        for i in (0..j).rev() {
            let mut s = t[(i, j)];
            for k in (i + 1)..j {
                s -= r[(i, k)] * r[(k, j)];
            }
            r[(i, j)] = s / (r[(i, i)] + r[(j, j)]);
        }
    }
    Ok(&q * r * q.adjoint() * c(sign, 0.0))
}

/// Solves the Sylvester equation `A X + X B = Q` by Kronecker vectorization.
pub fn solve_sylvester(a: &CMatrix, b: &CMatrix, q: &CMatrix) -> Result<CMatrix> {
    let n = a.nrows();
    let m = b.nrows();
    let dim = n * m;
    // column-major vec: vec(AX) = (I⊗A) vec X, vec(XB) = (Bᵀ⊗I) vec X
    let mut k = CMatrix::zeros(dim, dim);
    for col in 0..m {
        for i in 0..n {
            for l in 0..n {
                k[(col * n + i, col * n + l)] += a[(i, l)];
            }
        }
    }
    for col in 0..m {
        for l in 0..m {
            let blm = b[(l, col)];
            for i in 0..n {
                k[(col * n + i, l * n + i)] += blm;
            }
        }
    }
    let rhs = nalgebra::DVector::from_iterator(dim, q.iter().copied());
    let x = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Validation("singular Sylvester operator".into()))?;
    Ok(CMatrix::from_iterator(n, m, x.iter().copied()))
}

/// Tolerances for [`pencil_roots`].
#[derive(Debug, Clone, Copy)]
pub struct PencilOptions {
    /// Roots closer than `cluster_tol·(1+|ω|)` are treated as one
    /// semisimple root.
    pub cluster_tol: f64,
    /// Relative threshold below which a root is declared defective.
    pub defect_tol: f64,
    /// Relative λ shift applied on the single retry.
    pub perturbation: f64,
    pub retry: bool,
}

impl Default for PencilOptions {
    fn default() -> Self {
        Self {
            cluster_tol: 1e-8,
            defect_tol: 1e-8,
            perturbation: 1e-6,
            retry: true,
        }
    }
}

/// One (possibly semisimple multiple) root of the pencil with the matrix
/// residue of `R(ω) = P(ω)⁻¹` there.
#[derive(Debug, Clone)]
pub struct PencilRoot {
    pub omega: C64,
    pub multiplicity: usize,
    pub residue: CMatrix,
}

/// Roots and residues of `P(ω) = A2 ω² + B1 ω + C0 − λ𝕀`.
#[derive(Debug, Clone)]
pub struct PencilSpectrum {
    pub roots: Vec<PencilRoot>,
    /// The λ actually used (differs from the request after a retry).
    pub lambda: C64,
    pub perturbed: bool,
}

impl PencilSpectrum {
    /// All roots, repeated according to multiplicity.
    pub fn all_roots(&self) -> Vec<C64> {
        self.roots
            .iter()
            .flat_map(|r| std::iter::repeat(r.omega).take(r.multiplicity))
            .collect()
    }

    pub fn residue_sum(&self) -> CMatrix {
        let n = self.roots[0].residue.nrows();
        self.roots.iter().fold(zeros(n), |acc, r| acc + &r.residue)
    }

    /// Partial-fraction reconstruction `Σ_j Res_j / (ω − ω_j)`.
    pub fn resolvent(&self, omega: C64) -> CMatrix {
        let n = self.roots[0].residue.nrows();
        self.roots
            .iter()
            .fold(zeros(n), |acc, r| acc + &r.residue / (omega - r.omega))
    }
}

/// Roots and residues of the quadratic pencil via first-companion
/// linearization (premultiplied by `A2⁻¹`).
pub fn pencil_roots(a2: &CMatrix, b1: &CMatrix, c0: &CMatrix, lambda: C64) -> Result<PencilSpectrum> {
    pencil_roots_with(a2, b1, c0, lambda, &PencilOptions::default())
}

pub fn pencil_roots_with(
    a2: &CMatrix,
    b1: &CMatrix,
    c0: &CMatrix,
    lambda: C64,
    opts: &PencilOptions,
) -> Result<PencilSpectrum> {
    match pencil_roots_once(a2, b1, c0, lambda, opts) {
        Ok(roots) => Ok(PencilSpectrum {
            roots,
            lambda,
            perturbed: false,
        }),
        Err(Error::DegeneratePencil { .. }) if opts.retry => {
            let shifted = lambda + opts.perturbation * (1.0 + lambda.norm());
            let roots = pencil_roots_once(a2, b1, c0, shifted, opts)?;
            Ok(PencilSpectrum {
                roots,
                lambda: shifted,
                perturbed: true,
            })
        }
        Err(e) => Err(e),
    }
}

fn pencil_roots_once(
    a2: &CMatrix,
    b1: &CMatrix,
    c0: &CMatrix,
    lambda: C64,
    opts: &PencilOptions,
) -> Result<Vec<PencilRoot>> {
    let n = a2.nrows();
    for (m, what) in [(a2, "A2"), (b1, "B1"), (c0, "C0")] {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::Validation(format!("pencil: {what} has wrong shape")));
        }
    }
    let a2_inv = inverse(a2).map_err(|_| Error::Validation("pencil: A2 is singular".into()))?;
    let shifted = c0 - identity(n) * lambda;
    let p = &a2_inv * b1;
    let q = &a2_inv * &shifted;

    let mut companion = CMatrix::zeros(2 * n, 2 * n);
    companion.view_mut((0, n), (n, n)).copy_from(&identity(n));
    companion.view_mut((n, 0), (n, n)).copy_from(&(-q));
    companion.view_mut((n, n), (n, n)).copy_from(&(-p));
    let raw = eigenvalues_general(&companion)?;

    // Cluster coincident roots; each cluster must be semisimple.
    let mut used = vec![false; raw.len()];
    let mut clusters: Vec<(C64, usize)> = Vec::new();
    for i in 0..raw.len() {
        if used[i] {
            continue;
        }
        let tol = opts.cluster_tol * (1.0 + raw[i].norm());
        let members: Vec<usize> = (i..raw.len())
            .filter(|&j| !used[j] && (raw[j] - raw[i]).norm() <= tol)
            .collect();
        for &j in &members {
            used[j] = true;
        }
        let mean = members.iter().map(|&j| raw[j]).sum::<C64>() / members.len() as f64;
        clusters.push((mean, members.len()));
    }

    let p_norm = max_abs(a2).max(max_abs(b1)).max(max_abs(&shifted));
    clusters
        .into_iter()
        .map(|(omega, k)| {
            let pw = a2 * (omega * omega) + b1 * omega + &shifted;
            let dp = a2 * (omega * 2.0) + b1;
            let residue = semisimple_residue(&pw, &dp, k, omega, p_norm, opts)?;
            Ok(PencilRoot {
                omega,
                multiplicity: k,
                residue,
            })
        })
        .collect()
}

/// Singular values in ascending order, computed from the Hermitian
/// Jordan-Wielandt embedding `[[0, M], [M^H, 0]]`.
pub fn singular_values(m: &CMatrix) -> Result<Vec<f64>> {
    let (n, k) = (m.nrows(), m.ncols());
    let eig = hermitian_eig(&jordan_wielandt(m))?;
    let mut values: Vec<f64> = eig.values.iter().map(|v| v.abs()).collect();
    values.sort_by(f64::total_cmp);
    // The embedding has eigenvalues +-sigma plus |n - k| structural zeros.
    let extra = n.abs_diff(k);
    let paired: Vec<f64> = values[extra..].chunks(2).map(|p| 0.5 * (p[0] + p[1])).collect();
    Ok(paired)
}

fn jordan_wielandt(m: &CMatrix) -> CMatrix {
    let (n, k) = (m.nrows(), m.ncols());
    let mut j = CMatrix::zeros(n + k, n + k);
    j.view_mut((0, n), (n, k)).copy_from(m);
    j.view_mut((n, 0), (k, n)).copy_from(&m.adjoint());
    j
}

/// Orthonormal basis of the dominant `k`-dimensional column space of `x`.
fn dominant_basis(x: &CMatrix, k: usize) -> Result<CMatrix> {
    let eig = hermitian_eig(&(x * x.adjoint()))?;
    let n = x.nrows();
    Ok(CMatrix::from_fn(n, k, |i, j| eig.vectors[(i, n - 1 - j)]))
}

/// Residue `V (U† P'(ω) V)⁻¹ U†` from the `k`-dimensional right/left
/// null spaces of `P(ω)`.
fn semisimple_residue(
    pw: &CMatrix,
    dp: &CMatrix,
    k: usize,
    omega: C64,
    p_norm: f64,
    opts: &PencilOptions,
) -> Result<CMatrix> {
    let n = pw.nrows();
    if k > n {
        return Err(Error::DegeneratePencil {
            re: omega.re,
            im: omega.im,
            detail: format!("root multiplicity {k} exceeds dimension {n}"),
        });
    }
    let eig = hermitian_eig(&jordan_wielandt(pw))?;
    let mut order: Vec<usize> = (0..2 * n).collect();
    order.sort_by(|&a, &b| eig.values[a].abs().total_cmp(&eig.values[b].abs()));
    let scale = p_norm * (1.0 + omega.norm() * omega.norm());
    let kth = eig.values[order[2 * k - 1]].abs();
    let degenerate = |detail: String| Error::DegeneratePencil {
        re: omega.re,
        im: omega.im,
        detail,
    };
    if kth > opts.defect_tol * scale.max(1.0) {
        return Err(degenerate(format!(
            "root of multiplicity {k} has geometric multiplicity < {k} (sigma_{k} = {kth:.3e})"
        )));
    }
    // The 2k eigenvectors nearest zero span (left null) + (right null).
    let top = CMatrix::from_fn(n, 2 * k, |i, j| eig.vectors[(i, order[j])]);
    let bottom = CMatrix::from_fn(n, 2 * k, |i, j| eig.vectors[(n + i, order[j])]);
    let un = dominant_basis(&top, k)?;
    let vn = dominant_basis(&bottom, k)?;
    let middle = un.adjoint() * dp * &vn;
    let smin = singular_values(&middle)?[0];
    let dp_scale = max_abs(dp).max(f64::MIN_POSITIVE);
    if smin < opts.defect_tol * dp_scale {
        return Err(degenerate(format!("vanishing derivative coupling {smin:.3e}")));
    }
    let mid_inv = inverse(&middle)?;
    Ok(vn * mid_inv * un.adjoint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_hermitian(rng: &mut StdRng, n: usize) -> CMatrix {
        let a = CMatrix::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        (&a + a.adjoint()) * c(0.5, 0.0)
    }

    fn close(a: &CMatrix, b: &CMatrix) -> f64 {
        max_abs(&(a - b))
    }

    #[test]
    fn schur_handles_block_scalar_companion() {
        let lam = c(-8.0, -1.0);
        let mut m = CMatrix::zeros(6, 6);
        for i in 0..3 {
            m[(i, 3 + i)] = c(1.0, 0.0);
            m[(3 + i, i)] = lam;
        }
        let (q, t) = complex_schur(&m).unwrap();
        assert!(max_abs(&(&q * &t * q.adjoint() - &m)) < 1e-12);
        for i in 0..6 {
            assert!((t[(i, i)] * t[(i, i)] - lam).norm() < 1e-10);
        }
    }

    #[test]
    fn identity_eigenvalues() {
        let eig = hermitian_eig(&identity(2)).unwrap();
        assert_eq!(eig.values, vec![1.0, 1.0]);
        let u = &eig.vectors;
        assert!(close(&(u.adjoint() * u), &identity(2)) < 1e-14);
    }

    #[test]
    fn symmetric_2x2_eigenvalues() {
        let m = from_real_rows(&[&[2.0, 3.0], &[3.0, 5.0]]);
        let eig = hermitian_eig(&m).unwrap();
        let s5 = 5f64.sqrt();
        assert!((eig.values[0] - (7.0 - 3.0 * s5) / 2.0).abs() < 1e-13);
        assert!((eig.values[1] - (7.0 + 3.0 * s5) / 2.0).abs() < 1e-13);
        assert!((eig.values[0] - 0.14590).abs() < 1e-5);
    }

    #[test]
    fn random_hermitian_reconstructs() {
        let mut rng = StdRng::seed_from_u64(7);
        let m = random_hermitian(&mut rng, 4);
        let eig = hermitian_eig(&m).unwrap();
        assert!(close(&eig.reconstruct(), &m) < 1e-10 * max_abs(&m));
        assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn non_hermitian_rejected() {
        let m = from_real_rows(&[&[1.0, 2.0], &[0.0, 1.0]]);
        match hermitian_eig(&m) {
            Err(Error::NotHermitian { asymmetry, .. }) => assert!((asymmetry - 2.0).abs() < 1e-15),
            other => panic!("expected NotHermitian, got {other:?}"),
        }
    }

    #[test]
    fn exp_of_zero_is_exact_identity() {
        assert_eq!(matrix_exp(&zeros(3)).unwrap(), identity(3));
        assert_eq!(expm_pade13(&zeros(3)).unwrap(), identity(3));
    }

    #[test]
    fn exp_of_diagonal() {
        let e = matrix_exp(&diag_real(&[-1.0, -4.0])).unwrap();
        assert_eq!(e[(0, 0)].re, (-1f64).exp());
        assert_eq!(e[(1, 1)].re, (-4f64).exp());
        assert_eq!(e[(0, 1)], C64::default());
    }

    #[test]
    fn exp_eig_path_matches_pade() {
        let mut rng = StdRng::seed_from_u64(11);
        for scale in [0.1, 1.0, 5.0, 20.0] {
            let h = random_hermitian(&mut rng, 4) * c(scale, 0.0);
            let neg = -&h;
            let a = matrix_exp(&neg).unwrap();
            let b = expm_pade13(&neg).unwrap();
            assert!(close(&a, &b) <= 1e-12 * max_abs(&a).max(1.0), "scale {scale}");
        }
    }

    #[test]
    fn exp_non_normal_matches_taylor() {
        // nilpotent: exp(N) = I + N + N²/2
        let nmat = from_real_rows(&[&[0.0, 1.0, 2.0], &[0.0, 0.0, 3.0], &[0.0, 0.0, 0.0]]);
        let expect = identity(3) + &nmat + &nmat * &nmat * c(0.5, 0.0);
        assert!(close(&matrix_exp(&nmat).unwrap(), &expect) < 1e-14);
    }

    #[test]
    fn exp_rejects_nan() {
        let mut m = zeros(2);
        m[(0, 1)] = c(f64::NAN, 0.0);
        assert!(matches!(matrix_exp(&m), Err(Error::Validation(_))));
    }

    #[test]
    fn sqrt_identity_and_diagonal() {
        let r = matrix_sqrt_analytic(&identity(3), SqrtBranch::default()).unwrap();
        assert!(close(&r, &identity(3)) < 1e-15);
        let r = matrix_sqrt_analytic(&diag_real(&[4.0, 9.0]), SqrtBranch::default()).unwrap();
        assert!(close(&r, &diag_real(&[2.0, 3.0])) < 1e-15);
    }

    #[test]
    fn sqrt_scalar_branch_tracking() {
        let lambda = C64::from_polar(1.0, 3.0 * std::f64::consts::PI / 4.0);
        let cval = 1.3;
        let m = CMatrix::from_element(1, 1, c(cval * cval, 0.0) - lambda);
        let r = matrix_sqrt_analytic(&m, SqrtBranch::PositiveRealPart).unwrap();
        let expect = (c(cval * cval, 0.0) - lambda).sqrt();
        assert!(expect.re > 0.0);
        assert!((r[(0, 0)] - expect).norm() < 1e-14);
    }

    #[test]
    fn sqrt_non_normal_squares_back() {
        let m = CMatrix::from_fn(3, 3, |i, j| {
            c(1.0 + (i * 3 + j) as f64 * 0.1, 0.2 * i as f64 - 0.1 * j as f64)
        }) + identity(3) * c(3.0, 0.5);
        let r = matrix_sqrt_analytic(&m, SqrtBranch::PositiveRealPart).unwrap();
        assert!(close(&(&r * &r), &m) < 1e-10 * max_abs(&m));
        let eigs = eigenvalues_general(&r).unwrap();
        assert!(eigs.iter().all(|z| z.re > 0.0));
    }

    #[test]
    fn sqrt_rejects_branch_cut() {
        let m = diag_real(&[1.0, -2.0]);
        assert!(matches!(
            matrix_sqrt_analytic(&m, SqrtBranch::default()),
            Err(Error::BranchAmbiguity { .. })
        ));
    }

    #[test]
    fn sylvester_solution() {
        let a = from_real_rows(&[&[2.0, 1.0], &[0.0, 3.0]]);
        let b = from_real_rows(&[&[1.0, 0.0], &[1.0, 4.0]]);
        let q = from_real_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let x = solve_sylvester(&a, &b, &q).unwrap();
        assert!(close(&(&a * &x + &x * &b), &q) < 1e-13);
    }

    #[test]
    fn scalar_pencil_roots() {
        let one = identity(1);
        let z = zeros(1);
        let spec = pencil_roots(&one, &z, &z, c(-1.0, 0.0)).unwrap();
        assert_eq!(spec.roots.len(), 2);
        for r in &spec.roots {
            assert!((r.omega.norm() - 1.0).abs() < 1e-14 && r.omega.re.abs() < 1e-14);
            // residue of 1/(ω²+1) at ω0 is 1/(2ω0)
            assert!((r.residue[(0, 0)] - 1.0 / (2.0 * r.omega)).norm() < 1e-14);
        }
    }

    #[test]
    fn diagonal_pencil_roots() {
        let a2 = diag_real(&[1.0, 4.0]);
        let z = zeros(2);
        let spec = pencil_roots(&a2, &z, &z, c(-1.0, 0.0)).unwrap();
        let mut ims: Vec<f64> = spec.all_roots().iter().map(|w| w.im).collect();
        ims.sort_by(f64::total_cmp);
        let expect = [-1.0, -0.5, 0.5, 1.0];
        for (a, b) in ims.iter().zip(expect) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn semisimple_double_root() {
        // (ω² + 2) 𝕀₂: every root has multiplicity two
        let spec = pencil_roots(&identity(2), &zeros(2), &(identity(2) * c(3.0, 0.0)), c(1.0, 0.0)).unwrap();
        assert_eq!(spec.roots.len(), 2);
        assert!(spec.roots.iter().all(|r| r.multiplicity == 2));
        let w = c(0.3, 0.0);
        let direct = inverse(&(identity(2) * (w * w + 2.0))).unwrap();
        assert!(close(&spec.resolvent(w), &direct) < 1e-13);
    }

    #[test]
    fn residues_sum_to_zero_with_b() {
        let [sx, _, sz] = pauli();
        let a = &sx + identity(2) * c(0.3, 0.0);
        let cm = &sz * c(0.8, 0.0);
        let a2 = &a * &a;
        let b1 = &a * &cm + &cm * &a;
        let c0 = &cm * &cm;
        let spec = pencil_roots(&a2, &b1, &c0, c(-1.0, 0.4)).unwrap();
        assert_eq!(spec.all_roots().len(), 4);
        assert!(max_abs(&spec.residue_sum()) < 1e-12);
    }

    #[test]
    fn hermitian_pencil_has_no_real_roots() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..20 {
            let a = random_hermitian(&mut rng, 3) + identity(3) * c(2.5, 0.0);
            let cm = random_hermitian(&mut rng, 3);
            let spec = pencil_roots(&(&a * &a), &(&a * &cm + &cm * &a), &(&cm * &cm), c(-1.0, 0.0)).unwrap();
            assert!(spec.all_roots().iter().all(|w| w.im.abs() > 1e-8));
            let ups = spec.all_roots().iter().filter(|w| w.im > 0.0).count();
            assert_eq!(ups, 3);
        }
    }

    #[test]
    fn defective_pencil_is_detected_and_retried() {
        // ω² − λ at λ = 0: a double root at 0 with a one-dimensional kernel.
        let strict = PencilOptions {
            retry: false,
            ..PencilOptions::default()
        };
        let one = identity(1);
        assert!(matches!(
            pencil_roots_with(&one, &zeros(1), &zeros(1), c(0.0, 0.0), &strict),
            Err(Error::DegeneratePencil { .. })
        ));
        let spec = pencil_roots(&one, &zeros(1), &zeros(1), c(0.0, 0.0)).unwrap();
        assert!(spec.perturbed);
        assert!(spec.lambda.norm() > 0.0);
        assert_eq!(spec.roots.len(), 2);
        assert!(close(&spec.residue_sum(), &zeros(1)) < 1e-8);
    }

    #[test]
    fn persistent_jordan_block_is_reported() {
        // ω² 𝕀 + [[0,1],[0,0]] stays defective under any scalar shift of λ.
        let mut c0 = zeros(2);
        c0[(0, 1)] = c(1.0, 0.0);
        assert!(matches!(
            pencil_roots(&identity(2), &zeros(2), &c0, c(0.0, 0.0)),
            Err(Error::DegeneratePencil { .. })
        ));
    }

    #[test]
    fn singular_values_of_rank_one_matrix() {
        let mut rng = StdRng::seed_from_u64(9);
        let a = CMatrix::from_fn(3, 1, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let b = CMatrix::from_fn(1, 3, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let sv = singular_values(&(&a * &b)).unwrap();
        assert!(sv[0] < 1e-14 && sv[1] < 1e-14);
        assert!((sv[2] - a.norm() * b.norm()).abs() < 1e-13);
    }
}
