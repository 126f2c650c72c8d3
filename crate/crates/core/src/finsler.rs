//! Finsler geometries induced by the leading symbol.
//!
//! Each eigenvalue branch `h_(a)(x, ξ)` of `H(x, ξ) = Γ(ξ)²` is a degree-2
//! homogeneous function of `ξ`; its half-Hessian `g^{μν}_(a)` is a Finsler
//! metric and `h_(a)` generates the bicharacteristic flow
//! `ẋ^μ = ½ ∂h/∂ξ_μ`, `ξ̇_μ = −½ ∂h/∂x^μ`.
//!
//! Branches are followed by eigenvector overlap rather than by index, so a
//! reordering of eigenvalues between neighbouring covectors does not switch
//! branches. Clusters of (numerically) equal eigenvalues are treated as one
//! branch whose value is the cluster mean.

use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::algebra::{c, hermitian_eig, CMatrix, HermitianEig};
use crate::error::{Error, Result};
use crate::symbol::{contract, DiracSymbol};

/// Relative eigenvalue gap below which two eigenvalues belong to one cluster.
pub const DEGENERACY_TOL: f64 = 1e-8;
/// Default time step of the bicharacteristic integrator.
pub const DEFAULT_DT: f64 = 1e-3;

/// One eigenvalue cluster of `H(x, ξ)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Branch {
    pub value: f64,
    pub multiplicity: usize,
    /// Set when the cluster holds more than one eigenvalue.
    pub degenerate: bool,
    /// Distance to the nearest other cluster (infinite if there is none).
    pub gap: f64,
}

/// Eigenvalue clusters as `(first index, size)` into the ascending list.
fn clusters(values: &[f64]) -> Vec<(usize, usize)> {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut out: Vec<(usize, usize)> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        match out.last_mut() {
            Some((start, len)) if v - values[*start + *len - 1] <= DEGENERACY_TOL * scale => *len += 1,
            _ => out.push((i, 1)),
        }
    }
    out
}

fn cluster_gap(values: &[f64], groups: &[(usize, usize)], k: usize) -> f64 {
    let (s, len) = groups[k];
    let below = if k > 0 {
        values[s] - values[s - 1]
    } else {
        f64::INFINITY
    };
    let above = if k + 1 < groups.len() {
        values[s + len] - values[s + len - 1]
    } else {
        f64::INFINITY
    };
    below.min(above)
}

fn check_covector(xi: &[f64]) -> Result<()> {
    if xi.iter().all(|v| *v == 0.0) {
        return Err(Error::Validation("covector ξ must be non-zero".into()));
    }
    Ok(())
}

/// Ascending eigenvalue clusters of `H(x, ξ)` with multiplicities.
pub fn eigen_branches(sym: &DiracSymbol, x: &[f64], xi: &[f64]) -> Result<Vec<Branch>> {
    check_covector(xi)?;
    let eig = hermitian_eig(&sym.build_h(x, xi)?)?;
    let groups = clusters(&eig.values);
    Ok(groups
        .iter()
        .enumerate()
        .map(|(k, &(s, len))| Branch {
            value: eig.values[s..s + len].iter().sum::<f64>() / len as f64,
            multiplicity: len,
            degenerate: len > 1,
            gap: cluster_gap(&eig.values, &groups, k),
        })
        .collect())
}

/// Spectral projector onto the eigenvectors `idx` of `eig`.
fn projector(eig: &HermitianEig, idx: &[usize]) -> CMatrix {
    let n = eig.dim();
    let mut p = CMatrix::zeros(n, n);
    for &i in idx {
        let v = eig.vectors.column(i);
        p += &v * v.adjoint();
    }
    p
}

/// Reference for following one branch: the spectral projector of the
/// cluster at the reference covector and its size.
#[derive(Debug, Clone)]
struct Tracker {
    proj: CMatrix,
    k: usize,
}

/// Branch data at a nearby point, selected by overlap with the tracker.
struct Tracked {
    value: f64,
    proj: CMatrix,
    /// Spread of the selected eigenvalues.
    spread: f64,
    /// Distance from the selected eigenvalues to the rest of the spectrum.
    gap: f64,
}

impl Tracker {
    fn at(sym: &DiracSymbol, x: &[f64], xi: &[f64], branch: usize) -> Result<(Self, Branch)> {
        check_covector(xi)?;
        let eig = hermitian_eig(&sym.build_h(x, xi)?)?;
        let groups = clusters(&eig.values);
        let &(s, len) = groups.get(branch).ok_or_else(|| {
            Error::Validation(format!(
                "branch index {branch} out of range ({} branches)",
                groups.len()
            ))
        })?;
        let idx: Vec<usize> = (s..s + len).collect();
        let info = Branch {
            value: eig.values[s..s + len].iter().sum::<f64>() / len as f64,
            multiplicity: len,
            degenerate: len > 1,
            gap: cluster_gap(&eig.values, &groups, branch),
        };
        Ok((
            Self {
                proj: projector(&eig, &idx),
                k: len,
            },
            info,
        ))
    }

    fn follow(&self, h: &CMatrix) -> Result<Tracked> {
        let eig = hermitian_eig(h)?;
        let n = eig.dim();
        let mut overlap: Vec<(usize, f64)> = (0..n)
            .map(|i| {
                let v = eig.vectors.column(i);
                (i, (v.adjoint() * &self.proj * v)[(0, 0)].re)
            })
            .collect();
        overlap.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut idx: Vec<usize> = overlap[..self.k].iter().map(|p| p.0).collect();
        idx.sort_unstable();
        let sel: Vec<f64> = idx.iter().map(|&i| eig.values[i]).collect();
        let lo = sel.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = sel.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let gap = (0..n)
            .filter(|i| !idx.contains(i))
            .map(|i| {
                let v = eig.values[i];
                if v < lo {
                    lo - v
                } else if v > hi {
                    v - hi
                } else {
                    0.0
                }
            })
            .fold(f64::INFINITY, f64::min);
        Ok(Tracked {
            value: sel.iter().sum::<f64>() / self.k as f64,
            proj: projector(&eig, &idx),
            spread: hi - lo,
            gap,
        })
    }
}

/// `∂H/∂ξ_μ = Γ^μ Γ(ξ) + Γ(ξ) Γ^μ`.
fn dh_dxi(gammas: &[CMatrix], gx: &CMatrix) -> Vec<CMatrix> {
    gammas.iter().map(|g| g * gx + gx * g).collect()
}

/// `∂_μ Γ^ν` at `x`, indexed `[μ][ν]`; analytic when available, otherwise
/// central differences with step `1e-6·(1 + |x|)`.
fn gamma_gradients(sym: &DiracSymbol, x: &[f64]) -> Result<Vec<Vec<CMatrix>>> {
    let n = sym.n();
    let fields = sym.gamma_fields();
    let analytic: Option<Vec<Vec<CMatrix>>> = fields.iter().map(|f| f.gradient(x)).collect();
    if let Some(by_field) = analytic {
        return Ok((0..n)
            .map(|mu| by_field.iter().map(|g| g[mu].clone()).collect())
            .collect());
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let step = 1e-6 * (1.0 + norm);
    (0..n)
        .map(|mu| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[mu] += step;
            xm[mu] -= step;
            let gp = sym.gammas_at(&xp)?;
            let gm = sym.gammas_at(&xm)?;
            Ok(gp.iter().zip(&gm).map(|(p, m)| (p - m) * c(0.5 / step, 0.0)).collect())
        })
        .collect()
}

/// Hellmann–Feynman gradients of a tracked branch in `ξ` and `x`.
fn branch_gradients(
    sym: &DiracSymbol,
    x: &[f64],
    xi: &[f64],
    tracker: &Tracker,
    with_x: bool,
) -> Result<(Tracked, Vec<f64>, Vec<f64>)> {
    let gammas = sym.gammas_at(x)?;
    let gx = contract(&gammas, xi);
    let tracked = tracker.follow(&(&gx * &gx))?;
    let k = tracker.k as f64;
    let grad_xi = dh_dxi(&gammas, &gx)
        .iter()
        .map(|d| (&tracked.proj * d).trace().re / k)
        .collect();
    let grad_x = if with_x {
        gamma_gradients(sym, x)?
            .iter()
            .map(|dg| {
                let dgx = contract(dg, xi);
                let dh = &dgx * &gx + &gx * &dgx;
                (&tracked.proj * dh).trace().re / k
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok((tracked, grad_xi, grad_x))
}

/// Finsler data of one branch at `(x, ξ)`.
#[derive(Debug, Clone, Serialize)]
pub struct FinslerBranch {
    pub index: usize,
    pub h: f64,
    pub multiplicity: usize,
    pub grad_xi: Vec<f64>,
    /// `g^{μν} = ½ ∂²h/∂ξ_μ∂ξ_ν`.
    pub g_contra: Vec<Vec<f64>>,
    /// `|g^{μν}ξ_μξ_ν − h| / h`.
    pub homogeneity_residual: f64,
}

/// Half-Hessian by central differences of the analytic ξ-gradient.
fn half_hessian(sym: &DiracSymbol, x: &[f64], xi: &[f64], tracker: &Tracker, step: f64) -> Result<Vec<Vec<f64>>> {
    let n = xi.len();
    let mut g = vec![vec![0.0; n]; n];
    for nu in 0..n {
        let mut xp = xi.to_vec();
        let mut xm = xi.to_vec();
        xp[nu] += step;
        xm[nu] -= step;
        let (_, gp, _) = branch_gradients(sym, x, &xp, tracker, false)?;
        let (_, gm, _) = branch_gradients(sym, x, &xm, tracker, false)?;
        for mu in 0..n {
            g[mu][nu] = 0.25 * (gp[mu] - gm[mu]) / step;
        }
    }
    for mu in 0..n {
        for nu in 0..mu {
            let s = 0.5 * (g[mu][nu] + g[nu][mu]);
            g[mu][nu] = s;
            g[nu][mu] = s;
        }
    }
    Ok(g)
}

fn max_rel_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let scale = a
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Finsler metric of branch `branch` (0-based, ascending clusters).
///
/// Degenerate clusters are accepted only if the cluster mean is exactly
/// quadratic in `ξ`, detected by agreement of Hessians taken with steps
/// `1e-4|ξ|`, `0.25|ξ|` and `0.5|ξ|`.
pub fn finsler_metric(sym: &DiracSymbol, x: &[f64], xi: &[f64], branch: usize) -> Result<FinslerBranch> {
    let (tracker, info) = Tracker::at(sym, x, xi, branch)?;
    let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    let g = half_hessian(sym, x, xi, &tracker, 1e-4 * norm)?;
    if info.degenerate {
        for big in [0.25, 0.5] {
            let gb = half_hessian(sym, x, xi, &tracker, big * norm)?;
            let d = max_rel_diff(&g, &gb);
            if !(d <= 1e-6) {
                return Err(Error::DegenerateBranch { branch, gap: 0.0 });
            }
        }
    } else if info.gap <= DEGENERACY_TOL * info.value.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateBranch { branch, gap: info.gap });
    }
    let n = xi.len();
    let m = DMatrix::<f64>::from_fn(n, n, |i, j| g[i][j]);
    let min = m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::ConvexityFailure { min_eigenvalue: min });
    }
    let (_, grad_xi, _) = branch_gradients(sym, x, xi, &tracker, false)?;
    let quad: f64 = (0..n)
        .map(|i| (0..n).map(|j| xi[i] * g[i][j] * xi[j]).sum::<f64>())
        .sum();
    Ok(FinslerBranch {
        index: branch,
        h: info.value,
        multiplicity: info.multiplicity,
        grad_xi,
        g_contra: g,
        homogeneity_residual: (quad - info.value).abs() / info.value.abs().max(f64::MIN_POSITIVE),
    })
}

/// Covariant metric `g_{μν}`, the inverse of `g^{μν}`.
pub fn covariant_metric(branch: &FinslerBranch) -> Result<Vec<Vec<f64>>> {
    let n = branch.g_contra.len();
    let m = DMatrix::<f64>::from_fn(n, n, |i, j| branch.g_contra[i][j]);
    let eig = m.clone().symmetric_eigen();
    let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
    if !(lo > 0.0) {
        return Err(Error::ConvexityFailure { min_eigenvalue: lo });
    }
    let condition = hi / lo;
    if condition > 1e12 {
        return Err(Error::IllConditioned { condition });
    }
    let inv = m.try_inverse().ok_or(Error::IllConditioned {
        condition: f64::INFINITY,
    })?;
    Ok((0..n)
        .map(|i| (0..n).map(|j| 0.5 * (inv[(i, j)] + inv[(j, i)])).collect())
        .collect())
}

/// Point of a bicharacteristic. `branch` is the 0-based cluster index at
/// `(x, ξ)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowState {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub branch: usize,
    pub t: f64,
}

fn flow_rhs(sym: &DiracSymbol, x: &[f64], xi: &[f64], tracker: &Tracker) -> Result<(Vec<f64>, Vec<f64>)> {
    let (tracked, gxi, gx) = branch_gradients(sym, x, xi, tracker, true)?;
    let scale = tracked.value.abs().max(f64::MIN_POSITIVE);
    if tracked.spread > DEGENERACY_TOL * scale || tracked.gap <= DEGENERACY_TOL * scale {
        return Err(Error::FlowDegeneracy {
            x: x.to_vec(),
            xi: xi.to_vec(),
            gap: tracked.gap.min(tracked.spread),
        });
    }
    Ok((
        gxi.iter().map(|v| 0.5 * v).collect(),
        gx.iter().map(|v| -0.5 * v).collect(),
    ))
}

/// One classical Runge–Kutta step of the bicharacteristic flow.
pub fn hamiltonian_step(sym: &DiracSymbol, state: &FlowState, dt: f64) -> Result<FlowState> {
    let (tracker, _) = Tracker::at(sym, &state.x, &state.xi, state.branch)?;
    let axpy = |base: &[f64], k: &[f64], s: f64| -> Vec<f64> { base.iter().zip(k).map(|(b, v)| b + s * v).collect() };
    let (k1x, k1p) = flow_rhs(sym, &state.x, &state.xi, &tracker)?;
    let (k2x, k2p) = flow_rhs(
        sym,
        &axpy(&state.x, &k1x, 0.5 * dt),
        &axpy(&state.xi, &k1p, 0.5 * dt),
        &tracker,
    )?;
    let (k3x, k3p) = flow_rhs(
        sym,
        &axpy(&state.x, &k2x, 0.5 * dt),
        &axpy(&state.xi, &k2p, 0.5 * dt),
        &tracker,
    )?;
    let (k4x, k4p) = flow_rhs(sym, &axpy(&state.x, &k3x, dt), &axpy(&state.xi, &k3p, dt), &tracker)?;
    let combine = |base: &[f64], a: &[f64], b: &[f64], cc: &[f64], d: &[f64]| -> Vec<f64> {
        (0..base.len())
            .map(|i| base[i] + dt / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * cc[i] + d[i]))
            .collect()
    };
    let x = combine(&state.x, &k1x, &k2x, &k3x, &k4x);
    let xi = combine(&state.xi, &k1p, &k2p, &k3p, &k4p);
    // Re-identify the cluster index of the followed branch at the new point.
    let tracked = tracker.follow(&sym.build_h(&x, &xi)?)?;
    let eig = hermitian_eig(&sym.build_h(&x, &xi)?)?;
    let groups = clusters(&eig.values);
    let branch = groups
        .iter()
        .enumerate()
        .min_by(|a, b| {
            let va = eig.values[a.1 .0..a.1 .0 + a.1 .1].iter().sum::<f64>() / a.1 .1 as f64;
            let vb = eig.values[b.1 .0..b.1 .0 + b.1 .1].iter().sum::<f64>() / b.1 .1 as f64;
            (va - tracked.value).abs().total_cmp(&(vb - tracked.value).abs())
        })
        .map(|(k, _)| k)
        .unwrap_or(state.branch);
    Ok(FlowState {
        x,
        xi,
        branch,
        t: state.t + dt,
    })
}

/// Trajectory sample with the branch value.
#[derive(Debug, Clone, Serialize)]
pub struct FlowSample {
    pub state: FlowState,
    pub h: f64,
}

fn branch_value(sym: &DiracSymbol, state: &FlowState) -> Result<f64> {
    Ok(eigen_branches(sym, &state.x, &state.xi)?
        .get(state.branch)
        .ok_or_else(|| Error::Validation(format!("branch index {} out of range", state.branch)))?
        .value)
}

/// `steps` integrator steps from `start`, including the initial state.
pub fn trajectory(sym: &DiracSymbol, start: &FlowState, dt: f64, steps: usize) -> Result<Vec<FlowSample>> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    let mut out = Vec::with_capacity(steps + 1);
    let mut state = start.clone();
    out.push(FlowSample {
        h: branch_value(sym, &state)?,
        state: state.clone(),
    });
    for _ in 0..steps {
        state = hamiltonian_step(sym, &state, dt)?;
        out.push(FlowSample {
            h: branch_value(sym, &state)?,
            state: state.clone(),
        });
    }
    Ok(out)
}

/// Writes `t, x₀…, ξ₀…, h` rows with a header line.
pub fn write_trajectory_csv<W: Write>(mut w: W, samples: &[FlowSample]) -> Result<()> {
    let n = samples.first().map(|s| s.state.x.len()).unwrap_or(0);
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend((0..n).map(|i| format!("xi{i}")));
    header.push("h".into());
    writeln!(w, "{}", header.join(","))?;
    for s in samples {
        let mut row = vec![format!("{:.17e}", s.state.t)];
        row.extend(s.state.x.iter().map(|v| format!("{v:.17e}")));
        row.extend(s.state.xi.iter().map(|v| format!("{v:.17e}")));
        row.push(format!("{:.17e}", s.h));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{diag_real, identity, pauli};
    use crate::field::{MatrixField, Term};
    use crate::symbol::DomainBox;
    use rand::{Rng, SeedableRng};

    fn clifford() -> DiracSymbol {
        let [sx, sy, _] = pauli();
        DiracSymbol::constant(vec![sx, sy]).unwrap()
    }

    /// `H = diag(ξ₁² + ξ₂², ξ₁² + 4ξ₂²) ⊗ 𝕀₂`.
    fn block_diag() -> DiracSymbol {
        let [sx, sy, _] = pauli();
        DiracSymbol::constant(vec![identity(2).kronecker(&sx), diag_real(&[1.0, 2.0]).kronecker(&sy)]).unwrap()
    }

    fn polynomial_symbol() -> DiracSymbol {
        let [sx, sy, sz] = pauli();
        let g1 = MatrixField::series(
            2,
            2,
            vec![
                Term {
                    coeff: sx.clone(),
                    exponent: vec![0, 0],
                    wave: None,
                },
                Term {
                    coeff: sz.clone() * c(0.2, 0.0),
                    exponent: vec![1, 0],
                    wave: None,
                },
            ],
        )
        .unwrap();
        let g2 = MatrixField::series(
            2,
            2,
            vec![
                Term {
                    coeff: sy,
                    exponent: vec![0, 0],
                    wave: None,
                },
                Term {
                    coeff: sz * c(0.3, 0.0) + identity(2) * c(0.1, 0.0),
                    exponent: vec![0, 1],
                    wave: None,
                },
            ],
        )
        .unwrap();
        DiracSymbol::new(
            vec![g1, g2],
            MatrixField::constant(2, identity(2)),
            vec![MatrixField::zero(2, 2), MatrixField::zero(2, 2)],
            DomainBox::unbounded(2),
        )
        .unwrap()
    }

    #[test]
    fn branch_examples() {
        let b = eigen_branches(&clifford(), &[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].multiplicity, 2);
        assert!(b[0].degenerate);
        assert!((b[0].value - 1.0).abs() < 1e-14);

        let sym = DiracSymbol::constant(vec![pauli()[0].clone(), diag_real(&[1.0, 2.0])]).unwrap();
        let b = eigen_branches(&sym, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let s5 = 5f64.sqrt();
        assert!((b[0].value - (7.0 - 3.0 * s5) / 2.0).abs() < 1e-12);
        assert!((b[1].value - (7.0 + 3.0 * s5) / 2.0).abs() < 1e-12);
        let b2 = eigen_branches(&sym, &[0.0, 0.0], &[2.0, 2.0]).unwrap();
        for (p, q) in b.iter().zip(&b2) {
            assert!((4.0 * p.value - q.value).abs() < 1e-12 * q.value);
        }
        assert!(eigen_branches(&sym, &[0.0, 0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn quadratic_degenerate_branches_are_accepted() {
        let g = finsler_metric(&clifford(), &[0.0, 0.0], &[0.6, -0.8], 0).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g.g_contra[i][j] - want).abs() < 1e-9);
            }
        }
        let g = finsler_metric(&block_diag(), &[0.0, 0.0], &[1.0, 1.0], 1).unwrap();
        assert!((g.g_contra[0][0] - 1.0).abs() < 1e-9);
        assert!((g.g_contra[1][1] - 4.0).abs() < 1e-9);
        assert!(g.g_contra[0][1].abs() < 1e-9);
        assert!(g.homogeneity_residual < 1e-9);
        let g3 = finsler_metric(&block_diag(), &[0.0, 0.0], &[3.0, 3.0], 1).unwrap();
        assert!(max_rel_diff(&g.g_contra, &g3.g_contra) < 1e-6);
    }

    #[test]
    fn non_quadratic_degenerate_branch_is_refused() {
        // H = (ξ₁ σ_x ⊗ 𝕀 + ξ₂ (σ_z + ½) ⊗ 𝕀)² has doubly degenerate but
        // non-quadratic clusters.
        let [sx, _, sz] = pauli();
        let g2 = &sz + identity(2) * c(0.5, 0.0);
        let sym = DiracSymbol::constant(vec![sx.kronecker(&identity(2)), g2.kronecker(&identity(2))]).unwrap();
        assert!(matches!(
            finsler_metric(&sym, &[0.0, 0.0], &[1.0, 0.7], 0),
            Err(Error::DegenerateBranch { .. })
        ));
    }

    #[test]
    fn non_commuting_metric_satisfies_homogeneity_identities() {
        let [sx, _, sz] = pauli();
        let sym = DiracSymbol::constant(vec![sx, &sz + identity(2) * c(0.5, 0.0)]).unwrap();
        let xi = [0.8, 0.5];
        for branch in 0..2 {
            let g = finsler_metric(&sym, &[0.0, 0.0], &xi, branch);
            let g = match g {
                Ok(g) => g,
                Err(Error::ConvexityFailure { .. }) => continue,
                Err(e) => panic!("{e}"),
            };
            assert!(g.homogeneity_residual < 1e-6, "{}", g.homogeneity_residual);
            let euler: f64 = g.grad_xi.iter().zip(&xi).map(|(a, b)| a * b).sum();
            assert!((euler - 2.0 * g.h).abs() < 1e-6 * g.h);
            let g3 = finsler_metric(&sym, &[0.0, 0.0], &[3.0 * xi[0], 3.0 * xi[1]], branch).unwrap();
            assert!(max_rel_diff(&g.g_contra, &g3.g_contra) < 1e-6);
        }
    }

    #[test]
    fn upper_branch_of_non_commuting_symbol_is_convex() {
        let [sx, _, sz] = pauli();
        let sym = DiracSymbol::constant(vec![sx, &sz + identity(2) * c(0.5, 0.0)]).unwrap();
        let g = finsler_metric(&sym, &[0.0, 0.0], &[0.8, 0.5], 1).unwrap();
        let cov = covariant_metric(&g).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let p: f64 = (0..2).map(|k| g.g_contra[i][k] * cov[k][j]).sum();
                assert!((p - if i == j { 1.0 } else { 0.0 }).abs() < 1e-9);
            }
        }
    }

    fn branch_with(g: Vec<Vec<f64>>) -> FinslerBranch {
        FinslerBranch {
            index: 0,
            h: 1.0,
            multiplicity: 1,
            grad_xi: vec![],
            g_contra: g,
            homogeneity_residual: 0.0,
        }
    }

    #[test]
    fn covariant_metric_examples() {
        let id = covariant_metric(&branch_with(vec![vec![1.0, 0.0], vec![0.0, 1.0]])).unwrap();
        assert_eq!(id, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let d = covariant_metric(&branch_with(vec![vec![1.0, 0.0], vec![0.0, 4.0]])).unwrap();
        assert!((d[1][1] - 0.25).abs() < 1e-15);
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        for _ in 0..20 {
            let a: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g: Vec<Vec<f64>> = (0..3)
                .map(|i| {
                    (0..3)
                        .map(|j| {
                            (0..3).map(|k| a[i * 3 + k] * a[j * 3 + k]).sum::<f64>() + if i == j { 0.5 } else { 0.0 }
                        })
                        .collect()
                })
                .collect();
            let inv = covariant_metric(&branch_with(g.clone())).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    let p: f64 = (0..3).map(|k| g[i][k] * inv[k][j]).sum();
                    assert!((p - if i == j { 1.0 } else { 0.0 }).abs() < 1e-9);
                }
            }
        }
        assert!(matches!(
            covariant_metric(&branch_with(vec![vec![1.0, 0.0], vec![0.0, 1e-13]])),
            Err(Error::IllConditioned { .. })
        ));
    }

    #[test]
    fn constant_symbols_give_straight_lines() {
        let start = FlowState {
            x: vec![0.0, 0.0],
            xi: vec![1.0, 0.0],
            branch: 0,
            t: 0.0,
        };
        let traj = trajectory(&clifford(), &start, DEFAULT_DT, 100).unwrap();
        let end = &traj.last().unwrap().state;
        assert!((end.x[0] - 0.1).abs() < 1e-12 && end.x[1].abs() < 1e-12);
        assert_eq!(end.xi, vec![1.0, 0.0]);

        let start = FlowState {
            x: vec![0.0, 0.0],
            xi: vec![1.0, 1.0],
            branch: 1,
            t: 0.0,
        };
        let s = hamiltonian_step(&block_diag(), &start, 0.01).unwrap();
        assert!((s.x[0] - 0.01).abs() < 1e-12);
        assert!((s.x[1] - 0.04).abs() < 1e-12);
    }

    #[test]
    fn energy_is_conserved_on_polynomial_symbol() {
        let sym = polynomial_symbol();
        let start = FlowState {
            x: vec![0.1, -0.2],
            xi: vec![0.7, 0.4],
            branch: 1,
            t: 0.0,
        };
        let traj = trajectory(&sym, &start, DEFAULT_DT, 1000).unwrap();
        let h0 = traj[0].h;
        let h1 = traj.last().unwrap().h;
        assert!((h1 - h0).abs() / h0 < 1e-6, "{h0} -> {h1}");
        assert!((traj.last().unwrap().state.t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn x_gradient_matches_finite_differences() {
        let sym = polynomial_symbol();
        let x = [0.3, 0.1];
        let xi = [0.5, -0.9];
        let (tracker, _) = Tracker::at(&sym, &x, &xi, 0).unwrap();
        let (_, _, gx) = branch_gradients(&sym, &x, &xi, &tracker, true).unwrap();
        let h = 1e-6;
        for mu in 0..2 {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[mu] += h;
            xm[mu] -= h;
            let fd = (eigen_branches(&sym, &xp, &xi).unwrap()[0].value
                - eigen_branches(&sym, &xm, &xi).unwrap()[0].value)
                / (2.0 * h);
            assert!((fd - gx[mu]).abs() < 1e-7);
        }
    }

    #[test]
    fn csv_has_header_and_rows() {
        let start = FlowState {
            x: vec![0.0, 0.0],
            xi: vec![1.0, 0.0],
            branch: 0,
            t: 0.0,
        };
        let traj = trajectory(&clifford(), &start, 0.1, 3).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &traj).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x0,x1,xi0,xi1,h");
        assert_eq!(lines.len(), 5);
    }
}
