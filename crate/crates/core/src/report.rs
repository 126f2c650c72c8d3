//! Orchestration of a configured run and the emitted report.
//!
//! [`run_report`] executes ellipticity, the interior densities, the
//! boundary invariant, Finsler summaries and the discretization oracles in
//! that order. Compute modules parallelize internally with ordered
//! reductions, so a fixed configuration produces the same report apart from
//! the timestamp.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::algebra::c;
use crate::boundary::{compute_a1, phi0_cross_check, psi1_checked};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::finsler::{eigen_branches, finsler_metric, trajectory, write_trajectory_csv, FlowSample, FlowState};
use crate::interior::{check_a1, compute_a0, compute_a2, XiQuadrature};
use crate::oracle::{
    discretize, fit_heat_invariants, halfline_psi1, index_check, trace_of_spectrum, write_eigenvalues_csv,
    write_trace_csv, Geometry, HeatFit, IndexReport, OperatorKind,
};
use crate::symbol::{DiracSymbol, EllipticityVerdict};

/// Version of the report layout; bumped on any schema change.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// A reported number with either an uncertainty or an exactness flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quantity {
    pub value: f64,
    pub uncertainty: f64,
    pub exact: bool,
}

impl Quantity {
    pub fn estimate(value: f64, uncertainty: f64) -> Self {
        Self {
            value,
            uncertainty,
            exact: false,
        }
    }

    pub fn exact(value: f64) -> Self {
        Self {
            value,
            uncertainty: 0.0,
            exact: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool_version: String,
    /// SHA-256 of the canonical configuration text.
    pub config_hash: String,
    /// Seconds since the Unix epoch at report assembly.
    pub timestamp: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EllipticitySection {
    #[serde(flatten)]
    pub verdict: EllipticityVerdict,
    /// Set when the run continued past a failed check because of `--force`.
    pub forced: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct InteriorPointReport {
    pub x: Vec<f64>,
    pub weight: f64,
    pub a0: Quantity,
    /// Magnitude of the ξ-integrated first-order term, which should vanish.
    pub a1_residual: f64,
    pub a2: Quantity,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundarySection {
    /// Per-mesh-point densities `∫ dξ̂/π^{(n−1)/2} Ψ₁`.
    pub densities: Vec<f64>,
    pub contour_nodes: usize,
}

/// Agreement between two independent evaluations of one quantity.
#[derive(Debug, Clone, Serialize)]
pub struct CrossCheck {
    pub name: String,
    pub reference: f64,
    pub value: f64,
    pub delta: f64,
    /// Whether `delta` is relative to `|reference|` or absolute.
    pub relative: bool,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchSummary {
    pub index: usize,
    pub h: f64,
    pub multiplicity: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_contra: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub homogeneity_residual: Option<f64>,
    /// Why the metric is not available (degenerate or non-convex branch).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FinslerPointReport {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub branches: Vec<BranchSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowReport {
    pub branch: usize,
    pub steps: usize,
    pub dt: f64,
    pub h_initial: f64,
    /// Largest relative deviation of `h` from its initial value.
    pub h_drift: f64,
    #[serde(skip)]
    pub samples: Vec<FlowSample>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FinslerSection {
    pub points: Vec<FinslerPointReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleGeometryReport {
    pub geometry: Geometry,
    pub grid: usize,
    /// Fit of `(4πt)^{1/2} Tr e^{−tL}` on the Richardson-combined trace.
    pub fit: HeatFit,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<IndexReport>,
    #[serde(skip)]
    pub eigenvalues: Vec<f64>,
    #[serde(skip)]
    pub trace_samples: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Invariants {
    #[serde(rename = "A0", skip_serializing_if = "Option::is_none")]
    pub a0: Option<Quantity>,
    #[serde(rename = "A1", skip_serializing_if = "Option::is_none")]
    pub a1: Option<Quantity>,
    #[serde(rename = "A2", skip_serializing_if = "Option::is_none")]
    pub a2: Option<Quantity>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HeatInvariantReport {
    pub version: u32,
    pub provenance: Provenance,
    pub ellipticity: EllipticitySection,
    pub invariants: Invariants,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub interior: Vec<InteriorPointReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundarySection>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub cross_checks: Vec<CrossCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finsler: Option<FinslerSection>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub oracle: Vec<OracleGeometryReport>,
}

impl HeatInvariantReport {
    pub fn checks_passed(&self) -> bool {
        self.cross_checks.iter().all(|c| c.passed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// Which parts of the configuration a run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    All,
    Ellipticity,
    Finsler,
    Oracle,
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// Continue after a failed ellipticity check, recording the failure.
    pub force: bool,
    /// Overrides the configured cross-check tolerance.
    pub tol: Option<f64>,
    pub section: Section,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            force: false,
            tol: None,
            section: Section::All,
        }
    }
}

pub fn config_hash(cfg: &RunConfig) -> String {
    Sha256::digest(cfg.to_canonical_json().as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn provenance(cfg: &RunConfig) -> Provenance {
    Provenance {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash(cfg),
        timestamp: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    }
}

fn check(name: &str, reference: f64, value: f64, relative: bool, tolerance: f64) -> CrossCheck {
    let diff = (value - reference).abs();
    let delta = if relative {
        diff / reference.abs().max(f64::MIN_POSITIVE)
    } else {
        diff
    };
    CrossCheck {
        name: name.to_string(),
        reference,
        value,
        delta,
        relative,
        tolerance,
        passed: delta <= tolerance,
    }
}

/// Runs the configured computations. A failed ellipticity check aborts
/// with [`Error::Ellipticity`] carrying the witness unless `opts.force` is
/// set.
pub fn run_report(cfg: &RunConfig, opts: &RunOptions) -> Result<HeatInvariantReport> {
    let sym = cfg.symbol()?;
    let verdict = sym.ellipticity_check(&cfg.sample_spec())?;
    if !verdict.elliptic && !opts.force {
        return Err(Error::Ellipticity {
            min_eigenvalue: verdict.min_eigenvalue,
            x: verdict.witness_x.clone(),
            xi: verdict.witness_xi.clone(),
        });
    }
    let forced = !verdict.elliptic;
    let mut report = HeatInvariantReport {
        version: REPORT_SCHEMA_VERSION,
        provenance: provenance(cfg),
        ellipticity: EllipticitySection { verdict, forced },
        invariants: Invariants {
            a0: None,
            a1: None,
            a2: None,
        },
        interior: Vec::new(),
        boundary: None,
        cross_checks: Vec::new(),
        finsler: None,
        oracle: Vec::new(),
    };
    let all = opts.section == Section::All;
    if all {
        run_interior(cfg, &sym, &mut report)?;
        run_boundary(cfg, &sym, &mut report)?;
    }
    if all || opts.section == Section::Finsler {
        report.finsler = run_finsler(cfg, &sym)?;
    }
    if all || opts.section == Section::Oracle {
        run_oracle(cfg, &sym, opts, &mut report)?;
    }
    Ok(report)
}

fn run_interior(cfg: &RunConfig, sym: &DiracSymbol, report: &mut HeatInvariantReport) -> Result<()> {
    let Some(int) = &cfg.interior else {
        return Ok(());
    };
    let mut a0 = Quantity::estimate(0.0, 0.0);
    let mut a2 = Quantity::estimate(0.0, 0.0);
    for p in &int.points {
        let quad = XiQuadrature::for_symbol(sym, &p.x, int.xi_order)?;
        let v0 = compute_a0(sym, &p.x, &quad)?;
        let r1 = check_a1(sym, &p.x, &quad)?;
        let v2 = compute_a2(sym, &p.x, &quad, &sym.jets(&p.x)?, int.tau_order)?;
        a0.value += p.weight * v0.value;
        a0.uncertainty += p.weight.abs() * v0.error_estimate;
        a2.value += p.weight * v2.value;
        a2.uncertainty += p.weight.abs() * v2.error_estimate;
        report.interior.push(InteriorPointReport {
            x: p.x.clone(),
            weight: p.weight,
            a0: Quantity::estimate(v0.value, v0.error_estimate),
            a1_residual: r1,
            a2: Quantity::estimate(v2.value, v2.error_estimate),
            warnings: v0.warning.into_iter().chain(v2.warning).collect(),
        });
    }
    if !int.points.is_empty() {
        report.invariants.a0 = Some(a0);
        report.invariants.a2 = Some(a2);
    }
    Ok(())
}

/// Unit tangential covector used for single-split checks.
fn probe_xi_hat(n: usize) -> Vec<f64> {
    let mut xi = vec![0.0; n.saturating_sub(1)];
    if let Some(first) = xi.first_mut() {
        *first = 1.0;
    }
    xi
}

fn run_boundary(cfg: &RunConfig, sym: &DiracSymbol, report: &mut HeatInvariantReport) -> Result<()> {
    let Some(b) = &cfg.boundary else {
        return Ok(());
    };
    let mesh = b.mesh();
    let contour = b.contour();
    let a1 = compute_a1(sym, &mesh, b.xi_order, &contour)?;
    report.invariants.a1 = Some(Quantity::estimate(a1.value, a1.doubling_delta));
    report.boundary = Some(BoundarySection {
        densities: a1.densities,
        contour_nodes: contour.nodes,
    });
    let frame = &mesh.points[0].frame;
    let split = sym.boundary_split(frame, &probe_xi_hat(sym.n()))?;
    let delta = phi0_cross_check(&split, c(-1.0, 0.0))?;
    report.cross_checks.push(check(
        "phi0 residue vs quadrature",
        0.0,
        delta,
        false,
        cfg.tolerances.method,
    ));
    Ok(())
}

fn run_finsler(cfg: &RunConfig, sym: &DiracSymbol) -> Result<Option<FinslerSection>> {
    let Some(f) = &cfg.finsler else {
        return Ok(None);
    };
    let mut points = Vec::new();
    for p in &f.points {
        let branches = eigen_branches(sym, &p.x, &p.xi)?;
        let summaries = branches
            .iter()
            .enumerate()
            .map(|(k, br)| match finsler_metric(sym, &p.x, &p.xi, k) {
                Ok(fb) => BranchSummary {
                    index: k,
                    h: fb.h,
                    multiplicity: fb.multiplicity,
                    g_contra: Some(fb.g_contra),
                    homogeneity_residual: Some(fb.homogeneity_residual),
                    error: None,
                },
                Err(e) => BranchSummary {
                    index: k,
                    h: br.value,
                    multiplicity: br.multiplicity,
                    g_contra: None,
                    homogeneity_residual: None,
                    error: Some(e.to_string()),
                },
            })
            .collect();
        points.push(FinslerPointReport {
            x: p.x.clone(),
            xi: p.xi.clone(),
            branches: summaries,
        });
    }
    let flow = match &f.flow {
        Some(fl) => {
            let start = FlowState {
                x: fl.x.clone(),
                xi: fl.xi.clone(),
                branch: fl.branch,
                t: 0.0,
            };
            let samples = trajectory(sym, &start, fl.dt, fl.steps)?;
            let h0 = samples[0].h;
            let drift = samples
                .iter()
                .map(|s| (s.h - h0).abs() / h0.abs().max(f64::MIN_POSITIVE))
                .fold(0.0, f64::max);
            Some(FlowReport {
                branch: fl.branch,
                steps: fl.steps,
                dt: fl.dt,
                h_initial: h0,
                h_drift: drift,
                samples,
            })
        }
        None => None,
    };
    Ok(Some(FinslerSection { points, flow }))
}

fn run_oracle(cfg: &RunConfig, sym: &DiracSymbol, opts: &RunOptions, report: &mut HeatInvariantReport) -> Result<()> {
    let Some(o) = &cfg.oracle else {
        return Ok(());
    };
    for &geometry in &o.geometries {
        let coarse = discretize(sym, geometry, o.grid, OperatorKind::Laplacian)?;
        let fine = discretize(sym, geometry, 2 * o.grid, OperatorKind::Laplacian)?;
        let spec = o.fit_spec(geometry);
        let fit = fit_heat_invariants(&coarse, Some(&fine), &spec)?;
        let eigenvalues = fine.eigenvalues()?.to_vec();
        let trace_samples = fit
            .t_grid
            .iter()
            .map(|&t| (t, trace_of_spectrum(&eigenvalues, t)))
            .collect();
        let index = match geometry {
            Geometry::Circle { .. } if o.index => Some(index_check(sym, geometry, o.grid)?),
            _ => None,
        };
        report.oracle.push(OracleGeometryReport {
            geometry,
            grid: o.grid,
            fit,
            index,
            eigenvalues,
            trace_samples,
        });
    }
    if let (Some(h), Some(b)) = (&o.halfline, &cfg.boundary) {
        let split = sym.boundary_split(&b.mesh().points[h.mesh_point].frame, &h.xi_hat)?;
        let contour = psi1_checked(&split, &b.contour())?;
        let oracle = halfline_psi1(&split, &h.spec())?;
        let tol = opts.tol.unwrap_or(cfg.tolerances.cross_check);
        report.cross_checks.push(check(
            "psi1 contour vs half-line oracle",
            oracle.psi1,
            contour.value,
            true,
            tol,
        ));
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_report(report: &HeatInvariantReport, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(report.to_json().as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes the CSV sidecars named in the output section: eigenvalues and
/// trace samples of the first oracle geometry, and the flow trajectory.
pub fn write_sidecars(report: &HeatInvariantReport, cfg: &RunConfig) -> Result<Vec<String>> {
    let mut written = Vec::new();
    let out = &cfg.output;
    if let (Some(p), Some(g)) = (&out.eigenvalues_csv, report.oracle.first()) {
        write_eigenvalues_csv(create(Path::new(p))?, &g.eigenvalues)?;
        written.push(p.clone());
    }
    if let (Some(p), Some(g)) = (&out.trace_csv, report.oracle.first()) {
        write_trace_csv(create(Path::new(p))?, &g.trace_samples)?;
        written.push(p.clone());
    }
    if let (Some(p), Some(flow)) = (
        &out.trajectory_csv,
        report.finsler.as_ref().and_then(|f| f.flow.as_ref()),
    ) {
        write_trajectory_csv(create(Path::new(p))?, &flow.samples)?;
        written.push(p.clone());
    }
    Ok(written)
}

/// Process exit code for an error: 2 for configuration problems, 3 for
/// ellipticity aborts, 1 for any other computation failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Json(_) | Error::Validation(_) => 2,
        Error::Ellipticity { .. } | Error::BoundaryEllipticity(_) => 3,
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::validate_config;

    const PAULI_XY: &str = r#"[[[[0, 0], [1, 0]], [[1, 0], [0, 0]]], [[[0, 0], [0, -1]], [[0, 1], [0, 0]]]]"#;

    fn config(extra: &str) -> RunConfig {
        let raw = format!(
            r#"{{"operator": {{"n": 2, "N": 2, "domain": {{"lo": [-2, -2], "hi": [2, 2]}}, "gamma": {PAULI_XY}}},
                "ellipticity": {{"directions": 64, "grid_per_axis": 3}}{extra}}}"#
        );
        validate_config(&raw).unwrap()
    }

    fn without_timestamp(r: &HeatInvariantReport) -> String {
        let mut v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        v["provenance"].as_object_mut().unwrap().remove("timestamp");
        v.to_string()
    }

    #[test]
    fn identical_configs_give_identical_reports() {
        let cfg = config(
            r#", "interior": {"points": [{"x": [0.1, 0.2], "weight": 0.5}], "xi_order": 8},
                "boundary": {"mesh": [{"point": [0, 0], "dr": [1, 0], "dxhat": [[0, 1]]}], "xi_order": 8},
                "finsler": {"points": [{"x": [0, 0], "xi": [1, 2]}]}"#,
        );
        let a = run_report(&cfg, &RunOptions::default()).unwrap();
        let b = run_report(&cfg, &RunOptions::default()).unwrap();
        assert_eq!(without_timestamp(&a), without_timestamp(&b));
        assert_eq!(a.version, REPORT_SCHEMA_VERSION);
        assert_eq!(a.provenance.config_hash.len(), 64);
        let a0 = a.invariants.a0.unwrap();
        assert!((a0.value - 1.0).abs() < 1e-10, "{a0:?}");
        let a1 = a.invariants.a1.unwrap();
        assert!((a1.value + std::f64::consts::PI.sqrt()).abs() < 1e-8, "{a1:?}");
        assert!(a.checks_passed());
        assert_eq!(a.finsler.unwrap().points[0].branches.len(), 1);
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = config("");
        let b = config(r#", "tolerances": {"cross_check": 0.02}"#);
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
        assert_ne!(config_hash(&a), config_hash(&b));
    }

    #[test]
    fn degenerate_symbol_aborts_with_witness() {
        let raw = r#"{"operator": {"n": 2, "N": 2, "gamma": [
            [[[1, 0], [0, 0]], [[0, 0], [-1, 0]]], [[[1, 0], [0, 0]], [[0, 0], [-1, 0]]]]}}"#;
        let cfg = validate_config(raw).unwrap();
        let err = run_report(&cfg, &RunOptions::default()).unwrap_err();
        match &err {
            Error::Ellipticity { xi, .. } => {
                assert!((xi[0] + xi[1]).abs() < 1e-6, "witness {xi:?} not along (1, -1)");
            }
            other => panic!("unexpected error {other}"),
        }
        assert_eq!(exit_code(&err), 3);
        let forced = run_report(
            &cfg,
            &RunOptions {
                force: true,
                ..RunOptions::default()
            },
        )
        .unwrap();
        assert!(forced.ellipticity.forced);
        assert!(!forced.ellipticity.verdict.elliptic);
    }

    #[test]
    fn sections_select_work() {
        let cfg = config(r#", "interior": {"points": [{"x": [0, 0]}], "xi_order": 8}"#);
        let r = run_report(
            &cfg,
            &RunOptions {
                section: Section::Ellipticity,
                ..RunOptions::default()
            },
        )
        .unwrap();
        assert!(r.interior.is_empty());
        assert!(r.invariants.a0.is_none());
        assert!(r.ellipticity.verdict.elliptic);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::BoundaryEllipticity("x".into())), 3);
        assert_eq!(exit_code(&Error::Convergence("x".into())), 1);
    }

    #[test]
    fn failed_cross_check_is_recorded() {
        let c = check("x", 1.0, 1.1, true, 0.01);
        assert!(!c.passed);
        assert!((c.delta - 0.1).abs() < 1e-12);
        assert!(check("y", 0.0, 1e-9, false, 1e-6).passed);
    }

    #[test]
    fn exact_quantities_have_no_uncertainty() {
        let q = Quantity::exact(2.0);
        assert!(q.exact && q.uncertainty == 0.0);
    }
}
