//! Run configuration: JSON ingestion with full validation and canonical
//! emission.
//!
//! Complex numbers are `[re, im]` pairs and matrices are row-major nested
//! arrays of them. A coefficient field is either a bare matrix (constant),
//! `{"polynomial": {"i,j": matrix, ...}}` keyed by the multi-index
//! exponent, or `{"terms": [{"exponent": [...], "matrix": ..., "wave":
//! {"kind": "cos", "k": [...]}}]}`. Emission always uses the `terms` form.
//!
//! [`validate_config`] walks the whole document and reports every problem
//! with its field path instead of stopping at the first one.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::algebra::{c, identity, CMatrix};
use crate::boundary::{BoundaryMesh, BoundaryPoint, ContourSpec, Phi0Method};
use crate::error::Result;
use crate::field::{MatrixField, Term, Wave, WaveKind};
use crate::interior::{DEFAULT_TAU_ORDER, DEFAULT_XI_ORDER};
use crate::oracle::{FitSpec, Geometry, HalflineSpec, MIN_GRID};
use crate::symbol::{BoundaryFrame, DiracSymbol, DomainBox, SampleSpec};

/// Largest total degree accepted in polynomial coefficient tables.
pub const MAX_POLYNOMIAL_DEGREE: u32 = 4;

/// One validation problem, addressed by its JSON field path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// A complex matrix as row-major `[re, im]` entries.
pub type MatrixSpec = Vec<Vec<[f64; 2]>>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermSpec {
    pub exponent: Vec<u32>,
    pub matrix: MatrixSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wave: Option<Wave>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldSpec {
    pub terms: Vec<TermSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorConfig {
    pub n: usize,
    #[serde(rename = "N")]
    pub fiber: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainConfig>,
    pub gamma: Vec<FieldSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<FieldSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub connection: Option<Vec<FieldSpec>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub potential: Option<FieldSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InteriorPointConfig {
    pub x: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InteriorConfig {
    pub points: Vec<InteriorPointConfig>,
    pub xi_order: usize,
    pub tau_order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeshPointConfig {
    pub point: Vec<f64>,
    pub weight: f64,
    pub dr: Vec<f64>,
    pub dxhat: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContourConfig {
    pub nodes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abscissa: Option<f64>,
    pub method: Phi0Method,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryConfig {
    pub mesh: Vec<MeshPointConfig>,
    pub xi_order: usize,
    pub contour: ContourConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EllipticityConfig {
    pub directions: usize,
    pub grid_per_axis: usize,
    pub threshold: f64,
    pub refine: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinslerPointConfig {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowConfig {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub branch: usize,
    pub dt: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinslerConfig {
    pub points: Vec<FinslerPointConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HalflineConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    pub step: f64,
    pub bulk_points: usize,
    /// Index into the boundary mesh of the point whose split is checked.
    pub mesh_point: usize,
    pub xi_hat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleConfig {
    pub geometries: Vec<Geometry>,
    pub grid: usize,
    pub index: bool,
    /// Fit window `[t_min, t_max]`; defaults depend on the geometry.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_window: Option<[f64; 2]>,
    /// Highest fitted power `k` of `t^{k/2}`; defaults depend on the geometry.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub halfline: Option<HalflineConfig>,
}

impl OracleConfig {
    /// Fit controls for one geometry with the configured overrides applied.
    pub fn fit_spec(&self, geometry: Geometry) -> FitSpec {
        let mut spec = FitSpec::default_for(geometry, self.grid);
        if let Some([lo, hi]) = self.t_window {
            spec.t_min = lo;
            spec.t_max = hi;
        }
        if let Some(k) = self.k_max {
            spec.k_max = k;
        }
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tolerances {
    /// Relative agreement required between the contour Ψ₁ and the
    /// half-line oracle.
    pub cross_check: f64,
    /// Absolute agreement required between Φ₀ evaluation methods.
    pub method: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            cross_check: 0.01,
            method: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eigenvalues_csv: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_csv: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory_csv: Option<String>,
}

/// A fully validated run configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub operator: OperatorConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interior: Option<InteriorConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundaryConfig>,
    pub ellipticity: EllipticityConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finsler: Option<FinslerConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleConfig>,
    pub tolerances: Tolerances,
    pub output: OutputConfig,
}

/// Parses and validates raw JSON text, collecting every error.
pub fn validate_config(raw: &str) -> std::result::Result<RunConfig, Vec<ConfigError>> {
    let value: Value = serde_json::from_str(raw).map_err(|e| {
        vec![ConfigError {
            path: format!("line {}, column {}", e.line(), e.column()),
            message: e.to_string(),
        }]
    })?;
    let mut w = Walker::default();
    let cfg = w.run_config(&value);
    match cfg {
        Some(cfg) if w.errors.is_empty() => Ok(cfg),
        _ => {
            if w.errors.is_empty() {
                w.err("$", "invalid configuration");
            }
            Err(w.errors)
        }
    }
}

impl RunConfig {
    /// Canonical JSON text; parsing it again yields an equal config.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn symbol(&self) -> Result<DiracSymbol> {
        let op = &self.operator;
        let (n, dim) = (op.n, op.fiber);
        let gamma = op
            .gamma
            .iter()
            .map(|f| f.to_field(n, dim))
            .collect::<Result<Vec<_>>>()?;
        let rho = match &op.rho {
            Some(f) => f.to_field(n, dim)?,
            None => MatrixField::constant(n, identity(dim)),
        };
        let conn = match &op.connection {
            Some(fs) => fs.iter().map(|f| f.to_field(n, dim)).collect::<Result<Vec<_>>>()?,
            None => (0..n).map(|_| MatrixField::zero(n, dim)).collect(),
        };
        let domain = match &op.domain {
            Some(d) => DomainBox::new(d.lo.clone(), d.hi.clone())?,
            None => DomainBox::unbounded(n),
        };
        let sym = DiracSymbol::new(gamma, rho, conn, domain)?;
        match &op.potential {
            Some(v) => sym.with_potential(v.to_field(n, dim)?),
            None => Ok(sym),
        }
    }

    pub fn sample_spec(&self) -> SampleSpec {
        SampleSpec {
            directions: self.ellipticity.directions,
            grid_per_axis: self.ellipticity.grid_per_axis,
            threshold: self.ellipticity.threshold,
            refine: self.ellipticity.refine,
        }
    }
}

impl FieldSpec {
    pub fn constant(m: &CMatrix, n: usize) -> Self {
        Self {
            terms: vec![TermSpec {
                exponent: vec![0; n],
                matrix: matrix_spec(m),
                wave: None,
            }],
        }
    }

    pub fn to_field(&self, n: usize, dim: usize) -> Result<MatrixField> {
        let terms = self
            .terms
            .iter()
            .map(|t| Term {
                coeff: matrix_from_spec(&t.matrix),
                exponent: t.exponent.clone(),
                wave: t.wave.clone(),
            })
            .collect();
        MatrixField::series(n, dim, terms)
    }
}

impl BoundaryConfig {
    pub fn mesh(&self) -> BoundaryMesh {
        BoundaryMesh {
            points: self
                .mesh
                .iter()
                .map(|p| BoundaryPoint {
                    frame: BoundaryFrame {
                        point: p.point.clone(),
                        dr: p.dr.clone(),
                        dxhat: p.dxhat.clone(),
                    },
                    weight: p.weight,
                })
                .collect(),
        }
    }

    pub fn contour(&self) -> ContourSpec {
        ContourSpec {
            nodes: self.contour.nodes,
            mu: self.contour.mu,
            abscissa: self.contour.abscissa,
            method: self.contour.method,
        }
    }
}

impl HalflineConfig {
    pub fn spec(&self) -> HalflineSpec {
        HalflineSpec {
            radius: self.radius,
            step: self.step,
            bulk_points: self.bulk_points,
        }
    }
}

pub fn matrix_spec(m: &CMatrix) -> MatrixSpec {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

pub fn matrix_from_spec(spec: &MatrixSpec) -> CMatrix {
    let rows = spec.len();
    let cols = spec.first().map_or(0, |r| r.len());
    CMatrix::from_fn(rows, cols, |i, j| c(spec[i][j][0], spec[i][j][1]))
}

/// Path-tracking validator. Each reader records a problem and returns
/// `None` instead of aborting, so one pass reports everything.
#[derive(Default)]
struct Walker {
    errors: Vec<ConfigError>,
}

fn join(path: &str, key: &str) -> String {
    format!("{path}.{key}")
}

fn index(path: &str, i: usize) -> String {
    format!("{path}[{i}]")
}

impl Walker {
    fn err(&mut self, path: &str, message: impl Into<String>) {
        self.errors.push(ConfigError {
            path: path.to_string(),
            message: message.into(),
        });
    }

    fn object<'a>(&mut self, v: &'a Value, path: &str, allowed: &[&str]) -> Option<&'a Map<String, Value>> {
        let Some(m) = v.as_object() else {
            self.err(path, "expected an object");
            return None;
        };
        for key in m.keys() {
            if !allowed.contains(&key.as_str()) {
                self.err(
                    &join(path, key),
                    format!("unknown field (allowed: {})", allowed.join(", ")),
                );
            }
        }
        Some(m)
    }

    fn required<'a>(&mut self, m: &'a Map<String, Value>, key: &str, path: &str) -> Option<&'a Value> {
        let v = m.get(key);
        if v.is_none() {
            self.err(&join(path, key), "missing required field");
        }
        v
    }

    fn number(&mut self, v: &Value, path: &str) -> Option<f64> {
        match v.as_f64() {
            Some(x) if x.is_finite() => Some(x),
            _ => {
                self.err(path, "expected a finite number");
                None
            }
        }
    }

    fn count(&mut self, v: &Value, path: &str) -> Option<usize> {
        match v.as_u64() {
            Some(x) => Some(x as usize),
            None => {
                self.err(path, "expected a non-negative integer");
                None
            }
        }
    }

    fn boolean(&mut self, v: &Value, path: &str) -> Option<bool> {
        let b = v.as_bool();
        if b.is_none() {
            self.err(path, "expected true or false");
        }
        b
    }

    fn string(&mut self, v: &Value, path: &str) -> Option<String> {
        let s = v.as_str().map(str::to_string);
        if s.is_none() {
            self.err(path, "expected a string");
        }
        s
    }

    fn array<'a>(&mut self, v: &'a Value, path: &str) -> Option<&'a Vec<Value>> {
        let a = v.as_array();
        if a.is_none() {
            self.err(path, "expected an array");
        }
        a
    }

    fn opt_number(&mut self, m: &Map<String, Value>, key: &str, path: &str, default: f64) -> Option<f64> {
        match m.get(key) {
            Some(v) => self.number(v, &join(path, key)),
            None => Some(default),
        }
    }

    fn opt_count(&mut self, m: &Map<String, Value>, key: &str, path: &str, default: usize) -> Option<usize> {
        match m.get(key) {
            Some(v) => self.count(v, &join(path, key)),
            None => Some(default),
        }
    }

    fn opt_bool(&mut self, m: &Map<String, Value>, key: &str, path: &str, default: bool) -> Option<bool> {
        match m.get(key) {
            Some(v) => self.boolean(v, &join(path, key)),
            None => Some(default),
        }
    }

    fn positive(&mut self, x: Option<f64>, path: &str) -> Option<f64> {
        match x {
            Some(v) if v > 0.0 => Some(v),
            Some(v) => {
                self.err(path, format!("must be positive, got {v}"));
                None
            }
            None => None,
        }
    }

    /// Real vector, optionally with a required length.
    fn vector(&mut self, v: &Value, path: &str, len: Option<usize>) -> Option<Vec<f64>> {
        let a = self.array(v, path)?;
        if let Some(l) = len {
            if a.len() != l {
                self.err(path, format!("expected {l} components, got {}", a.len()));
                return None;
            }
        }
        let out: Vec<Option<f64>> = a
            .iter()
            .enumerate()
            .map(|(i, x)| self.number(x, &index(path, i)))
            .collect();
        out.into_iter().collect()
    }

    fn complex(&mut self, v: &Value, path: &str) -> Option<[f64; 2]> {
        match v.as_array() {
            Some(p) if p.len() == 2 => {
                let re = self.number(&p[0], &index(path, 0));
                let im = self.number(&p[1], &index(path, 1));
                Some([re?, im?])
            }
            _ => {
                self.err(path, "complex entry must be an [re, im] pair");
                None
            }
        }
    }

    fn matrix(&mut self, v: &Value, path: &str, dim: usize) -> Option<MatrixSpec> {
        let rows = self.array(v, path)?;
        if rows.len() != dim {
            self.err(path, format!("expected {dim} rows, got {}", rows.len()));
        }
        let mut ok = rows.len() == dim;
        let mut out = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            let rp = index(path, i);
            let Some(entries) = self.array(row, &rp) else {
                ok = false;
                continue;
            };
            if entries.len() != dim {
                self.err(&rp, format!("row length {} != N = {dim}", entries.len()));
                ok = false;
            }
            let parsed: Vec<Option<[f64; 2]>> = entries
                .iter()
                .enumerate()
                .map(|(j, e)| self.complex(e, &index(&rp, j)))
                .collect();
            match parsed.into_iter().collect::<Option<Vec<_>>>() {
                Some(r) => out.push(r),
                None => ok = false,
            }
        }
        ok.then_some(out)
    }

    fn exponent(&mut self, v: &Value, path: &str, n: usize) -> Option<Vec<u32>> {
        let a = self.array(v, path)?;
        if a.len() != n {
            self.err(path, format!("multi-index has {} entries, expected n = {n}", a.len()));
            return None;
        }
        let e: Option<Vec<u32>> = a
            .iter()
            .enumerate()
            .map(|(i, x)| self.count(x, &index(path, i)).map(|v| v as u32))
            .collect::<Vec<_>>()
            .into_iter()
            .collect();
        self.degree_ok(e, path)
    }

    fn degree_ok(&mut self, e: Option<Vec<u32>>, path: &str) -> Option<Vec<u32>> {
        let e = e?;
        let deg: u32 = e.iter().sum();
        if deg > MAX_POLYNOMIAL_DEGREE {
            self.err(path, format!("total degree {deg} exceeds {MAX_POLYNOMIAL_DEGREE}"));
            return None;
        }
        Some(e)
    }

    fn wave(&mut self, v: &Value, path: &str, n: usize) -> Option<Wave> {
        let m = self.object(v, path, &["kind", "k"])?;
        let kind = match self.required(m, "kind", path).map(|k| k.as_str()) {
            Some(Some("cos")) => Some(WaveKind::Cos),
            Some(Some("sin")) => Some(WaveKind::Sin),
            Some(_) => {
                self.err(&join(path, "kind"), "expected \"cos\" or \"sin\"");
                None
            }
            None => None,
        };
        let k = self
            .required(m, "k", path)
            .and_then(|k| self.vector(k, &join(path, "k"), Some(n)));
        Some(Wave { kind: kind?, k: k? })
    }

    fn field(&mut self, v: &Value, path: &str, n: usize, dim: usize) -> Option<FieldSpec> {
        if v.is_array() {
            let m = self.matrix(v, path, dim)?;
            return Some(FieldSpec {
                terms: vec![TermSpec {
                    exponent: vec![0; n],
                    matrix: m,
                    wave: None,
                }],
            });
        }
        let m = self.object(v, path, &["polynomial", "terms"])?;
        match (m.get("polynomial"), m.get("terms")) {
            (Some(p), None) => self.polynomial(p, &join(path, "polynomial"), n, dim),
            (None, Some(t)) => self.terms(t, &join(path, "terms"), n, dim),
            _ => {
                self.err(path, "field needs exactly one of \"polynomial\" or \"terms\"");
                None
            }
        }
    }

    fn polynomial(&mut self, v: &Value, path: &str, n: usize, dim: usize) -> Option<FieldSpec> {
        let Some(table) = v.as_object() else {
            self.err(path, "expected an object mapping multi-index exponents to matrices");
            return None;
        };
        let mut sorted: BTreeMap<Vec<u32>, MatrixSpec> = BTreeMap::new();
        let mut ok = true;
        for (key, mv) in table {
            let kp = join(path, key);
            let parsed: std::result::Result<Vec<u32>, _> = key.split(',').map(|s| s.trim().parse::<u32>()).collect();
            let e = match parsed {
                Ok(e) if e.len() == n => self.degree_ok(Some(e), &kp),
                _ => {
                    self.err(&kp, format!("key must be {n} comma-separated non-negative integers"));
                    None
                }
            };
            let m = self.matrix(mv, &kp, dim);
            match (e, m) {
                (Some(e), Some(m)) => {
                    if sorted.insert(e, m).is_some() {
                        self.err(&kp, "duplicate multi-index");
                        ok = false;
                    }
                }
                _ => ok = false,
            }
        }
        ok.then(|| FieldSpec {
            terms: sorted
                .into_iter()
                .map(|(exponent, matrix)| TermSpec {
                    exponent,
                    matrix,
                    wave: None,
                })
                .collect(),
        })
    }

    fn terms(&mut self, v: &Value, path: &str, n: usize, dim: usize) -> Option<FieldSpec> {
        let list = self.array(v, path)?;
        let mut ok = true;
        let mut terms = Vec::new();
        for (i, t) in list.iter().enumerate() {
            let tp = index(path, i);
            let Some(m) = self.object(t, &tp, &["exponent", "matrix", "wave"]) else {
                ok = false;
                continue;
            };
            let exponent = match m.get("exponent") {
                Some(e) => self.exponent(e, &join(&tp, "exponent"), n),
                None => Some(vec![0; n]),
            };
            let matrix = self
                .required(m, "matrix", &tp)
                .and_then(|mv| self.matrix(mv, &join(&tp, "matrix"), dim));
            let wave = match m.get("wave") {
                Some(wv) => self.wave(wv, &join(&tp, "wave"), n).map(Some),
                None => Some(None),
            };
            match (exponent, matrix, wave) {
                (Some(exponent), Some(matrix), Some(wave)) => terms.push(TermSpec { exponent, matrix, wave }),
                _ => ok = false,
            }
        }
        ok.then_some(FieldSpec { terms })
    }

    fn field_list(&mut self, v: &Value, path: &str, n: usize, dim: usize) -> Option<Vec<FieldSpec>> {
        let list = self.array(v, path)?;
        if list.len() != n {
            self.err(path, format!("expected n = {n} fields, got {}", list.len()));
        }
        let fields: Vec<Option<FieldSpec>> = list
            .iter()
            .enumerate()
            .map(|(i, f)| self.field(f, &index(path, i), n, dim))
            .collect();
        let fields: Option<Vec<FieldSpec>> = fields.into_iter().collect();
        if list.len() != n {
            return None;
        }
        fields
    }

    fn operator(&mut self, v: &Value, path: &str) -> Option<OperatorConfig> {
        let m = self.object(
            v,
            path,
            &["n", "N", "domain", "gamma", "rho", "connection", "potential"],
        )?;
        let n = self
            .required(m, "n", path)
            .and_then(|x| self.count(x, &join(path, "n")));
        let dim = self
            .required(m, "N", path)
            .and_then(|x| self.count(x, &join(path, "N")));
        if n == Some(0) {
            self.err(&join(path, "n"), "must be at least 1");
        }
        if dim == Some(0) {
            self.err(&join(path, "N"), "must be at least 1");
        }
        let (n, dim) = match (n, dim) {
            (Some(n), Some(d)) if n > 0 && d > 0 => (n, d),
            _ => return None,
        };
        let domain = match m.get("domain") {
            Some(d) => self.domain(d, &join(path, "domain"), n).map(Some),
            None => Some(None),
        };
        let gamma = self
            .required(m, "gamma", path)
            .and_then(|g| self.field_list(g, &join(path, "gamma"), n, dim));
        let rho = match m.get("rho") {
            Some(f) => self.field(f, &join(path, "rho"), n, dim).map(Some),
            None => Some(None),
        };
        let connection = match m.get("connection") {
            Some(f) => self.field_list(f, &join(path, "connection"), n, dim).map(Some),
            None => Some(None),
        };
        let potential = match m.get("potential") {
            Some(f) => self.field(f, &join(path, "potential"), n, dim).map(Some),
            None => Some(None),
        };
        Some(OperatorConfig {
            n,
            fiber: dim,
            domain: domain?,
            gamma: gamma?,
            rho: rho?,
            connection: connection?,
            potential: potential?,
        })
    }

    fn domain(&mut self, v: &Value, path: &str, n: usize) -> Option<DomainConfig> {
        let m = self.object(v, path, &["lo", "hi"])?;
        let lo = self
            .required(m, "lo", path)
            .and_then(|x| self.vector(x, &join(path, "lo"), Some(n)));
        let hi = self
            .required(m, "hi", path)
            .and_then(|x| self.vector(x, &join(path, "hi"), Some(n)));
        let (lo, hi) = (lo?, hi?);
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            self.err(path, "need lo < hi in every coordinate");
            return None;
        }
        Some(DomainConfig { lo, hi })
    }

    fn interior(&mut self, v: &Value, path: &str, n: usize) -> Option<InteriorConfig> {
        let m = self.object(v, path, &["points", "xi_order", "tau_order"])?;
        let pp = join(path, "points");
        let points = self
            .required(m, "points", path)
            .and_then(|p| self.array(p, &pp))
            .map(|list| {
                list.iter()
                    .enumerate()
                    .map(|(i, p)| {
                        let ip = index(&pp, i);
                        let pm = self.object(p, &ip, &["x", "weight"])?;
                        let x = self
                            .required(pm, "x", &ip)
                            .and_then(|x| self.vector(x, &join(&ip, "x"), Some(n)));
                        let weight = self.opt_number(pm, "weight", &ip, 1.0);
                        Some(InteriorPointConfig { x: x?, weight: weight? })
                    })
                    .collect::<Vec<_>>()
            });
        let xi_order = self.opt_count(m, "xi_order", path, DEFAULT_XI_ORDER);
        let tau_order = self.opt_count(m, "tau_order", path, DEFAULT_TAU_ORDER);
        self.at_least(xi_order, 2, &join(path, "xi_order"));
        self.at_least(tau_order, 2, &join(path, "tau_order"));
        Some(InteriorConfig {
            points: points?.into_iter().collect::<Option<Vec<_>>>()?,
            xi_order: xi_order?,
            tau_order: tau_order?,
        })
    }

    fn at_least(&mut self, v: Option<usize>, min: usize, path: &str) {
        if let Some(v) = v {
            if v < min {
                self.err(path, format!("must be at least {min}, got {v}"));
            }
        }
    }

    fn boundary(&mut self, v: &Value, path: &str, n: usize) -> Option<BoundaryConfig> {
        let m = self.object(v, path, &["mesh", "xi_order", "contour"])?;
        let mp = join(path, "mesh");
        let mesh = self
            .required(m, "mesh", path)
            .and_then(|p| self.array(p, &mp))
            .map(|list| {
                list.iter()
                    .enumerate()
                    .map(|(i, p)| self.mesh_point(p, &index(&mp, i), n))
                    .collect::<Vec<_>>()
            });
        if let Some(list) = &mesh {
            if list.is_empty() {
                self.err(&mp, "boundary mesh is empty");
            }
        }
        let xi_order = self.opt_count(m, "xi_order", path, DEFAULT_XI_ORDER);
        self.at_least(xi_order, 2, &join(path, "xi_order"));
        let contour = match m.get("contour") {
            Some(cv) => self.contour(cv, &join(path, "contour")),
            None => {
                let d = ContourSpec::default();
                Some(ContourConfig {
                    nodes: d.nodes,
                    mu: d.mu,
                    abscissa: d.abscissa,
                    method: d.method,
                })
            }
        };
        Some(BoundaryConfig {
            mesh: mesh?.into_iter().collect::<Option<Vec<_>>>()?,
            xi_order: xi_order?,
            contour: contour?,
        })
    }

    fn mesh_point(&mut self, v: &Value, path: &str, n: usize) -> Option<MeshPointConfig> {
        let m = self.object(v, path, &["point", "weight", "dr", "dxhat"])?;
        let point = self
            .required(m, "point", path)
            .and_then(|x| self.vector(x, &join(path, "point"), Some(n)));
        let weight = self.opt_number(m, "weight", path, 1.0);
        let dr = self
            .required(m, "dr", path)
            .and_then(|x| self.vector(x, &join(path, "dr"), Some(n)));
        let dp = join(path, "dxhat");
        let dxhat = match m.get("dxhat") {
            Some(d) => self.array(d, &dp).and_then(|list| {
                if list.len() != n - 1 {
                    self.err(
                        &dp,
                        format!("expected n − 1 = {} tangential covectors, got {}", n - 1, list.len()),
                    );
                    return None;
                }
                list.iter()
                    .enumerate()
                    .map(|(i, x)| self.vector(x, &index(&dp, i), Some(n)))
                    .collect::<Vec<_>>()
                    .into_iter()
                    .collect()
            }),
            None if n == 1 => Some(Vec::new()),
            None => {
                self.err(&dp, "missing required field");
                None
            }
        };
        if let Some(d) = &dr {
            if d.iter().all(|v| *v == 0.0) {
                self.err(&join(path, "dr"), "normal covector must be non-zero");
            }
        }
        Some(MeshPointConfig {
            point: point?,
            weight: weight?,
            dr: dr?,
            dxhat: dxhat?,
        })
    }

    fn contour(&mut self, v: &Value, path: &str) -> Option<ContourConfig> {
        let m = self.object(v, path, &["nodes", "mu", "abscissa", "method"])?;
        let d = ContourSpec::default();
        let nodes = self.opt_count(m, "nodes", path, d.nodes);
        if let Some(k) = nodes {
            if k < 4 || k % 2 != 0 {
                self.err(&join(path, "nodes"), format!("must be even and at least 4, got {k}"));
            }
        }
        let mu = match m.get("mu") {
            Some(x) => {
                let v = self.number(x, &join(path, "mu"));
                self.positive(v, &join(path, "mu")).map(Some)
            }
            None => Some(None),
        };
        let abscissa = match m.get("abscissa") {
            Some(x) => match self.number(x, &join(path, "abscissa")) {
                Some(w) if w < 0.0 => Some(Some(w)),
                Some(w) => {
                    self.err(&join(path, "abscissa"), format!("must be negative, got {w}"));
                    None
                }
                None => None,
            },
            None => Some(None),
        };
        let method = match m.get("method") {
            Some(x) => match serde_json::from_value::<Phi0Method>(x.clone()) {
                Ok(mm) => Some(mm),
                Err(_) => {
                    self.err(
                        &join(path, "method"),
                        "expected \"residue\", \"quadrature\" or \"closed-form\"",
                    );
                    None
                }
            },
            None => Some(d.method),
        };
        Some(ContourConfig {
            nodes: nodes?,
            mu: mu?,
            abscissa: abscissa?,
            method: method?,
        })
    }

    fn ellipticity(&mut self, v: Option<&Value>, path: &str) -> Option<EllipticityConfig> {
        let d = SampleSpec::default();
        let empty = Map::new();
        let m = match v {
            Some(v) => self.object(v, path, &["directions", "grid_per_axis", "threshold", "refine"])?,
            None => &empty,
        };
        let directions = self.opt_count(m, "directions", path, d.directions);
        let grid = self.opt_count(m, "grid_per_axis", path, d.grid_per_axis);
        self.at_least(directions, 1, &join(path, "directions"));
        self.at_least(grid, 1, &join(path, "grid_per_axis"));
        let threshold = self.opt_number(m, "threshold", path, d.threshold);
        let refine = self.opt_bool(m, "refine", path, d.refine);
        Some(EllipticityConfig {
            directions: directions?,
            grid_per_axis: grid?,
            threshold: threshold?,
            refine: refine?,
        })
    }

    fn covector(&mut self, m: &Map<String, Value>, key: &str, path: &str, n: usize) -> Option<Vec<f64>> {
        let v = self
            .required(m, key, path)
            .and_then(|x| self.vector(x, &join(path, key), Some(n)))?;
        if key == "xi" && v.iter().all(|x| *x == 0.0) {
            self.err(&join(path, key), "covector must be non-zero");
            return None;
        }
        Some(v)
    }

    fn finsler(&mut self, v: &Value, path: &str, n: usize, dim: usize) -> Option<FinslerConfig> {
        let m = self.object(v, path, &["points", "flow"])?;
        let pp = join(path, "points");
        let points = match m.get("points") {
            Some(p) => self.array(p, &pp).map(|list| {
                list.iter()
                    .enumerate()
                    .map(|(i, p)| {
                        let ip = index(&pp, i);
                        let pm = self.object(p, &ip, &["x", "xi"])?;
                        let x = self.covector(pm, "x", &ip, n);
                        let xi = self.covector(pm, "xi", &ip, n);
                        Some(FinslerPointConfig { x: x?, xi: xi? })
                    })
                    .collect::<Vec<_>>()
            }),
            None => Some(Vec::new()),
        };
        let flow = match m.get("flow") {
            Some(f) => {
                let fp = join(path, "flow");
                self.object(f, &fp, &["x", "xi", "branch", "dt", "steps"])
                    .and_then(|fm| {
                        let x = self.covector(fm, "x", &fp, n);
                        let xi = self.covector(fm, "xi", &fp, n);
                        let branch = self.opt_count(fm, "branch", &fp, 0);
                        if let Some(b) = branch {
                            if b >= dim {
                                self.err(
                                    &join(&fp, "branch"),
                                    format!("branch index {b} must be below N = {dim}"),
                                );
                            }
                        }
                        let dt = self.opt_number(fm, "dt", &fp, crate::finsler::DEFAULT_DT);
                        let dt = self.positive(dt, &join(&fp, "dt"));
                        let steps = self.opt_count(fm, "steps", &fp, 1000);
                        Some(FlowConfig {
                            x: x?,
                            xi: xi?,
                            branch: branch.filter(|b| *b < dim)?,
                            dt: dt?,
                            steps: steps?,
                        })
                    })
            }
            .map(Some),
            None => Some(None),
        };
        Some(FinslerConfig {
            points: points?.into_iter().collect::<Option<Vec<_>>>()?,
            flow: flow?,
        })
    }

    fn oracle(&mut self, v: &Value, path: &str, n: usize, has_boundary: Option<usize>) -> Option<OracleConfig> {
        let m = self.object(
            v,
            path,
            &["geometries", "grid", "index", "t_window", "k_max", "halfline"],
        )?;
        let gp = join(path, "geometries");
        let geometries = match m.get("geometries") {
            Some(g) => self.array(g, &gp).map(|list| {
                list.iter()
                    .enumerate()
                    .map(|(i, g)| {
                        let ip = index(&gp, i);
                        match serde_json::from_value::<Geometry>(g.clone()) {
                            Ok(geo) if geo.length() > 0.0 && geo.length().is_finite() => Some(geo),
                            Ok(_) => {
                                self.err(&join(&ip, "length"), "must be positive");
                                None
                            }
                            Err(_) => {
                                self.err(&ip, "expected {\"kind\": \"circle\" | \"interval\", \"length\": L}");
                                None
                            }
                        }
                    })
                    .collect::<Vec<_>>()
            }),
            None => Some(Vec::new()),
        };
        if let Some(list) = &geometries {
            if !list.is_empty() && n != 1 {
                self.err(&gp, format!("discretization oracles need n = 1, operator has n = {n}"));
            }
        }
        let grid = self.opt_count(m, "grid", path, 256);
        self.at_least(grid, MIN_GRID, &join(path, "grid"));
        let idx = self.opt_bool(m, "index", path, true);
        let wp = join(path, "t_window");
        let t_window = match m.get("t_window") {
            Some(w) => match self.vector(w, &wp, Some(2)) {
                Some(t) if 0.0 < t[0] && 2.0 * t[0] < t[1] => Some(Some([t[0], t[1]])),
                Some(_) => {
                    self.err(&wp, "need 0 < t_min and 2·t_min < t_max");
                    None
                }
                None => None,
            },
            None => Some(None),
        };
        let k_max = match m.get("k_max") {
            Some(k) => self.count(k, &join(path, "k_max")).map(Some),
            None => Some(None),
        };
        let halfline = match m.get("halfline") {
            Some(h) => self.halfline(h, &join(path, "halfline"), n, has_boundary).map(Some),
            None => Some(None),
        };
        Some(OracleConfig {
            geometries: geometries?.into_iter().collect::<Option<Vec<_>>>()?,
            grid: grid?,
            index: idx?,
            t_window: t_window?,
            k_max: k_max?,
            halfline: halfline?,
        })
    }

    fn halfline(&mut self, v: &Value, path: &str, n: usize, mesh_len: Option<usize>) -> Option<HalflineConfig> {
        let m = self.object(v, path, &["radius", "step", "bulk_points", "mesh_point", "xi_hat"])?;
        let d = HalflineSpec::default();
        let radius = match m.get("radius") {
            Some(x) => {
                let v = self.number(x, &join(path, "radius"));
                self.positive(v, &join(path, "radius")).map(Some)
            }
            None => Some(None),
        };
        let step = self.opt_number(m, "step", path, d.step);
        let step = self.positive(step, &join(path, "step"));
        let bulk = self.opt_count(m, "bulk_points", path, d.bulk_points);
        self.at_least(bulk, 16, &join(path, "bulk_points"));
        let mesh_point = self.opt_count(m, "mesh_point", path, 0);
        match (mesh_point, mesh_len) {
            (_, None) => self.err(path, "the half-line check needs a boundary section"),
            (Some(i), Some(len)) if i >= len => self.err(
                &join(path, "mesh_point"),
                format!("index {i} out of range ({len} mesh points)"),
            ),
            _ => {}
        }
        let xi_hat = match m.get("xi_hat") {
            Some(x) => self.vector(x, &join(path, "xi_hat"), Some(n - 1)),
            None => Some(vec![0.0; n - 1]),
        };
        Some(HalflineConfig {
            radius: radius?,
            step: step?,
            bulk_points: bulk?,
            mesh_point: mesh_point?,
            xi_hat: xi_hat?,
        })
    }

    fn tolerances(&mut self, v: Option<&Value>, path: &str) -> Option<Tolerances> {
        let d = Tolerances::default();
        let empty = Map::new();
        let m = match v {
            Some(v) => self.object(v, path, &["cross_check", "method"])?,
            None => &empty,
        };
        let cross = self.opt_number(m, "cross_check", path, d.cross_check);
        let cross = self.positive(cross, &join(path, "cross_check"));
        let method = self.opt_number(m, "method", path, d.method);
        let method = self.positive(method, &join(path, "method"));
        Some(Tolerances {
            cross_check: cross?,
            method: method?,
        })
    }

    fn output(&mut self, v: Option<&Value>, path: &str) -> Option<OutputConfig> {
        let Some(v) = v else {
            return Some(OutputConfig::default());
        };
        let m = self.object(v, path, &["report", "eigenvalues_csv", "trace_csv", "trajectory_csv"])?;
        let mut get = |key: &str| match m.get(key) {
            Some(s) => self.string(s, &join(path, key)).map(Some),
            None => Some(None),
        };
        Some(OutputConfig {
            report: get("report")?,
            eigenvalues_csv: get("eigenvalues_csv")?,
            trace_csv: get("trace_csv")?,
            trajectory_csv: get("trajectory_csv")?,
        })
    }

    fn run_config(&mut self, v: &Value) -> Option<RunConfig> {
        let root = "$";
        let m = self.object(
            v,
            root,
            &[
                "operator",
                "interior",
                "boundary",
                "ellipticity",
                "finsler",
                "oracle",
                "tolerances",
                "output",
            ],
        )?;
        let operator = self
            .required(m, "operator", root)
            .and_then(|o| self.operator(o, &join(root, "operator")));
        // Sections that depend on n are only checked once n is known.
        let raw = |key: &str| {
            m.get("operator")
                .and_then(|o| o.get(key))
                .and_then(Value::as_u64)
                .filter(|v| *v > 0)
                .map(|v| v as usize)
        };
        let shape = raw("n").zip(raw("N"));
        let mut interior = Some(None);
        let mut boundary = Some(None);
        let mut finsler = Some(None);
        let mut oracle = Some(None);
        if let Some((n, dim)) = shape {
            if let Some(x) = m.get("interior") {
                interior = self.interior(x, &join(root, "interior"), n).map(Some);
            }
            if let Some(x) = m.get("boundary") {
                boundary = self.boundary(x, &join(root, "boundary"), n).map(Some);
            }
            if let Some(x) = m.get("finsler") {
                finsler = self.finsler(x, &join(root, "finsler"), n, dim).map(Some);
            }
            if let Some(x) = m.get("oracle") {
                let mesh_len = match (&boundary, m.get("boundary")) {
                    (Some(Some(b)), _) => Some(b.mesh.len()),
                    (_, Some(_)) => Some(usize::MAX),
                    _ => None,
                };
                oracle = self.oracle(x, &join(root, "oracle"), n, mesh_len).map(Some);
            }
        }
        let ellipticity = self.ellipticity(m.get("ellipticity"), &join(root, "ellipticity"));
        let tolerances = self.tolerances(m.get("tolerances"), &join(root, "tolerances"));
        let output = self.output(m.get("output"), &join(root, "output"));
        Some(RunConfig {
            operator: operator?,
            interior: interior?,
            boundary: boundary?,
            ellipticity: ellipticity?,
            finsler: finsler?,
            oracle: oracle?,
            tolerances: tolerances?,
            output: output?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"operator": {"n": 1, "N": 1, "gamma": [[[[1, 0]]]]}}"#;

    fn paths(raw: &str) -> Vec<String> {
        validate_config(raw).unwrap_err().into_iter().map(|e| e.path).collect()
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = validate_config(MINIMAL).unwrap();
        assert_eq!(cfg.operator.n, 1);
        assert_eq!(cfg.operator.fiber, 1);
        assert_eq!(cfg.ellipticity.directions, 512);
        assert_eq!(cfg.ellipticity.grid_per_axis, 8);
        assert_eq!(cfg.tolerances, Tolerances::default());
        let sym = cfg.symbol().unwrap();
        assert_eq!(sym.build_h(&[0.3], &[2.0]).unwrap()[(0, 0)], c(4.0, 0.0));
    }

    #[test]
    fn row_length_error_names_the_field() {
        let raw = r#"{"operator": {"n": 1, "N": 2, "gamma": [[[[1, 0], [0, 0]], [[0, 0]]]]}}"#;
        assert_eq!(paths(raw), vec!["$.operator.gamma[0][1]"]);
    }

    #[test]
    fn complex_entry_must_be_a_pair() {
        let raw = r#"{"operator": {"n": 1, "N": 1, "gamma": [[[1.0]]]}}"#;
        assert_eq!(paths(raw), vec!["$.operator.gamma[0][0][0]"]);
        let raw = r#"{"operator": {"n": 1, "N": 1, "gamma": [[[[1, 0, 0]]]]}}"#;
        assert_eq!(paths(raw), vec!["$.operator.gamma[0][0][0]"]);
    }

    #[test]
    fn all_errors_are_collected() {
        let raw = r#"{
            "operator": {"n": 2, "N": 1, "gamma": [[[[1, 0]]]], "extra": true},
            "interior": {"points": [{"x": [0.0]}], "xi_order": 1},
            "boundary": {"mesh": [{"point": [0, 0], "dr": [0, 0], "dxhat": []}]},
            "tolerances": {"cross_check": -1}
        }"#;
        let p = paths(raw);
        for want in [
            "$.operator.extra",
            "$.operator.gamma",
            "$.interior.points[0].x",
            "$.interior.xi_order",
            "$.boundary.mesh[0].dr",
            "$.boundary.mesh[0].dxhat",
            "$.tolerances.cross_check",
        ] {
            assert!(p.iter().any(|q| q == want), "missing {want} in {p:?}");
        }
    }

    #[test]
    fn syntax_errors_carry_line_and_column() {
        let p = paths("{\n  \"operator\": [1,\n}");
        assert_eq!(p.len(), 1);
        assert!(p[0].starts_with("line 3"), "{p:?}");
    }

    #[test]
    fn polynomial_tables_become_sorted_terms() {
        let raw = r#"{"operator": {"n": 2, "N": 1,
            "gamma": [{"polynomial": {"0,1": [[[2, 0]]], "0,0": [[[1, 0]]]}}, [[[1, 0]]]]}}"#;
        let cfg = validate_config(raw).unwrap();
        let terms = &cfg.operator.gamma[0].terms;
        assert_eq!(terms[0].exponent, vec![0, 0]);
        assert_eq!(terms[1].exponent, vec![0, 1]);
        let sym = cfg.symbol().unwrap();
        // Γ¹(x) = 1 + 2x₂ at x₂ = 0.25 gives H(ξ = dx₁) = 1.5².
        let h = sym.build_h(&[0.0, 0.25], &[1.0, 0.0]).unwrap();
        assert!((h[(0, 0)].re - 2.25).abs() < 1e-14);
    }

    #[test]
    fn polynomial_degree_and_keys_are_checked() {
        let raw = r#"{"operator": {"n": 1, "N": 1,
            "gamma": [{"polynomial": {"5": [[[1, 0]]], "a": [[[1, 0]]]}}]}}"#;
        let p = paths(raw);
        assert!(p.contains(&"$.operator.gamma[0].polynomial.5".to_string()));
        assert!(p.contains(&"$.operator.gamma[0].polynomial.a".to_string()));
    }

    #[test]
    fn oracle_geometries_need_one_dimension() {
        let raw = r#"{"operator": {"n": 2, "N": 1, "gamma": [[[[1, 0]]], [[[1, 0]]]]},
            "oracle": {"geometries": [{"kind": "circle", "length": 1.0}]}}"#;
        assert_eq!(paths(raw), vec!["$.oracle.geometries"]);
        let raw = r#"{"operator": {"n": 1, "N": 1, "gamma": [[[[1, 0]]]]},
            "oracle": {"halfline": {}}}"#;
        assert_eq!(paths(raw), vec!["$.oracle.halfline"]);
    }

    #[test]
    fn canonical_emission_round_trips() {
        let raw = r#"{
            "operator": {"n": 2, "N": 2, "domain": {"lo": [-2, -2], "hi": [2, 2]},
                "gamma": [[[[0, 0], [1, 0]], [[1, 0], [0, 0]]],
                          {"terms": [{"exponent": [1, 0], "matrix": [[[0, 0], [0, -1]], [[0, 1], [0, 0]]],
                                      "wave": {"kind": "sin", "k": [0.5, 0]}}]}],
                "rho": {"polynomial": {"0,0": [[[1, 0], [0, 0]], [[0, 0], [1, 0]]]}},
                "potential": [[[0.5, 0], [0, 0]], [[0, 0], [0.5, 0]]]},
            "interior": {"points": [{"x": [0.1, 0.2], "weight": 2.0}], "xi_order": 12},
            "boundary": {"mesh": [{"point": [0, 0], "dr": [1, 0], "dxhat": [[0, 1]]}],
                         "contour": {"nodes": 32, "method": "quadrature"}},
            "finsler": {"points": [{"x": [0, 0], "xi": [1, 0]}], "flow": {"x": [0, 0], "xi": [1, 1]}},
            "oracle": {"grid": 64, "t_window": [0.01, 0.5], "halfline": {"xi_hat": [0.5]}},
            "output": {"report": "r.json"}
        }"#;
        let cfg = validate_config(raw).unwrap();
        let text = cfg.to_canonical_json();
        let again = validate_config(&text).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(text, again.to_canonical_json());
        assert_eq!(again.boundary.unwrap().contour.method, Phi0Method::Quadrature);
    }

    #[test]
    fn matrix_spec_round_trip() {
        let m = CMatrix::from_fn(2, 2, |i, j| c(i as f64, j as f64 - 0.5));
        assert_eq!(matrix_from_spec(&matrix_spec(&m)), m);
    }
}
