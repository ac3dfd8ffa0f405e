//! Problem files: JSON schema, command-line overrides and conversion to
//! [`ProblemSpec`].

use std::path::Path;

use num_complex::Complex64;
use qdde_core::asymptotics::growth_certificate;
use qdde_core::qlaplace::{induced_r0, DomainSpec, QParameter};
use qdde_core::series::Polynomial;
use qdde_core::solver::{wh_spiral, FitConfig, InitialDatum, OperatorTerm, ProblemSpec, Side, Truncation};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexJson {
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

impl From<ComplexJson> for Complex64 {
    fn from(c: ComplexJson) -> Self {
        Complex64::new(c.re, c.im)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QJson {
    pub modulus: f64,
    #[serde(default)]
    pub b: Option<u32>,
    #[serde(default)]
    pub angle: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefJson {
    pub s: usize,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermJson {
    pub k: usize,
    pub m0: usize,
    pub m1: usize,
    pub b: Vec<CoefJson>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialJson {
    pub j: usize,
    pub side: Side,
    pub coeffs: Vec<ComplexJson>,
}

/// `r0` is either a number or the string `"auto"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RadiusJson {
    Value(f64),
    Keyword(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainJson {
    pub lambda: ComplexJson,
    pub delta: f64,
    pub r0: RadiusJson,
    #[serde(rename = "V", default)]
    pub v: Option<Vec<ComplexJson>>,
    #[serde(default = "default_epsilon")]
    pub epsilon_sector: f64,
}

fn default_epsilon() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationJson {
    #[serde(rename = "M", default = "default_order")]
    pub m: usize,
    #[serde(rename = "H", default = "default_order")]
    pub h: usize,
    #[serde(default = "default_l_min")]
    pub l_min: i64,
    #[serde(default = "default_l_max")]
    pub l_max: i64,
    #[serde(default = "default_tail_tol")]
    pub tail_tol: f64,
}

fn default_order() -> usize {
    24
}
fn default_l_min() -> i64 {
    -20
}
fn default_l_max() -> i64 {
    20
}
fn default_tail_tol() -> f64 {
    1e-17
}

impl Default for TruncationJson {
    fn default() -> Self {
        Self { m: 24, h: 24, l_min: -20, l_max: 20, tail_tol: 1e-17 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitJson {
    #[serde(rename = "N", default = "default_n")]
    pub n: usize,
    #[serde(default = "default_rays")]
    pub t_rays: usize,
    #[serde(default = "default_points")]
    pub t_points: usize,
}

fn default_n() -> usize {
    FitConfig::default().n
}
fn default_rays() -> usize {
    FitConfig::default().t_rays
}
fn default_points() -> usize {
    FitConfig::default().t_points
}

impl Default for FitJson {
    fn default() -> Self {
        let f = FitConfig::default();
        Self { n: f.n, t_rays: f.t_rays, t_points: f.t_points }
    }
}

/// The problem file as written on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub q: QJson,
    #[serde(rename = "S")]
    pub s: usize,
    pub r1: u32,
    pub r2: u32,
    #[serde(default)]
    pub terms: Vec<TermJson>,
    pub initial: Vec<InitialJson>,
    pub domain: DomainJson,
    #[serde(default)]
    pub truncation: TruncationJson,
    #[serde(default)]
    pub fit: FitJson,
}

/// How `r0` was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoRadius {
    /// Uniform growth constant `T` of the spiral values.
    pub t: f64,
    pub r0: f64,
}

/// A problem ready for the pipeline together with its provenance.
#[derive(Clone, Debug)]
pub struct LoadedProblem {
    pub spec: ProblemSpec,
    /// Effective problem after overrides, as canonical JSON.
    pub effective: Value,
    /// SHA-256 of `effective`.
    pub hash: String,
    pub auto_radius: Option<AutoRadius>,
}

/// Apply `key=value` overrides with dotted paths (`truncation.M=60`,
/// `terms.0.m1=2`). The value is read as JSON when it parses, else as a string.
pub fn apply_overrides(doc: &mut Value, overrides: &[String]) -> Result<(), CliError> {
    for ov in overrides {
        let (key, raw) = ov
            .split_once('=')
            .ok_or_else(|| CliError::Override { key: ov.clone(), msg: "expected key=value".into() })?;
        let value = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut node = &mut *doc;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let last = i + 1 == parts.len();
            node = match node {
                Value::Object(map) => {
                    if last {
                        map.insert(part.to_string(), value.clone());
                        break;
                    }
                    map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
                }
                Value::Array(items) => {
                    let idx: usize = part.parse().map_err(|_| CliError::Override {
                        key: key.to_string(),
                        msg: format!("`{part}` is not an array index"),
                    })?;
                    let len = items.len();
                    let slot = items.get_mut(idx).ok_or_else(|| CliError::Override {
                        key: key.to_string(),
                        msg: format!("index {idx} out of range (length {len})"),
                    })?;
                    if last {
                        *slot = value.clone();
                        break;
                    }
                    slot
                }
                _ => {
                    return Err(CliError::Override {
                        key: key.to_string(),
                        msg: format!("`{}` is not an object or array", parts[..i].join(".")),
                    })
                }
            };
        }
    }
    Ok(())
}

fn invalid(field: &str, msg: impl Into<String>) -> CliError {
    CliError::Field { field: field.to_string(), msg: msg.into() }
}

fn core(field: &str, e: qdde_core::Error) -> CliError {
    invalid(field, e.to_string())
}

fn default_v(lambda: Complex64) -> Vec<Complex64> {
    let w = 0.1 * lambda;
    let iw = Complex64::new(0.0, 1.0) * w;
    vec![lambda - w - iw, lambda + w - iw, lambda + w + iw, lambda - w + iw, lambda]
}

impl ProblemFile {
    /// Convert to a [`ProblemSpec`] with the given `r0`.
    fn to_spec(&self, r0: f64) -> Result<ProblemSpec, CliError> {
        if self.r2 == 0 {
            return Err(invalid("r2", "r2 ≥ 1 is required"));
        }
        if self.s == 0 {
            return Err(invalid("S", "S ≥ 1 is required"));
        }
        let q = QParameter::new(self.q.modulus, self.q.b, self.q.angle, self.r2).map_err(|e| core("q", e))?;
        let mut terms = Vec::with_capacity(self.terms.len());
        for (i, t) in self.terms.iter().enumerate() {
            let b = Polynomial::new(t.b.iter().map(|c| (c.s, Complex64::new(c.re, c.im))).collect())
                .map_err(|e| core(&format!("terms.{i}.b"), e))?;
            terms.push(OperatorTerm { k: t.k, m0: t.m0, m1: t.m1, b });
        }
        let mut initial: Vec<Option<InitialDatum>> = vec![None; self.s];
        for (i, d) in self.initial.iter().enumerate() {
            let field = format!("initial.{i}.j");
            let slot = initial
                .get_mut(d.j)
                .ok_or_else(|| invalid(&field, format!("j = {} must be < S = {}", d.j, self.s)))?;
            if slot.is_some() {
                return Err(invalid(&field, format!("j = {} listed twice", d.j)));
            }
            let datum = InitialDatum::new(d.side, d.coeffs.iter().map(|&c| c.into()).collect())
                .map_err(|e| core(&format!("initial.{i}.coeffs"), e))?;
            *slot = Some(datum);
        }
        let initial = initial
            .into_iter()
            .enumerate()
            .map(|(j, d)| d.ok_or_else(|| invalid("initial", format!("missing datum for j = {j}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let lambda: Complex64 = self.domain.lambda.into();
        let v = match &self.domain.v {
            Some(v) => v.iter().map(|&c| c.into()).collect(),
            None => default_v(lambda),
        };
        let domain =
            DomainSpec::new(lambda, self.domain.delta, r0, v, self.domain.epsilon_sector).map_err(|e| core("domain", e))?;
        let tr = &self.truncation;
        let spec = ProblemSpec {
            q,
            s: self.s,
            r1: self.r1,
            r2: self.r2,
            terms,
            initial,
            domain,
            truncation: Truncation { m: tr.m, h: tr.h, l_min: tr.l_min, l_max: tr.l_max, tail_tol: tr.tail_tol },
            fit: FitConfig { n: self.fit.n, t_rays: self.fit.t_rays, t_points: self.fit.t_points },
        };
        spec.check().map_err(|e| core("problem", e))?;
        Ok(spec)
    }
}

/// `r0 = |λ| |q|^{1/2} T / |q|` with `T` the smallest per-row growth constant
/// of the spiral values `W_h(x q^l)`, `h ≤ min(H, 16)`.
pub fn auto_radius(spec: &ProblemSpec) -> Result<AutoRadius, CliError> {
    let grid = wh_spiral(spec, 1e-12).map_err(|e| core("domain.r0", e))?;
    let g = growth_certificate(&grid, spec.q.modulus, spec.truncation.h.min(16)).map_err(|e| core("domain.r0", e))?;
    if !(g.t_min.is_finite() && g.t_min > 0.0) {
        return Err(invalid("domain.r0", "growth fit gave no finite T; give r0 explicitly"));
    }
    Ok(AutoRadius { t: g.t_min, r0: induced_r0(spec.domain.lambda, spec.q.modulus, g.t_min) })
}

/// Parse problem text (already read from `origin`) and apply overrides.
pub fn parse_problem(text: &str, origin: &str, overrides: &[String]) -> Result<LoadedProblem, CliError> {
    let mut doc: Value = serde_json::from_str(text).map_err(|e| CliError::Parse {
        path: origin.to_string(),
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    apply_overrides(&mut doc, overrides)?;
    let file: ProblemFile = serde_path_to_error::deserialize(doc.clone()).map_err(|e| CliError::Field {
        field: e.path().to_string(),
        msg: e.inner().to_string(),
    })?;
    let (spec, auto) = match &file.domain.r0 {
        RadiusJson::Value(r) => (file.to_spec(*r)?, None),
        RadiusJson::Keyword(k) if k == "auto" => {
            let provisional = file.to_spec(1.0)?;
            let auto = auto_radius(&provisional)?;
            (file.to_spec(auto.r0)?, Some(auto))
        }
        RadiusJson::Keyword(k) => return Err(invalid("domain.r0", format!("expected a number or \"auto\", got \"{k}\""))),
    };
    let canonical = serde_json::to_vec(&doc).expect("JSON values serialize");
    let hash = Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect();
    Ok(LoadedProblem { spec, effective: doc, hash, auto_radius: auto })
}

/// Read and parse a problem file.
pub fn load_problem(path: &Path, overrides: &[String]) -> Result<LoadedProblem, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.display().to_string(), source: e })?;
    parse_problem(&text, &path.display().to_string(), overrides)
}
