//! Command dispatch: validate, run the requested pipeline stages and write
//! `report.json` plus the plot tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use num_complex::Complex64;
use qdde_core::asymptotics::{
    derivative_certificate, gamma_factor, gevrey_fit, growth_certificate, normalized_remainders, per_h_constants,
    remainder_profile, t_samples, DerivativeCertificate, FitReport, GrowthCertificate, PerHFit,
};
use qdde_core::majorant::{
    contraction_ratio, find_x, majorant_e_neumann, operator_a, operator_b, spiral_domination, NormParams, SpaceKind,
    WeightedGrid, XSearch,
};
use qdde_core::qlaplace::{in_spiral_domain, SpiralGrid};
use qdde_core::solver::{
    evaluate_x, residual_formal, solve_formal, validate, wh_spiral, wh_taylor, wh_taylor_recursion, AssumptionReport,
    BorelEvaluator, FitConfig, ProblemSpec, Truncation,
};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::CliError;
use crate::output::{write_json, write_table, Cell, Format, Table};
use crate::problem::{load_problem, AutoRadius, LoadedProblem};

/// Pipeline stage selected on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Check,
    SolveFormal,
    Borel,
    Spiral,
    Evaluate,
    Asymptotics,
    Majorant,
    All,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub problem_path: PathBuf,
    pub command: Command,
    pub out_path: PathBuf,
    pub format: Format,
    pub overrides: Vec<String>,
    /// Tolerance for the `h`-tail of pointwise evaluations.
    pub tol: Option<f64>,
    pub t: Option<Complex64>,
    pub z: Option<Complex64>,
}

/// Exit code 0: success; 2: an analytic hypothesis failed (report written).
pub const EXIT_OK: i32 = 0;
pub const EXIT_ASSUMPTIONS: i32 = 2;

const GAP_FLOOR: f64 = 1e-12;
const CONTRACTION_SAMPLES: usize = 100;
const GROWTH_H_MAX: usize = 16;
const DERIV_N_MAX: usize = 20;
const DERIV_J_MAX: usize = 12;
const T1_DERIVATIVE: f64 = 0.45;

#[derive(Clone, Debug, Serialize)]
pub struct Provenance {
    pub problem_path: String,
    pub problem_sha256: String,
    pub overrides: Vec<String>,
    pub truncation: Truncation,
    pub fit: FitConfig,
    pub r0: f64,
    pub auto_radius: Option<AutoRadius>,
    pub format: Format,
    pub version: &'static str,
}

#[derive(Clone, Debug, Serialize)]
pub struct FormalSection {
    pub residual: f64,
    pub max_abs: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BorelSection {
    pub discrepancy: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpiralSection {
    pub base_points: Vec<Complex64>,
    pub growth: GrowthCertificate,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvaluateSection {
    pub t: Complex64,
    pub z: Complex64,
    pub value: Complex64,
    pub h_tail: f64,
    pub spiral_margin: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProfileSection {
    pub z: Complex64,
    /// `ρ_n`, `n = 1..=N`, over samples resolved above rounding.
    pub normalized: Vec<Option<f64>>,
    pub gamma_factor: bool,
    pub fit: FitReport,
    pub passes: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct AsymptoticsSection {
    pub t_samples: Vec<Complex64>,
    pub profiles: Vec<ProfileSection>,
    pub per_h: Option<PerHFit>,
    pub per_h_error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DominationSummary {
    pub holds: bool,
    pub violations: Vec<(i64, usize)>,
    pub max_ratio: f64,
    pub spectral_gap: f64,
    pub r_coupling: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MajorantSection {
    pub norm_t: f64,
    pub x_search_a: XSearch,
    pub contraction_a: f64,
    pub neumann_residual: f64,
    pub neumann_iterations: usize,
    pub x_search_b: XSearch,
    pub contraction_b: f64,
    pub domination: DominationSummary,
    pub derivative: DerivativeCertificate,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub command: Command,
    pub exit_code: i32,
    pub provenance: Provenance,
    pub assumptions: AssumptionReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub formal: Option<FormalSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub borel: Option<BorelSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spiral: Option<SpiralSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluate: Option<EvaluateSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asymptotics: Option<AsymptoticsSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub majorant: Option<MajorantSection>,
    /// Named pass/fail outcomes of the numerical certificates.
    pub checks: BTreeMap<String, bool>,
    /// Table files written next to the report.
    pub outputs: Vec<String>,
}

fn re_im(v: Complex64) -> [Cell; 2] {
    [v.re.into(), v.im.into()]
}

struct Stages<'a> {
    cfg: &'a RunConfig,
    p: &'a ProblemSpec,
    report: Report,
    spiral: Option<SpiralGrid>,
}

impl Stages<'_> {
    fn table(&mut self, stem: &str, t: &Table) -> Result<(), CliError> {
        let name = write_table(&self.cfg.out_path, stem, t, self.cfg.format)?;
        self.report.outputs.push(name);
        Ok(())
    }

    fn check(&mut self, name: &str, ok: bool) {
        self.report.checks.insert(name.to_string(), ok);
    }

    fn formal(&mut self) -> Result<(), CliError> {
        let f = solve_formal(self.p)?;
        let residual = residual_formal(self.p, &f)?;
        let mut t = Table::new(&["m", "h", "re", "im"]);
        for m in 0..=f.m_order() {
            for h in 0..=f.h_order() {
                let [re, im] = re_im(f.get(m, h));
                t.push(vec![m.into(), h.into(), re, im]);
            }
        }
        self.table("formal", &t)?;
        self.check("formal_residual", residual <= 1e-12);
        self.report.formal = Some(FormalSection { residual, max_abs: f.max_abs() });
        Ok(())
    }

    fn borel(&mut self) -> Result<(), CliError> {
        let cmp = wh_taylor(self.p)?;
        let w = &cmp.via_recursion;
        let mut t = Table::new(&["n", "h", "re", "im"]);
        for n in 0..=w.m_order() {
            for h in 0..=w.h_order() {
                let [re, im] = re_im(w.get(n, h));
                t.push(vec![n.into(), h.into(), re, im]);
            }
        }
        self.table("borel", &t)?;
        self.check("borel_equivalence", cmp.discrepancy <= 1e-10);
        self.report.borel = Some(BorelSection { discrepancy: cmp.discrepancy });
        Ok(())
    }

    fn spiral_grid(&mut self) -> Result<SpiralGrid, CliError> {
        if self.spiral.is_none() {
            self.spiral = Some(wh_spiral(self.p, GAP_FLOOR)?);
        }
        Ok(self.spiral.clone().expect("just filled"))
    }

    fn spiral(&mut self) -> Result<(), CliError> {
        let grid = self.spiral_grid()?;
        let mut t = Table::new(&["x_index", "l", "h", "re", "im"]);
        for x in 0..grid.base_points.len() {
            for l in grid.l_min..=grid.l_max {
                for (h, v) in grid.point_values(x, l).iter().enumerate() {
                    let [re, im] = re_im(*v);
                    t.push(vec![x.into(), l.into(), h.into(), re, im]);
                }
            }
        }
        self.table("spiral", &t)?;
        let growth = growth_certificate(&grid, self.p.q.modulus, GROWTH_H_MAX.min(self.p.truncation.h))?;
        self.check("growth_certificate", growth.holds());
        self.report.spiral = Some(SpiralSection { base_points: grid.base_points.clone(), growth });
        Ok(())
    }

    fn evaluate(&mut self) -> Result<(), CliError> {
        let t = self.cfg.t.ok_or_else(|| CliError::Argument { arg: "--t".into(), msg: "evaluate needs --t RE,IM".into() })?;
        let z = self.cfg.z.unwrap_or_default();
        let dom = in_spiral_domain(t, &self.p.domain, &self.p.q)?;
        if !dom.inside {
            return Err(CliError::Argument {
                arg: "--t".into(),
                msg: format!(
                    "t = {t} is outside the spiral domain (margin {:.3e}, delta {}, r0 {})",
                    dom.margin, self.p.domain.delta, self.p.domain.r0
                ),
            });
        }
        let ev = BorelEvaluator::new(self.p, None)?;
        let x = evaluate_x(self.p, &ev, t, z, self.cfg.tol.unwrap_or(1e-12))?;
        self.report.evaluate = Some(EvaluateSection { t, z, value: x.value, h_tail: x.h_tail, spiral_margin: dom.margin });
        Ok(())
    }

    fn asymptotics(&mut self) -> Result<(), CliError> {
        let p = self.p;
        let ts = t_samples(p)?;
        let rem = normalized_remainders(p, &ts, p.fit.n)?;
        let zs = match self.cfg.z {
            Some(z) => vec![z],
            None => vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
        };
        let mut t = Table::new(&["z_index", "n", "t_index", "R", "rho", "resolved"]);
        let mut profiles = Vec::new();
        for (zi, z) in zs.iter().enumerate() {
            let prof = remainder_profile(p, &rem, *z);
            for n in 1..=prof.n_max {
                let g = gamma_factor(n, p.r1, p.r2);
                for i in 0..prof.t_samples.len() {
                    t.push(vec![
                        zi.into(),
                        n.into(),
                        i.into(),
                        prof.remainders[i][n - 1].into(),
                        (prof.scaled[i][n - 1] / g).into(),
                        usize::from(prof.is_resolved(i, n)).into(),
                    ]);
                }
            }
            let fit = gevrey_fit(&prof)?;
            let passes = fit.bound_holds && (fit.exact || fit.slope_residual <= 0.5);
            self.check(&format!("gevrey_z{zi}"), passes);
            profiles.push(ProfileSection { z: *z, normalized: prof.normalized.clone(), gamma_factor: p.r1 > 0, fit, passes });
        }
        self.table("remainder", &t)?;
        let (per_h, per_h_error) = match per_h_constants(p, &rem, 1) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        self.report.asymptotics = Some(AsymptoticsSection { t_samples: ts, profiles, per_h, per_h_error });
        Ok(())
    }

    fn majorant(&mut self) -> Result<(), CliError> {
        let p = self.p;
        let rep = self.report.assumptions.clone();
        let grid = self.spiral_grid()?;
        let tr = p.truncation;
        let h_max = GROWTH_H_MAX.min(tr.h);
        let q_mod = p.q.modulus;
        let ts = rep.t_set;
        let norm_t = if ts.hi.is_finite() { (ts.lo * ts.hi).sqrt() } else { ts.lo * q_mod.sqrt() };

        // E-space: contraction of A and the Neumann series for the auxiliary problem
        let a = operator_a(p, rep.r_coupling, rep.spectral_gap);
        let base = NormParams::new(norm_t, 1.0, q_mod)?;
        let xa = find_x(&a, &base, 1.0, tr.l_min, tr.l_max, h_max)?;
        let pa = base.with_x(xa.x);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let contraction_a = contraction_ratio(&a, &pa, (tr.l_min, tr.l_max, h_max), CONTRACTION_SAMPLES, &mut rng);
        let mut init = WeightedGrid::zeros(SpaceKind::E, tr.l_min, tr.l_max, h_max)?;
        for l in tr.l_min..=tr.l_max {
            for j in 0..p.s {
                init.set(l, j, grid.sup_abs(l, j))?;
            }
        }
        let (_, neumann) = majorant_e_neumann(p, rep.r_coupling, rep.spectral_gap, &init, &pa)?;

        // H-space: contraction of B at the radius used by the derivative certificate
        let b = operator_b(p);
        let n_max = DERIV_N_MAX.min(tr.m) as i64;
        let j_max = DERIV_J_MAX.min(tr.h);
        let xb = find_x(&b, &NormParams::new(T1_DERIVATIVE, 1.0, q_mod)?, 1.0, 0, n_max, j_max)?;
        let pb = NormParams::new(T1_DERIVATIVE, xb.x, q_mod)?;
        let contraction_b = contraction_ratio(&b, &pb, (0, n_max, j_max), CONTRACTION_SAMPLES, &mut rng);

        let dom = spiral_domination(p, &grid, h_max)?;
        let taylor = wh_taylor_recursion(p)?;
        let derivative = derivative_certificate(p, &taylor, n_max as usize, j_max)?;

        self.check("contraction", contraction_a <= 0.5 + 1e-9 && contraction_b <= 0.5 + 1e-9);
        self.check("neumann_residual", neumann.residual <= 1e-10);
        self.check("majorant_domination", dom.holds());
        self.check("derivative_decay", derivative.holds());
        self.report.majorant = Some(MajorantSection {
            norm_t,
            x_search_a: xa,
            contraction_a,
            neumann_residual: neumann.residual,
            neumann_iterations: neumann.iterations,
            x_search_b: xb,
            contraction_b,
            domination: DominationSummary {
                holds: dom.holds(),
                violations: dom.violations.clone(),
                max_ratio: dom.max_ratio,
                spectral_gap: dom.spectral_gap,
                r_coupling: dom.r_coupling,
            },
            derivative,
        });
        Ok(())
    }
}

fn provenance(cfg: &RunConfig, lp: &LoadedProblem) -> Provenance {
    Provenance {
        problem_path: cfg.problem_path.display().to_string(),
        problem_sha256: lp.hash.clone(),
        overrides: cfg.overrides.clone(),
        truncation: lp.spec.truncation,
        fit: lp.spec.fit,
        r0: lp.spec.domain.r0,
        auto_radius: lp.auto_radius,
        format: cfg.format,
        version: env!("CARGO_PKG_VERSION"),
    }
}

/// Run one command and return the process exit code; internal errors are
/// returned as `Err` and map to exit code 1.
pub fn run(cfg: &RunConfig) -> Result<i32, CliError> {
    let lp = load_problem(&cfg.problem_path, &cfg.overrides)?;
    fs::create_dir_all(&cfg.out_path)
        .map_err(|e| CliError::Io { path: cfg.out_path.display().to_string(), source: e })?;
    let p = &lp.spec;
    let assumptions = validate(p)?;
    let ok = assumptions.all_ok();
    let report = Report {
        command: cfg.command,
        exit_code: if ok { EXIT_OK } else { EXIT_ASSUMPTIONS },
        provenance: provenance(cfg, &lp),
        assumptions,
        formal: None,
        borel: None,
        spiral: None,
        evaluate: None,
        asymptotics: None,
        majorant: None,
        checks: BTreeMap::new(),
        outputs: Vec::new(),
    };
    let mut st = Stages { cfg, p, report, spiral: None };
    if ok {
        match cfg.command {
            Command::Check => {}
            Command::SolveFormal => st.formal()?,
            Command::Borel => st.borel()?,
            Command::Spiral => st.spiral()?,
            Command::Evaluate => st.evaluate()?,
            Command::Asymptotics => st.asymptotics()?,
            Command::Majorant => st.majorant()?,
            Command::All => {
                st.formal()?;
                st.borel()?;
                st.spiral()?;
                if cfg.t.is_some() {
                    st.evaluate()?;
                }
                st.asymptotics()?;
                st.majorant()?;
            }
        }
    }
    let code = st.report.exit_code;
    write_json(&cfg.out_path.join("report.json"), &st.report)?;
    if let Some(ev) = &st.report.evaluate {
        println!("X({}, {}) = {:.16e} {:+.16e}i", ev.t, ev.z, ev.value.re, ev.value.im);
    }
    for (name, pass) in &st.report.checks {
        eprintln!("{name}: {}", if *pass { "pass" } else { "FAIL" });
    }
    Ok(code)
}

/// Cap the global worker pool from `QDDE_THREADS`, if set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("QDDE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Argument { arg: "QDDE_THREADS".into(), msg: format!("expected a positive integer, got `{raw}`") })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Argument { arg: "QDDE_THREADS".into(), msg: e.to_string() })
}

/// Parse `RE,IM` or `RE`.
pub fn parse_complex(s: &str) -> Result<Complex64, String> {
    let parse = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}"));
    match s.split_once(',') {
        Some((re, im)) => Ok(Complex64::new(parse(re)?, parse(im)?)),
        None => Ok(Complex64::new(parse(s)?, 0.0)),
    }
}
