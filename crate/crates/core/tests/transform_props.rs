use num_complex::Complex64;
use proptest::prelude::*;
use qdde_core::qlaplace::{
    in_spiral_domain, q_laplace_eval, shift_identity_check, spiral_margin, theta_eval, DomainSpec, QParameter,
};
use qdde_core::series::q_triangular;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn q_choices() -> Vec<QParameter> {
    vec![
        QParameter::real(2.0).unwrap(),
        QParameter::real(3.0).unwrap(),
        QParameter::new(1.5, Some(3), None, 1).unwrap(),
    ]
}

/// Relative distance of `x` to the zero set `-q^ℤ` of the theta function.
fn zero_distance(x: Complex64, q: Complex64) -> f64 {
    (-60..=60).map(|k| (x / q.powi(k) + 1.0).norm()).fold(f64::INFINITY, f64::min)
}

fn domain() -> DomainSpec {
    let v = vec![c(0.9, -0.1), c(1.1, -0.1), c(1.1, 0.1), c(0.9, 0.1), c(1.0, 0.0)];
    DomainSpec::new(c(1.0, 0.0), 0.5, 1.0, v, 0.1).unwrap()
}

fn domain_point() -> impl Strategy<Value = Complex64> {
    (-6.0f64..-0.8, -0.7f64..0.7).prop_map(|(lr, a)| Complex64::from_polar(lr.exp(), a))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn theta_functional_equation(qi in 0usize..3, lr in -2.5f64..2.5, a in -3.1f64..3.1) {
        let q = &q_choices()[qi];
        let qv = q.value();
        let x = Complex64::from_polar(lr.exp(), a);
        prop_assume!(zero_distance(x, qv) > 1e-3 && zero_distance(qv * x, qv) > 1e-3);
        let lhs = theta_eval(qv * x, q, 1e-18).unwrap();
        let rhs = qv * x * theta_eval(x, q, 1e-18).unwrap();
        prop_assert!((lhs - rhs).norm() <= 1e-12 * lhs.norm().max(rhs.norm()));
    }

    #[test]
    fn margin_is_invariant_under_q_dilation(t in domain_point(), k in -3i32..4) {
        let q = c(2.0, 0.0);
        let a = spiral_margin(t, c(1.0, 0.0), q, 40, 1e-16).unwrap();
        let b = spiral_margin(t * q.powi(k), c(1.0, 0.0), q, 40, 1e-16).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn laplace_is_linear(t in domain_point(), a in (-2.0f64..2.0, -2.0f64..2.0), b in (-2.0f64..2.0, -2.0f64..2.0)) {
        let q = QParameter::real(2.0).unwrap();
        let d = domain();
        prop_assume!(in_spiral_domain(t, &d, &q).unwrap().inside);
        let (a, b) = (c(a.0, a.1), c(b.0, b.1));
        let f = |tau: Complex64| 1.0 / (1.0 + tau);
        let g = |tau: Complex64| tau * tau;
        let lf = q_laplace_eval(|_, tau| Some(f(tau)), t, &d, &q, 1e-17).unwrap();
        let lg = q_laplace_eval(|_, tau| Some(g(tau)), t, &d, &q, 1e-17).unwrap();
        let lc = q_laplace_eval(|_, tau| Some(a * f(tau) + b * g(tau)), t, &d, &q, 1e-17).unwrap();
        let expect = a * lf.value + b * lg.value;
        let scale = a.norm() * lf.abs_sum + b.norm() * lg.abs_sum;
        prop_assert!((lc.value - expect).norm() <= 1e-13 * scale.max(1e-300));
    }

    #[test]
    fn moment_identity(t in domain_point(), n in 0u32..9) {
        let q = QParameter::real(2.0).unwrap();
        let d = domain();
        prop_assume!(in_spiral_domain(t, &d, &q).unwrap().inside);
        let got = q_laplace_eval(|_, tau| Some(tau.powu(n)), t, &d, &q, 1e-18).unwrap().value;
        let expect = q_triangular(q.value(), n as i64) * t.powu(n);
        prop_assert!((got - expect).norm() <= 1e-8 * expect.norm());
    }

    #[test]
    fn shift_identity(t in domain_point(), which in 0usize..3) {
        let q = QParameter::real(2.0).unwrap();
        let d = domain();
        prop_assume!(in_spiral_domain(t, &d, &q).unwrap().inside);
        let err = match which {
            0 => shift_identity_check(|_, _| Some(c(1.0, 0.0)), t, &d, &q, 1e-18),
            1 => shift_identity_check(|_, tau| Some(tau), t, &d, &q, 1e-18),
            _ => shift_identity_check(|_, tau| Some(1.0 / (1.0 + tau)), t, &d, &q, 1e-18),
        }
        .unwrap();
        prop_assert!(err <= 1e-10, "{err}");
    }
}

#[test]
fn laplace_outside_domain_is_rejected() {
    let q = QParameter::real(2.0).unwrap();
    let d = domain();
    // on the zero spiral of the kernel
    assert!(q_laplace_eval(|_, _| Some(c(1.0, 0.0)), c(-0.25, 0.0), &d, &q, 1e-17).is_err());
    // beyond r0
    assert!(q_laplace_eval(|_, _| Some(c(1.0, 0.0)), c(2.0, 0.0), &d, &q, 1e-17).is_err());
}
