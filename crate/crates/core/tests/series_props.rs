use num_complex::Complex64;
use proptest::prelude::*;
use qdde_core::series::{
    diff_z, euler_z, mul_poly_z, scale_z, BivariateSeries, Polynomial, UnivariateSeries,
};

fn coeff() -> impl Strategy<Value = Complex64> {
    (-1.0f64..1.0, -1.0f64..1.0).prop_map(|(a, b)| Complex64::new(a, b))
}

fn series(max_len: usize) -> impl Strategy<Value = UnivariateSeries> {
    prop::collection::vec(coeff(), 1..max_len).prop_map(|c| UnivariateSeries::new(c).unwrap())
}

fn q_value() -> impl Strategy<Value = Complex64> {
    (1.2f64..3.0, -3.0f64..3.0).prop_map(|(r, a)| Complex64::from_polar(r, a))
}

fn bivariate(mo: usize, ho: usize) -> impl Strategy<Value = BivariateSeries> {
    prop::collection::vec(coeff(), (mo + 1) * (ho + 1)).prop_map(move |v| {
        let mut f = BivariateSeries::zeros(mo, ho);
        for m in 0..=mo {
            for h in 0..=ho {
                f.set(m, h, v[m * (ho + 1) + h]);
            }
        }
        f
    })
}

fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
    (a - b).norm() <= tol * a.norm().max(b.norm()).max(1.0)
}

proptest! {
    #[test]
    fn borel_laplace_round_trip(f in series(16), q in q_value()) {
        let back = f.borel_q(q).laplace_q(q);
        for n in 0..=f.order() {
            prop_assert!(close(back.coeff(n), f.coeff(n), 1e-12));
        }
    }

    #[test]
    fn borel_turns_dilation_into_multiplication(f in series(14), q in q_value(), p in 0usize..4) {
        // B((tσ_q)^p f) = τ^p B(f)
        let lhs = f.dilate_t(q, p).borel_q(q);
        let mut rhs = f.borel_q(q);
        for _ in 0..p {
            rhs = rhs.shift_up();
        }
        for n in 0..=f.order() {
            prop_assert!(close(lhs.coeff(n), rhs.coeff(n), 1e-11));
        }
    }

    #[test]
    fn dilations_compose(f in series(14), q in q_value(), a in 0usize..3, b in 0usize..3) {
        let two = f.dilate_t(q, a).dilate_t(q, b);
        let one = f.dilate_t(q, a + b);
        for n in 0..=f.order() {
            prop_assert!(close(two.coeff(n), one.coeff(n), 1e-11));
        }
    }

    #[test]
    fn product_is_commutative_and_evaluates(f in series(10), g in series(10), x in coeff()) {
        let n = f.order().max(g.order());
        let (f, g) = (f.with_order(n), g.with_order(n));
        let fg = f.mul(&g);
        let gf = g.mul(&f);
        for k in 0..=n {
            prop_assert!(close(fg.coeff(k), gf.coeff(k), 1e-14));
        }
        // full product agrees with pointwise multiplication
        let (fw, gw) = (f.with_order(2 * n), g.with_order(2 * n));
        let full = fw.mul(&gw);
        prop_assert!(close(full.eval(x), f.eval(x) * g.eval(x), 1e-12));
    }

    #[test]
    fn euler_operator_powers_add(f in bivariate(3, 6), r in 0u32..3, s in 0u32..3) {
        let a = euler_z(&euler_z(&f, r), s);
        let b = euler_z(&f, r + s);
        for m in 0..=3 {
            for h in 0..=6 {
                prop_assert!(close(a.get(m, h), b.get(m, h), 1e-14));
            }
        }
    }

    #[test]
    fn z_operators_match_pointwise_action(
        f in bivariate(2, 12),
        z in (-0.5f64..0.5, -0.5f64..0.5).prop_map(|(a, b)| Complex64::new(a, b)),
        q in q_value(),
        m1 in 0usize..3,
        k in 0usize..3,
    ) {
        let t = Complex64::new(0.3, 0.1);
        let eval = |g: &BivariateSeries, z: Complex64| g.partial_sum(t, z, g.m_order() + 1);
        // the z-rescaling is a substitution
        let scaled = scale_z(&f, q, m1);
        let zq = z / q.powu(m1 as u32);
        prop_assert!(close(eval(&scaled, z), eval(&f, zq), 1e-12));
        // multiplication by a polynomial of degree 1 followed by k derivatives
        // equals the derivative of the product, on a polynomial in z
        let mut poly_f = f.clone();
        for m in 0..=2 {
            for h in 6..=12 {
                poly_f.set(m, h, Complex64::default());
            }
        }
        let p = Polynomial::new(vec![(0, Complex64::new(0.5, 0.0)), (1, Complex64::new(0.0, 2.0))]).unwrap();
        let prod = mul_poly_z(&p, &poly_f);
        prop_assert!(close(eval(&prod, z), p.eval(z) * eval(&poly_f, z), 1e-12));
        let d = diff_z(&prod, k).unwrap();
        // finite differences are too noisy; compare with the product rule instead
        let dk_f = |j: usize| eval(&diff_z(&poly_f, j).unwrap(), z);
        let expect = match k {
            0 => p.eval(z) * dk_f(0),
            1 => p.eval(z) * dk_f(1) + Complex64::new(0.0, 2.0) * dk_f(0),
            _ => p.eval(z) * dk_f(2) + 2.0 * Complex64::new(0.0, 2.0) * dk_f(1),
        };
        prop_assert!(close(eval(&d, z), expect, 1e-12));
    }
}

#[test]
fn empty_and_oversized_inputs_are_rejected() {
    assert!(UnivariateSeries::new(vec![]).is_err());
    let f = BivariateSeries::zeros(2, 3);
    assert!(diff_z(&f, 4).is_err());
}
