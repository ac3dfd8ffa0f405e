use proptest::prelude::*;
use qdde_core::majorant::{
    contraction_ratio, find_x, majorant_e_neumann, norm, operator_a, operator_b, random_sparse_grid, solve_majorant_e,
    NormParams, SpaceKind, WeightedGrid,
};
use qdde_core::problems::worked_example;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grid(kind: SpaceKind, seed: u64) -> WeightedGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = if kind == SpaceKind::E { -10 } else { 0 };
    random_sparse_grid(&mut rng, kind, lo, 10, 8, 12)
}

fn kind() -> impl Strategy<Value = SpaceKind> {
    prop_oneof![Just(SpaceKind::E), Just(SpaceKind::H)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn norm_axioms(k in kind(), s1 in 0u64..10_000, s2 in 0u64..10_000, a in 0.0f64..5.0, t in 0.2f64..0.45, x in 0.1f64..2.0) {
        let p = NormParams::new(t, x, 2.0).unwrap();
        let (u, w) = (grid(k, s1), grid(k, s2));
        let (nu, nw) = (norm(&u, &p), norm(&w, &p));
        prop_assert!(nu >= 0.0 && nu.is_finite());
        prop_assert_eq!(norm(&u.zeros_like(), &p), 0.0);
        prop_assert!(u.is_zero() || nu > 0.0);
        prop_assert!((norm(&u.scale(a), &p) - a * nu).abs() <= 1e-13 * (a * nu).max(1e-300));
        // nonnegative grids: the norm is additive, and |u - w| obeys the triangle inequality
        let sum = norm(&u.add_grid(&w), &p);
        prop_assert!((sum - nu - nw).abs() <= 1e-13 * sum.max(1e-300));
        prop_assert!(norm(&u.abs_diff(&w), &p) <= (nu + nw) * (1.0 + 1e-13));
    }

    #[test]
    fn norm_is_monotone_in_x(k in kind(), seed in 0u64..10_000, x in 0.1f64..2.0, f in 0.1f64..1.0) {
        let p = NormParams::new(0.4, x, 2.0).unwrap();
        let v = grid(k, seed);
        prop_assert!(norm(&v, &p.with_x(x * f)) <= norm(&v, &p) * (1.0 + 1e-13));
    }

    #[test]
    fn h_norm_is_monotone_in_t(seed in 0u64..10_000, t in 0.05f64..0.45, f in 0.1f64..1.0) {
        let p = NormParams::new(t, 1.0, 2.0).unwrap();
        let v = grid(SpaceKind::H, seed);
        prop_assert!(norm(&v, &p.with_t(t * f)) <= norm(&v, &p) * (1.0 + 1e-13));
    }

    #[test]
    fn neumann_solution_solves_the_fixed_point(seed in 0u64..1000, delta in 0.3f64..1.5, t in 0.3f64..1.0) {
        let prob = worked_example();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = WeightedGrid::zeros(SpaceKind::E, -8, 8, 12).unwrap();
        for l in -8..=8 {
            init.set(l, 0, rand::Rng::gen_range(&mut rng, 0.0..2.0)).unwrap();
        }
        let a = operator_a(&prob, 1.0, delta);
        let base = NormParams::new(t, 1.0, 2.0).unwrap();
        let xs = find_x(&a, &base, 1.0, -8, 8, 12).unwrap();
        let (vn, res) = majorant_e_neumann(&prob, 1.0, delta, &init, &base.with_x(xs.x)).unwrap();
        prop_assert!(res.residual <= 1e-10);
        let vr = solve_majorant_e(&prob, 1.0, delta, &init).unwrap();
        for l in -8..=8 {
            for h in 0..=12 {
                let (x, y) = (vn.get(l, h), vr.get(l, h));
                prop_assert!((x - y).abs() <= 1e-12 * y.max(1e-300));
            }
        }
    }
}

#[test]
fn searched_x_contracts_both_operators() {
    let prob = worked_example();
    for (op, base, window) in [
        (operator_a(&prob, 1.0, 1.0), NormParams::new(0.7, 1.0, 2.0).unwrap(), (-20, 20, 16)),
        (operator_b(&prob), NormParams::new(0.45, 1.0, 2.0).unwrap(), (0, 20, 12)),
    ] {
        let xs = find_x(&op, &base, 1.0, window.0, window.1, window.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let ratio = contraction_ratio(&op, &base.with_x(xs.x), window, 100, &mut rng);
        assert!(ratio <= 0.5 + 1e-9, "{ratio}");
    }
}
