use approx::assert_relative_eq;
use proptest::prelude::*;

use zorich_core::experiments::{fixed_point_from, CircleMap};
use zorich_core::geometry::{hemisphere_to_square, square_to_hemisphere, SquarePoint};
use zorich_core::map::{cell_of, derive_constants, eval_F, eval_f, lambda};
use zorich_core::symbolic::{e, e_inv, e_inv_iter, e_iter, Itinerary};
use zorich_core::{CellIndex, MapConfig, Vec3};

fn cfg() -> MapConfig {
    static CFG: std::sync::OnceLock<MapConfig> = std::sync::OnceLock::new();
    *CFG.get_or_init(|| derive_constants(0.5, 64).unwrap())
}

fn even_cell() -> impl Strategy<Value = CellIndex> {
    (-20i64..20, -20i64..20).prop_map(|(a, b)| CellIndex::new(a, if (a + b) % 2 == 0 { b } else { b + 1 }))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn chart_round_trip(p1 in -1.0f64..=1.0, p2 in -1.0f64..=1.0) {
        let p = SquarePoint::new(p1, p2).unwrap();
        let u = square_to_hemisphere(p).unwrap();
        assert_relative_eq!(u.to_vec3().norm(), 1.0, epsilon = 1e-14);
        prop_assert!(u.u3 >= -1e-15);
        let q = hemisphere_to_square(u).unwrap();
        prop_assert!((q.p1 - p1).abs() < 1e-12 && (q.p2 - p2).abs() < 1e-12);
    }

    #[test]
    fn modulus_is_exponential(x1 in -50.0f64..50.0, x2 in -50.0f64..50.0, x3 in -5.0f64..5.0) {
        let c = cfg();
        let y = eval_F(Vec3::new(x1, x2, x3), &c).unwrap();
        assert_relative_eq!(y.norm(), x3.exp(), max_relative = 1e-12);
    }

    #[test]
    fn doubly_periodic(x1 in -10.0f64..10.0, x2 in -10.0f64..10.0, x3 in -3.0f64..3.0, k in -5i32..5, l in -5i32..5) {
        let c = cfg();
        let x = Vec3::new(x1, x2, x3);
        let shifted = Vec3::new(x1 + 4.0 * k as f64, x2 + 4.0 * l as f64, x3);
        let (a, b) = (eval_F(x, &c).unwrap(), eval_F(shifted, &c).unwrap());
        prop_assert!(a.dist(b) < 1e-11 * x3.exp().max(1.0));
    }

    #[test]
    fn inverse_branch(r in even_cell(), y1 in -30.0f64..30.0, y2 in -30.0f64..30.0, dy in 0.0f64..40.0) {
        let c = cfg();
        let y = Vec3::new(y1, y2, c.high_level + dy);
        let x = lambda(y, r, &c).unwrap();
        prop_assert_eq!(cell_of(x.x1, x.x2).0, r);
        let back = eval_f(x, &c).unwrap();
        prop_assert!(back.dist(y) <= 1e-10 * y.norm());
    }

    #[test]
    fn inverse_branch_contracts(r in even_cell(), y in (-20.0f64..20.0, -20.0f64..20.0, 0.0f64..20.0),
                                d in (-0.1f64..0.1, -0.1f64..0.1, 0.0f64..0.1)) {
        let c = cfg();
        let p = Vec3::new(y.0, y.1, c.high_level + y.2);
        let q = Vec3::new(y.0 + d.0, y.1 + d.1, c.high_level + y.2 + d.2);
        let (lp, lq) = (lambda(p, r, &c).unwrap(), lambda(q, r, &c).unwrap());
        // beams are convex, so the chord stays inside T(r)
        prop_assert!(lp.dist(lq) <= c.alpha * p.dist(q) * (1.0 + 1e-9) + 1e-15);
    }

    #[test]
    fn e_inverts(t in 0.0f64..5.0) {
        assert_relative_eq!(e_inv(e(t)), t, max_relative = 1e-12, epsilon = 1e-15);
        assert_relative_eq!(e_inv_iter(e_iter(t, 2).unwrap(), 2), t, max_relative = 1e-10, epsilon = 1e-12);
    }

    #[test]
    fn shifts_compose(cycle in prop::collection::vec(even_cell(), 1..5), j in 0usize..6, k in 0usize..6) {
        let s = Itinerary::periodic(cycle).unwrap();
        let lhs = s.shift(j).shift(k);
        let rhs = s.shift(j + k);
        for n in 0..12 {
            prop_assert_eq!(lhs.cell_at(n), rhs.cell_at(n));
        }
    }

    #[test]
    fn fixed_point_is_unique(x1 in -20.0f64..20.0, x2 in -20.0f64..20.0, x3 in -20.0f64..1.4) {
        let c = cfg();
        let xi = fixed_point_from(Vec3::new(0.0, 0.0, c.low_level), &c, 1e-15).unwrap().point;
        let p = fixed_point_from(Vec3::new(x1, x2, x3), &c, 1e-15).unwrap().point;
        prop_assert!(p.dist(xi) < 1e-10);
    }

    #[test]
    fn circle_map_is_an_increasing_lift(phi in -10.0f64..10.0, h in 1e-6f64..1.0) {
        let m = CircleMap::Oscillating;
        prop_assert!(m.eval(phi + h) > m.eval(phi));
        assert_relative_eq!(m.eval(phi + 2.0 * std::f64::consts::PI), m.eval(phi) + 2.0 * std::f64::consts::PI, epsilon = 1e-12);
    }
}
