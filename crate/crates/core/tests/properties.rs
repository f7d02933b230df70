use std::f64::consts::{PI, TAU};

use nalgebra::Vector2;
use proptest::prelude::*;

use porecov_core::control::{central_difference, control_input, Gradient};
use porecov_core::geometry::{line_circle_intersect, mobius_apply};
use porecov_core::metric::barrier;
use porecov_core::partition::{
    build_safe_bars, check_bars, cyclically_ordered, partition_step, sector_widths, weighted_laplacian, MarginalTable,
    PartitionState,
};
use porecov_core::sim::analysis::{circular_distance, cycle_connectivity, select_anchor};
use porecov_core::{Circle, Complex2, MobiusParams};

fn c(x: f64, y: f64) -> Complex2 {
    Complex2::new(x, y)
}

/// Obstacle layout of the six-hole test surface after mapping.
fn six_obstacles() -> Vec<Circle> {
    [
        (0.5932, 0.0, 0.135),
        (0.5677, 1.05, 0.132),
        (0.5975, 2.09, 0.129),
        (0.5987, 3.14, 0.124),
        (0.5708, 4.19, 0.119),
        (0.6008, 5.24, 0.121),
    ]
    .iter()
    .map(|&(r, t, rad)| Circle::new(Complex2::from_polar(r, t), rad))
    .collect()
}

fn sorted_phases(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..TAU, n).prop_filter_map("distinct phases", |mut v| {
        v.sort_by(f64::total_cmp);
        let ok = v.windows(2).all(|w| w[1] - w[0] > 1e-3) && v[0] + TAU - v[v.len() - 1] > 1e-3;
        ok.then_some(v)
    })
}

proptest! {
    #[test]
    fn mobius_inverse_round_trips_and_keeps_the_disk(
        phi in 0.0..TAU, ar in 0.0..0.9, at in 0.0..TAU, zr in 0.0..0.99, zt in 0.0..TAU,
    ) {
        let m = MobiusParams::new(phi, Complex2::from_polar(ar, at)).unwrap();
        let z = Complex2::from_polar(zr, zt);
        let w = mobius_apply(z, &m).unwrap();
        prop_assert!(w.norm() < 1.0 + 1e-12);
        let back = mobius_apply(w, &m.inverse()).unwrap();
        prop_assert!((back - z).norm() < 1e-9);
    }

    #[test]
    fn line_circle_roots_lie_on_the_circle(dt in 0.0..TAU, cr in 0.1..1.2, ct in -0.5..0.5, r in 0.01..0.3) {
        let d = Complex2::from_polar(1.0, dt);
        let circle = Circle::new(Complex2::from_polar(cr, dt + ct), r);
        if let Some((a, b)) = line_circle_intersect(d, &circle) {
            prop_assert!(0.0 <= a && a <= b && b <= 1.0);
            for xi in [a, b] {
                // clipped ends sit on the ray ends instead of the circle
                if xi > 0.0 && xi < 1.0 {
                    prop_assert!(((d * xi - circle.center).norm() - r).abs() < 1e-10);
                }
            }
        } else {
            // no root inside [0, 1]: the unit ray misses the open disk or touches it only outside
            let hit = (0..=1000).any(|k| (d * (k as f64 / 1000.0) - circle.center).norm() < r * (1.0 - 1e-6));
            prop_assert!(!hit);
        }
    }

    #[test]
    fn circular_distance_is_a_metric_on_the_circle(a in -10.0..10.0f64, b in -10.0..10.0f64) {
        let d = circular_distance(a, b);
        prop_assert!((0.0..=PI + 1e-12).contains(&d));
        prop_assert!((d - circular_distance(b, a)).abs() < 1e-12);
        prop_assert!(circular_distance(a, a + TAU) < 1e-9);
    }

    #[test]
    fn selected_anchor_is_nearest(phases in sorted_phases(6), k in 1usize..31) {
        let j = select_anchor(&phases, k, 30);
        let r = TAU * (k - 1) as f64 / 30.0;
        for p in &phases {
            prop_assert!(circular_distance(phases[j], r) <= circular_distance(*p, r));
        }
    }

    #[test]
    fn partition_step_keeps_order_and_pinned_phase(
        phases in sorted_phases(6),
        m in prop::collection::vec(0.0..3.0f64, 6),
        dt in 0.01..0.5f64,
        pin in 0usize..6,
    ) {
        let s = PartitionState::new(phases.clone(), 0.2, 0.005).unwrap();
        if let Ok(next) = partition_step(&s, &m, dt, Some(pin)) {
            prop_assert!(cyclically_ordered(&next));
            prop_assert_eq!(next[pin], phases[pin]);
            let total: f64 = sector_widths(&next).iter().sum();
            prop_assert!((total - TAU).abs() < 1e-9);
        }
    }

    #[test]
    fn table_mass_is_additive(vals in prop::collection::vec(0.0..5.0f64, 8..40), a in 0.0..TAU, w1 in 0.0..3.0f64, w2 in 0.0..3.0f64) {
        let t = MarginalTable::from_values(vals, 2);
        let whole = t.mass_over(a, w1 + w2);
        let parts = t.mass_over(a, w1) + t.mass_over(a + w1, w2);
        prop_assert!((whole - parts).abs() < 1e-9 * (1.0 + whole.abs()));
        prop_assert!(whole >= -1e-12);
    }

    #[test]
    fn spectral_gap_exceeds_uniform_cycle_bound(omega in prop::collection::vec(0.01..5.0f64, 3..9)) {
        let n = omega.len();
        let (l, l2) = weighted_laplacian(&omega);
        let floor = omega.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(l2 >= floor * cycle_connectivity(n) - 1e-9);
        for i in 0..n {
            prop_assert!(l.row(i).sum().abs() < 1e-12);
        }
    }

    #[test]
    fn safe_bars_avoid_obstacles_with_exact_spacing(phases in sorted_phases(6), beta in 0.001..0.02f64) {
        let obs = six_obstacles();
        let s = PartitionState::new(phases, 0.2, beta).unwrap();
        let bars = build_safe_bars(&s, &obs).unwrap();
        let check = check_bars(&bars, &obs, beta);
        prop_assert_eq!(check.violations(), 0, "{:?}", check);
        prop_assert!(check.spacing_error < 1e-9);
    }

    #[test]
    fn barrier_decreases_with_clearance(mu in 0.5..50.0f64, s in 1e-4..2.0f64, ds in 1e-4..1.0f64) {
        prop_assert!(barrier(mu, s) > barrier(mu, s + ds));
        prop_assert!(barrier(mu, s) > 0.0);
    }

    #[test]
    fn control_input_never_exceeds_the_clamp(gx in -10.0..10.0f64, gy in -10.0..10.0f64, k in 0.0..5.0f64, v in 1e-3..1.0f64) {
        let g = Gradient { raw: Vector2::new(gx, gy), scaled: Vector2::new(gx, gy), sigma: 0.0, scale: 1.0, step: 0.01 };
        let u = control_input(&g, k, v);
        prop_assert!(u.norm() <= v * (1.0 + 1e-12));
        // points downhill
        prop_assert!(u.dot(&g.scaled) <= 0.0);
    }

    #[test]
    fn central_difference_is_exact_on_quadratics(a in -3.0..3.0f64, b in -3.0..3.0f64, cc in -3.0..3.0f64, x in -1.0..1.0f64, y in -1.0..1.0f64) {
        let f = |z: Complex2| Some(a * z.re * z.re + b * z.re * z.im + cc * z.im * z.im + z.re - 2.0 * z.im);
        let (g, _) = central_difference(f, c(x, y), 0.1, 0.01).unwrap();
        let want = Vector2::new(2.0 * a * x + b * y + 1.0, b * x + 2.0 * cc * y - 2.0);
        prop_assert!((g - want).norm() < 1e-9);
    }
}
