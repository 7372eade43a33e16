use echodoa::music::{DoaEstimate, DoaStatus};
use echodoa::triangulation::{dilution_ellipse, fuse_doa_with_ranges, intersect_two_circles, RangeMeasurement, SensorPose};
use proptest::prelude::*;

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

fn converged(angle: f64, ambiguity: Vec<f64>) -> DoaEstimate {
    DoaEstimate {
        angle_deg: angle,
        status: DoaStatus::Converged,
        ambiguity,
        prominence: 1.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn intersections_satisfy_both_circles(
        s1 in (-2.0f64..2.0, -2.0f64..2.0),
        s2 in (-2.0f64..2.0, -2.0f64..2.0),
        target in (-7.0f64..7.0, -7.0f64..7.0),
    ) {
        prop_assume!(dist(s1, s2) > 1e-3);
        let r1 = dist(s1, target);
        let r2 = dist(s2, target);
        prop_assume!(r1 > 1e-3 && r2 > 1e-3);
        let m1 = RangeMeasurement::new(SensorPose::new(s1.0, s1.1), r1, 0.01);
        let m2 = RangeMeasurement::new(SensorPose::new(s2.0, s2.1), r2, 0.01);
        let points = intersect_two_circles(&m1, &m2).unwrap();
        prop_assert!(!points.is_empty() && points.len() <= 2);
        for &p in &points {
            prop_assert!((dist(s1, p) - r1).abs() <= 1e-9 * r1.max(1.0));
            prop_assert!((dist(s2, p) - r2).abs() <= 1e-9 * r2.max(1.0));
        }
        if points.len() == 2 {
            prop_assert!(points[0].1 >= points[1].1);
        }
    }
}

proptest! {
    #[test]
    fn ellipse_axes_are_ordered(
        a in 0.05f64..1.0,
        target in (-5.0f64..5.0, 0.2f64..7.0),
        sigma_r in 0.0f64..0.1,
    ) {
        let m1 = RangeMeasurement::new(SensorPose::new(-a, 0.0), dist((-a, 0.0), target), sigma_r);
        let m2 = RangeMeasurement::new(SensorPose::new(a, 0.0), dist((a, 0.0), target), sigma_r);
        let e = dilution_ellipse(&m1, &m2, target).unwrap();
        prop_assert!(e.semi_minor >= 0.0 && e.semi_major >= e.semi_minor);
        prop_assert!(e.sigma_x >= 0.0 && e.sigma_y >= 0.0);
    }

    #[test]
    fn reflection_reflects_the_fix(
        a in 0.05f64..1.0,
        target in (-5.0f64..5.0, 0.5f64..7.0),
        theta in -80.0f64..80.0,
        spread in prop::collection::vec(-40.0f64..40.0, 0..3),
        sigma_theta in 0.1f64..10.0,
        fallback in any::<bool>(),
    ) {
        let r1 = dist((-a, 0.0), target);
        let r2 = dist((a, 0.0), target);
        let mut ambiguity: Vec<f64> = std::iter::once(theta).chain(spread.iter().map(|d| theta + d)).collect();
        ambiguity.sort_by(f64::total_cmp);
        let mirrored: Vec<f64> = ambiguity.iter().rev().map(|v| -v).collect();
        let (doa, doa_m) = if fallback {
            (DoaEstimate::fallback(), DoaEstimate::fallback())
        } else {
            (converged(theta, ambiguity), converged(-theta, mirrored))
        };
        let m = |x: f64, r: f64| RangeMeasurement::new(SensorPose::new(x, 0.0), r, 0.01);
        let fix = fuse_doa_with_ranges(&doa, &m(-a, r1), &m(a, r2), sigma_theta).unwrap();
        let mirror = fuse_doa_with_ranges(&doa_m, &m(-a, r2), &m(a, r1), sigma_theta).unwrap();
        prop_assert!((fix.x + mirror.x).abs() < 1e-9);
        prop_assert!((fix.y - mirror.y).abs() < 1e-9);
        prop_assert!((fix.ellipse.semi_major - mirror.ellipse.semi_major).abs() < 1e-9);
        prop_assert!((fix.ellipse.semi_minor - mirror.ellipse.semi_minor).abs() < 1e-9);
        prop_assert_eq!(fix.source, mirror.source);
    }

    #[test]
    fn fusion_narrows_transverse_spread(
        a in 0.05f64..0.5,
        range in 0.5f64..7.0,
        theta in -45.0f64..45.0,
        sigma_r in 0.001f64..0.05,
        sigma_theta in 0.05f64..10.0,
    ) {
        let t = theta.to_radians();
        let target = (range * t.sin(), range * t.cos());
        let m1 = RangeMeasurement::new(SensorPose::new(-a, 0.0), dist((-a, 0.0), target), sigma_r);
        let m2 = RangeMeasurement::new(SensorPose::new(a, 0.0), dist((a, 0.0), target), sigma_r);
        let tri = dilution_ellipse(&m1, &m2, target).unwrap();
        let r_mean = 0.5 * (m1.range_m + m2.range_m);
        prop_assume!(r_mean * sigma_theta.to_radians().tan() < tri.sigma_x);
        let fused = fuse_doa_with_ranges(&converged(theta, vec![theta]), &m1, &m2, sigma_theta).unwrap();
        prop_assert!(fused.ellipse.sigma_x <= tri.sigma_x, "fused {} vs {}", fused.ellipse.sigma_x, tri.sigma_x);
    }
}
