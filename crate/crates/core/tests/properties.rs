use proptest::prelude::*;

use declab::counting::{count_solutions, diagonal_count, CountMethod};
use declab::fatap::FatAP;
use declab::intervals::{Interval, IntervalSet};
use declab::numeric::ExponentFit;

/// Independent oracle: the literal sextuple loop on integers, exact.
fn naive_count(a: &[i64], tol: i64) -> u64 {
    let m = a.len();
    let mut sums = Vec::with_capacity(m * m * m);
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                sums.push(a[i] + a[j] + a[k]);
            }
        }
    }
    let mut c = 0;
    for &s in &sums {
        for &t in &sums {
            if (s - t).abs() <= tol {
                c += 1;
            }
        }
    }
    c
}

fn ivset() -> impl Strategy<Value = IntervalSet> {
    prop::collection::vec((-50.0f64..50.0, 0.0f64..8.0), 0..8).prop_map(|v| {
        IntervalSet::from_intervals(
            v.into_iter()
                .map(|(lo, w)| Interval::new(lo, lo + w))
                .collect(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Integer data with half-integer tolerance: no boundary ties, so all
    // three counts are exact.
    #[test]
    fn counting_methods_match_naive(a in prop::collection::vec(-20i64..20, 1..6), t in 0i64..6) {
        let tol = t as f64 + 0.5;
        let f: Vec<f64> = a.iter().map(|&x| x as f64).collect();
        let want = naive_count(&a, t);
        prop_assert_eq!(count_solutions(&f, tol, CountMethod::Brute).unwrap().total, want);
        prop_assert_eq!(count_solutions(&f, tol, CountMethod::Mitm).unwrap().total, want);
    }

    #[test]
    fn count_is_translation_and_scale_invariant(
        a in prop::collection::vec(-64i64..64, 1..8),
        shift in -1000i64..1000,
        k in -4i32..4,
        t in 0i64..4,
    ) {
        let s = 2f64.powi(k);
        let tol = t as f64 + 0.5;
        let base: Vec<f64> = a.iter().map(|&x| x as f64).collect();
        let moved: Vec<f64> = a.iter().map(|&x| (x + shift) as f64 * s).collect();
        let c0 = count_solutions(&base, tol, CountMethod::Mitm).unwrap();
        let c1 = count_solutions(&moved, tol * s, CountMethod::Mitm).unwrap();
        prop_assert_eq!(c0.total, c1.total);
        prop_assert!(c0.total >= diagonal_count(a.len()));
    }

    #[test]
    fn interval_measure_is_modular(a in ivset(), b in ivset()) {
        let lhs = a.union(&b).measure() + a.intersect(&b).measure();
        let rhs = a.measure() + b.measure();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs));
        prop_assert!((a.intersection_measure(&b) - a.intersect(&b).measure()).abs() <= 1e-9);
        prop_assert!(a.intersect(&b).is_subset_of(&a));
    }

    #[test]
    fn interval_measure_is_translation_invariant(a in ivset(), s in -100.0f64..100.0) {
        prop_assert!((a.translate(s).measure() - a.measure()).abs() <= 1e-9 * (1.0 + a.measure()));
    }

    #[test]
    fn fat_ap_measure_matches_membership(
        x0 in -5.0f64..5.0,
        delta in 0.01f64..0.5,
        v in 0.1f64..2.0,
        r in 0.5f64..10.0,
    ) {
        let p = FatAP::new(x0, delta, v, r).unwrap();
        let set = p.intervals().unwrap();
        // Midpoint rule on the ball; each boundary costs at most one cell.
        let cells = 20_000;
        let h = 2.0 * r / cells as f64;
        let hits = (0..cells).filter(|&i| p.contains(x0 - r + (i as f64 + 0.5) * h)).count();
        let bound = (2.0 * set.len() as f64 + 2.0) * h;
        prop_assert!((hits as f64 * h - set.measure()).abs() <= bound);
        prop_assert!(set.measure() <= 2.0 * r + 1e-12);
    }

    #[test]
    fn fat_ap_scaling_and_duality(
        delta in 0.01f64..0.5,
        v in 0.1f64..2.0,
        r in 0.5f64..10.0,
        k in -3i32..3,
    ) {
        let p = FatAP::new(0.0, delta, v, r).unwrap();
        let s = 2f64.powi(k);
        let m = p.measure().unwrap();
        prop_assert!((p.scaled(s).measure().unwrap() - s * m).abs() <= 1e-9 * s * (1.0 + m));
        let dd = p.dual().dual();
        prop_assert!((dd.delta - delta).abs() <= 1e-12 * delta);
        prop_assert!((dd.v - v).abs() <= 1e-12 * v);
        prop_assert!((dd.r - r).abs() <= 1e-12 * r);
        prop_assert_eq!(p.dual().is_degenerate(), 2.0 / r >= 1.0 / v);
    }

    #[test]
    fn fit_recovers_exact_power_laws(slope in -3.0f64..3.0, c in 0.01f64..100.0, k0 in 0i32..6) {
        let pts: Vec<(f64, f64)> = (k0..k0 + 5).map(|k| {
            let x = 2f64.powi(k);
            (x, c * x.powf(slope))
        }).collect();
        let fit = ExponentFit::from_pairs(&pts).unwrap();
        prop_assert!((fit.slope - slope).abs() < 1e-9);
        prop_assert!((fit.intercept - c.log2()).abs() < 1e-9);
        prop_assert!(fit.residual < 1e-9);
    }
}
