mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use sprecher::splines::{GeneralSpline, KnotGrid, SplineKind};

/// A grid that contains every knot of `g`: the step divides by `k` and the
/// ends may grow by whole new steps.
fn refine(g: &KnotGrid, k: usize, left: usize, right: usize) -> KnotGrid {
    let h = g.step() / k as f64;
    let count = (g.count - 1) * k + 1 + left + right;
    KnotGrid::new(g.lo - left as f64 * h, g.hi + right as f64 * h, count).unwrap()
}

fn check_refinement(
    s: &GeneralSpline,
    fine: &KnotGrid,
    probes: usize,
    r: &mut rand_chacha::ChaCha8Rng,
) -> f64 {
    let t = s.resample(*fine);
    let (lo, hi) = (s.grid.lo, s.grid.hi);
    (0..probes)
        .map(|_| {
            let x = lo + r.random::<f64>() * (hi - lo);
            (t.eval(x) - s.eval(x)).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn pwl_resampling_onto_refining_grids_is_exact() {
    let mut r = rng(99);
    for case in 0..40 {
        let count = r.random_range(2..20);
        let grid =
            KnotGrid::new(r.random_range(-3.0..0.0), r.random_range(0.5..4.0), count).unwrap();
        let values = (0..count).map(|_| r.random_range(-5.0..5.0)).collect();
        let mut s = GeneralSpline::new(grid, values, SplineKind::Pwl);
        if case % 2 == 1 {
            s = GeneralSpline::identity_with_codomain(grid, SplineKind::Pwl);
            let p: Vec<f64> = s
                .params()
                .iter()
                .map(|v| v + r.random_range(-1.0..1.0))
                .collect();
            s.set_params(&p);
        }
        let fine = refine(
            &grid,
            r.random_range(1..6),
            r.random_range(0..4),
            r.random_range(0..4),
        );
        let err = check_refinement(&s, &fine, 1000, &mut r);
        assert!(err <= 1e-12, "case {case}: {err:e}");
    }
}

#[test]
fn identity_grid_resample_is_a_no_op() {
    let grid = KnotGrid::new(-1.0, 1.0, 9).unwrap();
    let s = GeneralSpline::new(
        grid,
        (0..9).map(|k| (k as f64).sin()).collect(),
        SplineKind::Pchip,
    );
    let t = s.resample(grid);
    for k in 0..=100 {
        let x = -1.0 + 0.02 * k as f64;
        assert!((t.eval(x) - s.eval(x)).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn refining_preserves_knot_values(
        values in prop::collection::vec(-10.0f64..10.0, 2..12),
        k in 1usize..5,
    ) {
        let grid = KnotGrid::new(0.0, 1.0, values.len()).unwrap();
        let s = GeneralSpline::new(grid, values.clone(), SplineKind::Pwl);
        let t = s.resample(refine(&grid, k, 0, 0));
        for (j, v) in values.iter().enumerate() {
            prop_assert!((t.values[j * k] - v).abs() <= 1e-12);
        }
    }
}
