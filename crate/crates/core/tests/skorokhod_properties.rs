use std::sync::Arc;

use proptest::prelude::*;

use meanreflect::bsde::Generator;
use meanreflect::constraints::{ConstantBand, LossPair, MovingBand};
use meanreflect::grid::{build_grid, RngSpec, SamplePath, TimeGrid};
use meanreflect::mrbsde::{picard_solve, Scenario, SolverConfig, TerminalSpec};
use meanreflect::skorokhod::{
    check_backward_continuity_bound, check_comparison, check_continuity_bound, check_tv_bound,
    check_tv_bound_backward, solve_bsp, solve_sp,
};
use meanreflect::stats;

fn path(start: f64, increments: &[f64]) -> SamplePath<f64> {
    let grid = Arc::new(build_grid(1.0, increments.len()).unwrap());
    let mut v = vec![start];
    for d in increments {
        v.push(v.last().unwrap() + d);
    }
    SamplePath::new(grid, v).unwrap()
}

/// Reflection on `[0, a]` straight from the sup/inf representation.
fn reflect_on_interval(psi: &[f64], a: f64) -> Vec<f64> {
    (0..psi.len())
        .map(|t| {
            let inf_to_t = psi[..=t].iter().cloned().fold(f64::INFINITY, f64::min);
            let head = (psi[0] - a).max(0.0).min(inf_to_t);
            let sup = (0..=t)
                .map(|s| (psi[s] - a).min(psi[s..=t].iter().cloned().fold(f64::INFINITY, f64::min)))
                .fold(f64::NEG_INFINITY, f64::max);
            psi[t] - head.max(sup)
        })
        .collect()
}

/// Band whose edges wander as `lo_k = base + wobble_k`, `hi_k = lo_k + width_k`.
fn moving_band(grid: &TimeGrid<f64>, base: f64, wobble: &[f64], width: &[f64]) -> MovingBand<f64> {
    let lo: Vec<f64> = wobble.iter().map(|w| base + w).collect();
    let hi: Vec<f64> = lo.iter().zip(width).map(|(l, w)| l + w).collect();
    MovingBand::new(grid.nodes().to_vec(), lo, hi).unwrap()
}

fn increments(len: impl Into<proptest::collection::SizeRange>) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-0.5f64..0.5, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_solution_is_a_minimal_reflection(
        start in -3.0f64..3.0,
        inc in increments(1..120),
        lo in -1.0f64..0.0,
        width in 0.1f64..2.0,
    ) {
        let s = path(start, &inc);
        let hi = lo + width;
        let sol = solve_sp(&s, &ConstantBand { nodes: s.len(), lo, hi }).unwrap();
        let (x, k, sv) = (sol.x.values(), sol.k.values(), s.values());
        let up = sol.push_up.values();
        let down = sol.push_down.values();
        for i in 0..s.len() {
            prop_assert!(x[i] >= lo - 1e-12 && x[i] <= hi + 1e-12);
            prop_assert!((x[i] - sv[i] - k[i]).abs() <= 1e-12);
            prop_assert_eq!(k[i], up[i] - down[i]);
            prop_assert!(up[i] >= 0.0 && down[i] >= 0.0);
        }
        prop_assert!(up.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(down.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(sol.flat_ok());
        let psi: Vec<f64> = sv.iter().map(|v| v - lo).collect();
        let oracle = reflect_on_interval(&psi, width);
        for (o, xi) in oracle.iter().zip(x) {
            prop_assert!((o + lo - xi).abs() <= 1e-10);
        }
    }

    #[test]
    fn backward_solution_keeps_its_anchor(
        start in -2.0f64..2.0,
        inc in increments(1..120),
        lo in -1.0f64..0.0,
        width in 0.1f64..2.0,
        frac in 0.0f64..=1.0,
    ) {
        let s = path(start, &inc);
        let a = lo + frac * width;
        let sol = solve_bsp(&s, a, &ConstantBand { nodes: s.len(), lo, hi: lo + width }).unwrap();
        let (x, k, sv) = (sol.x.values(), sol.k.values(), s.values());
        let m = s.len() - 1;
        prop_assert_eq!(x[m], a);
        for j in 0..=m {
            prop_assert!((x[j] - (a + sv[m] - sv[j] + k[m] - k[j])).abs() <= 1e-12);
            prop_assert!(x[j] >= lo - 1e-12 && x[j] <= lo + width + 1e-12);
        }
        prop_assert!(sol.flat_ok());
    }

    #[test]
    fn forward_continuity_bound(
        start in -2.0f64..2.0,
        inc in increments(60),
        noise in proptest::collection::vec(-0.05f64..0.05, 60),
        wobble in proptest::collection::vec(-0.3f64..0.3, 61),
        width in proptest::collection::vec(0.3f64..1.5, 61),
        shift in -0.2f64..0.2,
    ) {
        let s1 = path(start, &inc);
        let moved: Vec<f64> = inc.iter().zip(&noise).map(|(a, b)| a + b).collect();
        let s2 = path(start + shift, &moved);
        let g = s1.grid().clone();
        let bp1 = moving_band(&g, 0.0, &wobble, &width);
        let bp2 = moving_band(&g, shift, &wobble, &width);
        let a = solve_sp(&s1, &bp1).unwrap();
        let b = solve_sp(&s2, &bp2).unwrap();
        let rep = check_continuity_bound(&a, &b, &s1, &s2, &bp1, &bp2, &[-3.0, 0.0, 3.0], 1e-9);
        prop_assert!(rep.holds, "{:?}", rep);
    }

    #[test]
    fn backward_continuity_bound(
        start in -2.0f64..2.0,
        inc in increments(60),
        noise in proptest::collection::vec(-0.05f64..0.05, 60),
        wobble in proptest::collection::vec(-0.3f64..0.3, 61),
        width in proptest::collection::vec(0.6f64..1.5, 61),
        shift in -0.1f64..0.1,
        f1 in 0.3f64..0.7,
        f2 in 0.3f64..0.7,
    ) {
        let s1 = path(start, &inc);
        let moved: Vec<f64> = inc.iter().zip(&noise).map(|(a, b)| a + b).collect();
        let s2 = path(start, &moved);
        let g = s1.grid().clone();
        let bp1 = moving_band(&g, 0.0, &wobble, &width);
        let bp2 = moving_band(&g, shift, &wobble, &width);
        let lo_m = wobble[60];
        let a1 = lo_m + f1 * width[60];
        let a2 = lo_m + f2 * width[60];
        let x = solve_bsp(&s1, a1, &bp1).unwrap();
        let y = solve_bsp(&s2, a2, &bp2).unwrap();
        let rep = check_backward_continuity_bound(&x, &y, &s1, &s2, &bp1, &bp2, &[-3.0, 0.0, 3.0], 1e-9);
        prop_assert!(rep.holds, "{:?}", rep);
    }

    #[test]
    fn narrower_bands_push_harder(
        start in -2.0f64..2.0,
        inc in increments(80),
        wobble in proptest::collection::vec(-0.3f64..0.3, 81),
        width in proptest::collection::vec(1.0f64..2.0, 81),
        dl in 0.0f64..0.4,
        dh in 0.0f64..0.4,
    ) {
        let s = path(start, &inc);
        let g = s.grid().clone();
        let wide = moving_band(&g, 0.0, &wobble, &width);
        let narrow_w: Vec<f64> = width.iter().map(|w| w - dl - dh).collect();
        let narrow = moving_band(&g, dl, &wobble, &narrow_w);
        let xs: Vec<f64> = (0..=20).map(|i| -4.0 + 0.4 * i as f64).collect();
        let rep = check_comparison(&s, &wide, &narrow, &xs, 1e-9).unwrap();
        prop_assert!(rep.ordered);
        prop_assert!(rep.holds, "{:?}", rep);
    }

    #[test]
    fn total_variation_bounds(
        start in -3.0f64..3.0,
        inc in increments(1..100),
        wobble in proptest::collection::vec(-0.3f64..0.3, 101),
        width in proptest::collection::vec(0.3f64..1.5, 101),
        frac in 0.0f64..=1.0,
    ) {
        let s = path(start, &inc);
        let n = s.len();
        let bp = moving_band(s.grid(), 0.0, &wobble[..n], &width[..n]);
        let fwd = solve_sp(&s, &bp).unwrap();
        prop_assert!(check_tv_bound(&fwd, &s, 1e-9).holds);
        // Jordan parts never undercount the variation
        prop_assert!(fwd.push_up.last() + fwd.push_down.last() >= fwd.total_variation() - 1e-12);
        let a = wobble[n - 1] + frac * width[n - 1];
        let bwd = solve_bsp(&s, a, &bp).unwrap();
        prop_assert!(check_tv_bound_backward(&bwd, &s, 1e-9).holds);
    }

    #[test]
    fn single_precision_stays_in_band(
        start in -2.0f32..2.0,
        inc in proptest::collection::vec(-0.5f32..0.5, 1..60),
    ) {
        let grid = Arc::new(build_grid(1.0f32, inc.len()).unwrap());
        let mut v = vec![start];
        for d in &inc {
            v.push(v.last().unwrap() + d);
        }
        let s = SamplePath::new(grid, v).unwrap();
        let sol = solve_sp(&s, &ConstantBand { nodes: s.len(), lo: -0.5f32, hi: 0.5 }).unwrap();
        prop_assert!(sol.x.values().iter().all(|x| (-0.5 - 1e-5..=0.5 + 1e-5).contains(x)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// With a constant driver the mean is linear in time, so its backward
    /// reflection is a clamp at the edge the drift runs into.
    #[test]
    fn constant_driver_mean_is_a_clamp(
        c in -5.0f64..5.0,
        lo in -2.0f64..-0.5,
        hi in 0.5f64..2.0,
        seed in 0u64..1000,
    ) {
        let sc = Scenario {
            horizon: 1.0,
            steps: 20,
            particles: 2_000,
            rng: RngSpec::new(seed),
            terminal: TerminalSpec::CentredBrownian { scale: 1.0, shift: 0.0 },
            generator: Generator::constant(c),
            losses: LossPair::band(lo, hi).unwrap(),
            envelope: None,
            obstacles: None,
            config: SolverConfig::default(),
        };
        let smp = sc.sample().unwrap();
        let sol = picard_solve(&sc.problem(&smp)).unwrap();
        let a = stats::mean(&smp.terminal);
        let grid = build_grid(1.0f64, 20).unwrap();
        for (k, &t) in grid.nodes().iter().enumerate() {
            let free = a + c * (1.0 - t);
            let oracle = if c >= 0.0 { free.min(hi) } else { free.max(lo) };
            prop_assert!((sol.mean_y[k] - oracle).abs() <= 1e-9, "node {}: {} vs {}", k, sol.mean_y[k], oracle);
            prop_assert_eq!(sol.k.values()[k], sol.push_up.values()[k] - sol.push_down.values()[k]);
        }
        prop_assert!(sol.flat_ok());
    }
}
