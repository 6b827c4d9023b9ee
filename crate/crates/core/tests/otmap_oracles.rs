mod common;

use common::{brute_force_ot_cost, grid_search_median, ot_fixtures};
use dmk::otmap::{fermat_weber_objective, geometric_median, sinkhorn_plan, AtomicMeasure, SinkhornOptions};
use proptest::prelude::*;

fn marginal_error(plan: &dmk::otmap::TransportPlan, mu: &AtomicMeasure, nu: &AtomicMeasure) -> f64 {
    let rows = plan.row_sums().iter().zip(&mu.weights).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let cols = plan.col_sums().iter().zip(&nu.weights).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    rows.max(cols)
}

#[test]
fn fixture_set_covers_all_shapes() {
    let shapes: Vec<(usize, usize)> = ot_fixtures().iter().map(|(_, a, b)| (a.len(), b.len())).collect();
    for s in [(1, 1), (2, 2), (3, 3), (2, 4), (4, 3), (4, 4)] {
        assert!(shapes.contains(&s), "missing {s:?}");
    }
}

#[test]
fn brute_force_on_hand_instances() {
    let one = |p| AtomicMeasure::new(vec![p], vec![1.0]).unwrap();
    assert!((brute_force_ot_cost(&one([0.0, 0.0]), &one([3.0, 4.0])) - 5.0).abs() < 1e-15);
    // crossing assignment is never optimal
    let mu = AtomicMeasure::new(vec![[0.0, 0.0], [1.0, 0.0]], vec![0.5, 0.5]).unwrap();
    let nu = AtomicMeasure::new(vec![[0.0, 1.0], [1.0, 1.0]], vec![0.5, 0.5]).unwrap();
    assert!((brute_force_ot_cost(&mu, &nu) - 1.0).abs() < 1e-15);
    // a split atom
    let mu = AtomicMeasure::new(vec![[0.0, 0.0]], vec![1.0]).unwrap();
    let nu = AtomicMeasure::new(vec![[1.0, 0.0], [0.0, 2.0]], vec![0.25, 0.75]).unwrap();
    assert!((brute_force_ot_cost(&mu, &nu) - 1.75).abs() < 1e-15);
}

#[test]
fn sinkhorn_matches_brute_force_on_fixtures() {
    for (name, mu, nu) in ot_fixtures() {
        let exact = brute_force_ot_cost(&mu, &nu);
        let plan = sinkhorn_plan(&mu, &nu, 1e-4, &SinkhornOptions::default()).unwrap();
        assert!(plan.converged, "{name}");
        let cost = plan.cost(&mu, &nu);
        assert!((cost - exact).abs() <= 1e-2 * exact, "{name}: {cost} vs {exact}");
        assert!(marginal_error(&plan, &mu, &nu) <= 1e-9, "{name}");
        assert!(plan.values.iter().all(|&v| v >= 0.0), "{name}");
    }
}

#[test]
fn sinkhorn_cost_approaches_exact_as_epsilon_shrinks() {
    let (_, mu, nu) = ot_fixtures().into_iter().find(|(n, ..)| n.contains("3x3")).unwrap();
    let exact = brute_force_ot_cost(&mu, &nu);
    let gaps: Vec<f64> = [1e-1, 1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&eps| (sinkhorn_plan(&mu, &nu, eps, &SinkhornOptions::default()).unwrap().cost(&mu, &nu) - exact).abs())
        .collect();
    assert!(gaps[3] < 1e-3 * exact, "{gaps:?}");
    assert!(gaps[3] < gaps[0], "{gaps:?}");
}

#[test]
fn weiszfeld_matches_grid_search() {
    let cases: Vec<(Vec<[f64; 2]>, Vec<f64>)> = vec![
        (vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![1.0, 1.0, 1.0]),
        (vec![[0.1, 0.2], [0.9, 0.4], [0.5, 0.95], [0.3, 0.6]], vec![0.1, 0.4, 0.2, 0.3]),
        (vec![[0.0, 0.0], [2.0, 0.0], [1.0, 3.0], [1.0, 1.0]], vec![1.0, 1.0, 1.0, 5.0]),
    ];
    for (pts, w) in cases {
        let (y, _) = geometric_median(&pts, &w, 1e-12, 10_000).unwrap();
        let (_, grid_best) = grid_search_median(&pts, &w);
        let ours = fermat_weber_objective(y, &pts, &w);
        assert!(ours <= grid_best + 1e-9, "{ours} vs grid {grid_best}");
    }
}

fn small_instance() -> impl Strategy<Value = (AtomicMeasure, AtomicMeasure)> {
    let side = |n: usize| {
        (prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), n), prop::collection::vec(1u32..16, n)).prop_map(|(p, w)| {
            let total: u32 = w.iter().sum();
            let pts = p.into_iter().map(|(x, y)| [x, y]).collect();
            AtomicMeasure::new(pts, w.iter().map(|&v| v as f64 / total as f64).collect()).unwrap()
        })
    };
    (1usize..=4, 1usize..=4).prop_flat_map(move |(n, m)| (side(n), side(m)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sinkhorn_plans_are_feasible_and_near_optimal((mu, nu) in small_instance()) {
        let plan = sinkhorn_plan(&mu, &nu, 1e-3, &SinkhornOptions::default()).unwrap();
        prop_assert!(plan.values.iter().all(|&v| v >= 0.0));
        prop_assert!(marginal_error(&plan, &mu, &nu) <= 1e-8);
        let exact = brute_force_ot_cost(&mu, &nu);
        // entropic cost never beats the LP optimum
        prop_assert!(plan.cost(&mu, &nu) >= exact - 1e-8);
        prop_assert!(plan.cost(&mu, &nu) <= exact + 0.05);
    }

    #[test]
    fn weiszfeld_never_loses_to_the_atoms(
        pts in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 1..6),
        seed_w in prop::collection::vec(0.05..1.0f64, 6),
    ) {
        let pts: Vec<[f64; 2]> = pts.into_iter().map(|(x, y)| [x, y]).collect();
        let w = &seed_w[..pts.len()];
        let (y, _) = geometric_median(&pts, w, 1e-12, 10_000).unwrap();
        let ours = fermat_weber_objective(y, &pts, w);
        for p in &pts {
            prop_assert!(ours <= fermat_weber_objective(*p, &pts, w) + 1e-9);
        }
    }
}
