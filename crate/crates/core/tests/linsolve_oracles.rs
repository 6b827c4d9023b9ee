mod common;

use common::dense_neumann_solve;
use dmk::assembly::{CsrMatrix, Discretization, Pairing};
use dmk::linsolve::{build_ic_preconditioner, pcg_solve, PcgOptions, Preconditioner};
use dmk::mesh::Triangulation;
use dmk::oracle::Problem;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn system(divisions: usize, seed: u64) -> (CsrMatrix, Vec<f64>) {
    let disc = Discretization::new(Triangulation::square_grid(divisions).unwrap(), Pairing::P1hP0h);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tdens: Vec<f64> = (0..disc.density_space().dofs).map(|_| rng.gen_range(0.05..2.0)).collect();
    let b = disc.load(|p| Problem::testcase1(true).forcing(p), 4).unwrap().load;
    (disc.stiffness(&tdens), b)
}

fn a_norm_error(a: &CsrMatrix, x: &[f64], exact: &[f64]) -> f64 {
    let e: Vec<f64> = x.iter().zip(exact).map(|(u, v)| u - v).collect();
    let ae = a.matvec(&e);
    e.iter().zip(&ae).map(|(u, v)| u * v).sum::<f64>().max(0.0).sqrt()
}

#[test]
fn pcg_matches_dense_solution() {
    let (a, b) = system(5, 1);
    let exact = dense_neumann_solve(&a.to_dense(), &b);
    for pre in [Preconditioner::identity(), Preconditioner::jacobi(&a), build_ic_preconditioner(&a, 1e-3)] {
        let mut x = vec![0.0; b.len()];
        let rep = pcg_solve(&a, &b, &mut x, &pre, &PcgOptions { tol: 1e-12, ..Default::default() }).unwrap();
        assert!(rep.converged);
        let err = x.iter().zip(&exact).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err <= 1e-9 * scale, "{err}");
        assert!(x.iter().sum::<f64>().abs() <= 1e-10 * x.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
}

#[test]
fn a_norm_error_never_increases() {
    let (a, b) = system(6, 2);
    let exact = dense_neumann_solve(&a.to_dense(), &b);
    for pre in [Preconditioner::identity(), build_ic_preconditioner(&a, 1e-2)] {
        let mut prev = f64::INFINITY;
        for k in 1..40 {
            let mut x = vec![0.0; b.len()];
            let opts = PcgOptions { tol: 1e-14, max_iter: k, ..Default::default() };
            pcg_solve(&a, &b, &mut x, &pre, &opts).unwrap();
            let e = a_norm_error(&a, &x, &exact);
            assert!(e <= prev * (1.0 + 1e-10) + 1e-14, "iteration {k}: {e} > {prev}");
            prev = e;
        }
    }
}

#[test]
fn incomplete_cholesky_needs_no_more_iterations_than_jacobi() {
    let problem = Problem::testcase1(false);
    let disc = Discretization::new(problem.natural_mesh(8).unwrap(), Pairing::P1h2P0h);
    let a = disc.stiffness(&vec![1.0; disc.density_space().dofs]);
    let b = disc.load(|p| problem.forcing(p), 3).unwrap().load;
    let opts = PcgOptions { tol: 1e-10, ..Default::default() };
    let iters = |pre: &Preconditioner| {
        let mut x = vec![0.0; b.len()];
        pcg_solve(&a, &b, &mut x, pre, &opts).unwrap().iterations
    };
    let (ic, jac) = (iters(&build_ic_preconditioner(&a, 1e-3)), iters(&Preconditioner::jacobi(&a)));
    assert!(ic <= jac, "IC {ic} vs Jacobi {jac}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn adding_a_constant_through_the_kernel_changes_nothing(seed in 0u64..1000, c in -50.0..50.0f64) {
        let (a, b) = system(4, seed);
        let shifted: Vec<f64> = b.iter().zip(a.matvec(&vec![c; b.len()])).map(|(u, v)| u + v).collect();
        let pre = build_ic_preconditioner(&a, 1e-3);
        let opts = PcgOptions { tol: 1e-12, ..Default::default() };
        let (mut x1, mut x2) = (vec![0.0; b.len()], vec![0.0; b.len()]);
        pcg_solve(&a, &b, &mut x1, &pre, &opts).unwrap();
        pcg_solve(&a, &shifted, &mut x2, &pre, &opts).unwrap();
        let scale = x1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (u, v) in x1.iter().zip(&x2) {
            prop_assert!((u - v).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn pcg_agrees_with_the_dense_oracle(seed in 0u64..1000) {
        let (a, b) = system(3, seed);
        let exact = dense_neumann_solve(&a.to_dense(), &b);
        let mut x = vec![0.0; b.len()];
        let rep = pcg_solve(&a, &b, &mut x, &build_ic_preconditioner(&a, 1e-2), &PcgOptions::default()).unwrap();
        prop_assert!(rep.converged || rep.stagnated);
        prop_assert!(a_norm_error(&a, &x, &exact) <= 1e-9 * a_norm_error(&a, &vec![0.0; b.len()], &exact));
    }
}
