//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

mod common;

use std::time::Instant;

use dmk::assembly::Pairing;
use dmk::diagnostics::{self, DiagnosticsRecord, ReferenceSamples};
use dmk::dynamics::{DmkSolver, DmkState, References, RunOutcome, Scheme, SolverConfig};
use dmk::mesh::Triangulation;
use dmk::oracle::{initial_density, tc2_fixture_mesh, Problem};
use dmk::otmap::{self, AtomicMeasure, MapFlag, SinkhornOptions, TraceOptions, VelocityField};

struct Run {
    solver: DmkSolver,
    outcome: RunOutcome,
    label: String,
    seconds: f64,
}

impl Run {
    fn last(&self) -> &DiagnosticsRecord {
        self.outcome.history.last().unwrap()
    }

    fn max_tdens(&self) -> f64 {
        self.outcome.state.tdens.iter().copied().fold(0.0, f64::max)
    }

    fn max_grad(&self) -> f64 {
        let disc = self.solver.discretization();
        disc.gradient_magnitude(&self.outcome.state.pot).into_iter().fold(0.0, f64::max)
    }

    /// Largest relative increase of the recorded S between steps.
    fn worst_increase(&self) -> f64 {
        self.outcome
            .history
            .windows(2)
            .map(|w| (w[1].lyapunov - w[0].lyapunov) / w[0].lyapunov.abs())
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn start(problem: &Problem, mesh: Triangulation, config: SolverConfig, selector: u8) -> (DmkSolver, DmkState) {
    let mut s = DmkSolver::for_problem(problem, mesh, config).unwrap();
    let disc = s.discretization();
    let tdens = initial_density(selector, disc.density_space(), disc.coarse()).unwrap().coeffs;
    let state = s.initial_state(tdens).unwrap();
    (s, state)
}

fn run(label: &str, problem: &Problem, mesh: Triangulation, config: SolverConfig, selector: u8) -> Run {
    let t0 = Instant::now();
    let (mut solver, state) = start(problem, mesh, config.clone(), selector);
    let refs = References {
        density: problem
            .has_exact_density()
            .then(|| ReferenceSamples::new(solver.discretization(), |p| problem.exact_density(p).unwrap(), config.quadrature_order).unwrap()),
        w1: problem.exact_w1(),
    };
    let outcome = solver.run_to_steady(state, &refs, |_, _| {}).unwrap_or_else(|e| panic!("{label}: {e}"));
    let seconds = t0.elapsed().as_secs_f64();
    eprintln!(
        "  [{label}] {:?} after {} steps, S = {:.10}, {:.1} s, {} stagnated solves",
        outcome.reason,
        outcome.state.step,
        outcome.history.last().unwrap().lyapunov,
        seconds,
        solver.stagnated_solves
    );
    Run { solver, outcome, label: label.to_string(), seconds }
}

fn defaults() -> SolverConfig {
    SolverConfig::default()
}

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, n: usize, pass: bool, detail: String) {
        if !pass {
            self.failures += 1;
        }
        println!("criterion {n:2}: {}  {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn main() {
    let mut report = Report { failures: 0 };
    let tc1_cost = Problem::testcase1(false);
    let tc1_cont = Problem::testcase1(true);
    let tc2 = Problem::testcase2();
    let tc3 = Problem::testcase3();
    let mut default_runs: Vec<Run> = Vec::new();

    // 1: W1 recovery
    let c1 = run("tc1-cost 16", &tc1_cost, tc1_cost.natural_mesh(16).unwrap(), defaults(), 1);
    let s = c1.last().lyapunov;
    let rel = (s - 0.125).abs() / 0.125;
    report.line(1, rel <= 1e-2 && c1.outcome.converged() && c1.seconds < 120.0, format!("S = {s:.8}, relative error {rel:.2e}, {:.1} s", c1.seconds));

    // 2: convergence rate
    let t0 = Instant::now();
    let mut h = Vec::new();
    let mut err = Vec::new();
    for d in [8, 16, 32] {
        let r = run(&format!("tc1-cont {d}"), &tc1_cont, tc1_cont.natural_mesh(d).unwrap(), defaults(), 1);
        h.push(r.solver.discretization().coarse().max_edge_length());
        err.push(r.last().err_tdens.unwrap());
        default_runs.push(r);
    }
    let rate = diagnostics::convergence_rate(&h, &err).unwrap_or(f64::NAN);
    let secs = t0.elapsed().as_secs_f64();
    report.line(
        2,
        rate >= 0.8 && secs < 900.0,
        format!("least-squares rate {rate:.3} (errors {err:.4?}, pairwise {:.3?}), {secs:.0} s", diagnostics::pairwise_rates(&h, &err)),
    );

    // 4: initial-condition independence
    let mut steady = vec![c1.last().lyapunov];
    for sel in [2, 3] {
        let r = run(&format!("tc1-cost 16 mu0={sel}"), &tc1_cost, tc1_cost.natural_mesh(16).unwrap(), defaults(), sel);
        steady.push(r.last().lyapunov);
        default_runs.push(r);
    }
    default_runs.push(c1);
    let lo = steady.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = steady.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spread = (hi - lo) / lo;
    report.line(4, spread <= 1e-6, format!("steady S {steady:.12?}, relative spread {spread:.2e}"));

    // 7: Test Case 2 magnitude on the refined fixture
    let c7 = run("tc2 refined fixture", &tc2, tc2_fixture_mesh().unwrap().refine_uniform(), defaults(), 1);
    let tmax = c7.max_tdens();
    report.line(7, (0.43..=0.53).contains(&tmax) && c7.outcome.converged(), format!("max tau = {tmax:.4} (reference 0.482)"));
    default_runs.push(c7);

    // 11: map quality on Test Case 3
    let c11 = run("tc3 40", &tc3, tc3.natural_mesh(40).unwrap(), defaults(), 1);
    let disc = c11.solver.discretization();
    let h3 = disc.coarse().max_edge_length();
    let q = defaults().quadrature_order;
    let mu = AtomicMeasure::from_density(disc.coarse(), |p| tc3.source(p), q).unwrap();
    let nu = AtomicMeasure::from_density(disc.coarse(), |p| tc3.sink(p), q).unwrap().rescaled(mu.total_mass());
    let vf = VelocityField::from_problem(disc, &c11.outcome.state.tdens, &c11.outcome.state.pot, &tc3).unwrap();
    let dmk_map = otmap::trace_map(&vf, &mu.points, &TraceOptions::for_field(&vf, otmap::DEFAULT_RK4_STEPS));
    let away: Vec<bool> = mu.points.iter().map(|&p| tc3.partition_distance(p).unwrap() >= 2.0 * h3).collect();
    let mut seeds = 0;
    let mut good = 0;
    for (e, _) in dmk_map.iter().zip(&away).filter(|(_, &a)| a) {
        seeds += 1;
        if e.flag == MapFlag::Ok && tc3.distance_to_sink(e.end) <= h3 && e.straightness() <= 1.05 {
            good += 1;
        }
    }
    let frac = good as f64 / seeds.max(1) as f64;
    let t_sk = Instant::now();
    let plan = otmap::sinkhorn_plan(&mu, &nu, 8e-4, &SinkhornOptions::default()).unwrap();
    let bary = otmap::barycentric_map(&plan, &mu.points, &nu.points).unwrap();
    let near: Vec<bool> = away.iter().map(|a| !a).collect();
    let cmp = otmap::compare_maps(&dmk_map, &bary, &near).unwrap();
    let med_h = cmp.away.median / h3;
    eprintln!(
        "  [sinkhorn] {} x {} atoms, {} iterations, converged {}, marginal error {:.2e}, {:.1} s",
        mu.len(),
        nu.len(),
        plan.iterations,
        plan.converged,
        plan.marginal_error,
        t_sk.elapsed().as_secs_f64()
    );
    report.line(
        11,
        frac >= 0.9 && med_h <= 3.0 && plan.converged,
        format!(
            "{} triangles, h = {h3:.4}: {good}/{seeds} seeds at >= 2h from the partition boundary end within h and are straight ({:.1}%); median DMK-Sinkhorn distance {med_h:.3} h",
            disc.coarse().triangle_count(),
            100.0 * frac
        ),
    );
    default_runs.push(c11);

    // 3 and 5 over every default-configuration run above
    let worst = default_runs.iter().map(|r| (r.worst_increase(), &r.label)).max_by(|a, b| a.0.total_cmp(&b.0)).unwrap();
    report.line(3, worst.0 <= 1e-10, format!("{} runs, largest relative S increase {:.2e} ({})", default_runs.len(), worst.0.max(0.0), worst.1));
    let gmax = default_runs.iter().map(|r| (r.max_grad(), &r.label)).max_by(|a, b| a.0.total_cmp(&b.0)).unwrap();
    report.line(5, gmax.0 <= 1.0 + 1e-3, format!("max projected |grad u| = {:.7} ({})", gmax.0, gmax.1));

    // 6: checkerboard instability at Var = 1e-4
    let at_var = |pairing| {
        let config = SolverConfig { pairing, tol_time: 1e-4, ..defaults() };
        let r = run(&format!("tc2 fixture {pairing}"), &tc2, tc2_fixture_mesh().unwrap(), config, 1);
        let support = 1e-3 * r.max_tdens();
        diagnostics::oscillation_fraction(&r.outcome.state.tdens, r.solver.discretization().coarse(), 0.5, support)
    };
    let (single, two) = (at_var(Pairing::P1hP0h), at_var(Pairing::P1h2P0h));
    report.line(6, single > 5.0 * two, format!("oscillating fraction {single:.4} (P1(h)-P0(h)) vs {two:.4} (P1(h/2)-P0(h)), ratio {:.1}", single / two));

    // 8: Picard contraction
    let mut medians = Vec::new();
    let mut ok8 = true;
    for dt in [0.1, 0.2, 0.4] {
        let config = SolverConfig { scheme: Scheme::Implicit, dt0: dt, dt_growth: 1.0, ..defaults() };
        let (mut s, mut state) = start(&tc1_cost, tc1_cost.natural_mesh(8).unwrap(), config, 1);
        let mut cs = Vec::new();
        for _ in 0..60 {
            if let Some(c) = s.step(&mut state).unwrap().contraction {
                cs.push(c);
            }
        }
        let m = median(cs);
        ok8 &= m >= dt / 3.0 && m <= 3.0 * dt;
        medians.push(m);
    }
    let implicit = run("tc1-cost 16 implicit", &tc1_cost, tc1_cost.natural_mesh(16).unwrap(), SolverConfig { scheme: Scheme::Implicit, ..defaults() }, 1);
    let steps = &implicit.outcome.history[1..];
    let avg = steps.iter().map(|r| r.picard_iterations as f64).sum::<f64>() / steps.len() as f64;
    report.line(
        8,
        ok8 && (2.0..=8.0).contains(&avg),
        format!("median C(k) {medians:.3?} at dt [0.1, 0.2, 0.4]; {avg:.2} Picard iterations per step at defaults"),
    );

    // 9: Lie derivative
    let residual = |dt: f64| {
        let config = SolverConfig { dt0: dt, dt_growth: 1.0, ..defaults() };
        let (mut s, mut state) = start(&tc1_cost, tc1_cost.natural_mesh(8).unwrap(), config, 1);
        for _ in 0..(0.5 / dt).round() as usize {
            s.step(&mut state).unwrap();
        }
        let disc = s.discretization().clone();
        let s0 = diagnostics::lyapunov(&state.tdens, &state.pot, &disc).2;
        let der = diagnostics::lie_derivative(&state.tdens, &state.pot, &disc);
        s.step_explicit(&mut state).unwrap();
        let s1 = diagnostics::lyapunov(&state.tdens, &state.pot, &disc).2;
        diagnostics::lie_derivative_residual(s0, s1, dt, der)
    };
    let (r1, r2) = (residual(1e-2), residual(5e-3));
    report.line(9, r1 <= 0.2 && r2 < r1, format!("relative residual {r1:.3e} at dt = 1e-2, {r2:.3e} at dt = 5e-3"));

    // 10: Sinkhorn against the exhaustive oracle
    let mut worst_cost: f64 = 0.0;
    let mut worst_marg: f64 = 0.0;
    let mut all_converged = true;
    let fixtures = common::ot_fixtures();
    for (_, mu, nu) in &fixtures {
        let exact = common::brute_force_ot_cost(mu, nu);
        let plan = otmap::sinkhorn_plan(mu, nu, 1e-4, &SinkhornOptions::default()).unwrap();
        all_converged &= plan.converged;
        worst_cost = worst_cost.max((plan.cost(mu, nu) - exact).abs() / exact);
        let rows = plan.row_sums().iter().zip(&mu.weights).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let cols = plan.col_sums().iter().zip(&nu.weights).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst_marg = worst_marg.max(rows.max(cols));
    }
    report.line(
        10,
        all_converged && worst_cost <= 1e-2 && worst_marg <= 1e-9,
        format!("{} instances, worst cost gap {worst_cost:.2e}, worst marginal error {worst_marg:.2e}", fixtures.len()),
    );

    println!("{} of 11 criteria failed", report.failures);
    if report.failures > 0 {
        std::process::exit(1);
    }
}
