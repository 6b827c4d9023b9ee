//! Time stepping of the density/potential system: forward Euler, or
//! backward Euler with Picard iterations, with adaptive steps, a density
//! floor and steady-state detection.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use thiserror::Error;

use crate::assembly::{CsrMatrix, Discretization, Pairing};
use crate::diagnostics::{self, DiagnosticsRecord, ReferenceSamples};
use crate::linsolve::{build_ic_preconditioner, pcg_solve, LinsolveError, PcgOptions, PcgReport, Preconditioner};
use crate::oracle::Problem;

#[derive(Debug, Error)]
pub enum DmkError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("linear solver: {0}")]
    Linsolve(#[from] LinsolveError),
    #[error("step {step}: PCG stopped at relative residual {residual:e} after {iterations} iterations")]
    Pcg { step: usize, iterations: usize, residual: f64 },
    #[error("step {step}: density update still negative after {retries} time-step halvings")]
    NegativeUpdate { step: usize, retries: usize },
    #[error("step {step}: Picard iteration did not converge after {retries} time-step halvings")]
    Picard { step: usize, retries: usize },
    #[error("initial density must be at least the floor {floor:e}; found {min:e}")]
    InitialDensity { floor: f64, min: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Explicit,
    Implicit,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Explicit => "explicit",
            Scheme::Implicit => "implicit",
        })
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "explicit" => Ok(Scheme::Explicit),
            "implicit" => Ok(Scheme::Implicit),
            _ => Err(format!("unknown scheme {s:?} (expected explicit or implicit)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub scheme: Scheme,
    pub pairing: Pairing,
    pub dt0: f64,
    pub dt_max: f64,
    pub dt_growth: f64,
    pub tol_picard: f64,
    pub max_picard: usize,
    pub tol_time: f64,
    pub tol_pcg: f64,
    pub pcg_max_iter: usize,
    pub ic_drop_tolerance: f64,
    pub tdens_floor: f64,
    pub t_max: f64,
    pub step_max: usize,
    /// Rebuild the preconditioner at least this often (time steps).
    pub refresh_every: usize,
    /// Rebuild when a solve needs this many times the previous iterations.
    pub refresh_ratio: f64,
    pub max_dt_halvings: usize,
    pub quadrature_order: usize,
    /// Abort when this fraction of density dofs sits at the floor.
    pub saturation_fraction: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            scheme: Scheme::Explicit,
            pairing: Pairing::P1h2P0h,
            dt0: 1e-2,
            dt_max: 0.5,
            dt_growth: 1.05,
            tol_picard: 1e-11,
            max_picard: 50,
            tol_time: 5e-9,
            tol_pcg: 1e-13,
            pcg_max_iter: 5000,
            ic_drop_tolerance: 1e-2,
            tdens_floor: 1e-10,
            t_max: 1e6,
            step_max: 20_000,
            refresh_every: 50,
            refresh_ratio: 1.5,
            max_dt_halvings: 10,
            quadrature_order: 4,
            saturation_fraction: 0.99,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), DmkError> {
        let positive = [
            ("dt0", self.dt0),
            ("dt_max", self.dt_max),
            ("tol_picard", self.tol_picard),
            ("tol_time", self.tol_time),
            ("tol_pcg", self.tol_pcg),
            ("tdens_floor", self.tdens_floor),
            ("t_max", self.t_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(DmkError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.dt_growth >= 1.0) {
            return Err(DmkError::Config(format!("dt_growth must be at least 1, got {}", self.dt_growth)));
        }
        if self.ic_drop_tolerance < 0.0 {
            return Err(DmkError::Config("ic_drop_tolerance must be non-negative".into()));
        }
        if self.max_picard == 0 || self.pcg_max_iter == 0 || self.step_max == 0 {
            return Err(DmkError::Config("iteration limits must be positive".into()));
        }
        if !(2..=5).contains(&self.quadrature_order) {
            return Err(DmkError::Config(format!("quadrature_order must be 2 to 5, got {}", self.quadrature_order)));
        }
        Ok(())
    }
}

/// Density and the potential solving the elliptic equation for it.
#[derive(Clone, Debug, PartialEq)]
pub struct DmkState {
    pub time: f64,
    pub step: usize,
    pub tdens: Vec<f64>,
    pub pot: Vec<f64>,
    /// Step size proposed for the next step.
    pub dt: f64,
    pub last_var: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    pub dt_used: f64,
    pub var: f64,
    pub pcg_iterations: usize,
    pub picard_iterations: usize,
    pub contraction: Option<f64>,
    pub dt_halvings: usize,
    pub preconditioner_rebuilt: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Steady,
    StepLimit,
    TimeLimit,
    FloorSaturated,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub state: DmkState,
    pub history: Vec<DiagnosticsRecord>,
    pub reason: StopReason,
}

impl RunOutcome {
    pub fn converged(&self) -> bool {
        self.reason == StopReason::Steady
    }
}

/// Optional references evaluated into the history.
#[derive(Clone, Debug, Default)]
pub struct References {
    pub density: Option<ReferenceSamples>,
    pub w1: Option<f64>,
}

pub struct DmkSolver {
    disc: Discretization,
    load: Vec<f64>,
    config: SolverConfig,
    precond: Option<Preconditioner>,
    stiffness: CsrMatrix,
    last_iterations: usize,
    steps_since_refresh: usize,
    rebuild_next: bool,
    /// Jacobi fallbacks taken by the preconditioner so far.
    pub jacobi_fallbacks: usize,
    /// Potential solves accepted at the round-off floor above `tol_pcg`.
    pub stagnated_solves: usize,
}

impl DmkSolver {
    pub fn new(disc: Discretization, load: Vec<f64>, config: SolverConfig) -> Result<Self, DmkError> {
        config.validate()?;
        if load.len() != disc.potential_space().dofs {
            return Err(DmkError::Config(format!(
                "load has {} entries, potential space has {}",
                load.len(),
                disc.potential_space().dofs
            )));
        }
        let stiffness = disc.stiffness(&vec![1.0; disc.density_space().dofs]);
        Ok(DmkSolver {
            disc,
            load,
            config,
            precond: None,
            stiffness,
            last_iterations: 0,
            steps_since_refresh: 0,
            rebuild_next: true,
            jacobi_fallbacks: 0,
            stagnated_solves: 0,
        })
    }

    /// Discretizes `problem` on `mesh` with the configured pairing.
    pub fn for_problem(problem: &Problem, mesh: crate::mesh::Triangulation, config: SolverConfig) -> Result<Self, DmkError> {
        config.validate()?;
        let disc = Discretization::new(mesh, config.pairing);
        let load = disc
            .load(|p| problem.forcing(p), config.quadrature_order)
            .map_err(|e| DmkError::Config(e.to_string()))?
            .load;
        DmkSolver::new(disc, load, config)
    }

    pub fn discretization(&self) -> &Discretization {
        &self.disc
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn load(&self) -> &[f64] {
        &self.load
    }

    /// Solves `A[τ] u = b`, warm-started from `pot`.
    pub fn solve_potential(&mut self, tdens: &[f64], pot: &mut [f64], step: usize) -> Result<PcgReport, DmkError> {
        self.disc.stiffness_into(tdens, &mut self.stiffness);
        let mut rebuilt = false;
        if self.precond.is_none() || self.rebuild_next {
            self.rebuild_preconditioner();
            rebuilt = true;
        }
        let mean = pot.iter().sum::<f64>() / pot.len() as f64;
        pot.iter_mut().for_each(|v| *v -= mean);
        let opts = PcgOptions { tol: self.config.tol_pcg, max_iter: self.config.pcg_max_iter, project_constants: true };
        let mut report = pcg_solve(&self.stiffness, &self.load, pot, self.precond.as_ref().unwrap(), &opts)?;
        if !report.converged && !report.stagnated && !rebuilt {
            self.rebuild_preconditioner();
            rebuilt = true;
            let more = pcg_solve(&self.stiffness, &self.load, pot, self.precond.as_ref().unwrap(), &opts)?;
            report.iterations += more.iterations;
            report.final_relative_residual = more.final_relative_residual;
            report.converged = more.converged;
            report.stagnated = more.stagnated;
        }
        if report.stagnated {
            self.stagnated_solves += 1;
        } else if !report.converged {
            return Err(DmkError::Pcg {
                step,
                iterations: report.iterations,
                residual: report.final_relative_residual,
            });
        }
        if !rebuilt && self.last_iterations > 0 && report.iterations as f64 > self.config.refresh_ratio * self.last_iterations as f64 {
            self.rebuild_next = true;
        }
        self.last_iterations = report.iterations;
        report.preconditioner_rebuilt = rebuilt;
        Ok(report)
    }

    fn rebuild_preconditioner(&mut self) {
        let p = build_ic_preconditioner(&self.stiffness, self.config.ic_drop_tolerance);
        if p.jacobi_fallback {
            self.jacobi_fallbacks += 1;
        }
        self.precond = Some(p);
        self.rebuild_next = false;
        self.steps_since_refresh = 0;
        self.last_iterations = 0;
    }

    fn end_step(&mut self) {
        self.steps_since_refresh += 1;
        if self.steps_since_refresh >= self.config.refresh_every {
            self.rebuild_next = true;
        }
    }

    /// State at time 0 with the potential for `tdens`.
    pub fn initial_state(&mut self, tdens: Vec<f64>) -> Result<DmkState, DmkError> {
        if tdens.len() != self.disc.density_space().dofs {
            return Err(DmkError::Config(format!(
                "initial density has {} entries, density space has {}",
                tdens.len(),
                self.disc.density_space().dofs
            )));
        }
        let min = tdens.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min >= self.config.tdens_floor) {
            return Err(DmkError::InitialDensity { floor: self.config.tdens_floor, min });
        }
        let mut pot = vec![0.0; self.disc.potential_space().dofs];
        self.solve_potential(&tdens, &mut pot, 0)?;
        Ok(DmkState { time: 0.0, step: 0, tdens, pot, dt: self.config.dt0, last_var: f64::NAN })
    }

    fn clamp(&self, tdens: &mut [f64]) {
        let floor = self.config.tdens_floor;
        tdens.iter_mut().for_each(|t| *t = t.max(floor));
    }

    fn finish_step(&mut self, state: &mut DmkState, tdens: Vec<f64>, dt: f64, mut report: StepReport) -> Result<StepReport, DmkError> {
        let solve = self.solve_potential(&tdens, &mut state.pot, state.step + 1)?;
        report.pcg_iterations += solve.iterations;
        report.preconditioner_rebuilt |= solve.preconditioner_rebuilt;
        report.var = self.disc.rel_diff(&tdens, &state.tdens) / dt;
        report.dt_used = dt;
        state.tdens = tdens;
        state.time += dt;
        state.step += 1;
        state.last_var = report.var;
        state.dt = (dt * self.config.dt_growth).min(self.config.dt_max);
        self.end_step();
        Ok(report)
    }

    /// Forward Euler: `τ ← τ (1 + Δt (g − 1))`, halving `Δt` while the
    /// update would turn negative.
    pub fn step_explicit(&mut self, state: &mut DmkState) -> Result<StepReport, DmkError> {
        let g = self.disc.density_rate(&state.pot);
        let mut dt = state.dt;
        let mut halvings = 0;
        let next = loop {
            let next: Vec<f64> = state.tdens.iter().zip(&g).map(|(t, g)| t * (1.0 + dt * (g - 1.0))).collect();
            if next.iter().all(|&t| t >= 0.0) {
                break next;
            }
            if halvings == self.config.max_dt_halvings {
                return Err(DmkError::NegativeUpdate { step: state.step + 1, retries: halvings });
            }
            halvings += 1;
            dt *= 0.5;
        };
        let mut next = next;
        self.clamp(&mut next);
        let report = StepReport { dt_halvings: halvings, ..Default::default() };
        self.finish_step(state, next, dt, report)
    }

    /// Backward Euler with Picard iterations
    /// `τ^{m+1} = τ^k / (1 − Δt (g(u^m) − 1))`.
    pub fn step_implicit(&mut self, state: &mut DmkState) -> Result<StepReport, DmkError> {
        let mut dt = state.dt;
        let mut halvings = 0;
        let mut pcg_total = 0;
        loop {
            match self.picard(state, dt, &mut pcg_total)? {
                Some((tdens, pot, iterations, contraction)) => {
                    state.pot = pot;
                    let report = StepReport {
                        picard_iterations: iterations,
                        contraction,
                        dt_halvings: halvings,
                        pcg_iterations: pcg_total,
                        ..Default::default()
                    };
                    return self.finish_step(state, tdens, dt, report);
                }
                None => {
                    if halvings == self.config.max_dt_halvings {
                        return Err(DmkError::Picard { step: state.step + 1, retries: halvings });
                    }
                    halvings += 1;
                    dt *= 0.5;
                }
            }
        }
    }

    #[allow(clippy::type_complexity)]
    fn picard(
        &mut self,
        state: &DmkState,
        dt: f64,
        pcg_total: &mut usize,
    ) -> Result<Option<(Vec<f64>, Vec<f64>, usize, Option<f64>)>, DmkError> {
        let mut current = state.tdens.clone();
        let mut pot = state.pot.clone();
        let mut diffs: Vec<f64> = Vec::new();
        for m in 1..=self.config.max_picard {
            if m > 1 {
                let r = self.solve_potential(&current, &mut pot, state.step + 1)?;
                *pcg_total += r.iterations;
            }
            let g = self.disc.density_rate(&pot);
            let mut next = Vec::with_capacity(current.len());
            for (t, g) in state.tdens.iter().zip(&g) {
                let denom = 1.0 - dt * (g - 1.0);
                if !(denom > 0.0) {
                    return Ok(None);
                }
                next.push(t / denom);
            }
            self.clamp(&mut next);
            let diff: f64 = next
                .iter()
                .zip(&current)
                .zip(self.disc.mass())
                .map(|((a, b), w)| w * (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            diffs.push(diff);
            let rel = diff / self.disc.density_norm(&current);
            current = next;
            if !rel.is_finite() {
                return Ok(None);
            }
            if rel <= self.config.tol_picard {
                let contraction = if diffs.len() >= 2 && diffs[diffs.len() - 2] > 0.0 {
                    Some(diffs[diffs.len() - 1] / diffs[diffs.len() - 2])
                } else {
                    None
                };
                return Ok(Some((current, pot, m, contraction)));
            }
        }
        Ok(None)
    }

    pub fn step(&mut self, state: &mut DmkState) -> Result<StepReport, DmkError> {
        match self.config.scheme {
            Scheme::Explicit => self.step_explicit(state),
            Scheme::Implicit => self.step_implicit(state),
        }
    }

    pub fn record(&self, state: &DmkState, report: &StepReport, refs: &References, wall: f64) -> DiagnosticsRecord {
        let (energy, mass_half, lyapunov) = diagnostics::lyapunov(&state.tdens, &state.pot, &self.disc);
        DiagnosticsRecord {
            step: state.step,
            time: state.time,
            dt: report.dt_used,
            energy,
            energy_raw: diagnostics::energy_raw(&state.tdens, &state.pot, &self.disc),
            mass_half,
            lyapunov,
            var: if state.step == 0 { f64::NAN } else { report.var },
            err_tdens: refs.density.as_ref().map(|r| diagnostics::err_tdens(&state.tdens, r, &self.disc)),
            err_wass: refs.w1.map(|w| (lyapunov - w) / w),
            pcg_iterations: report.pcg_iterations,
            picard_iterations: report.picard_iterations,
            contraction: report.contraction,
            wall_seconds: wall,
        }
    }

    pub fn floor_fraction(&self, tdens: &[f64]) -> f64 {
        let floor = self.config.tdens_floor * (1.0 + 1e-12);
        tdens.iter().filter(|&&t| t <= floor).count() as f64 / tdens.len() as f64
    }

    /// Steps until `Var < tol_time`, the step/time budget, or floor
    /// saturation. `observer` sees every record as it is produced.
    pub fn run_to_steady(
        &mut self,
        mut state: DmkState,
        refs: &References,
        mut observer: impl FnMut(&DmkState, &DiagnosticsRecord),
    ) -> Result<RunOutcome, DmkError> {
        let start = Instant::now();
        let mut history = Vec::new();
        let first = self.record(&state, &StepReport::default(), refs, start.elapsed().as_secs_f64());
        observer(&state, &first);
        history.push(first);
        let reason = loop {
            if state.step >= self.config.step_max {
                break StopReason::StepLimit;
            }
            if state.time >= self.config.t_max {
                break StopReason::TimeLimit;
            }
            let report = self.step(&mut state)?;
            let rec = self.record(&state, &report, refs, start.elapsed().as_secs_f64());
            observer(&state, &rec);
            history.push(rec);
            if report.var < self.config.tol_time {
                break StopReason::Steady;
            }
            if self.floor_fraction(&state.tdens) >= self.config.saturation_fraction {
                break StopReason::FloorSaturated;
            }
        };
        Ok(RunOutcome { state, history, reason })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Triangulation;

    fn solver(pairing: Pairing, load_fn: impl Fn([f64; 2]) -> f64, config: SolverConfig) -> DmkSolver {
        let disc = Discretization::new(Triangulation::square_grid(4).unwrap(), pairing);
        let load = disc.load(load_fn, 4).unwrap().load;
        DmkSolver::new(disc, load, SolverConfig { pairing, ..config }).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig { dt_growth: 0.9, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SolverConfig { tdens_floor: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        assert_eq!("implicit".parse::<Scheme>().unwrap(), Scheme::Implicit);
        assert!("rk4".parse::<Scheme>().is_err());
    }

    #[test]
    fn zero_gradient_decays() {
        let mut s = solver(Pairing::P1h2P0h, |_| 0.0, SolverConfig::default());
        let n = s.discretization().density_space().dofs;
        let mut state = s.initial_state(vec![1.0; n]).unwrap();
        let rep = s.step_explicit(&mut state).unwrap();
        assert_eq!(rep.dt_used, 1e-2);
        assert!(state.tdens.iter().all(|&t| (t - 0.99).abs() < 1e-15));
        assert!((state.dt - 1.05e-2).abs() < 1e-17);
        assert!((rep.var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_forcing_saturates_floor() {
        let config = SolverConfig { dt0: 0.5, dt_growth: 1.0, ..Default::default() };
        let mut s = solver(Pairing::P1hP0h, |_| 0.0, config);
        let n = s.discretization().density_space().dofs;
        let state = s.initial_state(vec![1.0; n]).unwrap();
        let out = s.run_to_steady(state, &References::default(), |_, _| {}).unwrap();
        assert_eq!(out.reason, StopReason::FloorSaturated);
        assert!(out.state.tdens.iter().all(|&t| t >= 1e-10));
    }

    #[test]
    fn implicit_steady_input_is_fixed_point() {
        // zero forcing with the density at the floor: g = 0 and the update
        // is clamped straight back to the floor
        let config = SolverConfig { scheme: Scheme::Implicit, ..Default::default() };
        let mut s = solver(Pairing::P1h2P0h, |_| 0.0, config);
        let n = s.discretization().density_space().dofs;
        let mut state = s.initial_state(vec![1e-10; n]).unwrap();
        let before = state.tdens.clone();
        let rep = s.step_implicit(&mut state).unwrap();
        assert_eq!(rep.picard_iterations, 1);
        assert_eq!(state.tdens, before);
    }

    #[test]
    fn explicit_update_matches_hand_computation() {
        // linear potential through a non-trivial forcing: check each dof
        let mut s = solver(Pairing::P1hP1h, |p| (p[0] - 0.5) * 4.0, SolverConfig::default());
        let n = s.discretization().density_space().dofs;
        let mut state = s.initial_state(vec![2.0; n]).unwrap();
        let g = s.discretization().density_rate(&state.pot);
        let expect: Vec<f64> = g.iter().map(|g| 2.0 * (1.0 + 0.01 * (g - 1.0))).collect();
        s.step_explicit(&mut state).unwrap();
        for (a, b) in state.tdens.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn initial_density_below_floor_rejected() {
        let mut s = solver(Pairing::P1hP0h, |_| 0.0, SolverConfig::default());
        let n = s.discretization().density_space().dofs;
        assert!(matches!(s.initial_state(vec![0.0; n]), Err(DmkError::InitialDensity { .. })));
    }
}
