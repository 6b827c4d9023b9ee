//! Functionals tracked along a run: energy, half mass, Lyapunov functional,
//! errors against reference solutions, and the CSV history.

use std::fmt::Write as _;

use thiserror::Error;

use crate::assembly::Discretization;
use crate::fem::{QuadratureRule, SpaceKind};
use crate::mesh::{Point, Triangulation};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("exact W1 must be positive, got {0}")]
    NonPositiveW1(f64),
    #[error("reference density has zero L2 norm")]
    ZeroReference,
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

pub const CSV_HEADER: &str = "step,time,dt,energy,mass_half,lyapunov,var,err_tdens,err_wass,pcg_it,picard_it,wall_s";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiagnosticsRecord {
    pub step: usize,
    pub time: f64,
    pub dt: f64,
    pub energy: f64,
    /// `½ bᵀu`, the energy with unprojected gradients.
    pub energy_raw: f64,
    pub mass_half: f64,
    pub lyapunov: f64,
    /// NaN before the first step.
    pub var: f64,
    pub err_tdens: Option<f64>,
    pub err_wass: Option<f64>,
    pub pcg_iterations: usize,
    pub picard_iterations: usize,
    pub contraction: Option<f64>,
    pub wall_seconds: f64,
}

fn cell(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.17e}")
    } else {
        String::new()
    }
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(cell).unwrap_or_default()
}

impl DiagnosticsRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{:.6}",
            self.step,
            cell(self.time),
            cell(self.dt),
            cell(self.energy),
            cell(self.mass_half),
            cell(self.lyapunov),
            cell(self.var),
            opt_cell(self.err_tdens),
            opt_cell(self.err_wass),
            self.pcg_iterations,
            self.picard_iterations,
            self.wall_seconds
        )
    }
}

pub fn history_csv(history: &[DiagnosticsRecord]) -> String {
    let mut out = String::with_capacity(200 * (history.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in history {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

/// Reads back a history written by [`history_csv`]. Only CSV columns are
/// restored.
pub fn parse_history_csv(text: &str) -> Result<Vec<DiagnosticsRecord>, DiagnosticsError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => return Err(DiagnosticsError::Csv { line: 1, msg: "missing or wrong header".into() }),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| DiagnosticsError::Csv { line: i + 1, msg };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(err(format!("expected 12 fields, found {}", f.len())));
        }
        let real = |s: &str| -> Result<f64, DiagnosticsError> {
            if s.is_empty() {
                Ok(f64::NAN)
            } else {
                s.parse().map_err(|_| err(format!("bad number {s:?}")))
            }
        };
        let int = |s: &str| -> Result<usize, DiagnosticsError> { s.parse().map_err(|_| err(format!("bad integer {s:?}"))) };
        let opt = |s: &str| -> Result<Option<f64>, DiagnosticsError> { Ok(if s.is_empty() { None } else { Some(real(s)?) }) };
        out.push(DiagnosticsRecord {
            step: int(f[0])?,
            time: real(f[1])?,
            dt: real(f[2])?,
            energy: real(f[3])?,
            energy_raw: f64::NAN,
            mass_half: real(f[4])?,
            lyapunov: real(f[5])?,
            var: real(f[6])?,
            err_tdens: opt(f[7])?,
            err_wass: opt(f[8])?,
            pcg_iterations: int(f[9])?,
            picard_iterations: int(f[10])?,
            contraction: None,
            wall_seconds: real(f[11])?,
        });
    }
    Ok(out)
}

/// Density mass carried by each coarse cell, `∫_T τ`.
fn coarse_cell_mass(tdens: &[f64], disc: &Discretization) -> Vec<f64> {
    let coarse = disc.coarse();
    let rho = disc.cell_density(tdens);
    let pot_mesh = disc.potential_mesh();
    if disc.pairing().is_two_grid() {
        let parent = pot_mesh.parent().expect("two-grid pair");
        let mut m = vec![0.0; coarse.triangle_count()];
        for (c, &k) in parent.iter().enumerate() {
            m[k] += rho[c] * pot_mesh.area(c);
        }
        m
    } else {
        rho.iter().enumerate().map(|(k, r)| r * coarse.area(k)).collect()
    }
}

/// `½ Σ_T g_T² ∫_T τ` with the projected gradient magnitude `g` the
/// dynamics use.
pub fn energy(tdens: &[f64], pot: &[f64], disc: &Discretization) -> f64 {
    let g = disc.gradient_magnitude(pot);
    0.5 * coarse_cell_mass(tdens, disc).iter().zip(&g).map(|(m, g)| m * g * g).sum::<f64>()
}

/// `½ ∫ τ |∇u|²` with the potential-mesh gradients.
pub fn energy_raw(tdens: &[f64], pot: &[f64], disc: &Discretization) -> f64 {
    let rho = disc.cell_density(tdens);
    let mesh = disc.potential_mesh();
    0.5 * disc
        .potential_gradients(pot)
        .iter()
        .enumerate()
        .map(|(c, g)| rho[c] * mesh.area(c) * (g[0] * g[0] + g[1] * g[1]))
        .sum::<f64>()
}

/// `½ ∫ τ`.
pub fn mass_half(tdens: &[f64], disc: &Discretization) -> f64 {
    0.5 * tdens.iter().zip(disc.mass()).map(|(t, m)| t * m).sum::<f64>()
}

/// `(E, M_half, S)` with `S = E + M_half`.
pub fn lyapunov(tdens: &[f64], pot: &[f64], disc: &Discretization) -> (f64, f64, f64) {
    let e = energy(tdens, pot, disc);
    let m = mass_half(tdens, disc);
    (e, m, e + m)
}

pub fn err_wass(s: f64, exact_w1: f64) -> Result<f64, DiagnosticsError> {
    if !(exact_w1 > 0.0) {
        return Err(DiagnosticsError::NonPositiveW1(exact_w1));
    }
    Ok((s - exact_w1) / exact_w1)
}

/// Least-squares slope of `log err` against `log h`. Needs two levels with
/// positive errors.
pub fn convergence_rate(h: &[f64], err: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = h.iter().zip(err).filter(|(h, e)| **h > 0.0 && **e > 0.0).map(|(h, e)| (h.ln(), e.ln())).collect();
    if pts.len() < 2 || pts.len() != h.len() {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// `log(e_k / e_{k+1}) / log(h_k / h_{k+1})` for consecutive levels.
pub fn pairwise_rates(h: &[f64], err: &[f64]) -> Vec<f64> {
    h.windows(2).zip(err.windows(2)).map(|(h, e)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln()).collect()
}

/// A reference density sampled once at the quadrature points of every
/// coarse cell, so the L2 error can be evaluated cheaply along a run.
#[derive(Clone, Debug)]
pub struct ReferenceSamples {
    rule: QuadratureRule,
    /// Per cell: reference values at the rule's points.
    values: Vec<Vec<f64>>,
    norm: f64,
}

impl ReferenceSamples {
    pub fn new(disc: &Discretization, reference: impl Fn(Point) -> f64, order: usize) -> Result<Self, DiagnosticsError> {
        let rule = QuadratureRule::of_order(order.max(2)).expect("supported order");
        let mesh = disc.coarse();
        let mut norm2 = 0.0;
        let values: Vec<Vec<f64>> = (0..mesh.triangle_count())
            .map(|t| {
                let [a, b, c] = mesh.vertices(t);
                let area = mesh.area(t);
                rule.points
                    .iter()
                    .map(|&(l, w)| {
                        let p = [l[0] * a[0] + l[1] * b[0] + l[2] * c[0], l[0] * a[1] + l[1] * b[1] + l[2] * c[1]];
                        let v = reference(p);
                        norm2 += w * area * v * v;
                        v
                    })
                    .collect()
            })
            .collect();
        if !(norm2 > 0.0) {
            return Err(DiagnosticsError::ZeroReference);
        }
        Ok(ReferenceSamples { rule, values, norm: norm2.sqrt() })
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }
}

/// `‖τ − μ‖_{L²} / ‖μ‖_{L²}` by per-cell quadrature.
pub fn err_tdens(tdens: &[f64], reference: &ReferenceSamples, disc: &Discretization) -> f64 {
    let mesh = disc.coarse();
    let kind = disc.density_space().kind;
    let mut err2 = 0.0;
    for (t, vals) in reference.values.iter().enumerate() {
        let area = mesh.area(t);
        let tri = mesh.triangles()[t];
        for (&(l, w), &v) in reference.rule.points.iter().zip(vals) {
            let th = match kind {
                SpaceKind::P0 => tdens[t],
                SpaceKind::P1 => l[0] * tdens[tri[0]] + l[1] * tdens[tri[1]] + l[2] * tdens[tri[2]],
            };
            err2 += w * area * (th - v) * (th - v);
        }
    }
    err2.sqrt() / reference.norm
}

/// Fraction of interior cells whose value differs from the mean over its
/// edge neighbors by more than `threshold` times that mean. A cell is
/// interior when it does not touch the domain boundary and it and all its
/// edge neighbors exceed `support`.
pub fn oscillation_fraction(cell_values: &[f64], mesh: &Triangulation, threshold: f64, support: f64) -> f64 {
    let neighbors = mesh.edge_neighbors();
    let boundary = mesh.touches_boundary();
    let mut interior = 0usize;
    let mut flagged = 0usize;
    for (t, nb) in neighbors.iter().enumerate() {
        if boundary[t] || nb.is_empty() || cell_values[t] <= support || nb.iter().any(|&k| cell_values[k] <= support) {
            continue;
        }
        interior += 1;
        let mean = nb.iter().map(|&k| cell_values[k]).sum::<f64>() / nb.len() as f64;
        if (cell_values[t] - mean).abs() > threshold * mean.abs() {
            flagged += 1;
        }
    }
    if interior == 0 {
        0.0
    } else {
        flagged as f64 / interior as f64
    }
}

/// Quadrature of `−½ ∫ τ (|∇u| − 1)² (|∇u| + 1)` with projected gradients.
pub fn lie_derivative(tdens: &[f64], pot: &[f64], disc: &Discretization) -> f64 {
    let g = disc.gradient_magnitude(pot);
    -0.5 * coarse_cell_mass(tdens, disc)
        .iter()
        .zip(&g)
        .map(|(m, g)| m * (g - 1.0).powi(2) * (g + 1.0))
        .sum::<f64>()
}

/// `|(S₁ − S₀)/Δt − dS/dt| / |dS/dt|` for consecutive states.
pub fn lie_derivative_residual(s0: f64, s1: f64, dt: f64, derivative: f64) -> f64 {
    ((s1 - s0) / dt - derivative).abs() / derivative.abs().max(f64::MIN_POSITIVE)
}

/// `∫ f φ − ½ ∫ τ |∇φ|²` on the discrete potential space.
pub fn dual_functional(load: &[f64], tdens: &[f64], phi: &[f64], disc: &Discretization) -> f64 {
    let a = disc.stiffness(tdens);
    let aphi = a.matvec(phi);
    let lin: f64 = load.iter().zip(phi).map(|(b, p)| b * p).sum();
    let quad: f64 = phi.iter().zip(&aphi).map(|(p, q)| p * q).sum();
    lin - 0.5 * quad
}

/// Checks Galerkin optimality of `pot`: no trial potential beats it in
/// the dual functional. Returns the largest violation found (≤ 0 passes).
pub fn energy_duality_check(
    load: &[f64],
    tdens: &[f64],
    pot: &[f64],
    trials: &[Vec<f64>],
    disc: &Discretization,
) -> (bool, f64) {
    let best = dual_functional(load, tdens, pot, disc);
    let scale = best.abs().max(1e-300);
    let worst = trials
        .iter()
        .map(|phi| dual_functional(load, tdens, phi, disc) - best)
        .fold(f64::NEG_INFINITY, f64::max);
    (worst <= 1e-10 * scale, worst)
}
