//! Transport maps from a DMK steady state, and the entropic comparison map.
//!
//! The DMK map follows particles along `z' = Φ(t, z)` with
//! `Φ = −μ∇u / max((1−t) f⁺ + t f⁻, floor)`. The comparison map is the
//! barycentric (geometric median) projection of a Sinkhorn plan between
//! two atomic measures.

use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::assembly::Discretization;
use crate::fem::SpaceKind;
use crate::mesh::{Locator, Point, Triangulation};
use crate::oracle::Problem;

#[derive(Debug, Error)]
pub enum OtMapError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("measures are not balanced: {0} vs {1}")]
    Unbalanced(f64, f64),
    #[error("negative weight {0}")]
    NegativeWeight(f64),
    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("empty measure")]
    Empty,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub const DEFAULT_DENOMINATOR_FLOOR: f64 = 1e-5;
pub const DEFAULT_RK4_STEPS: usize = 200;

type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;

/// Steady density and potential, with point evaluation of `−μ∇u` and `Φ`.
#[derive(Clone)]
pub struct VelocityField {
    coarse: Triangulation,
    pot_mesh: Triangulation,
    locator: Locator,
    /// Coarse cell of each potential cell.
    parent: Option<Vec<usize>>,
    density_kind: SpaceKind,
    tdens: Vec<f64>,
    grads: Vec<[f64; 2]>,
    source: ScalarFn,
    sink: ScalarFn,
    pub denominator_floor: f64,
}

impl std::fmt::Debug for VelocityField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VelocityField")
            .field("cells", &self.pot_mesh.triangle_count())
            .field("density_kind", &self.density_kind)
            .field("denominator_floor", &self.denominator_floor)
            .finish()
    }
}

impl VelocityField {
    pub fn new(
        disc: &Discretization,
        tdens: &[f64],
        pot: &[f64],
        source: impl Fn(Point) -> f64 + Send + Sync + 'static,
        sink: impl Fn(Point) -> f64 + Send + Sync + 'static,
    ) -> Result<Self, OtMapError> {
        if tdens.len() != disc.density_space().dofs {
            return Err(OtMapError::LengthMismatch(tdens.len(), disc.density_space().dofs));
        }
        if pot.len() != disc.potential_space().dofs {
            return Err(OtMapError::LengthMismatch(pot.len(), disc.potential_space().dofs));
        }
        let pot_mesh = disc.potential_mesh().clone();
        Ok(VelocityField {
            coarse: disc.coarse().clone(),
            locator: Locator::new(&pot_mesh),
            parent: disc.pairing().is_two_grid().then(|| pot_mesh.parent().expect("two-grid pair").to_vec()),
            pot_mesh,
            density_kind: disc.density_space().kind,
            tdens: tdens.to_vec(),
            grads: disc.potential_gradients(pot),
            source: Arc::new(source),
            sink: Arc::new(sink),
            denominator_floor: DEFAULT_DENOMINATOR_FLOOR,
        })
    }

    pub fn from_problem(disc: &Discretization, tdens: &[f64], pot: &[f64], problem: &Problem) -> Result<Self, OtMapError> {
        let (p, q) = (problem.clone(), problem.clone());
        Self::new(disc, tdens, pot, move |z| p.source(z), move |z| q.sink(z))
    }

    /// Mesh size `h` of the coarse mesh (longest edge).
    pub fn mesh_size(&self) -> f64 {
        self.coarse.max_edge_length()
    }

    fn density_in(&self, cell: usize, p: Point) -> f64 {
        let k = self.parent.as_ref().map_or(cell, |par| par[cell]);
        match self.density_kind {
            SpaceKind::P0 => self.tdens[k],
            SpaceKind::P1 => {
                let l = self.coarse.barycentric(k, p);
                let tri = self.coarse.triangles()[k];
                (0..3).map(|i| l[i].clamp(0.0, 1.0) * self.tdens[tri[i]]).sum()
            }
        }
    }

    /// `μ*` at `p`, or `None` outside the mesh.
    pub fn density(&self, p: Point) -> Option<f64> {
        self.locator.locate(&self.pot_mesh, p).map(|c| self.density_in(c, p))
    }

    /// Beckmann flux `−μ∇u` at `p`.
    pub fn flux(&self, p: Point) -> Option<[f64; 2]> {
        let c = self.locator.locate(&self.pot_mesh, p)?;
        let mu = self.density_in(c, p);
        Some([-mu * self.grads[c][0], -mu * self.grads[c][1]])
    }

    /// `Φ(t, p)`.
    pub fn velocity(&self, t: f64, p: Point) -> Option<[f64; 2]> {
        let v = self.flux(p)?;
        let d = ((1.0 - t) * (self.source)(p) + t * (self.sink)(p)).max(self.denominator_floor);
        Some([v[0] / d, v[1] / d])
    }

    /// Clamps `p` into the bounding box of the mesh.
    fn clamp(&self, p: Point) -> Point {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for q in self.coarse.nodes() {
            for d in 0..2 {
                lo[d] = lo[d].min(q[d]);
                hi[d] = hi[d].max(q[d]);
            }
        }
        [p[0].clamp(lo[0], hi[0]), p[1].clamp(lo[1], hi[1])]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MapFlag {
    Ok,
    /// The trajectory left the domain and was clamped to its boundary.
    ExitedDomain,
    /// A point could not be located in the mesh.
    LocateFailed,
    /// The sub-step budget ran out before `t = 1`.
    StepLimit,
    /// Barycentric map of a plan row with no mass.
    ZeroRow,
}

impl MapFlag {
    pub fn code(self) -> u8 {
        match self {
            MapFlag::Ok => 0,
            MapFlag::ExitedDomain => 1,
            MapFlag::LocateFailed => 2,
            MapFlag::StepLimit => 3,
            MapFlag::ZeroRow => 4,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        [MapFlag::Ok, MapFlag::ExitedDomain, MapFlag::LocateFailed, MapFlag::StepLimit, MapFlag::ZeroRow]
            .into_iter()
            .find(|f| f.code() == c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapEntry {
    pub seed: Point,
    pub end: Point,
    pub flag: MapFlag,
    /// Length of the traced path (0 for barycentric maps).
    pub path_length: f64,
}

impl MapEntry {
    /// Path length over endpoint distance; 1 for a straight path.
    pub fn straightness(&self) -> f64 {
        let d = dist(self.seed, self.end);
        if d > 0.0 {
            self.path_length / d
        } else {
            1.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceOptions {
    /// Base RK4 steps over `[0, 1]`.
    pub steps: usize,
    /// Largest accepted displacement per RK4 step; a step moving farther is
    /// halved. Infinite disables sub-stepping.
    pub max_displacement: f64,
    /// Cap on accepted plus rejected RK4 steps per trajectory.
    pub max_substeps: usize,
}

impl TraceOptions {
    pub fn for_field(vf: &VelocityField, steps: usize) -> Self {
        TraceOptions { steps, max_displacement: 0.25 * vf.mesh_size(), max_substeps: 200_000 }
    }
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn axpy(p: Point, s: f64, v: [f64; 2]) -> Point {
    [p[0] + s * v[0], p[1] + s * v[1]]
}

enum StageError {
    Outside,
}

/// Integrates `z' = v(t, z)` from 0 to 1 with classical RK4 on
/// `opts.steps` uniform steps, halving any step whose displacement exceeds
/// `opts.max_displacement`. `v` returns `None` outside its domain.
pub fn integrate_rk4(v: impl Fn(f64, Point) -> Option<[f64; 2]>, seed: Point, opts: &TraceOptions) -> (Point, MapFlag, f64) {
    let base = 1.0 / opts.steps.max(1) as f64;
    let stage = |t: f64, z: Point, h: f64| -> Result<Point, StageError> {
        let k1 = v(t, z).ok_or(StageError::Outside)?;
        let k2 = v(t + 0.5 * h, axpy(z, 0.5 * h, k1)).ok_or(StageError::Outside)?;
        let k3 = v(t + 0.5 * h, axpy(z, 0.5 * h, k2)).ok_or(StageError::Outside)?;
        let k4 = v(t + h, axpy(z, h, k3)).ok_or(StageError::Outside)?;
        Ok([
            z[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            z[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ])
    };
    let mut z = seed;
    let mut length = 0.0;
    let mut budget = opts.max_substeps;
    let mut h = base;
    for k in 0..opts.steps.max(1) {
        let mut t = k as f64 * base;
        let t_end = (k + 1) as f64 * base;
        while t < t_end - 1e-15 {
            h = h.min(t_end - t);
            if budget == 0 {
                return (z, MapFlag::StepLimit, length);
            }
            budget -= 1;
            match stage(t, z, h) {
                Ok(next) => {
                    let step = dist(z, next);
                    if step > opts.max_displacement && h > 1e-14 {
                        h *= 0.5;
                        continue;
                    }
                    length += step;
                    z = next;
                    t += h;
                    h *= 2.0;
                }
                Err(StageError::Outside) => {
                    if h > 1e-14 {
                        h *= 0.5;
                        continue;
                    }
                    return (z, MapFlag::ExitedDomain, length);
                }
            }
        }
        h = h.min(base);
    }
    (z, MapFlag::Ok, length)
}

/// DMK map `T(x) = z(1)` for every seed.
pub fn trace_map(vf: &VelocityField, seeds: &[Point], opts: &TraceOptions) -> Vec<MapEntry> {
    seeds
        .iter()
        .map(|&seed| {
            if vf.density(seed).is_none() {
                return MapEntry { seed, end: seed, flag: MapFlag::LocateFailed, path_length: 0.0 };
            }
            let (end, flag, path_length) = integrate_rk4(|t, z| vf.velocity(t, z), seed, opts);
            let end = if flag == MapFlag::ExitedDomain { vf.clamp(end) } else { end };
            MapEntry { seed, end, flag, path_length }
        })
        .collect()
}

/// Weighted points.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomicMeasure {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

impl AtomicMeasure {
    pub fn new(points: Vec<Point>, weights: Vec<f64>) -> Result<Self, OtMapError> {
        if points.len() != weights.len() {
            return Err(OtMapError::LengthMismatch(points.len(), weights.len()));
        }
        if points.is_empty() {
            return Err(OtMapError::Empty);
        }
        if let Some(&w) = weights.iter().find(|&&w| !(w >= 0.0)) {
            return Err(OtMapError::NegativeWeight(w));
        }
        Ok(AtomicMeasure { points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// The same atoms with weights scaled to total `mass`.
    pub fn rescaled(&self, mass: f64) -> Self {
        let k = mass / self.total_mass();
        AtomicMeasure { points: self.points.clone(), weights: self.weights.iter().map(|w| w * k).collect() }
    }

    /// One atom per coarse cell centroid where `density` has positive
    /// integral, weighted by that integral.
    pub fn from_density(mesh: &Triangulation, density: impl Fn(Point) -> f64, quadrature_order: usize) -> Result<Self, OtMapError> {
        let rule = crate::fem::QuadratureRule::of_order(quadrature_order).map_err(|e| OtMapError::Parse { line: 0, msg: e.to_string() })?;
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for t in 0..mesh.triangle_count() {
            let w = rule.integrate(mesh, t, &density);
            if w > 0.0 {
                points.push(mesh.centroid(t));
                weights.push(w);
            }
        }
        Self::new(points, weights)
    }
}

/// Reads a source/sink pair: a `source` line, `x y w` rows, a `sink` line,
/// `x y w` rows. `#` starts a comment.
pub fn parse_measure_pair(text: &str) -> Result<(AtomicMeasure, AtomicMeasure), OtMapError> {
    let mut sections: [Vec<(Point, f64)>; 2] = [Vec::new(), Vec::new()];
    let mut current: Option<usize> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| OtMapError::Parse { line: i + 1, msg };
        match line {
            "source" => current = Some(0),
            "sink" => current = Some(1),
            _ => {
                let s = current.ok_or_else(|| err("atom before a section header".into()))?;
                let v: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad number {t:?}"))))
                    .collect::<Result<_, _>>()?;
                if v.len() != 3 {
                    return Err(err(format!("expected `x y w`, found {} fields", v.len())));
                }
                sections[s].push(([v[0], v[1]], v[2]));
            }
        }
    }
    let [a, b] = sections;
    let build = |s: Vec<(Point, f64)>| AtomicMeasure::new(s.iter().map(|x| x.0).collect(), s.iter().map(|x| x.1).collect());
    Ok((build(a)?, build(b)?))
}

/// Dense `n⁺ × n⁻` plan, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub epsilon: f64,
    pub iterations: usize,
    /// Largest absolute marginal violation.
    pub marginal_error: f64,
    pub converged: bool,
}

impl TransportPlan {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (j, v) in self.row(i).iter().enumerate() {
                s[j] += v;
            }
        }
        s
    }

    /// `Σ γ_ij |x_i − y_j|`.
    pub fn cost(&self, mu: &AtomicMeasure, nu: &AtomicMeasure) -> f64 {
        let mut c = 0.0;
        for (i, x) in mu.points.iter().enumerate() {
            for (j, y) in nu.points.iter().enumerate() {
                c += self.get(i, j) * dist(*x, *y);
            }
        }
        c
    }

    /// Header `rows cols epsilon`, one line per row, then the row and
    /// column sums.
    pub fn to_dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {} {:e}", self.rows, self.cols, self.epsilon);
        let line = |v: &[f64]| v.iter().map(|x| format!("{x:.17e}")).collect::<Vec<_>>().join(" ");
        for i in 0..self.rows {
            let _ = writeln!(out, "{}", line(self.row(i)));
        }
        let _ = writeln!(out, "row_sums {}", line(&self.row_sums()));
        let _ = writeln!(out, "col_sums {}", line(&self.col_sums()));
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinkhornOptions {
    pub max_iter: usize,
    /// Absolute tolerance on every marginal entry.
    pub tol: f64,
    /// Start from a large epsilon and halve down to the target.
    pub epsilon_scaling: bool,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        SinkhornOptions { max_iter: 200_000, tol: 1e-9, epsilon_scaling: true }
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Entropic plan for the Euclidean cost by log-domain Sinkhorn iterations.
/// Zero-weight atoms get zero rows or columns.
pub fn sinkhorn_plan(mu: &AtomicMeasure, nu: &AtomicMeasure, epsilon: f64, opts: &SinkhornOptions) -> Result<TransportPlan, OtMapError> {
    if !(epsilon > 0.0) {
        return Err(OtMapError::InvalidEpsilon(epsilon));
    }
    let (ma, mb) = (mu.total_mass(), nu.total_mass());
    if (ma - mb).abs() > 1e-10 * ma.max(mb).max(1.0) {
        return Err(OtMapError::Unbalanced(ma, mb));
    }
    let (n, m) = (mu.len(), nu.len());
    let cost: Vec<f64> = mu.points.iter().flat_map(|x| nu.points.iter().map(move |y| dist(*x, *y))).collect();
    let log_a: Vec<f64> = mu.weights.iter().map(|w| w.ln()).collect();
    let log_b: Vec<f64> = nu.weights.iter().map(|w| w.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];

    let cmax = cost.iter().copied().fold(0.0, f64::max).max(epsilon);
    let mut schedule = Vec::new();
    if opts.epsilon_scaling {
        let mut e = cmax;
        while e > epsilon {
            schedule.push(e);
            e *= 0.5;
        }
    }
    schedule.push(epsilon);

    let cost_t: Vec<f64> = (0..m * n).map(|k| cost[(k % n) * m + k / n]).collect();
    let mut iterations = 0;
    let mut err = f64::INFINITY;
    let last = schedule.len() - 1;
    for (s, &eps) in schedule.iter().enumerate() {
        let inv = 1.0 / eps;
        let stage_tol = if s == last { opts.tol } else { (1e-3 * ma).max(opts.tol) };
        let stage_cap = if s == last { opts.max_iter.saturating_sub(iterations) } else { 2000 };
        let mut it = 0;
        loop {
            for j in 0..m {
                if nu.weights[j] == 0.0 {
                    g[j] = f64::NEG_INFINITY;
                    continue;
                }
                let c = &cost_t[j * n..(j + 1) * n];
                let lse = log_sum_exp(f.iter().zip(c).map(|(fi, cij)| (fi - cij) * inv));
                g[j] = eps * (log_b[j] - lse);
            }
            for i in 0..n {
                if mu.weights[i] == 0.0 {
                    f[i] = f64::NEG_INFINITY;
                    continue;
                }
                let c = &cost[i * m..(i + 1) * m];
                let lse = log_sum_exp(g.iter().zip(c).map(|(gj, cij)| (gj - cij) * inv));
                f[i] = eps * (log_a[i] - lse);
            }
            it += 1;
            if it % 10 == 0 || it >= stage_cap {
                // rows are exact after the row update; measure the columns
                err = (0..m)
                    .map(|j| {
                        let c = &cost_t[j * n..(j + 1) * n];
                        let s: f64 = f.iter().zip(c).map(|(fi, cij)| ((fi + g[j] - cij) * inv).exp()).sum();
                        (s - nu.weights[j]).abs()
                    })
                    .fold(0.0, f64::max);
                if err <= stage_tol || it >= stage_cap {
                    break;
                }
            }
        }
        iterations += it;
    }
    let values: Vec<f64> = (0..n * m)
        .map(|k| {
            let (i, j) = (k / m, k % m);
            let v = ((f[i] + g[j] - cost[k]) / epsilon).exp();
            if v.is_finite() {
                v
            } else {
                0.0
            }
        })
        .collect();
    let mut plan = TransportPlan { rows: n, cols: m, values, epsilon, iterations, marginal_error: err, converged: false };
    let rs = plan.row_sums();
    let cs = plan.col_sums();
    plan.marginal_error = rs
        .iter()
        .zip(&mu.weights)
        .chain(cs.iter().zip(&nu.weights))
        .map(|(s, w)| (s - w).abs())
        .fold(0.0, f64::max);
    plan.converged = plan.marginal_error <= opts.tol;
    Ok(plan)
}

/// `Σ_j w_j |y − p_j|`.
pub fn fermat_weber_objective(y: Point, points: &[Point], weights: &[f64]) -> f64 {
    points.iter().zip(weights).map(|(p, w)| w * dist(y, *p)).sum()
}

/// Weighted geometric median by the Weiszfeld iteration with the
/// Vardi–Zhang correction at data points. Returns the point and the
/// iteration count. Stops when a step is shorter than `step_tol`.
pub fn geometric_median(points: &[Point], weights: &[f64], step_tol: f64, max_iter: usize) -> Option<(Point, usize)> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let mut y = [0.0, 0.0];
    for (p, w) in points.iter().zip(weights) {
        y[0] += w * p[0] / total;
        y[1] += w * p[1] / total;
    }
    let scale = points.iter().map(|p| dist(*p, y)).fold(0.0, f64::max).max(1e-300);
    for it in 1..=max_iter {
        let mut num = [0.0, 0.0];
        let mut den = 0.0;
        let mut anchor = 0.0;
        let mut r = [0.0, 0.0];
        for (p, &w) in points.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            let d = dist(*p, y);
            if d <= 1e-14 * scale {
                anchor += w;
                continue;
            }
            num[0] += w * p[0] / d;
            num[1] += w * p[1] / d;
            den += w / d;
            r[0] += w * (p[0] - y[0]) / d;
            r[1] += w * (p[1] - y[1]) / d;
        }
        if den == 0.0 {
            return Some((y, it));
        }
        let t = [num[0] / den, num[1] / den];
        let rn = r[0].hypot(r[1]);
        let next = if anchor > 0.0 {
            if rn <= anchor {
                // the anchor point satisfies the optimality condition
                return Some((y, it));
            }
            let beta = anchor / rn;
            [(1.0 - beta) * t[0] + beta * y[0], (1.0 - beta) * t[1] + beta * y[1]]
        } else {
            t
        };
        let step = dist(next, y);
        y = next;
        if step < step_tol {
            return Some((y, it));
        }
    }
    Some((y, max_iter))
}

/// Maps every source atom to the geometric median of its plan row.
pub fn barycentric_map(plan: &TransportPlan, seeds: &[Point], sink_points: &[Point]) -> Result<Vec<MapEntry>, OtMapError> {
    if seeds.len() != plan.rows {
        return Err(OtMapError::LengthMismatch(seeds.len(), plan.rows));
    }
    if sink_points.len() != plan.cols {
        return Err(OtMapError::LengthMismatch(sink_points.len(), plan.cols));
    }
    Ok(seeds
        .iter()
        .enumerate()
        .map(|(i, &seed)| match geometric_median(sink_points, plan.row(i), 1e-10, 1000) {
            Some((end, _)) => MapEntry { seed, end, flag: MapFlag::Ok, path_length: 0.0 },
            None => MapEntry { seed, end: seed, flag: MapFlag::ZeroRow, path_length: 0.0 },
        })
        .collect())
}

/// Header `seed_x,seed_y,end_x,end_y,flag`, flag as its numeric code.
pub fn map_csv(entries: &[MapEntry]) -> String {
    let mut out = String::from("seed_x,seed_y,end_x,end_y,flag\n");
    for e in entries {
        let _ = writeln!(out, "{:.17e},{:.17e},{:.17e},{:.17e},{}", e.seed[0], e.seed[1], e.end[0], e.end[1], e.flag.code());
    }
    out
}

pub fn parse_map_csv(text: &str) -> Result<Vec<MapEntry>, OtMapError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "seed_x,seed_y,end_x,end_y,flag" => {}
        _ => return Err(OtMapError::Parse { line: 1, msg: "missing map header".into() }),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| OtMapError::Parse { line: i + 1, msg };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number {s:?}")));
        let flag = f[4]
            .parse::<u8>()
            .ok()
            .and_then(MapFlag::from_code)
            .ok_or_else(|| err(format!("bad flag {:?}", f[4])))?;
        out.push(MapEntry { seed: [num(f[0])?, num(f[1])?], end: [num(f[2])?, num(f[3])?], flag, path_length: 0.0 });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DistanceStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

impl DistanceStats {
    fn of(mut d: Vec<f64>) -> Self {
        if d.is_empty() {
            return DistanceStats::default();
        }
        d.sort_by(f64::total_cmp);
        let n = d.len();
        let median = if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) };
        DistanceStats { count: n, mean: d.iter().sum::<f64>() / n as f64, median, max: d[n - 1] }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MapComparison {
    /// Seeds away from the partition boundary.
    pub away: DistanceStats,
    /// Seeds flagged as near the partition boundary.
    pub near: DistanceStats,
    /// Seeds excluded because either map flagged them.
    pub flagged: usize,
}

/// Endpoint distances between two maps over the same seeds. `near_gamma`
/// marks seeds reported separately.
pub fn compare_maps(a: &[MapEntry], b: &[MapEntry], near_gamma: &[bool]) -> Result<MapComparison, OtMapError> {
    if a.len() != b.len() {
        return Err(OtMapError::LengthMismatch(a.len(), b.len()));
    }
    if near_gamma.len() != a.len() {
        return Err(OtMapError::LengthMismatch(near_gamma.len(), a.len()));
    }
    let mut away = Vec::new();
    let mut near = Vec::new();
    let mut flagged = 0;
    for ((x, y), &ng) in a.iter().zip(b).zip(near_gamma) {
        if x.flag != MapFlag::Ok || y.flag != MapFlag::Ok {
            flagged += 1;
            continue;
        }
        let d = dist(x.end, y.end);
        if ng {
            near.push(d)
        } else {
            away.push(d)
        }
    }
    Ok(MapComparison { away: DistanceStats::of(away), near: DistanceStats::of(near), flagged })
}

/// Seeds where `μ* ≤ factor · floor`, the detector for the partition
/// boundary between transport regions.
pub fn near_partition_boundary(vf: &VelocityField, seeds: &[Point], floor: f64, factor: f64) -> Vec<bool> {
    seeds.iter().map(|&p| vf.density(p).is_none_or(|m| m <= factor * floor)).collect()
}
