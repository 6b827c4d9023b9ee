//! Preconditioned conjugate gradient for singular Neumann systems, with an
//! incomplete Cholesky preconditioner and a Jacobi fallback.

use thiserror::Error;

use crate::assembly::CsrMatrix;

#[derive(Debug, Error)]
pub enum LinsolveError {
    #[error("right-hand side is incompatible: sum {sum:e} for norm {norm:e}")]
    IncompatibleRhs { sum: f64, norm: f64 },
    #[error("initial guess has nonzero mean {0:e}")]
    NonZeroMean(f64),
    #[error("dimension mismatch: matrix {matrix}, vector {vector}")]
    Dimension { matrix: usize, vector: usize },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PcgReport {
    pub iterations: usize,
    pub final_relative_residual: f64,
    pub converged: bool,
    /// Not converged, but the residual is at the round-off level of
    /// `b − A x` for this `x`, so `tol` is unattainable.
    pub stagnated: bool,
    /// Set by callers that rebuilt the preconditioner before this solve.
    pub preconditioner_rebuilt: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PcgOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Orthogonalize iterates against the constant vector.
    pub project_constants: bool,
}

impl Default for PcgOptions {
    fn default() -> Self {
        PcgOptions { tol: 1e-13, max_iter: 5000, project_constants: true }
    }
}

/// Upper factor `U` with unit diagonal stored implicitly, `A ≈ Uᵀ D U`.
#[derive(Clone, Debug)]
struct LdlFactor {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    inv_diag: Vec<f64>,
}

impl LdlFactor {
    fn solve(&self, r: &[f64], z: &mut [f64]) {
        let n = r.len();
        // Uᵀ y = r (forward), scale by D⁻¹, U z = y (backward)
        z.copy_from_slice(r);
        for i in 0..n {
            let zi = z[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                z[self.cols[k]] -= self.vals[k] * zi;
            }
        }
        for (zi, d) in z.iter_mut().zip(&self.inv_diag) {
            *zi *= d;
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s -= self.vals[k] * z[self.cols[k]];
            }
            z[i] = s;
        }
    }

    fn fill(&self) -> usize {
        self.vals.len()
    }
}

#[derive(Clone, Debug)]
enum PrecondKind {
    Identity,
    Jacobi(Vec<f64>),
    Ic(LdlFactor),
}

/// Preconditioner handle. `jacobi_fallback` records that incomplete
/// factorization failed at every shift.
#[derive(Clone, Debug)]
pub struct Preconditioner {
    kind: PrecondKind,
    pub shift: f64,
    pub jacobi_fallback: bool,
}

impl Preconditioner {
    pub fn identity() -> Self {
        Preconditioner { kind: PrecondKind::Identity, shift: 0.0, jacobi_fallback: false }
    }

    pub fn jacobi(a: &CsrMatrix) -> Self {
        let inv = a.diagonal().iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
        Preconditioner { kind: PrecondKind::Jacobi(inv), shift: 0.0, jacobi_fallback: false }
    }

    pub fn is_incomplete_cholesky(&self) -> bool {
        matches!(self.kind, PrecondKind::Ic(_))
    }

    /// Off-diagonal entries kept in the factor.
    pub fn fill(&self) -> usize {
        match &self.kind {
            PrecondKind::Ic(f) => f.fill(),
            _ => 0,
        }
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        match &self.kind {
            PrecondKind::Identity => z.copy_from_slice(r),
            PrecondKind::Jacobi(inv) => {
                for ((zi, ri), d) in z.iter_mut().zip(r).zip(inv) {
                    *zi = ri * d;
                }
            }
            PrecondKind::Ic(f) => f.solve(r, z),
        }
    }
}

const SHIFTS: [f64; 4] = [1e-6, 1e-5, 1e-4, 1e-3];
const PIVOT_TOL: f64 = 1e-12;

/// Threshold incomplete LDLᵀ. Entries of the factor smaller than
/// `drop_tolerance · sqrt(a_ii a_jj)` are dropped. On breakdown the diagonal
/// is scaled by `1 + shift` for growing shifts; if all fail, Jacobi is used.
pub fn build_ic_preconditioner(a: &CsrMatrix, drop_tolerance: f64) -> Preconditioner {
    let mut shift = 0.0;
    if let Some(f) = incomplete_ldl(a, drop_tolerance, shift) {
        return Preconditioner { kind: PrecondKind::Ic(f), shift, jacobi_fallback: false };
    }
    for s in SHIFTS {
        shift = s;
        if let Some(f) = incomplete_ldl(a, drop_tolerance, shift) {
            return Preconditioner { kind: PrecondKind::Ic(f), shift, jacobi_fallback: false };
        }
    }
    let mut p = Preconditioner::jacobi(a);
    p.jacobi_fallback = true;
    p
}

fn incomplete_ldl(a: &CsrMatrix, drop_tol: f64, shift: f64) -> Option<LdlFactor> {
    let n = a.dim();
    let adiag = a.diagonal();
    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let mut cols: Vec<usize> = Vec::with_capacity(a.nnz());
    let mut vals: Vec<f64> = Vec::with_capacity(a.nnz());
    let mut diag = vec![0.0; n];
    // rows k < i holding a nonzero in column i, with the position of that entry
    let mut col_lists: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut work = vec![0.0; n];
    let mut mark = vec![false; n];
    let mut pattern: Vec<usize> = Vec::new();

    for i in 0..n {
        pattern.clear();
        let mut wi = adiag[i] * (1.0 + shift);
        for (j, v) in a.row(i) {
            if j > i {
                work[j] = v;
                mark[j] = true;
                pattern.push(j);
            }
        }
        for &(k, pos) in &col_lists[i] {
            let uki = vals[pos];
            let f = uki * diag[k];
            wi -= f * uki;
            for q in pos + 1..row_ptr[k + 1] {
                let j = cols[q];
                if !mark[j] {
                    mark[j] = true;
                    work[j] = 0.0;
                    pattern.push(j);
                }
                work[j] -= f * vals[q];
            }
        }
        if !(wi.is_finite() && wi > PIVOT_TOL * adiag[i].abs()) || adiag[i] <= 0.0 {
            return None;
        }
        diag[i] = wi;
        pattern.sort_unstable();
        for &j in &pattern {
            let u = work[j] / wi;
            mark[j] = false;
            if work[j].abs() > drop_tol * (adiag[i] * adiag[j]).abs().sqrt() && u != 0.0 {
                col_lists[j].push((i, cols.len()));
                cols.push(j);
                vals.push(u);
            }
        }
        row_ptr.push(cols.len());
    }
    Some(LdlFactor { row_ptr, cols, vals, inv_diag: diag.iter().map(|d| 1.0 / d).collect() })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Round-off level of `‖b − A x‖ / ‖b‖` in floating point, from the
/// componentwise bound `γ (|A||x| + |b|)`.
pub fn residual_floor(a: &CsrMatrix, b: &[f64], x: &[f64]) -> f64 {
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut width = 1usize;
    for i in 0..a.dim() {
        let mut s = b[i].abs();
        let mut k = 0;
        for (j, v) in a.row(i) {
            s += v.abs() * x[j].abs();
            k += 1;
        }
        width = width.max(k);
        acc += s * s;
    }
    (width + 1) as f64 * f64::EPSILON * acc.sqrt() / bnorm
}

fn remove_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

/// Solves `A x = b` in place starting from `x`. On failure `x` holds the
/// iterate with the smallest residual and `converged` is false.
pub fn pcg_solve(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    precond: &Preconditioner,
    opts: &PcgOptions,
) -> Result<PcgReport, LinsolveError> {
    let n = a.dim();
    for len in [b.len(), x.len()] {
        if len != n {
            return Err(LinsolveError::Dimension { matrix: n, vector: len });
        }
    }
    let bnorm = dot(b, b).sqrt();
    if opts.project_constants && n > 0 {
        let sum: f64 = b.iter().sum();
        let l1: f64 = b.iter().map(|v| v.abs()).sum();
        if sum.abs() > 1e-10 * l1.max(f64::MIN_POSITIVE) && sum.abs() > 1e-300 {
            return Err(LinsolveError::IncompatibleRhs { sum, norm: bnorm });
        }
        let mean = x.iter().sum::<f64>() / n as f64;
        let xnorm = dot(x, x).sqrt();
        if mean.abs() * (n as f64).sqrt() > 1e-10 * xnorm.max(1e-300) && mean != 0.0 {
            return Err(LinsolveError::NonZeroMean(mean));
        }
    }
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(PcgReport { converged: true, ..Default::default() });
    }
    let project = |v: &mut [f64]| {
        if opts.project_constants {
            remove_mean(v)
        }
    };

    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let true_residual = |x: &[f64], r: &mut [f64], ap: &mut [f64]| {
        a.matvec_into(x, ap);
        for i in 0..n {
            r[i] = b[i] - ap[i];
        }
    };
    true_residual(x, &mut r, &mut ap);
    project(&mut r);
    let mut res = dot(&r, &r).sqrt() / bnorm;
    let mut best = (res, x.to_vec());
    let mut iterations = 0;
    let mut restarts = 0;

    'outer: while res > opts.tol && iterations < opts.max_iter {
        precond.apply(&r, &mut z);
        project(&mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        loop {
            a.matvec_into(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) || !(rz > 0.0) {
                break;
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            project(x);
            project(&mut r);
            iterations += 1;
            res = dot(&r, &r).sqrt() / bnorm;
            if res < best.0 {
                best.0 = res;
                best.1.copy_from_slice(x);
            }
            if res <= opts.tol || iterations >= opts.max_iter {
                break;
            }
            precond.apply(&r, &mut z);
            project(&mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        // guard against drift of the recursive residual
        true_residual(x, &mut r, &mut ap);
        project(&mut r);
        res = dot(&r, &r).sqrt() / bnorm;
        if res <= opts.tol || res <= residual_floor(a, b, x) {
            break 'outer;
        }
        restarts += 1;
        if restarts > 5 {
            break;
        }
    }

    if res > opts.tol {
        // report the best iterate, measured by its true residual
        let mut rb = vec![0.0; n];
        true_residual(&best.1, &mut rb, &mut ap);
        project(&mut rb);
        let best_res = dot(&rb, &rb).sqrt() / bnorm;
        if best_res < res {
            x.copy_from_slice(&best.1);
            res = best_res;
        }
    }
    let converged = res <= opts.tol;
    Ok(PcgReport {
        iterations,
        final_relative_residual: res,
        converged,
        stagnated: !converged && res <= residual_floor(a, b, x),
        preconditioner_rebuilt: false,
    })
}
