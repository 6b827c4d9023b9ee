//! Independent reference computations shared by the integration tests.
#![allow(clippy::needless_range_loop)]
#![allow(dead_code)]

use std::path::PathBuf;

use dmk::otmap::{parse_measure_pair, AtomicMeasure};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures").join(name)
}

/// Every `ot_*.txt` instance in the fixture directory, sorted by name.
pub fn ot_fixtures() -> Vec<(String, AtomicMeasure, AtomicMeasure)> {
    let dir = fixture_path("");
    let mut names: Vec<String> = std::fs::read_dir(&dir)
        .expect("fixture directory")
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| n.starts_with("ot_") && n.ends_with(".txt"))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|n| {
            let text = std::fs::read_to_string(dir.join(&n)).unwrap();
            let (mu, nu) = parse_measure_pair(&text).unwrap_or_else(|e| panic!("{n}: {e}"));
            (n, mu, nu)
        })
        .collect()
}

/// Gaussian elimination with partial pivoting; `None` if singular.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Zero-mean solution of a singular Neumann system `A x = b` through the
/// bordered system `[A 1; 1ᵀ 0]`.
pub fn dense_neumann_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m = vec![vec![0.0; n + 1]; n + 1];
    for i in 0..n {
        m[i][..n].copy_from_slice(&a[i]);
        m[i][n] = 1.0;
        m[n][i] = 1.0;
    }
    let mut rhs = b.to_vec();
    rhs.push(0.0);
    let mut x = dense_solve(m, rhs).expect("bordered system is regular");
    x.pop();
    x
}

fn dist(p: [f64; 2], q: [f64; 2]) -> f64 {
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

fn combinations(n: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut dyn FnMut(&[usize])) {
    if cur.len() == k {
        out(cur);
        return;
    }
    for i in start..n {
        if n - i < k - cur.len() {
            break;
        }
        cur.push(i);
        combinations(n, k, i + 1, cur, out);
        cur.pop();
    }
}

/// Exact optimal transport cost with Euclidean ground cost by enumerating
/// all basic feasible solutions of the transportation polytope.
pub fn brute_force_ot_cost(mu: &AtomicMeasure, nu: &AtomicMeasure) -> f64 {
    let (n, m) = (mu.len(), nu.len());
    let k = n + m - 1;
    let mut best = f64::INFINITY;
    combinations(n * m, k, 0, &mut Vec::new(), &mut |basis: &[usize]| {
        // rows: n source constraints, then m − 1 sink constraints
        let mut a = vec![vec![0.0; k]; k];
        for (v, &cell) in basis.iter().enumerate() {
            let (i, j) = (cell / m, cell % m);
            a[i][v] = 1.0;
            if j + 1 < m {
                a[n + j][v] = 1.0;
            }
        }
        let mut b: Vec<f64> = mu.weights.clone();
        b.extend_from_slice(&nu.weights[..m - 1]);
        if let Some(x) = dense_solve(a, b) {
            if x.iter().all(|&v| v >= -1e-12) {
                let cost: f64 = basis
                    .iter()
                    .zip(&x)
                    .map(|(&cell, &v)| v.max(0.0) * dist(mu.points[cell / m], nu.points[cell % m]))
                    .sum();
                best = best.min(cost);
            }
        }
    });
    best
}

/// Minimizer of the weighted distance sum by grid search over the bounding
/// box, refined around the best node.
pub fn grid_search_median(points: &[[f64; 2]], weights: &[f64]) -> ([f64; 2], f64) {
    let f = |p: [f64; 2]| -> f64 { points.iter().zip(weights).map(|(q, w)| w * dist(p, *q)).sum() };
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let mut best = (points[0], f(points[0]));
    for _ in 0..12 {
        let n = 40;
        for a in 0..=n {
            for b in 0..=n {
                let p = [lo[0] + (hi[0] - lo[0]) * a as f64 / n as f64, lo[1] + (hi[1] - lo[1]) * b as f64 / n as f64];
                let v = f(p);
                if v < best.1 {
                    best = (p, v);
                }
            }
        }
        for d in 0..2 {
            let half = (hi[d] - lo[d]) / 8.0;
            lo[d] = best.0[d] - half;
            hi[d] = best.0[d] + half;
        }
    }
    best
}
