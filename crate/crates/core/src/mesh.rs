//! Conforming triangulations of polygonal domains.
//!
//! A [`Triangulation`] is immutable once built. Uniform refinement splits
//! every triangle into four congruent children through its edge midpoints
//! and records the child → parent map used by the two-grid discretization.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

pub type Point = [f64; 2];

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("a square grid needs at least 2 divisions per side, got {0}")]
    TooFewDivisions(usize),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("triangle {index} has non-positive signed area {area:e}")]
    DegenerateTriangle { index: usize, area: f64 },
    #[error("triangle {index} references node {node} but the mesh has {nodes} nodes")]
    NodeOutOfRange { index: usize, node: usize, nodes: usize },
    #[error("non-conforming mesh: edge ({a}, {b}) is shared by triangles {triangles:?}")]
    NonConforming { a: usize, b: usize, triangles: Vec<usize> },
    #[error("non-conforming mesh: node {node} lies inside edge ({a}, {b}) of triangle {triangle}")]
    HangingNode { node: usize, a: usize, b: usize, triangle: usize },
    #[error("boundary edge ({a}, {b}) is not an edge of exactly one triangle")]
    BadBoundaryEdge { a: usize, b: usize },
    #[error("io error reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// A conforming, counter-clockwise triangulation.
#[derive(Clone, Debug)]
pub struct Triangulation {
    nodes: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<[usize; 2]>,
    parent: Option<Vec<usize>>,
}

fn signed_area(p: Point, q: Point, r: Point) -> f64 {
    0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Triangulation {
    /// Builds and validates a triangulation. When `boundary_edges` is empty
    /// the boundary is derived from the edges used by a single triangle.
    pub fn new(
        nodes: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        boundary_edges: Vec<[usize; 2]>,
    ) -> Result<Self, MeshError> {
        let mut mesh = Triangulation {
            nodes,
            triangles,
            boundary_edges,
            parent: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    fn validate(&mut self) -> Result<(), MeshError> {
        let nn = self.nodes.len();
        for (index, tri) in self.triangles.iter().enumerate() {
            for &node in tri {
                if node >= nn {
                    return Err(MeshError::NodeOutOfRange { index, node, nodes: nn });
                }
            }
            let area = self.signed_area(index);
            if !(area > 0.0) {
                return Err(MeshError::DegenerateTriangle { index, area });
            }
        }

        // Directed edges: a conforming, consistently oriented mesh uses each
        // directed edge at most once, and each undirected edge at most twice.
        let mut owners: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for e in 0..3 {
                owners.entry(edge_key(tri[e], tri[(e + 1) % 3])).or_default().push(t);
            }
        }
        for (&(a, b), tris) in &owners {
            let directed_ok = tris.len() == 2 && {
                let dir = |t: usize| {
                    let tri = self.triangles[t];
                    (0..3).any(|e| tri[e] == a && tri[(e + 1) % 3] == b)
                };
                dir(tris[0]) != dir(tris[1])
            };
            if tris.len() > 2 || (tris.len() == 2 && !directed_ok) {
                let mut triangles = tris.clone();
                triangles.sort_unstable();
                return Err(MeshError::NonConforming { a, b, triangles });
            }
        }

        let mut single: Vec<[usize; 2]> = Vec::new();
        for tri in &self.triangles {
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                if owners[&edge_key(a, b)].len() == 1 {
                    single.push([a, b]);
                }
            }
        }

        // A hanging node sits strictly inside an edge that only one triangle uses.
        let scale = self.bounding_diameter().max(f64::MIN_POSITIVE);
        let mut used = vec![false; nn];
        for tri in &self.triangles {
            for &v in tri {
                used[v] = true;
            }
        }
        if single.len() * nn <= 50_000_000 {
            for &[a, b] in &single {
                let (pa, pb) = (self.nodes[a], self.nodes[b]);
                let len2 = (pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2);
                for (v, p) in self.nodes.iter().enumerate() {
                    if v == a || v == b || !used[v] {
                        continue;
                    }
                    let cross = (pb[0] - pa[0]) * (p[1] - pa[1]) - (pb[1] - pa[1]) * (p[0] - pa[0]);
                    if cross.abs() > 1e-12 * scale * scale {
                        continue;
                    }
                    let s = ((p[0] - pa[0]) * (pb[0] - pa[0]) + (p[1] - pa[1]) * (pb[1] - pa[1])) / len2;
                    if s > 1e-12 && s < 1.0 - 1e-12 {
                        let triangle = owners[&edge_key(a, b)][0];
                        return Err(MeshError::HangingNode { node: v, a, b, triangle });
                    }
                }
            }
        }

        if self.boundary_edges.is_empty() {
            single.sort_unstable();
            self.boundary_edges = single;
        } else {
            for &[a, b] in &self.boundary_edges {
                match owners.get(&edge_key(a, b)) {
                    Some(t) if t.len() == 1 => {}
                    _ => return Err(MeshError::BadBoundaryEdge { a, b }),
                }
            }
            if self.boundary_edges.len() != single.len() {
                // some single-use edge is missing from the declared boundary
                let declared: std::collections::HashSet<_> =
                    self.boundary_edges.iter().map(|e| edge_key(e[0], e[1])).collect();
                let missing = single
                    .iter()
                    .find(|e| !declared.contains(&edge_key(e[0], e[1])))
                    .copied()
                    .unwrap_or(single[0]);
                return Err(MeshError::BadBoundaryEdge { a: missing[0], b: missing[1] });
            }
        }
        Ok(())
    }

    /// Structured mesh of the unit square with `divisions` cells per side,
    /// each cell cut along its positive-slope diagonal.
    pub fn square_grid(divisions: usize) -> Result<Self, MeshError> {
        if divisions < 2 {
            return Err(MeshError::TooFewDivisions(divisions));
        }
        let n = divisions;
        let h = 1.0 / n as f64;
        let id = |i: usize, j: usize| j * (n + 1) + i;
        let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                nodes.push([i as f64 * h, j as f64 * h]);
            }
        }
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (p00, p10, p11, p01) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                triangles.push([p00, p10, p11]);
                triangles.push([p00, p11, p01]);
            }
        }
        let mut boundary_edges = Vec::with_capacity(4 * n);
        for i in 0..n {
            boundary_edges.push([id(i, 0), id(i + 1, 0)]);
            boundary_edges.push([id(n, i), id(n, i + 1)]);
            boundary_edges.push([id(i + 1, n), id(i, n)]);
            boundary_edges.push([id(0, i + 1), id(0, i)]);
        }
        Ok(Triangulation {
            nodes,
            triangles,
            boundary_edges,
            parent: None,
        })
    }

    /// Splits every triangle into four through its edge midpoints.
    ///
    /// Children of coarse triangle `k` are `4k..4k+4`; the last one is the
    /// central triangle. New midpoint nodes are appended after the coarse nodes.
    pub fn refine_uniform(&self) -> Triangulation {
        let mut nodes = self.nodes.clone();
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, nodes: &mut Vec<Point>| -> usize {
            *midpoint.entry(edge_key(a, b)).or_insert_with(|| {
                let (pa, pb) = (nodes[a], nodes[b]);
                nodes.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
                nodes.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        let mut parent = Vec::with_capacity(4 * self.triangles.len());
        for (k, &[a, b, c]) in self.triangles.iter().enumerate() {
            let ab = mid(a, b, &mut nodes);
            let bc = mid(b, c, &mut nodes);
            let ca = mid(c, a, &mut nodes);
            triangles.extend_from_slice(&[[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
            parent.extend_from_slice(&[k; 4]);
        }
        let mut boundary_edges = Vec::with_capacity(2 * self.boundary_edges.len());
        for &[a, b] in &self.boundary_edges {
            let m = mid(a, b, &mut nodes);
            boundary_edges.push([a, m]);
            boundary_edges.push([m, b]);
        }
        Triangulation {
            nodes,
            triangles,
            boundary_edges,
            parent: Some(parent),
        }
    }

    /// Reads the whitespace-separated text format
    /// `nv nt nb` / `nv × "x y"` / `nt × "i j k"` / `nb × "i j"`, with `#` comments.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, MeshError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| MeshError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, MeshError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let mut last_line = 0;
        let mut next_fields = |expect: usize, what: &str| -> Result<(usize, Vec<String>), MeshError> {
            let (line, content) = lines.next().ok_or_else(|| MeshError::Parse {
                line: last_line + 1,
                msg: format!("unexpected end of file, expected {what}"),
            })?;
            last_line = line;
            let fields: Vec<String> = content.split_whitespace().map(str::to_owned).collect();
            if fields.len() != expect {
                return Err(MeshError::Parse {
                    line,
                    msg: format!("expected {expect} fields for {what}, found {}", fields.len()),
                });
            }
            Ok((line, fields))
        };
        fn num<T: std::str::FromStr>(line: usize, s: &str) -> Result<T, MeshError> {
            s.parse().map_err(|_| MeshError::Parse {
                line,
                msg: format!("cannot parse {s:?}"),
            })
        }

        let (line, header) = next_fields(3, "header \"nv nt nb\"")?;
        let nv: usize = num(line, &header[0])?;
        let nt: usize = num(line, &header[1])?;
        let nb: usize = num(line, &header[2])?;
        let mut nodes = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (line, f) = next_fields(2, "node \"x y\"")?;
            nodes.push([num(line, &f[0])?, num(line, &f[1])?]);
        }
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nt {
            let (line, f) = next_fields(3, "triangle \"i j k\"")?;
            triangles.push([num(line, &f[0])?, num(line, &f[1])?, num(line, &f[2])?]);
        }
        let mut boundary = Vec::with_capacity(nb);
        for _ in 0..nb {
            let (line, f) = next_fields(2, "boundary edge \"i j\"")?;
            boundary.push([num(line, &f[0])?, num(line, &f[1])?]);
        }
        if let Some((line, _)) = lines.next() {
            return Err(MeshError::Parse {
                line,
                msg: format!("trailing data after {nv} nodes, {nt} triangles and {nb} boundary edges"),
            });
        }
        Triangulation::new(nodes, triangles, boundary)
    }

    /// Serializes to the same text format [`Triangulation::parse`] reads.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        use std::fmt::Write;
        let _ = writeln!(out, "{} {} {}", self.nodes.len(), self.triangles.len(), self.boundary_edges.len());
        for p in &self.nodes {
            let _ = writeln!(out, "{} {}", p[0], p[1]);
        }
        for t in &self.triangles {
            let _ = writeln!(out, "{} {} {}", t[0], t[1], t[2]);
        }
        for e in &self.boundary_edges {
            let _ = writeln!(out, "{} {}", e[0], e[1]);
        }
        out
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[[usize; 2]] {
        &self.boundary_edges
    }

    pub fn parent(&self) -> Option<&[usize]> {
        self.parent.as_deref()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [p, q, r] = self.vertices(t);
        signed_area(p, q, r)
    }

    pub fn area(&self, t: usize) -> f64 {
        self.signed_area(t)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.area(t)).sum()
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [p, q, r] = self.vertices(t);
        [(p[0] + q[0] + r[0]) / 3.0, (p[1] + q[1] + r[1]) / 3.0]
    }

    /// Longest edge over the whole mesh.
    pub fn max_edge_length(&self) -> f64 {
        let mut h: f64 = 0.0;
        for tri in &self.triangles {
            for e in 0..3 {
                let (p, q) = (self.nodes[tri[e]], self.nodes[tri[(e + 1) % 3]]);
                h = h.max(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt());
            }
        }
        h
    }

    fn bounding_diameter(&self) -> f64 {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &self.nodes {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt()
    }

    /// Undirected edges with the triangles that use them (one or two).
    pub fn edges(&self) -> Vec<([usize; 2], Vec<usize>)> {
        let mut owners: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for e in 0..3 {
                owners.entry(edge_key(tri[e], tri[(e + 1) % 3])).or_default().push(t);
            }
        }
        let mut edges: Vec<_> = owners.into_iter().map(|((a, b), t)| ([a, b], t)).collect();
        edges.sort_unstable_by_key(|(e, _)| *e);
        edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges().len()
    }

    /// Triangles sharing an edge with each triangle.
    pub fn edge_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::with_capacity(3); self.triangles.len()];
        for (_, tris) in self.edges() {
            if let [a, b] = tris[..] {
                nb[a].push(b);
                nb[b].push(a);
            }
        }
        nb
    }

    /// Triangles with at least one node on the boundary.
    pub fn touches_boundary(&self) -> Vec<bool> {
        let mut on = vec![false; self.nodes.len()];
        for e in &self.boundary_edges {
            on[e[0]] = true;
            on[e[1]] = true;
        }
        self.triangles.iter().map(|t| t.iter().any(|&v| on[v])).collect()
    }

    /// Boundary edges chained into closed loops (outer boundary and holes).
    pub fn boundary_loops(&self) -> Vec<Vec<usize>> {
        let mut next: HashMap<usize, usize> = HashMap::new();
        for &[a, b] in &self.boundary_edges {
            next.insert(a, b);
        }
        let mut starts: Vec<usize> = next.keys().copied().collect();
        starts.sort_unstable();
        let mut visited = std::collections::HashSet::new();
        let mut loops = Vec::new();
        for s in starts {
            if visited.contains(&s) {
                continue;
            }
            let mut lp = vec![s];
            visited.insert(s);
            let mut cur = next[&s];
            while cur != s {
                visited.insert(cur);
                lp.push(cur);
                match next.get(&cur) {
                    Some(&n) => cur = n,
                    None => break,
                }
            }
            loops.push(lp);
        }
        loops
    }

    /// Area enclosed by the boundary loops, by the shoelace formula.
    pub fn boundary_area(&self) -> f64 {
        self.boundary_loops()
            .iter()
            .map(|lp| {
                let n = lp.len();
                (0..n)
                    .map(|i| {
                        let (p, q) = (self.nodes[lp[i]], self.nodes[lp[(i + 1) % n]]);
                        p[0] * q[1] - q[0] * p[1]
                    })
                    .sum::<f64>()
                    * 0.5
            })
            .sum()
    }

    /// Barycentric coordinates of `p` with respect to triangle `t`.
    pub fn barycentric(&self, t: usize, p: Point) -> [f64; 3] {
        let [a, b, c] = self.vertices(t);
        let area = signed_area(a, b, c);
        let l0 = signed_area(p, b, c) / area;
        let l1 = signed_area(a, p, c) / area;
        [l0, l1, 1.0 - l0 - l1]
    }
}

impl fmt::Display for Triangulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} nodes, {} triangles, {} boundary edges",
            self.nodes.len(),
            self.triangles.len(),
            self.boundary_edges.len()
        )
    }
}

/// Bucket grid for point location in a triangulation.
#[derive(Clone, Debug)]
pub struct Locator {
    origin: Point,
    cell: f64,
    dims: [usize; 2],
    buckets: Vec<Vec<usize>>,
}

impl Locator {
    pub fn new(mesh: &Triangulation) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in mesh.nodes() {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let nt = mesh.triangle_count().max(1);
        let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(f64::MIN_POSITIVE);
        let per_side = ((nt as f64 / 2.0).sqrt().ceil() as usize).max(1);
        let cell = extent / per_side as f64 * (1.0 + 1e-9);
        let dims = [
            (((hi[0] - lo[0]) / cell).floor() as usize + 1).max(1),
            (((hi[1] - lo[1]) / cell).floor() as usize + 1).max(1),
        ];
        let mut buckets = vec![Vec::new(); dims[0] * dims[1]];
        for t in 0..mesh.triangle_count() {
            let v = mesh.vertices(t);
            let (mut tlo, mut thi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for p in &v {
                for d in 0..2 {
                    tlo[d] = tlo[d].min(p[d]);
                    thi[d] = thi[d].max(p[d]);
                }
            }
            let i0 = ((tlo[0] - lo[0]) / cell).floor().max(0.0) as usize;
            let j0 = ((tlo[1] - lo[1]) / cell).floor().max(0.0) as usize;
            let i1 = (((thi[0] - lo[0]) / cell).floor() as usize).min(dims[0] - 1);
            let j1 = (((thi[1] - lo[1]) / cell).floor() as usize).min(dims[1] - 1);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * dims[0] + i].push(t);
                }
            }
        }
        Locator {
            origin: lo,
            cell,
            dims,
            buckets,
        }
    }

    /// Index of a triangle containing `p`, with a small tolerance so points
    /// on shared edges are located.
    pub fn locate(&self, mesh: &Triangulation, p: Point) -> Option<usize> {
        let fi = (p[0] - self.origin[0]) / self.cell;
        let fj = (p[1] - self.origin[1]) / self.cell;
        if !(fi >= -1e-9 && fj >= -1e-9) {
            return None;
        }
        let i = (fi.max(0.0) as usize).min(self.dims[0] - 1);
        let j = (fj.max(0.0) as usize).min(self.dims[1] - 1);
        if fi > self.dims[0] as f64 + 1e-9 || fj > self.dims[1] as f64 + 1e-9 {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        for &t in &self.buckets[j * self.dims[0] + i] {
            let l = mesh.barycentric(t, p);
            let m = l[0].min(l[1]).min(l[2]);
            if m >= 0.0 {
                return Some(t);
            }
            if best.is_none_or(|(_, bm)| m > bm) {
                best = Some((t, m));
            }
        }
        match best {
            Some((t, m)) if m > -1e-10 => Some(t),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_triangle() -> Triangulation {
        Triangulation::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]], vec![]).unwrap()
    }

    #[test]
    fn grid_counts() {
        let m = Triangulation::square_grid(2).unwrap();
        assert_eq!(m.node_count(), 9);
        assert_eq!(m.triangle_count(), 8);
        assert_eq!(m.boundary_edges().len(), 8);
    }

    #[test]
    fn grid_rejects_one_division() {
        assert!(matches!(Triangulation::square_grid(1), Err(MeshError::TooFewDivisions(1))));
    }

    #[test]
    fn grid_resolves_source_support() {
        let m = Triangulation::square_grid(8).unwrap();
        for corner in [[0.125, 0.25], [0.375, 0.25], [0.375, 0.75], [0.125, 0.75]] {
            assert!(m
                .nodes()
                .iter()
                .any(|p| (p[0] - corner[0]).abs() < 1e-15 && (p[1] - corner[1]).abs() < 1e-15));
        }
    }

    #[test]
    fn refine_unit_triangle() {
        let fine = unit_triangle().refine_uniform();
        assert_eq!(fine.triangle_count(), 4);
        assert_eq!(fine.node_count(), 6);
        for t in 0..4 {
            assert!((fine.area(t) - 0.125).abs() < 1e-15);
        }
        assert_eq!(fine.parent().unwrap(), &[0, 0, 0, 0]);
    }

    #[test]
    fn refine_grid() {
        let coarse = Triangulation::square_grid(2).unwrap();
        let fine = coarse.refine_uniform();
        assert_eq!(fine.triangle_count(), 32);
        assert_eq!(fine.node_count(), coarse.node_count() + coarse.edge_count());
        let parent = fine.parent().unwrap();
        for k in 0..coarse.triangle_count() {
            assert_eq!(parent.iter().filter(|&&p| p == k).count(), 4);
            let child_area: f64 = (0..fine.triangle_count()).filter(|&c| parent[c] == k).map(|c| fine.area(c)).sum();
            assert!((child_area - coarse.area(k)).abs() <= 1e-12 * coarse.area(k));
        }
        // refined mesh is itself conforming
        Triangulation::new(fine.nodes().to_vec(), fine.triangles().to_vec(), fine.boundary_edges().to_vec()).unwrap();
    }

    #[test]
    fn parse_single_triangle() {
        let m = Triangulation::parse("# one triangle\n3 1 3\n0 0\n1 0\n0 1\n0 1 2\n0 1\n1 2\n2 0\n").unwrap();
        assert_eq!(m.triangle_count(), 1);
        assert!((m.total_area() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn parse_zero_area_names_triangle() {
        let err = Triangulation::parse("4 2 0\n0 0\n1 0\n0 1\n2 0\n0 1 2\n0 1 3\n").unwrap_err();
        match err {
            MeshError::DegenerateTriangle { index, .. } => assert_eq!(index, 1),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn parse_inconsistent_counts() {
        let err = Triangulation::parse("3 2 0\n0 0\n1 0\n0 1\n0 1 2\n").unwrap_err();
        assert!(matches!(err, MeshError::Parse { .. }), "{err}");
        let err = Triangulation::parse("3 1 0\n0 0\n1 0\n0 1\n0 1 2\n0 1\n").unwrap_err();
        assert!(matches!(err, MeshError::Parse { line: 6, .. }), "{err}");
    }

    #[test]
    fn parse_reports_line_number() {
        let err = Triangulation::parse("3 1 0\n0 0\n1 x\n0 1\n0 1 2\n").unwrap_err();
        assert!(matches!(err, MeshError::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn hanging_node_rejected() {
        // big triangle on the left, two small ones on the right share the midpoint
        let nodes = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [2.0, 0.5], [1.0, 0.5]];
        let tris = vec![[0, 1, 2], [1, 3, 4], [4, 3, 2]];
        let err = Triangulation::new(nodes, tris, vec![]).unwrap_err();
        assert!(matches!(err, MeshError::HangingNode { node: 4, .. }), "{err}");
    }

    #[test]
    fn shared_edge_overused_rejected() {
        let nodes = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let err = Triangulation::new(nodes, vec![[0, 1, 2], [0, 1, 3]], vec![]).unwrap_err();
        assert!(matches!(err, MeshError::NonConforming { .. }), "{err}");
    }

    #[test]
    fn text_roundtrip() {
        let m = Triangulation::square_grid(3).unwrap();
        let back = Triangulation::parse(&m.to_text()).unwrap();
        assert_eq!(back.triangles(), m.triangles());
        assert_eq!(back.nodes(), m.nodes());
    }

    #[test]
    fn locate_points() {
        let m = Triangulation::square_grid(5).unwrap();
        let loc = Locator::new(&m);
        for t in 0..m.triangle_count() {
            let c = m.centroid(t);
            assert_eq!(loc.locate(&m, c), Some(t));
        }
        assert!(loc.locate(&m, [1.0, 1.0]).is_some());
        assert!(loc.locate(&m, [0.0, 0.0]).is_some());
        assert_eq!(loc.locate(&m, [1.5, 0.5]), None);
        assert_eq!(loc.locate(&m, [-0.1, 0.5]), None);
    }
}
