//! Sparse matrices of the semi-discrete system: weighted stiffness, mass,
//! and the diagonal coupling matrix driving the density update.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::fem::{
    average_to_parent, element_geometry, gradients_with, interpolate_forcing, ElementGeometry, FeSpace, FemError, Field,
    Forcing, MeshLevel, MeshPair, SpaceKind,
};
use crate::mesh::{Point, Triangulation};

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("incompatible spaces: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Fem(#[from] FemError),
}

/// Row-compressed matrix with sorted column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Sums duplicate entries.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            assert!(i < n && j < n, "triplet ({i}, {j}) outside a {n}x{n} matrix");
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { n, row_ptr, col_idx, values }
    }

    pub fn diagonal_matrix(diag: &[f64]) -> Self {
        let n = diag.len();
        CsrMatrix {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut m = self.clone();
        m.values.iter_mut().for_each(|v| *v *= factor);
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        (0..self.n).all(|i| self.row(i).all(|(j, v)| (v - self.get(j, i)).abs() <= tol * scale))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }
}

/// Potential/density space combination.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pairing {
    /// P1 potential and P0 density on the same mesh.
    P1hP0h,
    /// P1 potential on the refined mesh, P0 density on the coarse mesh.
    P1h2P0h,
    /// P1 potential and P1 density on the same mesh.
    P1hP1h,
    /// P1 potential on the refined mesh, P1 density on the coarse mesh.
    P1h2P1h,
}

impl Pairing {
    pub const ALL: [Pairing; 4] = [Pairing::P1hP0h, Pairing::P1h2P0h, Pairing::P1hP1h, Pairing::P1h2P1h];

    pub fn potential_level(self) -> MeshLevel {
        match self {
            Pairing::P1hP0h | Pairing::P1hP1h => MeshLevel::Coarse,
            Pairing::P1h2P0h | Pairing::P1h2P1h => MeshLevel::Refined,
        }
    }

    pub fn density_kind(self) -> SpaceKind {
        match self {
            Pairing::P1hP0h | Pairing::P1h2P0h => SpaceKind::P0,
            Pairing::P1hP1h | Pairing::P1h2P1h => SpaceKind::P1,
        }
    }

    pub fn is_two_grid(self) -> bool {
        self.potential_level() == MeshLevel::Refined
    }

    pub fn name(self) -> &'static str {
        match self {
            Pairing::P1hP0h => "p1h-p0h",
            Pairing::P1h2P0h => "p1h2-p0h",
            Pairing::P1hP1h => "p1h-p1h",
            Pairing::P1h2P1h => "p1h2-p1h",
        }
    }
}

impl fmt::Display for Pairing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pairing {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Pairing::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown pairing {s:?} (expected one of p1h2-p0h, p1h-p0h, p1h-p1h, p1h2-p1h)"))
    }
}

/// Precomputed geometry and sparsity for one pairing on one mesh pair.
///
/// The stiffness pattern is built once; [`Discretization::stiffness`]
/// only refills values.
#[derive(Clone, Debug)]
pub struct Discretization {
    pairing: Pairing,
    meshes: MeshPair,
    pot_geom: Vec<ElementGeometry>,
    pot_space: FeSpace,
    density_space: FeSpace,
    /// Effective density on each potential cell as a combination of density dofs.
    cell_density: Vec<Vec<(usize, f64)>>,
    pattern: CsrMatrix,
    /// Position in `pattern.values` of each local (i, j) pair, per potential cell.
    scatter: Vec<[usize; 9]>,
    mass: Vec<f64>,
}

impl Discretization {
    pub fn new(coarse: Triangulation, pairing: Pairing) -> Self {
        let meshes = if pairing.is_two_grid() {
            MeshPair::two_grid(coarse)
        } else {
            MeshPair::single(coarse)
        };
        Self::from_pair(meshes, pairing).expect("pair built for this pairing")
    }

    pub fn from_pair(meshes: MeshPair, pairing: Pairing) -> Result<Self, AssemblyError> {
        if pairing.is_two_grid() {
            let refined = meshes
                .refined
                .as_ref()
                .ok_or_else(|| AssemblyError::Incompatible(format!("{pairing} needs a refined mesh")))?;
            if refined.parent().is_none() {
                return Err(FemError::MissingParent.into());
            }
        }
        let level = pairing.potential_level();
        let pot_mesh = meshes.mesh(level).expect("checked above");
        let pot_geom = element_geometry(pot_mesh);
        let pot_space = FeSpace::on(SpaceKind::P1, level, pot_mesh);
        let density_space = FeSpace::on(pairing.density_kind(), MeshLevel::Coarse, &meshes.coarse);

        let cell_density: Vec<Vec<(usize, f64)>> = (0..pot_mesh.triangle_count())
            .map(|c| {
                let k = if pairing.is_two_grid() { pot_mesh.parent().unwrap()[c] } else { c };
                match pairing.density_kind() {
                    SpaceKind::P0 => vec![(k, 1.0)],
                    SpaceKind::P1 => {
                        let l = meshes.coarse.barycentric(k, pot_mesh.centroid(c));
                        let tri = meshes.coarse.triangles()[k];
                        (0..3).map(|i| (tri[i], l[i])).collect()
                    }
                }
            })
            .collect();

        let n = pot_mesh.node_count();
        let mut triplets = Vec::with_capacity(9 * pot_mesh.triangle_count());
        for tri in pot_mesh.triangles() {
            for &i in tri {
                for &j in tri {
                    triplets.push((i, j, 0.0));
                }
            }
        }
        let pattern = CsrMatrix::from_triplets(n, triplets);
        let scatter = pot_mesh
            .triangles()
            .iter()
            .map(|tri| {
                let mut s = [0usize; 9];
                for a in 0..3 {
                    let i = tri[a];
                    let row = &pattern.col_idx[pattern.row_ptr[i]..pattern.row_ptr[i + 1]];
                    for b in 0..3 {
                        s[3 * a + b] = pattern.row_ptr[i] + row.binary_search(&tri[b]).expect("pattern holds all pairs");
                    }
                }
                s
            })
            .collect();
        let mass = lumped_mass(density_space, &meshes.coarse);
        Ok(Discretization {
            pairing,
            meshes,
            pot_geom,
            pot_space,
            density_space,
            cell_density,
            pattern,
            scatter,
            mass,
        })
    }

    pub fn pairing(&self) -> Pairing {
        self.pairing
    }

    pub fn meshes(&self) -> &MeshPair {
        &self.meshes
    }

    pub fn coarse(&self) -> &Triangulation {
        &self.meshes.coarse
    }

    pub fn potential_mesh(&self) -> &Triangulation {
        self.meshes.mesh(self.pairing.potential_level()).unwrap()
    }

    pub fn potential_space(&self) -> FeSpace {
        self.pot_space
    }

    pub fn density_space(&self) -> FeSpace {
        self.density_space
    }

    /// Diagonal of the (lumped, for P1) density mass matrix.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Effective density on each potential-mesh cell.
    pub fn cell_density(&self, tdens: &[f64]) -> Vec<f64> {
        self.cell_density
            .iter()
            .map(|w| w.iter().map(|&(k, a)| a * tdens[k]).sum())
            .collect()
    }

    /// `A_ij = Σ_k τ_k ∫ θ_k ∇ψ_i·∇ψ_j`.
    pub fn stiffness(&self, tdens: &[f64]) -> CsrMatrix {
        let mut a = self.pattern.clone();
        self.stiffness_into(tdens, &mut a);
        a
    }

    pub fn stiffness_into(&self, tdens: &[f64], a: &mut CsrMatrix) {
        assert_eq!(tdens.len(), self.density_space.dofs);
        a.values.iter_mut().for_each(|v| *v = 0.0);
        for ((g, s), w) in self.pot_geom.iter().zip(&self.scatter).zip(&self.cell_density) {
            let rho: f64 = w.iter().map(|&(k, a)| a * tdens[k]).sum::<f64>() * g.area;
            for i in 0..3 {
                for j in 0..3 {
                    let d = g.grads[i][0] * g.grads[j][0] + g.grads[i][1] * g.grads[j][1];
                    a.values[s[3 * i + j]] += rho * d;
                }
            }
        }
    }

    /// Gradients of the potential on every potential-mesh cell.
    pub fn potential_gradients(&self, pot: &[f64]) -> Vec<[f64; 2]> {
        gradients_with(&self.pot_geom, self.potential_mesh(), pot)
    }

    /// |∇u| on coarse cells: averaged over children for two-grid pairings.
    pub fn gradient_magnitude(&self, pot: &[f64]) -> Vec<f64> {
        let mags: Vec<f64> = self.potential_gradients(pot).iter().map(|g| g[0].hypot(g[1])).collect();
        self.to_coarse(mags)
    }

    /// |∇u|² averaged on coarse cells (the exact cellwise energy density).
    pub fn gradient_square(&self, pot: &[f64]) -> Vec<f64> {
        let sq: Vec<f64> = self.potential_gradients(pot).iter().map(|g| g[0] * g[0] + g[1] * g[1]).collect();
        self.to_coarse(sq)
    }

    fn to_coarse(&self, per_cell: Vec<f64>) -> Vec<f64> {
        if self.pairing.is_two_grid() {
            average_to_parent(&per_cell, self.potential_mesh(), self.meshes.coarse.triangle_count())
                .expect("two-grid pair has a parent map")
        } else {
            per_cell
        }
    }

    /// Lumps a per-coarse-cell quantity onto density dofs: identity for P0,
    /// area-weighted nodal average for P1.
    pub fn cell_to_density(&self, per_cell: &[f64]) -> Vec<f64> {
        match self.density_space.kind {
            SpaceKind::P0 => per_cell.to_vec(),
            SpaceKind::P1 => {
                let mesh = &self.meshes.coarse;
                let mut acc = vec![0.0; mesh.node_count()];
                for (t, tri) in mesh.triangles().iter().enumerate() {
                    let share = mesh.area(t) / 3.0 * per_cell[t];
                    for &v in tri {
                        acc[v] += share;
                    }
                }
                acc.iter().zip(&self.mass).map(|(a, m)| a / m).collect()
            }
        }
    }

    /// Gradient magnitude seen by each density dof: `M⁻¹ B[u] + 1`.
    pub fn density_rate(&self, pot: &[f64]) -> Vec<f64> {
        self.cell_to_density(&self.gradient_magnitude(pot))
    }

    /// Diagonal of `B[u]`.
    pub fn coupling(&self, pot: &[f64]) -> Vec<f64> {
        self.density_rate(pot).iter().zip(&self.mass).map(|(g, m)| (g - 1.0) * m).collect()
    }

    /// Density L² norm through the density mass matrix.
    pub fn density_norm(&self, v: &[f64]) -> f64 {
        v.iter().zip(&self.mass).map(|(x, m)| m * x * x).sum::<f64>().sqrt()
    }

    /// `‖a − b‖ / ‖b‖` in the density L² norm.
    pub fn rel_diff(&self, a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).zip(&self.mass).map(|((x, y), m)| m * (x - y) * (x - y)).sum();
        num.sqrt() / self.density_norm(b)
    }

    pub fn load(&self, f: impl Fn(Point) -> f64, quadrature_order: usize) -> Result<Forcing, FemError> {
        interpolate_forcing(f, self.pot_space, self.potential_mesh(), quadrature_order)
    }

    /// Projects a density onto the density space: cell averages for P0,
    /// lumped L² projection for P1.
    pub fn project_density(&self, f: impl Fn(Point) -> f64, quadrature_order: usize) -> Result<Field, FemError> {
        let rule = crate::fem::QuadratureRule::of_order(quadrature_order)?;
        let mesh = &self.meshes.coarse;
        let coeffs = match self.density_space.kind {
            SpaceKind::P0 => (0..mesh.triangle_count()).map(|t| rule.integrate(mesh, t, &f) / mesh.area(t)).collect(),
            SpaceKind::P1 => {
                let mut acc = vec![0.0; mesh.node_count()];
                for (t, tri) in mesh.triangles().iter().enumerate() {
                    for (i, &v) in tri.iter().enumerate() {
                        acc[v] += rule.integrate(mesh, t, |p| f(p) * mesh.barycentric(t, p)[i]);
                    }
                }
                acc.iter().zip(&self.mass).map(|(a, m)| a / m).collect()
            }
        };
        Ok(Field::new(self.density_space, coeffs))
    }
}

fn lumped_mass(space: FeSpace, mesh: &Triangulation) -> Vec<f64> {
    match space.kind {
        SpaceKind::P0 => (0..mesh.triangle_count()).map(|t| mesh.area(t)).collect(),
        SpaceKind::P1 => {
            let mut m = vec![0.0; mesh.node_count()];
            for (t, tri) in mesh.triangles().iter().enumerate() {
                for &v in tri {
                    m[v] += mesh.area(t) / 3.0;
                }
            }
            m
        }
    }
}

fn pairing_for(density: FeSpace, pot_level: MeshLevel) -> Result<Pairing, AssemblyError> {
    if density.level != MeshLevel::Coarse {
        return Err(AssemblyError::Incompatible("the density must live on the coarse mesh".into()));
    }
    Ok(match (pot_level, density.kind) {
        (MeshLevel::Coarse, SpaceKind::P0) => Pairing::P1hP0h,
        (MeshLevel::Refined, SpaceKind::P0) => Pairing::P1h2P0h,
        (MeshLevel::Coarse, SpaceKind::P1) => Pairing::P1hP1h,
        (MeshLevel::Refined, SpaceKind::P1) => Pairing::P1h2P1h,
    })
}

/// Weighted stiffness matrix for `tdens` with the potential in `pot_space`.
pub fn assemble_stiffness(tdens: &Field, pot_space: FeSpace, meshes: &MeshPair) -> Result<CsrMatrix, AssemblyError> {
    if pot_space.kind != SpaceKind::P1 {
        return Err(AssemblyError::Incompatible("the potential must be P1".into()));
    }
    let pairing = pairing_for(tdens.space, pot_space.level)?;
    let disc = Discretization::from_pair(meshes.clone(), pairing)?;
    if tdens.coeffs.len() != disc.density_space.dofs || pot_space.dofs != disc.pot_space.dofs {
        return Err(AssemblyError::Incompatible(format!(
            "density {} / potential {} do not match the meshes",
            tdens.space, pot_space
        )));
    }
    Ok(disc.stiffness(&tdens.coeffs))
}

/// Mass matrix of `space`; P0 is always diagonal, P1 is diagonal when lumped.
pub fn assemble_mass(space: FeSpace, mesh: &Triangulation, lumped: bool) -> CsrMatrix {
    if space.kind == SpaceKind::P0 || lumped {
        return CsrMatrix::diagonal_matrix(&lumped_mass(space, mesh));
    }
    let mut triplets = Vec::with_capacity(9 * mesh.triangle_count());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let a = mesh.area(t) / 12.0;
        for (i, &vi) in tri.iter().enumerate() {
            for (j, &vj) in tri.iter().enumerate() {
                triplets.push((vi, vj, if i == j { 2.0 * a } else { a }));
            }
        }
    }
    CsrMatrix::from_triplets(mesh.node_count(), triplets)
}

/// Diagonal coupling matrix `B[u]` for the given potential and density space.
pub fn assemble_coupling(pot: &Field, density_space: FeSpace, meshes: &MeshPair) -> Result<CsrMatrix, AssemblyError> {
    if pot.space.kind != SpaceKind::P1 {
        return Err(AssemblyError::Incompatible("the potential must be P1".into()));
    }
    let pairing = pairing_for(density_space, pot.space.level)?;
    let disc = Discretization::from_pair(meshes.clone(), pairing)?;
    if pot.coeffs.len() != disc.pot_space.dofs {
        return Err(AssemblyError::Incompatible(format!("potential {} does not match the meshes", pot.space)));
    }
    Ok(CsrMatrix::diagonal_matrix(&disc.coupling(&pot.coeffs)))
}
