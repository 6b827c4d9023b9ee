//! Finite-element spaces, fields and the two-grid gradient projection.

use std::fmt;

use thiserror::Error;

use crate::mesh::{Point, Triangulation};

#[derive(Debug, Error)]
pub enum FemError {
    #[error("field lives in {found} but {expected} was required")]
    SpaceMismatch { expected: String, found: String },
    #[error("coarse/refined pair has no parent map")]
    MissingParent,
    #[error("unsupported quadrature order {0} (supported: 2 to 5)")]
    QuadratureOrder(usize),
    #[error("field dump: {0}")]
    Dump(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpaceKind {
    P0,
    P1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MeshLevel {
    Coarse,
    Refined,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeSpace {
    pub kind: SpaceKind,
    pub level: MeshLevel,
    pub dofs: usize,
}

impl FeSpace {
    pub fn on(kind: SpaceKind, level: MeshLevel, mesh: &Triangulation) -> Self {
        let dofs = match kind {
            SpaceKind::P0 => mesh.triangle_count(),
            SpaceKind::P1 => mesh.node_count(),
        };
        FeSpace { kind, level, dofs }
    }
}

impl fmt::Display for FeSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            SpaceKind::P0 => "P0",
            SpaceKind::P1 => "P1",
        };
        let level = match self.level {
            MeshLevel::Coarse => "coarse",
            MeshLevel::Refined => "refined",
        };
        write!(f, "{kind} {level} {}", self.dofs)
    }
}

/// Coefficient vector tagged with its space.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub space: FeSpace,
    pub coeffs: Vec<f64>,
}

impl Field {
    pub fn new(space: FeSpace, coeffs: Vec<f64>) -> Self {
        assert_eq!(space.dofs, coeffs.len(), "coefficient count must match the space");
        Field { space, coeffs }
    }

    pub fn zeros(space: FeSpace) -> Self {
        Field::new(space, vec![0.0; space.dofs])
    }

    /// Nodal (P1) or centroid (P0) interpolant of `f`.
    pub fn interpolate(space: FeSpace, mesh: &Triangulation, f: impl Fn(Point) -> f64) -> Self {
        let coeffs = match space.kind {
            SpaceKind::P1 => mesh.nodes().iter().map(|&p| f(p)).collect(),
            SpaceKind::P0 => (0..mesh.triangle_count()).map(|t| f(mesh.centroid(t))).collect(),
        };
        Field::new(space, coeffs)
    }

    /// Text dump: header `kind level count`, then one coefficient per line.
    pub fn to_dump(&self) -> String {
        let mut out = format!("{}\n", self.space);
        for c in &self.coeffs {
            out.push_str(&format!("{c:.17e}\n"));
        }
        out
    }

    pub fn parse_dump(text: &str) -> Result<Field, FemError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| FemError::Dump("empty input".into()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(FemError::Dump(format!("bad header {header:?}")));
        }
        let kind = match parts[0] {
            "P0" => SpaceKind::P0,
            "P1" => SpaceKind::P1,
            k => return Err(FemError::Dump(format!("unknown kind {k:?}"))),
        };
        let level = match parts[1] {
            "coarse" => MeshLevel::Coarse,
            "refined" => MeshLevel::Refined,
            l => return Err(FemError::Dump(format!("unknown level {l:?}"))),
        };
        let dofs: usize = parts[2].parse().map_err(|_| FemError::Dump(format!("bad count {:?}", parts[2])))?;
        let coeffs = lines
            .map(|l| l.trim().parse::<f64>().map_err(|_| FemError::Dump(format!("bad value {l:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if coeffs.len() != dofs {
            return Err(FemError::Dump(format!("header announces {dofs} values, found {}", coeffs.len())));
        }
        Ok(Field::new(FeSpace { kind, level, dofs }, coeffs))
    }
}

/// Symmetric quadrature on triangles, in barycentric coordinates with
/// weights summing to one (multiply by the area).
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub points: Vec<([f64; 3], f64)>,
    pub order: usize,
}

impl QuadratureRule {
    pub fn of_order(order: usize) -> Result<Self, FemError> {
        let sym3 = |a: f64, b: f64, w: f64| [([a, a, b], w), ([a, b, a], w), ([b, a, a], w)];
        let points: Vec<([f64; 3], f64)> = match order {
            2 => sym3(1.0 / 6.0, 2.0 / 3.0, 1.0 / 3.0).to_vec(),
            3 | 4 => {
                let mut p = sym3(0.445948490915965, 0.108103018168070, 0.223381589678011).to_vec();
                p.extend(sym3(0.091576213509771, 0.816847572980459, 0.109951743655322));
                p
            }
            5 => {
                let mut p = vec![([1.0 / 3.0; 3], 0.225)];
                p.extend(sym3(0.470142064105115, 0.059715871789770, 0.132394152788506));
                p.extend(sym3(0.101286507323456, 0.797426985353087, 0.125939180544827));
                p
            }
            o => return Err(FemError::QuadratureOrder(o)),
        };
        let order = if order == 3 { 4 } else { order };
        Ok(QuadratureRule { points, order })
    }

    pub fn integrate(&self, mesh: &Triangulation, t: usize, f: impl Fn(Point) -> f64) -> f64 {
        let [a, b, c] = mesh.vertices(t);
        let s: f64 = self
            .points
            .iter()
            .map(|&(l, w)| w * f([l[0] * a[0] + l[1] * b[0] + l[2] * c[0], l[0] * a[1] + l[1] * b[1] + l[2] * c[1]]))
            .sum();
        s * mesh.area(t)
    }
}

/// Area and constant basis gradients of one triangle.
#[derive(Clone, Copy, Debug)]
pub struct ElementGeometry {
    pub area: f64,
    pub grads: [[f64; 2]; 3],
}

pub fn element_geometry(mesh: &Triangulation) -> Vec<ElementGeometry> {
    (0..mesh.triangle_count())
        .map(|t| {
            let [p0, p1, p2] = mesh.vertices(t);
            let area = mesh.area(t);
            let inv = 1.0 / (2.0 * area);
            let g = |q: Point, r: Point| [(q[1] - r[1]) * inv, (r[0] - q[0]) * inv];
            ElementGeometry {
                area,
                grads: [g(p1, p2), g(p2, p0), g(p0, p1)],
            }
        })
        .collect()
}

/// A coarse mesh with an optional uniform refinement.
#[derive(Clone, Debug)]
pub struct MeshPair {
    pub coarse: Triangulation,
    pub refined: Option<Triangulation>,
}

impl MeshPair {
    pub fn single(coarse: Triangulation) -> Self {
        MeshPair { coarse, refined: None }
    }

    pub fn two_grid(coarse: Triangulation) -> Self {
        let refined = coarse.refine_uniform();
        MeshPair {
            coarse,
            refined: Some(refined),
        }
    }

    pub fn mesh(&self, level: MeshLevel) -> Option<&Triangulation> {
        match level {
            MeshLevel::Coarse => Some(&self.coarse),
            MeshLevel::Refined => self.refined.as_ref(),
        }
    }
}

fn require(field: &Field, kind: SpaceKind, mesh: &Triangulation) -> Result<(), FemError> {
    let expected = FeSpace::on(kind, field.space.level, mesh);
    if field.space.kind != kind || field.coeffs.len() != expected.dofs {
        return Err(FemError::SpaceMismatch {
            expected: expected.to_string(),
            found: field.space.to_string(),
        });
    }
    Ok(())
}

/// Gradient of a P1 field, constant on each triangle.
pub fn p1_gradient_per_triangle(field: &Field, mesh: &Triangulation) -> Result<Vec<[f64; 2]>, FemError> {
    require(field, SpaceKind::P1, mesh)?;
    Ok(gradients_with(&element_geometry(mesh), mesh, &field.coeffs))
}

pub(crate) fn gradients_with(geom: &[ElementGeometry], mesh: &Triangulation, u: &[f64]) -> Vec<[f64; 2]> {
    mesh.triangles()
        .iter()
        .zip(geom)
        .map(|(tri, g)| {
            let mut d = [0.0; 2];
            for (i, &v) in tri.iter().enumerate() {
                d[0] += u[v] * g.grads[i][0];
                d[1] += u[v] * g.grads[i][1];
            }
            d
        })
        .collect()
}

/// Area-weighted average of `values` over the children of each coarse cell.
pub(crate) fn average_to_parent(values: &[f64], refined: &Triangulation, coarse_cells: usize) -> Result<Vec<f64>, FemError> {
    let parent = refined.parent().ok_or(FemError::MissingParent)?;
    let mut num = vec![0.0; coarse_cells];
    let mut den = vec![0.0; coarse_cells];
    for (c, &k) in parent.iter().enumerate() {
        let a = refined.area(c);
        num[k] += a * values[c];
        den[k] += a;
    }
    Ok(num.iter().zip(&den).map(|(n, d)| n / d).collect())
}

/// Projects |∇u| of a potential on the refined mesh onto P0 of the coarse mesh.
pub fn project_gradient_magnitude(pot: &Field, pair: &MeshPair) -> Result<Field, FemError> {
    let refined = pair.refined.as_ref().ok_or(FemError::MissingParent)?;
    let grads = p1_gradient_per_triangle(pot, refined)?;
    let mags: Vec<f64> = grads.iter().map(|g| g[0].hypot(g[1])).collect();
    let avg = average_to_parent(&mags, refined, pair.coarse.triangle_count())?;
    Ok(Field::new(FeSpace::on(SpaceKind::P0, MeshLevel::Coarse, &pair.coarse), avg))
}

/// Result of [`interpolate_forcing`].
#[derive(Clone, Debug)]
pub struct Forcing {
    /// Interpolant of `f` in the target space.
    pub field: Field,
    /// `∫ f φ_j`, shifted to an exactly zero sum.
    pub load: Vec<f64>,
    /// Sum of the load vector before the zero-sum correction.
    pub raw_sum: f64,
}

/// Load vector `∫ f φ_j` by per-triangle quadrature, corrected to zero sum.
pub fn interpolate_forcing(
    f: impl Fn(Point) -> f64,
    target: FeSpace,
    mesh: &Triangulation,
    quadrature_order: usize,
) -> Result<Forcing, FemError> {
    let rule = QuadratureRule::of_order(quadrature_order)?;
    let mut load = vec![0.0; target.dofs];
    for t in 0..mesh.triangle_count() {
        let [a, b, c] = mesh.vertices(t);
        let tri = mesh.triangles()[t];
        let area = mesh.area(t);
        for &(l, w) in &rule.points {
            let x = [l[0] * a[0] + l[1] * b[0] + l[2] * c[0], l[0] * a[1] + l[1] * b[1] + l[2] * c[1]];
            let fx = f(x) * w * area;
            match target.kind {
                SpaceKind::P0 => load[t] += fx,
                SpaceKind::P1 => {
                    for i in 0..3 {
                        load[tri[i]] += fx * l[i];
                    }
                }
            }
        }
    }
    let raw_sum: f64 = load.iter().sum();
    let mean = raw_sum / load.len() as f64;
    for v in &mut load {
        *v -= mean;
    }
    let field = match target.kind {
        SpaceKind::P1 => Field::interpolate(target, mesh, &f),
        SpaceKind::P0 => Field::new(
            target,
            (0..mesh.triangle_count())
                .map(|t| rule.integrate(mesh, t, &f) / mesh.area(t))
                .collect(),
        ),
    };
    Ok(Forcing { field, load, raw_sum })
}
