//! Test problems and reference solutions.
//!
//! Test Case 1 transports mass along horizontal rays, so the exact OT
//! density is the running integral of the forcing along each ray.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::fem::{FeSpace, Field};
use crate::mesh::{MeshError, Point, Triangulation};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("unknown problem {0:?} (valid: tc1-cont, tc1-cost, tc2, tc3)")]
    UnknownProblem(String),
    #[error("unknown initial density selector {0} (valid: 1, 2, 3)")]
    UnknownSelector(u8),
    #[error("forcing is not balanced along the ray y = {y}: integral {integral:e}")]
    UnbalancedRay { y: f64, integral: f64 },
    #[error("test case 2 mesh fixture: {0}")]
    Fixture(#[from] MeshError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    /// Test Case 1 with the continuous (sine bump) forcing.
    Tc1Cont,
    /// Test Case 1 with the piecewise constant forcing.
    Tc1Cost,
    /// Uniform disc transported to an ellipse.
    Tc2,
    /// Central cone split between four corner cones.
    Tc3,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 4] = [ProblemKind::Tc1Cont, ProblemKind::Tc1Cost, ProblemKind::Tc2, ProblemKind::Tc3];

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Tc1Cont => "tc1-cont",
            ProblemKind::Tc1Cost => "tc1-cost",
            ProblemKind::Tc2 => "tc2",
            ProblemKind::Tc3 => "tc3",
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemKind {
    type Err = OracleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ProblemKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| OracleError::UnknownProblem(s.to_string()))
    }
}

const TC1_Y: (f64, f64) = (0.25, 0.75);
const TC1_PLUS: (f64, f64) = (0.125, 0.375);
const TC1_MINUS: (f64, f64) = (0.625, 0.875);

/// Disc and ellipse of Test Case 2, as the inscribed polygons the fixture
/// mesh is aligned with.
pub mod tc2 {
    pub const CIRCLE_CENTER: [f64; 2] = [0.3, 0.5];
    pub const CIRCLE_RADIUS: f64 = 0.125;
    pub const ELLIPSE_CENTER: [f64; 2] = [0.7, 0.5];
    pub const ELLIPSE_AXES: [f64; 2] = [0.08, 0.14];
    pub const POLYGON_SIDES: usize = 48;
    pub const SOURCE_VALUE: f64 = 2.0;
}

/// Cone supports of Test Case 3.
pub mod tc3 {
    pub const SOURCE_CENTER: [f64; 2] = [0.5, 0.5];
    pub const SOURCE_RADIUS: f64 = 0.35;
    pub const SINK_CENTERS: [[f64; 2]; 4] = [[0.125, 0.125], [0.875, 0.125], [0.875, 0.875], [0.125, 0.875]];
    pub const SINK_RADIUS: f64 = 0.1;
}

const TC2_MESH: &str = include_str!("../data/tc2_mesh.txt");

/// Vertices of a counter-clockwise polygon inscribed in an ellipse.
pub fn ellipse_polygon(center: Point, axes: [f64; 2], sides: usize) -> Vec<Point> {
    (0..sides)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / sides as f64;
            [center[0] + axes[0] * a.cos(), center[1] + axes[1] * a.sin()]
        })
        .collect()
}

fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    0.5 * (0..n)
        .map(|i| {
            let (p, q) = (poly[i], poly[(i + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum::<f64>()
}

/// Strict interior test for a counter-clockwise convex polygon.
fn in_convex_polygon(poly: &[Point], p: Point) -> bool {
    let n = poly.len();
    (0..n).all(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        (b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1]) > 0.0
    })
}

fn distance_to_polygon(poly: &[Point], p: Point) -> f64 {
    if in_convex_polygon(poly, p) {
        return 0.0;
    }
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            let d = [b[0] - a[0], b[1] - a[1]];
            let t = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / (d[0] * d[0] + d[1] * d[1])).clamp(0.0, 1.0);
            (p[0] - a[0] - t * d[0]).hypot(p[1] - a[1] - t * d[1])
        })
        .fold(f64::INFINITY, f64::min)
}

/// `∫_{|x|<r} (1 − |x|) dx`.
fn cone_mass(r: f64) -> f64 {
    2.0 * PI * (r * r / 2.0 - r * r * r / 3.0)
}

fn cone(center: Point, radius: f64, p: Point) -> f64 {
    let r = (p[0] - center[0]).hypot(p[1] - center[1]);
    if r < radius {
        1.0 - r
    } else {
        0.0
    }
}

/// A transport problem on the unit square.
#[derive(Clone, Debug)]
pub struct Problem {
    kind: ProblemKind,
    circle: Vec<Point>,
    ellipse: Vec<Point>,
    sink_scale: f64,
}

impl Problem {
    pub fn new(kind: ProblemKind) -> Self {
        let circle = ellipse_polygon(tc2::CIRCLE_CENTER, [tc2::CIRCLE_RADIUS; 2], tc2::POLYGON_SIDES);
        let ellipse = ellipse_polygon(tc2::ELLIPSE_CENTER, tc2::ELLIPSE_AXES, tc2::POLYGON_SIDES);
        let sink_scale = match kind {
            ProblemKind::Tc2 => tc2::SOURCE_VALUE * polygon_area(&circle) / polygon_area(&ellipse),
            ProblemKind::Tc3 => cone_mass(tc3::SOURCE_RADIUS) / (4.0 * cone_mass(tc3::SINK_RADIUS)),
            _ => 1.0,
        };
        Problem { kind, circle, ellipse, sink_scale }
    }

    pub fn by_name(name: &str) -> Result<Self, OracleError> {
        Ok(Problem::new(name.parse()?))
    }

    pub fn testcase1(continuous: bool) -> Self {
        Problem::new(if continuous { ProblemKind::Tc1Cont } else { ProblemKind::Tc1Cost })
    }

    pub fn testcase2() -> Self {
        Problem::new(ProblemKind::Tc2)
    }

    pub fn testcase3() -> Self {
        Problem::new(ProblemKind::Tc3)
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// Sink scaling chosen for mass balance (1 for Test Case 1).
    pub fn sink_scale(&self) -> f64 {
        self.sink_scale
    }

    pub fn source(&self, p: Point) -> f64 {
        let [x, y] = p;
        match self.kind {
            ProblemKind::Tc1Cont | ProblemKind::Tc1Cost => {
                if !(y > TC1_Y.0 && y < TC1_Y.1 && x > TC1_PLUS.0 && x < TC1_PLUS.1) {
                    return 0.0;
                }
                if self.kind == ProblemKind::Tc1Cost {
                    2.0
                } else {
                    2.0 * (4.0 * PI * x - PI / 2.0).sin() * (2.0 * PI * y - PI / 2.0).sin()
                }
            }
            ProblemKind::Tc2 => {
                if in_convex_polygon(&self.circle, p) {
                    tc2::SOURCE_VALUE
                } else {
                    0.0
                }
            }
            ProblemKind::Tc3 => cone(tc3::SOURCE_CENTER, tc3::SOURCE_RADIUS, p),
        }
    }

    pub fn sink(&self, p: Point) -> f64 {
        let [x, y] = p;
        match self.kind {
            ProblemKind::Tc1Cont | ProblemKind::Tc1Cost => {
                if !(y > TC1_Y.0 && y < TC1_Y.1 && x > TC1_MINUS.0 && x < TC1_MINUS.1) {
                    return 0.0;
                }
                if self.kind == ProblemKind::Tc1Cost {
                    2.0
                } else {
                    2.0 * (4.0 * PI * x - 2.5 * PI).sin() * (2.0 * PI * y - PI / 2.0).sin()
                }
            }
            ProblemKind::Tc2 => {
                if in_convex_polygon(&self.ellipse, p) {
                    self.sink_scale
                } else {
                    0.0
                }
            }
            ProblemKind::Tc3 => {
                self.sink_scale * tc3::SINK_CENTERS.iter().map(|&c| cone(c, tc3::SINK_RADIUS, p)).sum::<f64>()
            }
        }
    }

    pub fn forcing(&self, p: Point) -> f64 {
        self.source(p) - self.sink(p)
    }

    /// Distance from `p` to the closure of the sink support.
    pub fn distance_to_sink(&self, p: Point) -> f64 {
        match self.kind {
            ProblemKind::Tc1Cont | ProblemKind::Tc1Cost => {
                let dx = (TC1_MINUS.0 - p[0]).max(p[0] - TC1_MINUS.1).max(0.0);
                let dy = (TC1_Y.0 - p[1]).max(p[1] - TC1_Y.1).max(0.0);
                dx.hypot(dy)
            }
            ProblemKind::Tc2 => distance_to_polygon(&self.ellipse, p),
            ProblemKind::Tc3 => tc3::SINK_CENTERS
                .iter()
                .map(|c| ((p[0] - c[0]).hypot(p[1] - c[1]) - tc3::SINK_RADIUS).max(0.0))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Distance to the boundary between the regions served by different
    /// sinks. By symmetry these are the lines `x = ½` and `y = ½` for Test
    /// Case 3; `None` where the problem has no such boundary.
    pub fn partition_distance(&self, p: Point) -> Option<f64> {
        match self.kind {
            ProblemKind::Tc3 => Some((p[0] - tc3::SOURCE_CENTER[0]).abs().min((p[1] - tc3::SOURCE_CENTER[1]).abs())),
            _ => None,
        }
    }

    /// Exact W1 distance where it is known.
    pub fn exact_w1(&self) -> Option<f64> {
        match self.kind {
            ProblemKind::Tc1Cost => Some(0.125),
            ProblemKind::Tc1Cont => Some(horizontal_ray_w1(|p| self.forcing(p))),
            _ => None,
        }
    }

    pub fn has_exact_density(&self) -> bool {
        matches!(self.kind, ProblemKind::Tc1Cont | ProblemKind::Tc1Cost)
    }

    /// Exact OT density by ray integration (Test Case 1 only).
    pub fn exact_density(&self, p: Point) -> Option<f64> {
        if !self.has_exact_density() {
            return None;
        }
        Some(ray_integrate(|q| self.forcing(q), p).expect("test case 1 is balanced on every ray"))
    }

    /// The problem's natural mesh: an aligned square grid for Test Cases
    /// 1 and 3, the shipped fixture for Test Case 2.
    pub fn natural_mesh(&self, divisions: usize) -> Result<Triangulation, OracleError> {
        match self.kind {
            ProblemKind::Tc2 => Ok(Triangulation::parse(TC2_MESH)?),
            _ => Ok(Triangulation::square_grid(divisions)?),
        }
    }
}

/// Test Case 2 fixture mesh (aligned with both supports).
pub fn tc2_fixture_mesh() -> Result<Triangulation, OracleError> {
    Ok(Triangulation::parse(TC2_MESH)?)
}

const GL5: [(f64, f64); 5] = [
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.0, 0.568_888_888_888_888_9),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// Panels per unit length; a multiple of 8 so that breakpoints at
/// multiples of 1/8 fall on panel boundaries.
const RAY_PANELS: usize = 1024;

fn integrate_1d(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let h = 1.0 / RAY_PANELS as f64;
    let first = (a / h).floor() as usize;
    let last = ((b / h).ceil() as usize).max(first + 1);
    let mut sum = 0.0;
    for k in first..last {
        let lo = (k as f64 * h).max(a);
        let hi = ((k + 1) as f64 * h).min(b);
        if hi <= lo {
            continue;
        }
        let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        sum += half * GL5.iter().map(|&(s, w)| w * f(mid + half * s)).sum::<f64>();
    }
    sum
}

/// `μ*(x, y) = ∫₀ˣ f(s, y) ds` for a forcing balanced along every
/// horizontal ray of the unit square.
pub fn ray_integrate(f: impl Fn(Point) -> f64, p: Point) -> Result<f64, OracleError> {
    let y = p[1];
    let along = |s: f64| f([s, y]);
    let total = integrate_1d(along, 0.0, 1.0);
    let scale = integrate_1d(|s| f([s, y]).abs(), 0.0, 1.0);
    if total.abs() > 1e-10 * scale.max(1.0) {
        return Err(OracleError::UnbalancedRay { y, integral: total });
    }
    Ok(integrate_1d(|s| f([s, y]), 0.0, p[0].clamp(0.0, 1.0)))
}

/// `∫ μ* = −∫ x f(x, y)` for horizontal-ray transport on the unit square.
pub fn horizontal_ray_w1(f: impl Fn(Point) -> f64) -> f64 {
    -integrate_1d(|y| integrate_1d(|x| x * f([x, y]), 0.0, 1.0), 0.0, 1.0)
}

/// Initial densities: 1 ≡ 1; 2 = 0.1 + 4|x − c|²; 3 = 3 + 2 sin(8πx) sin(8πy).
pub fn initial_density_fn(selector: u8) -> Result<fn(Point) -> f64, OracleError> {
    fn one(_: Point) -> f64 {
        1.0
    }
    fn bowl(p: Point) -> f64 {
        0.1 + 4.0 * ((p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2))
    }
    fn wave(p: Point) -> f64 {
        3.0 + 2.0 * (8.0 * PI * p[0]).sin() * (8.0 * PI * p[1]).sin()
    }
    match selector {
        1 => Ok(one),
        2 => Ok(bowl),
        3 => Ok(wave),
        s => Err(OracleError::UnknownSelector(s)),
    }
}

/// Interpolates an initial density: nodal values for P1, centroid values for P0.
pub fn initial_density(selector: u8, space: FeSpace, mesh: &Triangulation) -> Result<Field, OracleError> {
    Ok(Field::interpolate(space, mesh, initial_density_fn(selector)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{MeshLevel, QuadratureRule, SpaceKind};
    use proptest::prelude::*;

    fn mesh_integral(f: impl Fn(Point) -> f64, mesh: &Triangulation) -> f64 {
        let rule = QuadratureRule::of_order(4).unwrap();
        (0..mesh.triangle_count()).map(|t| rule.integrate(mesh, t, &f)).sum()
    }

    #[test]
    fn tc1_cost_values() {
        let p = Problem::testcase1(false);
        assert_eq!(p.forcing([0.25, 0.5]), 2.0);
        assert_eq!(p.forcing([0.75, 0.5]), -2.0);
        assert_eq!(p.forcing([0.5, 0.5]), 0.0);
        assert_eq!(p.exact_w1(), Some(0.125));
    }

    #[test]
    fn tc1_cost_density_profile() {
        let p = Problem::testcase1(false);
        let mu = |x: f64, y: f64| p.exact_density([x, y]).unwrap();
        assert!((mu(0.5, 0.5) - 0.5).abs() < 1e-14);
        assert!((mu(0.25, 0.4) - 0.25).abs() < 1e-14);
        assert!((mu(0.75, 0.6) - 0.25).abs() < 1e-14);
        assert_eq!(mu(0.5, 0.1), 0.0);
        assert_eq!(mu(0.5, 0.8), 0.0);
        assert!(mu(0.95, 0.5).abs() < 1e-14);
    }

    #[test]
    fn tc1_cont_w1_closed_form() {
        // ∫ of the ray profile: (1/π)(1/(8π) + 1/(4π) + 1/(8π)) = 1/(2π²)
        let w1 = Problem::testcase1(true).exact_w1().unwrap();
        assert!((w1 - 1.0 / (2.0 * PI * PI)).abs() < 1e-12, "{w1}");
    }

    #[test]
    fn tc1_balanced_on_aligned_grid() {
        let m = Triangulation::square_grid(16).unwrap();
        for cont in [false, true] {
            let p = Problem::testcase1(cont);
            assert!(mesh_integral(|x| p.forcing(x), &m).abs() < 1e-10);
        }
    }

    #[test]
    fn unbalanced_ray_refused() {
        let err = ray_integrate(|p| if p[0] < 0.5 { 1.0 } else { 0.0 }, [0.7, 0.5]);
        assert!(matches!(err, Err(OracleError::UnbalancedRay { .. })));
    }

    #[test]
    fn tc2_fixture_balanced_and_aligned() {
        let p = Problem::testcase2();
        let mesh = p.natural_mesh(0).unwrap();
        assert!(mesh_integral(|x| p.forcing(x), &mesh).abs() < 1e-10);
        assert!(mesh_integral(|x| p.source(x), &mesh) > 0.09);
        assert_eq!(p.source(tc2::CIRCLE_CENTER), 2.0);
        // every cell sees a single forcing value
        let rule = QuadratureRule::of_order(4).unwrap();
        for t in 0..mesh.triangle_count() {
            let [a, b, c] = mesh.vertices(t);
            let vals: Vec<f64> = rule
                .points
                .iter()
                .map(|(l, _)| p.forcing([l[0] * a[0] + l[1] * b[0] + l[2] * c[0], l[0] * a[1] + l[1] * b[1] + l[2] * c[1]]))
                .collect();
            assert!(vals.iter().all(|v| *v == vals[0]), "cell {t} straddles a support boundary");
        }
    }

    #[test]
    fn tc3_values_and_balance() {
        let p = Problem::testcase3();
        assert_eq!(p.source([0.5, 0.5]), 1.0);
        assert_eq!(p.source([0.5, 0.86]), 0.0);
        assert!((p.source([0.5, 0.84]) - 0.66).abs() < 1e-12);
        assert!(p.sink([0.125, 0.125]) > 0.0);
        // analytic balance: cone masses
        let plus = cone_mass(tc3::SOURCE_RADIUS);
        let minus = 4.0 * p.sink_scale() * cone_mass(tc3::SINK_RADIUS);
        assert!((plus - minus).abs() < 1e-15);
        // the grid is not aligned with the cones, so quadrature only balances approximately
        let m = Triangulation::square_grid(64).unwrap();
        assert!(mesh_integral(|x| p.forcing(x), &m).abs() < 0.01 * plus);
    }

    #[test]
    fn distance_to_sink() {
        let p = Problem::testcase1(false);
        assert_eq!(p.distance_to_sink([0.7, 0.5]), 0.0);
        assert!((p.distance_to_sink([0.5, 0.5]) - 0.125).abs() < 1e-15);
        let q = Problem::testcase3();
        assert!((q.distance_to_sink([0.5, 0.125]) - (0.375 - 0.1)).abs() < 1e-12);
        let r = Problem::testcase2();
        assert_eq!(r.distance_to_sink(tc2::ELLIPSE_CENTER), 0.0);
    }

    #[test]
    fn names_parse() {
        for k in ProblemKind::ALL {
            assert_eq!(Problem::by_name(k.name()).unwrap().kind(), k);
        }
        let msg = Problem::by_name("tc4").unwrap_err().to_string();
        assert!(msg.contains("tc1-cont") && msg.contains("tc3"));
    }

    #[test]
    fn initial_densities() {
        let m = Triangulation::square_grid(8).unwrap();
        let p1 = FeSpace::on(SpaceKind::P1, MeshLevel::Coarse, &m);
        assert!(initial_density(1, p1, &m).unwrap().coeffs.iter().all(|&v| v == 1.0));
        let center = 4 * 9 + 4;
        assert!((initial_density(2, p1, &m).unwrap().coeffs[center] - 0.1).abs() < 1e-15);
        let f3 = initial_density_fn(3).unwrap();
        assert!((f3([1.0 / 16.0, 3.0 / 16.0]) - 1.0).abs() < 1e-12);
        assert!(initial_density(4, p1, &m).is_err());
    }

    proptest! {
        #[test]
        fn ray_profile_derivative_is_forcing(x in 0.01f64..0.99, y in 0.26f64..0.74) {
            let p = Problem::testcase1(true);
            let d = 1e-5;
            let breaks = [0.125, 0.375, 0.625, 0.875];
            prop_assume!(breaks.iter().all(|b| (x - b).abs() > 2.0 * d));
            let fd = (p.exact_density([x + d, y]).unwrap() - p.exact_density([x - d, y]).unwrap()) / (2.0 * d);
            prop_assert!((fd - p.forcing([x, y])).abs() < 1e-6);
        }

        #[test]
        fn selector3_is_positive(x in 0.0f64..1.0, y in 0.0f64..1.0) {
            prop_assert!(initial_density_fn(3).unwrap()([x, y]) >= 1.0 - 1e-12);
        }
    }
}
