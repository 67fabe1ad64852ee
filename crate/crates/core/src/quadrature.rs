//! Numerical integration: triangle Gauss rules, the singular Newton potential
//! and boundary sums, including interior reconstruction from boundary traces.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{make_boundary_grid, signed_area, BoundaryGrid, Domain, Point2, TriMesh};
use crate::kernels::{Complex, KernelError, KernelSpec};

#[derive(Debug, Error)]
pub enum QuadratureError {
    #[error("degenerate triangle (|J| = {0:e})")]
    DegenerateTriangle(f64),
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("point {0:?} is not inside the domain")]
    OutsideDomain(Vec<f64>),
    #[error("invalid quadrature configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Symmetric quadrature rule on the reference triangle `(0,0), (1,0), (0,1)`.
///
/// Weights sum to 1/2, the reference area, so an integral over a physical
/// triangle is `|J| · Σ w f` with `|J|` twice its area.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleQuadratureRule {
    pub barycentric: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl TriangleQuadratureRule {
    /// The 7-point rule exact for total degree 5.
    pub fn seven_point() -> Self {
        let s15 = 15f64.sqrt();
        let a = (6.0 - s15) / 21.0;
        let b = (6.0 + s15) / 21.0;
        let wa = (155.0 - s15) / 2400.0;
        let wb = (155.0 + s15) / 2400.0;
        let third = 1.0 / 3.0;
        let barycentric = vec![
            [third, third, third],
            [1.0 - 2.0 * a, a, a],
            [a, 1.0 - 2.0 * a, a],
            [a, a, 1.0 - 2.0 * a],
            [1.0 - 2.0 * b, b, b],
            [b, 1.0 - 2.0 * b, b],
            [b, b, 1.0 - 2.0 * b],
        ];
        let weights = vec![9.0 / 80.0, wa, wa, wa, wb, wb, wb];
        Self { barycentric, weights }
    }

    /// Physical nodes and weights (`|J|·w`) for one triangle.
    pub fn map(&self, tri: [Point2; 3]) -> Result<Vec<(Point2, f64)>, QuadratureError> {
        let jac = 2.0 * signed_area(tri).abs();
        if jac < 1e-14 {
            return Err(QuadratureError::DegenerateTriangle(jac));
        }
        Ok(self.map_unchecked(tri, jac).collect())
    }

    fn map_unchecked(&self, tri: [Point2; 3], jac: f64) -> impl Iterator<Item = (Point2, f64)> + '_ {
        self.barycentric.iter().zip(&self.weights).map(move |(l, w)| {
            let p = [
                l[0] * tri[0][0] + l[1] * tri[1][0] + l[2] * tri[2][0],
                l[0] * tri[0][1] + l[1] * tri[1][1] + l[2] * tri[2][1],
            ];
            (p, jac * w)
        })
    }
}

fn seven_point() -> &'static TriangleQuadratureRule {
    static RULE: OnceLock<TriangleQuadratureRule> = OnceLock::new();
    RULE.get_or_init(TriangleQuadratureRule::seven_point)
}

pub fn integrate_triangle<F: Fn(Point2) -> f64>(f: F, tri: [Point2; 3]) -> Result<f64, QuadratureError> {
    Ok(seven_point().map(tri)?.into_iter().map(|(p, w)| w * f(p)).sum())
}

/// Sum of [`integrate_triangle`] in element order.
pub fn integrate_mesh<F: Fn(Point2) -> f64>(f: F, mesh: &TriMesh) -> Result<f64, QuadratureError> {
    (0..mesh.len()).try_fold(0.0, |acc, t| Ok(acc + integrate_triangle(&f, mesh.corners(t))?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularIntegralConfig {
    /// Radius of the disc around the evaluation point integrated in polar form.
    pub r0: f64,
    /// Angular samples for the clipped disc; a multiple of 4 keeps quarter
    /// and half discs exact at corners and edges.
    pub angles: usize,
    /// Near-field triangles are refined down to `r0 / min_size_divisor`.
    pub min_size_divisor: f64,
}

impl Default for SingularIntegralConfig {
    fn default() -> Self {
        Self {
            r0: 0.01,
            angles: 64,
            min_size_divisor: 32.0,
        }
    }
}

impl SingularIntegralConfig {
    fn validate(&self) -> Result<(), QuadratureError> {
        if !(self.r0 > 0.0 && self.r0.is_finite()) {
            return Err(QuadratureError::Config(format!("r0 must be positive, got {}", self.r0)));
        }
        if self.angles == 0 || !self.angles.is_multiple_of(4) {
            return Err(QuadratureError::Config(format!(
                "angle count must be a positive multiple of 4, got {}",
                self.angles
            )));
        }
        if !(self.min_size_divisor >= 1.0) {
            return Err(QuadratureError::Config("min_size_divisor must be at least 1".into()));
        }
        Ok(())
    }
}

/// Value of a Newton potential at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonValue {
    pub value: f64,
    /// The exclusion disc was clipped by the boundary.
    pub clipped: bool,
}

/// Evaluator for `∫_Ω G(x, y) f(y) dy` with the 2D Laplace kernel.
///
/// Far elements use the 7-point rule directly. Elements near `x` are split
/// recursively towards `x`; quadrature nodes closer than `r0` are dropped and
/// replaced by the polar integral of `G` over the part of the `r0`-disc that
/// lies inside the domain, with `f` frozen at `f(x)`.
pub struct NewtonPotential<'a> {
    mesh: &'a TriMesh,
    domain: &'a Domain,
    cfg: SingularIntegralConfig,
    nodes: Vec<(Point2, f64)>,
    centroids: Vec<Point2>,
    radii: Vec<f64>,
    diameters: Vec<f64>,
}

impl<'a> NewtonPotential<'a> {
    pub fn new(mesh: &'a TriMesh, domain: &'a Domain, cfg: SingularIntegralConfig) -> Result<Self, QuadratureError> {
        cfg.validate()?;
        let rule = seven_point();
        let mut nodes = Vec::with_capacity(7 * mesh.len());
        let mut centroids = Vec::with_capacity(mesh.len());
        let mut radii = Vec::with_capacity(mesh.len());
        let mut diameters = Vec::with_capacity(mesh.len());
        for t in 0..mesh.len() {
            let tri = mesh.corners(t);
            nodes.extend(rule.map(tri)?);
            let (c, r, d) = triangle_extent(tri);
            centroids.push(c);
            radii.push(r);
            diameters.push(d);
        }
        Ok(Self {
            mesh,
            domain,
            cfg,
            nodes,
            centroids,
            radii,
            diameters,
        })
    }

    pub fn config(&self) -> &SingularIntegralConfig {
        &self.cfg
    }

    fn is_near(&self, t: usize, x: Point2) -> bool {
        let d = dist(x, self.centroids[t]) - self.radii[t];
        d < 2.0 * self.diameters[t].max(self.cfg.r0)
    }

    /// `f_nodes` holds `f` at the precomputed far-field nodes, in mesh order.
    fn eval_with<F: Fn(Point2) -> f64>(&self, f: &F, f_nodes: &[f64], x: Point2) -> NewtonValue {
        let r0 = self.cfg.r0;
        let min_size = r0 / self.cfg.min_size_divisor;
        let mut sum = 0.0;
        for t in 0..self.mesh.len() {
            if self.is_near(t, x) {
                sum += self.near_triangle(f, self.mesh.corners(t), x, min_size);
            } else {
                for ((p, w), fq) in self.nodes[7 * t..7 * t + 7].iter().zip(&f_nodes[7 * t..7 * t + 7]) {
                    sum += w * log_kernel(dist(x, *p)) * fq;
                }
            }
        }
        let (disc, clipped) = self.disc_term(x);
        NewtonValue {
            value: sum + f(x) * disc,
            clipped,
        }
    }

    fn near_triangle<F: Fn(Point2) -> f64>(&self, f: &F, tri: [Point2; 3], x: Point2, min_size: f64) -> f64 {
        let r0 = self.cfg.r0;
        let (c, rad, diam) = triangle_extent(tri);
        let dc = dist(x, c);
        if dc + rad < r0 {
            return 0.0;
        }
        if dc - rad < 2.0 * diam && diam > min_size {
            let m = |a: Point2, b: Point2| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            let (m01, m12, m20) = (m(tri[0], tri[1]), m(tri[1], tri[2]), m(tri[2], tri[0]));
            return [
                [tri[0], m01, m20],
                [m01, tri[1], m12],
                [m20, m12, tri[2]],
                [m01, m12, m20],
            ]
            .into_iter()
            .map(|s| self.near_triangle(f, s, x, min_size))
            .sum();
        }
        let jac = 2.0 * signed_area(tri).abs();
        seven_point()
            .map_unchecked(tri, jac)
            .filter_map(|(p, w)| {
                let r = dist(x, p);
                (r >= r0).then(|| w * log_kernel(r) * f(p))
            })
            .sum()
    }

    /// `∫_{B(x, r0) ∩ Ω} G(x, y) dy` in polar coordinates, with the radial
    /// extent of each ray cut at the boundary.
    fn disc_term(&self, x: Point2) -> (f64, bool) {
        let r0 = self.cfg.r0;
        let m = self.cfg.angles;
        let dtheta = 2.0 * PI / m as f64;
        // ∫_0^ρ -(1/2π) r ln r dr
        let radial = |rho: f64| {
            if rho <= 0.0 {
                0.0
            } else {
                -(rho * rho * rho.ln() / 2.0 - rho * rho / 4.0) / (2.0 * PI)
            }
        };
        let inside = self.domain.contains(&x);
        if inside && self.domain.distance_to_boundary(&x) > r0 {
            return (2.0 * PI * radial(r0), false);
        }
        let mut total = 0.0;
        for i in 0..m {
            let theta = (i as f64 + 0.5) * dtheta;
            let dir = [theta.cos(), theta.sin()];
            total += dtheta * radial(self.ray_extent(x, dir));
        }
        (total, true)
    }

    /// Distance along `dir` from `x` to where the ray first leaves the domain, capped at r0.
    fn ray_extent(&self, x: Point2, dir: Point2) -> f64 {
        const SAMPLES: usize = 32;
        let r0 = self.cfg.r0;
        let at = |t: f64| [x[0] + t * dir[0], x[1] + t * dir[1]];
        let mut lo = 0.0;
        for j in 1..=SAMPLES {
            let t = r0 * j as f64 / SAMPLES as f64;
            if !self.domain.contains(&at(t)) {
                let mut hi = t;
                if j == 1 && !self.domain.contains(&at(0.5 * t)) && !self.domain.contains(&x) {
                    // Starting on or outside the boundary and heading out.
                    let mut probe = 0.5 * t;
                    while probe > 1e-12 * r0 && !self.domain.contains(&at(probe)) {
                        probe *= 0.5;
                    }
                    if probe <= 1e-12 * r0 {
                        return 0.0;
                    }
                }
                for _ in 0..50 {
                    let mid = 0.5 * (lo + hi);
                    if self.domain.contains(&at(mid)) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                return 0.5 * (lo + hi);
            }
            lo = t;
        }
        r0
    }

    pub fn eval<F: Fn(Point2) -> f64>(&self, f: F, x: Point2) -> NewtonValue {
        let f_nodes: Vec<f64> = self.nodes.iter().map(|(p, _)| f(*p)).collect();
        self.eval_with(&f, &f_nodes, x)
    }

    /// Evaluates at many points, in parallel, sharing the far-field samples of `f`.
    pub fn eval_many<F: Fn(Point2) -> f64 + Sync>(&self, f: F, points: &[Point2]) -> Vec<NewtonValue> {
        let f_nodes: Vec<f64> = self.nodes.iter().map(|(p, _)| f(*p)).collect();
        points.par_iter().map(|&x| self.eval_with(&f, &f_nodes, x)).collect()
    }
}

/// One-shot form of [`NewtonPotential::eval`].
pub fn newton_potential<F: Fn(Point2) -> f64>(
    f: F,
    mesh: &TriMesh,
    domain: &Domain,
    x: Point2,
    cfg: SingularIntegralConfig,
) -> Result<NewtonValue, QuadratureError> {
    Ok(NewtonPotential::new(mesh, domain, cfg)?.eval(f, x))
}

fn log_kernel(r: f64) -> f64 {
    -r.ln() / (2.0 * PI)
}

fn dist(a: Point2, b: Point2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Centroid, circumscribing radius about the centroid, and longest edge.
fn triangle_extent(tri: [Point2; 3]) -> (Point2, f64, f64) {
    let c = [
        (tri[0][0] + tri[1][0] + tri[2][0]) / 3.0,
        (tri[0][1] + tri[1][1] + tri[2][1]) / 3.0,
    ];
    let rad = tri.iter().map(|&v| dist(c, v)).fold(0.0, f64::max);
    let diam = (0..3).map(|e| dist(tri[e], tri[(e + 1) % 3])).fold(0.0, f64::max);
    (c, rad, diam)
}

/// `Σ values_i · weights_i` over a closed boundary.
pub fn boundary_integral<const D: usize>(values: &[f64], grid: &BoundaryGrid<D>) -> Result<f64, QuadratureError> {
    check_len(values.len(), grid.len())?;
    Ok(values.iter().zip(grid.weights()).map(|(v, w)| v * w).sum())
}

pub fn boundary_integral_complex<const D: usize>(
    values: &[Complex],
    grid: &BoundaryGrid<D>,
) -> Result<Complex, QuadratureError> {
    check_len(values.len(), grid.len())?;
    Ok(values
        .iter()
        .zip(grid.weights())
        .fold(Complex::ZERO, |acc, (v, w)| acc + v.scale(*w)))
}

fn check_len(got: usize, expected: usize) -> Result<(), QuadratureError> {
    if got == expected {
        Ok(())
    } else {
        Err(QuadratureError::LengthMismatch { expected, got })
    }
}

/// Global sign of the representation formula for the kernels in this crate.
///
/// Reconstructs `u ≡ 1` at the center of a finely sampled circle from the
/// double-layer term alone and rounds the result to ±1. All kernels here
/// share the same convention (`-ΔG = δ`, resp. `-(Δ + k²)G = δ`), so one
/// check covers them.
pub fn representation_sign() -> f64 {
    static SIGN: OnceLock<f64> = OnceLock::new();
    *SIGN.get_or_init(|| {
        let grid = make_boundary_grid(&Domain::unit_disk(), 256).expect("unit circle grid");
        let spec = KernelSpec::Laplace2d;
        let x = [0.0, 0.0];
        let total: f64 = grid
            .points()
            .iter()
            .zip(grid.normals())
            .zip(grid.weights())
            .map(|((y, n), w)| {
                let r = dist(x, *y);
                let dg = spec.radial(r).1.re;
                w * dg * ((y[0] - x[0]) * n[0] + (y[1] - x[1]) * n[1]) / r
            })
            .sum();
        total.round().signum()
    })
}

/// Interior value recovered from boundary traces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reconstruction {
    pub value: Complex,
    /// Closer to the boundary than twice the point spacing.
    pub near_boundary: bool,
}

/// `u(x) = σ ∫_∂Ω [g ∂G/∂n_y - G h] ds_y` with σ from [`representation_sign`].
///
/// Without a source term this is the full solution.
pub fn reconstruct_interior<const D: usize>(
    kernel: &KernelSpec,
    grid: &BoundaryGrid<D>,
    g: &[f64],
    h: &[f64],
    x: &[f64; D],
) -> Result<Reconstruction, QuadratureError> {
    check_len(g.len(), grid.len())?;
    check_len(h.len(), grid.len())?;
    if kernel.dim() != D {
        return Err(KernelError::DimensionMismatch {
            kernel: kernel.name(),
            expected: kernel.dim(),
            got: D,
        }
        .into());
    }
    if !grid.domain().contains(x) {
        return Err(QuadratureError::OutsideDomain(x.to_vec()));
    }
    let mut acc = Complex::ZERO;
    for i in 0..grid.len() {
        let y = &grid.points()[i];
        let n = &grid.normals()[i];
        let mut r2 = 0.0;
        let mut proj = 0.0;
        for a in 0..D {
            let d = y[a] - x[a];
            r2 += d * d;
            proj += d * n[a];
        }
        let r = r2.sqrt();
        if r == 0.0 {
            return Err(KernelError::Coincident.into());
        }
        let (gv, dg) = kernel.radial(r);
        acc += (dg.scale(g[i] * proj / r) - gv.scale(h[i])).scale(grid.weights()[i]);
    }
    let near_boundary = grid.domain().distance_to_boundary(x) < 2.0 * grid.spacing();
    Ok(Reconstruction {
        value: acc.scale(representation_sign()),
        near_boundary,
    })
}

/// Closed-form values of `∫∫_[0,1]² ln((x-a)² + (y-b)²)` used by the benchmark.
pub fn log_square_integral_reference(center: Point2) -> Option<f64> {
    let corner = 2f64.ln() - 3.0 + PI / 2.0;
    if center == [0.0, 0.0] {
        Some(corner)
    } else if center == [0.5, 0.5] {
        // Four quarter-size copies of the corner integral, rescaled.
        Some(corner - 4f64.ln())
    } else {
        None
    }
}

/// One row of the log-kernel quadrature benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadBenchRow {
    pub integrand: String,
    pub h: f64,
    pub computed: f64,
    pub reference: f64,
    pub rel_error: f64,
}

impl QuadBenchRow {
    pub const CSV_HEADER: &'static str = "integrand,h,computed,reference,rel_error";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.integrand, self.h, self.computed, self.reference, self.rel_error
        )
    }
}

/// The benchmark integrands, keyed by name, with their singular point.
pub const BENCH_INTEGRANDS: [(&str, Point2); 2] = [("ln(x2+y2)", [0.0, 0.0]), ("ln((x-0.5)2+(y-0.5)2)", [0.5, 0.5])];

/// `∫∫_[0,1]² ln|y - c|²` via the Newton potential on a structured mesh of size `h`.
pub fn log_square_benchmark(
    integrand: &str,
    h: f64,
    cfg: SingularIntegralConfig,
) -> Result<QuadBenchRow, QuadratureError> {
    let center = BENCH_INTEGRANDS
        .iter()
        .find(|(name, _)| *name == integrand)
        .map(|(_, c)| *c)
        .ok_or_else(|| QuadratureError::Config(format!("unknown benchmark integrand `{integrand}`")))?;
    let mesh = crate::geometry::triangulate_square(h).map_err(|e| QuadratureError::Config(e.to_string()))?;
    let domain = Domain::UnitSquare;
    let potential = newton_potential(|_| 1.0, &mesh, &domain, center, cfg)?;
    // ln r² = -4π G
    let computed = -4.0 * PI * potential.value;
    let reference = log_square_integral_reference(center).expect("benchmark center has a closed form");
    Ok(QuadBenchRow {
        integrand: integrand.to_string(),
        h,
        computed,
        reference,
        rel_error: ((computed - reference) / reference).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::triangulate_square;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
    fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
                let mut dp = 0.0;
                for _ in 0..100 {
                    let (mut p0, mut p1) = (1.0, x);
                    for k in 2..=n {
                        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                        p0 = p1;
                        p1 = p2;
                    }
                    dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                    let dx = p1 / dp;
                    x -= dx;
                    if dx.abs() < 1e-16 {
                        break;
                    }
                }
                (x, 2.0 / ((1.0 - x * x) * dp * dp))
            })
            .collect()
    }

    /// `∫∫_[0,1]² ln|y - c|² dy` split into triangles with apex `c`; the radial
    /// integral is analytic and the angular one uses Gauss-Legendre.
    fn polar_split_oracle(c: Point2) -> f64 {
        let gl = gauss_legendre(64);
        let corners = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let mut total = 0.0;
        for e in 0..4 {
            let (a, b) = (corners[e], corners[(e + 1) % 4]);
            // Edge line in polar coordinates about c: distance d along normal.
            let t = [b[0] - a[0], b[1] - a[1]];
            let n = [t[1], -t[0]];
            let d = (a[0] - c[0]) * n[0] + (a[1] - c[1]) * n[1];
            if d.abs() < 1e-15 {
                continue;
            }
            let th_a = (a[1] - c[1]).atan2(a[0] - c[0]);
            let mut th_b = (b[1] - c[1]).atan2(b[0] - c[0]);
            while th_b < th_a {
                th_b += 2.0 * PI;
            }
            let phi = n[1].atan2(n[0]);
            // ∫_0^R 2 ln(ρ) ρ dρ = R² ln R - R²/2
            let inner = |th: f64| {
                let rr = d / (th - phi).cos();
                rr * rr * rr.ln() - rr * rr / 2.0
            };
            let (mid, half) = (0.5 * (th_a + th_b), 0.5 * (th_b - th_a));
            total += half * gl.iter().map(|(x, w)| w * inner(mid + half * x)).sum::<f64>();
        }
        total
    }

    #[test]
    fn rule_weights_sum_to_half() {
        let r = TriangleQuadratureRule::seven_point();
        assert!((r.weights.iter().sum::<f64>() - 0.5).abs() < 1e-15);
        for l in &r.barycentric {
            assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    fn monomial_on_reference(a: i32, b: i32) -> f64 {
        // ∫_T x^a y^b = a! b! / (a + b + 2)!
        let fact = |n: i32| (1..=n).map(f64::from).product::<f64>();
        fact(a) * fact(b) / fact(a + b + 2)
    }

    #[test]
    fn reference_triangle_monomials() {
        let tri = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        assert!((integrate_triangle(|_| 1.0, tri).unwrap() - 0.5).abs() < 1e-15);
        assert!((integrate_triangle(|p| p[0], tri).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!((integrate_triangle(|p| p[0].powi(5), tri).unwrap() - 1.0 / 42.0).abs() < 1e-14);
        for a in 0..=5 {
            for b in 0..=5 - a {
                let got = integrate_triangle(|p| p[0].powi(a) * p[1].powi(b), tri).unwrap();
                assert!((got - monomial_on_reference(a, b)).abs() < 1e-15, "x^{a} y^{b}");
            }
        }
        // Degree 6 is not exact.
        let got = integrate_triangle(|p| p[0].powi(6), tri).unwrap();
        assert!((got - monomial_on_reference(6, 0)).abs() > 1e-8);
    }

    #[test]
    fn degenerate_triangle_is_rejected() {
        let tri = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        assert!(matches!(
            integrate_triangle(|_| 1.0, tri),
            Err(QuadratureError::DegenerateTriangle(_))
        ));
    }

    #[test]
    fn mesh_integrals() {
        let m = triangulate_square(0.1).unwrap();
        assert!((integrate_mesh(|_| 1.0, &m).unwrap() - 1.0).abs() < 1e-12);
        assert!((integrate_mesh(|p| p[0] + p[1], &m).unwrap() - 1.0).abs() < 1e-12);
        let m = triangulate_square(0.02).unwrap();
        let want = (1.0 - 1f64.cos()).powi(2);
        assert!((integrate_mesh(|p| p[0].sin() * p[1].sin(), &m).unwrap() - want).abs() < 1e-8);
    }

    #[test]
    fn oracle_reproduces_closed_forms() {
        let corner = polar_split_oracle([0.0, 0.0]);
        let center = polar_split_oracle([0.5, 0.5]);
        assert!((corner - log_square_integral_reference([0.0, 0.0]).unwrap()).abs() < 1e-12);
        assert!((center - log_square_integral_reference([0.5, 0.5]).unwrap()).abs() < 1e-12);
        // An off-center point, checked against a brute-force midpoint sum.
        let c = [0.3, 0.7];
        let m = 2000;
        let hh = 1.0 / m as f64;
        let mut brute = 0.0;
        for i in 0..m {
            for j in 0..m {
                let (x, y) = ((i as f64 + 0.5) * hh - c[0], (j as f64 + 0.5) * hh - c[1]);
                brute += (x * x + y * y).ln() * hh * hh;
            }
        }
        assert!((polar_split_oracle(c) - brute).abs() < 1e-5);
    }

    #[test]
    fn benchmark_accuracy() {
        let cfg = SingularIntegralConfig::default();
        for (name, c) in BENCH_INTEGRANDS {
            let reference = polar_split_oracle(c);
            for h in [0.02, 0.01] {
                let row = log_square_benchmark(name, h, cfg).unwrap();
                let err = ((row.computed - reference) / reference).abs();
                assert!(err < 4e-4, "{name} h={h}: {err:e}");
            }
        }
    }

    #[test]
    fn refinement_decreases_error() {
        let c = [0.5, 0.5];
        let reference = polar_split_oracle(c);
        let errs: Vec<f64> = [0.1, 0.05, 0.02]
            .iter()
            .map(|&h| {
                let row = log_square_benchmark(BENCH_INTEGRANDS[1].0, h, SingularIntegralConfig::default()).unwrap();
                (row.computed - reference).abs()
            })
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }

    #[test]
    fn zero_source_gives_zero() {
        let m = triangulate_square(0.1).unwrap();
        let v = newton_potential(
            |_| 0.0,
            &m,
            &Domain::UnitSquare,
            [0.4, 0.4],
            SingularIntegralConfig::default(),
        )
        .unwrap();
        assert_eq!(v.value, 0.0);
    }

    #[test]
    fn random_triangle_exactness() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let tri: [Point2; 3] = std::array::from_fn(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
            if signed_area(tri).abs() < 1e-3 {
                continue;
            }
            // Exact integral of a quintic via its value on the reference triangle after mapping.
            let f = |p: Point2| 1.0 + p[0] - 2.0 * p[1] * p[1] + p[0].powi(3) * p[1] + p[1].powi(5);
            let jac = 2.0 * signed_area(tri).abs();
            let pull = |u: f64, v: f64| {
                [
                    tri[0][0] + (tri[1][0] - tri[0][0]) * u + (tri[2][0] - tri[0][0]) * v,
                    tri[0][1] + (tri[1][1] - tri[0][1]) * u + (tri[2][1] - tri[0][1]) * v,
                ]
            };
            // Reference: a fine conical product rule of high order.
            let gl = gauss_legendre(12);
            let mut want = 0.0;
            for &(s, ws) in &gl {
                let u = 0.5 * (s + 1.0);
                for &(t, wt) in &gl {
                    let v = 0.5 * (t + 1.0) * (1.0 - u);
                    want += 0.25 * ws * wt * (1.0 - u) * f(pull(u, v));
                }
            }
            want *= jac;
            let got = integrate_triangle(f, tri).unwrap();
            assert!((got - want).abs() < 1e-12 * want.abs().max(1.0), "{got} vs {want}");
        }
    }

    #[test]
    fn boundary_sums() {
        let sq = make_boundary_grid(&Domain::UnitSquare, 400).unwrap();
        assert!((boundary_integral(&vec![1.0; 400], &sq).unwrap() - 4.0).abs() < 1e-12);
        let circle = make_boundary_grid(&Domain::unit_disk(), 400).unwrap();
        assert!((boundary_integral(&vec![1.0; 400], &circle).unwrap() - 2.0 * PI).abs() < 1e-6);
        let cos: Vec<f64> = circle.points().iter().map(|p| p[0]).collect();
        assert!(boundary_integral(&cos, &circle).unwrap().abs() < 1e-10);
        assert!(boundary_integral(&[1.0; 3], &circle).is_err());
    }

    #[test]
    fn sign_self_check() {
        assert_eq!(representation_sign(), -1.0);
    }

    #[test]
    fn reconstruct_constant_and_linear() {
        let grid = make_boundary_grid(&Domain::UnitSquare, 400).unwrap();
        let spec = KernelSpec::Laplace2d;
        let one = reconstruct_interior(&spec, &grid, &vec![1.0; 400], &vec![0.0; 400], &[0.5, 0.5]).unwrap();
        // Midpoint sums on each edge carry an O(h²) end error of about 4e-5 here.
        assert!((one.value.re - 1.0).abs() < 1e-4, "{:?}", one.value);
        let dense = make_boundary_grid(&Domain::UnitSquare, 10_000).unwrap();
        let one = reconstruct_interior(&spec, &dense, &vec![1.0; 10_000], &vec![0.0; 10_000], &[0.5, 0.5]).unwrap();
        assert!((one.value.re - 1.0).abs() < 1e-6, "{:?}", one.value);
        let g: Vec<f64> = grid.points().iter().map(|p| p[0] + p[1]).collect();
        let h: Vec<f64> = grid.normals().iter().map(|n| n[0] + n[1]).collect();
        let lin = reconstruct_interior(&spec, &grid, &g, &h, &[0.5, 0.5]).unwrap();
        assert!((lin.value.re - 1.0).abs() < 1e-4);
        assert!(!lin.near_boundary);
        assert!(
            reconstruct_interior(&spec, &grid, &g, &h, &[0.5, 0.01])
                .unwrap()
                .near_boundary
        );
        assert!(matches!(
            reconstruct_interior(&spec, &grid, &g, &h, &[1.5, 0.5]),
            Err(QuadratureError::OutsideDomain(_))
        ));
    }

    #[test]
    fn helmholtz_reconstruction_is_real() {
        let grid = make_boundary_grid(&Domain::UnitSquare, 400).unwrap();
        for k in [1.0, 10.0] {
            let a = k / 2f64.sqrt();
            let spec = KernelSpec::Helmholtz2d { k };
            let g: Vec<f64> = grid
                .points()
                .iter()
                .map(|p| (a * p[0]).sin() * (a * p[1]).sin())
                .collect();
            let h: Vec<f64> = grid
                .points()
                .iter()
                .zip(grid.normals())
                .map(|(p, n)| {
                    a * (a * p[0]).cos() * (a * p[1]).sin() * n[0] + a * (a * p[0]).sin() * (a * p[1]).cos() * n[1]
                })
                .collect();
            let x = [0.3, 0.6];
            let u = reconstruct_interior(&spec, &grid, &g, &h, &x).unwrap();
            let exact = (a * x[0]).sin() * (a * x[1]).sin();
            assert!(u.value.im.abs() < 1e-3 * u.value.abs(), "k={k}: {:?}", u.value);
            assert!(
                (u.value.re - exact).abs() < 1e-3 * exact.abs(),
                "k={k}: {} vs {exact}",
                u.value.re
            );
        }
    }
}
