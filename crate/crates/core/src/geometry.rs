//! Computational domains, boundary collocation grids and triangle meshes.
//!
//! Boundary grids carry everything the boundary integrals need: the
//! collocation points, outward unit normals and arc-length (or surface)
//! quadrature weights. Traversal is counterclockwise starting at the
//! parameterization origin, so for the unit square the first point sits on
//! the bottom edge next to `(0, 0)`.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point2 = [f64; 2];
pub type Point3 = [f64; 3];

/// Samples used when a property of a polar curve has to be checked densely.
const DENSE_SAMPLES: usize = 4096;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("a boundary grid needs at least {min} points, got {got}")]
    TooFewPoints { min: usize, got: usize },
    #[error("element size must lie in (0, 1), got {0}")]
    ElementSize(f64),
    #[error("msh parse error at line {line}: {msg}")]
    Msh { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One Fourier mode `cos·cos(jθ) + sin·sin(jθ)` of a polar radius function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierTerm {
    pub harmonic: u32,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

impl FourierTerm {
    pub fn sin(harmonic: u32, amplitude: f64) -> Self {
        Self {
            harmonic,
            cos: 0.0,
            sin: amplitude,
        }
    }

    pub fn cos(harmonic: u32, amplitude: f64) -> Self {
        Self {
            harmonic,
            cos: amplitude,
            sin: 0.0,
        }
    }
}

/// Closed star-shaped curve `c + r(θ)(cos θ, sin θ)` with a trigonometric radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarCurve {
    #[serde(default)]
    pub center: Point2,
    pub mean: f64,
    #[serde(default)]
    pub terms: Vec<FourierTerm>,
}

impl PolarCurve {
    pub fn new(mean: f64, terms: Vec<FourierTerm>) -> Self {
        Self {
            center: [0.0, 0.0],
            mean,
            terms,
        }
    }

    pub fn circle(center: Point2, radius: f64) -> Self {
        Self {
            center,
            mean: radius,
            terms: Vec::new(),
        }
    }

    pub fn with_center(mut self, center: Point2) -> Self {
        self.center = center;
        self
    }

    pub fn radius(&self, theta: f64) -> f64 {
        self.terms.iter().fold(self.mean, |acc, t| {
            let j = f64::from(t.harmonic);
            acc + t.cos * (j * theta).cos() + t.sin * (j * theta).sin()
        })
    }

    pub fn radius_derivative(&self, theta: f64) -> f64 {
        self.terms.iter().fold(0.0, |acc, t| {
            let j = f64::from(t.harmonic);
            acc + j * (t.sin * (j * theta).cos() - t.cos * (j * theta).sin())
        })
    }

    pub fn point(&self, theta: f64) -> Point2 {
        let r = self.radius(theta);
        [self.center[0] + r * theta.cos(), self.center[1] + r * theta.sin()]
    }

    /// Derivative of [`PolarCurve::point`] with respect to θ.
    pub fn tangent(&self, theta: f64) -> Point2 {
        let r = self.radius(theta);
        let dr = self.radius_derivative(theta);
        let (s, c) = theta.sin_cos();
        [dr * c - r * s, dr * s + r * c]
    }

    /// Curve length; the periodic trapezoid rule is spectrally accurate here.
    pub fn length(&self) -> f64 {
        let dt = 2.0 * PI / DENSE_SAMPLES as f64;
        (0..DENSE_SAMPLES)
            .map(|i| norm2(self.tangent(i as f64 * dt)))
            .sum::<f64>()
            * dt
    }

    fn min_radius(&self) -> f64 {
        let dt = 2.0 * PI / DENSE_SAMPLES as f64;
        (0..DENSE_SAMPLES)
            .map(|i| self.radius(i as f64 * dt))
            .fold(f64::INFINITY, f64::min)
    }

    fn contains(&self, p: Point2) -> bool {
        let d = [p[0] - self.center[0], p[1] - self.center[1]];
        norm2(d) < self.radius(d[1].atan2(d[0]))
    }

    fn distance(&self, p: Point2) -> f64 {
        let dt = 2.0 * PI / DENSE_SAMPLES as f64;
        let dist_at = |t: f64| norm2(sub2(self.point(t), p));
        let (best, _) = (0..DENSE_SAMPLES)
            .map(|i| i as f64 * dt)
            .map(|t| (t, dist_at(t)))
            .fold((0.0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        // Golden-section refinement inside the bracketing samples.
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (best - dt, best + dt);
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        for _ in 0..60 {
            if dist_at(c) < dist_at(d) {
                b = d;
            } else {
                a = c;
            }
            c = b - g * (b - a);
            d = a + g * (b - a);
        }
        dist_at(0.5 * (a + b))
    }

    fn validate(&self) -> Result<(), GeometryError> {
        if !(self.mean.is_finite() && self.center.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::InvalidDomain("non-finite polar curve".into()));
        }
        let rmin = self.min_radius();
        if rmin <= 0.0 {
            return Err(GeometryError::InvalidDomain(format!(
                "polar radius must stay positive, minimum is {rmin}"
            )));
        }
        Ok(())
    }
}

/// Computational domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Domain {
    UnitSquare,
    PolarCurve(PolarCurve),
    /// Region between an outer and an inner polar curve.
    MultiLoop {
        outer: PolarCurve,
        inner: PolarCurve,
    },
    Sphere {
        center: Point3,
        radius: f64,
    },
}

impl Domain {
    pub fn unit_disk() -> Self {
        Domain::PolarCurve(PolarCurve::circle([0.0, 0.0], 1.0))
    }

    pub fn unit_sphere() -> Self {
        Domain::Sphere {
            center: [0.0; 3],
            radius: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Sphere { .. } => 3,
            _ => 2,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        match self {
            Domain::UnitSquare => Ok(()),
            Domain::PolarCurve(c) => c.validate(),
            Domain::MultiLoop { outer, inner } => {
                outer.validate()?;
                inner.validate()?;
                let dt = 2.0 * PI / DENSE_SAMPLES as f64;
                let nested = (0..DENSE_SAMPLES).all(|i| outer.contains(inner.point(i as f64 * dt)));
                if nested && outer.contains(inner.center) {
                    Ok(())
                } else {
                    Err(GeometryError::InvalidDomain(
                        "inner loop must lie strictly inside the outer loop".into(),
                    ))
                }
            }
            Domain::Sphere { center, radius } => {
                if *radius > 0.0 && radius.is_finite() && center.iter().all(|c| c.is_finite()) {
                    Ok(())
                } else {
                    Err(GeometryError::InvalidDomain(format!("sphere radius {radius}")))
                }
            }
        }
    }

    /// Strict interior test. `p` must have `self.dim()` coordinates.
    pub fn contains(&self, p: &[f64]) -> bool {
        match self {
            Domain::UnitSquare => p[0] > 0.0 && p[0] < 1.0 && p[1] > 0.0 && p[1] < 1.0,
            Domain::PolarCurve(c) => c.contains([p[0], p[1]]),
            Domain::MultiLoop { outer, inner } => {
                let q = [p[0], p[1]];
                outer.contains(q) && !inner.contains(q) && inner.distance(q) > 0.0
            }
            Domain::Sphere { center, radius } => {
                let d: f64 = (0..3).map(|i| (p[i] - center[i]).powi(2)).sum();
                d.sqrt() < *radius
            }
        }
    }

    /// Euclidean distance from `p` to the boundary, for points on either side.
    pub fn distance_to_boundary(&self, p: &[f64]) -> f64 {
        match self {
            Domain::UnitSquare => {
                let (x, y) = (p[0], p[1]);
                if self.contains(p) {
                    x.min(1.0 - x).min(y).min(1.0 - y)
                } else {
                    let dx = (-x).max(x - 1.0).max(0.0);
                    let dy = (-y).max(y - 1.0).max(0.0);
                    if dx == 0.0 && dy == 0.0 {
                        // On the boundary itself.
                        0.0
                    } else {
                        dx.hypot(dy)
                    }
                }
            }
            Domain::PolarCurve(c) => c.distance([p[0], p[1]]),
            Domain::MultiLoop { outer, inner } => {
                let q = [p[0], p[1]];
                outer.distance(q).min(inner.distance(q))
            }
            Domain::Sphere { center, radius } => {
                let d: f64 = (0..3).map(|i| (p[i] - center[i]).powi(2)).sum();
                (d.sqrt() - radius).abs()
            }
        }
    }

    /// Axis-aligned bounding box as `(lower, upper)` per axis.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        let polar_bounds = |c: &PolarCurve| {
            let dt = 2.0 * PI / DENSE_SAMPLES as f64;
            let mut b = vec![(f64::INFINITY, f64::NEG_INFINITY); 2];
            for i in 0..DENSE_SAMPLES {
                let p = c.point(i as f64 * dt);
                for a in 0..2 {
                    b[a].0 = b[a].0.min(p[a]);
                    b[a].1 = b[a].1.max(p[a]);
                }
            }
            b
        };
        match self {
            Domain::UnitSquare => vec![(0.0, 1.0), (0.0, 1.0)],
            Domain::PolarCurve(c) => polar_bounds(c),
            Domain::MultiLoop { outer, .. } => polar_bounds(outer),
            Domain::Sphere { center, radius } => center.iter().map(|c| (c - radius, c + radius)).collect(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Domain::UnitSquare => "unit_square",
            Domain::PolarCurve(_) => "polar_curve",
            Domain::MultiLoop { .. } => "multi_loop",
            Domain::Sphere { .. } => "sphere3d",
        }
    }
}

/// Discretized closed boundary in `D` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryGrid<const D: usize = 2> {
    domain: Domain,
    points: Vec<[f64; D]>,
    normals: Vec<[f64; D]>,
    weights: Vec<f64>,
    segments: Vec<u8>,
}

impl<const D: usize> BoundaryGrid<D> {
    /// Builds the grid matching `D`: curves for 2D domains, a surface lattice for spheres.
    pub fn for_domain(domain: &Domain, n: usize) -> Result<Self, GeometryError> {
        if domain.dim() != D {
            return Err(GeometryError::InvalidDomain(format!(
                "{} is {}-dimensional, requested a {D}-dimensional grid",
                domain.name(),
                domain.dim()
            )));
        }
        match domain {
            Domain::Sphere { .. } => Ok(make_surface_grid(domain, n)?.recast()),
            _ => Ok(make_boundary_grid(domain, n)?.recast()),
        }
    }

    fn recast<const E: usize>(self) -> BoundaryGrid<E> {
        assert_eq!(D, E);
        let cast =
            |v: Vec<[f64; D]>| -> Vec<[f64; E]> { v.into_iter().map(|p| std::array::from_fn(|i| p[i])).collect() };
        BoundaryGrid {
            domain: self.domain,
            points: cast(self.points),
            normals: cast(self.normals),
            weights: self.weights,
            segments: self.segments,
        }
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn points(&self) -> &[[f64; D]] {
        &self.points
    }

    pub fn normals(&self) -> &[[f64; D]] {
        &self.normals
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn segments(&self) -> &[u8] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Total boundary measure (length in 2D, area in 3D).
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Characteristic point spacing, derived from the smallest quadrature weight.
    pub fn spacing(&self) -> f64 {
        let wmin = self.weights.iter().copied().fold(f64::INFINITY, f64::min);
        wmin.powf(1.0 / (D as f64 - 1.0))
    }

    /// Indices of the points carrying segment label `segment`, in grid order.
    pub fn segment_indices(&self, segment: u8) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.segments[i] == segment).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), GeometryError> {
        let axes = ["x", "y", "z"];
        let mut header: Vec<String> = axes[..D].iter().map(|a| a.to_string()).collect();
        header.extend(axes[..D].iter().map(|a| format!("n{a}")));
        header.push("weight".into());
        header.push("segment".into());
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut fields: Vec<String> = self.points[i].iter().map(|v| v.to_string()).collect();
            fields.extend(self.normals[i].iter().map(|v| v.to_string()));
            fields.push(self.weights[i].to_string());
            fields.push(self.segments[i].to_string());
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// Collocation grid on a planar boundary.
///
/// Square edges get cell-centered points so no point sits on a corner.
/// Polar curves are sampled uniformly in θ with weights `Δθ·|dp/dθ|`; the two
/// loops of a multi-loop domain share the `n` points in proportion to length.
pub fn make_boundary_grid(domain: &Domain, n: usize) -> Result<BoundaryGrid<2>, GeometryError> {
    const MIN_POINTS: usize = 8;
    if n < MIN_POINTS {
        return Err(GeometryError::TooFewPoints {
            min: MIN_POINTS,
            got: n,
        });
    }
    domain.validate()?;
    let mut grid = BoundaryGrid {
        domain: domain.clone(),
        points: Vec::with_capacity(n),
        normals: Vec::with_capacity(n),
        weights: Vec::with_capacity(n),
        segments: Vec::with_capacity(n),
    };
    match domain {
        Domain::UnitSquare => {
            let starts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
            let dirs = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
            for edge in 0..4 {
                let m = n / 4 + usize::from(edge < n % 4);
                let step = 1.0 / m as f64;
                let [sx, sy] = starts[edge];
                let [dx, dy] = dirs[edge];
                for i in 0..m {
                    let t = (i as f64 + 0.5) * step;
                    grid.points.push([sx + dx * t, sy + dy * t]);
                    grid.normals.push([dy, -dx]);
                    grid.weights.push(step);
                    grid.segments.push(edge as u8);
                }
            }
        }
        Domain::PolarCurve(c) => push_polar_loop(&mut grid, c, n, false, 0)?,
        Domain::MultiLoop { outer, inner } => {
            let (lo, li) = (outer.length(), inner.length());
            let n_outer = ((n as f64 * lo / (lo + li)).round() as usize).clamp(4, n - 4);
            push_polar_loop(&mut grid, outer, n_outer, false, 0)?;
            push_polar_loop(&mut grid, inner, n - n_outer, true, 1)?;
        }
        Domain::Sphere { .. } => {
            return Err(GeometryError::InvalidDomain(
                "a sphere needs a surface grid, not a curve grid".into(),
            ))
        }
    }
    Ok(grid)
}

fn push_polar_loop(
    grid: &mut BoundaryGrid<2>,
    curve: &PolarCurve,
    n: usize,
    hole: bool,
    segment: u8,
) -> Result<(), GeometryError> {
    let dt = 2.0 * PI / n as f64;
    for i in 0..n {
        let theta = i as f64 * dt;
        let r = curve.radius(theta);
        if r <= 0.0 {
            return Err(GeometryError::InvalidDomain(format!(
                "polar radius {r} at theta = {theta}"
            )));
        }
        let t = curve.tangent(theta);
        let speed = norm2(t);
        // Outward for a counterclockwise curve; flipped when the curve bounds a hole.
        let sign = if hole { -1.0 } else { 1.0 };
        grid.points.push(curve.point(theta));
        grid.normals.push([sign * t[1] / speed, -sign * t[0] / speed]);
        grid.weights.push(dt * speed);
        grid.segments.push(segment);
    }
    Ok(())
}

/// Fibonacci-lattice sampling of a sphere with equal area weights.
pub fn make_surface_grid(domain: &Domain, n: usize) -> Result<BoundaryGrid<3>, GeometryError> {
    const MIN_POINTS: usize = 8;
    let Domain::Sphere { center, radius } = domain else {
        return Err(GeometryError::InvalidDomain(format!(
            "surface grids need a sphere, got {}",
            domain.name()
        )));
    };
    if n < MIN_POINTS {
        return Err(GeometryError::TooFewPoints {
            min: MIN_POINTS,
            got: n,
        });
    }
    domain.validate()?;
    let golden_angle = PI * (3.0 - 5f64.sqrt());
    let weight = 4.0 * PI * radius * radius / n as f64;
    let mut grid = BoundaryGrid {
        domain: domain.clone(),
        points: Vec::with_capacity(n),
        normals: Vec::with_capacity(n),
        weights: vec![weight; n],
        segments: vec![0; n],
    };
    for i in 0..n {
        let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
        let rho = (1.0 - z * z).sqrt();
        let phi = i as f64 * golden_angle;
        let unit = [rho * phi.cos(), rho * phi.sin(), z];
        grid.points.push(std::array::from_fn(|a| center[a] + radius * unit[a]));
        grid.normals.push(unit);
    }
    Ok(grid)
}

/// Triangulation of a planar domain.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Point2>,
    pub triangles: Vec<[usize; 3]>,
    /// Nominal element size.
    pub target_h: f64,
}

impl TriMesh {
    pub fn corners(&self, t: usize) -> [Point2; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        signed_area(self.corners(t))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.signed_area(t).abs()).sum()
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// One record per triangle: its vertex indices followed by the coordinates.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), GeometryError> {
        writeln!(w, "triangle,i0,i1,i2,x0,y0,x1,y1,x2,y2")?;
        for (t, tri) in self.triangles.iter().enumerate() {
            let [p, q, r] = self.corners(t);
            writeln!(
                w,
                "{t},{},{},{},{},{},{},{},{},{}",
                tri[0], tri[1], tri[2], p[0], p[1], q[0], q[1], r[0], r[1]
            )?;
        }
        Ok(())
    }

    /// MSH 2.2 ASCII with 1-based node tags and 3-node triangle elements.
    pub fn to_msh(&self) -> String {
        let mut s = String::from("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n");
        s.push_str(&format!("{}\n", self.vertices.len()));
        for (i, v) in self.vertices.iter().enumerate() {
            s.push_str(&format!("{} {} {} 0\n", i + 1, v[0], v[1]));
        }
        s.push_str("$EndNodes\n$Elements\n");
        s.push_str(&format!("{}\n", self.triangles.len()));
        for (i, t) in self.triangles.iter().enumerate() {
            s.push_str(&format!("{} 2 2 0 1 {} {} {}\n", i + 1, t[0] + 1, t[1] + 1, t[2] + 1));
        }
        s.push_str("$EndElements\n");
        s
    }
}

pub fn signed_area(v: [Point2; 3]) -> f64 {
    0.5 * ((v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]))
}

/// Structured triangulation of `[0, 1]²` with `ceil(1/h)` cells per side.
pub fn triangulate_square(h: f64) -> Result<TriMesh, GeometryError> {
    if !(h > 0.0 && h < 1.0) {
        return Err(GeometryError::ElementSize(h));
    }
    let m = ((1.0 / h) - 1e-9).ceil() as usize;
    let step = 1.0 / m as f64;
    let vertices = (0..=m)
        .flat_map(|j| (0..=m).map(move |i| [i as f64 * step, j as f64 * step]))
        .collect();
    let idx = |i: usize, j: usize| j * (m + 1) + i;
    let mut triangles = Vec::with_capacity(2 * m * m);
    for j in 0..m {
        for i in 0..m {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    Ok(TriMesh {
        vertices,
        triangles,
        target_h: step,
    })
}

/// Reads the triangles of an MSH 2.x ASCII file.
///
/// Node tags are remapped to dense 0-based indices in declaration order,
/// elements other than 3-node triangles are skipped, and every triangle is
/// reoriented to positive signed area.
pub fn parse_msh(text: &str) -> Result<TriMesh, GeometryError> {
    let err = |line: usize, msg: String| GeometryError::Msh { line, msg };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut vertices: Vec<Point2> = Vec::new();
    let mut tag_to_index = std::collections::HashMap::new();
    let mut triangles = Vec::new();
    let mut seen_nodes = false;
    let mut seen_elements = false;

    fn field<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T, GeometryError> {
        let tok = tok.ok_or_else(|| GeometryError::Msh {
            line,
            msg: format!("missing {what}"),
        })?;
        tok.parse().map_err(|_| GeometryError::Msh {
            line,
            msg: format!("expected {what}, found `{tok}`"),
        })
    }

    while let Some((ln, line)) = lines.next() {
        if line.is_empty() {
            continue;
        }
        match line {
            "$MeshFormat" => {
                let (fl, fmt) = lines.next().ok_or_else(|| err(ln, "truncated $MeshFormat".into()))?;
                let mut toks = fmt.split_whitespace();
                let version: f64 = field(toks.next(), fl, "format version")?;
                let file_type: u32 = field(toks.next(), fl, "file type")?;
                if !(2.0..3.0).contains(&version) || file_type != 0 {
                    return Err(err(
                        fl,
                        format!("only ASCII MSH 2.x is supported (got {version} type {file_type})"),
                    ));
                }
                expect_end(&mut lines, "$EndMeshFormat")?;
            }
            "$Nodes" => {
                let (cl, count) = lines.next().ok_or_else(|| err(ln, "truncated $Nodes".into()))?;
                let count: usize = field(Some(count), cl, "node count")?;
                for _ in 0..count {
                    let (nl, node) = lines.next().ok_or_else(|| err(cl, "truncated node list".into()))?;
                    let mut toks = node.split_whitespace();
                    let tag: usize = field(toks.next(), nl, "node tag")?;
                    let x: f64 = field(toks.next(), nl, "x coordinate")?;
                    let y: f64 = field(toks.next(), nl, "y coordinate")?;
                    let _z: f64 = field(toks.next(), nl, "z coordinate")?;
                    tag_to_index.insert(tag, vertices.len());
                    vertices.push([x, y]);
                }
                expect_end(&mut lines, "$EndNodes")?;
                seen_nodes = true;
            }
            "$Elements" => {
                if !seen_nodes {
                    return Err(err(ln, "$Elements before $Nodes".into()));
                }
                let (cl, count) = lines.next().ok_or_else(|| err(ln, "truncated $Elements".into()))?;
                let count: usize = field(Some(count), cl, "element count")?;
                for _ in 0..count {
                    let (el, elem) = lines.next().ok_or_else(|| err(cl, "truncated element list".into()))?;
                    let toks: Vec<&str> = elem.split_whitespace().collect();
                    let _tag: usize = field(toks.first().copied(), el, "element tag")?;
                    let kind: u32 = field(toks.get(1).copied(), el, "element type")?;
                    let ntags: usize = field(toks.get(2).copied(), el, "tag count")?;
                    let rest = toks.get(3 + ntags..).unwrap_or(&[]);
                    let ids = rest
                        .iter()
                        .map(|t| field::<usize>(Some(t), el, "node reference"))
                        .collect::<Result<Vec<_>, _>>()?;
                    if kind != 2 {
                        continue;
                    }
                    if ids.len() != 3 {
                        return Err(err(el, format!("triangle with {} nodes", ids.len())));
                    }
                    let mut tri = [0usize; 3];
                    for (slot, id) in tri.iter_mut().zip(&ids) {
                        *slot = *tag_to_index
                            .get(id)
                            .ok_or_else(|| err(el, format!("element references undeclared node {id}")))?;
                    }
                    if signed_area([vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]]) < 0.0 {
                        tri.swap(1, 2);
                    }
                    triangles.push(tri);
                }
                expect_end(&mut lines, "$EndElements")?;
                seen_elements = true;
            }
            other if other.starts_with('$') && !other.starts_with("$End") => {
                // Unknown section: skip to its end marker.
                let end = format!("$End{}", &other[1..]);
                expect_end(&mut lines, &end)?;
            }
            other => return Err(err(ln, format!("unexpected content `{other}`"))),
        }
    }
    if !seen_elements {
        return Err(err(text.lines().count(), "no $Elements section".into()));
    }
    let target_h = mean_edge_length(&vertices, &triangles);
    Ok(TriMesh {
        vertices,
        triangles,
        target_h,
    })
}

fn expect_end<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>, marker: &str) -> Result<(), GeometryError> {
    let mut last = 0;
    for (ln, line) in lines.by_ref() {
        last = ln;
        if line == marker {
            return Ok(());
        }
        if line.starts_with('$') {
            return Err(GeometryError::Msh {
                line: ln,
                msg: format!("expected {marker}, found {line}"),
            });
        }
    }
    Err(GeometryError::Msh {
        line: last,
        msg: format!("missing {marker}"),
    })
}

fn mean_edge_length(vertices: &[Point2], triangles: &[[usize; 3]]) -> f64 {
    if triangles.is_empty() {
        return 0.0;
    }
    let total: f64 = triangles
        .iter()
        .map(|t| {
            (0..3)
                .map(|e| norm2(sub2(vertices[t[(e + 1) % 3]], vertices[t[e]])))
                .sum::<f64>()
        })
        .sum();
    total / (3 * triangles.len()) as f64
}

pub(crate) fn norm2(v: Point2) -> f64 {
    v[0].hypot(v[1])
}

pub(crate) fn sub2(a: Point2, b: Point2) -> Point2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn star() -> Domain {
        Domain::PolarCurve(PolarCurve::new(0.65, vec![FourierTerm::sin(5, 0.2)]))
    }

    #[test]
    fn square_grid_has_equal_edges() {
        let g = make_boundary_grid(&Domain::UnitSquare, 400).unwrap();
        assert_eq!(g.len(), 400);
        for s in 0..4 {
            assert_eq!(g.segment_indices(s).len(), 100);
        }
        assert!((g.total_weight() - 4.0).abs() < 1e-12);
        assert_eq!(g.points()[0], [0.005, 0.0]);
        assert_eq!(g.normals()[0], [0.0, -1.0]);
        // Second edge starts near (1, 0) going up.
        assert_eq!(g.points()[100], [1.0, 0.005]);
    }

    #[test]
    fn circle_weights_sum_to_circumference() {
        let g = make_boundary_grid(&Domain::unit_disk(), 400).unwrap();
        assert!((g.total_weight() - 2.0 * PI).abs() < 1e-4);
        for (p, n) in g.points().iter().zip(g.normals()) {
            assert!((p[0] * n[0] + p[1] * n[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn star_normals_are_unit_and_orthogonal_to_tangents() {
        let g = make_boundary_grid(&star(), 400).unwrap();
        let n = g.len();
        for i in 0..n {
            let nv = g.normals()[i];
            assert!((norm2(nv) - 1.0).abs() < 1e-12);
            // Finite-difference tangent of the curve itself at the same parameter.
            let Domain::PolarCurve(c) = g.domain() else {
                unreachable!()
            };
            let theta = 2.0 * PI * i as f64 / n as f64;
            let eps = 1e-6;
            let (a, b) = (c.point(theta + eps), c.point(theta - eps));
            let t = [(a[0] - b[0]) / (2.0 * eps), (a[1] - b[1]) / (2.0 * eps)];
            let dot = (t[0] * nv[0] + t[1] * nv[1]) / norm2(t);
            assert!(dot.abs() < 1e-8, "point {i}: {dot}");
        }
    }

    #[test]
    fn nonpositive_radius_is_rejected() {
        let bad = Domain::PolarCurve(PolarCurve::new(0.1, vec![FourierTerm::sin(3, 0.2)]));
        assert!(matches!(
            make_boundary_grid(&bad, 64),
            Err(GeometryError::InvalidDomain(_))
        ));
        assert!(matches!(
            make_boundary_grid(&Domain::UnitSquare, 4),
            Err(GeometryError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn multi_loop_splits_by_length_and_points_normals_into_hole() {
        let outer = PolarCurve::new(0.8, vec![FourierTerm::sin(2, 0.1)]);
        let inner = PolarCurve::new(0.3, vec![FourierTerm::sin(2, 0.05), FourierTerm::sin(3, 0.03)]);
        let (lo, li) = (outer.length(), inner.length());
        let d = Domain::MultiLoop { outer, inner };
        let g = make_boundary_grid(&d, 400).unwrap();
        let n_in = g.segment_indices(1).len();
        assert_eq!(g.segment_indices(0).len() + n_in, 400);
        assert!((n_in as f64 - 400.0 * li / (lo + li)).abs() <= 0.5);
        assert!((g.total_weight() - lo - li).abs() < 1e-6 * (lo + li));
        for i in g.segment_indices(1) {
            let (p, n) = (g.points()[i], g.normals()[i]);
            // Normals on the hole boundary point towards its center.
            assert!(p[0] * n[0] + p[1] * n[1] < 0.0);
        }
        assert!(!d.contains(&[0.0, 0.0]));
        assert!(d.contains(&[0.55, 0.0]));
    }

    #[test]
    fn nested_loops_must_not_cross() {
        let d = Domain::MultiLoop {
            outer: PolarCurve::circle([0.0, 0.0], 1.0),
            inner: PolarCurve::circle([0.5, 0.0], 0.6),
        };
        assert!(d.validate().is_err());
    }

    #[test]
    fn containment() {
        assert!(Domain::UnitSquare.contains(&[0.5, 0.5]));
        assert!(!Domain::UnitSquare.contains(&[1.5, 0.5]));
        assert!(!Domain::UnitSquare.contains(&[0.0, 0.5]));
        assert!(Domain::unit_disk().contains(&[0.99, 0.0]));
        assert!(!Domain::unit_disk().contains(&[1.01, 0.0]));
        assert!(Domain::unit_sphere().contains(&[0.1, 0.2, 0.3]));
    }

    #[test]
    fn distances() {
        let sq = Domain::UnitSquare;
        assert!((sq.distance_to_boundary(&[0.2, 0.5]) - 0.2).abs() < 1e-15);
        assert!((sq.distance_to_boundary(&[2.0, 2.0]) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(sq.distance_to_boundary(&[0.0, 0.3]), 0.0);
        let disk = Domain::unit_disk();
        assert!((disk.distance_to_boundary(&[3.0, 4.0]) - 4.0).abs() < 1e-10);
        assert!((disk.distance_to_boundary(&[0.1, 0.0]) - 0.9).abs() < 1e-10);
    }

    #[test]
    fn sphere_lattice() {
        let g = make_surface_grid(&Domain::unit_sphere(), 1200).unwrap();
        assert_eq!(g.len(), 1200);
        assert!((g.total_weight() - 4.0 * PI).abs() < 1e-10);
        for (p, n) in g.points().iter().zip(g.normals()) {
            let r: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((r - 1.0).abs() < 1e-12);
            assert!((n.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
        }
        assert!(make_boundary_grid(&Domain::unit_sphere(), 100).is_err());
        assert!(BoundaryGrid::<3>::for_domain(&Domain::UnitSquare, 100).is_err());
    }

    #[test]
    fn structured_triangulation_sizes() {
        let m = triangulate_square(0.5).unwrap();
        assert_eq!(m.len(), 8);
        assert!((m.total_area() - 1.0).abs() < 1e-15);
        assert_eq!(triangulate_square(0.01).unwrap().len(), 20000);
        assert_eq!(triangulate_square(0.02).unwrap().len(), 5000);
        let m = triangulate_square(0.01).unwrap();
        assert!((m.total_area() - 1.0).abs() < 1e-12);
        assert!((0..m.len()).all(|t| m.signed_area(t) > 0.0));
        assert!(triangulate_square(1.0).is_err());
        assert!(triangulate_square(0.0).is_err());
    }

    const TWO_TRIANGLES: &str = "$MeshFormat
2.2 0 8
$EndMeshFormat
$Nodes
4
1 0 0 0
2 1 0 0
3 1 1 0
4 0 1 0
$EndNodes
$Elements
3
1 2 2 0 1 1 2 3
2 2 2 0 1 1 4 3
3 1 2 0 2 1 2
$EndElements
";

    #[test]
    fn parses_minimal_square() {
        let m = parse_msh(TWO_TRIANGLES).unwrap();
        assert_eq!(m.len(), 2);
        assert!((m.total_area() - 1.0).abs() < 1e-15);
        // The second triangle is clockwise in the file and gets flipped.
        assert!((0..2).all(|t| m.signed_area(t) > 0.0));
    }

    #[test]
    fn skips_quads() {
        let text = TWO_TRIANGLES
            .replace("$Elements\n3\n", "$Elements\n4\n")
            .replace("$EndElements", "4 3 2 0 1 1 2 3 4\n$EndElements");
        let m = parse_msh(&text).unwrap();
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn dangling_node_is_reported_with_its_line() {
        let text = TWO_TRIANGLES.replace("2 2 2 0 1 1 4 3", "2 2 2 0 1 1 99 3");
        match parse_msh(&text) {
            Err(GeometryError::Msh { line, msg }) => {
                assert_eq!(line, 14);
                assert!(msg.contains("99"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_inputs() {
        let bad_number = TWO_TRIANGLES.replace("2 1 0 0", "2 1 zero 0");
        assert!(matches!(
            parse_msh(&bad_number),
            Err(GeometryError::Msh { line: 7, .. })
        ));
        let bad_header = TWO_TRIANGLES.replace("$EndNodes", "$EndNodez");
        assert!(parse_msh(&bad_header).is_err());
        let binary = TWO_TRIANGLES.replace("2.2 0 8", "2.2 1 8");
        assert!(parse_msh(&binary).is_err());
    }

    #[test]
    fn csv_headers() {
        let g = make_boundary_grid(&Domain::UnitSquare, 8).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,y,nx,ny,weight,segment\n"));
        assert_eq!(text.lines().count(), 9);
    }
}
