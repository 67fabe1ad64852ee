//! Problem pipelines: predict the missing boundary data with a trained
//! operator, then evaluate the solution inside the domain.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BoundaryGrid, Domain, Point2, TriMesh};
use crate::kernels::{Complex, KernelSpec};
use crate::operator::{LinearBoundaryOperator, OperatorError, Slot, Trace};
use crate::quadrature::{
    reconstruct_interior, representation_sign, NewtonPotential, QuadratureError, SingularIntegralConfig,
};

/// Distance from the boundary inside which points are left out of headline errors.
pub const DEFAULT_MARGIN: f64 = 0.05;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("relative error is undefined for a zero reference vector")]
    UndefinedMetric,
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("problem mismatch: {0}")]
    Mismatch(String),
    #[error("invalid test suite request: {0}")]
    Suite(String),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `‖pred - exact‖₂ / ‖exact‖₂`.
pub fn relative_l2(pred: &[f64], exact: &[f64]) -> Result<f64, SolverError> {
    if pred.len() != exact.len() {
        return Err(SolverError::LengthMismatch {
            expected: exact.len(),
            got: pred.len(),
        });
    }
    let den = exact.iter().map(|v| v * v).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(SolverError::UndefinedMetric);
    }
    let num = pred
        .iter()
        .zip(exact)
        .map(|(p, e)| (p - e) * (p - e))
        .sum::<f64>()
        .sqrt();
    Ok(num / den)
}

/// Boundary condition type per square edge, counterclockwise from `(0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixedPartition {
    pub dirichlet: [bool; 4],
}

impl MixedPartition {
    pub fn from_dirichlet(edges: &[u8]) -> Result<Self, SolverError> {
        let mut dirichlet = [false; 4];
        for &e in edges {
            *dirichlet
                .get_mut(e as usize)
                .ok_or_else(|| SolverError::Mismatch(format!("edge {e} does not exist")))? = true;
        }
        if dirichlet.iter().all(|d| *d) || dirichlet.iter().all(|d| !*d) {
            return Err(SolverError::Mismatch(
                "a mixed partition needs both boundary types".into(),
            ));
        }
        Ok(Self { dirichlet })
    }

    pub fn dirichlet_segments(&self) -> Vec<u8> {
        (0..4u8).filter(|&s| self.dirichlet[s as usize]).collect()
    }
}

/// Uniform cell-centered sampling of a domain's bounding box.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalGrid {
    pub points: Vec<Point2>,
    pub inside: Vec<bool>,
    /// Inside, but within the margin of the boundary.
    pub near_boundary: Vec<bool>,
}

impl EvalGrid {
    pub fn new(domain: &Domain, n: usize, margin: f64) -> Self {
        let b = domain.bounds();
        let (dx, dy) = ((b[0].1 - b[0].0) / n as f64, (b[1].1 - b[1].0) / n as f64);
        let (x0, y0) = (b[0].0, b[1].0);
        let points: Vec<Point2> = (0..n)
            .flat_map(|j| (0..n).map(move |i| [x0 + (i as f64 + 0.5) * dx, y0 + (j as f64 + 0.5) * dy]))
            .collect();
        let inside: Vec<bool> = points.iter().map(|p| domain.contains(p)).collect();
        let near_boundary = points
            .par_iter()
            .zip(&inside)
            .map(|(p, &ins)| ins && domain.distance_to_boundary(p) < margin)
            .collect();
        Self {
            points,
            inside,
            near_boundary,
        }
    }

    /// The 100×100 grid with the default margin.
    pub fn standard(domain: &Domain) -> Self {
        Self::new(domain, 100, DEFAULT_MARGIN)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Predicted solution on an evaluation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    pub points: Vec<Point2>,
    pub inside: Vec<bool>,
    /// Left out of [`SolutionField::error`]: within the margin or flagged by the reconstruction.
    pub excluded: Vec<bool>,
    /// NaN outside the domain.
    pub pred: Vec<Complex>,
    pub exact: Option<Vec<f64>>,
}

impl SolutionField {
    fn active(&self, include_excluded: bool) -> impl Iterator<Item = usize> + '_ {
        (0..self.points.len()).filter(move |&i| self.inside[i] && (include_excluded || !self.excluded[i]))
    }

    pub fn with_exact<F: Fn(Point2) -> f64>(mut self, u: F) -> Self {
        self.exact = Some(
            self.points
                .iter()
                .zip(&self.inside)
                .map(|(p, &ins)| if ins { u(*p) } else { f64::NAN })
                .collect(),
        );
        self
    }

    fn error_over(&self, include_excluded: bool) -> Option<Result<f64, SolverError>> {
        let exact = self.exact.as_ref()?;
        let idx: Vec<usize> = self.active(include_excluded).collect();
        let p: Vec<f64> = idx.iter().map(|&i| self.pred[i].re).collect();
        let e: Vec<f64> = idx.iter().map(|&i| exact[i]).collect();
        Some(relative_l2(&p, &e))
    }

    /// Relative L2 error of the real part over inside, non-excluded points.
    pub fn error(&self) -> Option<Result<f64, SolverError>> {
        self.error_over(false)
    }

    /// Same as [`SolutionField::error`] but over every inside point.
    pub fn full_error(&self) -> Option<Result<f64, SolverError>> {
        self.error_over(true)
    }

    /// `‖Im u‖ / ‖u‖` over the headline points; zero for real kernels.
    pub fn imaginary_ratio(&self) -> f64 {
        let (mut im, mut all) = (0.0, 0.0);
        for i in self.active(false) {
            im += self.pred[i].im * self.pred[i].im;
            all += self.pred[i].abs() * self.pred[i].abs();
        }
        if all == 0.0 {
            0.0
        } else {
            (im / all).sqrt()
        }
    }

    /// `x,y,u_pred_re,u_pred_im,u_exact,abs_err,flag`; flag 0 = scored,
    /// 1 = near the boundary (not scored), 2 = outside the domain.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,y,u_pred_re,u_pred_im,u_exact,abs_err,flag")?;
        for i in 0..self.points.len() {
            let p = self.points[i];
            let flag = if !self.inside[i] {
                2
            } else if self.excluded[i] {
                1
            } else {
                0
            };
            let exact = self.exact.as_ref().map_or(f64::NAN, |e| e[i]);
            let err = (self.pred[i].re - exact).abs();
            writeln!(
                w,
                "{},{},{},{},{},{},{flag}",
                p[0], p[1], self.pred[i].re, self.pred[i].im, exact, err
            )?;
        }
        Ok(())
    }
}

fn check_problem(op: &LinearBoundaryOperator, kernel: &KernelSpec) -> Result<(), SolverError> {
    match &op.kernel {
        Some(k) if k != kernel => Err(SolverError::Mismatch(format!(
            "operator was trained for {k:?}, problem uses {kernel:?}"
        ))),
        _ => Ok(()),
    }
}

/// Interior values from full boundary traces, in parallel over the grid.
pub fn reconstruct_field(
    kernel: &KernelSpec,
    grid: &BoundaryGrid<2>,
    g: &[f64],
    h: &[f64],
    eval: &EvalGrid,
) -> Result<SolutionField, SolverError> {
    let results: Vec<Result<(Complex, bool), QuadratureError>> = eval
        .points
        .par_iter()
        .zip(&eval.inside)
        .map(|(p, &ins)| {
            if !ins {
                return Ok((Complex::new(f64::NAN, f64::NAN), false));
            }
            reconstruct_interior(kernel, grid, g, h, p).map(|r| (r.value, r.near_boundary))
        })
        .collect();
    let mut pred = Vec::with_capacity(eval.len());
    let mut excluded = Vec::with_capacity(eval.len());
    for (i, r) in results.into_iter().enumerate() {
        let (v, near) = r?;
        pred.push(v);
        excluded.push(eval.near_boundary[i] || near);
    }
    Ok(SolutionField {
        points: eval.points.clone(),
        inside: eval.inside.clone(),
        excluded,
        pred,
        exact: None,
    })
}

fn gather(g: &[f64], h: &[f64], slots: &[Slot]) -> Vec<f64> {
    slots
        .iter()
        .map(|&(t, i)| match t {
            Trace::Dirichlet => g[i],
            Trace::Neumann => h[i],
        })
        .collect()
}

/// Dirichlet problem: predict `h` from `g`, then reconstruct. Returns the field and `h`.
pub fn solve_dirichlet(
    op: &LinearBoundaryOperator,
    kernel: &KernelSpec,
    grid: &BoundaryGrid<2>,
    g: &[f64],
    eval: &EvalGrid,
) -> Result<(SolutionField, Vec<f64>), SolverError> {
    check_problem(op, kernel)?;
    let h = predict_neumann(op, grid, g)?;
    Ok((reconstruct_field(kernel, grid, g, &h, eval)?, h))
}

/// Neumann data predicted from full Dirichlet data.
pub fn predict_neumann<const D: usize>(
    op: &LinearBoundaryOperator,
    grid: &BoundaryGrid<D>,
    g: &[f64],
) -> Result<Vec<f64>, SolverError> {
    if !op.layout.is_dirichlet() {
        return Err(SolverError::Mismatch(
            "operator layout is not a Dirichlet-to-Neumann map".into(),
        ));
    }
    if g.len() != grid.len() {
        return Err(SolverError::LengthMismatch {
            expected: grid.len(),
            got: g.len(),
        });
    }
    let (ins, outs) = op.check_grid(grid)?;
    let pred = op.predict(g, &ins, &outs)?;
    let mut h = vec![0.0; grid.len()];
    for (v, (_, i)) in pred.into_iter().zip(outs) {
        h[i] = v;
    }
    Ok(h)
}

/// Full boundary traces and the interior field of a mixed problem.
#[derive(Debug, Clone)]
pub struct MixedSolution {
    pub field: SolutionField,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
}

/// Mixed problem. `known` follows the operator's input layout:
/// Dirichlet values on Γ_D, then Neumann values on Γ_N, each in grid order.
pub fn solve_mixed(
    op: &LinearBoundaryOperator,
    kernel: &KernelSpec,
    grid: &BoundaryGrid<2>,
    partition: &MixedPartition,
    known: &[f64],
    eval: &EvalGrid,
) -> Result<MixedSolution, SolverError> {
    check_problem(op, kernel)?;
    let given: Vec<Option<u8>> = partition.dirichlet_segments().into_iter().map(Some).collect();
    if op.layout.dirichlet_segments() != given {
        return Err(SolverError::Mismatch(format!(
            "operator expects Dirichlet data on {:?}, partition gives {:?}",
            op.layout.dirichlet_segments(),
            given
        )));
    }
    let (ins, outs) = op.check_grid(grid)?;
    let pred = op.predict(known, &ins, &outs)?;
    let mut g = vec![f64::NAN; grid.len()];
    let mut h = vec![f64::NAN; grid.len()];
    for (slots, values) in [(&ins, known), (&outs, pred.as_slice())] {
        for (&(t, i), &v) in slots.iter().zip(values) {
            match t {
                Trace::Dirichlet => g[i] = v,
                Trace::Neumann => h[i] = v,
            }
        }
    }
    if g.iter().chain(&h).any(|v| v.is_nan()) {
        return Err(SolverError::Mismatch(
            "layout does not cover every boundary slot".into(),
        ));
    }
    let field = reconstruct_field(kernel, grid, &g, &h, eval)?;
    Ok(MixedSolution { field, g, h })
}

/// Assembles the operator input of a mixed problem from full traces.
pub fn mixed_input(
    op: &LinearBoundaryOperator,
    grid: &BoundaryGrid<2>,
    g: &[f64],
    h: &[f64],
) -> Result<Vec<f64>, SolverError> {
    let (ins, _) = op.check_grid(grid)?;
    Ok(gather(g, h, &ins))
}

/// Poisson problem `Δu = f` with Dirichlet data.
///
/// The Newton potential `u_f` carries the source; the harmonic remainder is
/// solved from `g - u_f` on the boundary, and the two are added.
#[allow(clippy::too_many_arguments)]
pub fn solve_poisson<F: Fn(Point2) -> f64 + Sync>(
    op: &LinearBoundaryOperator,
    f: F,
    g: &[f64],
    mesh: &TriMesh,
    grid: &BoundaryGrid<2>,
    eval: &EvalGrid,
    cfg: SingularIntegralConfig,
) -> Result<SolutionField, SolverError> {
    let kernel = KernelSpec::Laplace2d;
    check_problem(op, &kernel)?;
    if g.len() != grid.len() {
        return Err(SolverError::LengthMismatch {
            expected: grid.len(),
            got: g.len(),
        });
    }
    let potential = NewtonPotential::new(mesh, grid.domain(), cfg)?;
    let sign = representation_sign();
    let on_boundary = potential.eval_many(&f, grid.points());
    let g_harmonic: Vec<f64> = g.iter().zip(&on_boundary).map(|(v, uf)| v - sign * uf.value).collect();
    let (mut field, _) = solve_dirichlet(op, &kernel, grid, &g_harmonic, eval)?;
    let inside: Vec<Point2> = (0..eval.len())
        .filter(|&i| eval.inside[i])
        .map(|i| eval.points[i])
        .collect();
    let interior = potential.eval_many(&f, &inside);
    let mut it = interior.into_iter();
    for i in 0..eval.len() {
        if eval.inside[i] {
            let uf = it.next().expect("one value per inside point");
            field.pred[i] = Complex::new(field.pred[i].re + sign * uf.value, field.pred[i].im);
            field.excluded[i] |= uf.clipped;
        }
    }
    Ok(field)
}

/// Helmholtz Dirichlet problem at wavenumber `k`; the real part is the solution.
pub fn solve_helmholtz(
    op: &LinearBoundaryOperator,
    k: f64,
    grid: &BoundaryGrid<2>,
    g: &[f64],
    eval: &EvalGrid,
) -> Result<(SolutionField, Vec<f64>), SolverError> {
    let kernel = KernelSpec::Helmholtz2d { k };
    if op.kernel != Some(kernel) {
        return Err(SolverError::Mismatch(format!(
            "operator kernel {:?} does not match k = {k}",
            op.kernel
        )));
    }
    solve_dirichlet(op, &kernel, grid, g, eval)
}

/// Boundary-only prediction on a surface; returns `h` and, if given, its error.
pub fn predict_normal_derivative_3d(
    op: &LinearBoundaryOperator,
    grid: &BoundaryGrid<3>,
    g: &[f64],
    exact_h: Option<&[f64]>,
) -> Result<(Vec<f64>, Option<f64>), SolverError> {
    let h = predict_neumann(op, grid, g)?;
    let err = exact_h.map(|e| relative_l2(&h, e)).transpose()?;
    Ok((h, err))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFamily {
    /// `ln((x-m)² + (y-n)²)` with `(m, n)` outside the domain.
    U1,
    /// `m(x² - y²) + nxy`
    U2,
    /// `sin(mx - t1) e^(my - t2)`
    U3,
    /// `mx + ny`
    U4,
    /// `x³ - 3xy²`
    U5,
    /// `sin(ax - p1) sin(by - p2)`, `a² + b² = k²`
    SinSin,
    /// `sin(cx - q1) sinh(dy - q2)`, `c² - d² = k²`
    SinSinh,
    /// `(x² + y²)/4`, source 1
    PoissonQuadratic,
    /// `x⁵ + y`, source `20x³`
    PoissonQuintic,
    /// `sin(√0.2 x + √0.3 y + √0.5 z)`, a `k = 1` Helmholtz solution in 3D
    PlaneWave3d,
}

impl TestFamily {
    pub const LAPLACE: [TestFamily; 5] = [
        TestFamily::U1,
        TestFamily::U2,
        TestFamily::U3,
        TestFamily::U4,
        TestFamily::U5,
    ];
    pub const HELMHOLTZ: [TestFamily; 2] = [TestFamily::SinSin, TestFamily::SinSinh];
    pub const POISSON: [TestFamily; 2] = [TestFamily::PoissonQuadratic, TestFamily::PoissonQuintic];

    pub fn name(self) -> &'static str {
        match self {
            TestFamily::U1 => "u1",
            TestFamily::U2 => "u2",
            TestFamily::U3 => "u3",
            TestFamily::U4 => "u4",
            TestFamily::U5 => "u5",
            TestFamily::SinSin => "sin_sin",
            TestFamily::SinSinh => "sin_sinh",
            TestFamily::PoissonQuadratic => "poisson_quadratic",
            TestFamily::PoissonQuintic => "poisson_quintic",
            TestFamily::PlaneWave3d => "plane_wave_3d",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            TestFamily::U1,
            TestFamily::U2,
            TestFamily::U3,
            TestFamily::U4,
            TestFamily::U5,
            TestFamily::SinSin,
            TestFamily::SinSinh,
            TestFamily::PoissonQuadratic,
            TestFamily::PoissonQuintic,
            TestFamily::PlaneWave3d,
        ]
        .into_iter()
        .find(|f| f.name() == s)
    }
}

/// One analytic test solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub family: TestFamily,
    /// Family-specific parameters in the order of the formula.
    pub params: Vec<f64>,
}

impl TestCase {
    pub fn new(family: TestFamily, params: Vec<f64>) -> Self {
        Self { family, params }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let p = &self.params;
        match self.family {
            TestFamily::U1 => ((x[0] - p[0]).powi(2) + (x[1] - p[1]).powi(2)).ln(),
            TestFamily::U2 => p[0] * (x[0] * x[0] - x[1] * x[1]) + p[1] * x[0] * x[1],
            TestFamily::U3 => (p[0] * x[0] - p[1]).sin() * (p[0] * x[1] - p[2]).exp(),
            TestFamily::U4 => p[0] * x[0] + p[1] * x[1],
            TestFamily::U5 => x[0].powi(3) - 3.0 * x[0] * x[1] * x[1],
            TestFamily::SinSin => (p[0] * x[0] - p[2]).sin() * (p[1] * x[1] - p[3]).sin(),
            TestFamily::SinSinh => (p[0] * x[0] - p[2]).sin() * (p[1] * x[1] - p[3]).sinh(),
            TestFamily::PoissonQuadratic => 0.25 * (x[0] * x[0] + x[1] * x[1]),
            TestFamily::PoissonQuintic => x[0].powi(5) + x[1],
            TestFamily::PlaneWave3d => plane_wave_phase(x).sin(),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let p = &self.params;
        match self.family {
            TestFamily::U1 => {
                let (dx, dy) = (x[0] - p[0], x[1] - p[1]);
                let r2 = dx * dx + dy * dy;
                vec![2.0 * dx / r2, 2.0 * dy / r2]
            }
            TestFamily::U2 => vec![2.0 * p[0] * x[0] + p[1] * x[1], -2.0 * p[0] * x[1] + p[1] * x[0]],
            TestFamily::U3 => {
                let (s, c) = (p[0] * x[0] - p[1]).sin_cos();
                let e = (p[0] * x[1] - p[2]).exp();
                vec![p[0] * c * e, p[0] * s * e]
            }
            TestFamily::U4 => vec![p[0], p[1]],
            TestFamily::U5 => vec![3.0 * x[0] * x[0] - 3.0 * x[1] * x[1], -6.0 * x[0] * x[1]],
            TestFamily::SinSin => {
                let (sx, cx) = (p[0] * x[0] - p[2]).sin_cos();
                let (sy, cy) = (p[1] * x[1] - p[3]).sin_cos();
                vec![p[0] * cx * sy, p[1] * sx * cy]
            }
            TestFamily::SinSinh => {
                let (sx, cx) = (p[0] * x[0] - p[2]).sin_cos();
                let t = p[1] * x[1] - p[3];
                vec![p[0] * cx * t.sinh(), p[1] * sx * t.cosh()]
            }
            TestFamily::PoissonQuadratic => vec![0.5 * x[0], 0.5 * x[1]],
            TestFamily::PoissonQuintic => vec![5.0 * x[0].powi(4), 1.0],
            TestFamily::PlaneWave3d => {
                let c = plane_wave_phase(x).cos();
                PLANE_WAVE.iter().map(|w| w.sqrt() * c).collect()
            }
        }
    }

    /// `Δu`, the Poisson source term.
    pub fn source(&self, x: &[f64]) -> f64 {
        match self.family {
            TestFamily::PoissonQuadratic => 1.0,
            TestFamily::PoissonQuintic => 20.0 * x[0].powi(3),
            TestFamily::SinSin | TestFamily::SinSinh => -self.helmholtz_k2() * self.value(x),
            TestFamily::PlaneWave3d => -self.value(x),
            _ => 0.0,
        }
    }

    fn helmholtz_k2(&self) -> f64 {
        let p = &self.params;
        match self.family {
            TestFamily::SinSin => p[0] * p[0] + p[1] * p[1],
            TestFamily::SinSinh => p[0] * p[0] - p[1] * p[1],
            _ => 0.0,
        }
    }

    /// Dirichlet and Neumann traces on a grid.
    pub fn traces<const D: usize>(&self, grid: &BoundaryGrid<D>) -> (Vec<f64>, Vec<f64>) {
        let g = grid.points().iter().map(|p| self.value(p)).collect();
        let h = grid
            .points()
            .iter()
            .zip(grid.normals())
            .map(|(p, n)| self.gradient(p).iter().zip(n).map(|(a, b)| a * b).sum())
            .collect();
        (g, h)
    }
}

const PLANE_WAVE: [f64; 3] = [0.2, 0.3, 0.5];

fn plane_wave_phase(x: &[f64]) -> f64 {
    PLANE_WAVE.iter().zip(x).map(|(w, v)| w.sqrt() * v).sum()
}

/// Draws `count` cases of a family. Parameters `m, n, t1, t2` are uniform in
/// `[-4, 4]`; Helmholtz coefficients satisfy the wavenumber constraint with
/// `a ∈ (0, k)`, `d ∈ (0, √3 k)` (so `c ≤ 2k`) and phases uniform in `[-π, π]`.
pub fn make_test_suite(
    family: TestFamily,
    k: Option<f64>,
    domain: &Domain,
    count: usize,
    seed: u64,
) -> Result<Vec<TestCase>, SolverError> {
    const MAX_DRAWS: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(family as u64);
    let need_k = || {
        k.filter(|k| *k > 0.0 && k.is_finite())
            .ok_or_else(|| SolverError::Suite(format!("{} needs a positive wavenumber", family.name())))
    };
    let mut cases = Vec::with_capacity(count);
    for _ in 0..count {
        let unit = |rng: &mut ChaCha8Rng| rng.random_range(-4.0..4.0);
        let params = match family {
            TestFamily::U1 => {
                let mut found = None;
                for _ in 0..MAX_DRAWS {
                    let c = [unit(&mut rng), unit(&mut rng)];
                    if !domain.contains(&c) && domain.distance_to_boundary(&c) >= 1e-3 {
                        found = Some(c);
                        break;
                    }
                }
                found
                    .ok_or_else(|| SolverError::Suite("no exterior source point found".into()))?
                    .to_vec()
            }
            TestFamily::U2 | TestFamily::U4 => vec![unit(&mut rng), unit(&mut rng)],
            TestFamily::U3 => vec![unit(&mut rng), unit(&mut rng), unit(&mut rng)],
            TestFamily::U5 | TestFamily::PoissonQuadratic | TestFamily::PoissonQuintic | TestFamily::PlaneWave3d => {
                Vec::new()
            }
            TestFamily::SinSin => {
                let k = need_k()?;
                let mut found = None;
                for _ in 0..MAX_DRAWS {
                    let a = rng.random::<f64>() * k;
                    let b = (k * k - a * a).sqrt();
                    if a > 0.0 && b > 0.0 && b <= k {
                        found = Some((a, b));
                        break;
                    }
                }
                let (a, b) = found.ok_or_else(|| SolverError::Suite("infeasible (a, b) draw".into()))?;
                vec![a, b, rng.random_range(-PI..PI), rng.random_range(-PI..PI)]
            }
            TestFamily::SinSinh => {
                let k = need_k()?;
                let mut found = None;
                for _ in 0..MAX_DRAWS {
                    let d = rng.random::<f64>() * 3f64.sqrt() * k;
                    let c = (k * k + d * d).sqrt();
                    if d > 0.0 && c > d && c <= 2.0 * k {
                        found = Some((c, d));
                        break;
                    }
                }
                let (c, d) = found.ok_or_else(|| SolverError::Suite("infeasible (c, d) draw".into()))?;
                vec![c, d, rng.random_range(-PI..PI), rng.random_range(-PI..PI)]
            }
        };
        cases.push(TestCase::new(family, params));
    }
    Ok(cases)
}

/// Errors of one solved test case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub family: TestFamily,
    pub params: Vec<f64>,
    /// Interior relative L2 error, margin excluded.
    pub total_error: f64,
    /// Interior relative L2 error over every inside point.
    pub full_grid_error: f64,
    /// Relative L2 error of the predicted Neumann data (Dirichlet problems).
    pub dn_error: Option<f64>,
    /// Mixed problems: predicted Dirichlet data, relative to the full-boundary norm.
    pub dirichlet_error: Option<f64>,
    /// Mixed problems: predicted Neumann data, relative to the full-boundary norm.
    pub neumann_error: Option<f64>,
    pub imaginary_ratio: f64,
}

/// Per-family means of case reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySummary {
    pub family: TestFamily,
    pub cases: usize,
    pub mean_total_error: f64,
    pub max_total_error: f64,
    pub mean_dn_error: Option<f64>,
    pub mean_dirichlet_error: Option<f64>,
    pub mean_neumann_error: Option<f64>,
    pub mean_imaginary_ratio: f64,
    pub max_imaginary_ratio: f64,
}

pub fn summarize(reports: &[CaseReport]) -> Vec<FamilySummary> {
    let mut families: Vec<TestFamily> = Vec::new();
    for r in reports {
        if !families.contains(&r.family) {
            families.push(r.family);
        }
    }
    families
        .into_iter()
        .map(|family| {
            let rs: Vec<&CaseReport> = reports.iter().filter(|r| r.family == family).collect();
            let n = rs.len() as f64;
            let mean_opt = |f: fn(&CaseReport) -> Option<f64>| {
                let v: Vec<f64> = rs.iter().filter_map(|r| f(r)).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            };
            FamilySummary {
                family,
                cases: rs.len(),
                mean_total_error: rs.iter().map(|r| r.total_error).sum::<f64>() / n,
                max_total_error: rs.iter().map(|r| r.total_error).fold(0.0, f64::max),
                mean_dn_error: mean_opt(|r| r.dn_error),
                mean_dirichlet_error: mean_opt(|r| r.dirichlet_error),
                mean_neumann_error: mean_opt(|r| r.neumann_error),
                mean_imaginary_ratio: rs.iter().map(|r| r.imaginary_ratio).sum::<f64>() / n,
                max_imaginary_ratio: rs.iter().map(|r| r.imaginary_ratio).fold(0.0, f64::max),
            }
        })
        .collect()
}

fn field_errors(field: &SolutionField) -> Result<(f64, f64), SolverError> {
    let total = field.error().expect("exact values attached")?;
    let full = field.full_error().expect("exact values attached")?;
    Ok((total, full))
}

/// Solves a Dirichlet test case (Laplace or Helmholtz) and scores it.
pub fn run_dirichlet_case(
    op: &LinearBoundaryOperator,
    kernel: &KernelSpec,
    grid: &BoundaryGrid<2>,
    case: &TestCase,
    eval: &EvalGrid,
) -> Result<(CaseReport, SolutionField), SolverError> {
    let (g, h_exact) = case.traces(grid);
    let (field, h) = solve_dirichlet(op, kernel, grid, &g, eval)?;
    let field = field.with_exact(|p| case.value(&p));
    let (total_error, full_grid_error) = field_errors(&field)?;
    let dn_error = relative_l2(&h, &h_exact).ok();
    let report = CaseReport {
        family: case.family,
        params: case.params.clone(),
        total_error,
        full_grid_error,
        dn_error,
        dirichlet_error: None,
        neumann_error: None,
        imaginary_ratio: field.imaginary_ratio(),
    };
    Ok((report, field))
}

/// Solves a mixed test case and scores traces against the full-boundary norms.
pub fn run_mixed_case(
    op: &LinearBoundaryOperator,
    grid: &BoundaryGrid<2>,
    partition: &MixedPartition,
    case: &TestCase,
    eval: &EvalGrid,
) -> Result<(CaseReport, MixedSolution), SolverError> {
    let kernel = KernelSpec::Laplace2d;
    let (g, h) = case.traces(grid);
    let known = mixed_input(op, grid, &g, &h)?;
    let mut sol = solve_mixed(op, &kernel, grid, partition, &known, eval)?;
    sol.field = sol.field.with_exact(|p| case.value(&p));
    let (total_error, full_grid_error) = field_errors(&sol.field)?;
    let report = CaseReport {
        family: case.family,
        params: case.params.clone(),
        total_error,
        full_grid_error,
        dn_error: None,
        dirichlet_error: relative_l2(&sol.g, &g).ok(),
        neumann_error: relative_l2(&sol.h, &h).ok(),
        imaginary_ratio: 0.0,
    };
    Ok((report, sol))
}

/// Solves a Poisson test case through the Newton-potential split.
pub fn run_poisson_case(
    op: &LinearBoundaryOperator,
    grid: &BoundaryGrid<2>,
    mesh: &TriMesh,
    case: &TestCase,
    eval: &EvalGrid,
    cfg: SingularIntegralConfig,
) -> Result<(CaseReport, SolutionField), SolverError> {
    let (g, _) = case.traces(grid);
    let field = solve_poisson(op, |p| case.source(&p), &g, mesh, grid, eval, cfg)?;
    let field = field.with_exact(|p| case.value(&p));
    let (total_error, full_grid_error) = field_errors(&field)?;
    let report = CaseReport {
        family: case.family,
        params: case.params.clone(),
        total_error,
        full_grid_error,
        dn_error: None,
        dirichlet_error: None,
        neumann_error: None,
        imaginary_ratio: 0.0,
    };
    Ok((report, field))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_boundary_grid;

    #[test]
    fn relative_l2_cases() {
        let e = [1.0, -2.0, 3.0];
        assert_eq!(relative_l2(&e, &e).unwrap(), 0.0);
        assert!((relative_l2(&[2.0, -4.0, 6.0], &e).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(relative_l2(&[0.0; 3], &e).unwrap(), 1.0);
        assert!(matches!(relative_l2(&e, &[0.0; 3]), Err(SolverError::UndefinedMetric)));
    }

    #[test]
    fn test_functions_solve_their_equations() {
        let d = Domain::UnitSquare;
        let mut cases = Vec::new();
        for f in TestFamily::LAPLACE.into_iter().chain(TestFamily::POISSON) {
            cases.extend(make_test_suite(f, None, &d, 3, 1).unwrap());
        }
        for k in [1.0, 10.0] {
            for f in TestFamily::HELMHOLTZ {
                cases.extend(make_test_suite(f, Some(k), &d, 3, 1).unwrap());
            }
        }
        let h = 1e-3;
        for case in &cases {
            for p in [[0.3, 0.4], [0.7, 0.2]] {
                let u = |dx: f64, dy: f64| case.value(&[p[0] + dx, p[1] + dy]);
                let lap = (u(h, 0.0) + u(-h, 0.0) + u(0.0, h) + u(0.0, -h) - 4.0 * u(0.0, 0.0)) / (h * h);
                let src = case.source(&p);
                let scale = u(0.0, 0.0).abs().max(src.abs()).max(1.0);
                assert!((lap - src).abs() < 1e-3 * scale, "{case:?}: {lap} vs {src}");
                let grad = case.gradient(&p);
                let fd = [
                    (u(h, 0.0) - u(-h, 0.0)) / (2.0 * h),
                    (u(0.0, h) - u(0.0, -h)) / (2.0 * h),
                ];
                for a in 0..2 {
                    assert!((grad[a] - fd[a]).abs() < 1e-4 * grad[a].abs().max(1.0), "{case:?}");
                }
            }
        }
    }

    #[test]
    fn helmholtz_constraints() {
        for k in [1.0, 10.0, 100.0] {
            for c in make_test_suite(TestFamily::SinSin, Some(k), &Domain::UnitSquare, 20, 3).unwrap() {
                let (a, b) = (c.params[0], c.params[1]);
                assert!((a * a + b * b - k * k).abs() < 1e-9 * k * k);
                assert!(a > 0.0 && a <= k && b > 0.0 && b <= k);
            }
            for c in make_test_suite(TestFamily::SinSinh, Some(k), &Domain::UnitSquare, 20, 3).unwrap() {
                let (cc, d) = (c.params[0], c.params[1]);
                assert!((cc * cc - d * d - k * k).abs() < 1e-9 * k * k);
                assert!(d > 0.0 && cc > d && cc <= 2.0 * k * (1.0 + 1e-12));
            }
        }
        assert!(make_test_suite(TestFamily::SinSin, None, &Domain::UnitSquare, 1, 0).is_err());
        let fixed = TestCase::new(TestFamily::SinSinh, vec![102f64.sqrt(), 2f64.sqrt(), 0.0, 0.0]);
        assert!((fixed.helmholtz_k2() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn suites_are_deterministic_and_u1_sources_exterior() {
        let d = Domain::UnitSquare;
        let a = make_test_suite(TestFamily::U1, None, &d, 10, 7).unwrap();
        assert_eq!(a, make_test_suite(TestFamily::U1, None, &d, 10, 7).unwrap());
        for c in &a {
            assert!(!d.contains(&c.params));
        }
        let u1 = TestCase::new(TestFamily::U1, vec![3.0, 4.0]);
        assert!((u1.value(&[0.5, 0.5]) - (2.5f64 * 2.5 + 3.5 * 3.5).ln()).abs() < 1e-15);
        let u4 = TestCase::new(TestFamily::U4, vec![1.0, 1.0]);
        assert_eq!(u4.value(&[0.25, 0.5]), 0.75);
    }

    #[test]
    fn plane_wave_is_unit_wavenumber() {
        assert!((PLANE_WAVE.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let c = TestCase::new(TestFamily::PlaneWave3d, vec![]);
        let p = [0.1, 0.2, 0.3];
        let h = 1e-3;
        let mut lap = -6.0 * c.value(&p);
        for a in 0..3 {
            let mut q = p;
            q[a] += h;
            lap += c.value(&q);
            q[a] -= 2.0 * h;
            lap += c.value(&q);
        }
        assert!((lap / (h * h) + c.value(&p)).abs() < 1e-5);
    }

    #[test]
    fn partitions() {
        assert_eq!(
            MixedPartition::from_dirichlet(&[0, 2]).unwrap().dirichlet_segments(),
            vec![0, 2]
        );
        assert!(MixedPartition::from_dirichlet(&[0, 1, 2, 3]).is_err());
        assert!(MixedPartition::from_dirichlet(&[]).is_err());
        assert!(MixedPartition::from_dirichlet(&[4]).is_err());
    }

    #[test]
    fn eval_grid_masks() {
        let g = EvalGrid::standard(&Domain::UnitSquare);
        assert_eq!(g.len(), 10_000);
        assert!(g.inside.iter().all(|b| *b));
        assert_eq!(g.near_boundary.iter().filter(|b| !**b).count(), 90 * 90);
        let disk = EvalGrid::new(&Domain::unit_disk(), 40, 0.05);
        assert!(disk.inside.iter().any(|b| !*b));
    }

    #[test]
    fn exact_traces_reconstruct_through_the_field() {
        let grid = make_boundary_grid(&Domain::UnitSquare, 400).unwrap();
        let eval = EvalGrid::new(&Domain::UnitSquare, 50, DEFAULT_MARGIN);
        let case = TestCase::new(TestFamily::U5, vec![]);
        let (g, h) = case.traces(&grid);
        let field = reconstruct_field(&KernelSpec::Laplace2d, &grid, &g, &h, &eval)
            .unwrap()
            .with_exact(|p| case.value(&p));
        assert!(field.error().unwrap().unwrap() < 1e-3);
        let mut buf = Vec::new();
        field.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,y,u_pred_re,u_pred_im,u_exact,abs_err,flag\n"));
        assert_eq!(text.lines().count(), 2501);
    }
}
