//! Training data from fundamental solutions placed outside the domain.
//!
//! Each sample is a convex combination of a few radial solutions centered at
//! random exterior points. Their boundary values and outward normal
//! derivatives form an exact Dirichlet/Neumann pair for the governing
//! equation, which is then shifted and scaled to a common range.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BoundaryGrid, Domain, GeometryError};
use crate::kernels::{bessel, KernelError, KernelSpec};

/// Consecutive rejections tolerated before the source box is declared unusable.
pub const MAX_REJECTIONS: usize = 1_000_000;

/// Regeneration attempts for one sample before giving up.
const MAX_RETRIES: usize = 1000;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("invalid dataset configuration: {0}")]
    Config(String),
    #[error("degenerate sample: the Neumann trace vanishes")]
    Degenerate,
    #[error("source point {0:?} lies inside the domain")]
    SourceInside(Vec<f64>),
    #[error("dataset file: {0}")]
    Format(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// How a trace pair is brought to a common scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Subtract `g[0]`, then divide both traces by `max |h|`.
    LaplaceMode,
    /// Only the division by `max |h|`; constants do not solve Helmholtz.
    ScaleOnly,
}

impl NormMode {
    pub fn for_kernel(kernel: &KernelSpec) -> Self {
        if kernel.is_helmholtz() {
            NormMode::ScaleOnly
        } else {
            NormMode::LaplaceMode
        }
    }
}

/// Inverse data of a normalization: `raw = normalized · scale + constant`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormRecord {
    pub subtracted_constant: f64,
    pub scale: f64,
}

impl NormRecord {
    pub const IDENTITY: NormRecord = NormRecord {
        subtracted_constant: 0.0,
        scale: 1.0,
    };
}

/// One Dirichlet/Neumann sample on a boundary grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePair {
    pub g: Vec<f64>,
    pub h: Vec<f64>,
    pub norm: NormRecord,
}

/// Radial solution families used as building blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// `ln |x - s|²`
    LogSquared,
    /// `J0(k |x - s|)`
    J0,
    /// `Y0(k |x - s|)`
    Y0,
    /// `cos(k r) / (4π r)`
    SphericalCos,
    /// `sin(k r) / (4π r)`
    SphericalSin,
}

impl Basis {
    fn candidates(kernel: &KernelSpec) -> &'static [Basis] {
        match kernel {
            KernelSpec::Laplace2d => &[Basis::LogSquared],
            KernelSpec::Helmholtz2d { .. } => &[Basis::J0, Basis::Y0],
            KernelSpec::Helmholtz3d { .. } => &[Basis::SphericalCos, Basis::SphericalSin],
        }
    }

    /// `(φ(r), φ'(r))`.
    fn radial(self, k: f64, r: f64) -> (f64, f64) {
        match self {
            Basis::LogSquared => (2.0 * r.ln(), 2.0 / r),
            Basis::J0 => (bessel::j0(k * r), -k * bessel::j1(k * r)),
            Basis::Y0 => (bessel::y0(k * r), -k * bessel::y1(k * r)),
            Basis::SphericalCos | Basis::SphericalSin => {
                let (g, dg) = KernelSpec::Helmholtz3d { k }.radial(r);
                if self == Basis::SphericalCos {
                    (g.re, dg.re)
                } else {
                    (g.im, dg.im)
                }
            }
        }
    }
}

/// A weighted radial solution centered at an exterior point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceTerm {
    pub center: Vec<f64>,
    pub weight: f64,
    pub basis: Basis,
}

impl SourceTerm {
    /// Value and gradient of the term at `x`.
    pub fn eval(&self, kernel: &KernelSpec, x: &[f64]) -> (f64, Vec<f64>) {
        let k = kernel.wavenumber().unwrap_or(0.0);
        let d: Vec<f64> = x.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        let r = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (phi, dphi) = self.basis.radial(k, r);
        (
            self.weight * phi,
            d.iter().map(|v| self.weight * dphi * v / r).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kernel: KernelSpec,
    pub domain: Domain,
    pub n_points: usize,
    pub n_samples: usize,
    pub n_kernels_per_sample: usize,
    /// Per-axis `(lower, upper)` limits for source points.
    pub source_box: Vec<(f64, f64)>,
    pub min_boundary_distance: f64,
    pub seed: u64,
}

impl DatasetSpec {
    /// Defaults: 400 points, 10⁴ samples, three sources per sample drawn
    /// from `[-7, 7]^d`, at least 1e-3 away from the boundary.
    pub fn new(kernel: KernelSpec, domain: Domain) -> Self {
        let dim = domain.dim();
        Self {
            kernel,
            domain,
            n_points: 400,
            n_samples: 10_000,
            n_kernels_per_sample: 3,
            source_box: vec![(-7.0, 7.0); dim],
            min_boundary_distance: 1e-3,
            seed: 0,
        }
    }

    pub fn norm_mode(&self) -> NormMode {
        NormMode::for_kernel(&self.kernel)
    }

    pub fn validate(&self) -> Result<(), SynthesisError> {
        let cfg = |m: String| Err(SynthesisError::Config(m));
        self.kernel.validate()?;
        self.domain.validate()?;
        if self.kernel.dim() != self.domain.dim() {
            return cfg(format!(
                "{} kernel on a {}-dimensional domain",
                self.kernel.name(),
                self.domain.dim()
            ));
        }
        if self.n_samples == 0 || self.n_kernels_per_sample == 0 {
            return cfg("sample and kernel counts must be positive".into());
        }
        if !(self.min_boundary_distance > 0.0) {
            return cfg(format!(
                "min_boundary_distance must be positive, got {}",
                self.min_boundary_distance
            ));
        }
        if self.source_box.len() != self.domain.dim() {
            return cfg(format!(
                "source box has {} axes, domain has {}",
                self.source_box.len(),
                self.domain.dim()
            ));
        }
        for ((lo, hi), (dlo, dhi)) in self.source_box.iter().zip(self.domain.bounds()) {
            if !(*lo < dlo && *hi > dhi) {
                return cfg(format!(
                    "source box [{lo}, {hi}] does not strictly contain the domain extent [{dlo}, {dhi}]"
                ));
            }
        }
        Ok(())
    }

    pub fn grid<const D: usize>(&self) -> Result<BoundaryGrid<D>, SynthesisError> {
        Ok(BoundaryGrid::for_domain(&self.domain, self.n_points)?)
    }

    /// Generator for sample `index`, independent of every other sample.
    pub fn sample_rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        rng
    }

    fn acceptable(&self, p: &[f64]) -> bool {
        // Cheap accept for points well outside the bounding box.
        let far = p
            .iter()
            .zip(self.domain.bounds())
            .any(|(v, (lo, hi))| *v < lo - self.min_boundary_distance || *v > hi + self.min_boundary_distance);
        far || (!self.domain.contains(p) && self.domain.distance_to_boundary(p) >= self.min_boundary_distance)
    }
}

/// Uniform exterior points, resampled while inside or too close to the boundary.
pub fn sample_source_points<R: Rng>(
    spec: &DatasetSpec,
    rng: &mut R,
    n: usize,
) -> Result<Vec<Vec<f64>>, SynthesisError> {
    spec.validate()?;
    draw_sources(spec, rng, n)
}

fn draw_sources<R: Rng>(spec: &DatasetSpec, rng: &mut R, n: usize) -> Result<Vec<Vec<f64>>, SynthesisError> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut rejections = 0;
        loop {
            let p: Vec<f64> = spec
                .source_box
                .iter()
                .map(|&(lo, hi)| rng.random_range(lo..hi))
                .collect();
            if spec.acceptable(&p) {
                out.push(p);
                break;
            }
            rejections += 1;
            if rejections >= MAX_REJECTIONS {
                return Err(SynthesisError::Config(format!(
                    "{MAX_REJECTIONS} consecutive source points rejected; enlarge the source box"
                )));
            }
        }
    }
    Ok(out)
}

/// Stick-breaking weights: `c_i ~ U[0, 1 - Σ_{j<i} c_j]`, the last one closes the sum.
pub fn sample_simplex_weights<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    assert!(n >= 1, "at least one weight is required");
    let mut weights = Vec::with_capacity(n);
    let mut used = 0.0;
    for _ in 0..n - 1 {
        let c = rng.random::<f64>() * (1.0 - used);
        weights.push(c);
        used += c;
    }
    weights.push(1.0 - used);
    weights
}

/// Raw (unnormalized) traces of `Σ terms` on `grid`.
pub fn synthesize_trace_pair<const D: usize>(
    kernel: &KernelSpec,
    grid: &BoundaryGrid<D>,
    terms: &[SourceTerm],
) -> Result<TracePair, SynthesisError> {
    if kernel.dim() != D {
        return Err(KernelError::DimensionMismatch {
            kernel: kernel.name(),
            expected: kernel.dim(),
            got: D,
        }
        .into());
    }
    for t in terms {
        if t.center.len() != D {
            return Err(KernelError::DimensionMismatch {
                kernel: kernel.name(),
                expected: D,
                got: t.center.len(),
            }
            .into());
        }
        if grid.domain().contains(&t.center) {
            return Err(SynthesisError::SourceInside(t.center.clone()));
        }
    }
    let n = grid.len();
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    for (i, (p, nv)) in grid.points().iter().zip(grid.normals()).enumerate() {
        for t in terms {
            let (v, grad) = t.eval(kernel, p);
            g[i] += v;
            h[i] += grad.iter().zip(nv).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Ok(TracePair {
        g,
        h,
        norm: NormRecord::IDENTITY,
    })
}

/// Normalizes a raw pair and records how to undo it.
pub fn normalize_pair(pair: &TracePair, mode: NormMode) -> Result<TracePair, SynthesisError> {
    let scale = pair.h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(SynthesisError::Degenerate);
    }
    let shift = match mode {
        NormMode::LaplaceMode => pair.g.first().copied().unwrap_or(0.0),
        NormMode::ScaleOnly => 0.0,
    };
    Ok(TracePair {
        g: pair.g.iter().map(|v| (v - shift) / scale).collect(),
        h: pair.h.iter().map(|v| v / scale).collect(),
        norm: NormRecord {
            subtracted_constant: shift,
            scale,
        },
    })
}

pub fn denormalize(pair: &TracePair) -> TracePair {
    let NormRecord {
        subtracted_constant,
        scale,
    } = pair.norm;
    TracePair {
        g: pair.g.iter().map(|v| v * scale + subtracted_constant).collect(),
        h: pair.h.iter().map(|v| v * scale).collect(),
        norm: NormRecord::IDENTITY,
    }
}

/// Normalized samples together with the spec that generated them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub pairs: Vec<TracePair>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    spec: DatasetSpec,
    normalization: NormMode,
    n_points: usize,
    n_samples: usize,
    norm_records: Vec<NormRecord>,
}

impl Dataset {
    pub fn n_points(&self) -> usize {
        self.spec.n_points
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Rows `kind,n_points`, then `<kernel>,<n>`, then alternating `g,...` and `h,...` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), SynthesisError> {
        writeln!(w, "kind,n_points")?;
        writeln!(w, "{},{}", self.spec.kernel.name(), self.n_points())?;
        for pair in &self.pairs {
            for (kind, values) in [("g", &pair.g), ("h", &pair.h)] {
                write!(w, "{kind}")?;
                for v in values {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    /// JSON record of the generating spec and per-sample normalization.
    pub fn sidecar_json(&self) -> Result<String, SynthesisError> {
        let sidecar = Sidecar {
            spec: self.spec.clone(),
            normalization: self.spec.norm_mode(),
            n_points: self.n_points(),
            n_samples: self.len(),
            norm_records: self.pairs.iter().map(|p| p.norm).collect(),
        };
        Ok(serde_json::to_string_pretty(&sidecar)?)
    }

    pub fn read<R: BufRead>(csv: R, sidecar_json: &str) -> Result<Self, SynthesisError> {
        let sidecar: Sidecar = serde_json::from_str(sidecar_json)?;
        let fmt = |line: usize, m: String| SynthesisError::Format(format!("line {line}: {m}"));
        let mut lines = csv.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, Ok(l))) if l.trim() == "kind,n_points" => {}
            _ => return Err(fmt(1, "expected header `kind,n_points`".into())),
        }
        let (_, meta) = lines.next().ok_or_else(|| fmt(2, "missing metadata row".into()))?;
        let meta = meta?;
        let n: usize = meta
            .split(',')
            .nth(1)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| fmt(2, format!("bad metadata row `{meta}`")))?;
        if n != sidecar.n_points || n != sidecar.spec.n_points {
            return Err(fmt(2, format!("{n} points in csv, {} in sidecar", sidecar.n_points)));
        }
        let mut pairs = Vec::with_capacity(sidecar.n_samples);
        let mut pending: Option<Vec<f64>> = None;
        for (ln, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let kind = fields.next().unwrap_or_default();
            let values = fields
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| fmt(ln, format!("non-numeric value `{v}`")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            if values.len() != n {
                return Err(fmt(ln, format!("expected {n} values, got {}", values.len())));
            }
            match (kind, pending.take()) {
                ("g", None) => pending = Some(values),
                ("h", Some(g)) => {
                    let norm = *sidecar
                        .norm_records
                        .get(pairs.len())
                        .ok_or_else(|| fmt(ln, "more samples than normalization records".into()))?;
                    pairs.push(TracePair { g, h: values, norm });
                }
                (other, _) => return Err(fmt(ln, format!("unexpected row kind `{other}`"))),
            }
        }
        if pending.is_some() || pairs.len() != sidecar.n_samples {
            return Err(SynthesisError::Format(format!(
                "expected {} complete samples, found {}",
                sidecar.n_samples,
                pairs.len()
            )));
        }
        Ok(Dataset {
            spec: sidecar.spec,
            pairs,
        })
    }
}

/// Draws the source terms of sample `index`.
pub fn sample_terms(spec: &DatasetSpec, rng: &mut ChaCha8Rng) -> Result<Vec<SourceTerm>, SynthesisError> {
    let n = spec.n_kernels_per_sample;
    let centers = draw_sources(spec, rng, n)?;
    let weights = sample_simplex_weights(n, rng);
    let candidates = Basis::candidates(&spec.kernel);
    Ok(centers
        .into_iter()
        .zip(weights)
        .map(|(center, weight)| {
            let basis = if candidates.len() == 1 {
                candidates[0]
            } else {
                candidates[usize::from(rng.random::<bool>())]
            };
            SourceTerm { center, weight, basis }
        })
        .collect())
}

fn build_sample<const D: usize>(
    spec: &DatasetSpec,
    grid: &BoundaryGrid<D>,
    index: usize,
) -> Result<TracePair, SynthesisError> {
    let mut rng = spec.sample_rng(index);
    for _ in 0..MAX_RETRIES {
        let terms = sample_terms(spec, &mut rng)?;
        let raw = synthesize_trace_pair(&spec.kernel, grid, &terms)?;
        if raw.g.iter().chain(&raw.h).any(|v| !v.is_finite()) {
            continue;
        }
        match normalize_pair(&raw, spec.norm_mode()) {
            Ok(pair) => return Ok(pair),
            Err(SynthesisError::Degenerate) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(SynthesisError::Config(format!(
        "sample {index}: no usable sample after {MAX_RETRIES} attempts"
    )))
}

fn build_with_grid<const D: usize>(spec: &DatasetSpec) -> Result<Dataset, SynthesisError> {
    let grid = spec.grid::<D>()?;
    let pairs = (0..spec.n_samples)
        .into_par_iter()
        .map(|i| build_sample(spec, &grid, i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset {
        spec: spec.clone(),
        pairs,
    })
}

/// Generates `spec.n_samples` normalized pairs. Sample `i` depends only on
/// `(seed, i)`, so the result does not depend on the thread count.
pub fn build_dataset(spec: &DatasetSpec) -> Result<Dataset, SynthesisError> {
    spec.validate()?;
    match spec.domain.dim() {
        2 => build_with_grid::<2>(spec),
        3 => build_with_grid::<3>(spec),
        d => Err(SynthesisError::Config(format!("unsupported dimension {d}"))),
    }
}
