//! Bias-free linear boundary-to-boundary operators.
//!
//! The operator maps the known trace data on the boundary to the unknown
//! complementary data: Dirichlet values to Neumann values for a pure
//! Dirichlet problem, and `(g on Γ_D, h on Γ_N) -> (h on Γ_D, g on Γ_N)` for
//! mixed problems. It is a product of dense matrices, trained with Adam on
//! closed-form gradients or fitted directly by ridge-regularized least squares.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BoundaryGrid, Domain};
use crate::kernels::KernelSpec;
use crate::synthesis::{Dataset, NormMode};

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("expected a vector of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("layout error: {0}")]
    Layout(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("normal equations are ill-conditioned (condition estimate {condition:e})")]
    IllConditioned { condition: f64 },
    #[error("model file: {0}")]
    Model(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Trace {
    /// Boundary values.
    #[serde(rename = "g")]
    Dirichlet,
    /// Outward normal derivatives.
    #[serde(rename = "h")]
    Neumann,
}

/// A contiguous run of vector slots: one trace on one segment (or the whole boundary).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutBlock {
    pub trace: Trace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment: Option<u8>,
    pub len: usize,
}

/// Which boundary point and trace each input and output slot carries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub n_points: usize,
    pub input: Vec<LayoutBlock>,
    pub output: Vec<LayoutBlock>,
}

/// One resolved slot: trace type and boundary point index.
pub type Slot = (Trace, usize);

impl Layout {
    /// Dirichlet data in, Neumann data out, on the whole boundary.
    pub fn dirichlet(n_points: usize) -> Self {
        Self {
            n_points,
            input: vec![LayoutBlock {
                trace: Trace::Dirichlet,
                segment: None,
                len: n_points,
            }],
            output: vec![LayoutBlock {
                trace: Trace::Neumann,
                segment: None,
                len: n_points,
            }],
        }
    }

    /// Input `[g on Γ_D, h on Γ_N]`, output `[h on Γ_D, g on Γ_N]`, each in grid order.
    pub fn mixed<const D: usize>(grid: &BoundaryGrid<D>, dirichlet_segments: &[u8]) -> Result<Self, OperatorError> {
        let mut labels: Vec<u8> = grid.segments().to_vec();
        labels.sort_unstable();
        labels.dedup();
        if let Some(bad) = dirichlet_segments.iter().find(|s| !labels.contains(s)) {
            return Err(OperatorError::Layout(format!("grid has no segment {bad}")));
        }
        let (dir, neu): (Vec<u8>, Vec<u8>) = labels.iter().partition(|s| dirichlet_segments.contains(s));
        if dir.is_empty() || neu.is_empty() {
            return Err(OperatorError::Layout(
                "a mixed problem needs Dirichlet and Neumann segments".into(),
            ));
        }
        let block = |trace, s: u8| LayoutBlock {
            trace,
            segment: Some(s),
            len: grid.segment_indices(s).len(),
        };
        let input = dir
            .iter()
            .map(|&s| block(Trace::Dirichlet, s))
            .chain(neu.iter().map(|&s| block(Trace::Neumann, s)));
        let output = dir
            .iter()
            .map(|&s| block(Trace::Neumann, s))
            .chain(neu.iter().map(|&s| block(Trace::Dirichlet, s)));
        Ok(Self {
            n_points: grid.len(),
            input: input.collect(),
            output: output.collect(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input.iter().map(|b| b.len).sum()
    }

    pub fn output_dim(&self) -> usize {
        self.output.iter().map(|b| b.len).sum()
    }

    pub fn is_dirichlet(&self) -> bool {
        *self == Layout::dirichlet(self.n_points)
    }

    /// Segments whose Dirichlet data are given.
    pub fn dirichlet_segments(&self) -> Vec<Option<u8>> {
        self.input
            .iter()
            .filter(|b| b.trace == Trace::Dirichlet)
            .map(|b| b.segment)
            .collect()
    }

    /// Resolves input and output slots against per-point segment labels.
    pub fn resolve(&self, segments: &[u8]) -> Result<(Vec<Slot>, Vec<Slot>), OperatorError> {
        if segments.len() != self.n_points {
            return Err(OperatorError::Layout(format!(
                "layout expects {} boundary points, grid has {}",
                self.n_points,
                segments.len()
            )));
        }
        let expand = |blocks: &[LayoutBlock]| -> Result<Vec<Slot>, OperatorError> {
            let mut slots = Vec::new();
            for b in blocks {
                let idx: Vec<usize> = match b.segment {
                    None => (0..segments.len()).collect(),
                    Some(s) => (0..segments.len()).filter(|&i| segments[i] == s).collect(),
                };
                if idx.len() != b.len {
                    return Err(OperatorError::Layout(format!(
                        "block {:?} on segment {:?} expects {} points, grid has {}",
                        b.trace,
                        b.segment,
                        b.len,
                        idx.len()
                    )));
                }
                slots.extend(idx.into_iter().map(|i| (b.trace, i)));
            }
            Ok(slots)
        };
        Ok((expand(&self.input)?, expand(&self.output)?))
    }
}

/// Product of bias-free dense layers, applied last-to-first as `W_L ⋯ W_1 v`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBoundaryOperator {
    pub layers: Vec<DMatrix<f64>>,
    pub layout: Layout,
    /// Problem the operator was trained for, when known.
    pub kernel: Option<KernelSpec>,
    pub domain: Option<Domain>,
    pub normalization: NormMode,
}

impl LinearBoundaryOperator {
    pub fn new(layers: Vec<DMatrix<f64>>, layout: Layout) -> Result<Self, OperatorError> {
        let op = Self {
            layers,
            layout,
            kernel: None,
            domain: None,
            normalization: NormMode::LaplaceMode,
        };
        op.check_shapes()?;
        Ok(op)
    }

    pub fn for_problem(mut self, kernel: KernelSpec, domain: Domain) -> Self {
        self.normalization = NormMode::for_kernel(&kernel);
        self.kernel = Some(kernel);
        self.domain = Some(domain);
        self
    }

    fn check_shapes(&self) -> Result<(), OperatorError> {
        let first = self
            .layers
            .first()
            .ok_or_else(|| OperatorError::Layout("operator has no layers".into()))?;
        if first.ncols() != self.layout.input_dim() {
            return Err(OperatorError::Layout(format!(
                "first layer takes {} inputs, layout provides {}",
                first.ncols(),
                self.layout.input_dim()
            )));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[1].ncols() != pair[0].nrows() {
                return Err(OperatorError::Layout(format!(
                    "layer {} has {} columns but layer {} has {} rows",
                    i + 1,
                    pair[1].ncols(),
                    i,
                    pair[0].nrows()
                )));
            }
        }
        let last = self.layers.last().expect("nonempty");
        if last.nrows() != self.layout.output_dim() {
            return Err(OperatorError::Layout(format!(
                "last layer produces {} outputs, layout expects {}",
                last.nrows(),
                self.layout.output_dim()
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layout.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layout.output_dim()
    }

    /// Collapses the stack into a single matrix.
    pub fn effective_matrix(&self) -> DMatrix<f64> {
        self.layers
            .iter()
            .skip(1)
            .fold(self.layers[0].clone(), |acc, w| w * acc)
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>, OperatorError> {
        if v.len() != self.input_dim() {
            return Err(OperatorError::DimensionMismatch {
                expected: self.input_dim(),
                got: v.len(),
            });
        }
        let mut x = nalgebra::DVector::from_column_slice(v);
        for w in &self.layers {
            x = w * x;
        }
        Ok(x.as_slice().to_vec())
    }

    /// Checks that the layout fits a grid's point count and segment labels.
    pub fn check_grid<const D: usize>(&self, grid: &BoundaryGrid<D>) -> Result<(Vec<Slot>, Vec<Slot>), OperatorError> {
        if let Some(domain) = &self.domain {
            if domain != grid.domain() {
                return Err(OperatorError::Layout(format!(
                    "operator was trained on a {} domain, grid is on a {}",
                    domain.name(),
                    grid.domain().name()
                )));
            }
        }
        self.layout.resolve(grid.segments())
    }

    /// Predicts the unknown traces from raw (unnormalized) known traces.
    ///
    /// In Laplace mode the value at the first Dirichlet slot is removed before
    /// the map and restored on the predicted Dirichlet outputs, matching the
    /// training normalization. The scale normalization cancels for a linear
    /// map and is skipped.
    pub fn predict(
        &self,
        input: &[f64],
        input_slots: &[Slot],
        output_slots: &[Slot],
    ) -> Result<Vec<f64>, OperatorError> {
        if input.len() != input_slots.len() {
            return Err(OperatorError::DimensionMismatch {
                expected: input_slots.len(),
                got: input.len(),
            });
        }
        let anchor = match self.normalization {
            NormMode::LaplaceMode => input_slots
                .iter()
                .position(|(t, _)| *t == Trace::Dirichlet)
                .map_or(0.0, |i| input[i]),
            NormMode::ScaleOnly => 0.0,
        };
        let shifted: Vec<f64> = input
            .iter()
            .zip(input_slots)
            .map(|(v, (t, _))| if *t == Trace::Dirichlet { v - anchor } else { *v })
            .collect();
        let mut out = self.apply(&shifted)?;
        for (v, (t, _)) in out.iter_mut().zip(output_slots) {
            if *t == Trace::Dirichlet {
                *v += anchor;
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String, OperatorError> {
        let file = ModelFile {
            kernel: self.kernel,
            domain: self.domain.clone(),
            n_points: self.layout.n_points,
            normalization: self.normalization,
            layout: self.layout.clone(),
            layers: self
                .layers
                .iter()
                .map(|w| LayerRecord {
                    rows: w.nrows(),
                    cols: w.ncols(),
                    data: w.transpose().as_slice().to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self, OperatorError> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.n_points != file.layout.n_points {
            return Err(OperatorError::Model(format!(
                "n_points {} disagrees with layout ({})",
                file.n_points, file.layout.n_points
            )));
        }
        let layers = file
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                if l.data.len() != l.rows * l.cols {
                    return Err(OperatorError::Model(format!(
                        "layer {i}: {} entries for a {}x{} matrix",
                        l.data.len(),
                        l.rows,
                        l.cols
                    )));
                }
                Ok(DMatrix::from_row_slice(l.rows, l.cols, &l.data))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let op = Self {
            layers,
            layout: file.layout,
            kernel: file.kernel,
            domain: file.domain,
            normalization: file.normalization,
        };
        op.check_shapes()?;
        Ok(op)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), OperatorError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, OperatorError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    rows: usize,
    cols: usize,
    /// Row-major entries.
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    kernel: Option<KernelSpec>,
    domain: Option<Domain>,
    n_points: usize,
    normalization: NormMode,
    layout: Layout,
    layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Weight of the residual on Dirichlet-side outputs (Neumann data on Γ_D).
    pub lambda1: f64,
    /// Weight of the residual on Neumann-side outputs (Dirichlet data on Γ_N).
    pub lambda2: f64,
    pub seed: u64,
    pub checkpoint_on_best: bool,
    /// Hidden widths of a stacked linear network; empty for a single matrix.
    pub hidden: Vec<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 1000,
            epochs: 50_000,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            lambda1: 1.0,
            lambda2: 1.0,
            seed: 0,
            checkpoint_on_best: true,
            hidden: Vec::new(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self, n_samples: usize) -> Result<(), OperatorError> {
        let bad = |m: String| Err(OperatorError::Config(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be nonnegative, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.batch_size > n_samples {
            return bad(format!("batch size {} must lie in [1, {n_samples}]", self.batch_size));
        }
        if !(self.lambda1 > 0.0 && self.lambda2 > 0.0) {
            return bad("loss weights must be positive".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("Adam parameters out of range".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss of every epoch.
    pub losses: Vec<f64>,
    pub best_loss: f64,
    /// Zero-based epoch at which `best_loss` was reached.
    pub best_epoch: usize,
    pub wall_time: f64,
}

impl TrainReport {
    /// `epoch,mean_loss,best_loss`, one row per epoch.
    pub fn write_log<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,mean_loss,best_loss")?;
        let mut best = f64::INFINITY;
        for (e, l) in self.losses.iter().enumerate() {
            best = best.min(*l);
            writeln!(w, "{e},{l},{best}")?;
        }
        Ok(())
    }
}

/// Column-per-sample training matrices with per-output loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    /// `n_in × N`
    pub x: DMatrix<f64>,
    /// `n_out × N`
    pub t: DMatrix<f64>,
    pub layout: Layout,
    pub output_slots: Vec<Slot>,
}

impl TrainingSet {
    pub fn new(
        x: DMatrix<f64>,
        t: DMatrix<f64>,
        layout: Layout,
        output_slots: Vec<Slot>,
    ) -> Result<Self, OperatorError> {
        if x.ncols() != t.ncols() || x.nrows() != layout.input_dim() || t.nrows() != layout.output_dim() {
            return Err(OperatorError::Layout(format!(
                "training matrices {}x{} / {}x{} do not match layout {}→{}",
                x.nrows(),
                x.ncols(),
                t.nrows(),
                t.ncols(),
                layout.input_dim(),
                layout.output_dim()
            )));
        }
        if output_slots.len() != t.nrows() {
            return Err(OperatorError::Layout(
                "output slot count differs from target rows".into(),
            ));
        }
        Ok(Self {
            x,
            t,
            layout,
            output_slots,
        })
    }

    /// Gathers the layout's slots from a dataset.
    ///
    /// Laplace-mode samples are re-anchored so that the first Dirichlet input
    /// slot is zero; with a pure Dirichlet layout that slot is point 0 and the
    /// stored data are unchanged.
    pub fn from_dataset<const D: usize>(
        dataset: &Dataset,
        grid: &BoundaryGrid<D>,
        layout: &Layout,
    ) -> Result<Self, OperatorError> {
        if grid.len() != dataset.n_points() {
            return Err(OperatorError::Layout(format!(
                "dataset has {} points per trace, grid has {}",
                dataset.n_points(),
                grid.len()
            )));
        }
        let (ins, outs) = layout.resolve(grid.segments())?;
        let anchor_slot = match dataset.spec.norm_mode() {
            NormMode::LaplaceMode => ins.iter().find(|(t, _)| *t == Trace::Dirichlet).map(|&(_, i)| i),
            NormMode::ScaleOnly => None,
        };
        let n = dataset.len();
        let mut x = DMatrix::zeros(ins.len(), n);
        let mut t = DMatrix::zeros(outs.len(), n);
        for (c, pair) in dataset.pairs.iter().enumerate() {
            let shift = anchor_slot.map_or(0.0, |i| pair.g[i]);
            let value = |(trace, i): Slot| match trace {
                Trace::Dirichlet => pair.g[i] - shift,
                Trace::Neumann => pair.h[i],
            };
            for (r, s) in ins.iter().enumerate() {
                x[(r, c)] = value(*s);
            }
            for (r, s) in outs.iter().enumerate() {
                t[(r, c)] = value(*s);
            }
        }
        Self::new(x, t, layout.clone(), outs)
    }

    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }

    /// λ per output row: λ1 where the output is Neumann data on Γ_D, λ2 where it is Dirichlet data on Γ_N.
    pub fn row_weights(&self, cfg: &TrainingConfig) -> Vec<f64> {
        self.output_slots
            .iter()
            .map(|(t, _)| if *t == Trace::Neumann { cfg.lambda1 } else { cfg.lambda2 })
            .collect()
    }

    fn gather(&self, idx: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut xb = DMatrix::zeros(self.x.nrows(), idx.len());
        let mut tb = DMatrix::zeros(self.t.nrows(), idx.len());
        for (c, &i) in idx.iter().enumerate() {
            xb.column_mut(c).copy_from(&self.x.column(i));
            tb.column_mut(c).copy_from(&self.t.column(i));
        }
        (xb, tb)
    }
}

/// Weighted loss `(1/B) Σ_b (1/n_out) Σ_s λ_s (pred - target)²`.
pub fn compute_loss(op: &LinearBoundaryOperator, set: &TrainingSet, cfg: &TrainingConfig) -> f64 {
    let pred = forward(&op.layers, &set.x);
    weighted_loss(
        &(pred.last().expect("at least one layer") - &set.t),
        &set.row_weights(cfg),
    )
}

fn weighted_loss(resid: &DMatrix<f64>, lambda: &[f64]) -> f64 {
    let (n, b) = resid.shape();
    let mut total = 0.0;
    for c in 0..b {
        for (r, l) in lambda.iter().enumerate().take(n) {
            total += l * resid[(r, c)] * resid[(r, c)];
        }
    }
    total / (n * b) as f64
}

/// Activations `[X, W1 X, W2 W1 X, ...]`, excluding the input.
fn forward(layers: &[DMatrix<f64>], x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let mut acts: Vec<DMatrix<f64>> = Vec::with_capacity(layers.len());
    for w in layers {
        let input = acts.last().unwrap_or(x);
        let mut out = DMatrix::zeros(w.nrows(), input.ncols());
        out.gemm(1.0, w, input, 0.0);
        acts.push(out);
    }
    acts
}

/// Loss and its exact gradient with respect to every layer.
pub fn loss_and_gradients(
    layers: &[DMatrix<f64>],
    x: &DMatrix<f64>,
    t: &DMatrix<f64>,
    lambda: &[f64],
) -> (f64, Vec<DMatrix<f64>>) {
    let acts = forward(layers, x);
    let mut delta = acts.last().expect("at least one layer") - t;
    let loss = weighted_loss(&delta, lambda);
    let scale = 2.0 / (delta.nrows() * delta.ncols()) as f64;
    for (r, l) in lambda.iter().enumerate() {
        delta.row_mut(r).scale_mut(scale * l);
    }
    let mut grads = vec![DMatrix::zeros(0, 0); layers.len()];
    for l in (0..layers.len()).rev() {
        let input = if l == 0 { x } else { &acts[l - 1] };
        let mut g = DMatrix::zeros(delta.nrows(), input.nrows());
        // δ · inputᵀ, computed as (input · δᵀ)ᵀ to stay on the fast gemm path.
        let input_t = input.transpose();
        g.gemm(1.0, &delta, &input_t, 0.0);
        grads[l] = g;
        if l > 0 {
            let mut next = DMatrix::zeros(layers[l].ncols(), delta.ncols());
            next.gemm_tr(1.0, &layers[l], &delta, 0.0);
            delta = next;
        }
    }
    (loss, grads)
}

fn initial_layers(layout: &Layout, cfg: &TrainingConfig) -> Vec<DMatrix<f64>> {
    let (n_in, n_out) = (layout.input_dim(), layout.output_dim());
    if cfg.hidden.is_empty() {
        return vec![DMatrix::zeros(n_out, n_in)];
    }
    // Uniform in ±1/√fan_in, as for standard dense layers.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_1a7e);
    let mut dims = vec![n_in];
    dims.extend(&cfg.hidden);
    dims.push(n_out);
    dims.windows(2)
        .map(|d| {
            let bound = 1.0 / (d[0] as f64).sqrt();
            DMatrix::from_fn(d[1], d[0], |_, _| rng.random_range(-bound..bound))
        })
        .collect()
}

/// Mini-batch Adam on all weights; returns the best-loss checkpoint.
pub fn train_adam(
    set: &TrainingSet,
    cfg: &TrainingConfig,
) -> Result<(LinearBoundaryOperator, TrainReport), OperatorError> {
    train_adam_from(initial_layers(&set.layout, cfg), set, cfg)
}

/// [`train_adam`] starting from given layers.
pub fn train_adam_from(
    layers: Vec<DMatrix<f64>>,
    set: &TrainingSet,
    cfg: &TrainingConfig,
) -> Result<(LinearBoundaryOperator, TrainReport), OperatorError> {
    adam(layers, set, cfg, true)
}

/// Second moments `X Xᵀ`, `T Xᵀ` and row sums of `T²` of a sample block.
struct Moments {
    xx: DMatrix<f64>,
    tx: DMatrix<f64>,
    tt: Vec<f64>,
}

impl Moments {
    fn of(x: &DMatrix<f64>, t: &DMatrix<f64>) -> Self {
        let xt = x.transpose();
        let n = x.nrows();
        let mut xx = DMatrix::zeros(n, n);
        // symmetric: upper block triangle only, then mirror
        let bs = n.div_ceil(4).max(1);
        for r0 in (0..n).step_by(bs) {
            let rn = bs.min(n - r0);
            for c0 in (r0..n).step_by(bs) {
                let cn = bs.min(n - c0);
                xx.view_mut((r0, c0), (rn, cn))
                    .gemm(1.0, &x.rows(r0, rn), &xt.columns(c0, cn), 0.0);
            }
        }
        for c in 0..n {
            for r in c + 1..n {
                xx[(r, c)] = xx[(c, r)];
            }
        }
        let mut tx = DMatrix::zeros(t.nrows(), n);
        tx.gemm(1.0, t, &xt, 0.0);
        let tt = t.row_iter().map(|r| r.norm_squared()).collect();
        Self { xx, tx, tt }
    }

    fn minus(&self, other: &Moments) -> Self {
        Self {
            xx: &self.xx - &other.xx,
            tx: &self.tx - &other.tx,
            tt: self.tt.iter().zip(&other.tt).map(|(a, b)| a - b).collect(),
        }
    }

    /// Loss and gradient of a single layer on the block, as [`loss_and_gradients`].
    fn loss_and_gradient(&self, w: &DMatrix<f64>, lambda: &[f64], batch: usize) -> (f64, DMatrix<f64>) {
        let mut wxx = DMatrix::zeros(w.nrows(), w.ncols());
        wxx.gemm(1.0, w, &self.xx, 0.0);
        let denom = (w.nrows() * batch) as f64;
        let mut loss = 0.0;
        for (r, l) in lambda.iter().enumerate() {
            let (mut quad, mut cross) = (0.0, 0.0);
            for c in 0..w.ncols() {
                quad += wxx[(r, c)] * w[(r, c)];
                cross += w[(r, c)] * self.tx[(r, c)];
            }
            loss += l * (quad - 2.0 * cross + self.tt[r]);
        }
        let mut grad = wxx - &self.tx;
        for (r, l) in lambda.iter().enumerate() {
            grad.row_mut(r).scale_mut(2.0 * l / denom);
        }
        // expanded form: absolute rounding ~ε·Σt², clamp the tiny negatives
        let loss = loss / denom;
        (if loss < 0.0 { 0.0 } else { loss }, grad)
    }
}

fn adam(
    mut layers: Vec<DMatrix<f64>>,
    set: &TrainingSet,
    cfg: &TrainingConfig,
    use_moments: bool,
) -> Result<(LinearBoundaryOperator, TrainReport), OperatorError> {
    cfg.validate(set.len())?;
    LinearBoundaryOperator::new(layers.clone(), set.layout.clone())?;
    let start = Instant::now();
    let lambda = set.row_weights(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut m: Vec<DMatrix<f64>> = layers.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect();
    let mut v = m.clone();
    let mut step = 0i32;
    let mut best = (f64::INFINITY, 0usize, layers.clone());
    let mut losses = Vec::with_capacity(cfg.epochs);
    // A single layer only needs second moments of each batch. Batches
    // partition the set, so the last one follows from the totals.
    let totals = (use_moments && layers.len() == 1).then(|| Moments::of(&set.x, &set.t));
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        let moments: Option<Vec<Moments>> = totals.as_ref().map(|total| {
            let mut ms: Vec<Moments> = batches[..batches.len() - 1]
                .iter()
                .map(|idx| {
                    let (xb, tb) = set.gather(idx);
                    Moments::of(&xb, &tb)
                })
                .collect();
            let mut rest = Moments {
                xx: total.xx.clone(),
                tx: total.tx.clone(),
                tt: total.tt.clone(),
            };
            for mb in &ms {
                rest = rest.minus(mb);
            }
            ms.push(rest);
            ms
        });
        let mut epoch_loss = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            let (loss, grads) = match &moments {
                Some(ms) => {
                    let (loss, g) = ms[b].loss_and_gradient(&layers[0], &lambda, idx.len());
                    (loss, vec![g])
                }
                None => {
                    let (xb, tb) = set.gather(idx);
                    loss_and_gradients(&layers, &xb, &tb, &lambda)
                }
            };
            if !loss.is_finite() {
                return Err(OperatorError::Diverged { epoch, loss });
            }
            epoch_loss += loss;
            step += 1;
            let bc1 = 1.0 - cfg.adam_beta1.powi(step);
            let bc2 = 1.0 - cfg.adam_beta2.powi(step);
            for ((w, g), (mw, vw)) in layers.iter_mut().zip(&grads).zip(m.iter_mut().zip(v.iter_mut())) {
                let (w, g) = (w.as_mut_slice(), g.as_slice());
                let (mw, vw) = (mw.as_mut_slice(), vw.as_mut_slice());
                for i in 0..w.len() {
                    mw[i] = cfg.adam_beta1 * mw[i] + (1.0 - cfg.adam_beta1) * g[i];
                    vw[i] = cfg.adam_beta2 * vw[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
                    w[i] -= cfg.learning_rate * (mw[i] / bc1) / ((vw[i] / bc2).sqrt() + cfg.adam_eps);
                }
            }
        }
        let mean = epoch_loss / batches.len() as f64;
        losses.push(mean);
        if mean < best.0 {
            best = (
                mean,
                epoch,
                if cfg.checkpoint_on_best {
                    layers.clone()
                } else {
                    Vec::new()
                },
            );
        }
    }
    let (best_loss, best_epoch, best_layers) = best;
    let final_layers = if cfg.checkpoint_on_best && !best_layers.is_empty() {
        best_layers
    } else {
        layers
    };
    let op = LinearBoundaryOperator::new(final_layers, set.layout.clone())?;
    let report = TrainReport {
        losses,
        best_loss,
        best_epoch,
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok((op, report))
}

/// Ridge-regularized least-squares fit of a single matrix.
#[derive(Debug, Clone)]
pub struct LeastSquaresFit {
    pub operator: LinearBoundaryOperator,
    /// Training loss of the fitted matrix, with unit loss weights.
    pub residual_loss: f64,
    pub ridge: f64,
}

/// Solves `W (X Xᵀ + εI) = T Xᵀ` with `ε = 1e-10 · trace(X Xᵀ) / n_in`.
pub fn fit_least_squares(set: &TrainingSet) -> Result<LeastSquaresFit, OperatorError> {
    let n_in = set.x.nrows();
    let mut gram = DMatrix::zeros(n_in, n_in);
    let xt = set.x.transpose();
    gram.gemm(1.0, &set.x, &xt, 0.0);
    let mut rhs = DMatrix::zeros(set.t.nrows(), n_in);
    rhs.gemm(1.0, &set.t, &xt, 0.0);
    let ridge = 1e-10 * gram.trace() / n_in as f64;
    if !(ridge > 0.0) {
        return Err(OperatorError::IllConditioned {
            condition: f64::INFINITY,
        });
    }
    let mut reg = gram.clone();
    for i in 0..n_in {
        reg[(i, i)] += ridge;
    }
    let chol = reg.clone().cholesky().ok_or_else(|| {
        let eig = reg.clone().symmetric_eigenvalues();
        let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), e| {
            (lo.min(e.abs()), hi.max(e.abs()))
        });
        OperatorError::IllConditioned { condition: hi / lo }
    })?;
    // W = rhs · reg⁻¹, i.e. reg · Wᵀ = rhsᵀ.
    let w = chol.solve(&rhs.transpose()).transpose();
    if w.iter().any(|v| !v.is_finite()) {
        return Err(OperatorError::IllConditioned {
            condition: f64::INFINITY,
        });
    }
    let operator = LinearBoundaryOperator::new(vec![w], set.layout.clone())?;
    let residual_loss = compute_loss(&operator, set, &TrainingConfig::default());
    Ok(LeastSquaresFit {
        operator,
        residual_loss,
        ridge,
    })
}
