//! Layer-wise training of convexified GCNs.
//!
//! Each layer is fit by solving a convex subproblem: with the previous
//! layer's outputs frozen, the per-hop kernel features are fixed, the
//! readout applied after the layer is fixed, and the multinomial logistic
//! loss is convex in the stacked filter matrix. The only constraint is a
//! nuclear-norm ball, handled by projection after every optimizer step.
//!
//! Hidden layers are trained against a frozen random readout that maps the
//! layer's output width to class scores. The final layer is trained against
//! the identity readout together with an unconstrained bias, and that pair
//! becomes the model's classification head.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::factor::{nystrom, FactorizedKernel};
use crate::graph::{
    build_shift_operator, normalize_rows, shift_stack, Graph, GraphSignal, ShiftKind,
    ShiftOperator,
};
use crate::kernel::KernelSpec;
use crate::model::{layer_forward, split_filter_stack, CgcnLayer, CgcnModel};
use crate::opt::{nuclear_budget, project_nuclear, NuclearBall, Optimizer};
use crate::rng::{self, tag};

/// Epochs without improvement before the step size is halved.
pub const PLATEAU_PATIENCE: usize = 20;
/// Step sizes are never reduced below this floor.
pub const MIN_STEP_SIZE: f64 = 1e-6;
/// Datasets up to this size are trained full batch by default.
pub const FULL_BATCH_THRESHOLD: usize = 1000;
/// Default minibatch size for datasets above the full-batch threshold.
pub const DEFAULT_MINI_BATCH: usize = 128;

/// One labeled graph: topology, node features, and a class index.
#[derive(Debug, Clone)]
pub struct Sample {
    pub graph: Graph,
    pub signal: GraphSignal,
    pub label: usize,
}

/// A graph classification dataset with a fixed number of classes.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<Sample>,
    num_classes: usize,
}

impl Dataset {
    /// Validates and wraps a list of samples.
    ///
    /// Every signal must have one row per node of its graph, all signals
    /// must share a feature dimension, and every label must lie below
    /// `num_classes` (which must be at least 2).
    pub fn new(samples: Vec<Sample>, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "a dataset needs at least 2 classes, got {num_classes}"
            )));
        }
        if samples.is_empty() {
            return Err(Error::InvalidArgument(
                "a dataset needs at least one sample".into(),
            ));
        }
        let feature_dim = samples[0].signal.num_features();
        for (idx, sample) in samples.iter().enumerate() {
            if sample.signal.num_nodes() != sample.graph.num_nodes() {
                return Err(Error::ShapeMismatch(format!(
                    "sample {idx}: signal has {} rows but the graph has {} nodes",
                    sample.signal.num_nodes(),
                    sample.graph.num_nodes()
                )));
            }
            if sample.signal.num_features() != feature_dim {
                return Err(Error::ShapeMismatch(format!(
                    "sample {idx}: feature dimension {} differs from {}",
                    sample.signal.num_features(),
                    feature_dim
                )));
            }
            if sample.label >= num_classes {
                return Err(Error::InvalidArgument(format!(
                    "sample {idx}: label {} out of range for {} classes",
                    sample.label, num_classes
                )));
            }
        }
        Ok(Self {
            samples,
            num_classes,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Feature dimension shared by all samples.
    pub fn feature_dim(&self) -> usize {
        self.samples[0].signal.num_features()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Clones the given rows into a new dataset with the same class count.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut samples = Vec::with_capacity(indices.len());
        for &i in indices {
            let sample = self.samples.get(i).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "subset index {i} out of range for {} samples",
                    self.samples.len()
                ))
            })?;
            samples.push(sample.clone());
        }
        Self::new(samples, self.num_classes)
    }
}

/// Which projected first-order method drives the filter updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerChoice {
    ProjectedGd,
    ProjectedAdam,
}

impl OptimizerChoice {
    fn build(self, step_size: f64) -> Result<Optimizer> {
        match self {
            OptimizerChoice::ProjectedGd => Optimizer::projected_gd(step_size),
            OptimizerChoice::ProjectedAdam => Optimizer::projected_adam(step_size),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerChoice::ProjectedGd => "projected-gd",
            OptimizerChoice::ProjectedAdam => "projected-adam",
        }
    }
}

impl std::str::FromStr for OptimizerChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "projected-gd" | "gd" => Ok(OptimizerChoice::ProjectedGd),
            "projected-adam" | "adam" => Ok(OptimizerChoice::ProjectedAdam),
            other => Err(Error::InvalidConfig(format!(
                "unknown optimizer {other:?}, expected projected-gd or projected-adam"
            ))),
        }
    }
}

impl std::fmt::Display for OptimizerChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How each layer's filter stack is initialized before optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterInit {
    /// All-zero stack, the center of the feasible ball.
    Zeros,
    /// Small Gaussian entries, projected onto the feasible ball.
    Random,
}

impl std::str::FromStr for FilterInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "zeros" => Ok(FilterInit::Zeros),
            "random" => Ok(FilterInit::Random),
            other => Err(Error::InvalidConfig(format!(
                "unknown filter init {other:?}, expected zeros or random"
            ))),
        }
    }
}

impl std::fmt::Display for FilterInit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FilterInit::Zeros => f.write_str("zeros"),
            FilterInit::Random => f.write_str("random"),
        }
    }
}

/// Full training configuration.
///
/// `kernels` holds one kernel per layer. `budgets`, when present, overrides
/// the nuclear-norm budget of each layer; otherwise budgets follow
/// [`nuclear_budget`] with the configured `radius`. `init_seed` decouples
/// filter initialization from the master seed so that two runs can start
/// from different random points while sampling identical landmarks,
/// readouts, and splits.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub shift_kind: ShiftKind,
    pub kernels: Vec<KernelSpec>,
    pub hops: usize,
    pub num_layers: usize,
    /// Output widths of the hidden layers, one per layer below the last.
    /// The final layer's width is always the class count.
    pub hidden_widths: Vec<usize>,
    pub landmarks: usize,
    pub epochs: usize,
    pub optimizer: OptimizerChoice,
    pub learning_rate: f64,
    pub batch_size: Option<usize>,
    pub radius: f64,
    pub budgets: Option<Vec<f64>>,
    pub split: (f64, f64, f64),
    pub filter_init: FilterInit,
    pub seed: u64,
    pub init_seed: Option<u64>,
}

impl TrainConfig {
    /// The reference configuration: two layers of width 32 with one-hop
    /// filters, Gaussian kernels, 32 landmarks, projected Adam at 1e-3 for
    /// 200 epochs, and an 80/10/10 split.
    pub fn reference(seed: u64) -> Self {
        let kernel = KernelSpec::rbf(0.2).expect("default gamma is valid");
        Self {
            shift_kind: ShiftKind::SymmetricNormalizedAdjacency,
            kernels: vec![kernel; 2],
            hops: 1,
            num_layers: 2,
            hidden_widths: vec![32],
            landmarks: 32,
            epochs: 200,
            optimizer: OptimizerChoice::ProjectedAdam,
            learning_rate: 1e-3,
            batch_size: None,
            radius: 1.0,
            budgets: None,
            split: (0.8, 0.1, 0.1),
            filter_init: FilterInit::Zeros,
            seed,
            init_seed: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::InvalidConfig("layers must be at least 1".into()));
        }
        if self.kernels.len() != self.num_layers {
            return Err(Error::InvalidConfig(format!(
                "{} kernels configured for {} layers",
                self.kernels.len(),
                self.num_layers
            )));
        }
        if self.hidden_widths.len() != self.num_layers - 1 {
            return Err(Error::InvalidConfig(format!(
                "{} hidden widths configured for {} layers, expected {}",
                self.hidden_widths.len(),
                self.num_layers,
                self.num_layers - 1
            )));
        }
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig(
                "hidden widths must be positive".into(),
            ));
        }
        if self.landmarks == 0 {
            return Err(Error::InvalidConfig("landmarks must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if let Some(0) = self.batch_size {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "radius must be positive and finite, got {}",
                self.radius
            )));
        }
        if let Some(budgets) = &self.budgets {
            if budgets.len() != self.num_layers {
                return Err(Error::InvalidConfig(format!(
                    "{} budgets configured for {} layers",
                    budgets.len(),
                    self.num_layers
                )));
            }
            for (i, &b) in budgets.iter().enumerate() {
                if !(b.is_finite() && b > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "budget for layer {} must be positive and finite, got {b}",
                        i + 1
                    )));
                }
            }
        }
        let (a, b, c) = self.split;
        for r in [a, b, c] {
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "split ratios must be nonnegative, got {:?}",
                    self.split
                )));
            }
        }
        if (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split ratios must sum to 1, got {:?}",
                self.split
            )));
        }
        Ok(())
    }

    /// One-based layer kernel lookup.
    pub fn kernel_for_layer(&self, layer: usize) -> Result<KernelSpec> {
        self.kernels
            .get(layer.checked_sub(1).ok_or_else(|| {
                Error::InvalidArgument("layer indices are one-based".into())
            })?)
            .copied()
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "layer {layer} out of range for {} configured layers",
                    self.kernels.len()
                ))
            })
    }

    /// Budget for a one-based layer with the given input and output widths.
    pub fn budget_for_layer(&self, layer: usize, f_in: usize, f_out: usize) -> Result<f64> {
        if layer == 0 || layer > self.num_layers {
            return Err(Error::InvalidArgument(format!(
                "layer {layer} out of range for {} layers",
                self.num_layers
            )));
        }
        match &self.budgets {
            Some(budgets) => Ok(budgets[layer - 1]),
            None => Ok(nuclear_budget(self.radius, f_in, f_out, self.hops)),
        }
    }

    fn effective_batch(&self, num_samples: usize) -> usize {
        match self.batch_size {
            Some(b) => b.min(num_samples),
            None if num_samples <= FULL_BATCH_THRESHOLD => num_samples,
            None => DEFAULT_MINI_BATCH.min(num_samples),
        }
    }

    fn init_stream_seed(&self) -> u64 {
        self.init_seed.unwrap_or(self.seed)
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::reference(0)
    }
}

/// Splits `0..num_samples` into shuffled train/val/test index sets.
///
/// Train and validation sizes are the floors of their ratios; test takes
/// the remainder. Any empty part is an error.
pub fn split_indices(
    num_samples: usize,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let (a, b, c) = ratios;
    for r in [a, b, c] {
        if !(r.is_finite() && r >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "split ratios must be nonnegative, got {ratios:?}"
            )));
        }
    }
    if (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must sum to 1, got {ratios:?}"
        )));
    }
    let mut order: Vec<usize> = (0..num_samples).collect();
    let mut rng = rng::stream(seed, &[tag::SPLIT]);
    for i in (1..order.len()).rev() {
        let j = rand::Rng::random_range(&mut rng, 0..=i);
        order.swap(i, j);
    }
    let n_train = (a * num_samples as f64).floor() as usize;
    let n_val = (b * num_samples as f64).floor() as usize;
    if n_train == 0 {
        return Err(Error::EmptySplit("train"));
    }
    if n_val == 0 {
        return Err(Error::EmptySplit("val"));
    }
    if n_train + n_val >= num_samples {
        return Err(Error::EmptySplit("test"));
    }
    let train = order[..n_train].to_vec();
    let val = order[n_train..n_train + n_val].to_vec();
    let test = order[n_train + n_val..].to_vec();
    Ok((train, val, test))
}

/// Splits a dataset into train/val/test parts using [`split_indices`].
pub fn split_dataset(
    dataset: &Dataset,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (train, val, test) = split_indices(dataset.len(), ratios, seed)?;
    Ok((
        dataset.subset(&train)?,
        dataset.subset(&val)?,
        dataset.subset(&test)?,
    ))
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Pools per-sample per-hop kernel features into one row per sample.
///
/// Sum pooling commutes with the linear filter and readout, so the pooled
/// rows are sufficient for the layer objective: row `j` is the
/// concatenation over hops of the column sums of that sample's hop
/// features.
pub fn pool_hop_features(features_per_sample: &[Vec<DMatrix<f64>>]) -> Result<DMatrix<f64>> {
    if features_per_sample.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot pool an empty feature list".into(),
        ));
    }
    let hops = features_per_sample[0].len();
    let widths: Vec<usize> = features_per_sample[0].iter().map(|f| f.ncols()).collect();
    let total: usize = widths.iter().sum();
    let mut pooled = DMatrix::zeros(features_per_sample.len(), total);
    for (j, hops_j) in features_per_sample.iter().enumerate() {
        if hops_j.len() != hops {
            return Err(Error::ShapeMismatch(format!(
                "sample {j} has {} hop blocks, expected {hops}",
                hops_j.len()
            )));
        }
        let mut offset = 0;
        for (k, block) in hops_j.iter().enumerate() {
            if block.ncols() != widths[k] {
                return Err(Error::ShapeMismatch(format!(
                    "sample {j} hop {k} has width {}, expected {}",
                    block.ncols(),
                    widths[k]
                )));
            }
            for c in 0..block.ncols() {
                pooled[(j, offset + c)] = block.column(c).sum();
            }
            offset += widths[k];
        }
    }
    Ok(pooled)
}

/// Multinomial logistic objective and gradients for one layer subproblem.
///
/// `stacked_filters` is the vertical hop stack (total kernel width by
/// layer output width), `pooled` holds one pooled feature row per sample,
/// `readout` maps layer outputs to class scores, and `bias`, when present,
/// is added to the scores. Returns the mean loss together with the
/// gradients with respect to the stacked filters and the bias (the bias
/// gradient is zero-length when no bias is supplied).
pub fn layer_objective_and_gradient(
    stacked_filters: &DMatrix<f64>,
    pooled: &DMatrix<f64>,
    labels: &[usize],
    readout: &DMatrix<f64>,
    bias: Option<&DVector<f64>>,
) -> Result<(f64, DMatrix<f64>, DVector<f64>)> {
    let m = pooled.nrows();
    if m == 0 {
        return Err(Error::InvalidArgument(
            "objective needs at least one sample".into(),
        ));
    }
    if labels.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} pooled rows",
            labels.len(),
            m
        )));
    }
    if stacked_filters.nrows() != pooled.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "stacked filters have {} rows but pooled features have {} columns",
            stacked_filters.nrows(),
            pooled.ncols()
        )));
    }
    if readout.nrows() != stacked_filters.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "readout has {} rows but filters produce {} outputs",
            readout.nrows(),
            stacked_filters.ncols()
        )));
    }
    let num_classes = readout.ncols();
    if num_classes < 2 {
        return Err(Error::InvalidArgument(
            "readout must map to at least 2 classes".into(),
        ));
    }
    if let Some(b) = bias {
        if b.len() != num_classes {
            return Err(Error::ShapeMismatch(format!(
                "bias has {} entries for {} classes",
                b.len(),
                num_classes
            )));
        }
    }
    let mut scores = pooled * stacked_filters * readout;
    if let Some(b) = bias {
        for mut row in scores.row_iter_mut() {
            for (c, v) in row.iter_mut().enumerate() {
                *v += b[c];
            }
        }
    }
    let mut objective = 0.0;
    // Reused below as softmax(scores) minus the one-hot labels.
    let mut residual = scores;
    for (j, &label) in labels.iter().enumerate() {
        if label >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {num_classes} classes"
            )));
        }
        let row: Vec<f64> = residual.row(j).iter().cloned().collect();
        let lse = log_sum_exp(&row);
        objective += lse - row[label];
        for (c, v) in residual.row_mut(j).iter_mut().enumerate() {
            *v = (row[c] - lse).exp() - if c == label { 1.0 } else { 0.0 };
        }
    }
    objective /= m as f64;
    if !objective.is_finite() {
        return Err(Error::NonFinite("layer objective".into()));
    }
    let grad_filters = pooled.transpose() * &residual * readout.transpose() / m as f64;
    let grad_bias = DVector::from_iterator(
        if bias.is_some() { num_classes } else { 0 },
        (0..if bias.is_some() { num_classes } else { 0 })
            .map(|c| residual.column(c).sum() / m as f64),
    );
    Ok((objective, grad_filters, grad_bias))
}

/// Same objective, taking raw per-sample per-hop features.
pub fn layer_objective_and_gradient_from_samples(
    stacked_filters: &DMatrix<f64>,
    features_per_sample: &[Vec<DMatrix<f64>>],
    labels: &[usize],
    readout: &DMatrix<f64>,
    bias: Option<&DVector<f64>>,
) -> Result<(f64, DMatrix<f64>, DVector<f64>)> {
    let pooled = pool_hop_features(features_per_sample)?;
    layer_objective_and_gradient(stacked_filters, &pooled, labels, readout, bias)
}

fn power_iteration_lambda_max(matrix: &DMatrix<f64>) -> f64 {
    let n = matrix.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    for _ in 0..100 {
        let w = matrix * &v;
        let norm = w.norm();
        if norm <= f64::MIN_POSITIVE {
            return 0.0;
        }
        v = w / norm;
    }
    (v.transpose() * matrix * &v)[(0, 0)]
}

/// Estimates the smoothness constant of the layer objective.
///
/// The logistic Hessian is bounded by half the identity on score space, so
/// the objective is `0.5 * lambda_max(U^T U / m) * sigma_max(rho)^2`
/// smooth in the filters, with `U` the pooled feature matrix and `rho` the
/// readout. When `with_bias` is set, `U` is augmented by a constant column
/// so the bound also covers the bias coordinate.
pub fn estimate_smoothness(pooled: &DMatrix<f64>, readout: &DMatrix<f64>, with_bias: bool) -> f64 {
    let m = pooled.nrows().max(1);
    let data = if with_bias {
        let mut augmented = DMatrix::zeros(pooled.nrows(), pooled.ncols() + 1);
        augmented.view_mut((0, 0), (pooled.nrows(), pooled.ncols())).copy_from(pooled);
        augmented.column_mut(pooled.ncols()).fill(1.0);
        augmented
    } else {
        pooled.clone()
    };
    let gram = data.transpose() * &data / m as f64;
    let feature_lambda = power_iteration_lambda_max(&gram).max(0.0);
    let readout_lambda = power_iteration_lambda_max(&(readout.transpose() * readout)).max(0.0);
    0.5 * feature_lambda * readout_lambda
}

/// Objective value and step size recorded after one epoch.
#[derive(Debug, Clone, Copy)]
pub struct EpochTrace {
    pub epoch: usize,
    pub objective: f64,
    pub step_size: f64,
}

/// Per-layer optimization history.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub layer: usize,
    pub epochs: Vec<EpochTrace>,
}

impl LayerTrace {
    pub fn final_objective(&self) -> f64 {
        self.epochs.last().map(|e| e.objective).unwrap_or(f64::NAN)
    }
}

/// Settings for one layer's optimization loop.
#[derive(Debug, Clone)]
pub struct LayerOptimizeSettings {
    pub optimizer: OptimizerChoice,
    pub step_size: f64,
    pub epochs: usize,
    /// Samples per optimizer step; clamped to the dataset size.
    pub batch_size: usize,
    /// Seed for minibatch shuffling.
    pub shuffle_seed: u64,
    pub train_bias: bool,
    /// Halve the step size after stretches without improvement. Disable for
    /// fixed-step runs, e.g. when checking convergence guarantees.
    pub reduce_on_plateau: bool,
}

fn gather_rows(matrix: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows.len(), matrix.ncols());
    for (r, &i) in rows.iter().enumerate() {
        out.row_mut(r).copy_from(&matrix.row(i));
    }
    out
}

/// Runs the projected optimizer on one layer subproblem.
///
/// Updates alternate a gradient step with a projection onto the nuclear
/// ball; the bias, when trained, takes unconstrained steps from a twin
/// optimizer. A plateau schedule halves both step sizes after
/// [`PLATEAU_PATIENCE`] epochs without improvement, never below
/// [`MIN_STEP_SIZE`], and training always continues to the epoch budget.
pub fn optimize_layer(
    pooled: &DMatrix<f64>,
    labels: &[usize],
    readout: &DMatrix<f64>,
    ball: &NuclearBall,
    init_filters: DMatrix<f64>,
    init_bias: DVector<f64>,
    settings: &LayerOptimizeSettings,
) -> Result<(DMatrix<f64>, DVector<f64>, Vec<EpochTrace>)> {
    let m = pooled.nrows();
    if settings.epochs == 0 {
        return Err(Error::InvalidConfig("epochs must be at least 1".into()));
    }
    if settings.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    let batch = settings.batch_size.min(m);
    let mut filters = project_nuclear(&init_filters, ball)?;
    let mut bias = init_bias;
    let mut filter_opt = settings.optimizer.build(settings.step_size)?;
    let mut bias_opt = settings.optimizer.build(settings.step_size)?;
    let mut traces = Vec::with_capacity(settings.epochs);
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    for epoch in 1..=settings.epochs {
        let order: Vec<usize> = if batch < m {
            let mut order: Vec<usize> = (0..m).collect();
            let mut rng = rng::stream(settings.shuffle_seed, &[tag::BATCH_SHUFFLE, epoch as u64]);
            for i in (1..order.len()).rev() {
                let j = rand::Rng::random_range(&mut rng, 0..=i);
                order.swap(i, j);
            }
            order
        } else {
            (0..m).collect()
        };
        let mut weighted_objective = 0.0;
        for chunk in order.chunks(batch) {
            let (objective, grad_filters, grad_bias) = if chunk.len() == m {
                layer_objective_and_gradient(
                    &filters,
                    pooled,
                    labels,
                    readout,
                    settings.train_bias.then_some(&bias),
                )?
            } else {
                let batch_pooled = gather_rows(pooled, chunk);
                let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                layer_objective_and_gradient(
                    &filters,
                    &batch_pooled,
                    &batch_labels,
                    readout,
                    settings.train_bias.then_some(&bias),
                )?
            };
            filters = filter_opt.step(&filters, &grad_filters, ball)?;
            if settings.train_bias {
                let bias_mat = DMatrix::from_column_slice(bias.len(), 1, bias.as_slice());
                let grad_mat =
                    DMatrix::from_column_slice(grad_bias.len(), 1, grad_bias.as_slice());
                let stepped = bias_opt.step_unconstrained(&bias_mat, &grad_mat)?;
                bias = DVector::from_column_slice(stepped.as_slice());
            }
            weighted_objective += objective * chunk.len() as f64;
        }
        let epoch_objective = weighted_objective / m as f64;
        traces.push(EpochTrace {
            epoch,
            objective: epoch_objective,
            step_size: filter_opt.step_size(),
        });
        if epoch_objective < best - 1e-12 {
            best = epoch_objective;
            stale = 0;
        } else if settings.reduce_on_plateau {
            stale += 1;
            if stale >= PLATEAU_PATIENCE {
                let halved = (filter_opt.step_size() * 0.5).max(MIN_STEP_SIZE);
                filter_opt.set_step_size(halved);
                bias_opt.set_step_size(halved);
                stale = 0;
            }
        }
    }
    Ok((filters, bias, traces))
}

/// Per-hop factorized kernels and the features they induce on a dataset.
#[derive(Debug)]
pub struct LayerFeatures {
    /// One trained factorization per hop, tagged `0..=hops`.
    pub kernels: Vec<FactorizedKernel>,
    /// Per sample, per hop feature blocks (rows follow the sample's nodes).
    pub per_sample: Vec<Vec<DMatrix<f64>>>,
    /// One pooled row per sample (hop blocks concatenated).
    pub pooled: DMatrix<f64>,
    /// Feature width of each hop block.
    pub heights: Vec<usize>,
}

/// Builds the per-hop kernel features one layer consumes.
///
/// For each hop this stacks the normalized shifted signals of all samples,
/// fits a Nystrom factorization on `min(landmarks, total_nodes)` landmark
/// rows, and slices the factor rows back out per sample. Landmark
/// selection derives its seed from the master seed, the one-based layer
/// index, and the hop, so every hop of every layer draws an independent
/// stream.
pub fn assemble_layer_features(
    signals: &[GraphSignal],
    shifts: &[ShiftOperator],
    spec: KernelSpec,
    hops: usize,
    landmarks: usize,
    master_seed: u64,
    layer: usize,
) -> Result<LayerFeatures> {
    if signals.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot assemble features for an empty dataset".into(),
        ));
    }
    if signals.len() != shifts.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} signals but {} shift operators",
            signals.len(),
            shifts.len()
        )));
    }
    let stacks: Vec<_> = signals
        .iter()
        .zip(shifts)
        .map(|(signal, shift)| shift_stack(shift, signal, hops))
        .collect::<Result<_>>()?;
    let mut offsets = Vec::with_capacity(signals.len() + 1);
    let mut total_nodes = 0;
    for signal in signals {
        offsets.push(total_nodes);
        total_nodes += signal.num_nodes();
    }
    offsets.push(total_nodes);
    let f_in = signals[0].num_features();
    let p = landmarks.min(total_nodes);
    let mut kernels = Vec::with_capacity(hops + 1);
    let mut per_sample: Vec<Vec<DMatrix<f64>>> = vec![Vec::with_capacity(hops + 1); signals.len()];
    let mut heights = Vec::with_capacity(hops + 1);
    for k in 0..=hops {
        let mut rows = DMatrix::zeros(total_nodes, f_in);
        for (j, stack) in stacks.iter().enumerate() {
            let normalized = normalize_rows(stack.hop(k).matrix());
            rows.view_mut((offsets[j], 0), (normalized.nrows(), f_in))
                .copy_from(&normalized);
        }
        let seed = rng::derive_seed(master_seed, &[tag::LANDMARKS, layer as u64, k as u64]);
        let factor = nystrom(&spec, &rows, p, seed)?.with_hop(k);
        let width = factor.width();
        for j in 0..signals.len() {
            let block = factor
                .q()
                .view((offsets[j], 0), (offsets[j + 1] - offsets[j], width))
                .into_owned();
            per_sample[j].push(block);
        }
        heights.push(width);
        kernels.push(factor);
    }
    let pooled = pool_hop_features(&per_sample)?;
    Ok(LayerFeatures {
        kernels,
        per_sample,
        pooled,
        heights,
    })
}

/// Samples a frozen readout with unit-norm Gaussian columns.
pub fn frozen_readout(f_out: usize, num_classes: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng::stream(seed, &[tag::HIDDEN_READOUT]);
    let mut readout = DMatrix::zeros(f_out, num_classes);
    for mut column in readout.column_iter_mut() {
        loop {
            for v in column.iter_mut() {
                *v = rand::Rng::sample(&mut rng, rand_distr::StandardNormal);
            }
            let norm = column.norm();
            if norm > 1e-12 {
                column /= norm;
                break;
            }
        }
    }
    readout
}

/// Draws a small random filter stack and projects it into the ball.
pub fn random_feasible_init(
    rows: usize,
    cols: usize,
    ball: &NuclearBall,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let mut rng = rng::stream(seed, &[tag::FILTER_INIT]);
    let raw = DMatrix::from_fn(rows, cols, |_, _| {
        let g: f64 = rand::Rng::sample(&mut rng, rand_distr::StandardNormal);
        0.1 * g
    });
    project_nuclear(&raw, ball)
}

/// A trained model together with its optimization history.
#[derive(Debug)]
pub struct TrainedModel {
    pub model: CgcnModel,
    pub traces: Vec<LayerTrace>,
}

/// Trains a model layer by layer on the given dataset.
///
/// Layers are fit in order, each one as a convex subproblem over its
/// filters while everything upstream stays frozen. Hidden layers train
/// against frozen random readouts; the final layer has width equal to the
/// class count and trains with the identity readout plus a bias, which
/// become the model head.
pub fn train_layerwise(dataset: &Dataset, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    let num_classes = dataset.num_classes();
    let labels = dataset.labels();
    let m = dataset.len();
    let shifts: Vec<ShiftOperator> = dataset
        .samples()
        .iter()
        .map(|s| build_shift_operator(&s.graph, config.shift_kind))
        .collect::<Result<_>>()?;
    let mut signals: Vec<GraphSignal> = dataset
        .samples()
        .iter()
        .map(|s| s.signal.clone())
        .collect();
    let mut layers = Vec::with_capacity(config.num_layers);
    let mut hidden_readouts = Vec::with_capacity(config.num_layers.saturating_sub(1));
    let mut traces = Vec::with_capacity(config.num_layers);
    let mut final_bias = DVector::zeros(num_classes);
    for layer_index in 1..=config.num_layers {
        let is_final = layer_index == config.num_layers;
        let f_in = signals[0].num_features();
        let f_out = if is_final {
            num_classes
        } else {
            config.hidden_widths[layer_index - 1]
        };
        let spec = config.kernel_for_layer(layer_index)?;
        let features = assemble_layer_features(
            &signals,
            &shifts,
            spec,
            config.hops,
            config.landmarks,
            config.seed,
            layer_index,
        )?;
        let budget = config.budget_for_layer(layer_index, f_in, f_out)?;
        let ball = NuclearBall::new(budget)?;
        let readout = if is_final {
            DMatrix::identity(num_classes, num_classes)
        } else {
            frozen_readout(
                f_out,
                num_classes,
                rng::derive_seed(config.seed, &[tag::HIDDEN_READOUT, layer_index as u64]),
            )
        };
        let total_width: usize = features.heights.iter().sum();
        let init = match config.filter_init {
            FilterInit::Zeros => DMatrix::zeros(total_width, f_out),
            FilterInit::Random => random_feasible_init(
                total_width,
                f_out,
                &ball,
                rng::derive_seed(
                    config.init_stream_seed(),
                    &[tag::FILTER_INIT, layer_index as u64],
                ),
            )?,
        };
        let settings = LayerOptimizeSettings {
            optimizer: config.optimizer,
            step_size: config.learning_rate,
            epochs: config.epochs,
            batch_size: config.effective_batch(m),
            shuffle_seed: rng::derive_seed(
                config.seed,
                &[tag::BATCH_SHUFFLE, layer_index as u64],
            ),
            train_bias: is_final,
            reduce_on_plateau: true,
        };
        let (stacked, bias, epoch_traces) = optimize_layer(
            &features.pooled,
            &labels,
            &readout,
            &ball,
            init,
            DVector::zeros(num_classes),
            &settings,
        )?;
        traces.push(LayerTrace {
            layer: layer_index,
            epochs: epoch_traces,
        });
        let filters = split_filter_stack(&stacked, &features.heights, f_out)?;
        let layer = CgcnLayer::new(features.kernels, filters, budget)?;
        if is_final {
            final_bias = bias;
        } else {
            for (signal, feats) in signals.iter_mut().zip(&features.per_sample) {
                *signal = GraphSignal::new(layer_forward(&layer, feats)?)?;
            }
            hidden_readouts.push(readout);
        }
        layers.push(layer);
    }
    let model = CgcnModel::new(
        config.shift_kind,
        layers,
        hidden_readouts,
        DMatrix::identity(num_classes, num_classes),
        final_bias,
    )?;
    Ok(TrainedModel { model, traces })
}

/// Accuracy and mean logistic loss of a model on a dataset.
#[derive(Debug, Clone, Copy)]
pub struct EvalReport {
    pub num_samples: usize,
    pub accuracy: f64,
    pub mean_loss: f64,
}

/// Scores every sample and reports accuracy and mean logistic loss.
///
/// Ties in the score vector resolve to the lowest class index.
pub fn evaluate(model: &CgcnModel, dataset: &Dataset) -> Result<EvalReport> {
    if dataset.num_classes() != model.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "dataset has {} classes but the model scores {}",
            dataset.num_classes(),
            model.num_classes()
        )));
    }
    let mut correct = 0usize;
    let mut loss = 0.0;
    for sample in dataset.samples() {
        let scores = crate::model::model_forward(model, &sample.graph, &sample.signal)?;
        let row: Vec<f64> = scores.iter().cloned().collect();
        let mut arg_max = 0;
        for (c, &v) in row.iter().enumerate() {
            if v > row[arg_max] {
                arg_max = c;
            }
        }
        if arg_max == sample.label {
            correct += 1;
        }
        loss += log_sum_exp(&row) - row[sample.label];
    }
    Ok(EvalReport {
        num_samples: dataset.len(),
        accuracy: correct as f64 / dataset.len() as f64,
        mean_loss: loss / dataset.len() as f64,
    })
}

/// A trained model together with reports on each split.
#[derive(Debug)]
pub struct PipelineResult {
    pub model: CgcnModel,
    pub traces: Vec<LayerTrace>,
    pub train_report: EvalReport,
    pub val_report: EvalReport,
    pub test_report: EvalReport,
}

/// Splits the dataset, trains on the training part, and evaluates all
/// three parts. The split seed is the configured master seed.
pub fn run_pipeline(dataset: &Dataset, config: &TrainConfig) -> Result<PipelineResult> {
    config.validate()?;
    let (train, val, test) = split_dataset(dataset, config.split, config.seed)?;
    let trained = train_layerwise(&train, config)?;
    let train_report = evaluate(&trained.model, &train)?;
    let val_report = evaluate(&trained.model, &val)?;
    let test_report = evaluate(&trained.model, &test)?;
    Ok(PipelineResult {
        model: trained.model,
        traces: trained.traces,
        train_report,
        val_report,
        test_report,
    })
}

/// Generator for the ring-versus-path toy task.
///
/// Class 0 graphs are cycles, class 1 graphs are paths, node counts are
/// uniform in `min_nodes..=max_nodes`, and every node carries the constant
/// feature 1. Under the normalized Laplacian shift the one-hop rows of a
/// ring are exactly zero while a path produces signed rows near its
/// endpoints, so a single hop separates the classes even after row
/// normalization. Shifts that keep constant signals constant (adjacency
/// variants, the combinatorial Laplacian) collapse this task, so configs
/// for it should use [`ShiftKind::NormalizedLaplacian`].
#[derive(Debug, Clone, Copy)]
pub struct SyntheticTask {
    pub min_nodes: usize,
    pub max_nodes: usize,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        Self {
            min_nodes: 4,
            max_nodes: 9,
        }
    }
}

fn ring_graph(n: usize) -> Result<Graph> {
    let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    Graph::undirected_unweighted(n, &edges)
}

fn path_graph(n: usize) -> Result<Graph> {
    let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    Graph::undirected_unweighted(n, &edges)
}

fn constant_signal(n: usize) -> Result<GraphSignal> {
    GraphSignal::new(DMatrix::from_element(n, 1, 1.0))
}

/// Samples a labeled ring-versus-path dataset.
pub fn sample_synthetic_dataset(task: &SyntheticTask, size: usize, seed: u64) -> Result<Dataset> {
    if task.min_nodes < 3 || task.max_nodes < task.min_nodes {
        return Err(Error::InvalidArgument(format!(
            "node range {}..={} is invalid, rings need at least 3 nodes",
            task.min_nodes, task.max_nodes
        )));
    }
    if size == 0 {
        return Err(Error::InvalidArgument(
            "cannot sample an empty dataset".into(),
        ));
    }
    let mut rng = rng::stream(seed, &[tag::SYNTHETIC_TASK]);
    let mut samples = Vec::with_capacity(size);
    for _ in 0..size {
        let n = rand::Rng::random_range(&mut rng, task.min_nodes..=task.max_nodes);
        let is_path = rand::Rng::random_bool(&mut rng, 0.5);
        let (graph, label) = if is_path {
            (path_graph(n)?, 1)
        } else {
            (ring_graph(n)?, 0)
        };
        samples.push(Sample {
            signal: constant_signal(graph.num_nodes())?,
            graph,
            label,
        });
    }
    Dataset::new(samples, 2)
}

/// Fixed four-graph dataset: two rings and two paths of matching sizes.
pub fn toy_rings_and_paths() -> Result<Dataset> {
    let mut samples = Vec::new();
    for n in [6usize, 8] {
        let graph = ring_graph(n)?;
        samples.push(Sample {
            signal: constant_signal(n)?,
            graph,
            label: 0,
        });
        let graph = path_graph(n)?;
        samples.push(Sample {
            signal: constant_signal(n)?,
            graph,
            label: 1,
        });
    }
    Dataset::new(samples, 2)
}

/// Mean train/test losses and their gap for one training-set size.
#[derive(Debug, Clone, Copy)]
pub struct GapRow {
    pub train_size: usize,
    pub mean_train_loss: f64,
    pub mean_test_loss: f64,
    pub mean_gap: f64,
}

/// Measures the generalization gap across training-set sizes.
///
/// For each size, models are trained on fresh samples for every seed and
/// evaluated on a per-seed test pool that is shared across sizes, so rows
/// are directly comparable. The gap is mean test loss minus mean train
/// loss.
pub fn generalization_gap_probe(
    task: &SyntheticTask,
    config: &TrainConfig,
    train_sizes: &[usize],
    seeds: &[u64],
    test_pool: usize,
) -> Result<Vec<GapRow>> {
    if train_sizes.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "gap probe needs at least one size and one seed".into(),
        ));
    }
    let mut rows = Vec::with_capacity(train_sizes.len());
    for &size in train_sizes {
        let mut train_sum = 0.0;
        let mut test_sum = 0.0;
        for &seed in seeds {
            let train_seed = rng::derive_seed(seed, &[tag::SYNTHETIC_TASK, size as u64, 0]);
            let test_seed = rng::derive_seed(seed, &[tag::SYNTHETIC_TASK, 1]);
            let train = sample_synthetic_dataset(task, size, train_seed)?;
            let test = sample_synthetic_dataset(task, test_pool, test_seed)?;
            let mut run_config = config.clone();
            run_config.seed = rng::derive_seed(seed, &[size as u64]);
            let trained = train_layerwise(&train, &run_config)?;
            train_sum += evaluate(&trained.model, &train)?.mean_loss;
            test_sum += evaluate(&trained.model, &test)?.mean_loss;
        }
        let mean_train = train_sum / seeds.len() as f64;
        let mean_test = test_sum / seeds.len() as f64;
        rows.push(GapRow {
            train_size: size,
            mean_train_loss: mean_train,
            mean_test_loss: mean_test,
            mean_gap: mean_test - mean_train,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn toy_config() -> TrainConfig {
        TrainConfig {
            shift_kind: ShiftKind::NormalizedLaplacian,
            kernels: vec![KernelSpec::rbf(0.5).unwrap()],
            hops: 1,
            num_layers: 1,
            hidden_widths: vec![],
            landmarks: 8,
            epochs: 60,
            optimizer: OptimizerChoice::ProjectedAdam,
            learning_rate: 0.05,
            batch_size: None,
            radius: 1.0,
            budgets: None,
            split: (0.8, 0.1, 0.1),
            filter_init: FilterInit::Zeros,
            seed: 7,
            init_seed: None,
        }
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let ds = sample_synthetic_dataset(&SyntheticTask::default(), 10, 3).unwrap();
        let (train, val, test) = split_dataset(&ds, (0.8, 0.1, 0.1), 0).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(val.len(), 1);
        assert_eq!(test.len(), 1);
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let (a1, b1, c1) = split_indices(37, (0.6, 0.2, 0.2), 11).unwrap();
        let (a2, b2, c2) = split_indices(37, (0.6, 0.2, 0.2), 11).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        assert_eq!(c1, c2);
        let mut all: Vec<usize> = a1.iter().chain(&b1).chain(&c1).cloned().collect();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
        let (a3, ..) = split_indices(37, (0.6, 0.2, 0.2), 12).unwrap();
        assert_ne!(a1, a3);
    }

    #[test]
    fn empty_split_parts_are_rejected() {
        assert!(matches!(
            split_indices(10, (1.0, 0.0, 0.0), 0),
            Err(Error::EmptySplit("val"))
        ));
        // 9 samples at 80/10/10: floor gives 7 train, 0 val.
        assert!(matches!(
            split_indices(9, (0.8, 0.1, 0.1), 0),
            Err(Error::EmptySplit("val"))
        ));
        assert!(matches!(
            split_indices(10, (0.8, 0.2, 0.0), 0),
            Err(Error::EmptySplit("test"))
        ));
        assert!(split_indices(10, (0.5, 0.2, 0.2), 0).is_err());
    }

    #[test]
    fn zero_filters_give_log_class_count() {
        // With zero filters and no bias every class scores 0, so the loss
        // is ln(num_classes) regardless of the labels.
        let pooled = DMatrix::from_row_slice(3, 4, &[1.0, 2.0, 3.0, 4.0, 0.5, 0.1, 0.2, 0.3, 2.0, 1.0, 0.0, 1.0]);
        let filters = DMatrix::zeros(4, 2);
        let readout = DMatrix::identity(2, 2);
        let (obj, grad, _) =
            layer_objective_and_gradient(&filters, &pooled, &[0, 1, 0], &readout, None).unwrap();
        assert_relative_eq!(obj, 2.0f64.ln(), epsilon = 1e-12);
        assert_eq!(grad.nrows(), 4);
        assert_eq!(grad.ncols(), 2);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rng::stream(5, &[99]);
        let pooled = DMatrix::from_fn(6, 5, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let labels = [0usize, 1, 2, 0, 2, 1];
        let readout = DMatrix::from_fn(3, 3, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let filters = DMatrix::from_fn(5, 3, |_, _| rand::Rng::random_range(&mut rng, -0.5..0.5));
        let bias = DVector::from_fn(3, |_, _| rand::Rng::random_range(&mut rng, -0.5..0.5));
        let (_, grad, grad_bias) =
            layer_objective_and_gradient(&filters, &pooled, &labels, &readout, Some(&bias))
                .unwrap();
        let eps = 1e-5;
        for r in 0..5 {
            for c in 0..3 {
                let mut plus = filters.clone();
                plus[(r, c)] += eps;
                let mut minus = filters.clone();
                minus[(r, c)] -= eps;
                let (op, ..) =
                    layer_objective_and_gradient(&plus, &pooled, &labels, &readout, Some(&bias))
                        .unwrap();
                let (om, ..) =
                    layer_objective_and_gradient(&minus, &pooled, &labels, &readout, Some(&bias))
                        .unwrap();
                let fd = (op - om) / (2.0 * eps);
                let denom = grad[(r, c)].abs().max(fd.abs()).max(1e-4);
                assert!(
                    ((grad[(r, c)] - fd) / denom).abs() <= 1e-4,
                    "filter gradient mismatch at ({r},{c}): {} vs {}",
                    grad[(r, c)],
                    fd
                );
            }
        }
        for c in 0..3 {
            let mut plus = bias.clone();
            plus[c] += eps;
            let mut minus = bias.clone();
            minus[c] -= eps;
            let (op, ..) =
                layer_objective_and_gradient(&filters, &pooled, &labels, &readout, Some(&plus))
                    .unwrap();
            let (om, ..) =
                layer_objective_and_gradient(&filters, &pooled, &labels, &readout, Some(&minus))
                    .unwrap();
            let fd = (op - om) / (2.0 * eps);
            let denom = grad_bias[c].abs().max(fd.abs()).max(1e-4);
            assert!(((grad_bias[c] - fd) / denom).abs() <= 1e-4);
        }
    }

    #[test]
    fn objective_is_convex_along_segments() {
        let mut rng = rng::stream(17, &[4]);
        let pooled = DMatrix::from_fn(8, 4, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let labels = [0usize, 1, 1, 0, 1, 0, 0, 1];
        let readout = DMatrix::identity(2, 2);
        for _ in 0..50 {
            let a = DMatrix::from_fn(4, 2, |_, _| rand::Rng::random_range(&mut rng, -2.0..2.0));
            let b = DMatrix::from_fn(4, 2, |_, _| rand::Rng::random_range(&mut rng, -2.0..2.0));
            let t: f64 = rand::Rng::random_range(&mut rng, 0.0..1.0);
            let mid = &a * (1.0 - t) + &b * t;
            let f = |x: &DMatrix<f64>| {
                layer_objective_and_gradient(x, &pooled, &labels, &readout, None)
                    .unwrap()
                    .0
            };
            assert!(f(&mid) <= (1.0 - t) * f(&a) + t * f(&b) + 1e-9);
        }
    }

    #[test]
    fn duplicating_samples_preserves_objective_and_gradient() {
        let pooled = DMatrix::from_row_slice(2, 3, &[1.0, -1.0, 0.5, 0.2, 0.8, -0.3]);
        let labels = [0usize, 1];
        let filters = DMatrix::from_row_slice(3, 2, &[0.3, -0.1, 0.2, 0.4, -0.5, 0.6]);
        let readout = DMatrix::identity(2, 2);
        let (obj, grad, _) =
            layer_objective_and_gradient(&filters, &pooled, &labels, &readout, None).unwrap();
        let mut doubled = DMatrix::zeros(4, 3);
        doubled.view_mut((0, 0), (2, 3)).copy_from(&pooled);
        doubled.view_mut((2, 0), (2, 3)).copy_from(&pooled);
        let (obj2, grad2, _) =
            layer_objective_and_gradient(&filters, &doubled, &[0, 1, 0, 1], &readout, None)
                .unwrap();
        assert_relative_eq!(obj, obj2, epsilon = 1e-12);
        assert_relative_eq!(grad, grad2, epsilon = 1e-12);
    }

    #[test]
    fn projected_gd_descends_monotonically_at_safe_step() {
        let ds = toy_rings_and_paths().unwrap();
        let shifts: Vec<_> = ds
            .samples()
            .iter()
            .map(|s| build_shift_operator(&s.graph, ShiftKind::NormalizedLaplacian).unwrap())
            .collect();
        let signals: Vec<_> = ds.samples().iter().map(|s| s.signal.clone()).collect();
        let features = assemble_layer_features(
            &signals,
            &shifts,
            KernelSpec::rbf(0.5).unwrap(),
            1,
            4,
            0,
            1,
        )
        .unwrap();
        let readout = DMatrix::identity(2, 2);
        let smoothness = estimate_smoothness(&features.pooled, &readout, true);
        assert!(smoothness > 0.0);
        let ball = NuclearBall::new(nuclear_budget(1.0, 1, 2, 1)).unwrap();
        let width: usize = features.heights.iter().sum();
        let settings = LayerOptimizeSettings {
            optimizer: OptimizerChoice::ProjectedGd,
            step_size: 1.0 / smoothness,
            epochs: 150,
            batch_size: ds.len(),
            shuffle_seed: 0,
            train_bias: true,
            reduce_on_plateau: false,
        };
        let (_, _, traces) = optimize_layer(
            &features.pooled,
            &ds.labels(),
            &readout,
            &ball,
            DMatrix::zeros(width, 2),
            DVector::zeros(2),
            &settings,
        )
        .unwrap();
        for w in traces.windows(2) {
            assert!(
                w[1].objective <= w[0].objective + 1e-12,
                "objective rose from {} to {}",
                w[0].objective,
                w[1].objective
            );
        }
        assert!(traces.last().unwrap().objective < 2.0f64.ln());
    }

    #[test]
    fn toy_task_trains_to_full_accuracy() {
        let ds = sample_synthetic_dataset(&SyntheticTask::default(), 24, 5).unwrap();
        let trained = train_layerwise(&ds, &toy_config()).unwrap();
        let report = evaluate(&trained.model, &ds).unwrap();
        assert_eq!(report.num_samples, 24);
        assert!(
            report.accuracy == 1.0,
            "expected perfect separation, got {}",
            report.accuracy
        );
        assert!(report.mean_loss < 2.0f64.ln());
    }

    #[test]
    fn trained_filters_respect_budgets() {
        let ds = sample_synthetic_dataset(&SyntheticTask::default(), 16, 2).unwrap();
        let mut config = toy_config();
        config.num_layers = 2;
        config.kernels = vec![KernelSpec::rbf(0.5).unwrap(); 2];
        config.hidden_widths = vec![4];
        config.epochs = 30;
        let trained = train_layerwise(&ds, &config).unwrap();
        for layer in trained.model.layers() {
            assert!(layer.filter_nuclear_norm() <= layer.budget() + 1e-9);
        }
        assert_eq!(trained.traces.len(), 2);
        assert_eq!(trained.traces[0].epochs.len(), 30);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = sample_synthetic_dataset(&SyntheticTask::default(), 12, 9).unwrap();
        let mut config = toy_config();
        config.epochs = 10;
        let a = train_layerwise(&ds, &config).unwrap();
        let b = train_layerwise(&ds, &config).unwrap();
        assert_eq!(
            a.traces[0].final_objective(),
            b.traces[0].final_objective()
        );
        let fa = a.model.layers()[0].filters()[0].clone();
        let fb = b.model.layers()[0].filters()[0].clone();
        assert_eq!(fa, fb);
    }

    #[test]
    fn minibatch_path_runs_and_shuffles() {
        let ds = sample_synthetic_dataset(&SyntheticTask::default(), 20, 4).unwrap();
        let mut config = toy_config();
        config.batch_size = Some(6);
        config.epochs = 15;
        let trained = train_layerwise(&ds, &config).unwrap();
        let report = evaluate(&trained.model, &ds).unwrap();
        assert!(report.accuracy >= 0.8);
    }

    #[test]
    fn zero_epochs_config_is_rejected() {
        let mut config = toy_config();
        config.epochs = 0;
        let ds = sample_synthetic_dataset(&SyntheticTask::default(), 8, 1).unwrap();
        assert!(matches!(
            train_layerwise(&ds, &config),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn pipeline_reports_all_splits() {
        let ds = sample_synthetic_dataset(&SyntheticTask::default(), 40, 21).unwrap();
        let mut config = toy_config();
        config.epochs = 80;
        let result = run_pipeline(&ds, &config).unwrap();
        assert_eq!(result.train_report.num_samples, 32);
        assert_eq!(result.val_report.num_samples, 4);
        assert_eq!(result.test_report.num_samples, 4);
        assert!(result.test_report.accuracy >= 0.75);
    }

    #[test]
    fn synthetic_sampler_is_deterministic_and_labeled() {
        let a = sample_synthetic_dataset(&SyntheticTask::default(), 30, 13).unwrap();
        let b = sample_synthetic_dataset(&SyntheticTask::default(), 30, 13).unwrap();
        assert_eq!(a.len(), b.len());
        for (sa, sb) in a.samples().iter().zip(b.samples()) {
            assert_eq!(sa.label, sb.label);
            assert_eq!(sa.graph.num_nodes(), sb.graph.num_nodes());
        }
        for sample in a.samples() {
            let degrees: Vec<f64> = {
                let shift =
                    build_shift_operator(&sample.graph, ShiftKind::Adjacency).unwrap();
                let dense = shift.to_dense();
                (0..dense.nrows()).map(|i| dense.row(i).sum()).collect()
            };
            if sample.label == 0 {
                assert!(degrees.iter().all(|&d| (d - 2.0).abs() < 1e-12));
            } else {
                let endpoints = degrees.iter().filter(|&&d| (d - 1.0).abs() < 1e-12).count();
                assert_eq!(endpoints, 2);
            }
        }
    }

    #[test]
    fn gap_probe_is_deterministic_and_reports_sizes() {
        let task = SyntheticTask::default();
        let mut config = toy_config();
        config.epochs = 15;
        config.landmarks = 4;
        let rows_a =
            generalization_gap_probe(&task, &config, &[8, 16], &[0, 1], 30).unwrap();
        let rows_b =
            generalization_gap_probe(&task, &config, &[8, 16], &[0, 1], 30).unwrap();
        assert_eq!(rows_a.len(), 2);
        for (a, b) in rows_a.iter().zip(&rows_b) {
            assert_eq!(a.train_size, b.train_size);
            assert_eq!(a.mean_gap, b.mean_gap);
            assert_relative_eq!(
                a.mean_gap,
                a.mean_test_loss - a.mean_train_loss,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn frozen_readout_has_unit_columns() {
        let r = frozen_readout(6, 3, 42);
        assert_eq!(r.nrows(), 6);
        assert_eq!(r.ncols(), 3);
        for c in r.column_iter() {
            assert_relative_eq!(c.norm(), 1.0, epsilon = 1e-12);
        }
        assert_eq!(frozen_readout(6, 3, 42), r);
        assert_ne!(frozen_readout(6, 3, 43), r);
    }

    #[test]
    fn smoothness_bound_scales_with_features() {
        let pooled = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let readout = DMatrix::identity(2, 2);
        let base = estimate_smoothness(&pooled, &readout, false);
        assert_relative_eq!(base, 0.25, epsilon = 1e-9);
        let scaled = estimate_smoothness(&(2.0 * &pooled), &readout, false);
        assert_relative_eq!(scaled, 1.0, epsilon = 1e-9);
    }
}
