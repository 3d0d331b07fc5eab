//! Kernelized convolutional layers and the assembled graph classifier.
//!
//! A layer holds one factorized kernel per hop and one filter matrix per hop.
//! Its forward pass is linear in the filters: hop-k node signals are
//! row-normalized, mapped into the hop's factor coordinates, multiplied by
//! the hop's filter, and summed across hops. The full model runs layers in
//! sequence, sum-pools the last layer's node features into a graph
//! representation, and applies the final readout plus bias to produce class
//! scores. Frozen per-hidden-layer readouts used during training ride along
//! for inspection and archiving; inference never reads them.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::factor::{map_rows_to_features, FactorizedKernel};
use crate::graph::{
    build_shift_operator, normalize_rows, shift_stack, Graph, GraphSignal, ShiftKind,
    ShiftOperator,
};

/// One kernelized convolutional layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CgcnLayer {
    hops: usize,
    kernels: Vec<FactorizedKernel>,
    filters: Vec<DMatrix<f64>>,
    budget: f64,
}

impl CgcnLayer {
    /// Assembles a layer from per-hop kernels and filters.
    ///
    /// Requires one kernel and one filter per hop 0..=K, hop tags in order,
    /// filter row counts matching each hop's factor width, a common output
    /// width, and a positive budget.
    pub fn new(
        kernels: Vec<FactorizedKernel>,
        filters: Vec<DMatrix<f64>>,
        budget: f64,
    ) -> Result<Self> {
        if kernels.is_empty() || kernels.len() != filters.len() {
            return Err(Error::ShapeMismatch(format!(
                "layer needs matching kernel and filter counts, got {} and {}",
                kernels.len(),
                filters.len()
            )));
        }
        if !(budget > 0.0) || !budget.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "layer budget must be a positive finite number, got {budget}"
            )));
        }
        let f_out = filters[0].ncols();
        for (k, (kernel, filter)) in kernels.iter().zip(&filters).enumerate() {
            if kernel.hop() != k {
                return Err(Error::InvalidArgument(format!(
                    "kernel at position {k} is tagged hop {}",
                    kernel.hop()
                )));
            }
            if filter.nrows() != kernel.width() {
                return Err(Error::ShapeMismatch(format!(
                    "hop {k} filter has {} rows but the factor width is {}",
                    filter.nrows(),
                    kernel.width()
                )));
            }
            if filter.ncols() != f_out {
                return Err(Error::ShapeMismatch(format!(
                    "hop {k} filter has {} columns, expected {f_out}",
                    filter.ncols()
                )));
            }
            if kernel.input_dim() != kernels[0].input_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "hop {k} kernel expects {}-dimensional inputs but hop 0 expects {}",
                    kernel.input_dim(),
                    kernels[0].input_dim()
                )));
            }
        }
        Ok(CgcnLayer {
            hops: kernels.len() - 1,
            kernels,
            filters,
            budget,
        })
    }

    /// A layer with all-zero filters of the given output width.
    pub fn with_zero_filters(
        kernels: Vec<FactorizedKernel>,
        output_dim: usize,
        budget: f64,
    ) -> Result<Self> {
        let filters = kernels
            .iter()
            .map(|k| DMatrix::zeros(k.width(), output_dim))
            .collect();
        CgcnLayer::new(kernels, filters, budget)
    }

    pub fn hops(&self) -> usize {
        self.hops
    }

    pub fn input_dim(&self) -> usize {
        self.kernels[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.filters[0].ncols()
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn kernels(&self) -> &[FactorizedKernel] {
        &self.kernels
    }

    pub fn filters(&self) -> &[DMatrix<f64>] {
        &self.filters
    }

    /// The per-hop filters stacked vertically: the (sum_k P_k) x F_out matrix
    /// the nuclear constraint applies to.
    pub fn stacked_filters(&self) -> DMatrix<f64> {
        stack_filter_blocks(&self.filters)
    }

    /// Replaces the filters from a stacked matrix, splitting by hop widths.
    pub fn set_filters_from_stack(&mut self, stack: &DMatrix<f64>) -> Result<()> {
        let blocks = split_filter_stack(stack, &self.hop_widths(), self.output_dim())?;
        self.filters = blocks;
        Ok(())
    }

    /// Nuclear norm of the stacked filter matrix.
    pub fn filter_nuclear_norm(&self) -> f64 {
        crate::opt::nuclear_norm(&self.stacked_filters())
    }

    fn hop_widths(&self) -> Vec<usize> {
        self.kernels.iter().map(|k| k.width()).collect()
    }
}

/// Stacks per-hop filter blocks vertically.
pub fn stack_filter_blocks(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map(|b| b.ncols()).unwrap_or(0);
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.view_mut((at, 0), (b.nrows(), cols)).copy_from(b);
        at += b.nrows();
    }
    out
}

/// Splits a stacked filter matrix back into per-hop blocks.
pub fn split_filter_stack(
    stack: &DMatrix<f64>,
    heights: &[usize],
    cols: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let total: usize = heights.iter().sum();
    if stack.nrows() != total || stack.ncols() != cols {
        return Err(Error::ShapeMismatch(format!(
            "stacked filters are {}x{}, expected {}x{}",
            stack.nrows(),
            stack.ncols(),
            total,
            cols
        )));
    }
    let mut blocks = Vec::with_capacity(heights.len());
    let mut at = 0;
    for &h in heights {
        blocks.push(stack.view((at, 0), (h, cols)).into_owned());
        at += h;
    }
    Ok(blocks)
}

/// Per-hop kernel feature matrices for one graph: hop-k signals are
/// row-normalized and mapped through the hop's factor, giving an n x P_k
/// matrix per hop. Independent of the layer's filters.
pub fn layer_kernel_features(
    layer: &CgcnLayer,
    shift: &ShiftOperator,
    x: &GraphSignal,
) -> Result<Vec<DMatrix<f64>>> {
    if x.num_features() != layer.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "layer expects {}-feature signals, got {}",
            layer.input_dim(),
            x.num_features()
        )));
    }
    let stack = shift_stack(shift, x, layer.hops())?;
    let mut features = Vec::with_capacity(layer.hops() + 1);
    for (k, kernel) in layer.kernels.iter().enumerate() {
        let normalized = normalize_rows(stack.hop(k).matrix());
        features.push(map_rows_to_features(kernel, &normalized)?);
    }
    Ok(features)
}

/// Applies the filters: sum over hops of features_k * filter_k.
pub fn layer_forward(layer: &CgcnLayer, features: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    if features.len() != layer.hops() + 1 {
        return Err(Error::ShapeMismatch(format!(
            "layer has {} hops but {} feature blocks were supplied",
            layer.hops(),
            features.len()
        )));
    }
    let n = features[0].nrows();
    let mut out = DMatrix::zeros(n, layer.output_dim());
    for (k, (feat, filter)) in features.iter().zip(&layer.filters).enumerate() {
        if feat.nrows() != n || feat.ncols() != filter.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "hop {k} features are {}x{} but the filter has {} rows",
                feat.nrows(),
                feat.ncols(),
                filter.nrows()
            )));
        }
        out += feat * filter;
    }
    Ok(out)
}

/// Kernel features and forward pass in one call.
pub fn layer_apply(
    layer: &CgcnLayer,
    shift: &ShiftOperator,
    x: &GraphSignal,
) -> Result<DMatrix<f64>> {
    let features = layer_kernel_features(layer, shift, x)?;
    layer_forward(layer, &features)
}

/// The assembled classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct CgcnModel {
    shift_kind: ShiftKind,
    layers: Vec<CgcnLayer>,
    hidden_readouts: Vec<DMatrix<f64>>,
    final_readout: DMatrix<f64>,
    final_bias: DVector<f64>,
}

impl CgcnModel {
    pub fn new(
        shift_kind: ShiftKind,
        layers: Vec<CgcnLayer>,
        hidden_readouts: Vec<DMatrix<f64>>,
        final_readout: DMatrix<f64>,
        final_bias: DVector<f64>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one layer".into()));
        }
        for i in 1..layers.len() {
            if layers[i].input_dim() != layers[i - 1].output_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {} expects {}-feature inputs but layer {} emits {}",
                    i + 1,
                    layers[i].input_dim(),
                    i,
                    layers[i - 1].output_dim()
                )));
            }
        }
        if hidden_readouts.len() != layers.len() - 1 {
            return Err(Error::ShapeMismatch(format!(
                "model with {} layers needs {} hidden readouts, got {}",
                layers.len(),
                layers.len() - 1,
                hidden_readouts.len()
            )));
        }
        let g = final_readout.ncols();
        if g < 2 {
            return Err(Error::InvalidArgument(format!(
                "classifier needs at least two classes, got {g}"
            )));
        }
        for (i, r) in hidden_readouts.iter().enumerate() {
            if r.nrows() != layers[i].output_dim() || r.ncols() != g {
                return Err(Error::ShapeMismatch(format!(
                    "hidden readout {} is {}x{}, expected {}x{g}",
                    i + 1,
                    r.nrows(),
                    r.ncols(),
                    layers[i].output_dim()
                )));
            }
        }
        let f_last = layers.last().unwrap().output_dim();
        if final_readout.nrows() != f_last {
            return Err(Error::ShapeMismatch(format!(
                "final readout has {} rows but the last layer emits {} features",
                final_readout.nrows(),
                f_last
            )));
        }
        if final_bias.len() != g {
            return Err(Error::ShapeMismatch(format!(
                "final bias has length {}, expected {g}",
                final_bias.len()
            )));
        }
        Ok(CgcnModel {
            shift_kind,
            layers,
            hidden_readouts,
            final_readout,
            final_bias,
        })
    }

    pub fn shift_kind(&self) -> ShiftKind {
        self.shift_kind
    }

    pub fn layers(&self) -> &[CgcnLayer] {
        &self.layers
    }

    pub fn hidden_readouts(&self) -> &[DMatrix<f64>] {
        &self.hidden_readouts
    }

    pub fn final_readout(&self) -> &DMatrix<f64> {
        &self.final_readout
    }

    pub fn final_bias(&self) -> &DVector<f64> {
        &self.final_bias
    }

    pub fn num_classes(&self) -> usize {
        self.final_readout.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }
}

fn column_sums(m: &DMatrix<f64>) -> RowDVector<f64> {
    let mut out = RowDVector::zeros(m.ncols());
    for row in m.row_iter() {
        out += row;
    }
    out
}

/// The sum-pooled pre-readout representation of one graph.
pub fn model_pooled_representation(
    model: &CgcnModel,
    graph: &Graph,
    x: &GraphSignal,
) -> Result<DVector<f64>> {
    if x.num_nodes() != graph.num_nodes() {
        return Err(Error::ShapeMismatch(format!(
            "graph has {} nodes but the signal has {} rows",
            graph.num_nodes(),
            x.num_nodes()
        )));
    }
    let shift = build_shift_operator(graph, model.shift_kind)?;
    let mut signal = x.clone();
    for layer in &model.layers {
        let out = layer_apply(layer, &shift, &signal)?;
        signal = GraphSignal::new(out)?;
    }
    Ok(column_sums(signal.matrix()).transpose())
}

/// Class scores for one graph: pooled representation through the final
/// readout plus bias.
pub fn model_forward(model: &CgcnModel, graph: &Graph, x: &GraphSignal) -> Result<DVector<f64>> {
    let pooled = model_pooled_representation(model, graph, x)?;
    Ok(model.final_readout.transpose() * pooled + &model.final_bias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::factorize_exact;
    use crate::kernel::KernelSpec;
    use nalgebra::dmatrix;

    /// Builds a layer whose hop-k kernels are exact factorizations of the
    /// normalized hop-k signals of (graph, x) itself.
    fn layer_trained_on(
        graph: &Graph,
        x: &GraphSignal,
        hops: usize,
        spec: &KernelSpec,
        f_out: usize,
    ) -> (CgcnLayer, ShiftOperator) {
        let shift = build_shift_operator(graph, ShiftKind::Adjacency).unwrap();
        let stack = shift_stack(&shift, x, hops).unwrap();
        let mut kernels = Vec::new();
        for k in 0..=hops {
            let normalized = normalize_rows(stack.hop(k).matrix());
            kernels.push(factorize_exact(spec, &normalized).unwrap().with_hop(k));
        }
        let layer = CgcnLayer::with_zero_filters(kernels, f_out, 1.0).unwrap();
        (layer, shift)
    }

    fn path3_signal() -> (Graph, GraphSignal) {
        let g = Graph::undirected_unweighted(3, &[(0, 1), (1, 2)]).unwrap();
        let x = GraphSignal::new(dmatrix![1.0, 0.2; -0.5, 0.7; 0.3, 0.9]).unwrap();
        (g, x)
    }

    #[test]
    fn kernel_features_reproduce_q_rows_for_training_data() {
        let (g, x) = path3_signal();
        let spec = KernelSpec::inverse_polynomial();
        let (layer, shift) = layer_trained_on(&g, &x, 0, &spec, 2);
        let features = layer_kernel_features(&layer, &shift, &x).unwrap();
        assert_eq!(features.len(), 1);
        let q = layer.kernels()[0].q();
        assert!((&features[0] - q).norm() <= 1e-6);
    }

    #[test]
    fn kernel_features_do_not_depend_on_filters() {
        let (g, x) = path3_signal();
        let spec = KernelSpec::rbf(0.2).unwrap();
        let (mut layer, shift) = layer_trained_on(&g, &x, 1, &spec, 2);
        let before = layer_kernel_features(&layer, &shift, &x).unwrap();
        let stack = DMatrix::from_element(
            layer.stacked_filters().nrows(),
            layer.output_dim(),
            0.37,
        );
        layer.set_filters_from_stack(&stack).unwrap();
        let after = layer_kernel_features(&layer, &shift, &x).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn zero_filters_produce_zero_output() {
        let (g, x) = path3_signal();
        let spec = KernelSpec::rbf(0.2).unwrap();
        let (layer, shift) = layer_trained_on(&g, &x, 1, &spec, 4);
        let out = layer_apply(&layer, &shift, &x).unwrap();
        assert_eq!(out, DMatrix::zeros(3, 4));
    }

    #[test]
    fn forward_is_linear_in_the_filters() {
        let (g, x) = path3_signal();
        let spec = KernelSpec::rbf(0.2).unwrap();
        let (mut layer, shift) = layer_trained_on(&g, &x, 1, &spec, 2);
        let features = layer_kernel_features(&layer, &shift, &x).unwrap();
        let height = layer.stacked_filters().nrows();
        let a = DMatrix::from_fn(height, 2, |i, j| ((i * 3 + j) as f64 * 0.21).sin());
        let b = DMatrix::from_fn(height, 2, |i, j| ((i + 2 * j) as f64 * 0.13).cos());

        layer.set_filters_from_stack(&a).unwrap();
        let out_a = layer_forward(&layer, &features).unwrap();
        layer.set_filters_from_stack(&b).unwrap();
        let out_b = layer_forward(&layer, &features).unwrap();
        layer.set_filters_from_stack(&(2.0 * &a - 3.0 * &b)).unwrap();
        let out_ab = layer_forward(&layer, &features).unwrap();
        assert!((out_ab - (2.0 * out_a - 3.0 * out_b)).norm() <= 1e-10);
    }

    #[test]
    fn single_node_graph_feature_shapes() {
        let g = Graph::undirected_unweighted(1, &[]).unwrap();
        let x = GraphSignal::new(dmatrix![0.6, 0.8]).unwrap();
        let spec = KernelSpec::inverse_polynomial();
        let (layer, shift) = layer_trained_on(&g, &x, 2, &spec, 3);
        let features = layer_kernel_features(&layer, &shift, &x).unwrap();
        assert_eq!(features.len(), 3);
        for (k, f) in features.iter().enumerate() {
            assert_eq!(f.nrows(), 1);
            assert_eq!(f.ncols(), layer.kernels()[k].width());
        }
    }

    #[test]
    fn layer_rejects_mismatched_signals() {
        let (g, x) = path3_signal();
        let spec = KernelSpec::rbf(0.2).unwrap();
        let (layer, shift) = layer_trained_on(&g, &x, 1, &spec, 2);
        let wrong = GraphSignal::new(DMatrix::zeros(3, 5)).unwrap();
        assert!(matches!(
            layer_kernel_features(&layer, &shift, &wrong),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn stack_and_split_round_trip() {
        let blocks = vec![
            DMatrix::from_fn(2, 3, |i, j| (i + j) as f64),
            DMatrix::from_fn(4, 3, |i, j| (i * j) as f64 + 1.0),
        ];
        let stack = stack_filter_blocks(&blocks);
        assert_eq!(stack.nrows(), 6);
        let back = split_filter_stack(&stack, &[2, 4], 3).unwrap();
        assert_eq!(back, blocks);
        assert!(split_filter_stack(&stack, &[3, 4], 3).is_err());
    }

    fn tiny_model(g: &Graph, x: &GraphSignal, bias: DVector<f64>) -> CgcnModel {
        let spec = KernelSpec::rbf(0.2).unwrap();
        let (layer, _) = layer_trained_on(g, x, 1, &spec, 2);
        CgcnModel::new(
            ShiftKind::Adjacency,
            vec![layer],
            vec![],
            DMatrix::identity(2, 2),
            bias,
        )
        .unwrap()
    }

    #[test]
    fn zero_filter_model_scores_equal_bias() {
        let (g, x) = path3_signal();
        let bias = DVector::from_vec(vec![0.3, -0.2]);
        let model = tiny_model(&g, &x, bias.clone());
        let scores = model_forward(&model, &g, &x).unwrap();
        assert!((scores - bias).norm() <= 1e-15);
    }

    #[test]
    fn disjoint_duplicate_graph_doubles_the_pooled_representation() {
        let (g, x) = path3_signal();
        let mut model = tiny_model(&g, &x, DVector::zeros(2));
        // Give the single layer nonzero filters so pooling sees real values.
        let height = model.layers()[0].stacked_filters().nrows();
        let filters = DMatrix::from_fn(height, 2, |i, j| ((i + j) as f64 * 0.17).sin());
        model.layers[0].set_filters_from_stack(&filters).unwrap();

        let single = model_pooled_representation(&model, &g, &x).unwrap();

        // Two disjoint copies of the path, signal stacked twice.
        let edges: Vec<(usize, usize)> = [(0, 1), (1, 2), (3, 4), (4, 5)].to_vec();
        let g2 = Graph::undirected_unweighted(6, &edges).unwrap();
        let mut stacked = DMatrix::zeros(6, 2);
        stacked.view_mut((0, 0), (3, 2)).copy_from(x.matrix());
        stacked.view_mut((3, 0), (3, 2)).copy_from(x.matrix());
        let x2 = GraphSignal::new(stacked).unwrap();
        let double = model_pooled_representation(&model, &g2, &x2).unwrap();
        assert!((double - 2.0 * single).norm() <= 1e-9);
    }

    #[test]
    fn isomorphic_relabeling_leaves_scores_unchanged() {
        let (g, x) = path3_signal();
        let mut model = tiny_model(&g, &x, DVector::from_vec(vec![0.1, 0.4]));
        let height = model.layers()[0].stacked_filters().nrows();
        let filters = DMatrix::from_fn(height, 2, |i, j| ((2 * i + j) as f64 * 0.29).cos());
        model.layers[0].set_filters_from_stack(&filters).unwrap();
        let scores = model_forward(&model, &g, &x).unwrap();

        // Relabel nodes by the permutation 0->2, 1->0, 2->1.
        let perm = [2usize, 0, 1];
        let g_perm =
            Graph::undirected_unweighted(3, &[(perm[0], perm[1]), (perm[1], perm[2])]).unwrap();
        let mut xp = DMatrix::zeros(3, 2);
        for i in 0..3 {
            xp.set_row(perm[i], &x.matrix().row(i));
        }
        let scores_perm =
            model_forward(&model, &g_perm, &GraphSignal::new(xp).unwrap()).unwrap();
        assert!((scores - scores_perm).norm() <= 1e-9);
    }

    #[test]
    fn model_constructor_validates_shapes() {
        let (g, x) = path3_signal();
        let spec = KernelSpec::rbf(0.2).unwrap();
        let (layer, _) = layer_trained_on(&g, &x, 1, &spec, 2);
        // Final readout with wrong row count.
        assert!(CgcnModel::new(
            ShiftKind::Adjacency,
            vec![layer.clone()],
            vec![],
            DMatrix::identity(3, 2),
            DVector::zeros(2),
        )
        .is_err());
        // Missing hidden readout for a two-layer model.
        let (layer2, _) = layer_trained_on(&g, &x, 1, &spec, 2);
        assert!(CgcnModel::new(
            ShiftKind::Adjacency,
            vec![layer.clone(), layer2],
            vec![],
            DMatrix::identity(2, 2),
            DVector::zeros(2),
        )
        .is_err());
        // Bias length mismatch.
        assert!(CgcnModel::new(
            ShiftKind::Adjacency,
            vec![layer],
            vec![],
            DMatrix::identity(2, 2),
            DVector::zeros(3),
        )
        .is_err());
    }
}
