//! Graphs, graph signals, and graph shift operators.
//!
//! A shift operator S is the sparse matrix that propagates a node signal one
//! hop along the edges; repeated application gives the k-hop signals S^k X
//! that the kernelized layers consume. Four standard kinds are supported, and
//! k-hop shifts are always computed by repeated sparse multiplication, never
//! by materializing a dense matrix power.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// The supported graph shift operator kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftKind {
    Adjacency,
    SymmetricNormalizedAdjacency,
    Laplacian,
    NormalizedLaplacian,
}

impl ShiftKind {
    pub const ALL: [ShiftKind; 4] = [
        ShiftKind::Adjacency,
        ShiftKind::SymmetricNormalizedAdjacency,
        ShiftKind::Laplacian,
        ShiftKind::NormalizedLaplacian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShiftKind::Adjacency => "adjacency",
            ShiftKind::SymmetricNormalizedAdjacency => "symmetric-normalized-adjacency",
            ShiftKind::Laplacian => "laplacian",
            ShiftKind::NormalizedLaplacian => "normalized-laplacian",
        }
    }

    fn is_normalized(self) -> bool {
        matches!(
            self,
            ShiftKind::SymmetricNormalizedAdjacency | ShiftKind::NormalizedLaplacian
        )
    }
}

impl fmt::Display for ShiftKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShiftKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adjacency" => Ok(ShiftKind::Adjacency),
            "symmetric-normalized-adjacency" => Ok(ShiftKind::SymmetricNormalizedAdjacency),
            "laplacian" => Ok(ShiftKind::Laplacian),
            "normalized-laplacian" => Ok(ShiftKind::NormalizedLaplacian),
            other => Err(Error::InvalidConfig(format!(
                "unknown shift kind {other:?} (expected one of: adjacency, \
                 symmetric-normalized-adjacency, laplacian, normalized-laplacian)"
            ))),
        }
    }
}

/// What to do when a normalized shift kind meets a degree-zero node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IsolatedNodePolicy {
    /// Define the D^{-1/2} entry as 0, producing an all-zero row.
    ZeroRow,
    /// Refuse to build the operator.
    Error,
}

/// A finite graph with weighted edges.
///
/// Edges are stored as directed (src, dst, weight) entries in a sorted map;
/// undirected graphs keep the entry set closed under endpoint swap, and
/// symmetrization never duplicates a self-loop. Construction rejects
/// out-of-range node ids, non-finite weights, and conflicting duplicate
/// weights for the same edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    undirected: bool,
    edges: BTreeMap<(usize, usize), f64>,
}

impl Graph {
    pub fn new(num_nodes: usize, edges: &[(usize, usize, f64)], undirected: bool) -> Result<Self> {
        let mut map = BTreeMap::new();
        for &(src, dst, w) in edges {
            if src >= num_nodes || dst >= num_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge ({src}, {dst}) references a node id >= num_nodes ({num_nodes})"
                )));
            }
            if !w.is_finite() {
                return Err(Error::InvalidGraph(format!(
                    "edge ({src}, {dst}) has non-finite weight {w}"
                )));
            }
            let mut insert = |a: usize, b: usize| -> Result<()> {
                match map.insert((a, b), w) {
                    Some(prev) if prev != w => Err(Error::InvalidGraph(format!(
                        "edge ({a}, {b}) listed twice with conflicting weights {prev} and {w}"
                    ))),
                    _ => Ok(()),
                }
            };
            insert(src, dst)?;
            if undirected && src != dst {
                insert(dst, src)?;
            }
        }
        Ok(Graph {
            num_nodes,
            undirected,
            edges: map,
        })
    }

    /// An unweighted undirected graph (every edge weight 1).
    pub fn undirected_unweighted(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let weighted: Vec<(usize, usize, f64)> =
            edges.iter().map(|&(a, b)| (a, b, 1.0)).collect();
        Graph::new(num_nodes, &weighted, true)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn is_undirected(&self) -> bool {
        self.undirected
    }

    /// Directed (src, dst, weight) entries in sorted order. For undirected
    /// graphs each off-diagonal edge appears in both orientations.
    pub fn edge_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.edges.iter().map(|(&(s, d), &w)| (s, d, w))
    }

    pub fn num_edge_entries(&self) -> usize {
        self.edges.len()
    }
}

/// A node signal: one row of features per node.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSignal {
    data: DMatrix<f64>,
}

impl GraphSignal {
    /// Wraps an n x F matrix. Requires at least one feature column and finite
    /// entries.
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.ncols() == 0 {
            return Err(Error::ShapeMismatch(
                "graph signal needs at least one feature column".into(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("graph signal entry".into()));
        }
        Ok(GraphSignal { data })
    }

    pub fn num_nodes(&self) -> usize {
        self.data.nrows()
    }

    pub fn num_features(&self) -> usize {
        self.data.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }
}

/// Sparse CSR storage for one shift operator.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftOperator {
    kind: ShiftKind,
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl ShiftOperator {
    pub fn kind(&self) -> ShiftKind {
        self.kind
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// S * X by sparse row traversal.
    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.n {
            return Err(Error::ShapeMismatch(format!(
                "shift operator has {} nodes but signal has {} rows",
                self.n,
                x.nrows()
            )));
        }
        let f = x.ncols();
        let mut out = DMatrix::zeros(self.n, f);
        for i in 0..self.n {
            for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[idx];
                let w = self.values[idx];
                for c in 0..f {
                    out[(i, c)] += w * x[(j, c)];
                }
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[idx])] = self.values[idx];
            }
        }
        m
    }

    fn from_entries(kind: ShiftKind, n: usize, entries: &BTreeMap<(usize, usize), f64>) -> Self {
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        // Entries are keyed (row, col) and BTreeMap iteration is row-major.
        for (&(i, j), &v) in entries {
            row_ptr[i + 1] += 1;
            col_idx.push(j);
            values.push(v);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        ShiftOperator {
            kind,
            n,
            row_ptr,
            col_idx,
            values,
        }
    }
}

/// Builds a shift operator with the default isolated-node policy
/// (degree-zero rows of normalized kinds become all-zero rows).
pub fn build_shift_operator(graph: &Graph, kind: ShiftKind) -> Result<ShiftOperator> {
    build_shift_operator_with(graph, kind, IsolatedNodePolicy::ZeroRow)
}

/// Builds a shift operator with an explicit isolated-node policy.
///
/// The operator follows the in-neighborhood convention: entry (i, j) carries
/// the weight of edge (j, i), so an entry is zero whenever (j, i) is not an
/// edge and j != i.
pub fn build_shift_operator_with(
    graph: &Graph,
    kind: ShiftKind,
    policy: IsolatedNodePolicy,
) -> Result<ShiftOperator> {
    let n = graph.num_nodes();
    // adjacency[(i, j)] = weight of edge (j, i)
    let mut adjacency: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (src, dst, w) in graph.edge_entries() {
        adjacency.insert((dst, src), w);
    }
    let mut degree = vec![0.0f64; n];
    for (&(i, _), &w) in &adjacency {
        degree[i] += w;
    }

    if kind.is_normalized() {
        for (i, &d) in degree.iter().enumerate() {
            if d == 0.0 && policy == IsolatedNodePolicy::Error {
                return Err(Error::InvalidGraph(format!(
                    "node {i} has degree zero; {kind} requires positive degrees \
                     under the strict isolated-node policy"
                )));
            }
            if d < 0.0 {
                return Err(Error::InvalidGraph(format!(
                    "node {i} has negative degree {d}; {kind} is undefined"
                )));
            }
        }
    }

    let entries = match kind {
        ShiftKind::Adjacency => adjacency,
        ShiftKind::SymmetricNormalizedAdjacency => {
            let inv_sqrt: Vec<f64> = degree
                .iter()
                .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
                .collect();
            adjacency
                .iter()
                .map(|(&(i, j), &w)| ((i, j), w * inv_sqrt[i] * inv_sqrt[j]))
                .collect()
        }
        ShiftKind::Laplacian => {
            let mut entries = BTreeMap::new();
            for i in 0..n {
                if degree[i] != 0.0 {
                    entries.insert((i, i), degree[i]);
                }
            }
            for (&(i, j), &w) in &adjacency {
                let e = entries.entry((i, j)).or_insert(0.0);
                *e -= w;
            }
            entries.retain(|_, v| *v != 0.0);
            entries
        }
        ShiftKind::NormalizedLaplacian => {
            let inv_sqrt: Vec<f64> = degree
                .iter()
                .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
                .collect();
            let mut entries = BTreeMap::new();
            for i in 0..n {
                if degree[i] > 0.0 {
                    entries.insert((i, i), 1.0);
                }
            }
            for (&(i, j), &w) in &adjacency {
                let e = entries.entry((i, j)).or_insert(0.0);
                *e -= w * inv_sqrt[i] * inv_sqrt[j];
            }
            entries.retain(|_, v| *v != 0.0);
            entries
        }
    };

    Ok(ShiftOperator::from_entries(kind, n, &entries))
}

/// S^k X by k repeated sparse multiplications. k = 0 returns X unchanged.
pub fn shift_signal(s: &ShiftOperator, x: &GraphSignal, k: usize) -> Result<GraphSignal> {
    if x.num_nodes() != s.num_nodes() {
        return Err(Error::ShapeMismatch(format!(
            "shift operator has {} nodes but signal has {} rows",
            s.num_nodes(),
            x.num_nodes()
        )));
    }
    if k == 0 {
        return Ok(x.clone());
    }
    let mut current = s.apply(x.matrix())?;
    for _ in 1..k {
        current = s.apply(&current)?;
    }
    GraphSignal::new(current)
}

/// The k-hop signals [X, SX, ..., S^K X] of one graph, hop-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftStack {
    hops: Vec<GraphSignal>,
}

impl ShiftStack {
    /// Number of hops K (the stack holds K + 1 signals).
    pub fn num_hops(&self) -> usize {
        self.hops.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.hops[0].num_nodes()
    }

    pub fn num_features(&self) -> usize {
        self.hops[0].num_features()
    }

    /// The hop-k signal S^k X.
    pub fn hop(&self, k: usize) -> &GraphSignal {
        &self.hops[k]
    }

    /// The (K+1) x F matrix whose row k is z_i^k = [S^k X]_i.
    pub fn node_stack(&self, node: usize) -> DMatrix<f64> {
        let f = self.num_features();
        let mut m = DMatrix::zeros(self.hops.len(), f);
        for (k, hop) in self.hops.iter().enumerate() {
            for c in 0..f {
                m[(k, c)] = hop.matrix()[(node, c)];
            }
        }
        m
    }
}

/// Computes the full hop stack [X, SX, ..., S^K X] incrementally.
pub fn shift_stack(s: &ShiftOperator, x: &GraphSignal, num_hops: usize) -> Result<ShiftStack> {
    if x.num_nodes() != s.num_nodes() {
        return Err(Error::ShapeMismatch(format!(
            "shift operator has {} nodes but signal has {} rows",
            s.num_nodes(),
            x.num_nodes()
        )));
    }
    let mut hops = Vec::with_capacity(num_hops + 1);
    hops.push(x.clone());
    for k in 1..=num_hops {
        let next = s.apply(hops[k - 1].matrix())?;
        hops.push(GraphSignal::new(next)?);
    }
    Ok(ShiftStack { hops })
}

/// Scales every nonzero row to unit l2 norm; zero rows pass through.
pub fn normalize_rows(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    fn path3() -> Graph {
        Graph::undirected_unweighted(3, &[(0, 1), (1, 2)]).unwrap()
    }

    fn dense(g: &Graph, kind: ShiftKind) -> DMatrix<f64> {
        build_shift_operator(g, kind).unwrap().to_dense()
    }

    #[test]
    fn adjacency_of_path_graph() {
        let a = dense(&path3(), ShiftKind::Adjacency);
        let expected = dmatrix![
            0.0, 1.0, 0.0;
            1.0, 0.0, 1.0;
            0.0, 1.0, 0.0;
        ];
        assert_eq!(a, expected);
    }

    #[test]
    fn single_node_no_edges() {
        let g = Graph::undirected_unweighted(1, &[]).unwrap();
        for kind in ShiftKind::ALL {
            let s = build_shift_operator(&g, kind).unwrap();
            assert_eq!(s.to_dense(), DMatrix::zeros(1, 1), "{kind}");
        }
    }

    #[test]
    fn triangle_symmetric_normalization_halves_offdiagonals() {
        let g = Graph::undirected_unweighted(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let s = dense(&g, ShiftKind::SymmetricNormalizedAdjacency);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 0.0 } else { 0.5 };
                assert_abs_diff_eq!(s[(i, j)], want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn laplacian_of_path_graph() {
        let l = dense(&path3(), ShiftKind::Laplacian);
        let expected = dmatrix![
            1.0, -1.0, 0.0;
            -1.0, 2.0, -1.0;
            0.0, -1.0, 1.0;
        ];
        assert_eq!(l, expected);
    }

    #[test]
    fn normalized_laplacian_rows_of_isolated_nodes_are_zero() {
        let g = Graph::undirected_unweighted(3, &[(0, 1)]).unwrap();
        let l = dense(&g, ShiftKind::NormalizedLaplacian);
        assert_abs_diff_eq!(l[(0, 0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l[(0, 1)], -1.0, epsilon = 1e-12);
        for j in 0..3 {
            assert_eq!(l[(2, j)], 0.0);
        }
    }

    #[test]
    fn strict_policy_rejects_isolated_nodes() {
        let g = Graph::undirected_unweighted(2, &[]).unwrap();
        for kind in [
            ShiftKind::SymmetricNormalizedAdjacency,
            ShiftKind::NormalizedLaplacian,
        ] {
            let err =
                build_shift_operator_with(&g, kind, IsolatedNodePolicy::Error).unwrap_err();
            assert!(matches!(err, Error::InvalidGraph(_)), "{kind}");
        }
        // Unnormalized kinds ignore the policy.
        assert!(
            build_shift_operator_with(&g, ShiftKind::Adjacency, IsolatedNodePolicy::Error).is_ok()
        );
    }

    #[test]
    fn edge_weights_enter_the_operator() {
        let g = Graph::new(2, &[(0, 1, 2.5)], true).unwrap();
        let a = dense(&g, ShiftKind::Adjacency);
        assert_eq!(a[(0, 1)], 2.5);
        assert_eq!(a[(1, 0)], 2.5);
        // Weighted degrees feed normalization: off-diagonal becomes w / d = 1.
        let s = dense(&g, ShiftKind::SymmetricNormalizedAdjacency);
        assert_abs_diff_eq!(s[(0, 1)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn graph_rejects_out_of_range_and_conflicting_edges() {
        assert!(matches!(
            Graph::undirected_unweighted(2, &[(0, 2)]),
            Err(Error::InvalidGraph(_))
        ));
        assert!(matches!(
            Graph::new(2, &[(0, 1, 1.0), (1, 0, 2.0)], true),
            Err(Error::InvalidGraph(_))
        ));
        // Exact duplicates (both orientations listed, as TUDataset files do) are fine.
        let g = Graph::new(2, &[(0, 1, 1.0), (1, 0, 1.0)], true).unwrap();
        assert_eq!(g.num_edge_entries(), 2);
    }

    #[test]
    fn self_loop_is_not_duplicated_by_symmetrization() {
        let g = Graph::new(2, &[(0, 0, 1.0), (0, 1, 1.0)], true).unwrap();
        assert_eq!(g.num_edge_entries(), 3);
        let a = dense(&g, ShiftKind::Adjacency);
        assert_eq!(a[(0, 0)], 1.0);
    }

    #[test]
    fn shift_zero_hops_returns_signal_unchanged() {
        let g = path3();
        let s = build_shift_operator(&g, ShiftKind::Adjacency).unwrap();
        let x = GraphSignal::new(dmatrix![1.0; 0.25; -3.0]).unwrap();
        let y = shift_signal(&s, &x, 0).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn path_propagation_over_one_and_two_hops() {
        let g = path3();
        let s = build_shift_operator(&g, ShiftKind::Adjacency).unwrap();
        let x = GraphSignal::new(dmatrix![1.0; 0.0; 0.0]).unwrap();
        let one = shift_signal(&s, &x, 1).unwrap();
        assert_eq!(one.matrix(), &dmatrix![0.0; 1.0; 0.0]);
        let two = shift_signal(&s, &x, 2).unwrap();
        assert_eq!(two.matrix(), &dmatrix![1.0; 0.0; 1.0]);
    }

    #[test]
    fn shift_rejects_dimension_mismatch() {
        let g = path3();
        let s = build_shift_operator(&g, ShiftKind::Adjacency).unwrap();
        let x = GraphSignal::new(dmatrix![1.0; 2.0]).unwrap();
        assert!(matches!(
            shift_signal(&s, &x, 1),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            shift_stack(&s, &x, 1),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn stack_of_path_graph_matches_hand_shifts() {
        let g = path3();
        let s = build_shift_operator(&g, ShiftKind::Adjacency).unwrap();
        let x = GraphSignal::new(dmatrix![1.0; 0.0; 0.0]).unwrap();
        let stack = shift_stack(&s, &x, 2).unwrap();
        assert_eq!(stack.num_hops(), 2);
        let node0 = stack.node_stack(0);
        assert_eq!(node0, dmatrix![1.0; 0.0; 1.0]);
        // Hop zero is the input, bit for bit.
        assert_eq!(stack.hop(0), &x);
    }

    #[test]
    fn stack_with_zero_hops_holds_only_the_input() {
        let g = path3();
        let s = build_shift_operator(&g, ShiftKind::Adjacency).unwrap();
        let x = GraphSignal::new(dmatrix![2.0; 3.0; 4.0]).unwrap();
        let stack = shift_stack(&s, &x, 0).unwrap();
        assert_eq!(stack.num_hops(), 0);
        assert_eq!(stack.hop(0), &x);
    }

    #[test]
    fn star_graph_hop_one_sums_neighbors() {
        // Center 0 with leaves 1..3, all-ones signal.
        let g = Graph::undirected_unweighted(4, &[(0, 1), (0, 2), (0, 3)]).unwrap();
        let s = build_shift_operator(&g, ShiftKind::Adjacency).unwrap();
        let x = GraphSignal::new(DMatrix::from_element(4, 1, 1.0)).unwrap();
        let stack = shift_stack(&s, &x, 1).unwrap();
        assert_eq!(stack.node_stack(0), dmatrix![1.0; 3.0]);
        assert_eq!(stack.node_stack(1), dmatrix![1.0; 1.0]);
    }

    #[test]
    fn normalize_rows_cases() {
        let x = dmatrix![
            3.0, 4.0;
            0.0, 0.0;
            1.0, 0.0;
        ];
        let n = normalize_rows(&x);
        assert_abs_diff_eq!(n[(0, 0)], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(n[(0, 1)], 0.8, epsilon = 1e-15);
        assert_eq!(n[(1, 0)], 0.0);
        assert_eq!(n[(1, 1)], 0.0);
        assert_eq!(n[(2, 0)], 1.0);
        // Already-normalized input is a fixed point.
        let again = normalize_rows(&n);
        assert_abs_diff_eq!((again - &n).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn graph_signal_validation() {
        assert!(matches!(
            GraphSignal::new(DMatrix::zeros(3, 0)),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            GraphSignal::new(dmatrix![1.0; f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }
}
