//! TUDataset plain-text ingestion and the matching writer.
//!
//! A dataset directory holds `<DS>_A.txt` (one `i, j` edge per line,
//! 1-based global node ids), `<DS>_graph_indicator.txt` (graph id per
//! node), `<DS>_graph_labels.txt` (label per graph), and optionally
//! `<DS>_node_labels.txt` or `<DS>_node_attributes.txt`. Node features are
//! taken from attributes when present, else one-hot node labels, else a
//! constant 1 per node.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphSignal};
use crate::train::{Dataset, Sample};

/// Where a dataset's node features came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    NodeAttributes,
    OneHotNodeLabels,
    ConstantOnes,
}

impl fmt::Display for FeatureSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureSource::NodeAttributes => f.write_str("node-attributes"),
            FeatureSource::OneHotNodeLabels => f.write_str("one-hot-node-labels"),
            FeatureSource::ConstantOnes => f.write_str("constant-ones"),
        }
    }
}

/// Summary of a parsed dataset directory.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub name: String,
    pub directory: PathBuf,
    pub num_graphs: usize,
    pub total_nodes: usize,
    /// Undirected edge count (each pair counted once).
    pub total_edges: usize,
    pub num_classes: usize,
    pub feature_source: FeatureSource,
}

fn parse_error(file: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

fn read_numbered_lines(dir: &Path, file: &str) -> Result<Vec<(usize, String)>> {
    let path = dir.join(file);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| parse_error(file, 0, format!("cannot read {}: {e}", path.display())))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty())
        .collect())
}

fn parse_int(file: &str, line: usize, raw: &str, what: &str) -> Result<i64> {
    raw.trim()
        .parse()
        .map_err(|_| parse_error(file, line, format!("invalid {what} {raw:?}")))
}

fn parse_float(file: &str, line: usize, raw: &str, what: &str) -> Result<f64> {
    let value: f64 = raw
        .trim()
        .parse()
        .map_err(|_| parse_error(file, line, format!("invalid {what} {raw:?}")))?;
    if !value.is_finite() {
        return Err(parse_error(
            file,
            line,
            format!("{what} {raw:?} is not finite"),
        ));
    }
    Ok(value)
}

/// Loads a TUDataset directory.
///
/// Graph labels are remapped to contiguous `[0, G)` in sorted order of the
/// raw values. Global node ids become per-graph local ids in file order.
pub fn load_tudataset(dir: &Path, name: &str) -> Result<(Dataset, DatasetManifest)> {
    let indicator_file = format!("{name}_graph_indicator.txt");
    let indicator = read_numbered_lines(dir, &indicator_file)?;
    let total_nodes = indicator.len();
    if total_nodes == 0 {
        return Err(parse_error(&indicator_file, 0, "dataset has no nodes"));
    }
    // graph_of[v] is the 0-based graph index of global node v (0-based).
    let mut graph_of = Vec::with_capacity(total_nodes);
    let mut num_graphs = 0usize;
    for &(line, ref raw) in &indicator {
        let id = parse_int(&indicator_file, line, raw, "graph id")?;
        if id < 1 {
            return Err(parse_error(
                &indicator_file,
                line,
                format!("graph ids are 1-based, got {id}"),
            ));
        }
        let idx = (id - 1) as usize;
        num_graphs = num_graphs.max(idx + 1);
        graph_of.push(idx);
    }
    let mut node_counts = vec![0usize; num_graphs];
    // local_of[v] is node v's 0-based index within its own graph.
    let mut local_of = Vec::with_capacity(total_nodes);
    for &g in &graph_of {
        local_of.push(node_counts[g]);
        node_counts[g] += 1;
    }
    if let Some(empty) = node_counts.iter().position(|&c| c == 0) {
        return Err(parse_error(
            &indicator_file,
            0,
            format!("graph {} has no nodes", empty + 1),
        ));
    }

    let edges_file = format!("{name}_A.txt");
    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    for &(line, ref raw) in &read_numbered_lines(dir, &edges_file)? {
        let (a, b) = raw.split_once(',').ok_or_else(|| {
            parse_error(&edges_file, line, format!("expected \"i, j\", got {raw:?}"))
        })?;
        let node = |raw: &str| -> Result<usize> {
            let id = parse_int(&edges_file, line, raw, "node id")?;
            if id < 1 || id as usize > total_nodes {
                return Err(parse_error(
                    &edges_file,
                    line,
                    format!("node id {id} outside 1..={total_nodes}"),
                ));
            }
            Ok((id - 1) as usize)
        };
        let src = node(a)?;
        let dst = node(b)?;
        if graph_of[src] != graph_of[dst] {
            return Err(parse_error(
                &edges_file,
                line,
                format!(
                    "edge joins graph {} and graph {}",
                    graph_of[src] + 1,
                    graph_of[dst] + 1
                ),
            ));
        }
        edges[graph_of[src]].push((local_of[src], local_of[dst]));
    }

    let labels_file = format!("{name}_graph_labels.txt");
    let label_lines = read_numbered_lines(dir, &labels_file)?;
    if label_lines.len() != num_graphs {
        return Err(parse_error(
            &labels_file,
            0,
            format!("{} labels for {num_graphs} graphs", label_lines.len()),
        ));
    }
    let mut raw_labels = Vec::with_capacity(num_graphs);
    for &(line, ref raw) in &label_lines {
        raw_labels.push(parse_int(&labels_file, line, raw, "graph label")?);
    }
    let classes: Vec<i64> = raw_labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if classes.len() < 2 {
        return Err(parse_error(
            &labels_file,
            0,
            format!("dataset has {} distinct labels, need at least 2", classes.len()),
        ));
    }
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|l| classes.binary_search(l).expect("label set built above"))
        .collect();

    // Feature precedence: attributes over one-hot labels over constant 1.
    let attributes_file = format!("{name}_node_attributes.txt");
    let node_labels_file = format!("{name}_node_labels.txt");
    let (features, feature_source): (Vec<Vec<f64>>, FeatureSource) =
        if dir.join(&attributes_file).is_file() {
            let lines = read_numbered_lines(dir, &attributes_file)?;
            if lines.len() != total_nodes {
                return Err(parse_error(
                    &attributes_file,
                    0,
                    format!("{} attribute rows for {total_nodes} nodes", lines.len()),
                ));
            }
            let mut rows = Vec::with_capacity(total_nodes);
            let mut arity = None;
            for &(line, ref raw) in &lines {
                let row: Vec<f64> = raw
                    .split(',')
                    .map(|v| parse_float(&attributes_file, line, v, "node attribute"))
                    .collect::<Result<_>>()?;
                match arity {
                    None => arity = Some(row.len()),
                    Some(a) if a != row.len() => {
                        return Err(parse_error(
                            &attributes_file,
                            line,
                            format!("row has {} attributes, expected {a}", row.len()),
                        ));
                    }
                    _ => {}
                }
                rows.push(row);
            }
            (rows, FeatureSource::NodeAttributes)
        } else if dir.join(&node_labels_file).is_file() {
            let lines = read_numbered_lines(dir, &node_labels_file)?;
            if lines.len() != total_nodes {
                return Err(parse_error(
                    &node_labels_file,
                    0,
                    format!("{} node labels for {total_nodes} nodes", lines.len()),
                ));
            }
            let mut raw_values = Vec::with_capacity(total_nodes);
            for &(line, ref raw) in &lines {
                raw_values.push(parse_int(&node_labels_file, line, raw, "node label")?);
            }
            let alphabet: Vec<i64> = raw_values
                .iter()
                .copied()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let rows = raw_values
                .iter()
                .map(|v| {
                    let mut row = vec![0.0; alphabet.len()];
                    row[alphabet.binary_search(v).expect("alphabet built above")] = 1.0;
                    row
                })
                .collect();
            (rows, FeatureSource::OneHotNodeLabels)
        } else {
            (vec![vec![1.0]; total_nodes], FeatureSource::ConstantOnes)
        };

    let feature_dim = features[0].len();
    let mut matrices: Vec<DMatrix<f64>> = node_counts
        .iter()
        .map(|&n| DMatrix::zeros(n, feature_dim))
        .collect();
    for (v, row) in features.iter().enumerate() {
        for (c, &value) in row.iter().enumerate() {
            matrices[graph_of[v]][(local_of[v], c)] = value;
        }
    }

    let mut samples = Vec::with_capacity(num_graphs);
    let mut total_edges = 0usize;
    for g in 0..num_graphs {
        let graph = Graph::undirected_unweighted(node_counts[g], &edges[g]).map_err(|e| {
            parse_error(&edges_file, 0, format!("graph {}: {e}", g + 1))
        })?;
        total_edges += graph
            .edge_entries()
            .filter(|&(s, d, _)| s <= d)
            .count();
        samples.push(Sample {
            graph,
            signal: GraphSignal::new(std::mem::replace(
                &mut matrices[g],
                DMatrix::zeros(0, 0),
            ))?,
            label: labels[g],
        });
    }
    let manifest = DatasetManifest {
        name: name.to_string(),
        directory: dir.to_path_buf(),
        num_graphs,
        total_nodes,
        total_edges,
        num_classes: classes.len(),
        feature_source,
    };
    Ok((Dataset::new(samples, classes.len())?, manifest))
}

/// Whether [`save_tudataset`] writes node features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaveFeatures {
    /// Write signals to `<DS>_node_attributes.txt`.
    NodeAttributes,
    /// Write no feature file (loads back as constant ones).
    Omit,
}

/// Writes a dataset in the TUDataset text layout.
///
/// Off-diagonal edges appear in both orientations, matching the
/// distributed format; graph labels are written as stored, so a save/load
/// round trip is the identity on structure, labels, and (with
/// [`SaveFeatures::NodeAttributes`]) signals.
pub fn save_tudataset(
    dataset: &Dataset,
    dir: &Path,
    name: &str,
    features: SaveFeatures,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut a = String::new();
    let mut indicator = String::new();
    let mut labels = String::new();
    let mut attributes = String::new();
    let mut offset = 0usize;
    for (g, sample) in dataset.samples().iter().enumerate() {
        for (src, dst, _) in sample.graph.edge_entries() {
            a.push_str(&format!("{}, {}\n", offset + src + 1, offset + dst + 1));
        }
        for _ in 0..sample.graph.num_nodes() {
            indicator.push_str(&format!("{}\n", g + 1));
        }
        labels.push_str(&format!("{}\n", sample.label));
        if features == SaveFeatures::NodeAttributes {
            let m = sample.signal.matrix();
            for r in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|c| m[(r, c)].to_string()).collect();
                attributes.push_str(&row.join(", "));
                attributes.push('\n');
            }
        }
        offset += sample.graph.num_nodes();
    }
    std::fs::write(dir.join(format!("{name}_A.txt")), a)?;
    std::fs::write(dir.join(format!("{name}_graph_indicator.txt")), indicator)?;
    std::fs::write(dir.join(format!("{name}_graph_labels.txt")), labels)?;
    if features == SaveFeatures::NodeAttributes {
        std::fs::write(dir.join(format!("{name}_node_attributes.txt")), attributes)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{sample_synthetic_dataset, SyntheticTask};

    fn temp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("cgcn-data-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn write_basic(dir: &Path) {
        // Graph 1: triangle (nodes 1..3). Graph 2: single edge (nodes 4..5).
        std::fs::write(
            dir.join("T_A.txt"),
            "1, 2\n2, 1\n2, 3\n3, 2\n1, 3\n3, 1\n4, 5\n5, 4\n",
        )
        .unwrap();
        std::fs::write(dir.join("T_graph_indicator.txt"), "1\n1\n1\n2\n2\n").unwrap();
        std::fs::write(dir.join("T_graph_labels.txt"), "-1\n1\n").unwrap();
    }

    #[test]
    fn loads_structure_labels_and_constant_features() {
        let dir = temp_dir("basic");
        write_basic(&dir);
        let (ds, manifest) = load_tudataset(&dir, "T").unwrap();
        assert_eq!(manifest.num_graphs, 2);
        assert_eq!(manifest.total_nodes, 5);
        assert_eq!(manifest.total_edges, 4);
        assert_eq!(manifest.num_classes, 2);
        assert_eq!(manifest.feature_source, FeatureSource::ConstantOnes);
        assert_eq!(ds.len(), 2);
        // Labels -1/1 remap to 0/1 in sorted order.
        assert_eq!(ds.samples()[0].label, 0);
        assert_eq!(ds.samples()[1].label, 1);
        assert_eq!(ds.samples()[0].graph.num_nodes(), 3);
        assert_eq!(ds.samples()[0].graph.num_edge_entries(), 6);
        assert_eq!(ds.samples()[1].graph.num_edge_entries(), 2);
        assert_eq!(ds.feature_dim(), 1);
        assert_eq!(ds.samples()[0].signal.matrix()[(0, 0)], 1.0);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn one_hot_node_labels_form_features() {
        let dir = temp_dir("onehot");
        write_basic(&dir);
        std::fs::write(dir.join("T_node_labels.txt"), "7\n3\n7\n3\n3\n").unwrap();
        let (ds, manifest) = load_tudataset(&dir, "T").unwrap();
        assert_eq!(manifest.feature_source, FeatureSource::OneHotNodeLabels);
        assert_eq!(ds.feature_dim(), 2);
        // Alphabet sorted: 3 -> column 0, 7 -> column 1.
        let first = ds.samples()[0].signal.matrix();
        assert_eq!(first[(0, 0)], 0.0);
        assert_eq!(first[(0, 1)], 1.0);
        assert_eq!(first[(1, 0)], 1.0);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn attributes_take_precedence_over_node_labels() {
        let dir = temp_dir("precedence");
        write_basic(&dir);
        std::fs::write(dir.join("T_node_labels.txt"), "7\n3\n7\n3\n3\n").unwrap();
        std::fs::write(
            dir.join("T_node_attributes.txt"),
            "0.5, 1.5\n2.5, 3.5\n4.5, 5.5\n6.5, 7.5\n8.5, 9.5\n",
        )
        .unwrap();
        let (ds, manifest) = load_tudataset(&dir, "T").unwrap();
        assert_eq!(manifest.feature_source, FeatureSource::NodeAttributes);
        assert_eq!(ds.feature_dim(), 2);
        assert_eq!(ds.samples()[0].signal.matrix()[(1, 1)], 3.5);
        assert_eq!(ds.samples()[1].signal.matrix()[(0, 0)], 6.5);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn dangling_node_index_reports_file_and_line() {
        let dir = temp_dir("dangling");
        write_basic(&dir);
        std::fs::write(dir.join("T_A.txt"), "1, 2\n2, 9\n").unwrap();
        let err = load_tudataset(&dir, "T").unwrap_err();
        match err {
            Error::Parse { file, line, message } => {
                assert_eq!(file, "T_A.txt");
                assert_eq!(line, 2);
                assert!(message.contains('9'));
            }
            other => panic!("unexpected error {other:?}"),
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn cross_graph_edge_is_rejected() {
        let dir = temp_dir("cross");
        write_basic(&dir);
        std::fs::write(dir.join("T_A.txt"), "1, 4\n").unwrap();
        let err = load_tudataset(&dir, "T").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn missing_file_names_the_file() {
        let dir = temp_dir("missing");
        let err = load_tudataset(&dir, "T").unwrap_err();
        match err {
            Error::Parse { file, .. } => assert_eq!(file, "T_graph_indicator.txt"),
            other => panic!("unexpected error {other:?}"),
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn non_numeric_fields_report_lines() {
        let dir = temp_dir("nonnum");
        write_basic(&dir);
        std::fs::write(dir.join("T_graph_labels.txt"), "-1\nx\n").unwrap();
        let err = load_tudataset(&dir, "T").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn empty_graph_is_rejected() {
        let dir = temp_dir("gap");
        write_basic(&dir);
        // Graph 2 vanishes: all nodes point at graphs 1 and 3.
        std::fs::write(dir.join("T_graph_indicator.txt"), "1\n1\n1\n3\n3\n").unwrap();
        std::fs::write(dir.join("T_graph_labels.txt"), "-1\n1\n1\n").unwrap();
        let err = load_tudataset(&dir, "T").unwrap_err();
        match err {
            Error::Parse { message, .. } => assert!(message.contains("graph 2")),
            other => panic!("unexpected error {other:?}"),
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn label_count_mismatch_is_rejected() {
        let dir = temp_dir("labelcount");
        write_basic(&dir);
        std::fs::write(dir.join("T_graph_labels.txt"), "-1\n").unwrap();
        assert!(load_tudataset(&dir, "T").is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn save_load_round_trip_is_identity() {
        let dir = temp_dir("roundtrip");
        let original = sample_synthetic_dataset(&SyntheticTask::default(), 15, 31).unwrap();
        save_tudataset(&original, &dir, "RT", SaveFeatures::NodeAttributes).unwrap();
        let (reloaded, manifest) = load_tudataset(&dir, "RT").unwrap();
        assert_eq!(manifest.num_graphs, original.len());
        assert_eq!(reloaded.num_classes(), original.num_classes());
        for (a, b) in original.samples().iter().zip(reloaded.samples()) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.graph, b.graph);
            assert_eq!(a.signal.matrix(), b.signal.matrix());
        }
        // Saving the reloaded dataset reproduces the files byte for byte.
        let dir2 = temp_dir("roundtrip2");
        save_tudataset(&reloaded, &dir2, "RT", SaveFeatures::NodeAttributes).unwrap();
        for file in [
            "RT_A.txt",
            "RT_graph_indicator.txt",
            "RT_graph_labels.txt",
            "RT_node_attributes.txt",
        ] {
            let a = std::fs::read(dir.join(file)).unwrap();
            let b = std::fs::read(dir2.join(file)).unwrap();
            assert_eq!(a, b, "{file} differs");
        }
        std::fs::remove_dir_all(&dir).unwrap();
        std::fs::remove_dir_all(&dir2).unwrap();
    }

    #[test]
    fn single_class_dataset_is_rejected() {
        let dir = temp_dir("oneclass");
        write_basic(&dir);
        std::fs::write(dir.join("T_graph_labels.txt"), "5\n5\n").unwrap();
        assert!(load_tudataset(&dir, "T").is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
