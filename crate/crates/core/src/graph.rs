//! Graph representation, dataset directory I/O, and prediction export.
//!
//! Dataset directory layout (all node indices are 0-based decimal):
//!
//! * `graph.edges` — one undirected edge per line, `src<TAB>dst`; lines
//!   starting with `#` are comments. Duplicates and reversed duplicates are
//!   merged; self-loops are dropped (self-loop handling belongs to the matrix
//!   normalizations, not the input graph).
//! * `labels.tsv` — row `i` holds the integer class of node `i`, or `-` for
//!   unlabeled. The number of rows defines the node count.
//! * `splits.json` — object with `train`, `val`, `test` index arrays.
//! * `features.tsv` — optional; row `i` holds node `i`'s features, either
//!   dense (whitespace-separated reals) or sparse (`idx:val` tokens,
//!   auto-detected per line). When absent, features are synthesized later
//!   from structure (see [`crate::wl`]).

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::dense::DenseMatrix;
use crate::error::{McnError, Result};
use crate::sparse::CsrMatrix;

/// Immutable undirected simple graph with a CSR adjacency.
#[derive(Debug, Clone)]
pub struct Graph {
    n_nodes: usize,
    n_edges: usize,
    adj: CsrMatrix,
}

impl Graph {
    /// Build from an edge list; dedupes, symmetrizes, and drops self-loops.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Graph> {
        let mut set: BTreeSet<(usize, usize)> = BTreeSet::new();
        for &(u, v) in edges {
            if u >= n_nodes || v >= n_nodes {
                return Err(McnError::InvalidData(format!(
                    "edge ({u}, {v}) out of range for {n_nodes} nodes"
                )));
            }
            if u == v {
                continue;
            }
            set.insert((u.min(v), u.max(v)));
        }
        let n_edges = set.len();
        let mut triplets = Vec::with_capacity(2 * n_edges);
        for (u, v) in set {
            triplets.push((u, v, 1.0));
            triplets.push((v, u, 1.0));
        }
        Ok(Graph {
            n_nodes,
            n_edges,
            adj: CsrMatrix::from_triplets(n_nodes, n_nodes, triplets),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Number of undirected edges.
    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adj
    }

    /// Sorted neighbor list of `i`.
    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        self.adj.row(i).0
    }

    #[inline]
    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).len()
    }

    #[inline]
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    /// Undirected edges as (u, v) with u < v.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.n_edges);
        for u in 0..self.n_nodes {
            for &v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }
}

/// Dense N x D node features.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub values: DenseMatrix,
}

impl FeatureMatrix {
    pub fn new(values: DenseMatrix) -> Result<FeatureMatrix> {
        if !values.is_finite() {
            return Err(McnError::InvalidData("non-finite feature entry".into()));
        }
        Ok(FeatureMatrix { values })
    }

    /// Placeholder for datasets without a feature file; `dim() == 0` signals
    /// that structural features must be synthesized.
    pub fn empty(n_nodes: usize) -> FeatureMatrix {
        FeatureMatrix {
            values: DenseMatrix::zeros(n_nodes, 0),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.values.rows
    }

    pub fn dim(&self) -> usize {
        self.values.cols
    }

    pub fn needs_synthesis(&self) -> bool {
        self.values.cols == 0
    }
}

/// Per-node class assignments; `None` marks unlabeled nodes.
#[derive(Debug, Clone)]
pub struct LabelSet {
    pub labels: Vec<Option<usize>>,
    pub n_classes: usize,
}

impl LabelSet {
    pub fn new(labels: Vec<Option<usize>>, n_classes: usize) -> Result<LabelSet> {
        for (i, l) in labels.iter().enumerate() {
            if let Some(c) = l {
                if *c >= n_classes {
                    return Err(McnError::InvalidData(format!(
                        "node {i} has class {c}, out of range for {n_classes} classes"
                    )));
                }
            }
        }
        Ok(LabelSet { labels, n_classes })
    }

    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }
}

/// Disjoint train/validation/test node-index sets.
#[derive(Debug, Clone)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    pub fn new(train: Vec<usize>, val: Vec<usize>, test: Vec<usize>) -> Result<SplitSpec> {
        let spec = SplitSpec { train, val, test };
        spec.validate(usize::MAX)?;
        Ok(spec)
    }

    pub fn validate(&self, n_nodes: usize) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (name, set) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ] {
            for &i in set {
                if i >= n_nodes {
                    return Err(McnError::InvalidData(format!(
                        "{name} split index {i} out of range for {n_nodes} nodes"
                    )));
                }
                if !seen.insert(i) {
                    return Err(McnError::InvalidData(format!(
                        "node {i} appears in more than one split"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A fully loaded dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: Graph,
    pub features: FeatureMatrix,
    pub labels: LabelSet,
    pub splits: SplitSpec,
}

#[derive(Deserialize)]
struct SplitsFile {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| McnError::io(path, e))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn malformed(path: &Path, line: usize, msg: impl Into<String>) -> McnError {
    McnError::Malformed {
        file: file_name(path),
        line,
        msg: msg.into(),
    }
}

fn parse_edges(path: &Path, n_nodes: usize) -> Result<Vec<(usize, usize)>> {
    let text = read_to_string(path)?;
    let mut edges = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (a, b) = match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(malformed(
                    path,
                    lineno + 1,
                    format!("expected \"src<TAB>dst\", got {line:?}"),
                ))
            }
        };
        let u: usize = a
            .parse()
            .map_err(|_| malformed(path, lineno + 1, format!("bad node index {a:?}")))?;
        let v: usize = b
            .parse()
            .map_err(|_| malformed(path, lineno + 1, format!("bad node index {b:?}")))?;
        if u >= n_nodes || v >= n_nodes {
            return Err(malformed(
                path,
                lineno + 1,
                format!("edge ({u}, {v}) out of range for {n_nodes} nodes"),
            ));
        }
        edges.push((u, v));
    }
    Ok(edges)
}

fn parse_labels(path: &Path) -> Result<(Vec<Option<usize>>, usize)> {
    let text = read_to_string(path)?;
    let mut labels = Vec::new();
    let mut max_class = None::<usize>;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line == "-" {
            labels.push(None);
            continue;
        }
        let c: usize = line
            .parse()
            .map_err(|_| malformed(path, lineno + 1, format!("bad class label {line:?}")))?;
        max_class = Some(max_class.map_or(c, |m: usize| m.max(c)));
        labels.push(Some(c));
    }
    let n_classes = max_class.map_or(0, |m| m + 1);
    Ok((labels, n_classes))
}

fn parse_features(path: &Path, n_nodes: usize) -> Result<DenseMatrix> {
    let text = read_to_string(path)?;
    // First pass: row token lists plus the inferred dimension.
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut dense_dim: Option<usize> = None;
    let mut max_idx = 0usize;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            // All-zero (sparse) row.
            rows.push(Vec::new());
            continue;
        }
        let sparse = tokens.iter().any(|t| t.contains(':'));
        let mut row = Vec::with_capacity(tokens.len());
        if sparse {
            for tok in &tokens {
                let (idx, val) = tok.split_once(':').ok_or_else(|| {
                    malformed(path, lineno + 1, format!("bad sparse token {tok:?}"))
                })?;
                let idx: usize = idx.parse().map_err(|_| {
                    malformed(path, lineno + 1, format!("bad feature index {idx:?}"))
                })?;
                let val: f64 = val.parse().map_err(|_| {
                    malformed(path, lineno + 1, format!("bad feature value {val:?}"))
                })?;
                max_idx = max_idx.max(idx + 1);
                row.push((idx, val));
            }
        } else {
            for (i, tok) in tokens.iter().enumerate() {
                let val: f64 = tok.parse().map_err(|_| {
                    malformed(path, lineno + 1, format!("bad feature value {tok:?}"))
                })?;
                row.push((i, val));
            }
            match dense_dim {
                None => dense_dim = Some(tokens.len()),
                Some(d) if d != tokens.len() => {
                    return Err(malformed(
                        path,
                        lineno + 1,
                        format!("dense row has {} values, expected {d}", tokens.len()),
                    ))
                }
                _ => {}
            }
            max_idx = max_idx.max(tokens.len());
        }
        rows.push(row);
    }
    if rows.len() != n_nodes {
        return Err(McnError::InvalidData(format!(
            "{} has {} rows, expected one per node ({n_nodes})",
            file_name(path),
            rows.len()
        )));
    }
    let dim = dense_dim.map_or(max_idx, |d| d.max(max_idx));
    let mut out = DenseMatrix::zeros(n_nodes, dim);
    for (r, row) in rows.iter().enumerate() {
        for &(c, v) in row {
            if !v.is_finite() {
                return Err(McnError::InvalidData(format!(
                    "non-finite feature at node {r}, column {c}"
                )));
            }
            out.set(r, c, v);
        }
    }
    Ok(out)
}

/// Load a dataset directory. The row count of `labels.tsv` defines the node
/// count; `features.tsv` is optional.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let labels_path = dir.join("labels.tsv");
    let (labels, n_classes) = parse_labels(&labels_path)?;
    let n_nodes = labels.len();
    let labels = LabelSet::new(labels, n_classes)?;

    let edges = parse_edges(&dir.join("graph.edges"), n_nodes)?;
    let graph = Graph::from_edges(n_nodes, &edges)?;

    let splits_path = dir.join("splits.json");
    let splits_text = read_to_string(&splits_path)?;
    let splits_file: SplitsFile = serde_json::from_str(&splits_text)
        .map_err(|e| malformed(&splits_path, e.line(), e.to_string()))?;
    let splits = SplitSpec {
        train: splits_file.train,
        val: splits_file.val,
        test: splits_file.test,
    };
    splits.validate(n_nodes)?;

    let features_path = dir.join("features.tsv");
    let features = if features_path.exists() {
        FeatureMatrix::new(parse_features(&features_path, n_nodes)?)?
    } else {
        FeatureMatrix::empty(n_nodes)
    };

    Ok(Dataset {
        graph,
        features,
        labels,
        splits,
    })
}

/// Write per-node predictions and class probabilities as TSV with header
/// `node<TAB>pred<TAB>p_1..p_L`; probabilities are rounded to 6 decimals.
pub fn save_predictions(path: &Path, preds: &[usize], probs: &DenseMatrix) -> Result<()> {
    assert_eq!(preds.len(), probs.rows, "one prediction per probability row");
    let mut out = String::new();
    out.push_str("node\tpred");
    for c in 0..probs.cols {
        out.push_str(&format!("\tp_{}", c + 1));
    }
    out.push('\n');
    for (i, &p) in preds.iter().enumerate() {
        out.push_str(&format!("{i}\t{p}"));
        for &v in probs.row(i) {
            out.push_str(&format!("\t{v:.6}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| McnError::io(path, e))
}

/// Read back a predictions TSV written by [`save_predictions`].
pub fn load_predictions(path: &Path) -> Result<(Vec<usize>, DenseMatrix)> {
    let text = read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| malformed(path, 1, "empty predictions file"))?;
    let n_cols = header.split('\t').count().saturating_sub(2);
    let mut preds = Vec::new();
    let mut probs = Vec::new();
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != n_cols + 2 {
            return Err(malformed(path, lineno + 1, "wrong field count"));
        }
        let pred: usize = fields[1]
            .parse()
            .map_err(|_| malformed(path, lineno + 1, "bad prediction"))?;
        preds.push(pred);
        for f in &fields[2..] {
            let v: f64 = f
                .parse()
                .map_err(|_| malformed(path, lineno + 1, "bad probability"))?;
            probs.push(v);
        }
    }
    let rows = preds.len();
    Ok((preds, DenseMatrix::from_vec(rows, n_cols, probs)))
}
