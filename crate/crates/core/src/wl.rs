//! Structural node features from color refinement.
//!
//! Starting from a single uniform color, each round replaces a node's color
//! with a canonical index for the pair (own color, sorted multiset of
//! neighbor colors). The final coloring is one-hot encoded; colors are
//! numbered in first-seen node order so the output is deterministic for a
//! fixed graph.

use std::collections::HashMap;

use crate::dense::DenseMatrix;
use crate::graph::{FeatureMatrix, Graph};

/// Run `iterations` refinement rounds and one-hot encode the result. Colors
/// beyond `max_colors` are folded onto existing columns by taking the color
/// index modulo `max_colors`.
pub fn wl_features(g: &Graph, iterations: usize, max_colors: usize) -> FeatureMatrix {
    assert!(iterations >= 1, "at least one refinement round");
    assert!(max_colors >= 1, "need at least one feature column");
    let n = g.n_nodes();
    let mut colors = vec![0usize; n];
    for _ in 0..iterations {
        let mut palette: HashMap<(usize, Vec<usize>), usize> = HashMap::new();
        let mut next = vec![0usize; n];
        for i in 0..n {
            let mut sig: Vec<usize> = g.neighbors(i).iter().map(|&j| colors[j]).collect();
            sig.sort_unstable();
            let fresh = palette.len();
            next[i] = *palette.entry((colors[i], sig)).or_insert(fresh);
        }
        colors = next;
    }
    let n_colors = colors.iter().copied().max().map_or(0, |m| m + 1);
    let dim = n_colors.min(max_colors);
    let mut values = DenseMatrix::zeros(n, dim.max(1));
    for (i, &c) in colors.iter().enumerate() {
        values.set(i, c % max_colors, 1.0);
    }
    FeatureMatrix { values }
}

/// Final color per node, exposed for partition-level comparisons in tests.
pub fn wl_colors(g: &Graph, iterations: usize) -> Vec<usize> {
    let feats = wl_features(g, iterations, usize::MAX >> 1);
    (0..g.n_nodes())
        .map(|i| {
            feats
                .values
                .row(i)
                .iter()
                .position(|&v| v != 0.0)
                .expect("every node has a color")
        })
        .collect()
}
