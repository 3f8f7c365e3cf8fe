//! Deterministic synthetic graphs and datasets for tests and sanity runs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dense::DenseMatrix;
use crate::graph::{Dataset, FeatureMatrix, Graph, LabelSet, SplitSpec};

pub fn complete_graph(n: usize) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            edges.push((i, j));
        }
    }
    Graph::from_edges(n, &edges).expect("complete graph is valid")
}

pub fn path_graph(n: usize) -> Graph {
    let edges: Vec<(usize, usize)> = (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect();
    Graph::from_edges(n, &edges).expect("path graph is valid")
}

pub fn cycle_graph(n: usize) -> Graph {
    assert!(n >= 3);
    let mut edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    edges.push((n - 1, 0));
    Graph::from_edges(n, &edges).expect("cycle graph is valid")
}

/// Star with one hub (node 0) and `leaves` spokes.
pub fn star_graph(leaves: usize) -> Graph {
    let edges: Vec<(usize, usize)> = (1..=leaves).map(|l| (0, l)).collect();
    Graph::from_edges(leaves + 1, &edges).expect("star graph is valid")
}

/// Erdős–Rényi G(n, p) with a fixed seed.
pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Graph::from_edges(n, &edges).expect("random graph is valid")
}

/// Planted-partition graph: `n_classes` equal blocks, edge probability
/// `p_in` inside a block and `p_out` across blocks.
pub fn planted_partition(
    n: usize,
    n_classes: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> (Graph, LabelSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<Option<usize>> = (0..n).map(|i| Some(i * n_classes / n)).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let graph = Graph::from_edges(n, &edges).expect("partition graph is valid");
    let labels = LabelSet::new(labels, n_classes).expect("labels are in range");
    (graph, labels)
}

/// Semi-supervised split: `train_per_class` labeled nodes per class, the
/// remainder divided evenly between validation and test.
pub fn semi_supervised_split(labels: &LabelSet, train_per_class: usize, seed: u64) -> SplitSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..labels.n_nodes()).collect();
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut taken = vec![0usize; labels.n_classes];
    let mut train = Vec::new();
    let mut rest = Vec::new();
    for &i in &order {
        match labels.labels[i] {
            Some(c) if taken[c] < train_per_class => {
                taken[c] += 1;
                train.push(i);
            }
            _ => rest.push(i),
        }
    }
    let half = rest.len() / 2;
    let val = rest[..half].to_vec();
    let test = rest[half..].to_vec();
    SplitSpec { train, val, test }
}

/// Two dense communities with well-separated features: a small supervised
/// sanity fixture that a working model must fit perfectly.
pub fn two_blob_dataset(per_class: usize, seed: u64) -> Dataset {
    let n = 2 * per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<Option<usize>> = (0..n).map(|i| Some(i / per_class)).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { 0.6 } else { 0.05 };
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    // Guarantee connectivity inside each blob.
    for i in 0..per_class - 1 {
        edges.push((i, i + 1));
        edges.push((per_class + i, per_class + i + 1));
    }
    let graph = Graph::from_edges(n, &edges).expect("blob graph is valid");
    let mut values = DenseMatrix::zeros(n, 4);
    for i in 0..n {
        let c = i / per_class;
        values.set(i, 2 * c, 1.0);
        values.set(i, 2 * c + 1, 0.3 + 0.1 * rng.gen::<f64>());
    }
    let labels = LabelSet::new(labels, 2).unwrap();
    let splits = semi_supervised_split(&labels, per_class / 2, seed ^ 0x5151);
    Dataset {
        graph,
        features: FeatureMatrix { values },
        labels,
        splits,
    }
}
