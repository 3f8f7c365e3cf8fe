//! Motif-induced adjacencies and per-node motif participation counts.
//!
//! An *instance* of a motif is a connected-subgraph embedding of its template
//! into the graph, counted up to template automorphism; embeddings need not
//! be induced (a 2-star inside a triangle still counts). The weight attached
//! to an existing edge (i, j) is the number of instances whose node set
//! contains both endpoints — the template does not have to map one of its
//! own edges onto (i, j).
//!
//! The fast paths below use closed forms over degrees and sorted-neighbor
//! intersections; [`brute_force_motif_oracle`] recomputes the same quantities
//! by exhaustive subset enumeration and is the reference the fast paths are
//! tested against.

use std::fmt;

use crate::dense::DenseMatrix;
use crate::error::{McnError, Result};
use crate::graph::Graph;
use crate::sparse::CsrMatrix;

/// Connected 2- to 4-node motif templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MotifKind {
    Edge,
    TwoStar,
    Triangle,
    ThreeStar,
    FourPath,
    FourCycle,
    FourClique,
}

pub const ALL_MOTIFS: [MotifKind; 7] = [
    MotifKind::Edge,
    MotifKind::TwoStar,
    MotifKind::Triangle,
    MotifKind::ThreeStar,
    MotifKind::FourPath,
    MotifKind::FourCycle,
    MotifKind::FourClique,
];

impl MotifKind {
    /// Number of nodes in the template.
    pub fn node_count(&self) -> usize {
        match self {
            MotifKind::Edge => 2,
            MotifKind::TwoStar | MotifKind::Triangle => 3,
            _ => 4,
        }
    }

    /// Template edges over vertices `0..node_count()`.
    pub fn template_edges(&self) -> &'static [(usize, usize)] {
        match self {
            MotifKind::Edge => &[(0, 1)],
            MotifKind::TwoStar => &[(0, 1), (0, 2)],
            MotifKind::Triangle => &[(0, 1), (0, 2), (1, 2)],
            MotifKind::ThreeStar => &[(0, 1), (0, 2), (0, 3)],
            MotifKind::FourPath => &[(0, 1), (1, 2), (2, 3)],
            MotifKind::FourCycle => &[(0, 1), (1, 2), (2, 3), (0, 3)],
            MotifKind::FourClique => &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)],
        }
    }

    /// Automorphism group order of the template.
    pub fn automorphisms(&self) -> usize {
        match self {
            MotifKind::Edge | MotifKind::TwoStar | MotifKind::FourPath => 2,
            MotifKind::Triangle | MotifKind::ThreeStar => 6,
            MotifKind::FourCycle => 8,
            MotifKind::FourClique => 24,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MotifKind::Edge => "edge",
            MotifKind::TwoStar => "2star",
            MotifKind::Triangle => "triangle",
            MotifKind::ThreeStar => "3star",
            MotifKind::FourPath => "4path",
            MotifKind::FourCycle => "4cycle",
            MotifKind::FourClique => "4clique",
        }
    }

    pub fn parse(s: &str) -> Result<MotifKind> {
        let canon = s.trim().to_lowercase().replace(['-', '_'], "");
        Ok(match canon.as_str() {
            "edge" => MotifKind::Edge,
            "2star" | "twostar" => MotifKind::TwoStar,
            "triangle" => MotifKind::Triangle,
            "3star" | "threestar" => MotifKind::ThreeStar,
            "4path" | "fourpath" | "4pathedge" => MotifKind::FourPath,
            "4cycle" | "fourcycle" => MotifKind::FourCycle,
            "4clique" | "fourclique" => MotifKind::FourClique,
            _ => {
                return Err(McnError::InvalidConfig(format!(
                    "unknown motif {s:?} (expected one of edge, 2star, triangle, 3star, 4path, 4cycle, 4clique)"
                )))
            }
        })
    }
}

impl fmt::Display for MotifKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Sparse symmetric matrix of per-edge motif instance counts.
#[derive(Debug, Clone)]
pub struct MotifAdjacency {
    pub kind: MotifKind,
    pub matrix: CsrMatrix,
}

/// Dense N x C matrix of per-node motif participation counts.
#[derive(Debug, Clone)]
pub struct MotifCountMatrix {
    pub counts: DenseMatrix,
    pub kinds: Vec<MotifKind>,
}

#[inline]
fn sorted_intersection_count(a: &[usize], b: &[usize]) -> usize {
    let mut count = 0;
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

fn sorted_intersection(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

#[inline]
fn choose2(n: usize) -> u64 {
    (n as u64) * (n.saturating_sub(1) as u64) / 2
}

#[inline]
fn choose3(n: usize) -> u64 {
    if n < 3 {
        0
    } else {
        (n as u64) * ((n - 1) as u64) * ((n - 2) as u64) / 6
    }
}

/// Instances of `kind` whose node set contains both endpoints of the
/// existing edge (i, j).
fn edge_count(g: &Graph, kind: MotifKind, i: usize, j: usize) -> u64 {
    let ni = g.neighbors(i);
    let nj = g.neighbors(j);
    let (di, dj) = (ni.len(), nj.len());
    match kind {
        MotifKind::Edge => 1,
        MotifKind::TwoStar => {
            // Center at i, center at j, or both endpoints as the leaves of a
            // shared neighbor.
            let common = sorted_intersection_count(ni, nj) as u64;
            (di as u64 - 1) + (dj as u64 - 1) + common
        }
        MotifKind::Triangle => sorted_intersection_count(ni, nj) as u64,
        MotifKind::ThreeStar => {
            let mut total = choose2(di - 1) + choose2(dj - 1);
            for &c in &sorted_intersection(ni, nj) {
                total += (g.degree(c) as u64).saturating_sub(2);
            }
            total
        }
        MotifKind::FourPath => four_path_edge_count(g, i, j),
        MotifKind::FourCycle => {
            let common = sorted_intersection_count(ni, nj);
            // i and j opposite in the cycle: two distinct common neighbors.
            let mut total = choose2(common);
            // i and j adjacent in the cycle: u next to j, v next to i,
            // (u, v) an edge. Each ordered (u, v) is a distinct subgraph.
            for &u in nj {
                if u == i {
                    continue;
                }
                let nu = g.neighbors(u);
                let mut c = sorted_intersection_count(nu, ni) as u64;
                if nu.binary_search(&j).is_ok() {
                    c -= 1; // excludes v = j
                }
                total += c;
            }
            total
        }
        MotifKind::FourClique => {
            let common = sorted_intersection(ni, nj);
            let mut total = 0u64;
            for (p, &u) in common.iter().enumerate() {
                for &v in &common[p + 1..] {
                    if g.has_edge(u, v) {
                        total += 1;
                    }
                }
            }
            total
        }
    }
}

/// 4-node paths whose node set contains both endpoints of edge (i, j),
/// split by where i and j sit in the path (one case per reversal class).
fn four_path_edge_count(g: &Graph, i: usize, j: usize) -> u64 {
    let ni = g.neighbors(i);
    let nj = g.neighbors(j);
    let (di, dj) = (ni.len() as u64, nj.len() as u64);
    let common = sorted_intersection_count(ni, nj) as u64;
    let mut total = 0u64;

    // i-j-w-x: w adjacent to j, x a further neighbor of w.
    for &w in nj {
        if w == i {
            continue;
        }
        let dw = g.degree(w) as u64;
        let adj_i = g.has_edge(w, i) as u64;
        total += dw - 1 - adj_i;
    }
    // j-i-w-x.
    for &w in ni {
        if w == j {
            continue;
        }
        let dw = g.degree(w) as u64;
        let adj_j = g.has_edge(w, j) as u64;
        total += dw - 1 - adj_j;
    }
    // x-i-j-y: i and j in the middle.
    total += (di - 1) * (dj - 1) - common;
    // i-w-j-x and j-w-i-x: one endpoint, the other second from that end.
    total += common * dj.saturating_sub(2);
    total += common * di.saturating_sub(2);
    // i-u-v-j: i and j at opposite ends.
    for &u in ni {
        if u == j {
            continue;
        }
        // v ranges over N(u) ∩ N(j); v = i is always in that intersection.
        total += (sorted_intersection_count(g.neighbors(u), nj) as u64) - 1;
    }
    total
}

/// Weighted motif-induced adjacency: entry (i, j) counts the instances of
/// `kind` containing both endpoints of the existing edge (i, j). Support is a
/// subset of the graph's edge set; zero-count edges are not stored.
pub fn motif_adjacency(g: &Graph, kind: MotifKind) -> MotifAdjacency {
    let mut triplets = Vec::new();
    for i in 0..g.n_nodes() {
        for &j in g.neighbors(i) {
            if j <= i {
                continue;
            }
            let c = edge_count(g, kind, i, j);
            if c > 0 {
                triplets.push((i, j, c as f64));
                triplets.push((j, i, c as f64));
            }
        }
    }
    MotifAdjacency {
        kind,
        matrix: CsrMatrix::from_triplets(g.n_nodes(), g.n_nodes(), triplets),
    }
}

/// Instances of `kind` whose node set contains node `i`.
fn node_count(g: &Graph, kind: MotifKind, i: usize) -> u64 {
    let ni = g.neighbors(i);
    let di = ni.len();
    match kind {
        MotifKind::Edge => di as u64,
        MotifKind::TwoStar => {
            let mut total = choose2(di);
            for &c in ni {
                total += g.degree(c) as u64 - 1;
            }
            total
        }
        MotifKind::Triangle => {
            let mut twice = 0u64;
            for &j in ni {
                twice += sorted_intersection_count(ni, g.neighbors(j)) as u64;
            }
            twice / 2
        }
        MotifKind::ThreeStar => {
            let mut total = choose3(di);
            for &c in ni {
                total += choose2(g.degree(c) - 1);
            }
            total
        }
        MotifKind::FourPath => {
            // Ordered paths with i first plus ordered paths with i second;
            // positions three and four are the reversals of these.
            let mut total = 0u64;
            for &a in ni {
                for &b in g.neighbors(a) {
                    if b == i {
                        continue;
                    }
                    let adj_i = g.has_edge(b, i) as u64;
                    total += g.degree(b) as u64 - 1 - adj_i;
                }
            }
            for &a in ni {
                for &b in ni {
                    if a == b {
                        continue;
                    }
                    let adj_a = g.has_edge(b, a) as u64;
                    total += g.degree(b) as u64 - 1 - adj_a;
                }
            }
            total
        }
        MotifKind::FourCycle => {
            // Cycle neighbors {u, w} of i plus the opposite node v.
            let mut total = 0u64;
            for (p, &u) in ni.iter().enumerate() {
                for &w in &ni[p + 1..] {
                    let mut c = sorted_intersection_count(g.neighbors(u), g.neighbors(w)) as u64;
                    c -= 1; // v = i is always in the intersection
                    total += c;
                }
            }
            total
        }
        MotifKind::FourClique => {
            // Triangles inside the neighborhood of i.
            let mut thrice = 0u64;
            for &u in ni {
                let nu = g.neighbors(u);
                for &v in nu {
                    if v <= u || ni.binary_search(&v).is_err() {
                        continue;
                    }
                    // w adjacent to u, v, and i.
                    let uv = sorted_intersection(nu, g.neighbors(v));
                    thrice += sorted_intersection_count(&uv, ni) as u64;
                }
            }
            thrice / 3
        }
    }
}

/// Per-node participation counts for each requested motif. Column sums equal
/// (template size) x (total instance count) for the matching motif.
pub fn node_motif_counts(g: &Graph, kinds: &[MotifKind]) -> MotifCountMatrix {
    assert!(!kinds.is_empty(), "at least one motif kind");
    let n = g.n_nodes();
    let mut counts = DenseMatrix::zeros(n, kinds.len());
    for (c, &kind) in kinds.iter().enumerate() {
        for i in 0..n {
            counts.set(i, c, node_count(g, kind, i) as f64);
        }
    }
    MotifCountMatrix {
        counts,
        kinds: kinds.to_vec(),
    }
}

const ORACLE_NODE_LIMIT: usize = 40;

fn oracle_instances_on_subset(g: &Graph, kind: MotifKind, subset: &[usize]) -> u64 {
    let m = subset.len();
    let template = kind.template_edges();
    let mut perm: Vec<usize> = (0..m).collect();
    let mut valid = 0u64;
    // Heap's algorithm over template-vertex -> subset-slot assignments.
    fn permute(
        k: usize,
        perm: &mut Vec<usize>,
        g: &Graph,
        subset: &[usize],
        template: &[(usize, usize)],
        valid: &mut u64,
    ) {
        if k == 1 {
            if template
                .iter()
                .all(|&(a, b)| g.has_edge(subset[perm[a]], subset[perm[b]]))
            {
                *valid += 1;
            }
            return;
        }
        for i in 0..k {
            permute(k - 1, perm, g, subset, template, valid);
            if k % 2 == 0 {
                perm.swap(i, k - 1);
            } else {
                perm.swap(0, k - 1);
            }
        }
    }
    permute(m, &mut perm, g, subset, template, &mut valid);
    debug_assert_eq!(valid % kind.automorphisms() as u64, 0);
    valid / kind.automorphisms() as u64
}

fn for_each_subset(n: usize, m: usize, mut f: impl FnMut(&[usize])) {
    let mut subset = vec![0usize; m];
    fn rec(start: usize, depth: usize, n: usize, subset: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        let m = subset.len();
        if depth == m {
            f(subset);
            return;
        }
        for v in start..=(n - (m - depth)) {
            subset[depth] = v;
            rec(v + 1, depth + 1, n, subset, f);
        }
    }
    if n >= m {
        rec(0, 0, n, &mut subset, &mut f);
    }
}

/// Exhaustive reference for [`motif_adjacency`]: enumerates every node subset
/// of template size and counts embeddings directly. Limited to 40 nodes.
pub fn brute_force_motif_oracle(g: &Graph, kind: MotifKind) -> Result<MotifAdjacency> {
    if g.n_nodes() > ORACLE_NODE_LIMIT {
        return Err(McnError::SizeLimit {
            n: g.n_nodes(),
            max: ORACLE_NODE_LIMIT,
        });
    }
    let n = g.n_nodes();
    let mut weights: std::collections::BTreeMap<(usize, usize), u64> = Default::default();
    for_each_subset(n, kind.node_count(), |subset| {
        let inst = oracle_instances_on_subset(g, kind, subset);
        if inst == 0 {
            return;
        }
        for (p, &u) in subset.iter().enumerate() {
            for &v in &subset[p + 1..] {
                if g.has_edge(u, v) {
                    *weights.entry((u, v)).or_insert(0) += inst;
                }
            }
        }
    });
    let mut triplets = Vec::with_capacity(2 * weights.len());
    for ((u, v), w) in weights {
        triplets.push((u, v, w as f64));
        triplets.push((v, u, w as f64));
    }
    Ok(MotifAdjacency {
        kind,
        matrix: CsrMatrix::from_triplets(n, n, triplets),
    })
}

/// Exhaustive reference for [`node_motif_counts`], same enumeration as
/// [`brute_force_motif_oracle`].
pub fn brute_force_node_counts(g: &Graph, kind: MotifKind) -> Result<Vec<u64>> {
    if g.n_nodes() > ORACLE_NODE_LIMIT {
        return Err(McnError::SizeLimit {
            n: g.n_nodes(),
            max: ORACLE_NODE_LIMIT,
        });
    }
    let mut counts = vec![0u64; g.n_nodes()];
    for_each_subset(g.n_nodes(), kind.node_count(), |subset| {
        let inst = oracle_instances_on_subset(g, kind, subset);
        if inst == 0 {
            return;
        }
        for &u in subset {
            counts[u] += inst;
        }
    });
    Ok(counts)
}
