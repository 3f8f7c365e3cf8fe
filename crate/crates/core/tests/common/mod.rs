//! Shared test fixtures and independent dense reference implementations.
//!
//! The references here deliberately avoid the library's sparse code paths:
//! they are the oracles the model is checked against, so they recompute
//! everything with plain dense loops.

#![allow(dead_code)]

use mcn_core::dense::DenseMatrix;
use mcn_core::graph::Graph;
use mcn_core::rng::KeyedRng;

pub fn random_dense(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = KeyedRng::new(&[seed, 0xFEED]);
    DenseMatrix::from_fn(rows, cols, |_, _| rng.next_f64() - 0.5)
}

/// Dense symmetric nonnegative matrix with zero diagonal and roughly the
/// given density.
pub fn random_symmetric(n: usize, density: f64, seed: u64) -> DenseMatrix {
    let mut rng = KeyedRng::new(&[seed, 0xABBA]);
    let mut m = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.next_f64() < density {
                let v = rng.next_f64() * 4.0 + 0.1;
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
    }
    m
}

// ---------------------------------------------------------------------------
// Dense references for the five matrix functions.
// ---------------------------------------------------------------------------

pub fn dense_row_max_or_one(a: &DenseMatrix, i: usize) -> f64 {
    let m = a.row(i).iter().copied().fold(0.0, f64::max);
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

pub fn dense_row_sum(a: &DenseMatrix, i: usize) -> f64 {
    a.row(i).iter().sum()
}

pub fn dense_psi_unweighted(a: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(a.rows, a.cols, |i, j| {
        if i == j {
            1.0
        } else if a.get(i, j) > 0.0 {
            1.0
        } else {
            0.0
        }
    })
}

pub fn dense_psi_weighted(a: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(a.rows, a.cols, |i, j| {
        a.get(i, j) + if i == j { dense_row_max_or_one(a, i) } else { 0.0 }
    })
}

pub fn dense_psi_transition(a: &DenseMatrix) -> DenseMatrix {
    let b = dense_psi_weighted(a);
    DenseMatrix::from_fn(a.rows, a.cols, |i, j| b.get(i, j) / dense_row_sum(&b, i))
}

pub fn dense_psi_abs_laplacian(a: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(a.rows, a.cols, |i, j| {
        a.get(i, j)
            + if i == j {
                let s = dense_row_sum(a, i);
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            } else {
                0.0
            }
    })
}

pub fn dense_psi_sym_norm(a: &DenseMatrix) -> DenseMatrix {
    let b = dense_psi_weighted(a);
    let d: Vec<f64> = (0..a.rows).map(|i| dense_row_sum(&b, i)).collect();
    DenseMatrix::from_fn(a.rows, a.cols, |i, j| {
        b.get(i, j) / (d[i].sqrt() * d[j].sqrt())
    })
}

pub fn dense_matrix_power(a: &DenseMatrix, k: usize) -> DenseMatrix {
    let mut acc = a.clone();
    for _ in 1..k {
        acc = acc.matmul(a);
    }
    acc
}

// ---------------------------------------------------------------------------
// Minimal dense reference models (Eqs. of the plain convolution and the
// attention network), written independently of the library's model code.
// ---------------------------------------------------------------------------

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

fn softmax_rows(m: &mut DenseMatrix) {
    for r in 0..m.rows {
        let row = m.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Dense symmetric-normalized adjacency with unit self-loops.
pub fn reference_gcn_propagation(g: &Graph) -> DenseMatrix {
    let n = g.n_nodes();
    let mut a = DenseMatrix::zeros(n, n);
    for (u, v) in g.edges() {
        a.set(u, v, 1.0);
        a.set(v, u, 1.0);
    }
    for i in 0..n {
        a.set(i, i, 1.0);
    }
    let deg: Vec<f64> = (0..n).map(|i| dense_row_sum(&a, i)).collect();
    DenseMatrix::from_fn(n, n, |i, j| a.get(i, j) / (deg[i].sqrt() * deg[j].sqrt()))
}

/// Two-layer plain graph convolution: softmax(P elu(P X W1) W2).
pub fn reference_gcn_forward(
    g: &Graph,
    x: &DenseMatrix,
    w1: &DenseMatrix,
    w2: &DenseMatrix,
) -> DenseMatrix {
    let p = reference_gcn_propagation(g);
    let mut h1 = p.matmul(&x.matmul(w1));
    for v in &mut h1.data {
        *v = elu(*v);
    }
    let mut out = p.matmul(&h1.matmul(w2));
    softmax_rows(&mut out);
    out
}

pub struct ReferenceGatHead {
    pub w: DenseMatrix,
    pub a_src: Vec<f64>,
    pub a_dst: Vec<f64>,
}

/// One dense attention-head aggregation over the self-loop-augmented
/// one-hop neighborhood.
pub fn reference_gat_head(g: &Graph, h: &DenseMatrix, head: &ReferenceGatHead) -> DenseMatrix {
    let n = g.n_nodes();
    let z = h.matmul(&head.w);
    let d = z.cols;
    let mut out = DenseMatrix::zeros(n, d);
    for i in 0..n {
        let mut nbrs: Vec<usize> = g.neighbors(i).to_vec();
        nbrs.push(i);
        nbrs.sort_unstable();
        let src: f64 = z.row(i).iter().zip(&head.a_src).map(|(a, b)| a * b).sum();
        let mut logits: Vec<f64> = nbrs
            .iter()
            .map(|&j| {
                let dst: f64 = z.row(j).iter().zip(&head.a_dst).map(|(a, b)| a * b).sum();
                let g_ij = src + dst;
                if g_ij > 0.0 {
                    g_ij
                } else {
                    0.2 * g_ij
                }
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in &mut logits {
            *v = (*v - max).exp();
            sum += *v;
        }
        for (&j, &l) in nbrs.iter().zip(&logits) {
            let alpha = l / sum;
            for (o, &zv) in out.row_mut(i).iter_mut().zip(z.row(j)) {
                *o += alpha * zv;
            }
        }
    }
    out
}

/// Two-layer dense attention network: hidden heads concatenated under ELU,
/// output heads averaged then softmaxed.
pub fn reference_gat_forward(
    g: &Graph,
    x: &DenseMatrix,
    hidden_heads: &[ReferenceGatHead],
    out_heads: &[ReferenceGatHead],
) -> DenseMatrix {
    let parts: Vec<DenseMatrix> = hidden_heads
        .iter()
        .map(|head| {
            let mut m = reference_gat_head(g, x, head);
            for v in &mut m.data {
                *v = elu(*v);
            }
            m
        })
        .collect();
    let refs: Vec<&DenseMatrix> = parts.iter().collect();
    let h1 = DenseMatrix::concat_cols(&refs);
    let n = g.n_nodes();
    let l = out_heads[0].w.cols;
    let mut logits = DenseMatrix::zeros(n, l);
    for head in out_heads {
        let o = reference_gat_head(g, &h1, head);
        for (acc, &v) in logits.data.iter_mut().zip(&o.data) {
            *acc += v / out_heads.len() as f64;
        }
    }
    softmax_rows(&mut logits);
    logits
}

/// Spectral radius by power iteration (the reference matrices are symmetric
/// and nonnegative, so the dominant eigenvalue is the spectral radius).
pub fn spectral_radius(a: &DenseMatrix, iters: usize) -> f64 {
    let n = a.rows;
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = 0.0;
    for _ in 0..iters {
        let mut w = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                w[i] += a.get(i, j) * v[j];
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        for x in &mut w {
            *x /= norm;
        }
        lambda = norm;
        v = w;
    }
    lambda
}
