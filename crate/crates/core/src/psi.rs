//! Motif matrix functions and K-step propagation matrices.
//!
//! Each variant maps a nonnegative symmetric motif adjacency to a
//! propagation-ready matrix with strictly positive diagonal:
//!
//! * `UnweightedSelfLoop` — binarize the support and add unit self-loops.
//! * `WeightedRowMax` — keep weights, add each row's maximum as a self-loop.
//! * `TransitionRowMax` — row-normalize the row-max variant into a random
//!   walk transition matrix (rows sum to one).
//! * `AbsLaplacian` — add the row-sum degree on the diagonal.
//! * `SymNormRowMax` — symmetrically normalize the row-max variant by the
//!   inverse square root of its degrees.
//!
//! A K-step matrix is the transform applied to the k-th sparse power of the
//! adjacency (power first, then transform). Powers can fill in; a density
//! watchdog fails loudly instead of silently densifying.

use std::fmt;

use crate::error::{McnError, Result};
use crate::graph::Graph;
use crate::motifs::{motif_adjacency, node_motif_counts, MotifAdjacency, MotifCountMatrix, MotifKind};
use crate::sparse::CsrMatrix;

/// Entries below this magnitude are dropped after sparse multiplication.
pub const POWER_DROP_TOL: f64 = 1e-12;

/// Default fill-in budget for sparse powers, as a fraction of N^2.
pub const DEFAULT_DENSITY_BUDGET: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PsiKind {
    UnweightedSelfLoop,
    WeightedRowMax,
    TransitionRowMax,
    AbsLaplacian,
    SymNormRowMax,
}

pub const ALL_PSI: [PsiKind; 5] = [
    PsiKind::UnweightedSelfLoop,
    PsiKind::WeightedRowMax,
    PsiKind::TransitionRowMax,
    PsiKind::AbsLaplacian,
    PsiKind::SymNormRowMax,
];

impl PsiKind {
    pub fn name(&self) -> &'static str {
        match self {
            PsiKind::UnweightedSelfLoop => "unweighted",
            PsiKind::WeightedRowMax => "weighted",
            PsiKind::TransitionRowMax => "transition",
            PsiKind::AbsLaplacian => "abs_laplacian",
            PsiKind::SymNormRowMax => "sym_norm",
        }
    }

    pub fn parse(s: &str) -> Result<PsiKind> {
        let canon = s.trim().to_lowercase().replace('-', "_");
        Ok(match canon.as_str() {
            "unweighted" | "unweighted_self_loop" => PsiKind::UnweightedSelfLoop,
            "weighted" | "weighted_row_max" => PsiKind::WeightedRowMax,
            "transition" | "transition_row_max" => PsiKind::TransitionRowMax,
            "abs_laplacian" | "laplacian" => PsiKind::AbsLaplacian,
            "sym_norm" | "sym_norm_row_max" => PsiKind::SymNormRowMax,
            _ => {
                return Err(McnError::InvalidConfig(format!(
                    "unknown matrix function {s:?} (expected one of unweighted, weighted, transition, abs_laplacian, sym_norm)"
                )))
            }
        })
    }
}

impl fmt::Display for PsiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A transformed, possibly multi-step, propagation-ready matrix.
#[derive(Debug, Clone)]
pub struct MotifMatrix {
    pub matrix: CsrMatrix,
    pub kind: MotifKind,
    pub k: usize,
    pub psi: PsiKind,
}

fn validate_input(a: &CsrMatrix) -> Result<()> {
    if a.n_rows() != a.n_cols() {
        return Err(McnError::ShapeMismatch(format!(
            "matrix function input must be square, got {}x{}",
            a.n_rows(),
            a.n_cols()
        )));
    }
    if a.min_value() < 0.0 {
        return Err(McnError::InvalidData(
            "matrix function input has a negative entry".into(),
        ));
    }
    if !a.is_symmetric(1e-9) {
        return Err(McnError::InvalidData(
            "matrix function input is not symmetric".into(),
        ));
    }
    Ok(())
}

/// Row-max self-loop weights; isolated rows get weight 1 so every variant
/// keeps a strictly positive diagonal (an isolated node just retains its own
/// features, and the transition variant stays row-stochastic).
fn self_loop_weights(a: &CsrMatrix) -> Vec<f64> {
    a.row_maxes()
        .into_iter()
        .map(|m| if m > 0.0 { m } else { 1.0 })
        .collect()
}

/// Apply the selected matrix function to a nonnegative symmetric matrix.
pub fn apply_psi(a: &CsrMatrix, psi: PsiKind) -> Result<CsrMatrix> {
    validate_input(a)?;
    let n = a.n_rows();
    let out = match psi {
        PsiKind::UnweightedSelfLoop => {
            let binary = a.map_values(|_| 1.0);
            let ones = vec![1.0; n];
            // Diagonal set to exactly 1 even if the input carried one.
            let mut t: Vec<(usize, usize, f64)> = binary
                .iter()
                .filter(|&(r, c, _)| r != c)
                .collect();
            for (i, &v) in ones.iter().enumerate() {
                t.push((i, i, v));
            }
            CsrMatrix::from_triplets(n, n, t)
        }
        PsiKind::WeightedRowMax => a.add_diagonal(&self_loop_weights(a)),
        PsiKind::TransitionRowMax => {
            let m = self_loop_weights(a);
            let b = a.add_diagonal(&m);
            let inv: Vec<f64> = b.row_sums().iter().map(|&s| 1.0 / s).collect();
            b.scale_rows(&inv)
        }
        PsiKind::AbsLaplacian => {
            let d: Vec<f64> = a
                .row_sums()
                .into_iter()
                .map(|s| if s > 0.0 { s } else { 1.0 })
                .collect();
            a.add_diagonal(&d)
        }
        PsiKind::SymNormRowMax => {
            let m = self_loop_weights(a);
            let b = a.add_diagonal(&m);
            let d = b.row_sums();
            let t: Vec<(usize, usize, f64)> = b
                .iter()
                .map(|(r, c, v)| (r, c, v / (d[r].sqrt() * d[c].sqrt())))
                .collect();
            CsrMatrix::from_triplets(n, n, t)
        }
    };
    Ok(out)
}

/// Sparse k-th power with dust dropping and a fill-in watchdog.
/// `budget_frac` bounds the allowed nonzeros as a fraction of N^2.
pub fn sparse_power(
    a: &CsrMatrix,
    k: usize,
    budget_frac: f64,
    context: (&str, usize),
) -> Result<CsrMatrix> {
    assert!(k >= 1);
    let n = a.n_rows();
    // Tiny matrices are never a fill-in hazard; floor the budget so toy
    // graphs can densify freely while real graphs stay guarded.
    let budget = ((budget_frac * (n as f64) * (n as f64)).ceil() as usize).max(n.max(64));
    let mut acc = a.clone();
    for step in 2..=k {
        acc = acc.spgemm(a, POWER_DROP_TOL);
        if acc.nnz() > budget {
            return Err(McnError::DensityBudget {
                motif: context.0.to_string(),
                k: step.max(context.1.min(k)),
                nnz: acc.nnz(),
                budget,
            });
        }
    }
    Ok(acc)
}

/// Power first, then transform.
pub fn k_step_matrix(
    a: &MotifAdjacency,
    k: usize,
    psi: PsiKind,
    budget_frac: f64,
) -> Result<MotifMatrix> {
    let powered = sparse_power(&a.matrix, k, budget_frac, (a.kind.name(), k))?;
    Ok(MotifMatrix {
        matrix: apply_psi(&powered, psi)?,
        kind: a.kind,
        k,
        psi,
    })
}

/// The symmetric-normalized adjacency with *unit* self-loops used by plain
/// graph-convolution layers, kept separate from the row-max variants. Also
/// serves as the default local-neighborhood matrix for node states.
pub fn degenerate_gcn_matrix(g: &Graph) -> CsrMatrix {
    let a = g.adjacency().add_diagonal(&vec![1.0; g.n_nodes()]);
    let d = a.row_sums();
    let t: Vec<(usize, usize, f64)> = a
        .iter()
        .map(|(r, c, v)| (r, c, v / (d[r].sqrt() * d[c].sqrt())))
        .collect();
    CsrMatrix::from_triplets(g.n_nodes(), g.n_nodes(), t)
}

/// All (motif, k) propagation matrices for one run, the per-node motif count
/// matrix, and the local-neighborhood matrix used for node states. Built once
/// and shared read-only afterwards.
#[derive(Debug, Clone)]
pub struct MatrixBank {
    pub motifs: Vec<MotifKind>,
    pub k_max: usize,
    pub psi: PsiKind,
    pub local: CsrMatrix,
    entries: Vec<Vec<MotifMatrix>>,
}

impl MatrixBank {
    pub fn build(
        g: &Graph,
        motifs: &[MotifKind],
        k_max: usize,
        psi: PsiKind,
        budget_frac: f64,
    ) -> Result<MatrixBank> {
        assert!(!motifs.is_empty() && k_max >= 1);
        let mut entries = Vec::with_capacity(motifs.len());
        for &kind in motifs {
            let adj = motif_adjacency(g, kind);
            let mut per_k = Vec::with_capacity(k_max);
            for k in 1..=k_max {
                per_k.push(k_step_matrix(&adj, k, psi, budget_frac)?);
            }
            entries.push(per_k);
        }
        Ok(MatrixBank {
            motifs: motifs.to_vec(),
            k_max,
            psi,
            local: degenerate_gcn_matrix(g),
            entries,
        })
    }

    /// A bank holding only the unit-self-loop symmetric-normalized matrix,
    /// for the plain graph-convolution degenerate mode.
    pub fn gcn_only(g: &Graph) -> MatrixBank {
        let local = degenerate_gcn_matrix(g);
        let entry = MotifMatrix {
            matrix: local.clone(),
            kind: MotifKind::Edge,
            k: 1,
            psi: PsiKind::SymNormRowMax,
        };
        MatrixBank {
            motifs: vec![MotifKind::Edge],
            k_max: 1,
            psi: PsiKind::SymNormRowMax,
            local,
            entries: vec![vec![entry]],
        }
    }

    pub fn n_motifs(&self) -> usize {
        self.entries.len()
    }

    /// Matrix for motif index `t` and 1-based step `k`.
    pub fn get(&self, t: usize, k: usize) -> &MotifMatrix {
        &self.entries[t][k - 1]
    }

    /// Per-node motif counts for the bank's motif set, optionally
    /// log1p-compressed (motif counts are heavy-tailed).
    pub fn count_matrix(&self, g: &Graph, log_transform: bool) -> MotifCountMatrix {
        let mut c = node_motif_counts(g, &self.motifs);
        if log_transform {
            for v in &mut c.counts.data {
                *v = (*v + 1.0).ln();
            }
        }
        c
    }
}
