//! The motif-attention convolution model.
//!
//! One layer does, in order:
//!
//! 1. embed the (dropout-masked) input features with each head's weight
//!    matrix;
//! 2. build each node's state: its local-neighborhood embedding (head 0)
//!    concatenated with the precomputed motif-count row — the count block
//!    informs the policy only and never feeds the prediction path;
//! 3. run the two policy maps (motif logits from the state; step logits from
//!    the state plus the motif probabilities) and pick one (motif, step)
//!    action per node — greedy, epsilon-greedy, or forced;
//! 4. assemble the propagation matrix row-by-row from each node's chosen
//!    bank entry (all heads in a layer share it);
//! 5. per head, score neighbors with additive self-attention, multiply the
//!    softmaxed scores by the propagation weights, renormalize per row, and
//!    aggregate. With self-attention disabled the propagation weights are
//!    used as-is, which makes the plain graph-convolution configuration
//!    reproduce its reference exactly.
//!
//! Hidden layers concatenate head outputs under ELU; the output layer
//! averages head logits and softmaxes. Everything needed to replay the pass
//! (actions, attention coefficients, dropout masks) is recorded in the trace
//! so both backprop and layered reward credit can consume it.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dense::DenseMatrix;
use crate::psi::MatrixBank;
use crate::rng::KeyedRng;
use crate::sparse::CsrMatrix;

pub const LEAKY_SLOPE: f64 = 0.2;

const DROP_INPUT_TAG: u64 = 0xD21;
const DROP_ATTN_TAG: u64 = 0xA77;
const EXPLORE_TAG: u64 = 0xE9;

/// Architecture hyperparameters resolved against a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDims {
    pub in_dim: usize,
    pub n_classes: usize,
    /// Per-head width of each hidden layer.
    pub hidden: Vec<usize>,
    /// Head count per layer; one longer than `hidden`.
    pub heads: Vec<usize>,
    /// Number of motifs in the bank (T).
    pub n_motifs: usize,
    /// Number of steps in the bank (K).
    pub k_max: usize,
    /// Width of the motif-count block appended to states.
    pub c_width: usize,
    pub self_attention: bool,
}

impl ModelDims {
    pub fn n_layers(&self) -> usize {
        self.heads.len()
    }

    pub fn layer_in(&self, l: usize) -> usize {
        if l == 0 {
            self.in_dim
        } else {
            self.hidden[l - 1] * self.heads[l - 1]
        }
    }

    /// Per-head output width of layer `l`.
    pub fn layer_out(&self, l: usize) -> usize {
        if l + 1 == self.n_layers() {
            self.n_classes
        } else {
            self.hidden[l]
        }
    }

    pub fn state_width(&self, l: usize) -> usize {
        self.layer_out(l) + self.c_width
    }
}

/// One attention head: embedding matrix plus the two halves of the additive
/// attention vector.
#[derive(Debug, Clone)]
pub struct HeadParams {
    pub w: DenseMatrix,
    pub a_src: Vec<f64>,
    pub a_dst: Vec<f64>,
}

/// Affine motif/step policies; zero-initialized so the initial action
/// distribution is uniform.
#[derive(Debug, Clone)]
pub struct PolicyParams {
    /// state -> motif logits, (S x T).
    pub w_f: DenseMatrix,
    pub b_f: Vec<f64>,
    /// [state, motif probs] -> step logits, ((S+T) x K).
    pub w_fp: DenseMatrix,
    pub b_fp: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerParams {
    pub heads: Vec<HeadParams>,
    pub policy: PolicyParams,
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub layers: Vec<LayerParams>,
}

/// Which decay/optimizer bucket a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Embed,
    Attention,
    PolicyWeight,
    PolicyBias,
}

impl TensorKind {
    /// Weight decay applies to embeddings and attention vectors only.
    pub fn decays(&self) -> bool {
        matches!(self, TensorKind::Embed | TensorKind::Attention)
    }
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, len: usize) -> Vec<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
}

impl ModelParams {
    /// Glorot-uniform embeddings and attention vectors, zero policies.
    pub fn init(dims: &ModelDims, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(dims.n_layers());
        for l in 0..dims.n_layers() {
            let (d_in, d_out) = (dims.layer_in(l), dims.layer_out(l));
            let mut heads = Vec::with_capacity(dims.heads[l]);
            for _ in 0..dims.heads[l] {
                let w = DenseMatrix::from_vec(d_in, d_out, glorot(&mut rng, d_in, d_out, d_in * d_out));
                let a = glorot(&mut rng, 2 * d_out, 1, 2 * d_out);
                heads.push(HeadParams {
                    w,
                    a_src: a[..d_out].to_vec(),
                    a_dst: a[d_out..].to_vec(),
                });
            }
            let s = dims.state_width(l);
            layers.push(LayerParams {
                heads,
                policy: PolicyParams {
                    w_f: DenseMatrix::zeros(s, dims.n_motifs),
                    b_f: vec![0.0; dims.n_motifs],
                    w_fp: DenseMatrix::zeros(s + dims.n_motifs, dims.k_max),
                    b_fp: vec![0.0; dims.k_max],
                },
            });
        }
        ModelParams { layers }
    }

    pub fn zeros_like(&self) -> ModelParams {
        let layers = self
            .layers
            .iter()
            .map(|l| LayerParams {
                heads: l
                    .heads
                    .iter()
                    .map(|h| HeadParams {
                        w: DenseMatrix::zeros(h.w.rows, h.w.cols),
                        a_src: vec![0.0; h.a_src.len()],
                        a_dst: vec![0.0; h.a_dst.len()],
                    })
                    .collect(),
                policy: PolicyParams {
                    w_f: DenseMatrix::zeros(l.policy.w_f.rows, l.policy.w_f.cols),
                    b_f: vec![0.0; l.policy.b_f.len()],
                    w_fp: DenseMatrix::zeros(l.policy.w_fp.rows, l.policy.w_fp.cols),
                    b_fp: vec![0.0; l.policy.b_fp.len()],
                },
            })
            .collect();
        ModelParams { layers }
    }

    /// All tensors in a fixed order (layer, then heads, then policy).
    pub fn tensors(&self) -> Vec<(TensorKind, &[f64])> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for head in &layer.heads {
                out.push((TensorKind::Embed, head.w.data.as_slice()));
                out.push((TensorKind::Attention, head.a_src.as_slice()));
                out.push((TensorKind::Attention, head.a_dst.as_slice()));
            }
            out.push((TensorKind::PolicyWeight, layer.policy.w_f.data.as_slice()));
            out.push((TensorKind::PolicyBias, layer.policy.b_f.as_slice()));
            out.push((TensorKind::PolicyWeight, layer.policy.w_fp.data.as_slice()));
            out.push((TensorKind::PolicyBias, layer.policy.b_fp.as_slice()));
        }
        out
    }

    /// Mutable view over the same tensors, same order as [`Self::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(TensorKind, &mut [f64])> {
        let mut out: Vec<(TensorKind, &mut [f64])> = Vec::new();
        for layer in &mut self.layers {
            for head in &mut layer.heads {
                out.push((TensorKind::Embed, head.w.data.as_mut_slice()));
                out.push((TensorKind::Attention, head.a_src.as_mut_slice()));
                out.push((TensorKind::Attention, head.a_dst.as_mut_slice()));
            }
            out.push((TensorKind::PolicyWeight, layer.policy.w_f.data.as_mut_slice()));
            out.push((TensorKind::PolicyBias, layer.policy.b_f.as_mut_slice()));
            out.push((TensorKind::PolicyWeight, layer.policy.w_fp.data.as_mut_slice()));
            out.push((TensorKind::PolicyBias, layer.policy.b_fp.as_mut_slice()));
        }
        out
    }

    pub fn for_each_tensor(&self, mut f: impl FnMut(TensorKind, &[f64])) {
        for (kind, t) in self.tensors() {
            f(kind, t);
        }
    }

    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(TensorKind, &mut [f64])) {
        for (kind, t) in self.tensors_mut() {
            f(kind, t);
        }
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        let flat = other.tensors();
        for (i, (_, t)) in self.tensors_mut().into_iter().enumerate() {
            for (a, &b) in t.iter_mut().zip(flat[i].1) {
                *a += b;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Action policy mode for one forward pass.
#[derive(Debug, Clone)]
pub enum ActionMode<'a> {
    /// Argmax with lowest-index tie-break (test time).
    Greedy,
    /// Uniform random (motif, step) with probability epsilon, else argmax.
    /// Each node draws from a stream keyed by (seed, layer, node, epoch).
    EpsilonGreedy { epsilon: f64, seed: u64, epoch: u64 },
    /// Replay recorded actions (gradient checks).
    Forced(&'a [Vec<(usize, usize)>]),
}

/// Dropout configuration for one training forward pass; masks are keyed by
/// (seed, layer, epoch, row) so passes are replayable.
#[derive(Debug, Clone, Copy)]
pub struct DropoutSpec {
    pub rate: f64,
    pub seed: u64,
    pub epoch: u64,
}

/// Per-node action choices with the policy distributions behind them.
#[derive(Debug, Clone)]
pub struct ActionSelection {
    pub t: Vec<usize>,
    pub k: Vec<usize>,
    pub probs_f: DenseMatrix,
    pub probs_fp: DenseMatrix,
}

/// A layer's input after dropout. Layer 0 keeps the sparse feature layout;
/// hidden activations are dense.
#[derive(Debug, Clone)]
pub enum LayerInput {
    Sparse(CsrMatrix),
    Dense(DenseMatrix),
}

impl LayerInput {
    pub fn n_rows(&self) -> usize {
        match self {
            LayerInput::Sparse(m) => m.n_rows(),
            LayerInput::Dense(m) => m.rows,
        }
    }

    pub fn matmul(&self, w: &DenseMatrix) -> DenseMatrix {
        match self {
            LayerInput::Sparse(m) => m.matmul_dense(w),
            LayerInput::Dense(m) => m.matmul(w),
        }
    }

    /// `input^T @ rhs` (for weight gradients).
    pub fn t_matmul(&self, rhs: &DenseMatrix) -> DenseMatrix {
        match self {
            LayerInput::Sparse(m) => m.t_matmul_dense(rhs),
            LayerInput::Dense(m) => m.t_matmul(rhs),
        }
    }
}

/// Everything one head recorded during aggregation, aligned with the
/// propagation matrix's nonzero layout.
#[derive(Debug, Clone)]
pub struct HeadTrace {
    /// Embedded inputs, N x out.
    pub z: DenseMatrix,
    /// Softmaxed attention coefficients per nonzero (empty when
    /// self-attention is off).
    pub alpha: Vec<f64>,
    /// Sign of the pre-activation attention logit per nonzero.
    pub leaky_pos: Vec<bool>,
    /// Per-row normalizer of the combined weights.
    pub norm: Vec<f64>,
    /// Final per-nonzero aggregation weights before dropout.
    pub weights: Vec<f64>,
    /// Dropout multiplier per nonzero; empty means all ones.
    pub drop_mult: Vec<f64>,
    /// Pre-nonlinearity aggregation, N x out.
    pub out_pre: DenseMatrix,
}

#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub input: LayerInput,
    /// Dropout multipliers applied to this layer's (dense) input; None for
    /// layer 0 (the masked sparse input is stored directly) or when dropout
    /// is off.
    pub input_drop_mult: Option<DenseMatrix>,
    pub state: DenseMatrix,
    pub selection: ActionSelection,
    pub a_hat: CsrMatrix,
    pub heads: Vec<HeadTrace>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
    /// Mean-over-heads output logits, N x L.
    pub logits: DenseMatrix,
    /// Row-softmaxed outputs, N x L.
    pub probs: DenseMatrix,
}

impl ForwardTrace {
    pub fn actions(&self) -> Vec<Vec<(usize, usize)>> {
        self.layers
            .iter()
            .map(|l| {
                l.selection
                    .t
                    .iter()
                    .zip(&l.selection.k)
                    .map(|(&t, &k)| (t, k))
                    .collect()
            })
            .collect()
    }

    pub fn predictions(&self) -> Vec<usize> {
        (0..self.probs.rows)
            .map(|i| argmax(self.probs.row(i)))
            .collect()
    }
}

/// Shared read-only context for forward/backward passes.
pub struct ForwardCtx<'a> {
    pub dims: &'a ModelDims,
    pub bank: &'a MatrixBank,
    /// Motif-count block appended to states, N x c_width.
    pub c: &'a DenseMatrix,
}

#[inline]
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in xs.iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

#[inline]
fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

#[inline]
fn elu_grad(pre: f64) -> f64 {
    if pre > 0.0 {
        1.0
    } else {
        pre.exp()
    }
}

/// In-place row softmax.
pub fn softmax_rows(m: &mut DenseMatrix) {
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

/// Node states: local-neighborhood embedding (through head 0's weights)
/// concatenated with the motif-count block.
pub fn compute_state(z0: &DenseMatrix, local: &CsrMatrix, c: &DenseMatrix) -> DenseMatrix {
    let left = local.matmul_dense(z0);
    DenseMatrix::concat_cols(&[&left, c])
}

/// Run both policy maps over the states and choose one (motif, step) action
/// per node. The step policy consumes the motif probabilities, not the
/// sampled motif.
pub fn select_actions(
    state: &DenseMatrix,
    policy: &PolicyParams,
    mode: &ActionMode,
    layer: usize,
) -> ActionSelection {
    let n = state.rows;
    let n_motifs = policy.w_f.cols;
    let k_max = policy.w_fp.cols;

    let mut probs_f = state.matmul(&policy.w_f);
    for r in 0..n {
        for (v, b) in probs_f.row_mut(r).iter_mut().zip(&policy.b_f) {
            *v += b;
        }
    }
    softmax_rows(&mut probs_f);

    let fp_input = DenseMatrix::concat_cols(&[state, &probs_f]);
    let mut probs_fp = fp_input.matmul(&policy.w_fp);
    for r in 0..n {
        for (v, b) in probs_fp.row_mut(r).iter_mut().zip(&policy.b_fp) {
            *v += b;
        }
    }
    softmax_rows(&mut probs_fp);

    let mut t = Vec::with_capacity(n);
    let mut k = Vec::with_capacity(n);
    for i in 0..n {
        let (ti, ki) = match mode {
            ActionMode::Greedy => (argmax(probs_f.row(i)), argmax(probs_fp.row(i))),
            ActionMode::EpsilonGreedy {
                epsilon,
                seed,
                epoch,
            } => {
                let mut rng = KeyedRng::new(&[*seed, EXPLORE_TAG, layer as u64, *epoch, i as u64]);
                if rng.next_f64() < *epsilon {
                    (rng.next_index(n_motifs), rng.next_index(k_max))
                } else {
                    (argmax(probs_f.row(i)), argmax(probs_fp.row(i)))
                }
            }
            ActionMode::Forced(actions) => actions[layer][i],
        };
        t.push(ti);
        k.push(ki);
    }
    ActionSelection {
        t,
        k,
        probs_f,
        probs_fp,
    }
}

/// Stack each node's chosen bank row into the layer's propagation matrix.
pub fn build_propagation_matrix(bank: &MatrixBank, sel: &ActionSelection) -> CsrMatrix {
    let n = sel.t.len();
    let mut triplets = Vec::new();
    for i in 0..n {
        let source = &bank.get(sel.t[i], sel.k[i] + 1).matrix;
        let (cols, vals) = source.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            triplets.push((i, j, v));
        }
    }
    CsrMatrix::from_triplets(n, n, triplets)
}

/// One head's neighborhood aggregation over an assembled propagation matrix.
/// With self-attention on, softmaxed additive-attention scores are multiplied
/// by the propagation weights and renormalized per row; with it off the
/// propagation weights are used unchanged.
pub fn propagate_head(
    z: DenseMatrix,
    head: &HeadParams,
    a_hat: &CsrMatrix,
    self_attention: bool,
    drop_mult: Vec<f64>,
) -> HeadTrace {
    let n = a_hat.n_rows();
    let d_out = z.cols;
    let nnz = a_hat.nnz();
    let mut alpha = Vec::new();
    let mut leaky_pos = Vec::new();
    let mut norm = Vec::new();
    let mut weights = vec![0.0; nnz];
    let mut out_pre = DenseMatrix::zeros(n, d_out);

    // Per-node attention source term a_src . z_i, reused across its row.
    let src_score: Vec<f64> = if self_attention {
        (0..n)
            .map(|i| z.row(i).iter().zip(&head.a_src).map(|(a, b)| a * b).sum())
            .collect()
    } else {
        Vec::new()
    };
    let dst_score: Vec<f64> = if self_attention {
        (0..n)
            .map(|i| z.row(i).iter().zip(&head.a_dst).map(|(a, b)| a * b).sum())
            .collect()
    } else {
        Vec::new()
    };

    if self_attention {
        alpha = vec![0.0; nnz];
        leaky_pos = vec![false; nnz];
        norm = vec![0.0; n];
    }

    for i in 0..n {
        let range = a_hat.row_range(i);
        let (cols, avals) = a_hat.row(i);
        debug_assert!(!cols.is_empty(), "empty neighborhood for node {i}");
        if self_attention {
            // Additive attention with a numerically stable softmax.
            let mut max_e = f64::NEG_INFINITY;
            for (slot, &j) in range.clone().zip(cols) {
                let g = src_score[i] + dst_score[j];
                leaky_pos[slot] = g > 0.0;
                let e = if g > 0.0 { g } else { LEAKY_SLOPE * g };
                alpha[slot] = e;
                max_e = max_e.max(e);
            }
            let mut sum = 0.0;
            for slot in range.clone() {
                alpha[slot] = (alpha[slot] - max_e).exp();
                sum += alpha[slot];
            }
            let mut combined_sum = 0.0;
            for (slot, &av) in range.clone().zip(avals) {
                alpha[slot] /= sum;
                combined_sum += alpha[slot] * av;
            }
            norm[i] = combined_sum;
            for (slot, &av) in range.clone().zip(avals) {
                weights[slot] = alpha[slot] * av / combined_sum;
            }
        } else {
            for (slot, &av) in range.clone().zip(avals) {
                weights[slot] = av;
            }
        }
        let out_row = out_pre.row_mut(i);
        for (slot, &j) in range.clone().zip(cols) {
            let w = if drop_mult.is_empty() {
                weights[slot]
            } else {
                weights[slot] * drop_mult[slot]
            };
            if w == 0.0 {
                continue;
            }
            for (o, &zv) in out_row.iter_mut().zip(z.row(j)) {
                *o += w * zv;
            }
        }
    }

    HeadTrace {
        z,
        alpha,
        leaky_pos,
        norm,
        weights,
        drop_mult,
        out_pre,
    }
}

fn drop_sparse(x: &CsrMatrix, spec: &DropoutSpec, layer: usize) -> CsrMatrix {
    let keep_scale = 1.0 / (1.0 - spec.rate);
    let mut triplets = Vec::with_capacity(x.nnz());
    for i in 0..x.n_rows() {
        let mut rng = KeyedRng::new(&[spec.seed, DROP_INPUT_TAG, layer as u64, spec.epoch, i as u64]);
        let (cols, vals) = x.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if rng.next_f64() >= spec.rate {
                triplets.push((i, j, v * keep_scale));
            }
        }
    }
    CsrMatrix::from_triplets(x.n_rows(), x.n_cols(), triplets)
}

fn drop_dense(h: &DenseMatrix, spec: &DropoutSpec, layer: usize) -> (DenseMatrix, DenseMatrix) {
    let keep_scale = 1.0 / (1.0 - spec.rate);
    let mut mult = DenseMatrix::zeros(h.rows, h.cols);
    let mut out = DenseMatrix::zeros(h.rows, h.cols);
    for i in 0..h.rows {
        let mut rng = KeyedRng::new(&[spec.seed, DROP_INPUT_TAG, layer as u64, spec.epoch, i as u64]);
        for c in 0..h.cols {
            if rng.next_f64() >= spec.rate {
                mult.set(i, c, keep_scale);
                out.set(i, c, h.get(i, c) * keep_scale);
            }
        }
    }
    (out, mult)
}

fn attention_drop_mult(a_hat: &CsrMatrix, spec: &DropoutSpec, layer: usize) -> Vec<f64> {
    let keep_scale = 1.0 / (1.0 - spec.rate);
    let mut mult = vec![0.0; a_hat.nnz()];
    for i in 0..a_hat.n_rows() {
        let mut rng = KeyedRng::new(&[spec.seed, DROP_ATTN_TAG, layer as u64, spec.epoch, i as u64]);
        for slot in a_hat.row_range(i) {
            if rng.next_f64() >= spec.rate {
                mult[slot] = keep_scale;
            }
        }
    }
    mult
}

/// Full forward pass. `x` is the raw feature matrix in sparse layout;
/// `dropout: None` (or rate 0) runs the deterministic inference path.
pub fn forward(
    ctx: &ForwardCtx,
    params: &ModelParams,
    x: &CsrMatrix,
    mode: &ActionMode,
    dropout: Option<&DropoutSpec>,
) -> ForwardTrace {
    let dims = ctx.dims;
    let n = x.n_rows();
    assert_eq!(x.n_cols(), dims.in_dim, "feature dimension mismatch");
    assert_eq!(ctx.c.rows, n, "count matrix row mismatch");
    assert_eq!(ctx.c.cols, dims.c_width, "count matrix width mismatch");
    let dropout = dropout.filter(|d| d.rate > 0.0);

    let mut layers = Vec::with_capacity(dims.n_layers());
    let mut hidden: Option<DenseMatrix> = None;
    let mut logits = DenseMatrix::zeros(n, dims.n_classes);

    for l in 0..dims.n_layers() {
        let lp = &params.layers[l];
        let (input, input_drop_mult) = match (&hidden, dropout) {
            (None, Some(spec)) => (LayerInput::Sparse(drop_sparse(x, spec, l)), None),
            (None, None) => (LayerInput::Sparse(x.clone()), None),
            (Some(h), Some(spec)) => {
                let (dropped, mult) = drop_dense(h, spec, l);
                (LayerInput::Dense(dropped), Some(mult))
            }
            (Some(h), None) => (LayerInput::Dense(h.clone()), None),
        };

        // Embed per head; head 0 doubles as the state embedding.
        let zs: Vec<DenseMatrix> = lp.heads.iter().map(|h| input.matmul(&h.w)).collect();
        let state = compute_state(&zs[0], &ctx.bank.local, ctx.c);
        let selection = select_actions(&state, &lp.policy, mode, l);
        let a_hat = build_propagation_matrix(ctx.bank, &selection);

        let mut head_traces = Vec::with_capacity(lp.heads.len());
        for (h, z) in zs.into_iter().enumerate() {
            let drop_mult = match dropout {
                Some(spec) => attention_drop_mult(&a_hat, spec, l * 101 + h),
                None => Vec::new(),
            };
            head_traces.push(propagate_head(
                z,
                &lp.heads[h],
                &a_hat,
                dims.self_attention,
                drop_mult,
            ));
        }

        if l + 1 == dims.n_layers() {
            // Output layer: average head logits.
            let scale = 1.0 / lp.heads.len() as f64;
            for ht in &head_traces {
                for (o, &v) in logits.data.iter_mut().zip(&ht.out_pre.data) {
                    *o += v * scale;
                }
            }
        } else {
            let parts: Vec<DenseMatrix> = head_traces
                .iter()
                .map(|ht| {
                    let mut m = ht.out_pre.clone();
                    for v in &mut m.data {
                        *v = elu(*v);
                    }
                    m
                })
                .collect();
            let refs: Vec<&DenseMatrix> = parts.iter().collect();
            hidden = Some(DenseMatrix::concat_cols(&refs));
        }

        layers.push(LayerTrace {
            input,
            input_drop_mult,
            state,
            selection,
            a_hat,
            heads: head_traces,
        });
    }

    let mut probs = logits.clone();
    softmax_rows(&mut probs);
    ForwardTrace {
        layers,
        logits,
        probs,
    }
}

/// Backprop a gradient on the output logits through the full prediction
/// path, producing gradients for every embedding and attention tensor.
/// Policy tensors receive nothing here: action choices are discrete and the
/// prediction path does not depend on the policy outputs.
pub fn backward_from_logits(
    ctx: &ForwardCtx,
    params: &ModelParams,
    trace: &ForwardTrace,
    d_logits: &DenseMatrix,
) -> ModelParams {
    let dims = ctx.dims;
    let n_layers = dims.n_layers();
    let mut grads = params.zeros_like();
    // Gradient w.r.t. the post-activation concatenated output of the layer
    // below the one being processed.
    let mut d_hidden: Option<DenseMatrix> = None;

    for l in (0..n_layers).rev() {
        let lt = &trace.layers[l];
        let lp = &params.layers[l];
        let n_heads = lp.heads.len();
        let d_out_per_head = dims.layer_out(l);
        let n = lt.a_hat.n_rows();
        let mut d_input = DenseMatrix::zeros(n, dims.layer_in(l));

        let d_concat = d_hidden.take();
        for h in 0..n_heads {
            let ht = &lt.heads[h];
            // Gradient on this head's pre-activation aggregation.
            let mut d_out = DenseMatrix::zeros(n, d_out_per_head);
            match &d_concat {
                None => {
                    let scale = 1.0 / n_heads as f64;
                    for (o, &v) in d_out.data.iter_mut().zip(&d_logits.data) {
                        *o = v * scale;
                    }
                }
                Some(dc) => {
                    for i in 0..n {
                        let src = &dc.row(i)[h * d_out_per_head..(h + 1) * d_out_per_head];
                        let pre = ht.out_pre.row(i);
                        for (c, (d, &s)) in d_out.row_mut(i).iter_mut().zip(src).enumerate() {
                            *d = s * elu_grad(pre[c]);
                            let _ = c;
                        }
                    }
                }
            }

            let mut d_z = DenseMatrix::zeros(n, d_out_per_head);
            let mut d_g_row: Vec<f64> = Vec::new();
            for i in 0..n {
                let range = lt.a_hat.row_range(i);
                let (cols, avals) = lt.a_hat.row(i);
                let d_out_i = d_out.row(i);

                // Aggregation: out_i = sum_j w~_ij z_j.
                for (slot, &j) in range.clone().zip(cols) {
                    let w = if ht.drop_mult.is_empty() {
                        ht.weights[slot]
                    } else {
                        ht.weights[slot] * ht.drop_mult[slot]
                    };
                    if w != 0.0 {
                        let dzj = d_z.row_mut(j);
                        for (dz, &g) in dzj.iter_mut().zip(d_out_i) {
                            *dz += w * g;
                        }
                    }
                }

                if !dims.self_attention {
                    continue;
                }

                // d w_ij (pre-dropout), then back through the renormalized
                // attention/propagation product.
                let mut dot_dw_w = 0.0;
                let mut d_w: Vec<f64> = Vec::with_capacity(cols.len());
                for (slot, &j) in range.clone().zip(cols) {
                    let mut dw: f64 = d_out_i
                        .iter()
                        .zip(ht.z.row(j))
                        .map(|(&g, &zv)| g * zv)
                        .sum();
                    if !ht.drop_mult.is_empty() {
                        dw *= ht.drop_mult[slot];
                    }
                    dot_dw_w += dw * ht.weights[slot];
                    d_w.push(dw);
                }
                // w = alpha * a / norm  =>  d alpha through the quotient.
                let mut dot_da_alpha = 0.0;
                d_g_row.clear();
                for ((idx, slot), &av) in (0..cols.len()).zip(range.clone()).zip(avals) {
                    let du = (d_w[idx] - dot_dw_w) / ht.norm[i];
                    let dalpha = du * av;
                    dot_da_alpha += dalpha * ht.alpha[slot];
                    d_g_row.push(dalpha);
                }
                // Softmax backward, then the leaky-relu slope.
                let mut d_g_sum = 0.0;
                for (idx, slot) in (0..cols.len()).zip(range.clone()) {
                    let de = ht.alpha[slot] * (d_g_row[idx] - dot_da_alpha);
                    let dg = if ht.leaky_pos[slot] { de } else { de * LEAKY_SLOPE };
                    d_g_row[idx] = dg;
                    d_g_sum += dg;
                }
                // g_ij = a_src . z_i + a_dst . z_j.
                let z_i = ht.z.row(i);
                for (c, (ga, &zv)) in grads.layers[l].heads[h]
                    .a_src
                    .iter_mut()
                    .zip(z_i)
                    .enumerate()
                {
                    *ga += d_g_sum * zv;
                    let _ = c;
                }
                {
                    let dzi = d_z.row_mut(i);
                    for (dz, &av) in dzi.iter_mut().zip(&lp.heads[h].a_src) {
                        *dz += d_g_sum * av;
                    }
                }
                for ((idx, _slot), &j) in (0..cols.len()).zip(range.clone()).zip(cols) {
                    let dg = d_g_row[idx];
                    if dg == 0.0 {
                        continue;
                    }
                    let z_j = ht.z.row(j);
                    for (ga, &zv) in grads.layers[l].heads[h].a_dst.iter_mut().zip(z_j) {
                        *ga += dg * zv;
                    }
                    let dzj = d_z.row_mut(j);
                    for (dz, &av) in dzj.iter_mut().zip(&lp.heads[h].a_dst) {
                        *dz += dg * av;
                    }
                }
            }

            // z = input @ W.
            grads.layers[l].heads[h].w.add_assign(&lt.input.t_matmul(&d_z));
            let d_in_h = d_z.matmul_t(&lp.heads[h].w);
            d_input.add_assign(&d_in_h);
        }

        if l > 0 {
            // Undo this layer's input dropout to reach the previous layer's
            // post-activation output.
            if let Some(mult) = &lt.input_drop_mult {
                for (d, &m) in d_input.data.iter_mut().zip(&mult.data) {
                    *d *= m;
                }
            }
            d_hidden = Some(d_input);
        }
    }
    grads
}

/// Value and gradients of the reinforcement attention loss given per-node
/// credit coefficients (layer-indexed). Gradients land in the policy tensors
/// and, through the state, in each layer's head-0 embedding; attention
/// vectors are untouched by construction.
pub fn policy_gradients(
    ctx: &ForwardCtx,
    params: &ModelParams,
    trace: &ForwardTrace,
    coefs: &[Vec<f64>],
    include_state_chain: bool,
) -> (f64, ModelParams) {
    let dims = ctx.dims;
    let mut grads = params.zeros_like();
    let mut loss = 0.0;

    for (l, lt) in trace.layers.iter().enumerate() {
        let coef = &coefs[l];
        let sel = &lt.selection;
        let n = lt.state.rows;
        let s_width = dims.state_width(l);
        let n_motifs = dims.n_motifs;
        let k_max = dims.k_max;
        let lp = &params.layers[l].policy;

        let mut d_logits_fp = DenseMatrix::zeros(n, k_max);
        let mut d_logits_f_direct = DenseMatrix::zeros(n, n_motifs);
        let mut any = false;
        for i in 0..n {
            let c = coef[i];
            if c == 0.0 {
                continue;
            }
            any = true;
            let (t_i, k_i) = (sel.t[i], sel.k[i]);
            let pf = sel.probs_f.row(i);
            let pfp = sel.probs_fp.row(i);
            loss -= c * (pf[t_i].max(1e-300).ln() + pfp[k_i].max(1e-300).ln());
            // d(-c ln p_a)/d logits = c (p - onehot_a).
            for (kk, &p) in pfp.iter().enumerate() {
                d_logits_fp.set(i, kk, c * (p - if kk == k_i { 1.0 } else { 0.0 }));
            }
            for (tt, &p) in pf.iter().enumerate() {
                d_logits_f_direct.set(i, tt, c * (p - if tt == t_i { 1.0 } else { 0.0 }));
            }
        }
        if !any {
            continue;
        }

        // Step-policy parameters: input was [state, probs_f].
        let g_wfp_state = lt.state.t_matmul(&d_logits_fp);
        let g_wfp_pf = sel.probs_f.t_matmul(&d_logits_fp);
        {
            let g = &mut grads.layers[l].policy;
            for r in 0..s_width {
                for c in 0..k_max {
                    let v = g.w_fp.get(r, c) + g_wfp_state.get(r, c);
                    g.w_fp.set(r, c, v);
                }
            }
            for r in 0..n_motifs {
                for c in 0..k_max {
                    let v = g.w_fp.get(s_width + r, c) + g_wfp_pf.get(r, c);
                    g.w_fp.set(s_width + r, c, v);
                }
            }
            for i in 0..n {
                for (b, &v) in g.b_fp.iter_mut().zip(d_logits_fp.row(i)) {
                    *b += v;
                }
            }
        }

        // Chain into the motif probabilities consumed by the step policy.
        let w_fp_pf_block = DenseMatrix::from_fn(n_motifs, k_max, |r, c| lp.w_fp.get(s_width + r, c));
        let d_pf = d_logits_fp.matmul_t(&w_fp_pf_block);
        let mut d_logits_f = d_logits_f_direct;
        for i in 0..n {
            let pf = sel.probs_f.row(i);
            let dpf = d_pf.row(i);
            let dot: f64 = pf.iter().zip(dpf).map(|(&p, &d)| p * d).sum();
            let row = d_logits_f.row_mut(i);
            for (tt, (&p, &d)) in pf.iter().zip(dpf).enumerate() {
                row[tt] += p * (d - dot);
            }
        }

        let g_wf = lt.state.t_matmul(&d_logits_f);
        {
            let g = &mut grads.layers[l].policy;
            g.w_f.add_assign(&g_wf);
            for i in 0..n {
                for (b, &v) in g.b_f.iter_mut().zip(d_logits_f.row(i)) {
                    *b += v;
                }
            }
        }

        if include_state_chain {
            // States depend on head 0's embedding: state = [local z0, C].
            let d_state_left = {
                let mut d_state = d_logits_f.matmul_t(&lp.w_f);
                let w_fp_state_block =
                    DenseMatrix::from_fn(s_width, k_max, |r, c| lp.w_fp.get(r, c));
                d_state.add_assign(&d_logits_fp.matmul_t(&w_fp_state_block));
                let d_l = dims.layer_out(l);
                DenseMatrix::from_fn(n, d_l, |r, c| d_state.get(r, c))
            };
            let d_z0 = ctx.bank.local.t_matmul_dense(&d_state_left);
            grads.layers[l].heads[0]
                .w
                .add_assign(&lt.input.t_matmul(&d_z0));
        }
    }
    (loss, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motifs::MotifKind;
    use crate::psi::{MatrixBank, PsiKind};
    use crate::synth;

    fn toy_ctx(
        n_motifs_cfg: &[MotifKind],
        k_max: usize,
        self_attention: bool,
        seed: u64,
    ) -> (ForwardCtx<'static>, CsrMatrix, ModelParams) {
        let g = synth::erdos_renyi(12, 0.3, seed);
        let bank = Box::leak(Box::new(
            MatrixBank::build(&g, n_motifs_cfg, k_max, PsiKind::TransitionRowMax, 1.0).unwrap(),
        ));
        let c = Box::leak(Box::new(bank.count_matrix(&g, true).counts));
        let dims = Box::leak(Box::new(ModelDims {
            in_dim: 5,
            n_classes: 3,
            hidden: vec![4],
            heads: vec![2, 1],
            n_motifs: n_motifs_cfg.len(),
            k_max,
            c_width: c.cols,
            self_attention,
        }));
        let x = {
            let mut m = DenseMatrix::zeros(12, 5);
            let mut rng = KeyedRng::new(&[seed, 99]);
            for v in &mut m.data {
                *v = rng.next_f64() - 0.5;
            }
            CsrMatrix::from_dense(&m)
        };
        let params = ModelParams::init(dims, seed);
        (
            ForwardCtx {
                dims,
                bank,
                c,
            },
            x,
            params,
        )
    }

    #[test]
    fn singleton_action_space_forces_actions() {
        let (ctx, x, params) = toy_ctx(&[MotifKind::Edge], 1, true, 1);
        let trace = forward(&ctx, &params, &x, &ActionMode::Greedy, None);
        for lt in &trace.layers {
            assert!(lt.selection.t.iter().all(|&t| t == 0));
            assert!(lt.selection.k.iter().all(|&k| k == 0));
            for i in 0..x.n_rows() {
                assert!((lt.selection.probs_f.get(i, 0) - 1.0).abs() < 1e-12);
                assert!((lt.selection.probs_fp.get(i, 0) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_policy_gives_uniform_probs_and_index_zero() {
        let (ctx, x, params) = toy_ctx(&[MotifKind::Edge, MotifKind::TwoStar, MotifKind::Triangle], 2, true, 2);
        let trace = forward(&ctx, &params, &x, &ActionMode::Greedy, None);
        let lt = &trace.layers[0];
        for i in 0..x.n_rows() {
            for t in 0..3 {
                assert!((lt.selection.probs_f.get(i, t) - 1.0 / 3.0).abs() < 1e-12);
            }
            for k in 0..2 {
                assert!((lt.selection.probs_fp.get(i, k) - 0.5).abs() < 1e-12);
            }
            assert_eq!(lt.selection.t[i], 0);
            assert_eq!(lt.selection.k[i], 0);
        }
    }

    #[test]
    fn full_exploration_is_uniform() {
        let (ctx, x, params) = toy_ctx(&[MotifKind::Edge, MotifKind::TwoStar, MotifKind::Triangle], 2, true, 3);
        // epsilon = 1: every draw is uniform over motifs. 10^4 draws across
        // epochs; each motif frequency should sit within 3 sigma of 1/3.
        let mut counts = [0usize; 3];
        let mut total = 0usize;
        for epoch in 0..834 {
            let mode = ActionMode::EpsilonGreedy {
                epsilon: 1.0,
                seed: 7,
                epoch,
            };
            let trace = forward(&ctx, &params, &x, &mode, None);
            for &t in &trace.layers[0].selection.t {
                counts[t] += 1;
                total += 1;
            }
        }
        let p = 1.0 / 3.0;
        let sigma = (p * (1.0 - p) / total as f64).sqrt();
        for &c in &counts {
            let freq = c as f64 / total as f64;
            assert!(
                (freq - p).abs() <= 3.0 * sigma,
                "freq {freq} off uniform (sigma {sigma})"
            );
        }
    }

    #[test]
    fn state_concatenates_embedding_and_counts() {
        let (ctx, x, params) = toy_ctx(&[MotifKind::Edge, MotifKind::Triangle], 1, true, 4);
        let trace = forward(&ctx, &params, &x, &ActionMode::Greedy, None);
        assert_eq!(trace.layers[0].state.cols, 4 + 2);
        // Zero features leave only the count block.
        let x0 = CsrMatrix::from_triplets(12, 5, vec![]);
        let trace0 = forward(&ctx, &params, &x0, &ActionMode::Greedy, None);
        let st = &trace0.layers[0].state;
        for i in 0..12 {
            for c in 0..4 {
                assert_eq!(st.get(i, c), 0.0);
            }
            for c in 0..2 {
                assert_eq!(st.get(i, 4 + c), ctx.c.get(i, c));
            }
        }
    }

    #[test]
    fn assembled_rows_match_sources_exactly() {
        let (ctx, x, params) = toy_ctx(&[MotifKind::Edge, MotifKind::TwoStar], 2, true, 5);
        let trace = forward(
            &ctx,
            &params,
            &x,
            &ActionMode::EpsilonGreedy {
                epsilon: 1.0,
                seed: 11,
                epoch: 0,
            },
            None,
        );
        let lt = &trace.layers[0];
        let n = x.n_rows();
        let mut seen_multiple = false;
        for i in 0..n {
            let (t, k) = (lt.selection.t[i], lt.selection.k[i]);
            if (t, k) != (lt.selection.t[0], lt.selection.k[0]) {
                seen_multiple = true;
            }
            let source = &ctx.bank.get(t, k + 1).matrix;
            let (got_c, got_v) = lt.a_hat.row(i);
            let (want_c, want_v) = source.row(i);
            assert_eq!(got_c, want_c);
            assert_eq!(got_v, want_v);
        }
        assert!(seen_multiple, "exploration should mix sources");
    }

    #[test]
    fn uniform_selection_reproduces_bank_entry() {
        let (ctx, x, params) = toy_ctx(&[MotifKind::Edge], 1, true, 6);
        let trace = forward(&ctx, &params, &x, &ActionMode::Greedy, None);
        let want = &ctx.bank.get(0, 1).matrix;
        assert_eq!(trace.layers[0].a_hat.to_dense(), want.to_dense());
    }

    #[test]
    fn self_loop_only_node_keeps_own_embedding() {
        // One isolated node: its propagation row is a unit self-loop, so the
        // pre-activation output is exactly its embedded features.
        let g = crate::graph::Graph::from_edges(4, &[(0, 1), (1, 2)]).unwrap();
        let bank = MatrixBank::build(&g, &[MotifKind::Edge], 1, PsiKind::TransitionRowMax, 1.0).unwrap();
        let c = bank.count_matrix(&g, false).counts;
        let dims = ModelDims {
            in_dim: 3,
            n_classes: 2,
            hidden: vec![],
            heads: vec![1],
            n_motifs: 1,
            k_max: 1,
            c_width: c.cols,
            self_attention: true,
        };
        let ctx = ForwardCtx {
            dims: &dims,
            bank: &bank,
            c: &c,
        };
        let params = ModelParams::init(&dims, 0);
        let mut xm = DenseMatrix::zeros(4, 3);
        xm.set(3, 0, 1.0);
        xm.set(3, 2, -2.0);
        let x = CsrMatrix::from_dense(&xm);
        let trace = forward(&ctx, &params, &x, &ActionMode::Greedy, None);
        let z3: Vec<f64> = trace.layers[0].heads[0].z.row(3).to_vec();
        let out3 = trace.layers[0].heads[0].out_pre.row(3);
        for (a, b) in out3.iter().zip(&z3) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_attention_vector_row_normalizes_propagation() {
        let (ctx, x, mut params) = toy_ctx(&[MotifKind::Edge], 1, true, 7);
        for layer in &mut params.layers {
            for head in &mut layer.heads {
                head.a_src.iter_mut().for_each(|v| *v = 0.0);
                head.a_dst.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let trace = forward(&ctx, &params, &x, &ActionMode::Greedy, None);
        let lt = &trace.layers[0];
        let ht = &lt.heads[0];
        for i in 0..x.n_rows() {
            let (_, avals) = lt.a_hat.row(i);
            let row_sum: f64 = avals.iter().sum();
            for (slot, &av) in lt.a_hat.row_range(i).zip(avals) {
                assert!((ht.weights[slot] - av / row_sum).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn combined_weights_form_a_simplex() {
        let (ctx, x, params) = toy_ctx(&[MotifKind::Edge, MotifKind::Triangle], 2, true, 8);
        let trace = forward(&ctx, &params, &x, &ActionMode::Greedy, None);
        for lt in &trace.layers {
            for ht in &lt.heads {
                for i in 0..x.n_rows() {
                    let sum: f64 = lt.a_hat.row_range(i).map(|s| ht.weights[s]).sum();
                    assert!((sum - 1.0).abs() < 1e-7, "row {i} sums to {sum}");
                    assert!(lt.a_hat.row_range(i).all(|s| ht.weights[s] >= 0.0));
                }
            }
        }
    }

    #[test]
    fn output_rows_are_probabilities() {
        let (ctx, x, params) = toy_ctx(&[MotifKind::Edge, MotifKind::Triangle], 1, true, 9);
        let trace = forward(&ctx, &params, &x, &ActionMode::Greedy, None);
        for i in 0..x.n_rows() {
            let sum: f64 = trace.probs.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn counts_do_not_leak_into_predictions_for_singleton_actions() {
        let (ctx, x, params) = toy_ctx(&[MotifKind::Edge], 1, true, 10);
        let trace_a = forward(&ctx, &params, &x, &ActionMode::Greedy, None);
        let mut other_c = ctx.c.clone();
        for v in &mut other_c.data {
            *v = *v * 3.0 + 1.0;
        }
        let ctx_b = ForwardCtx {
            dims: ctx.dims,
            bank: ctx.bank,
            c: &other_c,
        };
        let trace_b = forward(&ctx_b, &params, &x, &ActionMode::Greedy, None);
        assert!(trace_a.probs.max_abs_diff(&trace_b.probs) < 1e-15);
    }

    #[test]
    fn forward_is_permutation_equivariant() {
        let g = synth::erdos_renyi(10, 0.35, 21);
        let perm: Vec<usize> = vec![4, 8, 0, 9, 2, 7, 1, 5, 3, 6];
        let permuted_edges: Vec<(usize, usize)> =
            g.edges().iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let gp = crate::graph::Graph::from_edges(10, &permuted_edges).unwrap();

        let motifs = [MotifKind::Edge, MotifKind::Triangle];
        let bank = MatrixBank::build(&g, &motifs, 2, PsiKind::TransitionRowMax, 1.0).unwrap();
        let bank_p = MatrixBank::build(&gp, &motifs, 2, PsiKind::TransitionRowMax, 1.0).unwrap();
        let c = bank.count_matrix(&g, true).counts;
        let c_p = bank_p.count_matrix(&gp, true).counts;

        let dims = ModelDims {
            in_dim: 4,
            n_classes: 3,
            hidden: vec![4],
            heads: vec![2, 1],
            n_motifs: 2,
            k_max: 2,
            c_width: 2,
            self_attention: true,
        };
        let params = ModelParams::init(&dims, 5);

        let mut xm = DenseMatrix::zeros(10, 4);
        let mut rng = KeyedRng::new(&[77]);
        for v in &mut xm.data {
            *v = rng.next_f64();
        }
        let mut xm_p = DenseMatrix::zeros(10, 4);
        for i in 0..10 {
            xm_p.row_mut(perm[i]).copy_from_slice(xm.row(i));
        }

        let ctx = ForwardCtx {
            dims: &dims,
            bank: &bank,
            c: &c,
        };
        let ctx_p = ForwardCtx {
            dims: &dims,
            bank: &bank_p,
            c: &c_p,
        };
        let t = forward(&ctx, &params, &CsrMatrix::from_dense(&xm), &ActionMode::Greedy, None);
        let tp = forward(
            &ctx_p,
            &params,
            &CsrMatrix::from_dense(&xm_p),
            &ActionMode::Greedy,
            None,
        );
        for i in 0..10 {
            for c in 0..3 {
                assert!(
                    (t.probs.get(i, c) - tp.probs.get(perm[i], c)).abs() < 1e-9,
                    "node {i} class {c}"
                );
            }
        }
    }
}
