//! Joint training: cross-entropy by backprop plus a layered
//! reinforcement loss on the motif/step policies.
//!
//! Each epoch runs one epsilon-greedy forward pass over the whole graph,
//! scores every training node (+1 for a correct argmax prediction, -1
//! otherwise), distributes those rewards backwards through the chosen
//! propagation neighborhoods (a node collects one credit per rewarded path
//! that touches its action), and steps Adam on the summed gradients with
//! weight decay on embeddings and attention vectors only. Early stopping
//! watches validation loss with validation accuracy as tie-break; the
//! checkpoint kept is the best-validation-accuracy epoch.

use std::time::Instant;

use serde::Serialize;

use crate::dense::DenseMatrix;
use crate::error::{McnError, Result};
use crate::graph::{Dataset, LabelSet};
use crate::model::{
    self, ActionMode, DropoutSpec, ForwardCtx, ForwardTrace, ModelDims, ModelParams, TensorKind,
};
use crate::motifs::MotifKind;
use crate::psi::{MatrixBank, PsiKind, DEFAULT_DENSITY_BUDGET};
use crate::sparse::CsrMatrix;

/// Degenerate configurations reproduce plain graph-convolution and
/// graph-attention models; see the configuration docs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelMode {
    Mcn,
    Gcn,
    Gat,
}

impl ModelMode {
    pub fn name(&self) -> &'static str {
        match self {
            ModelMode::Mcn => "mcn",
            ModelMode::Gcn => "gcn",
            ModelMode::Gat => "gat",
        }
    }

    pub fn parse(s: &str) -> Result<ModelMode> {
        Ok(match s.trim().to_lowercase().as_str() {
            "mcn" => ModelMode::Mcn,
            "gcn" => ModelMode::Gcn,
            "gat" => ModelMode::Gat,
            other => {
                return Err(McnError::InvalidConfig(format!(
                    "unknown mode {other:?} (expected mcn, gcn, or gat)"
                )))
            }
        })
    }
}

/// All training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: ModelMode,
    pub motifs: Vec<MotifKind>,
    pub k_max: usize,
    pub psi: PsiKind,
    pub lr: f64,
    pub dropout: f64,
    pub l2: f64,
    pub epsilon: f64,
    pub patience: usize,
    pub heads: Vec<usize>,
    pub hidden: Vec<usize>,
    pub max_epochs: usize,
    pub seed: u64,
    pub advantage_baseline: bool,
    pub c_log_transform: bool,
    /// Sparse-power fill-in budget as a fraction of N^2.
    pub density_budget: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: ModelMode::Mcn,
            motifs: vec![MotifKind::Edge, MotifKind::Triangle],
            k_max: 1,
            psi: PsiKind::UnweightedSelfLoop,
            lr: 0.005,
            dropout: 0.6,
            l2: 0.0005,
            epsilon: 0.1,
            patience: 100,
            heads: vec![8, 1],
            hidden: vec![8],
            max_epochs: 1000,
            seed: 1,
            advantage_baseline: false,
            c_log_transform: true,
            density_budget: DEFAULT_DENSITY_BUDGET,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.motifs.is_empty() {
            return Err(McnError::InvalidConfig("motifs must be nonempty".into()));
        }
        if self.k_max < 1 {
            return Err(McnError::InvalidConfig("k_max must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(McnError::InvalidConfig("lr must be positive".into()));
        }
        for (name, v) in [("dropout", self.dropout), ("epsilon", self.epsilon)] {
            if !(0.0..=1.0).contains(&v) || (name == "dropout" && v >= 1.0) {
                return Err(McnError::InvalidConfig(format!(
                    "{name} must lie in [0, 1), got {v}"
                )));
            }
        }
        if self.l2 < 0.0 {
            return Err(McnError::InvalidConfig("l2 must be nonnegative".into()));
        }
        if self.heads.is_empty() || self.heads.iter().any(|&h| h == 0) {
            return Err(McnError::InvalidConfig(
                "heads must be a nonempty list of positive counts".into(),
            ));
        }
        if self.hidden.len() + 1 != self.heads.len() {
            return Err(McnError::InvalidConfig(format!(
                "hidden has {} entries but heads has {}; expected one more head count than hidden widths",
                self.hidden.len(),
                self.heads.len()
            )));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(McnError::InvalidConfig("hidden widths must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(McnError::InvalidConfig("max_epochs must be positive".into()));
        }
        if !(self.density_budget > 0.0) {
            return Err(McnError::InvalidConfig("density_budget must be positive".into()));
        }
        Ok(())
    }

    /// Effective bank dimensions after degenerate-mode overrides.
    pub fn effective_motifs(&self) -> Vec<MotifKind> {
        match self.mode {
            ModelMode::Mcn => self.motifs.clone(),
            _ => vec![MotifKind::Edge],
        }
    }

    pub fn effective_k_max(&self) -> usize {
        match self.mode {
            ModelMode::Mcn => self.k_max,
            _ => 1,
        }
    }
}

/// Evaluation summary over a node split.
#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub micro_f1: f64,
    /// Per-class (correct, predicted, actual) counts.
    pub per_class: Vec<(usize, usize, usize)>,
}

/// One history line per epoch.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_c: f64,
    pub l_a: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub val_loss: f64,
    pub epsilon: f64,
}

impl EpochRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("epoch record serializes")
    }
}

/// Everything a finished run hands back.
pub struct TrainResult {
    pub params: ModelParams,
    pub dims: ModelDims,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub wall_ms: u128,
}

/// Cross-entropy over the given nodes: sum of negative log-probabilities of
/// the true classes, with the gradient on the output logits.
pub fn cross_entropy_loss(
    probs: &DenseMatrix,
    labels: &LabelSet,
    nodes: &[usize],
) -> (f64, DenseMatrix) {
    let mut loss = 0.0;
    let mut d_logits = DenseMatrix::zeros(probs.rows, probs.cols);
    for &v in nodes {
        let y = labels.labels[v].expect("loss nodes must be labeled");
        let row = probs.row(v);
        loss -= row[y].max(1e-12).ln();
        let out = d_logits.row_mut(v);
        out.copy_from_slice(row);
        out[y] -= 1.0;
    }
    (loss, d_logits)
}

/// Layered credit: per (layer, node), the summed rewards of the prediction
/// paths whose action chain passes through that node, plus the path count
/// (used by the advantage baseline).
#[derive(Debug, Clone)]
pub struct RewardLedger {
    /// `sum_r[l][i]`: total reward reaching node i's layer-l action.
    pub sum_r: Vec<Vec<f64>>,
    /// `n_paths[l][i]`: number of rewarded paths touching that action.
    pub n_paths: Vec<Vec<f64>>,
}

impl RewardLedger {
    /// Credit coefficients (reward minus baseline per path).
    pub fn coefficients(&self, baseline: f64) -> Vec<Vec<f64>> {
        self.sum_r
            .iter()
            .zip(&self.n_paths)
            .map(|(s, n)| {
                s.iter()
                    .zip(n)
                    .map(|(&r, &c)| r - baseline * c)
                    .collect()
            })
            .collect()
    }
}

/// Distribute per-node rewards backwards: the top layer credits each scored
/// node itself; every earlier layer credits the chosen-neighborhood members
/// of already-credited nodes, once per rewarded path.
pub fn assign_rewards(trace: &ForwardTrace, rewards: &[(usize, f64)]) -> RewardLedger {
    let n_layers = trace.layers.len();
    let n = trace.probs.rows;
    let mut sum_r = vec![vec![0.0; n]; n_layers];
    let mut n_paths = vec![vec![0.0; n]; n_layers];
    for &(v, r) in rewards {
        sum_r[n_layers - 1][v] += r;
        n_paths[n_layers - 1][v] += 1.0;
    }
    for l in (0..n_layers.saturating_sub(1)).rev() {
        let a_hat = &trace.layers[l + 1].a_hat;
        for x in 0..n {
            let (s, p) = (sum_r[l + 1][x], n_paths[l + 1][x]);
            if p == 0.0 {
                continue;
            }
            let (cols, _) = a_hat.row(x);
            for &j in cols {
                sum_r[l][j] += s;
                n_paths[l][j] += p;
            }
        }
    }
    RewardLedger { sum_r, n_paths }
}

/// Adam with decoupled tensor traversal; weight decay hits embeddings and
/// attention vectors only, never policy tensors or biases.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, params: &ModelParams) -> Adam {
        let mut m = Vec::new();
        params.for_each_tensor(|_, t| m.push(vec![0.0; t.len()]));
        let v = m.clone();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m,
            v,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, l2: f64) {
        self.t += 1;
        let flat_grads = grads.tensors();
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (idx, (kind, tensor)) in params.tensors_mut().into_iter().enumerate() {
            let g = flat_grads[idx].1;
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let decay = if kind.decays() { l2 } else { 0.0 };
            for i in 0..tensor.len() {
                let gi = g[i] + decay * tensor[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                tensor[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Bank, count matrix, and dims resolved for a dataset + config.
pub struct TrainSetup {
    pub bank: MatrixBank,
    pub c: DenseMatrix,
    pub dims: ModelDims,
    pub x: CsrMatrix,
}

impl TrainSetup {
    pub fn prepare(data: &Dataset, cfg: &TrainConfig) -> Result<TrainSetup> {
        cfg.validate()?;
        if data.features.needs_synthesis() {
            return Err(McnError::InvalidData(
                "dataset has no features; synthesize structural features first".into(),
            ));
        }
        if data.labels.n_classes < 2 {
            return Err(McnError::InvalidData("need at least two classes".into()));
        }
        let motifs = cfg.effective_motifs();
        let k_max = cfg.effective_k_max();
        let bank = match cfg.mode {
            ModelMode::Gcn => MatrixBank::gcn_only(&data.graph),
            _ => MatrixBank::build(&data.graph, &motifs, k_max, cfg.psi, cfg.density_budget)?,
        };
        let c = bank.count_matrix(&data.graph, cfg.c_log_transform).counts;
        let dims = ModelDims {
            in_dim: data.features.dim(),
            n_classes: data.labels.n_classes,
            hidden: cfg.hidden.clone(),
            heads: cfg.heads.clone(),
            n_motifs: bank.n_motifs(),
            k_max: bank.k_max,
            c_width: c.cols,
            self_attention: cfg.mode != ModelMode::Gcn,
        };
        let x = CsrMatrix::from_dense(&data.features.values);
        Ok(TrainSetup { bank, c, dims, x })
    }

    pub fn ctx(&self) -> ForwardCtx<'_> {
        ForwardCtx {
            dims: &self.dims,
            bank: &self.bank,
            c: &self.c,
        }
    }
}

fn accuracy_on(preds: &[usize], labels: &LabelSet, nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let correct = nodes
        .iter()
        .filter(|&&v| labels.labels[v] == Some(preds[v]))
        .count();
    correct as f64 / nodes.len() as f64
}

/// Combined loss and gradient for one training forward pass: cross-entropy
/// through the prediction path plus the reinforcement loss through the
/// policies (and the state chain into head-0 embeddings).
pub fn total_loss_and_grads(
    ctx: &ForwardCtx,
    params: &ModelParams,
    trace: &ForwardTrace,
    labels: &LabelSet,
    train: &[usize],
    coefs: &[Vec<f64>],
) -> (f64, f64, ModelParams) {
    let (l_c, d_logits) = cross_entropy_loss(&trace.probs, labels, train);
    let mut grads = model::backward_from_logits(ctx, params, trace, &d_logits);
    let (l_a, policy_grads) = model::policy_gradients(ctx, params, trace, coefs, true);
    grads.add_assign(&policy_grads);
    (l_c, l_a, grads)
}

/// Full training loop; returns the best-validation checkpoint and the
/// per-epoch history.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<TrainResult> {
    let start = Instant::now();
    let setup = TrainSetup::prepare(data, cfg)?;
    let ctx = setup.ctx();
    let mut params = ModelParams::init(&setup.dims, cfg.seed);
    let mut opt = Adam::new(cfg.lr, &params);
    let train_nodes = &data.splits.train;
    let val_nodes = &data.splits.val;
    if train_nodes.is_empty() {
        return Err(McnError::InvalidData("empty training split".into()));
    }

    let mut history = Vec::new();
    let mut best_val_loss = f64::INFINITY;
    let mut best_val_acc = f64::NEG_INFINITY;
    let mut ckpt_acc = f64::NEG_INFINITY;
    let mut ckpt_loss = f64::INFINITY;
    let mut ckpt_params = params.clone();
    let mut best_epoch = 0;
    let mut epochs_without_improvement = 0usize;
    let mut reward_baseline = 0.0;
    let mut baseline_initialized = false;

    for epoch in 0..cfg.max_epochs {
        let mode = ActionMode::EpsilonGreedy {
            epsilon: cfg.epsilon,
            seed: cfg.seed,
            epoch: epoch as u64,
        };
        let dropout = DropoutSpec {
            rate: cfg.dropout,
            seed: cfg.seed,
            epoch: epoch as u64,
        };
        let trace = model::forward(&ctx, &params, &setup.x, &mode, Some(&dropout));
        let preds = trace.predictions();
        let rewards: Vec<(usize, f64)> = train_nodes
            .iter()
            .map(|&v| {
                let r = if data.labels.labels[v] == Some(preds[v]) {
                    1.0
                } else {
                    -1.0
                };
                (v, r)
            })
            .collect();
        if cfg.advantage_baseline {
            let mean = rewards.iter().map(|&(_, r)| r).sum::<f64>() / rewards.len() as f64;
            if baseline_initialized {
                reward_baseline = 0.95 * reward_baseline + 0.05 * mean;
            } else {
                reward_baseline = mean;
                baseline_initialized = true;
            }
        }
        let ledger = assign_rewards(&trace, &rewards);
        let coefs = ledger.coefficients(if cfg.advantage_baseline {
            reward_baseline
        } else {
            0.0
        });
        let (l_c, l_a, mut grads) =
            total_loss_and_grads(&ctx, &params, &trace, &data.labels, train_nodes, &coefs);
        if !l_c.is_finite() || !l_a.is_finite() {
            return Err(McnError::Diverged {
                epoch,
                what: "loss".into(),
            });
        }
        // Adam sees training-set-mean gradients so the l2 coefficient keeps
        // its conventional balance against the data term.
        let scale = 1.0 / train_nodes.len() as f64;
        grads.for_each_tensor_mut(|_, t| t.iter_mut().for_each(|v| *v *= scale));
        opt.step(&mut params, &grads, cfg.l2);
        if !params.is_finite() {
            return Err(McnError::Diverged {
                epoch,
                what: "parameters".into(),
            });
        }

        // Greedy evaluation pass for the epoch metrics.
        let eval_trace = model::forward(&ctx, &params, &setup.x, &ActionMode::Greedy, None);
        let eval_preds = eval_trace.predictions();
        let train_acc = accuracy_on(&eval_preds, &data.labels, train_nodes);
        let val_acc = accuracy_on(&eval_preds, &data.labels, val_nodes);
        let val_loss = if val_nodes.is_empty() {
            0.0
        } else {
            cross_entropy_loss(&eval_trace.probs, &data.labels, val_nodes).0 / val_nodes.len() as f64
        };

        history.push(EpochRecord {
            epoch,
            l_c,
            l_a,
            train_acc,
            val_acc,
            val_loss,
            epsilon: cfg.epsilon,
        });

        let improved = val_loss < best_val_loss
            || (val_loss == best_val_loss && val_acc > best_val_acc);
        if improved {
            best_val_loss = best_val_loss.min(val_loss);
            best_val_acc = best_val_acc.max(val_acc);
            epochs_without_improvement = 0;
        } else {
            epochs_without_improvement += 1;
        }
        if val_acc > ckpt_acc || (val_acc == ckpt_acc && val_loss < ckpt_loss) {
            ckpt_acc = val_acc;
            ckpt_loss = val_loss;
            ckpt_params = params.clone();
            best_epoch = epoch;
        }
        if epochs_without_improvement > cfg.patience {
            break;
        }
    }

    Ok(TrainResult {
        params: ckpt_params,
        dims: setup.dims.clone(),
        history,
        best_epoch,
        wall_ms: start.elapsed().as_millis(),
    })
}

/// Greedy-mode metrics of a checkpoint over a split.
pub fn evaluate(
    setup: &TrainSetup,
    params: &ModelParams,
    labels: &LabelSet,
    nodes: &[usize],
) -> Metrics {
    let ctx = setup.ctx();
    let trace = model::forward(&ctx, &params, &setup.x, &ActionMode::Greedy, None);
    metrics_from_predictions(&trace.predictions(), labels, nodes)
}

/// Accuracy plus micro-averaged F1 from global true/false positive counts.
pub fn metrics_from_predictions(preds: &[usize], labels: &LabelSet, nodes: &[usize]) -> Metrics {
    let l = labels.n_classes;
    let mut per_class = vec![(0usize, 0usize, 0usize); l];
    let mut correct = 0usize;
    let mut counted = 0usize;
    for &v in nodes {
        let Some(y) = labels.labels[v] else { continue };
        counted += 1;
        let p = preds[v];
        per_class[p].1 += 1;
        per_class[y].2 += 1;
        if p == y {
            per_class[y].0 += 1;
            correct += 1;
        }
    }
    let accuracy = if counted == 0 {
        0.0
    } else {
        correct as f64 / counted as f64
    };
    let tp: usize = per_class.iter().map(|c| c.0).sum();
    let fp: usize = per_class.iter().map(|c| c.1 - c.0).sum();
    let fnn: usize = per_class.iter().map(|c| c.2 - c.0).sum();
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fnn == 0 {
        0.0
    } else {
        tp as f64 / (tp + fnn) as f64
    };
    let micro_f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Metrics {
        accuracy,
        micro_f1,
        per_class,
    }
}

/// Result of the policy-learning probe.
pub struct ProbeResult {
    /// Greedy action frequency per motif after the final epoch.
    pub final_freq: Vec<f64>,
    /// Fraction of nodes greedily selecting the rigged motif, per epoch.
    pub rigged_frac: Vec<f64>,
    /// Mean probability mass on the rigged motif, per epoch (a finer
    /// uniform-to-converged trajectory than the argmax fraction).
    pub rigged_prob: Vec<f64>,
}

/// Trains only the reinforcement loss on a one-layer policy with rewards
/// rigged to one motif: `reward_scale` when a node's action matches it,
/// `-reward_scale` otherwise (scale 0 gives the no-signal null probe).
/// Exercises the policy-gradient path in isolation.
pub fn rigged_policy_probe(
    setup: &TrainSetup,
    rigged: MotifKind,
    epochs: usize,
    epsilon: f64,
    lr: f64,
    reward_scale: f64,
    seed: u64,
) -> ProbeResult {
    let rig_idx = setup
        .bank
        .motifs
        .iter()
        .position(|&m| m == rigged)
        .expect("rigged motif must be in the bank");
    assert!(setup.bank.n_motifs() >= 2, "probe needs a real choice");
    let ctx = setup.ctx();
    let n = setup.x.n_rows();
    let mut params = ModelParams::init(&setup.dims, seed);
    let mut opt = Adam::new(lr, &params);
    let mut rigged_frac = Vec::with_capacity(epochs);
    let mut rigged_prob = Vec::with_capacity(epochs);

    for epoch in 0..epochs {
        let mode = ActionMode::EpsilonGreedy {
            epsilon,
            seed,
            epoch: epoch as u64,
        };
        let trace = model::forward(&ctx, &params, &setup.x, &mode, None);
        let sel = &trace.layers[0].selection;
        let coef: Vec<f64> = sel
            .t
            .iter()
            .map(|&t| {
                if t == rig_idx {
                    reward_scale
                } else {
                    -reward_scale
                }
            })
            .collect();
        let mut coefs = vec![vec![0.0; n]; setup.dims.n_layers()];
        coefs[0] = coef;
        let (_, mut grads) = model::policy_gradients(&ctx, &params, &trace, &coefs, false);
        grads.for_each_tensor_mut(|kind, t| {
            // Probe trains the policy alone.
            if !matches!(kind, TensorKind::PolicyWeight | TensorKind::PolicyBias) {
                t.iter_mut().for_each(|v| *v = 0.0);
            } else {
                t.iter_mut().for_each(|v| *v /= n as f64);
            }
        });
        opt.step(&mut params, &grads, 0.0);

        let greedy = model::forward(&ctx, &params, &setup.x, &ActionMode::Greedy, None);
        let sel = &greedy.layers[0].selection;
        let hits = sel.t.iter().filter(|&&t| t == rig_idx).count();
        rigged_frac.push(hits as f64 / n as f64);
        let mass: f64 = (0..n).map(|i| sel.probs_f.get(i, rig_idx)).sum();
        rigged_prob.push(mass / n as f64);
    }

    let greedy = model::forward(&ctx, &params, &setup.x, &ActionMode::Greedy, None);
    let mut counts = vec![0usize; setup.bank.n_motifs()];
    for &t in &greedy.layers[0].selection.t {
        counts[t] += 1;
    }
    let final_freq = counts.iter().map(|&c| c as f64 / n as f64).collect();
    ProbeResult {
        final_freq,
        rigged_frac,
        rigged_prob,
    }
}
