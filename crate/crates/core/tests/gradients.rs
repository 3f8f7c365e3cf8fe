//! Finite-difference verification of the analytic gradients.
//!
//! All checks run in double precision with dropout off and actions frozen
//! (replayed through `ActionMode::Forced`), perturbation 1e-6, central
//! differences, relative error below 1e-5.

mod common;

use mcn_core::dense::DenseMatrix;
use mcn_core::model::{
    self, ActionMode, ForwardCtx, ModelDims, ModelParams, TensorKind,
};
use mcn_core::motifs::MotifKind;
use mcn_core::psi::{MatrixBank, PsiKind};
use mcn_core::sparse::CsrMatrix;
use mcn_core::synth;
use mcn_core::training::{self, assign_rewards, cross_entropy_loss};
use mcn_core::LabelSet;

const EPS: f64 = 1e-6;
const TOL: f64 = 1e-5;

struct Fixture {
    bank: MatrixBank,
    c: DenseMatrix,
    dims: ModelDims,
    x: CsrMatrix,
    labels: LabelSet,
    train: Vec<usize>,
}

fn fixture() -> Fixture {
    let graph = synth::erdos_renyi(10, 0.4, 17);
    let motifs = [MotifKind::Edge, MotifKind::Triangle];
    let bank = MatrixBank::build(&graph, &motifs, 2, PsiKind::TransitionRowMax, 1.0).unwrap();
    let c = bank.count_matrix(&graph, true).counts;
    let dims = ModelDims {
        in_dim: 6,
        n_classes: 3,
        hidden: vec![4],
        heads: vec![2, 1],
        n_motifs: 2,
        k_max: 2,
        c_width: c.cols,
        self_attention: true,
    };
    let x = CsrMatrix::from_dense(&common::random_dense(10, 6, 3));
    let labels = LabelSet::new((0..10).map(|i| Some(i % 3)).collect(), 3).unwrap();
    let train = vec![0, 2, 3, 5, 7, 9];
    Fixture {
        bank,
        c,
        dims,
        x,
        labels,
        train,
    }
}

impl Fixture {
    fn ctx(&self) -> ForwardCtx<'_> {
        ForwardCtx {
            dims: &self.dims,
            bank: &self.bank,
            c: &self.c,
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Central finite difference of `loss` w.r.t. every scalar of every tensor
/// selected by `select`, compared against the matching analytic tensor.
fn check_against_fd(
    params: &ModelParams,
    analytic: &ModelParams,
    select: impl Fn(TensorKind) -> bool,
    mut loss: impl FnMut(&ModelParams) -> f64,
    what: &str,
) {
    let n_tensors = params.tensors().len();
    for ti in 0..n_tensors {
        let (kind, data) = {
            let t = params.tensors();
            (t[ti].0, t[ti].1.to_vec())
        };
        if !select(kind) {
            continue;
        }
        for j in 0..data.len() {
            let mut plus = params.clone();
            plus.tensors_mut()[ti].1[j] += EPS;
            let mut minus = params.clone();
            minus.tensors_mut()[ti].1[j] -= EPS;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * EPS);
            let an = analytic.tensors()[ti].1[j];
            assert!(
                rel_err(fd, an) < TOL,
                "{what}: tensor {ti} ({kind:?}) index {j}: fd={fd:.3e} analytic={an:.3e}"
            );
        }
    }
}

#[test]
fn prediction_loss_gradients_match_finite_differences() {
    let f = fixture();
    let ctx = f.ctx();
    let params = ModelParams::init(&f.dims, 11);
    let base = model::forward(&ctx, &params, &f.x, &ActionMode::Greedy, None);
    let actions = base.actions();
    let forced = ActionMode::Forced(&actions);

    let (_, d_logits) = cross_entropy_loss(&base.probs, &f.labels, &f.train);
    let analytic = model::backward_from_logits(&ctx, &params, &base, &d_logits);

    check_against_fd(
        &params,
        &analytic,
        |_| true, // every tensor: policy tensors must come out zero on both sides
        |p| {
            let t = model::forward(&ctx, p, &f.x, &forced, None);
            cross_entropy_loss(&t.probs, &f.labels, &f.train).0
        },
        "prediction loss",
    );
}

#[test]
fn policy_loss_gradients_match_finite_differences() {
    let f = fixture();
    let ctx = f.ctx();
    // A few optimizer-free epochs would leave policies at zero where the
    // log-softmax is flat; nudge them to a generic point instead.
    let mut params = ModelParams::init(&f.dims, 12);
    {
        let mut rng = mcn_core::rng::KeyedRng::new(&[55]);
        for (kind, t) in params.tensors_mut() {
            if matches!(kind, TensorKind::PolicyWeight | TensorKind::PolicyBias) {
                for v in t.iter_mut() {
                    *v = 0.4 * (rng.next_f64() - 0.5);
                }
            }
        }
    }
    let base = model::forward(&ctx, &params, &f.x, &ActionMode::Greedy, None);
    let actions = base.actions();
    let forced = ActionMode::Forced(&actions);

    // Frozen ledger from the base pass's predictions.
    let rewards: Vec<(usize, f64)> = f
        .train
        .iter()
        .map(|&v| {
            let r = if f.labels.labels[v] == Some(base.predictions()[v]) {
                1.0
            } else {
                -1.0
            };
            (v, r)
        })
        .collect();
    let ledger = assign_rewards(&base, &rewards);
    let coefs = ledger.coefficients(0.0);

    let (_, analytic) = model::policy_gradients(&ctx, &params, &base, &coefs, true);

    check_against_fd(
        &params,
        &analytic,
        |k| matches!(k, TensorKind::PolicyWeight | TensorKind::PolicyBias),
        |p| {
            let t = model::forward(&ctx, p, &f.x, &forced, None);
            model::policy_gradients(&ctx, p, &t, &coefs, false).0
        },
        "policy loss",
    );
}

#[test]
fn policy_loss_state_chain_matches_fd_on_top_layer_embedding() {
    // The state chain into head-0 embeddings is exact for the top layer
    // (below it, credit deliberately does not recurse through the forward
    // activations — only the ledger distributes it).
    let f = fixture();
    let ctx = f.ctx();
    let mut params = ModelParams::init(&f.dims, 13);
    {
        let mut rng = mcn_core::rng::KeyedRng::new(&[56]);
        for (kind, t) in params.tensors_mut() {
            if matches!(kind, TensorKind::PolicyWeight | TensorKind::PolicyBias) {
                for v in t.iter_mut() {
                    *v = 0.4 * (rng.next_f64() - 0.5);
                }
            }
        }
    }
    let base = model::forward(&ctx, &params, &f.x, &ActionMode::Greedy, None);
    let actions = base.actions();
    let forced = ActionMode::Forced(&actions);
    let rewards: Vec<(usize, f64)> = f.train.iter().map(|&v| (v, 1.0)).collect();
    let coefs = assign_rewards(&base, &rewards).coefficients(0.0);
    let (_, analytic) = model::policy_gradients(&ctx, &params, &base, &coefs, true);

    // Tensor index of the top layer's head-0 embedding: layers are laid out
    // sequentially; layer 1 starts after layer 0's 2 heads (3 tensors each)
    // plus 4 policy tensors.
    let top_w_idx = 2 * 3 + 4;
    let (kind, data) = {
        let t = params.tensors();
        (t[top_w_idx].0, t[top_w_idx].1.to_vec())
    };
    assert_eq!(kind, TensorKind::Embed);
    for j in 0..data.len() {
        let mut plus = params.clone();
        plus.tensors_mut()[top_w_idx].1[j] += EPS;
        let mut minus = params.clone();
        minus.tensors_mut()[top_w_idx].1[j] -= EPS;
        let loss = |p: &ModelParams| {
            let t = model::forward(&ctx, p, &f.x, &forced, None);
            model::policy_gradients(&ctx, p, &t, &coefs, false).0
        };
        let fd = (loss(&plus) - loss(&minus)) / (2.0 * EPS);
        let an = analytic.tensors()[top_w_idx].1[j];
        assert!(
            rel_err(fd, an) < TOL,
            "state chain index {j}: fd={fd:.3e} analytic={an:.3e}"
        );
    }
}

#[test]
fn total_gradient_is_sum_of_parts() {
    let f = fixture();
    let ctx = f.ctx();
    let params = ModelParams::init(&f.dims, 14);
    let trace = model::forward(&ctx, &params, &f.x, &ActionMode::Greedy, None);
    let rewards: Vec<(usize, f64)> = f.train.iter().map(|&v| (v, 1.0)).collect();
    let coefs = assign_rewards(&trace, &rewards).coefficients(0.0);

    let (_, _, joint) =
        training::total_loss_and_grads(&ctx, &params, &trace, &f.labels, &f.train, &coefs);

    let (_, d_logits) = cross_entropy_loss(&trace.probs, &f.labels, &f.train);
    let mut separate = model::backward_from_logits(&ctx, &params, &trace, &d_logits);
    let (_, pg) = model::policy_gradients(&ctx, &params, &trace, &coefs, true);
    separate.add_assign(&pg);

    for ((_, a), (_, b)) in joint.tensors().iter().zip(separate.tensors().iter()) {
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x, y, "joint and separate gradients must be identical");
        }
    }
}

#[test]
fn prediction_loss_ignores_policy_parameters() {
    // Finite perturbations of policy tensors must leave the prediction loss
    // bit-identical under frozen actions.
    let f = fixture();
    let ctx = f.ctx();
    let params = ModelParams::init(&f.dims, 15);
    let base = model::forward(&ctx, &params, &f.x, &ActionMode::Greedy, None);
    let actions = base.actions();
    let forced = ActionMode::Forced(&actions);
    let (base_loss, _) = cross_entropy_loss(&base.probs, &f.labels, &f.train);

    let mut perturbed = params.clone();
    for (kind, t) in perturbed.tensors_mut() {
        if matches!(kind, TensorKind::PolicyWeight | TensorKind::PolicyBias) {
            for v in t.iter_mut() {
                *v += 0.37;
            }
        }
    }
    let t = model::forward(&ctx, &perturbed, &f.x, &forced, None);
    let (loss, _) = cross_entropy_loss(&t.probs, &f.labels, &f.train);
    assert_eq!(loss, base_loss);
    assert_eq!(t.probs, base.probs);
}

#[test]
fn policy_loss_never_touches_attention_vectors() {
    let f = fixture();
    let ctx = f.ctx();
    let mut params = ModelParams::init(&f.dims, 16);
    for (kind, t) in params.tensors_mut() {
        if matches!(kind, TensorKind::PolicyWeight | TensorKind::PolicyBias) {
            for (i, v) in t.iter_mut().enumerate() {
                *v = 0.1 * ((i % 7) as f64 - 3.0);
            }
        }
    }
    let trace = model::forward(&ctx, &params, &f.x, &ActionMode::Greedy, None);
    let rewards: Vec<(usize, f64)> = f.train.iter().map(|&v| (v, -1.0)).collect();
    let coefs = assign_rewards(&trace, &rewards).coefficients(0.0);
    let (_, grads) = model::policy_gradients(&ctx, &params, &trace, &coefs, true);
    for (kind, t) in grads.tensors() {
        if kind == TensorKind::Attention {
            assert!(t.iter().all(|&v| v == 0.0), "attention grads must be zero");
        }
    }
    // And with the state chain on, only head-0 embeddings may be nonzero.
    for (l, layer) in grads.layers.iter().enumerate() {
        for (h, head) in layer.heads.iter().enumerate().skip(1) {
            assert!(
                head.w.data.iter().all(|&v| v == 0.0),
                "layer {l} head {h} embedding must not receive policy gradient"
            );
        }
    }
}
