//! The joint training objective: latent alignment against aggregated future
//! embeddings (stop-gradient on the target branch), observation grounding
//! through a gradient-blocked view of the forecasting head, and dense
//! multi-quantile forecast supervision.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{self, AggregatorNodes, BoundModel, HeadNodes, ModelConfig, ModelError, TapeForward};
use crate::tensor::{NodeId, Tape, TensorError};

/// Norm floor for the cosine alignment; degenerate rows contribute cosine 0
/// instead of erroring so early-training batches stay finite.
pub const LATENT_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("window too short: sequence length {t} must exceed horizon {l}")]
    Window { t: usize, l: usize },
    #[error("non-finite loss component: {component}")]
    NonFinite { component: &'static str },
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_latent: f64,
    pub lambda_gnd: f64,
    pub lambda_pred: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_latent: 0.1,
            lambda_gnd: 0.1,
            lambda_pred: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if self.lambda_latent < 0.0 || self.lambda_gnd < 0.0 || self.lambda_pred < 0.0 {
            return Err(ObjectiveError::Contract(
                "loss weights must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// How the grounding head tracks the forecasting head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundingMode {
    /// Gradient-blocked view of the live head, re-synced every step.
    #[default]
    PerStepSynced,
    /// Head weights captured at initialization and never updated.
    FrozenAtInit,
}

/// Map tokenizer embeddings to per-position future targets:
/// h_{t+1} = mlp(depthwise_conv(z_{t+1 : t+l})) for each of the T - l valid
/// positions; output row t is the target for predictor row t.
pub fn aggregate_targets(
    tape: &mut Tape,
    z: NodeId,
    agg: &AggregatorNodes,
    l: usize,
) -> Result<NodeId, ObjectiveError> {
    let t = tape.shape(z)[0];
    if t <= l {
        return Err(ObjectiveError::Window { t, l });
    }
    let conv = tape.depthwise_conv1d(z, agg.conv)?;
    // Window starts 1..=T-l aggregate exactly the l future embeddings of
    // each supervised position; start 0 would cover the position itself.
    let sliced = tape.slice_rows(conv, 1, t - l)?;
    let mid = tape.matmul(sliced, agg.w1)?;
    let mid = tape.add_row(mid, agg.b1)?;
    let mid = tape.silu(mid);
    let delta = tape.matmul(mid, agg.w2)?;
    let delta = tape.add_row(delta, agg.b2)?;
    Ok(tape.add(sliced, delta)?)
}

/// Negative mean cosine similarity between prediction rows and
/// stop-gradient targets. Gradient flows only into `pred`.
pub fn latent_loss(
    tape: &mut Tape,
    pred: NodeId,
    target: NodeId,
) -> Result<NodeId, ObjectiveError> {
    if tape.shape(pred) != tape.shape(target) {
        return Err(ObjectiveError::Tensor(TensorError::ShapeMismatch {
            op: "latent_loss",
            left: tape.shape(pred).to_vec(),
            right: tape.shape(target).to_vec(),
        }));
    }
    let rows = tape.shape(pred)[0];
    let target = tape.stop_gradient(target);
    let pn = tape.l2_normalize_rows(pred, LATENT_NORM_EPS)?;
    let tn = tape.l2_normalize_rows(target, LATENT_NORM_EPS)?;
    let prod = tape.mul(pn, tn)?;
    let total = tape.sum(prod);
    Ok(tape.scale(total, -1.0 / rows as f64))
}

/// Standard quantile (pinball) loss of an [l x |Q|] prediction block against
/// an l-step target window, averaged over steps and levels.
pub fn quantile_loss(
    tape: &mut Tape,
    pred_q: NodeId,
    y: &[f64],
    levels: &[f64],
) -> Result<NodeId, ObjectiveError> {
    let shape = tape.shape(pred_q).to_vec();
    let l = y.len();
    if shape != [l, levels.len()] {
        return Err(ObjectiveError::Contract(format!(
            "quantile_loss: prediction shape {shape:?} does not match horizon {l} x {} levels",
            levels.len()
        )));
    }
    // An [l x |Q|] row-major block has the same memory layout as one
    // step-major row of l * |Q| entries.
    let flat = tape.reshape(pred_q, vec![1, l * levels.len()])?;
    let target = tape.constant(y.to_vec(), vec![1, l]);
    Ok(tape.pinball(flat, target, levels, l)?)
}

/// Build the [n x l] matrix of future observation windows: row t holds
/// x_{t+1 .. t+l}.
pub fn future_windows(tape: &mut Tape, x: &[f64], l: usize) -> Result<NodeId, ObjectiveError> {
    let t = x.len();
    if t <= l {
        return Err(ObjectiveError::Window { t, l });
    }
    let n = t - l;
    let mut data = Vec::with_capacity(n * l);
    for row in 0..n {
        data.extend_from_slice(&x[row + 1..row + 1 + l]);
    }
    Ok(tape.constant(data, vec![n, l]))
}

/// Grounding loss: restore the raw future windows from the aggregated
/// targets through a frozen head view. Gradients reach the aggregator and
/// tokenizer only.
pub fn grounding_loss(
    tape: &mut Tape,
    h_target: NodeId,
    x: &[f64],
    head_frozen: &HeadNodes,
    levels: &[f64],
    l: usize,
) -> Result<NodeId, ObjectiveError> {
    let restored = model::head_forward(tape, h_target, head_frozen)?;
    let windows = future_windows(tape, x, l)?;
    Ok(tape.pinball(restored, windows, levels, l)?)
}

/// The three components plus their weighted total, all on the tape.
#[derive(Debug, Clone, Copy)]
pub struct LossComponents {
    pub total: NodeId,
    pub pred: NodeId,
    pub latent: NodeId,
    pub gnd: NodeId,
}

impl LossComponents {
    pub fn values(&self, tape: &Tape) -> ComponentValues {
        ComponentValues {
            total: tape.data(self.total)[0],
            pred: tape.data(self.pred)[0],
            latent: tape.data(self.latent)[0],
            gnd: tape.data(self.gnd)[0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentValues {
    pub total: f64,
    pub pred: f64,
    pub latent: f64,
    pub gnd: f64,
}

pub fn weighted_total(
    tape: &mut Tape,
    weights: &LossWeights,
    pred: NodeId,
    latent: NodeId,
    gnd: NodeId,
) -> Result<NodeId, ObjectiveError> {
    let p = tape.scale(pred, weights.lambda_pred);
    let l = tape.scale(latent, weights.lambda_latent);
    let g = tape.scale(gnd, weights.lambda_gnd);
    let pl = tape.add(p, l)?;
    Ok(tape.add(pl, g)?)
}

/// Everything produced while scoring one normalized window.
pub struct WindowLoss {
    pub comps: LossComponents,
    pub forward: TapeForward,
}

/// Full joint objective over one normalized training window:
/// lambda_pred * L_pred + lambda_latent * L_latent + lambda_gnd * L_gnd.
///
/// `frozen_head` is the gradient-blocked head the grounding path restores
/// through; pass `bound.head.frozen(tape)` for the per-step-synced reading
/// or a constant snapshot for frozen-at-init.
pub fn window_joint_loss(
    tape: &mut Tape,
    x_norm: &[f64],
    bound: &BoundModel,
    cfg: &ModelConfig,
    weights: &LossWeights,
    frozen_head: &HeadNodes,
) -> Result<WindowLoss, ObjectiveError> {
    let t = x_norm.len();
    let l = cfg.horizon;
    if t <= l {
        return Err(ObjectiveError::Window { t, l });
    }
    let n = t - l;
    let forward = model::forward_tape(tape, x_norm, bound, cfg)?;

    let h_target = aggregate_targets(tape, forward.z, &bound.agg, l)?;
    let preds = tape.slice_rows(forward.final_states, 0, n)?;
    let latent = latent_loss(tape, preds, h_target)?;

    let windows = future_windows(tape, x_norm, l)?;
    let live_out = model::head_forward(tape, preds, &bound.head)?;
    let pred = tape.pinball(live_out, windows, &cfg.quantile_levels, l)?;

    let restored = model::head_forward(tape, h_target, frozen_head)?;
    let gnd = tape.pinball(restored, windows, &cfg.quantile_levels, l)?;

    let total = weighted_total(tape, weights, pred, latent, gnd)?;
    let comps = LossComponents {
        total,
        pred,
        latent,
        gnd,
    };
    let vals = comps.values(tape);
    for (v, component) in [
        (vals.pred, "pred"),
        (vals.latent, "latent"),
        (vals.gnd, "gnd"),
        (vals.total, "total"),
    ] {
        if !v.is_finite() {
            return Err(ObjectiveError::NonFinite { component });
        }
    }
    Ok(WindowLoss { comps, forward })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::model::Model;

    fn identity_agg(tape: &mut Tape, kernel: Vec<f64>, l: usize, d: usize) -> AggregatorNodes {
        AggregatorNodes {
            conv: tape.constant(kernel, vec![l, d]),
            w1: tape.constant(vec![0.0; d * d], vec![d, d]),
            b1: tape.constant(vec![0.0; d], vec![d]),
            w2: tape.constant(vec![0.0; d * d], vec![d, d]),
            b2: tape.constant(vec![0.0; d], vec![d]),
        }
    }

    #[test]
    fn aggregate_targets_identity_and_averaging_and_hand_case() {
        let mut tape = Tape::new();
        // Delta kernel at j = 0 with identity mlp: h_{t+1} = z_{t+1}.
        let z = tape.constant(vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![5, 1]);
        let agg = identity_agg(&mut tape, vec![1.0, 0.0], 2, 1);
        let h = aggregate_targets(&mut tape, z, &agg, 2).unwrap();
        assert_eq!(tape.data(h), &[2.0, 3.0, 4.0]);

        // Uniform kernel 1/l: mean of the future window.
        let agg = identity_agg(&mut tape, vec![0.5, 0.5], 2, 1);
        let h = aggregate_targets(&mut tape, z, &agg, 2).unwrap();
        assert_eq!(tape.data(h), &[2.5, 3.5, 4.5]);

        // Hand case: T=4, l=2, kernel [1,1] -> [5, 7].
        let z = tape.constant(vec![1.0, 2.0, 3.0, 4.0], vec![4, 1]);
        let agg = identity_agg(&mut tape, vec![1.0, 1.0], 2, 1);
        let h = aggregate_targets(&mut tape, z, &agg, 2).unwrap();
        assert_eq!(tape.data(h), &[5.0, 7.0]);
    }

    #[test]
    fn aggregate_targets_window_error() {
        let mut tape = Tape::new();
        let z = tape.constant(vec![1.0, 2.0], vec![2, 1]);
        let agg = identity_agg(&mut tape, vec![1.0, 1.0], 2, 1);
        assert!(matches!(
            aggregate_targets(&mut tape, z, &agg, 2),
            Err(ObjectiveError::Window { t: 2, l: 2 })
        ));
    }

    #[test]
    fn latent_loss_cases() {
        let mut tape = Tape::new();
        let a = tape.constant(vec![1.0, 2.0, -0.5, 0.3], vec![2, 2]);
        let same = tape.constant(vec![1.0, 2.0, -0.5, 0.3], vec![2, 2]);
        let loss = latent_loss(&mut tape, a, same).unwrap();
        assert!((tape.data(loss)[0] + 1.0).abs() < 1e-12);

        // Orthogonal rows give zero.
        let p = tape.constant(vec![1.0, 0.0, 0.0, 2.0], vec![2, 2]);
        let q = tape.constant(vec![0.0, 3.0, -1.0, 0.0], vec![2, 2]);
        let loss = latent_loss(&mut tape, p, q).unwrap();
        assert!(tape.data(loss)[0].abs() < 1e-12);

        // Cosines (1, 0) average to -0.5.
        let p = tape.constant(vec![2.0, 0.0, 1.0, 0.0], vec![2, 2]);
        let q = tape.constant(vec![5.0, 0.0, 0.0, 1.0], vec![2, 2]);
        let loss = latent_loss(&mut tape, p, q).unwrap();
        assert!((tape.data(loss)[0] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn latent_loss_scale_invariance_and_range() {
        let mut tape = Tape::new();
        let vals = vec![0.4, -1.2, 2.0, 0.7, -0.3, 1.1];
        let p = tape.constant(vals.clone(), vec![3, 2]);
        let q = tape.constant(vec![1.0, 0.2, -0.6, 0.9, 0.8, -1.4], vec![3, 2]);
        let l1 = latent_loss(&mut tape, p, q).unwrap();
        let scaled: Vec<f64> = vals.iter().map(|v| v * 37.5).collect();
        let ps = tape.constant(scaled, vec![3, 2]);
        let l2 = latent_loss(&mut tape, ps, q).unwrap();
        assert!((tape.data(l1)[0] - tape.data(l2)[0]).abs() < 1e-12);
        assert!(tape.data(l1)[0] >= -1.0 && tape.data(l1)[0] <= 1.0);
    }

    #[test]
    fn latent_loss_zero_rows_contribute_zero() {
        let mut tape = Tape::new();
        let p = tape.constant(vec![0.0, 0.0, 1.0, 0.0], vec![2, 2]);
        let q = tape.constant(vec![1.0, 1.0, 1.0, 0.0], vec![2, 2]);
        let loss = latent_loss(&mut tape, p, q).unwrap();
        // Row 0 contributes cosine 0, row 1 contributes 1: mean -0.5.
        assert!((tape.data(loss)[0] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn quantile_loss_perfect_and_under_prediction() {
        let levels: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        let mut tape = Tape::new();
        let y = [0.3, -0.9];
        let mut block = Vec::new();
        for &v in &y {
            block.extend(std::iter::repeat(v).take(9));
        }
        let pred = tape.constant(block, vec![2, 9]);
        let loss = quantile_loss(&mut tape, pred, &y, &levels).unwrap();
        assert_eq!(tape.data(loss)[0], 0.0);

        // Constant under-prediction by 1 at all nine levels: mean_q(q) = 0.5.
        let pred = tape.constant(vec![0.0; 9], vec![1, 9]);
        let loss = quantile_loss(&mut tape, pred, &[1.0], &levels).unwrap();
        assert!((tape.data(loss)[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn weighted_total_hand_arithmetic() {
        let mut tape = Tape::new();
        let pred = tape.scalar(1.0);
        let latent = tape.scalar(-0.8);
        let gnd = tape.scalar(0.3);
        let total = weighted_total(&mut tape, &LossWeights::default(), pred, latent, gnd).unwrap();
        assert!((tape.data(total)[0] - 0.95).abs() < 1e-15);
    }

    fn micro_model() -> Model {
        let mut cfg = ModelConfig::new(BackboneConfig::new(1, 8, 12, 2), 3);
        cfg.tokenizer_width = 6;
        Model::init(cfg, 42).unwrap()
    }

    fn window() -> Vec<f64> {
        (0..12).map(|i| ((i as f64) * 0.7).sin() + 0.1 * i as f64).collect()
    }

    #[test]
    fn joint_loss_weight_annihilation() {
        let model = micro_model();
        let x = window();
        let run = |weights: LossWeights| {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, true);
            let frozen = bound.head.frozen(&mut tape);
            let wl =
                window_joint_loss(&mut tape, &x, &bound, &model.cfg, &weights, &frozen).unwrap();
            wl.comps.values(&tape)
        };
        let zeroed = run(LossWeights {
            lambda_latent: 0.0,
            lambda_gnd: 0.0,
            lambda_pred: 1.0,
        });
        assert_eq!(zeroed.total, zeroed.pred);
        let dflt = run(LossWeights::default());
        let expect = dflt.pred + 0.1 * dflt.latent + 0.1 * dflt.gnd;
        assert!((dflt.total - expect).abs() < 1e-15);
    }

    #[test]
    fn gradient_routing_matches_stop_gradient_design() {
        let model = micro_model();
        let x = window();

        // Latent loss alone: aggregator gets no gradient (stop-gradient),
        // backbone does.
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, true);
        let fwd = model::forward_tape(&mut tape, &x, &bound, &model.cfg).unwrap();
        let h_target = aggregate_targets(&mut tape, fwd.z, &bound.agg, model.cfg.horizon).unwrap();
        let n = x.len() - model.cfg.horizon;
        let preds = tape.slice_rows(fwd.final_states, 0, n).unwrap();
        let latent = latent_loss(&mut tape, preds, h_target).unwrap();
        tape.backward(latent).unwrap();
        for name in [
            "aggregator.conv",
            "aggregator.mlp.w1",
            "aggregator.mlp.w2",
        ] {
            let id = bound.ids[model.params.index_of(name)];
            let zero = tape
                .grad(id)
                .map(|g| g.iter().all(|v| *v == 0.0))
                .unwrap_or(true);
            assert!(zero, "latent loss leaked gradient into {name}");
        }
        let wq = bound.ids[model.params.index_of("backbone.0.attn.wq")];
        assert!(
            tape.grad(wq).map(|g| g.iter().any(|v| *v != 0.0)).unwrap_or(false),
            "latent loss should reach the backbone"
        );

        // Grounding loss alone: frozen head blocks the head, aggregator and
        // tokenizer receive gradient.
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, true);
        let fwd = model::forward_tape(&mut tape, &x, &bound, &model.cfg).unwrap();
        let h_target = aggregate_targets(&mut tape, fwd.z, &bound.agg, model.cfg.horizon).unwrap();
        let frozen = bound.head.frozen(&mut tape);
        let gnd = grounding_loss(
            &mut tape,
            h_target,
            &x,
            &frozen,
            &model.cfg.quantile_levels,
            model.cfg.horizon,
        )
        .unwrap();
        tape.backward(gnd).unwrap();
        for name in ["head.w1", "head.w2", "head.b1", "head.b2"] {
            let id = bound.ids[model.params.index_of(name)];
            let zero = tape
                .grad(id)
                .map(|g| g.iter().all(|v| *v == 0.0))
                .unwrap_or(true);
            assert!(zero, "grounding loss leaked gradient into {name}");
        }
        for name in ["aggregator.conv", "tokenizer.w4"] {
            let id = bound.ids[model.params.index_of(name)];
            assert!(
                tape.grad(id).map(|g| g.iter().any(|v| *v != 0.0)).unwrap_or(false),
                "grounding loss should reach {name}"
            );
        }
    }

    #[test]
    fn joint_loss_routes_pred_gradient_into_live_head() {
        let model = micro_model();
        let x = window();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, true);
        let frozen = bound.head.frozen(&mut tape);
        let wl = window_joint_loss(
            &mut tape,
            &x,
            &bound,
            &model.cfg,
            &LossWeights::default(),
            &frozen,
        )
        .unwrap();
        tape.backward(wl.comps.total).unwrap();
        let id = bound.ids[model.params.index_of("head.w2")];
        assert!(tape
            .grad(id)
            .map(|g| g.iter().any(|v| *v != 0.0))
            .unwrap_or(false));
    }
}
