//! Weighted feature fusion into emotion logits and the five-term objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{ops, Elem};

use super::branches::Head;

/// Fusion parameters: the head reducing the final feature map to an
/// embedding, four trainable branch weights, and the emotion classifier.
#[derive(Debug, Clone)]
pub struct Fusion {
    pub v_head: Head,
    pub w_c: ParamId,
    pub w_b: ParamId,
    pub w_s: ParamId,
    pub w_f: ParamId,
    pub cls_w: ParamId,
    pub cls_b: ParamId,
}

impl Fusion {
    pub(crate) fn register<E: Elem>(
        store: &mut ParamStore<E>,
        v_channels: usize,
        embed: usize,
        emotion_classes: usize,
    ) -> Fusion {
        Fusion {
            v_head: Head::register(store, "fusion.head", v_channels, embed),
            w_c: store.add("fusion.w_c", &[1]),
            w_b: store.add("fusion.w_b", &[1]),
            w_s: store.add("fusion.w_s", &[1]),
            w_f: store.add("fusion.w_f", &[1]),
            cls_w: store.add("fusion.classifier.weight", &[embed, emotion_classes]),
            cls_b: store.add("fusion.classifier.bias", &[emotion_classes]),
        }
    }
}

/// How auxiliary losses are weighted in the total objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveMode {
    #[default]
    Fixed,
    Uncertainty,
}

/// Objective weighting state. In fixed mode `w` are nonnegative constants;
/// in uncertainty mode each branch weight is exp(-s) for a trainable
/// log-variance s and the objective adds +s per active term.
#[derive(Debug, Clone)]
pub struct ObjectiveWeights {
    pub mode: ObjectiveMode,
    /// Fixed-mode weights in branch order B, C, S, FE.
    pub w: [f64; 4],
    /// Uncertainty-mode log-variance values in branch order B, C, S, FE.
    pub s: [f64; 4],
}

impl ObjectiveWeights {
    pub fn fixed(w: [f64; 4]) -> ObjectiveWeights {
        ObjectiveWeights {
            mode: ObjectiveMode::Fixed,
            w,
            s: [0.0; 4],
        }
    }

    pub fn uncertainty(s: [f64; 4]) -> ObjectiveWeights {
        ObjectiveWeights {
            mode: ObjectiveMode::Uncertainty,
            w: [1.0; 4],
            s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == ObjectiveMode::Fixed {
            for (i, w) in self.w.iter().enumerate() {
                if *w < 0.0 || !w.is_finite() {
                    return Err(Error::Config(format!(
                        "fixed objective weight {} must be a nonnegative finite real, got {w}",
                        ["w_B", "w_C", "w_S", "w_FE"][i]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Effective multiplier for branch k's loss term.
    pub fn branch_weight(&self, k: usize) -> f64 {
        match self.mode {
            ObjectiveMode::Fixed => self.w[k],
            ObjectiveMode::Uncertainty => (-self.s[k]).exp(),
        }
    }
}

/// Per-sample ground truth with presence masks encoded as `Option`.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub emotion: usize,
    pub brightness: Option<f64>,
    pub colorfulness: Option<f64>,
    pub scene: Option<usize>,
    pub facial_expression: Option<usize>,
}

/// The five loss components and their weighted total. `None` marks a branch
/// with no contribution (disabled, or no labeled samples in the batch).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBundle {
    pub l_ve: f64,
    pub l_b: Option<f64>,
    pub l_c: Option<f64>,
    pub l_s: Option<f64>,
    pub l_fe: Option<f64>,
    pub total: f64,
}

impl LossBundle {
    pub fn components(&self) -> [Option<f64>; 4] {
        [self.l_b, self.l_c, self.l_s, self.l_fe]
    }
}

/// Masked mean squared error. Returns 0 when no sample is masked in.
pub fn regression_loss(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<f64> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(Error::shape(
            "regression_loss",
            format!("matching lengths {}", pred.len()),
            format!("target {} mask {}", target.len(), mask.len()),
        ));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..pred.len() {
        if mask[i] {
            let d = pred[i] - target[i];
            sum += d * d;
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Masked mean softmax cross-entropy over (N, K) logits.
pub fn classification_loss(logits: &[Vec<f64>], targets: &[usize], mask: &[bool]) -> Result<f64> {
    if logits.len() != targets.len() || logits.len() != mask.len() {
        return Err(Error::shape(
            "classification_loss",
            format!("matching lengths {}", logits.len()),
            format!("targets {} mask {}", targets.len(), mask.len()),
        ));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..logits.len() {
        if mask[i] {
            let k = logits[i].len();
            if targets[i] >= k {
                return Err(Error::Domain(format!(
                    "class index {} out of range for {k} logits",
                    targets[i]
                )));
            }
            sum += ops::softmax_ce(&logits[i], targets[i]);
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Recombine component losses into the training total.
///
/// Fixed mode: `L_VE + sum_k w_k L_k`. Uncertainty mode:
/// `L_VE + sum_k (exp(-s_k) L_k + s_k)`, summing only over present
/// components so an absent branch cannot drive its s term.
pub fn total_objective(l_ve: f64, components: &[Option<f64>; 4], ow: &ObjectiveWeights) -> Result<f64> {
    ow.validate()?;
    let mut total = l_ve;
    for (k, comp) in components.iter().enumerate() {
        let Some(l) = comp else { continue };
        match ow.mode {
            ObjectiveMode::Fixed => total += ow.w[k] * l,
            ObjectiveMode::Uncertainty => total += (-ow.s[k]).exp() * l + ow.s[k],
        }
    }
    Ok(total)
}

/// Analytic gradient of the uncertainty-mode total with respect to each s_k:
/// `-exp(-s_k) L_k + 1` for present components, 0 otherwise.
pub fn uncertainty_s_grads(components: &[Option<f64>; 4], s: &[f64; 4]) -> [f64; 4] {
    let mut g = [0.0; 4];
    for k in 0..4 {
        if let Some(l) = components[k] {
            g[k] = -(-s[k]).exp() * l + 1.0;
        }
    }
    g
}
