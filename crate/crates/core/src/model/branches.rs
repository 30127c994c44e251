//! Attribute branches: colorfulness and brightness estimators tapping
//! stage 1, scene and facial-expression classifiers tapping stage 3 through
//! cloned copies of the backbone's final stage.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Elem, NodeId, Tape};

use super::backbone::{Backbone, Stage};

/// Shared estimator-head composition: global average pool, layer norm over
/// the channel vector, affine map to the embedding width.
#[derive(Debug, Clone)]
pub struct Head {
    pub ln_g: ParamId,
    pub ln_b: ParamId,
    pub fc_w: ParamId,
    pub fc_b: ParamId,
}

impl Head {
    pub(crate) fn register<E: Elem>(
        store: &mut ParamStore<E>,
        name: &str,
        cin: usize,
        embed: usize,
    ) -> Head {
        Head {
            ln_g: store.add(format!("{name}.norm.gamma"), &[cin]),
            ln_b: store.add(format!("{name}.norm.beta"), &[cin]),
            fc_w: store.add(format!("{name}.fc.weight"), &[cin, embed]),
            fc_b: store.add(format!("{name}.fc.bias"), &[embed]),
        }
    }

    /// GAP -> layer norm -> FC on a spatial (H, W, C) node.
    pub fn forward<E: Elem>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        feature_map: NodeId,
    ) -> Result<NodeId> {
        let pooled = tape.gap(feature_map)?;
        let ln_g = tape.param(store, self.ln_g);
        let ln_b = tape.param(store, self.ln_b);
        let n = tape.layer_norm(pooled, ln_g, ln_b)?;
        let fc_w = tape.param(store, self.fc_w);
        let fc_b = tape.param(store, self.fc_b);
        tape.linear(n, fc_w, fc_b)
    }
}

/// Affine predictor mapping an embedding to prediction outputs.
#[derive(Debug, Clone)]
pub struct Pred {
    pub w: ParamId,
    pub b: ParamId,
}

impl Pred {
    pub(crate) fn register<E: Elem>(
        store: &mut ParamStore<E>,
        name: &str,
        embed: usize,
        out: usize,
    ) -> Pred {
        Pred {
            w: store.add(format!("{name}.weight"), &[embed, out]),
            b: store.add(format!("{name}.bias"), &[out]),
        }
    }

    pub fn forward<E: Elem>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        embedding: NodeId,
    ) -> Result<NodeId> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.linear(embedding, w, b)
    }
}

/// Scalar-regression branch (brightness, colorfulness) fed by the stage-1
/// block-3 tap.
#[derive(Debug, Clone)]
pub struct EstimatorBranch {
    pub head: Head,
    pub pred: Pred,
}

impl EstimatorBranch {
    pub(crate) fn register<E: Elem>(
        store: &mut ParamStore<E>,
        name: &str,
        cin: usize,
        embed: usize,
    ) -> EstimatorBranch {
        EstimatorBranch {
            head: Head::register(store, &format!("{name}.head"), cin, embed),
            pred: Pred::register(store, &format!("{name}.pred"), embed, 1),
        }
    }

    /// Returns (embedding, scalar prediction node).
    pub fn forward<E: Elem>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        v1_3: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let emb = self.head.forward(tape, store, v1_3)?;
        let pred = self.pred.forward(tape, store, emb)?;
        Ok((emb, pred))
    }
}

/// Classification branch (scene, facial expression): a cloned copy of the
/// backbone's final stage over the stage-3 tap, then head and class logits.
#[derive(Debug, Clone)]
pub struct ClassifierBranch {
    pub(crate) stage: Stage,
    pub head: Head,
    pub pred: Pred,
    pub classes: usize,
    stage_prefix: String,
}

impl ClassifierBranch {
    pub(crate) fn register<E: Elem>(
        store: &mut ParamStore<E>,
        name: &str,
        backbone: &Backbone,
        embed: usize,
        classes: usize,
    ) -> ClassifierBranch {
        let dims = &backbone.cfg.stage_dims;
        let stage = Stage::register(
            store,
            &format!("{name}.stage"),
            Some(dims[2]),
            dims[3],
            backbone.cfg.stage_depths[3],
        );
        ClassifierBranch {
            stage,
            head: Head::register(store, &format!("{name}.head"), dims[3], embed),
            pred: Pred::register(store, &format!("{name}.pred"), embed, classes),
            classes,
            stage_prefix: format!("{name}.stage"),
        }
    }

    /// Copy the backbone's final-stage parameter values into this branch's
    /// stage (the construction-time weight inheritance).
    pub(crate) fn inherit_stage_weights<E: Elem>(
        &self,
        store: &mut ParamStore<E>,
        backbone: &Backbone,
    ) -> Result<()> {
        let src = backbone.stages[3].param_ids();
        let dst = self.stage.param_ids();
        debug_assert_eq!(src.len(), dst.len());
        for (s, d) in src.iter().zip(dst.iter()) {
            store.copy_values(*s, *d)?;
        }
        Ok(())
    }

    /// Forward the cloned stage alone: (H, W, stage_dims[2]) input at the
    /// stage-3 resolution, (H/2, W/2, stage_dims[3]) output.
    pub fn stage_forward<E: Elem>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        v27: NodeId,
        layers: &mut Vec<(String, NodeId)>,
    ) -> Result<NodeId> {
        self.stage
            .forward(tape, store, v27, &self.stage_prefix, layers, None)
    }

    /// Returns (embedding, class logits node).
    pub fn forward<E: Elem>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        v27: NodeId,
        layers: &mut Vec<(String, NodeId)>,
    ) -> Result<(NodeId, NodeId)> {
        let out = self.stage_forward(tape, store, v27, layers)?;
        let emb = self.head.forward(tape, store, out)?;
        let pred = self.pred.forward(tape, store, emb)?;
        Ok((emb, pred))
    }

    pub(crate) fn exclusive_param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.stage.param_ids();
        ids.extend([self.head.ln_g, self.head.ln_b, self.head.fc_w, self.head.fc_b]);
        ids.extend([self.pred.w, self.pred.b]);
        ids
    }
}

impl EstimatorBranch {
    pub(crate) fn exclusive_param_ids(&self) -> Vec<ParamId> {
        vec![
            self.head.ln_g,
            self.head.ln_b,
            self.head.fc_w,
            self.head.fc_b,
            self.pred.w,
            self.pred.b,
        ]
    }
}

/// Argmax with lowest-index tie-break.
pub fn argmax_lowest<E: Elem>(scores: &[E]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::Domain("argmax of empty score vector".into()));
    }
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate().skip(1) {
        if v > scores[best] {
            best = i;
        }
    }
    Ok(best)
}
