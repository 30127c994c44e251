//! Model assembly: configuration, seeded parameter initialization, and the
//! joint per-sample forward pass producing taps, branch outputs, fused
//! features, and emotion logits on one tape.

pub mod backbone;
pub mod branches;
pub mod fusion;

use ndarray::IxDyn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{fill_constant, fill_trunc_normal, ParamId, ParamStore};
use crate::tensor::{Elem, NodeId, Tape, Tensor};

pub use backbone::{Backbone, BackboneConfig, DropPlan, TapNodes};
pub use branches::{argmax_lowest, ClassifierBranch, EstimatorBranch, Head, Pred};
pub use fusion::{
    classification_loss, regression_loss, total_objective, uncertainty_s_grads, Fusion,
    LossBundle, ObjectiveMode, ObjectiveWeights, Targets,
};

/// Truncated-normal standard deviation for weight initialization.
pub const INIT_STD: f64 = 0.02;

/// Which attribute branches participate in forward passes and the objective.
/// Disabled branches are never built on the tape, so their parameters
/// receive exactly zero gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttributeSet {
    pub b: bool,
    pub c: bool,
    pub s: bool,
    pub f: bool,
}

impl Serialize for AttributeSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for AttributeSet {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        AttributeSet::parse(&text).map_err(serde::de::Error::custom)
    }
}

impl AttributeSet {
    pub const ALL: AttributeSet = AttributeSet {
        b: true,
        c: true,
        s: true,
        f: true,
    };
    pub const NONE: AttributeSet = AttributeSet {
        b: false,
        c: false,
        s: false,
        f: false,
    };

    /// Parse "B+C+S+F"-style names; "none" (or empty) disables every branch.
    pub fn parse(text: &str) -> Result<AttributeSet> {
        let t = text.trim();
        if t.is_empty() || t.eq_ignore_ascii_case("none") {
            return Ok(AttributeSet::NONE);
        }
        let mut set = AttributeSet::NONE;
        for tok in t.split('+') {
            match tok.trim().to_ascii_uppercase().as_str() {
                "B" => set.b = true,
                "C" => set.c = true,
                "S" => set.s = true,
                "F" | "FE" => set.f = true,
                other => {
                    return Err(Error::Config(format!(
                        "unknown attribute {other:?} in {text:?} (expected B, C, S, F)"
                    )))
                }
            }
        }
        Ok(set)
    }

    pub fn count(&self) -> usize {
        usize::from(self.b) + usize::from(self.c) + usize::from(self.s) + usize::from(self.f)
    }
}

impl std::fmt::Display for AttributeSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut parts = Vec::new();
        if self.b {
            parts.push("B");
        }
        if self.c {
            parts.push("C");
        }
        if self.s {
            parts.push("S");
        }
        if self.f {
            parts.push("F");
        }
        if parts.is_empty() {
            write!(f, "none")
        } else {
            write!(f, "{}", parts.join("+"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub embed_dim: usize,
    pub emotion_classes: usize,
    pub scene_classes: usize,
    pub fe_classes: usize,
}

impl ModelConfig {
    /// Paper-scale preset: 224px input, 1024-wide embeddings, 8 emotions,
    /// 255 scenes (254 + unknown), 7 expressions (6 + unknown).
    pub fn full() -> ModelConfig {
        ModelConfig {
            backbone: BackboneConfig::full(),
            embed_dim: 1024,
            emotion_classes: 8,
            scene_classes: 255,
            fe_classes: 7,
        }
    }

    /// Desk-scale preset matching the synthetic dataset defaults.
    pub fn mini() -> ModelConfig {
        ModelConfig {
            backbone: BackboneConfig::mini(),
            embed_dim: 128,
            emotion_classes: 4,
            scene_classes: 5,
            fe_classes: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be positive".into()));
        }
        if self.emotion_classes < 2 {
            return Err(Error::Config(format!(
                "emotion_classes must be at least 2, got {}",
                self.emotion_classes
            )));
        }
        if self.scene_classes < 2 {
            return Err(Error::Config(format!(
                "scene_classes must be at least 2 (the last index is the unknown class), got {}",
                self.scene_classes
            )));
        }
        if self.fe_classes < 2 {
            return Err(Error::Config(format!(
                "fe_classes must be at least 2 (the last index is the no-face class), got {}",
                self.fe_classes
            )));
        }
        Ok(())
    }
}

/// Tape nodes from one sample's forward pass. Branch fields are `None` when
/// the branch is disabled. `layers` names every spatial block output for
/// explainability.
#[derive(Debug, Clone)]
pub struct SampleGraph {
    pub taps: TapNodes,
    pub v_emb: NodeId,
    pub c_emb: Option<NodeId>,
    pub c_pred: Option<NodeId>,
    pub b_emb: Option<NodeId>,
    pub b_pred: Option<NodeId>,
    pub s_emb: Option<NodeId>,
    pub s_logits: Option<NodeId>,
    pub fe_emb: Option<NodeId>,
    pub fe_logits: Option<NodeId>,
    pub fused: NodeId,
    pub logits: NodeId,
    pub layers: Vec<(String, NodeId)>,
}

/// Per-sample loss nodes; absent attributes (or disabled branches) are `None`.
#[derive(Debug, Clone, Copy)]
pub struct SampleLosses {
    pub ve: NodeId,
    pub b: Option<NodeId>,
    pub c: Option<NodeId>,
    pub s: Option<NodeId>,
    pub fe: Option<NodeId>,
}

/// Plain-value outputs of an inference forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub logits: Vec<f64>,
    /// Fused pre-logit feature (the probe feature).
    pub fused: Vec<f64>,
    pub brightness: Option<f64>,
    pub colorfulness: Option<f64>,
    pub scene_logits: Option<Vec<f64>>,
    pub fe_logits: Option<Vec<f64>>,
}

/// Convert a channels-first (3, H, W) image tensor to the internal
/// channels-last layout.
pub fn image_to_hwc<E: Elem>(image: &Tensor<E>) -> Result<Tensor<E>> {
    let sh = image.shape();
    if sh.len() != 3 || sh[0] != 3 {
        return Err(Error::shape(
            "model input",
            "(3, H, W)".to_string(),
            format!("{sh:?}"),
        ));
    }
    let hwc = image.view().permuted_axes(IxDyn(&[1, 2, 0]));
    Ok(hwc.as_standard_layout().to_owned())
}

/// The full network: backbone, four attribute branches, fusion, and the
/// objective's log-variance parameters, all in one flat parameter store.
#[derive(Debug, Clone)]
pub struct A4Net<E: Elem> {
    pub cfg: ModelConfig,
    pub store: ParamStore<E>,
    pub backbone: Backbone,
    pub branch_c: EstimatorBranch,
    pub branch_b: EstimatorBranch,
    pub branch_s: ClassifierBranch,
    pub branch_fe: ClassifierBranch,
    pub fusion: Fusion,
    /// Uncertainty-mode log-variance parameters in branch order B, C, S, FE.
    pub s_ids: [ParamId; 4],
}

fn init_params<E: Elem>(store: &mut ParamStore<E>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = store.entries().iter().map(|e| e.name.clone()).collect();
    for (i, name) in names.iter().enumerate() {
        let slice = store.slice_mut(ParamId(i));
        if name.contains(".grn.") {
            fill_constant(slice, 0.0);
        } else if name.ends_with(".norm.gamma") {
            fill_constant(slice, 1.0);
        } else if name.ends_with(".norm.beta") {
            fill_constant(slice, 0.0);
        } else if name.ends_with(".weight") {
            fill_trunc_normal(slice, INIT_STD, &mut rng);
        } else if name.ends_with(".bias") {
            fill_constant(slice, 0.0);
        } else if name.starts_with("fusion.w_") {
            fill_constant(slice, 1.0);
        } else if name.starts_with("objective.s_") {
            fill_constant(slice, 0.0);
        } else {
            unreachable!("unhandled parameter family: {name}");
        }
    }
}

impl<E: Elem> A4Net<E> {
    /// Build and deterministically initialize the network. The scene and
    /// facial-expression stages start as copies of backbone stage 4.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<A4Net<E>> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let backbone = Backbone::register(cfg.backbone.clone(), &mut store)?;
        let dims = cfg.backbone.stage_dims;
        let branch_c = EstimatorBranch::register(&mut store, "branch.c", dims[0], cfg.embed_dim);
        let branch_b = EstimatorBranch::register(&mut store, "branch.b", dims[0], cfg.embed_dim);
        let branch_s =
            ClassifierBranch::register(&mut store, "branch.s", &backbone, cfg.embed_dim, cfg.scene_classes);
        let branch_fe =
            ClassifierBranch::register(&mut store, "branch.fe", &backbone, cfg.embed_dim, cfg.fe_classes);
        let fusion = Fusion::register(&mut store, dims[3], cfg.embed_dim, cfg.emotion_classes);
        let s_ids = [
            store.add("objective.s_b", &[1]),
            store.add("objective.s_c", &[1]),
            store.add("objective.s_s", &[1]),
            store.add("objective.s_fe", &[1]),
        ];
        init_params(&mut store, seed);
        branch_s.inherit_stage_weights(&mut store, &backbone)?;
        branch_fe.inherit_stage_weights(&mut store, &backbone)?;
        Ok(A4Net {
            cfg,
            store,
            backbone,
            branch_c,
            branch_b,
            branch_s,
            branch_fe,
            fusion,
            s_ids,
        })
    }

    /// One sample's full differentiable forward pass. `image` is channels
    /// first (3, S, S) with values in [0, 1].
    pub fn forward_sample(
        &self,
        tape: &mut Tape<E>,
        image: &Tensor<E>,
        active: AttributeSet,
        drop: Option<&DropPlan>,
    ) -> Result<SampleGraph> {
        let hwc = image_to_hwc(image)?;
        let input = tape.leaf(hwc);
        let mut layers = Vec::new();
        let taps = self
            .backbone
            .forward_taps(tape, &self.store, input, &mut layers, drop)?;
        let v_emb = self.fusion.v_head.forward(tape, &self.store, taps.v_final)?;

        let mut g = SampleGraph {
            taps,
            v_emb,
            c_emb: None,
            c_pred: None,
            b_emb: None,
            b_pred: None,
            s_emb: None,
            s_logits: None,
            fe_emb: None,
            fe_logits: None,
            fused: v_emb,
            logits: v_emb,
            layers: Vec::new(),
        };
        if active.c {
            let (e, p) = self.branch_c.forward(tape, &self.store, taps.v1_3)?;
            g.c_emb = Some(e);
            g.c_pred = Some(p);
        }
        if active.b {
            let (e, p) = self.branch_b.forward(tape, &self.store, taps.v1_3)?;
            g.b_emb = Some(e);
            g.b_pred = Some(p);
        }
        if active.s {
            let (e, p) = self.branch_s.forward(tape, &self.store, taps.v27, &mut layers)?;
            g.s_emb = Some(e);
            g.s_logits = Some(p);
        }
        if active.f {
            let (e, p) = self.branch_fe.forward(tape, &self.store, taps.v27, &mut layers)?;
            g.fe_emb = Some(e);
            g.fe_logits = Some(p);
        }

        let mut fused = v_emb;
        for (w_id, emb) in [
            (self.fusion.w_c, g.c_emb),
            (self.fusion.w_b, g.b_emb),
            (self.fusion.w_s, g.s_emb),
            (self.fusion.w_f, g.fe_emb),
        ] {
            if let Some(e) = emb {
                let w = tape.param(&self.store, w_id);
                let term = tape.scalar_mul(w, e)?;
                fused = tape.add(fused, term)?;
            }
        }
        let cw = tape.param(&self.store, self.fusion.cls_w);
        let cb = tape.param(&self.store, self.fusion.cls_b);
        g.fused = fused;
        g.logits = tape.linear(fused, cw, cb)?;
        g.layers = layers;
        Ok(g)
    }

    /// Attach this sample's loss nodes to the tape. A loss is built only
    /// when both the branch output and the target are present.
    pub fn sample_losses(
        &self,
        tape: &mut Tape<E>,
        g: &SampleGraph,
        t: &Targets,
    ) -> Result<SampleLosses> {
        let ve = tape.softmax_ce(g.logits, t.emotion)?;
        let b = match (g.b_pred, t.brightness) {
            (Some(p), Some(y)) => Some(tape.sq_err(p, y)?),
            _ => None,
        };
        let c = match (g.c_pred, t.colorfulness) {
            (Some(p), Some(y)) => Some(tape.sq_err(p, y)?),
            _ => None,
        };
        let s = match (g.s_logits, t.scene) {
            (Some(l), Some(y)) => Some(tape.softmax_ce(l, y)?),
            _ => None,
        };
        let fe = match (g.fe_logits, t.facial_expression) {
            (Some(l), Some(y)) => Some(tape.softmax_ce(l, y)?),
            _ => None,
        };
        Ok(SampleLosses { ve, b, c, s, fe })
    }

    /// Inference forward pass extracting plain values (no augmentation,
    /// no stochastic depth).
    pub fn forward_eval(&self, image: &Tensor<E>, active: AttributeSet) -> Result<EvalOutput> {
        let mut tape = Tape::new();
        let g = self.forward_sample(&mut tape, image, active, None)?;
        let vecf = |n: NodeId| -> Vec<f64> { tape.value(n).iter().map(|&v| v.to_f64()).collect() };
        Ok(EvalOutput {
            logits: vecf(g.logits),
            fused: vecf(g.fused),
            brightness: g.b_pred.map(|n| tape.scalar_value(n).to_f64()),
            colorfulness: g.c_pred.map(|n| tape.scalar_value(n).to_f64()),
            scene_logits: g.s_logits.map(&vecf),
            fe_logits: g.fe_logits.map(&vecf),
        })
    }

    /// Current log-variance values in branch order B, C, S, FE.
    pub fn s_values(&self) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (o, id) in out.iter_mut().zip(self.s_ids) {
            *o = self.store.slice(id)[0].to_f64();
        }
        out
    }

    /// Parameter ids exclusive to each branch (stage clones, heads,
    /// predictors, and the branch's fusion weight) in order B, C, S, FE.
    pub fn branch_param_ids(&self) -> [Vec<ParamId>; 4] {
        let mut b = self.branch_b.exclusive_param_ids();
        b.push(self.fusion.w_b);
        let mut c = self.branch_c.exclusive_param_ids();
        c.push(self.fusion.w_c);
        let mut s = self.branch_s.exclusive_param_ids();
        s.push(self.fusion.w_s);
        let mut f = self.branch_fe.exclusive_param_ids();
        f.push(self.fusion.w_f);
        [b, c, s, f]
    }

    /// Backbone stage 4 alone on an (H, W, stage_dims[2]) node.
    pub fn stage4_forward(&self, tape: &mut Tape<E>, x: NodeId) -> Result<NodeId> {
        let mut layers = Vec::new();
        self.backbone.stages[3].forward(tape, &self.store, x, "backbone.stage4", &mut layers, None)
    }

    /// The scene branch's cloned stage alone.
    pub fn scene_stage_forward(&self, tape: &mut Tape<E>, x: NodeId) -> Result<NodeId> {
        let mut layers = Vec::new();
        self.branch_s.stage_forward(tape, &self.store, x, &mut layers)
    }

    /// The facial-expression branch's cloned stage alone.
    pub fn fe_stage_forward(&self, tape: &mut Tape<E>, x: NodeId) -> Result<NodeId> {
        let mut layers = Vec::new();
        self.branch_fe.stage_forward(tape, &self.store, x, &mut layers)
    }
}
