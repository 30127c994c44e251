//! Staged convolutional encoder with tap points.
//!
//! Stem: 4x4/4 patch conv + layer norm. Each later stage opens with a
//! norm + 2x2/2 downsample conv. Blocks: depthwise 7x7, layer norm,
//! 4x expansion, GELU, global response normalization, projection, residual.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Elem, NodeId, Tape};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub stage_depths: [usize; 4],
    pub stage_dims: [usize; 4],
    pub input_size: usize,
    pub drop_path_rate: f64,
}

impl BackboneConfig {
    /// Paper-scale configuration: 224px input, dims 128..1024.
    pub fn full() -> Self {
        BackboneConfig {
            stage_depths: [3, 3, 27, 3],
            stage_dims: [128, 256, 512, 1024],
            input_size: 224,
            drop_path_rate: 0.0,
        }
    }

    /// Desk-scale configuration: 64px input, dims 32..256.
    pub fn mini() -> Self {
        BackboneConfig {
            stage_depths: [3, 3, 4, 3],
            stage_dims: [32, 64, 128, 256],
            input_size: 64,
            drop_path_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_depths[0] < 3 {
            return Err(Error::Config(format!(
                "stage_depths[0] must be at least 3 (the stage-1 tap is block 3), got {}",
                self.stage_depths[0]
            )));
        }
        if self.stage_depths.iter().any(|&d| d == 0) {
            return Err(Error::Config("stage_depths must all be positive".into()));
        }
        if !self.stage_dims.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(format!(
                "stage_dims must be strictly increasing, got {:?}",
                self.stage_dims
            )));
        }
        if self.stage_dims[0] == 0 {
            return Err(Error::Config("stage_dims must all be positive".into()));
        }
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return Err(Error::Config(format!(
                "input_size must be a positive multiple of 32 (stem 4x then three 2x reductions), got {}",
                self.input_size
            )));
        }
        if !(0.0..1.0).contains(&self.drop_path_rate) {
            return Err(Error::Config(format!(
                "drop_path_rate must lie in [0, 1), got {}",
                self.drop_path_rate
            )));
        }
        Ok(())
    }

    pub fn total_blocks(&self) -> usize {
        self.stage_depths.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Stem {
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub ln_g: ParamId,
    pub ln_b: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct Down {
    pub ln_g: ParamId,
    pub ln_b: ParamId,
    pub conv_w: ParamId,
    pub conv_b: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct Block {
    pub dw_w: ParamId,
    pub dw_b: ParamId,
    pub ln_g: ParamId,
    pub ln_b: ParamId,
    pub pw1_w: ParamId,
    pub pw1_b: ParamId,
    pub grn_g: ParamId,
    pub grn_b: ParamId,
    pub pw2_w: ParamId,
    pub pw2_b: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct Stage {
    pub down: Option<Down>,
    pub blocks: Vec<Block>,
}

impl Block {
    fn register<E: Elem>(store: &mut ParamStore<E>, name: &str, c: usize) -> Block {
        Block {
            dw_w: store.add(format!("{name}.dwconv.weight"), &[7, 7, c]),
            dw_b: store.add(format!("{name}.dwconv.bias"), &[c]),
            ln_g: store.add(format!("{name}.norm.gamma"), &[c]),
            ln_b: store.add(format!("{name}.norm.beta"), &[c]),
            pw1_w: store.add(format!("{name}.pw1.weight"), &[c, 4 * c]),
            pw1_b: store.add(format!("{name}.pw1.bias"), &[4 * c]),
            grn_g: store.add(format!("{name}.grn.gamma"), &[4 * c]),
            grn_b: store.add(format!("{name}.grn.beta"), &[4 * c]),
            pw2_w: store.add(format!("{name}.pw2.weight"), &[4 * c, c]),
            pw2_b: store.add(format!("{name}.pw2.bias"), &[c]),
        }
    }

    pub(crate) fn param_ids(&self) -> [ParamId; 10] {
        [
            self.dw_w, self.dw_b, self.ln_g, self.ln_b, self.pw1_w, self.pw1_b, self.grn_g,
            self.grn_b, self.pw2_w, self.pw2_b,
        ]
    }

    /// Forward one block. `skip` drops the residual branch entirely;
    /// `scale != 1` rescales it (stochastic-depth compensation).
    pub(crate) fn forward<E: Elem>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        x: NodeId,
        skip: bool,
        scale: f64,
    ) -> Result<NodeId> {
        if skip {
            return Ok(x);
        }
        let dw_w = tape.param(store, self.dw_w);
        let dw_b = tape.param(store, self.dw_b);
        let ln_g = tape.param(store, self.ln_g);
        let ln_b = tape.param(store, self.ln_b);
        let pw1_w = tape.param(store, self.pw1_w);
        let pw1_b = tape.param(store, self.pw1_b);
        let grn_g = tape.param(store, self.grn_g);
        let grn_b = tape.param(store, self.grn_b);
        let pw2_w = tape.param(store, self.pw2_w);
        let pw2_b = tape.param(store, self.pw2_b);
        let c = tape.dwconv7(x, dw_w, dw_b)?;
        let n = tape.layer_norm(c, ln_g, ln_b)?;
        let e = tape.linear(n, pw1_w, pw1_b)?;
        let a = tape.gelu(e);
        let g = tape.grn(a, grn_g, grn_b)?;
        let mut p = tape.linear(g, pw2_w, pw2_b)?;
        if scale != 1.0 {
            let s = tape.leaf(ndarray::ArrayD::from_elem(
                ndarray::IxDyn(&[1]),
                E::from_f64(scale),
            ));
            p = tape.scalar_mul(s, p)?;
        }
        tape.add(p, x)
    }
}

impl Down {
    fn register<E: Elem>(store: &mut ParamStore<E>, name: &str, cin: usize, cout: usize) -> Down {
        Down {
            ln_g: store.add(format!("{name}.norm.gamma"), &[cin]),
            ln_b: store.add(format!("{name}.norm.beta"), &[cin]),
            conv_w: store.add(format!("{name}.conv.weight"), &[2, 2, cin, cout]),
            conv_b: store.add(format!("{name}.conv.bias"), &[cout]),
        }
    }

    pub(crate) fn param_ids(&self) -> [ParamId; 4] {
        [self.ln_g, self.ln_b, self.conv_w, self.conv_b]
    }

    pub(crate) fn forward<E: Elem>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        x: NodeId,
    ) -> Result<NodeId> {
        let ln_g = tape.param(store, self.ln_g);
        let ln_b = tape.param(store, self.ln_b);
        let conv_w = tape.param(store, self.conv_w);
        let conv_b = tape.param(store, self.conv_b);
        let n = tape.layer_norm(x, ln_g, ln_b)?;
        tape.patch_conv(n, conv_w, conv_b, 2, 2)
    }
}

impl Stage {
    pub(crate) fn register<E: Elem>(
        store: &mut ParamStore<E>,
        name: &str,
        cin_prev: Option<usize>,
        c: usize,
        depth: usize,
    ) -> Stage {
        let down =
            cin_prev.map(|cin| Down::register(store, &format!("{name}.down"), cin, c));
        let blocks = (0..depth)
            .map(|b| Block::register(store, &format!("{name}.block{}", b + 1), c))
            .collect();
        Stage { down, blocks }
    }

    pub(crate) fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        if let Some(d) = &self.down {
            ids.extend(d.param_ids());
        }
        for b in &self.blocks {
            ids.extend(b.param_ids());
        }
        ids
    }

    /// Forward the whole stage, appending block outputs to the layer registry
    /// under `prefix.blockN` names.
    pub(crate) fn forward<E: Elem>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        mut x: NodeId,
        prefix: &str,
        layers: &mut Vec<(String, NodeId)>,
        drop: Option<&[(bool, f64)]>,
    ) -> Result<NodeId> {
        if let Some(d) = &self.down {
            x = d.forward(tape, store, x)?;
        }
        for (bi, blk) in self.blocks.iter().enumerate() {
            let (skip, scale) = drop.map(|d| d[bi]).unwrap_or((false, 1.0));
            x = blk.forward(tape, store, x, skip, scale)?;
            layers.push((format!("{prefix}.block{}", bi + 1), x));
        }
        Ok(x)
    }
}

/// Tape nodes for the four tap points of one sample's forward pass.
#[derive(Debug, Clone, Copy)]
pub struct TapNodes {
    /// Stage-1 block-2 output.
    pub v2: NodeId,
    /// Stage-1 block-3 output (one more block applied to `v2`).
    pub v1_3: NodeId,
    /// Last stage-3 block output.
    pub v27: NodeId,
    /// Last stage-4 block output.
    pub v_final: NodeId,
}

/// Per-block stochastic-depth plan for one training forward pass.
#[derive(Debug, Clone)]
pub struct DropPlan {
    pub skip: Vec<bool>,
    pub scale: Vec<f64>,
}

impl DropPlan {
    /// Sample a plan: block i of n is dropped with probability
    /// rate * i / (n - 1) (linear ramp over depth).
    pub fn sample(cfg: &BackboneConfig, rng: &mut ChaCha8Rng) -> DropPlan {
        use rand::Rng;
        let n = cfg.total_blocks();
        let mut skip = Vec::with_capacity(n);
        let mut scale = Vec::with_capacity(n);
        for i in 0..n {
            let p = if n > 1 {
                cfg.drop_path_rate * i as f64 / (n - 1) as f64
            } else {
                0.0
            };
            let dropped = p > 0.0 && rng.gen_range(0.0..1.0) < p;
            skip.push(dropped);
            scale.push(if p > 0.0 { 1.0 / (1.0 - p) } else { 1.0 });
        }
        DropPlan { skip, scale }
    }

    fn stage_slice(&self, cfg: &BackboneConfig, stage: usize) -> Vec<(bool, f64)> {
        let start: usize = cfg.stage_depths[..stage].iter().sum();
        (start..start + cfg.stage_depths[stage])
            .map(|i| (self.skip[i], self.scale[i]))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    pub(crate) stem: Stem,
    pub(crate) stages: Vec<Stage>,
}

impl Backbone {
    pub fn register<E: Elem>(cfg: BackboneConfig, store: &mut ParamStore<E>) -> Result<Backbone> {
        cfg.validate()?;
        let stem = Stem {
            conv_w: store.add("backbone.stem.conv.weight", &[4, 4, 3, cfg.stage_dims[0]]),
            conv_b: store.add("backbone.stem.conv.bias", &[cfg.stage_dims[0]]),
            ln_g: store.add("backbone.stem.norm.gamma", &[cfg.stage_dims[0]]),
            ln_b: store.add("backbone.stem.norm.beta", &[cfg.stage_dims[0]]),
        };
        let mut stages = Vec::with_capacity(4);
        for s in 0..4 {
            let cin_prev = (s > 0).then(|| cfg.stage_dims[s - 1]);
            stages.push(Stage::register(
                store,
                &format!("backbone.stage{}", s + 1),
                cin_prev,
                cfg.stage_dims[s],
                cfg.stage_depths[s],
            ));
        }
        Ok(Backbone { cfg, stem, stages })
    }

    /// One forward pass computing all four taps. `image` must be an
    /// (input_size, input_size, 3) node already on the tape.
    pub fn forward_taps<E: Elem>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        image: NodeId,
        layers: &mut Vec<(String, NodeId)>,
        drop: Option<&DropPlan>,
    ) -> Result<TapNodes> {
        let shape = tape.value(image).shape().to_vec();
        let want = [self.cfg.input_size, self.cfg.input_size, 3];
        if shape != want {
            return Err(Error::shape(
                "backbone input",
                format!("{want:?}"),
                format!("{shape:?}"),
            ));
        }
        let conv_w = tape.param(store, self.stem.conv_w);
        let conv_b = tape.param(store, self.stem.conv_b);
        let ln_g = tape.param(store, self.stem.ln_g);
        let ln_b = tape.param(store, self.stem.ln_b);
        let conv = tape.patch_conv(image, conv_w, conv_b, 4, 4)?;
        let mut x = tape.layer_norm(conv, ln_g, ln_b)?;
        layers.push(("backbone.stem".to_string(), x));

        let mut v2 = None;
        let mut v1_3 = None;
        let mut v27 = None;
        for (si, stage) in self.stages.iter().enumerate() {
            if let Some(d) = &stage.down {
                x = d.forward(tape, store, x)?;
            }
            let drops = drop.map(|d| d.stage_slice(&self.cfg, si));
            for (bi, blk) in stage.blocks.iter().enumerate() {
                let (skip, scale) = drops
                    .as_ref()
                    .map(|d| d[bi])
                    .unwrap_or((false, 1.0));
                x = blk.forward(tape, store, x, skip, scale)?;
                layers.push((format!("backbone.stage{}.block{}", si + 1, bi + 1), x));
                if si == 0 && bi == 1 {
                    v2 = Some(x);
                }
                if si == 0 && bi == 2 {
                    v1_3 = Some(x);
                }
            }
            if si == 2 {
                v27 = Some(x);
            }
        }
        Ok(TapNodes {
            v2: v2.expect("stage 1 has at least 3 blocks"),
            v1_3: v1_3.expect("stage 1 has at least 3 blocks"),
            v27: v27.expect("four stages"),
            v_final: x,
        })
    }

    /// Name of the deepest block output, the default explainability layer.
    pub fn final_block_layer(&self) -> String {
        format!("backbone.stage4.block{}", self.cfg.stage_depths[3])
    }
}
