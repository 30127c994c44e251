//! Grad-CAM heatmaps for the emotion head, plus overlay rendering.

use std::path::Path;

use image::RgbImage;
use ndarray::IxDyn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax_lowest, A4Net, AttributeSet};
use crate::tensor::{ops, Elem, Tape, Tensor};

/// Class to explain: a fixed index or whatever the model predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CamTarget {
    Predicted,
    Class(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CamRequest {
    /// Canonical layer name; `None` selects the final stage-4 block output.
    pub layer: Option<String>,
    pub target: CamTarget,
}

impl Default for CamRequest {
    fn default() -> CamRequest {
        CamRequest {
            layer: None,
            target: CamTarget::Predicted,
        }
    }
}

/// Row-major spatial map with every value in [0, 1]. `source_*` keeps the
/// layer resolution even after upsampling.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub values: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub source_height: usize,
    pub source_width: usize,
}

impl Heatmap {
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CamOutput {
    pub heatmap: Heatmap,
    pub layer: String,
    pub target: usize,
    pub predicted: usize,
    /// Softmax probability of the explained class.
    pub probability: f64,
}

/// Channel weights are the spatial means of the class-score gradient; the map
/// is the rectified weighted channel sum, normalized by its own maximum when
/// that maximum is positive.
pub fn cam_from_parts(activation: &Tensor<f64>, gradient: &Tensor<f64>) -> Result<Heatmap> {
    let shape = activation.shape().to_vec();
    if shape.len() != 3 || gradient.shape() != &shape[..] {
        return Err(Error::shape(
            "cam_from_parts",
            "matching (H, W, C) activation and gradient",
            format!("{:?} vs {:?}", shape, gradient.shape()),
        ));
    }
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    let spatial = (h * w) as f64;
    let mut alpha = vec![0.0; c];
    for y in 0..h {
        for x in 0..w {
            for k in 0..c {
                alpha[k] += gradient[[y, x, k]];
            }
        }
    }
    for a in &mut alpha {
        *a /= spatial;
    }
    let mut values = vec![0.0; h * w];
    let mut max = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for k in 0..c {
                acc += alpha[k] * activation[[y, x, k]];
            }
            let v = acc.max(0.0);
            values[y * w + x] = v;
            max = max.max(v);
        }
    }
    if max > 0.0 {
        for v in &mut values {
            *v /= max;
        }
    }
    Ok(Heatmap {
        values,
        height: h,
        width: w,
        source_height: h,
        source_width: w,
    })
}

/// One forward and one backward pass against fixed parameters. Branch
/// activity must match how the model was trained so the explained logits are
/// the ones the model actually produces.
pub fn grad_cam<E: Elem>(
    model: &A4Net<E>,
    image: &Tensor<E>,
    active: AttributeSet,
    req: &CamRequest,
) -> Result<CamOutput> {
    let mut tape = Tape::new();
    let graph = model.forward_sample(&mut tape, image, active, None)?;
    let logits: Vec<f64> = tape
        .value(graph.logits)
        .iter()
        .map(|&v| v.to_f64())
        .collect();
    let predicted = argmax_lowest(&logits)?;
    let target = match req.target {
        CamTarget::Predicted => predicted,
        CamTarget::Class(c) => {
            if c >= model.cfg.emotion_classes {
                return Err(Error::Domain(format!(
                    "class {c} outside {} emotion classes",
                    model.cfg.emotion_classes
                )));
            }
            c
        }
    };
    let probability = ops::softmax(&logits)[target];

    let layer = match &req.layer {
        Some(name) => name.clone(),
        None => model.backbone.final_block_layer(),
    };
    let node = graph
        .layers
        .iter()
        .find(|(name, _)| name == &layer)
        .map(|&(_, id)| id)
        .ok_or_else(|| Error::Config(format!("unknown layer {layer}")))?;
    if tape.value(node).ndim() != 3 {
        return Err(Error::Config(format!(
            "layer {layer} is not a spatial feature map"
        )));
    }

    let mut seed = Tensor::<E>::zeros(IxDyn(&[logits.len()]));
    seed[[target]] = E::from_f64(1.0);
    tape.backward_with_seed(graph.logits, seed)?;
    let activation = to_f64(tape.value(node));
    let gradient = to_f64(tape.grad(node).ok_or_else(|| {
        Error::Config(format!("layer {layer} received no gradient"))
    })?);
    Ok(CamOutput {
        heatmap: cam_from_parts(&activation, &gradient)?,
        layer,
        target,
        predicted,
        probability,
    })
}

fn to_f64<E: Elem>(t: &Tensor<E>) -> Tensor<f64> {
    t.mapv(|v| v.to_f64())
}

/// Bilinear upsample to a new resolution; source dims are preserved.
pub fn upsample(map: &Heatmap, out_h: usize, out_w: usize) -> Heatmap {
    let src = Tensor::from_shape_vec(
        IxDyn(&[map.height, map.width, 1]),
        map.values.clone(),
    )
    .expect("heatmap layout");
    let big = ops::bilinear_resize(&src, out_h, out_w);
    Heatmap {
        values: big.iter().cloned().collect(),
        height: out_h,
        width: out_w,
        source_height: map.source_height,
        source_width: map.source_width,
    }
}

/// Fixed 256-entry colormap, computed from a piecewise-linear blue-to-red
/// ramp so rendered bytes never depend on an external asset.
pub fn colormap() -> [[u8; 3]; 256] {
    let mut lut = [[0u8; 3]; 256];
    for (i, rgb) in lut.iter_mut().enumerate() {
        let t = i as f64 / 255.0;
        let channel = |center: f64| {
            let v: f64 = 1.5 - (4.0 * t - center).abs();
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        };
        *rgb = [channel(3.0), channel(2.0), channel(1.0)];
    }
    lut
}

/// Alpha-blend the color-mapped heatmap over the image. `alpha` 0 returns the
/// image bytes unchanged; 1 returns the pure colormap.
pub fn render_overlay(image: &RgbImage, map: &Heatmap, alpha: f64) -> Result<RgbImage> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
    }
    let (w, h) = image.dimensions();
    if map.width != w as usize || map.height != h as usize {
        return Err(Error::shape(
            "render_overlay",
            format!("{w}x{h} heatmap"),
            format!("{}x{}", map.width, map.height),
        ));
    }
    let lut = colormap();
    let mut out = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let v = map.at(y as usize, x as usize);
            let color = lut[(v * 255.0).round() as usize];
            let src = image.get_pixel(x, y).0;
            let mut px = [0u8; 3];
            for ch in 0..3 {
                let blended =
                    (1.0 - alpha) * src[ch] as f64 + alpha * color[ch] as f64;
                px[ch] = blended.round() as u8;
            }
            out.put_pixel(x, y, image::Rgb(px));
        }
    }
    Ok(out)
}

pub fn save_overlay(image: &RgbImage, map: &Heatmap, alpha: f64, path: &Path) -> Result<()> {
    let out = render_overlay(image, map, alpha)?;
    out.save(path)
        .map_err(|e| Error::Image(format!("writing {}: {e}", path.display())))
}

/// Canonical-text side-car describing one CAM artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CamSidecar {
    pub layer_id: String,
    pub target_class: usize,
    pub predicted_class: usize,
    pub probability: f64,
}

pub fn sidecar_toml(out: &CamOutput) -> Result<String> {
    let sidecar = CamSidecar {
        layer_id: out.layer.clone(),
        target_class: out.target,
        predicted_class: out.predicted,
        probability: out.probability,
    };
    toml::to_string(&sidecar).map_err(|e| Error::Format(format!("sidecar serialization: {e}")))
}
