//! Frozen-feature linear probes: a fresh affine head trained on cached fused
//! features while every backbone parameter stays untouched.

use serde::{Deserialize, Serialize};

use super::metrics::{mean_average_precision, MetricsReport};
use super::optimizer::{BETA1, BETA2, EPSILON};
use crate::data::{preprocess_eval, Dataset};
use crate::error::{Error, Result};
use crate::model::{argmax_lowest, A4Net, AttributeSet};
use crate::tensor::Elem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SoftmaxCe,
    BinaryCe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub target_classes: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub loss_kind: LossKind,
}

impl Default for ProbeConfig {
    fn default() -> ProbeConfig {
        ProbeConfig::emotic()
    }
}

impl ProbeConfig {
    /// 26-way multi-label probe (EMOTIC protocol).
    pub fn emotic() -> ProbeConfig {
        ProbeConfig {
            target_classes: 26,
            batch_size: 80,
            learning_rate: 0.002,
            epochs: 30,
            loss_kind: LossKind::BinaryCe,
        }
    }

    /// 8-way single-label probe (SE30K8 protocol).
    pub fn se30k8() -> ProbeConfig {
        ProbeConfig {
            target_classes: 8,
            batch_size: 80,
            learning_rate: 0.003,
            epochs: 30,
            loss_kind: LossKind::SoftmaxCe,
        }
    }

    /// 6-way single-label probe (UnBiasedEmo protocol).
    pub fn unbias_emo() -> ProbeConfig {
        ProbeConfig {
            target_classes: 6,
            batch_size: 2,
            learning_rate: 0.00007,
            epochs: 30,
            loss_kind: LossKind::SoftmaxCe,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_classes < 2 {
            return Err(Error::Config("target_classes must be >= 2".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be finite and > 0, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Probe labels: single-label class indices or per-class flags.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbeTargets {
    Single(Vec<usize>),
    Multi(Vec<Vec<bool>>),
}

impl ProbeTargets {
    fn len(&self) -> usize {
        match self {
            ProbeTargets::Single(v) => v.len(),
            ProbeTargets::Multi(v) => v.len(),
        }
    }

    fn check(&self, classes: usize, kind: LossKind) -> Result<()> {
        match (self, kind) {
            (ProbeTargets::Single(_), LossKind::BinaryCe) => Err(Error::Config(
                "binary_ce requires multi-label targets".into(),
            )),
            (ProbeTargets::Multi(_), LossKind::SoftmaxCe) => Err(Error::Config(
                "softmax_ce requires single-label targets".into(),
            )),
            (ProbeTargets::Single(t), _) => {
                if let Some(bad) = t.iter().find(|&&c| c >= classes) {
                    return Err(Error::Config(format!(
                        "label {bad} outside {classes} probe classes"
                    )));
                }
                Ok(())
            }
            (ProbeTargets::Multi(rows), _) => {
                for (i, row) in rows.iter().enumerate() {
                    if row.len() != classes {
                        return Err(Error::Config(format!(
                            "row {i} has {} flags, probe expects {classes}",
                            row.len()
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

/// The trained affine head: `classes` rows of weights plus biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeHead {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl ProbeHead {
    pub fn logits(&self, feature: &[f64]) -> Vec<f64> {
        self.w
            .iter()
            .zip(&self.b)
            .map(|(row, &b)| b + row.iter().zip(feature).map(|(w, f)| w * f).sum::<f64>())
            .collect()
    }
}

/// Eval-mode fused features for every sample, computed once.
pub fn extract_fused_features<E: Elem>(
    model: &A4Net<E>,
    dataset: &Dataset,
    active: AttributeSet,
) -> Result<Vec<Vec<f64>>> {
    if dataset.is_empty() {
        return Err(Error::Domain("probe dataset is empty".into()));
    }
    let mut features = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        let image = dataset.image(i)?;
        let x = preprocess_eval::<E>(&image, model.cfg.backbone.input_size)?;
        features.push(model.forward_eval(&x, active)?.fused);
    }
    Ok(features)
}

/// Single-label probe over a dataset's emotion labels. The model is read-only
/// throughout; only the fresh head learns.
pub fn linear_probe<E: Elem>(
    model: &A4Net<E>,
    dataset: &Dataset,
    cfg: &ProbeConfig,
    active: AttributeSet,
) -> Result<MetricsReport> {
    let features = extract_fused_features(model, dataset, active)?;
    let targets = ProbeTargets::Single(dataset.records.iter().map(|r| r.emotion).collect());
    let (_, report) = train_probe_head(&features, &targets, cfg)?;
    Ok(report)
}

/// Train the affine head on cached features. Batches run in sample order, so
/// the probe is fully deterministic.
pub fn train_probe_head(
    features: &[Vec<f64>],
    targets: &ProbeTargets,
    cfg: &ProbeConfig,
) -> Result<(ProbeHead, MetricsReport)> {
    cfg.validate()?;
    if features.is_empty() {
        return Err(Error::Domain("probe feature set is empty".into()));
    }
    let dim = features[0].len();
    if let Some(bad) = features.iter().position(|f| f.len() != dim) {
        return Err(Error::shape(
            "probe features",
            format!("{dim} per sample"),
            format!("sample {bad} has {}", features[bad].len()),
        ));
    }
    if targets.len() != features.len() {
        return Err(Error::Config(format!(
            "{} features but {} targets",
            features.len(),
            targets.len()
        )));
    }
    let k = cfg.target_classes;
    targets.check(k, cfg.loss_kind)?;

    let mut head = ProbeHead {
        w: vec![vec![0.0; dim]; k],
        b: vec![0.0; k],
    };
    let n_params = k * (dim + 1);
    let mut m = vec![0.0; n_params];
    let mut v = vec![0.0; n_params];
    let mut step = 0u64;
    let mut history = Vec::with_capacity(cfg.epochs);
    let order: Vec<usize> = (0..features.len()).collect();

    for _ in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; n_params];
            let mut batch_loss = 0.0;
            for &i in batch {
                let z = head.logits(&features[i]);
                let (loss, dz) = match (targets, cfg.loss_kind) {
                    (ProbeTargets::Single(t), _) => softmax_ce_grad(&z, t[i]),
                    (ProbeTargets::Multi(rows), _) => binary_ce_grad(&z, &rows[i]),
                };
                batch_loss += loss;
                for (c, &d) in dz.iter().enumerate() {
                    for (j, &f) in features[i].iter().enumerate() {
                        grad[c * dim + j] += d * f;
                    }
                    grad[k * dim + c] += d;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            batch_loss *= scale;
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite {
                    term: "probe".into(),
                    context: "probe batch loss".into(),
                });
            }
            step += 1;
            let bc1 = 1.0 - BETA1.powi(step as i32);
            let bc2 = 1.0 - BETA2.powi(step as i32);
            for p in 0..n_params {
                let g = grad[p] * scale;
                m[p] = BETA1 * m[p] + (1.0 - BETA1) * g;
                v[p] = BETA2 * v[p] + (1.0 - BETA2) * g * g;
                let update = (m[p] / bc1) / ((v[p] / bc2).sqrt() + EPSILON);
                let slot = if p < k * dim {
                    &mut head.w[p / dim][p % dim]
                } else {
                    &mut head.b[p - k * dim]
                };
                *slot -= cfg.learning_rate * update;
            }
            loss_sum += batch_loss * batch.len() as f64;
        }
        history.push(loss_sum / features.len() as f64);
    }

    let mut report = probe_metrics(&head, features, targets)?;
    report.loss_history = history;
    Ok((head, report))
}

/// Score a head against features: top-1 for single-label targets, top-1 hit
/// rate plus mAP for multi-label targets.
pub fn probe_metrics(
    head: &ProbeHead,
    features: &[Vec<f64>],
    targets: &ProbeTargets,
) -> Result<MetricsReport> {
    if features.is_empty() || targets.len() != features.len() {
        return Err(Error::Domain("probe metrics need matching samples".into()));
    }
    let mut correct = 0usize;
    let mut map_score = None;
    match targets {
        ProbeTargets::Single(t) => {
            for (f, &y) in features.iter().zip(t) {
                if argmax_lowest(&head.logits(f))? == y {
                    correct += 1;
                }
            }
        }
        ProbeTargets::Multi(rows) => {
            let scores: Vec<Vec<f64>> = features.iter().map(|f| head.logits(f)).collect();
            for (z, row) in scores.iter().zip(rows) {
                if row[argmax_lowest(z)?] {
                    correct += 1;
                }
            }
            map_score = Some(mean_average_precision(&scores, rows)?);
        }
    }
    let report = MetricsReport {
        emotion_top1: correct as f64 / features.len() as f64,
        brightness_mse: None,
        colorfulness_mse: None,
        scene_acc: None,
        fe_acc: None,
        map_score,
        loss_history: Vec::new(),
    };
    report.validate()?;
    Ok(report)
}

fn softmax_ce_grad(z: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - z[target];
    let mut dz: Vec<f64> = exps.iter().map(|&e| e / sum).collect();
    dz[target] -= 1.0;
    (loss, dz)
}

fn binary_ce_grad(z: &[f64], labels: &[bool]) -> (f64, Vec<f64>) {
    let k = z.len() as f64;
    let mut loss = 0.0;
    let mut dz = Vec::with_capacity(z.len());
    for (&zi, &yi) in z.iter().zip(labels) {
        let y = if yi { 1.0 } else { 0.0 };
        // Stable form of -(y ln p + (1 - y) ln(1 - p)) with p = sigmoid(z).
        loss += zi.max(0.0) - zi * y + (-zi.abs()).exp().ln_1p();
        let p = 1.0 / (1.0 + (-zi).exp());
        dz.push((p - y) / k);
    }
    (loss / k, dz)
}
