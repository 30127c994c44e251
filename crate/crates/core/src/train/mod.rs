//! Joint training loop, evaluation, checkpointing, probes, and ablations.

pub mod ablation;
pub mod checkpoint;
pub mod metrics;
pub mod optimizer;
pub mod probe;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{preprocess_train, AugmentConfig, Dataset};
use crate::error::{Error, Result};
use crate::model::{
    total_objective, uncertainty_s_grads, A4Net, AttributeSet, DropPlan, ObjectiveMode,
    ObjectiveWeights,
};
use crate::tensor::{NodeId, Tape};

pub use ablation::{run_ablation, table_subsets, AblationRow, AblationTable};
pub use checkpoint::{load_checkpoint, save_checkpoint, BinaryElem, Checkpoint, Restored};
pub use metrics::{evaluate, mean_average_precision, metrics_to_toml, MetricsReport};
pub use optimizer::AdamW;
pub use probe::{extract_fused_features, linear_probe, LossKind, ProbeConfig, ProbeTargets};

/// Names used when a loss term turns non-finite, in branch order.
const BRANCH_NAMES: [&str; 4] = ["brightness", "colorfulness", "scene", "facial_expression"];

pub const TRAIN_FLIP_PROB: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub attribute_set: AttributeSet,
    pub objective_mode: ObjectiveMode,
    pub emotion_classes: usize,
}

impl Default for TrainConfig {
    /// Full-scale defaults: batch 80, lr 3e-6, decay 1e-4, 20 epochs.
    fn default() -> TrainConfig {
        TrainConfig {
            batch_size: 80,
            learning_rate: 3e-6,
            weight_decay: 1e-4,
            epochs: 20,
            seed: 0,
            attribute_set: AttributeSet::ALL,
            objective_mode: ObjectiveMode::Fixed,
            emotion_classes: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "weight_decay must be finite and >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.emotion_classes < 2 {
            return Err(Error::Config("emotion_classes must be >= 2".into()));
        }
        Ok(())
    }
}

/// Result of a training run. The model is left at its final state; the
/// checkpoint holds the best validation epoch when a validation split was
/// given, otherwise the final state.
#[derive(Debug)]
pub struct TrainOutcome<E: crate::tensor::Elem> {
    pub checkpoint: Checkpoint<E>,
    /// Mean training loss per epoch.
    pub history: Vec<f64>,
    /// Validation top-1 per epoch; empty without a validation split.
    pub val_top1: Vec<f64>,
    /// Completed-epoch count the checkpoint was captured at.
    pub best_epoch: u64,
}

pub fn train<E: BinaryElem>(
    model: &mut A4Net<E>,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<E>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Domain("training dataset is empty".into()));
    }
    if cfg.emotion_classes != model.cfg.emotion_classes {
        return Err(Error::Config(format!(
            "training config expects {} emotion classes, model has {}",
            cfg.emotion_classes, model.cfg.emotion_classes
        )));
    }

    let active = cfg.attribute_set;
    let aug = AugmentConfig::new(model.cfg.backbone.input_size, TRAIN_FLIP_PROB, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::for_store(&model.store);
    let mut grads = vec![E::zero(); model.store.len_flat()];
    let s_offsets = model.s_ids.map(|id| model.store.entry(id).offset);

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut val_top1 = Vec::new();
    let mut best: Option<(f64, Checkpoint<E>, u64)> = None;

    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs as u64 {
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in indices.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let mut ve_nodes = Vec::with_capacity(batch.len());
            let mut branch_nodes: [Vec<NodeId>; 4] = Default::default();
            for &idx in batch {
                let image = train_set.image(idx)?;
                // Fixed draw order per sample: three augmentation draws, then
                // the drop-path coins when stochastic depth is enabled.
                let x = preprocess_train::<E>(&image, &aug, &mut rng)?;
                let plan = (model.cfg.backbone.drop_path_rate > 0.0)
                    .then(|| DropPlan::sample(&model.cfg.backbone, &mut rng));
                let graph = model.forward_sample(&mut tape, &x, active, plan.as_ref())?;
                let record = &train_set.records[idx];
                let losses = model.sample_losses(&mut tape, &graph, &record.targets())?;
                ve_nodes.push(losses.ve);
                for (k, node) in [losses.b, losses.c, losses.s, losses.fe]
                    .into_iter()
                    .enumerate()
                {
                    if let Some(n) = node {
                        branch_nodes[k].push(n);
                    }
                }
            }

            let nb = ve_nodes.len() as f64;
            let s_vals = model.s_values();
            let weights = match cfg.objective_mode {
                ObjectiveMode::Fixed => ObjectiveWeights::fixed([1.0; 4]),
                ObjectiveMode::Uncertainty => ObjectiveWeights::uncertainty(s_vals),
            };
            let ve_mean =
                ve_nodes.iter().map(|&n| tape.scalar_value(n).to_f64()).sum::<f64>() / nb;
            check_finite(ve_mean, "emotion")?;
            let mut terms: Vec<(NodeId, f64)> =
                ve_nodes.iter().map(|&n| (n, 1.0 / nb)).collect();
            let mut branch_means: [Option<f64>; 4] = [None; 4];
            for k in 0..4 {
                let nodes = &branch_nodes[k];
                if nodes.is_empty() {
                    continue;
                }
                let mean = nodes.iter().map(|&n| tape.scalar_value(n).to_f64()).sum::<f64>()
                    / nodes.len() as f64;
                check_finite(mean, BRANCH_NAMES[k])?;
                branch_means[k] = Some(mean);
                let coeff = weights.branch_weight(k) / nodes.len() as f64;
                terms.extend(nodes.iter().map(|&n| (n, coeff)));
            }
            let batch_loss = total_objective(ve_mean, &branch_means, &weights)?;
            check_finite(batch_loss, "total")?;

            let total = tape.combine(&terms)?;
            tape.backward_scalar(total)?;
            grads.fill(E::zero());
            tape.param_grads_into(&model.store, &mut grads);
            if cfg.objective_mode == ObjectiveMode::Uncertainty {
                let sg = uncertainty_s_grads(&branch_means, &s_vals);
                for (k, &offset) in s_offsets.iter().enumerate() {
                    grads[offset] += E::from_f64(sg[k]);
                }
            }
            opt.step(&mut model.store, &grads, cfg.learning_rate, cfg.weight_decay)?;
            loss_sum += batch_loss * nb;
        }
        history.push(loss_sum / train_set.len() as f64);

        if let Some(vs) = val_set {
            let report = evaluate(model, vs, active)?;
            val_top1.push(report.emotion_top1);
            let improved = best
                .as_ref()
                .map(|(top1, _, _)| report.emotion_top1 > *top1)
                .unwrap_or(true);
            if improved {
                let ckpt = Checkpoint::capture(model, cfg, &opt, epoch, &rng);
                best = Some((report.emotion_top1, ckpt, epoch));
            }
        }
    }

    let (checkpoint, best_epoch) = match best {
        Some((_, ckpt, epoch)) => (ckpt, epoch),
        None => (
            Checkpoint::capture(model, cfg, &opt, cfg.epochs as u64, &rng),
            cfg.epochs as u64,
        ),
    };
    Ok(TrainOutcome {
        checkpoint,
        history,
        val_top1,
        best_epoch,
    })
}

fn check_finite(value: f64, term: &str) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::NonFinite {
            term: term.into(),
            context: "training batch loss".into(),
        });
    }
    Ok(())
}


#[cfg(test)]
mod tests {
    use super::test_support::{synth_dataset, tiny_model_cfg};
    use super::*;
    use crate::model::ModelConfig;

    fn tiny_train_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            learning_rate: 2e-3,
            weight_decay: 1e-4,
            epochs: 1,
            seed: 9,
            attribute_set: AttributeSet::ALL,
            objective_mode: ObjectiveMode::Fixed,
            emotion_classes: 4,
        }
    }

    #[test]
    fn config_round_trip_and_defaults() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.batch_size, 80);
        assert_eq!(cfg.learning_rate, 3e-6);
        assert_eq!(cfg.weight_decay, 1e-4);
        assert_eq!(cfg.epochs, 20);
        let text = toml::to_string(&cfg).unwrap();
        assert!(text.contains("attribute_set = \"B+C+S+F\""));
        let back: TrainConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: TrainConfig = toml::from_str("epochs = 3").unwrap();
        assert_eq!(partial.epochs, 3);
        assert_eq!(partial.batch_size, 80);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = TrainConfig::default();
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
        cfg = TrainConfig::default();
        cfg.learning_rate = -1.0;
        assert!(cfg.validate().is_err());
        cfg = TrainConfig::default();
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn class_count_mismatch_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let data = synth_dataset(8, 1, dir.path()).unwrap();
        let mut model: A4Net<f32> = A4Net::new(tiny_model_cfg(), 1).unwrap();
        let mut cfg = tiny_train_cfg();
        cfg.emotion_classes = 6;
        assert!(matches!(
            train(&mut model, &data, None, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_learning_rate_keeps_parameters_and_records_history() {
        let dir = tempfile::tempdir().unwrap();
        let data = synth_dataset(8, 2, dir.path()).unwrap();
        let mut model: A4Net<f32> = A4Net::new(tiny_model_cfg(), 2).unwrap();
        let before = model.store.data().to_vec();
        let mut cfg = tiny_train_cfg();
        cfg.learning_rate = 0.0;
        let out = train(&mut model, &data, None, &cfg).unwrap();
        assert_eq!(model.store.data(), &before[..]);
        assert_eq!(out.history.len(), 1);
        assert!(out.history[0].is_finite());
        assert_eq!(out.best_epoch, 1);
    }

    #[test]
    fn disabled_branches_receive_no_updates() {
        let dir = tempfile::tempdir().unwrap();
        let data = synth_dataset(8, 3, dir.path()).unwrap();
        let mut model: A4Net<f32> = A4Net::new(tiny_model_cfg(), 3).unwrap();
        let branch_ids = model.branch_param_ids();
        let before = model.store.data().to_vec();
        let mut cfg = tiny_train_cfg();
        cfg.attribute_set = AttributeSet::NONE;
        cfg.weight_decay = 0.0;
        train(&mut model, &data, None, &cfg).unwrap();
        // Untouched parameters stay bit-identical: zero gradient and zero
        // decay leave the optimizer update at exactly zero.
        let mut moved = 0usize;
        for ids in &branch_ids {
            for &id in ids {
                let e = model.store.entry(id);
                for i in e.offset..e.offset + e.len {
                    assert_eq!(model.store.data()[i], before[i], "{} moved", e.name);
                }
            }
        }
        for (a, b) in model.store.data().iter().zip(&before) {
            if a != b {
                moved += 1;
            }
        }
        assert!(moved > 0, "backbone parameters should still update");
    }

    #[test]
    fn seeded_runs_have_identical_histories() {
        let dir = tempfile::tempdir().unwrap();
        let data = synth_dataset(10, 4, dir.path()).unwrap();
        let run = || {
            let mut model: A4Net<f32> = A4Net::new(tiny_model_cfg(), 4).unwrap();
            let mut cfg = tiny_train_cfg();
            cfg.epochs = 2;
            train(&mut model, &data, None, &cfg).unwrap().history
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn training_reduces_loss_on_a_small_set() {
        let dir = tempfile::tempdir().unwrap();
        let data = synth_dataset(24, 5, dir.path()).unwrap();
        let mut model: A4Net<f32> = A4Net::new(tiny_model_cfg(), 5).unwrap();
        let mut cfg = tiny_train_cfg();
        cfg.epochs = 5;
        cfg.batch_size = 6;
        let out = train(&mut model, &data, None, &cfg).unwrap();
        assert!(
            out.history[4] < out.history[0],
            "loss should drop: {:?}",
            out.history
        );
    }

    #[test]
    fn uncertainty_mode_moves_the_log_variances() {
        let dir = tempfile::tempdir().unwrap();
        let data = synth_dataset(8, 6, dir.path()).unwrap();
        let mut model: A4Net<f32> = A4Net::new(tiny_model_cfg(), 6).unwrap();
        assert_eq!(model.s_values(), [0.0; 4]);
        let mut cfg = tiny_train_cfg();
        cfg.objective_mode = ObjectiveMode::Uncertainty;
        train(&mut model, &data, None, &cfg).unwrap();
        for s in model.s_values() {
            assert!(s != 0.0 && s.is_finite());
        }
    }

    #[test]
    fn non_finite_loss_aborts_with_term_name() {
        let dir = tempfile::tempdir().unwrap();
        let data = synth_dataset(4, 7, dir.path()).unwrap();
        let mut model: A4Net<f32> = A4Net::new(tiny_model_cfg(), 7).unwrap();
        let id = model.store.id("fusion.classifier.weight").unwrap();
        let e = model.store.entry(id);
        let (offset, len) = (e.offset, e.len);
        model.store.data_mut()[offset..offset + len].fill(f32::NAN);
        let err = train(&mut model, &data, None, &tiny_train_cfg()).unwrap_err();
        match err {
            Error::NonFinite { term, .. } => assert_eq!(term, "emotion"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn validation_split_tracks_the_best_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let data = synth_dataset(20, 8, dir.path()).unwrap();
        let (train_set, val_set) = data.split_tail(8).unwrap();
        let mut model: A4Net<f32> = A4Net::new(tiny_model_cfg(), 8).unwrap();
        let mut cfg = tiny_train_cfg();
        cfg.epochs = 2;
        cfg.batch_size = 6;
        let out = train(&mut model, &train_set, Some(&val_set), &cfg).unwrap();
        assert_eq!(out.val_top1.len(), 2);
        assert!(out.best_epoch >= 1 && out.best_epoch <= 2);
        assert_eq!(out.checkpoint.epoch, out.best_epoch);
        // Ties keep the earlier epoch.
        if (out.val_top1[0] - out.val_top1[1]).abs() < f64::EPSILON {
            assert_eq!(out.best_epoch, 1);
        }
    }

    #[test]
    fn evaluate_matches_a_hand_walk_and_is_pure() {
        let dir = tempfile::tempdir().unwrap();
        let data = synth_dataset(10, 9, dir.path()).unwrap();
        let model: A4Net<f32> = A4Net::new(tiny_model_cfg(), 9).unwrap();
        let report = evaluate(&model, &data, AttributeSet::ALL).unwrap();
        let again = evaluate(&model, &data, AttributeSet::ALL).unwrap();
        assert_eq!(report, again);

        // Independent walk over the same public API.
        let mut correct = 0usize;
        let mut b_sum = 0.0;
        for i in 0..data.len() {
            let img = data.image(i).unwrap();
            let x = crate::data::preprocess_eval::<f32>(&img, 64).unwrap();
            let out = model.forward_eval(&x, AttributeSet::ALL).unwrap();
            let pred = crate::model::argmax_lowest(&out.logits).unwrap();
            if pred == data.records[i].emotion {
                correct += 1;
            }
            let d = out.brightness.unwrap() - data.records[i].brightness.unwrap();
            b_sum += d * d;
        }
        assert_eq!(report.emotion_top1, correct as f64 / 10.0);
        assert!((report.brightness_mse.unwrap() - b_sum / 10.0).abs() < 1e-12);
        assert!(report.scene_acc.is_some() && report.fe_acc.is_some());
    }

    #[test]
    fn evaluate_reports_absent_metrics_without_labels() {
        let dir = tempfile::tempdir().unwrap();
        let mut data = synth_dataset(6, 10, dir.path()).unwrap();
        for r in &mut data.records {
            r.scene = None;
            r.brightness = None;
        }
        let model: A4Net<f32> = A4Net::new(tiny_model_cfg(), 10).unwrap();
        let report = evaluate(&model, &data, AttributeSet::ALL).unwrap();
        assert_eq!(report.scene_acc, None);
        assert_eq!(report.brightness_mse, None);
        assert!(report.colorfulness_mse.is_some());
        let empty = Dataset {
            records: Vec::new(),
            base_dir: data.base_dir.clone(),
        };
        assert!(matches!(
            evaluate(&model, &empty, AttributeSet::ALL),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn checkpoint_restore_resumes_bit_identically() {
        let dir = tempfile::tempdir().unwrap();
        let data = synth_dataset(8, 11, dir.path()).unwrap();
        let cfg = tiny_train_cfg();
        let mut model: A4Net<f32> = A4Net::new(tiny_model_cfg(), 11).unwrap();
        let out = train(&mut model, &data, None, &cfg).unwrap();
        let restored = out.checkpoint.restore().unwrap();
        assert_eq!(restored.model.store.data(), model.store.data());
        let a = evaluate(&restored.model, &data, cfg.attribute_set).unwrap();
        let b = evaluate(&model, &data, cfg.attribute_set).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn full_model_config_snapshot_survives_checkpointing() {
        let dir = tempfile::tempdir().unwrap();
        let data = synth_dataset(4, 12, dir.path()).unwrap();
        let mut cfg = tiny_train_cfg();
        cfg.epochs = 1;
        let model_cfg = ModelConfig::mini();
        let mut model: A4Net<f32> = A4Net::new(model_cfg.clone(), 12).unwrap();
        let out = train(&mut model, &data, None, &cfg).unwrap();
        assert_eq!(out.checkpoint.model_cfg, model_cfg);
        assert_eq!(out.checkpoint.train_cfg, cfg);
    }
}
