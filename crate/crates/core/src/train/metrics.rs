//! Evaluation metrics: top-1 accuracy, masked branch metrics, and mAP.

use serde::{Deserialize, Serialize};

use crate::data::{preprocess_eval, Dataset};
use crate::error::{Error, Result};
use crate::model::{argmax_lowest, A4Net, AttributeSet};
use crate::tensor::Elem;

/// Published results on the public datasets; emitted as informational
/// metadata alongside every report, never asserted.
pub const REFERENCE_RESULTS: [(&str, f64); 4] = [
    ("emoset_top1", 85.0),
    ("emotic_map", 32.77),
    ("unbiasemo_top1", 82.4),
    ("se30k8_top1", 64.69),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub emotion_top1: f64,
    pub brightness_mse: Option<f64>,
    pub colorfulness_mse: Option<f64>,
    pub scene_acc: Option<f64>,
    pub fe_acc: Option<f64>,
    pub map_score: Option<f64>,
    pub loss_history: Vec<f64>,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        let frac = |name: &str, v: f64| {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("{name} {v} outside [0, 1]")));
            }
            Ok(())
        };
        frac("emotion_top1", self.emotion_top1)?;
        for (name, v) in [("scene_acc", self.scene_acc), ("fe_acc", self.fe_acc)] {
            if let Some(v) = v {
                frac(name, v)?;
            }
        }
        if let Some(v) = self.map_score {
            frac("map_score", v)?;
        }
        for (name, v) in [
            ("brightness_mse", self.brightness_mse),
            ("colorfulness_mse", self.colorfulness_mse),
        ] {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::Domain(format!("{name} {v} must be >= 0")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Default)]
struct Averager {
    sum: f64,
    count: usize,
}

impl Averager {
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

/// Eval-mode pass over a dataset. Branch metrics cover only samples that have
/// the matching label; a branch with no labeled samples (or one that is
/// disabled) is reported as absent rather than zero.
pub fn evaluate<E: Elem>(
    model: &A4Net<E>,
    dataset: &Dataset,
    active: AttributeSet,
) -> Result<MetricsReport> {
    if dataset.is_empty() {
        return Err(Error::Domain("evaluation dataset is empty".into()));
    }
    let mut correct = 0usize;
    let mut b_mse = Averager::default();
    let mut c_mse = Averager::default();
    let mut s_acc = Averager::default();
    let mut f_acc = Averager::default();
    for i in 0..dataset.len() {
        let image = dataset.image(i)?;
        let x = preprocess_eval::<E>(&image, model.cfg.backbone.input_size)?;
        let out = model.forward_eval(&x, active)?;
        let record = &dataset.records[i];
        if argmax_lowest(&out.logits)? == record.emotion {
            correct += 1;
        }
        if let (Some(p), Some(t)) = (out.brightness, record.brightness) {
            b_mse.push((p - t) * (p - t));
        }
        if let (Some(p), Some(t)) = (out.colorfulness, record.colorfulness) {
            c_mse.push((p - t) * (p - t));
        }
        if let (Some(logits), Some(t)) = (&out.scene_logits, record.scene) {
            s_acc.push(if argmax_lowest(logits)? == t { 1.0 } else { 0.0 });
        }
        if let (Some(logits), Some(t)) = (&out.fe_logits, record.facial_expression) {
            f_acc.push(if argmax_lowest(logits)? == t { 1.0 } else { 0.0 });
        }
    }
    let report = MetricsReport {
        emotion_top1: correct as f64 / dataset.len() as f64,
        brightness_mse: b_mse.mean(),
        colorfulness_mse: c_mse.mean(),
        scene_acc: s_acc.mean(),
        fe_acc: f_acc.mean(),
        map_score: None,
        loss_history: Vec::new(),
    };
    report.validate()?;
    Ok(report)
}

/// Mean average precision over classes. Per class, samples are ranked by
/// descending score with ties kept in sample order; AP averages the precision
/// at each positive rank. Classes without positives are excluded from the
/// mean.
pub fn mean_average_precision(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<f64> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::shape(
            "mean_average_precision",
            "matching nonempty score/label rows",
            format!("{} scores, {} labels", scores.len(), labels.len()),
        ));
    }
    let classes = scores[0].len();
    if classes == 0 {
        return Err(Error::Domain("mean_average_precision needs >= 1 class".into()));
    }
    for (i, (s, l)) in scores.iter().zip(labels).enumerate() {
        if s.len() != classes || l.len() != classes {
            return Err(Error::shape(
                "mean_average_precision",
                format!("{classes} per row"),
                format!("row {i}: {} scores, {} labels", s.len(), l.len()),
            ));
        }
        if let Some(bad) = s.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite score {bad} in row {i}")));
        }
    }
    let mut sum = 0.0;
    let mut included = 0usize;
    for k in 0..classes {
        let positives = labels.iter().filter(|row| row[k]).count();
        if positives == 0 {
            continue;
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b][k].partial_cmp(&scores[a][k]).unwrap());
        let mut hits = 0usize;
        let mut ap = 0.0;
        for (rank0, &idx) in order.iter().enumerate() {
            if labels[idx][k] {
                hits += 1;
                ap += hits as f64 / (rank0 + 1) as f64;
            }
        }
        sum += ap / positives as f64;
        included += 1;
    }
    if included == 0 {
        return Err(Error::Domain(
            "every class has zero positive labels".into(),
        ));
    }
    Ok(sum / included as f64)
}

/// Canonical text form of a report: a [metrics] table with stable key order
/// followed by the informational [reference] table.
pub fn metrics_to_toml(report: &MetricsReport) -> Result<String> {
    #[derive(Serialize)]
    struct Doc<'a> {
        metrics: &'a MetricsReport,
    }
    let mut out = toml::to_string(&Doc { metrics: report }).map_err(|e| {
        Error::Format(format!("metrics serialization failed: {e}"))
    })?;
    out.push_str("\n# reference results on the public datasets; informational only\n[reference]\n");
    for (key, value) in REFERENCE_RESULTS {
        out.push_str(&format!("{key} = {value}\n"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_ranking_scores_one() {
        let scores = vec![vec![0.9, 0.1], vec![0.8, 0.9], vec![0.1, 0.5]];
        let labels = vec![vec![true, false], vec![true, true], vec![false, false]];
        assert_eq!(mean_average_precision(&scores, &labels).unwrap(), 1.0);
    }

    #[test]
    fn interleaved_ranking_matches_hand_value() {
        let scores = vec![vec![0.9], vec![0.8], vec![0.7]];
        let labels = vec![vec![true], vec![false], vec![true]];
        let ap = mean_average_precision(&scores, &labels).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn two_sample_trivial_case() {
        let scores = vec![vec![0.9], vec![0.1]];
        let labels = vec![vec![true], vec![false]];
        assert_eq!(mean_average_precision(&scores, &labels).unwrap(), 1.0);
    }

    #[test]
    fn ties_keep_sample_order() {
        // Equal scores: the positive sits second, so precision there is 1/2.
        let scores = vec![vec![0.5], vec![0.5]];
        let labels = vec![vec![false], vec![true]];
        let ap = mean_average_precision(&scores, &labels).unwrap();
        assert!((ap - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_classes_are_excluded_not_zeroed() {
        let scores = vec![vec![0.9, 0.4], vec![0.1, 0.6]];
        let labels = vec![vec![true, false], vec![false, false]];
        assert_eq!(mean_average_precision(&scores, &labels).unwrap(), 1.0);
        let none = vec![vec![false, false], vec![false, false]];
        assert!(matches!(
            mean_average_precision(&scores, &none),
            Err(Error::Domain(_))
        ));
    }

    /// Independent oracle: walk every prefix of the ranked list, recomputing
    /// precision from scratch at each positive.
    fn brute_force_map(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Option<f64> {
        let classes = scores[0].len();
        let mut aps = Vec::new();
        for k in 0..classes {
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.sort_by(|&a, &b| scores[b][k].partial_cmp(&scores[a][k]).unwrap());
            let npos = labels.iter().filter(|r| r[k]).count();
            if npos == 0 {
                continue;
            }
            let mut total = 0.0;
            for end in 1..=order.len() {
                let prefix = &order[..end];
                if labels[prefix[end - 1]][k] {
                    let hits = prefix.iter().filter(|&&i| labels[i][k]).count();
                    total += hits as f64 / end as f64;
                }
            }
            aps.push(total / npos as f64);
        }
        if aps.is_empty() {
            None
        } else {
            Some(aps.iter().sum::<f64>() / aps.len() as f64)
        }
    }

    #[test]
    fn brute_force_agreement_on_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=8);
            let k = rng.gen_range(1..=3);
            // A coarse score grid forces plenty of ties.
            let scores: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..k).map(|_| rng.gen_range(0..5) as f64 / 4.0).collect())
                .collect();
            let labels: Vec<Vec<bool>> = (0..n)
                .map(|_| (0..k).map(|_| rng.gen_bool(0.4)).collect())
                .collect();
            match brute_force_map(&scores, &labels) {
                Some(expected) => {
                    let got = mean_average_precision(&scores, &labels).unwrap();
                    assert!((got - expected).abs() < 1e-12);
                }
                None => assert!(mean_average_precision(&scores, &labels).is_err()),
            }
        }
    }

    #[test]
    fn report_validation_catches_out_of_range() {
        let mut report = MetricsReport {
            emotion_top1: 0.5,
            brightness_mse: Some(0.01),
            colorfulness_mse: None,
            scene_acc: Some(1.0),
            fe_acc: None,
            map_score: None,
            loss_history: vec![1.0, 0.5],
        };
        report.validate().unwrap();
        report.emotion_top1 = 1.5;
        assert!(report.validate().is_err());
        report.emotion_top1 = 0.5;
        report.brightness_mse = Some(-0.1);
        assert!(report.validate().is_err());
    }

    #[test]
    fn toml_export_is_stable_and_carries_references() {
        let report = MetricsReport {
            emotion_top1: 0.75,
            brightness_mse: Some(0.004),
            colorfulness_mse: None,
            scene_acc: Some(0.9),
            fe_acc: Some(0.8),
            map_score: None,
            loss_history: vec![1.25, 0.75],
        };
        let text = metrics_to_toml(&report).unwrap();
        let keys: Vec<&str> = text
            .lines()
            .filter_map(|l| l.split_once(" = ").map(|(k, _)| k))
            .collect();
        assert_eq!(
            keys,
            [
                "emotion_top1",
                "brightness_mse",
                "scene_acc",
                "fe_acc",
                "loss_history",
                "emoset_top1",
                "emotic_map",
                "unbiasemo_top1",
                "se30k8_top1"
            ]
        );
        let parsed: toml::Value = text.parse().unwrap();
        assert_eq!(
            parsed["metrics"]["emotion_top1"].as_float(),
            Some(0.75)
        );
        assert_eq!(parsed["reference"]["emotic_map"].as_float(), Some(32.77));
        assert!(parsed["metrics"].get("colorfulness_mse").is_none());
    }
}
