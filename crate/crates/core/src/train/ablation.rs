//! Attribute-subset ablation harness: one train+evaluate per subset under an
//! identical seed and data order, emitted as an aligned table and as TSV.

use std::fmt;

use super::checkpoint::BinaryElem;
use super::metrics::{evaluate, MetricsReport};
use super::{train, TrainConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{A4Net, AttributeSet, ModelConfig};

/// The standard eight rows, from single attributes up to the full set.
pub fn table_subsets() -> Vec<AttributeSet> {
    ["B", "C", "S", "F", "S+F", "B+S+F", "C+S+F", "B+C+S+F"]
        .iter()
        .map(|s| AttributeSet::parse(s).expect("fixed subset"))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub attributes: AttributeSet,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

pub fn run_ablation<E: BinaryElem>(
    model_cfg: &ModelConfig,
    base_cfg: &TrainConfig,
    subsets: &[AttributeSet],
    train_set: &Dataset,
    eval_set: &Dataset,
) -> Result<AblationTable> {
    if subsets.is_empty() {
        return Err(Error::Config("ablation needs at least one subset".into()));
    }
    let mut rows = Vec::with_capacity(subsets.len());
    for &subset in subsets {
        let mut model: A4Net<E> = A4Net::new(model_cfg.clone(), base_cfg.seed)?;
        let mut cfg = base_cfg.clone();
        cfg.attribute_set = subset;
        let outcome = train(&mut model, train_set, None, &cfg)?;
        let mut metrics = evaluate(&model, eval_set, subset)?;
        metrics.loss_history = outcome.history;
        rows.push(AblationRow {
            attributes: subset,
            metrics,
        });
    }
    Ok(AblationTable { rows })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{:.2}", 100.0 * v))
}

fn mse(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.3}"))
}

impl AblationRow {
    fn cells(&self) -> [String; 6] {
        [
            self.attributes.to_string(),
            pct(Some(self.metrics.emotion_top1)),
            mse(self.metrics.brightness_mse),
            mse(self.metrics.colorfulness_mse),
            pct(self.metrics.scene_acc),
            pct(self.metrics.fe_acc),
        ]
    }
}

const HEADER: [&str; 6] = ["Attributes", "Emotion (%)", "B(MSE)", "C(MSE)", "S", "F"];

impl AblationTable {
    /// Machine-readable form: one tab-separated line per row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("attributes\temotion_pct\tb_mse\tc_mse\ts_acc\tf_acc\n");
        for row in &self.rows {
            out.push_str(&row.cells().join("\t"));
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut widths: Vec<usize> = HEADER.iter().map(|h| h.len()).collect();
        let rows: Vec<[String; 6]> = self.rows.iter().map(AblationRow::cells).collect();
        for row in &rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let line = |f: &mut fmt::Formatter<'_>, cells: &[String]| {
            let joined = cells
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ");
            writeln!(f, "{}", joined.trim_end())
        };
        line(f, &HEADER.map(String::from))?;
        for row in &rows {
            line(f, row)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ObjectiveMode;
    use crate::train::test_support::{synth_dataset, tiny_model_cfg};

    fn fake_report(set: AttributeSet) -> MetricsReport {
        MetricsReport {
            emotion_top1: 0.8,
            brightness_mse: set.b.then_some(0.012),
            colorfulness_mse: set.c.then_some(0.034),
            scene_acc: set.s.then_some(0.65),
            fe_acc: set.f.then_some(0.82),
            map_score: None,
            loss_history: Vec::new(),
        }
    }

    fn fake_table() -> AblationTable {
        AblationTable {
            rows: table_subsets()
                .into_iter()
                .map(|s| AblationRow {
                    attributes: s,
                    metrics: fake_report(s),
                })
                .collect(),
        }
    }

    #[test]
    fn standard_subsets_are_in_table_order() {
        let names: Vec<String> = table_subsets().iter().map(|s| s.to_string()).collect();
        assert_eq!(
            names,
            ["B", "C", "S", "F", "S+F", "B+S+F", "C+S+F", "B+C+S+F"]
        );
    }

    #[test]
    fn absent_cells_sit_exactly_where_branches_are_disabled() {
        let tsv = fake_table().to_tsv();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines.len(), 9);
        assert_eq!(lines[0], "attributes\temotion_pct\tb_mse\tc_mse\ts_acc\tf_acc");
        let grid: Vec<Vec<&str>> = lines[1..].iter().map(|l| l.split('\t').collect()).collect();
        for (row, subset) in grid.iter().zip(table_subsets()) {
            assert_eq!(row.len(), 6);
            assert_eq!(row[0], subset.to_string());
            assert_ne!(row[1], "-", "emotion is always scored");
            assert_eq!(row[2] == "-", !subset.b, "row {}", row[0]);
            assert_eq!(row[3] == "-", !subset.c, "row {}", row[0]);
            assert_eq!(row[4] == "-", !subset.s, "row {}", row[0]);
            assert_eq!(row[5] == "-", !subset.f, "row {}", row[0]);
        }
        // Spot-check the full-set and single-attribute extremes.
        assert_eq!(grid[0][2..], ["0.012", "-", "-", "-"]);
        assert_eq!(grid[7][2..], ["0.012", "0.034", "65.00", "82.00"]);
    }

    #[test]
    fn display_aligns_columns() {
        let text = fake_table().to_string();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 9);
        assert!(lines[0].starts_with("Attributes"));
        assert!(lines[0].contains("Emotion (%)"));
        assert!(lines[8].starts_with("B+C+S+F"));
    }

    #[test]
    fn empty_subset_list_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let data = synth_dataset(4, 61, dir.path()).unwrap();
        let err = run_ablation::<f32>(
            &tiny_model_cfg(),
            &TrainConfig::default(),
            &[],
            &data,
            &data,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn single_subset_trains_and_masks_other_columns() {
        let dir = tempfile::tempdir().unwrap();
        let data = synth_dataset(10, 62, dir.path()).unwrap();
        let (train_set, eval_set) = data.split_tail(4).unwrap();
        let cfg = TrainConfig {
            batch_size: 6,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            epochs: 1,
            seed: 62,
            attribute_set: AttributeSet::ALL,
            objective_mode: ObjectiveMode::Fixed,
            emotion_classes: 4,
        };
        let subset = AttributeSet::parse("F").unwrap();
        let table = run_ablation::<f32>(
            &tiny_model_cfg(),
            &cfg,
            &[subset],
            &train_set,
            &eval_set,
        )
        .unwrap();
        assert_eq!(table.rows.len(), 1);
        let m = &table.rows[0].metrics;
        assert!(m.fe_acc.is_some());
        assert!(m.brightness_mse.is_none());
        assert!(m.colorfulness_mse.is_none());
        assert!(m.scene_acc.is_none());
        assert!(!m.loss_history.is_empty());
        let tsv = table.to_tsv();
        let cells: Vec<&str> = tsv.lines().nth(1).unwrap().split('\t').collect();
        assert_eq!(cells[0], "F");
        assert_eq!(&cells[2..5], ["-", "-", "-"]);
        assert_ne!(cells[5], "-");
    }
}
