//! Tab-separated dataset manifests: one sample per line with fields
//! `image_path, emotion, brightness, colorfulness, scene, facial_expression`.
//! Empty fields mark absent labels, `#` lines are comments, and an optional
//! header line is recognized by its non-numeric emotion field.

use std::path::{Path, PathBuf};

use image::RgbImage;

use crate::error::{Error, Result};
use crate::model::fusion::Targets;
use crate::model::ModelConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub image_path: PathBuf,
    pub emotion: usize,
    pub brightness: Option<f64>,
    pub colorfulness: Option<f64>,
    pub scene: Option<usize>,
    pub facial_expression: Option<usize>,
}

impl SampleRecord {
    pub fn targets(&self) -> Targets {
        Targets {
            emotion: self.emotion,
            brightness: self.brightness,
            colorfulness: self.colorfulness,
            scene: self.scene,
            facial_expression: self.facial_expression,
        }
    }
}

/// Valid label ranges used to validate manifests at load time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelRanges {
    pub emotion_classes: usize,
    pub scene_classes: usize,
    pub fe_classes: usize,
}

impl LabelRanges {
    pub fn from_model(cfg: &ModelConfig) -> LabelRanges {
        LabelRanges {
            emotion_classes: cfg.emotion_classes,
            scene_classes: cfg.scene_classes,
            fe_classes: cfg.fe_classes,
        }
    }
}

fn parse_class(
    raw: &str,
    line: usize,
    field: &str,
    classes: usize,
) -> Result<Option<usize>> {
    let t = raw.trim();
    if t.is_empty() {
        return Ok(None);
    }
    let v: usize = t.parse().map_err(|_| Error::Parse {
        line,
        message: format!("{field} {t:?} is not a class index"),
    })?;
    if v >= classes {
        return Err(Error::Validation {
            line,
            field: field.to_string(),
            message: format!("index {v} out of range for {classes} classes"),
        });
    }
    Ok(Some(v))
}

fn parse_unit_real(raw: &str, line: usize, field: &str) -> Result<Option<f64>> {
    let t = raw.trim();
    if t.is_empty() {
        return Ok(None);
    }
    let v: f64 = t.parse().map_err(|_| Error::Parse {
        line,
        message: format!("{field} {t:?} is not a real number"),
    })?;
    if !v.is_finite() || !(0.0..=1.0).contains(&v) {
        return Err(Error::Validation {
            line,
            field: field.to_string(),
            message: format!("value {v} outside [0, 1]"),
        });
    }
    Ok(Some(v))
}

/// Parse manifest text. Line numbers in errors are 1-based.
pub fn parse_manifest(text: &str, ranges: &LabelRanges) -> Result<Vec<SampleRecord>> {
    let mut records = Vec::new();
    let mut first_content = true;
    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw_line.trim_end_matches('\r');
        if content.trim().is_empty() || content.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = content.split('\t').collect();
        if fields.len() < 2 || fields.len() > 6 {
            return Err(Error::Parse {
                line,
                message: format!(
                    "expected 2 to 6 tab-separated fields, found {}",
                    fields.len()
                ),
            });
        }
        if first_content {
            first_content = false;
            // header row: emotion column is not numeric
            if fields[1].trim().parse::<usize>().is_err() {
                continue;
            }
        }
        let get = |idx: usize| fields.get(idx).copied().unwrap_or("");
        let path_text = fields[0].trim();
        if path_text.is_empty() {
            return Err(Error::Parse {
                line,
                message: "image_path is empty".into(),
            });
        }
        let emotion = parse_class(get(1), line, "emotion", ranges.emotion_classes)?
            .ok_or_else(|| Error::Parse {
                line,
                message: "emotion field is required".into(),
            })?;
        records.push(SampleRecord {
            image_path: PathBuf::from(path_text),
            emotion,
            brightness: parse_unit_real(get(2), line, "brightness")?,
            colorfulness: parse_unit_real(get(3), line, "colorfulness")?,
            scene: parse_class(get(4), line, "scene", ranges.scene_classes)?,
            facial_expression: parse_class(get(5), line, "facial_expression", ranges.fe_classes)?,
        });
    }
    Ok(records)
}

pub fn load_manifest(path: &Path, ranges: &LabelRanges) -> Result<Vec<SampleRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_manifest(&text, ranges)
}

/// Render records in manifest format. Floats use the shortest decimal that
/// round-trips, so writing and reloading reproduces values exactly.
pub fn manifest_to_string(records: &[SampleRecord]) -> String {
    let mut out = String::from("image_path\temotion\tbrightness\tcolorfulness\tscene\tfacial_expression\n");
    for r in records {
        let opt_f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let opt_u = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.image_path.display(),
            r.emotion,
            opt_f(r.brightness),
            opt_f(r.colorfulness),
            opt_u(r.scene),
            opt_u(r.facial_expression),
        ));
    }
    out
}

pub fn write_manifest(path: &Path, records: &[SampleRecord]) -> Result<()> {
    std::fs::write(path, manifest_to_string(records))?;
    Ok(())
}

/// Load one record's image, resolving relative paths against `base_dir`.
pub fn load_image(base_dir: &Path, record_path: &Path) -> Result<RgbImage> {
    let full = if record_path.is_absolute() {
        record_path.to_path_buf()
    } else {
        base_dir.join(record_path)
    };
    let img = image::open(&full)
        .map_err(|e| Error::Image(format!("{}: {e}", full.display())))?;
    Ok(img.to_rgb8())
}

/// A manifest-backed dataset: records plus the directory image paths are
/// relative to.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<SampleRecord>,
    pub base_dir: PathBuf,
}

impl Dataset {
    pub fn from_manifest(path: &Path, ranges: &LabelRanges) -> Result<Dataset> {
        let records = load_manifest(path, ranges)?;
        let base_dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        Ok(Dataset { records, base_dir })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn image(&self, i: usize) -> Result<RgbImage> {
        load_image(&self.base_dir, &self.records[i].image_path)
    }

    /// Split off the last `held_out` records as a validation set.
    pub fn split_tail(mut self, held_out: usize) -> Result<(Dataset, Dataset)> {
        if held_out >= self.records.len() {
            return Err(Error::Config(format!(
                "cannot hold out {held_out} of {} samples",
                self.records.len()
            )));
        }
        let tail = self.records.split_off(self.records.len() - held_out);
        let val = Dataset {
            records: tail,
            base_dir: self.base_dir.clone(),
        };
        Ok((self, val))
    }
}
