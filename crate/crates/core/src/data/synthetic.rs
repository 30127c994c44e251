//! Procedural verification dataset. The four attribute axes occupy
//! different image statistics so each stays readable on its own:
//! brightness is the background value band, colorfulness the absolute
//! chroma band, and every scene pattern and face glyph owns a reserved hue
//! band on top of its geometry. Patterns modulate background value (one of
//! eight layouts, or none for the unknown-scene class); glyphs are tinted
//! discs with distinct strokes in a random quadrant (or none for the
//! no-face class). The emotion label is a fixed mixed-radix function of
//! the attribute tuple, so the emotion task is solvable from the
//! attributes.

use std::path::Path;

use image::RgbImage;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::attributes::{compute_brightness, compute_colorfulness};
use super::manifest::{write_manifest, SampleRecord};

pub const MAX_SCENE_PATTERNS: usize = 8;
pub const MAX_FACE_GLYPHS: usize = 6;

/// Computed-brightness boundary between the low and high bins.
pub const BRIGHTNESS_THRESHOLD: f64 = 0.55;
/// Computed-colorfulness boundary between the low and high bins.
pub const COLORFULNESS_THRESHOLD: f64 = 0.10;

/// Background value ranges per brightness bin.
const VALUE_LOW: (f64, f64) = (0.32, 0.42);
const VALUE_HIGH: (f64, f64) = (0.66, 0.80);
/// Absolute background chroma ranges per colorfulness bin. Both are far
/// from the bin threshold because a spatially uniform tint contributes
/// mostly through the opponent-mean term of the colorfulness statistic.
const CHROMA_LOW: (f64, f64) = (0.015, 0.03);
const CHROMA_HIGH: (f64, f64) = (0.28, 0.40);

/// Reserved hue bands (degrees), jittered per sample. Scene patterns,
/// face glyphs and the no-pattern background interleave at 20 degree
/// spacing, so every class keeps a distinct hue direction in both chroma
/// bins while brightness (the value channel) is unaffected.
const SCENE_HUES: [f64; MAX_SCENE_PATTERNS] =
    [0.0, 40.0, 80.0, 120.0, 160.0, 200.0, 240.0, 280.0];
const NONE_HUE: f64 = 320.0;
const FACE_HUES: [f64; MAX_FACE_GLYPHS] = [20.0, 60.0, 100.0, 140.0, 180.0, 220.0];
const HUE_JITTER: f64 = 6.0;

/// Per-pattern value perturbation amplitudes. Distinct amplitudes give each
/// scene class a global contrast signature on top of its geometry, so the
/// class is visible to pooled features as well as spatial ones.
const PATTERN_DELTAS: [f64; MAX_SCENE_PATTERNS] =
    [0.10, 0.28, 0.19, 0.24, 0.13, 0.22, 0.16, 0.26];
/// Per-glyph face fill grays and disc radii, same idea: each expression
/// class carries a distinct blob size and mean level as well as distinct
/// stroke geometry.
const FACE_FILLS: [f64; MAX_FACE_GLYPHS] = [0.95, 0.62, 0.78, 0.45, 0.88, 0.53];
const FACE_RADII: [f64; MAX_FACE_GLYPHS] = [0.23, 0.18, 0.13, 0.21, 0.16, 0.11];
const FACE_STROKE: f64 = 0.15;
const FACE_JITTER: f64 = 0.02;
/// Face tint chroma per colorfulness bin: faint on gray images, saturated
/// on colorful ones, so the glyph hue stays visible against either
/// background without dragging a low-bin image over the threshold.
const FACE_CHROMA: (f64, f64) = (0.08, 0.32);

const MAX_RENDER_RETRIES: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_samples: usize,
    pub image_size: usize,
    pub emotion_classes: usize,
    pub scene_classes: usize,
    pub fe_classes: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Desk-scale defaults matching the mini model preset.
    pub fn mini(num_samples: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            num_samples,
            image_size: 64,
            emotion_classes: 4,
            scene_classes: 5,
            fe_classes: 4,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(Error::Config("num_samples must be positive".into()));
        }
        if self.image_size < 16 {
            return Err(Error::Config(format!(
                "image_size must be at least 16 pixels, got {}",
                self.image_size
            )));
        }
        if self.emotion_classes < 2 {
            return Err(Error::Config("emotion_classes must be at least 2".into()));
        }
        if self.scene_classes < 2 || self.scene_classes > MAX_SCENE_PATTERNS + 1 {
            return Err(Error::Config(format!(
                "scene_classes must lie in 2..={} ({} patterns plus the unknown class), got {}",
                MAX_SCENE_PATTERNS + 1,
                MAX_SCENE_PATTERNS,
                self.scene_classes
            )));
        }
        if self.fe_classes < 2 || self.fe_classes > MAX_FACE_GLYPHS + 1 {
            return Err(Error::Config(format!(
                "fe_classes must lie in 2..={} ({} glyphs plus the no-face class), got {}",
                MAX_FACE_GLYPHS + 1,
                MAX_FACE_GLYPHS,
                self.fe_classes
            )));
        }
        let tuples = 4 * self.scene_classes * self.fe_classes;
        if self.emotion_classes > tuples {
            return Err(Error::Config(format!(
                "emotion_classes {} exceeds the {} distinct attribute tuples",
                self.emotion_classes, tuples
            )));
        }
        Ok(())
    }
}

pub fn brightness_bin(brightness: f64) -> usize {
    usize::from(brightness >= BRIGHTNESS_THRESHOLD)
}

pub fn colorfulness_bin(colorfulness: f64) -> usize {
    usize::from(colorfulness >= COLORFULNESS_THRESHOLD)
}

/// The documented label rule: a mixed-radix index over the attribute tuple,
/// face fastest, reduced modulo the emotion-class count.
pub fn emotion_rule(
    spec: &SyntheticSpec,
    b_bin: usize,
    c_bin: usize,
    scene: usize,
    face: usize,
) -> usize {
    let idx = face + spec.fe_classes * (scene + spec.scene_classes * (c_bin + 2 * b_bin));
    idx % spec.emotion_classes
}

/// All attribute tuples (b_bin, c_bin, scene, face) grouped by their emotion
/// label, enumerated in fixed order.
fn emotion_buckets(spec: &SyntheticSpec) -> Vec<Vec<(usize, usize, usize, usize)>> {
    let mut buckets = vec![Vec::new(); spec.emotion_classes];
    for b in 0..2 {
        for c in 0..2 {
            for s in 0..spec.scene_classes {
                for f in 0..spec.fe_classes {
                    buckets[emotion_rule(spec, b, c, s, f)].push((b, c, s, f));
                }
            }
        }
    }
    buckets
}

fn hsv_to_rgb(hue: f64, chroma: f64, value: f64) -> [f64; 3] {
    let h = (hue.rem_euclid(360.0)) / 60.0;
    let x = chroma * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r1, g1, b1) = match h as usize {
        0 => (chroma, x, 0.0),
        1 => (x, chroma, 0.0),
        2 => (0.0, chroma, x),
        3 => (0.0, x, chroma),
        4 => (x, 0.0, chroma),
        _ => (chroma, 0.0, x),
    };
    let m = value - chroma;
    [r1 + m, g1 + m, b1 + m]
}

/// Scene pattern k's value perturbation sign at a pixel: -1, 0, or +1.
fn pattern_sign(pattern: usize, x: usize, y: usize, size: usize) -> i32 {
    let w = (size / 4).max(2);
    let pm = |v: usize| if v % 2 == 0 { 1 } else { -1 };
    match pattern {
        0 => pm(y / w),
        1 => pm(x / w),
        2 => pm(x / w + y / w),
        3 => pm((x + y) / w),
        4 => {
            let c = (size as f64 - 1.0) / 2.0;
            let d = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
            pm((d / w as f64) as usize)
        }
        5 => {
            // dot grid with alternating signs so mean value is preserved
            let cell = 2 * w;
            let (dx, dy) = (x % cell, y % cell);
            let c = cell as f64 / 2.0;
            let d = ((dx as f64 - c).powi(2) + (dy as f64 - c).powi(2)).sqrt();
            if d <= 0.6 * w as f64 {
                pm(x / cell + y / cell)
            } else {
                0
            }
        }
        6 => {
            // double frame: dark outer ring, bright inner ring
            let edge = x.min(y).min(size - 1 - x).min(size - 1 - y);
            if edge < w / 2 {
                -1
            } else if edge < w {
                1
            } else {
                0
            }
        }
        _ => {
            // bright main diagonal, dark anti-diagonal
            if x.abs_diff(y) < w {
                1
            } else if (x + y).abs_diff(size - 1) < w {
                -1
            } else {
                0
            }
        }
    }
}

/// Face glyph gray level at a pixel, or `None` outside the face disc.
/// Glyphs differ in coarse mouth shape and eye style so the classes stay
/// separable after heavy downsampling.
fn face_pixel(glyph: usize, x: f64, y: f64, cx: f64, cy: f64, r: f64) -> Option<f64> {
    let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
    if d > r {
        return None;
    }
    let eye_y = cy - 0.38 * r;
    let eye_r = 0.16 * r;
    let in_disc = |ex: f64, ey: f64, rr: f64| ((x - ex).powi(2) + (y - ey).powi(2)).sqrt() <= rr;
    let eye_dot = |side: f64| in_disc(cx + side * 0.42 * r, eye_y, eye_r);
    let eye_bar = |side: f64| {
        (y - eye_y).abs() <= 0.12 * r && (x - (cx + side * 0.42 * r)).abs() <= 0.22 * r
    };
    let mouth_y = cy + 0.42 * r;
    let mouth_wide = (y - mouth_y).abs() <= 0.12 * r && (x - cx).abs() <= 0.55 * r;
    let mouth_tall = (x - cx).abs() <= 0.12 * r && (y - mouth_y).abs() <= 0.30 * r;
    let mouth_disc = in_disc(cx, mouth_y, 0.30 * r);
    let stroke = match glyph {
        0 => eye_dot(-1.0) || eye_dot(1.0) || mouth_wide,
        1 => eye_dot(-1.0) || eye_dot(1.0) || mouth_disc,
        2 => eye_dot(-1.0) || eye_dot(1.0) || mouth_tall,
        3 => eye_bar(-1.0) || eye_bar(1.0) || mouth_wide,
        4 => eye_bar(-1.0) || eye_dot(1.0) || mouth_disc,
        _ => eye_bar(-1.0) || eye_bar(1.0) || mouth_tall,
    };
    Some(if stroke { FACE_STROKE } else { FACE_FILLS[glyph] })
}

struct RenderPlan {
    hue: f64,
    value: f64,
    chroma: f64,
    face_hue: f64,
    face_chroma: f64,
    pattern: Option<usize>,
    glyph: Option<(usize, usize, f64, f64)>,
}

fn render(plan: &RenderPlan, size: usize) -> RgbImage {
    let s = size as f64;
    let mut img = RgbImage::new(size as u32, size as u32);
    for y in 0..size {
        for x in 0..size {
            let rgb = match plan.glyph.and_then(|(g, _, cx, cy)| {
                face_pixel(g, x as f64, y as f64, cx, cy, FACE_RADII[g] * s)
            }) {
                Some(gray) => hsv_to_rgb(plan.face_hue, plan.face_chroma.min(gray), gray),
                None => {
                    let delta = plan
                        .pattern
                        .map(|p| PATTERN_DELTAS[p] * pattern_sign(p, x, y, size) as f64)
                        .unwrap_or(0.0);
                    let v = (plan.value + delta).clamp(0.02, 0.98);
                    hsv_to_rgb(plan.hue, plan.chroma.min(v), v)
                }
            };
            let px = [
                (rgb[0] * 255.0).round().clamp(0.0, 255.0) as u8,
                (rgb[1] * 255.0).round().clamp(0.0, 255.0) as u8,
                (rgb[2] * 255.0).round().clamp(0.0, 255.0) as u8,
            ];
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    img
}

/// One generated sample before it is written to disk.
pub struct RenderedSample {
    pub image: RgbImage,
    pub emotion: usize,
    pub brightness: f64,
    pub colorfulness: f64,
    pub scene: usize,
    pub facial_expression: usize,
    /// Quadrant (0 tl, 1 tr, 2 bl, 3 br) when a face glyph is present.
    pub face_quadrant: Option<usize>,
}

fn draw_plan(
    spec: &SyntheticSpec,
    tuple: (usize, usize, usize, usize),
    rng: &mut ChaCha8Rng,
) -> RenderPlan {
    let (b, c, s, f) = tuple;
    let size = spec.image_size as f64;
    let (vlo, vhi) = if b == 1 { VALUE_HIGH } else { VALUE_LOW };
    let value = rng.gen_range(vlo..vhi);
    let (clo, chi) = if c == 1 { CHROMA_HIGH } else { CHROMA_LOW };
    let chroma = rng.gen_range(clo..chi);
    let pattern = (s + 1 < spec.scene_classes).then_some(s);
    let hue = pattern.map_or(NONE_HUE, |p| SCENE_HUES[p])
        + rng.gen_range(-HUE_JITTER..HUE_JITTER);
    let glyph = (f + 1 < spec.fe_classes).then(|| {
        let quadrant = rng.gen_range(0..4usize);
        let qx = if quadrant % 2 == 0 { 0.25 } else { 0.75 };
        let qy = if quadrant < 2 { 0.25 } else { 0.75 };
        let cx = qx * size + rng.gen_range(-FACE_JITTER..FACE_JITTER) * size;
        let cy = qy * size + rng.gen_range(-FACE_JITTER..FACE_JITTER) * size;
        (f, quadrant, cx, cy)
    });
    let face_hue = glyph.map_or(0.0, |(g, ..)| {
        FACE_HUES[g] + rng.gen_range(-HUE_JITTER..HUE_JITTER)
    });
    RenderPlan {
        hue,
        value,
        chroma,
        face_hue,
        face_chroma: if c == 1 { FACE_CHROMA.1 } else { FACE_CHROMA.0 },
        pattern,
        glyph,
    }
}

/// Render one sample for the given attribute tuple, retrying until the
/// computed attribute bins match the intended ones.
pub fn render_sample(
    spec: &SyntheticSpec,
    tuple: (usize, usize, usize, usize),
    rng: &mut ChaCha8Rng,
) -> Result<RenderedSample> {
    let (b, c, s, f) = tuple;
    for _ in 0..MAX_RENDER_RETRIES {
        let plan = draw_plan(spec, tuple, rng);
        let image = render(&plan, spec.image_size);
        let brightness = compute_brightness(&image)?;
        let colorfulness = compute_colorfulness(&image)?;
        if brightness_bin(brightness) == b && colorfulness_bin(colorfulness) == c {
            return Ok(RenderedSample {
                image,
                emotion: emotion_rule(spec, b, c, s, f),
                brightness,
                colorfulness,
                scene: s,
                facial_expression: f,
                face_quadrant: plan.glyph.map(|(_, q, _, _)| q),
            });
        }
    }
    Err(Error::Domain(format!(
        "rendering failed to realize attribute bins (b={b}, c={c}) after {MAX_RENDER_RETRIES} attempts"
    )))
}

#[derive(Debug, Clone)]
pub struct SyntheticOutput {
    pub records: Vec<SampleRecord>,
    /// Face quadrant per sample, aligned with `records`.
    pub face_quadrants: Vec<Option<usize>>,
}

/// Generate the dataset under `out_dir`: PNGs in `images/`, plus
/// `manifest.tsv`. Recorded brightness/colorfulness are computed from the
/// final 8-bit image, so reloading and recomputing reproduces them exactly.
/// Emotion classes are balanced by construction (sample i draws from the
/// bucket of class i mod emotion_classes).
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<SyntheticOutput> {
    use rand::SeedableRng;
    spec.validate()?;
    let images_dir = out_dir.join("images");
    std::fs::create_dir_all(&images_dir)?;
    let buckets = emotion_buckets(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records = Vec::with_capacity(spec.num_samples);
    let mut quadrants = Vec::with_capacity(spec.num_samples);
    for i in 0..spec.num_samples {
        let bucket = &buckets[i % spec.emotion_classes];
        let tuple = bucket[rng.gen_range(0..bucket.len())];
        let sample = render_sample(spec, tuple, &mut rng)?;
        let rel = format!("images/{i:05}.png");
        sample
            .image
            .save(images_dir.join(format!("{i:05}.png")))
            .map_err(|e| Error::Image(format!("saving sample {i}: {e}")))?;
        records.push(SampleRecord {
            image_path: rel.into(),
            emotion: sample.emotion,
            brightness: Some(sample.brightness),
            colorfulness: Some(sample.colorfulness),
            scene: Some(sample.scene),
            facial_expression: Some(sample.facial_expression),
        });
        quadrants.push(sample.face_quadrant);
    }
    write_manifest(&out_dir.join("manifest.tsv"), &records)?;
    Ok(SyntheticOutput {
        records,
        face_quadrants: quadrants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::{load_image, load_manifest, LabelRanges};

    fn ranges(spec: &SyntheticSpec) -> LabelRanges {
        LabelRanges {
            emotion_classes: spec.emotion_classes,
            scene_classes: spec.scene_classes,
            fe_classes: spec.fe_classes,
        }
    }

    #[test]
    fn spec_validation() {
        assert!(SyntheticSpec::mini(10, 0).validate().is_ok());
        let mut s = SyntheticSpec::mini(10, 0);
        s.scene_classes = 10;
        assert!(matches!(s.validate(), Err(Error::Config(_))));
        let mut s = SyntheticSpec::mini(10, 0);
        s.fe_classes = 8;
        assert!(s.validate().is_err());
        let mut s = SyntheticSpec::mini(10, 0);
        s.image_size = 8;
        assert!(s.validate().is_err());
        let mut s = SyntheticSpec::mini(0, 0);
        s.num_samples = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn emotion_rule_collapses_to_face_for_mini() {
        let spec = SyntheticSpec::mini(1, 0);
        for b in 0..2 {
            for c in 0..2 {
                for s in 0..spec.scene_classes {
                    for f in 0..spec.fe_classes {
                        assert_eq!(emotion_rule(&spec, b, c, s, f), f);
                    }
                }
            }
        }
    }

    #[test]
    fn buckets_cover_every_class() {
        let mut spec = SyntheticSpec::mini(1, 0);
        spec.emotion_classes = 7;
        spec.scene_classes = 3;
        spec.fe_classes = 5;
        let buckets = emotion_buckets(&spec);
        assert_eq!(buckets.len(), 7);
        assert!(buckets.iter().all(|b| !b.is_empty()));
        let total: usize = buckets.iter().map(Vec::len).sum();
        assert_eq!(total, 4 * 3 * 5);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec::mini(12, 42);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let o1 = generate_synthetic(&spec, d1.path()).unwrap();
        let o2 = generate_synthetic(&spec, d2.path()).unwrap();
        assert_eq!(o1.records, o2.records);
        assert_eq!(o1.face_quadrants, o2.face_quadrants);
        for i in 0..12 {
            let p1 = std::fs::read(d1.path().join(format!("images/{i:05}.png"))).unwrap();
            let p2 = std::fs::read(d2.path().join(format!("images/{i:05}.png"))).unwrap();
            assert_eq!(p1, p2, "png {i} differs");
        }
        let m1 = std::fs::read(d1.path().join("manifest.tsv")).unwrap();
        let m2 = std::fs::read(d2.path().join("manifest.tsv")).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn recorded_attributes_match_recomputation_exactly() {
        let spec = SyntheticSpec::mini(16, 7);
        let dir = tempfile::tempdir().unwrap();
        generate_synthetic(&spec, dir.path()).unwrap();
        let recs = load_manifest(&dir.path().join("manifest.tsv"), &ranges(&spec)).unwrap();
        assert_eq!(recs.len(), 16);
        for r in &recs {
            let img = load_image(dir.path(), &r.image_path).unwrap();
            assert_eq!(r.brightness.unwrap(), compute_brightness(&img).unwrap());
            assert_eq!(r.colorfulness.unwrap(), compute_colorfulness(&img).unwrap());
        }
    }

    #[test]
    fn label_rule_audit_from_recorded_bins() {
        let spec = SyntheticSpec::mini(40, 3);
        let dir = tempfile::tempdir().unwrap();
        let out = generate_synthetic(&spec, dir.path()).unwrap();
        for r in &out.records {
            let b = brightness_bin(r.brightness.unwrap());
            let c = colorfulness_bin(r.colorfulness.unwrap());
            let expect = emotion_rule(&spec, b, c, r.scene.unwrap(), r.facial_expression.unwrap());
            assert_eq!(r.emotion, expect);
        }
    }

    #[test]
    fn classes_are_balanced_and_quadrants_align() {
        let spec = SyntheticSpec::mini(120, 11);
        let dir = tempfile::tempdir().unwrap();
        let out = generate_synthetic(&spec, dir.path()).unwrap();
        let mut counts = vec![0usize; spec.emotion_classes];
        for r in &out.records {
            counts[r.emotion] += 1;
        }
        assert_eq!(counts, vec![30; 4]);
        for (r, q) in out.records.iter().zip(&out.face_quadrants) {
            let has_face = r.facial_expression.unwrap() + 1 < spec.fe_classes;
            assert_eq!(q.is_some(), has_face);
            if let Some(q) = q {
                assert!(*q < 4);
            }
        }
        // both face and no-face samples occur
        assert!(out.face_quadrants.iter().any(Option::is_some));
        assert!(out.face_quadrants.iter().any(Option::is_none));
    }

    #[test]
    fn bins_are_well_separated() {
        // the recorded scalars respect their bin thresholds with margin
        let spec = SyntheticSpec::mini(60, 5);
        let dir = tempfile::tempdir().unwrap();
        let out = generate_synthetic(&spec, dir.path()).unwrap();
        for r in &out.records {
            let b = r.brightness.unwrap();
            assert!(
                !(0.50..0.59).contains(&b),
                "brightness {b} too close to threshold"
            );
            let c = r.colorfulness.unwrap();
            assert!(
                !(0.085..0.115).contains(&c),
                "colorfulness {c} too close to threshold"
            );
        }
    }
}
