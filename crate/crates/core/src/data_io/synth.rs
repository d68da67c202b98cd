use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::jsonl::Corpus;
use crate::error::{Error, Result};
use crate::ink::{InkSequence, RawPoint};

/// A glyph drawn as ordered polylines in the unit square.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlyphTemplate {
    pub class_id: usize,
    pub name: String,
    pub strokes: Vec<Vec<(f64, f64)>>,
}

impl GlyphTemplate {
    pub fn new(class_id: usize, name: &str, strokes: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        if strokes.is_empty() || strokes.iter().any(|s| s.len() < 2) {
            return Err(Error::InvalidConfig(format!(
                "template {name} needs at least one stroke of two or more points"
            )));
        }
        Ok(Self {
            class_id,
            name: name.to_string(),
            strokes,
        })
    }

    /// The control points as an ink sequence.
    pub fn to_ink(&self) -> InkSequence {
        let points = self
            .strokes
            .iter()
            .enumerate()
            .flat_map(|(s, pts)| pts.iter().map(move |&(x, y)| RawPoint::new(x, y, s as u32)))
            .collect();
        InkSequence::new(points, Some(self.class_id)).expect("stroke ids increase")
    }
}

/// Distortions applied to each synthesized sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Standard deviation of per-point Gaussian jitter.
    pub noise: f64,
    pub scale_range: (f64, f64),
    /// Rotation bound in degrees, applied symmetrically.
    pub max_rotation_deg: f64,
    /// Arc-length spacing when densifying strokes; `None` keeps only the
    /// control points.
    pub resample_step: Option<f64>,
    /// Relative spread of the per-sample spacing.
    pub step_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            noise: 0.02,
            scale_range: (0.8, 1.2),
            max_rotation_deg: 10.0,
            resample_step: Some(0.1),
            step_jitter: 0.3,
        }
    }
}

impl SynthConfig {
    /// No distortion at all: every sample equals its template.
    pub fn identity() -> Self {
        Self {
            noise: 0.0,
            scale_range: (1.0, 1.0),
            max_rotation_deg: 0.0,
            resample_step: None,
            step_jitter: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.noise >= 0.0) {
            return bad("noise must be non-negative");
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad("scale range must be positive and ordered");
        }
        if !(self.max_rotation_deg >= 0.0) {
            return bad("rotation bound must be non-negative");
        }
        if self.resample_step.is_some_and(|s| !(s > 0.0)) {
            return bad("resampling step must be positive");
        }
        if !(0.0..1.0).contains(&self.step_jitter) {
            return bad("step jitter must lie in [0, 1)");
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Splits every segment into equal pieces no longer than `step`, keeping
/// the control points.
fn resample(stroke: &[(f64, f64)], step: f64) -> Vec<(f64, f64)> {
    let mut out = vec![stroke[0]];
    for w in stroke.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        let pieces = ((x1 - x0).hypot(y1 - y0) / step).ceil().max(1.0) as usize;
        for k in 1..=pieces {
            let a = k as f64 / pieces as f64;
            out.push((x0 + a * (x1 - x0), y0 + a * (y1 - y0)));
        }
    }
    out
}

fn distort<R: Rng + ?Sized>(t: &GlyphTemplate, cfg: &SynthConfig, rng: &mut R) -> Result<InkSequence> {
    let scale = uniform(rng, cfg.scale_range.0, cfg.scale_range.1);
    let angle = uniform(rng, -cfg.max_rotation_deg, cfg.max_rotation_deg).to_radians();
    let (sin, cos) = angle.sin_cos();
    let step = cfg
        .resample_step
        .map(|s| s * uniform(rng, 1.0 - cfg.step_jitter, 1.0 + cfg.step_jitter));
    let jitter = Normal::new(0.0, cfg.noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut points = Vec::new();
    for (s, stroke) in t.strokes.iter().enumerate() {
        let dense = match step {
            Some(h) => resample(stroke, h),
            None => stroke.clone(),
        };
        for (x, y) in dense {
            let (rx, ry) = if scale == 1.0 && angle == 0.0 {
                (x, y)
            } else {
                let (cx, cy) = (x - 0.5, y - 0.5);
                (scale * (cos * cx - sin * cy) + 0.5, scale * (sin * cx + cos * cy) + 0.5)
            };
            let (nx, ny) = if cfg.noise > 0.0 {
                (jitter.sample(rng), jitter.sample(rng))
            } else {
                (0.0, 0.0)
            };
            points.push(RawPoint::new(rx + nx, ry + ny, s as u32));
        }
    }
    InkSequence::new(points, Some(t.class_id))
}

/// `per_class` distorted copies of each template, grouped by template.
/// Labels are the templates' class ids.
pub fn synthesize_corpus<R: Rng + ?Sized>(
    templates: &[GlyphTemplate],
    per_class: usize,
    cfg: &SynthConfig,
    rng: &mut R,
) -> Result<Corpus> {
    if templates.is_empty() {
        return Err(Error::InvalidConfig("no glyph templates".into()));
    }
    if per_class == 0 {
        return Err(Error::InvalidConfig("per-class count must be positive".into()));
    }
    cfg.validate()?;
    let classes = templates.iter().map(|t| t.class_id).max().expect("nonempty") + 1;
    let mut samples = Vec::with_capacity(templates.len() * per_class);
    for t in templates {
        for _ in 0..per_class {
            samples.push(distort(t, cfg, rng)?);
        }
    }
    Corpus::new(samples, classes, None)
}

type Strokes = Vec<Vec<(f64, f64)>>;

/// Built-in glyphs, with class ids in order. `hook` is `ell` plus a short
/// upward tick, so those two form a deliberately confusable pair.
pub fn builtin_templates() -> Vec<GlyphTemplate> {
    let shapes: Vec<(&str, Strokes)> = vec![
        ("plus", vec![vec![(0.5, 0.1), (0.5, 0.9)], vec![(0.1, 0.5), (0.9, 0.5)]]),
        ("box", vec![vec![(0.2, 0.2), (0.8, 0.2), (0.8, 0.8), (0.2, 0.8), (0.2, 0.2)]]),
        ("zigzag", vec![vec![(0.1, 0.8), (0.35, 0.2), (0.6, 0.8), (0.9, 0.2)]]),
        ("tee", vec![vec![(0.1, 0.9), (0.9, 0.9)], vec![(0.5, 0.9), (0.5, 0.1)]]),
        ("ell", vec![vec![(0.3, 0.9), (0.3, 0.1), (0.8, 0.1)]]),
        (
            "aitch",
            vec![
                vec![(0.2, 0.9), (0.2, 0.1)],
                vec![(0.8, 0.9), (0.8, 0.1)],
                vec![(0.2, 0.5), (0.8, 0.5)],
            ],
        ),
        ("cross", vec![vec![(0.15, 0.85), (0.85, 0.15)], vec![(0.85, 0.85), (0.15, 0.15)]]),
        ("triangle", vec![vec![(0.5, 0.9), (0.1, 0.1), (0.9, 0.1), (0.5, 0.9)]]),
        (
            "bars",
            vec![
                vec![(0.1, 0.8), (0.9, 0.8)],
                vec![(0.1, 0.5), (0.9, 0.5)],
                vec![(0.1, 0.2), (0.9, 0.2)],
            ],
        ),
        ("hook", vec![vec![(0.3, 0.9), (0.3, 0.1), (0.8, 0.1), (0.8, 0.2)]]),
        ("vee", vec![vec![(0.1, 0.9), (0.5, 0.1), (0.9, 0.9)]]),
        ("zed", vec![vec![(0.1, 0.9), (0.9, 0.9), (0.1, 0.1), (0.9, 0.1)]]),
        ("arrow", vec![vec![(0.1, 0.5), (0.9, 0.5)], vec![(0.6, 0.8), (0.9, 0.5), (0.6, 0.2)]]),
        (
            "ee",
            vec![
                vec![(0.8, 0.9), (0.2, 0.9), (0.2, 0.1), (0.8, 0.1)],
                vec![(0.2, 0.5), (0.7, 0.5)],
            ],
        ),
        ("en", vec![vec![(0.2, 0.1), (0.2, 0.9), (0.8, 0.1), (0.8, 0.9)]]),
        ("double-u", vec![vec![(0.05, 0.9), (0.3, 0.1), (0.5, 0.6), (0.7, 0.1), (0.95, 0.9)]]),
    ];
    shapes
        .into_iter()
        .enumerate()
        .map(|(i, (name, strokes))| GlyphTemplate::new(i, name, strokes).expect("built-in template"))
        .collect()
}
