//! Pen-trajectory data model and the preprocessing that turns raw ink into
//! model inputs.
//!
//! Raw ink is a list of `(x, y, stroke)` points. Preprocessing drops
//! redundant points (too close to the last kept point, or nearly collinear
//! with it and the next point) and then recentres and rescales the whole
//! character using line-integral statistics over its pen-down segments.
//! Both axes are divided by the x-axis deviation so the aspect ratio and
//! writing direction survive.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Characters whose x-axis deviation falls below this are rejected.
pub const DEGENERATE_EPSILON: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawPoint {
    pub x: f64,
    pub y: f64,
    pub stroke: u32,
}

impl RawPoint {
    pub fn new(x: f64, y: f64, stroke: u32) -> Self {
        Self { x, y, stroke }
    }
}

/// One handwritten character as an ordered point list.
#[derive(Clone, Debug, PartialEq)]
pub struct InkSequence {
    points: Vec<RawPoint>,
    pub label: Option<usize>,
}

impl InkSequence {
    /// Builds a sequence, checking that stroke ids never decrease.
    pub fn new(points: Vec<RawPoint>, label: Option<usize>) -> Result<Self> {
        if points.windows(2).any(|w| w[1].stroke < w[0].stroke) {
            return Err(Error::InvalidConfig("stroke ids must be non-decreasing".into()));
        }
        Ok(Self { points, label })
    }

    pub fn from_triples(triples: &[(f64, f64, u32)], label: Option<usize>) -> Result<Self> {
        Self::new(
            triples.iter().map(|&(x, y, s)| RawPoint::new(x, y, s)).collect(),
            label,
        )
    }

    pub fn points(&self) -> &[RawPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Maximal runs of points sharing a stroke id.
    pub fn strokes(&self) -> impl Iterator<Item = &[RawPoint]> {
        self.points.chunk_by(|a, b| a.stroke == b.stroke)
    }

    pub fn stroke_count(&self) -> usize {
        self.strokes().count()
    }

    /// `(min_x, min_y, max_x, max_y)`, or `None` when empty.
    pub fn bounding_box(&self) -> Option<(f64, f64, f64, f64)> {
        let first = self.points.first()?;
        let init = (first.x, first.y, first.x, first.y);
        Some(self.points.iter().fold(init, |(x0, y0, x1, y1), p| {
            (x0.min(p.x), y0.min(p.y), x1.max(p.x), y1.max(p.y))
        }))
    }

    fn with_points(&self, points: Vec<RawPoint>) -> Self {
        Self {
            points,
            label: self.label,
        }
    }
}

/// Thresholds for redundant-point removal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Distance threshold as a fraction of `max(height, width)`.
    pub dist_factor: f64,
    /// Cosine above which a point counts as collinear.
    pub cos_threshold: f64,
}

impl PreprocessConfig {
    pub const RECOGNITION: Self = Self {
        dist_factor: 0.01,
        cos_threshold: 0.99,
    };
    pub const GENERATION: Self = Self {
        dist_factor: 0.05,
        cos_threshold: 0.9,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.dist_factor > 0.0) || !self.dist_factor.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "dist_factor {} must be positive",
                self.dist_factor
            )));
        }
        if !(self.cos_threshold > -1.0 && self.cos_threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "cos_threshold {} must lie in (-1, 1]",
                self.cos_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mu_x: f64,
    pub mu_y: f64,
    pub delta_x: f64,
}

/// Drops redundant interior points in a single left-to-right scan.
///
/// The "previous" point is the most recently kept one and the "next" point
/// is the raw successor. Stroke endpoints are always kept.
pub fn remove_redundant_points(seq: &InkSequence, cfg: &PreprocessConfig) -> Result<InkSequence> {
    cfg.validate()?;
    let (x0, y0, x1, y1) = seq.bounding_box().ok_or(Error::EmptyInk)?;
    let t_dist = cfg.dist_factor * (x1 - x0).max(y1 - y0);

    let pts = seq.points();
    let n = pts.len();
    let mut kept: Vec<RawPoint> = Vec::with_capacity(n);
    for i in 0..n {
        let p = pts[i];
        let starts = i == 0 || pts[i - 1].stroke != p.stroke;
        let ends = i + 1 == n || pts[i + 1].stroke != p.stroke;
        if starts || ends {
            kept.push(p);
            continue;
        }
        let prev = *kept.last().expect("stroke start was kept");
        let next = pts[i + 1];
        let (ax, ay) = (p.x - prev.x, p.y - prev.y);
        let (bx, by) = (next.x - p.x, next.y - p.y);
        let la = ax.hypot(ay);
        let lb = bx.hypot(by);
        let too_close = la < t_dist;
        // A zero-length neighbour segment leaves the cosine undefined; only
        // the distance rule can fire then.
        let collinear = la > 0.0 && lb > 0.0 && (ax * bx + ay * by) / (la * lb) > cfg.cos_threshold;
        if !(too_close || collinear) {
            kept.push(p);
        }
    }
    Ok(seq.with_points(kept))
}

/// Line-integral mean and x-deviation over all within-stroke segments.
pub fn normalization_stats(seq: &InkSequence) -> Result<NormalizationStats> {
    let mut total_len = 0.0;
    let (mut px, mut py) = (0.0, 0.0);
    for stroke in seq.strokes() {
        for w in stroke.windows(2) {
            let len = (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
            total_len += len;
            px += 0.5 * len * (w[0].x + w[1].x);
            py += 0.5 * len * (w[0].y + w[1].y);
        }
    }
    if !(total_len > 0.0) {
        return Err(Error::EmptyInk);
    }
    let mu_x = px / total_len;
    let mu_y = py / total_len;

    let mut dev = 0.0;
    for stroke in seq.strokes() {
        for w in stroke.windows(2) {
            let len = (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
            let (a, b) = (w[0].x - mu_x, w[1].x - mu_x);
            dev += len * (a * a + b * b + a * b) / 3.0;
        }
    }
    let delta_x = (dev / total_len).sqrt();
    Ok(NormalizationStats { mu_x, mu_y, delta_x })
}

/// Recentres the character and divides both axes by the x-deviation.
pub fn normalize_coordinates(seq: &InkSequence) -> Result<(InkSequence, NormalizationStats)> {
    let stats = normalization_stats(seq)?;
    if !(stats.delta_x >= DEGENERATE_EPSILON) {
        return Err(Error::DegenerateInk(stats.delta_x));
    }
    let points = seq
        .points()
        .iter()
        .map(|p| RawPoint {
            x: (p.x - stats.mu_x) / stats.delta_x,
            y: (p.y - stats.mu_y) / stats.delta_x,
            stroke: p.stroke,
        })
        .collect();
    Ok((seq.with_points(points), stats))
}

/// Redundant-point removal followed by coordinate normalization.
pub fn preprocess(seq: &InkSequence, cfg: &PreprocessConfig) -> Result<InkSequence> {
    let reduced = remove_redundant_points(seq, cfg)?;
    Ok(normalize_coordinates(&reduced)?.0)
}

/// Per-segment classifier input `[x, y, Δx, Δy, down, up]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFeature(pub [f64; 6]);

impl LineFeature {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn to_line_features(seq: &InkSequence) -> Result<Vec<LineFeature>> {
    if seq.len() < 2 {
        return Err(Error::EmptyInk);
    }
    Ok(seq
        .points()
        .windows(2)
        .map(|w| {
            let same = w[0].stroke == w[1].stroke;
            LineFeature([
                w[0].x,
                w[0].y,
                w[1].x - w[0].x,
                w[1].y - w[0].y,
                if same { 1.0 } else { 0.0 },
                if same { 0.0 } else { 1.0 },
            ])
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PenState {
    Down,
    Up,
    End,
}

impl PenState {
    pub const ALL: [PenState; 3] = [PenState::Down, PenState::Up, PenState::End];

    pub fn index(self) -> usize {
        match self {
            PenState::Down => 0,
            PenState::Up => 1,
            PenState::End => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn one_hot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self.index()] = 1.0;
        v
    }
}

/// Pen movement plus the pen state that applies to it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenToken {
    pub dx: f64,
    pub dy: f64,
    pub pen: PenState,
}

impl GenToken {
    pub fn end() -> Self {
        Self {
            dx: 0.0,
            dy: 0.0,
            pen: PenState::End,
        }
    }
}

/// One token per consecutive point pair, terminated by an end-of-char token.
pub fn to_gen_tokens(seq: &InkSequence) -> Result<Vec<GenToken>> {
    if seq.len() < 2 {
        return Err(Error::EmptyInk);
    }
    let mut out: Vec<GenToken> = seq
        .points()
        .windows(2)
        .map(|w| GenToken {
            dx: w[1].x - w[0].x,
            dy: w[1].y - w[0].y,
            pen: if w[0].stroke == w[1].stroke {
                PenState::Down
            } else {
                PenState::Up
            },
        })
        .collect();
    out.push(GenToken::end());
    Ok(out)
}

/// Redraws tokens by cumulative summation from `origin`; a pen-up token
/// starts a new stroke and end-of-char stops the drawing.
pub fn tokens_to_ink(tokens: &[GenToken], origin: (f64, f64), label: Option<usize>) -> InkSequence {
    let (mut x, mut y) = origin;
    let mut stroke = 0u32;
    let mut points = vec![RawPoint::new(x, y, stroke)];
    for t in tokens {
        match t.pen {
            PenState::End => break,
            PenState::Up => stroke += 1,
            PenState::Down => {}
        }
        x += t.dx;
        y += t.dy;
        points.push(RawPoint::new(x, y, stroke));
    }
    InkSequence { points, label }
}

/// Deletes each item independently with probability `p`.
///
/// An all-deleted draw is redrawn up to 100 times; after that a single
/// uniformly chosen item is kept.
pub fn sequential_dropout<T: Clone, R: Rng + ?Sized>(items: &[T], p: f64, rng: &mut R) -> Result<Vec<T>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidConfig(format!("dropout probability {p} outside [0, 1)")));
    }
    if items.is_empty() {
        return Ok(Vec::new());
    }
    if p == 0.0 {
        return Ok(items.to_vec());
    }
    for _ in 0..=100 {
        let kept: Vec<T> = items.iter().filter(|_| rng.random::<f64>() >= p).cloned().collect();
        if !kept.is_empty() {
            return Ok(kept);
        }
    }
    Ok(vec![items[rng.random_range(0..items.len())].clone()])
}
