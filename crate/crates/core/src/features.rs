//! Keypoint extraction, descriptor sampling and descriptor matching.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::geometry::{Match, Point2};
use crate::network::{
    catmull_rom_taps, detector_heatmap, forward_frame, l2_normalize, pixel_to_cell, Heatmap, Tensor, WeightSet,
    CELL,
};
use crate::representation::Frame1;

/// Test-time detection threshold.
pub const DEFAULT_TAU_TEST: f32 = 0.015;
pub const DEFAULT_NMS_RADIUS: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub score: f32,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, score: f32) -> Self {
        Keypoint { x, y, score }
    }

    pub fn point(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

/// Keypoints with one unit-norm descriptor each.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    width: usize,
    height: usize,
    dim: usize,
    keypoints: Vec<Keypoint>,
    descriptors: Vec<f32>,
}

impl FeatureSet {
    pub fn new(width: usize, height: usize, dim: usize, keypoints: Vec<Keypoint>, descriptors: Vec<f32>) -> Result<Self> {
        if descriptors.len() != keypoints.len() * dim {
            return Err(Error::shape(keypoints.len() * dim, descriptors.len()));
        }
        if let Some(k) = keypoints
            .iter()
            .find(|k| !(k.x >= 0.0 && k.y >= 0.0 && k.x < width as f64 && k.y < height as f64))
        {
            return Err(Error::OutOfBounds {
                x: k.x.floor() as i64,
                y: k.y.floor() as i64,
                width,
                height,
            });
        }
        Ok(FeatureSet {
            width,
            height,
            dim,
            keypoints,
            descriptors,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn keypoints(&self) -> &[Keypoint] {
        &self.keypoints
    }

    pub fn descriptors(&self) -> &[f32] {
        &self.descriptors
    }

    pub fn descriptor(&self, i: usize) -> &[f32] {
        &self.descriptors[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtractParams {
    pub tau: f32,
    /// Zero disables suppression.
    pub nms_radius: f64,
    pub max_count: Option<usize>,
}

impl Default for ExtractParams {
    fn default() -> Self {
        ExtractParams {
            tau: DEFAULT_TAU_TEST,
            nms_radius: DEFAULT_NMS_RADIUS,
            max_count: None,
        }
    }
}

/// Orders by descending score, then by ascending `(y, x)`.
fn by_score(a: &Keypoint, b: &Keypoint) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.y.total_cmp(&b.y))
        .then(a.x.total_cmp(&b.x))
}

/// Greedy suppression in score order: a point is dropped when a kept point
/// lies strictly closer than `radius`.
pub fn non_max_suppression(mut points: Vec<Keypoint>, radius: f64) -> Vec<Keypoint> {
    points.sort_by(by_score);
    if radius <= 0.0 || points.is_empty() {
        return points;
    }
    let bucket = radius.max(1.0);
    let key = |p: &Keypoint| ((p.x / bucket).floor() as i64, (p.y / bucket).floor() as i64);
    let mut grid: std::collections::HashMap<(i64, i64), Vec<Point2>> = Default::default();
    let mut kept = Vec::new();
    for p in points {
        let (bx, by) = key(&p);
        let q = p.point();
        let span = (radius / bucket).ceil() as i64;
        let blocked = (-span..=span).any(|dy| {
            (-span..=span).any(|dx| {
                grid.get(&(bx + dx, by + dy))
                    .is_some_and(|v| v.iter().any(|o| o.distance(&q) < radius))
            })
        });
        if !blocked {
            grid.entry((bx, by)).or_default().push(q);
            kept.push(p);
        }
    }
    kept
}

/// Thresholds the heatmap at `tau` (strictly above), suppresses
/// non-maxima and keeps the `max_count` best.
pub fn extract_keypoints(h: &Heatmap, params: &ExtractParams) -> Vec<Keypoint> {
    let w = h.width();
    let candidates: Vec<Keypoint> = h
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > params.tau)
        .map(|(i, &s)| Keypoint::new((i % w) as f64, (i / w) as f64, s))
        .collect();
    let mut kept = non_max_suppression(candidates, params.nms_radius);
    if let Some(n) = params.max_count {
        kept.truncate(n);
    }
    kept
}

/// Bicubic samples of the raw descriptor grid at each keypoint, L2
/// normalized. Agrees with [`crate::network::dense_descriptors`] at integer
/// pixel positions.
pub fn sample_descriptors(desc_raw: &Tensor, keypoints: &[Keypoint]) -> Result<Vec<f32>> {
    let [n, dim, hc, wc] = desc_raw.shape();
    if n != 1 || hc == 0 || wc == 0 {
        return Err(Error::shape("(1, D, Hc, Wc)", desc_raw.shape()));
    }
    let src = desc_raw.data();
    let mut out = vec![0.0f32; keypoints.len() * dim];
    for (k, chunk) in keypoints.iter().zip(out.chunks_exact_mut(dim)) {
        let xt = catmull_rom_taps(pixel_to_cell(k.x), wc);
        let yt = catmull_rom_taps(pixel_to_cell(k.y), hc);
        for (d, o) in chunk.iter_mut().enumerate() {
            let plane = &src[d * hc * wc..][..hc * wc];
            let mut acc = 0.0f32;
            for &(i, wy) in &yt {
                let row = &plane[i * wc..][..wc];
                let h: f32 = xt.iter().map(|&(j, wx)| wx * row[j]).sum();
                acc += wy * h;
            }
            *o = acc;
        }
        l2_normalize(chunk);
    }
    Ok(out)
}

/// Anything that proposes scored points on a single-channel frame.
pub trait PointDetector: Sync {
    fn detect(&self, frame: &Frame1) -> Result<Vec<Keypoint>>;
}

/// Largest top-left crop whose sides are multiples of the cell size.
pub fn crop_to_cells(frame: &Frame1) -> Result<Frame1> {
    let (w, h) = (frame.width() / CELL * CELL, frame.height() / CELL * CELL);
    if w == 0 || h == 0 {
        return Err(Error::invalid(format!(
            "frame {}x{} is smaller than one {CELL}x{CELL} cell",
            frame.width(),
            frame.height()
        )));
    }
    if (w, h) == (frame.width(), frame.height()) {
        return Ok(frame.clone());
    }
    frame.crop(0, 0, w, h)
}

/// The trained network's detector head as a [`PointDetector`].
#[derive(Clone, Copy, Debug)]
pub struct NetworkDetector<'a> {
    pub weights: &'a WeightSet,
    pub params: ExtractParams,
}

impl PointDetector for NetworkDetector<'_> {
    fn detect(&self, frame: &Frame1) -> Result<Vec<Keypoint>> {
        let out = forward_frame(self.weights, &crop_to_cells(frame)?)?;
        Ok(extract_keypoints(&detector_heatmap(&out.semi)?, &self.params))
    }
}

/// Detects and describes one frame. Frames whose sides are not multiples of
/// 8 are cropped at the top-left.
pub fn describe_frame(weights: &WeightSet, frame: &Frame1, params: &ExtractParams) -> Result<FeatureSet> {
    let frame = crop_to_cells(frame)?;
    let out = forward_frame(weights, &frame)?;
    let keypoints = extract_keypoints(&detector_heatmap(&out.semi)?, params);
    let descriptors = sample_descriptors(&out.desc_raw, &keypoints)?;
    FeatureSet::new(frame.width(), frame.height(), out.desc_raw.channels(), keypoints, descriptors)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MatchMode {
    Nn,
    #[default]
    MutualNn,
}

impl std::str::FromStr for MatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nn" => Ok(MatchMode::Nn),
            "mutual" | "mutual_nn" => Ok(MatchMode::MutualNn),
            other => Err(Error::invalid(format!("unknown match mode '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MatchParams {
    pub mode: MatchMode,
    /// Lowe ratio on `1 − dot` distances.
    pub ratio: Option<f64>,
}

/// One correspondence by feature index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IndexMatch {
    pub a: usize,
    pub b: usize,
    pub score: f32,
}

fn similarity(fa: &FeatureSet, fb: &FeatureSet) -> Vec<f32> {
    let (na, nb, d) = (fa.len(), fb.len(), fa.dim());
    let mut sim = vec![0.0f32; na * nb];
    crate::network::ops::gemm(na, d, nb, fa.descriptors(), (d, 1), fb.descriptors(), (1, d), 0.0, &mut sim);
    sim
}

/// Best and second-best column of each row; ties keep the lowest index.
fn best_two(row: &[f32]) -> (usize, f32, f32) {
    let mut best = (0usize, f32::NEG_INFINITY);
    let mut second = f32::NEG_INFINITY;
    for (j, &v) in row.iter().enumerate() {
        if v > best.1 {
            second = best.1;
            best = (j, v);
        } else if v > second {
            second = v;
        }
    }
    (best.0, best.1, second)
}

/// Nearest-neighbour matching by descriptor dot product, in ascending order
/// of the index in `fa`.
pub fn match_indices(fa: &FeatureSet, fb: &FeatureSet, params: &MatchParams) -> Result<Vec<IndexMatch>> {
    if fa.dim() != fb.dim() {
        return Err(Error::shape(fa.dim(), fb.dim()));
    }
    if fa.is_empty() || fb.is_empty() {
        return Ok(Vec::new());
    }
    let (na, nb) = (fa.len(), fb.len());
    let sim = similarity(fa, fb);
    let back: Vec<usize> = if params.mode == MatchMode::MutualNn {
        let mut best = vec![(0usize, f32::NEG_INFINITY); nb];
        for i in 0..na {
            for (j, b) in best.iter_mut().enumerate() {
                let v = sim[i * nb + j];
                if v > b.1 {
                    *b = (i, v);
                }
            }
        }
        best.into_iter().map(|b| b.0).collect()
    } else {
        Vec::new()
    };
    let mut out = Vec::new();
    for i in 0..na {
        let (j, s1, s2) = best_two(&sim[i * nb..(i + 1) * nb]);
        if params.mode == MatchMode::MutualNn && back[j] != i {
            continue;
        }
        if let Some(r) = params.ratio {
            if nb > 1 && (1.0 - s1 as f64) >= r * (1.0 - s2 as f64) {
                continue;
            }
        }
        out.push(IndexMatch { a: i, b: j, score: s1 });
    }
    Ok(out)
}

/// As [`match_indices`], returning keypoint coordinates.
pub fn match_features(fa: &FeatureSet, fb: &FeatureSet, params: &MatchParams) -> Result<Vec<Match>> {
    Ok(match_indices(fa, fb, params)?
        .into_iter()
        .map(|m| Match::new(fa.keypoints[m.a].point(), fb.keypoints[m.b].point(), m.score as f64))
        .collect())
}
