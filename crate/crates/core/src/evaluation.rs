//! Scoring protocols: stereo disparity precision, mask-based matching
//! score, homography reprojection error, and keypoint repeatability.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::event_model::{EventStream, Micros, TemporalWindow};
use crate::features::{describe_frame, extract_keypoints, match_features, ExtractParams, FeatureSet, MatchParams};
use crate::geometry::{ransac_homography, Homography, Match, Point2, RansacConfig};
use crate::network::{detector_heatmap, forward_frame, Tensor, WeightSet};
use crate::representation::{encode_window, Frame1, FrameTriplet, GrayMode, Mask, Representation};
use crate::selfsup::correspondence_mask;

/// Sparse per-pixel disparities.
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityMap {
    width: usize,
    height: usize,
    values: Vec<Option<f32>>,
}

impl DisparityMap {
    pub fn new(width: usize, height: usize) -> Self {
        DisparityMap {
            width,
            height,
            values: vec![None; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f32> {
        self.values[y * self.width + x]
    }

    /// Negative or non-finite disparities are rejected.
    pub fn set(&mut self, x: usize, y: usize, d: f32) -> Result<()> {
        if !(d >= 0.0 && d.is_finite()) {
            return Err(Error::invalid(format!("disparity {d} at ({x}, {y}) must be finite and non-negative")));
        }
        if x >= self.width || y >= self.height {
            return Err(Error::OutOfBounds {
                x: x as i64,
                y: y as i64,
                width: self.width,
                height: self.height,
            });
        }
        self.values[y * self.width + x] = Some(d);
        Ok(())
    }

    /// Disparity at the pixel nearest to a sub-pixel point.
    pub fn lookup(&self, p: Point2) -> Option<f32> {
        let (x, y) = (p.x.round(), p.y.round());
        if x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64 {
            self.get(x as usize, y as usize)
        } else {
            None
        }
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// `(x, y, d)` for every valid pixel in raster order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f32)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|d| (i % self.width, i / self.width, d)))
    }
}

/// `(correct, valid)` counts of a match set from the left image to the
/// right one.
pub fn disparity_counts(matches: &[Match], dmap: &DisparityMap, sigma: f64) -> (usize, usize) {
    let mut valid = 0;
    let mut correct = 0;
    for m in matches {
        let Some(d) = dmap.lookup(m.a) else { continue };
        valid += 1;
        if (m.b.x - (m.a.x - d as f64)).abs() < sigma && (m.b.y - m.a.y).abs() < sigma {
            correct += 1;
        }
    }
    (correct, valid)
}

/// Fraction of matches landing on a defined disparity whose right endpoint
/// lies within `sigma` of `(x − d, y)`. `None` without valid matches.
pub fn disparity_precision(matches: &[Match], dmap: &DisparityMap, sigma: f64) -> Option<f64> {
    let (correct, valid) = disparity_counts(matches, dmap, sigma);
    (valid > 0).then(|| correct as f64 / valid as f64)
}

/// Fraction of matches with both endpoints inside their object masks.
pub fn iou_matching_score(matches: &[Match], mask_a: &Mask, mask_b: &Mask) -> Option<f64> {
    if matches.is_empty() {
        return None;
    }
    let correct = matches
        .iter()
        .filter(|m| mask_a.contains_point(m.a.x, m.a.y) && mask_b.contains_point(m.b.x, m.b.y))
        .count();
    Some(correct as f64 / matches.len() as f64)
}

fn covered_fraction(from: &[Point2], to: &[Point2], map: &Homography, tol: f64) -> f64 {
    let hits = from
        .iter()
        .filter(|p| map.try_apply(**p).is_some_and(|q| to.iter().any(|t| t.distance(&q) <= tol)))
        .count();
    hits as f64 / from.len() as f64
}

/// Symmetric repeatability: the mean over both directions of the fraction
/// of points with a counterpart within `tol` after mapping `a → b` by `map`.
pub fn repeatability(a: &[Point2], b: &[Point2], map: &Homography, tol: f64) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    Some(0.5 * (covered_fraction(a, b, map, tol) + covered_fraction(b, a, &map.inverse(), tol)))
}

/// Encoding, network, extraction and matching settings for one model.
#[derive(Clone, Copy, Debug)]
pub struct Pipeline<'a> {
    pub weights: &'a WeightSet,
    pub representation: Representation,
    pub gray: GrayMode,
    pub extract: ExtractParams,
    pub matching: MatchParams,
}

impl<'a> Pipeline<'a> {
    pub fn new(weights: &'a WeightSet) -> Self {
        Pipeline {
            weights,
            representation: Representation::Tencode,
            gray: GrayMode::Luminance,
            extract: ExtractParams::default(),
            matching: MatchParams::default(),
        }
    }

    pub fn encode(&self, stream: &EventStream, window: TemporalWindow) -> Result<Frame1> {
        encode_window(stream, window, self.representation, self.gray)
    }

    pub fn features(&self, frame: &Frame1) -> Result<FeatureSet> {
        describe_frame(self.weights, frame, &self.extract)
    }

    pub fn match_frames(&self, a: &Frame1, b: &Frame1) -> Result<Vec<Match>> {
        match_features(&self.features(a)?, &self.features(b)?, &self.matching)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReprojConfig {
    /// Window length after each timestamp.
    pub dt: Micros,
    pub ransac: RansacConfig,
}

impl Default for ReprojConfig {
    fn default() -> Self {
        ReprojConfig {
            dt: 10_000,
            ransac: RansacConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReprojOutcome {
    /// Mean distance over RANSAC inliers, pixels.
    pub error: f64,
    pub matches: usize,
    /// Matches left after the planar-mask filter.
    pub kept: usize,
    pub inliers: usize,
    pub homography: Homography,
}

/// Filters matches by the masks, fits a homography from the first frame to
/// the second and measures how far the second frame's inlier points land
/// from their references after mapping back. `None` when fewer than four
/// matches survive or no consensus is found.
pub fn reprojection_from_matches<R: Rng + ?Sized>(
    matches: &[Match],
    mask_a: Option<&Mask>,
    mask_b: Option<&Mask>,
    ransac: &RansacConfig,
    rng: &mut R,
) -> Result<Option<ReprojOutcome>> {
    let kept: Vec<Match> = matches
        .iter()
        .filter(|m| {
            mask_a.is_none_or(|k| k.contains_point(m.a.x, m.a.y)) && mask_b.is_none_or(|k| k.contains_point(m.b.x, m.b.y))
        })
        .copied()
        .collect();
    if kept.len() < 4 {
        return Ok(None);
    }
    let (h, flags) = match ransac_homography(&kept, ransac, rng) {
        Ok(r) => r,
        Err(Error::NoConsensus) => return Ok(None),
        Err(e) => return Err(e),
    };
    let error = mean_back_projection(&h, kept.iter().zip(&flags).filter(|(_, &f)| f).map(|(m, _)| m));
    let inliers = flags.iter().filter(|&&f| f).count();
    Ok(error.map(|error| ReprojOutcome {
        error,
        matches: matches.len(),
        kept: kept.len(),
        inliers,
        homography: h,
    }))
}

/// Mean of `|H⁻¹·b − a|` over the given matches.
pub fn mean_back_projection<'m>(h: &Homography, matches: impl Iterator<Item = &'m Match>) -> Option<f64> {
    let inv = h.inverse();
    let mut total = 0.0;
    let mut n = 0usize;
    for m in matches {
        total += inv.try_apply(m.b)?.distance(&m.a);
        n += 1;
    }
    (n > 0).then(|| total / n as f64)
}

/// Encodes `(t1, t1 + dt]` and `(t2, t2 + dt]`, matches them with the
/// pipeline and scores the fitted homography.
#[allow(clippy::too_many_arguments)]
pub fn reprojection_eval<R: Rng + ?Sized>(
    stream: &EventStream,
    t1: Micros,
    t2: Micros,
    pipeline: &Pipeline,
    mask_a: Option<&Mask>,
    mask_b: Option<&Mask>,
    cfg: &ReprojConfig,
    rng: &mut R,
) -> Result<Option<ReprojOutcome>> {
    let w1 = TemporalWindow::new(t1, t1 + cfg.dt)?;
    let w2 = TemporalWindow::new(t2, t2 + cfg.dt)?;
    for w in [w1, w2] {
        if stream.window_events(w).is_empty() {
            return Err(Error::invalid(format!("window ({}, {}] holds no events", w.start(), w.end())));
        }
    }
    let matches = pipeline.match_frames(&pipeline.encode(stream, w1)?, &pipeline.encode(stream, w2)?)?;
    reprojection_from_matches(&matches, mask_a, mask_b, &cfg.ransac, rng)
}

/// Top-scoring keypoints of the network heatmap after suppression.
pub fn top_keypoints(weights: &WeightSet, frame: &Frame1, k: usize, nms_radius: f64) -> Result<Vec<Point2>> {
    let out = forward_frame(weights, &crate::features::crop_to_cells(frame)?)?;
    let params = ExtractParams {
        tau: f32::NEG_INFINITY,
        nms_radius,
        max_count: Some(k),
    };
    Ok(extract_keypoints(&detector_heatmap(&out.semi)?, &params)
        .iter()
        .map(|p| p.point())
        .collect())
}

/// Mean repeatability between the high- and low-resolution frames of each
/// triplet, using the `k` best keypoints per frame. The frames share the
/// sensor geometry, so the ground-truth map is the identity.
pub fn cross_scale_repeatability(weights: &WeightSet, triplets: &[FrameTriplet], k: usize, tol: f64) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for t in triplets {
        let a = top_keypoints(weights, &t.high, k, crate::features::DEFAULT_NMS_RADIUS)?;
        let b = top_keypoints(weights, &t.low, k, crate::features::DEFAULT_NMS_RADIUS)?;
        total += repeatability(&a, &b, &Homography::identity(), tol).unwrap_or(0.0);
    }
    Ok(total / triplets.len() as f64)
}

fn unit_cells(desc_raw: &Tensor) -> Vec<Vec<f32>> {
    let [_, d, hc, wc] = desc_raw.shape();
    let n = hc * wc;
    (0..n)
        .map(|c| {
            let mut v: Vec<f32> = (0..d).map(|k| desc_raw.data()[k * n + c]).collect();
            crate::network::l2_normalize(&mut v);
            v
        })
        .collect()
}

/// Mean cosine similarity of corresponding cells minus that of
/// non-corresponding cells, pooled over the three frame pairs of every
/// triplet.
pub fn descriptor_separation(weights: &WeightSet, triplets: &[FrameTriplet], epsilon: f64) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (mut pos, mut npos, mut neg, mut nneg) = (0.0f64, 0usize, 0.0f64, 0usize);
    for t in triplets {
        let cells: Vec<Vec<Vec<f32>>> = t
            .as_array()
            .iter()
            .map(|f| {
                let f = crate::features::crop_to_cells(f)?;
                Ok(unit_cells(&forward_frame(weights, &f)?.desc_raw))
            })
            .collect::<Result<_>>()?;
        let f = crate::features::crop_to_cells(&t.low)?;
        let s = correspondence_mask(f.height() / crate::network::CELL, f.width() / crate::network::CELL, epsilon);
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            for (i, u) in cells[a].iter().enumerate() {
                for (j, v) in cells[b].iter().enumerate() {
                    let dot: f64 = u.iter().zip(v).map(|(x, y)| (*x as f64) * (*y as f64)).sum();
                    if s.get(i, j) {
                        pos += dot;
                        npos += 1;
                    } else {
                        neg += dot;
                        nneg += 1;
                    }
                }
            }
        }
    }
    let mean = |s: f64, n: usize| if n > 0 { s / n as f64 } else { 0.0 };
    Ok(mean(pos, npos) - mean(neg, nneg))
}

/// Aggregate scores over a set of evaluation samples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    /// `(sigma, precision)`: the mean over samples with valid matches of
    /// `correct / valid`.
    pub precisions: Vec<(f64, Option<f64>)>,
    pub samples: usize,
    /// Valid matches per sample.
    pub valid_matches: Vec<usize>,
    pub mean_reprojection: Option<f64>,
    pub iou: Option<f64>,
}

/// Disparity precision averaged over samples, one value per threshold.
pub fn disparity_report(samples: &[(Vec<Match>, DisparityMap)], sigmas: &[f64]) -> EvalReport {
    let precisions = sigmas
        .iter()
        .map(|&s| {
            let per: Vec<f64> = samples.iter().filter_map(|(m, d)| disparity_precision(m, d, s)).collect();
            (s, (!per.is_empty()).then(|| per.iter().sum::<f64>() / per.len() as f64))
        })
        .collect();
    EvalReport {
        precisions,
        samples: samples.len(),
        valid_matches: samples.iter().map(|(m, d)| disparity_counts(m, d, 0.0).1).collect(),
        ..Default::default()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| format!("{x:.4}"))
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples: {}", self.samples)?;
        if !self.valid_matches.is_empty() {
            let total: usize = self.valid_matches.iter().sum();
            writeln!(f, "valid matches: {total}")?;
        }
        for (s, p) in &self.precisions {
            writeln!(f, "precision@{s}: {}", opt(*p))?;
        }
        if self.mean_reprojection.is_some() {
            writeln!(f, "reprojection error: {}", opt(self.mean_reprojection))?;
        }
        if self.iou.is_some() {
            writeln!(f, "iou matching score: {}", opt(self.iou))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(ax: f64, ay: f64, bx: f64, by: f64) -> Match {
        Match::new(Point2::new(ax, ay), Point2::new(bx, by), 1.0)
    }

    fn dmap_with(entries: &[(usize, usize, f32)]) -> DisparityMap {
        let mut d = DisparityMap::new(40, 30);
        for &(x, y, v) in entries {
            d.set(x, y, v).unwrap();
        }
        d
    }

    #[test]
    fn oracle_stereo_matches_are_exact() {
        let mut d = dmap_with(&[(20, 10, 5.0), (30, 12, 7.5), (10, 3, 0.0)]);
        let matches: Vec<Match> = d.entries().map(|(x, y, v)| m(x as f64, y as f64, x as f64 - v as f64, y as f64)).collect();
        assert_eq!(disparity_precision(&matches, &d, 3.0), Some(1.0));
        assert!(d.set(0, 0, -1.0).is_err());
    }

    #[test]
    fn invalid_disparity_gives_none() {
        let d = dmap_with(&[(20, 10, 5.0)]);
        assert_eq!(disparity_precision(&[m(1.0, 1.0, 0.0, 1.0)], &d, 3.0), None);
        assert_eq!(disparity_precision(&[], &d, 3.0), None);
    }

    #[test]
    fn pure_shift_garbage_is_not_correct() {
        // Endpoints unchanged in x while the true disparity is 10.
        let d = dmap_with(&[(20, 10, 10.0)]);
        assert_eq!(disparity_precision(&[m(20.0, 10.0, 20.0, 10.0)], &d, 3.0), Some(0.0));
    }

    proptest! {
        #[test]
        fn precision_monotone_in_sigma(
            pts in proptest::collection::vec((0usize..40, 0usize..30, 0.0f32..20.0, -15.0f64..15.0, -10.0f64..10.0), 1..60),
        ) {
            let mut d = DisparityMap::new(40, 30);
            let mut ms = Vec::new();
            for &(x, y, v, ex, ey) in &pts {
                d.set(x, y, v).unwrap();
                ms.push(m(x as f64, y as f64, x as f64 - v as f64 + ex, y as f64 + ey));
            }
            let p: Vec<f64> = [3.0, 6.0, 9.0].iter().map(|&s| disparity_precision(&ms, &d, s).unwrap()).collect();
            prop_assert!(p[0] <= p[1] && p[1] <= p[2]);
        }

        #[test]
        fn iou_order_invariant(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ma = Mask::new(20, 20, false);
            let mut mb = Mask::new(20, 20, false);
            for y in 0..20 { for x in 0..20 { ma.set(x, y, rng.gen_bool(0.5)); mb.set(x, y, rng.gen_bool(0.5)); } }
            let mut ms: Vec<Match> = (0..15).map(|_| m(rng.gen_range(0.0..19.0), rng.gen_range(0.0..19.0), rng.gen_range(0.0..19.0), rng.gen_range(0.0..19.0))).collect();
            let a = iou_matching_score(&ms, &ma, &mb);
            ms.reverse();
            prop_assert_eq!(a, iou_matching_score(&ms, &ma, &mb));
        }
    }

    #[test]
    fn iou_cases() {
        let full = Mask::new(10, 10, true);
        let empty = Mask::new(10, 10, false);
        let ms: Vec<Match> = (0..10).map(|i| m(i as f64 * 0.9, 1.0, 2.0, i as f64 * 0.9)).collect();
        assert_eq!(iou_matching_score(&ms, &full, &full), Some(1.0));
        assert_eq!(iou_matching_score(&ms, &empty, &empty), Some(0.0));
        assert_eq!(iou_matching_score(&[], &full, &full), None);
        let mut half = Mask::new(10, 10, false);
        for y in 0..10 {
            for x in 0..5 {
                half.set(x, y, true);
            }
        }
        let ms: Vec<Match> = (0..10).map(|i| m(i as f64, 2.0, 3.0, 3.0)).collect();
        assert_eq!(iou_matching_score(&ms, &half, &full), Some(0.5));
    }

    #[test]
    fn repeatability_cases() {
        let a: Vec<Point2> = (0..10).map(|i| Point2::new(i as f64 * 10.0, 5.0)).collect();
        let id = Homography::identity();
        assert_eq!(repeatability(&a, &a, &id, 1.0), Some(1.0));
        let far: Vec<Point2> = a.iter().map(|p| Point2::new(p.x, p.y + 100.0)).collect();
        assert_eq!(repeatability(&a, &far, &id, 4.0), Some(0.0));
        let half: Vec<Point2> = a[..5].iter().copied().chain(far[..5].iter().copied()).collect();
        assert_eq!(repeatability(&a, &half, &id, 4.0), Some(0.5));
        assert_eq!(repeatability(&[], &a, &id, 4.0), None);
        let t = Homography::translation(3.0, -2.0);
        let moved: Vec<Point2> = a.iter().map(|p| t.try_apply(*p).unwrap()).collect();
        assert_eq!(repeatability(&a, &moved, &t, 0.1), Some(1.0));
    }

    #[test]
    fn reprojection_from_oracle_matches() {
        let h = Homography::new([[1.02, 0.01, 3.0], [-0.015, 0.99, -2.0], [1e-4, -5e-5, 1.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ms: Vec<Match> = (0..40)
            .map(|_| {
                let a = Point2::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..80.0));
                Match::new(a, h.try_apply(a).unwrap(), 1.0)
            })
            .collect();
        let out = reprojection_from_matches(&ms, None, None, &RansacConfig::default(), &mut rng).unwrap().unwrap();
        assert!(out.error < 1e-6);
        assert_eq!(out.inliers, 40);
        assert!(reprojection_from_matches(&ms[..3], None, None, &RansacConfig::default(), &mut rng).unwrap().is_none());
        let none = Mask::new(100, 80, false);
        assert!(reprojection_from_matches(&ms, Some(&none), None, &RansacConfig::default(), &mut rng).unwrap().is_none());
    }

    #[test]
    fn report_averages_over_samples() {
        let d = dmap_with(&[(20, 10, 5.0), (30, 12, 5.0)]);
        let good = vec![m(20.0, 10.0, 15.0, 10.0), m(30.0, 12.0, 25.0, 12.0)];
        let mixed = vec![m(20.0, 10.0, 15.0, 10.0), m(30.0, 12.0, 10.0, 12.0)];
        let r = disparity_report(&[(good, d.clone()), (mixed, d)], &[3.0]);
        assert_eq!(r.precisions, vec![(3.0, Some(0.75))]);
        assert_eq!(r.valid_matches, vec![2, 2]);
        assert!(r.to_string().contains("precision@3: 0.7500"));
    }
}
