//! Planar projective geometry: homography sampling and warping,
//! Hartley-normalized DLT, RANSAC and reprojection error.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::representation::{Frame1, Mask};

const DEPTH_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A correspondence between a point in frame A and one in frame B.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    pub a: Point2,
    pub b: Point2,
    pub score: f64,
}

impl Match {
    pub fn new(a: Point2, b: Point2, score: f64) -> Self {
        Match { a, b, score }
    }

    pub fn swapped(&self) -> Match {
        Match::new(self.b, self.a, self.score)
    }
}

pub type Mat3 = [[f64; 3]; 3];

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn adjugate(m: &Mat3) -> Mat3 {
    [
        [
            m[1][1] * m[2][2] - m[1][2] * m[2][1],
            m[0][2] * m[2][1] - m[0][1] * m[2][2],
            m[0][1] * m[1][2] - m[0][2] * m[1][1],
        ],
        [
            m[1][2] * m[2][0] - m[1][0] * m[2][2],
            m[0][0] * m[2][2] - m[0][2] * m[2][0],
            m[0][2] * m[1][0] - m[0][0] * m[1][2],
        ],
        [
            m[1][0] * m[2][1] - m[1][1] * m[2][0],
            m[0][1] * m[2][0] - m[0][0] * m[2][1],
            m[0][0] * m[1][1] - m[0][1] * m[1][0],
        ],
    ]
}

/// Invertible 3×3 projective map, normalized so `m[2][2] = 1` (or to unit
/// Frobenius norm when `m[2][2]` is close to zero).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography {
    m: Mat3,
}

impl Homography {
    pub fn new(m: Mat3) -> Result<Self> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("homography has non-finite entries"));
        }
        let frob = m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        if frob == 0.0 {
            return Err(Error::Degenerate);
        }
        let scale = if m[2][2].abs() > 1e-8 * frob { m[2][2] } else { frob };
        let mut n = m;
        n.iter_mut().flatten().for_each(|v| *v /= scale);
        if det3(&n).abs() <= 1e-12 {
            return Err(Error::Degenerate);
        }
        Ok(Homography { m: n })
    }

    pub fn identity() -> Self {
        Homography {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Homography {
            m: [[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]],
        }
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.m
    }

    pub fn inverse(&self) -> Homography {
        // Invertibility is a construction invariant.
        Homography::new(adjugate(&self.m)).expect("homography is invertible")
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Homography) -> Result<Homography> {
        Homography::new(mat_mul(&self.m, &other.m))
    }

    pub fn try_apply(&self, p: Point2) -> Option<Point2> {
        let m = &self.m;
        let w = m[2][0] * p.x + m[2][1] * p.y + m[2][2];
        if w.abs() <= DEPTH_EPS {
            return None;
        }
        Some(Point2::new(
            (m[0][0] * p.x + m[0][1] * p.y + m[0][2]) / w,
            (m[1][0] * p.x + m[1][1] * p.y + m[1][2]) / w,
        ))
    }

    /// Largest absolute entry difference between two normalized matrices.
    pub fn max_abs_diff(&self, other: &Homography) -> f64 {
        self.m
            .iter()
            .flatten()
            .zip(other.m.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn warp_point(h: &Homography, p: Point2) -> Result<Point2> {
    h.try_apply(p).ok_or(Error::PointAtInfinity)
}

/// Bounds for random homographies. Translation is a fraction of the frame
/// size; rotation, scale and perspective act about the frame center, with
/// perspective expressed as the projective coefficient in coordinates
/// normalized to `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HomographySampleConfig {
    pub max_translation: f64,
    pub max_rotation: f64,
    pub scale_range: (f64, f64),
    pub max_perspective: f64,
}

impl Default for HomographySampleConfig {
    fn default() -> Self {
        HomographySampleConfig {
            max_translation: 0.1,
            max_rotation: 0.3,
            scale_range: (0.8, 1.2),
            max_perspective: 0.1,
        }
    }
}

impl HomographySampleConfig {
    pub fn zero() -> Self {
        HomographySampleConfig {
            max_translation: 0.0,
            max_rotation: 0.0,
            scale_range: (1.0, 1.0),
            max_perspective: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(0.0..0.5).contains(&self.max_translation) {
            return Err(Error::invalid("max_translation must lie in [0, 0.5)"));
        }
        if !(0.0..=std::f64::consts::PI).contains(&self.max_rotation) {
            return Err(Error::invalid("max_rotation must lie in [0, pi]"));
        }
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::invalid("scale range must be positive and non-empty"));
        }
        if !(0.0..0.5).contains(&self.max_perspective) {
            return Err(Error::invalid("max_perspective must lie in [0, 0.5)"));
        }
        Ok(())
    }
}

/// Parameters of one similarity-plus-perspective map about the frame center.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct WarpParams {
    /// Pixels.
    pub tx: f64,
    pub ty: f64,
    /// Radians.
    pub rotation: f64,
    pub scale: f64,
    /// Projective coefficients in center-normalized coordinates.
    pub px: f64,
    pub py: f64,
}

impl WarpParams {
    pub fn identity() -> Self {
        WarpParams {
            scale: 1.0,
            ..Default::default()
        }
    }

    pub fn lerp(&self, other: &WarpParams, s: f64) -> WarpParams {
        let l = |a: f64, b: f64| a + (b - a) * s;
        WarpParams {
            tx: l(self.tx, other.tx),
            ty: l(self.ty, other.ty),
            rotation: l(self.rotation, other.rotation),
            scale: l(self.scale, other.scale),
            px: l(self.px, other.px),
            py: l(self.py, other.py),
        }
    }

    /// `T(tx, ty) ∘ C ∘ R ∘ S ∘ P ∘ C⁻¹` where `C` maps normalized
    /// coordinates to pixels around the frame center.
    pub fn to_homography(&self, width: usize, height: usize) -> Result<Homography> {
        let (hw, hh) = (width as f64 / 2.0, height as f64 / 2.0);
        let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
        let to_px: Mat3 = [[hw, 0.0, cx], [0.0, hh, cy], [0.0, 0.0, 1.0]];
        let to_norm: Mat3 = [[1.0 / hw, 0.0, -cx / hw], [0.0, 1.0 / hh, -cy / hh], [0.0, 0.0, 1.0]];
        let (s, c) = self.rotation.sin_cos();
        // Rotation and scale are applied in pixel units so that aspect ratio
        // does not shear the result.
        let rs: Mat3 = [
            [self.scale * c, -self.scale * s * hh / hw, 0.0],
            [self.scale * s * hw / hh, self.scale * c, 0.0],
            [0.0, 0.0, 1.0],
        ];
        let persp: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [self.px, self.py, 1.0]];
        let trans: Mat3 = [[1.0, 0.0, self.tx], [0.0, 1.0, self.ty], [0.0, 0.0, 1.0]];
        let m = mat_mul(&trans, &mat_mul(&to_px, &mat_mul(&rs, &mat_mul(&persp, &to_norm))));
        Homography::new(m)
    }
}

/// Draws a random homography for a `width×height` frame.
pub fn sample_homography<R: Rng + ?Sized>(
    cfg: &HomographySampleConfig,
    width: usize,
    height: usize,
    rng: &mut R,
) -> Result<Homography> {
    cfg.validate()?;
    let mut sym = |bound: f64| if bound > 0.0 { rng.gen_range(-bound..=bound) } else { 0.0 };
    let tx = sym(cfg.max_translation) * width as f64;
    let ty = sym(cfg.max_translation) * height as f64;
    let rotation = sym(cfg.max_rotation);
    let px = sym(cfg.max_perspective);
    let py = sym(cfg.max_perspective);
    let (lo, hi) = cfg.scale_range;
    let scale = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    WarpParams {
        tx,
        ty,
        rotation,
        scale,
        px,
        py,
    }
    .to_homography(width, height)
}

/// Bilinear sample at a sub-pixel location; `None` outside `[0, W-1]×[0, H-1]`.
pub fn sample_bilinear(frame: &Frame1, x: f64, y: f64) -> Option<f64> {
    let (w, h) = (frame.width(), frame.height());
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return None;
    }
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let p = |xx, yy| frame.get(xx, yy) as f64;
    let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
    let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
    Some(top * (1.0 - fy) + bottom * fy)
}

/// Warps `frame` by `h` using inverse-mapped bilinear sampling. Output
/// pixels whose preimage falls outside the source take `fill` and are
/// marked invalid.
pub fn warp_frame(h: &Homography, frame: &Frame1, fill: u8) -> (Frame1, Mask) {
    let inv = h.inverse();
    let (w, hgt) = (frame.width(), frame.height());
    let mut out = Frame1::filled(w, hgt, fill);
    let mut valid = Mask::new(w, hgt, false);
    for y in 0..hgt {
        for x in 0..w {
            let src = inv.try_apply(Point2::new(x as f64, y as f64));
            if let Some(v) = src.and_then(|s| sample_bilinear(frame, s.x, s.y)) {
                out.set(x, y, v.round().clamp(0.0, 255.0) as u8);
                valid.set(x, y, true);
            }
        }
    }
    (out, valid)
}

/// Similarity transform taking points to zero centroid and mean distance √2.
fn hartley_normalizer(points: impl Iterator<Item = Point2> + Clone) -> Result<Mat3> {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
    let (cx, cy) = (sx / n, sy / n);
    let mean_dist = points.map(|p| (p.x - cx).hypot(p.y - cy)).sum::<f64>() / n;
    if !(mean_dist > 1e-12) || !mean_dist.is_finite() {
        return Err(Error::Degenerate);
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok([[s, 0.0, -s * cx], [0.0, s, -s * cy], [0.0, 0.0, 1.0]])
}

fn apply_affine(m: &Mat3, p: Point2) -> Point2 {
    Point2::new(
        m[0][0] * p.x + m[0][1] * p.y + m[0][2],
        m[1][0] * p.x + m[1][1] * p.y + m[1][2],
    )
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the matrix whose columns are eigenvectors.
pub fn jacobi_eigen<const N: usize>(mut a: [[f64; N]; N]) -> ([f64; N], [[f64; N]; N]) {
    let mut v = [[0.0; N]; N];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let total: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..N)
            .flat_map(|i| (0..N).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-12 * total.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..N {
            for q in p + 1..N {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..N {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..N {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut vals = [0.0; N];
    for (i, val) in vals.iter_mut().enumerate() {
        *val = a[i][i];
    }
    (vals, v)
}

/// Normalized direct linear transform. Maps `a` points onto `b` points.
pub fn dlt_homography(pairs: &[Match]) -> Result<Homography> {
    if pairs.len() < 4 {
        return Err(Error::invalid(format!(
            "DLT needs at least 4 correspondences, got {}",
            pairs.len()
        )));
    }
    if pairs.iter().any(|m| !(m.a.x.is_finite() && m.a.y.is_finite() && m.b.x.is_finite() && m.b.y.is_finite())) {
        return Err(Error::invalid("non-finite correspondence"));
    }
    let ta = hartley_normalizer(pairs.iter().map(|m| m.a))?;
    let tb = hartley_normalizer(pairs.iter().map(|m| m.b))?;
    let mut ata = [[0.0f64; 9]; 9];
    for m in pairs {
        let p = apply_affine(&ta, m.a);
        let q = apply_affine(&tb, m.b);
        let rows = [
            [-p.x, -p.y, -1.0, 0.0, 0.0, 0.0, q.x * p.x, q.x * p.y, q.x],
            [0.0, 0.0, 0.0, -p.x, -p.y, -1.0, q.y * p.x, q.y * p.y, q.y],
        ];
        for r in &rows {
            for i in 0..9 {
                for j in 0..9 {
                    ata[i][j] += r[i] * r[j];
                }
            }
        }
    }
    let (vals, vecs) = jacobi_eigen(ata);
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
    let largest = vals[order[8]].abs().max(f64::MIN_POSITIVE);
    // A unique solution has exactly one (near-)zero eigenvalue.
    if vals[order[1]].abs() <= 1e-10 * largest {
        return Err(Error::Degenerate);
    }
    let h = vecs.map(|row| row[order[0]]);
    let hn: Mat3 = [[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], h[8]]];
    let tb_inv = adjugate(&tb);
    let m = mat_mul(&tb_inv, &mat_mul(&hn, &ta));
    Homography::new(m).map_err(|_| Error::Degenerate)
}

/// Twice the signed area of triangle `abc`.
fn cross(a: Point2, b: Point2, c: Point2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Whether any three of four points are (nearly) collinear.
pub fn has_collinear_triple(pts: [Point2; 4]) -> bool {
    let scale = pts
        .iter()
        .flat_map(|p| pts.iter().map(move |q| p.distance(q)))
        .fold(0.0, f64::max);
    let eps = 1e-9 * scale * scale;
    [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)]
        .iter()
        .any(|&(i, j, k)| cross(pts[i], pts[j], pts[k]).abs() <= eps)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacConfig {
    /// Symmetric transfer error threshold, pixels.
    pub threshold: f64,
    pub max_iters: usize,
    pub confidence: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            threshold: 3.0,
            max_iters: 2000,
            confidence: 0.999,
        }
    }
}

/// Mean of forward (`H·a` vs `b`) and backward (`H⁻¹·b` vs `a`) distances.
pub fn symmetric_transfer_error(h: &Homography, inv: &Homography, m: &Match) -> f64 {
    match (h.try_apply(m.a), inv.try_apply(m.b)) {
        (Some(fa), Some(bb)) => 0.5 * (fa.distance(&m.b) + bb.distance(&m.a)),
        _ => f64::INFINITY,
    }
}

fn score_model(h: &Homography, matches: &[Match], threshold: f64) -> (usize, f64, Vec<bool>) {
    let inv = h.inverse();
    let mut count = 0;
    let mut total = 0.0;
    let flags = matches
        .iter()
        .map(|m| {
            let e = symmetric_transfer_error(h, &inv, m);
            let inlier = e < threshold;
            if inlier {
                count += 1;
                total += e;
            }
            inlier
        })
        .collect();
    (count, total, flags)
}

fn adaptive_iterations(inlier_ratio: f64, confidence: f64, cap: usize) -> usize {
    let w4 = inlier_ratio.powi(4);
    if w4 >= 1.0 - 1e-12 {
        return 1;
    }
    if w4 <= 0.0 {
        return cap;
    }
    let n = (1.0 - confidence).ln() / (1.0 - w4).ln();
    if n.is_finite() {
        (n.ceil() as usize).clamp(1, cap)
    } else {
        cap
    }
}

/// Four-point RANSAC mapping `a` points onto `b`, refit by DLT on the best
/// consensus set. Returns the model and per-match inlier flags.
pub fn ransac_homography<R: Rng + ?Sized>(
    matches: &[Match],
    cfg: &RansacConfig,
    rng: &mut R,
) -> Result<(Homography, Vec<bool>)> {
    if matches.len() < 4 {
        return Err(Error::invalid(format!(
            "RANSAC needs at least 4 matches, got {}",
            matches.len()
        )));
    }
    let mut best: Option<(usize, f64, Homography)> = None;
    let mut needed = cfg.max_iters;
    let mut iter = 0;
    while iter < needed.min(cfg.max_iters) {
        iter += 1;
        let idx = index::sample(rng, matches.len(), 4);
        let sample: Vec<Match> = idx.iter().map(|i| matches[i]).collect();
        let src = [sample[0].a, sample[1].a, sample[2].a, sample[3].a];
        let dst = [sample[0].b, sample[1].b, sample[2].b, sample[3].b];
        if has_collinear_triple(src) || has_collinear_triple(dst) {
            continue;
        }
        let Ok(h) = dlt_homography(&sample) else { continue };
        let (count, err, _) = score_model(&h, matches, cfg.threshold);
        let better = match &best {
            None => true,
            Some((c, e, _)) => count > *c || (count == *c && err < *e),
        };
        if better {
            best = Some((count, err, h));
            needed = adaptive_iterations(count as f64 / matches.len() as f64, cfg.confidence, cfg.max_iters);
        }
    }
    let Some((count, _, h)) = best else {
        return Err(Error::NoConsensus);
    };
    if count < 4 {
        return Err(Error::NoConsensus);
    }
    let (_, _, flags) = score_model(&h, matches, cfg.threshold);
    let inliers: Vec<Match> = matches.iter().zip(&flags).filter(|(_, &f)| f).map(|(m, _)| *m).collect();
    let refit = dlt_homography(&inliers).unwrap_or(h);
    let (refit_count, _, refit_flags) = score_model(&refit, matches, cfg.threshold);
    if refit_count >= count {
        Ok((refit, refit_flags))
    } else {
        Ok((h, flags))
    }
}

/// Mean distance between `reference[i]` and `H·moved[i]`.
pub fn reprojection_error(h: &Homography, reference: &[Point2], moved: &[Point2]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::invalid("reprojection error of an empty point set"));
    }
    if reference.len() != moved.len() {
        return Err(Error::shape(reference.len(), moved.len()));
    }
    let mut total = 0.0;
    for (r, m) in reference.iter().zip(moved) {
        total += warp_point(h, *m)?.distance(r);
    }
    Ok(total / reference.len() as f64)
}
