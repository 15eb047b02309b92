//! Deterministic synthetic event streams with exact ground-truth geometry.
//!
//! A planar pattern moves under a homography `H(t)` obtained by linear
//! interpolation of warp parameters. Frames are rasterized every `step`
//! microseconds with supersampling, and each pixel emits an event whenever
//! its intensity has moved by the contrast threshold since its last event,
//! timestamped by linear interpolation inside the step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::event_model::{Event, EventStream, Geometry, Micros, Polarity};
use crate::geometry::{Homography, Match, Point2, WarpParams};
use crate::representation::Mask;

/// Intensity outside the pattern region.
pub const BACKGROUND: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pattern {
    /// Alternating squares of the given side over the central region.
    Checkerboard { square: f64 },
    /// Random convex polygons over a flat central region.
    RandomPolygons { count: usize },
    /// One bright square of the given side, centered, on a black background.
    SingleSquare { side: f64 },
}

impl std::str::FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "checkerboard" => Ok(Pattern::Checkerboard { square: 12.0 }),
            "random_polygons" | "polygons" => Ok(Pattern::RandomPolygons { count: 8 }),
            "single_square" | "square" => Ok(Pattern::SingleSquare { side: 24.0 }),
            other => Err(Error::invalid(format!("unknown pattern '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub pattern: Pattern,
    /// Warp at `t = 0` and at `t = duration`; parameters are interpolated
    /// linearly in between.
    pub start: WarpParams,
    pub end: WarpParams,
    pub duration: Micros,
    /// Intensity change (on a `[0, 1]` scale) that triggers one event.
    pub contrast: f64,
    /// Rasterization step.
    pub step: Micros,
    /// Uniform noise events per pixel per second.
    pub noise_rate: f64,
    /// Subsamples per pixel side.
    pub supersample: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 128,
            height: 96,
            pattern: Pattern::Checkerboard { square: 12.0 },
            start: WarpParams::identity(),
            end: WarpParams {
                tx: 12.0,
                ty: 6.0,
                rotation: 0.08,
                scale: 1.05,
                px: 0.0,
                py: 0.0,
            },
            duration: 300_000,
            contrast: 0.15,
            step: 1_000,
            noise_rate: 0.2,
            supersample: 4,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.width > u16::MAX as usize + 1 || self.height > u16::MAX as usize + 1 {
            return Err(Error::invalid("scene geometry must be non-empty and fit 16-bit coordinates"));
        }
        if !(1..=1_000).contains(&self.step) {
            return Err(Error::invalid("simulation step must lie in [1, 1000] us"));
        }
        if self.duration < 10 * self.step {
            return Err(Error::invalid("duration must be at least ten simulation steps"));
        }
        if !(self.contrast > 0.0 && self.contrast.is_finite()) {
            return Err(Error::invalid("contrast threshold must be positive"));
        }
        if !(self.noise_rate >= 0.0 && self.noise_rate.is_finite()) {
            return Err(Error::invalid("noise rate must be non-negative"));
        }
        if self.supersample == 0 {
            return Err(Error::invalid("supersample must be positive"));
        }
        match self.pattern {
            Pattern::Checkerboard { square } if !(square > 0.0) => {
                return Err(Error::invalid("checkerboard square must be positive"))
            }
            Pattern::SingleSquare { side } if !(side > 0.0) => {
                return Err(Error::invalid("square side must be positive"))
            }
            _ => {}
        }
        // Determinant of the interpolated warp must keep one sign.
        let steps = 16;
        let mut sign = 0.0f64;
        for k in 0..=steps {
            let h = self.warp_at(self.duration * k / steps)?;
            let m = h.matrix();
            let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
            if sign != 0.0 && det.signum() != sign {
                return Err(Error::invalid("scene homography is not invertible throughout"));
            }
            sign = det.signum();
        }
        Ok(())
    }

    /// Reference-to-sensor homography at time `t`.
    pub fn warp_at(&self, t: Micros) -> Result<Homography> {
        let s = t as f64 / self.duration as f64;
        self.start.lerp(&self.end, s).to_homography(self.width, self.height)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Rect {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl Rect {
    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// Convex polygon with counter-clockwise vertices.
#[derive(Clone, Debug, PartialEq)]
struct Polygon {
    vertices: Vec<Point2>,
    intensity: f64,
}

impl Polygon {
    fn contains(&self, x: f64, y: f64) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| {
            let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
            (b.x - a.x) * (y - a.y) - (b.y - a.y) * (x - a.x) >= 0.0
        })
    }
}

/// The pattern in reference coordinates.
#[derive(Clone, Debug, PartialEq)]
struct Plane {
    region: Rect,
    kind: Pattern,
    polygons: Vec<Polygon>,
}

const LOW: f64 = 0.15;
const HIGH: f64 = 0.85;

impl Plane {
    fn new(cfg: &SceneConfig) -> Plane {
        let (w, h) = (cfg.width as f64, cfg.height as f64);
        let region = match cfg.pattern {
            Pattern::SingleSquare { side } => Rect {
                x0: (w - side) / 2.0,
                y0: (h - side) / 2.0,
                x1: (w + side) / 2.0,
                y1: (h + side) / 2.0,
            },
            _ => Rect {
                x0: (0.15 * w).round(),
                y0: (0.15 * h).round(),
                x1: (0.85 * w).round(),
                y1: (0.85 * h).round(),
            },
        };
        let polygons = match cfg.pattern {
            Pattern::RandomPolygons { count } => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
                (0..count).map(|_| random_polygon(&region, &mut rng)).collect()
            }
            _ => Vec::new(),
        };
        Plane {
            region,
            kind: cfg.pattern,
            polygons,
        }
    }

    fn intensity(&self, x: f64, y: f64) -> f64 {
        if !self.region.contains(x, y) {
            return match self.kind {
                Pattern::SingleSquare { .. } => 0.0,
                _ => BACKGROUND,
            };
        }
        match self.kind {
            Pattern::SingleSquare { .. } => 1.0,
            Pattern::Checkerboard { square } => {
                let i = ((x - self.region.x0) / square).floor() as i64;
                let j = ((y - self.region.y0) / square).floor() as i64;
                if (i + j).rem_euclid(2) == 0 {
                    HIGH
                } else {
                    LOW
                }
            }
            Pattern::RandomPolygons { .. } => self
                .polygons
                .iter()
                .rev()
                .find(|p| p.contains(x, y))
                .map_or(0.35, |p| p.intensity),
        }
    }

    /// Corners of the pattern in reference coordinates.
    fn corners(&self) -> Vec<Point2> {
        let r = &self.region;
        let mut out = vec![
            Point2::new(r.x0, r.y0),
            Point2::new(r.x1, r.y0),
            Point2::new(r.x0, r.y1),
            Point2::new(r.x1, r.y1),
        ];
        match self.kind {
            Pattern::Checkerboard { square } => {
                let mut y = r.y0 + square;
                while y < r.y1 - 1e-9 {
                    let mut x = r.x0 + square;
                    while x < r.x1 - 1e-9 {
                        out.push(Point2::new(x, y));
                        x += square;
                    }
                    y += square;
                }
            }
            Pattern::RandomPolygons { .. } => {
                out.extend(self.polygons.iter().flat_map(|p| p.vertices.iter().copied()));
            }
            Pattern::SingleSquare { .. } => {}
        }
        out
    }
}

fn random_polygon(region: &Rect, rng: &mut ChaCha8Rng) -> Polygon {
    let rw = region.x1 - region.x0;
    let rh = region.y1 - region.y0;
    let radius = rng.gen_range(0.08..0.2) * rw.min(rh);
    let cx = rng.gen_range(region.x0 + radius..region.x1 - radius);
    let cy = rng.gen_range(region.y0 + radius..region.y1 - radius);
    let n = rng.gen_range(3..=5);
    let mut angles: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    let vertices = angles
        .iter()
        .map(|a| {
            let r = radius * rng.gen_range(0.7..1.0);
            Point2::new(cx + r * a.cos(), cy + r * a.sin())
        })
        .collect();
    let intensity = if rng.gen_bool(0.5) {
        rng.gen_range(0.0..0.15)
    } else {
        rng.gen_range(0.6..1.0)
    };
    Polygon { vertices, intensity }
}

/// Generated events plus the scene they came from.
#[derive(Clone, Debug)]
pub struct SyntheticSequence {
    pub events: EventStream,
    cfg: SceneConfig,
    plane: Plane,
}

impl SyntheticSequence {
    pub fn config(&self) -> &SceneConfig {
        &self.cfg
    }

    pub fn homography_at(&self, t: Micros) -> Result<Homography> {
        self.cfg.warp_at(t)
    }

    /// Exact map from sensor positions at `t1` to sensor positions at `t2`.
    pub fn gt_homography(&self, t1: Micros, t2: Micros) -> Result<Homography> {
        if t1 == t2 {
            return Ok(Homography::identity());
        }
        self.homography_at(t2)?.compose(&self.homography_at(t1)?.inverse())
    }

    /// Pattern corners at time `t` that fall on the sensor.
    pub fn corner_tracks(&self, t: Micros) -> Result<Vec<Point2>> {
        let h = self.homography_at(t)?;
        let (w, hh) = (self.cfg.width as f64, self.cfg.height as f64);
        Ok(self
            .plane
            .corners()
            .into_iter()
            .filter_map(|c| h.try_apply(c))
            .filter(|p| p.x >= 0.0 && p.y >= 0.0 && p.x <= w - 1.0 && p.y <= hh - 1.0)
            .collect())
    }

    /// Sensor pixels whose center lies on the pattern region at time `t`.
    pub fn planar_mask(&self, t: Micros) -> Result<Mask> {
        let inv = self.homography_at(t)?.inverse();
        let (w, h) = (self.cfg.width, self.cfg.height);
        let mut m = Mask::new(w, h, false);
        for y in 0..h {
            for x in 0..w {
                if let Some(q) = inv.try_apply(Point2::new(x as f64, y as f64)) {
                    m.set(x, y, self.plane.region.contains(q.x, q.y));
                }
            }
        }
        Ok(m)
    }
}

/// Supersampled intensity of every pixel under the given sensor-to-reference
/// map, one row.
fn rasterize_row(plane: &Plane, inv: &Homography, y: usize, width: usize, ss: usize, out: &mut [f64]) {
    let step = 1.0 / ss as f64;
    let m = inv.matrix();
    for (x, o) in out.iter_mut().enumerate().take(width) {
        let mut acc = 0.0;
        for sy in 0..ss {
            let py = y as f64 - 0.5 + (sy as f64 + 0.5) * step;
            for sx in 0..ss {
                let px = x as f64 - 0.5 + (sx as f64 + 0.5) * step;
                let w = m[2][0] * px + m[2][1] * py + m[2][2];
                let qx = (m[0][0] * px + m[0][1] * py + m[0][2]) / w;
                let qy = (m[1][0] * px + m[1][1] * py + m[1][2]) / w;
                acc += plane.intensity(qx, qy);
            }
        }
        *o = acc / (ss * ss) as f64;
    }
}

/// Renders the scene and converts brightness changes to events.
pub fn generate(cfg: &SceneConfig) -> Result<SyntheticSequence> {
    cfg.validate()?;
    let plane = Plane::new(cfg);
    let (w, h) = (cfg.width, cfg.height);
    let n_steps = (cfg.duration / cfg.step) as usize;
    let inverses: Vec<Homography> = (0..=n_steps)
        .map(|k| Ok(cfg.warp_at(k as Micros * cfg.step)?.inverse()))
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<Event>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut prev = vec![0.0; w];
            let mut cur = vec![0.0; w];
            rasterize_row(&plane, &inverses[0], y, w, cfg.supersample, &mut prev);
            let mut level = prev.clone();
            let mut events = Vec::new();
            for (k, inv) in inverses.iter().enumerate().skip(1) {
                rasterize_row(&plane, inv, y, w, cfg.supersample, &mut cur);
                let t0 = (k as Micros - 1) * cfg.step;
                for x in 0..w {
                    let (a, b) = (prev[x], cur[x]);
                    if a == b {
                        continue;
                    }
                    let sign = if b > a { 1.0 } else { -1.0 };
                    // Each crossing of level ± C inside this step.
                    while (b - level[x]) * sign >= cfg.contrast {
                        level[x] += sign * cfg.contrast;
                        let frac = ((level[x] - a) / (b - a)).clamp(0.0, 1.0);
                        let t = (t0 + (frac * cfg.step as f64).round() as Micros).clamp(t0 + 1, t0 + cfg.step);
                        let p = if sign > 0.0 { Polarity::Positive } else { Polarity::Negative };
                        events.push(Event::new(x as u16, y as u16, t, p));
                    }
                }
                std::mem::swap(&mut prev, &mut cur);
            }
            events
        })
        .collect();
    let mut events: Vec<Event> = rows.into_iter().flatten().collect();
    if cfg.noise_rate > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let lambda = cfg.noise_rate * (w * h) as f64 * cfg.duration as f64 * 1e-6;
        let count = Poisson::new(lambda)
            .map_err(|e| Error::invalid(format!("noise rate: {e}")))?
            .sample(&mut rng) as usize;
        for _ in 0..count {
            let x = rng.gen_range(0..w) as u16;
            let y = rng.gen_range(0..h) as u16;
            let t = rng.gen_range(1..=cfg.duration);
            let p = if rng.gen_bool(0.5) { Polarity::Positive } else { Polarity::Negative };
            events.push(Event::new(x, y, t, p));
        }
    }
    let events = EventStream::new(events, Geometry::new(w, h))?;
    Ok(SyntheticSequence {
        events,
        cfg: *cfg,
        plane,
    })
}

/// `n` points on the pattern at `t1` paired with their exact positions at
/// `t2`. Both ends lie on the sensor and inside the planar mask.
pub fn gt_correspondences<R: Rng + ?Sized>(
    seq: &SyntheticSequence,
    t1: Micros,
    t2: Micros,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Match>> {
    let (h1, h2) = (seq.homography_at(t1)?, seq.homography_at(t2)?);
    let (m1, m2) = (seq.planar_mask(t1)?, seq.planar_mask(t2)?);
    let r = seq.plane.region;
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > 1000 * n.max(1) {
            return Err(Error::invalid("pattern is not visible at both times"));
        }
        let q = Point2::new(rng.gen_range(r.x0..r.x1), rng.gen_range(r.y0..r.y1));
        let (Some(a), Some(b)) = (h1.try_apply(q), h2.try_apply(q)) else { continue };
        if m1.contains_point(a.x, a.y) && m2.contains_point(b.x, b.y) {
            out.push(Match::new(a, b, 1.0));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::dlt_homography;

    fn square_scene(speed_px_per_ms: f64, noise: f64) -> SceneConfig {
        SceneConfig {
            width: 64,
            height: 48,
            pattern: Pattern::SingleSquare { side: 16.0 },
            start: WarpParams::identity(),
            end: WarpParams {
                tx: speed_px_per_ms * 20.0,
                ..WarpParams::identity()
            },
            duration: 20_000,
            step: 250,
            noise_rate: noise,
            ..Default::default()
        }
    }

    #[test]
    fn static_scene_is_silent() {
        let cfg = SceneConfig {
            end: WarpParams::identity(),
            noise_rate: 0.0,
            ..Default::default()
        };
        assert!(generate(&cfg).unwrap().events.is_empty());
    }

    #[test]
    fn translating_square_fires_only_on_edges() {
        let seq = generate(&square_scene(0.5, 0.0)).unwrap();
        assert!(!seq.events.is_empty());
        // The square covers [24, 40)×[16, 32) at t = 0 and moves right by
        // 10 px, so pixels 35..=39 of rows 17..=31 stay covered throughout.
        for e in seq.events.events() {
            let interior = (17..=31).contains(&e.y) && (35..=39).contains(&e.x);
            assert!(!interior, "interior event {e:?}");
            assert!((16..=32).contains(&e.y), "event outside the square rows: {e:?}");
        }
        let pos = seq.events.events().iter().filter(|e| e.p == Polarity::Positive).count();
        let neg = seq.events.len() - pos;
        assert!(pos > 0 && neg > 0);
    }

    #[test]
    fn same_seed_same_stream() {
        let cfg = SceneConfig {
            pattern: Pattern::RandomPolygons { count: 5 },
            duration: 40_000,
            seed: 3,
            ..Default::default()
        };
        assert_eq!(generate(&cfg).unwrap().events, generate(&cfg).unwrap().events);
    }

    #[test]
    fn event_rate_is_linear_in_speed() {
        let base = generate(&square_scene(0.25, 0.0)).unwrap().events.len() as f64;
        let fast = generate(&square_scene(1.0, 0.0)).unwrap().events.len() as f64;
        let ratio = fast / base;
        assert!((ratio - 4.0).abs() <= 0.4, "ratio {ratio}");
    }

    #[test]
    fn noise_is_uniform() {
        let mut cfg = square_scene(0.0, 200.0);
        cfg.end = WarpParams::identity();
        let mut chi_total = 0.0;
        let seeds = 5;
        for seed in 0..seeds {
            cfg.seed = seed;
            let ev = generate(&cfg).unwrap().events;
            let mut bins = [0.0f64; 16];
            for e in ev.events() {
                bins[(e.y as usize * 4 / 48) * 4 + e.x as usize * 4 / 64] += 1.0;
            }
            let expect = ev.len() as f64 / 16.0;
            chi_total += bins.iter().map(|b| (b - expect).powi(2) / expect).sum::<f64>();
        }
        // Mean statistic over seeds; chi-square with 15 dof has p = 0.01 at 30.58.
        let mean = chi_total / seeds as f64;
        assert!(mean < 30.58, "chi {mean}");
    }

    #[test]
    fn gt_geometry_is_consistent() {
        let seq = generate(&SceneConfig {
            duration: 20_000,
            ..Default::default()
        })
        .unwrap();
        assert!(seq.gt_homography(5_000, 5_000).unwrap().max_abs_diff(&Homography::identity()) == 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ident = gt_correspondences(&seq, 7_000, 7_000, 20, &mut rng).unwrap();
        assert!(ident.iter().all(|m| m.a.distance(&m.b) < 1e-12));
        let pairs = gt_correspondences(&seq, 2_000, 18_000, 40, &mut rng).unwrap();
        let est = dlt_homography(&pairs).unwrap();
        assert!(est.max_abs_diff(&seq.gt_homography(2_000, 18_000).unwrap()) < 1e-6);
        let (m1, m2) = (seq.planar_mask(2_000).unwrap(), seq.planar_mask(18_000).unwrap());
        assert!(pairs.iter().all(|p| m1.contains_point(p.a.x, p.a.y) && m2.contains_point(p.b.x, p.b.y)));
        let gt = seq.gt_homography(0, 20_000).unwrap();
        let (c0, c1) = (seq.corner_tracks(0).unwrap(), seq.corner_tracks(20_000).unwrap());
        assert!(!c0.is_empty());
        for p in &c0 {
            let q = gt.try_apply(*p).unwrap();
            if q.x >= 0.0 && q.y >= 0.0 && q.x <= 127.0 && q.y <= 95.0 {
                assert!(c1.iter().any(|c| c.distance(&q) < 1e-9));
            }
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            SceneConfig { step: 2_000, ..Default::default() },
            SceneConfig { duration: 5_000, ..Default::default() },
            SceneConfig { contrast: 0.0, ..Default::default() },
            SceneConfig { end: WarpParams { scale: -1.0, ..WarpParams::identity() }, ..Default::default() },
        ] {
            assert!(generate(&cfg).is_err(), "{cfg:?}");
        }
    }
}
