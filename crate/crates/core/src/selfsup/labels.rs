//! Pseudo-labels: homographic adaptation of a bootstrap detector and
//! binarization to one-hot cell labels.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::PointDetector;
use crate::geometry::{sample_homography, warp_frame, Homography, HomographySampleConfig, Point2};
use crate::network::{Heatmap, CELL, DETECTOR_CHANNELS};
use crate::representation::Frame1;

/// Index of the "no keypoint" channel.
pub const DUSTBIN: usize = DETECTOR_CHANNELS - 1;
/// Training-time label threshold.
pub const DEFAULT_TAU_TRAIN: f64 = 0.005;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptationConfig {
    /// Views including the identity.
    pub n_homographies: usize,
    pub homography: HomographySampleConfig,
    /// Detections within this many pixels of a warp's invalid region are
    /// discarded; they respond to the artificial border, not the scene.
    pub border: usize,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        AdaptationConfig {
            n_homographies: 32,
            homography: HomographySampleConfig::default(),
            border: 3,
        }
    }
}

/// The identity followed by `n − 1` sampled homographies.
pub fn adaptation_homographies<R: Rng + ?Sized>(
    n: usize,
    cfg: &HomographySampleConfig,
    width: usize,
    height: usize,
    rng: &mut R,
) -> Result<Vec<Homography>> {
    if n == 0 {
        return Err(Error::invalid("homographic adaptation needs at least one view"));
    }
    let mut hs = vec![Homography::identity()];
    for _ in 1..n {
        hs.push(sample_homography(cfg, width, height, rng)?);
    }
    Ok(hs)
}

fn near_invalid(valid: &crate::representation::Mask, x: usize, y: usize, r: usize) -> bool {
    let (w, h) = (valid.width(), valid.height());
    let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
    let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
    (y0..=y1).any(|yy| (x0..=x1).any(|xx| !valid.get(xx, yy)))
}

/// One view's point map in source coordinates and the set of source pixels
/// the view covers.
fn view_map<D: PointDetector + ?Sized>(
    frame: &Frame1,
    detector: &D,
    h: &Homography,
    border: usize,
) -> Result<(Vec<f64>, Vec<bool>)> {
    let (w, hgt) = (frame.width(), frame.height());
    let (warped, valid) = warp_frame(h, frame, 0);
    let inv = h.inverse();
    let mut map = vec![0.0f64; w * hgt];
    for k in detector.detect(&warped)? {
        let (xr, yr) = (k.x.round(), k.y.round());
        if xr < 0.0 || yr < 0.0 || xr >= w as f64 || yr >= hgt as f64 {
            continue;
        }
        if near_invalid(&valid, xr as usize, yr as usize, border) {
            continue;
        }
        let Some(q) = inv.try_apply(Point2::new(k.x, k.y)) else { continue };
        let (qx, qy) = (q.x.round(), q.y.round());
        if qx >= 0.0 && qy >= 0.0 && qx < w as f64 && qy < hgt as f64 {
            let i = qy as usize * w + qx as usize;
            map[i] = map[i].max(k.score.clamp(0.0, 1.0) as f64);
        }
    }
    let (wf, hf) = ((w - 1) as f64, (hgt - 1) as f64);
    let mut cover = vec![false; w * hgt];
    for y in 0..hgt {
        for x in 0..w {
            cover[y * w + x] = h
                .try_apply(Point2::new(x as f64, y as f64))
                .is_some_and(|p| p.x >= 0.0 && p.y >= 0.0 && p.x <= wf && p.y <= hf);
        }
    }
    Ok((map, cover))
}

/// Averages the detector's point maps over the given views, each mapped back
/// to the source frame, dividing by the number of views covering each pixel.
pub fn aggregate_views<D: PointDetector + ?Sized>(
    frame: &Frame1,
    detector: &D,
    views: &[Homography],
    border: usize,
) -> Result<Heatmap> {
    let (w, h) = (frame.width(), frame.height());
    let maps: Vec<(Vec<f64>, Vec<bool>)> = views
        .par_iter()
        .map(|hv| view_map(frame, detector, hv, border))
        .collect::<Result<_>>()?;
    let mut acc = vec![0.0f64; w * h];
    let mut count = vec![0u32; w * h];
    for (map, cover) in &maps {
        for i in 0..w * h {
            acc[i] += map[i];
            count[i] += cover[i] as u32;
        }
    }
    let data = acc
        .iter()
        .zip(&count)
        .map(|(&a, &c)| if c > 0 { (a / c as f64) as f32 } else { 0.0 })
        .collect();
    Heatmap::from_raw(w, h, data)
}

/// Aggregated detector response over the identity and `cfg.n_homographies − 1`
/// random warps.
pub fn homographic_adaptation<D: PointDetector + ?Sized, R: Rng + ?Sized>(
    frame: &Frame1,
    detector: &D,
    cfg: &AdaptationConfig,
    rng: &mut R,
) -> Result<Heatmap> {
    let views = adaptation_homographies(cfg.n_homographies, &cfg.homography, frame.width(), frame.height(), rng)?;
    aggregate_views(frame, detector, &views, cfg.border)
}

/// One label channel per 8×8 cell: `r·8 + c` of the cell's keypoint or the
/// dustbin.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelGrid {
    hc: usize,
    wc: usize,
    channels: Vec<u8>,
}

impl LabelGrid {
    pub fn dustbin(hc: usize, wc: usize) -> Self {
        LabelGrid {
            hc,
            wc,
            channels: vec![DUSTBIN as u8; hc * wc],
        }
    }

    pub fn from_channels(hc: usize, wc: usize, channels: Vec<u8>) -> Result<Self> {
        if channels.len() != hc * wc {
            return Err(Error::shape(hc * wc, channels.len()));
        }
        if let Some(c) = channels.iter().find(|&&c| c as usize >= DETECTOR_CHANNELS) {
            return Err(Error::Malformed(format!("label channel {c} out of range")));
        }
        Ok(LabelGrid { hc, wc, channels })
    }

    pub fn height(&self) -> usize {
        self.hc
    }

    pub fn width(&self) -> usize {
        self.wc
    }

    pub fn channels(&self) -> &[u8] {
        &self.channels
    }

    pub fn channel(&self, i: usize, j: usize) -> usize {
        self.channels[i * self.wc + j] as usize
    }

    /// The one-hot value of channel `k` at cell `(i, j)`.
    pub fn value(&self, k: usize, i: usize, j: usize) -> bool {
        self.channel(i, j) == k
    }

    pub fn keypoint_count(&self) -> usize {
        self.channels.iter().filter(|&&c| c as usize != DUSTBIN).count()
    }
}

/// Keeps pixels scoring strictly above `tau`; each cell takes its best
/// candidate, the first in raster order on ties. Pixels beyond the last full
/// cell are ignored.
pub fn binarize_labels(agg: &Heatmap, tau: f64) -> LabelGrid {
    let (hc, wc) = (agg.height() / CELL, agg.width() / CELL);
    let mut grid = LabelGrid::dustbin(hc, wc);
    for i in 0..hc {
        for j in 0..wc {
            let mut best: Option<(usize, f32)> = None;
            for r in 0..CELL {
                for c in 0..CELL {
                    let v = agg.get(CELL * j + c, CELL * i + r);
                    if (v as f64) > tau && best.is_none_or(|(_, b)| v > b) {
                        best = Some((r * CELL + c, v));
                    }
                }
            }
            if let Some((k, _)) = best {
                grid.channels[i * wc + j] = k as u8;
            }
        }
    }
    grid
}
