//! Harris corner response, used to bootstrap pseudo-labels.

use crate::error::{Error, Result};
use crate::features::{Keypoint, PointDetector};
use crate::representation::Frame1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HarrisParams {
    pub k: f64,
    /// Standard deviation of the Gaussian window over the structure tensor.
    pub sigma: f64,
    /// Responses below this fraction of the frame's maximum are dropped.
    pub rel_threshold: f64,
    /// Half-width of the local-maximum window.
    pub nms_radius: usize,
    pub max_points: usize,
}

impl Default for HarrisParams {
    fn default() -> Self {
        HarrisParams {
            k: 0.04,
            sigma: 1.5,
            rel_threshold: 0.01,
            nms_radius: 2,
            max_points: 1000,
        }
    }
}

impl HarrisParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.k > 0.0 && self.k < 0.25) {
            return Err(Error::invalid("harris needs sigma > 0 and k in (0, 0.25)"));
        }
        if !(0.0..=1.0).contains(&self.rel_threshold) {
            return Err(Error::invalid("harris rel_threshold must lie in [0, 1]"));
        }
        Ok(())
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable convolution with a symmetric kernel, replicating edges.
fn blur(src: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * src[y * w + clamp(x as isize + i as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * tmp[clamp(y as isize + i as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Per-pixel `det(M) − k·tr(M)²` of the Gaussian-weighted structure tensor
/// of Sobel gradients on intensities scaled to `[0, 1]`.
pub fn harris_response(frame: &Frame1, k: f64, sigma: f64) -> Vec<f64> {
    let (w, h) = (frame.width(), frame.height());
    let px = |x: isize, y: isize| {
        frame.get(x.clamp(0, w as isize - 1) as usize, y.clamp(0, h as isize - 1) as usize) as f64 / 255.0
    };
    let n = w * h;
    let (mut ixx, mut iyy, mut ixy) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1)
                - px(x - 1, y - 1)
                - 2.0 * px(x - 1, y)
                - px(x - 1, y + 1))
                / 8.0;
            let gy = (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1)
                - px(x - 1, y - 1)
                - 2.0 * px(x, y - 1)
                - px(x + 1, y - 1))
                / 8.0;
            let i = y as usize * w + x as usize;
            ixx[i] = gx * gx;
            iyy[i] = gy * gy;
            ixy[i] = gx * gy;
        }
    }
    let g = gaussian_kernel(sigma);
    let (sxx, syy, sxy) = (blur(&ixx, w, h, &g), blur(&iyy, w, h, &g), blur(&ixy, w, h, &g));
    (0..n)
        .map(|i| {
            let tr = sxx[i] + syy[i];
            sxx[i] * syy[i] - sxy[i] * sxy[i] - k * tr * tr
        })
        .collect()
}

/// Harris corners: positive local maxima above a fraction of the strongest
/// response, scored by response relative to that maximum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HarrisDetector {
    pub params: HarrisParams,
}

/// Floor below which a response counts as numerically zero.
const MIN_RESPONSE: f64 = 1e-12;

impl PointDetector for HarrisDetector {
    fn detect(&self, frame: &Frame1) -> Result<Vec<Keypoint>> {
        let p = &self.params;
        p.validate()?;
        let (w, h) = (frame.width(), frame.height());
        let resp = harris_response(frame, p.k, p.sigma);
        let max = resp.iter().copied().fold(0.0f64, f64::max);
        if max <= MIN_RESPONSE {
            return Ok(Vec::new());
        }
        let floor = (p.rel_threshold * max).max(MIN_RESPONSE);
        let r = p.nms_radius as isize;
        let mut out = Vec::new();
        for y in 0..h as isize {
            for x in 0..w as isize {
                let v = resp[y as usize * w + x as usize];
                if v < floor {
                    continue;
                }
                let is_max = (-r..=r).all(|dy| {
                    (-r..=r).all(|dx| {
                        let (xx, yy) = (x + dx, y + dy);
                        if (dx, dy) == (0, 0) || xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
                            return true;
                        }
                        let o = resp[yy as usize * w + xx as usize];
                        // Plateaus keep their first pixel in raster order.
                        if (dy, dx) < (0, 0) { v > o } else { v >= o }
                    })
                });
                if is_max {
                    out.push(Keypoint::new(x as f64, y as f64, (v / max) as f32));
                }
            }
        }
        out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.y.total_cmp(&b.y)).then(a.x.total_cmp(&b.x)));
        out.truncate(p.max_points);
        Ok(out)
    }
}
