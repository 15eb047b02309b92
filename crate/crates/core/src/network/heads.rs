//! Post-processing of the two network heads: cell softmax to full-resolution
//! heatmap, and bicubic upsampling of the descriptor grid.

use crate::error::{Error, Result};
use crate::network::tensor::Tensor;
use crate::network::{CELL, DETECTOR_CHANNELS};

/// Full-resolution keypoint probabilities, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Heatmap {
    pub fn from_raw(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(width * height, data.len()));
        }
        Ok(Heatmap { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

fn check_detector_shape(semi: &Tensor) -> Result<()> {
    let s = semi.shape();
    if s[0] != 1 || s[1] != DETECTOR_CHANNELS {
        return Err(Error::shape([1, DETECTOR_CHANNELS, s[2], s[3]], s));
    }
    Ok(())
}

/// Per-cell softmax over the 65 detector channels, dustbin included.
pub fn cell_softmax(semi: &Tensor) -> Result<Tensor> {
    check_detector_shape(semi)?;
    let [_, c, hc, wc] = semi.shape();
    let n = hc * wc;
    let mut out = Tensor::zeros(semi.shape());
    let (src, dst) = (semi.data(), out.data_mut());
    let mut buf = vec![0.0f64; c];
    for cell in 0..n {
        let max = (0..c).map(|k| src[k * n + cell]).fold(f32::NEG_INFINITY, f32::max) as f64;
        let mut sum = 0.0;
        for (k, b) in buf.iter_mut().enumerate() {
            *b = (src[k * n + cell] as f64 - max).exp();
            sum += *b;
        }
        for (k, b) in buf.iter().enumerate() {
            dst[k * n + cell] = (b / sum) as f32;
        }
    }
    Ok(out)
}

/// Softmax per cell, dustbin dropped, remaining 64 channels scattered so
/// that channel `r·8 + c` of cell `(i, j)` lands on pixel `(8i + r, 8j + c)`.
pub fn detector_heatmap(semi: &Tensor) -> Result<Heatmap> {
    let prob = cell_softmax(semi)?;
    let [_, _, hc, wc] = prob.shape();
    let (w, h) = (wc * CELL, hc * CELL);
    let mut data = vec![0.0f32; w * h];
    for i in 0..hc {
        for j in 0..wc {
            for r in 0..CELL {
                for c in 0..CELL {
                    data[(CELL * i + r) * w + CELL * j + c] = prob.at(r * CELL + c, i, j);
                }
            }
        }
    }
    Ok(Heatmap { width: w, height: h, data })
}

/// Catmull-Rom taps for continuous cell coordinate `u` on a grid of `len`
/// nodes. Coordinates beyond the outer nodes are clamped to them, and so are
/// the tap indices.
pub fn catmull_rom_taps(u: f64, len: usize) -> [(usize, f32); 4] {
    let u = u.clamp(0.0, (len - 1) as f64);
    let base = u.floor();
    let t = u - base;
    let (t2, t3) = (t * t, t * t * t);
    let weights = [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ];
    let last = len as i64 - 1;
    let mut taps = [(0usize, 0.0f32); 4];
    for (k, tap) in taps.iter_mut().enumerate() {
        let idx = (base as i64 - 1 + k as i64).clamp(0, last) as usize;
        *tap = (idx, weights[k] as f32);
    }
    taps
}

/// Cell-grid coordinate of a full-resolution pixel coordinate; cell centers
/// sit at pixel `8i + 3.5`.
pub fn pixel_to_cell(p: f64) -> f64 {
    (p - (CELL as f64 - 1.0) / 2.0) / CELL as f64
}

/// Unit-norm descriptor per pixel, stored `(H, W, D)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseDescriptors {
    width: usize,
    height: usize,
    dim: usize,
    data: Vec<f32>,
}

impl DenseDescriptors {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, x: usize, y: usize) -> &[f32] {
        &self.data[(y * self.width + x) * self.dim..][..self.dim]
    }
}

pub fn l2_normalize(v: &mut [f32]) {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm > 1e-12 {
        v.iter_mut().for_each(|x| *x = (*x as f64 / norm) as f32);
    }
}

/// Upsamples the raw descriptor grid ×8 without normalization, `(H, W, D)`.
pub fn upsample_descriptors(desc_raw: &Tensor) -> Vec<f32> {
    let [_, dim, hc, wc] = desc_raw.shape();
    let (w, h) = (wc * CELL, hc * CELL);
    let xtaps: Vec<_> = (0..w).map(|x| catmull_rom_taps(pixel_to_cell(x as f64), wc)).collect();
    let ytaps: Vec<_> = (0..h).map(|y| catmull_rom_taps(pixel_to_cell(y as f64), hc)).collect();
    let src = desc_raw.data();
    // Horizontal pass: (D, Hc, W).
    let mut tmp = vec![0.0f32; dim * hc * w];
    for d in 0..dim {
        for i in 0..hc {
            let row = &src[(d * hc + i) * wc..][..wc];
            let out = &mut tmp[(d * hc + i) * w..][..w];
            for (o, taps) in out.iter_mut().zip(&xtaps) {
                *o = taps.iter().map(|&(j, wt)| wt * row[j]).sum();
            }
        }
    }
    // Vertical pass into (H, W, D).
    let mut data = vec![0.0f32; h * w * dim];
    for (y, taps) in ytaps.iter().enumerate() {
        for d in 0..dim {
            for &(i, wt) in taps {
                let row = &tmp[(d * hc + i) * w..][..w];
                for (x, &v) in row.iter().enumerate() {
                    data[(y * w + x) * dim + d] += wt * v;
                }
            }
        }
    }
    data
}

/// Bicubic ×8 upsampling followed by per-pixel L2 normalization.
pub fn dense_descriptors(desc_raw: &Tensor) -> Result<DenseDescriptors> {
    let [n, dim, hc, wc] = desc_raw.shape();
    if n != 1 || hc == 0 || wc == 0 {
        return Err(Error::shape("(1, D, Hc, Wc)", desc_raw.shape()));
    }
    let mut data = upsample_descriptors(desc_raw);
    data.chunks_exact_mut(dim).for_each(l2_normalize);
    Ok(DenseDescriptors {
        width: wc * CELL,
        height: hc * CELL,
        dim,
        data,
    })
}
