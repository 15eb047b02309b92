//! The fixed detector/descriptor network: a VGG-style shared encoder with
//! three 2×2 max-pools (total stride 8) feeding a detector head (65 logits per
//! 8×8 cell, the last being the "no keypoint" dustbin) and a descriptor head.
//!
//! Forward and backward passes are hand-written for this fixed graph.

mod heads;
pub(crate) mod ops;
mod tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::representation::Frame1;

pub use ops::Real;

pub use heads::{
    catmull_rom_taps, cell_softmax, dense_descriptors, detector_heatmap, l2_normalize,
    pixel_to_cell, upsample_descriptors, DenseDescriptors, Heatmap,
};
pub use tensor::Tensor;

/// Side of one output cell in input pixels.
pub const CELL: usize = 8;
/// 64 cell positions plus the dustbin.
pub const DETECTOR_CHANNELS: usize = 65;
pub const DESCRIPTOR_DIM: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: &'static str,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl LayerSpec {
    const fn new(name: &'static str, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        LayerSpec {
            name,
            in_channels,
            out_channels,
            kernel,
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

pub const LAYERS: [LayerSpec; 12] = [
    LayerSpec::new("1a", 1, 64, 3),
    LayerSpec::new("1b", 64, 64, 3),
    LayerSpec::new("2a", 64, 64, 3),
    LayerSpec::new("2b", 64, 64, 3),
    LayerSpec::new("3a", 64, 128, 3),
    LayerSpec::new("3b", 128, 128, 3),
    LayerSpec::new("4a", 128, 128, 3),
    LayerSpec::new("4b", 128, 128, 3),
    LayerSpec::new("cPa", 128, 256, 3),
    LayerSpec::new("semi", 256, DETECTOR_CHANNELS, 1),
    LayerSpec::new("dDa", 128, 256, 3),
    LayerSpec::new("desc", 256, DESCRIPTOR_DIM, 1),
];

const DET_HIDDEN: usize = 8;
const DET_OUT: usize = 9;
const DESC_HIDDEN: usize = 10;
const DESC_OUT: usize = 11;

/// Indices of the detector-head layers.
pub const DETECTOR_HEAD: [usize; 2] = [DET_HIDDEN, DET_OUT];
/// Indices of the descriptor-head layers.
pub const DESCRIPTOR_HEAD: [usize; 2] = [DESC_HIDDEN, DESC_OUT];

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T = f32> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Parameters of every layer, in [`LAYERS`] order. Also used to hold
/// gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSet<T = f32> {
    layers: Vec<LayerParams<T>>,
}

impl WeightSet<f32> {
    /// He-initialized kernels (`N(0, 2/fan_in)`), zero biases.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Self::zeros();
        for (spec, layer) in LAYERS.iter().zip(&mut w.layers) {
            let normal = Normal::new(0.0, (2.0 / spec.fan_in() as f64).sqrt()).expect("valid std");
            layer.weight.iter_mut().for_each(|v| *v = normal.sample(&mut rng) as f32);
        }
        w
    }
}

impl<T: Real> WeightSet<T> {
    pub fn zeros() -> Self {
        WeightSet {
            layers: LAYERS
                .iter()
                .map(|s| LayerParams {
                    weight: vec![T::zero(); s.weight_shape().iter().product()],
                    bias: vec![T::zero(); s.out_channels],
                })
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> WeightSet<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.f64())).collect();
        WeightSet {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: conv(&l.weight),
                    bias: conv(&l.bias),
                })
                .collect(),
        }
    }

    /// Builds a weight set from per-layer parameters, validating shapes.
    pub fn from_layers(layers: Vec<LayerParams<T>>) -> Result<Self> {
        if layers.len() != LAYERS.len() {
            return Err(Error::shape(LAYERS.len(), layers.len()));
        }
        for (spec, l) in LAYERS.iter().zip(&layers) {
            let n: usize = spec.weight_shape().iter().product();
            if l.weight.len() != n || l.bias.len() != spec.out_channels {
                return Err(Error::LayerShape {
                    layer: spec.name.to_string(),
                    expected: spec.weight_shape(),
                    actual: [l.weight.len(), l.bias.len(), 0, 0],
                });
            }
        }
        Ok(WeightSet { layers })
    }

    pub fn layers(&self) -> &[LayerParams<T>] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &LayerParams<T> {
        &self.layers[i]
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut LayerParams<T> {
        &mut self.layers[i]
    }

    pub fn add_assign(&mut self, other: &WeightSet<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.iter_mut().zip(&b.weight).for_each(|(x, y)| *x = *x + *y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x = *x + *y);
        }
    }

    pub fn scale(&mut self, s: T) {
        for l in &mut self.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|x| *x = *x * s);
        }
    }

    pub fn zero_layers(&mut self, indices: &[usize]) {
        for &i in indices {
            self.layers[i].weight.fill(T::zero());
            self.layers[i].bias.fill(T::zero());
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Plain SGD: `w ← w − lr·g`. Rejects non-finite gradients without
    /// touching the weights.
    pub fn sgd_step(&mut self, grads: &WeightSet<T>, lr: T) -> Result<()> {
        for (spec, g) in LAYERS.iter().zip(&grads.layers) {
            if !g.weight.iter().chain(&g.bias).all(|v| v.is_finite()) {
                return Err(Error::NonFiniteGradient(spec.name.to_string()));
            }
        }
        for (w, g) in self.layers.iter_mut().zip(&grads.layers) {
            w.weight.iter_mut().zip(&g.weight).for_each(|(a, b)| *a = *a - lr * *b);
            w.bias.iter_mut().zip(&g.bias).for_each(|(a, b)| *a = *a - lr * *b);
        }
        Ok(())
    }
}

/// Raw head outputs for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkOutput<T = f32> {
    /// `(1, 65, H/8, W/8)` detector logits.
    pub semi: Tensor<T>,
    /// `(1, 256, H/8, W/8)` descriptors before normalization.
    pub desc_raw: Tensor<T>,
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T = f32> {
    /// `acts[0]` is the input; `acts[i]` is the output of encoder stage `i`.
    acts: Vec<Act<T>>,
    argmax: Vec<Vec<u32>>,
    det_hidden: Act<T>,
    desc_hidden: Act<T>,
}

#[derive(Clone, Debug)]
struct Act<T> {
    data: Vec<T>,
    c: usize,
    h: usize,
    w: usize,
}

#[derive(Clone, Copy)]
enum Stage {
    Conv(usize),
    Pool,
}

const ENCODER: [Stage; 11] = [
    Stage::Conv(0),
    Stage::Conv(1),
    Stage::Pool,
    Stage::Conv(2),
    Stage::Conv(3),
    Stage::Pool,
    Stage::Conv(4),
    Stage::Conv(5),
    Stage::Pool,
    Stage::Conv(6),
    Stage::Conv(7),
];

fn conv_relu<T: Real>(w: &WeightSet<T>, layer: usize, x: &Act<T>, relu: bool) -> Act<T> {
    let spec = &LAYERS[layer];
    let p = &w.layers[layer];
    let mut out = ops::conv2d(&x.data, x.c, x.h, x.w, &p.weight, &p.bias, spec.out_channels, spec.kernel);
    if relu {
        ops::relu_inplace(&mut out);
    }
    Act {
        data: out,
        c: spec.out_channels,
        h: x.h,
        w: x.w,
    }
}

/// Runs the network on a `(1, 1, H, W)` input with `H`, `W` divisible by 8.
pub fn forward<T: Real>(w: &WeightSet<T>, input: &Tensor<T>) -> Result<(NetworkOutput<T>, ForwardCache<T>)> {
    let [n, c, h, wd] = input.shape();
    if n != 1 || c != 1 || h == 0 || wd == 0 || h % CELL != 0 || wd % CELL != 0 {
        return Err(Error::shape("(1, 1, 8k, 8m)", input.shape()));
    }
    let mut acts = vec![Act {
        data: input.data().to_vec(),
        c: 1,
        h,
        w: wd,
    }];
    let mut argmax = Vec::new();
    for stage in ENCODER {
        let x = acts.last().expect("input present");
        let next = match stage {
            Stage::Conv(l) => conv_relu(w, l, x, true),
            Stage::Pool => {
                let (data, arg) = ops::maxpool2(&x.data, x.c, x.h, x.w);
                argmax.push(arg);
                Act {
                    data,
                    c: x.c,
                    h: x.h / 2,
                    w: x.w / 2,
                }
            }
        };
        acts.push(next);
    }
    let feat = acts.last().expect("encoder output");
    let det_hidden = conv_relu(w, DET_HIDDEN, feat, true);
    let semi = conv_relu(w, DET_OUT, &det_hidden, false);
    let desc_hidden = conv_relu(w, DESC_HIDDEN, feat, true);
    let desc = conv_relu(w, DESC_OUT, &desc_hidden, false);
    let (hc, wc) = (h / CELL, wd / CELL);
    let output = NetworkOutput {
        semi: Tensor::from_vec([1, DETECTOR_CHANNELS, hc, wc], semi.data)?,
        desc_raw: Tensor::from_vec([1, DESCRIPTOR_DIM, hc, wc], desc.data)?,
    };
    Ok((
        output,
        ForwardCache {
            acts,
            argmax,
            det_hidden,
            desc_hidden,
        },
    ))
}

pub fn forward_frame(w: &WeightSet, frame: &Frame1) -> Result<NetworkOutput> {
    Ok(forward(w, &Tensor::from_frame(frame))?.0)
}

fn head_backward<T: Real>(
    w: &WeightSet<T>,
    grads: &mut WeightSet<T>,
    feat: &Act<T>,
    hidden: &Act<T>,
    (hidden_layer, out_layer): (usize, usize),
    grad_out: &Tensor<T>,
) -> Vec<T> {
    let out_spec = &LAYERS[out_layer];
    let g = ops::conv2d_backward(
        &hidden.data,
        hidden.c,
        hidden.h,
        hidden.w,
        &w.layers[out_layer].weight,
        out_spec.out_channels,
        out_spec.kernel,
        grad_out.data(),
        true,
    );
    grads.layers[out_layer] = LayerParams {
        weight: g.weight,
        bias: g.bias,
    };
    let mut gh = g.input.expect("requested");
    ops::relu_backward_inplace(&mut gh, &hidden.data);
    let hid_spec = &LAYERS[hidden_layer];
    let g = ops::conv2d_backward(
        &feat.data,
        feat.c,
        feat.h,
        feat.w,
        &w.layers[hidden_layer].weight,
        hid_spec.out_channels,
        hid_spec.kernel,
        &gh,
        true,
    );
    grads.layers[hidden_layer] = LayerParams {
        weight: g.weight,
        bias: g.bias,
    };
    g.input.expect("requested")
}

/// Exact gradients of `⟨grad_semi, semi⟩ + ⟨grad_desc, desc_raw⟩` with
/// respect to every weight. A head whose gradient is `None` contributes
/// nothing and its layers receive zero gradients.
pub fn backward<T: Real>(
    w: &WeightSet<T>,
    cache: &ForwardCache<T>,
    grad_semi: Option<&Tensor<T>>,
    grad_desc: Option<&Tensor<T>>,
) -> Result<WeightSet<T>> {
    let feat = cache.acts.last().expect("encoder output");
    let (hc, wc) = (feat.h, feat.w);
    let mut grads = WeightSet::zeros();
    let mut g_feat = vec![T::zero(); feat.data.len()];
    if let Some(gs) = grad_semi {
        if gs.shape() != [1, DETECTOR_CHANNELS, hc, wc] {
            return Err(Error::shape([1, DETECTOR_CHANNELS, hc, wc], gs.shape()));
        }
        let g = head_backward(w, &mut grads, feat, &cache.det_hidden, (DET_HIDDEN, DET_OUT), gs);
        g_feat.iter_mut().zip(&g).for_each(|(a, b)| *a = *a + *b);
    }
    if let Some(gd) = grad_desc {
        if gd.shape() != [1, DESCRIPTOR_DIM, hc, wc] {
            return Err(Error::shape([1, DESCRIPTOR_DIM, hc, wc], gd.shape()));
        }
        let g = head_backward(w, &mut grads, feat, &cache.desc_hidden, (DESC_HIDDEN, DESC_OUT), gd);
        g_feat.iter_mut().zip(&g).for_each(|(a, b)| *a = *a + *b);
    }
    if grad_semi.is_none() && grad_desc.is_none() {
        return Ok(grads);
    }
    let mut grad = g_feat;
    let mut pool_idx = cache.argmax.len();
    for (si, stage) in ENCODER.iter().enumerate().rev() {
        let input = &cache.acts[si];
        let output = &cache.acts[si + 1];
        match *stage {
            Stage::Conv(l) => {
                ops::relu_backward_inplace(&mut grad, &output.data);
                let spec = &LAYERS[l];
                let need_input = si > 0;
                let g = ops::conv2d_backward(
                    &input.data,
                    input.c,
                    input.h,
                    input.w,
                    &w.layers[l].weight,
                    spec.out_channels,
                    spec.kernel,
                    &grad,
                    need_input,
                );
                grads.layers[l] = LayerParams {
                    weight: g.weight,
                    bias: g.bias,
                };
                match g.input {
                    Some(gi) => grad = gi,
                    None => break,
                }
            }
            Stage::Pool => {
                pool_idx -= 1;
                grad = ops::maxpool2_backward(&grad, &cache.argmax[pool_idx], input.data.len());
            }
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let a = WeightSet::init(0);
        assert_eq!(a, WeightSet::init(0));
        assert_ne!(a, WeightSet::init(1));
        assert!(a.layers().iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn first_layer_variance_is_he_scaled() {
        let w = WeightSet::init(3);
        let k = &w.layer(0).weight;
        let mean = k.iter().map(|&v| v as f64).sum::<f64>() / k.len() as f64;
        let var = k.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (k.len() - 1) as f64;
        let target = 2.0 / 9.0;
        assert!((var - target).abs() < 0.2 * target, "var {var}");
    }

    #[test]
    fn output_shapes() {
        let w = WeightSet::init(0);
        let (out, _) = forward(&w, &Tensor::zeros([1, 1, 64, 64])).unwrap();
        assert_eq!(out.semi.shape(), [1, 65, 8, 8]);
        assert_eq!(out.desc_raw.shape(), [1, 256, 8, 8]);
        assert!(forward(&w, &Tensor::zeros([1, 1, 60, 64])).is_err());
        assert!(forward(&w, &Tensor::zeros([1, 2, 64, 64])).is_err());
    }

    #[test]
    fn zero_weights_zero_input_gives_zero_output() {
        let (out, cache) = forward(&WeightSet::<f32>::zeros(), &Tensor::zeros([1, 1, 16, 16])).unwrap();
        assert!(out.semi.data().iter().chain(out.desc_raw.data()).all(|&v| v == 0.0));
        let g = backward(
            &WeightSet::<f32>::zeros(),
            &cache,
            Some(&Tensor::zeros([1, 65, 2, 2])),
            Some(&Tensor::zeros([1, 256, 2, 2])),
        )
        .unwrap();
        assert_eq!(g, WeightSet::<f32>::zeros());
    }

    #[test]
    fn zero_output_gradient_gives_zero_weight_gradient() {
        let w = WeightSet::init(5);
        let x = Tensor::from_vec([1, 1, 16, 16], (0..256).map(|i| (i % 17) as f32 / 17.0).collect()).unwrap();
        let (_, cache) = forward(&w, &x).unwrap();
        let g = backward(&w, &cache, Some(&Tensor::zeros([1, 65, 2, 2])), Some(&Tensor::zeros([1, 256, 2, 2]))).unwrap();
        assert_eq!(g, WeightSet::<f32>::zeros());
        assert!(backward(&w, &cache, Some(&Tensor::zeros([1, 65, 3, 2])), None).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let w = WeightSet::init(9);
        let x = Tensor::from_vec([1, 1, 24, 32], (0..768).map(|i| ((i * 7) % 13) as f32 / 13.0).collect()).unwrap();
        let (a, _) = forward(&w, &x).unwrap();
        let (b, _) = forward(&w, &x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sgd_cases() {
        let mut w = WeightSet::init(1);
        let orig = w.clone();
        let mut g = WeightSet::init(2);
        w.sgd_step(&g, 0.0).unwrap();
        assert_eq!(w, orig);

        let mut one = WeightSet::<f32>::zeros();
        one.layer_mut(0).weight[0] = 1.0;
        let mut half = WeightSet::<f32>::zeros();
        half.layer_mut(0).weight[0] = 0.5;
        one.sgd_step(&half, 0.001).unwrap();
        assert_eq!(one.layer(0).weight[0], 0.9995);

        g.layer_mut(3).bias[1] = f32::NAN;
        assert!(matches!(w.sgd_step(&g, 0.1), Err(Error::NonFiniteGradient(l)) if l == "2b"));
        assert_eq!(w, orig);
    }

    #[test]
    fn two_steps_equal_one_summed_step() {
        let g1 = WeightSet::init(11);
        let g2 = WeightSet::init(12);
        let mut a = WeightSet::init(13);
        let mut b = a.clone();
        a.sgd_step(&g1, 1e-3).unwrap();
        a.sgd_step(&g2, 1e-3).unwrap();
        let mut sum = g1.clone();
        sum.add_assign(&g2);
        b.sgd_step(&sum, 1e-3).unwrap();
        for (la, lb) in a.layers().iter().zip(b.layers()) {
            for (x, y) in la.weight.iter().zip(&lb.weight) {
                // 1e-7 or two ulps, whichever is larger.
                assert!((x - y).abs() <= 1e-7f32.max(2.0 * f32::EPSILON * x.abs()), "{x} vs {y}");
            }
        }
    }
}
