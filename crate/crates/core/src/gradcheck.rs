//! Central finite-difference checks of the analytic gradients.
//!
//! Every check compares the backward pass against `(L(w+h) − L(w−h)) / 2h`
//! for a scalar objective `L`, never reusing the backward code path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::network::{backward, forward, Tensor, WeightSet, DESCRIPTOR_DIM, DETECTOR_CHANNELS, LAYERS};
use crate::selfsup::{
    correspondence_mask, descriptor_loss, detector_loss, FocalForm, FocalParams, HingeParams, LabelGrid,
    LossWeights, DUSTBIN,
};

/// Outcome of one family of checked parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

impl CheckResult {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Perturbation used for loss inputs, which are checked in `f32`.
pub const LOSS_FD_STEP: f32 = 1e-3;

/// Perturbation used for network weights. The check runs in `f64`, where a
/// small step keeps ReLU and max-pool switch points out of the stencil.
pub const FD_STEP: f64 = 1e-6;
pub const FD_TOLERANCE: f64 = 1e-3;

fn random_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape")
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Checks every layer's weights and biases on a random `(1, 1, side, side)`
/// input against the objective `⟨r_s, semi⟩ + ⟨r_d, desc⟩` with random
/// projections `r_s`, `r_d`. Samples `per_layer` weights and up to
/// `per_layer` biases from each layer. The network runs in `f64` with the
/// same kernels used for training.
pub fn check_network(seed: u64, side: usize, per_layer: usize, step: f64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: WeightSet<f64> = WeightSet::init(seed).cast();
    // Nonzero biases so bias gradients see the same ReLU pattern variety.
    for i in 0..LAYERS.len() {
        for b in &mut w.layer_mut(i).bias {
            *b = rng.gen_range(-0.05..0.05);
        }
    }
    let input = random_tensor([1, 1, side, side], &mut rng, 0.0, 1.0);
    let hc = side / 8;
    let r_s = random_tensor([1, DETECTOR_CHANNELS, hc, hc], &mut rng, -1.0, 1.0);
    let r_d = random_tensor([1, DESCRIPTOR_DIM, hc, hc], &mut rng, -1.0, 1.0);
    let objective = |w: &WeightSet<f64>| -> Result<f64> {
        let (out, _) = forward(w, &input)?;
        Ok(dot(&out.semi, &r_s) + dot(&out.desc_raw, &r_d))
    };
    let (_, cache) = forward(&w, &input)?;
    let grads = backward(&w, &cache, Some(&r_s), Some(&r_d))?;

    let mut results = Vec::new();
    for (li, spec) in LAYERS.iter().enumerate() {
        for is_bias in [false, true] {
            let analytic_all: &[f64] = if is_bias { &grads.layer(li).bias } else { &grads.layer(li).weight };
            let scale = analytic_all.iter().fold(0.0f64, |m, &g| m.max(g.abs()));
            let floor = 1e-2 * scale.max(1e-6);
            let n = analytic_all.len();
            let count = per_layer.min(n);
            let picks = rand::seq::index::sample(&mut rng, n, count);
            let mut max_err = 0.0f64;
            for idx in picks.iter() {
                let mut plus = w.clone();
                let mut minus = w.clone();
                let (p, m) = if is_bias {
                    (&mut plus.layer_mut(li).bias[idx], &mut minus.layer_mut(li).bias[idx])
                } else {
                    (&mut plus.layer_mut(li).weight[idx], &mut minus.layer_mut(li).weight[idx])
                };
                let orig = *p;
                *p = orig + step;
                *m = orig - step;
                let h2 = *p - *m;
                let numeric = (objective(&plus)? - objective(&minus)?) / h2;
                max_err = max_err.max(relative_error(analytic_all[idx], numeric, floor));
            }
            results.push(CheckResult {
                name: format!("{}.{}", spec.name, if is_bias { "bias" } else { "weight" }),
                checked: count,
                max_rel_error: max_err,
            });
        }
    }
    Ok(results)
}

/// Largest per-layer deviation of the `f32` backward pass from the `f64` one
/// on identical weights and inputs, relative to the layer's largest `f64`
/// gradient.
pub fn compare_precision(seed: u64, side: usize) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w32 = WeightSet::init(seed);
    let w64: WeightSet<f64> = w32.cast();
    let input = random_tensor([1, 1, side, side], &mut rng, 0.0, 1.0);
    let hc = side / 8;
    let r_s = random_tensor([1, DETECTOR_CHANNELS, hc, hc], &mut rng, -1.0, 1.0);
    let r_d = random_tensor([1, DESCRIPTOR_DIM, hc, hc], &mut rng, -1.0, 1.0);
    let (_, c64) = forward(&w64, &input)?;
    let g64 = backward(&w64, &c64, Some(&r_s), Some(&r_d))?;
    let (_, c32) = forward(&w32, &input.cast())?;
    let g32 = backward(&w32, &c32, Some(&r_s.cast()), Some(&r_d.cast()))?;
    let mut out = Vec::new();
    for (li, spec) in LAYERS.iter().enumerate() {
        let (a, b) = (g64.layer(li), g32.layer(li));
        let exact: Vec<f64> = a.weight.iter().chain(&a.bias).copied().collect();
        let approx = b.weight.iter().chain(&b.bias);
        let scale = exact.iter().fold(0.0f64, |m, g| m.max(g.abs())).max(1e-12);
        let max_rel_error = exact
            .iter()
            .zip(approx)
            .map(|(e, &g)| (e - g as f64).abs() / scale)
            .fold(0.0, f64::max);
        out.push(CheckResult {
            name: spec.name.to_string(),
            checked: exact.len(),
            max_rel_error,
        });
    }
    Ok(out)
}

/// Central differences over every entry of three `f32` input tensors of a
/// scalar loss computed in `f64`.
fn check_inputs<F>(name: &str, inputs: [Tensor; 3], grads: &[Tensor; 3], f: F) -> Result<CheckResult>
where
    F: Fn(&[Tensor; 3]) -> Result<f64>,
{
    let scale = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .fold(0.0f64, |m, &v| m.max(v.abs() as f64));
    let floor = 1e-2 * scale.max(1e-9);
    let mut x = inputs;
    let mut max_err = 0.0f64;
    let mut checked = 0;
    for t in 0..3 {
        for i in 0..x[t].data().len() {
            let orig = x[t].data()[i];
            let plus = orig + LOSS_FD_STEP;
            let minus = orig - LOSS_FD_STEP;
            x[t].data_mut()[i] = plus;
            let lp = f(&x)?;
            x[t].data_mut()[i] = minus;
            let lm = f(&x)?;
            x[t].data_mut()[i] = orig;
            let numeric = (lp - lm) / (plus as f64 - minus as f64);
            max_err = max_err.max(relative_error(grads[t].data()[i] as f64, numeric, floor));
            checked += 1;
        }
    }
    Ok(CheckResult {
        name: name.to_string(),
        checked,
        max_rel_error: max_err,
    })
}

fn random_f32(shape: [usize; 4], rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape")
}

/// Detector loss on the `(65, 2, 2)` logits of a `16×16` input, for the
/// three frames of a triplet against one random label.
pub fn check_detector_loss(seed: u64, form: FocalForm) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [1, DETECTOR_CHANNELS, 2, 2];
    let semis = [0, 1, 2].map(|_| random_f32(shape, &mut rng, -2.0, 2.0));
    let channels = (0..4).map(|i| if i == 3 { DUSTBIN as u8 } else { rng.gen_range(0..64) }).collect();
    let label = LabelGrid::from_channels(2, 2, channels)?;
    let (lw, fp) = (LossWeights::default(), FocalParams::default());
    let (_, grads) = detector_loss([&semis[0], &semis[1], &semis[2]], &label, &lw, &fp, form)?;
    let name = match form {
        FocalForm::Standard => "focal",
        FocalForm::AsPrinted => "focal (as printed)",
    };
    check_inputs(name, semis, &grads, |x| Ok(detector_loss([&x[0], &x[1], &x[2]], &label, &lw, &fp, form)?.0))
}

/// Descriptor loss on the `(256, 2, 2)` raw descriptors of a `16×16` input.
/// The negative margin is set to zero so that random descriptors engage
/// both hinge terms.
pub fn check_descriptor_loss(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [1, DESCRIPTOR_DIM, 2, 2];
    let descs = [0, 1, 2].map(|_| random_f32(shape, &mut rng, -1.0, 1.0));
    let hp = HingeParams {
        neg_margin: 0.0,
        ..Default::default()
    };
    let s = correspondence_mask(2, 2, hp.epsilon);
    let lw = LossWeights::default();
    let (_, grads) = descriptor_loss([&descs[0], &descs[1], &descs[2]], &s, &lw, &hp)?;
    check_inputs("hinge", descs, &grads, |x| Ok(descriptor_loss([&x[0], &x[1], &x[2]], &s, &lw, &hp)?.0))
}

/// The full suite: every layer of the network, then both losses.
pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = check_network(seed, 16, 16, FD_STEP)?;
    out.push(check_detector_loss(seed, FocalForm::Standard)?);
    out.push(check_detector_loss(seed, FocalForm::AsPrinted)?);
    out.push(check_descriptor_loss(seed)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(0.0, 0.0, 1.0), 0.0);
        assert!((relative_error(1.0, 1.1, 0.0) - 0.1 / 1.1).abs() < 1e-12);
        assert!((relative_error(1e-9, 2e-9, 1.0) - 1e-9).abs() < 1e-15);
    }

    #[test]
    fn losses_pass_finite_differences() {
        for seed in 0..3 {
            for r in [
                check_detector_loss(seed, FocalForm::Standard).unwrap(),
                check_detector_loss(seed, FocalForm::AsPrinted).unwrap(),
                check_descriptor_loss(seed).unwrap(),
            ] {
                assert!(r.passed(FD_TOLERANCE), "{} seed {seed}: {}", r.name, r.max_rel_error);
            }
        }
    }

    #[test]
    fn f32_backward_tracks_f64() {
        for r in compare_precision(3, 16).unwrap() {
            assert!(r.max_rel_error < 1e-4, "{}: {}", r.name, r.max_rel_error);
        }
    }
}
