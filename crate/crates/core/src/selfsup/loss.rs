//! Detector focal loss and descriptor hinge loss, with gradients with
//! respect to the raw network outputs.

use crate::error::{Error, Result};
use crate::network::{ops, Tensor, CELL, DETECTOR_CHANNELS};
use crate::selfsup::labels::{LabelGrid, DEFAULT_TAU_TRAIN};

/// Probabilities are clamped to `[P_MIN, 1 − P_MIN]` before the logarithms.
pub const P_MIN: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
    /// Threshold for binarizing pseudo-labels.
    pub tau: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams {
            alpha: 0.75,
            gamma: 2.0,
            tau: DEFAULT_TAU_TRAIN,
        }
    }
}

impl FocalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("focal alpha must lie in (0, 1)"));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::invalid("focal gamma must be non-negative"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::invalid("label threshold tau must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Which focal-loss expression to evaluate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FocalForm {
    /// `−α(1−p)^γ ln p` for positives, `−(1−α)p^γ ln(1−p)` for negatives.
    #[default]
    Standard,
    /// `α(1−p)^γ ln(1−p)` for positives, `(1−α)p^γ ln p` for negatives.
    /// Non-positive and flat at both ends for positives; kept only for
    /// comparison.
    AsPrinted,
}

impl std::str::FromStr for FocalForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(FocalForm::Standard),
            "printed" | "as_printed" => Ok(FocalForm::AsPrinted),
            other => Err(Error::invalid(format!("unknown focal form '{other}'"))),
        }
    }
}

/// `a^g·ln(b)` and its derivatives with respect to `a` and `b`.
fn pow_log(a: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let ag = a.powf(g);
    let da = if g == 0.0 { 0.0 } else { g * a.powf(g - 1.0) * b.ln() };
    (ag * b.ln(), da, ag / b)
}

/// Element loss and its derivative with respect to the unclamped
/// probability.
pub fn focal_element(p: f64, positive: bool, fp: &FocalParams, form: FocalForm) -> (f64, f64) {
    let pc = p.clamp(P_MIN, 1.0 - P_MIN);
    let inside = p == pc;
    let (a, g) = (fp.alpha, fp.gamma);
    let (l, d) = match (form, positive) {
        (FocalForm::Standard, true) => {
            // −α (1−p)^γ ln p
            let (v, da, db) = pow_log(1.0 - pc, g, pc);
            (-a * v, -a * (-da + db))
        }
        (FocalForm::Standard, false) => {
            // −(1−α) p^γ ln(1−p)
            let (v, da, db) = pow_log(pc, g, 1.0 - pc);
            (-(1.0 - a) * v, -(1.0 - a) * (da - db))
        }
        (FocalForm::AsPrinted, true) => {
            // α (1−p)^γ ln(1−p)
            let (v, da, db) = pow_log(1.0 - pc, g, 1.0 - pc);
            (a * v, a * (-da - db))
        }
        (FocalForm::AsPrinted, false) => {
            // (1−α) p^γ ln p
            let (v, da, db) = pow_log(pc, g, pc);
            ((1.0 - a) * v, (1.0 - a) * (da + db))
        }
    };
    (l, if inside { d } else { 0.0 })
}

fn check_semi(semi: &Tensor, label: &LabelGrid) -> Result<()> {
    let expect = [1, DETECTOR_CHANNELS, label.height(), label.width()];
    if semi.shape() != expect {
        return Err(Error::shape(expect, semi.shape()));
    }
    Ok(())
}

/// Per-cell softmax over `c` channels of a `(c, n)` array, in `f64`.
fn softmax_f64(z: &[f32], c: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; c * n];
    for cell in 0..n {
        let max = (0..c).map(|k| z[k * n + cell] as f64).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for k in 0..c {
            let e = (z[k * n + cell] as f64 - max).exp();
            out[k * n + cell] = e;
            sum += e;
        }
        for k in 0..c {
            out[k * n + cell] /= sum;
        }
    }
    out
}

/// Mean focal loss over all `65·Hc·Wc` softmax entries and its gradient
/// with respect to the detector logits.
pub fn focal_loss(semi: &Tensor, label: &LabelGrid, fp: &FocalParams, form: FocalForm) -> Result<(f64, Tensor)> {
    check_semi(semi, label)?;
    let [_, c, hc, wc] = semi.shape();
    let n = hc * wc;
    let norm = (c * n) as f64;
    let p = softmax_f64(semi.data(), c, n);
    let mut grad = Tensor::zeros(semi.shape());
    let g = grad.data_mut();
    let mut total = 0.0;
    let mut dp = vec![0.0f64; c];
    for cell in 0..n {
        let target = label.channels()[cell] as usize;
        let mut dot = 0.0;
        for (k, d) in dp.iter_mut().enumerate() {
            let pk = p[k * n + cell];
            let (l, dl) = focal_element(pk, k == target, fp, form);
            total += l;
            *d = dl;
            dot += dl * pk;
        }
        // Softmax Jacobian: ∂L/∂z_j = p_j (∂L/∂p_j − Σ_k ∂L/∂p_k p_k).
        for (k, d) in dp.iter().enumerate() {
            let pk = p[k * n + cell];
            g[k * n + cell] = (pk * (d - dot) / norm) as f32;
        }
    }
    Ok((total / norm, grad))
}

/// Weights of the high, mid and low temporal-resolution frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub high: f64,
    pub mid: f64,
    pub low: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            high: 0.5,
            mid: 0.5,
            low: 1.0,
        }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 3] {
        [self.high, self.mid, self.low]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|&w| w > 0.0 && w.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid("loss weights must be positive"))
        }
    }
}

fn scaled(t: Tensor, s: f64) -> Tensor {
    let mut t = t;
    t.data_mut().iter_mut().for_each(|v| *v = (*v as f64 * s) as f32);
    t
}

/// Weighted sum of the focal losses of the high, mid and low frames against
/// one shared label.
pub fn detector_loss(
    semis: [&Tensor; 3],
    label: &LabelGrid,
    lw: &LossWeights,
    fp: &FocalParams,
    form: FocalForm,
) -> Result<(f64, [Tensor; 3])> {
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(3);
    for (semi, w) in semis.into_iter().zip(lw.as_array()) {
        let (l, g) = focal_loss(semi, label, fp, form)?;
        total += w * l;
        grads.push(scaled(g, w));
    }
    let [a, b, c]: [Tensor; 3] = grads.try_into().expect("three scales");
    Ok((total, [a, b, c]))
}

/// Which hinge term `λ` multiplies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LambdaSide {
    #[default]
    Positive,
    Negative,
}

impl std::str::FromStr for LambdaSide {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" | "positive_term" => Ok(LambdaSide::Positive),
            "negative" | "negative_term" => Ok(LambdaSide::Negative),
            other => Err(Error::invalid(format!("unknown lambda side '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HingeParams {
    pub lambda: f64,
    pub pos_margin: f64,
    pub neg_margin: f64,
    /// Pixel distance below which two cells correspond.
    pub epsilon: f64,
    pub lambda_side: LambdaSide,
}

impl Default for HingeParams {
    fn default() -> Self {
        HingeParams {
            lambda: 0.001,
            pos_margin: 1.0,
            neg_margin: 0.2,
            epsilon: 8.0,
            lambda_side: LambdaSide::Positive,
        }
    }
}

impl HingeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.pos_margin > self.neg_margin && self.neg_margin >= 0.0) {
            return Err(Error::invalid("hinge margins need m_p > m_n >= 0"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("correspondence epsilon must be positive"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("hinge lambda must be positive"));
        }
        Ok(())
    }
}

/// Binary correspondence between the cells of two co-located frames,
/// indexed by row-major cell number.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorrespondenceMask {
    hc: usize,
    wc: usize,
    bits: Vec<bool>,
}

impl CorrespondenceMask {
    pub fn cells(&self) -> usize {
        self.hc * self.wc
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.hc, self.wc)
    }

    pub fn get(&self, a: usize, b: usize) -> bool {
        self.bits[a * self.cells() + b]
    }

    pub fn is_identity(&self) -> bool {
        let n = self.cells();
        (0..n).all(|a| (0..n).all(|b| self.get(a, b) == (a == b)))
    }
}

/// Cells correspond when their centers `(8j + 3.5, 8i + 3.5)` are strictly
/// closer than `epsilon` pixels.
pub fn correspondence_mask(hc: usize, wc: usize, epsilon: f64) -> CorrespondenceMask {
    let n = hc * wc;
    let mut bits = vec![false; n * n];
    let center = |c: usize| ((c % wc) as f64 * CELL as f64, (c / wc) as f64 * CELL as f64);
    for a in 0..n {
        let (ax, ay) = center(a);
        for b in 0..n {
            let (bx, by) = center(b);
            bits[a * n + b] = ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt() < epsilon;
        }
    }
    CorrespondenceMask { hc, wc, bits }
}

/// `(cells, D)` unit vectors and the original norms.
fn normalized_cells(t: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let [_, d, hc, wc] = t.shape();
    let n = hc * wc;
    let src = t.data();
    let mut u = vec![0.0f64; n * d];
    let mut norms = vec![0.0f64; n];
    for c in 0..n {
        let row = &mut u[c * d..(c + 1) * d];
        for (k, r) in row.iter_mut().enumerate() {
            *r = src[k * n + c] as f64;
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        norms[c] = norm;
        if norm > 1e-12 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    (u, norms)
}

/// Back through `u = v / |v|`: `∂L/∂v = (g − u (u·g)) / |v|`, written in the
/// `(1, D, Hc, Wc)` layout.
fn denormalize_grad(gu: &[f64], u: &[f64], norms: &[f64], shape: [usize; 4]) -> Tensor {
    let [_, d, hc, wc] = shape;
    let n = hc * wc;
    let mut out = Tensor::zeros(shape);
    let o = out.data_mut();
    for c in 0..n {
        if norms[c] <= 1e-12 {
            continue;
        }
        let (g, uu) = (&gu[c * d..(c + 1) * d], &u[c * d..(c + 1) * d]);
        let dot: f64 = g.iter().zip(uu).map(|(a, b)| a * b).sum();
        for k in 0..d {
            o[k * n + c] = ((g[k] - uu[k] * dot) / norms[c]) as f32;
        }
    }
    out
}

/// Hinge loss between two raw descriptor grids, each normalized per cell.
/// Returns the loss averaged over all `(Hc·Wc)²` cell pairs and gradients
/// with respect to both raw grids.
pub fn hinge_loss(d1: &Tensor, d2: &Tensor, s: &CorrespondenceMask, hp: &HingeParams) -> Result<(f64, Tensor, Tensor)> {
    let shape = d1.shape();
    if d2.shape() != shape {
        return Err(Error::shape(shape, d2.shape()));
    }
    let [b, d, hc, wc] = shape;
    if b != 1 || s.grid() != (hc, wc) {
        return Err(Error::shape([1, d, s.grid().0, s.grid().1], shape));
    }
    let n = hc * wc;
    let (u1, n1) = normalized_cells(d1);
    let (u2, n2) = normalized_cells(d2);
    let mut dots = vec![0.0f64; n * n];
    ops::gemm(n, d, n, &u1, (d, 1), &u2, (1, d), 0.0, &mut dots);
    let (wp, wn) = match hp.lambda_side {
        LambdaSide::Positive => (hp.lambda, 1.0),
        LambdaSide::Negative => (1.0, hp.lambda),
    };
    let norm = (n * n) as f64;
    let mut total = 0.0;
    let mut gdot = vec![0.0f64; n * n];
    for a in 0..n {
        for c in 0..n {
            let i = a * n + c;
            let v = dots[i];
            if s.get(a, c) {
                if v < hp.pos_margin {
                    total += wp * (hp.pos_margin - v);
                    gdot[i] = -wp / norm;
                }
            } else if v > hp.neg_margin {
                total += wn * (v - hp.neg_margin);
                gdot[i] = wn / norm;
            }
        }
    }
    let mut gu1 = vec![0.0f64; n * d];
    let mut gu2 = vec![0.0f64; n * d];
    ops::gemm(n, n, d, &gdot, (n, 1), &u2, (d, 1), 0.0, &mut gu1);
    ops::gemm(n, n, d, &gdot, (1, n), &u1, (d, 1), 0.0, &mut gu2);
    Ok((
        total / norm,
        denormalize_grad(&gu1, &u1, &n1, shape),
        denormalize_grad(&gu2, &u2, &n2, shape),
    ))
}

/// Hinge losses over the pairs (high, mid), (high, low), (mid, low), each
/// weighted by the geometric mean of its two frame weights.
pub fn descriptor_loss(
    descs: [&Tensor; 3],
    s: &CorrespondenceMask,
    lw: &LossWeights,
    hp: &HingeParams,
) -> Result<(f64, [Tensor; 3])> {
    let w = lw.as_array();
    let mut grads: Vec<Tensor> = descs.iter().map(|t| Tensor::zeros(t.shape())).collect();
    let mut total = 0.0;
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let pw = (w[a] * w[b]).sqrt();
        let (l, ga, gb) = hinge_loss(descs[a], descs[b], s, hp)?;
        total += pw * l;
        for (t, g) in [(a, ga), (b, gb)] {
            grads[t]
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(acc, v)| *acc = (*acc as f64 + pw * *v as f64) as f32);
        }
    }
    let [x, y, z]: [Tensor; 3] = grads.try_into().expect("three frames");
    Ok((total, [x, y, z]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 4], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn focal_element_values() {
        let fp = FocalParams::default();
        let (l, _) = focal_element(0.5, true, &fp, FocalForm::Standard);
        assert!((l - 0.75 * 0.25 * 2f64.ln()).abs() < 1e-12);
        assert!((l - 0.12996).abs() < 1e-5);
        let (l, _) = focal_element(1.0 - 1e-6, true, &fp, FocalForm::Standard);
        assert!(l.abs() < 1e-9);
        let ce = FocalParams {
            alpha: 0.5,
            gamma: 0.0,
            ..fp
        };
        for p in [0.01, 0.3, 0.5, 0.9] {
            let (lp, _) = focal_element(p, true, &ce, FocalForm::Standard);
            let (ln, _) = focal_element(p, false, &ce, FocalForm::Standard);
            assert!((lp + 0.5 * f64::ln(p)).abs() < 1e-12);
            assert!((ln + 0.5 * f64::ln(1.0 - p)).abs() < 1e-12);
        }
    }

    #[test]
    fn printed_form_is_non_positive() {
        let fp = FocalParams::default();
        for p in [1e-9, 0.1, 0.5, 0.9, 1.0] {
            for pos in [true, false] {
                assert!(focal_element(p, pos, &fp, FocalForm::AsPrinted).0 <= 0.0);
                assert!(focal_element(p, pos, &fp, FocalForm::Standard).0 >= 0.0);
            }
        }
    }

    #[test]
    fn focal_element_derivative() {
        let fp = FocalParams::default();
        for form in [FocalForm::Standard, FocalForm::AsPrinted] {
            for pos in [true, false] {
                for p in [0.05, 0.3, 0.7, 0.95] {
                    let h = 1e-6;
                    let num = (focal_element(p + h, pos, &fp, form).0 - focal_element(p - h, pos, &fp, form).0) / (2.0 * h);
                    let (_, d) = focal_element(p, pos, &fp, form);
                    assert!((num - d).abs() < 1e-6 * d.abs().max(1.0), "{form:?} {pos} {p}: {num} vs {d}");
                }
            }
        }
    }

    #[test]
    fn confident_correct_prediction_has_near_zero_loss() {
        let label = LabelGrid::from_channels(2, 2, vec![3, 64, 10, 64]).unwrap();
        let mut semi = Tensor::zeros([1, 65, 2, 2]);
        for i in 0..2 {
            for j in 0..2 {
                semi.set(label.channel(i, j), i, j, 40.0);
            }
        }
        let (l, _) = focal_loss(&semi, &label, &FocalParams::default(), FocalForm::Standard).unwrap();
        assert!((0.0..1e-7).contains(&l), "{l}");
        let lw = LossWeights::default();
        let (total, _) = detector_loss([&semi, &semi, &semi], &label, &lw, &FocalParams::default(), FocalForm::Standard).unwrap();
        assert!(total < 1e-6);
    }

    #[test]
    fn detector_loss_weights() {
        let label = LabelGrid::from_channels(2, 2, vec![3, 64, 10, 64]).unwrap();
        let mut good = Tensor::zeros([1, 65, 2, 2]);
        for i in 0..2 {
            for j in 0..2 {
                good.set(label.channel(i, j), i, j, 60.0);
            }
        }
        let bad = random([1, 65, 2, 2], 2);
        let fp = FocalParams::default();
        let lw = LossWeights::default();
        let (total, _) = detector_loss([&good, &good, &bad], &label, &lw, &fp, FocalForm::Standard).unwrap();
        let (lbad, _) = focal_loss(&bad, &label, &fp, FocalForm::Standard).unwrap();
        assert!((total - lbad).abs() < 1e-9);

        let sems = [random([1, 65, 2, 2], 3), random([1, 65, 2, 2], 4), bad];
        let refs = [&sems[0], &sems[1], &sems[2]];
        let (l1, g1) = detector_loss(refs, &label, &lw, &fp, FocalForm::Standard).unwrap();
        let double = LossWeights {
            high: 1.0,
            mid: 1.0,
            low: 2.0,
        };
        let (l2, g2) = detector_loss(refs, &label, &double, &fp, FocalForm::Standard).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-12);
        for (a, b) in g1.iter().zip(&g2) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((2.0 * x - y).abs() <= 1e-7 * y.abs().max(1e-6));
            }
        }
        assert!(detector_loss([&sems[0], &sems[1], &Tensor::zeros([1, 65, 3, 2])], &label, &lw, &fp, FocalForm::Standard).is_err());
    }

    #[test]
    fn correspondence_mask_cases() {
        assert!(correspondence_mask(6, 6, 8.0).is_identity());
        assert!(correspondence_mask(6, 6, 0.5).is_identity());
        let m = correspondence_mask(6, 6, 8.1);
        let n = 36;
        for a in 0..n {
            let (i, j) = (a / 6, a % 6);
            let row: Vec<usize> = (0..n).filter(|&b| m.get(a, b)).collect();
            if (1..5).contains(&i) && (1..5).contains(&j) {
                assert_eq!(row, vec![a - 6, a - 1, a, a + 1, a + 6]);
            }
            assert!(row.iter().all(|&b| m.get(b, a)));
        }
    }

    fn grid(vectors: &[[f32; 3]]) -> Tensor {
        // 1×n cell grid with D = 3.
        let n = vectors.len();
        let mut t = Tensor::zeros([1, 3, 1, n]);
        for (c, v) in vectors.iter().enumerate() {
            for k in 0..3 {
                t.set(k, 0, c, v[k]);
            }
        }
        t
    }

    #[test]
    fn hinge_single_pair_values() {
        let hp = HingeParams::default();
        let a = grid(&[[1.0, 0.0, 0.0]]);
        let b = grid(&[[0.5, 0.75f32.sqrt(), 0.0]]);
        let one = correspondence_mask(1, 1, 8.0);
        let (l, _, _) = hinge_loss(&a, &b, &one, &hp).unwrap();
        assert!((l - 5e-4).abs() < 1e-9);
        let none = correspondence_mask(1, 1, 1e-9);
        let none = CorrespondenceMask {
            bits: vec![false],
            ..none
        };
        let (l, _, _) = hinge_loss(&a, &b, &none, &hp).unwrap();
        assert!((l - 0.3).abs() < 1e-7);
        let neg = HingeParams {
            lambda_side: LambdaSide::Negative,
            ..hp
        };
        let (l, _, _) = hinge_loss(&a, &b, &none, &neg).unwrap();
        assert!((l - 3e-4).abs() < 1e-9);
    }

    #[test]
    fn satisfied_margins_give_zero_loss_and_gradient() {
        let t = grid(&[[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 0.5], [-1.0, 0.1, 0.0]]);
        let s = correspondence_mask(1, 4, 8.0);
        // Positive pairs strictly above the margin: exactly zero.
        let loose = HingeParams {
            pos_margin: 0.9,
            ..Default::default()
        };
        let (l, g1, g2) = hinge_loss(&t, &t, &s, &loose).unwrap();
        assert_eq!(l, 0.0);
        assert!(g1.data().iter().chain(g2.data()).all(|&v| v == 0.0));
        let lw = LossWeights::default();
        let (l, gs) = descriptor_loss([&t, &t, &t], &s, &lw, &loose).unwrap();
        assert!(l == 0.0 && gs.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
        // Identical unit vectors sit on the default margin up to rounding.
        let (l, g1, _) = hinge_loss(&t, &t, &s, &HingeParams::default()).unwrap();
        assert!(l.abs() < 1e-15);
        assert!(g1.data().iter().all(|&v| v.abs() < 1e-6));
    }

    #[test]
    fn descriptor_loss_pair_weights_and_symmetry() {
        let s = correspondence_mask(2, 2, 8.0);
        let base = random([1, 16, 2, 2], 7);
        let other = random([1, 16, 2, 2], 8);
        let hp = HingeParams::default();
        let lw = LossWeights::default();
        let (total, _) = descriptor_loss([&base, &other, &base], &s, &lw, &hp).unwrap();
        let pair = |a: &Tensor, b: &Tensor| hinge_loss(a, b, &s, &hp).unwrap().0;
        let expect = (0.25f64).sqrt() * pair(&base, &other)
            + (0.5f64).sqrt() * pair(&base, &base)
            + (0.5f64).sqrt() * pair(&other, &base);
        assert!((total - expect).abs() < 1e-12);

        let third = random([1, 16, 2, 2], 9);
        let uniform = LossWeights {
            high: 0.7,
            mid: 0.7,
            low: 0.7,
        };
        let (x, _) = descriptor_loss([&base, &other, &third], &s, &uniform, &hp).unwrap();
        let (y, _) = descriptor_loss([&third, &base, &other], &s, &uniform, &hp).unwrap();
        assert!((x - y).abs() < 1e-12);
    }

    #[test]
    fn pair_weights_are_geometric_means() {
        // h = m, so (h, m) vanishes and (h, l), (m, l) carry √(0.5·1.0) each.
        let h = grid(&[[1.0, 0.0, 0.0]]);
        let l = grid(&[[0.0, 1.0, 0.0]]);
        let s = correspondence_mask(1, 1, 8.0);
        let hp = HingeParams::default();
        let lw = LossWeights::default();
        let (total, _) = descriptor_loss([&h, &h, &l], &s, &lw, &hp).unwrap();
        let hl = hinge_loss(&h, &l, &s, &hp).unwrap().0;
        assert!((total - 2.0 * (0.5f64).sqrt() * hl).abs() < 1e-12);
    }
}
