//! The two training stages: detector head against pseudo-labels, then
//! descriptor head against cross-frame correspondences.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::event_model::{triplet_windows, EventStream, Micros, TripletConfig};
use crate::features::PointDetector;
use crate::network::{backward, forward, Tensor, WeightSet, CELL};
use crate::representation::{encode_triplet_windows, Frame1, GrayMode, Representation};
use crate::selfsup::harris::HarrisParams;
use crate::selfsup::labels::{binarize_labels, homographic_adaptation, AdaptationConfig, LabelGrid};
use crate::selfsup::loss::{
    correspondence_mask, descriptor_loss, detector_loss, FocalForm, FocalParams, HingeParams, LossWeights,
};

/// Everything a training run reads.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f32,
    /// Triplets per SGD step; gradients are averaged over the batch.
    pub batch_size: usize,
    pub epochs: usize,
    /// Crop size; clipped to the sensor and rounded down to whole cells.
    pub crop_width: usize,
    pub crop_height: usize,
    pub triplet: TripletConfig,
    pub representation: Representation,
    pub gray: GrayMode,
    pub focal: FocalParams,
    pub focal_form: FocalForm,
    pub hinge: HingeParams,
    pub loss_weights: LossWeights,
    pub adaptation: AdaptationConfig,
    pub harris: HarrisParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            batch_size: 8,
            epochs: 10,
            crop_width: 320,
            crop_height: 240,
            triplet: TripletConfig::default(),
            representation: Representation::Tencode,
            gray: GrayMode::Luminance,
            focal: FocalParams::default(),
            focal_form: FocalForm::Standard,
            hinge: HingeParams::default(),
            loss_weights: LossWeights::default(),
            adaptation: AdaptationConfig::default(),
            harris: HarrisParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("learning rate must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if self.crop_width < CELL || self.crop_height < CELL {
            return Err(Error::invalid("crop must cover at least one cell"));
        }
        if self.adaptation.n_homographies == 0 {
            return Err(Error::invalid("homographic adaptation needs at least one view"));
        }
        self.triplet.validate()?;
        self.focal.validate()?;
        self.hinge.validate()?;
        self.loss_weights.validate()?;
        self.adaptation.homography.validate()?;
        self.harris.validate()
    }

    /// Crop size used on a `width×height` sensor.
    pub fn crop_for(&self, width: usize, height: usize) -> Result<(usize, usize)> {
        let w = self.crop_width.min(width) / CELL * CELL;
        let h = self.crop_height.min(height) / CELL * CELL;
        if w == 0 || h == 0 {
            return Err(Error::invalid(format!("sensor {width}x{height} is smaller than one cell")));
        }
        Ok((w, h))
    }
}

/// One training example: a stream and the center of its triplet windows.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub stream: &'a EventStream,
    pub t_base: Micros,
}

/// Mean loss of every SGD step and of every epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossHistory {
    pub steps: Vec<f64>,
    pub epochs: Vec<f64>,
}

/// Encodes a triplet and crops all three frames at one random offset.
fn cropped_triplet(sample: &Sample, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<[Frame1; 3]> {
    let windows = triplet_windows(sample.t_base, &cfg.triplet, rng)?;
    let t = encode_triplet_windows(sample.stream, &windows, cfg.representation, cfg.gray)?;
    let g = sample.stream.geometry();
    let (cw, ch) = cfg.crop_for(g.width, g.height)?;
    let x0 = rng.gen_range(0..=g.width - cw);
    let y0 = rng.gen_range(0..=g.height - ch);
    Ok([t.high.crop(x0, y0, cw, ch)?, t.mid.crop(x0, y0, cw, ch)?, t.low.crop(x0, y0, cw, ch)?])
}

/// Pseudo-label for one frame.
pub fn label_frame<D: PointDetector + ?Sized, R: Rng + ?Sized>(
    frame: &Frame1,
    detector: &D,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<LabelGrid> {
    let agg = homographic_adaptation(frame, detector, &cfg.adaptation, rng)?;
    Ok(binarize_labels(&agg, cfg.focal.tau))
}

type SampleResult = (f64, WeightSet);

fn detector_sample<D: PointDetector + ?Sized>(
    w: &WeightSet,
    sample: &Sample,
    cfg: &TrainConfig,
    detector: &D,
    seed: u64,
) -> Result<SampleResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = cropped_triplet(sample, cfg, &mut rng)?;
    let label = label_frame(&frames[2], detector, cfg, &mut rng)?;
    let mut outs = Vec::with_capacity(3);
    for f in &frames {
        outs.push(forward(w, &Tensor::from_frame(f))?);
    }
    let semis = [&outs[0].0.semi, &outs[1].0.semi, &outs[2].0.semi];
    let (loss, grads) = detector_loss(semis, &label, &cfg.loss_weights, &cfg.focal, cfg.focal_form)?;
    let mut total = WeightSet::zeros();
    for ((_, cache), g) in outs.iter().zip(&grads) {
        total.add_assign(&backward(w, cache, Some(g), None)?);
    }
    Ok((loss, total))
}

fn descriptor_sample(w: &WeightSet, sample: &Sample, cfg: &TrainConfig, seed: u64) -> Result<SampleResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = cropped_triplet(sample, cfg, &mut rng)?;
    let mut outs = Vec::with_capacity(3);
    for f in &frames {
        outs.push(forward(w, &Tensor::from_frame(f))?);
    }
    let [_, _, hc, wc] = outs[0].0.desc_raw.shape();
    let s = correspondence_mask(hc, wc, cfg.hinge.epsilon);
    let descs = [&outs[0].0.desc_raw, &outs[1].0.desc_raw, &outs[2].0.desc_raw];
    let (loss, grads) = descriptor_loss(descs, &s, &cfg.loss_weights, &cfg.hinge)?;
    let mut total = WeightSet::zeros();
    for ((_, cache), g) in outs.iter().zip(&grads) {
        total.add_assign(&backward(w, cache, None, Some(g))?);
    }
    Ok((loss, total))
}

/// Shared epoch/batch loop. Per-sample work runs in parallel with its own
/// seed drawn in a fixed order, and gradients are summed in sample order, so
/// results do not depend on the thread count.
fn run<F, R>(mut w: WeightSet, samples: &[Sample], cfg: &TrainConfig, rng: &mut R, step: F) -> Result<(WeightSet, LossHistory)>
where
    F: Fn(&WeightSet, &Sample, u64) -> Result<SampleResult> + Sync,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut history = LossHistory::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut epoch_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let jobs: Vec<(usize, u64)> = batch.iter().map(|&i| (i, rng.gen())).collect();
            let results: Vec<SampleResult> = jobs
                .par_iter()
                .map(|&(i, seed)| step(&w, &samples[i], seed))
                .collect::<Result<_>>()?;
            let mut grads = WeightSet::zeros();
            let mut loss = 0.0;
            for (l, g) in &results {
                loss += l;
                grads.add_assign(g);
            }
            grads.scale(1.0 / results.len() as f32);
            w.sgd_step(&grads, cfg.lr)?;
            epoch_sum += loss;
            history.steps.push(loss / results.len() as f64);
        }
        history.epochs.push(epoch_sum / samples.len() as f64);
    }
    Ok((w, history))
}

/// Trains the encoder and detector head on focal loss against pseudo-labels
/// of the low-resolution frame of each triplet. The descriptor head is not
/// touched.
pub fn train_detector<D: PointDetector + ?Sized, R: Rng + ?Sized>(
    weights: WeightSet,
    samples: &[Sample],
    cfg: &TrainConfig,
    detector: &D,
    rng: &mut R,
) -> Result<(WeightSet, LossHistory)> {
    run(weights, samples, cfg, rng, |w, s, seed| detector_sample(w, s, cfg, detector, seed))
}

/// Trains the encoder and descriptor head on the hinge loss between the
/// three frames of each triplet. The detector head is frozen.
pub fn train_descriptor<R: Rng + ?Sized>(
    weights: WeightSet,
    samples: &[Sample],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(WeightSet, LossHistory)> {
    run(weights, samples, cfg, rng, |w, s, seed| descriptor_sample(w, s, cfg, seed))
}
