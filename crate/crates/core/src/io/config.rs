//! `key = value` configuration files with `[training]`, `[homography]`,
//! `[eval]` and `[synth]` sections. `#` and `;` start comments. Unknown
//! sections and keys are errors; keys that are absent keep their defaults.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::evaluation::ReprojConfig;
use crate::features::{ExtractParams, MatchMode, MatchParams};
use crate::representation::{GrayMode, Representation};
use crate::selfsup::TrainConfig;
use crate::synth::{Pattern, SceneConfig};

/// Settings for evaluation commands.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub extract: ExtractParams,
    pub matching: MatchParams,
    pub reproj: ReprojConfig,
    /// Disparity thresholds, pixels.
    pub sigmas: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            extract: ExtractParams::default(),
            matching: MatchParams::default(),
            reproj: ReprojConfig::default(),
            sigmas: vec![3.0, 6.0, 9.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub training: TrainConfig,
    /// Label-then-train rounds for the detector.
    pub rounds: usize,
    pub eval: EvalConfig,
    pub synth: SceneConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            training: TrainConfig::default(),
            rounds: 1,
            eval: EvalConfig::default(),
            synth: SceneConfig::default(),
        }
    }
}

pub fn parse_gray(s: &str) -> Result<GrayMode> {
    match s {
        "luminance" => Ok(GrayMode::Luminance),
        _ => match s.strip_prefix("channel").and_then(|c| c.parse::<u8>().ok()) {
            Some(c) if c < 3 => Ok(GrayMode::Channel(c)),
            _ => Err(Error::invalid(format!("unknown gray mode {s:?}"))),
        },
    }
}

fn parse<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("invalid value {v:?}: {e}"))
}

fn list(v: &str) -> std::result::Result<Vec<f64>, String> {
    v.split(',').map(|s| parse::<f64>(s.trim())).collect()
}

fn set_training(c: &mut Config, key: &str, v: &str) -> std::result::Result<(), String> {
    let t = &mut c.training;
    match key {
        "lr" => t.lr = parse(v)?,
        "batch_size" => t.batch_size = parse(v)?,
        "epochs" => t.epochs = parse(v)?,
        "rounds" => c.rounds = parse(v)?,
        "crop_width" => t.crop_width = parse(v)?,
        "crop_height" => t.crop_height = parse(v)?,
        "dt_l" => t.triplet.dt_l = parse(v)?,
        "dt_m_min" => t.triplet.dt_m_range.0 = parse(v)?,
        "dt_m_max" => t.triplet.dt_m_range.1 = parse(v)?,
        "dt_h_min" => t.triplet.dt_h_range.0 = parse(v)?,
        "dt_h_max" => t.triplet.dt_h_range.1 = parse(v)?,
        "representation" => t.representation = parse::<Representation>(v)?,
        "gray" => t.gray = parse_gray(v).map_err(|e| e.to_string())?,
        "alpha" => t.focal.alpha = parse(v)?,
        "gamma" => t.focal.gamma = parse(v)?,
        "tau" => t.focal.tau = parse(v)?,
        "focal_form" => t.focal_form = parse(v)?,
        "lambda" => t.hinge.lambda = parse(v)?,
        "lambda_side" => t.hinge.lambda_side = parse(v)?,
        "pos_margin" => t.hinge.pos_margin = parse(v)?,
        "neg_margin" => t.hinge.neg_margin = parse(v)?,
        "epsilon" => t.hinge.epsilon = parse(v)?,
        "weight_high" => t.loss_weights.high = parse(v)?,
        "weight_mid" => t.loss_weights.mid = parse(v)?,
        "weight_low" => t.loss_weights.low = parse(v)?,
        "harris_k" => t.harris.k = parse(v)?,
        "harris_sigma" => t.harris.sigma = parse(v)?,
        "harris_threshold" => t.harris.rel_threshold = parse(v)?,
        "harris_nms" => t.harris.nms_radius = parse(v)?,
        "harris_max_points" => t.harris.max_points = parse(v)?,
        _ => return Err(format!("unknown key {key:?}")),
    }
    Ok(())
}

fn set_homography(c: &mut Config, key: &str, v: &str) -> std::result::Result<(), String> {
    let a = &mut c.training.adaptation;
    match key {
        "count" => a.n_homographies = parse(v)?,
        "border" => a.border = parse(v)?,
        "max_translation" => a.homography.max_translation = parse(v)?,
        "max_rotation" => a.homography.max_rotation = parse(v)?,
        "scale_min" => a.homography.scale_range.0 = parse(v)?,
        "scale_max" => a.homography.scale_range.1 = parse(v)?,
        "max_perspective" => a.homography.max_perspective = parse(v)?,
        _ => return Err(format!("unknown key {key:?}")),
    }
    Ok(())
}

fn set_eval(c: &mut Config, key: &str, v: &str) -> std::result::Result<(), String> {
    let e = &mut c.eval;
    match key {
        "tau" => e.extract.tau = parse(v)?,
        "nms_radius" => e.extract.nms_radius = parse(v)?,
        "max_keypoints" => e.extract.max_count = if v == "none" { None } else { Some(parse(v)?) },
        "match_mode" => e.matching.mode = parse::<MatchMode>(v)?,
        "ratio" => e.matching.ratio = if v == "none" { None } else { Some(parse(v)?) },
        "dt" => e.reproj.dt = parse(v)?,
        "ransac_threshold" => e.reproj.ransac.threshold = parse(v)?,
        "ransac_iters" => e.reproj.ransac.max_iters = parse(v)?,
        "ransac_confidence" => e.reproj.ransac.confidence = parse(v)?,
        "sigmas" => e.sigmas = list(v)?,
        _ => return Err(format!("unknown key {key:?}")),
    }
    Ok(())
}

fn set_synth(c: &mut Config, key: &str, v: &str) -> std::result::Result<(), String> {
    let s = &mut c.synth;
    match key {
        "width" => s.width = parse(v)?,
        "height" => s.height = parse(v)?,
        "pattern" => s.pattern = parse::<Pattern>(v)?,
        "tx" => s.end.tx = parse(v)?,
        "ty" => s.end.ty = parse(v)?,
        "rotation" => s.end.rotation = parse(v)?,
        "scale" => s.end.scale = parse(v)?,
        "px" => s.end.px = parse(v)?,
        "py" => s.end.py = parse(v)?,
        "duration" => s.duration = parse(v)?,
        "contrast" => s.contrast = parse(v)?,
        "step" => s.step = parse(v)?,
        "noise_rate" => s.noise_rate = parse(v)?,
        "supersample" => s.supersample = parse(v)?,
        "seed" => s.seed = parse(v)?,
        _ => return Err(format!("unknown key {key:?}")),
    }
    Ok(())
}

type Setter = fn(&mut Config, &str, &str) -> std::result::Result<(), String>;

/// Parses configuration text; `path` is used in error messages only.
pub fn parse_config(text: &str, path: &Path) -> Result<Config> {
    let err = |line: usize, message: String| Error::Config {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut c = Config::default();
    let mut section: Option<Setter> = None;
    for (i, raw) in text.lines().enumerate() {
        let no = i + 1;
        let line = raw.split(['#', ';']).next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = Some(match name.trim() {
                "training" => set_training,
                "homography" => set_homography,
                "eval" => set_eval,
                "synth" => set_synth,
                other => return Err(err(no, format!("unknown section [{other}]"))),
            });
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(no, "expected 'key = value'".into()))?;
        let set = section.ok_or_else(|| err(no, "key outside of a section".into()))?;
        set(&mut c, key.trim(), value.trim()).map_err(|m| err(no, m))?;
    }
    validate(&c).map_err(|e| err(0, e.to_string()))?;
    Ok(c)
}

fn validate(c: &Config) -> Result<()> {
    c.training.validate()?;
    c.synth.validate()?;
    if c.rounds == 0 {
        return Err(Error::invalid("rounds must be at least 1"));
    }
    if c.eval.reproj.dt <= 0 {
        return Err(Error::invalid("eval dt must be positive"));
    }
    if c.eval.sigmas.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::invalid("sigmas must be positive"));
    }
    Ok(())
}

pub fn load_config(path: impl AsRef<Path>) -> Result<Config> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_config(&text, path)
}

/// Defaults when no path is given.
pub fn load_config_or_default(path: Option<&PathBuf>) -> Result<Config> {
    path.map_or_else(|| Ok(Config::default()), load_config)
}
