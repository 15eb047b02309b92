//! File formats. Every codec has a pure `encode_*`/`decode_*` pair over
//! bytes or text plus path-based helpers. Decoders return typed errors on
//! malformed input and never panic.

mod binary;
mod bytes;
mod config;
mod pnm;
mod text;

use std::path::Path;

pub use binary::{
    decode_events, decode_features, decode_weights, encode_events, encode_features, encode_weights,
    EVENTS_HEADER_LEN, EVENTS_MAGIC, EVENTS_VERSION, EVENT_RECORD_LEN, FEATURES_MAGIC, WEIGHTS_MAGIC,
    WEIGHTS_VERSION,
};
pub use config::{load_config, load_config_or_default, parse_config, parse_gray, Config, EvalConfig};
pub use pnm::{decode_mask, decode_pgm, decode_ppm, encode_mask, encode_pgm, encode_ppm};
pub use text::{
    decode_disparity_csv, decode_events_csv, decode_loss_csv, decode_matches_csv, encode_disparity_csv,
    encode_events_csv, encode_loss_csv, encode_matches_csv,
};

use crate::error::{Error, Result};
use crate::evaluation::DisparityMap;
use crate::event_model::EventStream;
use crate::features::FeatureSet;
use crate::geometry::Match;
use crate::network::WeightSet;
use crate::representation::{Frame1, Frame3, Mask};
use crate::selfsup::LossHistory;

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(std::fs::read(path)?).map_err(|_| Error::Malformed(format!("{} is not UTF-8", path.display())))
}

/// Binary event file, or the CSV codec when the extension is `.csv`.
pub fn read_events(path: impl AsRef<Path>) -> Result<EventStream> {
    let path = path.as_ref();
    if is_csv(path) {
        decode_events_csv(&read_text(path)?)
    } else {
        decode_events(&std::fs::read(path)?)
    }
}

pub fn write_events(path: impl AsRef<Path>, stream: &EventStream) -> Result<()> {
    let path = path.as_ref();
    if is_csv(path) {
        std::fs::write(path, encode_events_csv(stream))?;
    } else {
        std::fs::write(path, encode_events(stream)?)?;
    }
    Ok(())
}

pub fn read_frame3(path: impl AsRef<Path>) -> Result<Frame3> {
    decode_ppm(&std::fs::read(path)?)
}

pub fn write_frame3(path: impl AsRef<Path>, frame: &Frame3) -> Result<()> {
    Ok(std::fs::write(path, encode_ppm(frame))?)
}

pub fn read_frame1(path: impl AsRef<Path>) -> Result<Frame1> {
    decode_pgm(&std::fs::read(path)?)
}

pub fn write_frame1(path: impl AsRef<Path>, frame: &Frame1) -> Result<()> {
    Ok(std::fs::write(path, encode_pgm(frame))?)
}

/// A network input: PGM as is, PPM reduced by luminance.
pub fn read_gray_frame(path: impl AsRef<Path>) -> Result<Frame1> {
    let buf = std::fs::read(path)?;
    if buf.starts_with(b"P6") {
        Ok(crate::representation::to_grayscale(&decode_ppm(&buf)?))
    } else {
        decode_pgm(&buf)
    }
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    decode_mask(&std::fs::read(path)?)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    Ok(std::fs::write(path, encode_mask(mask))?)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightSet> {
    decode_weights(&std::fs::read(path)?)
}

pub fn save_weights(path: impl AsRef<Path>, w: &WeightSet) -> Result<()> {
    Ok(std::fs::write(path, encode_weights(w))?)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureSet> {
    decode_features(&std::fs::read(path)?)
}

pub fn write_features(path: impl AsRef<Path>, f: &FeatureSet) -> Result<()> {
    Ok(std::fs::write(path, encode_features(f)?)?)
}

pub fn read_matches(path: impl AsRef<Path>) -> Result<Vec<Match>> {
    decode_matches_csv(&read_text(path.as_ref())?)
}

pub fn write_matches(path: impl AsRef<Path>, matches: &[Match]) -> Result<()> {
    Ok(std::fs::write(path, encode_matches_csv(matches))?)
}

pub fn read_disparity(path: impl AsRef<Path>) -> Result<DisparityMap> {
    decode_disparity_csv(&read_text(path.as_ref())?)
}

pub fn write_disparity(path: impl AsRef<Path>, d: &DisparityMap) -> Result<()> {
    Ok(std::fs::write(path, encode_disparity_csv(d))?)
}

pub fn write_loss_history(path: impl AsRef<Path>, h: &LossHistory) -> Result<()> {
    Ok(std::fs::write(path, encode_loss_csv(h))?)
}
