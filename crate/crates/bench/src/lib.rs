//! Shared fixtures for the benchmarks.

use eventpoint::event_model::{EventStream, TemporalWindow};
use eventpoint::representation::{encode_window, Frame1, GrayMode, Representation};
use eventpoint::synth::{generate, SceneConfig};

/// A 320x240 synthetic checkerboard sequence.
pub fn scene() -> EventStream {
    let cfg = SceneConfig {
        width: 320,
        height: 240,
        supersample: 2,
        duration: 100_000,
        ..SceneConfig::default()
    };
    generate(&cfg).expect("valid scene").events
}

/// The 20 ms window ending at the middle of the stream.
pub fn window(stream: &EventStream) -> TemporalWindow {
    let mid = stream.last_timestamp().unwrap_or(0) / 2;
    TemporalWindow::new(mid - 20_000, mid).expect("positive duration")
}

pub fn frame(stream: &EventStream) -> Frame1 {
    encode_window(stream, window(stream), Representation::Tencode, GrayMode::Luminance).expect("encodable")
}
