//! Frame encodings of event windows.
//!
//! * Tencode: 3 channels. Channel 1 and 3 carry polarity (255/0 for positive,
//!   0/255 for negative), channel 2 carries recency `255·(t_max − t)/Δt`
//!   (newest event = 0). Background is `(0, 0, 0)`.
//! * Time-surface: one channel, normalized timestamp, newest event = 255,
//!   background 0.
//! * Time-window: one channel, latest polarity only: 255 / 0, background 128.
//!
//! All encoders keep only the newest event per pixel; ties on `t` go to the
//! event that appears later in the stream.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::event_model::{
    triplet_windows, Event, EventStream, Geometry, Micros, Polarity, TemporalWindow,
    TripletConfig, TripletWindows,
};

pub const TIME_WINDOW_BACKGROUND: u8 = 128;

/// Interleaved 3-channel 8-bit frame, row-major `H×W×3`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame3 {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Frame3 {
    pub fn new(width: usize, height: usize) -> Self {
        Frame3 {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::shape(width * height * 3, data.len()));
        }
        Ok(Frame3 { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, value: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&value);
    }
}

/// Single-channel 8-bit frame, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame1 {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Frame1 {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0)
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Frame1 {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(width * height, data.len()));
        }
        Ok(Frame1 { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Copies the `width×height` region whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Frame1> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::invalid(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            let row = y * self.width;
            data.extend_from_slice(&self.data[row + x0..row + x0 + width]);
        }
        Ok(Frame1 { width, height, data })
    }

    /// Pixel values scaled to `[0, 1]`.
    pub fn to_unit_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32 / 255.0).collect()
    }
}

/// Binary per-pixel mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Mask {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(width * height, data.len()));
        }
        Ok(Mask { width, height, data })
    }

    /// Nonzero pixels are inside.
    pub fn from_frame(frame: &Frame1) -> Self {
        Mask {
            width: frame.width(),
            height: frame.height(),
            data: frame.data().iter().map(|&v| v != 0).collect(),
        }
    }

    pub fn to_frame(&self) -> Frame1 {
        Frame1 {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&b| if b { 255 } else { 0 }).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    /// Membership test for a sub-pixel point; the point is rounded to the
    /// nearest pixel and anything off-frame is outside.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        let (xr, yr) = (x.round(), y.round());
        if !(xr >= 0.0 && yr >= 0.0 && xr < self.width as f64 && yr < self.height as f64) {
            return false;
        }
        self.get(xr as usize, yr as usize)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Pixels whose whole `(2r+1)²` neighborhood is inside the mask.
    pub fn eroded(&self, radius: usize) -> Mask {
        let r = radius as isize;
        let (w, h) = (self.width as isize, self.height as isize);
        let mut out = Mask::new(self.width, self.height, false);
        for y in 0..h {
            for x in 0..w {
                let mut keep = true;
                'n: for dy in -r..=r {
                    for dx in -r..=r {
                        let (xx, yy) = (x + dx, y + dy);
                        if xx < 0 || yy < 0 || xx >= w || yy >= h || !self.get(xx as usize, yy as usize) {
                            keep = false;
                            break 'n;
                        }
                    }
                }
                out.set(x as usize, y as usize, keep);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Representation {
    Tencode,
    TimeSurface,
    TimeWindow,
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Representation::Tencode => "tencode",
            Representation::TimeSurface => "tsurface",
            Representation::TimeWindow => "twindow",
        })
    }
}

impl FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tencode" => Ok(Representation::Tencode),
            "tsurface" | "time-surface" => Ok(Representation::TimeSurface),
            "twindow" | "time-window" => Ok(Representation::TimeWindow),
            other => Err(Error::invalid(format!("unknown representation {other:?}"))),
        }
    }
}

/// How a Tencode frame is reduced to one channel for the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GrayMode {
    /// `0.299·c1 + 0.587·c2 + 0.114·c3`, rounded.
    #[default]
    Luminance,
    /// A single channel, 0-based.
    Channel(u8),
}

fn latest_per_pixel<'a>(events: &'a [Event], geometry: Geometry) -> Vec<Option<&'a Event>> {
    let mut latest: Vec<Option<&Event>> = vec![None; geometry.pixels()];
    for e in events {
        let slot = &mut latest[e.y as usize * geometry.width + e.x as usize];
        match slot {
            Some(prev) if prev.t > e.t => {}
            _ => *slot = Some(e),
        }
    }
    latest
}

fn check_range(events: &[Event], t_max: Micros, dt: Micros) -> Result<()> {
    if dt <= 0 {
        return Err(Error::invalid("temporal resolution must be positive"));
    }
    let lo = t_max - dt;
    match events.iter().find(|e| e.t < lo || e.t > t_max) {
        Some(e) => Err(Error::OutsideTemporalRange { t: e.t, lo, hi: t_max }),
        None => Ok(()),
    }
}

/// `round(255·num/den)` for `0 <= num <= den`, halves rounded up.
fn scaled_byte(num: Micros, den: Micros) -> u8 {
    let q = (2 * 255 * num as i128 + den as i128) / (2 * den as i128);
    q.clamp(0, 255) as u8
}

/// Tencode frame of `stream`, whose events must satisfy
/// `t_max − dt <= t <= t_max`.
pub fn encode_tencode(stream: &EventStream, t_max: Micros, dt: Micros) -> Result<Frame3> {
    let g = stream.geometry();
    check_range(stream.events(), t_max, dt)?;
    let mut frame = Frame3::new(g.width, g.height);
    for (i, e) in latest_per_pixel(stream.events(), g).into_iter().enumerate() {
        if let Some(e) = e {
            let recency = scaled_byte(t_max - e.t, dt);
            let px = match e.p {
                Polarity::Positive => [255, recency, 0],
                Polarity::Negative => [0, recency, 255],
            };
            frame.set_pixel(i % g.width, i / g.width, px);
        }
    }
    Ok(frame)
}

/// Time-surface frame: newest event 255, an event at `t_max − dt` maps to 0.
pub fn encode_time_surface(stream: &EventStream, t_max: Micros, dt: Micros) -> Result<Frame1> {
    let g = stream.geometry();
    check_range(stream.events(), t_max, dt)?;
    let mut frame = Frame1::new(g.width, g.height);
    for (px, e) in frame.data.iter_mut().zip(latest_per_pixel(stream.events(), g)) {
        if let Some(e) = e {
            *px = scaled_byte(e.t - (t_max - dt), dt);
        }
    }
    Ok(frame)
}

/// Time-window frame: the latest polarity per pixel.
pub fn encode_time_window(stream: &EventStream) -> Frame1 {
    let g = stream.geometry();
    let mut frame = Frame1::filled(g.width, g.height, TIME_WINDOW_BACKGROUND);
    for (px, e) in frame.data.iter_mut().zip(latest_per_pixel(stream.events(), g)) {
        if let Some(e) = e {
            *px = match e.p {
                Polarity::Positive => 255,
                Polarity::Negative => 0,
            };
        }
    }
    frame
}

pub fn to_grayscale(frame: &Frame3) -> Frame1 {
    to_grayscale_with(frame, GrayMode::Luminance)
}

pub fn to_grayscale_with(frame: &Frame3, mode: GrayMode) -> Frame1 {
    let data = frame
        .data
        .chunks_exact(3)
        .map(|c| match mode {
            GrayMode::Luminance => {
                let v = 299 * c[0] as u32 + 587 * c[1] as u32 + 114 * c[2] as u32;
                ((v + 500) / 1000) as u8
            }
            GrayMode::Channel(k) => c[k.min(2) as usize],
        })
        .collect();
    Frame1 {
        width: frame.width,
        height: frame.height,
        data,
    }
}

/// Decoded content of one Tencode pixel: polarity and estimated timestamp.
pub fn decode_tencode_pixel(px: [u8; 3], t_max: Micros, dt: Micros) -> Option<(Polarity, f64)> {
    let p = match (px[0], px[2]) {
        (255, 0) => Polarity::Positive,
        (0, 255) => Polarity::Negative,
        _ => return None,
    };
    Some((p, t_max as f64 - px[1] as f64 * dt as f64 / 255.0))
}

/// Encodes one window as a single-channel network input. An empty window
/// produces the representation's background frame.
pub fn encode_window(
    stream: &EventStream,
    window: TemporalWindow,
    rep: Representation,
    gray: GrayMode,
) -> Result<Frame1> {
    let g = stream.geometry();
    let sliced = stream.slice(window);
    let dt = window.duration();
    let Some(t_max) = sliced.last_timestamp() else {
        return Ok(match rep {
            Representation::TimeWindow => Frame1::filled(g.width, g.height, TIME_WINDOW_BACKGROUND),
            _ => Frame1::new(g.width, g.height),
        });
    };
    match rep {
        Representation::Tencode => Ok(to_grayscale_with(&encode_tencode(&sliced, t_max, dt)?, gray)),
        Representation::TimeSurface => encode_time_surface(&sliced, t_max, dt),
        Representation::TimeWindow => Ok(encode_time_window(&sliced)),
    }
}

/// Three-channel Tencode frame of one window; all background when empty.
pub fn encode_window_tencode(stream: &EventStream, window: TemporalWindow) -> Result<Frame3> {
    let g = stream.geometry();
    let sliced = stream.slice(window);
    match sliced.last_timestamp() {
        Some(t_max) => encode_tencode(&sliced, t_max, window.duration()),
        None => Ok(Frame3::new(g.width, g.height)),
    }
}

/// The three frames of one training triplet.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameTriplet {
    pub high: Frame1,
    pub mid: Frame1,
    pub low: Frame1,
}

impl FrameTriplet {
    pub fn as_array(&self) -> [&Frame1; 3] {
        [&self.high, &self.mid, &self.low]
    }
}

pub fn encode_triplet_windows(
    stream: &EventStream,
    windows: &TripletWindows,
    rep: Representation,
    gray: GrayMode,
) -> Result<FrameTriplet> {
    Ok(FrameTriplet {
        high: encode_window(stream, windows.high, rep, gray)?,
        mid: encode_window(stream, windows.mid, rep, gray)?,
        low: encode_window(stream, windows.low, rep, gray)?,
    })
}

/// Draws triplet windows around `t_base` and encodes each one.
pub fn encode_triplet<R: Rng + ?Sized>(
    stream: &EventStream,
    t_base: Micros,
    cfg: &TripletConfig,
    rep: Representation,
    rng: &mut R,
) -> Result<FrameTriplet> {
    let windows = triplet_windows(t_base, cfg, rng)?;
    encode_triplet_windows(stream, &windows, rep, GrayMode::Luminance)
}
