//! Events, time-ordered streams, temporal windows and the multi-resolution
//! window triplets used for spatio-temporal self-supervision.
//!
//! Timestamps are integer microseconds. A window `(start, end]` is open at
//! the start and closed at the end so that the newest event of a window is
//! always a member of it.

use rand::Rng;

use crate::error::{Error, Result};

/// Microseconds.
pub type Micros = i64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn from_sign(p: i8) -> Result<Self> {
        match p {
            1 => Ok(Polarity::Positive),
            -1 => Ok(Polarity::Negative),
            other => Err(Error::Malformed(format!("polarity must be +1 or -1, got {other}"))),
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t: Micros,
    pub p: Polarity,
}

impl Event {
    pub fn new(x: u16, y: u16, t: Micros, p: Polarity) -> Self {
        Event { x, y, t, p }
    }
}

/// Sensor size in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Geometry {
    pub width: usize,
    pub height: usize,
}

impl Geometry {
    pub fn new(width: usize, height: usize) -> Self {
        Geometry { width, height }
    }

    pub fn contains(&self, x: u16, y: u16) -> bool {
        (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

/// Events sorted non-decreasingly by timestamp, all inside `geometry`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    events: Vec<Event>,
    geometry: Geometry,
}

impl EventStream {
    /// Builds a stream, stably sorting by timestamp. Events at equal
    /// timestamps keep their input order.
    pub fn new(mut events: Vec<Event>, geometry: Geometry) -> Result<Self> {
        check_bounds(&events, geometry)?;
        if !is_sorted(&events) {
            events.sort_by_key(|e| e.t);
        }
        Ok(EventStream { events, geometry })
    }

    /// Builds a stream from events that must already be sorted.
    pub fn from_sorted(events: Vec<Event>, geometry: Geometry) -> Result<Self> {
        check_bounds(&events, geometry)?;
        if let Some(i) = events.windows(2).position(|w| w[1].t < w[0].t) {
            return Err(Error::Unsorted(i + 1));
        }
        Ok(EventStream { events, geometry })
    }

    pub fn empty(geometry: Geometry) -> Self {
        EventStream {
            events: Vec::new(),
            geometry,
        }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn first_timestamp(&self) -> Option<Micros> {
        self.events.first().map(|e| e.t)
    }

    pub fn last_timestamp(&self) -> Option<Micros> {
        self.events.last().map(|e| e.t)
    }

    /// Borrowed view of the events inside `window`.
    pub fn window_events(&self, window: TemporalWindow) -> &[Event] {
        let lo = self.events.partition_point(|e| e.t <= window.start());
        let hi = self.events.partition_point(|e| e.t <= window.end());
        &self.events[lo..hi.max(lo)]
    }

    /// Events with `start < t <= end`, as a new stream with the same geometry.
    pub fn slice(&self, window: TemporalWindow) -> EventStream {
        EventStream {
            events: self.window_events(window).to_vec(),
            geometry: self.geometry,
        }
    }

    /// Timestamp of the newest event inside `window`.
    pub fn latest_timestamp(&self, window: TemporalWindow) -> Option<Micros> {
        self.window_events(window).last().map(|e| e.t)
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }
}

fn is_sorted(events: &[Event]) -> bool {
    events.windows(2).all(|w| w[0].t <= w[1].t)
}

fn check_bounds(events: &[Event], geometry: Geometry) -> Result<()> {
    if geometry.width == 0 || geometry.height == 0 {
        return Err(Error::invalid("sensor geometry must be non-empty"));
    }
    match events.iter().find(|e| !geometry.contains(e.x, e.y)) {
        Some(e) => Err(Error::OutOfBounds {
            x: e.x as i64,
            y: e.y as i64,
            width: geometry.width,
            height: geometry.height,
        }),
        None => Ok(()),
    }
}

/// A half-open interval `(start, end]` of microseconds with `end > start`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TemporalWindow {
    start: Micros,
    end: Micros,
}

impl TemporalWindow {
    pub fn new(start: Micros, end: Micros) -> Result<Self> {
        if end <= start {
            return Err(Error::invalid(format!(
                "window end {end} must exceed start {start}"
            )));
        }
        Ok(TemporalWindow { start, end })
    }

    /// The window of length `duration` centered on `center`.
    pub fn centered(center: Micros, duration: Micros) -> Result<Self> {
        let start = center - duration / 2;
        Self::new(start, start + duration)
    }

    pub fn start(&self) -> Micros {
        self.start
    }

    pub fn end(&self) -> Micros {
        self.end
    }

    pub fn duration(&self) -> Micros {
        self.end - self.start
    }

    pub fn contains(&self, t: Micros) -> bool {
        self.start < t && t <= self.end
    }

    pub fn is_within(&self, other: &TemporalWindow) -> bool {
        other.start <= self.start && self.end <= other.end
    }
}

/// Durations for the high/mid/low temporal resolutions of a triplet.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TripletConfig {
    pub dt_l: Micros,
    pub dt_m_range: (Micros, Micros),
    pub dt_h_range: (Micros, Micros),
}

impl Default for TripletConfig {
    fn default() -> Self {
        TripletConfig {
            dt_l: 20_000,
            dt_m_range: (20_000, 35_000),
            dt_h_range: (35_000, 50_000),
        }
    }
}

impl TripletConfig {
    pub fn validate(&self) -> Result<()> {
        let (m_lo, m_hi) = self.dt_m_range;
        let (h_lo, h_hi) = self.dt_h_range;
        if self.dt_l <= 0 {
            return Err(Error::invalid("dt_l must be positive"));
        }
        if m_lo > m_hi || h_lo > h_hi {
            return Err(Error::invalid("triplet duration ranges must be non-empty"));
        }
        if self.dt_l > m_lo || m_hi > h_lo {
            return Err(Error::invalid(
                "triplet durations must satisfy dt_l <= dt_m <= dt_h",
            ));
        }
        Ok(())
    }

    /// Smallest admissible base timestamp.
    pub fn min_base(&self) -> Micros {
        self.dt_h_range.1 / 2
    }
}

/// Three windows centered on one base timestamp, nested low ⊆ mid ⊆ high.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TripletWindows {
    pub high: TemporalWindow,
    pub mid: TemporalWindow,
    pub low: TemporalWindow,
}

impl TripletWindows {
    /// Windows for explicitly chosen durations.
    pub fn from_durations(
        t_base: Micros,
        dt_h: Micros,
        dt_m: Micros,
        dt_l: Micros,
    ) -> Result<Self> {
        if !(dt_l <= dt_m && dt_m <= dt_h) {
            return Err(Error::invalid("durations must satisfy dt_l <= dt_m <= dt_h"));
        }
        Ok(TripletWindows {
            high: TemporalWindow::centered(t_base, dt_h)?,
            mid: TemporalWindow::centered(t_base, dt_m)?,
            low: TemporalWindow::centered(t_base, dt_l)?,
        })
    }

    pub fn as_array(&self) -> [TemporalWindow; 3] {
        [self.high, self.mid, self.low]
    }
}

/// Draws `dt_m` then `dt_h` uniformly (inclusive) from their ranges and
/// centers all three windows on `t_base`.
pub fn triplet_windows<R: Rng + ?Sized>(
    t_base: Micros,
    cfg: &TripletConfig,
    rng: &mut R,
) -> Result<TripletWindows> {
    cfg.validate()?;
    if t_base < cfg.min_base() {
        return Err(Error::invalid(format!(
            "t_base {t_base} must be at least {}",
            cfg.min_base()
        )));
    }
    let dt_m = rng.gen_range(cfg.dt_m_range.0..=cfg.dt_m_range.1);
    let dt_h = rng.gen_range(cfg.dt_h_range.0..=cfg.dt_h_range.1);
    TripletWindows::from_durations(t_base, dt_h, dt_m, cfg.dt_l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stream_at(ts: &[Micros]) -> EventStream {
        let events = ts
            .iter()
            .map(|&t| Event::new(0, 0, t, Polarity::Positive))
            .collect();
        EventStream::new(events, Geometry::new(4, 4)).unwrap()
    }

    fn times(s: &EventStream) -> Vec<Micros> {
        s.events().iter().map(|e| e.t).collect()
    }

    #[test]
    fn slice_is_open_at_start_closed_at_end() {
        let s = stream_at(&[5, 10, 15]);
        let w = TemporalWindow::new(4, 12).unwrap();
        assert_eq!(times(&s.slice(w)), vec![5, 10]);
        let w = TemporalWindow::new(5, 15).unwrap();
        assert_eq!(times(&s.slice(w)), vec![10, 15]);
    }

    #[test]
    fn slice_before_stream_is_empty() {
        let s = stream_at(&[5, 10, 15]);
        assert!(s.slice(TemporalWindow::new(0, 4).unwrap()).is_empty());
    }

    #[test]
    fn slice_covering_everything_is_identity() {
        let s = stream_at(&[5, 10, 15]);
        assert_eq!(s.slice(TemporalWindow::new(0, 100).unwrap()), s);
    }

    #[test]
    fn latest_timestamp_cases() {
        let s = stream_at(&[5, 10, 15]);
        assert_eq!(s.latest_timestamp(TemporalWindow::new(0, 12).unwrap()), Some(10));
        assert_eq!(s.latest_timestamp(TemporalWindow::new(20, 30).unwrap()), None);
        let one = stream_at(&[7]);
        assert_eq!(one.latest_timestamp(TemporalWindow::new(0, 10).unwrap()), Some(7));
    }

    #[test]
    fn invalid_window_rejected() {
        assert!(TemporalWindow::new(5, 5).is_err());
        assert!(TemporalWindow::new(6, 5).is_err());
    }

    #[test]
    fn construction_sorts_stably() {
        let mk = |x, t| Event::new(x, 0, t, Polarity::Positive);
        let input = vec![mk(3, 20), mk(0, 10), mk(1, 20), mk(2, 10), mk(4, 5)];
        let s = EventStream::new(input, Geometry::new(8, 1)).unwrap();
        let xs: Vec<u16> = s.events().iter().map(|e| e.x).collect();
        assert_eq!(xs, vec![4, 0, 2, 3, 1]);
    }

    #[test]
    fn shuffled_input_matches_sorted_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sorted: Vec<Event> = (0..200)
            .map(|i| Event::new((i % 7) as u16, (i % 5) as u16, i as i64 * 3, Polarity::Negative))
            .collect();
        let mut shuffled = sorted.clone();
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        let s = EventStream::new(shuffled, Geometry::new(8, 8)).unwrap();
        assert_eq!(s.events(), sorted.as_slice());
        assert!(EventStream::from_sorted(vec![sorted[1], sorted[0]], Geometry::new(8, 8)).is_err());
    }

    #[test]
    fn out_of_bounds_event_rejected() {
        let e = Event::new(4, 0, 0, Polarity::Positive);
        assert!(matches!(
            EventStream::new(vec![e], Geometry::new(4, 4)),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn polarity_must_be_unit() {
        assert!(Polarity::from_sign(0).is_err());
        assert_eq!(Polarity::from_sign(-1).unwrap(), Polarity::Negative);
    }

    #[test]
    fn triplet_example_windows() {
        let w = TripletWindows::from_durations(100_000, 40_000, 30_000, 20_000).unwrap();
        assert_eq!((w.low.start(), w.low.end()), (90_000, 110_000));
        assert_eq!((w.mid.start(), w.mid.end()), (85_000, 115_000));
        assert_eq!((w.high.start(), w.high.end()), (80_000, 120_000));
    }

    #[test]
    fn collapsed_ranges_give_identical_windows() {
        let cfg = TripletConfig {
            dt_l: 20_000,
            dt_m_range: (20_000, 20_000),
            dt_h_range: (20_000, 20_000),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = triplet_windows(50_000, &cfg, &mut rng).unwrap();
        assert_eq!(w.high, w.mid);
        assert_eq!(w.mid, w.low);
    }

    #[test]
    fn triplet_precondition_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(triplet_windows(24_999, &TripletConfig::default(), &mut rng).is_err());
        assert!(triplet_windows(25_000, &TripletConfig::default(), &mut rng).is_ok());
    }

    #[test]
    fn triplets_nest_over_many_draws() {
        let cfg = TripletConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..1000 {
            let w = triplet_windows(25_000 + i * 37, &cfg, &mut rng).unwrap();
            assert!(w.low.is_within(&w.mid), "{w:?}");
            assert!(w.mid.is_within(&w.high), "{w:?}");
            assert_eq!(w.low.duration(), 20_000);
            assert!((20_000..=35_000).contains(&w.mid.duration()));
            assert!((35_000..=50_000).contains(&w.high.duration()));
        }
    }

    proptest! {
        #[test]
        fn slice_idempotent_and_nested(
            ts in proptest::collection::vec(0i64..1000, 0..60),
            a in 0i64..1000, la in 1i64..500,
            b in 0i64..500, lb in 1i64..500,
        ) {
            let s = stream_at(&ts);
            let outer = TemporalWindow::new(a, a + la + lb + b).unwrap();
            let once = s.slice(outer);
            prop_assert_eq!(once.slice(outer), once.clone());
            let inner = TemporalWindow::new(a + b.min(la), a + b.min(la) + lb).unwrap();
            prop_assert!(inner.is_within(&outer));
            prop_assert_eq!(s.slice(inner), once.slice(inner));
            let brute: Vec<i64> = {
                let mut v: Vec<i64> = ts.iter().copied().filter(|&t| outer.contains(t)).collect();
                v.sort();
                v
            };
            prop_assert_eq!(times(&once), brute);
        }

        #[test]
        fn triplets_nest_for_every_seed(seed in any::<u64>(), base in 25_000i64..10_000_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = triplet_windows(base, &TripletConfig::default(), &mut rng).unwrap();
            prop_assert!(w.low.is_within(&w.mid) && w.mid.is_within(&w.high));
        }
    }
}
