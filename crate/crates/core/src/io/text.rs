//! Line-based text codecs. Numbers are written with Rust's shortest
//! round-trip formatting, so reading back yields the same bits.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::evaluation::DisparityMap;
use crate::event_model::{Event, EventStream, Geometry, Polarity};
use crate::geometry::{Match, Point2};
use crate::selfsup::LossHistory;

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Malformed(format!("line {line}: {msg}"))
}

fn fields<const N: usize>(line: &str, no: usize) -> Result<[&str; N]> {
    let parts: Vec<&str> = line.split(',').map(str::trim).collect();
    parts
        .try_into()
        .map_err(|p: Vec<&str>| bad(no, format!("expected {N} fields, found {}", p.len())))
}

fn num<T: std::str::FromStr>(s: &str, no: usize, what: &str) -> Result<T> {
    s.parse().map_err(|_| bad(no, format!("invalid {what} {s:?}")))
}

fn finite(v: f64, no: usize, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad(no, format!("{what} must be finite")))
    }
}

/// Parses a `# width,height` line.
fn geometry_line(line: Option<&str>) -> Result<(usize, usize)> {
    let line = line.ok_or_else(|| Error::Truncated("missing '# width,height' line".into()))?;
    let rest = line
        .strip_prefix('#')
        .ok_or_else(|| bad(1, "expected '# width,height'"))?;
    let [w, h] = fields::<2>(rest, 1)?;
    Ok((num(w, 1, "width")?, num(h, 1, "height")?))
}

/// Data lines with their 1-based line numbers; blank lines are skipped.
fn body(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .skip(1)
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub fn encode_events_csv(stream: &EventStream) -> String {
    let g = stream.geometry();
    let mut s = format!("# {},{}\n", g.width, g.height);
    for e in stream.events() {
        let _ = writeln!(s, "{},{},{},{}", e.x, e.y, e.t, e.p.sign());
    }
    s
}

pub fn decode_events_csv(text: &str) -> Result<EventStream> {
    let (width, height) = geometry_line(text.lines().next())?;
    let mut events = Vec::new();
    for (no, line) in body(text) {
        let [x, y, t, p] = fields::<4>(line, no)?;
        let p = Polarity::from_sign(num(p, no, "polarity")?).map_err(|e| bad(no, e))?;
        events.push(Event::new(num(x, no, "x")?, num(y, no, "y")?, num(t, no, "t")?, p));
    }
    EventStream::from_sorted(events, Geometry::new(width, height))
}

pub const MATCHES_HEADER: &str = "ax,ay,bx,by,score";

pub fn encode_matches_csv(matches: &[Match]) -> String {
    let mut s = format!("{MATCHES_HEADER}\n");
    for m in matches {
        let _ = writeln!(s, "{},{},{},{},{}", m.a.x, m.a.y, m.b.x, m.b.y, m.score);
    }
    s
}

pub fn decode_matches_csv(text: &str) -> Result<Vec<Match>> {
    if text.lines().next().map(str::trim) != Some(MATCHES_HEADER) {
        return Err(bad(1, format!("expected header {MATCHES_HEADER:?}")));
    }
    body(text)
        .map(|(no, line)| {
            let f = fields::<5>(line, no)?;
            let mut v = [0.0; 5];
            for (o, s) in v.iter_mut().zip(f) {
                *o = finite(num(s, no, "number")?, no, "value")?;
            }
            Ok(Match::new(Point2::new(v[0], v[1]), Point2::new(v[2], v[3]), v[4]))
        })
        .collect()
}

/// `# width,height`, then one `x,y,d` line per valid pixel.
pub fn encode_disparity_csv(d: &DisparityMap) -> String {
    let mut s = format!("# {},{}\n", d.width(), d.height());
    for (x, y, v) in d.entries() {
        let _ = writeln!(s, "{x},{y},{v}");
    }
    s
}

pub fn decode_disparity_csv(text: &str) -> Result<DisparityMap> {
    let (width, height) = geometry_line(text.lines().next())?;
    if width.saturating_mul(height) > 1 << 28 {
        return Err(bad(1, "disparity map too large"));
    }
    let mut d = DisparityMap::new(width, height);
    for (no, line) in body(text) {
        let [x, y, v] = fields::<3>(line, no)?;
        d.set(num(x, no, "x")?, num(y, no, "y")?, num(v, no, "disparity")?)
            .map_err(|e| bad(no, e))?;
    }
    Ok(d)
}

pub const LOSS_HEADER: &str = "kind,index,loss";

pub fn encode_loss_csv(h: &LossHistory) -> String {
    let mut s = format!("{LOSS_HEADER}\n");
    for (kind, values) in [("step", &h.steps), ("epoch", &h.epochs)] {
        for (i, v) in values.iter().enumerate() {
            let _ = writeln!(s, "{kind},{i},{v}");
        }
    }
    s
}

pub fn decode_loss_csv(text: &str) -> Result<LossHistory> {
    if text.lines().next().map(str::trim) != Some(LOSS_HEADER) {
        return Err(bad(1, format!("expected header {LOSS_HEADER:?}")));
    }
    let mut h = LossHistory::default();
    for (no, line) in body(text) {
        let [kind, idx, v] = fields::<3>(line, no)?;
        let list = match kind {
            "step" => &mut h.steps,
            "epoch" => &mut h.epochs,
            other => return Err(bad(no, format!("unknown kind {other:?}"))),
        };
        if num::<usize>(idx, no, "index")? != list.len() {
            return Err(bad(no, "indices must be consecutive"));
        }
        list.push(num(v, no, "loss")?);
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn event_csv_layout() {
        let s = EventStream::from_sorted(vec![Event::new(1, 2, -3, Polarity::Negative)], Geometry::new(4, 4)).unwrap();
        let text = encode_events_csv(&s);
        assert_eq!(text, "# 4,4\n1,2,-3,-1\n");
        assert_eq!(decode_events_csv(&text).unwrap().events(), s.events());
        assert!(decode_events_csv("# 4,4\n1,2,3,0\n").is_err());
        assert!(decode_events_csv("# 4,4\n9,2,3,1\n").is_err());
        assert!(decode_events_csv("1,2,3,1\n").is_err());
    }

    #[test]
    fn matches_keep_bits() {
        let m = vec![Match::new(Point2::new(0.1 + 0.2, 1e-300), Point2::new(-3.5, 7.0), 0.987654321)];
        assert_eq!(decode_matches_csv(&encode_matches_csv(&m)).unwrap(), m);
        assert!(decode_matches_csv("ax,ay,bx,by,score\nNaN,0,0,0,0\n").is_err());
    }

    #[test]
    fn loss_history_order_is_checked() {
        let h = LossHistory {
            steps: vec![0.5, 0.25],
            epochs: vec![0.375],
        };
        assert_eq!(decode_loss_csv(&encode_loss_csv(&h)).unwrap(), h);
        assert!(decode_loss_csv("kind,index,loss\nstep,1,0.5\n").is_err());
    }
}
