//! Little-endian binary formats: event streams (`EVS1`), network weights
//! (`EPW1`) and extracted features (`EPF1`).

use super::bytes::{put_f32s, ByteReader};
use crate::error::{Error, Result};
use crate::event_model::{Event, EventStream, Geometry, Polarity};
use crate::features::{FeatureSet, Keypoint};
use crate::network::{LayerParams, WeightSet, LAYERS};

pub const EVENTS_MAGIC: &str = "EVS1";
pub const EVENTS_VERSION: u16 = 1;
pub const EVENTS_HEADER_LEN: usize = 18;
pub const EVENT_RECORD_LEN: usize = 16;

pub const WEIGHTS_MAGIC: &str = "EPW1";
pub const WEIGHTS_VERSION: u32 = 1;

pub const FEATURES_MAGIC: &str = "EPF1";
pub const FEATURES_VERSION: u32 = 1;

fn dim_u16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} does not fit the event format")))
}

fn dim_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} does not fit the file format")))
}

pub fn encode_events(stream: &EventStream) -> Result<Vec<u8>> {
    let g = stream.geometry();
    let mut out = Vec::with_capacity(EVENTS_HEADER_LEN + stream.len() * EVENT_RECORD_LEN);
    out.extend_from_slice(EVENTS_MAGIC.as_bytes());
    out.extend_from_slice(&EVENTS_VERSION.to_le_bytes());
    out.extend_from_slice(&dim_u16(g.width, "width")?.to_le_bytes());
    out.extend_from_slice(&dim_u16(g.height, "height")?.to_le_bytes());
    out.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in stream.events() {
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.extend_from_slice(&e.t.to_le_bytes());
        out.push(e.p.sign() as u8);
        out.extend_from_slice(&[0; 3]);
    }
    Ok(out)
}

pub fn decode_events(buf: &[u8]) -> Result<EventStream> {
    let mut r = ByteReader::new(buf);
    r.magic(EVENTS_MAGIC)?;
    let version = r.u16("version")?;
    if version != EVENTS_VERSION {
        return Err(Error::UnsupportedVersion(version as u32));
    }
    let width = r.u16("width")? as usize;
    let height = r.u16("height")? as usize;
    let count = r.u64("event count")?;
    let expected = (count as u128) * EVENT_RECORD_LEN as u128;
    if (r.remaining() as u128) < expected {
        return Err(Error::Truncated(format!(
            "header announces {count} events, payload holds {}",
            r.remaining() / EVENT_RECORD_LEN
        )));
    }
    let mut events = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let x = r.u16("x")?;
        let y = r.u16("y")?;
        let t = r.i64("t")?;
        let p = Polarity::from_sign(r.u8("polarity")? as i8)?;
        if r.take(3, "padding")? != [0; 3] {
            return Err(Error::Malformed("non-zero record padding".into()));
        }
        events.push(Event::new(x, y, t, p));
    }
    r.finish()?;
    EventStream::from_sorted(events, Geometry::new(width, height))
}

fn name_of(layer: usize) -> &'static str {
    LAYERS[layer].name
}

/// Per layer: name length (u16), name, weight shape (4 × u32), weights,
/// then one bias per output channel.
pub fn encode_weights(w: &WeightSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC.as_bytes());
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(LAYERS.len() as u32).to_le_bytes());
    for (i, (spec, l)) in LAYERS.iter().zip(w.layers()).enumerate() {
        let name = name_of(i).as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        for d in spec.weight_shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        put_f32s(&mut out, &l.weight);
        put_f32s(&mut out, &l.bias);
    }
    out
}

pub fn decode_weights(buf: &[u8]) -> Result<WeightSet> {
    let mut r = ByteReader::new(buf);
    r.magic(WEIGHTS_MAGIC)?;
    let version = r.u32("version")?;
    if version != WEIGHTS_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let n = r.u32("layer count")? as usize;
    if n != LAYERS.len() {
        return Err(Error::Malformed(format!("expected {} layers, found {n}", LAYERS.len())));
    }
    let mut layers = Vec::with_capacity(n);
    for spec in &LAYERS {
        let len = r.u16("layer name length")? as usize;
        let name = r.take(len, "layer name")?;
        if name != spec.name.as_bytes() {
            return Err(Error::Malformed(format!(
                "expected layer {}, found {:?}",
                spec.name,
                String::from_utf8_lossy(name)
            )));
        }
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = r.u32("layer shape")? as usize;
        }
        if shape != spec.weight_shape() {
            return Err(Error::LayerShape {
                layer: spec.name.to_string(),
                expected: spec.weight_shape(),
                actual: shape,
            });
        }
        let weight = r.f32s(shape.iter().product(), spec.name)?;
        let bias = r.f32s(spec.out_channels, spec.name)?;
        layers.push(LayerParams { weight, bias });
    }
    r.finish()?;
    WeightSet::from_layers(layers)
}

/// Header (magic, version, width, height, descriptor length, count as
/// u32), keypoints as `(x: f64, y: f64, score: f32)`, then descriptors.
pub fn encode_features(f: &FeatureSet) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(FEATURES_MAGIC.as_bytes());
    for v in [
        FEATURES_VERSION,
        dim_u32(f.width(), "width")?,
        dim_u32(f.height(), "height")?,
        dim_u32(f.dim(), "descriptor length")?,
        dim_u32(f.len(), "keypoint count")?,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for k in f.keypoints() {
        out.extend_from_slice(&k.x.to_le_bytes());
        out.extend_from_slice(&k.y.to_le_bytes());
        out.extend_from_slice(&k.score.to_le_bytes());
    }
    put_f32s(&mut out, f.descriptors());
    Ok(out)
}

pub fn decode_features(buf: &[u8]) -> Result<FeatureSet> {
    let mut r = ByteReader::new(buf);
    r.magic(FEATURES_MAGIC)?;
    let version = r.u32("version")?;
    if version != FEATURES_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let width = r.u32("width")? as usize;
    let height = r.u32("height")? as usize;
    let dim = r.u32("descriptor length")? as usize;
    let count = r.u32("keypoint count")? as usize;
    if r.remaining() < count.saturating_mul(20) {
        return Err(Error::Truncated(format!("{count} keypoints announced")));
    }
    let mut kps = Vec::with_capacity(count);
    for _ in 0..count {
        let x = r.f64("keypoint")?;
        let y = r.f64("keypoint")?;
        let score = r.f32("keypoint")?;
        kps.push(Keypoint::new(x, y, score));
    }
    let desc = r.f32s(count.saturating_mul(dim), "descriptors")?;
    r.finish()?;
    FeatureSet::new(width, height, dim, kps, desc).map_err(|e| match e {
        Error::InvalidArgument(m) => Error::Malformed(m),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream() -> EventStream {
        let ev = vec![
            Event::new(0, 0, -5, Polarity::Positive),
            Event::new(3, 1, 7, Polarity::Negative),
            Event::new(3, 1, 7, Polarity::Positive),
        ];
        EventStream::from_sorted(ev, Geometry::new(4, 2)).unwrap()
    }

    #[test]
    fn event_layout() {
        let b = encode_events(&stream()).unwrap();
        assert_eq!(b.len(), EVENTS_HEADER_LEN + 3 * EVENT_RECORD_LEN);
        assert_eq!(&b[..4], b"EVS1");
        assert_eq!(&b[6..10], &[4, 0, 2, 0]);
        assert_eq!(b[18 + 16 + 12], 0xff);
        assert_eq!(decode_events(&b).unwrap().events(), stream().events());
    }

    #[test]
    fn event_errors() {
        let mut b = encode_events(&stream()).unwrap();
        assert!(matches!(decode_events(&b[..b.len() - 1]), Err(Error::Truncated(_))));
        let mut bumped = b.clone();
        bumped[4] = 2;
        assert!(matches!(decode_events(&bumped), Err(Error::UnsupportedVersion(2))));
        b[0] = b'X';
        assert!(matches!(decode_events(&b), Err(Error::BadMagic { .. })));
        // x = 4 on a 4-wide sensor.
        let mut oob = encode_events(&stream()).unwrap();
        oob[18] = 4;
        assert!(matches!(decode_events(&oob), Err(Error::OutOfBounds { .. })));
        let mut unsorted = encode_events(&stream()).unwrap();
        unsorted[18 + 4 + 7] = 0;
        assert!(matches!(decode_events(&unsorted), Err(Error::Unsorted(1))));
    }

    #[test]
    fn empty_stream_is_header_only() {
        let s = EventStream::empty(Geometry::new(10, 10));
        let b = encode_events(&s).unwrap();
        assert_eq!(b.len(), EVENTS_HEADER_LEN);
        assert!(decode_events(&b).unwrap().is_empty());
    }

    #[test]
    fn weights_shape_error_names_layer() {
        let mut w = WeightSet::zeros();
        w.layer_mut(0).weight[0] = 1.5;
        let b = encode_weights(&w);
        assert_eq!(decode_weights(&b).unwrap(), w);
        // Rewrite the detector head's output dimension to 64.
        let mut pos = 12;
        for spec in &LAYERS {
            let len = u16::from_le_bytes([b[pos], b[pos + 1]]) as usize;
            pos += 2 + len;
            if spec.name == LAYERS[crate::network::DETECTOR_HEAD[1]].name {
                break;
            }
            pos += 16 + 4 * (spec.weight_shape().iter().product::<usize>() + spec.out_channels);
        }
        let mut bad = b.clone();
        bad[pos..pos + 4].copy_from_slice(&64u32.to_le_bytes());
        match decode_weights(&bad) {
            Err(Error::LayerShape { layer, actual, .. }) => {
                assert_eq!(layer, LAYERS[crate::network::DETECTOR_HEAD[1]].name);
                assert_eq!(actual[0], 64);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
