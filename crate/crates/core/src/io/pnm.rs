//! Binary PPM (`P6`) and PGM (`P5`) with a maximum value of 255.

use crate::error::{Error, Result};
use crate::representation::{Frame1, Frame3, Mask};

fn header(magic: &str, width: usize, height: usize) -> Vec<u8> {
    format!("{magic}\n{width} {height}\n255\n").into_bytes()
}

pub fn encode_ppm(frame: &Frame3) -> Vec<u8> {
    let mut out = header("P6", frame.width(), frame.height());
    out.extend_from_slice(frame.data());
    out
}

pub fn encode_pgm(frame: &Frame1) -> Vec<u8> {
    let mut out = header("P5", frame.width(), frame.height());
    out.extend_from_slice(frame.data());
    out
}

struct Header<'a> {
    width: usize,
    height: usize,
    body: &'a [u8],
}

fn skip_space(buf: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < buf.len() && buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < buf.len() && buf[pos] == b'#' {
            while pos < buf.len() && buf[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn number(buf: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    *pos = skip_space(buf, *pos);
    let start = *pos;
    while *pos < buf.len() && buf[*pos].is_ascii_digit() {
        *pos += 1;
    }
    let digits = std::str::from_utf8(&buf[start..*pos]).expect("ascii digits");
    if digits.is_empty() {
        return Err(Error::Malformed(format!("missing {what} in image header")));
    }
    digits
        .parse::<u32>()
        .map(|v| v as usize)
        .map_err(|_| Error::Malformed(format!("{what} out of range in image header")))
}

fn parse<'a>(buf: &'a [u8], magic: &'static str, channels: usize) -> Result<Header<'a>> {
    if !buf.starts_with(magic.as_bytes()) {
        return Err(Error::BadMagic { expected: magic });
    }
    let mut pos = 2;
    if buf.get(pos).is_some_and(|c| !c.is_ascii_whitespace() && *c != b'#') {
        return Err(Error::BadMagic { expected: magic });
    }
    let width = number(buf, &mut pos, "width")?;
    let height = number(buf, &mut pos, "height")?;
    let maxval = number(buf, &mut pos, "maximum value")?;
    if maxval != 255 {
        return Err(Error::Malformed(format!("maximum value {maxval}, only 255 is supported")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Malformed("zero image dimension".into()));
    }
    if !buf.get(pos).is_some_and(|c| c.is_ascii_whitespace()) {
        return Err(Error::Malformed("missing separator before pixel data".into()));
    }
    let body = &buf[pos + 1..];
    let expected = (width as u128) * (height as u128) * channels as u128;
    if (body.len() as u128) < expected {
        return Err(Error::Truncated(format!("{width}x{height} image")));
    }
    if body.len() as u128 != expected {
        return Err(Error::Malformed(format!("{} trailing bytes", body.len() as u128 - expected)));
    }
    Ok(Header { width, height, body })
}

pub fn decode_ppm(buf: &[u8]) -> Result<Frame3> {
    let h = parse(buf, "P6", 3)?;
    Frame3::from_raw(h.width, h.height, h.body.to_vec())
}

pub fn decode_pgm(buf: &[u8]) -> Result<Frame1> {
    let h = parse(buf, "P5", 1)?;
    Frame1::from_raw(h.width, h.height, h.body.to_vec())
}

/// Masks are stored as PGM with 0 outside and 255 inside; any nonzero value
/// reads as inside.
pub fn encode_mask(mask: &Mask) -> Vec<u8> {
    encode_pgm(&mask.to_frame())
}

pub fn decode_mask(buf: &[u8]) -> Result<Mask> {
    Ok(Mask::from_frame(&decode_pgm(buf)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_pixel() {
        let mut f = Frame3::new(1, 1);
        f.set_pixel(0, 0, [1, 2, 3]);
        let b = encode_ppm(&f);
        assert_eq!(b, b"P6\n1 1\n255\n\x01\x02\x03");
        assert_eq!(decode_ppm(&b).unwrap(), f);
    }

    #[test]
    fn comments_and_large_dimensions() {
        let b = b"P5 # c\n2 # w\n1\n255\n\x07\x08";
        assert_eq!(decode_pgm(b).unwrap().data(), &[7, 8]);
        // Header parses, then the payload is found short.
        let big = b"P5\n4294967295 4294967295\n255\n\x00";
        assert!(matches!(decode_pgm(big), Err(Error::Truncated(_))));
        assert!(matches!(decode_pgm(b"P5\n4294967296 1\n255\n\x00"), Err(Error::Malformed(_))));
    }

    #[test]
    fn header_errors() {
        assert!(matches!(decode_pgm(b"P6\n1 1\n255\n\x00"), Err(Error::BadMagic { .. })));
        assert!(decode_pgm(b"P5\n1 1\n65535\n\x00\x00").is_err());
        assert!(decode_pgm(b"P5\n1 1\n255").is_err());
        assert!(decode_pgm(b"P5\n0 1\n255\n").is_err());
        assert!(decode_pgm(b"P51 1\n255\n\x00").is_err());
    }
}
