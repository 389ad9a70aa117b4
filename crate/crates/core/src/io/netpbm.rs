use super::{parse_error, unsupported};
use crate::error::{Error, Location, Result};
use crate::geometry::{Image, ImageData};

const FORMAT: &str = "netpbm";

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        let mut value: usize = 0;
        while let Some(&b) = self.bytes.get(self.pos).filter(|b| b.is_ascii_digit()) {
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add((b - b'0') as usize))
                .ok_or_else(|| parse_error(FORMAT, Location::Byte(start), format!("{what} is too large")))?;
            self.pos += 1;
        }
        if self.pos == start {
            return Err(parse_error(FORMAT, Location::Byte(start), format!("expected {what}")));
        }
        Ok(value)
    }
}

pub(super) fn parse(bytes: &[u8]) -> Result<Image> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        Some(b"P2") | Some(b"P3") => return Err(unsupported(FORMAT, Location::Byte(0), "plain (ASCII) Netpbm")),
        _ => return Err(parse_error(FORMAT, Location::Byte(0), "expected P5 or P6 magic")),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    if !bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(parse_error(FORMAT, Location::Byte(2), "magic must be followed by whitespace"));
    }
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(parse_error(FORMAT, Location::Byte(maxval_at), "zero image dimension"));
    }
    let wide = match maxval {
        255 => false,
        65535 => true,
        0 => return Err(parse_error(FORMAT, Location::Byte(maxval_at), "maxval must be positive")),
        65536.. => return Err(parse_error(FORMAT, Location::Byte(maxval_at), "maxval exceeds 65535")),
        other => return Err(unsupported(FORMAT, Location::Byte(maxval_at), format!("maxval {other}"))),
    };
    if !bytes.get(cur.pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(parse_error(FORMAT, Location::Byte(cur.pos), "maxval must be followed by one whitespace byte"));
    }
    let start = cur.pos + 1;
    let samples = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| parse_error(FORMAT, Location::Byte(0), "image dimensions overflow"))?;
    let len = samples
        .checked_mul(if wide { 2 } else { 1 })
        .ok_or_else(|| parse_error(FORMAT, Location::Byte(0), "image dimensions overflow"))?;
    if bytes.len() - start < len {
        return Err(parse_error(
            FORMAT,
            Location::Byte(bytes.len()),
            format!("body holds {} bytes, {len} expected", bytes.len() - start),
        ));
    }
    let body = &bytes[start..start + len];
    let data = if wide {
        ImageData::U16(body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect())
    } else {
        ImageData::U8(body.to_vec())
    };
    Image::new(width, height, channels, data).map_err(|e| parse_error(FORMAT, Location::Byte(0), e.to_string()))
}

pub(super) fn encode(image: &Image) -> Result<Vec<u8>> {
    let magic = if image.channels() == 1 { "P5" } else { "P6" };
    let (maxval, body) = match image.data() {
        ImageData::U8(v) => (255, v.clone()),
        ImageData::U16(v) => (65535, v.iter().flat_map(|s| s.to_be_bytes()).collect()),
        ImageData::F32(_) => return Err(Error::invalid("float images cannot be written as PGM/PPM")),
    };
    let mut out = format!("{magic}\n{} {}\n{maxval}\n", image.width(), image.height()).into_bytes();
    out.extend(body);
    Ok(out)
}
