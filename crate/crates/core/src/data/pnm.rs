//! Binary PGM (P5) and PPM (P6) with maxval 255.

use crate::engine::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PnmError {
    #[error("not a binary PGM/PPM file (magic {0:?})")]
    BadMagic(String),
    #[error("file ends before the {0} is complete")]
    Truncated(&'static str),
    #[error("maxval {0} is unsupported (only 255)")]
    UnsupportedMaxval(u64),
    #[error("malformed header: {0}")]
    Malformed(String),
    #[error("cannot encode tensor of shape {0} (need 1x1xHxW or 1x3xHxW)")]
    Unencodable(Shape),
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u64, PnmError> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(if self.pos >= self.bytes.len() {
                PnmError::Truncated("header")
            } else {
                PnmError::Malformed(format!("expected {what}"))
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| PnmError::Malformed(format!("{what} out of range")))
    }
}

/// Decodes a P5 (1 channel) or P6 (3 channels, R,G,B) file into a
/// `1xCxHxW` tensor with values `p / 255`.
pub fn decode(bytes: &[u8]) -> Result<Tensor, PnmError> {
    if bytes.len() < 2 {
        return Err(PnmError::Truncated("header"));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(PnmError::BadMagic(
                String::from_utf8_lossy(other).into_owned(),
            ))
        }
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")? as usize;
    let height = h.number("height")? as usize;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(PnmError::Malformed("zero dimension".into()));
    }
    if maxval != 255 {
        return Err(PnmError::UnsupportedMaxval(maxval));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        Some(_) => {
            return Err(PnmError::Malformed(
                "missing whitespace after maxval".into(),
            ))
        }
        None => return Err(PnmError::Truncated("header")),
    }
    let raster = &bytes[h.pos..];
    let need = width * height * channels;
    if raster.len() < need {
        return Err(PnmError::Truncated("pixel data"));
    }
    if raster.len() > need {
        return Err(PnmError::Malformed(format!(
            "{} trailing bytes",
            raster.len() - need
        )));
    }
    let plane = width * height;
    let mut data = vec![0.0; need];
    for (i, &b) in raster.iter().enumerate() {
        data[(i % channels) * plane + i / channels] = f64::from(b) / 255.0;
    }
    Ok(Tensor::from_vec(
        Shape::new(1, channels, height, width),
        data,
    ))
}

/// Encodes a `1x1xHxW` or `1x3xHxW` tensor, rounding `v * 255` after
/// clamping to [0,1]. The header is `P5\n<w> <h>\n255\n`.
pub fn encode(t: &Tensor) -> Result<Vec<u8>, PnmError> {
    let s = t.shape();
    let magic = match (s.n, s.c) {
        (1, 1) => "P5",
        (1, 3) => "P6",
        _ => return Err(PnmError::Unencodable(s)),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", s.w, s.h).into_bytes();
    let plane = s.plane();
    for i in 0..plane {
        for c in 0..s.c {
            out.push(quantize(t.data()[c * plane + i]));
        }
    }
    Ok(out)
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
