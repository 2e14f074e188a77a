//! Binary PGM (P5), the one codec the core ships.

use thiserror::Error;

use super::hash::{ImageError, PixelImage};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("not a binary PGM (missing P5 magic)")]
    NotPgm,
    #[error("malformed PGM header: {0}")]
    Header(String),
    #[error("PGM pixel data truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("unsupported image format")]
    Unsupported,
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Turns fetched bytes into pixels. Other codecs plug in here.
pub trait ImageDecoder: Send + Sync {
    fn decode(&self, bytes: &[u8]) -> Result<PixelImage, DecodeError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PgmDecoder;

impl ImageDecoder for PgmDecoder {
    fn decode(&self, bytes: &[u8]) -> Result<PixelImage, DecodeError> {
        decode_pgm(bytes)
    }
}

/// Samples with `maxval` below 255 are rescaled to 0..=255 (rounded); 16-bit
/// samples keep their high byte after rescaling.
pub fn decode_pgm(bytes: &[u8]) -> Result<PixelImage, DecodeError> {
    if !bytes.starts_with(b"P5") {
        return Err(DecodeError::NotPgm);
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in &mut fields {
        // whitespace and comments before each token
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let token = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = token.parse().map_err(|_| DecodeError::Header(format!("expected a number at byte {start}")))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(DecodeError::Header("missing whitespace after maxval".into())),
    }
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(DecodeError::Header(format!("maxval {maxval} out of range")));
    }
    let bps = if maxval < 256 { 1 } else { 2 };
    let need = (w as usize) * (h as usize) * bps;
    let data = &bytes[pos..];
    if data.len() < need {
        return Err(DecodeError::Truncated { need, have: data.len() });
    }
    let scale = |v: u32| ((v as f64 * 255.0 / maxval as f64).round()) as u8;
    let pixels = if bps == 1 {
        data[..need].iter().map(|&v| if maxval == 255 { v } else { scale(v as u32) }).collect()
    } else {
        data[..need].chunks_exact(2).map(|c| scale(u16::from_be_bytes([c[0], c[1]]) as u32)).collect()
    };
    Ok(PixelImage::new(w, h, pixels)?)
}

pub fn encode_pgm(img: &PixelImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}
