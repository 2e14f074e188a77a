//! Image fetching, scoring, filtering and perceptual hashing.

pub mod bloom;
pub mod fetch;
pub mod hash;
pub mod pgm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bloom::{theoretical_fpr, BloomFilter};
pub use fetch::{fetch_images, normalize_url, FetchConfig, FetchFailure, FetchTask, FileTransport, Transport, TransportError};
pub use hash::{dct_2d, dhash, hamming, phash, resize_area, ImageError, PixelImage};
pub use pgm::{decode_pgm, encode_pgm, DecodeError, ImageDecoder, PgmDecoder};

use crate::stream_format::{DocumentMeta, ImageRef, ImageStatus, StreamDocument, UNSCORED};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ImageDropReason {
    MinDim,
    Aspect,
    Aesthetic,
    Nsfw,
}

impl ImageDropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ImageDropReason::MinDim => "min_dim",
            ImageDropReason::Aspect => "aspect",
            ImageDropReason::Aesthetic => "aesthetic",
            ImageDropReason::Nsfw => "nsfw",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageVerdict {
    Keep,
    Drop(ImageDropReason),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FilterError {
    #[error("image dimensions must be positive, got {0}x{1}")]
    NonPositiveDimension(u32, u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageFilterConfig {
    pub min_side: u32,
    pub max_aspect: f64,
    pub min_aspect: f64,
    pub min_aesthetic: f64,
    pub max_nsfw: f64,
}

impl Default for ImageFilterConfig {
    fn default() -> Self {
        Self { min_side: 150, max_aspect: 2.0, min_aspect: 0.5, min_aesthetic: 3.7, max_nsfw: 0.8 }
    }
}

/// Every comparison is strict: an image exactly at a threshold is kept.
/// Unscored (negative) scores skip their check.
pub fn filter_image(img: &ImageRef, cfg: &ImageFilterConfig) -> Result<ImageVerdict, FilterError> {
    let (w, h) = (img.width, img.height);
    if w == 0 || h == 0 {
        return Err(FilterError::NonPositiveDimension(w, h));
    }
    if w.min(h) < cfg.min_side {
        return Ok(ImageVerdict::Drop(ImageDropReason::MinDim));
    }
    let ratio = w as f64 / h as f64;
    if ratio > cfg.max_aspect || ratio < cfg.min_aspect {
        return Ok(ImageVerdict::Drop(ImageDropReason::Aspect));
    }
    if img.aesthetic >= 0.0 && img.aesthetic < cfg.min_aesthetic {
        return Ok(ImageVerdict::Drop(ImageDropReason::Aesthetic));
    }
    if img.nsfw >= 0.0 && img.nsfw > cfg.max_nsfw {
        return Ok(ImageVerdict::Drop(ImageDropReason::Nsfw));
    }
    Ok(ImageVerdict::Keep)
}

/// Aesthetic and NSFW scores of a decoded image. Implementations must be
/// deterministic and stay within `[0, 10]` and `[0, 1]`.
pub trait ImageScorer: Send + Sync {
    fn aesthetic(&self, img: &PixelImage) -> f64;
    fn nsfw(&self, img: &PixelImage) -> f64;
}

/// Stand-in so runs are reproducible without models: aesthetic is ten times
/// the fraction of the 0..=255 range the pixels span, nsfw is always 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubImageScorer;

impl ImageScorer for StubImageScorer {
    fn aesthetic(&self, img: &PixelImage) -> f64 {
        let (lo, hi) = img.pixels().iter().fold((255u8, 0u8), |(lo, hi), &p| (lo.min(p), hi.max(p)));
        10.0 * (hi - lo) as f64 / 255.0
    }

    fn nsfw(&self, _img: &PixelImage) -> f64 {
        0.0
    }
}

/// Document-level scores that text rules read from the meta block.
pub trait TextScorer: Send + Sync {
    fn score(&self, doc: &StreamDocument) -> DocumentScores;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DocumentScores {
    pub nsfw_text: f64,
    pub political: f64,
    pub toxic: f64,
    pub advertisement: f64,
    pub fluency: f64,
}

impl DocumentScores {
    pub fn apply(&self, meta: &mut DocumentMeta) {
        meta.nsfw_text = self.nsfw_text;
        meta.political = self.political;
        meta.toxic = self.toxic;
        meta.advertisement = self.advertisement;
        meta.fluency = self.fluency;
    }
}

/// Zero on every risk axis, full fluency.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubTextScorer;

impl TextScorer for StubTextScorer {
    fn score(&self, _doc: &StreamDocument) -> DocumentScores {
        DocumentScores { nsfw_text: 0.0, political: 0.0, toxic: 0.0, advertisement: 0.0, fluency: 1.0 }
    }
}

/// Fills dimensions, scores and both hashes from fetched bytes and marks the
/// image fetched. On a decode error the reference is left as it was.
pub fn analyze_image(
    img: &mut ImageRef,
    bytes: &[u8],
    decoder: &dyn ImageDecoder,
    scorer: &dyn ImageScorer,
) -> Result<(), DecodeError> {
    let px = decoder.decode(bytes)?;
    img.width = px.width();
    img.height = px.height();
    img.aesthetic = scorer.aesthetic(&px);
    img.nsfw = scorer.nsfw(&px);
    img.phash = Some(phash(&px));
    img.dhash = Some(dhash(&px));
    img.status = ImageStatus::Fetched;
    Ok(())
}

/// Resets scores to the unscored sentinel; used when a fetch fails.
pub fn mark_failed(img: &mut ImageRef) {
    img.aesthetic = UNSCORED;
    img.nsfw = UNSCORED;
    img.status = ImageStatus::Failed;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sized(w: u32, h: u32, aesthetic: f64, nsfw: f64) -> ImageRef {
        ImageRef { width: w, height: h, aesthetic, nsfw, ..ImageRef::pending("https://e.com/x.pgm") }
    }

    fn verdict(w: u32, h: u32, a: f64, n: f64) -> ImageVerdict {
        filter_image(&sized(w, h, a, n), &ImageFilterConfig::default()).unwrap()
    }

    #[test]
    fn documented_examples() {
        assert_eq!(verdict(100, 200, -1.0, -1.0), ImageVerdict::Drop(ImageDropReason::MinDim));
        assert_eq!(verdict(400, 150, -1.0, -1.0), ImageVerdict::Drop(ImageDropReason::Aspect));
        assert_eq!(verdict(300, 300, 3.6, -1.0), ImageVerdict::Drop(ImageDropReason::Aesthetic));
        assert_eq!(verdict(300, 300, 3.8, 0.1), ImageVerdict::Keep);
        assert_eq!(verdict(150, 300, -1.0, -1.0), ImageVerdict::Keep);
        assert_eq!(filter_image(&sized(0, 10, 5.0, 0.0), &ImageFilterConfig::default()), Err(FilterError::NonPositiveDimension(0, 10)));
    }

    #[test]
    fn stub_scores() {
        let flat = PixelImage::from_fn(4, 4, |_, _| 9).unwrap();
        let full = PixelImage::from_fn(2, 1, |x, _| if x == 0 { 0 } else { 255 }).unwrap();
        assert_eq!(StubImageScorer.aesthetic(&flat), 0.0);
        assert_eq!(StubImageScorer.aesthetic(&full), 10.0);
        assert_eq!(StubImageScorer.nsfw(&full), 0.0);
    }

    #[test]
    fn analyze_fills_fields() {
        let px = PixelImage::from_fn(200, 160, |x, y| ((x + y) % 256) as u8).unwrap();
        let mut img = ImageRef::pending("https://e.com/x.pgm");
        analyze_image(&mut img, &encode_pgm(&px), &PgmDecoder, &StubImageScorer).unwrap();
        assert_eq!((img.width, img.height, img.status.clone()), (200, 160, ImageStatus::Fetched));
        assert_eq!(img.phash, Some(phash(&px)));
        let mut bad = ImageRef::pending("https://e.com/y.png");
        assert!(analyze_image(&mut bad, b"\x89PNG", &PgmDecoder, &StubImageScorer).is_err());
        assert_eq!(bad.status, ImageStatus::Pending);
    }
}
