//! Grayscale images, box-filter resizing and the two 64-bit fingerprints.
//!
//! Both fingerprints pack bits row-major from the most significant bit, so
//! the hex form reads in scan order.

use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImageError {
    #[error("image dimensions must be positive, got {0}x{1}")]
    EmptyImage(u32, u32),
    #[error("expected {expected} pixels for the given size, got {got}")]
    PixelCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl PixelImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyImage(width, height));
        }
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(ImageError::PixelCount { expected, got: pixels.len() });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> u8) -> Result<Self, ImageError> {
        let pixels = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    /// Nearest-neighbour enlargement by an integer factor.
    pub fn upscale(&self, factor: u32) -> Self {
        Self::from_fn(self.width * factor, self.height * factor, |x, y| self.get(x / factor, y / factor))
            .expect("factor >= 1 keeps dimensions positive")
    }

    pub fn mirror_horizontal(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y)).expect("same size")
    }
}

/// Overlap weights of source cells `[i, i+1)` with the target cell
/// `[t * src / dst, (t + 1) * src / dst)`.
fn coverage(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    (0..dst)
        .map(|t| {
            let lo = t as f64 * src as f64 / dst as f64;
            let hi = (t + 1) as f64 * src as f64 / dst as f64;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|i| {
                    let w = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    (w > 0.0).then_some((i, w))
                })
                .collect()
        })
        .collect()
}

/// Box-filter resize: every target pixel is the area-weighted mean of the
/// source pixels its footprint covers. Row-major output.
pub fn resize_area(img: &PixelImage, dst_w: usize, dst_h: usize) -> Vec<f64> {
    let cx = coverage(img.width as usize, dst_w);
    let cy = coverage(img.height as usize, dst_h);
    let w = img.width as usize;
    let mut out = Vec::with_capacity(dst_w * dst_h);
    for ys in &cy {
        for xs in &cx {
            let mut sum = 0.0;
            let mut area = 0.0;
            for &(y, wy) in ys {
                for &(x, wx) in xs {
                    sum += img.pixels[y * w + x] as f64 * wx * wy;
                    area += wx * wy;
                }
            }
            out.push(sum / area);
        }
    }
    out
}

/// Orthonormal 2-D DCT-II of an `n`×`n` row-major block. Output index
/// `v * n + u` holds vertical frequency `v`, horizontal frequency `u`.
pub fn dct_2d(input: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(input.len(), n * n, "dct input must be n x n");
    let basis: Vec<f64> = (0..n)
        .flat_map(|k| {
            let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            (0..n).map(move |i| scale * (PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos())
        })
        .collect();
    let transform = |row: &[f64], k: usize| -> f64 { row.iter().zip(&basis[k * n..(k + 1) * n]).map(|(a, b)| a * b).sum() };
    // rows, then columns
    let mut tmp = vec![0.0; n * n];
    for y in 0..n {
        let row = &input[y * n..(y + 1) * n];
        for u in 0..n {
            tmp[y * n + u] = transform(row, u);
        }
    }
    let mut out = vec![0.0; n * n];
    let mut col = vec![0.0; n];
    for u in 0..n {
        for y in 0..n {
            col[y] = tmp[y * n + u];
        }
        for v in 0..n {
            out[v * n + u] = transform(&col, v);
        }
    }
    out
}

/// Resize to 9×8; bit `(r, c)` is set iff pixel `(r, c + 1)` is brighter
/// than pixel `(r, c)`.
pub fn dhash(img: &PixelImage) -> u64 {
    let g = resize_area(img, 9, 8);
    let mut bits = 0u64;
    for r in 0..8 {
        for c in 0..8 {
            bits <<= 1;
            if g[r * 9 + c + 1] > g[r * 9 + c] {
                bits |= 1;
            }
        }
    }
    bits
}

/// Resize to 32×32, DCT, keep the top-left 8×8 block; bit 0 (the DC term)
/// is always clear and every other bit is set iff its coefficient exceeds
/// the median of the 63 AC coefficients. Coefficients within
/// [`PHASH_ZERO_EPS`] of zero count as zero, so rounding noise cannot set
/// bits on flat images.
pub fn phash(img: &PixelImage) -> u64 {
    let g = resize_area(img, 32, 32);
    let d = dct_2d(&g, 32);
    let snap = |c: f64| if c.abs() < PHASH_ZERO_EPS { 0.0 } else { c };
    let block: Vec<f64> = (0..8).flat_map(|v| (0..8).map(move |u| (v, u))).map(|(v, u)| snap(d[v * 32 + u])).collect();
    let mut ac: Vec<f64> = block[1..].to_vec();
    ac.sort_by(f64::total_cmp);
    let median = ac[31];
    let mut bits = 0u64;
    for (i, c) in block.iter().enumerate() {
        bits <<= 1;
        if i > 0 && *c > median {
            bits |= 1;
        }
    }
    bits
}

pub const PHASH_ZERO_EPS: f64 = 1e-9;

pub fn hamming(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_sizes() {
        assert_eq!(PixelImage::new(0, 3, vec![]), Err(ImageError::EmptyImage(0, 3)));
        assert!(matches!(PixelImage::new(2, 2, vec![0; 3]), Err(ImageError::PixelCount { .. })));
    }

    #[test]
    fn identity_resize() {
        let img = PixelImage::from_fn(4, 3, |x, y| (x * 10 + y) as u8).unwrap();
        let r = resize_area(&img, 4, 3);
        assert_eq!(r, img.pixels().iter().map(|&p| p as f64).collect::<Vec<_>>());
    }

    #[test]
    fn fractional_resize() {
        // 3 px down to 2: [a, b, c] -> [(a + b/2) / 1.5, (b/2 + c) / 1.5]
        let img = PixelImage::new(3, 1, vec![0, 30, 90]).unwrap();
        let r = resize_area(&img, 2, 1);
        assert!((r[0] - 10.0).abs() < 1e-12 && (r[1] - 70.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_dhash_all_ones() {
        let img = PixelImage::from_fn(9, 8, |x, _| (x * 20) as u8).unwrap();
        assert_eq!(dhash(&img), u64::MAX);
    }

    #[test]
    fn swapped_pair_flips_one_bit() {
        let base = |x: u32, _y: u32| (x * 20 + 10) as u8;
        let a = PixelImage::from_fn(9, 8, base).unwrap();
        // swap columns 3 and 4 in row 2: 3->4 comparison flips, 2->3 and 4->5 still rise
        let b = PixelImage::from_fn(9, 8, |x, y| match (x, y) {
            (3, 2) => base(4, 2),
            (4, 2) => base(3, 2),
            _ => base(x, y),
        })
        .unwrap();
        // 2->3 compares 50 < 90 (still set), 3->4 compares 90 > 70 (cleared), 4->5 compares 70 < 110 (set)
        assert_eq!(hamming(dhash(&a), dhash(&b)), 1);
    }

    #[test]
    fn constant_phash_zero() {
        let img = PixelImage::from_fn(64, 48, |_, _| 128).unwrap();
        assert_eq!(phash(&img), 0);
    }

    #[test]
    fn dct_single_basis() {
        let n = 32;
        for (u, v) in [(0usize, 0usize), (3, 5), (7, 1), (31, 31)] {
            let input: Vec<f64> = (0..n * n)
                .map(|i| {
                    let (y, x) = (i / n, i % n);
                    (PI * (2 * x + 1) as f64 * u as f64 / 64.0).cos() * (PI * (2 * y + 1) as f64 * v as f64 / 64.0).cos()
                })
                .collect();
            let out = dct_2d(&input, n);
            for (i, c) in out.iter().enumerate() {
                if i == v * n + u {
                    assert!(c.abs() > 1.0);
                } else {
                    assert!(c.abs() < 1e-9, "({u},{v}) leaked {c} at {i}");
                }
            }
        }
    }

    #[test]
    fn scale_and_mirror() {
        let img = PixelImage::from_fn(36, 32, |x, y| (x * 7 + y * 2) as u8).unwrap();
        assert_eq!(dhash(&img), dhash(&img.upscale(2)));
        assert_eq!(phash(&img), phash(&img.upscale(2)));
        assert_ne!(dhash(&img), dhash(&img.mirror_horizontal()));
    }
}
