//! In-memory RGB images in [0,1], binary pixel masks, PSNR, and 8-bit PNG
//! round-tripping for the on-disk dataset layout.

use crate::error::{CoreError, Result};
use std::path::Path;

/// Row-major RGB image with channel values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Pixel (x, y) lives at data[y * width + x].
    pub data: Vec<[f32; 3]>,
}

impl Image {
    pub fn filled(width: usize, height: usize, color: [f32; 3]) -> Self {
        Image {
            width,
            height,
            data: vec![color; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: [f32; 3]) {
        self.data[y * self.width + x] = c;
    }

    pub fn same_size(&self, o: &Image) -> bool {
        self.width == o.width && self.height == o.height
    }

    /// Quantize to 8-bit and back, matching what a PNG round trip produces.
    pub fn quantized(&self) -> Image {
        let data = self
            .data
            .iter()
            .map(|px| {
                let q = |v: f32| ((v.clamp(0.0, 1.0) * 255.0 + 0.5) as u8) as f32 / 255.0;
                [q(px[0]), q(px[1]), q(px[2])]
            })
            .collect();
        Image {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Mean color of the 1-pixel border ring.
    pub fn border_mean(&self) -> [f32; 3] {
        let mut sum = [0.0f64; 3];
        let mut n = 0usize;
        for y in 0..self.height {
            for x in 0..self.width {
                if x == 0 || y == 0 || x == self.width - 1 || y == self.height - 1 {
                    for c in 0..3 {
                        sum[c] += self.get(x, y)[c] as f64;
                    }
                    n += 1;
                }
            }
        }
        [
            (sum[0] / n as f64) as f32,
            (sum[1] / n as f64) as f32,
            (sum[2] / n as f64) as f32,
        ]
    }

    /// Block-average downsample by an integer factor.
    pub fn downsample(&self, factor: usize) -> Image {
        assert!(factor >= 1 && self.width % factor == 0 && self.height % factor == 0);
        let w = self.width / factor;
        let h = self.height / factor;
        let mut out = Image::filled(w, h, [0.0; 3]);
        let inv = 1.0 / (factor * factor) as f32;
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0f32; 3];
                for dy in 0..factor {
                    for dx in 0..factor {
                        let px = self.get(x * factor + dx, y * factor + dy);
                        for c in 0..3 {
                            acc[c] += px[c];
                        }
                    }
                }
                out.set(x, y, [acc[0] * inv, acc[1] * inv, acc[2] * inv]);
            }
        }
        out
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut buf = image::RgbImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let px = self.get(x, y);
                let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0 + 0.5) as u8;
                buf.put_pixel(x as u32, y as u32, image::Rgb([q(px[0]), q(px[1]), q(px[2])]));
            }
        }
        buf.save(path)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path)?.into_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Image::filled(w, h, [0.0; 3]);
        for y in 0..h {
            for x in 0..w {
                let p = img.get_pixel(x as u32, y as u32);
                out.set(
                    x,
                    y,
                    [
                        p[0] as f32 / 255.0,
                        p[1] as f32 / 255.0,
                        p[2] as f32 / 255.0,
                    ],
                );
            }
        }
        Ok(out)
    }
}

/// Binary mask; 1 marks gripper pixels that are excluded from field
/// training and spliced back from the original image at render time.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMask {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<u8>,
}

impl PixelMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        PixelMask {
            width,
            height,
            mask: vec![0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.mask[y * self.width + x] = v as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.mask.iter().filter(|&&v| v != 0).count()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut buf = image::GrayImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                buf.put_pixel(x as u32, y as u32, image::Luma([if self.get(x, y) { 255 } else { 0 }]));
            }
        }
        buf.save(path)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<PixelMask> {
        let img = image::open(path)?.into_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = PixelMask::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                out.set(x, y, img.get_pixel(x as u32, y as u32)[0] >= 128);
            }
        }
        Ok(out)
    }
}

/// Mean squared error over all pixels and channels, in f64.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_size(b) {
        return Err(CoreError::DimensionMismatch(
            a.width, a.height, b.width, b.height,
        ));
    }
    let mut acc = 0.0f64;
    for (pa, pb) in a.data.iter().zip(b.data.iter()) {
        for c in 0..3 {
            let d = pa[c] as f64 - pb[c] as f64;
            acc += d * d;
        }
    }
    Ok(acc / (a.data.len() * 3) as f64)
}

/// Peak signal-to-noise ratio in dB for [0,1] images. Identical images
/// return +infinity.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / m).log10())
    }
}

/// PSNR restricted to pixels where `valid` is true.
pub fn psnr_masked(a: &Image, b: &Image, valid: &PixelMask) -> Result<f64> {
    if !a.same_size(b) || a.width != valid.width || a.height != valid.height {
        return Err(CoreError::DimensionMismatch(
            a.width, a.height, b.width, b.height,
        ));
    }
    let mut acc = 0.0f64;
    let mut n = 0usize;
    for y in 0..a.height {
        for x in 0..a.width {
            if valid.get(x, y) {
                let pa = a.get(x, y);
                let pb = b.get(x, y);
                for c in 0..3 {
                    let d = pa[c] as f64 - pb[c] as f64;
                    acc += d * d;
                }
                n += 1;
            }
        }
    }
    if n == 0 {
        return Ok(f64::INFINITY);
    }
    let m = acc / (n * 3) as f64;
    if m == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / m).log10())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
        let mut img = Image::filled(w, h, [0.0; 3]);
        for px in img.data.iter_mut() {
            *px = [rng.gen(), rng.gen(), rng.gen()];
        }
        img
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(&mut rng, 8, 8);
        assert_eq!(psnr(&img, &img).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_formula_20db_at_mse_hundredth() {
        let a = Image::filled(10, 10, [0.5, 0.5, 0.5]);
        let b = Image::filled(10, 10, [0.6, 0.6, 0.6]);
        // mse = 0.01 -> 20 dB, up to f32 storage of the 0.1 difference
        let p = psnr(&a, &b).unwrap();
        assert!((p - 20.0).abs() < 1e-5, "got {p}");
    }

    #[test]
    fn psnr_matches_brute_force_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_image(&mut rng, 16, 12);
        let b = random_image(&mut rng, 16, 12);
        let mut acc = 0.0f64;
        for y in 0..12 {
            for x in 0..16 {
                for c in 0..3 {
                    let d = a.get(x, y)[c] as f64 - b.get(x, y)[c] as f64;
                    acc += d * d;
                }
            }
        }
        let brute = 10.0 * (1.0 / (acc / (16.0 * 12.0 * 3.0))).log10();
        assert!((psnr(&a, &b).unwrap() - brute).abs() < 1e-9);
    }

    #[test]
    fn psnr_dimension_mismatch_errors() {
        let a = Image::filled(4, 4, [0.0; 3]);
        let b = Image::filled(5, 4, [0.0; 3]);
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn png_round_trip_is_exact_after_quantization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random_image(&mut rng, 9, 7);
        let dir = std::env::temp_dir();
        let path = dir.join(format!("imgrt-{}.png", std::process::id()));
        img.save_png(&path).unwrap();
        let back = Image::load_png(&path).unwrap();
        assert_eq!(back, img.quantized());
        let _ = std::fs::remove_file(&path);
    }

    #[test]
    fn downsample_averages_blocks() {
        let mut img = Image::filled(4, 4, [0.0; 3]);
        img.set(0, 0, [1.0, 0.0, 0.0]);
        let out = img.downsample(2);
        assert_eq!(out.width, 2);
        assert!((out.get(0, 0)[0] - 0.25).abs() < 1e-7);
        assert_eq!(out.get(1, 1), [0.0, 0.0, 0.0]);
    }
}
