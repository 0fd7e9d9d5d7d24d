//! Canonical model input: centered square crop, bilinear resize, and
//! local-mean color normalization (`gain · (I − Gσ∗I) + offset`, clipped).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::raster::{Raster, RgbRaster};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub target_size: usize,
    /// Blur standard deviation in pixels; `None` means `target_size / 30`.
    pub gaussian_sigma: Option<f64>,
    pub gain: f64,
    pub offset: f64,
    pub clip_range: [f64; 2],
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_size: 512,
            gaussian_sigma: None,
            gain: 4.0,
            offset: 128.0,
            clip_range: [0.0, 255.0],
        }
    }
}

impl PreprocessConfig {
    pub fn with_size(target_size: usize) -> Self {
        PreprocessConfig {
            target_size,
            ..Default::default()
        }
    }

    pub fn sigma(&self) -> f64 {
        self.gaussian_sigma
            .unwrap_or(self.target_size as f64 / 30.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_size == 0 {
            return Err(Error::Config("target_size must be positive".into()));
        }
        let sigma = self.sigma();
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("gaussian_sigma must be > 0, got {sigma}")));
        }
        let [lo, hi] = self.clip_range;
        if !(lo <= hi && self.offset >= lo && self.offset <= hi) {
            return Err(Error::Config(format!(
                "offset {} outside clip_range [{lo}, {hi}]",
                self.offset
            )));
        }
        Ok(())
    }

    /// Stable hash of the resolved configuration. Artifacts record it and
    /// refuse inputs prepared differently.
    pub fn fingerprint(&self) -> String {
        let resolved = PreprocessConfig {
            gaussian_sigma: Some(self.sigma()),
            ..self.clone()
        };
        let json = serde_json::to_vec(&resolved).expect("config serializes");
        hex_digest(&json)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Trims the longer dimension to the shorter one around the center. When the
/// excess is odd the extra pixel comes off the bottom/right.
pub fn center_square_crop<T: Copy>(image: &Raster<T>) -> Result<Raster<T>> {
    if image.channels() != 3 {
        return Err(Error::Channels(image.channels()));
    }
    let (h, w, _) = image.shape();
    if h == 0 || w == 0 {
        return Err(Error::Shape("empty image".into()));
    }
    let s = h.min(w);
    Ok(image.window((h - s) / 2, (w - s) / 2, s, s))
}

/// Bilinear resize of a square image with corner-aligned sampling: output
/// pixel `i` samples source coordinate `i · (S − 1) / (T − 1)`.
pub fn resize(image: &Raster<f64>, target_size: usize) -> Result<Raster<f64>> {
    let (h, w, c) = image.shape();
    if h != w {
        return Err(Error::Shape(format!(
            "resize needs a square image, got {h}×{w}; crop first"
        )));
    }
    if target_size == 0 {
        return Err(Error::Config("target_size must be positive".into()));
    }
    if h == target_size {
        return Ok(image.clone());
    }
    let scale = if target_size > 1 {
        (h - 1) as f64 / (target_size - 1) as f64
    } else {
        0.0
    };
    let taps: Vec<(usize, usize, f64)> = (0..target_size)
        .map(|i| {
            let pos = i as f64 * scale;
            let i0 = (pos.floor() as usize).min(h - 1);
            let i1 = (i0 + 1).min(h - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect();
    Ok(Raster::from_fn(target_size, target_size, c, |y, x, ch| {
        let (y0, y1, fy) = taps[y];
        let (x0, x1, fx) = taps[x];
        let top = image.get(y0, x0, ch) * (1.0 - fx) + image.get(y0, x1, ch) * fx;
        let bottom = image.get(y1, x0, ch) * (1.0 - fx) + image.get(y1, x1, ch) * fx;
        top * (1.0 - fy) + bottom * fy
    }))
}

/// Mirror index without repeating the edge sample (`c b | a b c | b a`).
#[inline]
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with reflect padding, per channel.
pub fn gaussian_blur(image: &Raster<f64>, sigma: f64) -> Raster<f64> {
    let (h, w, c) = image.shape();
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    // Source index of every (position, tap) pair along an axis of length n.
    let taps = |n: usize| -> Vec<usize> {
        (0..n as isize)
            .flat_map(|i| (0..kernel.len() as isize).map(move |k| reflect_index(i + k - r, n)))
            .collect()
    };
    let kl = kernel.len();
    let xs = taps(w);
    let mut horiz = Raster::<f64>::new(h, w, c);
    for y in 0..h {
        for x in 0..w {
            let src = &xs[x * kl..(x + 1) * kl];
            for ch in 0..c {
                let acc = kernel.iter().zip(src).fold(0.0, |acc, (&kv, &sx)| acc + kv * image.get(y, sx, ch));
                horiz.set(y, x, ch, acc);
            }
        }
    }
    let ys = taps(h);
    let mut out = Raster::<f64>::new(h, w, c);
    for y in 0..h {
        let src = &ys[y * kl..(y + 1) * kl];
        for x in 0..w {
            for ch in 0..c {
                let acc = kernel.iter().zip(src).fold(0.0, |acc, (&kv, &sy)| acc + kv * horiz.get(sy, x, ch));
                out.set(y, x, ch, acc);
            }
        }
    }
    out
}

pub fn color_normalize(image: &Raster<f64>, cfg: &PreprocessConfig) -> Result<Raster<f64>> {
    cfg.validate()?;
    let blurred = gaussian_blur(image, cfg.sigma());
    let [lo, hi] = cfg.clip_range;
    let data = image
        .data()
        .iter()
        .zip(blurred.data())
        .map(|(&v, &b)| (cfg.gain * (v - b) + cfg.offset).clamp(lo, hi))
        .collect();
    let (h, w, c) = image.shape();
    Raster::from_vec(h, w, c, data)
}

/// An 8-bit model input tagged with the fingerprint of the configuration
/// that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedImage {
    pub raster: RgbRaster,
    pub fingerprint: String,
}

/// crop → resize → normalize → round to 8 bits.
pub fn preprocess(image: &RgbRaster, cfg: &PreprocessConfig) -> Result<PreparedImage> {
    cfg.validate()?;
    let square = center_square_crop(image)?;
    let resized = resize(&square.to_f64(), cfg.target_size)?;
    let normalized = color_normalize(&resized, cfg)?;
    Ok(PreparedImage {
        raster: normalized.to_u8(),
        fingerprint: cfg.fingerprint(),
    })
}

pub fn preprocess_file(path: &std::path::Path, cfg: &PreprocessConfig) -> Result<PreparedImage> {
    preprocess(&crate::raster::load_rgb(path)?, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize) -> RgbRaster {
        Raster::from_fn(h, w, 3, |y, x, c| ((y * 7 + x * 3 + c * 11) % 256) as u8)
    }

    #[test]
    fn crop_landscape_keeps_center_columns() {
        let img = Raster::from_fn(2000, 3000, 3, |_, x, _| (x / 100) as u16);
        let out = center_square_crop(&img).unwrap();
        assert_eq!(out.shape(), (2000, 2000, 3));
        assert_eq!(out.get(0, 0, 0), 5); // column 500
        assert_eq!(out.get(0, 1999, 0), 24); // column 2499
    }

    #[test]
    fn crop_odd_excess_takes_from_bottom() {
        let img = Raster::from_fn(5, 4, 3, |y, x, _| (y * 10 + x) as u8);
        let out = center_square_crop(&img).unwrap();
        assert_eq!(out.shape(), (4, 4, 3));
        assert_eq!(out.get(0, 0, 0), 0);
        assert_eq!(out.get(3, 3, 0), 33);
    }

    #[test]
    fn crop_square_is_identity_and_rejects_gray() {
        let img = ramp(16, 16);
        assert_eq!(center_square_crop(&img).unwrap(), img);
        let gray = Raster::<u8>::new(4, 4, 1);
        assert!(matches!(center_square_crop(&gray), Err(Error::Channels(1))));
    }

    #[test]
    fn resize_shapes() {
        let img = ramp(1024, 1024).to_f64();
        assert_eq!(resize(&img, 512).unwrap().shape(), (512, 512, 3));
        let same = ramp(64, 64).to_f64();
        assert_eq!(resize(&same, 64).unwrap(), same);
        let rect = Raster::<f64>::new(1000, 800, 3);
        assert!(matches!(resize(&rect, 512), Err(Error::Shape(_))));
    }

    #[test]
    fn resize_is_corner_aligned() {
        let img = Raster::from_fn(3, 3, 3, |y, x, _| (y * 3 + x) as f64);
        let up = resize(&img, 5).unwrap();
        assert_eq!(up.get(0, 0, 0), 0.0);
        assert_eq!(up.get(4, 4, 0), 8.0);
        assert_eq!(up.get(2, 2, 0), 4.0);
        assert_eq!(up.get(0, 1, 0), 0.5);
    }

    #[test]
    fn constant_image_normalizes_to_offset() {
        let cfg = PreprocessConfig::with_size(32);
        let img = Raster::<f64>::filled(32, 32, 3, 77.0);
        let out = color_normalize(&img, &cfg).unwrap();
        assert!(out.data().iter().all(|&v| (v - 128.0).abs() < 1e-9));
    }

    #[test]
    fn zero_sigma_is_config_error() {
        let cfg = PreprocessConfig {
            gaussian_sigma: Some(0.0),
            ..PreprocessConfig::with_size(8)
        };
        let img = Raster::<f64>::new(8, 8, 3);
        assert!(matches!(color_normalize(&img, &cfg), Err(Error::Config(_))));
    }

    /// Direct 2-D convolution with an explicitly tabulated, normalized
    /// Gaussian kernel; shares nothing with the separable path.
    fn dense_oracle(img: &Raster<f64>, sigma: f64, gain: f64, offset: f64) -> Raster<f64> {
        let (h, w, c) = img.shape();
        let r = (3.0 * sigma).ceil() as isize;
        let mirror = |i: isize, n: isize| -> usize {
            let mut i = i;
            while i < 0 || i >= n {
                if i < 0 {
                    i = -i;
                }
                if i >= n {
                    i = 2 * (n - 1) - i;
                }
            }
            i as usize
        };
        let mut weights = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                weights.push((dy, dx, (-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp()));
            }
        }
        let total: f64 = weights.iter().map(|w| w.2).sum();
        Raster::from_fn(h, w, c, |y, x, ch| {
            let mut acc = 0.0;
            for &(dy, dx, wt) in &weights {
                let sy = mirror(y as isize + dy, h as isize);
                let sx = mirror(x as isize + dx, w as isize);
                acc += wt / total * img.get(sy, sx, ch);
            }
            (gain * (img.get(y, x, ch) - acc) + offset).clamp(0.0, 255.0)
        })
    }

    #[test]
    fn bright_pixel_matches_dense_oracle() {
        let mut img = Raster::<f64>::filled(8, 8, 3, 20.0);
        for c in 0..3 {
            img.set(3, 4, c, 200.0);
        }
        let cfg = PreprocessConfig {
            gaussian_sigma: Some(1.0),
            ..PreprocessConfig::with_size(8)
        };
        let fast = color_normalize(&img, &cfg).unwrap();
        let slow = dense_oracle(&img, 1.0, 4.0, 128.0);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1.0, "{a} vs {b}");
        }
    }

    #[test]
    fn fingerprint_tracks_config() {
        let a = PreprocessConfig::with_size(128);
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.gaussian_sigma = Some(128.0 / 30.0);
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.gain = 3.0;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn reflect_index_mirrors() {
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn output_shape_and_range(h in 8usize..40, w in 8usize..40, seed in any::<u8>()) {
            let img = Raster::from_fn(h, w, 3, |y, x, c| (y * 13 + x * 5 + c * 3 + seed as usize) as u8);
            let cfg = PreprocessConfig::with_size(16);
            let out = preprocess(&img, &cfg).unwrap();
            prop_assert_eq!(out.raster.shape(), (16, 16, 3));
            let again = preprocess(&img, &cfg).unwrap();
            prop_assert_eq!(out, again);
        }

        #[test]
        fn normalization_is_translation_covariant(shift in 1usize..4, seed in any::<u16>()) {
            let n = 48;
            let base = Raster::from_fn(n, n + shift, 3, |y, x, c| {
                (((x * 37 + y * 91 + c * 17 + seed as usize) % 97) as f64) * 2.0
            });
            let a = base.window(0, 0, n, n);
            let b = base.window(0, shift, n, n);
            let cfg = PreprocessConfig { gaussian_sigma: Some(1.5), ..PreprocessConfig::with_size(n) };
            let na = color_normalize(&a, &cfg).unwrap();
            let nb = color_normalize(&b, &cfg).unwrap();
            // Away from the borders the kernel (radius 5) never touches padding.
            for y in 6..n - 6 {
                for x in 6..n - 6 - shift {
                    for c in 0..3 {
                        prop_assert!((na.get(y, x + shift, c) - nb.get(y, x, c)).abs() < 1e-9);
                    }
                }
            }
        }
    }
}
