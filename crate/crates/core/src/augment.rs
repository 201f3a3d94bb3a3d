//! Seeded photometric and geometric augmentations.

use nalgebra::{SMatrix, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::raster::Raster;

/// One concrete augmentation. The default value is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    /// Added to every sample.
    pub brightness: f64,
    /// Multiplies the deviation from mid-gray; 1 is the identity.
    pub contrast_gain: f64,
    pub noise_sigma: f64,
    /// Box-blur radius in pixels.
    pub blur_radius: usize,
    pub rotation_deg: f64,
    /// Maximum corner displacement as a fraction of the image size.
    pub perspective: f64,
    pub seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            brightness: 0.0,
            contrast_gain: 1.0,
            noise_sigma: 0.0,
            blur_radius: 0,
            rotation_deg: 0.0,
            perspective: 0.0,
            seed: 0,
        }
    }
}

impl AugmentParams {
    pub fn noise(sigma: f64, seed: u64) -> Self {
        AugmentParams {
            noise_sigma: sigma,
            seed,
            ..Default::default()
        }
    }
}

/// Upper bounds for randomly drawn augmentations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentRanges {
    pub max_brightness: f64,
    /// Gain is drawn from `[1 - max_contrast, 1 + max_contrast]`.
    pub max_contrast: f64,
    pub max_noise: f64,
    pub max_blur: usize,
    pub max_rotation_deg: f64,
    pub max_perspective: f64,
}

impl AugmentRanges {
    pub fn none() -> Self {
        AugmentRanges {
            max_brightness: 0.0,
            max_contrast: 0.0,
            max_noise: 0.0,
            max_blur: 0,
            max_rotation_deg: 0.0,
            max_perspective: 0.0,
        }
    }

    /// Mild lighting and pose variation.
    pub fn light() -> Self {
        AugmentRanges {
            max_brightness: 30.0,
            max_contrast: 0.2,
            max_noise: 8.0,
            max_blur: 1,
            max_rotation_deg: 1.5,
            max_perspective: 0.01,
        }
    }

    pub fn heavy() -> Self {
        AugmentRanges {
            max_brightness: 60.0,
            max_contrast: 0.5,
            max_noise: 40.0,
            max_blur: 2,
            max_rotation_deg: 4.0,
            max_perspective: 0.03,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> AugmentParams {
        let sym = |rng: &mut R, m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
        AugmentParams {
            brightness: sym(rng, self.max_brightness),
            contrast_gain: 1.0 + sym(rng, self.max_contrast.min(0.95)),
            noise_sigma: if self.max_noise > 0.0 {
                rng.random_range(0.0..=self.max_noise)
            } else {
                0.0
            },
            blur_radius: rng.random_range(0..=self.max_blur),
            rotation_deg: sym(rng, self.max_rotation_deg),
            perspective: if self.max_perspective > 0.0 {
                rng.random_range(0.0..=self.max_perspective)
            } else {
                0.0
            },
            seed: rng.random(),
        }
    }
}

/// Applies geometry, blur, contrast/brightness and noise in that order.
/// Stages with zero magnitude are skipped, so the identity parameters return
/// the input unchanged.
pub fn augment(img: &Raster, p: &AugmentParams) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut out = img.clone();
    if p.perspective > 0.0 {
        out = perspective(&out, p.perspective, &mut rng);
    }
    if p.rotation_deg != 0.0 {
        out = rotate(&out, p.rotation_deg);
    }
    if p.blur_radius > 0 {
        out = box_blur(&out, p.blur_radius);
    }
    if p.contrast_gain != 1.0 || p.brightness != 0.0 {
        for v in out.data_mut() {
            let f = (*v as f64 - 128.0) * p.contrast_gain + 128.0 + p.brightness;
            *v = f.round().clamp(0.0, 255.0) as u8;
        }
    }
    if p.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, p.noise_sigma).expect("finite sigma");
        for v in out.data_mut() {
            let f = *v as f64 + normal.sample(&mut rng);
            *v = f.round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Inverse-maps every output pixel through `map` and samples bilinearly,
/// replicating the border.
fn warp(img: &Raster, map: impl Fn(f64, f64) -> (f64, f64)) -> Raster {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = map(x as f64, y as f64);
            let sx = sx.clamp(0.0, (w - 1) as f64);
            let sy = sy.clamp(0.0, (h - 1) as f64);
            for ch in 0..c {
                let v = img.sample_bilinear(sx, sy, ch);
                out.pixel_mut(x, y)[ch] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

fn rotate(img: &Raster, degrees: f64) -> Raster {
    let cx = (img.width() as f64 - 1.0) / 2.0;
    let cy = (img.height() as f64 - 1.0) / 2.0;
    let (s, c) = (-degrees.to_radians()).sin_cos();
    warp(img, |x, y| {
        let dx = x - cx;
        let dy = y - cy;
        (cx + c * dx - s * dy, cy + s * dx + c * dy)
    })
}

fn perspective<R: Rng>(img: &Raster, frac: f64, rng: &mut R) -> Raster {
    let w = (img.width() - 1) as f64;
    let h = (img.height() - 1) as f64;
    let dst = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
    let mut src = dst;
    for p in &mut src {
        p.0 += rng.random_range(-frac..=frac) * w;
        p.1 += rng.random_range(-frac..=frac) * h;
    }
    match homography(&dst, &src) {
        Some(hm) => warp(img, |x, y| {
            let d = hm[6] * x + hm[7] * y + 1.0;
            ((hm[0] * x + hm[1] * y + hm[2]) / d, (hm[3] * x + hm[4] * y + hm[5]) / d)
        }),
        None => img.clone(),
    }
}

/// Eight-parameter homography taking `from[i]` to `to[i]`.
fn homography(from: &[(f64, f64); 4], to: &[(f64, f64); 4]) -> Option<[f64; 8]> {
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let (x, y) = from[i];
        let (u, v) = to[i];
        let r = 2 * i;
        a.set_row(r, &SMatrix::<f64, 1, 8>::from_row_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]));
        a.set_row(r + 1, &SMatrix::<f64, 1, 8>::from_row_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]));
        b[r] = u;
        b[r + 1] = v;
    }
    let sol = a.lu().solve(&b)?;
    let mut out = [0.0; 8];
    out.copy_from_slice(sol.as_slice());
    Some(out)
}

fn box_blur(img: &Raster, radius: usize) -> Raster {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let src = img.data();
    let mut tmp = vec![0.0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            for ch in 0..c {
                let s: f64 = (lo..=hi).map(|k| src[(y * w + k) * c + ch] as f64).sum();
                tmp[(y * w + x) * c + ch] = s / (hi - lo + 1) as f64;
            }
        }
    }
    let mut out = img.clone();
    let data = out.data_mut();
    for y in 0..h {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(h - 1);
        for x in 0..w {
            for ch in 0..c {
                let s: f64 = (lo..=hi).map(|k| tmp[(k * w + x) * c + ch]).sum();
                data[(y * w + x) * c + ch] = (s / (hi - lo + 1) as f64).round() as u8;
            }
        }
    }
    out
}
