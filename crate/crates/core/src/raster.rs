//! 8-bit image buffers and the resampling helpers the rest of the crate needs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for Raster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Raster({}x{}x{})", self.width, self.height, self.channels)
    }
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl PixelBox {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        PixelBox { x, y, w, h }
    }

    pub fn right(&self) -> usize {
        self.x + self.w
    }

    pub fn bottom(&self) -> usize {
        self.y + self.h
    }

    pub fn overlaps(&self, other: &PixelBox) -> bool {
        self.x < other.right() && other.x < self.right() && self.y < other.bottom() && other.y < self.bottom()
    }

    pub fn to_norm(&self, width: usize, height: usize) -> NormBox {
        NormBox {
            x_center: (self.x as f64 + self.w as f64 / 2.0) / width as f64,
            y_center: (self.y as f64 + self.h as f64 / 2.0) / height as f64,
            w: self.w as f64 / width as f64,
            h: self.h as f64 / height as f64,
        }
    }

    /// Largest per-edge distance between two boxes.
    pub fn max_edge_distance(&self, other: &PixelBox) -> usize {
        [
            self.x.abs_diff(other.x),
            self.y.abs_diff(other.y),
            self.right().abs_diff(other.right()),
            self.bottom().abs_diff(other.bottom()),
        ]
        .into_iter()
        .max()
        .unwrap()
    }
}

/// Box in YOLO convention: center and size normalized by image dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBox {
    pub x_center: f64,
    pub y_center: f64,
    pub w: f64,
    pub h: f64,
}

impl NormBox {
    pub fn in_unit_square(&self) -> bool {
        let ok = |v: f64| (0.0..=1.0).contains(&v);
        ok(self.x_center)
            && ok(self.y_center)
            && ok(self.w)
            && ok(self.h)
            && self.x_center - self.w / 2.0 >= -1e-9
            && self.x_center + self.w / 2.0 <= 1.0 + 1e-9
            && self.y_center - self.h / 2.0 >= -1e-9
            && self.y_center + self.h / 2.0 <= 1.0 + 1e-9
    }

    pub fn to_pixel(&self, width: usize, height: usize) -> PixelBox {
        let x0 = ((self.x_center - self.w / 2.0) * width as f64).round().max(0.0) as usize;
        let y0 = ((self.y_center - self.h / 2.0) * height as f64).round().max(0.0) as usize;
        let x1 = ((self.x_center + self.w / 2.0) * width as f64).round().min(width as f64) as usize;
        let y1 = ((self.y_center + self.h / 2.0) * height as f64).round().min(height as f64) as usize;
        PixelBox::new(x0, y0, x1.saturating_sub(x0).max(1), y1.saturating_sub(y0).max(1))
    }

    pub fn iou(&self, other: &NormBox) -> f64 {
        let ix = (self.x_center + self.w / 2.0).min(other.x_center + other.w / 2.0)
            - (self.x_center - self.w / 2.0).max(other.x_center - other.w / 2.0);
        let iy = (self.y_center + self.h / 2.0).min(other.y_center + other.h / 2.0)
            - (self.y_center - self.h / 2.0).max(other.y_center - other.h / 2.0);
        if ix <= 0.0 || iy <= 0.0 {
            return 0.0;
        }
        let inter = ix * iy;
        let union = self.w * self.h + other.w * other.h - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::arg(format!("raster dimensions must be positive, got {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::arg(format!("channels must be 1 or 3, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch {
                expected: format!("{} bytes", width * height * channels),
                actual: format!("{} bytes", data.len()),
            });
        }
        Ok(Raster {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        Raster::new(width, height, 3, data).expect("positive dimensions")
    }

    pub fn gray(width: usize, height: usize, value: u8) -> Self {
        Raster::new(width, height, 1, vec![value; width * height]).expect("positive dimensions")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn fill_rect(&mut self, rect: PixelBox, color: [u8; 3]) {
        for y in rect.y..rect.bottom().min(self.height) {
            for x in rect.x..rect.right().min(self.width) {
                let px = self.pixel_mut(x, y);
                if px.len() == 3 {
                    px.copy_from_slice(&color);
                } else {
                    px[0] = luma(color);
                }
            }
        }
    }

    /// Rec. 601 luminance, one byte per pixel.
    pub fn luminance(&self) -> Vec<u8> {
        if self.channels == 1 {
            return self.data.clone();
        }
        self.data
            .chunks_exact(3)
            .map(|p| luma([p[0], p[1], p[2]]))
            .collect()
    }

    pub fn to_gray(&self) -> Raster {
        Raster::new(self.width, self.height, 1, self.luminance()).expect("same shape")
    }

    pub fn to_rgb(&self) -> Raster {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Raster::new(self.width, self.height, 3, data).expect("same shape")
    }

    pub fn crop(&self, rect: PixelBox) -> Result<Raster> {
        if rect.w == 0 || rect.h == 0 || rect.right() > self.width || rect.bottom() > self.height {
            return Err(Error::arg(format!(
                "crop {rect:?} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(rect.w * rect.h * self.channels);
        for y in rect.y..rect.bottom() {
            let start = (y * self.width + rect.x) * self.channels;
            data.extend_from_slice(&self.data[start..start + rect.w * self.channels]);
        }
        Raster::new(rect.w, rect.h, self.channels, data)
    }

    /// Area-weighted (box filter) resampling. Exact averaging for integer
    /// downscale factors; also valid for upscaling.
    pub fn resize_box(&self, width: usize, height: usize) -> Result<Raster> {
        if width == 0 || height == 0 {
            return Err(Error::arg("resize target must be positive"));
        }
        let plane = area_resample(
            &self.data,
            self.width,
            self.height,
            self.channels,
            width,
            height,
        );
        let data = plane.into_iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
        Raster::new(width, height, self.channels, data)
    }

    /// Bilinear resampling with pixel-center alignment.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<Raster> {
        if width == 0 || height == 0 {
            return Err(Error::arg("resize target must be positive"));
        }
        let c = self.channels;
        let mut data = vec![0u8; width * height * c];
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                for ch in 0..c {
                    let v = self.sample_bilinear(fx, fy, ch);
                    data[(y * width + x) * c + ch] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        Raster::new(width, height, c, data)
    }

    /// Bilinear sample at a continuous position; caller keeps it inside the image.
    pub fn sample_bilinear(&self, fx: f64, fy: f64, ch: usize) -> f64 {
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = fx - x0 as f64;
        let ay = fy - y0 as f64;
        let c = self.channels;
        let at = |x: usize, y: usize| self.data[(y * self.width + x) * c + ch] as f64;
        let top = at(x0, y0) * (1.0 - ax) + at(x1, y0) * ax;
        let bot = at(x0, y1) * (1.0 - ax) + at(x1, y1) * ax;
        top * (1.0 - ay) + bot * ay
    }

    /// Channel-major tensor with values mapped from [0,255] to [-1,1].
    pub fn to_signed_tensor<S: Scalar>(&self) -> Vec<S> {
        let (w, h, c) = (self.width, self.height, self.channels);
        let mut out = vec![S::zero(); w * h * c];
        let scale = S::lit(2.0 / 255.0);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let v = S::lit(self.data[(y * w + x) * c + ch] as f64);
                    out[ch * w * h + y * w + x] = v * scale - S::one();
                }
            }
        }
        out
    }

    /// Inverse of [`Raster::to_signed_tensor`]; values are clamped to [-1,1] first.
    pub fn from_signed_tensor<S: Scalar>(
        tensor: &[S],
        width: usize,
        height: usize,
        channels: usize,
    ) -> Result<Raster> {
        if tensor.len() != width * height * channels {
            return Err(Error::ShapeMismatch {
                expected: format!("{}", width * height * channels),
                actual: format!("{}", tensor.len()),
            });
        }
        if tensor.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image tensor".into()));
        }
        let mut data = vec![0u8; tensor.len()];
        for ch in 0..channels {
            for i in 0..width * height {
                let v = tensor[ch * width * height + i].max(-S::one()).min(S::one()).as_f64();
                data[i * channels + ch] = ((v + 1.0) * 127.5).round() as u8;
            }
        }
        Raster::new(width, height, channels, data)
    }
}

pub fn luma(c: [u8; 3]) -> u8 {
    (0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64).round() as u8
}

/// Box-filter resampling of an interleaved plane to floating point values.
pub(crate) fn area_resample(
    src: &[u8],
    sw: usize,
    sh: usize,
    c: usize,
    dw: usize,
    dh: usize,
) -> Vec<f64> {
    let xs = axis_weights(sw, dw);
    let ys = axis_weights(sh, dh);
    let mut out = vec![0.0; dw * dh * c];
    for (dy, yw) in ys.iter().enumerate() {
        for (dx, xw) in xs.iter().enumerate() {
            for ch in 0..c {
                let mut acc = 0.0;
                let mut norm = 0.0;
                for &(sy, wy) in yw {
                    for &(sx, wx) in xw {
                        let w = wx * wy;
                        acc += w * src[(sy * sw + sx) * c + ch] as f64;
                        norm += w;
                    }
                }
                out[(dy * dw + dx) * c + ch] = acc / norm;
            }
        }
    }
    out
}

/// For each destination index, the source indices it covers and their overlap.
fn axis_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let lo = d as f64 * scale;
            let hi = (d + 1) as f64 * scale;
            let mut v = Vec::new();
            let mut s = lo.floor() as usize;
            while (s as f64) < hi && s < src {
                let overlap = (hi.min((s + 1) as f64) - lo.max(s as f64)).max(0.0);
                if overlap > 1e-12 {
                    v.push((s, overlap));
                }
                s += 1;
            }
            v
        })
        .collect()
}
