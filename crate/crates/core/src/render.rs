//! Deterministic template renderer for plate rasters with ground-truth glyph boxes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment, AugmentRanges};
use crate::error::{Error, Result};
use crate::font::{self, GLYPH_H, GLYPH_W};
use crate::grammar::{PlateDistribution, PlateSampler, PlateSpec};
use crate::raster::{NormBox, PixelBox, Raster};

/// Output geometry of the reference canvas.
pub const REFERENCE_SIZE: (usize, usize) = (193, 72);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlyphSlot {
    pub x: usize,
    pub width: usize,
}

/// Colors and glyph grid, expressed on the reference canvas and scaled to
/// whatever size is rendered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderStyle {
    pub glyph_color: [u8; 3],
    pub ev_glyph_color: [u8; 3],
    pub background: [u8; 3],
    pub band: bool,
    pub band_color: [u8; 3],
    /// Fraction of the plate width covered by the band.
    pub band_fraction: f64,
    pub slots: [GlyphSlot; 8],
    pub glyph_top: usize,
    pub glyph_height: usize,
}

impl Default for RenderStyle {
    fn default() -> Self {
        let xs = [28, 47, 72, 91, 110, 129, 154, 173];
        RenderStyle {
            glyph_color: [20, 20, 20],
            ev_glyph_color: [0, 110, 70],
            background: [245, 245, 245],
            band: true,
            band_color: [0, 87, 183],
            band_fraction: 0.12,
            slots: xs.map(|x| GlyphSlot { x, width: 15 }),
            glyph_top: 15,
            glyph_height: 42,
        }
    }
}

impl RenderStyle {
    pub fn validate(&self) -> Result<()> {
        let (rw, rh) = REFERENCE_SIZE;
        if !(0.0..0.5).contains(&self.band_fraction) {
            return Err(Error::arg("band fraction must be in [0, 0.5)"));
        }
        let band_end = if self.band {
            (self.band_fraction * rw as f64).round() as usize
        } else {
            0
        };
        if self.slots[0].x < band_end {
            return Err(Error::arg("first glyph slot overlaps the band"));
        }
        for pair in self.slots.windows(2) {
            if pair[1].x < pair[0].x + pair[0].width + 1 {
                return Err(Error::arg("glyph slots must be strictly increasing and separated"));
            }
        }
        let last = self.slots[7];
        if last.x + last.width > rw || self.slots.iter().any(|s| s.width == 0) {
            return Err(Error::arg("glyph slots exceed the plate width"));
        }
        if self.glyph_height == 0 || self.glyph_top + self.glyph_height > rh {
            return Err(Error::arg("glyph rows exceed the plate height"));
        }
        Ok(())
    }

    pub fn band_width(&self, width: usize) -> usize {
        if self.band {
            (self.band_fraction * width as f64).round() as usize
        } else {
            0
        }
    }

    /// Glyph rectangles for a canvas of the given size. Every glyph must get at
    /// least one pixel per font cell and a one-pixel gap to its neighbor.
    pub fn layout(&self, width: usize, height: usize) -> Result<[PixelBox; 8]> {
        self.validate()?;
        let (rw, rh) = REFERENCE_SIZE;
        let sx = |v: usize| (v as f64 * width as f64 / rw as f64).round() as usize;
        let sy = |v: usize| (v as f64 * height as f64 / rh as f64).round() as usize;
        let top = sy(self.glyph_top);
        let bottom = sy(self.glyph_top + self.glyph_height);
        let mut boxes = [PixelBox::new(0, 0, 0, 0); 8];
        for (b, s) in boxes.iter_mut().zip(&self.slots) {
            let x0 = sx(s.x);
            let x1 = sx(s.x + s.width);
            *b = PixelBox::new(x0, top, x1.saturating_sub(x0), bottom.saturating_sub(top));
        }
        let too_small = boxes.iter().any(|b| b.w < GLYPH_W || b.h < GLYPH_H)
            || boxes.windows(2).any(|p| p[1].x <= p[0].right())
            || boxes[7].right() > width
            || boxes[0].x < self.band_width(width);
        if too_small {
            return Err(Error::arg(format!(
                "{width}x{height} is too small to place 8 glyphs"
            )));
        }
        Ok(boxes)
    }
}

#[derive(Debug, Clone)]
pub struct RenderedPlate {
    pub raster: Raster,
    pub boxes: [PixelBox; 8],
}

pub fn render_plate(spec: &PlateSpec, style: &RenderStyle, size: (usize, usize)) -> Result<RenderedPlate> {
    let (w, h) = size;
    let boxes = style.layout(w, h)?;
    let mut img = Raster::filled(w, h, style.background);
    if style.band {
        img.fill_rect(PixelBox::new(0, 0, style.band_width(w), h), style.band_color);
    }
    let color = if spec.is_ev() {
        style.ev_glyph_color
    } else {
        style.glyph_color
    };
    for (c, b) in spec.chars().iter().zip(&boxes) {
        let class = font::glyph_class(*c).expect("plate characters are in the class map");
        let mask = font::scaled_mask(class, b.w, b.h);
        for y in 0..b.h {
            for x in 0..b.w {
                if mask[y * b.w + x] {
                    img.pixel_mut(b.x + x, b.y + y).copy_from_slice(&color);
                }
            }
        }
    }
    Ok(RenderedPlate { raster: img, boxes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub count: usize,
    pub seed: u64,
    pub distribution: Option<PlateDistribution>,
    pub style: RenderStyle,
    pub render_size: (usize, usize),
    /// Box-filter downsample target applied after augmentation.
    pub output_size: Option<(usize, usize)>,
    pub augment: Option<AugmentRanges>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            count: 1,
            seed: 0,
            distribution: None,
            style: RenderStyle::default(),
            render_size: REFERENCE_SIZE,
            output_size: None,
            augment: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderedItem {
    pub raster: Raster,
    pub spec: PlateSpec,
    /// Ground-truth glyph boxes, left to right, normalized to the image.
    pub boxes: [NormBox; 8],
}

impl RenderedItem {
    pub fn pixel_boxes(&self) -> [PixelBox; 8] {
        self.boxes
            .map(|b| b.to_pixel(self.raster.width(), self.raster.height()))
    }
}

pub fn render_dataset(cfg: &DatasetConfig) -> Result<Vec<RenderedItem>> {
    if cfg.count == 0 {
        return Err(Error::arg("dataset count must be at least 1"));
    }
    let sampler = PlateSampler::new(cfg.distribution.as_ref())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Separate stream so enabling augmentation does not shift plate texts.
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    aug_rng.set_stream(1);
    let (rw, rh) = cfg.render_size;
    let mut out = Vec::with_capacity(cfg.count);
    for _ in 0..cfg.count {
        let spec = sampler.sample(&mut rng);
        let params = cfg.augment.as_ref().map(|r| r.sample(&mut aug_rng));
        let plate = render_plate(&spec, &cfg.style, cfg.render_size)?;
        let mut raster = match params {
            Some(p) => augment(&plate.raster, &p),
            None => plate.raster,
        };
        if let Some((ow, oh)) = cfg.output_size {
            if (ow, oh) != (rw, rh) {
                raster = raster.resize_box(ow, oh)?;
            }
        }
        out.push(RenderedItem {
            raster,
            spec,
            boxes: plate.boxes.map(|b| b.to_norm(rw, rh)),
        });
    }
    Ok(out)
}
