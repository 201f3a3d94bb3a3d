use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::Raster;

use super::{read_bytes, write_atomic};

/// Binary PNM: P6 for RGB, P5 for grayscale, maxval 255.
pub fn encode_pnm(img: &Raster) -> Vec<u8> {
    let magic = if img.channels() == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

/// Reads the next header token, skipping whitespace and `#` comments.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (*pos > start).then(|| &bytes[start..*pos])
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Raster> {
    let bad = |m: &str| Error::Format(format!("PNM: {m}"));
    let mut pos = 0;
    let channels = match token(bytes, &mut pos) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(bad("unsupported magic number")),
    };
    let mut num = |what: &str| -> Result<usize> {
        let t = token(bytes, &mut pos).ok_or_else(|| bad(&format!("missing {what}")))?;
        std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(&format!("bad {what}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval != 255 {
        return Err(bad("only 8-bit images are supported"));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("truncated header"));
    }
    pos += 1;
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| bad("dimensions overflow"))?;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(bad(&format!("truncated payload: {} of {need} bytes", payload.len())));
    }
    if payload.len() > need {
        return Err(bad("trailing bytes after payload"));
    }
    Raster::new(width, height, channels, payload.to_vec())
}

pub fn encode_png(img: &Raster) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
    enc.set_color(if img.channels() == 3 {
        png::ColorType::Rgb
    } else {
        png::ColorType::Grayscale
    });
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::Format(format!("PNG: {e}"));
    let mut w = enc.write_header().map_err(png_err)?;
    w.write_image_data(img.data()).map_err(png_err)?;
    w.finish().map_err(png_err)?;
    Ok(out)
}

fn decode_png(bytes: &[u8]) -> Result<Raster> {
    let png_err = |e: png::DecodingError| Error::Format(format!("PNG: {e}"));
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format("PNG: image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width as usize, info.height as usize);
    let (channels, data) = match info.color_type {
        png::ColorType::Rgb => (3, buf),
        png::ColorType::Grayscale => (1, buf),
        png::ColorType::Rgba => (3, buf.chunks(4).flat_map(|p| [p[0], p[1], p[2]]).collect()),
        png::ColorType::GrayscaleAlpha => (1, buf.chunks(2).map(|p| p[0]).collect()),
        png::ColorType::Indexed => return Err(Error::Format("PNG: unexpanded palette".into())),
    };
    Raster::new(w, h, channels, data)
}

/// Decodes PNM or PNG by content.
pub fn decode_image(bytes: &[u8]) -> Result<Raster> {
    if bytes.starts_with(b"\x89PNG") {
        decode_png(bytes)
    } else {
        decode_pnm(bytes)
    }
}

pub fn read_image(path: &Path) -> Result<Raster> {
    decode_image(&read_bytes(path)?).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Writes PNG for a `.png` extension and PNM otherwise.
pub fn write_image(path: &Path, img: &Raster) -> Result<()> {
    let bytes = match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("png") => encode_png(img)?,
        _ => encode_pnm(img),
    };
    write_atomic(path, &bytes)
}
