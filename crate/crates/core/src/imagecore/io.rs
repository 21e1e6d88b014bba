//! 8-bit grayscale PNG / binary PGM (P5) I/O and 1-bit PNG line maps.
//!
//! Pixel values map linearly between `[0, 1]` and `[0, 255]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{BinaryImage, Image};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Reduce color input to luminance instead of rejecting it.
    pub luminance: bool,
}

#[inline]
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[inline]
pub fn from_u8(v: u8) -> f32 {
    v as f32 / 255.0
}

/// Round-trips a raster through the 8-bit representation.
pub fn quantize(img: &Image) -> Image {
    img.map(|v| from_u8(to_u8(v)))
}

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Format(format!("png: {e}"))
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, img.width() as u32, img.height() as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(png_err)?;
        let data: Vec<u8> = img.pixels().iter().map(|&v| to_u8(v)).collect();
        w.write_image_data(&data).map_err(png_err)?;
    }
    Ok(buf)
}

pub fn save_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(img)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Packed 1-bit PNG (foreground written as white).
pub fn save_png_binary(img: &BinaryImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width() as u32, img.height() as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::One);
    let mut w = enc.write_header().map_err(png_err)?;
    let stride = img.width().div_ceil(8);
    let mut data = vec![0u8; stride * img.height()];
    for y in 0..img.height() {
        for x in 0..img.width() {
            if img.get(x, y) {
                data[y * stride + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    w.write_image_data(&data).map_err(png_err)?;
    Ok(())
}

pub fn decode_png(bytes: &[u8], opts: LoadOptions) -> Result<Image> {
    let mut dec = png::Decoder::new(std::io::Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(png_err)?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| png_err("image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    let channels = info.color_type.samples();
    let pixels: Vec<f32> = match info.color_type {
        png::ColorType::Grayscale => data.iter().map(|&v| from_u8(v)).collect(),
        png::ColorType::GrayscaleAlpha if opts.luminance => data.chunks(2).map(|c| from_u8(c[0])).collect(),
        png::ColorType::Rgb | png::ColorType::Rgba if opts.luminance => data
            .chunks(channels)
            .map(|c| (0.299 * c[0] as f32 + 0.587 * c[1] as f32 + 0.114 * c[2] as f32) / 255.0)
            .collect(),
        other => {
            return Err(Error::Format(format!(
                "expected single-channel PNG, got {other:?} (enable luminance reduction to accept it)"
            )))
        }
    };
    Image::from_pixels(w, h, pixels)
}

pub fn load_png(path: impl AsRef<Path>, opts: LoadOptions) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes, opts)
}

/// Reads any PNG line map back into a mask (non-zero = foreground).
pub fn load_png_binary(path: impl AsRef<Path>) -> Result<BinaryImage> {
    let img = load_png(path, LoadOptions::default())?;
    Ok(BinaryImage::from_fn(img.width(), img.height(), |x, y| img.get(x, y) > 0.5))
}

pub fn save_pgm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let data: Vec<u8> = img.pixels().iter().map(|&v| to_u8(v)).collect();
    write!(f, "P5\n{} {}\n255\n", img.width(), img.height())
        .and_then(|_| f.write_all(&data))
        .and_then(|_| f.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let bad = |m: &str| Error::Format(format!("pgm: {m}"));
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?.to_string());
    }
    if fields[0] != "P5" {
        return Err(bad("only binary P5 is supported"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    pos += 1;
    let data = bytes.get(pos..pos + w * h).ok_or_else(|| bad("truncated pixel data"))?;
    Image::from_pixels(w, h, data.iter().map(|&v| from_u8(v)).collect())
}
