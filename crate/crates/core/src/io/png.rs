//! PNG images (8-bit RGB/RGBA) and binary masks (1-bit grayscale).

use std::io::Cursor;
use std::path::Path;

use ::png::{BitDepth, ColorType, Decoder, Encoder, Limits};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Image};

/// Largest raster accepted from a file, in pixels.
pub const MAX_PIXELS: usize = 1 << 26;

struct Decoded {
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    line_size: usize,
    data: Vec<u8>,
}

fn decode(bytes: &[u8]) -> Result<Decoded> {
    let limits = Limits {
        bytes: 512 * 1024 * 1024,
    };
    let mut decoder = Decoder::new_with_limits(Cursor::new(bytes), limits);
    let header = decoder.read_header_info().map_err(png_err)?;
    let (width, height) = (header.width as usize, header.height as usize);
    if width.saturating_mul(height) > MAX_PIXELS {
        return Err(Error::invalid(format!(
            "{width}x{height} image exceeds {MAX_PIXELS} pixels"
        )));
    }
    let mut reader = decoder.read_info().map_err(png_err)?;
    let (color, depth) = reader.output_color_type();
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::invalid("image buffer size overflows"))?;
    let mut data = vec![0; size];
    let frame = reader.next_frame(&mut data).map_err(png_err)?;
    data.truncate(frame.buffer_size());
    Ok(Decoded {
        width,
        height,
        color,
        depth,
        line_size: frame.line_size,
        data,
    })
}

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Png(e.to_string())
}

fn encode(
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    data: &[u8],
) -> Result<Vec<u8>> {
    let (w, h) = (
        u32::try_from(width).map_err(|_| Error::invalid("width exceeds u32"))?,
        u32::try_from(height).map_err(|_| Error::invalid("height exceeds u32"))?,
    );
    let mut out = Vec::new();
    {
        let mut encoder = Encoder::new(&mut out, w, h);
        encoder.set_color(color);
        encoder.set_depth(depth);
        let mut writer = encoder.write_header().map_err(png_err)?;
        writer.write_image_data(data).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    Ok(out)
}

pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    let d = decode(bytes)?;
    if d.depth != BitDepth::Eight {
        return Err(Error::UnsupportedBitDepth(d.depth as u8));
    }
    let channels = match d.color {
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        other => return Err(Error::UnsupportedColorType(format!("{other:?}"))),
    };
    Image::new(d.height, d.width, channels, d.data)
}

pub fn encode_image(image: &Image) -> Result<Vec<u8>> {
    let color = if image.has_alpha() {
        ColorType::Rgba
    } else {
        ColorType::Rgb
    };
    encode(
        image.width(),
        image.height(),
        color,
        BitDepth::Eight,
        image.as_bytes(),
    )
}

/// Decodes a mask from 1-bit or 8-bit grayscale; any nonzero sample is set.
pub fn decode_mask(bytes: &[u8]) -> Result<BinaryMask> {
    let d = decode(bytes)?;
    if d.color != ColorType::Grayscale {
        return Err(Error::UnsupportedColorType(format!("{:?} mask", d.color)));
    }
    let bits = match d.depth {
        BitDepth::One => {
            let mut bits = Vec::with_capacity(d.width * d.height);
            for row in d.data.chunks(d.line_size).take(d.height) {
                bits.extend((0..d.width).map(|c| row[c / 8] & (0x80 >> (c % 8)) != 0));
            }
            bits
        }
        BitDepth::Eight => d
            .data
            .chunks(d.line_size)
            .take(d.height)
            .flat_map(|row| row[..d.width].iter().map(|&v| v != 0))
            .collect(),
        other => return Err(Error::UnsupportedBitDepth(other as u8)),
    };
    BinaryMask::new(d.height, d.width, bits)
}

/// Encodes a mask as 1-bit grayscale, set pixels white.
pub fn encode_mask(mask: &BinaryMask) -> Result<Vec<u8>> {
    let stride = mask.width().div_ceil(8);
    let mut packed = vec![0u8; stride * mask.height()];
    for r in 0..mask.height() {
        let row = &mut packed[r * stride..(r + 1) * stride];
        for c in 0..mask.width() {
            if mask.get(r, c) {
                row[c / 8] |= 0x80 >> (c % 8);
            }
        }
    }
    encode(
        mask.width(),
        mask.height(),
        ColorType::Grayscale,
        BitDepth::One,
        &packed,
    )
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    decode_image(&super::read_bytes(path.as_ref())?)
}

pub fn write_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    super::write_bytes(path.as_ref(), &encode_image(image)?)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    decode_mask(&super::read_bytes(path.as_ref())?)
}

pub fn write_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    super::write_bytes(path.as_ref(), &encode_mask(mask)?)
}
