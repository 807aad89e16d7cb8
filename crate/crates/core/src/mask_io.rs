//! Indexed 8-bit PNG encoding of label masks. Palette index = class index.
//!
//! Reading also accepts 8-bit and 16-bit grayscale images, whose sample value
//! is taken as the class index.

use std::io::Cursor;

use thiserror::Error;

use crate::raster::LabelMask;
use crate::taxonomy::ClassIndex;

#[derive(Debug, Error)]
pub enum MaskIoError {
    #[error("unsupported image format: {0}")]
    UnsupportedImageFormat(String),
    #[error("pixel value {0} exceeds the 8-bit class index range")]
    IndexOutOfRange(u32),
}

/// Cosmetic palette; colors carry no meaning.
const PALETTE: [[u8; 3]; 12] = [
    [0, 0, 0],
    [200, 0, 0],
    [0, 160, 0],
    [0, 0, 200],
    [230, 160, 0],
    [150, 0, 180],
    [0, 170, 170],
    [120, 120, 120],
    [250, 120, 180],
    [110, 70, 20],
    [180, 220, 80],
    [255, 255, 255],
];

fn palette_bytes() -> Vec<u8> {
    (0..256)
        .flat_map(|i| {
            if i < PALETTE.len() {
                PALETTE[i]
            } else {
                let v = i as u8;
                [v, v.wrapping_mul(37), v.wrapping_mul(91)]
            }
        })
        .collect()
}

pub fn write_mask(mask: &LabelMask) -> Result<Vec<u8>, MaskIoError> {
    let pixels = mask
        .data()
        .iter()
        .map(|&v| u8::try_from(v).map_err(|_| MaskIoError::IndexOutOfRange(v as u32)))
        .collect::<Result<Vec<u8>, _>>()?;
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, mask.width(), mask.height());
        encoder.set_color(png::ColorType::Indexed);
        encoder.set_depth(png::BitDepth::Eight);
        encoder.set_palette(palette_bytes());
        let mut writer = encoder
            .write_header()
            .map_err(|e| MaskIoError::UnsupportedImageFormat(e.to_string()))?;
        writer
            .write_image_data(&pixels)
            .map_err(|e| MaskIoError::UnsupportedImageFormat(e.to_string()))?;
    }
    Ok(out)
}

pub fn read_mask(content: &[u8]) -> Result<LabelMask, MaskIoError> {
    let bad = |e: &dyn std::fmt::Display| MaskIoError::UnsupportedImageFormat(e.to_string());
    // no expansion: indexed images must keep their raw palette indices
    let mut decoder = png::Decoder::new(Cursor::new(content));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| bad(&e))?;
    let info = reader.info();
    let (width, height) = (info.width, info.height);
    let color = info.color_type;
    let depth = info.bit_depth;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| MaskIoError::UnsupportedImageFormat("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(|e| bad(&e))?;
    let buf = &buf[..frame.buffer_size()];
    let line = frame.line_size;

    let n = width as usize;
    let mut data: Vec<ClassIndex> = Vec::with_capacity(n * height as usize);
    match (color, depth) {
        (png::ColorType::Indexed | png::ColorType::Grayscale, png::BitDepth::Eight) => {
            for row in buf.chunks(line).take(height as usize) {
                data.extend(row[..n].iter().map(|&v| v as ClassIndex));
            }
        }
        (png::ColorType::Grayscale, png::BitDepth::Sixteen) => {
            for row in buf.chunks(line).take(height as usize) {
                for px in row[..2 * n].chunks_exact(2) {
                    let v = u16::from_be_bytes([px[0], px[1]]);
                    if v > 255 {
                        return Err(MaskIoError::IndexOutOfRange(v as u32));
                    }
                    data.push(v);
                }
            }
        }
        (c, d) => {
            return Err(MaskIoError::UnsupportedImageFormat(format!(
                "{c:?} at {d:?} bit depth; expected 8-bit indexed or grayscale"
            )))
        }
    }
    LabelMask::from_data(width, height, data).map_err(|e| bad(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_mask_round_trips() {
        let m = LabelMask::from_data(2, 2, vec![0, 1, 2, 0]).unwrap();
        let bytes = write_mask(&m).unwrap();
        assert_eq!(read_mask(&bytes).unwrap(), m);
    }

    #[test]
    fn odd_width_round_trips() {
        let data: Vec<ClassIndex> = (0..7 * 3).map(|i| (i * 13 % 256) as ClassIndex).collect();
        let m = LabelMask::from_data(7, 3, data).unwrap();
        assert_eq!(read_mask(&write_mask(&m).unwrap()).unwrap(), m);
    }

    #[test]
    fn truncated_stream_is_rejected() {
        let m = LabelMask::from_data(4, 4, vec![1; 16]).unwrap();
        let bytes = write_mask(&m).unwrap();
        assert!(matches!(
            read_mask(&bytes[..bytes.len() / 2]),
            Err(MaskIoError::UnsupportedImageFormat(_))
        ));
        assert!(matches!(
            read_mask(b"not a png"),
            Err(MaskIoError::UnsupportedImageFormat(_))
        ));
    }

    #[test]
    fn write_rejects_wide_indices() {
        let m = LabelMask::from_data(1, 1, vec![300]).unwrap();
        assert!(matches!(
            write_mask(&m),
            Err(MaskIoError::IndexOutOfRange(300))
        ));
    }

    fn gray16(values: &[u16]) -> Vec<u8> {
        let mut out = Vec::new();
        let mut enc = png::Encoder::new(&mut out, values.len() as u32, 1);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut w = enc.write_header().unwrap();
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_be_bytes()).collect();
        w.write_image_data(&bytes).unwrap();
        drop(w);
        out
    }

    #[test]
    fn sixteen_bit_grayscale() {
        assert_eq!(
            read_mask(&gray16(&[0, 3, 255])).unwrap().data(),
            &[0, 3, 255]
        );
        assert!(matches!(
            read_mask(&gray16(&[0, 256])),
            Err(MaskIoError::IndexOutOfRange(256))
        ));
    }

    #[test]
    fn rgb_is_unsupported() {
        let mut out = Vec::new();
        let mut enc = png::Encoder::new(&mut out, 1, 1);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(&[1, 2, 3]).unwrap();
        drop(w);
        assert!(matches!(
            read_mask(&out),
            Err(MaskIoError::UnsupportedImageFormat(_))
        ));
    }
}
