//! Binary Netpbm codecs: P6 color images and P5 masks/heatmaps, maxval 255.

use super::{GrayMask, Image};
use crate::error::{Error, Result};

/// `round(v * 255)` with halves rounded up, clamped to a byte.
#[inline]
pub fn quantize(v: f32) -> u8 {
    let scaled = (v as f64 * 255.0 + 0.5).floor();
    scaled.clamp(0.0, 255.0) as u8
}

struct Header {
    width: usize,
    height: usize,
    payload_start: usize,
}

fn decode_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Decode {
        offset,
        message: message.into(),
    }
}

fn skip_whitespace_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        return pos;
    }
}

fn read_uint(bytes: &[u8], pos: usize) -> Result<(usize, usize)> {
    let start = skip_whitespace_and_comments(bytes, pos);
    let mut end = start;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    if end == start {
        return Err(decode_err(start, "expected an unsigned integer"));
    }
    let text = std::str::from_utf8(&bytes[start..end]).expect("ascii digits");
    let value = text
        .parse::<usize>()
        .map_err(|_| decode_err(start, "integer out of range"))?;
    Ok((value, end))
}

fn read_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(decode_err(
            0,
            format!("missing magic {}", String::from_utf8_lossy(magic)),
        ));
    }
    let (width, pos) = read_uint(bytes, 2)?;
    let (height, pos) = read_uint(bytes, pos)?;
    let maxval_at = skip_whitespace_and_comments(bytes, pos);
    let (maxval, pos) = read_uint(bytes, pos)?;
    if maxval != 255 {
        return Err(decode_err(
            maxval_at,
            format!("unsupported maxval {maxval}, only 255 is accepted"),
        ));
    }
    if width == 0 || height == 0 {
        return Err(decode_err(2, "zero image dimension"));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(decode_err(pos, "expected whitespace after maxval"));
    }
    Ok(Header {
        width,
        height,
        payload_start: pos + 1,
    })
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let h = read_header(bytes, b"P6")?;
    let need = h.width * h.height * 3;
    let payload = &bytes[h.payload_start..];
    if payload.len() < need {
        return Err(decode_err(
            bytes.len(),
            format!("truncated payload: need {need} bytes, found {}", payload.len()),
        ));
    }
    let data = payload[..need].iter().map(|&b| b as f32 / 255.0).collect();
    Ok(Image::from_raw_unchecked(h.width, h.height, data))
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", img.width(), img.height());
    let mut out = Vec::with_capacity(header.len() + img.data().len());
    out.extend_from_slice(header.as_bytes());
    out.extend(img.data().iter().map(|&v| quantize(v)));
    out
}

/// Grayscale P5 from a row-major grid of values in `[0, 1]`.
pub fn encode_pgm(width: usize, height: usize, values: &[f32]) -> Vec<u8> {
    assert_eq!(values.len(), width * height);
    let header = format!("P5\n{width} {height}\n255\n");
    let mut out = Vec::with_capacity(header.len() + values.len());
    out.extend_from_slice(header.as_bytes());
    out.extend(values.iter().map(|&v| quantize(v)));
    out
}

pub fn encode_pgm_mask(mask: &GrayMask) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", mask.width(), mask.height());
    let mut out = Vec::with_capacity(header.len() + mask.data().len());
    out.extend_from_slice(header.as_bytes());
    out.extend(mask.data().iter().map(|&v| if v != 0 { 255 } else { 0 }));
    out
}

/// Decodes a P5 mask; bytes at or above 128 are foreground.
pub fn decode_pgm_mask(bytes: &[u8]) -> Result<GrayMask> {
    let h = read_header(bytes, b"P5")?;
    let need = h.width * h.height;
    let payload = &bytes[h.payload_start..];
    if payload.len() < need {
        return Err(decode_err(
            bytes.len(),
            format!("truncated payload: need {need} bytes, found {}", payload.len()),
        ));
    }
    let mut mask = GrayMask::zeros(h.width, h.height);
    for (i, &b) in payload[..need].iter().enumerate() {
        mask.data[i] = (b >= 128) as u8;
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_two_pixel_example() {
        let mut bytes = b"P6\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 255, 255, 0, 0, 0]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!((img.width(), img.height()), (2, 1));
        assert_eq!(img.pixel(0, 0), [1.0; 3]);
        assert_eq!(img.pixel(1, 0), [0.0; 3]);
        assert_eq!(encode_ppm(&img), bytes);
    }

    #[test]
    fn single_space_separated_header() {
        let mut bytes = b"P6 1 1 255 ".to_vec();
        bytes.extend_from_slice(&[10, 20, 30]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img.pixel(0, 0)[1], 20.0 / 255.0);
    }

    #[test]
    fn white_pixel_encoding() {
        let img = Image::white(1, 1);
        assert_eq!(encode_ppm(&img), b"P6\n1 1\n255\n\xff\xff\xff".to_vec());
    }

    #[test]
    fn half_rounds_up() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
    }

    #[test]
    fn quantization_error_is_bounded_for_every_level() {
        for level in 0..=255u32 {
            let v = level as f32 / 255.0;
            let img = Image::filled(1, 1, [v; 3]);
            let back = decode_ppm(&encode_ppm(&img)).unwrap();
            assert!((back.pixel(0, 0)[0] - v).abs() <= 1.0 / 510.0);
        }
        // and for midpoints between levels
        for level in 0..255u32 {
            let v = (level as f32 + 0.5) / 255.0;
            let img = Image::filled(1, 1, [v; 3]);
            let back = decode_ppm(&encode_ppm(&img)).unwrap();
            assert!((back.pixel(0, 0)[0] - v).abs() <= 1.0 / 510.0 + 1e-7);
        }
    }

    #[test]
    fn rejects_bad_maxval_with_offset() {
        let bytes = b"P6\n1 1\n65535\n\0\0\0\0\0\0".to_vec();
        match decode_ppm(&bytes) {
            Err(Error::Decode { offset, .. }) => assert_eq!(offset, 7),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_truncated_payload() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0; 11]);
        assert!(matches!(decode_ppm(&bytes), Err(Error::Decode { .. })));
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(matches!(
            decode_ppm(b"P3\n1 1\n255\n0 0 0"),
            Err(Error::Decode { offset: 0, .. })
        ));
    }

    #[test]
    fn mask_threshold_at_128() {
        let mut bytes = b"P5\n3 1\n255\n".to_vec();
        bytes.extend_from_slice(&[127, 128, 255]);
        let m = decode_pgm_mask(&bytes).unwrap();
        assert_eq!(m.data(), &[0, 1, 1]);
        assert_eq!(decode_pgm_mask(&encode_pgm_mask(&m)).unwrap(), m);
    }
}
