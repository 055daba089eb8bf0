//! Crop, bilinear resize and white-filled rotation.
//!
//! Rotation angles are in degrees, counter-clockwise as displayed (the
//! image y axis points down). All resampling is inverse-mapped bilinear.

use super::{GrayMask, Image};
use crate::error::{Error, Result};

/// `(cos, sin)` of an angle in degrees, exact at multiples of 90°.
pub fn trig_degrees(angle: f64) -> (f64, f64) {
    let reduced = angle.rem_euclid(360.0);
    if reduced == 0.0 {
        (1.0, 0.0)
    } else if reduced == 90.0 {
        (0.0, 1.0)
    } else if reduced == 180.0 {
        (-1.0, 0.0)
    } else if reduced == 270.0 {
        (0.0, -1.0)
    } else {
        let (s, c) = reduced.to_radians().sin_cos();
        (c, s)
    }
}

pub fn crop(img: &Image, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
    if x0 + w > img.width() || y0 + h > img.height() {
        return Err(Error::Range(format!(
            "crop ({x0},{y0}) {w}x{h} exceeds {}x{} image",
            img.width(),
            img.height()
        )));
    }
    let mut data = Vec::with_capacity(w * h * 3);
    for y in y0..y0 + h {
        let start = (y * img.width() + x0) * 3;
        data.extend_from_slice(&img.data()[start..start + w * 3]);
    }
    Ok(Image::from_raw_unchecked(w, h, data))
}

pub fn crop_mask(mask: &GrayMask, x0: usize, y0: usize, w: usize, h: usize) -> Result<GrayMask> {
    if x0 + w > mask.width() || y0 + h > mask.height() {
        return Err(Error::Range(format!(
            "crop ({x0},{y0}) {w}x{h} exceeds {}x{} mask",
            mask.width(),
            mask.height()
        )));
    }
    Ok(GrayMask::from_fn(w, h, |x, y| mask.get(x0 + x, y0 + y)))
}

struct Tap {
    lo: usize,
    hi: usize,
    frac: f32,
}

// Half-pixel-center source coordinate, clamped to the edge samples.
fn taps(src_len: usize, dst_len: usize) -> Vec<Tap> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src_len - 1);
            Tap {
                lo,
                hi,
                frac: (s - lo as f64) as f32,
            }
        })
        .collect()
}

/// Bilinear resize of a `channels`-interleaved plane.
pub fn resize_plane(
    data: &[f32],
    width: usize,
    height: usize,
    channels: usize,
    new_width: usize,
    new_height: usize,
) -> Vec<f32> {
    assert_eq!(data.len(), width * height * channels);
    let xs = taps(width, new_width);
    let ys = taps(height, new_height);
    let mut out = Vec::with_capacity(new_width * new_height * channels);
    for ty in &ys {
        let row0 = ty.lo * width;
        let row1 = ty.hi * width;
        for tx in &xs {
            for c in 0..channels {
                let p00 = data[(row0 + tx.lo) * channels + c];
                let p10 = data[(row0 + tx.hi) * channels + c];
                let p01 = data[(row1 + tx.lo) * channels + c];
                let p11 = data[(row1 + tx.hi) * channels + c];
                let top = p00 + (p10 - p00) * tx.frac;
                let bottom = p01 + (p11 - p01) * tx.frac;
                out.push(top + (bottom - top) * ty.frac);
            }
        }
    }
    out
}

pub fn resize_bilinear(img: &Image, new_width: usize, new_height: usize) -> Result<Image> {
    if new_width == 0 || new_height == 0 {
        return Err(Error::Param(format!(
            "resize target {new_width}x{new_height} must be positive"
        )));
    }
    if new_width == img.width() && new_height == img.height() {
        return Ok(img.clone());
    }
    let mut data = resize_plane(
        img.data(),
        img.width(),
        img.height(),
        3,
        new_width,
        new_height,
    );
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(Image::from_raw_unchecked(new_width, new_height, data))
}

/// Bilinear sample at a continuous pixel-index coordinate; taps outside the
/// image read as white, and a sample with every tap outside is exactly white.
#[inline]
pub fn bilinear_sample(img: &Image, sx: f64, sy: f64) -> [f32; 3] {
    let w = img.width() as isize;
    let h = img.height() as isize;
    let fx0 = sx.floor();
    let fy0 = sy.floor();
    let x0 = fx0 as isize;
    let y0 = fy0 as isize;
    if x0 < -1 || y0 < -1 || x0 >= w || y0 >= h {
        return [1.0; 3];
    }
    let fx = (sx - fx0) as f32;
    let fy = (sy - fy0) as f32;
    let data = img.data();
    let fetch = |x: isize, y: isize| -> [f32; 3] {
        if x < 0 || y < 0 || x >= w || y >= h {
            [1.0; 3]
        } else {
            let i = (y as usize * w as usize + x as usize) * 3;
            [data[i], data[i + 1], data[i + 2]]
        }
    };
    let p00 = fetch(x0, y0);
    let p10 = fetch(x0 + 1, y0);
    let p01 = fetch(x0, y0 + 1);
    let p11 = fetch(x0 + 1, y0 + 1);
    let mut out = [0.0f32; 3];
    for c in 0..3 {
        let top = p00[c] + (p10[c] - p00[c]) * fx;
        let bottom = p01[c] + (p11[c] - p01[c]) * fx;
        out[c] = (top + (bottom - top) * fy).clamp(0.0, 1.0);
    }
    out
}

/// Renders an `out_w`×`out_h` view whose center maps to `(cx, cy)` in the
/// source, with content rotated counter-clockwise by `angle` degrees.
/// Both [`rotate_white_fill`] and oriented patch extraction go through here.
pub fn sample_rotated(
    img: &Image,
    cx: f64,
    cy: f64,
    angle: f64,
    out_w: usize,
    out_h: usize,
) -> Image {
    let (cos, sin) = trig_degrees(angle);
    let half_w = (out_w as f64 - 1.0) / 2.0;
    let half_h = (out_h as f64 - 1.0) / 2.0;
    let mut data = Vec::with_capacity(out_w * out_h * 3);
    for j in 0..out_h {
        let oy = j as f64 - half_h;
        for i in 0..out_w {
            let ox = i as f64 - half_w;
            let sx = cx + (ox * cos - oy * sin);
            let sy = cy + (ox * sin + oy * cos);
            data.extend_from_slice(&bilinear_sample(img, sx, sy));
        }
    }
    Image::from_raw_unchecked(out_w, out_h, data)
}

/// Rotates about the image center, keeping dimensions; uncovered corners
/// are white.
pub fn rotate_white_fill(img: &Image, angle: f64) -> Image {
    if trig_degrees(angle) == (1.0, 0.0) {
        return img.clone();
    }
    let cx = (img.width() as f64 - 1.0) / 2.0;
    let cy = (img.height() as f64 - 1.0) / 2.0;
    sample_rotated(img, cx, cy, angle, img.width(), img.height())
}
