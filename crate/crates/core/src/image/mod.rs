//! Raster primitives shared by every stage: the RGB [`Image`], binary
//! [`GrayMask`], Netpbm codecs, geometric resampling and color statistics.

mod color;
mod geometry;
mod netpbm;

pub use color::{blank_fraction, channel_stats, color_transfer, ChannelStats, BLANK_THRESHOLD};
pub use geometry::{
    bilinear_sample, crop, crop_mask, resize_bilinear, resize_plane, rotate_white_fill,
    sample_rotated, trig_degrees,
};
pub use netpbm::{decode_pgm_mask, decode_ppm, encode_pgm, encode_pgm_mask, encode_ppm, quantize};

use crate::error::{Error, Result};
use std::path::Path;

/// Interleaved RGB raster, row-major, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Image {
            width,
            height,
            data,
        }
    }

    pub fn white(width: usize, height: usize) -> Self {
        Self::filled(width, height, [1.0; 3])
    }

    /// Wraps raw interleaved data. Values are clamped into `[0, 1]`; NaN
    /// is rejected.
    pub fn from_vec(width: usize, height: usize, mut data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::shape(&[height, width, 3], &[data.len()]));
        }
        for v in &mut data {
            if v.is_nan() {
                return Err(Error::Param("image data contains NaN".into()));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                let p = f(x, y);
                data.extend(p.iter().map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Image {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        for c in 0..3 {
            self.data[i + c] = rgb[c].clamp(0.0, 1.0);
        }
    }

    pub(crate) fn from_raw_unchecked(width: usize, height: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width * height * 3);
        Image {
            width,
            height,
            data,
        }
    }

    pub fn load_ppm(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_ppm(&bytes)
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, encode_ppm(self)).map_err(|e| Error::io(path, e))
    }
}

/// Binary mask with values in `{0, 1}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        GrayMask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        GrayMask {
            width,
            height,
            data: vec![1; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y) as u8);
            }
        }
        GrayMask {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = on as u8;
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn coverage(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.count() as f64 / self.data.len() as f64
    }

    pub fn load_pgm(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_pgm_mask(&bytes)
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, encode_pgm_mask(self)).map_err(|e| Error::io(path, e))
    }
}
