//! Rotation-sweep scanning of large images.
//!
//! A window slides over a regular grid; each window is rotated through a
//! full turn in fixed steps and classified by the first CNN. The per-angle,
//! per-cell class probabilities form a [`FeatureMap4D`], which is folded
//! into a `rows × cols × (angles·categories)` tensor for the second CNN.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{crop, encode_pgm, resize_bilinear, rotate_white_fill, Image};
use crate::nn::{Model, Reader, Tensor};

pub const FMAP_MAGIC: &[u8; 4] = b"FMAP";
pub const FMAP_VERSION: u32 = 1;

/// Sliding-window layout over a scan image.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanGeometry {
    pub width: usize,
    pub height: usize,
    pub window: usize,
    pub cols: usize,
    pub rows: usize,
    pub stride_x: usize,
    pub stride_y: usize,
    pub angle_step: f64,
}

impl ScanGeometry {
    /// 1071×840 scan image, 224 window, 20×16 grid, 30° steps.
    pub fn full() -> Self {
        compute_grid(1071, 840, 224, 20, 16).expect("full geometry is valid")
    }

    /// Half-scale counterpart of [`ScanGeometry::full`]: 536×420, 112 window.
    pub fn desk() -> Self {
        compute_grid(536, 420, 112, 20, 16).expect("desk geometry is valid")
    }

    pub fn with_angle_step(mut self, step: f64) -> Result<Self> {
        self.angle_step = step;
        self.angle_count()?;
        Ok(self)
    }

    /// Number of sweep angles; the step must divide 360 exactly.
    pub fn angle_count(&self) -> Result<usize> {
        let step = self.angle_step;
        if !(step > 0.0 && step <= 360.0) {
            return Err(Error::Geometry(format!("angle step {step} outside (0, 360]")));
        }
        let n = (360.0 / step).round();
        if (n * step - 360.0).abs() > 1e-9 {
            return Err(Error::Geometry(format!("angle step {step} does not divide 360")));
        }
        Ok(n as usize)
    }

    pub fn angles(&self) -> Result<Vec<f64>> {
        let n = self.angle_count()?;
        Ok((0..n).map(|a| a as f64 * self.angle_step).collect())
    }

    /// Top-left corner of the window in grid cell `(row, col)`.
    pub fn origin(&self, row: usize, col: usize) -> (usize, usize) {
        (col * self.stride_x, row * self.stride_y)
    }
}

/// Grid with `cols × rows` windows whose origins are multiples of
/// `floor(slack / (n − 1))`.
pub fn compute_grid(width: usize, height: usize, window: usize, cols: usize, rows: usize) -> Result<ScanGeometry> {
    if window == 0 || window > width || window > height {
        return Err(Error::Geometry(format!(
            "window {window} does not fit a {width}x{height} image"
        )));
    }
    if cols < 2 || rows < 2 {
        return Err(Error::Geometry(format!("grid {cols}x{rows} needs at least 2x2 cells")));
    }
    let stride_x = (width - window) / (cols - 1);
    let stride_y = (height - window) / (rows - 1);
    if stride_x == 0 || stride_y == 0 {
        return Err(Error::Geometry(format!(
            "non-positive stride ({stride_x}, {stride_y}) for a {cols}x{rows} grid"
        )));
    }
    Ok(ScanGeometry {
        width,
        height,
        window,
        cols,
        rows,
        stride_x,
        stride_y,
        angle_step: 30.0,
    })
}

/// Class probabilities indexed `[angle][row][col][category]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap4D {
    dims: [usize; 4],
    values: Vec<f32>,
}

impl FeatureMap4D {
    pub fn zeros(angles: usize, rows: usize, cols: usize, categories: usize) -> Self {
        FeatureMap4D {
            dims: [angles, rows, cols, categories],
            values: vec![0.0; angles * rows * cols * categories],
        }
    }

    pub fn from_vec(dims: [usize; 4], values: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != values.len() {
            return Err(Error::shape(&dims, &[values.len()]));
        }
        Ok(FeatureMap4D { dims, values })
    }

    /// `(angles, rows, cols, categories)`.
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    fn index(&self, a: usize, r: usize, c: usize, k: usize) -> usize {
        let [_, rows, cols, cats] = self.dims;
        ((a * rows + r) * cols + c) * cats + k
    }

    #[inline]
    pub fn get(&self, a: usize, r: usize, c: usize, k: usize) -> f32 {
        self.values[self.index(a, r, c, k)]
    }

    #[inline]
    pub fn set(&mut self, a: usize, r: usize, c: usize, k: usize, v: f32) {
        let i = self.index(a, r, c, k);
        self.values[i] = v;
    }

    /// Category vector at one `(angle, row, col)`.
    pub fn cell(&self, a: usize, r: usize, c: usize) -> &[f32] {
        let i = self.index(a, r, c, 0);
        &self.values[i..i + self.dims[3]]
    }

    /// Largest deviation of a cell's category sum from 1, and whether every
    /// entry is finite and nonnegative.
    pub fn distribution_error(&self) -> (f64, bool) {
        let k = self.dims[3].max(1);
        let mut worst = 0.0f64;
        let mut valid = true;
        for cell in self.values.chunks(k) {
            let sum: f64 = cell.iter().map(|&v| v as f64).sum();
            worst = worst.max((sum - 1.0).abs());
            valid &= cell.iter().all(|v| v.is_finite() && *v >= 0.0);
        }
        (worst, valid)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 4 * self.values.len());
        out.extend_from_slice(FMAP_MAGIC);
        out.extend_from_slice(&FMAP_VERSION.to_le_bytes());
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != FMAP_MAGIC {
            return Err(Error::Format("missing FMAP magic".into()));
        }
        let version = r.u32()?;
        if version != FMAP_VERSION {
            return Err(Error::Format(format!("unsupported FMAP version {version}")));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("FMAP dims {dims:?} overflow")))?;
        if n.checked_mul(4) != Some(bytes.len() - r.pos()) {
            return Err(Error::Format(format!(
                "FMAP dims {dims:?} need {n} values, payload has {} bytes",
                bytes.len() - r.pos()
            )));
        }
        let values = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        Ok(FeatureMap4D { dims, values })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

/// Resizes a large image to the scan dimensions when needed.
pub fn prepare_scan_image(img: &Image, geom: &ScanGeometry) -> Result<Image> {
    if img.width() == geom.width && img.height() == geom.height {
        Ok(img.clone())
    } else {
        resize_bilinear(img, geom.width, geom.height)
    }
}

/// Probabilities of one window rotated to each angle.
pub fn sweep_window(window: &Image, model: &Model<f32>, angles: &[f64]) -> Result<Vec<Vec<f32>>> {
    angles
        .iter()
        .map(|&a| model.forward(&Tensor::from_image(&rotate_white_fill(window, a))))
        .collect()
}

/// Probabilities of every sweep angle for the window at `(row, col)`.
pub fn scan_cell(img: &Image, model: &Model<f32>, geom: &ScanGeometry, row: usize, col: usize) -> Result<Vec<Vec<f32>>> {
    let (x0, y0) = geom.origin(row, col);
    let window = crop(img, x0, y0, geom.window, geom.window)?;
    sweep_window(&window, model, &geom.angles()?)
}

/// Classifies every window at every sweep angle.
pub fn scan_image(img: &Image, model: &Model<f32>, geom: &ScanGeometry) -> Result<FeatureMap4D> {
    if img.width() != geom.width || img.height() != geom.height {
        return Err(Error::shape(&[geom.height, geom.width], &[img.height(), img.width()]));
    }
    let [ih, iw, ic] = model.input_shape();
    if ih != geom.window || iw != geom.window || ic != 3 {
        return Err(Error::shape(&[geom.window, geom.window, 3], &[ih, iw, ic]));
    }
    let angles = geom.angle_count()?;
    let cats = model.categories().len();
    let cells: Vec<(usize, usize)> = (0..geom.rows)
        .flat_map(|r| (0..geom.cols).map(move |c| (r, c)))
        .collect();
    let results = cells
        .par_iter()
        .map(|&(r, c)| scan_cell(img, model, geom, r, c))
        .collect::<Result<Vec<_>>>()?;
    let mut fm = FeatureMap4D::zeros(angles, geom.rows, geom.cols, cats);
    for (&(r, c), probs) in cells.iter().zip(&results) {
        for (a, p) in probs.iter().enumerate() {
            for (k, &v) in p.iter().enumerate() {
                fm.set(a, r, c, k, v);
            }
        }
    }
    Ok(fm)
}

/// Per-cell grid of values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

impl Heatmap {
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.values[r * self.cols + c]
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len().max(1) as f64
    }

    /// P5 image, one pixel per cell.
    pub fn to_pgm(&self) -> Vec<u8> {
        encode_pgm(self.cols, self.rows, &self.values)
    }

    /// One CSV line per grid row.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks(self.cols) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Maximum over angles of one category's probability.
pub fn max_heatmap(fm: &FeatureMap4D, category: usize) -> Result<Heatmap> {
    let [angles, rows, cols, cats] = fm.dims();
    if category >= cats {
        return Err(Error::Range(format!("category {category} of {cats}")));
    }
    let mut values = vec![f32::NEG_INFINITY; rows * cols];
    for a in 0..angles {
        for r in 0..rows {
            for c in 0..cols {
                let v = &mut values[r * cols + c];
                *v = v.max(fm.get(a, r, c, category));
            }
        }
    }
    Ok(Heatmap { rows, cols, values })
}

/// `rows × cols × (angles·categories)` tensor with channel `a·K + k`.
pub fn fold_for_second_cnn(fm: &FeatureMap4D) -> Tensor<f32> {
    let [angles, rows, cols, cats] = fm.dims();
    let ch = angles * cats;
    let mut data = vec![0.0f32; rows * cols * ch];
    for a in 0..angles {
        for r in 0..rows {
            for c in 0..cols {
                let base = (r * cols + c) * ch + a * cats;
                data[base..base + cats].copy_from_slice(fm.cell(a, r, c));
            }
        }
    }
    Tensor::from_vec(&[rows, cols, ch], data).expect("sizes agree")
}

/// Inverse of [`fold_for_second_cnn`].
pub fn unfold_feature_map(t: &Tensor<f32>, angles: usize) -> Result<FeatureMap4D> {
    let shape = t.shape();
    if shape.len() != 3 || angles == 0 || shape[2] % angles != 0 {
        return Err(Error::Param(format!(
            "cannot unfold tensor {shape:?} into {angles} angles"
        )));
    }
    let (rows, cols, ch) = (shape[0], shape[1], shape[2]);
    let cats = ch / angles;
    let mut fm = FeatureMap4D::zeros(angles, rows, cols, cats);
    for r in 0..rows {
        for c in 0..cols {
            for a in 0..angles {
                for k in 0..cats {
                    fm.set(a, r, c, k, t.data()[(r * cols + c) * ch + a * cats + k]);
                }
            }
        }
    }
    Ok(fm)
}

/// Second-CNN probability of `K` for an already computed feature map.
pub fn classify_feature_map(fm: &FeatureMap4D, second: &Model<f32>) -> Result<f64> {
    let k = second
        .category_index("K")
        .ok_or_else(|| Error::Param("second model has no K category".into()))?;
    Ok(second.forward(&fold_for_second_cnn(fm))?[k] as f64)
}

/// Scan, fold and classify one large image.
pub fn classify_large_image(img: &Image, first: &Model<f32>, second: &Model<f32>, geom: &ScanGeometry) -> Result<f64> {
    let fm = scan_image(img, first, geom)?;
    classify_feature_map(&fm, second)
}
