//! Procedural "cyst wall" images with ground-truth masks.
//!
//! Each image is either a band of lining epithelium separating a white
//! cavity from pink stroma (categories K, N, N-thick) or stroma alone
//! (S, S-inflamed). The only systematic difference between K and N-thick is
//! the basal palisade: a regular row of elongated nuclei whose long axes
//! follow the normal of the stroma-side boundary. Every nucleus drawn is
//! recorded in a [`PlacementLog`], and the log yields the method-1 crop
//! [`Anchor`]s.

mod band;
mod dataset;
mod raster;

pub use band::{square_fits, thick_limit, Anchor, BandGeometry};
pub use dataset::{
    build_synth_dataset, case_id, image_seed, read_anchors, write_anchors, AnchorRow, DatasetCounts,
    DatasetManifest, ManifestRow, MAX_IMAGES_PER_CASE,
};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{GrayMask, Image};
use raster::{darken_ellipse, ValueNoise};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    K,
    N,
    NThick,
    S,
    SInflamed,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::K,
        Category::N,
        Category::NThick,
        Category::S,
        Category::SInflamed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::K => "K",
            Category::N => "N",
            Category::NThick => "N-thick",
            Category::S => "S",
            Category::SInflamed => "S-inflamed",
        }
    }

    /// Training class: N-thick counts as N, S-inflamed as S.
    pub fn class(self) -> &'static str {
        match self {
            Category::K => "K",
            Category::N | Category::NThick => "N",
            Category::S | Category::SInflamed => "S",
        }
    }

    pub fn has_band(self) -> bool {
        matches!(self, Category::K | Category::N | Category::NThick)
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Param(format!("unknown category {s:?}")))
    }
}

/// Parameters of one synthetic large image. Lengths are in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub category: Category,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Band thickness range (ignored for S categories).
    pub thickness: (f64, f64),
    /// Full long and short axis lengths of an epithelial nucleus.
    pub nucleus_axes: (f64, f64),
    pub palisade: bool,
    /// Maximum boundary wave amplitude and its base wavelength.
    pub wave_amplitude: f64,
    pub wave_wavelength: f64,
}

impl SynthSpec {
    /// Full-scale defaults (1224×960 canvas).
    pub fn new(category: Category, seed: u64) -> Self {
        let thickness = match category {
            Category::K | Category::NThick => (144.0, 272.0),
            Category::N => (40.0, 64.0),
            Category::S | Category::SInflamed => (0.0, 0.0),
        };
        SynthSpec {
            category,
            width: 1224,
            height: 960,
            seed,
            thickness,
            nucleus_axes: (18.0, 10.0),
            palisade: category == Category::K,
            wave_amplitude: 16.0,
            wave_wavelength: 480.0,
        }
    }

    /// Half-scale defaults (612×480 canvas).
    pub fn desk(category: Category, seed: u64) -> Self {
        Self::new(category, seed).scaled(0.5)
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.width = (self.width as f64 * factor).round() as usize;
        self.height = (self.height as f64 * factor).round() as usize;
        self.thickness = (self.thickness.0 * factor, self.thickness.1 * factor);
        self.nucleus_axes = (self.nucleus_axes.0 * factor, self.nucleus_axes.1 * factor);
        self.wave_amplitude *= factor;
        self.wave_wavelength *= factor;
        self
    }

    /// Pixels per full-scale pixel, from the nucleus size.
    fn unit(&self) -> f64 {
        self.nucleus_axes.1 / 10.0
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.width > 0
            && self.height > 0
            && self.nucleus_axes.0 > 0.0
            && self.nucleus_axes.1 > 0.0
            && self.nucleus_axes.0 >= self.nucleus_axes.1
            && self.wave_amplitude >= 0.0
            && self.wave_wavelength > 0.0;
        if !positive {
            return Err(Error::Param(format!("invalid synthetic image spec {self:?}")));
        }
        if self.category.has_band() {
            let (lo, hi) = self.thickness;
            if !(lo > 0.0 && lo <= hi) {
                return Err(Error::Param(format!("invalid band thickness range {lo}..{hi}")));
            }
            let min_side = self.width.min(self.height) as f64;
            if hi * 1.08 + 2.0 * self.wave_amplitude >= min_side / 2.0 {
                return Err(Error::Param(format!(
                    "band up to {hi} px thick does not fit a {}x{} canvas",
                    self.width, self.height
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NucleusRole {
    Basal,
    Suprabasal,
    Spindle,
    Inflammatory,
}

impl NucleusRole {
    pub fn as_str(self) -> &'static str {
        match self {
            NucleusRole::Basal => "basal",
            NucleusRole::Suprabasal => "suprabasal",
            NucleusRole::Spindle => "spindle",
            NucleusRole::Inflammatory => "inflammatory",
        }
    }
}

/// One drawn nucleus. `angle` is the long-axis direction in degrees,
/// counter-clockwise on screen from +x; `s` is the band coordinate for
/// band nuclei.
#[derive(Clone, Debug, PartialEq)]
pub struct NucleusRecord {
    pub role: NucleusRole,
    pub x: f64,
    pub y: f64,
    pub semi_major: f64,
    pub semi_minor: f64,
    pub angle: f64,
    pub s: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlacementLog {
    pub band: Option<BandGeometry>,
    pub nuclei: Vec<NucleusRecord>,
}

impl PlacementLog {
    /// Method-1 anchors for a square crop of `side` with a `rescue` window
    /// for thick stretches. Empty for images without a band.
    pub fn anchors(&self, width: usize, height: usize, side: usize, rescue: usize) -> Vec<Anchor> {
        match &self.band {
            Some(b) => b.anchors(width, height, side, rescue),
            None => Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Synthesized {
    pub image: Image,
    pub mask: GrayMask,
    pub log: PlacementLog,
}

const CAVITY: [f32; 3] = [0.975, 0.97, 0.975];
const STROMA: [f32; 3] = [0.94, 0.76, 0.84];
const FIBER: [f32; 3] = [0.07, 0.17, 0.10];
const EPITHELIUM: [f32; 3] = [0.84, 0.68, 0.82];
const SURFACE: [f32; 3] = [0.78, 0.52, 0.70];
const NUCLEUS: [f32; 3] = [0.44, 0.54, 0.30];

/// Renders one image. Deterministic in `spec` (including its seed).
pub fn synth_large_image(spec: &SynthSpec) -> Result<Synthesized> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width, spec.height);
    let unit = spec.unit();

    // tint and stain strength come from one distribution for every category
    let exposure = rng.gen_range(0.9f32..1.04);
    let tint: [f32; 3] = std::array::from_fn(|_| exposure * (1.0 + rng.gen_range(-0.04f32..0.04)));
    let stain = rng.gen_range(0.85f32..1.1);

    let band = spec.category.has_band().then(|| {
        let thickness = rng.gen_range(spec.thickness.0..=spec.thickness.1);
        let corrugated = matches!(spec.category, Category::K | Category::NThick);
        BandGeometry {
            center: (
                w as f64 / 2.0 + rng.gen_range(-0.06..0.06) * w as f64,
                h as f64 / 2.0 + rng.gen_range(-0.06..0.06) * h as f64,
            ),
            up_angle: rng.gen_range(0.0..360.0),
            thickness,
            thickness_swing: 0.08,
            thickness_wavelength: rng.gen_range(0.8..1.6) * spec.wave_wavelength,
            thickness_phase: rng.gen_range(0.0..std::f64::consts::TAU),
            wave_amplitude: rng.gen_range(0.4..1.0) * spec.wave_amplitude,
            wave_wavelength: rng.gen_range(0.75..1.5) * spec.wave_wavelength,
            wave_phase: rng.gen_range(0.0..std::f64::consts::TAU),
            corrugation_amplitude: if corrugated { rng.gen_range(2.0..4.0) * unit } else { 0.0 },
            corrugation_wavelength: rng.gen_range(18.0..30.0) * unit,
        }
    });

    let fiber_angle: f64 = band
        .as_ref()
        .map(|b| b.up_angle + rng.gen_range(-25.0..25.0))
        .unwrap_or_else(|| rng.gen_range(0.0..180.0));
    let fiber_period = rng.gen_range(9.0..14.0) * unit;
    let warp = ValueNoise::new(&mut rng, w, h, 40.0 * unit);
    let density = ValueNoise::new(&mut rng, w, h, 24.0 * unit);
    let grain = ValueNoise::new(&mut rng, w, h, 3.0 * unit.max(0.5));
    let (fc, fs) = crate::image::trig_degrees(fiber_angle);
    // across-fiber direction on screen
    let (px, py) = (fs, fc);

    let mut buf = vec![0.0f32; w * h * 3];
    let mut mask = GrayMask::zeros(w, h);
    let surface_depth = 7.0 * unit;
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let g = grain.at(xf, yf) - 0.5;
            let mut region = Region::Stroma;
            if let Some(b) = &band {
                let (s, v) = b.to_local(xf, yf);
                let surf = b.surface(s);
                if v < surf {
                    region = Region::Cavity;
                } else if v < b.bottom(s) {
                    mask.set(x, y, true);
                    region = if b.corrugation_amplitude > 0.0 && v < b.top(s) + surface_depth {
                        Region::Surface
                    } else {
                        Region::Epithelium
                    };
                }
            }
            let rgb: [f32; 3] = match region {
                Region::Cavity => std::array::from_fn(|c| CAVITY[c] + 0.02 * g),
                Region::Surface => std::array::from_fn(|c| tint[c] * (SURFACE[c] + 0.06 * g)),
                Region::Epithelium => {
                    std::array::from_fn(|c| tint[c] * (EPITHELIUM[c] + 0.05 * g))
                }
                Region::Stroma => {
                    let q = (xf * px + yf * py) / fiber_period
                        + 3.0 * (warp.at(xf, yf) as f64 - 0.5);
                    let wave = 0.5 + 0.5 * (std::f64::consts::TAU * q).sin() as f32;
                    let fiber = smoothstep(0.45, 0.95, wave) * (0.35 + 0.65 * density.at(xf, yf));
                    std::array::from_fn(|c| {
                        tint[c] * (STROMA[c] - fiber * FIBER[c] * stain + 0.04 * g)
                    })
                }
            };
            let i = (y * w + x) * 3;
            buf[i..i + 3].copy_from_slice(&rgb);
        }
    }

    let mut log = PlacementLog {
        band: band.clone(),
        nuclei: Vec::new(),
    };
    let darken: [f32; 3] = std::array::from_fn(|c| NUCLEUS[c] * stain * tint[c]);
    let semi = (spec.nucleus_axes.0 / 2.0, spec.nucleus_axes.1 / 2.0);

    if let Some(b) = &band {
        place_band_nuclei(spec, b, semi, &mut rng, &mut log, &mask);
    }
    place_stroma_nuclei(spec, band.as_ref(), fiber_angle, unit, &mut rng, &mut log);

    for n in &log.nuclei {
        let strength = match n.role {
            NucleusRole::Inflammatory => 1.25,
            NucleusRole::Spindle => 1.05,
            _ => 1.0,
        };
        let d: [f32; 3] = std::array::from_fn(|c| darken[c] * strength);
        darken_ellipse(&mut buf, w, h, (n.x, n.y), (n.semi_major, n.semi_minor), n.angle, d);
    }

    for v in &mut buf {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(Synthesized {
        image: Image::from_vec(w, h, buf)?,
        mask,
        log,
    })
}

#[derive(Clone, Copy)]
enum Region {
    Cavity,
    Surface,
    Epithelium,
    Stroma,
}

fn smoothstep(e0: f32, e1: f32, x: f32) -> f32 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn in_canvas(spec: &SynthSpec, x: f64, y: f64, margin: f64) -> bool {
    x >= -margin
        && y >= -margin
        && x <= spec.width as f64 - 1.0 + margin
        && y <= spec.height as f64 - 1.0 + margin
}

fn place_band_nuclei(
    spec: &SynthSpec,
    b: &BandGeometry,
    semi: (f64, f64),
    rng: &mut ChaCha8Rng,
    log: &mut PlacementLog,
    mask: &GrayMask,
) {
    let (lo, hi) = b.s_range(spec.width, spec.height);
    if lo > hi {
        return;
    }
    let unit = spec.unit();
    let margin = 2.0 * semi.0;
    let (lo, hi) = (lo - 200.0 * unit, hi + 200.0 * unit);

    if spec.category != Category::N {
        // basal row along the stroma-side boundary
        let spacing = 2.0 * semi.1 + 2.6 * unit;
        let mut s = lo + rng.gen_range(0.0..spacing);
        while s < hi {
            let (a, bm) = (semi.0 * rng.gen_range(0.9..1.1), semi.1 * rng.gen_range(0.9..1.1));
            let slope = BandGeometry::slope(|u| b.bottom(u), s);
            let (s_pos, depth, angle) = if spec.palisade {
                // long axis along the boundary normal (−slope, 1)
                let angle = b.direction_angle(-slope, 1.0) + rng.gen_range(-6.0..6.0);
                (s, b.bottom(s) - a - 1.5 * unit, angle)
            } else {
                let jitter_s = s + rng.gen_range(-0.35..0.35) * spacing;
                let depth = b.bottom(jitter_s) - rng.gen_range(1.0..2.4) * a - 1.0 * unit;
                (jitter_s, depth, rng.gen_range(0.0..180.0))
            };
            let (x, y) = b.to_image(s_pos, depth);
            if in_canvas(spec, x, y, margin) {
                log.nuclei.push(NucleusRecord {
                    role: NucleusRole::Basal,
                    x,
                    y,
                    semi_major: a,
                    semi_minor: bm,
                    angle: normalize_axis(angle),
                    s: Some(s_pos),
                });
            }
            s += spacing;
        }
    }

    // suprabasal (or, for thin N bands, all) nuclei at random positions
    let round = (semi.0 * 0.72, semi.1 * 1.05);
    let basal_zone = if spec.category == Category::N { 0.0 } else { 2.0 * semi.0 + 2.0 * unit };
    let top_pad = if b.corrugation_amplitude > 0.0 { 8.0 * unit } else { 1.5 * unit };
    let area_per = if spec.category == Category::N { 110.0 } else { 210.0 } * unit * unit;
    let mut s = lo;
    let step = 8.0 * unit;
    while s < hi {
        let top = b.top(s) + top_pad + round.0;
        let bottom = b.bottom(s) - basal_zone - round.0;
        if bottom > top {
            let expected = step * (bottom - top) / area_per;
            let count = expected.floor() as usize + usize::from(rng.gen::<f64>() < expected.fract());
            for _ in 0..count {
                let sp = s + rng.gen_range(0.0..step);
                let t = b.top(sp) + top_pad + round.0;
                let bt = b.bottom(sp) - basal_zone - round.0;
                if bt <= t {
                    continue;
                }
                let v = rng.gen_range(t..bt);
                let (x, y) = b.to_image(sp, v);
                let k = rng.gen_range(0.85..1.15);
                if in_canvas(spec, x, y, margin)
                    && mask.get(
                        (x.round().max(0.0) as usize).min(spec.width - 1),
                        (y.round().max(0.0) as usize).min(spec.height - 1),
                    )
                {
                    log.nuclei.push(NucleusRecord {
                        role: NucleusRole::Suprabasal,
                        x,
                        y,
                        semi_major: round.0 * k,
                        semi_minor: round.1 * k,
                        angle: rng.gen_range(0.0..180.0),
                        s: Some(sp),
                    });
                }
            }
        }
        s += step;
    }
}

fn place_stroma_nuclei(
    spec: &SynthSpec,
    band: Option<&BandGeometry>,
    fiber_angle: f64,
    unit: f64,
    rng: &mut ChaCha8Rng,
    log: &mut PlacementLog,
) {
    let in_stroma = |x: f64, y: f64| match band {
        Some(b) => {
            let (s, v) = b.to_local(x, y);
            v > b.bottom(s) + 4.0 * unit
        }
        None => true,
    };
    let (w, h) = (spec.width as f64, spec.height as f64);
    let spindles = (w * h / (1400.0 * unit * unit)).round() as usize;
    for _ in 0..spindles {
        let x = rng.gen_range(0.0..w);
        let y = rng.gen_range(0.0..h);
        let a = rng.gen_range(10.0..15.0) * unit;
        let bm = rng.gen_range(2.6..3.6) * unit;
        let angle = fiber_angle + rng.gen_range(-20.0..20.0);
        if in_stroma(x, y) {
            log.nuclei.push(NucleusRecord {
                role: NucleusRole::Spindle,
                x,
                y,
                semi_major: a,
                semi_minor: bm,
                angle: normalize_axis(angle),
                s: None,
            });
        }
    }
    if spec.category == Category::SInflamed {
        let clusters = rng.gen_range(6..=12);
        for _ in 0..clusters {
            let cx = rng.gen_range(0.0..w);
            let cy = rng.gen_range(0.0..h);
            let sigma = rng.gen_range(24.0..50.0) * unit;
            let cells = rng.gen_range(40..=120);
            for _ in 0..cells {
                let r: f64 = rng.gen_range(0.0f64..1.0).sqrt() * 2.0 * sigma;
                let t = rng.gen_range(0.0..std::f64::consts::TAU);
                let (x, y) = (cx + r * t.cos(), cy + r * t.sin());
                let rad = rng.gen_range(3.6..4.8) * unit;
                if in_canvas(spec, x, y, rad) {
                    log.nuclei.push(NucleusRecord {
                        role: NucleusRole::Inflammatory,
                        x,
                        y,
                        semi_major: rad,
                        semi_minor: rad * rng.gen_range(0.85..1.0),
                        angle: rng.gen_range(0.0..180.0),
                        s: None,
                    });
                }
            }
        }
    }
}

/// Folds an axis direction into `[0, 180)`.
fn normalize_axis(a: f64) -> f64 {
    a.rem_euclid(180.0)
}

#[cfg(test)]
mod tests;
