use crate::image::trig_degrees;

/// Geometry of an epithelial band. Local coordinates: `s` runs along the
/// band (tangent `(cos φ, −sin φ)`), `v` runs across it toward the stroma
/// (`(sin φ, cos φ)`), where `φ` is the up angle. The cavity lies at
/// `v < top(s)`, the stroma at `v ≥ bottom(s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BandGeometry {
    pub center: (f64, f64),
    pub up_angle: f64,
    pub thickness: f64,
    /// Relative slow variation of thickness along the band.
    pub thickness_swing: f64,
    pub thickness_wavelength: f64,
    pub thickness_phase: f64,
    pub wave_amplitude: f64,
    pub wave_wavelength: f64,
    pub wave_phase: f64,
    /// Surface corrugation on the cavity side; zero for a smooth surface.
    pub corrugation_amplitude: f64,
    pub corrugation_wavelength: f64,
}

/// A method-1 crop location on the band midline.
#[derive(Clone, Debug, PartialEq)]
pub struct Anchor {
    pub x: f64,
    pub y: f64,
    pub up_angle: f64,
    pub thickness: f64,
}

impl BandGeometry {
    fn axes(&self) -> ((f64, f64), (f64, f64)) {
        let (c, s) = trig_degrees(self.up_angle);
        ((c, -s), (s, c))
    }

    fn wave(&self, s: f64) -> f64 {
        self.wave_amplitude
            * (std::f64::consts::TAU * s / self.wave_wavelength + self.wave_phase).sin()
    }

    pub fn thickness_at(&self, s: f64) -> f64 {
        self.thickness
            * (1.0
                + self.thickness_swing
                    * (std::f64::consts::TAU * s / self.thickness_wavelength
                        + self.thickness_phase)
                        .sin())
    }

    /// Smooth cavity-side boundary, before corrugation.
    pub fn top(&self, s: f64) -> f64 {
        self.wave(s) - self.thickness_at(s) / 2.0
    }

    /// Cavity-side boundary including corrugation.
    pub fn surface(&self, s: f64) -> f64 {
        if self.corrugation_amplitude == 0.0 {
            return self.top(s);
        }
        self.top(s)
            + self.corrugation_amplitude
                * (std::f64::consts::TAU * s / self.corrugation_wavelength).sin()
    }

    pub fn bottom(&self, s: f64) -> f64 {
        self.wave(s) + self.thickness_at(s) / 2.0
    }

    pub fn midline(&self, s: f64) -> f64 {
        self.wave(s)
    }

    pub fn to_local(&self, x: f64, y: f64) -> (f64, f64) {
        let (t, n) = self.axes();
        let dx = x - self.center.0;
        let dy = y - self.center.1;
        (dx * t.0 + dy * t.1, dx * n.0 + dy * n.1)
    }

    pub fn to_image(&self, s: f64, v: f64) -> (f64, f64) {
        let (t, n) = self.axes();
        (
            self.center.0 + s * t.0 + v * n.0,
            self.center.1 + s * t.1 + v * n.1,
        )
    }

    /// Image-space direction angle (degrees, counter-clockwise on screen
    /// from +x) of a local direction `(ds, dv)`.
    pub fn direction_angle(&self, ds: f64, dv: f64) -> f64 {
        let (t, n) = self.axes();
        let dx = ds * t.0 + dv * n.0;
        let dy = ds * t.1 + dv * n.1;
        (-dy).atan2(dx).to_degrees()
    }

    /// Slope `dv/ds` of a boundary function, by central differences.
    pub fn slope(f: impl Fn(f64) -> f64, s: f64) -> f64 {
        let h = 0.25;
        (f(s + h) - f(s - h)) / (2.0 * h)
    }

    /// Range of `s` whose midline point lies inside a `width`×`height` canvas.
    pub fn s_range(&self, width: usize, height: usize) -> (f64, f64) {
        let reach = ((width * width + height * height) as f64).sqrt();
        let inside = |s: f64| {
            let (x, y) = self.to_image(s, self.midline(s));
            x >= 0.0 && y >= 0.0 && x <= width as f64 - 1.0 && y <= height as f64 - 1.0
        };
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut s = -reach;
        while s <= reach {
            if inside(s) {
                lo = lo.min(s);
                hi = hi.max(s);
            }
            s += 1.0;
        }
        (lo, hi)
    }

    /// Midline anchors spaced at least `side` apart along the band. Each
    /// anchor's up angle is the local normal of the smooth cavity boundary.
    /// An anchor is kept only when the square it will be cropped with
    /// (`side`, or `rescue` for bands thicker than `side − side/8`) fits
    /// inside the canvas after rotation.
    pub fn anchors(&self, width: usize, height: usize, side: usize, rescue: usize) -> Vec<Anchor> {
        let (lo, hi) = self.s_range(width, height);
        let mut out = Vec::new();
        if lo > hi {
            return out;
        }
        let mut last = f64::NEG_INFINITY;
        let mut s = lo.ceil();
        while s <= hi {
            if s - last >= side as f64 {
                let thickness = self.thickness_at(s);
                let crop = if thickness > thick_limit(side) { rescue } else { side };
                let slope = Self::slope(|u| self.top(u), s);
                // normal toward the cavity in local coords: (slope, −1)
                let up_dir = self.direction_angle(slope, -1.0);
                let up_angle = normalize_degrees(up_dir - 90.0);
                let (x, y) = self.to_image(s, self.midline(s));
                if square_fits(width, height, x, y, up_angle, crop) {
                    out.push(Anchor {
                        x,
                        y,
                        up_angle,
                        thickness,
                    });
                    last = s;
                }
            }
            s += 2.0;
        }
        out
    }
}

/// Bands thicker than this need the larger rescue crop.
pub fn thick_limit(side: usize) -> f64 {
    side as f64 - 2.0 * (side as f64 / 16.0)
}

pub(crate) fn normalize_degrees(a: f64) -> f64 {
    let r = a.rem_euclid(360.0);
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Whether a `side`×`side` square centered at `(x, y)` and rotated to put
/// `up_angle` upward stays inside the canvas.
pub fn square_fits(width: usize, height: usize, x: f64, y: f64, up_angle: f64, side: usize) -> bool {
    let (c, s) = trig_degrees(-up_angle);
    let h = (side as f64 - 1.0) / 2.0;
    [(-h, -h), (h, -h), (-h, h), (h, h)].iter().all(|&(ox, oy)| {
        let sx = x + ox * c - oy * s;
        let sy = y + ox * s + oy * c;
        sx >= 0.0 && sy >= 0.0 && sx <= width as f64 - 1.0 && sy <= height as f64 - 1.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(up: f64) -> BandGeometry {
        BandGeometry {
            center: (300.0, 240.0),
            up_angle: up,
            thickness: 80.0,
            thickness_swing: 0.0,
            thickness_wavelength: 100.0,
            thickness_phase: 0.0,
            wave_amplitude: 0.0,
            wave_wavelength: 100.0,
            wave_phase: 0.0,
            corrugation_amplitude: 0.0,
            corrugation_wavelength: 10.0,
        }
    }

    #[test]
    fn local_coordinates_round_trip() {
        let b = flat(37.0);
        let (s, v) = b.to_local(123.0, 45.0);
        let (x, y) = b.to_image(s, v);
        assert!((x - 123.0).abs() < 1e-9 && (y - 45.0).abs() < 1e-9);
    }

    #[test]
    fn up_angle_zero_puts_cavity_above() {
        let b = flat(0.0);
        let (_, v) = b.to_local(300.0, 100.0);
        assert!(v < b.top(0.0));
        let (_, v) = b.to_local(300.0, 400.0);
        assert!(v > b.bottom(0.0));
    }

    #[test]
    fn flat_band_anchors_point_along_up_angle() {
        for up in [0.0, 90.0, 200.0] {
            let b = flat(up);
            let anchors = b.anchors(612, 480, 128, 160);
            assert!(!anchors.is_empty(), "up {up}");
            for a in &anchors {
                let d = (a.up_angle - up).rem_euclid(360.0);
                assert!(d < 1e-6 || d > 360.0 - 1e-6, "{} vs {up}", a.up_angle);
                assert!(square_fits(612, 480, a.x, a.y, a.up_angle, 128));
            }
            for w in anchors.windows(2) {
                let d = ((w[0].x - w[1].x).powi(2) + (w[0].y - w[1].y).powi(2)).sqrt();
                assert!(d >= 128.0 - 1e-6);
            }
        }
    }
}
