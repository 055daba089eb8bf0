use rand::Rng;

/// Lattice value noise with smoothstep interpolation, values in `[0, 1]`.
pub(crate) struct ValueNoise {
    grid: Vec<f32>,
    cols: usize,
    rows: usize,
    cell: f64,
}

impl ValueNoise {
    pub fn new<R: Rng>(rng: &mut R, width: usize, height: usize, cell: f64) -> Self {
        let cols = (width as f64 / cell).ceil() as usize + 2;
        let rows = (height as f64 / cell).ceil() as usize + 2;
        let grid = (0..cols * rows).map(|_| rng.gen::<f32>()).collect();
        ValueNoise {
            grid,
            cols,
            rows,
            cell,
        }
    }

    #[inline]
    pub fn at(&self, x: f64, y: f64) -> f32 {
        let gx = (x / self.cell).clamp(0.0, (self.cols - 2) as f64);
        let gy = (y / self.cell).clamp(0.0, (self.rows - 2) as f64);
        let ix = (gx as usize).min(self.cols - 2);
        let iy = (gy as usize).min(self.rows - 2);
        let smooth = |t: f64| (t * t * (3.0 - 2.0 * t)) as f32;
        let tx = smooth(gx - ix as f64);
        let ty = smooth(gy - iy as f64);
        let g = |c: usize, r: usize| self.grid[r * self.cols + c];
        let top = g(ix, iy) + (g(ix + 1, iy) - g(ix, iy)) * tx;
        let bottom = g(ix, iy + 1) + (g(ix + 1, iy + 1) - g(ix, iy + 1)) * tx;
        top + (bottom - top) * ty
    }
}

/// Anti-aliased filled ellipse with additive darkening: each covered pixel
/// loses `coverage · darken` per channel. `angle` is the long-axis direction
/// in degrees, counter-clockwise on screen from +x.
pub(crate) fn darken_ellipse(
    buf: &mut [f32],
    width: usize,
    height: usize,
    center: (f64, f64),
    semi: (f64, f64),
    angle: f64,
    darken: [f32; 3],
) {
    let (a, b) = semi;
    let rad = angle.to_radians();
    // long axis (cos, -sin) on screen
    let (ux, uy) = (rad.cos(), -rad.sin());
    let reach = a + 1.0;
    let x0 = (center.0 - reach).floor().max(0.0) as isize;
    let y0 = (center.1 - reach).floor().max(0.0) as isize;
    let x1 = ((center.0 + reach).ceil() as isize).min(width as isize - 1);
    let y1 = ((center.1 + reach).ceil() as isize).min(height as isize - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = x as f64 - center.0;
            let dy = y as f64 - center.1;
            let along = dx * ux + dy * uy;
            let across = -dx * uy + dy * ux;
            let q = ((along / a).powi(2) + (across / b).powi(2)).sqrt();
            // signed distance in pixels, approximated along the minor axis
            let dist = (q - 1.0) * b;
            let cov = (0.5 - dist).clamp(0.0, 1.0) as f32;
            if cov > 0.0 {
                let i = (y as usize * width + x as usize) * 3;
                for c in 0..3 {
                    buf[i + c] -= cov * darken[c];
                }
            }
        }
    }
}
