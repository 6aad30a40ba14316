//! Arc-length unwarping: image coordinates are replaced by surface arc
//! length measured from the zero point, along rows for `u` and along
//! columns for `v`, and the image is resampled onto the new coordinates.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{ensure_same_dims, Dims, GradientMap, GrayImage, Grid, Mask};

/// Border added around the mapped foreground.
pub const CANVAS_PADDING_PX: i64 = 8;
const INVERSE_ITERATIONS: usize = 20;

/// Signed arc-length offsets from the zero point for every pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcCoords {
    pub u: Grid<f32>,
    pub v: Grid<f32>,
    pub zero: (usize, usize),
}

impl Dims for ArcCoords {
    fn width(&self) -> usize {
        self.u.width()
    }
    fn height(&self) -> usize {
        self.u.height()
    }
}

/// Trapezoidal arc length along rows and columns. Inside the mask the
/// integrand is √(1 + g²) of the running point; outside it is 1, so the
/// coordinates stay strictly monotone across the whole raster.
pub fn arc_length_coords(grad: &GradientMap, mask: &Mask, zero: (usize, usize)) -> Result<ArcCoords> {
    ensure_same_dims(grad, mask, "gradient/mask")?;
    if !mask.contains(zero.0 as isize, zero.1 as isize) {
        return Err(Error::Precondition(format!(
            "zero point ({}, {}) is outside the mask",
            zero.0, zero.1
        )));
    }
    let (w, h) = (grad.width(), grad.height());
    let stretch = |x: usize, y: usize, horizontal: bool| -> Result<f64> {
        if !mask.get(x, y) {
            return Ok(1.0);
        }
        let (gx, gy) = grad.get(x, y);
        let g = if horizontal { gx } else { gy } as f64;
        if !g.is_finite() {
            return Err(Error::Unwarp(format!("non-finite gradient at ({x}, {y})")));
        }
        Ok((1.0 + g * g).sqrt())
    };

    let mut u = Grid::filled(w, h, 0.0f32);
    for y in 0..h {
        let mut acc = 0.0;
        for x in zero.0 + 1..w {
            acc += 0.5 * (stretch(x - 1, y, true)? + stretch(x, y, true)?);
            u.set(x, y, acc as f32);
        }
        acc = 0.0;
        for x in (0..zero.0).rev() {
            acc -= 0.5 * (stretch(x + 1, y, true)? + stretch(x, y, true)?);
            u.set(x, y, acc as f32);
        }
    }
    let mut v = Grid::filled(w, h, 0.0f32);
    for x in 0..w {
        let mut acc = 0.0;
        for y in zero.1 + 1..h {
            acc += 0.5 * (stretch(x, y - 1, false)? + stretch(x, y, false)?);
            v.set(x, y, acc as f32);
        }
        acc = 0.0;
        for y in (0..zero.1).rev() {
            acc -= 0.5 * (stretch(x, y + 1, false)? + stretch(x, y, false)?);
            v.set(x, y, acc as f32);
        }
    }
    Ok(ArcCoords { u, v, zero })
}

/// Solves `f(p) = target` for a piecewise-linear, increasing `f` given at
/// integer nodes, continuing with unit slope beyond the ends.
fn invert_monotone(n: usize, f: impl Fn(usize) -> f64, target: f64) -> f64 {
    let (first, last) = (f(0), f(n - 1));
    if target <= first {
        return target - first;
    }
    if target >= last {
        return (n - 1) as f64 + (target - last);
    }
    let (mut lo, mut hi) = (0usize, n - 1);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if f(mid) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (a, b) = (f(lo), f(hi));
    lo as f64 + (target - a) / (b - a)
}

fn lerp_index(p: f64, n: usize) -> (usize, usize, f64) {
    let p = p.clamp(0.0, (n - 1) as f64);
    let i = (p.floor() as usize).min(n.saturating_sub(2));
    if n == 1 {
        return (0, 0, 0.0);
    }
    (i, i + 1, p - i as f64)
}

impl ArcCoords {
    fn check_monotone(&self) -> Result<()> {
        let (w, h) = (self.width(), self.height());
        for y in 0..h {
            for x in 1..w {
                let (a, b) = (self.u.get(x - 1, y), self.u.get(x, y));
                if !(b > a) {
                    return Err(Error::Unwarp(format!("u is not increasing at ({x}, {y})")));
                }
            }
        }
        for x in 0..w {
            for y in 1..h {
                let (a, b) = (self.v.get(x, y - 1), self.v.get(x, y));
                if !(b > a) {
                    return Err(Error::Unwarp(format!("v is not increasing at ({x}, {y})")));
                }
            }
        }
        Ok(())
    }

    /// Source position whose arc-length offsets are `(du, dv)`, found by
    /// alternating monotone searches along the row and the column.
    pub fn inverse(&self, du: f64, dv: f64) -> (f64, f64) {
        let (w, h) = (self.width(), self.height());
        let (mut x, mut y) = (self.zero.0 as f64 + du, self.zero.1 as f64 + dv);
        for _ in 0..INVERSE_ITERATIONS {
            let (y0, y1, fy) = lerp_index(y, h);
            let nx = invert_monotone(
                w,
                |i| {
                    let (a, b) = (self.u.get(i, y0) as f64, self.u.get(i, y1) as f64);
                    a + fy * (b - a)
                },
                du,
            );
            let (x0, x1, fx) = lerp_index(nx, w);
            let ny = invert_monotone(
                h,
                |j| {
                    let (a, b) = (self.v.get(x0, j) as f64, self.v.get(x1, j) as f64);
                    a + fx * (b - a)
                },
                dv,
            );
            let converged = (nx - x).abs() < 1e-9 && (ny - y).abs() < 1e-9;
            x = nx;
            y = ny;
            if converged {
                break;
            }
        }
        (x, y)
    }
}

#[derive(Debug, Clone)]
pub struct Unwarped {
    pub image: GrayImage,
    pub mask: Mask,
    /// Zero point in output pixel coordinates.
    pub zero_point: (f64, f64),
    /// Mapped coordinate `(cx + u, cy + v)` of output pixel (0, 0).
    pub canvas_offset: (i64, i64),
}

/// Resamples the image onto arc-length coordinates. The canvas covers the
/// mapped foreground plus a fixed border; each output pixel is pulled
/// from the input through the inverse map with bilinear interpolation.
pub fn unwarp_image(image: &GrayImage, mask: &Mask, coords: &ArcCoords) -> Result<Unwarped> {
    ensure_same_dims(image, mask, "image/mask")?;
    ensure_same_dims(image, coords, "image/coordinates")?;
    if mask.count() == 0 {
        return Err(Error::NoForeground("nothing to unwarp".into()));
    }
    let values_finite = coords.u.as_slice().iter().chain(coords.v.as_slice()).all(|v| v.is_finite());
    if !values_finite {
        return Err(Error::Unwarp("non-finite arc-length coordinates".into()));
    }
    coords.check_monotone()?;

    let (cx, cy) = (coords.zero.0 as f64, coords.zero.1 as f64);
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (x, y) in mask.iter_set() {
        let (mx, my) = (cx + coords.u.get(x, y) as f64, cy + coords.v.get(x, y) as f64);
        x0 = x0.min(mx);
        y0 = y0.min(my);
        x1 = x1.max(mx);
        y1 = y1.max(my);
    }
    let ox = x0.floor() as i64 - CANVAS_PADDING_PX;
    let oy = y0.floor() as i64 - CANVAS_PADDING_PX;
    let nw = (x1.ceil() as i64 + CANVAS_PADDING_PX - ox + 1) as usize;
    let nh = (y1.ceil() as i64 + CANVAS_PADDING_PX - oy + 1) as usize;
    let (w, h) = (image.width() as f64, image.height() as f64);

    let rows: Vec<Vec<(f32, bool)>> = (0..nh)
        .into_par_iter()
        .map(|oy_px| {
            (0..nw)
                .map(|ox_px| {
                    let du = (ox_px as i64 + ox) as f64 - cx;
                    let dv = (oy_px as i64 + oy) as f64 - cy;
                    let (sx, sy) = coords.inverse(du, dv);
                    if sx < 0.0 || sy < 0.0 || sx > w - 1.0 || sy > h - 1.0 {
                        return (0.0, false);
                    }
                    if !mask.contains(sx.round() as isize, sy.round() as isize) {
                        return (0.0, false);
                    }
                    let v = image.sample_bilinear(sx, sy).unwrap_or(0.0);
                    (v.clamp(0.0, 1.0) as f32, true)
                })
                .collect()
        })
        .collect();
    let flat: Vec<(f32, bool)> = rows.concat();
    let pixels = Grid::from_vec(nw, nh, flat.iter().map(|p| p.0).collect())?;
    let out_mask = Mask::from_grid(Grid::from_vec(nw, nh, flat.iter().map(|p| p.1).collect())?);
    Ok(Unwarped {
        image: GrayImage::new(pixels, image.pitch_mm())?,
        mask: out_mask,
        zero_point: (cx - ox as f64, cy - oy as f64),
        canvas_offset: (ox, oy),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate, PhantomSpec};
    use crate::texture::{estimate_orientation_field, estimate_period_map};
    use proptest::prelude::*;

    fn hemi_coords() -> (crate::phantom::Phantom, ArcCoords) {
        let ph = generate(&PhantomSpec::hemisphere(64.0, 10.0, 160)).unwrap();
        let c = arc_length_coords(&ph.gradient, &ph.mask, (80, 80)).unwrap();
        (ph, c)
    }

    #[test]
    fn zero_gradient_gives_identity_offsets() {
        let m = Mask::full(20, 15);
        let c = arc_length_coords(&GradientMap::zeros(20, 15), &m, (7, 4)).unwrap();
        for (x, y) in m.iter_set() {
            assert_eq!(c.u.get(x, y), x as f32 - 7.0);
            assert_eq!(c.v.get(x, y), y as f32 - 4.0);
        }
    }

    #[test]
    fn constant_slope_row() {
        let g = GradientMap::new(Grid::filled(30, 5, 0.75), Grid::filled(30, 5, 0.0)).unwrap();
        let c = arc_length_coords(&g, &Mask::full(30, 5), (10, 2)).unwrap();
        let k = (1.0f64 + 0.75 * 0.75).sqrt();
        for x in 0..30 {
            assert!((c.u.get(x, 2) as f64 - k * (x as f64 - 10.0)).abs() < 1e-4);
        }
    }

    #[test]
    fn hemisphere_arc_length() {
        let (_, c) = hemi_coords();
        let expected = 64.0 * 0.5f64.asin();
        assert!((expected - 33.510).abs() < 1e-3);
        assert!((c.u.get(112, 80) as f64 - expected).abs() <= 0.05);
        assert!((c.u.get(48, 80) as f64 + expected).abs() <= 0.05);
        assert!((c.v.get(80, 112) as f64 - expected).abs() <= 0.05);
    }

    #[test]
    fn axis_distances_match_arc_length() {
        let (_, c) = hemi_coords();
        for (a, b) in [(60usize, 100usize), (40, 70), (85, 125)] {
            let planar = (c.u.get(b, 80) - c.u.get(a, 80)) as f64;
            let arc = 64.0 * (((b as f64 - 80.0) / 64.0).asin() - ((a as f64 - 80.0) / 64.0).asin());
            assert!((planar - arc).abs() <= 0.005 * arc, "{a}-{b}: {planar} vs {arc}");
        }
    }

    #[test]
    fn coordinate_invariants() {
        let (ph, c) = hemi_coords();
        for y in 0..160 {
            assert_eq!(c.u.get(80, y), 0.0);
            for x in 1..160 {
                assert!(c.u.get(x, y) > c.u.get(x - 1, y));
                assert!(c.u.get(x, y).abs() >= (x as f32 - 80.0).abs() - 1e-4);
            }
        }
        for x in 0..160 {
            assert_eq!(c.v.get(x, 80), 0.0);
        }
        assert!(matches!(
            arc_length_coords(&ph.gradient, &ph.mask, (0, 0)),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut g = GradientMap::zeros(10, 10);
        g.set(3, 3, (f32::NAN, 0.0));
        assert!(matches!(
            arc_length_coords(&g, &Mask::full(10, 10), (5, 5)),
            Err(Error::Unwarp(_))
        ));
    }

    #[test]
    fn identity_unwarp() {
        let img = GrayImage::from_fn(24, 18, 0.05, |x, y| ((x * 7 + y * 3) % 11) as f32 / 10.0).unwrap();
        let m = Mask::full(24, 18);
        let c = arc_length_coords(&GradientMap::zeros(24, 18), &m, (12, 9)).unwrap();
        let out = unwarp_image(&img, &m, &c).unwrap();
        assert_eq!(out.canvas_offset, (-8, -8));
        assert_eq!(out.zero_point, (20.0, 17.0));
        assert_eq!(out.mask.count(), m.count());
        for y in 0..18 {
            for x in 0..24 {
                assert_eq!(out.image.get(x + 8, y + 8), img.get(x, y));
            }
        }
    }

    #[test]
    fn unwarped_area_grows() {
        let (ph, c) = hemi_coords();
        let out = unwarp_image(&ph.image, &ph.mask, &c).unwrap();
        assert!(out.mask.count() >= ph.mask.count());
    }

    #[test]
    fn unwarp_restores_ridge_period() {
        let (ph, c) = hemi_coords();
        let out = unwarp_image(&ph.image, &ph.mask, &c).unwrap();
        let (theta, _) = estimate_orientation_field(&out.image, &out.mask, 16).unwrap();
        let p = estimate_period_map(&out.image, &out.mask, &theta, 32).unwrap();
        let (zx, zy) = (out.zero_point.0.round() as i64, out.zero_point.1.round() as i64);
        // Slant up to 60 degrees corresponds to arc radius R·π/3 ≈ 67 px.
        for s in [15i64, 30, 45, 60] {
            for (dx, dy) in [(s, 0), (-s, 0), (0, s), (0, -s)] {
                let v = p.get((zx + dx) as usize, (zy + dy) as usize) as f64;
                assert!((v - 10.0).abs() <= 0.5, "offset ({dx},{dy}) period {v}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn inverse_undoes_forward(gx in -2.0f32..2.0, gy in -2.0f32..2.0, x in 0usize..30, y in 0usize..20) {
            let g = GradientMap::new(
                Grid::from_fn(30, 20, |i, j| gx * ((i + j) as f32 * 0.2).sin()),
                Grid::from_fn(30, 20, |i, j| gy * ((i as f32 - j as f32) * 0.15).cos()),
            )
            .unwrap();
            let c = arc_length_coords(&g, &Mask::full(30, 20), (15, 10)).unwrap();
            let (sx, sy) = c.inverse(c.u.get(x, y) as f64, c.v.get(x, y) as f64);
            prop_assert!((sx - x as f64).abs() < 1e-3 && (sy - y as f64).abs() < 1e-3, "({sx},{sy}) vs ({x},{y})");
        }
    }
}
