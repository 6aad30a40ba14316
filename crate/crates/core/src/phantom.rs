//! Analytic synthetic fingers with exact ground truth.
//!
//! A phantom is a hemisphere or an ellipsoid cap seen orthographically
//! from above, carrying cosine ridges that are equally spaced in surface
//! arc length along every radial direction from the apex.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{
    DepthMap, Dims, GradientMap, GrayImage, Grid, Mask, PeriodMap, DEFAULT_PITCH_MM,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Hemisphere,
    Ellipsoid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub shape: Shape,
    /// Semi-axes `(Rx, Ry, Rz)` in pixels; all equal for a hemisphere.
    pub radii: (f64, f64, f64),
    /// Ridge period along the surface, `p0`, in pixels.
    pub ridge_period: f64,
    pub width: usize,
    pub height: usize,
    /// Depth of the shape center relative to the rotation axis used by
    /// [`generate_three_views`].
    pub center_depth: f64,
}

impl PhantomSpec {
    pub fn hemisphere(radius: f64, ridge_period: f64, size: usize) -> Self {
        Self {
            shape: Shape::Hemisphere,
            radii: (radius, radius, radius),
            ridge_period,
            width: size,
            height: size,
            center_depth: 0.0,
        }
    }

    pub fn ellipsoid(radii: (f64, f64, f64), ridge_period: f64, width: usize, height: usize) -> Self {
        Self {
            shape: Shape::Ellipsoid,
            radii,
            ridge_period,
            width,
            height,
            center_depth: 0.0,
        }
    }

    /// Apex position in pixel coordinates.
    pub fn center(&self) -> (f64, f64) {
        ((self.width / 2) as f64, (self.height / 2) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let (rx, ry, rz) = self.radii;
        if !(rx > 0.0 && ry > 0.0 && rz > 0.0) {
            return Err(Error::Precondition(format!("phantom radii {:?}", self.radii)));
        }
        if self.shape == Shape::Hemisphere && !(rx == ry && ry == rz) {
            return Err(Error::Precondition("hemisphere radii must be equal".into()));
        }
        if !(self.ridge_period >= 4.0) {
            return Err(Error::Precondition(format!(
                "ridge period {} < 4 px",
                self.ridge_period
            )));
        }
        let (cx, cy) = self.center();
        let margin = 8.0;
        let reach_x = rx.max(rz) + self.center_depth.abs();
        if cx - reach_x < margin
            || cx + reach_x > (self.width - 1) as f64 - margin
            || cy - ry < margin
            || cy + ry > (self.height - 1) as f64 - margin
        {
            return Err(Error::Precondition(format!(
                "{}x{} grid leaves less than 8 px around the outline",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Everything known exactly about a top-view phantom.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub image: GrayImage,
    pub mask: Mask,
    pub depth: DepthMap,
    pub gradient: GradientMap,
    pub period_truth: PeriodMap,
    pub spec: PhantomSpec,
}

impl Phantom {
    /// Surface slant at a pixel, in degrees.
    pub fn slant_deg(&self, x: usize, y: usize) -> f64 {
        self.gradient.magnitude(x, y).atan().to_degrees()
    }

    /// Foreground pixels whose slant does not exceed `max_slant_deg`.
    pub fn slant_mask(&self, max_slant_deg: f64) -> Mask {
        Mask::from_fn(self.mask.width(), self.mask.height(), |x, y| {
            self.mask.get(x, y) && self.slant_deg(x, y) <= max_slant_deg
        })
    }
}

/// Arc length along the surface from the apex, for a planar offset
/// `(dx, dy)`. The radial section of the cap is an ellipse with semi-axes
/// `A` (in the image plane) and `Rz`; the arc is integrated in the ellipse
/// parameter with composite Simpson, which is exact when `A = Rz`.
pub fn radial_arc_length(radii: (f64, f64, f64), dx: f64, dy: f64) -> f64 {
    let (rx, ry, rz) = radii;
    let rho = dx.hypot(dy);
    if rho == 0.0 {
        return 0.0;
    }
    let (c, s) = (dx / rho, dy / rho);
    let a = 1.0 / ((c * c) / (rx * rx) + (s * s) / (ry * ry)).sqrt();
    let t_end = (rho / a).clamp(-1.0, 1.0).asin();
    let speed = |t: f64| (a * a * t.cos().powi(2) + rz * rz * t.sin().powi(2)).sqrt();
    let n = 64;
    let h = t_end / n as f64;
    let mut sum = speed(0.0) + speed(t_end);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * speed(k as f64 * h);
    }
    sum * h / 3.0
}

/// Renders the top view of `spec`.
pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let (cx, cy) = spec.center();
    let (rx, ry, rz) = spec.radii;
    let p0 = spec.ridge_period;

    let mut mask = Mask::empty(w, h);
    let mut pixels = Grid::filled(w, h, 0.0f32);
    let mut depth = DepthMap::filled(w, h, 0.0);
    let mut gradient = GradientMap::zeros(w, h);
    let mut period = PeriodMap::filled(w, h, 0.0);

    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let q = (dx / rx).powi(2) + (dy / ry).powi(2);
            if q >= 1.0 {
                continue;
            }
            let root = (1.0 - q).sqrt();
            let z = rz * root;
            let gx = -rz * dx / (rx * rx * root);
            let gy = -rz * dy / (ry * ry * root);
            let s = radial_arc_length(spec.radii, dx, dy);
            let intensity = 0.5 + 0.5 * (2.0 * PI * s / p0).cos();
            let cos_slant = 1.0 / (1.0 + gx * gx + gy * gy).sqrt();

            mask.set(x, y, true);
            pixels.set(x, y, intensity as f32);
            depth.set(x, y, z as f32);
            gradient.set(x, y, (gx as f32, gy as f32));
            period.set(x, y, (p0 * cos_slant) as f32);
        }
    }

    Ok(Phantom {
        image: GrayImage::new(pixels, DEFAULT_PITCH_MM)?,
        mask,
        depth,
        gradient,
        period_truth: period,
        spec: spec.clone(),
    })
}

/// One orthographic view of an ellipsoid rotated about the vertical axis.
#[derive(Debug, Clone)]
pub struct SilhouetteView {
    pub angle_deg: f64,
    /// Pixels whose center lies inside the silhouette.
    pub mask: Mask,
    /// Anti-aliased silhouette: fraction of each pixel covered.
    pub silhouette: GrayImage,
    /// Visible depth (toward the camera) at masked pixels.
    pub depth: DepthMap,
}

#[derive(Debug, Clone)]
pub struct ThreeViews {
    pub front: SilhouetteView,
    pub right: SilhouetteView,
    pub left: SilhouetteView,
}

/// Exact cross-section of an ellipsoid phantom at an image row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowSection {
    pub row: usize,
    pub a: f64,
    pub b: f64,
    pub c_z: f64,
}

/// Cross-section ellipse at `row`, or `None` when the row misses the shape.
pub fn row_section(spec: &PhantomSpec, y: f64) -> Option<(f64, f64)> {
    let (_, cy) = spec.center();
    let (rx, ry, rz) = spec.radii;
    let t = 1.0 - ((y - cy) / ry).powi(2);
    (t > 0.0).then(|| (rx * t.sqrt(), rz * t.sqrt()))
}

pub fn row_sections(spec: &PhantomSpec) -> Vec<RowSection> {
    (0..spec.height)
        .filter_map(|row| {
            row_section(spec, row as f64).map(|(a, b)| RowSection {
                row,
                a,
                b,
                c_z: spec.center_depth,
            })
        })
        .collect()
}

/// Projected extent `(center, half_width)` of a cross-section seen from
/// `angle` radians, relative to the rotation axis. A view at angle `α`
/// maps `(x, z)` to `x' = x·cos α + z·sin α`.
fn projected_extent(a: f64, b: f64, c_z: f64, angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (c_z * s, (a * a * c * c + b * b * s * s).sqrt())
}

/// Visible depth `z'` at projected offset `xp` (relative to the projected
/// center) of a centered ellipse rotated by `angle`, or `None` outside.
pub fn rotated_ellipse_depth(a: f64, b: f64, angle: f64, xp: f64) -> Option<f64> {
    let (s, c) = angle.sin_cos();
    let (ia, ib) = (1.0 / (a * a), 1.0 / (b * b));
    let q11 = c * c * ia + s * s * ib;
    let q12 = s * c * (ib - ia);
    let q22 = s * s * ia + c * c * ib;
    let disc = q12 * q12 * xp * xp - q22 * (q11 * xp * xp - 1.0);
    (disc >= 0.0).then(|| (-q12 * xp + disc.sqrt()) / q22)
}

fn render_view(spec: &PhantomSpec, angle_deg: f64) -> Result<SilhouetteView> {
    const SUB_ROWS: usize = 16;
    let (w, h) = (spec.width, spec.height);
    let (axis_x, _) = spec.center();
    let angle = angle_deg.to_radians();
    let c_z = spec.center_depth;

    let chord = |y: f64| -> Option<(f64, f64)> {
        row_section(spec, y).map(|(a, b)| {
            let (center, half) = projected_extent(a, b, c_z, angle);
            (axis_x + center - half, axis_x + center + half)
        })
    };

    let mut coverage = Grid::filled(w, h, 0.0f32);
    let mut mask = Mask::empty(w, h);
    let mut depth = DepthMap::filled(w, h, 0.0);
    for y in 0..h {
        let mut acc = vec![0.0f64; w];
        for k in 0..SUB_ROWS {
            let ys = y as f64 - 0.5 + (k as f64 + 0.5) / SUB_ROWS as f64;
            if let Some((l, r)) = chord(ys) {
                let x_lo = ((l - 0.5).floor().max(0.0)) as usize;
                let x_hi = ((r + 0.5).ceil() as usize).min(w - 1);
                for (x, cell) in acc.iter_mut().enumerate().take(x_hi + 1).skip(x_lo) {
                    let overlap = (r.min(x as f64 + 0.5) - l.max(x as f64 - 0.5)).max(0.0);
                    *cell += overlap / SUB_ROWS as f64;
                }
            }
        }
        for (x, c) in acc.iter().enumerate() {
            coverage.set(x, y, c.clamp(0.0, 1.0) as f32);
        }
        if let Some((a, b)) = row_section(spec, y as f64) {
            let (center, half) = projected_extent(a, b, c_z, angle);
            let depth_center = c_z * angle.cos();
            for x in 0..w {
                let xp = x as f64 - axis_x - center;
                if xp.abs() >= half {
                    continue;
                }
                if let Some(z) = rotated_ellipse_depth(a, b, angle, xp) {
                    mask.set(x, y, true);
                    depth.set(x, y, (z + depth_center) as f32);
                }
            }
        }
    }
    Ok(SilhouetteView {
        angle_deg,
        mask,
        silhouette: GrayImage::new(coverage, DEFAULT_PITCH_MM)?,
        depth,
    })
}

/// Front, right (+45°) and left (−45°) orthographic views of an ellipsoid
/// phantom rotated about the vertical axis through the image center column.
pub fn generate_three_views(spec: &PhantomSpec) -> Result<ThreeViews> {
    generate_views_at(spec, 45.0)
}

pub fn generate_views_at(spec: &PhantomSpec, side_angle_deg: f64) -> Result<ThreeViews> {
    if spec.shape != Shape::Ellipsoid {
        return Err(Error::Precondition("three views need an ellipsoid phantom".into()));
    }
    spec.validate()?;
    Ok(ThreeViews {
        front: render_view(spec, 0.0)?,
        right: render_view(spec, side_angle_deg)?,
        left: render_view(spec, -side_angle_deg)?,
    })
}
