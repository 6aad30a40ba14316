//! Shape from three silhouettes: per-row elliptical cross-sections fitted
//! to front and ±45° side outlines, and the visible depth of each view.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{DepthMap, Dims, GrayImage, Mask};

pub const MIN_CONTOUR_ROWS: usize = 32;
pub const MIN_ROW_WIDTH_PX: f32 = 4.0;
pub const DEFAULT_SIDE_ANGLE_DEG: f64 = 45.0;
/// Largest fraction of rows that may fail the ellipse fit.
pub const MAX_SKIPPED_FRACTION: f64 = 0.20;
/// Largest fraction of a view mask the resampled depth may leave uncovered.
pub const MAX_HOLE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowContour {
    pub row: usize,
    pub left: f32,
    pub right: f32,
    pub midpoint: f32,
}

impl RowContour {
    pub fn width(&self) -> f32 {
        self.right - self.left
    }
}

/// Subpixel position where the row profile rises through `level`, looking
/// at adjacent pixel pairs within two pixels of the mask boundary. `step`
/// is −1 for a left edge (outside is to the left) and +1 for a right edge.
/// Falls back to the outer edge of the boundary pixel.
fn crossing(image: Option<&GrayImage>, y: usize, boundary: usize, step: isize, level: f32) -> f32 {
    let edge = boundary as f32 + 0.5 * step as f32;
    let Some(img) = image else {
        return edge;
    };
    let w = img.width() as isize;
    let v = |x: isize| img.get(x as usize, y);
    // Walk outward from inside the boundary; pairs are (inner, outer).
    for k in -1..=1isize {
        let inner = boundary as isize + k * step;
        let outer = inner + step;
        if inner < 0 || outer < 0 || inner >= w || outer >= w {
            continue;
        }
        let (vi, vo) = (v(inner), v(outer));
        if vo < level && vi >= level && vi > vo {
            let t = (level - vo) / (vi - vo);
            return outer as f32 + t * (inner - outer) as f32;
        }
    }
    edge
}

/// Left and right outline of every mask row. With an image, each edge is
/// refined to where the intensity crosses `level`; otherwise it sits on
/// the outer edge of the boundary pixel. Rows narrower than 4 px are
/// dropped.
pub fn extract_contours(mask: &Mask, image: Option<&GrayImage>, level: f32) -> Result<Vec<RowContour>> {
    if let Some(img) = image {
        crate::grid::ensure_same_dims(mask, img, "mask/image")?;
    }
    let mut rows = Vec::new();
    for y in 0..mask.height() {
        let mut xs = (0..mask.width()).filter(|&x| mask.get(x, y));
        let Some(lo) = xs.next() else { continue };
        let hi = xs.next_back().unwrap_or(lo);
        let left = crossing(image, y, lo, -1, level);
        let right = crossing(image, y, hi, 1, level);
        if right - left < MIN_ROW_WIDTH_PX {
            continue;
        }
        rows.push(RowContour {
            row: y,
            left,
            right,
            midpoint: 0.5 * (left + right),
        });
    }
    if rows.len() < MIN_CONTOUR_ROWS {
        return Err(Error::InsufficientContour {
            rows: rows.len(),
            needed: MIN_CONTOUR_ROWS,
        });
    }
    Ok(rows)
}

/// Elliptical cross-section of one row: semi-axes `a` (across the image)
/// and `b` (toward the camera), center column `center_x` in the front view
/// and depth offset `c_z` of the center from the rotation axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowEllipse {
    pub row: usize,
    pub a: f32,
    pub b: f32,
    pub c_z: f32,
    pub center_x: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipseFit {
    pub ellipses: Vec<RowEllipse>,
    /// Rows whose side views were narrower than any ellipse allows.
    pub degenerate_rows: Vec<usize>,
}

/// Depth semi-axis implied by a side-view half width at `angle`:
/// half² = a²·cos²α + b²·sin²α.
fn depth_axis(a: f64, half: f64, angle: f64) -> Option<f64> {
    let (s, c) = angle.sin_cos();
    let b2 = (half * half - a * a * c * c) / (s * s);
    (b2 > 0.0).then(|| b2.sqrt())
}

/// Fits one ellipse per row shared by the three contour lists.
pub fn fit_row_ellipses(
    front: &[RowContour],
    right: &[RowContour],
    left: &[RowContour],
    side_angle_deg: f64,
) -> Result<EllipseFit> {
    if !(side_angle_deg > 0.0 && side_angle_deg < 90.0) {
        return Err(Error::Precondition(format!("side angle {side_angle_deg} must be in (0, 90)")));
    }
    let angle = side_angle_deg.to_radians();
    let find = |list: &[RowContour], row: usize| list.iter().find(|c| c.row == row).copied();
    let mut ellipses = Vec::new();
    let mut degenerate_rows = Vec::new();
    let mut shared = 0;
    for f in front {
        let (Some(r), Some(l)) = (find(right, f.row), find(left, f.row)) else {
            continue;
        };
        shared += 1;
        let a = 0.5 * f.width() as f64;
        let b_r = depth_axis(a, 0.5 * r.width() as f64, angle);
        let b_l = depth_axis(a, 0.5 * l.width() as f64, angle);
        let (Some(b_r), Some(b_l)) = (b_r, b_l) else {
            log::debug!("row {}: side view narrower than the front allows", f.row);
            degenerate_rows.push(f.row);
            continue;
        };
        let shift_r = (r.midpoint - f.midpoint) as f64;
        let shift_l = (l.midpoint - f.midpoint) as f64;
        let c_z = 0.5 * (shift_r - shift_l) / angle.sin();
        ellipses.push(RowEllipse {
            row: f.row,
            a: a as f32,
            b: (0.5 * (b_r + b_l)) as f32,
            c_z: c_z as f32,
            center_x: f.midpoint,
        });
    }
    if shared < MIN_CONTOUR_ROWS {
        return Err(Error::InsufficientContour {
            rows: shared,
            needed: MIN_CONTOUR_ROWS,
        });
    }
    if degenerate_rows.len() as f64 > MAX_SKIPPED_FRACTION * shared as f64 {
        return Err(Error::Reconstruction(format!(
            "{} of {} rows have no consistent ellipse",
            degenerate_rows.len(),
            shared
        )));
    }
    Ok(EllipseFit {
        ellipses,
        degenerate_rows,
    })
}

/// Polar angle in degrees of the boundary between the arc seen by the
/// front view and the arc hidden from a view rotated by 45°.
pub fn occlusion_angle(a: f32, b: f32) -> f32 {
    ((b as f64 * b as f64) / (a as f64 * a as f64)).atan().to_degrees() as f32
}

/// Visible profile of one cross-section seen from `angle` radians:
/// points `(x', z')` in view coordinates, sorted by `x'`. The arc runs
/// over the half of the ellipse whose outward normal faces the viewer,
/// i.e. the upper arc with the occluded sector removed and the newly
/// exposed sector of the lower arc appended.
fn visible_profile(e: &RowEllipse, axis_x: f64, angle: f64) -> Vec<(f64, f64)> {
    let (a, b) = (e.a as f64, e.b as f64);
    let (s, c) = angle.sin_cos();
    // Normal (cos t / a, sin t / b) against the viewing axis (−sin α, cos α).
    let start = -(-s / a).atan2(c / b);
    let n = ((4.0 * PI * a.max(b)).ceil() as usize).max(64);
    let xc = e.center_x as f64 - axis_x;
    let mut pts: Vec<(f64, f64)> = (0..=n)
        .map(|k| {
            let t = start + PI * k as f64 / n as f64;
            let (x, z) = (xc + a * t.cos(), e.c_z as f64 + b * t.sin());
            (axis_x + x * c + z * s, -x * s + z * c)
        })
        .collect();
    pts.sort_by(|p, q| p.0.total_cmp(&q.0));
    pts
}

/// Linear interpolation of a sorted profile at `x`.
fn interpolate(profile: &[(f64, f64)], x: f64) -> Option<f64> {
    let first = profile.first()?;
    let last = profile.last()?;
    if x < first.0 || x > last.0 {
        return None;
    }
    let i = profile.partition_point(|p| p.0 < x);
    if i == 0 {
        return Some(first.1);
    }
    let (p, q) = (profile[i - 1], profile[i]);
    let t = if q.0 > p.0 { (x - p.0) / (q.0 - p.0) } else { 0.0 };
    Some(p.1 + t * (q.1 - p.1))
}

/// Visible depth of all rows from one view, placed on the pixels of that
/// view's mask and min-aligned. Returns the depth and the hole count.
pub fn view_depth(
    ellipses: &[RowEllipse],
    mask: &Mask,
    axis_x: f64,
    angle_deg: f64,
) -> Result<(DepthMap, usize)> {
    let (w, h) = (mask.width(), mask.height());
    let angle = angle_deg.to_radians();
    let mut depth = DepthMap::filled(w, h, 0.0);
    let mut covered = Mask::empty(w, h);
    for e in ellipses.iter().filter(|e| e.row < h) {
        let profile = visible_profile(e, axis_x, angle);
        for x in 0..w {
            if !mask.get(x, e.row) {
                continue;
            }
            if let Some(z) = interpolate(&profile, x as f64) {
                depth.set(x, e.row, z as f32);
                covered.set(x, e.row, true);
            }
        }
    }
    if covered.count() == 0 {
        return Err(Error::Reconstruction("no view pixel is covered by the fitted rows".into()));
    }
    let holes: Vec<(usize, usize)> = mask.iter_set().filter(|&(x, y)| !covered.get(x, y)).collect();
    if holes.len() as f64 > MAX_HOLE_FRACTION * mask.count() as f64 {
        return Err(Error::Reconstruction(format!(
            "{} of {} view pixels left uncovered",
            holes.len(),
            mask.count()
        )));
    }
    for &(x, y) in &holes {
        let (nx, ny) = nearest_covered(&covered, x, y);
        let v = depth.get(nx, ny);
        depth.set(x, y, v);
    }
    Ok((depth.min_aligned(mask)?, holes.len()))
}

/// Nearest covered pixel, searching the same row first and then rows
/// further away.
fn nearest_covered(covered: &Mask, x: usize, y: usize) -> (usize, usize) {
    let h = covered.height() as isize;
    for dy in 0..h {
        for row in [y as isize - dy, y as isize + dy] {
            if row < 0 || row >= h {
                continue;
            }
            let row = row as usize;
            let hit = (0..covered.width())
                .filter(|&cx| covered.get(cx, row))
                .min_by_key(|&cx| (cx as isize - x as isize).abs());
            if let Some(cx) = hit {
                return (cx, row);
            }
        }
    }
    unreachable!("covered mask is non-empty")
}

#[derive(Debug, Clone)]
pub struct ThreeViewDepths {
    pub front: DepthMap,
    pub right: DepthMap,
    pub left: DepthMap,
    pub holes: [usize; 3],
}

/// Depth seen by the front, right (+angle) and left (−angle) cameras.
pub fn build_three_view_depths(
    ellipses: &[RowEllipse],
    masks: [&Mask; 3],
    axis_x: f64,
    side_angle_deg: f64,
) -> Result<ThreeViewDepths> {
    let (front, hf) = view_depth(ellipses, masks[0], axis_x, 0.0)?;
    let (right, hr) = view_depth(ellipses, masks[1], axis_x, side_angle_deg)?;
    let (left, hl) = view_depth(ellipses, masks[2], axis_x, -side_angle_deg)?;
    Ok(ThreeViewDepths {
        front,
        right,
        left,
        holes: [hf, hr, hl],
    })
}

/// One captured view: its mask and, when available, a graded silhouette
/// image for subpixel contours.
#[derive(Debug, Clone, Copy)]
pub struct ViewInput<'a> {
    pub mask: &'a Mask,
    pub image: Option<&'a GrayImage>,
}

#[derive(Debug, Clone)]
pub struct SilhouetteReconstruction {
    pub fit: EllipseFit,
    pub depths: ThreeViewDepths,
}

/// Contours, row ellipses and three-view depth in one pass.
pub fn reconstruct_from_views(
    views: [ViewInput<'_>; 3],
    axis_x: f64,
    side_angle_deg: f64,
) -> Result<SilhouetteReconstruction> {
    let contours = |v: &ViewInput<'_>| extract_contours(v.mask, v.image, 0.5);
    let (f, r, l) = (contours(&views[0])?, contours(&views[1])?, contours(&views[2])?);
    let fit = fit_row_ellipses(&f, &r, &l, side_angle_deg)?;
    let depths = build_three_view_depths(
        &fit.ellipses,
        [views[0].mask, views[1].mask, views[2].mask],
        axis_x,
        side_angle_deg,
    )?;
    Ok(SilhouetteReconstruction { fit, depths })
}
