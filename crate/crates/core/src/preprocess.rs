//! Image preparation: finger segmentation, contrast enhancement, ridge
//! period normalization, and yaw correction.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::grid::{ensure_same_dims, Dims, GrayImage, Grid, Mask, OrientationField};
use crate::texture::{extrema, x_signature};

pub const DEFAULT_TILE_PX: usize = 32;
pub const DEFAULT_CLIP: f32 = 2.0;
pub const DEFAULT_TARGET_PERIOD_PX: f32 = 10.0;
/// Physical ridge period the target period is assumed to represent.
pub const NOMINAL_RIDGE_PERIOD_MM: f32 = 0.5;
pub const CENTER_AREA_FRACTION: f64 = 0.20;
pub const MIN_YAW_ROWS: usize = 32;

const BINS: usize = 256;
const PERIOD_BLOCK_PX: usize = 16;
const PERIOD_SIGNATURE_PX: usize = 48;

fn bin_of(v: f32) -> usize {
    ((v * BINS as f32) as usize).min(BINS - 1)
}

/// Otsu's threshold over a 256-bin histogram, returned as the upper edge
/// of the last background bin.
pub fn otsu_threshold(image: &GrayImage) -> f32 {
    let mut hist = [0u64; BINS];
    for &v in image.pixels().as_slice() {
        hist[bin_of(v)] += 1;
    }
    let total = image.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best_k, mut best_var) = (0usize, -1.0);
    for (k, &c) in hist.iter().enumerate().take(BINS - 1) {
        w0 += c as f64;
        sum0 += k as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let (m0, m1) = (sum0 / w0, (sum_all - sum0) / w1);
        let var = w0 * w1 * (m0 - m1).powi(2);
        if var > best_var {
            best_var = var;
            best_k = k;
        }
    }
    (best_k + 1) as f32 / BINS as f32
}

/// 4-connected components of `bits`; returns a label grid (0 = unset) and
/// the size of each label starting at label 1.
fn components(bits: &Grid<bool>) -> (Grid<u32>, Vec<usize>) {
    let (w, h) = (bits.width(), bits.height());
    let mut labels = Grid::filled(w, h, 0u32);
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if !bits.get(x, y) || labels.get(x, y) != 0 {
                continue;
            }
            let label = sizes.len() as u32 + 1;
            let mut size = 0;
            labels.set(x, y, label);
            queue.push_back((x, y));
            while let Some((cx, cy)) = queue.pop_front() {
                size += 1;
                let neighbors = [
                    (cx.wrapping_sub(1), cy),
                    (cx + 1, cy),
                    (cx, cy.wrapping_sub(1)),
                    (cx, cy + 1),
                ];
                for (nx, ny) in neighbors {
                    if nx < w && ny < h && bits.get(nx, ny) && labels.get(nx, ny) == 0 {
                        labels.set(nx, ny, label);
                        queue.push_back((nx, ny));
                    }
                }
            }
            sizes.push(size);
        }
    }
    (labels, sizes)
}

/// Finger mask: the largest 4-connected component above the threshold
/// (Otsu when `threshold` is `None`), with interior holes filled.
pub fn segment(image: &GrayImage, threshold: Option<f32>) -> Result<Mask> {
    let (w, h) = (image.width(), image.height());
    let above = match threshold {
        Some(t) => Grid::from_fn(w, h, |x, y| image.get(x, y) > t),
        None => {
            let t = otsu_threshold(image);
            Grid::from_fn(w, h, |x, y| image.get(x, y) >= t)
        }
    };
    let (labels, sizes) = components(&above);
    let largest = sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i as u32 + 1);
    let Some(largest) = largest else {
        return Err(Error::NoForeground("no pixel above the threshold".into()));
    };
    let fg = Grid::from_fn(w, h, |x, y| labels.get(x, y) == largest);

    // Holes are background components that do not touch the border.
    let (bg_labels, bg_sizes) = components(&fg.map(|b| !b));
    let mut touches = vec![false; bg_sizes.len() + 1];
    for y in 0..h {
        for x in 0..w {
            if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                touches[bg_labels.get(x, y) as usize] = true;
            }
        }
    }
    let mask = Mask::from_fn(w, h, |x, y| fg.get(x, y) || !touches[bg_labels.get(x, y) as usize]);
    if (mask.count() as f64) < 0.01 * image.len() as f64 {
        return Err(Error::NoForeground(format!(
            "foreground covers {} of {} pixels",
            mask.count(),
            image.len()
        )));
    }
    Ok(mask)
}

/// Per-tile lookup table, or `None` for tiles with no masked pixel.
fn tile_lut(values: &[f32], clip: f32) -> Option<[f32; BINS]> {
    if values.is_empty() {
        return None;
    }
    let mut hist = [0f64; BINS];
    for &v in values {
        hist[bin_of(v)] += 1.0;
    }
    if hist.iter().filter(|&&c| c > 0.0).count() == 1 {
        return Some([0.5; BINS]);
    }
    let n = values.len() as f64;
    let limit = (clip as f64 * n / BINS as f64).max(1.0);
    let mut excess = 0.0;
    for c in hist.iter_mut() {
        if *c > limit {
            excess += *c - limit;
            *c = limit;
        }
    }
    let share = excess / BINS as f64;
    let mut lut = [0f32; BINS];
    let mut acc = 0.0;
    for (b, c) in hist.iter().enumerate() {
        acc += c + share;
        lut[b] = (acc / n).clamp(0.0, 1.0) as f32;
    }
    Some(lut)
}

/// Contrast-limited adaptive histogram equalization over `tile_px` tiles,
/// blended bilinearly between tile centers. Only masked pixels contribute
/// to histograms; unmasked output pixels are 0.
pub fn enhance(image: &GrayImage, mask: &Mask, tile_px: usize, clip: f32) -> Result<GrayImage> {
    ensure_same_dims(image, mask, "image/mask")?;
    if tile_px < 8 {
        return Err(Error::Precondition(format!("CLAHE tile {tile_px} px is below 8")));
    }
    if !(clip > 0.0) {
        return Err(Error::Precondition(format!("CLAHE clip {clip} must be positive")));
    }
    let (w, h) = (image.width(), image.height());
    let (nx, ny) = (w.div_ceil(tile_px), h.div_ceil(tile_px));
    let mut luts = Vec::with_capacity(nx * ny);
    for ty in 0..ny {
        for tx in 0..nx {
            let mut values = Vec::new();
            for y in ty * tile_px..((ty + 1) * tile_px).min(h) {
                for x in tx * tile_px..((tx + 1) * tile_px).min(w) {
                    if mask.get(x, y) {
                        values.push(image.get(x, y));
                    }
                }
            }
            luts.push(tile_lut(&values, clip));
        }
    }

    let center = |t: usize| (t as f64 + 0.5) * tile_px as f64 - 0.5;
    let locate = |p: f64, n: usize| -> (usize, usize, f64) {
        let f = (p + 0.5) / tile_px as f64 - 0.5;
        if f <= 0.0 {
            return (0, 0, 0.0);
        }
        let t0 = (f.floor() as usize).min(n - 1);
        if t0 + 1 >= n {
            return (n - 1, n - 1, 0.0);
        }
        (t0, t0 + 1, (p - center(t0)) / tile_px as f64)
    };
    let out = Grid::from_fn(w, h, |x, y| {
        if !mask.get(x, y) {
            return 0.0;
        }
        let b = bin_of(image.get(x, y));
        let (x0, x1, fx) = locate(x as f64, nx);
        let (y0, y1, fy) = locate(y as f64, ny);
        let (mut acc, mut wsum) = (0.0, 0.0);
        for (tx, ty, wt) in [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x1, y0, fx * (1.0 - fy)),
            (x0, y1, (1.0 - fx) * fy),
            (x1, y1, fx * fy),
        ] {
            if let Some(lut) = &luts[ty * nx + tx] {
                acc += wt * lut[b] as f64;
                wsum += wt;
            }
        }
        if wsum > 0.0 {
            (acc / wsum) as f32
        } else {
            0.5
        }
    });
    GrayImage::new(out, image.pitch_mm())
}

/// Central disk covering a fixed fraction of the foreground area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterRegion {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

impl CenterRegion {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        (x as f64 - self.cx).hypot(y as f64 - self.cy) <= self.radius
    }
}

pub fn center_region(mask: &Mask) -> Result<CenterRegion> {
    let (cx, cy) = mask
        .centroid()
        .ok_or_else(|| Error::NoForeground("empty mask has no center region".into()))?;
    Ok(CenterRegion {
        cx: cx.round(),
        cy: cy.round(),
        radius: (CENTER_AREA_FRACTION * mask.count() as f64 / std::f64::consts::PI).sqrt(),
    })
}

/// Mean ridge period over blocks of the center region, from the peak
/// spacing of an x-signature taken across the local ridge orientation.
pub fn mean_ridge_period(
    image: &GrayImage,
    mask: &Mask,
    region: &CenterRegion,
    orientation: &OrientationField,
) -> Result<f32> {
    ensure_same_dims(image, mask, "image/mask")?;
    ensure_same_dims(image, orientation, "image/orientation")?;
    let (w, h) = (image.width() as i64, image.height() as i64);
    let r = region.radius.floor() as i64;
    let step = PERIOD_BLOCK_PX as i64;
    let (mut blocks, mut periods) = (0usize, Vec::new());
    for oy in (-r..=r).step_by(step as usize).map(|d| region.cy as i64 + d) {
        for ox in (-r..=r).step_by(step as usize).map(|d| region.cx as i64 + d) {
            if ox < 0 || oy < 0 || ox >= w || oy >= h {
                continue;
            }
            let (x, y) = (ox as usize, oy as usize);
            if !region.contains(x, y) || !mask.get(x, y) {
                continue;
            }
            blocks += 1;
            let sig = x_signature(
                image,
                mask,
                x as f64,
                y as f64,
                orientation.get(x, y) as f64,
                PERIOD_SIGNATURE_PX + 1,
                PERIOD_BLOCK_PX,
            );
            let values: Vec<f64> = sig.into_iter().map_while(|v| v).collect();
            let maxima: Vec<f64> = extrema(&values).iter().filter(|e| e.is_max).map(|e| e.pos).collect();
            if maxima.len() >= 2 {
                periods.push((maxima[maxima.len() - 1] - maxima[0]) / (maxima.len() - 1) as f64);
            }
        }
    }
    if blocks == 0 || 2 * periods.len() <= blocks {
        return Err(Error::NoRidgeSignal(format!(
            "{} of {} center blocks show a periodic signal",
            periods.len(),
            blocks
        )));
    }
    Ok((periods.iter().sum::<f64>() / periods.len() as f64) as f32)
}

/// Result of resampling to the target ridge period.
#[derive(Debug, Clone)]
pub struct Rescaled {
    pub image: GrayImage,
    pub mask: Mask,
    pub scale_factor: f32,
}

/// Resamples so the mean ridge period becomes `target_period` pixels:
/// bilinear for the image, nearest neighbor for the mask.
pub fn rescale_to_period(
    image: &GrayImage,
    mask: &Mask,
    measured_period: f32,
    target_period: f32,
) -> Result<Rescaled> {
    ensure_same_dims(image, mask, "image/mask")?;
    if !(measured_period > 0.0) || !(target_period > 0.0) {
        return Err(Error::Precondition(format!(
            "periods must be positive (measured {measured_period}, target {target_period})"
        )));
    }
    let scale = target_period / measured_period;
    if !(0.1..=10.0).contains(&scale) {
        return Err(Error::ImplausibleScale(scale));
    }
    let (w, h) = (image.width(), image.height());
    let s = scale as f64;
    let nw = ((w as f64 * s).round() as usize).max(1);
    let nh = ((h as f64 * s).round() as usize).max(1);
    let src = |p: usize, n: usize| ((p as f64 + 0.5) / s - 0.5).clamp(0.0, n as f64 - 1.0);
    let pixels = Grid::from_fn(nw, nh, |x, y| {
        image.sample_bilinear(src(x, w), src(y, h)).unwrap_or(0.0).clamp(0.0, 1.0) as f32
    });
    let nearest = |p: usize, n: usize| (((p as f64 + 0.5) / s).floor() as usize).min(n - 1);
    let resized_mask = Mask::from_fn(nw, nh, |x, y| mask.get(nearest(x, w), nearest(y, h)));
    Ok(Rescaled {
        image: GrayImage::new(pixels, NOMINAL_RIDGE_PERIOD_MM / target_period)?,
        mask: resized_mask,
        scale_factor: scale,
    })
}

/// Angle in degrees between the finger centerline and the vertical;
/// positive when the centerline drifts right going down. Rows narrower
/// than 90% of the median row width (tip and base caps) are left out.
pub fn estimate_yaw(mask: &Mask) -> Result<f32> {
    let mut rows = Vec::new();
    for y in 0..mask.height() {
        let mut xs = (0..mask.width()).filter(|&x| mask.get(x, y));
        if let Some(lo) = xs.next() {
            let hi = xs.next_back().unwrap_or(lo);
            rows.push((y as f64, 0.5 * (lo + hi) as f64, (hi - lo + 1) as f64));
        }
    }
    if rows.len() < MIN_YAW_ROWS {
        return Err(Error::InsufficientContour {
            rows: rows.len(),
            needed: MIN_YAW_ROWS,
        });
    }
    let mut widths: Vec<f64> = rows.iter().map(|r| r.2).collect();
    widths.sort_by(f64::total_cmp);
    let median = widths[widths.len() / 2];
    let pts: Vec<(f64, f64)> = rows
        .into_iter()
        .filter(|r| r.2 >= 0.9 * median)
        .map(|r| (r.0, r.1))
        .collect();
    let n = pts.len() as f64;
    let my = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mx = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - my) * (p.1 - mx)).sum();
    let syy: f64 = pts.iter().map(|p| (p.0 - my).powi(2)).sum();
    if syy == 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / syy).atan().to_degrees() as f32)
}

/// Placement of an upright-rotated image relative to its source:
/// a source point `p` lands at `new_center + R(yaw)(p - center)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UprightFrame {
    pub yaw_deg: f32,
    pub center: (f64, f64),
    pub new_center: (f64, f64),
}

impl UprightFrame {
    pub fn to_upright(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = (self.yaw_deg as f64).to_radians().sin_cos();
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        (self.new_center.0 + c * dx - s * dy, self.new_center.1 + s * dx + c * dy)
    }

    pub fn to_source(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = (self.yaw_deg as f64).to_radians().sin_cos();
        let (dx, dy) = (x - self.new_center.0, y - self.new_center.1);
        (self.center.0 + c * dx + s * dy, self.center.1 - s * dx + c * dy)
    }
}

#[derive(Debug, Clone)]
pub struct Upright {
    pub image: GrayImage,
    pub mask: Mask,
    pub frame: UprightFrame,
}

/// Rotates about the mask centroid so the centerline becomes vertical.
/// The canvas grows as needed so no foreground pixel is clipped.
pub fn rotate_upright(image: &GrayImage, mask: &Mask, yaw_deg: f32) -> Result<Upright> {
    ensure_same_dims(image, mask, "image/mask")?;
    if !(yaw_deg.abs() < 90.0) {
        return Err(Error::Precondition(format!("yaw {yaw_deg} must be within (-90, 90)")));
    }
    let center = mask
        .centroid()
        .ok_or_else(|| Error::NoForeground("cannot rotate an empty mask".into()))?;
    let probe = UprightFrame {
        yaw_deg,
        center,
        new_center: (0.0, 0.0),
    };
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (x, y) in mask.iter_set() {
        let (u, v) = probe.to_upright(x as f64, y as f64);
        x0 = x0.min(u);
        y0 = y0.min(v);
        x1 = x1.max(u);
        y1 = y1.max(v);
    }
    let pad = 2.0;
    let nw = ((x1 - x0).ceil() + 1.0 + 2.0 * pad) as usize;
    let nh = ((y1 - y0).ceil() + 1.0 + 2.0 * pad) as usize;
    let frame = UprightFrame {
        new_center: (pad - x0, pad - y0),
        ..probe
    };
    let (w, h) = (image.width() as f64, image.height() as f64);
    let pixels = Grid::from_fn(nw.max(8), nh.max(8), |x, y| {
        let (sx, sy) = frame.to_source(x as f64, y as f64);
        if sx < -0.5 || sy < -0.5 || sx > w - 0.5 || sy > h - 0.5 {
            return 0.0;
        }
        let (cx, cy) = (sx.clamp(0.0, w - 1.0), sy.clamp(0.0, h - 1.0));
        image.sample_bilinear(cx, cy).unwrap_or(0.0).clamp(0.0, 1.0) as f32
    });
    let (pw, ph) = (pixels.width(), pixels.height());
    let rotated = Mask::from_fn(pw, ph, |x, y| {
        let (sx, sy) = frame.to_source(x as f64, y as f64);
        mask.contains(sx.round() as isize, sy.round() as isize)
    });
    Ok(Upright {
        image: GrayImage::new(pixels, image.pitch_mm())?,
        mask: rotated,
        frame,
    })
}

/// Outcome of the full preparation pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessReport {
    pub scale_factor: f32,
    pub yaw_deg: f32,
    pub mean_period_px: f32,
}

#[derive(Debug, Clone)]
pub struct PreprocessOptions {
    pub threshold: Option<f32>,
    pub tile_px: usize,
    pub clip: f32,
    pub target_period: f32,
    pub block_px: usize,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            threshold: None,
            tile_px: DEFAULT_TILE_PX,
            clip: DEFAULT_CLIP,
            target_period: DEFAULT_TARGET_PERIOD_PX,
            block_px: crate::texture::DEFAULT_BLOCK_PX,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub image: GrayImage,
    pub mask: Mask,
    pub report: PreprocessReport,
    pub frame: UprightFrame,
}

/// Segmentation (unless a mask is supplied), enhancement, rescaling to the
/// target period, and yaw correction.
pub fn preprocess(image: &GrayImage, mask: Option<&Mask>, opts: &PreprocessOptions) -> Result<Preprocessed> {
    let mask = match mask {
        Some(m) => {
            ensure_same_dims(image, m, "image/mask")?;
            m.clone()
        }
        None => segment(image, opts.threshold)?,
    };
    let enhanced = enhance(image, &mask, opts.tile_px, opts.clip)?;
    let (orientation, _) = crate::texture::estimate_orientation_field(&enhanced, &mask, opts.block_px)?;
    let region = center_region(&mask)?;
    let period = mean_ridge_period(&enhanced, &mask, &region, &orientation)?;
    let scaled = rescale_to_period(&enhanced, &mask, period, opts.target_period)?;
    let yaw = estimate_yaw(&scaled.mask)?;
    let upright = rotate_upright(&scaled.image, &scaled.mask, yaw)?;
    log::info!("preprocess: period {period:.2} px, scale {:.4}, yaw {yaw:.2} deg", scaled.scale_factor);
    Ok(Preprocessed {
        image: upright.image,
        mask: upright.mask,
        report: PreprocessReport {
            scale_factor: scaled.scale_factor,
            yaw_deg: yaw,
            mean_period_px: period,
        },
        frame: upright.frame,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::texture::{estimate_orientation_field, ridge_axes};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn disk_image(n: usize, r: f64) -> (GrayImage, Mask) {
        let c = n as f64 / 2.0;
        let inside = |x: usize, y: usize| (x as f64 - c).hypot(y as f64 - c) < r;
        let img = GrayImage::from_fn(n, n, 0.05, |x, y| if inside(x, y) { 0.8 } else { 0.1 }).unwrap();
        (img, Mask::from_fn(n, n, inside))
    }

    fn iou(a: &Mask, b: &Mask) -> f64 {
        let inter = a.iter_set().filter(|&(x, y)| b.get(x, y)).count();
        inter as f64 / (a.count() + b.count() - inter) as f64
    }

    fn grating(n: usize, period: f64, theta: f64, amp: f64) -> GrayImage {
        let (_, nrm) = ridge_axes(theta);
        GrayImage::from_fn(n, n, 0.05, |x, y| {
            let s = x as f64 * nrm.0 + y as f64 * nrm.1;
            (0.5 + amp * (2.0 * PI * s / period).cos()) as f32
        })
        .unwrap()
    }

    /// Rectangle of half-sizes (hw, hh) rotated so its long axis leans by
    /// `yaw` degrees (x grows with y for positive yaw).
    fn rotated_rect(w: usize, h: usize, hw: f64, hh: f64, yaw: f64) -> Mask {
        let (s, c) = yaw.to_radians().sin_cos();
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        Mask::from_fn(w, h, |x, y| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let u = c * dx - s * dy;
            let v = s * dx + c * dy;
            u.abs() <= hw && v.abs() <= hh
        })
    }

    #[test]
    fn segments_bright_disk() {
        let (img, disk) = disk_image(100, 30.0);
        let m = segment(&img, None).unwrap();
        assert!(iou(&m, &disk) >= 0.99);
    }

    #[test]
    fn uniform_dark_has_no_foreground() {
        let img = GrayImage::from_fn(40, 40, 0.05, |_, _| 0.0).unwrap();
        assert!(matches!(segment(&img, None), Err(Error::NoForeground(_))));
    }

    #[test]
    fn keeps_largest_component_and_fills_holes() {
        let img = GrayImage::from_fn(100, 60, 0.05, |x, y| {
            let big = (10..50).contains(&x) && (10..50).contains(&y);
            let hole = (25..30).contains(&x) && (25..30).contains(&y);
            let small = (70..82).contains(&x) && (20..33).contains(&y);
            if (big && !hole) || small {
                0.9
            } else {
                0.05
            }
        })
        .unwrap();
        let m = segment(&img, Some(0.5)).unwrap();
        assert_eq!(m.count(), 1600);
        assert!(m.get(27, 27) && !m.get(75, 25));
    }

    #[test]
    fn segment_is_idempotent() {
        let (img, _) = disk_image(80, 25.0);
        let m = segment(&img, None).unwrap();
        let again = segment(&img.masked(&m).unwrap(), None).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn enhance_constant_tile() {
        let img = GrayImage::from_fn(64, 64, 0.05, |_, _| 0.3).unwrap();
        let m = Mask::from_fn(64, 64, |x, _| x < 40);
        let e = enhance(&img, &m, 32, DEFAULT_CLIP).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                assert_eq!(e.get(x, y), if x < 40 { 0.5 } else { 0.0 });
            }
        }
        assert!(enhance(&img, &m, 4, 2.0).is_err());
    }

    #[test]
    fn enhance_stretches_low_contrast_grating() {
        let img = grating(128, 16.0, 90.0, 0.05);
        let m = Mask::full(128, 128);
        // One period along the center row.
        let amplitude = |clip: f32| {
            let e = enhance(&img, &m, DEFAULT_TILE_PX, clip).unwrap();
            let row: Vec<f32> = (56..72).map(|x| e.get(x, 64)).collect();
            let (lo, hi) = row.iter().fold((1.0f32, 0.0f32), |(a, b), &v| (a.min(v), b.max(v)));
            0.5 * (hi - lo)
        };
        assert!(amplitude(32.0) >= 0.3, "{}", amplitude(32.0));
        // The default clip limit still raises contrast, just less.
        assert!(amplitude(DEFAULT_CLIP) > 0.05);
    }

    #[test]
    fn center_region_examples() {
        let full = Mask::full(100, 100);
        let r = center_region(&full).unwrap();
        assert!((r.radius - (2000.0 / PI).sqrt()).abs() < 1e-9);
        assert!((r.radius - 25.23).abs() < 0.01);
        let sym = Mask::from_fn(41, 31, |x, y| (x as f64 - 20.0).abs() + (y as f64 - 15.0).abs() <= 10.0);
        let c = center_region(&sym).unwrap();
        assert_eq!((c.cx, c.cy), (20.0, 15.0));
        assert!(matches!(center_region(&Mask::empty(5, 5)), Err(Error::NoForeground(_))));
    }

    #[test]
    fn center_region_area_fraction() {
        let (_, disk) = disk_image(200, 70.0);
        let r = center_region(&disk).unwrap();
        let inside = disk.iter_set().filter(|&(x, y)| r.contains(x, y)).count() as f64;
        assert!((inside / disk.count() as f64 - 0.20).abs() <= 0.02 * 0.20 + 1e-3);
    }

    fn measure(img: &GrayImage) -> Result<f32> {
        let m = Mask::full(img.width(), img.height());
        let (theta, _) = estimate_orientation_field(img, &m, 16).unwrap();
        mean_ridge_period(img, &m, &center_region(&m).unwrap(), &theta)
    }

    #[test]
    fn mean_period_of_gratings() {
        assert!((measure(&grating(128, 12.0, 90.0, 0.5)).unwrap() - 12.0).abs() <= 0.3);
        assert!((measure(&grating(128, 8.0, 30.0, 0.5)).unwrap() - 8.0).abs() <= 0.3);
        let flat = GrayImage::from_fn(64, 64, 0.05, |_, _| 0.5).unwrap();
        assert!(matches!(measure(&flat), Err(Error::NoRidgeSignal(_))));
    }

    #[test]
    fn rescale_examples() {
        let img = grating(60, 12.0, 90.0, 0.5);
        let m = Mask::full(60, 60);
        let r = rescale_to_period(&img, &m, 12.0, 10.0).unwrap();
        assert!((r.scale_factor - 0.833_333_3).abs() < 1e-6);
        assert_eq!((r.image.width(), r.image.height()), (50, 50));
        assert!((r.image.pitch_mm() - 0.05).abs() < 1e-7);

        let same = rescale_to_period(&img, &m, 10.0, 10.0).unwrap();
        assert_eq!(same.scale_factor, 1.0);
        assert_eq!(same.image.pixels(), img.pixels());
        assert_eq!(same.mask, m);

        assert!(matches!(
            rescale_to_period(&img, &m, 0.5, 10.0),
            Err(Error::ImplausibleScale(s)) if (s - 20.0).abs() < 1e-6
        ));
    }

    #[test]
    fn rescaled_grating_reaches_target() {
        let img = grating(160, 12.0, 90.0, 0.5);
        let m = Mask::full(160, 160);
        let measured = measure(&img).unwrap();
        let r = rescale_to_period(&img, &m, measured, 10.0).unwrap();
        assert!((measure(&r.image).unwrap() - 10.0).abs() <= 0.3);
    }

    #[test]
    fn yaw_examples() {
        let upright = rotated_rect(120, 200, 20.0, 70.0, 0.0);
        assert!(estimate_yaw(&upright).unwrap().abs() < 1e-6);
        let tilted = rotated_rect(160, 220, 20.0, 80.0, 10.0);
        assert!((estimate_yaw(&tilted).unwrap() - 10.0).abs() <= 0.5);
        let short = Mask::from_fn(20, 20, |_, y| (5..10).contains(&y));
        assert!(matches!(
            estimate_yaw(&short),
            Err(Error::InsufficientContour { rows: 5, needed: 32 })
        ));
    }

    #[test]
    fn rotation_identity_and_composition() {
        let m = rotated_rect(100, 160, 18.0, 60.0, 0.0);
        let img = GrayImage::from_fn(100, 160, 0.05, |x, y| m.get(x, y) as u8 as f32 * 0.7).unwrap();
        let same = rotate_upright(&img, &m, 0.0).unwrap();
        assert_eq!(same.mask.count(), m.count());

        let tilted = rotated_rect(160, 220, 20.0, 80.0, 10.0);
        let timg = GrayImage::from_fn(160, 220, 0.05, |x, y| tilted.get(x, y) as u8 as f32).unwrap();
        let yaw = estimate_yaw(&tilted).unwrap();
        let up = rotate_upright(&timg, &tilted, yaw).unwrap();
        assert!(estimate_yaw(&up.mask).unwrap().abs() <= 0.5);
        let ratio = up.mask.count() as f64 / tilted.count() as f64;
        assert!((ratio - 1.0).abs() <= 0.02, "{ratio}");
    }

    #[test]
    fn frame_round_trip() {
        let f = UprightFrame {
            yaw_deg: 17.0,
            center: (40.0, 55.0),
            new_center: (47.5, 60.25),
        };
        let (u, v) = f.to_upright(12.0, 99.0);
        let (x, y) = f.to_source(u, v);
        assert!((x - 12.0).abs() < 1e-9 && (y - 99.0).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn upright_rotation_removes_yaw(yaw in -30.0f64..30.0) {
            let m = rotated_rect(200, 240, 18.0, 75.0, yaw);
            let img = GrayImage::from_fn(200, 240, 0.05, |x, y| m.get(x, y) as u8 as f32).unwrap();
            let est = estimate_yaw(&m).unwrap();
            let up = rotate_upright(&img, &m, est).unwrap();
            prop_assert!(estimate_yaw(&up.mask).unwrap().abs() <= 0.5);
        }
    }
}
