//! Classical ridge-texture analysis: orientation and coherence from the
//! structure tensor, per-pixel ridge period from oriented x-signatures, and
//! surface slant from ridge-period foreshortening.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{
    ensure_same_dims, CoherenceMap, Dims, GradientMap, GrayImage, Grid, Mask, OrientationDistribution,
    OrientationField, PeriodMap,
};
use crate::preprocess::center_region;

pub const DEFAULT_BLOCK_PX: usize = 16;
pub const DEFAULT_WINDOW_PX: usize = 32;
/// Shortest and longest ridge period the x-signature can resolve.
pub const MIN_PERIOD_PX: f64 = 2.0;
pub const MAX_PERIOD_PX: f64 = 64.0;
/// Slopes are capped here; beyond it the surface is effectively vertical.
pub const MAX_SLOPE: f64 = 16.0;

/// Sobel derivatives with replicated borders, scaled to intensity per pixel.
fn sobel(image: &GrayImage) -> (Grid<f32>, Grid<f32>) {
    let (w, h) = (image.width(), image.height());
    let px = |x: isize, y: isize| {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        image.get(xc, yc) as f64
    };
    let mut gx = Grid::filled(w, h, 0.0f32);
    let mut gy = Grid::filled(w, h, 0.0f32);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let dx = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x - 1, y) + px(x - 1, y + 1));
            let dy = (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x, y - 1) + px(x + 1, y - 1));
            gx.set(x as usize, y as usize, (dx / 8.0) as f32);
            gy.set(x as usize, y as usize, (dy / 8.0) as f32);
        }
    }
    (gx, gy)
}

/// Summed-area table with a zero guard row and column.
struct Integral {
    w: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut sums = vec![0.0; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += f(x, y);
                sums[(y + 1) * (w + 1) + x + 1] = sums[y * (w + 1) + x + 1] + row;
            }
        }
        Self { w, sums }
    }

    /// Sum over the inclusive rectangle [x0, x1] × [y0, y1].
    fn rect(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let s = |x: usize, y: usize| self.sums[y * (self.w + 1) + x];
        s(x1 + 1, y1 + 1) - s(x0, y1 + 1) - s(x1 + 1, y0) + s(x0, y0)
    }
}

/// Dense structure-tensor orientation: each masked pixel averages the
/// doubled-angle gradient vectors of the masked pixels in a
/// `block_px`-wide window around it.
pub fn estimate_orientation_field(
    image: &GrayImage,
    mask: &Mask,
    block_px: usize,
) -> Result<(OrientationField, CoherenceMap)> {
    ensure_same_dims(image, mask, "image/mask")?;
    if block_px < 8 {
        return Err(Error::Precondition(format!("orientation block {block_px} px is below 8")));
    }
    let (w, h) = (image.width(), image.height());
    let (gx, gy) = sobel(image);
    let term = |x: usize, y: usize, which: u8| -> f64 {
        if !mask.get(x, y) {
            return 0.0;
        }
        let (a, b) = (gx.get(x, y) as f64, gy.get(x, y) as f64);
        match which {
            0 => a * a - b * b,
            1 => 2.0 * a * b,
            _ => a * a + b * b,
        }
    };
    let cos2 = Integral::new(w, h, |x, y| term(x, y, 0));
    let sin2 = Integral::new(w, h, |x, y| term(x, y, 1));
    let energy = Integral::new(w, h, |x, y| term(x, y, 2));

    let half = block_px / 2;
    let mut theta = OrientationField::filled(w, h, 0.0);
    let mut coherence = CoherenceMap::filled(w, h, 0.0);
    for (x, y) in mask.iter_set() {
        let (x0, y0) = (x.saturating_sub(half), y.saturating_sub(half));
        let (x1, y1) = ((x + half).min(w - 1), (y + half).min(h - 1));
        let (c, s, e) = (cos2.rect(x0, y0, x1, y1), sin2.rect(x0, y0, x1, y1), energy.rect(x0, y0, x1, y1));
        let n = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
        if e / n < 1e-10 {
            continue;
        }
        let angle = 0.5 * s.atan2(c).to_degrees() + 90.0;
        theta.set(x, y, OrientationField::wrap(angle) as f32);
        coherence.set(x, y, (c.hypot(s) / e).min(1.0) as f32);
    }
    Ok((theta, coherence))
}

/// Orientation decoded from per-pixel bin probabilities.
#[derive(Debug, Clone)]
pub struct DecodedOrientation {
    pub field: OrientationField,
    /// Pixels whose doubled-angle resultant vanished; their angle is 0.
    pub undefined: Mask,
}

impl DecodedOrientation {
    pub fn undefined_count(&self) -> usize {
        self.undefined.count()
    }
}

/// Probability-weighted circular mean of the doubled bin angles.
pub fn decode_orientation(dist: &OrientationDistribution) -> DecodedOrientation {
    let (w, h, n) = (dist.width(), dist.height(), dist.n_bins());
    let basis: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let a = (360.0 * i as f64 / n as f64).to_radians();
            (a.cos(), a.sin())
        })
        .collect();
    let mut field = OrientationField::filled(w, h, 0.0);
    let mut undefined = Mask::empty(w, h);
    for y in 0..h {
        for x in 0..w {
            let (mut dc, mut ds) = (0.0, 0.0);
            for (&p, &(c, s)) in dist.pixel(x, y).iter().zip(&basis) {
                dc += p as f64 * c;
                ds += p as f64 * s;
            }
            dc /= n as f64;
            ds /= n as f64;
            if dc.hypot(ds) < 1e-9 {
                undefined.set(x, y, true);
                continue;
            }
            field.set(x, y, OrientationField::wrap(0.5 * ds.atan2(dc).to_degrees()) as f32);
        }
    }
    if undefined.count() > 0 {
        log::warn!("{} pixels have no defined orientation", undefined.count());
    }
    DecodedOrientation { field, undefined }
}

/// Unit vectors along the ridge and across it for an orientation in degrees.
pub fn ridge_axes(theta_deg: f64) -> ((f64, f64), (f64, f64)) {
    let t = theta_deg.to_radians();
    ((t.cos(), t.sin()), (-t.sin(), t.cos()))
}

/// Intensity profile across the ridges through `(x, y)`: `length` samples
/// spaced one pixel apart along the ridge normal, each averaging `width`
/// samples along the ridge. Entries whose support leaves the mask are
/// `None`.
pub fn x_signature(
    image: &GrayImage,
    mask: &Mask,
    x: f64,
    y: f64,
    theta_deg: f64,
    length: usize,
    width: usize,
) -> Vec<Option<f64>> {
    let (tangent, normal) = ridge_axes(theta_deg);
    let width = width.max(1);
    (0..length)
        .map(|k| {
            let along = k as f64 - (length as f64 - 1.0) / 2.0;
            let (mut sum, mut count) = (0.0, 0usize);
            for j in 0..width {
                let across = j as f64 - (width as f64 - 1.0) / 2.0;
                let sx = x + along * normal.0 + across * tangent.0;
                let sy = y + along * normal.1 + across * tangent.1;
                if !mask.contains(sx.round() as isize, sy.round() as isize) {
                    continue;
                }
                if let Some(v) = image.sample_bilinear(sx, sy) {
                    sum += v;
                    count += 1;
                }
            }
            (2 * count >= width).then(|| sum / count as f64)
        })
        .collect()
}

/// The contiguous run of defined samples containing the middle entry, as
/// (offset of its first sample from the middle, values).
fn central_run(signature: &[Option<f64>]) -> Option<(f64, Vec<f64>)> {
    let mid = signature.len() / 2;
    signature.get(mid)?.as_ref()?;
    let mut lo = mid;
    while lo > 0 && signature[lo - 1].is_some() {
        lo -= 1;
    }
    let mut hi = mid;
    while hi + 1 < signature.len() && signature[hi + 1].is_some() {
        hi += 1;
    }
    let center = (signature.len() as f64 - 1.0) / 2.0;
    Some((lo as f64 - center, signature[lo..=hi].iter().map(|v| v.unwrap()).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Extremum {
    pub pos: f64,
    pub is_max: bool,
}

/// Alternating maxima and minima with parabolic subpixel refinement.
/// Swings smaller than a fraction of the signal range are ignored.
pub(crate) fn extrema(values: &[f64]) -> Vec<Extremum> {
    if values.len() < 3 {
        return Vec::new();
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if range < 1e-3 {
        return Vec::new();
    }
    let swing = 0.15 * range;
    let refine = |i: usize| -> f64 {
        let (a, b, c) = (values[i - 1], values[i], values[i + 1]);
        let denom = a - 2.0 * b + c;
        if denom.abs() < 1e-12 {
            i as f64
        } else {
            i as f64 + (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
        }
    };
    let mut found: Vec<(Extremum, f64)> = Vec::new();
    for i in 1..values.len() - 1 {
        let (a, b, c) = (values[i - 1], values[i], values[i + 1]);
        let is_max = b > a && b >= c;
        let is_min = b < a && b <= c;
        if !is_max && !is_min {
            continue;
        }
        let e = Extremum { pos: refine(i), is_max };
        match found.last_mut() {
            Some((last, lv)) if last.is_max == is_max => {
                // Same kind twice: keep the more extreme one.
                if (is_max && b > *lv) || (is_min && b < *lv) {
                    *last = e;
                    *lv = b;
                }
            }
            Some((_, lv)) if (b - *lv).abs() < swing => {}
            _ => found.push((e, b)),
        }
    }
    found.into_iter().map(|(e, _)| e).collect()
}

/// Local ridge period at `at` from the spacing of same-kind extrema,
/// linearly interpolated between the spacings measured on either side.
pub(crate) fn local_period(ext: &[Extremum], at: f64) -> Option<f64> {
    let mut spacings: Vec<(f64, f64)> = Vec::new();
    for kind in [true, false] {
        let pos: Vec<f64> = ext.iter().filter(|e| e.is_max == kind).map(|e| e.pos).collect();
        spacings.extend(pos.windows(2).map(|p| (0.5 * (p[0] + p[1]), p[1] - p[0])));
    }
    if spacings.is_empty() {
        return None;
    }
    spacings.sort_by(|a, b| a.0.total_cmp(&b.0));
    let right = spacings.iter().position(|s| s.0 >= at);
    let value = match right {
        Some(0) => spacings[0].1,
        None => spacings[spacings.len() - 1].1,
        Some(i) => {
            let (l, r) = (spacings[i - 1], spacings[i]);
            let t = if r.0 > l.0 { (at - l.0) / (r.0 - l.0) } else { 0.5 };
            l.1 + t * (r.1 - l.1)
        }
    };
    (value > MIN_PERIOD_PX && value < MAX_PERIOD_PX).then_some(value)
}

/// Per-pixel ridge period from an x-signature across the ridges. Pixels
/// without a resolvable periodic signal get 0.
pub fn estimate_period_map(
    image: &GrayImage,
    mask: &Mask,
    orientation: &OrientationField,
    window_px: usize,
) -> Result<PeriodMap> {
    ensure_same_dims(image, mask, "image/mask")?;
    ensure_same_dims(image, orientation, "image/orientation")?;
    if window_px < 16 {
        return Err(Error::Precondition(format!("period window {window_px} px is below 16")));
    }
    let (w, h) = (image.width(), image.height());
    let rows: Vec<Vec<f32>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    if !mask.get(x, y) {
                        return 0.0;
                    }
                    let theta = orientation.get(x, y) as f64;
                    let sig = x_signature(image, mask, x as f64, y as f64, theta, window_px + 1, window_px / 2);
                    central_run(&sig)
                        .and_then(|(offset, run)| local_period(&extrema(&run), -offset))
                        .map_or(0.0, |p| p as f32)
                })
                .collect()
        })
        .collect();
    Ok(PeriodMap(Grid::from_vec(w, h, rows.concat())?))
}

/// Slope magnitude implied by a foreshortened period: the surface normal
/// tilt φ satisfies cos φ = p / p0. Periods above `p0` and sentinels give 0.
pub fn slope_from_period(p: f64, p0: f64) -> f64 {
    if p <= 0.0 || p >= p0 {
        return 0.0;
    }
    ((p0 / p).powi(2) - 1.0).sqrt().min(MAX_SLOPE)
}

/// Mean non-sentinel period inside the central region of the mask.
pub fn reference_period(period: &PeriodMap, mask: &Mask) -> Result<f32> {
    ensure_same_dims(period, mask, "period/mask")?;
    let region = center_region(mask)?;
    let (sum, n) = mask
        .iter_set()
        .filter(|&(x, y)| region.contains(x, y))
        .map(|(x, y)| period.get(x, y) as f64)
        .filter(|&p| p > 0.0)
        .fold((0.0, 0usize), |(s, n), p| (s + p, n + 1));
    if n == 0 {
        return Err(Error::NoRidgeSignal("no measurable period in the central region".into()));
    }
    Ok((sum / n as f64) as f32)
}

/// Pixel where the locally averaged period peaks, taken as the point where
/// the surface faces the camera. Ties go to the pixel nearest the centroid.
pub fn convexity_anchor(period: &PeriodMap, mask: &Mask, radius: usize) -> Result<(usize, usize)> {
    ensure_same_dims(period, mask, "period/mask")?;
    let (w, h) = (period.width(), period.height());
    let (mx, my) = mask
        .centroid()
        .ok_or_else(|| Error::NoForeground("empty mask has no anchor".into()))?;
    let valid = |x: usize, y: usize| mask.get(x, y) && period.get(x, y) > 0.0;
    let sum = Integral::new(w, h, |x, y| if valid(x, y) { period.get(x, y) as f64 } else { 0.0 });
    let count = Integral::new(w, h, |x, y| valid(x, y) as u8 as f64);
    let mut best: Option<((usize, usize), f64, f64)> = None;
    for (x, y) in mask.iter_set() {
        let (x0, y0) = (x.saturating_sub(radius), y.saturating_sub(radius));
        let (x1, y1) = ((x + radius).min(w - 1), (y + radius).min(h - 1));
        let n = count.rect(x0, y0, x1, y1);
        let mean = if n > 0.0 { sum.rect(x0, y0, x1, y1) / n } else { 0.0 };
        let d = (x as f64 - mx).powi(2) + (y as f64 - my).powi(2);
        let better = match best {
            None => true,
            Some((_, bm, bd)) => mean > bm + 1e-9 || ((mean - bm).abs() <= 1e-9 && d < bd),
        };
        if better {
            best = Some(((x, y), mean, d));
        }
    }
    Ok(best.expect("non-empty mask").0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TextureGradientReport {
    pub anchor: (usize, usize),
    /// Pixels whose period exceeded the reference and were set flat.
    pub clamped: usize,
    /// Pixels with no period estimate.
    pub sentinel: usize,
}

/// Surface gradient from ridge-period foreshortening. The slope points
/// along the ridge normal with depth decreasing away from the convexity
/// anchor.
pub fn gradient_from_texture(
    period: &PeriodMap,
    orientation: &OrientationField,
    mask: &Mask,
    p0: f32,
) -> Result<(GradientMap, TextureGradientReport)> {
    if !(p0 > 0.0) || !p0.is_finite() {
        return Err(Error::Unit(format!("reference period {p0} must be positive")));
    }
    ensure_same_dims(period, mask, "period/mask")?;
    ensure_same_dims(orientation, mask, "orientation/mask")?;
    let p0 = p0 as f64;
    let anchor = convexity_anchor(period, mask, (2.0 * p0).round() as usize)?;
    let mut report = TextureGradientReport {
        anchor,
        ..Default::default()
    };
    let mut grad = GradientMap::zeros(mask.width(), mask.height());
    for (x, y) in mask.iter_set() {
        let p = period.get(x, y) as f64;
        if p <= 0.0 {
            report.sentinel += 1;
            continue;
        }
        if p > p0 {
            report.clamped += 1;
            continue;
        }
        let slope = slope_from_period(p, p0);
        if slope == 0.0 {
            continue;
        }
        let (_, mut n) = ridge_axes(orientation.get(x, y) as f64);
        let outward = (x as f64 - anchor.0 as f64) * n.0 + (y as f64 - anchor.1 as f64) * n.1;
        if outward < 0.0 {
            n = (-n.0, -n.1);
        }
        grad.set(x, y, ((-slope * n.0) as f32, (-slope * n.1) as f32));
    }
    Ok((grad, report))
}

/// Intermediate maps and the gradient from [`estimate_texture_gradient`].
#[derive(Debug, Clone)]
pub struct TextureEstimate {
    pub orientation: OrientationField,
    pub coherence: CoherenceMap,
    pub period: PeriodMap,
    pub p0: f32,
    pub gradient: GradientMap,
    pub report: TextureGradientReport,
}

/// Orientation, period map and gradient in one pass. Without an explicit
/// `p0` the reference period is measured in the central region.
pub fn estimate_texture_gradient(
    image: &GrayImage,
    mask: &Mask,
    block_px: usize,
    window_px: usize,
    p0: Option<f32>,
) -> Result<TextureEstimate> {
    let (orientation, coherence) = estimate_orientation_field(image, mask, block_px)?;
    let period = estimate_period_map(image, mask, &orientation, window_px)?;
    let p0 = match p0 {
        Some(p) => p,
        None => reference_period(&period, mask)?,
    };
    let (gradient, report) = gradient_from_texture(&period, &orientation, mask, p0)?;
    log::debug!(
        "texture gradient: p0 {p0:.3}, anchor {:?}, {} clamped, {} sentinel",
        report.anchor,
        report.clamped,
        report.sentinel
    );
    Ok(TextureEstimate {
        orientation,
        coherence,
        period,
        p0,
        gradient,
        report,
    })
}
