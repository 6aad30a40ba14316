//! Depth-field operations: moving-least-squares smoothing, gradient
//! extraction, and dual-path trapezoidal integration of gradients.

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{ensure_same_dims, DepthMap, Dims, GradientMap, Grid, Mask};

pub const DEFAULT_MLS_NEIGHBORS: usize = 64;
pub const DEFAULT_MLS_EPSILON_PX: f64 = 8.0;
/// Normal matrices worse conditioned than this drop to a plane fit.
pub const MLS_MAX_CONDITION: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlsParams {
    pub k_neighbors: usize,
    pub epsilon_px: f64,
}

impl Default for MlsParams {
    fn default() -> Self {
        Self {
            k_neighbors: DEFAULT_MLS_NEIGHBORS,
            epsilon_px: DEFAULT_MLS_EPSILON_PX,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MlsReport {
    pub fitted: usize,
    /// Pixels whose quadric system was ill-conditioned.
    pub plane_fallbacks: usize,
    /// Pixels where even the plane was degenerate and the weighted mean was used.
    pub mean_fallbacks: usize,
}

struct LocalFit {
    value: f64,
    slope: (f64, f64),
    kind: FitKind,
}

#[derive(PartialEq)]
enum FitKind {
    Quadric,
    Plane,
    Mean,
}

/// Neighbor offsets ordered by distance, then row, then column.
fn sorted_offsets(radius: i64) -> Vec<(i64, i64)> {
    let mut offsets: Vec<(i64, i64)> = (-radius..=radius)
        .flat_map(|dy| (-radius..=radius).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| dx * dx + dy * dy <= radius * radius)
        .collect();
    offsets.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dy, dx));
    offsets
}

fn fit_at(
    depth: &DepthMap,
    mask: &Mask,
    x: usize,
    y: usize,
    params: &MlsParams,
    offsets: &[(i64, i64)],
) -> LocalFit {
    let eps2 = params.epsilon_px * params.epsilon_px;
    let mut samples: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(params.k_neighbors);
    for &(dx, dy) in offsets {
        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
        if mask.contains(nx as isize, ny as isize) {
            let (u, v) = (dx as f64, dy as f64);
            let w = (-(u * u + v * v) / eps2).exp();
            samples.push((u, v, depth.get(nx as usize, ny as usize) as f64, w));
            if samples.len() == params.k_neighbors {
                break;
            }
        }
    }

    let mut normal = Matrix6::<f64>::zeros();
    let mut rhs = Vector6::<f64>::zeros();
    for &(u, v, z, w) in &samples {
        let b = Vector6::new(u * u, u * v, v * v, u, v, 1.0);
        normal += w * b * b.transpose();
        rhs += w * z * b;
    }
    let eig = SymmetricEigen::new(normal);
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &l| (lo.min(l.abs()), hi.max(l.abs())));
    if lo > 0.0 && hi / lo <= MLS_MAX_CONDITION {
        if let Some(a) = normal.cholesky().map(|c| c.solve(&rhs)) {
            return LocalFit {
                value: a[5],
                slope: (a[3], a[4]),
                kind: FitKind::Quadric,
            };
        }
    }

    let mut normal3 = Matrix3::<f64>::zeros();
    let mut rhs3 = Vector3::<f64>::zeros();
    for &(u, v, z, w) in &samples {
        let b = Vector3::new(u, v, 1.0);
        normal3 += w * b * b.transpose();
        rhs3 += w * z * b;
    }
    if let Some(a) = normal3.cholesky().map(|c| c.solve(&rhs3)) {
        if a.iter().all(|v| v.is_finite()) {
            return LocalFit {
                value: a[2],
                slope: (a[0], a[1]),
                kind: FitKind::Plane,
            };
        }
    }
    let (sw, swz) = samples
        .iter()
        .fold((0.0, 0.0), |(sw, swz), &(_, _, z, w)| (sw + w, swz + w * z));
    LocalFit {
        value: if sw > 0.0 { swz / sw } else { depth.get(x, y) as f64 },
        slope: (0.0, 0.0),
        kind: FitKind::Mean,
    }
}

fn mls_fit(
    depth: &DepthMap,
    mask: &Mask,
    params: &MlsParams,
) -> Result<(DepthMap, GradientMap, MlsReport)> {
    ensure_same_dims(depth, mask, "depth/mask")?;
    if params.k_neighbors < 6 {
        return Err(Error::Precondition(format!(
            "MLS needs at least 6 neighbors, got {}",
            params.k_neighbors
        )));
    }
    if !(params.epsilon_px > 0.0) {
        return Err(Error::Precondition(format!("MLS epsilon {}", params.epsilon_px)));
    }
    let (w, h) = (depth.width(), depth.height());
    let radius = (2.0 * (params.k_neighbors as f64).sqrt()).ceil() as i64 + 2;
    let offsets = sorted_offsets(radius);

    let rows: Vec<Vec<Option<LocalFit>>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| mask.get(x, y).then(|| fit_at(depth, mask, x, y, params, &offsets)))
                .collect()
        })
        .collect();

    let mut out = DepthMap::filled(w, h, 0.0);
    let mut grad = GradientMap::zeros(w, h);
    let mut report = MlsReport::default();
    for (y, row) in rows.into_iter().enumerate() {
        for (x, fit) in row.into_iter().enumerate() {
            if let Some(fit) = fit {
                out.set(x, y, fit.value as f32);
                grad.set(x, y, (fit.slope.0 as f32, fit.slope.1 as f32));
                report.fitted += 1;
                match fit.kind {
                    FitKind::Quadric => {}
                    FitKind::Plane => report.plane_fallbacks += 1,
                    FitKind::Mean => report.mean_fallbacks += 1,
                }
            }
        }
    }
    Ok((out, grad, report))
}

/// Replaces each masked depth by a local weighted quadric fit over its
/// `k_neighbors` nearest masked pixels.
pub fn mls_smooth(depth: &DepthMap, mask: &Mask, params: &MlsParams) -> Result<(DepthMap, MlsReport)> {
    let (z, _, report) = mls_fit(depth, mask, params)?;
    Ok((z, report))
}

/// Fused smoothing: the smoothed depth together with the analytic slope
/// of each local quadric at its own pixel.
pub fn mls_smooth_with_gradient(
    depth: &DepthMap,
    mask: &Mask,
    params: &MlsParams,
) -> Result<(DepthMap, GradientMap, MlsReport)> {
    mls_fit(depth, mask, params)
}

/// Finite-difference slope. Where two masked neighbors lie on each side the
/// four-point central stencil (−z₊₂ + 6z₊₁ − 6z₋₁ + z₋₂)/8 is used: its
/// −f‴/12 error cancels the trapezoid rule's overshoot, so
/// [`integrate_gradient`] inverts it exactly for cubic depth. Otherwise the
/// three-point central difference, one-sided where only one neighbor is
/// masked, and zero for isolated pixels.
pub fn depth_to_gradient(depth: &DepthMap, mask: &Mask) -> Result<GradientMap> {
    ensure_same_dims(depth, mask, "depth/mask")?;
    let (w, h) = (depth.width(), depth.height());
    let mut grad = GradientMap::zeros(w, h);
    let z = |x: isize, y: isize| depth.get(x as usize, y as usize) as f64;
    let diff = |x: isize, y: isize, dx: isize, dy: isize| -> f64 {
        let at = |k: isize| z(x + k * dx, y + k * dy);
        let has = |k: isize| mask.contains(x + k * dx, y + k * dy);
        match (has(-1), has(1)) {
            (true, true) if has(-2) && has(2) => (-at(2) + 6.0 * at(1) - 6.0 * at(-1) + at(-2)) / 8.0,
            (true, true) => (at(1) - at(-1)) / 2.0,
            (false, true) => at(1) - at(0),
            (true, false) => at(0) - at(-1),
            (false, false) => 0.0,
        }
    };
    for (x, y) in mask.iter_set() {
        let (xi, yi) = (x as isize, y as isize);
        grad.set(x, y, (diff(xi, yi, 1, 0) as f32, diff(xi, yi, 0, 1) as f32));
    }
    Ok(grad)
}

/// Masked pixel with the smallest gradient magnitude. Ties go to the pixel
/// closest to the mask centroid, then to the first in row-major order.
pub fn find_zero_point(grad: &GradientMap, mask: &Mask) -> Result<(usize, usize)> {
    ensure_same_dims(grad, mask, "gradient/mask")?;
    let (mx, my) = mask
        .centroid()
        .ok_or_else(|| Error::NoForeground("cannot locate a zero point in an empty mask".into()))?;
    let mut best: Option<((usize, usize), f64, f64)> = None;
    for (x, y) in mask.iter_set() {
        let g = grad.magnitude(x, y);
        let d = (x as f64 - mx).powi(2) + (y as f64 - my).powi(2);
        let better = match best {
            None => true,
            Some((_, bg, bd)) => g < bg || (g == bg && d < bd),
        };
        if better {
            best = Some(((x, y), g, d));
        }
    }
    Ok(best.expect("non-empty mask").0)
}

/// How each depth value was obtained by [`integrate_gradient`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IntegrationReport {
    pub both_paths: usize,
    pub single_path: usize,
    /// Pixels reachable by neither path, filled from the nearest reached pixel.
    pub filled: usize,
}

/// Trapezoidal integration along a row (`horizontal`) or column through
/// `start`, walking outward while pixels stay masked. Writes into `acc` and
/// marks `reached`.
fn integrate_line(
    grad: &GradientMap,
    mask: &Mask,
    start: (usize, usize),
    start_value: f64,
    horizontal: bool,
    acc: &mut Grid<f64>,
    reached: &mut Grid<bool>,
) {
    let (sx, sy) = (start.0 as isize, start.1 as isize);
    let slope = |x: isize, y: isize| -> f64 {
        let (gx, gy) = grad.get(x as usize, y as usize);
        if horizontal {
            gx as f64
        } else {
            gy as f64
        }
    };
    acc.set(start.0, start.1, start_value);
    reached.set(start.0, start.1, true);
    for dir in [1isize, -1] {
        let (mut px, mut py) = (sx, sy);
        let mut value = start_value;
        loop {
            let (nx, ny) = if horizontal { (px + dir, py) } else { (px, py + dir) };
            if !mask.contains(nx, ny) {
                break;
            }
            value += dir as f64 * 0.5 * (slope(px, py) + slope(nx, ny));
            acc.set(nx as usize, ny as usize, value);
            reached.set(nx as usize, ny as usize, true);
            px = nx;
            py = ny;
        }
    }
}

/// One L-shaped path family: first along the axis through the zero point,
/// then perpendicular from every reached pixel of that axis.
fn integrate_l_path(
    grad: &GradientMap,
    mask: &Mask,
    zero: (usize, usize),
    rows_first: bool,
) -> (Grid<f64>, Grid<bool>) {
    let (w, h) = (grad.width(), grad.height());
    let mut axis = Grid::filled(w, h, 0.0f64);
    let mut axis_reached = Grid::filled(w, h, false);
    integrate_line(grad, mask, zero, 0.0, rows_first, &mut axis, &mut axis_reached);

    let mut acc = Grid::filled(w, h, 0.0f64);
    let mut reached = Grid::filled(w, h, false);
    let starts: Vec<(usize, usize)> = if rows_first {
        (0..w).map(|x| (x, zero.1)).collect()
    } else {
        (0..h).map(|y| (zero.0, y)).collect()
    };
    for s in starts {
        if axis_reached.get(s.0, s.1) {
            integrate_line(grad, mask, s, axis.get(s.0, s.1), !rows_first, &mut acc, &mut reached);
        }
    }
    (acc, reached)
}

/// Depth from gradients by averaging the x-then-y and y-then-x trapezoidal
/// path integrals from `zero`, then shifting so the masked minimum is 0.
pub fn integrate_gradient(
    grad: &GradientMap,
    mask: &Mask,
    zero: (usize, usize),
) -> Result<(DepthMap, IntegrationReport)> {
    ensure_same_dims(grad, mask, "gradient/mask")?;
    if !mask.contains(zero.0 as isize, zero.1 as isize) {
        return Err(Error::Precondition(format!(
            "zero point ({}, {}) is outside the mask",
            zero.0, zero.1
        )));
    }
    let (w, h) = (grad.width(), grad.height());
    let ((z1, r1), (z2, r2)) = rayon::join(
        || integrate_l_path(grad, mask, zero, true),
        || integrate_l_path(grad, mask, zero, false),
    );

    let mut depth = Grid::filled(w, h, 0.0f64);
    let mut known = Grid::filled(w, h, false);
    let mut report = IntegrationReport::default();
    let mut missing = Vec::new();
    for (x, y) in mask.iter_set() {
        let value = match (r1.get(x, y), r2.get(x, y)) {
            (true, true) => {
                report.both_paths += 1;
                0.5 * (z1.get(x, y) + z2.get(x, y))
            }
            (true, false) => {
                report.single_path += 1;
                z1.get(x, y)
            }
            (false, true) => {
                report.single_path += 1;
                z2.get(x, y)
            }
            (false, false) => {
                missing.push((x, y));
                continue;
            }
        };
        depth.set(x, y, value);
        known.set(x, y, true);
    }
    report.filled = missing.len();
    for (x, y) in missing {
        let (nx, ny) = nearest_known(&known, x, y);
        depth.set(x, y, depth.get(nx, ny));
    }

    let min = mask
        .iter_set()
        .map(|(x, y)| depth.get(x, y))
        .fold(f64::INFINITY, f64::min);
    let mut out = DepthMap::filled(w, h, 0.0);
    for (x, y) in mask.iter_set() {
        out.set(x, y, (depth.get(x, y) - min) as f32);
    }
    Ok((out, report))
}

/// Nearest pixel with `known` set, by Euclidean distance; ties resolved in
/// row-major order. `known` always holds at least the zero point.
fn nearest_known(known: &Grid<bool>, x: usize, y: usize) -> (usize, usize) {
    let (w, h) = (known.width() as i64, known.height() as i64);
    let (x, y) = (x as i64, y as i64);
    let mut best: Option<(i64, (i64, i64))> = None;
    let max_ring = w.max(h);
    for ring in 1..=max_ring {
        if let Some((d2, _)) = best {
            // Every pixel on this ring is at least `ring` away.
            if ring * ring > d2 {
                break;
            }
        }
        for yy in (y - ring).max(0)..=(y + ring).min(h - 1) {
            for xx in (x - ring).max(0)..=(x + ring).min(w - 1) {
                if (xx - x).abs() != ring && (yy - y).abs() != ring {
                    continue;
                }
                if known.get(xx as usize, yy as usize) {
                    let d2 = (xx - x).pow(2) + (yy - y).pow(2);
                    let better = match best {
                        None => true,
                        Some((bd, (bx, by))) => d2 < bd || (d2 == bd && (yy, xx) < (by, bx)),
                    };
                    if better {
                        best = Some((d2, (xx, yy)));
                    }
                }
            }
        }
    }
    let (_, (bx, by)) = best.expect("at least one reached pixel");
    (bx as usize, by as usize)
}

/// Full reconstruction stage: zero point, dual-path integration, optional
/// MLS smoothing, and final min-alignment.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub depth: DepthMap,
    pub zero: (usize, usize),
    pub integration: IntegrationReport,
    pub mls: Option<MlsReport>,
}

pub fn reconstruct(
    grad: &GradientMap,
    mask: &Mask,
    mls: Option<&MlsParams>,
) -> Result<Reconstruction> {
    let zero = find_zero_point(grad, mask)?;
    let (depth, integration) = integrate_gradient(grad, mask, zero)?;
    let (depth, mls_report) = match mls {
        Some(params) => {
            let (smoothed, report) = mls_smooth(&depth, mask, params)?;
            (smoothed.min_aligned(mask)?, Some(report))
        }
        None => (depth, None),
    };
    Ok(Reconstruction {
        depth,
        zero,
        integration,
        mls: mls_report,
    })
}
