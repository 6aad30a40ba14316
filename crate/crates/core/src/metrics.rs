//! Error metrics between estimated and reference maps.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{
    ensure_same_dims, DepthMap, Dims, GradientMap, Grid, Mask, OrientationField, PeriodMap, DEFAULT_MARGIN_PX,
};
use crate::lossmath::gradient_weight;

/// Mean wrapped angular difference in degrees; always within [0, 90].
pub fn orientation_error(pred: &OrientationField, truth: &OrientationField, mask: &Mask) -> Result<f32> {
    ensure_same_dims(pred, truth, "prediction/truth")?;
    ensure_same_dims(pred, mask, "prediction/mask")?;
    if mask.count() == 0 {
        return Ok(0.0);
    }
    let sum: f64 = mask
        .iter_set()
        .map(|(x, y)| {
            let d = (pred.get(x, y) as f64 - truth.get(x, y) as f64).rem_euclid(180.0);
            d.min(180.0 - d)
        })
        .sum();
    Ok((sum / mask.count() as f64) as f32)
}

/// A map compared by [`rmse`].
#[derive(Debug, Clone, Copy)]
pub enum Field<'a> {
    Period(&'a PeriodMap),
    Gradient(&'a GradientMap),
    Depth(&'a DepthMap),
}

impl Field<'_> {
    fn kind(&self) -> &'static str {
        match self {
            Field::Period(_) => "period",
            Field::Gradient(_) => "gradient",
            Field::Depth(_) => "depth",
        }
    }

    fn dims(&self) -> (usize, usize) {
        match self {
            Field::Period(m) => (m.width(), m.height()),
            Field::Gradient(m) => (m.width(), m.height()),
            Field::Depth(m) => (m.width(), m.height()),
        }
    }
}

/// Per-pixel weighting of squared errors.
#[derive(Debug, Clone, Copy)]
pub enum Weighting<'a> {
    Uniform,
    /// exp(−‖g*‖/σ) from the reference gradient.
    Slope { truth_gradient: &'a GradientMap, sigma: f32 },
}

/// Root of the weighted mean squared error over the mask. Depth maps are
/// min-aligned within the mask first; gradient errors use the squared
/// length of the vector difference.
pub fn rmse(pred: Field<'_>, truth: Field<'_>, mask: &Mask, weighting: Weighting<'_>) -> Result<f32> {
    if pred.dims() != truth.dims() || pred.dims() != (mask.width(), mask.height()) {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?} vs mask {}x{}",
            pred.dims(),
            truth.dims(),
            mask.width(),
            mask.height()
        )));
    }
    let weights: Option<Grid<f32>> = match weighting {
        Weighting::Uniform => None,
        Weighting::Slope { truth_gradient, sigma } => {
            ensure_same_dims(truth_gradient, mask, "weights/mask")?;
            Some(gradient_weight(truth_gradient, sigma)?)
        }
    };
    let sq_err: Box<dyn Fn(usize, usize) -> f64> = match (pred, truth) {
        (Field::Period(p), Field::Period(t)) => {
            Box::new(move |x, y| (p.get(x, y) as f64 - t.get(x, y) as f64).powi(2))
        }
        (Field::Gradient(p), Field::Gradient(t)) => Box::new(move |x, y| {
            let (px, py) = p.get(x, y);
            let (tx, ty) = t.get(x, y);
            ((px - tx) as f64).powi(2) + ((py - ty) as f64).powi(2)
        }),
        (Field::Depth(p), Field::Depth(t)) => {
            let (p, t) = (p.min_aligned(mask)?, t.min_aligned(mask)?);
            Box::new(move |x, y| (p.get(x, y) as f64 - t.get(x, y) as f64).powi(2))
        }
        (p, t) => {
            return Err(Error::TypeMismatch {
                expected: p.kind(),
                found: t.kind(),
            })
        }
    };
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in mask.iter_set() {
        let w = weights.as_ref().map_or(1.0, |g| g.get(x, y) as f64);
        num += w * sq_err(x, y);
        den += w;
    }
    Ok(if den > 0.0 { (num / den).sqrt() as f32 } else { 0.0 })
}

/// One reported error value with its unit and evaluation footprint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub metric: String,
    pub value: f64,
    pub unit: String,
    pub masked_pixels: usize,
    pub margin_px: usize,
}

/// What to evaluate, with its reference.
#[derive(Debug, Clone, Copy)]
pub enum Comparison<'a> {
    Orientation(&'a OrientationField, &'a OrientationField),
    Maps(Field<'a>, Field<'a>),
}

/// Evaluates over the mask less a `margin_px` border. Gradients are
/// reported in mm per pixel and depth in mm at the given pitch.
pub fn evaluate(
    comparison: Comparison<'_>,
    mask: &Mask,
    margin_px: usize,
    pitch_mm: f32,
    weighting: Weighting<'_>,
) -> Result<EvalReport> {
    if !(pitch_mm > 0.0) {
        return Err(Error::Unit(format!("pitch {pitch_mm} mm/px must be positive")));
    }
    let eval_mask = mask.eroded(margin_px);
    let weighted = matches!(weighting, Weighting::Slope { .. });
    let suffix = if weighted { "_weighted" } else { "" };
    let (metric, value, unit) = match comparison {
        Comparison::Orientation(p, t) => (
            "orientation_error".to_string(),
            orientation_error(p, t, &eval_mask)? as f64,
            "degree",
        ),
        Comparison::Maps(p, t) => {
            let e = rmse(p, t, &eval_mask, weighting)? as f64;
            match p {
                Field::Period(_) => (format!("period_rmse{suffix}"), e, "pixel"),
                Field::Gradient(_) => (format!("gradient_rmse{suffix}"), e * pitch_mm as f64, "mm/pixel"),
                Field::Depth(_) => (format!("depth_rmse{suffix}"), e * pitch_mm as f64, "mm"),
            }
        }
    };
    Ok(EvalReport {
        metric,
        value,
        unit: unit.to_string(),
        masked_pixels: eval_mask.count(),
        margin_px,
    })
}

/// [`evaluate`] with the standard 3-pixel margin.
pub fn evaluate_default(comparison: Comparison<'_>, mask: &Mask, pitch_mm: f32) -> Result<EvalReport> {
    evaluate(comparison, mask, DEFAULT_MARGIN_PX, pitch_mm, Weighting::Uniform)
}
