//! Training objective for orientation, period and gradient estimators,
//! evaluated on dense maps. Usable as a reference by external trainers.

use crate::error::{Error, Result};
use crate::grid::{ensure_same_dims, Dims, GradientMap, Grid, Mask, OrientationDistribution, PeriodMap};

/// Guard against log(0) in the cross-entropy.
pub const LOG_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    pub alpha: f32,
    pub beta: f32,
    pub gamma: f32,
    pub sigma: f32,
    pub lambda1: f32,
    pub lambda2: f32,
    pub lambda3: f32,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            sigma: 0.5,
            lambda1: 1.0,
            lambda2: 20.0,
            lambda3: 100.0,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.alpha,
            self.beta,
            self.gamma,
            self.sigma,
            self.lambda1,
            self.lambda2,
            self.lambda3,
        ];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Precondition(format!("loss parameters must be positive: {self:?}")))
        }
    }
}

/// Binary cross-entropy summed over bins, averaged over the mask.
pub fn cross_entropy_term(pred: &OrientationDistribution, truth: &OrientationDistribution, mask: &Mask) -> Result<f64> {
    ensure_same_dims(pred, truth, "prediction/truth")?;
    ensure_same_dims(pred, mask, "prediction/mask")?;
    if pred.n_bins() != truth.n_bins() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {} orientation bins",
            pred.n_bins(),
            truth.n_bins()
        )));
    }
    if mask.count() == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (x, y) in mask.iter_set() {
        for (&o, &t) in pred.pixel(x, y).iter().zip(truth.pixel(x, y)) {
            let (o, t) = (o as f64, t as f64);
            total -= t * o.max(LOG_EPS).ln() + (1.0 - t) * (1.0 - o).max(LOG_EPS).ln();
        }
    }
    Ok(total / mask.count() as f64)
}

/// Doubled-angle resultant (d_cos, d_sin) of each pixel, bin-averaged.
fn resultants(dist: &OrientationDistribution) -> (Grid<f64>, Grid<f64>) {
    let n = dist.n_bins();
    let basis: Vec<(f64, f64)> = (0..n)
        .map(|i| (360.0 * i as f64 / n as f64).to_radians().sin_cos())
        .map(|(s, c)| (c, s))
        .collect();
    let (w, h) = (dist.width(), dist.height());
    let mut dc = Grid::filled(w, h, 0.0);
    let mut ds = Grid::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let (mut c, mut s) = (0.0, 0.0);
            for (&p, &(bc, bs)) in dist.pixel(x, y).iter().zip(&basis) {
                c += p as f64 * bc;
                s += p as f64 * bs;
            }
            dc.set(x, y, c / n as f64);
            ds.set(x, y, s / n as f64);
        }
    }
    (dc, ds)
}

/// Per-pixel coherence: length of the 3×3-summed resultant over the 3×3
/// sum of resultant lengths, both over masked neighbors only.
pub fn coherence(dist: &OrientationDistribution, mask: &Mask) -> Result<Grid<f64>> {
    ensure_same_dims(dist, mask, "distribution/mask")?;
    let (dc, ds) = resultants(dist);
    let (w, h) = (dist.width(), dist.height());
    let mut out = Grid::filled(w, h, 0.0);
    for (x, y) in mask.iter_set() {
        let (mut sc, mut ss, mut sm) = (0.0, 0.0, 0.0);
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if !mask.contains(nx, ny) {
                    continue;
                }
                let (c, s) = (dc.get(nx as usize, ny as usize), ds.get(nx as usize, ny as usize));
                sc += c;
                ss += s;
                sm += c.hypot(s);
            }
        }
        if sm > 0.0 {
            out.set(x, y, (sc.hypot(ss) / sm).min(1.0));
        }
    }
    Ok(out)
}

/// α·(1/mean coherence − 1): zero for a perfectly coherent field.
pub fn coherence_term(pred: &OrientationDistribution, mask: &Mask, alpha: f32) -> Result<f64> {
    if mask.count() == 0 {
        return Ok(0.0);
    }
    let coh = coherence(pred, mask)?;
    let mean = mask.iter_set().map(|(x, y)| coh.get(x, y)).sum::<f64>() / mask.count() as f64;
    Ok(alpha as f64 * (1.0 / mean.max(LOG_EPS) - 1.0))
}

pub fn orientation_loss(
    pred: &OrientationDistribution,
    truth: &OrientationDistribution,
    mask: &Mask,
    alpha: f32,
) -> Result<f32> {
    let ce = cross_entropy_term(pred, truth, mask)?;
    let coh = coherence_term(pred, mask, alpha)?;
    Ok((ce + coh) as f32)
}

/// Squared finite-difference magnitude at a masked pixel: forward
/// difference where the next pixel is masked, otherwise backward, otherwise 0.
fn grad_sq(field: &Grid<f32>, mask: &Mask, x: usize, y: usize) -> f64 {
    let v = |x: isize, y: isize| field.get(x as usize, y as usize) as f64;
    let (xi, yi) = (x as isize, y as isize);
    let diff = |dx: isize, dy: isize| -> f64 {
        if mask.contains(xi + dx, yi + dy) {
            v(xi + dx, yi + dy) - v(xi, yi)
        } else if mask.contains(xi - dx, yi - dy) {
            v(xi, yi) - v(xi - dx, yi - dy)
        } else {
            0.0
        }
    };
    diff(1, 0).powi(2) + diff(0, 1).powi(2)
}

/// Mask-averaged squared gradient magnitude of a scalar field.
pub fn smoothness(field: &Grid<f32>, mask: &Mask) -> Result<f64> {
    ensure_same_dims(field, mask, "field/mask")?;
    if mask.count() == 0 {
        return Ok(0.0);
    }
    let s: f64 = mask.iter_set().map(|(x, y)| grad_sq(field, mask, x, y)).sum();
    Ok(s / mask.count() as f64)
}

pub fn period_loss(pred: &PeriodMap, truth: &PeriodMap, mask: &Mask, beta: f32) -> Result<f32> {
    ensure_same_dims(pred, truth, "prediction/truth")?;
    ensure_same_dims(pred, mask, "prediction/mask")?;
    if mask.count() == 0 {
        return Ok(0.0);
    }
    let mse = mask
        .iter_set()
        .map(|(x, y)| (pred.get(x, y) as f64 - truth.get(x, y) as f64).powi(2))
        .sum::<f64>()
        / mask.count() as f64;
    Ok((mse + beta as f64 * smoothness(pred, mask)?) as f32)
}

/// exp(−‖g*‖/σ) per pixel.
pub fn gradient_weight(truth: &GradientMap, sigma: f32) -> Result<Grid<f32>> {
    if !(sigma > 0.0) {
        return Err(Error::Precondition(format!("sigma {sigma} must be positive")));
    }
    let (w, h) = (truth.width(), truth.height());
    Ok(Grid::from_fn(w, h, |x, y| {
        (-truth.magnitude(x, y) / sigma as f64).exp() as f32
    }))
}

/// Weighted squared gradient error normalized by the weight sum.
pub fn weighted_error(pred: &GradientMap, truth: &GradientMap, weight: &Grid<f32>, mask: &Mask) -> Result<f64> {
    ensure_same_dims(pred, truth, "prediction/truth")?;
    ensure_same_dims(pred, mask, "prediction/mask")?;
    ensure_same_dims(pred, weight, "prediction/weight")?;
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in mask.iter_set() {
        let (px, py) = pred.get(x, y);
        let (tx, ty) = truth.get(x, y);
        let w = weight.get(x, y) as f64;
        num += w * ((px - tx) as f64).powi(2) + w * ((py - ty) as f64).powi(2);
        den += w;
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

pub fn gradient_loss(pred: &GradientMap, truth: &GradientMap, mask: &Mask, gamma: f32, sigma: f32) -> Result<f32> {
    let weight = gradient_weight(truth, sigma)?;
    let err = weighted_error(pred, truth, &weight, mask)?;
    let smooth = smoothness(&pred.gx, mask)? + smoothness(&pred.gy, mask)?;
    Ok((err + gamma as f64 * smooth) as f32)
}

pub fn total_loss(l_ori: f32, l_ped: f32, l_grad: f32, params: &LossParams) -> f32 {
    params.lambda1 * l_ori + params.lambda2 * l_ped + params.lambda3 * l_grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ORIENTATION_BINS;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ramp(w: usize, h: usize) -> PeriodMap {
        PeriodMap(Grid::from_fn(w, h, |x, _| x as f32))
    }

    #[test]
    fn defaults_match_table() {
        let p = LossParams::default();
        assert_eq!(
            (p.alpha, p.beta, p.gamma, p.sigma, p.lambda1, p.lambda2, p.lambda3),
            (1.0, 1.0, 1.0, 0.5, 1.0, 20.0, 100.0)
        );
        p.validate().unwrap();
        assert!(LossParams { sigma: 0.0, ..p }.validate().is_err());
    }

    #[test]
    fn perfect_one_hot_has_zero_loss() {
        let d = OrientationDistribution::one_hot_fn(12, 10, |_, _| 37);
        let m = Mask::full(12, 10);
        assert!(cross_entropy_term(&d, &d, &m).unwrap().abs() < 1e-9);
        assert!(coherence_term(&d, &m, 1.0).unwrap().abs() < 1e-5);
        assert!(orientation_loss(&d, &d, &m, 1.0).unwrap().abs() < 1e-5);
    }

    #[test]
    fn uniform_against_one_hot() {
        let n = ORIENTATION_BINS as f64;
        let per_pixel = -((1.0 / n).ln() + (n - 1.0) * (1.0 - 1.0 / n).ln());
        let pred = OrientationDistribution::uniform(4, 3);
        let truth = OrientationDistribution::one_hot_fn(4, 3, |x, y| (x * 7 + y * 11) % 180);
        let ce = cross_entropy_term(&pred, &truth, &Mask::full(4, 3)).unwrap();
        assert!((ce - per_pixel).abs() < 1e-4, "{ce} vs {per_pixel}");
        assert!((per_pixel - 6.19018).abs() < 1e-4);
        // Averaged over bins instead of summed.
        assert!((per_pixel / n - 0.034390).abs() < 1e-6);
    }

    #[test]
    fn checkerboard_is_incoherent() {
        let d = OrientationDistribution::one_hot_fn(8, 8, |x, y| if (x + y) % 2 == 0 { 0 } else { 90 });
        let m = Mask::full(8, 8);
        assert!(coherence_term(&d, &m, 1.0).unwrap() > 0.0);
        let coh = coherence(&d, &m).unwrap();
        assert!(coh.as_slice().iter().all(|&c| (0.0..=1.0).contains(&c)));
    }

    #[test]
    fn period_loss_examples() {
        let m = Mask::full(10, 10);
        let c = PeriodMap::filled(10, 10, 9.0);
        assert_eq!(period_loss(&c, &c, &m, 1.0).unwrap(), 0.0);
        let c1 = PeriodMap::filled(10, 10, 10.0);
        assert!((period_loss(&c1, &c, &m, 1.0).unwrap() - 1.0).abs() < 1e-6);
        let r = ramp(10, 10);
        assert!((smoothness(&r, &m).unwrap() - 1.0).abs() < 1e-12);
        assert!((period_loss(&r, &r, &m, 1.0).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn weight_examples() {
        let mut g = GradientMap::zeros(2, 1);
        g.set(1, 0, (0.3, 0.4));
        let w = gradient_weight(&g, 0.5).unwrap();
        assert_eq!(w.get(0, 0), 1.0);
        assert!((w.get(1, 0) as f64 - (-1.0f64).exp()).abs() < 1e-6);
        assert!(gradient_weight(&g, 0.0).is_err());
    }

    #[test]
    fn gradient_loss_examples() {
        let m = Mask::full(6, 6);
        let mut truth = GradientMap::zeros(6, 6);
        for (x, y) in m.iter_set() {
            truth.set(x, y, (x as f32 * 0.2, -(y as f32) * 0.1));
        }
        let flat_truth = GradientMap::new(Grid::filled(6, 6, 0.7), Grid::filled(6, 6, -0.2)).unwrap();
        assert_eq!(gradient_loss(&flat_truth, &flat_truth, &m, 1.0, 0.5).unwrap(), 0.0);

        let shifted = GradientMap::new(
            truth.gx.map(|v| v + 1.0),
            truth.gy.clone(),
        )
        .unwrap();
        let w = gradient_weight(&truth, 0.5).unwrap();
        assert!((weighted_error(&shifted, &truth, &w, &m).unwrap() - 1.0).abs() < 1e-6);
        let doubled = w.map(|v| 2.0 * v);
        let e1 = weighted_error(&shifted, &truth, &w, &m).unwrap();
        let e2 = weighted_error(&shifted, &truth, &doubled, &m).unwrap();
        assert!((e1 - e2).abs() < 1e-9);
    }

    #[test]
    fn total_loss_examples() {
        let p = LossParams::default();
        assert_eq!(total_loss(0.0, 0.0, 0.0, &p), 0.0);
        assert_eq!(total_loss(1.0, 1.0, 1.0, &p), 121.0);
        assert_eq!(total_loss(2.0, 4.0, 6.0, &p), 2.0 * total_loss(1.0, 2.0, 3.0, &p));
    }

    #[test]
    fn perturbations_are_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (w, h) = (8, 8);
        let m = Mask::full(w, h);
        let truth_ori = OrientationDistribution::one_hot_fn(w, h, |_, _| 20);
        let truth_p = PeriodMap::filled(w, h, 10.0);
        let truth_g = GradientMap::zeros(w, h);
        for _ in 0..1000 {
            let mut o = truth_ori.clone();
            for y in 0..h {
                for x in 0..w {
                    for v in o.pixel_mut(x, y) {
                        *v += rng.random_range(0.0..0.05);
                    }
                }
            }
            o.normalize();
            let mut noise = |n: usize, r: f32| -> Vec<f32> { (0..n).map(|_| rng.random_range(-r..r)).collect() };
            let p = PeriodMap(Grid::from_vec(w, h, noise(w * h, 1.0).iter().map(|v| v + 10.0).collect()).unwrap());
            let g = GradientMap::new(
                Grid::from_vec(w, h, noise(w * h, 0.5)).unwrap(),
                Grid::from_vec(w, h, noise(w * h, 0.5)).unwrap(),
            )
            .unwrap();
            assert!(orientation_loss(&o, &truth_ori, &m, 1.0).unwrap() > 0.0);
            assert!(period_loss(&p, &truth_p, &m, 1.0).unwrap() > 0.0);
            assert!(gradient_loss(&g, &truth_g, &m, 1.0, 0.5).unwrap() > 0.0);
        }
    }

    proptest! {
        #[test]
        fn weight_is_strictly_decreasing(a in 0.0f32..10.0, d in 0.01f32..10.0, sigma in 0.1f32..5.0) {
            let mut g = GradientMap::zeros(2, 1);
            g.set(0, 0, (a, 0.0));
            g.set(1, 0, (a + d, 0.0));
            let w = gradient_weight(&g, sigma).unwrap();
            prop_assert!(w.get(1, 0) < w.get(0, 0) || w.get(0, 0) == 0.0);
        }

        #[test]
        fn losses_are_non_negative(
            vals in proptest::collection::vec(-5.0f32..5.0, 4 * 16),
            probs in proptest::collection::vec(0.0f32..1.0, 16 * 180),
            alpha in 0.1f32..3.0,
        ) {
            let (w, h) = (4, 4);
            let m = Mask::full(w, h);
            let grid = |k: usize| Grid::from_vec(w, h, vals[k * 16..(k + 1) * 16].to_vec()).unwrap();
            let (p, t) = (PeriodMap(grid(0)), PeriodMap(grid(1)));
            prop_assert!(period_loss(&p, &t, &m, 1.0).unwrap() >= 0.0);
            let g = GradientMap::new(grid(2), grid(3)).unwrap();
            let gt = GradientMap::new(grid(3), grid(2)).unwrap();
            prop_assert!(gradient_loss(&g, &gt, &m, 1.0, 0.5).unwrap() >= 0.0);
            let mut o = OrientationDistribution::zeros(w, h);
            for (i, chunk) in probs.chunks(180).enumerate() {
                o.pixel_mut(i % w, i / w).copy_from_slice(chunk);
            }
            o.normalize();
            let truth = OrientationDistribution::one_hot_fn(w, h, |x, y| x * 30 + y);
            prop_assert!(orientation_loss(&o, &truth, &m, alpha).unwrap() >= 0.0);
        }

        #[test]
        fn weighted_term_is_scale_invariant(
            vals in proptest::collection::vec(-2.0f32..2.0, 4 * 9),
            scale in 0.01f32..100.0,
        ) {
            let m = Mask::full(3, 3);
            let grid = |k: usize| Grid::from_vec(3, 3, vals[k * 9..(k + 1) * 9].to_vec()).unwrap();
            let pred = GradientMap::new(grid(0), grid(1)).unwrap();
            let truth = GradientMap::new(grid(2), grid(3)).unwrap();
            let w = gradient_weight(&truth, 0.5).unwrap();
            let a = weighted_error(&pred, &truth, &w, &m).unwrap();
            let b = weighted_error(&pred, &truth, &w.map(|v| v * scale), &m).unwrap();
            prop_assert!((a - b).abs() <= 1e-4 * a.max(1e-6));
        }

        #[test]
        fn minimum_is_the_smoothness_term(vals in proptest::collection::vec(0.0f32..20.0, 25)) {
            let m = Mask::full(5, 5);
            let p = PeriodMap(Grid::from_vec(5, 5, vals.clone()).unwrap());
            let at_truth = period_loss(&p, &p, &m, 1.0).unwrap() as f64;
            prop_assert!((at_truth - smoothness(&p, &m).unwrap()).abs() < 1e-3);
            let off = PeriodMap(p.map(|v| v + 0.5));
            prop_assert!(period_loss(&off, &p, &m, 1.0).unwrap() as f64 > at_truth);
        }
    }
}
