//! Grid value types shared by every stage.
//!
//! Coordinates are in pixels: `x` grows to the right along a row, `y` grows
//! downward, and pixel `(x, y)` has its center at the point `(x, y)`. Depth
//! uses the same pixel unit as the image axes; millimeters appear only at
//! reporting boundaries through [`to_millimeters`].

use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

/// Physical pixel pitch after period normalization (0.5 mm ridges at 10 px).
pub const DEFAULT_PITCH_MM: f32 = 0.05;
/// Number of orientation bins (one per degree).
pub const ORIENTATION_BINS: usize = 180;
/// Border width excluded from every reported error.
pub const DEFAULT_MARGIN_PX: usize = 3;

/// Anything laid out on a `width × height` raster.
pub trait Dims {
    fn width(&self) -> usize;
    fn height(&self) -> usize;

    fn len(&self) -> usize {
        self.width() * self.height()
    }

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fails with [`Error::DimensionMismatch`] unless both rasters agree.
pub fn ensure_same_dims(a: &impl Dims, b: &impl Dims, what: &str) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::DimensionMismatch(format!(
            "{what}: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Dense row-major raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidGrid(format!(
                "{} values for a {width}x{height} grid",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        let i = self.index(x, y);
        self.data[i] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl<T> Dims for Grid<T> {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
}

impl Grid<f32> {
    /// Bilinear sample at a real-valued position; `None` outside the
    /// convex hull of pixel centers.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if x > max_x || y > max_y {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let v00 = self.get(x0, y0) as f64;
        let v10 = self.get(x1, y0) as f64;
        let v01 = self.get(x0, y1) as f64;
        let v11 = self.get(x1, y1) as f64;
        let top = v00 + (v10 - v00) * fx;
        let bottom = v01 + (v11 - v01) * fx;
        Some(top + (bottom - top) * fy)
    }
}

macro_rules! scalar_grid {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(pub Grid<f32>);

        impl $name {
            pub fn filled(width: usize, height: usize, value: f32) -> Self {
                Self(Grid::filled(width, height, value))
            }
        }

        impl Deref for $name {
            type Target = Grid<f32>;
            fn deref(&self) -> &Grid<f32> {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut Grid<f32> {
                &mut self.0
            }
        }

        impl Dims for $name {
            fn width(&self) -> usize {
                self.0.width
            }
            fn height(&self) -> usize {
                self.0.height
            }
        }
    };
}

scalar_grid!(
    /// Per-pixel ridge period in pixels; 0 marks pixels without a estimate.
    PeriodMap
);
scalar_grid!(
    /// Per-pixel surface height in pixel units.
    DepthMap
);
scalar_grid!(
    /// Ridge direction in degrees, in `[0, 180)`.
    OrientationField
);
scalar_grid!(
    /// Local orientation agreement in `[0, 1]`.
    CoherenceMap
);

impl DepthMap {
    /// Subtracts the minimum over `mask` so the lowest masked point sits at 0.
    /// Unmasked pixels are set to 0.
    pub fn min_aligned(&self, mask: &Mask) -> Result<DepthMap> {
        ensure_same_dims(self, mask, "depth/mask")?;
        let min = mask
            .iter_set()
            .map(|(x, y)| self.get(x, y))
            .fold(f32::INFINITY, f32::min);
        if !min.is_finite() {
            return Err(Error::NoForeground("empty depth mask".into()));
        }
        let mut out = DepthMap::filled(self.width(), self.height(), 0.0);
        for (x, y) in mask.iter_set() {
            out.set(x, y, self.get(x, y) - min);
        }
        Ok(out)
    }
}

impl OrientationField {
    /// Wraps any angle into `[0, 180)`.
    pub fn wrap(theta_deg: f64) -> f64 {
        let t = theta_deg.rem_euclid(180.0);
        if t >= 180.0 {
            0.0
        } else {
            t
        }
    }
}

/// Surface slope per pixel: `gx = ∂z/∂x`, `gy = ∂z/∂y`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMap {
    pub gx: Grid<f32>,
    pub gy: Grid<f32>,
}

impl GradientMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            gx: Grid::filled(width, height, 0.0),
            gy: Grid::filled(width, height, 0.0),
        }
    }

    pub fn new(gx: Grid<f32>, gy: Grid<f32>) -> Result<Self> {
        ensure_same_dims(&gx, &gy, "gx/gy")?;
        Ok(Self { gx, gy })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f32, f32) {
        (self.gx.get(x, y), self.gy.get(x, y))
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, g: (f32, f32)) {
        self.gx.set(x, y, g.0);
        self.gy.set(x, y, g.1);
    }

    #[inline]
    pub fn magnitude(&self, x: usize, y: usize) -> f64 {
        let (gx, gy) = self.get(x, y);
        (gx as f64).hypot(gy as f64)
    }
}

impl Dims for GradientMap {
    fn width(&self) -> usize {
        self.gx.width
    }
    fn height(&self) -> usize {
        self.gx.height
    }
}

/// Grayscale photograph with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pixels: Grid<f32>,
    pitch_mm: f32,
}

impl GrayImage {
    pub const MIN_SIDE: usize = 8;

    pub fn new(pixels: Grid<f32>, pitch_mm: f32) -> Result<Self> {
        if pixels.width < Self::MIN_SIDE || pixels.height < Self::MIN_SIDE {
            return Err(Error::InvalidGrid(format!(
                "image {}x{} is smaller than {m}x{m}",
                pixels.width,
                pixels.height,
                m = Self::MIN_SIDE
            )));
        }
        if !(pitch_mm > 0.0 && pitch_mm.is_finite()) {
            return Err(Error::Unit(format!("pixel pitch {pitch_mm} mm")));
        }
        if let Some(bad) = pixels
            .as_slice()
            .iter()
            .find(|v| !(v.is_finite() && **v >= 0.0 && **v <= 1.0))
        {
            return Err(Error::InvalidGrid(format!("intensity {bad} outside [0,1]")));
        }
        Ok(Self { pixels, pitch_mm })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        pitch_mm: f32,
        f: impl FnMut(usize, usize) -> f32,
    ) -> Result<Self> {
        Self::new(Grid::from_fn(width, height, f), pitch_mm)
    }

    pub fn pitch_mm(&self) -> f32 {
        self.pitch_mm
    }

    pub fn pixels(&self) -> &Grid<f32> {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels.get(x, y)
    }

    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        self.pixels.sample_bilinear(x, y)
    }

    /// Copy with every pixel outside `mask` set to 0.
    pub fn masked(&self, mask: &Mask) -> Result<GrayImage> {
        ensure_same_dims(self, mask, "image/mask")?;
        let pixels = Grid::from_fn(self.width(), self.height(), |x, y| {
            if mask.get(x, y) {
                self.get(x, y)
            } else {
                0.0
            }
        });
        Ok(GrayImage {
            pixels,
            pitch_mm: self.pitch_mm,
        })
    }
}

impl Dims for GrayImage {
    fn width(&self) -> usize {
        self.pixels.width
    }
    fn height(&self) -> usize {
        self.pixels.height
    }
}

/// Boolean foreground raster with a cached pixel count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    bits: Grid<bool>,
    count: usize,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            bits: Grid::filled(width, height, false),
            count: 0,
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            bits: Grid::filled(width, height, true),
            count: width * height,
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl FnMut(usize, usize) -> bool) -> Self {
        Self::from_grid(Grid::from_fn(width, height, f))
    }

    pub fn from_grid(bits: Grid<bool>) -> Self {
        let count = bits.as_slice().iter().filter(|b| **b).count();
        Self { bits, count }
    }

    /// Number of foreground pixels, `|M|`.
    pub fn count(&self) -> usize {
        self.count
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits.get(x, y)
    }

    /// Bounds-checked lookup for signed coordinates.
    #[inline]
    pub fn contains(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.bits.width
            && (y as usize) < self.bits.height
            && self.bits.get(x as usize, y as usize)
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        let old = self.bits.get(x, y);
        if old != value {
            self.bits.set(x, y, value);
            if value {
                self.count += 1;
            } else {
                self.count -= 1;
            }
        }
    }

    pub fn bits(&self) -> &Grid<bool> {
        &self.bits
    }

    /// Foreground pixels in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.bits.width;
        self.bits
            .as_slice()
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| (i % w, i / w))
    }

    /// Foreground centroid, `None` for an empty mask.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        if self.count == 0 {
            return None;
        }
        let (sx, sy) = self
            .iter_set()
            .fold((0.0, 0.0), |(sx, sy), (x, y)| (sx + x as f64, sy + y as f64));
        Some((sx / self.count as f64, sy / self.count as f64))
    }

    /// Removes a border of `margin` pixels: a pixel survives when the whole
    /// `(2·margin+1)²` square around it is foreground. Pixels outside the
    /// raster count as background.
    pub fn eroded(&self, margin: usize) -> Mask {
        if margin == 0 {
            return self.clone();
        }
        let (w, h) = (self.width(), self.height());
        // Separable min filter: horizontal run, then vertical run.
        let horizontal = Grid::from_fn(w, h, |x, y| {
            if x < margin || x + margin >= w {
                return false;
            }
            (x - margin..=x + margin).all(|xx| self.get(xx, y))
        });
        Mask::from_fn(w, h, |x, y| {
            if y < margin || y + margin >= h {
                return false;
            }
            (y - margin..=y + margin).all(|yy| horizontal.get(x, yy))
        })
    }

    pub fn intersection(&self, other: &Mask) -> Result<Mask> {
        ensure_same_dims(self, other, "mask/mask")?;
        Ok(Mask::from_fn(self.width(), self.height(), |x, y| {
            self.get(x, y) && other.get(x, y)
        }))
    }
}

impl Dims for Mask {
    fn width(&self) -> usize {
        self.bits.width
    }
    fn height(&self) -> usize {
        self.bits.height
    }
}

/// Per-pixel probability over [`ORIENTATION_BINS`] one-degree bins.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationDistribution {
    width: usize,
    height: usize,
    n_bins: usize,
    // Layout: ((y * width) + x) * n_bins + bin
    probs: Vec<f32>,
}

impl OrientationDistribution {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::zeros_with_bins(width, height, ORIENTATION_BINS)
    }

    pub fn zeros_with_bins(width: usize, height: usize, n_bins: usize) -> Self {
        Self {
            width,
            height,
            n_bins,
            probs: vec![0.0; width * height * n_bins],
        }
    }

    /// A one-hot distribution at `bin` for every pixel.
    pub fn one_hot_fn(width: usize, height: usize, bin: impl Fn(usize, usize) -> usize) -> Self {
        let mut d = Self::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                let b = bin(x, y) % ORIENTATION_BINS;
                d.pixel_mut(x, y)[b] = 1.0;
            }
        }
        d
    }

    pub fn uniform(width: usize, height: usize) -> Self {
        let n = ORIENTATION_BINS;
        Self {
            width,
            height,
            n_bins: n,
            probs: vec![1.0 / n as f32; width * height * n],
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let start = (y * self.width + x) * self.n_bins;
        &self.probs[start..start + self.n_bins]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let start = (y * self.width + x) * self.n_bins;
        &mut self.probs[start..start + self.n_bins]
    }

    /// Rescales each pixel to unit mass; pixels with zero mass are left alone.
    pub fn normalize(&mut self) {
        for chunk in self.probs.chunks_mut(self.n_bins) {
            let total: f64 = chunk.iter().map(|&p| p as f64).sum();
            if total > 0.0 {
                for p in chunk.iter_mut() {
                    *p = (*p as f64 / total) as f32;
                }
            }
        }
    }

    /// Checks the per-pixel normalization invariant over `mask`.
    pub fn is_normalized(&self, mask: &Mask, tol: f64) -> bool {
        mask.iter_set().all(|(x, y)| {
            let s: f64 = self.pixel(x, y).iter().map(|&p| p as f64).sum();
            (s - 1.0).abs() <= tol
        })
    }
}

impl Dims for OrientationDistribution {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
}

/// A map whose depth axis can be expressed in millimeters.
pub trait DepthUnits: Sized {
    fn scale_depth(&self, factor: f32) -> Self;
}

impl DepthUnits for DepthMap {
    fn scale_depth(&self, factor: f32) -> Self {
        DepthMap(self.0.map(|z| z * factor))
    }
}

impl DepthUnits for GradientMap {
    fn scale_depth(&self, factor: f32) -> Self {
        GradientMap {
            gx: self.gx.map(|g| g * factor),
            gy: self.gy.map(|g| g * factor),
        }
    }
}

/// Converts the depth axis from pixels to millimeters. Gradients end up in
/// mm per pixel since the image axes stay in pixels.
pub fn to_millimeters<T: DepthUnits>(map: &T, pitch_mm: f32) -> Result<T> {
    if !(pitch_mm > 0.0 && pitch_mm.is_finite()) {
        return Err(Error::Unit(format!("pixel pitch {pitch_mm} mm")));
    }
    Ok(map.scale_depth(pitch_mm))
}
