//! Monocular 3D reconstruction and arc-length unwarping of contactless
//! fingerprints.
//!
//! The pipeline runs in four stages: [`preprocess`] normalizes contrast,
//! scale and in-plane pose; [`texture`] turns ridge-period foreshortening
//! into a surface gradient map; [`surface`] integrates gradients outward
//! from the flattest point into depth; [`unwarp`] reparameterizes the image
//! by surface arc length. [`silhouette`] builds reference shapes from three
//! views, [`lossmath`] and [`metrics`] score estimates, and [`phantom`]
//! renders analytic test fingers.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod grid;
pub mod imgio;
pub mod lossmath;
pub mod metrics;
pub mod phantom;
pub mod preprocess;
pub mod silhouette;
pub mod surface;
pub mod texture;
pub mod unwarp;

pub use error::{Error, Result};
pub use grid::{
    to_millimeters, CoherenceMap, DepthMap, Dims, GradientMap, GrayImage, Grid, Mask,
    OrientationDistribution, OrientationField, PeriodMap,
};
