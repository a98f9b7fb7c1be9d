//! Layered voxel radiance fields: reconstructs a bounded 3D scene from posed
//! multi-view images and simultaneously segments it into K foreground objects
//! plus background, with no labels. The scene is one density grid, one
//! (K+1)-channel semantic logit grid, and K+1 per-object color grids; training
//! combines a bidirectional photometric loss (correct renders minimized,
//! deliberately mislabeled renders maximized), a color propagation
//! regularizer, and a bootstrap cross-entropy on clustered initial labels.
//! Rendered masks can be EM-refined per view, and the segmented objects can be
//! rendered in isolation or rigidly edited.
//!
//! All differentiable math is generic over [`Scalar`] (f32 for production
//! training, f64 for finite-difference verification); concrete aliases for the
//! common instantiations live at the crate root.

pub mod adam;
pub mod camera;
pub mod config;
pub mod dataset;
pub mod edit;
pub mod em;
pub mod error;
pub mod features;
pub mod geom;
pub mod grid;
pub mod initseg;
pub mod io;
pub mod kmeans;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod render;
pub mod scalar;
pub mod scene;
pub mod sh;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type VoxelFieldF32 = grid::VoxelField<f32>;
pub type VoxelFieldF64 = grid::VoxelField<f64>;
pub type SceneModelF32 = model::SceneModel<f32>;
pub type SceneModelF64 = model::SceneModel<f64>;
pub type CameraF32 = camera::Camera<f32>;
pub type CameraF64 = camera::Camera<f64>;
