//! Sketch-driven strand hair modeling.
//!
//! A sketch (mask contour plus directed strokes) becomes a dense 2D
//! orientation map, the map is lifted to a volumetric direction field, and
//! strands are grown through that field. Fields can be produced by small
//! conditional GAN generators ([`neural`]) or by Laplace diffusion
//! ([`baseline`]).

pub mod error;
pub mod field;
pub mod formats;
pub mod geom;
pub mod scalar;
pub mod strands;
pub mod datagen;
pub mod baseline;
pub mod edit;
pub mod neural;
pub mod pipeline;

pub use error::{Error, Result};
pub use field::{
    DepthMap, GridSpec, MaskMap, OrientationMap2D, VectorField3D, ViewPose, VisibilityIndex, WorldBox,
};
pub use strands::{BustModel, RootSampling, Strand, StrandSet};
