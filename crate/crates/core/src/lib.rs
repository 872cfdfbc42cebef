//! Instruction-guided local image editing.
//!
//! The pipeline turns cross-attention stacks from an instruction-following
//! diffusion model into a rough edit mask, snaps that mask to the best
//! matching segment candidate, cleans its edges with a frequency-domain
//! difference against the original, and composites the edited pixels back as
//! a hard-alpha layer so everything outside the mask is untouched.

pub mod attention;
pub mod classifier;
pub mod compositor;
pub mod denoise;
pub mod error;
pub mod fixtures;
pub mod grid;
pub mod io;
pub mod pipeline;
pub mod refine;
pub mod rng;
pub mod smoother;

pub use error::{Error, Result};
pub use grid::{resize_bilinear, BinaryMask, Grid2D, Grid3D, Image};
