//! Perception-aware adversarial protection for images.
//!
//! The crate adds a small L∞-bounded perturbation to an image that disrupts
//! diffusion-model fine-tuning on it, while steering the perturbation away
//! from regions where people would notice it. The pieces:
//!
//! - [`jnd`]: five just-noticeable-difference estimators and their
//!   sensitivity / quantized strength maps.
//! - [`fusion`]: softmax fusion of the strength maps and per-image
//!   refinement of the fusion weights.
//! - [`constraints`]: wavelet low-pass, masked feature-distance and
//!   text-alignment losses, and the combined objective.
//! - [`oracle`]: the trait that supplies every neural quantity, with an
//!   analytic surrogate and a client for a remote worker.
//! - [`protect`]: the projected sign-gradient loop tying it together.

pub mod constraints;
pub mod error;
pub mod fusion;
pub mod image;
pub mod jnd;
pub mod oracle;
pub mod protect;
pub mod tensor;

pub use error::{Error, Result};
pub use image::{to_luminance, BitDepth, ImageTensor, LuminancePlane};
pub use tensor::{Plane, Tensor};
