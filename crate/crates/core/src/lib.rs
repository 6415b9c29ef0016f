//! Inversion laboratory for small conditional generative models.
//!
//! Trains a conditional MLP on a 2D Gaussian mixture (as a flow-matching
//! velocity field or as an epsilon-prediction diffusion model) and runs
//! DDIM inversion, fixed-point (ReNoise) refinement, edit-friendly DDPM
//! noise-map inversion and reverse-Euler flow inversion on it. Every
//! inverter can be conditioned on the input point itself through the
//! network's point-prompt branch, with a scale `s` that trades
//! reconstruction fidelity for editability.

pub mod analysis;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod experiments;
pub mod flow;
pub mod inversion;
pub mod model;
pub mod network;
pub mod numerics;
pub mod trajectory;

pub use dataset::{Condition, GmmSpec};
pub use error::{Error, Result};
pub use model::{Model, Objective};
pub use numerics::{RngStream, Vector};
