//! Progressive representation learning for multimodal sentiment analysis
//! under missing modalities.
//!
//! The crate is organised bottom-up:
//!
//! - [`numcore`]: dense arrays, a reverse-mode tape and gradient checks.
//! - [`encoders`]: per-modality sequence encoders producing token features.
//! - [`amre`]: modality reliability from head confidence and Fisher traces.
//! - [`proginteract`]: the iterative self/cross refinement and decomposition loop.
//! - [`model`]: the full network tying the three together.
//! - [`training`]: objective, optimizer, epoch loop and checkpoints.
//! - [`datagen`]: synthetic data, masking protocols and dataset files.
//! - [`evalbench`]: metrics, missingness sweeps and the phase diagnostic.

pub mod error;
pub mod numcore;
pub mod seed;
pub mod encoders;
pub mod amre;
pub mod proginteract;
pub mod model;
pub mod datagen;
pub mod training;
pub mod evalbench;

pub use error::{PrlfError, Result};
