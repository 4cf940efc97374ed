//! Keypoint extraction on Gaussian and nonlinear-diffusion scale spaces,
//! keypoint overlap scoring against ground-truth boxes, bag-of-visual-words
//! fusion, and linear classifiers trained either as a minimal complexity
//! machine (a linear program) or as a dual coordinate descent SVM.

pub mod bovw;
pub mod classify;
pub mod error;
pub mod harness;
pub mod image;
pub mod keypoints;
pub mod kosmetrics;
pub mod scalespace;

pub use error::{Error, Result};
