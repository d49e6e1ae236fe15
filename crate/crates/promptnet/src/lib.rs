//! Privileged-information distillation for volumetric binary grading.
//!
//! A teacher ("template") network is trained on contrast-enhanced channels
//! that are available only at training time; a multi-branch student
//! ("PromptNet") sees only the non-enhanced channels and is additionally
//! supervised by an L1 feature prompt loss against the teacher's latent
//! features. The prompt loss weight can adapt per sample to the gap between
//! teacher and student predictions, so difficult samples receive stronger
//! prompting.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] / [`tape`] / [`ops`]: dense f64 tensors with reverse-mode
//!   automatic differentiation and the 3D layer primitives.
//! - [`gradcheck`]: central finite-difference verification harness.
//! - [`model`]: the template encoder/classifier and the two-branch student.
//! - [`synthdata`]: deterministic volumetric dataset generator with a
//!   planted privileged signal, plus the stratified split protocol.
//! - [`training`]: losses, adaptive weighting, Adam, the learning-rate
//!   schedule and the two-stage training protocol.
//! - [`metrics`]: ROC/PR areas, confusion metrics and multi-seed
//!   aggregation.
//! - [`experiment`]: reproducible experiment harness behind the CLI,
//!   including the three-row ablation study.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod container;
pub mod experiment;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod seeding;
pub mod synthdata;
pub mod tape;
pub mod tensor;
pub mod training;

pub use tensor::{Tensor, TensorError};
