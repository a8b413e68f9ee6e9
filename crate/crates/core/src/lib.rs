//! Deep-learning device identification and rogue-signal detection for LoRa
//! I/Q captures, together with the attacks and defenses studied against
//! them:
//!
//! * [`nn`]: a small deterministic neural-network engine.
//! * [`dataset`]: synthetic LoRa-like I/Q records and the dataset file format.
//! * [`spoof`]: Gaussian KDE spoofing of rogue transmitters and JSD fidelity.
//! * [`classifiers`]: single-task and multi-task classifiers and their metrics.
//! * [`attacks`]: FGSM perturbations under a perturbation-to-signal budget.
//! * [`defense`]: adversarial training.
//! * [`pipeline`]: end-to-end experiment orchestration and reports.

pub mod attacks;
pub mod classifiers;
pub mod dataset;
pub mod defense;
pub mod error;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod spoof;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
