//! JPEG compression as a defense against adversarial examples.
//!
//! The crate bundles everything the experiment pipeline needs:
//!
//! - [`codec`]: a pure in-memory JPEG lossy transform (encode-decode round
//!   trip at a quality factor, without the lossless entropy-coding stage).
//! - [`nn`]: a small convolutional network engine with exact parameter and
//!   input gradients, trained with Adam.
//! - [`attacks`]: FGSM and DeepFool white-box attacks plus the
//!   misclassification-success metric.
//! - [`defense`]: compression pre-processing, "vaccinated" retraining on
//!   compressed images, the vote ensemble, and sweep/transferability
//!   evaluation.
//! - [`data_io`]: CIFAR-10 binary ingestion, a synthetic dataset generator,
//!   model/dataset persistence, PPM, and CSV emission.
//!
//! Everything is deterministic given a seed, and evaluation results are
//! bit-identical at any thread count.

pub mod attacks;
pub mod codec;
pub mod data_io;
pub mod defense;
pub mod nn;
pub mod parallel;
pub mod rng;
pub mod tensor;

pub use attacks::{AttackConfig, AttackMethod, AttackResult};
pub use codec::{compress, ImageU8, QualityFactor};
pub use data_io::Dataset;
pub use defense::{EnsembleVerdict, QualityGrid, SweepRecord, VaccinatedSuite};
pub use nn::{Model, NetworkSpec, TrainConfig};
pub use tensor::Tensor;
