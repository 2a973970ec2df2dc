//! One-iteration adversarial attacks on no-reference quality metrics that
//! keep the low-frequency spectrum of the original image.
//!
//! The pipeline is a signed gradient step ([`attacks::fgsm`]), a top-`f`
//! magnitude split of the spectrum ([`spectral`]), and a texture-dependent
//! blend of the high-frequency parts ([`weighting`]).

pub mod attacks;
pub mod error;
pub mod fixtures;
pub mod harness;
pub mod image;
pub mod metrics;
pub mod spectral;
pub mod weighting;

pub use attacks::{run_attack, AttackConfig, AttackKind, AttackRecord, Direction, FrameStats, VideoAttack};
pub use error::{Error, Result};
pub use image::{FramePattern, Image, VideoSequence};
pub use metrics::{build_oracle, relative_gain, GradientOracle, MetricScore, MetricSpec, ScoreRange};
pub use spectral::{fft2, ifft2, FreqIndexSet, Spectrum};
pub use weighting::WeightMap;
