//! Robust EEG emotion recognition.
//!
//! An Inception-based convolutional classifier over differential-entropy
//! features, FGSM/PGD adversarial attacks under L2 and L-infinity threat
//! models, and three training regimes: standard, adversarial training, and
//! two-sided perturbation (adversarial inputs plus an adversarial weight
//! perturbation bounded per layer). Everything down to the reverse-mode
//! autodiff is implemented here.

pub mod attack;
pub mod autodiff;
mod binio;
pub mod eeg;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod network;
pub mod samples;
pub mod seeding;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// Every book chapter, compiled and run as doc tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/attacks.md")]
    mod attacks {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/signals.md")]
    mod signals {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    mod reproducibility {}
}
