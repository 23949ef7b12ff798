//! Dataset-ownership fingerprinting for image classifiers.
//!
//! A dataset owner trains a few reference models on the protected data, attacks
//! them with one-step FGSM, and turns each adversarial perturbation into a
//! normalized log-magnitude Fourier spectrum. A one-class encoder learns the
//! hypersphere that encloses those spectra. A suspect model is fingerprinted the
//! same way and declared stolen when a strict majority of its spectra fall inside
//! the calibrated radius.
//!
//! Modules, bottom-up:
//!
//! * [`nn`]: forward passes, input gradients and SGD for small linear/conv nets.
//! * [`data`]: synthetic texture datasets, IDX files, split/subsample/merge.
//! * [`zoo`]: the reference architecture family.
//! * [`adversarial`] and [`spectrum`]: fingerprint generation.
//! * [`meta`]: the one-class meta-classifier and threshold calibration.
//! * [`verifier`]: majority-vote verdicts and evaluation metrics.
//! * [`attacks`]: simulated data-theft attacks producing suspects.
//! * [`persist`]: binary and JSON artifact formats.
//! * [`pipeline`]: end-to-end runs and the experiment drivers.

pub mod adversarial;
pub mod attacks;
pub mod data;
mod error;
pub mod meta;
pub mod nn;
pub mod persist;
pub mod pipeline;
pub mod seed;
pub mod spectrum;
mod tensor;
pub mod verifier;
pub mod zoo;

pub use error::{Error, Result};
pub use tensor::{ImageTensor, Tensor};
