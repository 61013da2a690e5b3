//! Calibration-aware preference optimization at desk scale.
//!
//! This crate trains a small prompt-conditioned bigram policy on synthetic
//! multiple-choice tasks with an exact correctness oracle, and verifies the
//! pieces that make calibration-aware alignment work:
//!
//! - binned and exact-conditional expected calibration error, the L1
//!   calibration risk, and the identities relating them ([`metrics`]);
//! - the margin-based correctness surrogate and the per-token linear
//!   calibration loss, with hand-derived bounded gradients ([`calibration`]);
//! - the pairwise DPO loss and the joint calibrated objective ([`preference`]);
//! - mean-vs-median robustness under point-mass contamination ([`robustness`]);
//! - the Confidence@k selection rule and its Bayes optimality ([`selection`]).
//!
//! Every analytic gradient is checked against the central finite-difference
//! oracle in [`numerics`]. All randomness flows through the splittable
//! generator in [`rng`], so results are bit-reproducible across platforms.

pub mod calibration;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod numerics;
pub mod policy;
pub mod preference;
pub mod rng;
pub mod robustness;
pub mod selection;
pub mod synthdata;
pub mod train;

pub use error::{Error, Result};
