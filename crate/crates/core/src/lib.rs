//! Joint device-activity detection and channel estimation for grant-free
//! massive random access.
//!
//! The crate provides a synthetic scenario generator ([`model`]), the
//! spike-and-slab denoiser ([`denoiser`]), single-subcarrier MMV-AMP
//! ([`amp`]) with EM hyperparameter learning ([`em`]), the multi-subcarrier
//! DMMV-AMP driver with threshold detection ([`dmmv`]), a Monte-Carlo state
//! evolution predictor ([`se`]), greedy and oracle baselines ([`baselines`])
//! and a config-driven experiment harness ([`harness`]).

pub mod amp;
pub mod baselines;
pub mod denoiser;
pub mod dmmv;
pub mod em;
pub mod error;
pub mod harness;
pub mod io;
pub mod model;
pub mod rng;
pub mod se;

pub use error::{Error, Result};
