//! Uncertain control co-design toolkit.
//!
//! The crate models continuous-time control co-design problems, attaches
//! stochastic / crisp / fuzzy uncertainty to their elements, compiles them
//! under several uncertainty formulations into deterministic nonlinear
//! programs via trapezoidal direct transcription, and solves them with a
//! built-in augmented-Lagrangian solver plus brute-force and adversarial
//! cross-checks.

pub mod assess;
pub mod dynamics;
pub mod formulations;
pub mod mat;
pub mod model;
pub mod par;
pub mod risk;
pub mod solve;
pub mod usets;

pub use mat::Mat;
