//! Desk-scale laboratory for hindsight self-evaluation rewards with
//! calibration, trained by a KL-regularized clipped policy gradient on a
//! sparse-reward text-grid environment.

pub mod env;
pub mod trajectory;
pub mod evaluator;
pub mod reward;
pub mod theory;
pub mod policy;
pub mod trainer;
pub mod experiment;
pub mod harness;
