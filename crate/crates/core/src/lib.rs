//! Learned planning-affordance costs for human-aware navigation.
//!
//! Bad-labeled trajectory segments are explained as a latent mixture over the
//! activities present in an environment. Each activity contributes a cost built
//! from von-Mises, Beta and Gaussian kernels in the activity's local frame; the
//! parameters are fitted by expectation-maximization and the resulting cost is
//! rasterized into a map that drives a cost-aware RRT planner.

pub mod affordance;
pub mod costmap;
pub mod distributions;
pub mod em;
pub mod env;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod planner;
pub mod synth;
