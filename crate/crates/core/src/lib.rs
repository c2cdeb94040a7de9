//! Parameter studies over simulation backends: sample a parameter box,
//! evaluate a quantity of interest, fit response surfaces, find active
//! directions with bootstrap confidence, and solve goal-derived
//! box-constrained optimization problems.

pub mod backend;
pub mod linalg;
pub mod optimize;
pub mod prompt;
pub mod report;
pub mod rng;
pub mod sampling;
pub mod study;
pub mod subspace;
pub mod surrogate;
pub mod svg;
pub mod workflow;
