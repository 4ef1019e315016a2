//! Numerical toolkit for the Maximum Principle on fixed-time control problems.
//!
//! The crate integrates controlled trajectories, transports tangent vectors
//! and covectors along them, builds variational cones from needle
//! variations, and classifies controls as extremal, normal, abnormal or
//! strictly abnormal by cone duality.

pub mod cone;
pub mod expr;
pub mod flow;
pub mod lp;
pub mod pmp;
pub mod sampling;
pub mod system;
pub mod variation;
