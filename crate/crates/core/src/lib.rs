//! Numerical construction of heterodimensional cycles near a saddle whose
//! stable and unstable manifolds have a pair of homoclinic tangencies.

pub mod abs_lorenz;
pub mod cli_runner;
pub mod cone_analysis;
pub mod cycle_solver;
pub mod error;
pub mod global_map;
pub mod local_map;
pub mod numerics;
pub mod par;
pub mod saddle_model;
pub mod tangency_forge;

pub use error::{HetdimError, Result};
pub use saddle_model::{build_model, ModelSpec, SaddleModel, SplitVector};
