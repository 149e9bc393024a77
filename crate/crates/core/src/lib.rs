//! Affine phase retrieval: recover `x ∈ C^d` from `y_j = |a_j^* x + b_j|²`
//! by Wirtinger gradient descent on the least-squares intensity loss.

pub mod error;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod probes;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
pub use model::{generate_instance, InstanceParams, ProblemInstance};
pub use rng::RngSpec;
