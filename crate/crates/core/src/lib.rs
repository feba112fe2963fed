//! Numerical analysis of boundary Hopf bifurcations in three-dimensional
//! Filippov systems: hybrid simulation with sliding, genericity
//! diagnostics, grazing-sliding normal-form parameter extraction,
//! bifurcation-curve continuation, and an attractor atlas of the reduced
//! border-collision normal form.

pub mod error;
pub mod numerics;
pub mod filippov;
pub mod model_io;
pub mod boundary_hopf;
pub mod grazing;
pub mod continuation;
pub mod bcnf;

pub use error::{Error, Result};
pub use filippov::FilippovModel;
pub use numerics::ToleranceConfig;
