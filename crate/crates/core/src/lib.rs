//! Formal and analytic solutions of linear q-difference-differential Cauchy
//! problems with a Fuchsian small-divisor term, together with numeric
//! certificates for their growth and q-Gevrey asymptotics.

pub mod asymptotics;
pub mod error;
pub mod fit;
pub mod majorant;
pub mod problems;
pub mod qlaplace;
pub mod series;
pub mod solver;

pub use error::{Error, Result};
