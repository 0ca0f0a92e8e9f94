//! Numerical laboratory for nonlocal reaction-diffusion problems
//! `u_t = Ku - hu + f(x, u)` on discretized metric measure spaces.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod equilibria;
pub mod error;
pub mod evolve;
pub mod kernel;
pub mod linalg;
pub mod reaction;
pub mod serde_vec;
pub mod space;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
pub use kernel::{Kernel, KernelLaw, NonlocalOperator, PositivityCertificate};
pub use space::{ConnectivityCertificate, MeasureSpace, Points, QuadratureRule};
