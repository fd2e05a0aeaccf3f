//! Average (ensemble) optimal control of control-affine systems whose
//! parameters follow a probability distribution.
//!
//! The expectation over the parameter distribution is replaced by the mean
//! over k i.i.d. samples and the resulting finite problem is solved by
//! projected gradient descent on a piecewise-constant control, with exact
//! gradients from the discrete adjoint of RK4. The [`analysis`] module then
//! inspects the extremal: switching functions, bang/singular arcs and
//! singular controls synthesized from nested Lie brackets.

pub mod analysis;
pub mod checks;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod integrate;
pub mod optimize;
pub mod params;
pub mod problems;

pub use error::{Error, Result};
